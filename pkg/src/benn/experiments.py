"""Named experiment runners behind the CLI.

A run is described by one JSON config (schema below), trains the
configured model with its constraints, and leaves machine-readable
artifacts in ``output_dir``:

  config.json        resolved config as actually run (targets included)
  dataset.csv        training observations (x,y families)
  train_images/      training set (microstructure family)
  metrics.csv        step, data_loss, residual_i, multiplier_i
  timings.csv        step, wall_ms (kept apart so metrics stay
                     byte-reproducible across runs)
  predictions.csv    x, mean, epistemic_var, aleatoric_var on a dense grid
  infeasibility.json final per-constraint residuals at eval_draws draws
  checkpoint.json    trained weights
  generated/         decoded samples (microstructure family)
  tpcf_compliance.json  descriptor errors of generated vs training mean

Anything invalid in the config is reported with a JSON-path diagnostic;
a numerical blow-up during training aborts with the step and term name.
"""
from __future__ import annotations

import json
import os
import time

import numpy as np
from jsonschema import Draft202012Validator

from . import bayesnn as bn
from . import constraints as cs
from . import datasets as ds
from . import descriptors as dsc
from . import generative as gen
from . import mdmm
from .autodiff import BackwardError, DomainError, Tape
from .mdmm import MdmmError
from .optim import Adam, Sgd

EXPERIMENTS = (
    "regression-value",
    "regression-conflict",
    "regression-bound",
    "regression-derivative",
    "regression-variance",
    "beam",
    "microstructure",
)

MLP_EXPERIMENTS = tuple(e for e in EXPERIMENTS if e != "microstructure")


class ConfigError(Exception):
    """Invalid configuration; .diagnostics lists JSON-path messages."""

    def __init__(self, diagnostics):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = list(diagnostics)


class NanAbort(Exception):
    def __init__(self, step, term):
        super().__init__(f"non-finite value at step {step} in {term}")
        self.step = step
        self.term = term


class CompareError(Exception):
    pass


# ---------------------------------------------------------------------------
# schema


_NUM = {"type": "number"}

_CONSTRAINT_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": list(cs.KINDS)},
        "target": {},
        "locations": {"type": "array", "items": _NUM, "minItems": 1},
        "interval": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "epsilon": {"type": "number", "exclusiveMinimum": 0},
        "relation": {"enum": ["equality", "inequality"]},
    },
    "required": ["kind", "target"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "seed": {"type": "integer", "minimum": 0},
        "steps": {"type": "integer", "minimum": 1},
        "eval_draws": {"type": "integer", "minimum": 2},
        "log_interval": {"type": "integer", "minimum": 1},
        "output_dir": {"type": "string", "minLength": 1},
        "dataset": {"type": "object"},
        "model": {"type": "object"},
        "constraints": {"type": "array", "items": _CONSTRAINT_SCHEMA},
        "mdmm": {
            "type": "object",
            "properties": {
                "optimizer": {"enum": ["adam", "sgd"]},
                "lr_theta": {"type": "number", "exclusiveMinimum": 0},
                "lr_multiplier": {"type": "number", "exclusiveMinimum": 0},
                "damping_eq": {"type": "number", "minimum": 0},
                "damping_ineq": {"type": "number", "minimum": 0},
                "damping_variant": {"enum": ["g2", "slack"]},
            },
            "additionalProperties": False,
        },
        "eval": {
            "type": "object",
            "properties": {
                "domain": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                "points": {"type": "integer", "minimum": 2},
            },
            "additionalProperties": False,
        },
        "binarize": {
            "type": "object",
            "properties": {
                "steepness": {"type": "number", "exclusiveMinimum": 0},
                "threshold": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
            "additionalProperties": False,
        },
        "generate_count": {"type": "integer", "minimum": 1},
    },
    "required": ["experiment", "steps", "output_dir"],
    "additionalProperties": False,
}

_MLP_DATASET_SCHEMA = {
    "type": "object",
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "regions": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "array", "items": _NUM, "minItems": 4, "maxItems": 4},
        },
        "n_obs": {"type": "integer", "minimum": 1},
        "obs_range": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "noise_sd": {"type": "number", "minimum": 0},
        "elastic_modulus": {"type": "number", "exclusiveMinimum": 0},
        "inertia": {"type": "number", "exclusiveMinimum": 0},
        "length": {"type": "number", "exclusiveMinimum": 0},
        "load": {"type": "number", "exclusiveMinimum": 0},
    },
    "additionalProperties": False,
}

_MICRO_DATASET_SCHEMA = {
    "type": "object",
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "size": {"enum": [16, 32, 64]},
        "n_samples": {"type": "integer", "minimum": 1},
        "correlation_length": {"type": "number", "exclusiveMinimum": 0},
        "target_porosity": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    },
    "additionalProperties": False,
}

_MLP_MODEL_SCHEMA = {
    "type": "object",
    "properties": {
        "layer_sizes": {
            "type": "array",
            "items": {"type": "integer", "minimum": 1},
            "minItems": 2,
        },
        "activation": {"enum": ["relu", "gelu"]},
        "draws": {"type": "integer", "minimum": 1},
        "kl_weight": {"type": "number", "minimum": 0},
        "init_log_var": {"type": "number"},
    },
    "additionalProperties": False,
}

_MICRO_MODEL_SCHEMA = {
    "type": "object",
    "properties": {
        "hidden": {"type": "integer", "minimum": 1},
        "latent": {"type": "integer", "minimum": 1},
        "batch_size": {"type": "integer", "minimum": 1},
        "constraint_batch": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}

_MLP_MODEL_DEFAULTS = {
    "layer_sizes": [1, 100, 2],
    "activation": "relu",
    "draws": 4,
    "kl_weight": 0.01,
    "init_log_var": -10.0,
}

_MICRO_MODEL_DEFAULTS = {"hidden": 256, "latent": 16, "batch_size": 16, "constraint_batch": 16}

_DEFAULTS = {
    "seed": 0,
    "eval_draws": 250,
    "log_interval": 50,
    "dataset": {},
    "constraints": [],
    "mdmm": {
        "optimizer": "adam",
        "lr_theta": 1e-3,
        "lr_multiplier": 0.1,
        "damping_eq": 1.0,
        "damping_ineq": 1.0,
        "damping_variant": "g2",
    },
    "eval": {"points": 301},
    "binarize": {"steepness": 100.0, "threshold": 0.5},
    "generate_count": 64,
}


def _merge_defaults(user, defaults):
    out = dict(user)
    for k, v in defaults.items():
        if k not in out:
            out[k] = json.loads(json.dumps(v))
        elif isinstance(v, dict) and isinstance(out[k], dict):
            out[k] = _merge_defaults(out[k], v)
    return out


def load_config(path):
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise ConfigError([f"$: config file not found: {path}"])
    except json.JSONDecodeError as e:
        raise ConfigError([f"$: not valid JSON: {e}"])


def apply_overrides(cfg, assignments):
    """Apply ``--set dotted.path=value`` pairs; values parse as JSON literals
    with a plain-string fallback.  Integer segments index into lists."""
    for raw in assignments:
        if "=" not in raw:
            raise ConfigError([f"$: override {raw!r} is not of the form path=value"])
        path, _, text = raw.partition("=")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        keys = path.split(".")
        node = cfg
        for k in keys[:-1]:
            if isinstance(node, list):
                node = node[int(k)]
            else:
                node = node.setdefault(k, {})
        last = keys[-1]
        if isinstance(node, list):
            node[int(last)] = value
        else:
            node[last] = value
    return cfg


def resolve_config(cfg, env=None):
    """Fill defaults and apply the BENN_SEED environment override."""
    env = os.environ if env is None else env
    cfg = _merge_defaults(cfg, _DEFAULTS)
    if "BENN_SEED" in env:
        cfg["seed"] = int(env["BENN_SEED"])
    experiment = cfg.get("experiment")
    if experiment == "microstructure":
        cfg["model"] = _merge_defaults(cfg.get("model", {}), _MICRO_MODEL_DEFAULTS)
    else:
        cfg["model"] = _merge_defaults(cfg.get("model", {}), _MLP_MODEL_DEFAULTS)
    if "eval" in cfg and "domain" not in cfg["eval"]:
        cfg["eval"]["domain"] = [0.0, 3.0] if experiment == "beam" else [-10.0, 10.0]
    if "dataset" in cfg and "seed" not in cfg["dataset"]:
        cfg["dataset"]["seed"] = cfg["seed"]
    return cfg


def _schema_diagnostics(instance, schema, prefix="$"):
    out = []
    for err in sorted(Draft202012Validator(schema).iter_errors(instance), key=str):
        path = prefix + "".join(
            f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path
        )
        out.append(f"{path}: {err.message}")
    return out


_KIND_FAMILY = {
    "value": "mlp",
    "derivative": "mlp",
    "variance": "mlp",
    "bound": "mlp",
    "tpcf": "micro",
    "porosity": "micro",
}


def _constraint_diagnostics(i, c, family):
    where = f"$.constraints[{i}]"
    out = []
    kind = c.get("kind")
    if kind is None or kind not in cs.KINDS:
        return out  # the schema pass already flagged it
    if _KIND_FAMILY[kind] != family:
        exp = "microstructure" if family == "micro" else "regression/beam"
        out.append(f"{where}.kind: {kind!r} constraint does not apply to {exp} experiments")
        return out
    target = c.get("target")
    if kind in ("value", "derivative", "variance"):
        if "locations" not in c:
            out.append(f"{where}: {kind} constraint requires locations")
        if "interval" in c:
            out.append(f"{where}.interval: {kind} constraint takes locations, not an interval")
        if not isinstance(target, (int, float)) or isinstance(target, bool):
            out.append(f"{where}.target: {kind} target must be a number")
        elif kind == "variance" and target < 0:
            out.append(f"{where}.target: variance target must be non-negative")
        if kind == "derivative" and "epsilon" not in c:
            out.append(f"{where}: derivative constraint requires epsilon")
    elif kind == "bound":
        if "interval" not in c:
            out.append(f"{where}: bound constraint requires an interval")
        elif c["interval"][0] >= c["interval"][1]:
            out.append(f"{where}.interval: must satisfy lower < upper")
        if "locations" in c:
            out.append(f"{where}.locations: bound constraint takes an interval, not locations")
        if (
            not isinstance(target, list)
            or len(target) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in target)
        ):
            out.append(f"{where}.target: bound target must be [lower, upper]")
        elif target[0] > target[1]:
            out.append(f"{where}.target: must satisfy lower <= upper")
    else:  # tpcf / porosity
        for key in ("locations", "interval"):
            if key in c:
                out.append(f"{where}.{key}: {kind} constraint takes no {key}")
        if kind == "porosity":
            ok = target == "train_mean" or (
                isinstance(target, (int, float))
                and not isinstance(target, bool)
                and 0 < target < 1
            )
            if not ok:
                out.append(
                    f"{where}.target: porosity target must be 'train_mean' or a fraction in (0, 1)"
                )
        else:
            ok = target == "train_mean" or (
                isinstance(target, list)
                and len(target) >= 2
                and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in target)
            )
            if not ok:
                out.append(
                    f"{where}.target: tpcf target must be 'train_mean' or a list of radial values"
                )
    return out


def validate_config(cfg):
    """Full validation of a resolved config; returns diagnostics (empty = valid)."""
    out = _schema_diagnostics(cfg, CONFIG_SCHEMA)
    experiment = cfg.get("experiment")
    if experiment not in EXPERIMENTS:
        return out
    micro = experiment == "microstructure"
    out += _schema_diagnostics(
        cfg.get("dataset", {}),
        _MICRO_DATASET_SCHEMA if micro else _MLP_DATASET_SCHEMA,
        prefix="$.dataset",
    )
    if not micro:
        beam_only = {"n_obs", "obs_range", "noise_sd", "elastic_modulus", "inertia", "length", "load"}
        wrong = (set(cfg.get("dataset", {})) - {"seed", "regions"}) if experiment != "beam" else set()
        for key in sorted(wrong & beam_only):
            out.append(f"$.dataset.{key}: only applies to the beam experiment")
        if experiment == "beam" and "regions" in cfg.get("dataset", {}):
            out.append("$.dataset.regions: only applies to regression experiments")
    out += _schema_diagnostics(
        cfg.get("model", {}),
        _MICRO_MODEL_SCHEMA if micro else _MLP_MODEL_SCHEMA,
        prefix="$.model",
    )
    if not micro:
        sizes = cfg.get("model", {}).get("layer_sizes")
        if isinstance(sizes, list) and sizes and sizes[-1] != 2:
            out.append("$.model.layer_sizes: output width must be 2 (mean and log-noise)")
        if isinstance(sizes, list) and sizes and sizes[0] != 1:
            out.append("$.model.layer_sizes: input width must be 1")
    family = "micro" if micro else "mlp"
    for i, c in enumerate(cfg.get("constraints", [])):
        if isinstance(c, dict):
            out += _constraint_diagnostics(i, c, family)
    dom = cfg.get("eval", {}).get("domain")
    if isinstance(dom, list) and len(dom) == 2 and dom[0] >= dom[1]:
        out.append("$.eval.domain: must satisfy lower < upper")
    return out


# ---------------------------------------------------------------------------
# artifact helpers


def _fmt(v):
    return repr(float(v))


def _write_lines(path, lines):
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def _write_json(path, payload):
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _metrics_lines(n_constraints):
    cols = ["step", "data_loss"]
    for i in range(n_constraints):
        cols += [f"residual_{i}", f"multiplier_{i}"]
    return [",".join(cols)]


# ---------------------------------------------------------------------------
# constraint spec construction


def _build_specs(cfg):
    """ConstraintSpec list from the config's constraint entries.

    tpcf/porosity 'train_mean' targets must already be resolved to numbers.
    """
    specs = []
    for c in cfg["constraints"]:
        kind = c["kind"]
        relation = c.get("relation", "inequality" if kind == "bound" else "equality")
        kwargs = {"relation": relation}
        if kind == "bound":
            lo, hi = c["interval"]
            kwargs["locations"] = cs.interval_points(lo, hi)
            target = tuple(c["target"])
        elif kind in ("value", "derivative", "variance"):
            kwargs["locations"] = c["locations"]
            target = c["target"]
        else:
            target = c["target"]
        if "epsilon" in c:
            kwargs["epsilon"] = c["epsilon"]
        specs.append(cs.ConstraintSpec(kind, target, **kwargs))
    return specs


def _resolve_functional_targets(cfg, train_images):
    """Replace 'train_mean' descriptor targets with training-set statistics."""
    curves = None
    for c in cfg["constraints"]:
        if c.get("target") != "train_mean":
            continue
        if c["kind"] == "porosity":
            c["target"] = float(np.mean(1.0 - train_images))
        else:
            if curves is None:
                curves = np.stack([dsc.tpcf(img).values for img in train_images])
            c["target"] = [float(v) for v in curves.mean(axis=0)]


# ---------------------------------------------------------------------------
# MLP-family runs (regression variants and beam)


def _dataset_for(cfg):
    d = cfg["dataset"]
    if cfg["experiment"] == "beam":
        bc = ds.BeamConfig(**{k: v for k, v in d.items() if k != "regions"})
        x, y = ds.gen_beam(bc)
        return x, y, bc
    regions = d.get("regions")
    rc = ds.RegressionConfig(regions=regions, seed=d["seed"])
    x, y = ds.gen_regression(rc)
    return x, y, rc


def _train_mlp(cfg, x, y, specs, out_dir):
    model_cfg, mdmm_cfg = cfg["model"], cfg["mdmm"]
    net = bn.BayesianMLP(
        model_cfg["layer_sizes"],
        activation=model_cfg["activation"],
        init_log_var=model_cfg["init_log_var"],
        seed=cfg["seed"],
    )
    state = mdmm.MultiplierState(
        damping_eq=mdmm_cfg["damping_eq"],
        damping_ineq=mdmm_cfg["damping_ineq"],
        lr_multiplier=mdmm_cfg["lr_multiplier"],
        damping_variant=mdmm_cfg["damping_variant"],
    )
    for spec in specs:
        mdmm.register(spec, state)
    params = net.parameters() + state.slack_parameters()
    opt_cls = Adam if mdmm_cfg["optimizer"] == "adam" else Sgd
    opt = opt_cls(params, lr=mdmm_cfg["lr_theta"])
    rng = np.random.default_rng([cfg["seed"], 1])
    batch = (x[:, None], y)
    draws, kl_weight = model_cfg["draws"], model_cfg["kl_weight"]
    interval, steps = cfg["log_interval"], cfg["steps"]
    metrics = _metrics_lines(len(specs))
    timings = ["step,wall_ms"]
    t_block = time.perf_counter()
    for step in range(1, steps + 1):
        try:
            with Tape() as tape:
                samples = [net.sample(rng) for _ in range(draws)]
                data_loss = bn.elbo_loss(net, batch, draws, None, kl_weight=kl_weight, samples=samples)
                items = [(cs.evaluate(net, s, samples), s.weight_id) for s in specs]
                total = mdmm.total_loss(data_loss, items, state)
                if not np.isfinite(total.data):
                    raise NanAbort(step, "total_loss")
                grads = tape.backward(total)
            mdmm.step(opt, state, grads, items)
        except (BackwardError, DomainError, MdmmError) as e:
            raise NanAbort(step, str(e))
        net.clamp_log_var()
        if step % interval == 0 or step == steps:
            row = [str(step), _fmt(data_loss.data)]
            for (res, _), m in zip(items, state.multipliers):
                row += [_fmt(res.value.data), _fmt(m)]
            metrics.append(",".join(row))
            now = time.perf_counter()
            timings.append(f"{step},{(now - t_block) * 1e3:.3f}")
            t_block = now
    _write_lines(os.path.join(out_dir, "metrics.csv"), metrics)
    _write_lines(os.path.join(out_dir, "timings.csv"), timings)
    return net, state


def _write_predictions(path, grid, summary):
    lines = ["x,mean,epistemic_var,aleatoric_var"]
    for xv, m, ev, av in zip(
        grid,
        np.ravel(summary.mean),
        np.ravel(summary.epistemic_var),
        np.ravel(summary.aleatoric_var),
    ):
        lines.append(f"{_fmt(xv)},{_fmt(m)},{_fmt(ev)},{_fmt(av)}")
    _write_lines(path, lines)


def _mlp_infeasibility(cfg, net, state, specs):
    rng = np.random.default_rng([cfg["seed"], 3])
    samples = [net.sample(rng) for _ in range(cfg["eval_draws"])]
    entries = []
    for i, (spec, raw) in enumerate(zip(specs, cfg["constraints"])):
        res = cs.evaluate(net, spec, samples)
        entry = {
            "index": i,
            "kind": spec.kind,
            "relation": spec.relation,
            "target": raw["target"],
            "residual": float(res.value.data),
            "infeasibility": res.infeasibility(),
            "multiplier": float(state.multipliers[i]),
        }
        if spec.kind == "bound":
            entry["interval"] = [float(v) for v in raw["interval"]]
            entry["max_pointwise_violation"] = float(np.max(np.abs(res.per_point)))
        else:
            entry["locations"] = [float(v) for v in spec.locations]
            at = bn.predict(
                net,
                spec.locations,
                draws=cfg["eval_draws"],
                rng=np.random.default_rng([cfg["seed"], 4, i]),
            )
            entry["prediction_mean"] = [float(v) for v in np.ravel(at.mean)]
            entry["aleatoric_var"] = [float(v) for v in np.ravel(at.aleatoric_var)]
            if spec.kind == "derivative":
                entry["epsilon"] = spec.epsilon
        entries.append(entry)
    return {"eval_draws": cfg["eval_draws"], "constraints": entries}


def _run_mlp(cfg, out_dir):
    x, y, _ = _dataset_for(cfg)
    ds.save_xy(os.path.join(out_dir, "dataset.csv"), x, y)
    specs = _build_specs(cfg)
    _write_json(os.path.join(out_dir, "config.json"), cfg)
    net, state = _train_mlp(cfg, x, y, specs, out_dir)
    lo, hi = cfg["eval"]["domain"]
    grid = np.linspace(lo, hi, cfg["eval"]["points"])
    summary = bn.predict(
        net, grid, draws=cfg["eval_draws"], rng=np.random.default_rng([cfg["seed"], 2])
    )
    _write_predictions(os.path.join(out_dir, "predictions.csv"), grid, summary)
    _write_json(
        os.path.join(out_dir, "infeasibility.json"), _mlp_infeasibility(cfg, net, state, specs)
    )
    bn.save_checkpoint(net, os.path.join(out_dir, "checkpoint.json"))


# ---------------------------------------------------------------------------
# microstructure runs


def _run_microstructure(cfg, out_dir):
    d = cfg["dataset"]
    mc = ds.MicrostructureConfig(
        size=d.get("size", 32),
        n_samples=d.get("n_samples", 50),
        correlation_length=d.get("correlation_length", 4.0),
        target_porosity=d.get("target_porosity", 0.5),
        seed=d["seed"],
    )
    images = ds.gen_microstructures(mc)
    ds.save_images(
        os.path.join(out_dir, "train_images"),
        images,
        manifest={"size": mc.size, "n_samples": mc.n_samples, "seed": mc.seed},
    )
    _resolve_functional_targets(cfg, images)
    specs = _build_specs(cfg)
    _write_json(os.path.join(out_dir, "config.json"), cfg)

    model_cfg, mdmm_cfg = cfg["model"], cfg["mdmm"]
    vae = gen.DenseVAE(
        side=mc.size, hidden=model_cfg["hidden"], latent=model_cfg["latent"], seed=cfg["seed"]
    )
    state = mdmm.MultiplierState(
        damping_eq=mdmm_cfg["damping_eq"],
        damping_ineq=mdmm_cfg["damping_ineq"],
        lr_multiplier=mdmm_cfg["lr_multiplier"],
        damping_variant=mdmm_cfg["damping_variant"],
    )
    for spec in specs:
        mdmm.register(spec, state)
    params = vae.parameters() + state.slack_parameters()
    opt_cls = Adam if mdmm_cfg["optimizer"] == "adam" else Sgd
    opt = opt_cls(params, lr=mdmm_cfg["lr_theta"])
    binarize = dsc.BinarizeConfig(**cfg["binarize"])
    rng = np.random.default_rng([cfg["seed"], 1])
    batch_size = min(model_cfg["batch_size"], len(images))
    interval, steps = cfg["log_interval"], cfg["steps"]
    metrics = _metrics_lines(len(specs))
    timings = ["step,wall_ms"]
    t_block = time.perf_counter()
    for step in range(1, steps + 1):
        batch = images[rng.integers(0, len(images), size=batch_size)]
        try:
            m = gen.constrained_train_step(
                vae,
                batch,
                specs,
                state,
                opt,
                rng,
                constraint_batch=model_cfg["constraint_batch"],
                binarize=binarize,
            )
        except (BackwardError, DomainError, MdmmError) as e:
            raise NanAbort(step, str(e))
        if not np.isfinite(m["loss"]):
            raise NanAbort(step, "vae_loss")
        if step % interval == 0 or step == steps:
            row = [str(step), _fmt(m["loss"])]
            for spec, mult in zip(specs, state.multipliers):
                row += [_fmt(m["residuals"][spec.weight_id]), _fmt(mult)]
            metrics.append(",".join(row))
            now = time.perf_counter()
            timings.append(f"{step},{(now - t_block) * 1e3:.3f}")
            t_block = now
    _write_lines(os.path.join(out_dir, "metrics.csv"), metrics)
    _write_lines(os.path.join(out_dir, "timings.csv"), timings)

    soft = gen.generate(vae, cfg["generate_count"], np.random.default_rng([cfg["seed"], 3]))
    hard = (soft > 0.5).astype(np.float64)
    ds.save_images(
        os.path.join(out_dir, "generated"),
        hard,
        manifest={"count": int(len(hard)), "threshold": 0.5},
    )
    _write_json(
        os.path.join(out_dir, "tpcf_compliance.json"), _compliance(images, hard)
    )
    _write_json(
        os.path.join(out_dir, "infeasibility.json"),
        _micro_infeasibility(cfg, specs, state, soft, binarize),
    )
    gen.save_checkpoint(vae, os.path.join(out_dir, "checkpoint.json"))


def _compliance(train_images, generated_hard):
    """Descriptor errors of generated samples against the training mean.

    The headline number is the L1 distance between radial correlation
    curves (sum over radii of the absolute gap), reported per generated
    sample and summarized.
    """
    target = np.stack([dsc.tpcf(img).values for img in train_images]).mean(axis=0)
    curves = np.stack([dsc.tpcf(img).values for img in generated_hard])
    l1 = np.abs(curves - target).sum(axis=1)
    void = 1.0 - generated_hard.mean(axis=(1, 2))
    train_void = 1.0 - train_images.mean(axis=(1, 2))
    radii = dsc.tpcf(train_images[0]).radii
    return {
        "n_generated": int(len(generated_hard)),
        "radii": [float(r) for r in radii],
        "target_curve": [float(v) for v in target],
        "mean_generated_curve": [float(v) for v in curves.mean(axis=0)],
        "l1_mean": float(l1.mean()),
        "l1_std": float(l1.std()),
        "l1_min": float(l1.min()),
        "l1_max": float(l1.max()),
        "porosity_mean": float(void.mean()),
        "porosity_std": float(void.std()),
        "train_porosity_mean": float(train_void.mean()),
    }


def _micro_infeasibility(cfg, specs, state, soft_images, binarize):
    entries = []
    for i, (spec, raw) in enumerate(zip(specs, cfg["constraints"])):
        res = cs.eval_functional(soft_images, spec, binarize=binarize)
        entries.append(
            {
                "index": i,
                "kind": spec.kind,
                "relation": spec.relation,
                "target": raw["target"],
                "residual": float(res.value.data),
                "infeasibility": res.infeasibility(),
                "multiplier": float(state.multipliers[i]),
            }
        )
    return {"eval_samples": int(len(soft_images)), "constraints": entries}


# ---------------------------------------------------------------------------
# entry points


def run_config(cfg, quiet=False):
    """Execute one resolved, validated config.  Returns a process exit code."""
    out_dir = cfg["output_dir"]
    os.makedirs(out_dir, exist_ok=True)
    try:
        if cfg["experiment"] == "microstructure":
            _run_microstructure(cfg, out_dir)
        else:
            _run_mlp(cfg, out_dir)
    except NanAbort as e:
        _write_json(os.path.join(out_dir, "abort.json"), {"step": e.step, "term": e.term})
        if not quiet:
            print(f"aborted: {e}", flush=True)
        return 3
    return 0


def run_config_file(path, assignments=(), env=None, quiet=False):
    """Load, override, resolve, validate, run.  Exit code 0, 2, or 3."""
    try:
        cfg = load_config(path)
        apply_overrides(cfg, assignments)
        cfg = resolve_config(cfg, env=env)
        diags = validate_config(cfg)
    except ConfigError as e:
        diags = e.diagnostics
    except (IndexError, KeyError, TypeError, ValueError) as e:
        diags = [f"$: bad override: {e}"]
    if diags:
        if not quiet:
            for d in diags:
                print(d, flush=True)
        return 2
    return run_config(cfg, quiet=quiet)


# ---------------------------------------------------------------------------
# cross-run comparison


def _read_predictions(path):
    if not os.path.exists(path):
        raise CompareError(f"missing file: {path}")
    with open(path) as f:
        lines = f.read().strip().splitlines()
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    return rows[:, 0], rows[:, 1]


def _run_summary(run_dir):
    cfg_path = os.path.join(run_dir, "config.json")
    if not os.path.exists(cfg_path):
        raise CompareError(f"missing file: {cfg_path}")
    with open(cfg_path) as f:
        cfg = json.load(f)
    experiment = cfg["experiment"]
    if experiment == "microstructure":
        raise CompareError(f"{run_dir}: microstructure runs have no prediction grid to compare")
    x, mean = _read_predictions(os.path.join(run_dir, "predictions.csv"))
    if experiment == "beam":
        d = cfg.get("dataset", {})
        bc = ds.BeamConfig(**{k: v for k, v in d.items() if k != "regions"})
        truth = ds.beam_deflection(x * bc.length, bc) / ds.beam_y_scale(bc)
    else:
        truth = ds.polynomial_truth(x)
    mse = float(np.mean((mean - truth) ** 2))
    inf_path = os.path.join(run_dir, "infeasibility.json")
    if not os.path.exists(inf_path):
        raise CompareError(f"missing file: {inf_path}")
    with open(inf_path) as f:
        inf = json.load(f)
    infeasibilities = [e["infeasibility"] for e in inf["constraints"]]
    return {"experiment": experiment, "x": x, "mse": mse, "infeasibilities": infeasibilities}


def compare(run_dirs, baseline_dir):
    """CSV comparing each run to the baseline on a shared prediction grid."""
    base = _run_summary(baseline_dir)
    lines = ["run,experiment,mse,mse_ratio,infeasibilities"]
    for d in run_dirs:
        s = _run_summary(d)
        if s["x"].shape != base["x"].shape or not np.allclose(s["x"], base["x"]):
            raise CompareError(f"{d}: prediction grid does not match baseline {baseline_dir}")
        ratio = s["mse"] / base["mse"]
        inf = ";".join(_fmt(v) for v in s["infeasibilities"])
        lines.append(f"{d},{s['experiment']},{_fmt(s['mse'])},{_fmt(ratio)},{inf}")
    return "\n".join(lines) + "\n"
