"""Declarative constraints evaluated as differentiable residuals.

A ConstraintSpec names what to pin (a predicted value, a derivative, the
aleatoric variance, a band the prediction must stay inside, or a
microstructure descriptor) and where.  Evaluators turn a spec plus the
current model into a ConstraintResidual whose scalar ``value`` lives on
the active tape, so the multiplier method can differentiate through it.

Conventions:

* model-based residuals are computed on the Monte Carlo mean prediction
  over the supplied weight draws, with each draw shared across every
  location (and across the +/- epsilon pair of the derivative stencil);
* a single-location residual is signed; multi-point constraints aggregate
  as the mean of absolute per-point deviations;
* bound residuals are zero inside the band and grow linearly outside it,
  per-point values keep the sign of the violation;
* tpcf residuals are the batch mean of per-image mean absolute deviation
  from the target curve; porosity residuals are the signed batch mean.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .descriptors import BinarizeConfig, TPCFCurve, autocorr_direct, binarize_soft, radial_bin_matrix

__all__ = [
    "ConstraintError",
    "KINDS",
    "ConstraintSpec",
    "ConstraintResidual",
    "interval_points",
    "eval_value",
    "eval_derivative",
    "eval_variance",
    "eval_bound",
    "eval_functional",
    "evaluate",
]

KINDS = ("value", "derivative", "variance", "bound", "tpcf", "porosity")
_MODEL_KINDS = ("value", "derivative", "variance", "bound")
_RELATIONS = ("equality", "inequality")

BOUND_POINTS_PER_UNIT = 50


class ConstraintError(Exception):
    pass


def interval_points(lo, hi, per_unit=BOUND_POINTS_PER_UNIT):
    """Evenly spaced closed-interval grid at the configured density."""
    if hi < lo:
        raise ConstraintError(f"interval [{lo}, {hi}] is reversed")
    n = max(int(round((hi - lo) * per_unit)), 1) + 1
    return np.linspace(lo, hi, n)


class ConstraintSpec:
    """What to constrain, where, and how it couples to the multiplier."""

    def __init__(self, kind, target, locations=None, epsilon=0.01, relation="equality"):
        if kind not in KINDS:
            raise ConstraintError(f"unknown constraint kind {kind!r}")
        if relation not in _RELATIONS:
            raise ConstraintError(f"unknown relation {relation!r}")
        self.kind = kind
        self.relation = relation
        self.epsilon = float(epsilon)
        self.weight_id = None

        if kind in _MODEL_KINDS:
            if locations is None:
                raise ConstraintError(f"{kind} constraint needs locations")
            self.locations = np.atleast_1d(np.asarray(locations, dtype=np.float64))
            if self.locations.size == 0:
                raise ConstraintError("locations must be non-empty")
        else:
            if locations is not None:
                raise ConstraintError(f"{kind} constraint takes no locations")
            self.locations = None

        if kind == "bound":
            try:
                lo, hi = target
            except (TypeError, ValueError) as e:
                raise ConstraintError("bound target must be (lower, upper)") from e
            if lo > hi:
                raise ConstraintError(f"bound lower {lo} exceeds upper {hi}")
            self.target = (float(lo), float(hi))
        elif kind == "tpcf":
            values = target.values if isinstance(target, TPCFCurve) else target
            self.target = np.asarray(values, dtype=np.float64)
            if self.target.ndim != 1 or self.target.size < 2:
                raise ConstraintError("tpcf target must be a radial curve")
        else:
            self.target = float(target)
            if kind == "variance" and self.target < 0:
                raise ConstraintError("variance target must be non-negative")
        if kind == "derivative" and self.epsilon <= 0:
            raise ConstraintError("derivative stencil epsilon must be positive")


class ConstraintResidual:
    """Scalar residual (tape tensor) plus detached per-point deviations."""

    def __init__(self, value, per_point):
        self.value = value
        self.per_point = np.asarray(per_point, dtype=np.float64)

    def item(self):
        return float(self.value.data)

    def infeasibility(self):
        return abs(self.item())


def _mean_prediction(net, locations, samples, offset=0.0):
    """Monte Carlo mean of the mean head at the given locations."""
    x = Tensor((locations + offset)[:, None])
    acc = None
    for draw in samples:
        y_hat, _ = net.apply(draw, x)
        acc = y_hat if acc is None else acc + y_hat
    return acc * (1.0 / len(samples))


def _mean_noise_variance(net, locations, samples):
    x = Tensor(locations[:, None])
    acc = None
    for draw in samples:
        _, sigma_log = net.apply(draw, x)
        noise = ad.exp(sigma_log)
        acc = noise if acc is None else acc + noise
    return acc * (1.0 / len(samples))


def _aggregate(diff):
    # signed when there is a single point, mean |.| otherwise
    if diff.size == 1:
        return ad.reduce("mean", diff)
    return ad.reduce("mean", ad.absolute(diff))


def _check(spec, kind):
    if spec.kind != kind:
        raise ConstraintError(f"expected a {kind} spec, got {spec.kind}")
    if not isinstance(spec, ConstraintSpec):
        raise ConstraintError("not a ConstraintSpec")


def eval_value(net, spec, samples):
    """Mean prediction at the locations minus the target value."""
    _check(spec, "value")
    diff = _mean_prediction(net, spec.locations, samples) - spec.target
    return ConstraintResidual(_aggregate(diff), diff.data)


def eval_derivative(net, spec, samples):
    """Central-difference slope of the mean prediction minus the target.

    The same weight draw evaluates both sides of the stencil, so the
    epistemic noise cancels inside each draw.
    """
    _check(spec, "derivative")
    eps = spec.epsilon
    plus = _mean_prediction(net, spec.locations, samples, offset=+eps)
    minus = _mean_prediction(net, spec.locations, samples, offset=-eps)
    diff = (plus - minus) * (1.0 / (2.0 * eps)) - spec.target
    return ConstraintResidual(_aggregate(diff), diff.data)


def eval_variance(net, spec, samples):
    """Predicted aleatoric variance at the locations minus the target."""
    _check(spec, "variance")
    diff = _mean_noise_variance(net, spec.locations, samples) - spec.target
    return ConstraintResidual(_aggregate(diff), diff.data)


def eval_bound(net, spec, samples):
    """Mean violation of the band; zero when inside everywhere.

    per_point deviations are signed: positive below the band (lower - f),
    negative above it (upper - f).
    """
    _check(spec, "bound")
    lo, hi = spec.target
    f = _mean_prediction(net, spec.locations, samples)
    below = ad.relu(lo - f)
    above = ad.relu(f - hi)
    value = ad.reduce("mean", below + above)
    return ConstraintResidual(value, below.data - above.data)


def eval_functional(images, spec, binarize=None):
    """Descriptor residuals on a generated image batch.

    images: Tensor or array, [B, H, W] in [0, 1].  tpcf compares each
    image's soft-binarized correlation curve against the target and takes
    the batch mean of per-image MAD; porosity is the signed batch mean of
    (porosity - target).
    """
    if spec.kind not in ("tpcf", "porosity"):
        raise ConstraintError(f"eval_functional cannot handle kind {spec.kind!r}")
    t = images if isinstance(images, Tensor) else Tensor(images)
    if t.ndim != 3:
        raise ConstraintError(f"expected [batch, h, w] images, got {t.shape}")
    b, h, w = t.shape

    if spec.kind == "porosity":
        flat = ad.reshape(t, (b, h * w))
        per_image = (ad.reduce("mean", flat, axis=1) - 1.0) * (-1.0) - spec.target
        return ConstraintResidual(ad.reduce("mean", per_image), per_image.data)

    binarize = binarize or BinarizeConfig()
    m, radii = radial_bin_matrix(h, w)
    if spec.target.size != radii.size:
        raise ConstraintError(
            f"tpcf target has {spec.target.size} radii, image needs {radii.size}"
        )
    soft = binarize_soft(t, binarize)
    ac = autocorr_direct(soft)
    curves = ad.reshape(ac, (b, h * w)) @ m
    mad = ad.reduce("mean", ad.absolute(curves - spec.target), axis=1)
    return ConstraintResidual(ad.reduce("mean", mad), mad.data)


_MODEL_EVALS = {
    "value": eval_value,
    "derivative": eval_derivative,
    "variance": eval_variance,
    "bound": eval_bound,
}


def evaluate(net, spec, samples):
    """Dispatch a model-based constraint to its evaluator."""
    fn = _MODEL_EVALS.get(spec.kind)
    if fn is None:
        raise ConstraintError(
            f"{spec.kind} constraints evaluate on image batches, use eval_functional"
        )
    if not samples:
        raise ConstraintError("need at least one weight draw")
    return fn(net, spec, samples)
