"""Mean-field variational MLP with a maximum-entropy prior.

Every weight and bias carries a diagonal Gaussian posterior (mu, log_var).
Under a uniform prior over a bounded parameter box, the KL term of the
ELBO reduces to the negative posterior entropy plus a constant that does
not depend on the variational parameters, so the training objective is

    loss = mean_s NLL(y, forward(x; draw_s)) + beta * entropy_kl_term

with the reparameterized draws w = mu + eps * exp(0.5 * log_var).

The network head always has two channels: the predictive mean and the log
of the aleatoric noise variance used by the heteroscedastic Gaussian
likelihood.
"""
from __future__ import annotations

import json

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "VariationalParameter",
    "BayesianMLP",
    "PredictiveSummary",
    "sample_weights",
    "gaussian_nll",
    "entropy_kl_term",
    "elbo_loss",
    "predict",
    "save_checkpoint",
    "load_checkpoint",
    "LOG_VAR_MIN",
    "LOG_VAR_MAX",
]

LOG_2PI = float(np.log(2.0 * np.pi))
LOG_2PI_E = LOG_2PI + 1.0

# posterior log-variance box; applied as a projection after optimizer steps
LOG_VAR_MIN = -20.0
LOG_VAR_MAX = 5.0

_ACTIVATIONS = {"relu": ad.relu, "gelu": ad.gelu}


class ModelError(Exception):
    pass


class VariationalParameter:
    """A tensor-valued weight with an independent Gaussian per entry."""

    def __init__(self, mu, log_var, name=None):
        self.mu = Tensor(mu, name=None if name is None else name + ".mu")
        self.log_var = Tensor(
            log_var, name=None if name is None else name + ".log_var"
        )
        if self.mu.shape != self.log_var.shape:
            raise ModelError("mu and log_var shapes differ")
        self.name = name

    @property
    def shape(self):
        return self.mu.shape

    def sample(self, eps):
        """One reparameterized draw; differentiable w.r.t. mu and log_var."""
        std = ad.exp(self.log_var * 0.5)
        return self.mu + std * eps


def sample_weights(p, rng=None, eps=None):
    """Draw from a VariationalParameter's posterior.

    Either a Generator (fresh noise) or an explicit eps array may be given;
    explicit eps makes common-random-number comparisons possible.
    """
    if eps is None:
        if rng is None:
            raise ModelError("sample_weights needs rng or eps")
        eps = rng.standard_normal(p.shape)
    return p.sample(np.asarray(eps, dtype=np.float64))


class BayesianMLP:
    """Fully connected variational network, two-channel output head."""

    def __init__(self, layer_sizes, activation="relu", init_log_var=-10.0, seed=0):
        if len(layer_sizes) < 2:
            raise ModelError("need at least input and output sizes")
        if layer_sizes[-1] != 2:
            raise ModelError(
                f"output width must be 2 (mean, log-noise), got {layer_sizes[-1]}"
            )
        if activation not in _ACTIVATIONS:
            raise ModelError(f"unknown activation '{activation}'")
        if not LOG_VAR_MIN <= init_log_var <= LOG_VAR_MAX:
            raise ModelError("init_log_var outside the permitted clamp range")
        self.layer_sizes = list(layer_sizes)
        self.activation = activation
        self.init_log_var = float(init_log_var)
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        self.weights = []
        self.biases = []
        for k, (fan_in, fan_out) in enumerate(zip(layer_sizes, layer_sizes[1:])):
            w_mu = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
            self.weights.append(
                VariationalParameter(
                    w_mu, np.full((fan_in, fan_out), init_log_var), name=f"layer{k}.w"
                )
            )
            self.biases.append(
                VariationalParameter(
                    np.zeros(fan_out), np.full(fan_out, init_log_var), name=f"layer{k}.b"
                )
            )

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w.mu, w.log_var, b.mu, b.log_var])
        return out

    def variational_parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def sample(self, rng=None, eps_list=None):
        """One weight draw for the whole network: list of (W, b) tensors."""
        draw = []
        if eps_list is None:
            for w, b in zip(self.weights, self.biases):
                draw.append((sample_weights(w, rng), sample_weights(b, rng)))
        else:
            it = iter(eps_list)
            for w, b in zip(self.weights, self.biases):
                draw.append((sample_weights(w, eps=next(it)), sample_weights(b, eps=next(it))))
        return draw

    def mean_draw(self):
        """The eps=0 draw, i.e. the posterior means."""
        return [(w.mu, b.mu) for w, b in zip(self.weights, self.biases)]

    def apply(self, draw, x):
        """Run the network with a fixed weight draw.

        x: [batch, in] tensor or array.  Returns (y_hat, log_noise), both
        1-D over the batch.
        """
        act = _ACTIVATIONS[self.activation]
        h = x if isinstance(x, Tensor) else Tensor(x)
        if h.ndim != 2 or h.shape[1] != self.layer_sizes[0]:
            raise ModelError(
                f"input shape {h.shape} does not match input width {self.layer_sizes[0]}"
            )
        last = len(draw) - 1
        for k, (w, b) in enumerate(draw):
            h = h @ w + b
            if k < last:
                h = act(h)
        return ad.index_column(h, 0), ad.index_column(h, 1)

    def forward(self, x, rng):
        """Sample one weight draw and apply it."""
        return self.apply(self.sample(rng), x)

    def clamp_log_var(self):
        for p in self.variational_parameters():
            np.clip(p.log_var.data, LOG_VAR_MIN, LOG_VAR_MAX, out=p.log_var.data)

    def n_weights(self):
        return sum(p.mu.size for p in self.variational_parameters())


def gaussian_nll(y, y_hat, sigma_log):
    """Heteroscedastic Gaussian negative log-likelihood (constant dropped).

    mean over points of (y - y_hat)^2 / (2 exp(sigma_log)) + sigma_log / 2.
    """
    y = y if isinstance(y, Tensor) else Tensor(y)
    if y.size == 0:
        raise ModelError("gaussian_nll: empty batch")
    diff = y - y_hat
    per_point = ad.square(diff) / (ad.exp(sigma_log) * 2.0) + sigma_log * 0.5
    return ad.reduce("mean", per_point)


def entropy_kl_term(net):
    """KL to the uniform max-entropy prior, dropping the log-volume constant.

    Equals the negative posterior entropy: -sum 0.5 * (log 2 pi e + log_var).
    More weight variance -> lower value, so minimizing it keeps the
    posterior as spread out as the data allows.
    """
    total = None
    count = 0
    for p in net.variational_parameters():
        s = ad.reduce("sum", p.log_var)
        total = s if total is None else total + s
        count += p.log_var.size
    return (total + float(count) * LOG_2PI_E) * (-0.5)


def elbo_loss(net, batch, draws, rng, kl_weight=1.0, samples=None):
    """Negative ELBO estimate: mean NLL over weight draws + beta * KL term.

    Pass ``samples`` (a list of weight draws) to reuse draws already taken
    this step, e.g. to share them with constraint evaluations.
    """
    if samples is None:
        if draws < 1:
            raise ModelError("elbo_loss needs draws >= 1")
        samples = [net.sample(rng) for _ in range(draws)]
    x, y = batch
    acc = None
    for draw in samples:
        y_hat, sigma_log = net.apply(draw, x)
        nll = gaussian_nll(y, y_hat, sigma_log)
        acc = nll if acc is None else acc + nll
    return acc * (1.0 / len(samples)) + entropy_kl_term(net) * kl_weight


class PredictiveSummary:
    """Predictive moments from repeated posterior draws."""

    def __init__(self, mean, epistemic_var, aleatoric_var, draws):
        self.mean = mean
        self.epistemic_var = epistemic_var
        self.aleatoric_var = aleatoric_var
        self.draws = draws


def predict(net, x, draws=250, rng=None, seed=None):
    """Monte Carlo predictive summary at inputs x (no tape required).

    mean and epistemic_var are moments of the mean head across draws
    (sample variance, ddof=1); aleatoric_var averages exp(log-noise).
    """
    if draws < 2:
        raise ModelError("predict needs draws >= 2 for a sample variance")
    if rng is None:
        rng = np.random.default_rng(0 if seed is None else seed)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    means = np.empty((draws, x.shape[0]))
    noises = np.empty((draws, x.shape[0]))
    for s in range(draws):
        y_hat, sigma_log = net.forward(x, rng)
        means[s] = y_hat.data
        noises[s] = np.exp(sigma_log.data)
    return PredictiveSummary(
        mean=means.mean(axis=0),
        epistemic_var=means.var(axis=0, ddof=1),
        aleatoric_var=noises.mean(axis=0),
        draws=draws,
    )


def _checkpoint_dict(net):
    layers = []
    for w, b in zip(net.weights, net.biases):
        layers.append(
            {
                "w_mu": w.mu.data.ravel().tolist(),
                "w_log_var": w.log_var.data.ravel().tolist(),
                "b_mu": b.mu.data.ravel().tolist(),
                "b_log_var": b.log_var.data.ravel().tolist(),
            }
        )
    return {
        "kind": "bayesian_mlp",
        "layer_sizes": net.layer_sizes,
        "activation": net.activation,
        "seed": net.seed,
        "layers": layers,
    }


def save_checkpoint(net, path):
    """Write weights as decimal float64 lists; round-trips bit-exactly."""
    with open(path, "w") as f:
        json.dump(_checkpoint_dict(net), f)


def load_checkpoint(path):
    with open(path) as f:
        d = json.load(f)
    if d.get("kind") != "bayesian_mlp":
        raise ModelError(f"checkpoint kind {d.get('kind')!r} is not bayesian_mlp")
    net = BayesianMLP(
        d["layer_sizes"], activation=d["activation"], seed=d["seed"]
    )
    for (w, b), rec in zip(
        zip(net.weights, net.biases), d["layers"], strict=True
    ):
        w.mu.data = np.array(rec["w_mu"], dtype=np.float64).reshape(w.shape)
        w.log_var.data = np.array(rec["w_log_var"], dtype=np.float64).reshape(w.shape)
        b.mu.data = np.array(rec["b_mu"], dtype=np.float64).reshape(b.shape)
        b.log_var.data = np.array(rec["b_log_var"], dtype=np.float64).reshape(b.shape)
    return net
