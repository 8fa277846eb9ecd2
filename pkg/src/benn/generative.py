"""Dense variational autoencoder for small periodic microstructures.

Weights are point estimates; only the latent code is variational.  The
decoder ends in a sigmoid so generated pixels live in (0, 1), and the
reconstruction term is the Bernoulli negative log-likelihood (computed
from logits for stability: softplus(z) - p * z per pixel).

Descriptor constraints hook into training through
``constrained_train_step``: each step decodes a fresh batch of latent
draws, evaluates the registered constraints on those generated images,
and folds the residuals into the multiplier-method loss.  With an empty
constraint list the step is bit-identical to plain VAE training.
"""
from __future__ import annotations

import json

import numpy as np

from . import autodiff as ad
from . import constraints as cs
from . import mdmm
from .autodiff import Tape, Tensor

__all__ = [
    "GenerativeError",
    "DenseVAE",
    "encode",
    "reparam_latent",
    "decode",
    "kl_term",
    "vae_loss",
    "generate",
    "constrained_train_step",
    "save_checkpoint",
    "load_checkpoint",
]


class GenerativeError(Exception):
    pass


class DenseVAE:
    """image^2 -> hidden -> latent -> hidden -> image^2, ReLU inside."""

    def __init__(self, side=32, hidden=256, latent=16, seed=0):
        if side < 2 or hidden < 1 or latent < 1:
            raise GenerativeError("degenerate architecture")
        self.side = int(side)
        self.hidden = int(hidden)
        self.latent = int(latent)
        self.seed = int(seed)
        d = self.side * self.side
        rng = np.random.default_rng(self.seed)

        def init(fan_in, fan_out, name):
            w = Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)), name=name + ".w")
            b = Tensor(np.zeros(fan_out), name=name + ".b")
            return w, b

        self.enc_hidden = init(d, hidden, "enc_hidden")
        self.enc_mu = init(hidden, latent, "enc_mu")
        self.enc_log_var = init(hidden, latent, "enc_log_var")
        self.dec_hidden = init(latent, hidden, "dec_hidden")
        self.dec_out = init(hidden, d, "dec_out")

    def parameters(self):
        out = []
        for w, b in (self.enc_hidden, self.enc_mu, self.enc_log_var, self.dec_hidden, self.dec_out):
            out.extend([w, b])
        return out

    def _flat(self, images):
        t = images if isinstance(images, Tensor) else Tensor(images)
        d = self.side * self.side
        if t.ndim == 3:
            t = ad.reshape(t, (t.shape[0], d))
        if t.ndim != 2 or t.shape[1] != d:
            raise GenerativeError(f"expected [batch, {d}] images, got {t.shape}")
        return t


def encode(vae, images):
    """Posterior parameters (mu_z, log_var_z) for an image batch."""
    x = vae._flat(images)
    h = ad.relu(x @ vae.enc_hidden[0] + vae.enc_hidden[1])
    mu = h @ vae.enc_mu[0] + vae.enc_mu[1]
    log_var = h @ vae.enc_log_var[0] + vae.enc_log_var[1]
    return mu, log_var


def reparam_latent(mu_z, log_var_z, rng=None, eps=None):
    """z = mu + eps * exp(log_var / 2); eps may be supplied explicitly."""
    if eps is None:
        if rng is None:
            raise GenerativeError("reparam_latent needs rng or eps")
        eps = rng.standard_normal(mu_z.shape)
    return mu_z + ad.exp(log_var_z * 0.5) * np.asarray(eps, dtype=np.float64)


def _decode_logits(vae, z):
    zt = z if isinstance(z, Tensor) else Tensor(z)
    h = ad.relu(zt @ vae.dec_hidden[0] + vae.dec_hidden[1])
    return h @ vae.dec_out[0] + vae.dec_out[1]


def decode(vae, z):
    """Generated pixels in (0, 1), [batch, side^2]."""
    return ad.sigmoid(_decode_logits(vae, z))


def kl_term(mu_z, log_var_z):
    """KL(q(z|x) || N(0, I)) summed over latent dims, mean over the batch.

    Closed form: 0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2).
    """
    per_sample = ad.reduce(
        "sum",
        (ad.square(mu_z) + ad.exp(log_var_z) - 1.0 - log_var_z) * 0.5,
        axis=1,
    )
    return ad.reduce("mean", per_sample)


def _loss_parts(vae, images, rng=None, eps=None):
    x = vae._flat(images)
    if np.any(x.data < 0.0) or np.any(x.data > 1.0):
        raise GenerativeError("pixel values must lie in [0, 1]")
    mu_z, log_var_z = encode(vae, x)
    z = reparam_latent(mu_z, log_var_z, rng=rng, eps=eps)
    logits = _decode_logits(vae, z)
    # Bernoulli NLL from logits: softplus(l) - p * l, summed per image
    bce = ad.reduce("sum", ad.softplus(logits) - x * logits, axis=1)
    recon = ad.reduce("mean", bce)
    return recon, kl_term(mu_z, log_var_z)


def vae_loss(vae, images, rng=None, eps=None):
    """Reconstruction NLL + latent KL, averaged over the batch."""
    recon, kl = _loss_parts(vae, images, rng=rng, eps=eps)
    return recon + kl


def generate(vae, n, rng):
    """Decode n fresh standard-normal latents; returns [n, side, side]."""
    z = rng.standard_normal((n, vae.latent))
    pixels = decode(vae, z)
    return pixels.data.reshape(n, vae.side, vae.side)


def constrained_train_step(
    vae,
    images,
    specs,
    state,
    optimizer,
    rng,
    constraint_batch=16,
    binarize=None,
):
    """One multiplier-method step on VAE loss + descriptor constraints.

    Constraints are evaluated on a fresh batch of decoded latent draws,
    not on the training reconstructions, so they shape what the model
    generates.  Returns a metrics dict with the loss parts, residuals and
    multipliers.
    """
    for spec in specs:
        if spec.weight_id is None:
            raise GenerativeError(f"constraint {spec.kind} is not registered")
    with Tape() as tape:
        recon, kl = _loss_parts(vae, images, rng=rng)
        data_loss = recon + kl
        items = []
        if specs:
            z = rng.standard_normal((constraint_batch, vae.latent))
            decoded = decode(vae, z)
            batch3 = ad.reshape(decoded, (constraint_batch, vae.side, vae.side))
            for spec in specs:
                items.append((cs.eval_functional(batch3, spec, binarize=binarize), spec.weight_id))
        total = mdmm.total_loss(data_loss, items, state)
        grads = tape.backward(total)
    mdmm.step(optimizer, state, grads, items)
    return {
        "loss": float(data_loss.data),
        "recon": float(recon.data),
        "kl": float(kl.data),
        "residuals": {wid: float(res.value.data) for res, wid in items},
        "multipliers": list(state.multipliers),
    }


def save_checkpoint(vae, path):
    layers = {}
    for (w, b) in (vae.enc_hidden, vae.enc_mu, vae.enc_log_var, vae.dec_hidden, vae.dec_out):
        stem = w.name[:-2]
        layers[stem] = {"w": w.data.ravel().tolist(), "b": b.data.ravel().tolist()}
    with open(path, "w") as f:
        json.dump(
            {
                "kind": "dense_vae",
                "side": vae.side,
                "hidden": vae.hidden,
                "latent": vae.latent,
                "seed": vae.seed,
                "layers": layers,
            },
            f,
        )


def load_checkpoint(path):
    with open(path) as f:
        d = json.load(f)
    if d.get("kind") != "dense_vae":
        raise GenerativeError(f"checkpoint kind {d.get('kind')!r} is not dense_vae")
    vae = DenseVAE(side=d["side"], hidden=d["hidden"], latent=d["latent"], seed=d["seed"])
    for (w, b) in (vae.enc_hidden, vae.enc_mu, vae.enc_log_var, vae.dec_hidden, vae.dec_out):
        rec = d["layers"][w.name[:-2]]
        w.data = np.array(rec["w"], dtype=np.float64).reshape(w.shape)
        b.data = np.array(rec["b"], dtype=np.float64).reshape(b.shape)
    return vae
