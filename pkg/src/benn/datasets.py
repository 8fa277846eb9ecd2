"""Synthetic data generators and dataset file I/O.

Three families:

* 1-D regression on a cubic-free polynomial plus a sinusoid, with two
  disjoint training regions whose noise levels differ by an order of
  magnitude (the heteroscedastic benchmark).
* Overhanging-beam deflection, observed only on a window of the span.
  Targets are trained in normalized units (y * EI / P L^3) so the network
  output is O(1); the de-normalization constant lands in the manifest, and
  the configured noise is applied at the trained scale.
* Periodic binary microstructures: smoothed white noise thresholded at a
  per-image quantile so each sample hits the target porosity exactly.

Datasets are stored as CSV with an `x,y` header (floats via repr, which
round-trips exactly); image batches as one PGM per image plus an index CSV
and a manifest JSON.
"""
from __future__ import annotations

import json
import os

import numpy as np
from scipy import ndimage

from .descriptors import load_pgm, save_pgm

__all__ = [
    "DatasetError",
    "RegressionConfig",
    "BeamConfig",
    "MicrostructureConfig",
    "polynomial_truth",
    "gen_regression",
    "beam_deflection",
    "beam_y_scale",
    "gen_beam",
    "gen_microstructures",
    "save_xy",
    "load_xy",
    "save_images",
    "load_images",
]


class DatasetError(Exception):
    pass


class RegressionConfig:
    """Polynomial + sinusoid target with per-region Gaussian noise.

    regions: list of (x_lo, x_hi, noise_sd, n_points).
    """

    def __init__(self, regions=None, seed=0):
        self.regions = [tuple(map(float, r[:3])) + (int(r[3]),) for r in (
            regions if regions is not None else [(-3.0, -2.0, 0.01, 30), (2.0, 3.0, 0.1, 30)]
        )]
        for lo, hi, sd, n in self.regions:
            if hi <= lo:
                raise DatasetError(f"empty region [{lo}, {hi}]")
            if sd < 0:
                raise DatasetError("noise_sd must be non-negative")
            if n < 1:
                raise DatasetError("each region needs at least one point")
        self.seed = int(seed)


def polynomial_truth(x):
    """Noiseless regression target 0.2 x^2 + 0.05 x + 0.01 + 0.15 sin(2 pi x)."""
    x = np.asarray(x, dtype=np.float64)
    return 0.2 * x**2 + 0.05 * x + 0.01 + 0.15 * np.sin(2.0 * np.pi * x)


def gen_regression(cfg):
    """Sample the configured regions; returns (x, y) float64 arrays."""
    rng = np.random.default_rng(cfg.seed)
    xs, ys = [], []
    for lo, hi, sd, n in cfg.regions:
        x = rng.uniform(lo, hi, size=n)
        y = polynomial_truth(x) + rng.normal(0.0, sd, size=n) if sd > 0 else polynomial_truth(x)
        xs.append(x)
        ys.append(y)
    return np.concatenate(xs), np.concatenate(ys)


class BeamConfig:
    """Overhanging beam: pin at 0 and 2L, free overhang to 3L, tip load P."""

    def __init__(
        self,
        elastic_modulus=200e9,
        inertia=1e-4,
        length=1.0,
        load=2000.0,
        n_obs=10,
        obs_range=(0.5, 1.3),
        noise_sd=0.001,
        seed=0,
    ):
        if min(elastic_modulus, inertia, length, load) <= 0:
            raise DatasetError("beam parameters must be positive")
        if not 0.0 <= obs_range[0] < obs_range[1] <= 3.0:
            raise DatasetError("obs_range must be an interval inside [0, 3] (units of L)")
        self.elastic_modulus = float(elastic_modulus)
        self.inertia = float(inertia)
        self.length = float(length)
        self.load = float(load)
        self.n_obs = int(n_obs)
        self.obs_range = (float(obs_range[0]), float(obs_range[1]))
        self.noise_sd = float(noise_sd)
        self.seed = int(seed)


def beam_deflection(x, cfg):
    """Analytic deflection in meters at position x (meters), 0 <= x <= 3L."""
    x = np.asarray(x, dtype=np.float64)
    L = cfg.length
    if np.any(x < 0.0) or np.any(x > 3.0 * L):
        raise DatasetError("position outside the beam span [0, 3L]")
    c = cfg.load / (cfg.elastic_modulus * cfg.inertia)
    body = c * (-(x**3) / 8.0 + L * x**2 / 4.0)
    over = c * (x**3 / 6.0 - 1.5 * L * x**2 + 3.5 * L**2 * x - 7.0 * L**3 / 3.0)
    return np.where(x <= 2.0 * L, body, over)


def beam_y_scale(cfg):
    """Meters per normalized unit: P L^3 / (E I)."""
    return cfg.load * cfg.length**3 / (cfg.elastic_modulus * cfg.inertia)


def gen_beam(cfg):
    """Observed beam data: x in units of L, y normalized by EI / P L^3.

    Noise is added to the normalized values, i.e. noise_sd is at the
    trained scale.
    """
    rng = np.random.default_rng(cfg.seed)
    x_over_l = rng.uniform(cfg.obs_range[0], cfg.obs_range[1], size=cfg.n_obs)
    y_norm = beam_deflection(x_over_l * cfg.length, cfg) / beam_y_scale(cfg)
    if cfg.noise_sd > 0:
        y_norm = y_norm + rng.normal(0.0, cfg.noise_sd, size=cfg.n_obs)
    return x_over_l, y_norm


class MicrostructureConfig:
    def __init__(self, size=32, n_samples=50, correlation_length=4.0, target_porosity=0.5, seed=0):
        if size not in (16, 32, 64):
            raise DatasetError(f"size must be 16, 32 or 64, got {size}")
        if not 0.0 < target_porosity < 1.0:
            raise DatasetError("target_porosity must be in (0, 1)")
        if correlation_length <= 0:
            raise DatasetError("correlation_length must be positive")
        if n_samples < 1:
            raise DatasetError("need at least one sample")
        self.size = int(size)
        self.n_samples = int(n_samples)
        self.correlation_length = float(correlation_length)
        self.target_porosity = float(target_porosity)
        self.seed = int(seed)


def gen_microstructures(cfg):
    """Periodic binary microstructures, [n, size, size] with pixel 1 = solid.

    White noise is smoothed with a periodic Gaussian kernel (sigma equal to
    the correlation length), then thresholded at the per-image quantile
    that realizes the target porosity exactly.
    """
    rng = np.random.default_rng(cfg.seed)
    n = cfg.size * cfg.size
    k_void = int(round(cfg.target_porosity * n))
    out = np.empty((cfg.n_samples, cfg.size, cfg.size))
    for i in range(cfg.n_samples):
        field = ndimage.gaussian_filter(
            rng.standard_normal((cfg.size, cfg.size)),
            sigma=cfg.correlation_length,
            mode="wrap",
        )
        flat = np.sort(field.ravel())
        # everything at or below the k-th value is void
        thresh = flat[k_void - 1] if k_void > 0 else -np.inf
        out[i] = (field > thresh).astype(np.float64)
    return out


def save_xy(path, x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DatasetError("save_xy expects matching 1-D arrays")
    with open(path, "w") as f:
        f.write("x,y\n")
        for xi, yi in zip(x, y):
            f.write(f"{float(xi)!r},{float(yi)!r}\n")


def load_xy(path):
    with open(path) as f:
        header = f.readline().rstrip("\n")
        if header != "x,y":
            raise DatasetError(f"{path}: line 1: expected header 'x,y'")
        xs, ys = [], []
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                a, b = line.split(",")
                xs.append(float(a))
                ys.append(float(b))
            except ValueError as e:
                raise DatasetError(f"{path}: line {lineno}: {e}") from e
    return np.array(xs), np.array(ys)


def save_images(directory, images, manifest=None):
    """One PGM per image + index.csv + manifest.json."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3:
        raise DatasetError("save_images expects [n, h, w]")
    os.makedirs(directory, exist_ok=True)
    names = []
    for i, img in enumerate(images):
        name = f"img_{i:04d}.pgm"
        save_pgm(img, os.path.join(directory, name))
        names.append(name)
    with open(os.path.join(directory, "index.csv"), "w") as f:
        f.write("index,filename\n")
        for i, name in enumerate(names):
            f.write(f"{i},{name}\n")
    if manifest is not None:
        with open(os.path.join(directory, "manifest.json"), "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)


def load_images(directory):
    index = os.path.join(directory, "index.csv")
    with open(index) as f:
        header = f.readline().rstrip("\n")
        if header != "index,filename":
            raise DatasetError(f"{index}: line 1: expected header 'index,filename'")
        names = []
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                _, name = line.split(",")
            except ValueError as e:
                raise DatasetError(f"{index}: line {lineno}: {e}") from e
            names.append(name)
    if not names:
        raise DatasetError(f"{index}: no images listed")
    imgs = [load_pgm(os.path.join(directory, n)) for n in names]
    return np.stack(imgs)
