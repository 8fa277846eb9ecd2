"""Differentiable microstructure descriptors.

Images are H x W float64 arrays with values in [0, 1]; pixel value 1 means
solid phase, 0 means void.  The two-point correlation function S2(r) is the
probability that two points a distance r apart both land in the solid
phase; it is computed as

    binarize_soft -> periodic autocorrelation / pixel count -> radial average

so that S2(0) equals the solid fraction.  Two autocorrelation routes exist:
``autocorr_fft`` (numpy FFT, evaluation only) and ``autocorr_direct``
(explicit summation with a hand-derived gradient, usable inside training
losses).  They must agree to near machine precision; tests enforce it.
"""
from __future__ import annotations

import numpy as np
from scipy import special as _special

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "DescriptorError",
    "BinarizeConfig",
    "TPCFCurve",
    "binarize_soft",
    "porosity",
    "autocorr_fft",
    "autocorr_direct",
    "radial_average",
    "radial_bin_matrix",
    "tpcf",
    "save_pgm",
    "load_pgm",
]

_DIRECT_PIXEL_CAP = 64 * 64


class DescriptorError(Exception):
    pass


class BinarizeConfig:
    """Sigmoid steepness/threshold for soft binarization."""

    def __init__(self, steepness=100.0, threshold=0.5):
        if steepness <= 0:
            raise DescriptorError("steepness must be positive")
        self.steepness = float(steepness)
        self.threshold = float(threshold)


class TPCFCurve:
    """Radially averaged two-point correlation: values[r] for r = 0..R."""

    def __init__(self, radii, values):
        self.radii = np.asarray(radii, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        if self.radii.shape != self.values.shape:
            raise DescriptorError("radii and values must align")

    def __len__(self):
        return len(self.radii)

    def solid_fraction(self):
        return float(self.values[0])

    def void_phase(self):
        """S2 of the complementary phase: 1 - 2*phi + S2(r)."""
        phi = self.solid_fraction()
        return TPCFCurve(self.radii, 1.0 - 2.0 * phi + self.values)

    def save_csv(self, path):
        with open(path, "w") as f:
            f.write("radius,value\n")
            for r, v in zip(self.radii, self.values):
                f.write(f"{int(r)},{float(v)!r}\n")

    @staticmethod
    def load_csv(path):
        with open(path) as f:
            header = f.readline().rstrip("\n")
            if header != "radius,value":
                raise DescriptorError(f"{path}: line 1: expected header 'radius,value'")
            radii, values = [], []
            for lineno, line in enumerate(f, start=2):
                line = line.strip()
                if not line:
                    continue
                try:
                    r_s, v_s = line.split(",")
                    radii.append(int(r_s))
                    values.append(float(v_s))
                except ValueError as e:
                    raise DescriptorError(f"{path}: line {lineno}: {e}") from e
        return TPCFCurve(radii, values)


def binarize_soft(image, cfg=None):
    """Sigmoid push of pixel values toward {0, 1} around a threshold.

    Differentiable when given a Tensor; plain numpy otherwise.  At
    steepness -> infinity this is a hard threshold.
    """
    cfg = cfg or BinarizeConfig()
    if isinstance(image, Tensor):
        return ad.sigmoid((image - cfg.threshold) * cfg.steepness)
    return _special.expit((np.asarray(image, dtype=np.float64) - cfg.threshold) * cfg.steepness)


def porosity(image):
    """Void volume fraction: mean of (1 - pixel)."""
    if isinstance(image, Tensor):
        return ad.reduce("mean", (image - 1.0) * (-1.0))
    return float(np.mean(1.0 - np.asarray(image, dtype=np.float64)))


def _require_image(a):
    if a.ndim != 2:
        raise DescriptorError(f"expected a 2-D image, got shape {a.shape}")


def autocorr_fft(image):
    """Periodic autocorrelation via FFT, normalized by pixel count.

    Evaluation-only path; both sides must be powers of two.
    """
    img = np.asarray(image, dtype=np.float64)
    _require_image(img)
    h, w = img.shape
    if h & (h - 1) or w & (w - 1) or h == 0 or w == 0:
        raise DescriptorError(f"fft route needs power-of-two sides, got {img.shape}")
    power = np.abs(np.fft.fft2(img)) ** 2
    return np.real(np.fft.ifft2(power)) / (h * w)


_NEG_INDEX_CACHE = {}


def _neg_index(h, w):
    """neg[d] = flat index of lag -d under periodic wrapping."""
    key = (h, w)
    cached = _NEG_INDEX_CACHE.get(key)
    if cached is None:
        lag_i, lag_j = np.divmod(np.arange(h * w), w)
        cached = ((h - lag_i) % h) * w + ((w - lag_j) % w)
        _NEG_INDEX_CACHE[key] = cached
    return cached


def _corr2(a, b):
    """c[k, dy, dx] = sum_{y,x} a[k,y,x] * b[k, y+dy, x+dx], indices periodic.

    The explicit double sum is organized per column shift dx: a batched
    matmul against the rolled image gives every row pairing at once, and
    the dy axis falls out as sums along wrapped diagonals.
    """
    k, h, w = a.shape
    sel = (np.arange(h)[:, None] + np.arange(h)[None, :]) % h  # sel[dy, y]
    rows = np.arange(h)[None, :]
    out = np.empty((k, h, w))
    for dx in range(w):
        bs = np.roll(b, -dx, axis=2)
        q = a @ bs.transpose(0, 2, 1)  # q[k, y, z] = sum_x a[k,y,x] b[k,z,x+dx]
        # contiguous copy keeps the reduction order independent of batch size
        out[:, :, dx] = np.ascontiguousarray(q[:, rows, sel]).sum(axis=2)
    return out


def autocorr_direct(image):
    """Periodic autocorrelation by explicit summation; differentiable.

    Accepts an H x W image or a B x H x W batch (Tensor or array).  Cost is
    quadratic in the pixel count, so images are capped at 64 x 64.

    Gradient: dA[d]/dI[x] = (I[x+d] + I[x-d]) / N, so the pullback of G is
    (1/N) * sum_d (G[d] + G[-d]) I[x+d], the same correlation kernel applied
    to the symmetrized upstream gradient.
    """
    is_tensor = isinstance(image, Tensor)
    data = image.data if is_tensor else np.asarray(image, dtype=np.float64)
    batched = data.ndim == 3
    if not batched:
        _require_image(data)
    h, w = data.shape[-2:]
    if h * w > _DIRECT_PIXEL_CAP:
        raise DescriptorError(
            f"direct route capped at {_DIRECT_PIXEL_CAP} pixels, got {h}x{w}"
        )
    n = h * w
    data3 = data if batched else data[None]
    out3 = _corr2(data3, data3) / n
    out = out3 if batched else out3[0]
    if not is_tensor:
        return out

    neg = _neg_index(h, w)

    def backward_fn(g):
        g3 = (g if batched else g[None]).reshape(-1, n)
        s = (g3 + g3[:, neg]).reshape(-1, h, w)
        grad3 = _corr2(s, data3) / n
        return (grad3 if batched else grad3[0],)

    return ad.primitive("autocorr_direct", out, (image,), backward_fn)


_RADIAL_CACHE = {}


def radial_bin_matrix(h, w):
    """Binning matrix M [h*w, R+1] with M[x, r] = 1/count_r on bin membership.

    Lag distances are periodic (per-axis min of d and size-d); a cell joins
    bin round(dist) when that lands in 0..floor(h/2); farther corners are
    dropped.  flat_field @ M is then the radial average, which keeps the
    operation differentiable as a constant matmul.
    """
    key = (h, w)
    cached = _RADIAL_CACHE.get(key)
    if cached is not None:
        return cached
    if h != w:
        raise DescriptorError(f"radial average needs a square field, got {h}x{w}")
    r_max = h // 2
    lag_i, lag_j = np.divmod(np.arange(h * w), w)
    di = np.minimum(lag_i, h - lag_i)
    dj = np.minimum(lag_j, w - lag_j)
    dist = np.sqrt(di.astype(np.float64) ** 2 + dj.astype(np.float64) ** 2)
    bins = np.floor(dist + 0.5).astype(np.int64)  # round half up
    m = np.zeros((h * w, r_max + 1))
    inside = bins <= r_max
    m[np.arange(h * w)[inside], bins[inside]] = 1.0
    counts = m.sum(axis=0)
    if np.any(counts == 0):
        raise DescriptorError("empty radial bin; field too small")
    m /= counts
    radii = np.arange(r_max + 1)
    _RADIAL_CACHE[key] = (m, radii)
    return _RADIAL_CACHE[key]


def radial_average(field):
    """Radially averaged profile of a square lag field."""
    f = np.asarray(field, dtype=np.float64)
    _require_image(f)
    m, radii = radial_bin_matrix(*f.shape)
    return TPCFCurve(radii, f.ravel() @ m)


def tpcf(image, cfg=None, differentiable=False):
    """Two-point correlation of the solid phase of a [0,1] image.

    ``differentiable=True`` routes through the explicit-summation
    autocorrelation (the path used inside training losses);
    the default uses the FFT.  Both return a TPCFCurve here; training code
    composes the underlying pieces directly to stay on the tape.
    """
    img = np.asarray(image, dtype=np.float64)
    _require_image(img)
    if np.any(img < 0.0) or np.any(img > 1.0):
        raise DescriptorError("pixel values must lie in [0, 1]")
    b = binarize_soft(img, cfg)
    ac = autocorr_direct(b) if differentiable else autocorr_fft(b)
    return radial_average(ac)


def save_pgm(image, path):
    """Write a [0,1] image as plain-text PGM (P2), 255 gray levels."""
    img = np.asarray(image, dtype=np.float64)
    _require_image(img)
    if np.any(img < 0.0) or np.any(img > 1.0):
        raise DescriptorError("pixel values must lie in [0, 1]")
    gray = np.rint(img * 255.0).astype(np.int64)
    h, w = img.shape
    with open(path, "w") as f:
        f.write(f"P2\n{w} {h}\n255\n")
        for row in gray:
            f.write(" ".join(str(v) for v in row) + "\n")


def load_pgm(path):
    """Read a plain-text PGM back into a [0,1] float image."""
    tokens = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            bare = line.split("#", 1)[0]
            for t in bare.split():
                tokens.append((t, lineno))
    if not tokens or tokens[0][0] != "P2":
        raise DescriptorError(f"{path}: line 1: not a plain PGM (P2) file")
    if len(tokens) < 4:
        raise DescriptorError(f"{path}: truncated header")
    try:
        w = int(tokens[1][0])
        h = int(tokens[2][0])
        maxval = int(tokens[3][0])
    except ValueError as e:
        raise DescriptorError(f"{path}: line {tokens[1][1]}: bad header field") from e
    if maxval <= 0:
        raise DescriptorError(f"{path}: maxval must be positive")
    vals = tokens[4:]
    if len(vals) != w * h:
        raise DescriptorError(
            f"{path}: expected {w * h} pixels, found {len(vals)}"
        )
    out = np.empty(w * h, dtype=np.float64)
    for k, (t, lineno) in enumerate(vals):
        try:
            out[k] = int(t)
        except ValueError as e:
            raise DescriptorError(f"{path}: line {lineno}: bad pixel {t!r}") from e
    return out.reshape(h, w) / maxval
