"""Fixed-band and learnable frequency filters over DCT coefficients."""

import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ValidationError

DEFAULT_FILTER_LENGTH = 512


@dataclass(frozen=True)
class FilterBand:
    """Inclusive range of DCT frequency indices."""

    lo: int
    hi: int

    def __post_init__(self):
        if not 0 <= self.lo <= self.hi:
            raise ValidationError(f"invalid band [{self.lo}, {self.hi}]")

    def __str__(self):
        return f"{self.lo}:{self.hi}"


# Manual bands for 512-position encoders.
BANDS = {
    "low": FilterBand(0, 1),
    "mid-low": FilterBand(2, 8),
    "mid": FilterBand(9, 33),
    "mid-high": FilterBand(34, 129),
    "high": FilterBand(130, 511),
}


def get_band(name):
    try:
        return BANDS[name]
    except KeyError:
        raise ValidationError(
            f"unknown band {name!r}; expected one of: {', '.join(BANDS)}"
        ) from None


def parse_band(text):
    """Parse ``"lo:hi"`` or a named band into a :class:`FilterBand`."""
    if text in BANDS:
        return BANDS[text]
    parts = text.split(":")
    if len(parts) != 2:
        raise ValidationError(f"band must look like lo:hi, got {text!r}")
    try:
        lo, hi = int(parts[0]), int(parts[1])
    except ValueError:
        raise ValidationError(f"band bounds must be integers, got {text!r}") from None
    return FilterBand(lo, hi)


def band_weights(band, n):
    """Binary mask of length ``n`` that keeps frequencies inside ``band``."""
    if n < 1:
        raise ValidationError(f"sequence length must be >= 1, got {n}")
    w = np.zeros(n, dtype=np.float64)
    if band.lo > n - 1:
        warnings.warn(
            f"band {band} lies entirely above the spectrum of a length-{n} sequence",
            RuntimeWarning,
            stacklevel=2,
        )
        return w
    w[band.lo : min(band.hi, n - 1) + 1] = 1.0
    return w


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # Split by sign to avoid overflow in exp.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@lru_cache(maxsize=128)
def resampling_matrix(m, n):
    """Linear map from a length-``m`` weight vector to length ``n``.

    Shrinking uses adaptive mean pooling, where output ``i`` averages the
    input indices ``floor(i*m/n)`` through ``ceil((i+1)*m/n) - 1``.
    Growing uses piecewise-linear interpolation onto ``n`` evenly spaced
    points over ``[0, m-1]``.
    """
    if m < 1 or n < 1:
        raise ValidationError(f"lengths must be >= 1, got m={m}, n={n}")
    mat = np.zeros((n, m), dtype=np.float64)
    if n == m:
        np.fill_diagonal(mat, 1.0)
    elif n < m:
        for i in range(n):
            start = (i * m) // n
            stop = -((-(i + 1) * m) // n)  # ceil
            mat[i, start:stop] = 1.0 / (stop - start)
    else:
        pos = np.arange(n) * (m - 1) / (n - 1)
        left = np.minimum(np.floor(pos).astype(int), m - 1)
        right = np.minimum(left + 1, m - 1)
        frac = pos - left
        rows = np.arange(n)
        np.add.at(mat, (rows, left), 1.0 - frac)
        np.add.at(mat, (rows, right), frac)
    mat.setflags(write=False)
    return mat


@dataclass
class SpectralFilter:
    """Learnable per-frequency logits at a canonical length.

    The weight applied to frequency ``k`` is ``sigmoid(raw_weights[k])``,
    resampled to the length of the sequence being filtered.
    """

    raw_weights: np.ndarray = field(
        default_factory=lambda: np.zeros(DEFAULT_FILTER_LENGTH)
    )

    def __post_init__(self):
        self.raw_weights = np.asarray(self.raw_weights, dtype=np.float64)
        if self.raw_weights.ndim != 1 or self.raw_weights.size < 1:
            raise ValidationError("filter weights must be a non-empty 1-D vector")

    @classmethod
    def zeros(cls, length=DEFAULT_FILTER_LENGTH):
        return cls(np.zeros(int(length), dtype=np.float64))

    @property
    def length(self):
        return self.raw_weights.shape[0]

    def scaled(self):
        return sigmoid(self.raw_weights)


def adapt_filter(f, n):
    """Sigmoid-scaled filter weights resampled to sequence length ``n``."""
    if n < 1:
        raise ValidationError(f"sequence length must be >= 1, got {n}")
    s = f.scaled()
    if n == f.length:
        return s
    return resampling_matrix(f.length, n) @ s


def adapt_filter_backward(f, n, upstream_grad):
    """Gradient w.r.t. the raw logits given the gradient w.r.t. ``adapt_filter(f, n)``."""
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.shape != (n,):
        raise ValidationError(
            f"upstream gradient has shape {g.shape}, expected ({n},)"
        )
    if not np.all(np.isfinite(g)):
        raise ValidationError("upstream gradient contains non-finite values")
    s = f.scaled()
    if n != f.length:
        g = resampling_matrix(f.length, n).T @ g
    return g * s * (1.0 - s)


def apply_filter(coeffs, weights):
    """Scale row ``k`` of the coefficient matrix by ``weights[k]``.

    Works on ``(N, E)`` and batched ``(B, N, E)`` arrays.
    """
    weights = np.asarray(weights, dtype=np.float64)
    n = coeffs.shape[-2]
    if weights.shape != (n,):
        raise ValidationError(
            f"filter has length {weights.shape[0] if weights.ndim else 0}, "
            f"coefficients have {n} frequencies"
        )
    return coeffs * weights[:, None]

