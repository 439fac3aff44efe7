"""Synthetic embedding datasets with class information planted in chosen frequency bands.

Sequences are built in the DCT coefficient domain and materialized with the
inverse transform, so the frequency location of the label signal is known
exactly.

* Sequence-level: each class owns a direction in embedding space. Every
  coefficient row inside the signal band is shifted along the class direction
  (geometrically tapered by 1/2 per index so the low-passed signal never
  crosses zero), plus small within-class jitter.
* Token-level: one scalar carrier per class lives in the signal band and is
  written along that class's direction; each position's label is the argmax
  of the carriers there. With two classes the carriers are ``-s`` and ``s``,
  so the label is the sign of ``s``.

Class directions depend only on ``task_seed``, so train and validation
splits generated with different sample seeds describe the same task.

The noise band receives class-independent Gaussian coefficients, scaled per
sequence so that time-domain RMS(signal) / RMS(noise) equals ``snr``.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import Dataset, EmbeddingSequence, TaskKind
from .dct import idct2_matrix
from .errors import ValidationError
from .filters import FilterBand


@dataclass(frozen=True)
class SyntheticSpec:
    length: int = 512
    width: int = 16
    num_classes: int = 2
    count: int = 100
    signal_band: FilterBand = FilterBand(0, 1)
    noise_band: FilterBand = FilterBand(130, 511)
    snr: float = 1.0
    task_kind: TaskKind = TaskKind.SEQUENCE
    jitter: float = 0.1
    task_seed: int = 0
    min_length: int = None

    def __post_init__(self):
        object.__setattr__(self, "task_kind", TaskKind.parse(self.task_kind))
        if self.length < 1 or self.width < 1 or self.count < 0:
            raise ValidationError("length and width must be >= 1 and count >= 0")
        if self.num_classes < 2:
            raise ValidationError("num_classes must be >= 2")
        if self.num_classes > 65535:
            raise ValidationError("num_classes must fit in 16 bits")
        if not self.snr > 0:
            raise ValidationError(f"snr must be > 0 (use inf for no noise), got {self.snr}")
        if self.min_length is not None and not 1 <= self.min_length <= self.length:
            raise ValidationError(f"min_length must be in [1, {self.length}]")
        if self.jitter < 0:
            raise ValidationError("jitter must be >= 0")
        s, n = self.signal_band, self.noise_band
        if s.lo <= n.hi and n.lo <= s.hi:
            raise ValidationError(f"signal band {s} overlaps noise band {n}")
        shortest = self.length if self.min_length is None else self.min_length
        if s.lo > shortest - 1:
            raise ValidationError(f"signal band {s} lies above the spectrum of length {shortest}")
        if self.task_kind is TaskKind.TOKEN and self.num_classes > self.width:
            raise ValidationError("token-level generation needs num_classes <= width")

    def band_slice(self, band, n=None):
        n = self.length if n is None else n
        return slice(band.lo, min(band.hi, n - 1) + 1)

    def to_dict(self):
        d = asdict(self)
        d["signal_band"] = [self.signal_band.lo, self.signal_band.hi]
        d["noise_band"] = [self.noise_band.lo, self.noise_band.hi]
        d["task_kind"] = self.task_kind.name.lower()
        d["snr"] = None if math.isinf(self.snr) else self.snr
        return d


def class_directions(rng, num_classes, width):
    """Random directions of norm sqrt(width), i.e. unit RMS per embedding dimension."""
    d = rng.standard_normal((num_classes, width))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * math.sqrt(width)


def _bins(band, n):
    return max(0, min(band.hi, n - 1) - band.lo + 1)


def _add_noise(spec, rng, coeffs, signal):
    n = coeffs.shape[0]
    nsl = spec.band_slice(spec.noise_band, n)
    nbins = _bins(spec.noise_band, n)
    if math.isinf(spec.snr) or nbins == 0:
        return coeffs
    target_rms = math.sqrt(np.mean(signal**2)) / spec.snr
    # Orthonormal transform: mean square in time = total coefficient energy / (N*E).
    sigma = target_rms * math.sqrt(n / nbins)
    coeffs[nsl] += sigma * rng.standard_normal((nbins, spec.width))
    return coeffs


def _sequence_level(spec, rng, n, directions, label):
    ssl = spec.band_slice(spec.signal_band, n)
    k = np.arange(n)[ssl]
    taper = 0.5 ** (k - spec.signal_band.lo)
    coeffs = np.zeros((n, spec.width))
    jitter = spec.jitter * rng.standard_normal((len(k), spec.width))
    coeffs[ssl] = math.sqrt(n) * taper[:, None] * (directions[label] + jitter)
    signal = idct2_matrix(coeffs, check=False)
    coeffs = _add_noise(spec, rng, coeffs, signal)
    return idct2_matrix(coeffs, check=False), np.full(n, label, dtype=np.int64)


def _token_level(spec, rng, n, directions):
    c = spec.num_classes
    ssl = spec.band_slice(spec.signal_band, n)
    nbins = _bins(spec.signal_band, n)
    carrier_coeffs = np.zeros((n, c))
    # Unit RMS per position for each carrier.
    carrier_coeffs[ssl] = math.sqrt(n / nbins) * rng.standard_normal((nbins, c))
    if c == 2:
        carrier_coeffs[:, 0] = -carrier_coeffs[:, 1]
    carriers = idct2_matrix(carrier_coeffs, check=False)
    labels = carriers.argmax(axis=1).astype(np.int64)
    coeffs = carrier_coeffs @ directions
    signal = carriers @ directions
    coeffs = _add_noise(spec, rng, coeffs, signal)
    return idct2_matrix(coeffs, check=False), labels


def gen_synthetic(spec, seed, metadata=None):
    """Generate a :class:`Dataset` fully determined by ``(spec, seed)``."""
    directions = class_directions(
        np.random.default_rng(spec.task_seed), spec.num_classes, spec.width
    )
    rng = np.random.default_rng(seed)
    sequences = []
    for i in range(spec.count):
        n = spec.length
        if spec.min_length is not None and spec.min_length < spec.length:
            n = int(rng.integers(spec.min_length, spec.length + 1))
        if spec.task_kind is TaskKind.SEQUENCE:
            label = int(rng.integers(spec.num_classes))
            values, labels = _sequence_level(spec, rng, n, directions, label)
        else:
            values, labels = _token_level(spec, rng, n, directions)
        sequences.append(EmbeddingSequence(values.astype(np.float32), labels, id=i))
    meta = {"generator": spec.to_dict(), "seed": int(seed), "task": "synthetic", "language": "xx"}
    meta.update(metadata or {})
    return Dataset(sequences, spec.num_classes, spec.width, spec.task_kind, meta)
