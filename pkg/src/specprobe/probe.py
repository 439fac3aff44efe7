"""Linear probe over (optionally) spectrally filtered embeddings.

The forward pipeline for one ``N x E`` sequence is::

    coeffs   = D @ emb                  # DCT-II per embedding dimension
    filtered = D.T @ (w[:, None] * coeffs)
    logits   = filtered @ W + b

with ``w`` a fixed band mask or the adapted learnable filter. Gradients are
derived by hand; since ``D`` is orthogonal the adjoint of the inverse
transform is the forward transform.
"""

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .dct import dct2_matrix, idct2_matrix
from .errors import ValidationError
from .filters import (
    DEFAULT_FILTER_LENGTH,
    FilterBand,
    SpectralFilter,
    adapt_filter,
    adapt_filter_backward,
    band_weights,
)

MODES = ("orig", "fixed", "auto")


@dataclass
class LinearProbe:
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.W.shape[0] < 1 or self.W.shape[1] < 2:
            raise ValidationError(f"W must be E x C with E >= 1, C >= 2, got {self.W.shape}")
        if self.b.shape != (self.W.shape[1],):
            raise ValidationError(f"b must have shape ({self.W.shape[1]},), got {self.b.shape}")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ValidationError("probe parameters must be finite")

    @classmethod
    def init(cls, width, num_classes, rng):
        """Glorot-uniform weights, zero bias."""
        limit = np.sqrt(6.0 / (width + num_classes))
        W = rng.uniform(-limit, limit, size=(width, num_classes))
        return cls(W, np.zeros(num_classes))

    @property
    def width(self):
        return self.W.shape[0]

    @property
    def num_classes(self):
        return self.W.shape[1]


@dataclass
class ProbeModel:
    """A linear probe plus the frequency filter placed in front of it.

    ``mode`` is ``"orig"`` (no filter), ``"fixed"`` (binary ``band``) or
    ``"auto"`` (learnable ``filter``).
    """

    probe: LinearProbe
    mode: str = "orig"
    band: FilterBand = None
    filter: SpectralFilter = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "auto" and self.filter is None:
            raise ValidationError("auto mode requires a SpectralFilter")
        if self.mode == "fixed" and self.band is None:
            raise ValidationError("fixed-band mode requires a FilterBand")
        if self.mode != "auto" and self.filter is not None:
            raise ValidationError(f"{self.mode} mode must not carry a learnable filter")
        if self.mode != "fixed" and self.band is not None:
            raise ValidationError(f"{self.mode} mode must not carry a band")

    @classmethod
    def create(cls, mode, width, num_classes, rng, band=None,
               filter_length=DEFAULT_FILTER_LENGTH, metadata=None):
        probe = LinearProbe.init(width, num_classes, rng)
        filt = SpectralFilter.zeros(filter_length) if mode == "auto" else None
        return cls(probe, mode, band, filt, dict(metadata or {}))

    @property
    def width(self):
        return self.probe.width

    @property
    def num_classes(self):
        return self.probe.num_classes

    @property
    def mode_label(self):
        return f"fixed:{self.band}" if self.mode == "fixed" else self.mode

    def weights_for(self, n):
        """Per-frequency weights for a length-``n`` sequence, or None in orig mode."""
        if self.mode == "auto":
            return adapt_filter(self.filter, n)
        if self.mode == "fixed":
            return band_weights(self.band, n)
        return None

    def parameters(self):
        """Trainable arrays by name (views, not copies)."""
        params = {"W": self.probe.W, "b": self.probe.b}
        if self.mode == "auto":
            params["gamma"] = self.filter.raw_weights
        return params

    def copy(self):
        return ProbeModel(
            LinearProbe(self.probe.W.copy(), self.probe.b.copy()),
            self.mode,
            self.band,
            SpectralFilter(self.filter.raw_weights.copy()) if self.filter else None,
            dict(self.metadata),
        )


def _as_batch(emb):
    emb = np.asarray(emb, dtype=np.float64)
    if emb.ndim == 2:
        return emb[None]
    return emb


def filter_embeddings(model, emb):
    """Filtered embeddings that the probe head sees (``emb`` itself in orig mode)."""
    emb = np.asarray(emb, dtype=np.float64)
    if model.mode == "orig":
        return emb
    w = model.weights_for(emb.shape[-2])
    return idct2_matrix(dct2_matrix(emb, check=False) * w[:, None], check=False)


def forward(model, emb):
    """Logits (``N x C``, or ``B x N x C`` for a stacked batch)."""
    emb = np.asarray(emb, dtype=np.float64)
    if emb.ndim not in (2, 3) or emb.shape[-1] != model.width:
        raise ValidationError(
            f"embeddings of shape {emb.shape} do not match probe width {model.width}"
        )
    W, b = model.probe.W, model.probe.b
    if model.mode == "orig":
        return emb @ W + b
    # Filtering is linear along time, so it commutes with the probe's matmul.
    w = model.weights_for(emb.shape[-2])
    return idct2_matrix((dct2_matrix(emb, check=False) @ W) * w[:, None], check=False) + b


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def stacked_loss_and_grads(model, emb, labels, ignore=None, features=None, coeffs=None):
    """Summed per-sequence losses and gradients for ``B`` equal-length sequences.

    Each sequence's loss is the mean cross-entropy over its non-ignored
    positions. Returns ``(loss_sum, grads, count)`` where ``grads`` sums the
    per-sequence gradients and ``count`` is the number of sequences with at
    least one active position.

    ``features`` (filtered embeddings, non-learnable modes) and ``coeffs``
    (DCT coefficients of ``emb``, auto mode) may be passed precomputed.
    """
    emb = _as_batch(emb)
    labels = np.asarray(labels)
    labels = labels[None] if labels.ndim == 1 else labels
    B, n, _ = emb.shape
    active = np.ones((B, n), dtype=bool) if ignore is None else ~_as_mask(ignore)
    C = model.num_classes
    if labels.shape != (B, n):
        raise ValidationError(f"labels have shape {labels.shape}, expected {(B, n)}")
    lab = np.where(active, labels, 0)
    if lab.min() < 0 or lab.max() >= C:
        raise ValidationError(f"labels must lie in [0, {C})")

    W, b = model.probe.W, model.probe.b
    if model.mode == "auto":
        # The transforms commute with the probe's matmul, so they are applied
        # to C logit columns instead of E embedding columns:
        #   logits = D.T @ (w * coeffs) @ W + b = D.T @ (w * (coeffs @ W)) + b
        if coeffs is None:
            coeffs = dct2_matrix(emb, check=False)
        coeffs = _as_batch(coeffs)
        w = adapt_filter(model.filter, n)
        projected = coeffs @ W
        logits = idct2_matrix(projected * w[:, None], check=False) + b
    else:
        filtered = _as_batch(features) if features is not None else filter_embeddings(model, emb)
        logits = filtered @ W + b

    logp = _log_softmax(logits)
    counts = active.sum(axis=1)
    scale = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0)
    picked = np.take_along_axis(logp, lab[..., None], axis=-1)[..., 0]
    loss_sum = float(-(np.where(active, picked, 0.0).sum(axis=1) * scale).sum())

    # dL/dlogits, already divided by each sequence's active-position count.
    G = np.exp(logp)
    np.put_along_axis(G, lab[..., None], np.take_along_axis(G, lab[..., None], -1) - 1.0, -1)
    G *= (active * scale[:, None])[..., None]

    grads = {"b": G.sum(axis=(0, 1))}
    if model.mode == "auto":
        # Adjoint of the inverse transform is the forward transform.
        spectral_G = dct2_matrix(G, check=False)
        grads["W"] = np.einsum("bke,bkc->ec", coeffs * w[:, None], spectral_G)
        gw = np.einsum("bkc,bkc->k", spectral_G, projected)
        grads["gamma"] = adapt_filter_backward(model.filter, n, gw)
    else:
        grads["W"] = np.einsum("bne,bnc->ec", filtered, G)
    return loss_sum, grads, int((counts > 0).sum())


def _as_mask(ignore):
    m = np.asarray(ignore, dtype=bool)
    return m[None] if m.ndim == 1 else m


def loss_and_grads(model, emb, labels, ignore=None):
    """Mean cross-entropy of one sequence and its gradients w.r.t. W, b (and gamma).

    In orig and fixed-band modes the returned dict has no ``"gamma"`` entry.
    """
    emb = np.asarray(emb, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[1] != model.width:
        raise ValidationError(
            f"embeddings of shape {emb.shape} do not match probe width {model.width}"
        )
    loss, grads, _ = stacked_loss_and_grads(model, emb, labels, ignore)
    return loss, grads


def group_by_length(sequences):
    """Indices of ``sequences`` grouped by length, in first-seen order."""
    groups = defaultdict(list)
    for i, seq in enumerate(sequences):
        groups[seq.length].append(i)
    return list(groups.items())


def evaluate(model, sequences):
    """Loss and sub-word accuracy statistics over a collection of sequences.

    The loss is the mean of per-sequence losses; accuracy counts every
    non-ignored position across all sequences.
    """
    sequences = list(sequences)
    if not sequences:
        raise ValidationError("cannot evaluate on an empty dataset")
    C = model.num_classes
    correct = np.zeros(C, dtype=np.int64)
    total = np.zeros(C, dtype=np.int64)
    loss_sum, n_seq = 0.0, 0
    for n, idx in group_by_length(sequences):
        emb = np.stack([sequences[i].values for i in idx]).astype(np.float64)
        labels = np.stack([sequences[i].labels for i in idx])
        ignore = np.stack([sequences[i].ignore for i in idx])
        active = ~ignore
        logits = forward(model, emb)
        pred = logits.argmax(axis=-1)
        lab = labels[active]
        if lab.size and (lab.min() < 0 or lab.max() >= C):
            raise ValidationError(f"labels must lie in [0, {C})")
        hit = pred[active] == lab
        total += np.bincount(lab, minlength=C)
        correct += np.bincount(lab[hit], minlength=C)
        logp = _log_softmax(logits)
        counts = active.sum(axis=1)
        picked = np.take_along_axis(logp, np.where(active, labels, 0)[..., None], -1)[..., 0]
        per_seq = -np.where(active, picked, 0.0).sum(axis=1)
        keep = counts > 0
        loss_sum += float((per_seq[keep] / counts[keep]).sum())
        n_seq += int(keep.sum())
    positions = int(total.sum())
    if positions == 0:
        raise ValidationError("dataset has no labelled positions")
    per_class = {
        int(c): (float(correct[c] / total[c]) if total[c] else None) for c in range(C)
    }
    return {
        "loss": loss_sum / n_seq,
        "accuracy": float(correct.sum() / positions),
        "per_class_accuracy": per_class,
        "positions": positions,
    }


def predict_accuracy(model, dataset):
    """Fraction of non-ignored sub-word positions whose argmax logit is the label."""
    return evaluate(model, dataset)["accuracy"]
