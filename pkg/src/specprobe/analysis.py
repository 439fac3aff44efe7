"""Spectral profiles: extraction, overlap, averaging and export."""

import csv
import io
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

from .errors import FormatError, ValidationError


@dataclass
class SpectralProfile:
    """Sigmoid-scaled frequency weights of a trained filter at canonical length."""

    weights: np.ndarray
    label: str = ""
    language: str = ""
    lower: np.ndarray = None
    upper: np.ndarray = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 1 or self.weights.size < 1:
            raise ValidationError("profile weights must be a non-empty 1-D vector")
        if np.any(self.weights < 0) or np.any(self.weights > 1):
            raise ValidationError("profile weights must lie in [0, 1]")

    @property
    def length(self):
        return self.weights.shape[0]


@dataclass
class OverlapMatrix:
    values: np.ndarray
    labels: list = field(default_factory=list)

    def rounded(self):
        """Integer percentages, as shown in figures."""
        return np.rint(self.values).astype(int)


def extract_profile(model, label=None, language=None):
    if model.mode != "auto":
        raise ValidationError(
            f"a {model.mode_label} model has no learned spectral profile"
        )
    meta = model.metadata
    return SpectralProfile(
        model.filter.scaled(),
        label if label is not None else str(meta.get("task", "")),
        language if language is not None else str(meta.get("language", "")),
    )


def _weights(p):
    return p.weights if isinstance(p, SpectralProfile) else np.asarray(p, dtype=np.float64)


def overlap(a, b):
    """Percentage overlap, 100 * (1 - mean absolute weight difference)."""
    wa, wb = _weights(a), _weights(b)
    if wa.shape != wb.shape:
        raise ValidationError(f"profile lengths differ: {wa.shape[0]} vs {wb.shape[0]}")
    return 100.0 * (1.0 - np.abs(wa - wb).sum() / wa.shape[0])


def overlap_matrix(profiles, labels=None):
    profiles = list(profiles)
    if len(profiles) < 2:
        raise ValidationError("need at least two profiles to compare")
    p = len(profiles)
    values = np.empty((p, p))
    for i in range(p):
        values[i, i] = 100.0
        for j in range(i + 1, p):
            values[i, j] = values[j, i] = overlap(profiles[i], profiles[j])
    if labels is None:
        labels = [getattr(pr, "label", "") or str(i) for i, pr in enumerate(profiles)]
    return OverlapMatrix(values, list(labels))


def average_profile(profiles, label=None, language=None):
    """Per-frequency mean with a min/max envelope across ``profiles``."""
    profiles = list(profiles)
    if not profiles:
        raise ValidationError("cannot average an empty list of profiles")
    lengths = {_weights(p).shape for p in profiles}
    if len(lengths) != 1:
        raise ValidationError(f"profile lengths differ: {sorted(s[0] for s in lengths)}")
    stack = np.stack([_weights(p) for p in profiles])
    first = profiles[0]
    return SpectralProfile(
        stack.mean(axis=0),
        label if label is not None else getattr(first, "label", ""),
        language if language is not None else getattr(first, "language", ""),
        lower=stack.min(axis=0),
        upper=stack.max(axis=0),
    )


def _fmt(x):
    return f"{x:.9g}"


def profile_csv(profile):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if profile.lower is None:
        w.writerow(["k", "weight"])
        for k, v in enumerate(profile.weights):
            w.writerow([k, _fmt(v)])
    else:
        w.writerow(["k", "weight", "lower", "upper"])
        for k, row in enumerate(zip(profile.weights, profile.lower, profile.upper)):
            w.writerow([k, *map(_fmt, row)])
    return buf.getvalue()


def matrix_csv(matrix):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["", *matrix.labels])
    for label, row in zip(matrix.labels, matrix.values):
        w.writerow([label, *map(_fmt, row)])
    return buf.getvalue()


def profile_svg(profiles, width=640, height=320):
    """Line plot of one or more profiles (weight against frequency index)."""
    if isinstance(profiles, SpectralProfile):
        profiles = [profiles]
    pad = 40
    pw, ph = width - 2 * pad, height - 2 * pad
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]

    def pts(values):
        m = len(values)
        xs = pad + pw * np.arange(m) / max(m - 1, 1)
        ys = pad + ph * (1.0 - np.asarray(values))
        return " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="{pad}" y="{pad}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>',
        f'<text x="{pad}" y="{height - 10}" font-size="12">frequency k</text>',
        f'<text x="4" y="{pad - 8}" font-size="12">weight</text>',
    ]
    for i, p in enumerate(profiles):
        color = colors[i % len(colors)]
        if p.lower is not None:
            band = pts(p.upper) + " " + " ".join(reversed(pts(p.lower).split()))
            out.append(f'<polygon points="{band}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        out.append(f'<polyline points="{pts(p.weights)}" fill="none" stroke="{color}"/>')
        if p.label:
            out.append(
                f'<text x="{width - pad - 100}" y="{pad + 14 * (i + 1)}" font-size="12" '
                f'fill="{color}">{escape(p.label)}</text>'
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def matrix_svg(matrix, cell=48):
    p = len(matrix.labels)
    pad = 80
    size = pad + cell * p + 10
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">'
    ]
    for i, label in enumerate(matrix.labels):
        out.append(f'<text x="4" y="{pad + cell * i + cell // 2 + 4}" font-size="12">{escape(label)}</text>')
        out.append(f'<text x="{pad + cell * i + 4}" y="{pad - 8}" font-size="12">{escape(label)}</text>')
    for i in range(p):
        for j in range(p):
            v = float(matrix.values[i, j])
            shade = int(round(255 * (1 - v / 100.0)))
            out.append(
                f'<rect x="{pad + cell * j}" y="{pad + cell * i}" width="{cell}" height="{cell}" '
                f'fill="rgb({shade},{shade},255)"/>'
            )
            out.append(
                f'<text x="{pad + cell * j + cell // 2}" y="{pad + cell * i + cell // 2 + 4}" '
                f'font-size="12" text-anchor="middle">{int(round(v))}</text>'
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def export_profile(obj, path, format="csv"):
    """Write a profile or overlap matrix as ``csv`` or ``svg``."""
    if format not in ("csv", "svg"):
        raise ValidationError(f"unknown export format {format!r}")
    if isinstance(obj, OverlapMatrix):
        text = matrix_csv(obj) if format == "csv" else matrix_svg(obj)
    elif isinstance(obj, SpectralProfile) or isinstance(obj, (list, tuple)):
        if format == "csv":
            if not isinstance(obj, SpectralProfile):
                raise ValidationError("CSV export takes a single profile")
            text = profile_csv(obj)
        else:
            text = profile_svg(obj)
    else:
        raise ValidationError(f"cannot export {type(obj).__name__}")
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise FormatError(f"cannot write {format}: {exc.strerror}", path=path) from exc
    return path
