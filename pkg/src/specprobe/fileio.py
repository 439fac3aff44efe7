"""Binary dataset container, JSON-lines importer and model checkpoints.

Dataset container (little-endian throughout)::

    8 bytes   magic  b"SPRB0001"
    u32 version, u32 E, u32 C, u32 task kind (0 token, 1 sequence), u64 count
    count x { u64 id, u32 N, N*E float32 row-major, N u16 labels, N u8 ignore }
    u64 length, then that many bytes of UTF-8 JSON metadata

Checkpoint::

    8 bytes   magic  b"SPRC0001"
    u32 version
    u64 length, UTF-8 JSON header (mode, band, shapes, config, report, metadata)
    float64 gamma (M values, auto mode only), W (E*C, row-major), b (C)
    u32 CRC-32 of all preceding bytes
"""

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, EmbeddingSequence, TaskKind
from .errors import FormatError, ValidationError
from .filters import FilterBand, SpectralFilter
from .probe import LinearProbe, ProbeModel
from .training import TrainConfig, TrainReport

DATASET_MAGIC = b"SPRB0001"
DATASET_VERSION = 1
CHECKPOINT_MAGIC = b"SPRC0001"
CHECKPOINT_VERSION = 1

_DS_HEADER = struct.Struct("<IIIIQ")
_SEQ_HEADER = struct.Struct("<QI")
_U64 = struct.Struct("<Q")
_U32 = struct.Struct("<I")


class CheckpointVersionError(FormatError):
    pass


def _json_bytes(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_dataset(dataset):
    if dataset.num_classes > 65536:
        raise ValidationError("u16 labels cap the class count at 65536")
    parts = [
        DATASET_MAGIC,
        _DS_HEADER.pack(
            DATASET_VERSION, dataset.width, dataset.num_classes,
            int(dataset.task_kind), len(dataset.sequences),
        ),
    ]
    for seq in dataset.sequences:
        if seq.labels.size and (seq.labels.min() < 0 or seq.labels.max() > 0xFFFF):
            raise ValidationError(f"sequence {seq.id}: labels must fit in u16")
        parts.append(_SEQ_HEADER.pack(seq.id, seq.length))
        parts.append(seq.values.astype("<f4").tobytes())
        parts.append(seq.labels.astype("<u2").tobytes())
        parts.append(seq.ignore.astype("u1").tobytes())
    meta = _json_bytes(dataset.metadata)
    parts += [_U64.pack(len(meta)), meta]
    return b"".join(parts)


def write_dataset(dataset, path):
    data = encode_dataset(dataset)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise FormatError(f"cannot write dataset: {exc.strerror}", path=path) from exc


class _Cursor:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def error(self, message, offset=None):
        return FormatError(message, self.pos if offset is None else offset, self.path)

    def take(self, size, what):
        if size > len(self.data) - self.pos:
            raise self.error(
                f"truncated {what}: need {size} bytes, {len(self.data) - self.pos} left"
            )
        chunk = self.data[self.pos : self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, st, what):
        return st.unpack(self.take(st.size, what))


def decode_dataset(data, path=None):
    cur = _Cursor(bytes(data), path)
    magic = cur.take(len(DATASET_MAGIC), "magic")
    if magic != DATASET_MAGIC:
        raise cur.error(f"bad magic {magic!r}, expected {DATASET_MAGIC!r}", 0)
    header_at = cur.pos
    version, width, num_classes, kind, count = cur.unpack(_DS_HEADER, "header")
    if version != DATASET_VERSION:
        raise cur.error(f"unsupported dataset version {version}", header_at)
    if width < 1 or num_classes < 1:
        raise cur.error(f"invalid shape E={width}, C={num_classes}", header_at)
    try:
        kind = TaskKind(kind)
    except ValueError:
        raise cur.error(f"unknown task kind {kind}", header_at) from None
    # Each sequence needs at least its header plus one row.
    min_seq = _SEQ_HEADER.size + 4 * width + 3
    if count > (len(cur.data) - cur.pos) // min_seq:
        raise cur.error(f"sequence count {count} exceeds what the file can hold", header_at)

    sequences = []
    for _ in range(count):
        seq_at = cur.pos
        seq_id, n = cur.unpack(_SEQ_HEADER, "sequence header")
        if n < 1:
            raise cur.error(f"sequence {seq_id} has length 0", seq_at)
        values_at = cur.pos
        values = np.frombuffer(cur.take(4 * n * width, "embedding values"), dtype="<f4")
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise cur.error(f"non-finite value in sequence {seq_id}", values_at + 4 * int(bad[0]))
        labels_at = cur.pos
        labels = np.frombuffer(cur.take(2 * n, "labels"), dtype="<u2").astype(np.int64)
        ignore_at = cur.pos
        flags = np.frombuffer(cur.take(n, "ignore flags"), dtype="u1")
        if flags.size and flags.max() > 1:
            i = int(np.flatnonzero(flags > 1)[0])
            raise cur.error(f"ignore flag must be 0 or 1, got {flags[i]}", ignore_at + i)
        ignore = flags.astype(bool)
        over = np.flatnonzero((labels >= num_classes) & ~ignore)
        if over.size:
            i = int(over[0])
            raise cur.error(
                f"label {labels[i]} >= class count {num_classes} in sequence {seq_id}",
                labels_at + 2 * i,
            )
        if kind is TaskKind.SEQUENCE and np.unique(labels[~ignore]).size > 1:
            raise cur.error(f"sequence-level data but sequence {seq_id} has varying labels", labels_at)
        sequences.append(
            EmbeddingSequence(values.reshape(n, width).copy(), labels, ignore.copy(), seq_id)
        )

    meta_at = cur.pos
    (meta_len,) = cur.unpack(_U64, "metadata length")
    raw = cur.take(meta_len, "metadata")
    try:
        metadata = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise cur.error(f"invalid metadata JSON: {exc}", meta_at) from None
    if not isinstance(metadata, dict):
        raise cur.error("metadata must be a JSON object", meta_at)
    if cur.pos != len(cur.data):
        raise cur.error(f"{len(cur.data) - cur.pos} unexpected trailing bytes")
    return Dataset(sequences, num_classes, width, kind, metadata)


def read_dataset(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read dataset: {exc.strerror}", path=path) from exc
    return decode_dataset(data, path)


def import_jsonl(path, num_classes, task_kind=TaskKind.TOKEN, metadata=None):
    """Build a dataset from JSON lines ``{id, values, labels, ignore}``.

    ``ignore`` is optional; labels of ignored positions may be null.
    """
    sequences = []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                values = np.asarray(rec["values"], dtype=np.float64)
                n = values.shape[0]
                ignore = np.asarray(rec.get("ignore") or [False] * n, dtype=bool)
                labels = np.array(
                    [0 if lab is None else int(lab) for lab in rec["labels"]], dtype=np.int64
                )
                seq = EmbeddingSequence(values, labels, ignore, rec.get("id", lineno - 1))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad record: {exc}") from None
            width = seq.width if width is None else width
            sequences.append(seq)
    if width is None:
        raise ValidationError(f"{path}: no records")
    return Dataset(sequences, num_classes, width, task_kind, dict(metadata or {}))


@dataclass
class Checkpoint:
    model: ProbeModel
    config: TrainConfig = None
    report: TrainReport = None


def encode_checkpoint(model, report=None, config=None):
    header = {
        "mode": model.mode,
        "band": [model.band.lo, model.band.hi] if model.band else None,
        "filter_length": model.filter.length if model.filter else None,
        "width": model.width,
        "num_classes": model.num_classes,
        "config": config.to_dict() if config else None,
        "report": report.to_dict() if report else None,
        "metadata": model.metadata,
    }
    head = _json_bytes(header)
    arrays = [model.probe.W.ravel(), model.probe.b]
    if model.filter:
        arrays.insert(0, model.filter.raw_weights)
    body = (
        CHECKPOINT_MAGIC
        + _U32.pack(CHECKPOINT_VERSION)
        + _U64.pack(len(head))
        + head
        + b"".join(np.asarray(a, dtype="<f8").tobytes() for a in arrays)
    )
    return body + _U32.pack(zlib.crc32(body))


def save_checkpoint(model, report, path, config=None):
    data = encode_checkpoint(model, report, config)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise FormatError(f"cannot write checkpoint: {exc.strerror}", path=path) from exc


def decode_checkpoint(data, path=None):
    cur = _Cursor(bytes(data), path)
    if len(cur.data) == 0:
        raise cur.error("empty checkpoint file")
    magic = cur.take(len(CHECKPOINT_MAGIC), "magic")
    if magic != CHECKPOINT_MAGIC:
        raise cur.error(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}", 0)
    (version,) = cur.unpack(_U32, "version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})",
            len(CHECKPOINT_MAGIC), path,
        )
    if len(cur.data) < cur.pos + _U32.size:
        raise cur.error("truncated checkpoint")
    body, (crc,) = cur.data[:-4], _U32.unpack(cur.data[-4:])
    if zlib.crc32(body) != crc:
        raise cur.error("checksum mismatch, checkpoint is corrupt", len(body))
    cur.data = body
    (head_len,) = cur.unpack(_U64, "header length")
    head_at = cur.pos
    try:
        header = json.loads(cur.take(head_len, "header").decode("utf-8"))
        mode = header["mode"]
        width, num_classes = int(header["width"]), int(header["num_classes"])
        m = header["filter_length"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise cur.error(f"invalid checkpoint header: {exc}", head_at) from None

    def floats(count, what):
        return np.frombuffer(cur.take(8 * count, what), dtype="<f8").astype(np.float64)

    gamma = floats(int(m), "filter weights") if m else None
    W = floats(width * num_classes, "probe weights").reshape(width, num_classes)
    b = floats(num_classes, "probe bias")
    if cur.pos != len(cur.data):
        raise cur.error("unexpected trailing bytes in checkpoint")
    try:
        band = FilterBand(*header["band"]) if header.get("band") else None
        model = ProbeModel(
            LinearProbe(W, b), mode, band,
            SpectralFilter(gamma) if gamma is not None else None,
            header.get("metadata") or {},
        )
        config = TrainConfig(**header["config"]) if header.get("config") else None
        report = TrainReport.from_dict(header["report"]) if header.get("report") else None
    except (ValidationError, TypeError) as exc:
        raise cur.error(f"inconsistent checkpoint contents: {exc}", head_at) from None
    return Checkpoint(model, config, report)


def read_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint: {exc.strerror}", path=path) from exc
    return decode_checkpoint(data, path)


def load_checkpoint(path):
    """Load just the :class:`ProbeModel` stored in a checkpoint file."""
    return read_checkpoint(path).model
