import struct

import numpy as np
import pytest

from specprobe.dataset import Dataset, EmbeddingSequence, TaskKind
from specprobe.errors import FormatError, ValidationError
from specprobe.fileio import (
    CheckpointVersionError,
    decode_checkpoint,
    decode_dataset,
    encode_checkpoint,
    encode_dataset,
    import_jsonl,
    load_checkpoint,
    read_checkpoint,
    read_dataset,
    save_checkpoint,
    write_dataset,
)
from specprobe.filters import BANDS
from specprobe.probe import ProbeModel, forward
from specprobe.analysis import extract_profile
from specprobe.training import TrainConfig, TrainReport, EpochRecord


def random_dataset(seed=0, count=3, e=5, c=4):
    rng = np.random.default_rng(seed)
    seqs = []
    for i in range(count):
        n = int(rng.integers(1, 9))
        ignore = rng.random(n) < 0.2
        seqs.append(EmbeddingSequence(rng.standard_normal((n, e)), rng.integers(0, c, n), ignore, 10 + i))
    return Dataset(seqs, c, e, TaskKind.TOKEN, {"task": "pos", "language": "en"})


def test_round_trip(tmp_path):
    ds = random_dataset()
    path = tmp_path / "d.sprb"
    write_dataset(ds, path)
    back = read_dataset(path)
    assert back.sequences == ds.sequences
    assert (back.num_classes, back.width, back.task_kind, back.metadata) == (4, 5, TaskKind.TOKEN, ds.metadata)
    assert encode_dataset(back) == path.read_bytes()


def test_layout():
    ds = Dataset([EmbeddingSequence([[1.5, -2.0]], [1], id=7)], 3, 2, TaskKind.SEQUENCE, {})
    data = encode_dataset(ds)
    assert data[:8] == b"SPRB0001"
    assert struct.unpack_from("<IIIIQ", data, 8) == (1, 2, 3, 1, 1)
    assert struct.unpack_from("<QI", data, 32) == (7, 1)
    assert struct.unpack_from("<2f", data, 44) == (1.5, -2.0)
    assert struct.unpack_from("<HB", data, 52) == (1, 0)
    assert struct.unpack_from("<Q", data, 55) == (2,)
    assert data[63:] == b"{}"


def test_bad_magic():
    data = b"XXXX0000" + encode_dataset(random_dataset())[8:]
    with pytest.raises(FormatError, match="magic") as exc:
        decode_dataset(data)
    assert exc.value.offset == 0


def test_every_prefix_is_rejected():
    data = encode_dataset(random_dataset(count=2, e=2))
    for cut in range(len(data)):
        with pytest.raises(FormatError):
            decode_dataset(data[:cut])


def test_trailing_bytes_rejected():
    with pytest.raises(FormatError, match="trailing"):
        decode_dataset(encode_dataset(random_dataset()) + b"\0")


def _patch(data, offset, fmt, value):
    data = bytearray(data)
    struct.pack_into(fmt, data, offset, value)
    return bytes(data)


def test_label_out_of_range():
    ds = Dataset([EmbeddingSequence([[0.0], [1.0]], [0, 1], id=0)], 2, 1, TaskKind.TOKEN, {})
    data = _patch(encode_dataset(ds), 52, "<H", 5)
    with pytest.raises(FormatError, match="label 5") as exc:
        decode_dataset(data)
    assert exc.value.offset == 52


def test_non_finite_value():
    ds = Dataset([EmbeddingSequence([[0.0], [1.0]], [0, 1], id=0)], 2, 1, TaskKind.TOKEN, {})
    data = _patch(encode_dataset(ds), 48, "<f", float("nan"))
    with pytest.raises(FormatError, match="non-finite") as exc:
        decode_dataset(data)
    assert exc.value.offset == 48


def test_sequence_level_labels_must_be_constant():
    with pytest.raises(ValidationError):
        Dataset([EmbeddingSequence([[0.0], [1.0]], [0, 1])], 2, 1, TaskKind.SEQUENCE)


def test_import_jsonl(tmp_path):
    path = tmp_path / "emb.jsonl"
    path.write_text(
        '{"id": 3, "values": [[1, 2], [3, 4], [5, 6]], "labels": [null, 1, 0], "ignore": [true, false, false]}\n'
        '{"id": 4, "values": [[0, 0]], "labels": [2]}\n'
    )
    ds = import_jsonl(path, 3)
    assert len(ds) == 2 and ds.width == 2
    assert ds.sequences[0].ignore.tolist() == [True, False, False]
    assert ds.sequences[1].labels.tolist() == [2]
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": 1, "values": [[1, 2]], "labels": [7]}\n')
    with pytest.raises(ValidationError):
        import_jsonl(bad, 3)


def trained_like(mode="auto", seed=0):
    rng = np.random.default_rng(seed)
    band = BANDS["low"] if mode == "fixed" else None
    model = ProbeModel.create(mode, 5, 3, rng, band=band, filter_length=16,
                              metadata={"task": "topic", "language": "de"})
    if model.filter is not None:
        model.filter.raw_weights[:] = rng.standard_normal(16)
    report = TrainReport([EpochRecord(1, 1.0, 0.9, 0.5, 1e-3)], best_epoch=1, final_epoch=1)
    return model, report


@pytest.mark.parametrize("mode", ["orig", "fixed", "auto"])
def test_checkpoint_round_trip(tmp_path, mode):
    model, report = trained_like(mode)
    path = tmp_path / "m.sprc"
    save_checkpoint(model, report, path, config=TrainConfig(seed=2771))
    ckpt = read_checkpoint(path)
    emb = np.random.default_rng(1).standard_normal((16, 5))
    assert forward(ckpt.model, emb).tobytes() == forward(model, emb).tobytes()
    assert ckpt.config == TrainConfig(seed=2771)
    assert ckpt.report.to_dict() == report.to_dict()
    assert ckpt.model.metadata == model.metadata
    assert encode_checkpoint(ckpt.model, ckpt.report, ckpt.config) == path.read_bytes()


def test_checkpoint_profile_survives(tmp_path):
    model, report = trained_like()
    path = tmp_path / "m.sprc"
    save_checkpoint(model, report, path)
    assert extract_profile(load_checkpoint(path)).weights.tobytes() == extract_profile(model).weights.tobytes()


def test_checkpoint_errors(tmp_path):
    empty = tmp_path / "empty.sprc"
    empty.write_bytes(b"")
    with pytest.raises(FormatError, match="empty"):
        load_checkpoint(empty)
    data = encode_checkpoint(*trained_like())
    with pytest.raises(CheckpointVersionError):
        decode_checkpoint(_patch(data, 8, "<I", 2))
    corrupt = bytearray(data)
    corrupt[40] ^= 0xFF
    with pytest.raises(FormatError, match="checksum"):
        decode_checkpoint(bytes(corrupt))
    for cut in range(0, len(data), 7):
        with pytest.raises(FormatError):
            decode_checkpoint(data[:cut])
