import csv
import io
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from specprobe.analysis import (
    SpectralProfile,
    average_profile,
    export_profile,
    extract_profile,
    matrix_csv,
    overlap,
    overlap_matrix,
    profile_csv,
    profile_svg,
)
from specprobe.errors import ValidationError
from specprobe.filters import get_band
from specprobe.probe import ProbeModel

unit = st.floats(0.0, 1.0, allow_nan=False)
vec = arrays(np.float64, 16, elements=unit)


def test_hand_computed_overlap():
    assert overlap([1, 0.5, 0], [1, 0, 0]) == pytest.approx(83.3333, abs=1e-3)


def test_self_overlap_and_disjoint():
    w = np.random.default_rng(0).random(512)
    assert overlap(w, w) == 100.0
    assert overlap(np.ones(8), np.zeros(8)) == 0.0


@settings(max_examples=200)
@given(vec, vec)
def test_symmetric_and_bounded(a, b):
    o = overlap(a, b)
    assert o == overlap(b, a)
    assert 0.0 <= o <= 100.0


@settings(max_examples=200)
@given(vec, vec, vec)
def test_distance_triangle(a, b, c):
    d = lambda x, y: 100.0 - overlap(x, y)  # noqa: E731
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-9


def test_overlap_length_mismatch():
    with pytest.raises(ValidationError, match="lengths differ"):
        overlap(np.zeros(4), np.zeros(5))


def test_matrix_diagonal_and_labels():
    rng = np.random.default_rng(1)
    profs = [SpectralProfile(rng.random(32), label=f"t{i}") for i in range(4)]
    m = overlap_matrix(profs)
    np.testing.assert_array_equal(np.diag(m.values), 100.0)
    np.testing.assert_array_equal(m.values, m.values.T)
    assert m.labels == ["t0", "t1", "t2", "t3"]
    assert m.rounded().dtype.kind == "i"


def test_average_envelope():
    rng = np.random.default_rng(2)
    ws = rng.random((5, 64))
    avg = average_profile([SpectralProfile(w) for w in ws])
    np.testing.assert_allclose(avg.weights, ws.mean(0))
    assert np.all(avg.lower <= avg.weights) and np.all(avg.weights <= avg.upper)
    np.testing.assert_array_equal(avg.lower, ws.min(0))


def test_profile_rejects_out_of_range():
    with pytest.raises(ValidationError):
        SpectralProfile(np.array([0.5, 1.5]))


def test_extract_requires_auto():
    rng = np.random.default_rng(0)
    fixed = ProbeModel.create("fixed", 4, 2, rng, band=get_band("low"))
    with pytest.raises(ValidationError, match="no learned"):
        extract_profile(fixed)
    auto = ProbeModel.create("auto", 4, 2, rng, metadata={"task": "pos"})
    prof = extract_profile(auto)
    assert prof.length == 512 and prof.label == "pos"
    np.testing.assert_array_equal(prof.weights, 0.5)


def test_profile_csv_rows():
    w = np.linspace(0, 1, 512)
    rows = list(csv.reader(io.StringIO(profile_csv(SpectralProfile(w)))))
    assert rows[0] == ["k", "weight"]
    assert len(rows) == 513
    np.testing.assert_allclose([float(r[1]) for r in rows[1:]], w, rtol=1e-8)
    assert [int(r[0]) for r in rows[1:]] == list(range(512))


def test_matrix_csv_layout():
    m = overlap_matrix([SpectralProfile([1, 0.5, 0]), SpectralProfile([1, 0, 0])], ["a", "b"])
    rows = list(csv.reader(io.StringIO(matrix_csv(m))))
    assert rows[0] == ["", "a", "b"]
    assert rows[1][0] == "a" and float(rows[1][2]) == pytest.approx(83.3333, abs=1e-3)


@pytest.mark.parametrize("which", ["profile", "matrix"])
def test_svg_is_self_contained(tmp_path, which):
    rng = np.random.default_rng(3)
    profs = [SpectralProfile(rng.random(16), label=l) for l in ("x<y", "b")]
    obj = overlap_matrix(profs) if which == "matrix" else average_profile(profs)
    path = export_profile(obj if which == "matrix" else [obj], tmp_path / "f.svg", "svg")
    text = path.read_text()
    root = ET.fromstring(text)
    assert root.tag.endswith("svg")
    assert "href" not in text and "<script" not in text


def test_export_csv_requires_single_profile(tmp_path):
    with pytest.raises(ValidationError):
        export_profile([SpectralProfile([0.5])], tmp_path / "x.csv", "csv")
    with pytest.raises(ValidationError):
        export_profile(SpectralProfile([0.5]), tmp_path / "x.png", "png")


def test_svg_has_one_line_per_profile():
    profs = [SpectralProfile(np.full(8, v)) for v in (0.1, 0.9)]
    root = ET.fromstring(profile_svg(profs))
    assert len(root.findall("{http://www.w3.org/2000/svg}polyline")) == 2
