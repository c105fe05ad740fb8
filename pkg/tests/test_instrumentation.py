import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from powlu.instrumentation import (
    BANDS_HEADER,
    CHANNELS_HEADER,
    SATURATION_HEADER,
    InstrumentLog,
    band_of,
    channel_norms,
    export_bands,
    export_channels,
    export_saturation,
    fp8_saturation,
    load_bands,
    load_channels,
    load_saturation,
    percentile,
)


def py_percentile(values, p):
    """Plain-Python reference for the rank-interpolation rule."""
    s = sorted(values)
    r = p / 100 * (len(s) - 1)
    lo = math.floor(r)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (r - lo) * (s[hi] - s[lo])


# --- percentile -------------------------------------------------------------------


def test_percentile_examples():
    assert percentile([1, 2, 3, 4], 50) == 2.5
    assert percentile([1, 2, 3, 4], 25) == 1.75
    for p in (0, 13.7, 50, 100):
        assert percentile([7], p) == 7


def test_percentile_extremes(rng):
    v = rng.normal(size=101)
    assert percentile(v, 0) == v.min()
    assert percentile(v, 100) == v.max()


def test_percentile_errors():
    with pytest.raises(ValueError):
        percentile([], 50)
    with pytest.raises(ValueError):
        percentile([1.0], 101)


def test_percentile_matches_reference(rng):
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        vals = list(rng.standard_t(3, size=n))
        p = float(rng.uniform(0, 100))
        assert percentile(vals, p) == pytest.approx(py_percentile(vals, p), rel=1e-12, abs=1e-12)


def test_percentile_matches_numpy_linear(rng):
    v = rng.normal(size=997)
    for p in (1, 25, 75, 99):
        assert percentile(v, p) == pytest.approx(np.percentile(v, p, method="linear"), rel=1e-12)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50), st.floats(0, 100))
def test_percentile_bracketed(values, p):
    q = percentile(values, p)
    assert min(values) <= q <= max(values)


# --- bands ----------------------------------------------------------------------


def test_band_constant():
    b = band_of("t", 0, np.full((3, 4), 3.0))
    assert (b.min, b.p1, b.p25, b.p75, b.p99, b.max) == (3.0,) * 6


def test_band_hand_example():
    b = band_of("t", 0, [[1, 2], [3, 4]])
    assert (b.min, b.max) == (1.0, 4.0)
    assert b.p1 == pytest.approx(1.03, abs=1e-12)
    assert b.p25 == pytest.approx(1.75, abs=1e-12)
    assert b.p75 == pytest.approx(3.25, abs=1e-12)
    assert b.p99 == pytest.approx(3.97, abs=1e-12)


def test_band_deterministic(rng):
    t = rng.normal(size=(8, 8))
    a, b = band_of("x", 1, t), band_of("x", 2, t)
    assert a.row()[2:] == b.row()[2:]


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=80))
def test_band_is_ordered(values):
    b = band_of("t", 0, np.array(values).reshape(1, -1))
    assert b.min <= b.p1 <= b.p25 <= b.p75 <= b.p99 <= b.max


def test_band_rejects_empty():
    with pytest.raises(ValueError):
        band_of("t", 0, np.zeros((0, 3)))


# --- channels ----------------------------------------------------------------------


def test_channel_examples():
    assert channel_norms([[3, 0], [0, 4]]).sorted_norms == ((1, 4.0), (0, 3.0))
    assert channel_norms(np.zeros((3, 4))).sorted_norms == tuple((i, 0.0) for i in range(4))
    assert channel_norms([[1, 1], [1, 1]]).sorted_norms == ((0, math.sqrt(2)), (1, math.sqrt(2)))


def test_channel_rows_axis():
    assert channel_norms([[3, 4], [0, 1]], "rows").sorted_norms == ((0, 5.0), (1, 1.0))
    with pytest.raises(ValueError):
        channel_norms([[1.0]], "depth")


def test_channel_norms_are_a_permutation(rng):
    t = rng.normal(size=(16, 9))
    cm = channel_norms(t)
    assert sorted(i for i, _ in cm.sorted_norms) == list(range(9))
    norms = [n for _, n in cm.sorted_norms]
    assert all(b <= a for a, b in zip(norms, norms[1:]))
    np.testing.assert_allclose(sorted(norms, reverse=True), sorted(np.linalg.norm(t, axis=0), reverse=True), rtol=1e-14)


# --- FP8 saturation -----------------------------------------------------------------


def test_fp8_examples():
    s = fp8_saturation([[500, 100, -600]], "E4M3")
    assert s.saturated_fraction == pytest.approx(2 / 3)
    assert s.max_abs == 600.0
    assert fp8_saturation([[500, 100, -600]], "E5M2").saturated_fraction == 0.0
    assert fp8_saturation([[447.9, -447.9]], "E4M3").saturated_fraction == 0.0


def test_fp8_threshold_is_strict():
    assert fp8_saturation([[448.0]], "E4M3").saturated_fraction == 0.0
    assert fp8_saturation([[57344.0, 57345.0]], "e5m2").saturated_fraction == 0.5


def test_fp8_unknown_format():
    with pytest.raises(ValueError):
        fp8_saturation([[1.0]], "E3M4")


# --- log + CSV -------------------------------------------------------------------------


def test_record_fills_all_streams(rng):
    log = InstrumentLog()
    log.record("block0.fc2.fwd.x", 0, rng.normal(size=(4, 5)))
    assert len(log.bands) == 1 and len(log.channels) == 1
    assert sorted(s.format for s in log.saturation) == ["E4M3", "E5M2"]


def test_empty_log_header_only(tmp_path):
    for export, header in ((export_bands, BANDS_HEADER), (export_channels, CHANNELS_HEADER),
                           (export_saturation, SATURATION_HEADER)):
        path = tmp_path / f"{export.__name__}.csv"
        export([], path)
        assert path.read_text() == ",".join(header) + "\n"


def test_one_band_two_lines(tmp_path):
    path = tmp_path / "bands.csv"
    export_bands([band_of("a", 3, [[1, 2], [3, 4]])], path)
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    assert lines[0] == ",".join(BANDS_HEADER)
    assert lines[1].startswith("a,3,1.0,")


def test_reexport_byte_identical(tmp_path, rng):
    log = InstrumentLog()
    for step in (0, 10):
        for tag in ("block1.fc2.fwd.x", "block0.fc2.fwd.x"):
            log.record(tag, step, rng.normal(size=(6, 4)))
    for export, items in ((export_bands, log.bands), (export_channels, log.channels),
                          (export_saturation, log.saturation)):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        export(items, a)
        export(list(reversed(items)), b)
        assert a.read_bytes() == b.read_bytes()


def test_round_trip(tmp_path, rng):
    log = InstrumentLog()
    for step in (0, 5):
        log.record("block0.fc2.fwd.x", step, rng.normal(size=(6, 4)) * 1000)
    export_bands(log.bands, tmp_path / "b.csv")
    export_channels(log.channels, tmp_path / "c.csv")
    export_saturation(log.saturation, tmp_path / "s.csv")
    assert load_bands(tmp_path / "b.csv") == log.bands
    assert sorted(load_channels(tmp_path / "c.csv"), key=lambda c: c.step) == log.channels
    assert sorted(load_saturation(tmp_path / "s.csv"), key=lambda s: (s.step, s.format)) == log.saturation


def test_load_errors(tmp_path):
    with pytest.raises(FileNotFoundError, match="missing file"):
        load_bands(tmp_path / "nope.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n")
    with pytest.raises(ValueError):
        load_bands(bad)
