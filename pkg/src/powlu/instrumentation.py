"""Tensor diagnostics: percentile bands, channel L2 norms, FP8 range saturation.

All statistics are exact (full sort); the logs are plain lists of frozen
records that export to CSV with a fixed schema.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field

import numpy as np

FP8_MAX = {"E4M3": 448.0, "E5M2": 57344.0}

BAND_PERCENTILES = (1.0, 25.0, 75.0, 99.0)
BANDS_HEADER = ("tag", "step", "min", "p1", "p25", "p75", "p99", "max")
CHANNELS_HEADER = ("tag", "step", "rank", "channel_index", "l2_norm")
SATURATION_HEADER = ("tag", "step", "format", "saturated_fraction", "max_abs")

FWD_ROLE = "fc2.fwd.x"
BWD_ROLE = "fc1.bwd.dy"


def percentile(values, p: float) -> float:
    """Linear interpolation at rank ``(p / 100) * (n - 1)`` of the sorted values."""
    arr = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if arr.size == 0:
        raise ValueError("percentile of an empty sequence")
    if not 0.0 <= p <= 100.0:
        raise ValueError(f"p must lie in [0, 100], got {p!r}")
    return _interp_sorted(arr, p)


def _interp_sorted(arr: np.ndarray, p: float) -> float:
    rank = p / 100.0 * (arr.size - 1)
    lo = int(np.floor(rank))
    hi = min(lo + 1, arr.size - 1)
    frac = rank - lo
    a, b = float(arr[lo]), float(arr[hi])
    return a + frac * (b - a)


@dataclass(frozen=True)
class PercentileBand:
    tag: str
    step: int
    min: float
    p1: float
    p25: float
    p75: float
    p99: float
    max: float

    def row(self) -> tuple:
        return (self.tag, self.step, self.min, self.p1, self.p25, self.p75, self.p99, self.max)


@dataclass(frozen=True)
class ChannelNormMap:
    tag: str
    step: int
    sorted_norms: tuple  # ((channel_index, l2_norm), ...) descending

    def rows(self):
        for rank, (idx, norm) in enumerate(self.sorted_norms):
            yield (self.tag, self.step, rank, idx, norm)


@dataclass(frozen=True)
class SaturationStat:
    tag: str
    step: int
    format: str
    saturated_fraction: float
    max_abs: float

    def row(self) -> tuple:
        return (self.tag, self.step, self.format, self.saturated_fraction, self.max_abs)


def _nonempty(tensor) -> np.ndarray:
    arr = np.asarray(tensor, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot summarise an empty tensor")
    return arr


def band_of(tag: str, step: int, tensor) -> PercentileBand:
    arr = np.sort(_nonempty(tensor).ravel())
    p1, p25, p75, p99 = (_interp_sorted(arr, p) for p in BAND_PERCENTILES)
    return PercentileBand(tag, int(step), float(arr[0]), p1, p25, p75, p99, float(arr[-1]))


def channel_norms(tensor, channel_axis: str = "cols", tag: str = "", step: int = 0) -> ChannelNormMap:
    """Per-channel Euclidean norms, descending, ties broken by ascending index."""
    arr = _nonempty(tensor)
    if arr.ndim != 2:
        raise ValueError(f"channel_norms expects a 2-D tensor, got shape {arr.shape}")
    if channel_axis == "cols":
        norms = np.sqrt(np.sum(arr * arr, axis=0))
    elif channel_axis == "rows":
        norms = np.sqrt(np.sum(arr * arr, axis=1))
    else:
        raise ValueError(f"channel_axis must be 'rows' or 'cols', got {channel_axis!r}")
    order = sorted(range(norms.size), key=lambda i: (-norms[i], i))
    return ChannelNormMap(tag, int(step), tuple((i, float(norms[i])) for i in order))


def fp8_saturation(tensor, fmt: str = "E4M3", tag: str = "", step: int = 0) -> SaturationStat:
    """Fraction of entries whose magnitude exceeds the FP8 format's largest finite value."""
    fmt = fmt.upper()
    if fmt not in FP8_MAX:
        raise ValueError(f"unknown FP8 format {fmt!r}; expected one of {sorted(FP8_MAX)}")
    mag = np.abs(_nonempty(tensor))
    return SaturationStat(tag, int(step), fmt, float(np.count_nonzero(mag > FP8_MAX[fmt]) / mag.size), float(mag.max()))


@dataclass
class InstrumentLog:
    bands: list = field(default_factory=list)
    channels: list = field(default_factory=list)
    saturation: list = field(default_factory=list)

    def record_band(self, tag: str, step: int, tensor) -> PercentileBand:
        band = band_of(tag, step, tensor)
        self.bands.append(band)
        return band

    def record(self, tag: str, step: int, tensor, formats=("E4M3", "E5M2")):
        """Band, channel map and saturation stats of one tensor."""
        self.record_band(tag, step, tensor)
        self.channels.append(channel_norms(tensor, "cols", tag, step))
        for fmt in formats:
            self.saturation.append(fp8_saturation(tensor, fmt, tag, step))


# ---------------------------------------------------------------------------
# CSV export / import
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def export_bands(bands, path) -> None:
    _write_csv(path, BANDS_HEADER, (b.row() for b in sorted(bands, key=lambda b: (b.tag, b.step))))


def export_channels(maps, path) -> None:
    rows = (r for cm in sorted(maps, key=lambda c: (c.tag, c.step)) for r in cm.rows())
    _write_csv(path, CHANNELS_HEADER, rows)


def export_saturation(stats, path) -> None:
    ordered = sorted(stats, key=lambda s: (s.tag, s.step, s.format))
    _write_csv(path, SATURATION_HEADER, (s.row() for s in ordered))


def _read_csv(path, header):
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = tuple(next(reader, ()))
        if got != header:
            raise ValueError(f"{path}: expected header {','.join(header)}, got {','.join(got)}")
        return list(reader)


def load_bands(path) -> list:
    return [PercentileBand(r[0], int(r[1]), *map(float, r[2:])) for r in _read_csv(path, BANDS_HEADER)]


def load_channels(path) -> list:
    grouped: dict = {}
    for tag, step, rank, idx, norm in _read_csv(path, CHANNELS_HEADER):
        grouped.setdefault((tag, int(step)), []).append((int(rank), int(idx), float(norm)))
    return [
        ChannelNormMap(tag, step, tuple((i, n) for _, i, n in sorted(rows)))
        for (tag, step), rows in grouped.items()
    ]


def load_saturation(path) -> list:
    return [SaturationStat(r[0], int(r[1]), r[2], float(r[3]), float(r[4])) for r in _read_csv(path, SATURATION_HEADER)]
