# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Depth profiles, bearing load curves and the roughness parameters read off them.

A bearing load curve (BLC) is the reversed empirical quantile function of the
height values of a profile, sampled at the material ratios k/(K+1), k=1..K.
All parameter extraction works on the piecewise-linear curve through those
samples, extended linearly to the ratios 0 and 1.
"""
import struct
from dataclasses import dataclass, asdict

import numpy as np

from .exceptions import InvalidInputError, DataIOError

HTDP_MAGIC = b"HTDP"
HTDP_VERSION = 1

# window width of the equivalent straight line, as a material ratio
CORE_WINDOW = 0.4
CORE_REGION = (0.2, 0.3)
MIN_PARAM_SAMPLES = 10


@dataclass
class DepthProfile:
    heights: np.ndarray
    pixel_pitch: float = 1.0

    def __post_init__(self):
        self.heights = np.asarray(self.heights, dtype=np.float64)
        if self.heights.ndim != 2 or self.heights.size == 0:
            raise InvalidInputError("depth profile must be a non-empty 2D matrix",
                                    shape=self.heights.shape)
        if not np.all(np.isfinite(self.heights)):
            raise InvalidInputError("depth profile contains non-finite heights")

    @property
    def shape(self):
        return self.heights.shape


@dataclass
class Blc:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.size < 1:
            raise InvalidInputError("a BLC needs at least one sample")
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError("BLC contains non-finite values")

    @property
    def k(self):
        return self.values.size

    @property
    def ratios(self):
        return material_ratios(self.k)

    def is_monotone(self):
        return bool(np.all(np.diff(self.values) <= 0))

    def __add__(self, other):
        return Blc(self.values + other)

    def __mul__(self, other):
        return Blc(self.values * other)

    __rmul__ = __mul__


@dataclass(frozen=True)
class KParams:
    sk: float
    spk: float
    svk: float
    smr1: float
    smr2: float

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class VolumeParams:
    vmp: float
    vvv: float
    vmc: float
    vvc: float

    def as_dict(self):
        return asdict(self)


def material_ratios(k):
    return np.arange(1, k + 1, dtype=np.float64) / (k + 1)


def _as_values(b):
    if isinstance(b, Blc):
        return b.values
    return Blc(b).values


def _heights(profile):
    if isinstance(profile, DepthProfile):
        return profile.heights
    return DepthProfile(profile).heights


def compute_blc(profile, k):
    """Sample the reversed empirical quantile function of `profile` at k/(K+1).

    With n sorted heights s, the infimum over y of {1 - x <= #(a <= y) / n} is
    attained at the order statistic s[ceil((1 - x) n) - 1]; the index is
    computed in integer arithmetic so the selected pixel is exact.
    """
    k = int(k)
    if k < 1:
        raise InvalidInputError("BLC sample count must be positive", k=k)
    heights = _heights(profile)
    s = np.sort(heights, axis=None)
    n = s.size
    kk = np.arange(1, k + 1, dtype=np.int64)
    # ceil((K + 1 - k) * n / (K + 1)) without floating point
    m = -((-(k + 1 - kk) * n) // (k + 1))
    return Blc(s[m - 1])


def wasserstein1(b1, b2):
    v1 = _as_values(b1)
    v2 = _as_values(b2)
    if v1.shape != v2.shape:
        raise InvalidInputError("BLC sample counts differ", k1=v1.size, k2=v2.size)
    return float(np.mean(np.abs(v1 - v2)))


def extended_curve(b):
    """Knots (ratio, height) of the BLC extended linearly to ratios 0 and 1."""
    values = _as_values(b)
    k = values.size
    xs = np.concatenate(([0.0], material_ratios(k), [1.0]))
    if k == 1:
        ys = np.repeat(values, 3)
    else:
        # 0 and 1 are one grid step beyond the first and last sample
        head = values[0] + (values[0] - values[1])
        tail = values[-1] - (values[-2] - values[-1])
        ys = np.concatenate(([head], values, [tail]))
    return xs, ys


def _height_at(xs, ys, ratio):
    return float(np.interp(ratio, xs, ys))


def _integrate(xs, ys, lo, hi):
    """Trapezoid integral of the piecewise-linear curve over [lo, hi]."""
    if hi <= lo:
        return 0.0
    inner = (xs > lo) & (xs < hi)
    px = np.concatenate(([lo], xs[inner], [hi]))
    py = np.concatenate(([np.interp(lo, xs, ys)], ys[inner], [np.interp(hi, xs, ys)]))
    return float(np.sum((py[1:] + py[:-1]) * np.diff(px)) / 2.0)


def blc_area_quartiles(b):
    values = _as_values(b)
    if values.size < 2:
        raise InvalidInputError("area quartiles need at least two samples", k=values.size)
    xs, ys = extended_curve(values)
    return tuple(_height_at(xs, ys, p) for p in (0.25, 0.5, 0.75))


def _check_param_input(values):
    if values.size < MIN_PARAM_SAMPLES:
        raise InvalidInputError("roughness parameters need more BLC samples",
                                k=values.size, minimum=MIN_PARAM_SAMPLES)
    if np.any(np.diff(values) > 0):
        raise InvalidInputError("BLC must be non-increasing")


def _core_line(xs, ys, k, sk_search):
    """Equivalent straight line through the flattest 40% secant.

    Returns the line heights at ratio 0 and 1.
    """
    starts = np.arange(0, k + 2, dtype=np.float64) / (k + 1)
    if sk_search == "core":
        lo, hi = CORE_REGION
    elif sk_search == "full":
        lo, hi = 0.0, 1.0 - CORE_WINDOW
    else:
        raise InvalidInputError(f"unknown Sk search mode '{sk_search}'")
    starts = starts[(starts >= lo - 1e-12) & (starts <= hi + 1e-12)]
    if starts.size == 0:
        starts = np.array([lo])
    y0 = np.interp(starts, xs, ys)
    y1 = np.interp(starts + CORE_WINDOW, xs, ys)
    slopes = (y1 - y0) / CORE_WINDOW
    mags = np.abs(slopes)
    # smallest start among (numerically) equal minima
    tol = 1e-12 * max(1.0, float(np.max(np.abs(ys))))
    best = int(np.flatnonzero(mags <= mags.min() + tol)[0])
    slope = slopes[best]
    top = y0[best] - slope * starts[best]
    return top, top + slope


def _first_crossing_below(xs, ys, level):
    """Smallest ratio where the curve falls to `level`."""
    if ys[0] <= level:
        return 0.0
    below = np.flatnonzero(ys <= level)
    if below.size == 0:
        return 1.0
    j = below[0]
    x0, x1, y0, y1 = xs[j - 1], xs[j], ys[j - 1], ys[j]
    return float(x0 + (y0 - level) / (y0 - y1) * (x1 - x0))


def _last_crossing_above(xs, ys, level):
    """Largest ratio where the curve is still at or above `level`."""
    if ys[-1] >= level:
        return 1.0
    above = np.flatnonzero(ys >= level)
    if above.size == 0:
        return 0.0
    j = above[-1]
    x0, x1, y0, y1 = xs[j], xs[j + 1], ys[j], ys[j + 1]
    return float(x0 + (y0 - level) / (y0 - y1) * (x1 - x0))


def extract_k_params(b, sk_search="full"):
    values = _as_values(b)
    _check_param_input(values)
    xs, ys = extended_curve(values)
    top, bottom = _core_line(xs, ys, values.size, sk_search)
    sk = max(top - bottom, 0.0)

    smr1 = _first_crossing_below(xs, ys, top)
    smr2 = _last_crossing_above(xs, ys, bottom)
    smr2 = max(smr2, smr1)

    spk = 0.0
    if smr1 > 0:
        a1 = _integrate(xs, ys - top, 0.0, smr1)
        spk = max(2.0 * a1 / smr1, 0.0)
    svk = 0.0
    if smr2 < 1:
        a2 = _integrate(xs, bottom - ys, smr2, 1.0)
        svk = max(2.0 * a2 / (1.0 - smr2), 0.0)
    return KParams(sk=float(sk), spk=float(spk), svk=float(svk),
                   smr1=float(smr1), smr2=float(smr2))


def _material_volume(xs, ys, p):
    level = _height_at(xs, ys, p)
    return _integrate(xs, ys - level, 0.0, p)


def _void_volume(xs, ys, p):
    level = _height_at(xs, ys, p)
    return _integrate(xs, level - ys, p, 1.0)


def extract_volume_params(b, peak_ratio=0.10, valley_ratio=0.80):
    """Vmp, Vvv, Vmc, Vvc per unit area.

    Heights in µm give volumes numerically equal to ml/m².
    """
    values = _as_values(b)
    if values.size < MIN_PARAM_SAMPLES:
        raise InvalidInputError("volume parameters need more BLC samples",
                                k=values.size, minimum=MIN_PARAM_SAMPLES)
    xs, ys = extended_curve(values)
    vm_p = _material_volume(xs, ys, peak_ratio)
    vm_v = _material_volume(xs, ys, valley_ratio)
    vv_p = _void_volume(xs, ys, peak_ratio)
    vv_v = _void_volume(xs, ys, valley_ratio)
    return VolumeParams(vmp=max(vm_p, 0.0), vvv=max(vv_v, 0.0),
                        vmc=max(vm_v - vm_p, 0.0), vvc=max(vv_p - vv_v, 0.0))


def extract_all(b, sk_search="full"):
    """Every functional and volume parameter of one BLC as a flat dict."""
    params = extract_k_params(b, sk_search=sk_search).as_dict()
    params.update(extract_volume_params(b).as_dict())
    return params


# file formats

def write_htdp(path, heights):
    heights = np.asarray(heights, dtype="<f4")
    if heights.ndim != 2:
        raise InvalidInputError("HTDP stores 2D matrices", shape=heights.shape)
    rows, cols = heights.shape
    try:
        with open(path, "wb") as f:
            f.write(HTDP_MAGIC)
            f.write(struct.pack("<III", HTDP_VERSION, rows, cols))
            f.write(np.ascontiguousarray(heights).tobytes())
    except OSError as err:
        raise DataIOError(f"cannot write {path}: {err}")


def read_htdp(path, pixel_pitch=1.0):
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as err:
        raise DataIOError(f"cannot read {path}: {err}")
    if len(data) < 16 or data[:4] != HTDP_MAGIC:
        raise DataIOError(f"{path} is not an HTDP file")
    version, rows, cols = struct.unpack("<III", data[4:16])
    if version != HTDP_VERSION:
        raise DataIOError(f"unsupported HTDP version {version}", path=path)
    expected = 16 + 4 * rows * cols
    if len(data) != expected:
        raise DataIOError(f"{path} is truncated", expected=expected, size=len(data))
    heights = np.frombuffer(data, dtype="<f4", offset=16).reshape(rows, cols)
    return DepthProfile(heights.astype(np.float64), pixel_pitch=pixel_pitch)


def write_blc(path, b):
    values = _as_values(b)
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.writelines(f"{float(v)!r}\n" for v in values)
    except OSError as err:
        raise DataIOError(f"cannot write {path}: {err}")


def read_blc(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = [line.strip() for line in f if line.strip()]
    except OSError as err:
        raise DataIOError(f"cannot read {path}: {err}")
    try:
        return Blc([float(line) for line in lines])
    except ValueError as err:
        raise DataIOError(f"{path} is not a BLC file: {err}")
