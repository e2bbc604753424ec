"""Log-domain scalars and matrices.

A real number is stored as the natural log of its magnitude plus a sign
parity, so products become additions and dot products become signed
log-sum-exps. The representable dynamic range is exp(+/-(max of the backing
float)), far beyond the backing float itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NEG_INF = float("-inf")

BACKINGS = {32: np.float32, 64: np.float64}


def floor_for(bits):
    """Finite floor for a backing format: log(SNN^2), SNN the smallest normal.

    Exponentiating the floor underflows to exactly zero in that format
    (binary32: about -174.67, binary64: about -1416.79).
    """
    dtype = BACKINGS[bits]
    floor = 2.0 * math.log(float(np.finfo(dtype).tiny))
    assert float(np.exp(dtype(floor))) == 0.0
    return floor


@dataclass(frozen=True)
class ZeroPolicy:
    """Encoding of the real value zero: -inf sentinel or a finite floor."""

    mode: str = "sentinel"  # "sentinel" | "finite_floor"
    floor_value: float = NEG_INF

    def __post_init__(self):
        if self.mode not in ("sentinel", "finite_floor"):
            raise ValueError(f"unknown zero-policy mode {self.mode!r}")
        if self.mode == "finite_floor" and not math.isfinite(self.floor_value):
            raise ValueError("finite_floor policy needs a finite floor_value")

    @staticmethod
    def sentinel():
        return ZeroPolicy("sentinel", NEG_INF)

    @staticmethod
    def finite_floor(bits=64):
        return ZeroPolicy("finite_floor", floor_for(bits))

    @property
    def zero_log(self):
        return self.floor_value if self.mode == "finite_floor" else NEG_INF


SENTINEL = ZeroPolicy.sentinel()


@dataclass(frozen=True, eq=False)
class Goom:
    """A real number as (natural-log magnitude, sign parity).

    The represented value is sign * exp(log_mag). Zero is stored with
    sign +1 and log_mag equal to the zero policy's encoding.
    """

    log_mag: float
    sign: int

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        if math.isnan(self.log_mag):
            raise ValueError("log_mag must not be NaN")

    def __eq__(self, other):
        if not isinstance(other, Goom):
            return NotImplemented
        # zeros compare equal regardless of stored sign
        if self.log_mag == NEG_INF and other.log_mag == NEG_INF:
            return True
        return self.log_mag == other.log_mag and self.sign == other.sign

    def __hash__(self):
        if self.log_mag == NEG_INF:
            return hash((NEG_INF, 1))
        return hash((self.log_mag, self.sign))


def from_real(x, policy=SENTINEL):
    """Map a finite real to a Goom: (log |x|, sign x); zero per policy, sign +1."""
    x = float(x)
    if math.isnan(x):
        raise ValueError("cannot represent NaN")
    if math.isinf(x):
        raise ValueError("cannot represent an infinite value")
    if x == 0.0:
        return Goom(policy.zero_log, 1)
    return Goom(math.log(abs(x)), -1 if x < 0.0 else 1)


def to_real(g):
    """Map a Goom back: sign * exp(log_mag); overflows to signed infinity."""
    if g.log_mag == NEG_INF:
        return 0.0
    try:
        mag = math.exp(g.log_mag)
    except OverflowError:
        mag = math.inf
    return g.sign * mag


def gmul(a, b):
    """Product of two Gooms: log-magnitudes add, signs multiply."""
    if a.log_mag == NEG_INF or b.log_mag == NEG_INF:
        return Goom(NEG_INF, 1)
    return Goom(a.log_mag + b.log_mag, a.sign * b.sign)


def gadd(a, b, policy=SENTINEL):
    """Signed log-sum-exp of two Gooms; exact cancellation gives the zero Goom."""
    m = max(a.log_mag, b.log_mag)
    if m == NEG_INF:
        return Goom(policy.zero_log, 1)
    t = a.sign * math.exp(a.log_mag - m) + b.sign * math.exp(b.log_mag - m)
    if t == 0.0:
        return Goom(policy.zero_log, 1)
    return Goom(m + math.log(abs(t)), -1 if t < 0.0 else 1)


def lse_reduce(gooms, policy=SENTINEL):
    """Signed log-sum-exp over a nonempty sequence, with a single max shift."""
    gooms = list(gooms)
    if not gooms:
        raise ValueError("lse_reduce needs at least one element")
    m = max(g.log_mag for g in gooms)
    if m == NEG_INF:
        return Goom(policy.zero_log, 1)
    t = math.fsum(g.sign * math.exp(g.log_mag - m) for g in gooms)
    if t == 0.0:
        return Goom(policy.zero_log, 1)
    return Goom(m + math.log(abs(t)), -1 if t < 0.0 else 1)


class GoomMatrix:
    """Dense 2-D array of Gooms: a log-magnitude array plus a sign array.

    The backing float format is the dtype of ``log_mag`` (float32 or float64);
    signs are stored as +/-1.0 in the same dtype. Instances are treated as
    immutable; operations return new matrices.
    """

    __slots__ = ("log_mag", "sign")

    def __init__(self, log_mag, sign):
        log_mag = np.asarray(log_mag)
        sign = np.asarray(sign, dtype=log_mag.dtype)
        if log_mag.ndim != 2:
            raise ValueError("GoomMatrix is 2-D")
        if log_mag.shape != sign.shape:
            raise ValueError("log_mag and sign shapes differ")
        if log_mag.dtype not in (np.float32, np.float64):
            raise ValueError("backing dtype must be float32 or float64")
        if np.isnan(log_mag).any():
            raise ValueError("log_mag must not contain NaN")
        self.log_mag = log_mag
        self.sign = sign

    @property
    def rows(self):
        return self.log_mag.shape[0]

    @property
    def cols(self):
        return self.log_mag.shape[1]

    @property
    def shape(self):
        return self.log_mag.shape

    @property
    def dtype(self):
        return self.log_mag.dtype

    @classmethod
    def from_real(cls, values, policy=SENTINEL, dtype=np.float64):
        """Elementwise map of a real matrix into the log domain."""
        values = np.asarray(values, dtype=dtype)
        if values.ndim != 2:
            raise ValueError("expected a 2-D array")
        if np.isnan(values).any():
            raise ValueError("cannot represent NaN")
        if np.isinf(values).any():
            raise ValueError("cannot represent an infinite value")
        log_mag, sign = _log_sign_arrays(values, policy)
        return cls(log_mag, sign)

    @classmethod
    def zeros(cls, rows, cols, policy=SENTINEL, dtype=np.float64):
        log = np.full((rows, cols), policy.zero_log, dtype=dtype)
        return cls(log, np.ones((rows, cols), dtype=dtype))

    @classmethod
    def identity(cls, n, policy=SENTINEL, dtype=np.float64):
        """Log-domain identity: diagonal (0, +1), off-diagonal zero Gooms."""
        log = np.full((n, n), policy.zero_log, dtype=dtype)
        np.fill_diagonal(log, 0.0)
        return cls(log, np.ones((n, n), dtype=dtype))

    def to_real(self):
        """Exponentiate without scaling; may overflow to signed infinity."""
        with np.errstate(over="ignore"):
            return self.sign * np.exp(self.log_mag)

    def __getitem__(self, idx):
        i, j = idx
        lm = float(self.log_mag[i, j])
        if lm == NEG_INF:
            return Goom(NEG_INF, 1)
        return Goom(lm, int(self.sign[i, j]))

    def __repr__(self):
        return f"GoomMatrix({self.rows}x{self.cols}, dtype={self.log_mag.dtype})"


def _log_sign_arrays(values, policy=SENTINEL):
    """(log|v|, sign v) arrays with the zero encoding applied."""
    dtype = values.dtype
    with np.errstate(divide="ignore"):
        log_mag = np.log(np.abs(values))
    sign = np.where(values < 0, dtype.type(-1.0), dtype.type(1.0))
    zero = values == 0
    if zero.any():
        log_mag = np.where(zero, dtype.type(policy.zero_log), log_mag)
        sign = np.where(zero, dtype.type(1.0), sign)
    return log_mag.astype(dtype, copy=False), sign


def _lmme_arrays(alog, asign, blog, bsign):
    """Batched log-domain matrix product on (..., n, d) x (..., d, m) arrays.

    Rows of the left factor and columns of the right factor are shifted by
    per-row / per-column scaling constants max(max_j log, 0), the product is
    taken in the backing float format on sign*exp(shifted) values, and the
    scales are added back. The shifts keep every interim exponential <= 1.
    """
    dtype = alog.dtype
    zero = dtype.type(0.0)
    a = np.maximum(alog.max(axis=-1, keepdims=True), zero)
    b = np.maximum(blog.max(axis=-2, keepdims=True), zero)
    with np.errstate(invalid="ignore"):
        left = asign * np.exp(alog - a)
        right = bsign * np.exp(blog - b)
    interior = np.matmul(left, right)
    with np.errstate(divide="ignore"):
        out_log = np.log(np.abs(interior)) + a + b
    out_sign = np.where(interior < 0, dtype.type(-1.0), dtype.type(1.0))
    return out_log, out_sign


def _gadd_arrays(alog, asign, blog, bsign):
    """Elementwise signed log-sum-exp of two Goom arrays."""
    dtype = alog.dtype
    m = np.maximum(alog, blog)
    finite = m != NEG_INF
    shift = np.where(finite, m, dtype.type(0.0))
    with np.errstate(invalid="ignore"):
        t = asign * np.exp(alog - shift) + bsign * np.exp(blog - shift)
    with np.errstate(divide="ignore"):
        out_log = np.where(finite, shift + np.log(np.abs(t)), dtype.type(NEG_INF))
    out_sign = np.where(finite & (t < 0), dtype.type(-1.0), dtype.type(1.0))
    return out_log, out_sign


def lmme(a, b):
    """Log-domain equivalent of the real matrix product exp(a) @ exp(b)."""
    if a.cols != b.rows:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    if a.dtype != b.dtype:
        raise ValueError("operands must share a backing dtype")
    out_log, out_sign = _lmme_arrays(a.log_mag, a.sign, b.log_mag, b.sign)
    return GoomMatrix(out_log, out_sign)


def _col_log_norms(log_mag):
    """Per-column log Euclidean norms: LSE of doubled log-magnitudes, halved."""
    m = log_mag.max(axis=-2, keepdims=True)
    finite = m != NEG_INF
    shift = np.where(finite, m, log_mag.dtype.type(0.0))
    s = np.sum(np.exp(2.0 * (log_mag - shift)), axis=-2, keepdims=True)
    with np.errstate(divide="ignore"):
        out = np.where(finite, shift + 0.5 * np.log(s), log_mag.dtype.type(NEG_INF))
    return out


def log_unit_norm_columns(m):
    """Shift each column to log-unit Euclidean norm; returns (matrix, shifts).

    The shift for column j is the log of that column's Euclidean norm,
    computed entirely in the log domain so enormous magnitudes are safe.
    """
    nu = _col_log_norms(m.log_mag)
    if (nu == NEG_INF).any():
        raise ValueError("cannot normalize an all-zero column")
    out_log = m.log_mag - nu
    out_log = np.where(m.log_mag == NEG_INF, m.dtype.type(NEG_INF), out_log)
    return GoomMatrix(out_log, m.sign.copy()), nu.reshape(-1).astype(np.float64)


def to_real_scaled(m):
    """Exponentiate after shifting by the max log-magnitude; returns (array, c).

    Every output element lands in [-e^2, e^2]. For an all-zero matrix the
    scale c is defined as 0 and the output is all zeros.
    """
    c = float(m.log_mag.max()) if m.log_mag.size else 0.0
    if c == NEG_INF:
        c = 0.0
    out = m.sign * np.exp(m.log_mag - m.dtype.type(c) + m.dtype.type(2.0))
    return out, c
