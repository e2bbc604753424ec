"""Non-diagonal linear state-space recurrence evaluated in the log domain.

The state update x_t = A x_{t-1} + B u_t runs entirely on log-magnitude and
sign arrays, so state magnitudes may compound far beyond any float format
without stabilization. States are rescaled by their running maximum before
the real-arithmetic output map y_t = C (scaled x_t) + D u_t.
"""

from dataclasses import dataclass

import numpy as np

from .core import NEG_INF, _gadd_arrays, _lmme_arrays, _log_sign_arrays
from .scan import _scan_affine_stack, _Stack


@dataclass(frozen=True)
class SsmParams:
    """Transition A (d x d), input B (d x d), output C (h x d), feedthrough D (h x d)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        a, b, c, d = (np.asarray(m, dtype=np.float64) for m in (self.A, self.B, self.C, self.D))
        n = a.shape[0]
        if a.shape != (n, n) or b.shape != (n, n):
            raise ValueError("A and B must be square with matching dimension")
        if c.shape != (2 * n, n) or d.shape != (2 * n, n):
            raise ValueError("C and D must be (2d, d) for the gated output width")
        for m in (a, b, c, d):
            if not np.isfinite(m).all():
                raise ValueError("parameters must be finite")
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "B", b)
        object.__setattr__(self, "C", c)
        object.__setattr__(self, "D", d)

    @property
    def dim(self):
        return self.A.shape[0]


@dataclass(frozen=True)
class SsmRun:
    """States in the log domain plus the rescaled outputs.

    ``state_log`` and ``state_sign`` are (T, d); ``scales`` holds the
    per-step scaling constant c (the running state's max log magnitude), so
    the scaled state at step t is sign * exp(log - c_t + 2). Every scaled
    state entry has magnitude at most e^2.
    """

    x0: np.ndarray
    u: np.ndarray
    y: np.ndarray
    scales: np.ndarray
    state_log: np.ndarray
    state_sign: np.ndarray

    def scaled_states(self):
        return self.state_sign * np.exp(self.state_log - self.scales[:, None] + 2.0)

    def __post_init__(self):
        if len(self.y) != len(self.u):
            raise ValueError("output length must match input length")


def _check_inputs(params, x0, u):
    x0 = np.asarray(x0, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    d = params.dim
    if x0.shape != (d,):
        raise ValueError("x0 dimension mismatch")
    if u.ndim != 2 or u.shape[1] != d:
        raise ValueError("u must be (T, d)")
    if len(u) < 1:
        raise ValueError("need at least one input step")
    return x0, u


def _finish(params, x0, u, state_log, state_sign):
    # rescale each state by its own maximum so exponentiation is safe,
    # then return to real arithmetic for the output map
    c = state_log.max(axis=1)
    c = np.where(c == NEG_INF, 0.0, c)
    scaled = state_sign * np.exp(state_log - c[:, None] + 2.0)
    y = scaled @ params.C.T + u @ params.D.T
    return SsmRun(
        x0=x0,
        u=u,
        y=y,
        scales=c,
        state_log=state_log,
        state_sign=state_sign,
    )


def ssm_forward_sequential(params, x0, u):
    """Reference evaluation: one log-domain state update per step."""
    x0, u = _check_inputs(params, x0, u)
    T, d = u.shape
    a_log, a_sign = _log_sign_arrays(params.A)
    b_log, b_sign = _log_sign_arrays(params.B)
    u_log, u_sign = _log_sign_arrays(u.reshape(T, d, 1))
    bu_log, bu_sign = _lmme_arrays(b_log, b_sign, u_log, u_sign)
    x_log, x_sign = _log_sign_arrays(x0.reshape(d, 1))
    state_log = np.empty((T, d))
    state_sign = np.empty((T, d))
    for t in range(T):
        ax_log, ax_sign = _lmme_arrays(a_log, a_sign, x_log, x_sign)
        x_log, x_sign = _gadd_arrays(ax_log, ax_sign, bu_log[t], bu_sign[t])
        state_log[t] = x_log[:, 0]
        state_sign[t] = x_sign[:, 0]
    return _finish(params, x0, u, state_log, state_sign)


def ssm_forward_parallel(params, x0, u, block_size=256):
    """Scan evaluation: the recurrence as an affine prefix scan.

    The initial state rides in the bias slot of a leading scan element, so
    every prefix's bias column is exactly the state x_t.
    """
    x0, u = _check_inputs(params, x0, u)
    T, d = u.shape
    a_log, a_sign = _log_sign_arrays(params.A)
    b_log, b_sign = _log_sign_arrays(params.B)
    u_log, u_sign = _log_sign_arrays(u.reshape(T, d, 1))
    bu_log, bu_sign = _lmme_arrays(b_log, b_sign, u_log, u_sign)
    alog = np.empty((T + 1, d, d))
    asign = np.ones((T + 1, d, d))
    alog[0] = NEG_INF
    alog[1:] = a_log
    asign[1:] = a_sign
    blog = np.empty((T + 1, d, 1))
    bsign = np.empty((T + 1, d, 1))
    blog[0], bsign[0] = _log_sign_arrays(x0.reshape(d, 1))
    blog[1:] = bu_log
    bsign[1:] = bu_sign
    stack = _Stack(alog, asign, blog, bsign, np.zeros(T + 1, dtype=bool))
    out = _scan_affine_stack(stack, block_size)
    state_log = out.blog[1:, :, 0]
    state_sign = out.bsign[1:, :, 0]
    return _finish(params, x0, u, state_log, state_sign)
