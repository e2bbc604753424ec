"""Lyapunov spectra and largest-exponent estimation from Jacobian chains.

The sequential estimators follow the classical per-step QR recursion. The
parallel estimators compute all deviation states at once: compound Jacobian
products are carried in the log domain (so magnitudes never overflow), with
selective orthonormalizing resets whenever states drift toward colinearity,
and the per-step QR factorizations run batched over time.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import NEG_INF, GoomMatrix, _col_log_norms, _lmme_arrays, _log_sign_arrays
from .scan import ResetPolicy, _scan_affine_stack, _selective_chain_core, _Stack
from .util import make_rng, worker_count


@dataclass(frozen=True)
class JacobianChain:
    """A sequence of step-map Jacobians along one trajectory."""

    dt: float
    mats: np.ndarray  # (T, d, d)

    def __post_init__(self):
        if self.mats.ndim != 3 or self.mats.shape[1] != self.mats.shape[2]:
            raise ValueError("mats must be a (T, d, d) array")

    @property
    def T(self):
        return self.mats.shape[0]

    @property
    def dim(self):
        return self.mats.shape[1]


@dataclass(frozen=True)
class SpectrumResult:
    lambdas: np.ndarray  # descending, units 1/time
    wall_seconds: float
    method: str  # "sequential" | "parallel"
    resets: int = 0


# ---------------------------------------------------------------------------
# QR factorization (Householder reflections)


def qr_factor(m):
    """Householder QR of a square matrix with the convention R[i,i] >= 0."""
    r = np.array(m, dtype=np.float64)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.isfinite(r).all():
        raise ValueError("non-finite entries")
    n = r.shape[0]
    q = np.eye(n)
    for j in range(n):
        x = r[j:, j]
        norm_x = np.sqrt(np.dot(x, x))
        if norm_x == 0.0:
            continue
        v = x.copy()
        v[0] += norm_x if x[0] >= 0 else -norm_x
        beta = 2.0 / np.dot(v, v)
        r[j:, j:] -= beta * np.outer(v, v @ r[j:, j:])
        q[:, j:] -= beta * np.outer(q[:, j:] @ v, v)
    flip = np.where(np.diagonal(r) < 0, -1.0, 1.0)
    r *= flip[:, None]
    q *= flip[None, :]
    return q, r


def qr_factor_batched(ms):
    """Householder QR vectorized over a stack of square matrices."""
    r = np.array(ms, dtype=np.float64)
    N, n, _ = r.shape
    q = np.broadcast_to(np.eye(n), (N, n, n)).copy()
    for j in range(n):
        x = r[:, j:, j]
        norm_x = np.sqrt(np.einsum("nk,nk->n", x, x))
        v = x.copy()
        v[:, 0] += np.where(x[:, 0] >= 0, norm_x, -norm_x)
        vv = np.einsum("nk,nk->n", v, v)
        beta = np.where(vv > 0, 2.0 / np.where(vv > 0, vv, 1.0), 0.0)
        w = np.einsum("nk,nkm->nm", v, r[:, j:, :])
        r[:, j:, :] -= beta[:, None, None] * v[:, :, None] * w[:, None, :]
        u = np.einsum("nmk,nk->nm", q[:, :, j:], v)
        q[:, :, j:] -= beta[:, None, None] * u[:, :, None] * v[:, None, :]
    diag = np.diagonal(r, axis1=1, axis2=2)
    flip = np.where(diag < 0, -1.0, 1.0)
    r *= flip[:, :, None]
    q *= flip[:, None, :]
    return q, r


# ---------------------------------------------------------------------------
# trajectory integration


def integrate_chain(system, x0=None, burn_in=0, T=1, seed=0):
    """Advance a system and record the step Jacobians along the trajectory.

    ``burn_in`` steps are discarded first (settling onto the attractor).
    The seed jitters the default initial state so independent runs explore
    different trajectories reproducibly; an explicit ``x0`` is used as given.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if x0 is None:
        rng = make_rng(seed)
        x = system.default_state + 1e-3 * rng.standard_normal(system.dim)
    else:
        x = np.asarray(x0, dtype=np.float64).copy()
    for i in range(burn_in):
        x = system.step(x)
        if not np.isfinite(x).all():
            raise ValueError(f"non-finite state at burn-in step {i}")
    mats = np.empty((T, system.dim, system.dim))
    for t in range(T):
        mats[t] = system.jacobian(x)
        x = system.step(x)
        if not np.isfinite(x).all():
            raise ValueError(f"non-finite state at step {burn_in + t}")
    return JacobianChain(dt=system.dt, mats=mats)


# ---------------------------------------------------------------------------
# colinearity detection and orthonormal resets


_TRIU_CACHE = {}


def _triu_pairs(d):
    if d not in _TRIU_CACHE:
        _TRIU_CACHE[d] = np.triu_indices(d, k=1)
    return _TRIU_CACHE[d]


def colinearity_select(m, threshold):
    """True when any pair of columns has |cosine similarity| above threshold.

    Computed in the log domain: columns are scaled to log-unit norms, then
    each pairwise dot product is a signed log-sum-exp of elementwise sums.
    A matrix with an all-zero column counts as degenerate and is selected.
    """
    if not (0.0 < threshold < 1.0):
        raise ValueError("threshold must be in (0, 1)")
    return _colinearity_raw(m.log_mag, m.sign, math.log(threshold))


def _colinearity_raw(log_mag, sign, log_threshold):
    with np.errstate(divide="ignore", invalid="ignore"):
        m = log_mag.max(axis=0)
        if (m == NEG_INF).any():
            return True  # an all-zero column is degenerate
        nu = m + 0.5 * np.log(np.sum(np.exp(2.0 * (log_mag - m)), axis=0))
        logs = log_mag - nu
        ii, jj = _triu_pairs(logs.shape[1])
        pair_logs = logs[:, ii] + logs[:, jj]  # (rows, pairs)
        pair_signs = sign[:, ii] * sign[:, jj]
        mm = pair_logs.max(axis=0)
        finite = mm != NEG_INF
        t = np.abs(np.sum(pair_signs * np.exp(pair_logs - np.where(finite, mm, 0.0)), axis=0))
        log_cos = np.where(finite, mm + np.log(t), NEG_INF)
    return bool(np.max(log_cos) > log_threshold)


def _orthonormal_q(a):
    """Orthonormal basis of a's column span: Gram-Schmidt, two passes.

    Expects columns near unit scale; a residual at rounding level means the
    column lies in the span of the previous ones as far as the float format
    can tell, which is a genuine rank deficiency.
    """
    n = a.shape[0]
    q = np.array(a, dtype=np.float64)
    floor = 64.0 * np.finfo(np.float64).eps
    for j in range(n):
        v = q[:, j]
        for _ in range(2):
            for i in range(j):
                v -= (q[:, i] @ v) * q[:, i]
        norm = np.sqrt(v @ v)
        if norm < floor:
            raise ValueError("rank-deficient state cannot be orthonormalized")
        q[:, j] = v / norm
    return q


def orthonormal_reset(m):
    """Replace a matrix with an orthonormal basis of the same column span.

    Columns are first scaled to log-unit norms so exponentiation is safe for
    any magnitude, then orthonormalized in real arithmetic.
    """
    if m.rows != m.cols:
        raise ValueError("expected a square matrix")
    out_log, out_sign = _orthonormal_reset_raw(m.log_mag, m.sign)
    return GoomMatrix(out_log.astype(m.dtype), out_sign.astype(m.dtype))


def _orthonormal_reset_raw(log_mag, sign):
    with np.errstate(divide="ignore"):
        m = log_mag.max(axis=0)
        if (m == NEG_INF).any():
            raise ValueError("cannot orthonormalize a state with an all-zero column")
        nu = m + 0.5 * np.log(np.sum(np.exp(2.0 * (log_mag - m)), axis=0))
        real = sign * np.exp(log_mag - nu)
        q = _orthonormal_q(real)
        out_log = np.log(np.abs(q))
    out_sign = np.where(q < 0, -1.0, 1.0)
    return out_log, out_sign


def _volume_deficient(log_mag, sign, floor_log):
    """True when the column-normalized state's volume has nearly vanished.

    Pairwise cosines miss the case where columns stay mutually separated yet
    sink into a common lower-dimensional subspace; the determinant of the
    normalized state catches it.
    """
    with np.errstate(divide="ignore"):
        m = log_mag.max(axis=0)
        if (m == NEG_INF).any():
            return True
        nu = m + 0.5 * np.log(np.sum(np.exp(2.0 * (log_mag - m)), axis=0))
        real = sign * np.exp(log_mag - nu)
    det_sign, logdet = np.linalg.slogdet(real)
    return bool(det_sign == 0.0 or logdet < floor_log)


def colinearity_policy(threshold=0.99, check_interval=12, volume_floor=1e-9):
    """Reset policy used by the parallel spectrum estimator.

    Fires on near-colinear column pairs or on a nearly vanished state volume
    (a degenerate state must be reset even when no single pair crosses the
    cosine threshold). Resets do not consume the firing site's Jacobian:
    every transition stays in the compound lineage, so the propagated bases
    keep the same alignment the classical per-step recursion would build.
    """
    floor_log = math.log(volume_floor)

    def select(m):
        return colinearity_select(m, threshold) or _volume_deficient(
            m.log_mag, m.sign, floor_log
        )

    def select_raw(log_mag, sign):
        # one normalization serves both tests; entries are at most 1 in
        # magnitude after scaling, so real arithmetic is safe here
        with np.errstate(divide="ignore"):
            m = log_mag.max(axis=0)
            if (m == NEG_INF).any():
                return True
            nu = m + 0.5 * np.log(np.sum(np.exp(2.0 * (log_mag - m)), axis=0))
            real = sign * np.exp(log_mag - nu)
        gram = real.T @ real
        ii, jj = _triu_pairs(gram.shape[0])
        if np.max(np.abs(gram[ii, jj])) > threshold:
            return True
        det_sign, logdet = np.linalg.slogdet(real)
        return bool(det_sign == 0.0 or logdet < floor_log)

    return ResetPolicy(
        select=select,
        reset=orthonormal_reset,
        check_interval=check_interval,
        consume_leaf=False,
        select_raw=select_raw,
        reset_raw=_orthonormal_reset_raw,
    )


# ---------------------------------------------------------------------------
# full spectrum


def _validate_s0(chain, s0):
    d = chain.dim
    if s0 is None:
        return np.eye(d)
    s0 = np.asarray(s0, dtype=np.float64)
    if s0.shape != (d, d):
        raise ValueError("S0 shape must match the chain dimension")
    norms = np.linalg.norm(s0, axis=0)
    if np.max(np.abs(norms - 1.0)) > 1e-8:
        raise ValueError("S0 must have unit-norm columns")
    return s0


def spectrum_sequential(chain, s0=None):
    """Classical estimator: per-step QR of the propagated deviation basis."""
    s0 = _validate_s0(chain, s0)
    start = time.perf_counter()
    q, _ = qr_factor(s0)
    acc = np.zeros(chain.dim)
    for t in range(chain.T):
        q, r = qr_factor(chain.mats[t] @ q)
        diag = np.abs(np.diagonal(r))
        if np.any(diag == 0.0):
            raise ValueError(f"degenerate Jacobian chain at step {t}")
        acc += np.log(diag)
    lambdas = np.sort(acc / (chain.dt * chain.T))[::-1]
    return SpectrumResult(lambdas, time.perf_counter() - start, "sequential")


def spectrum_parallel(
    chain,
    s0=None,
    colinearity_threshold=0.99,
    check_interval=12,
    block_size=256,
    workers=None,
):
    """Parallel estimator over log-domain compound states.

    Stages: (a) a selective-resetting scan produces every input deviation
    state from cumulative Jacobian products, resetting near-colinear interim
    states to orthonormal bases; (b) each state is scaled to log-unit column
    norms, exponentiated, and QR-factored for its orthonormal basis, batched
    over time; (c) each Jacobian is applied to its preceding basis; (d) the
    exponents are the per-step means of log |diag R| from batched QR.
    """
    s0 = _validate_s0(chain, s0)
    start = time.perf_counter()
    T, d = chain.T, chain.dim
    policy = colinearity_policy(colinearity_threshold, check_interval)
    # stage (a): states S_0 .. S_{T-1} from S0 and all Jacobians but the last
    alog = np.empty((T, d, d))
    asign = np.empty((T, d, d))
    alog[0], asign[0] = _log_sign_arrays(s0)
    if T > 1:
        alog[1:], asign[1:] = _log_sign_arrays(chain.mats[: T - 1])
    state_log, state_sign, sites = _selective_chain_core(alog, asign, policy, block_size)
    # stage (b): per-state orthonormal input bases, batched
    nu = _col_log_norms_stack(state_log)
    if (nu == NEG_INF).any():
        raise ValueError("a scan state lost a whole column; cannot orthonormalize")
    scaled = state_sign * np.exp(state_log - nu)
    n_workers = worker_count(workers)
    bases = _batched_qr_q(scaled, n_workers)
    # stage (c): output states J_t Q_{t-1}
    outputs = np.matmul(chain.mats, bases)
    # stage (d): exponents from the triangular factors, batched
    _, r = qr_factor_batched(outputs)
    diag = np.abs(np.diagonal(r, axis1=1, axis2=2))
    if np.any(diag == 0.0):
        raise ValueError("degenerate Jacobian chain")
    lambdas = np.sort(np.mean(np.log(diag), axis=0) / chain.dt)[::-1]
    return SpectrumResult(
        lambdas, time.perf_counter() - start, "parallel", resets=len(sites)
    )


def _col_log_norms_stack(log_stack):
    m = log_stack.max(axis=1, keepdims=True)
    finite = m != NEG_INF
    shift = np.where(finite, m, 0.0)
    s = np.sum(np.exp(2.0 * (log_stack - shift)), axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        return np.where(finite, shift + 0.5 * np.log(s), NEG_INF)


def _batched_qr_q(stack, n_workers):
    if n_workers <= 1 or len(stack) < 4 * n_workers:
        return qr_factor_batched(stack)[0]
    chunks = np.array_split(np.arange(len(stack)), n_workers)
    out = np.empty_like(stack)
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        futures = [pool.submit(lambda sl: qr_factor_batched(stack[sl])[0], sl) for sl in chunks]
        for sl, fut in zip(chunks, futures):
            out[sl] = fut.result()
    return out


# ---------------------------------------------------------------------------
# largest exponent


def lle_sequential(chain, u0):
    """Norm-growth estimator with per-step renormalization."""
    u = np.asarray(u0, dtype=np.float64).copy()
    if abs(np.linalg.norm(u) - 1.0) > 1e-10:
        raise ValueError("u0 must have unit norm")
    acc = 0.0
    for t in range(chain.T):
        s = chain.mats[t] @ u
        ns = np.linalg.norm(s)
        if ns == 0.0:
            raise ValueError(f"deviation vector vanished at step {t}")
        acc += math.log(ns)
        u = s / ns
    return acc / (chain.dt * chain.T)


def lle_parallel(chain, u0, block_size=256):
    """Largest exponent from one log-domain scan, no renormalization.

    The deviation vector rides through the scan unnormalized; the final
    compound state's squared norm is a log-sum-exp of doubled log
    magnitudes, so the estimate never touches overflowing reals.
    """
    u = np.asarray(u0, dtype=np.float64)
    if abs(np.linalg.norm(u) - 1.0) > 1e-10:
        raise ValueError("u0 must have unit norm")
    T, d = chain.T, chain.dim
    alog = np.empty((T + 1, d, d))
    asign = np.empty((T + 1, d, d))
    alog[0] = NEG_INF
    asign[0] = 1.0
    alog[1:], asign[1:] = _log_sign_arrays(chain.mats)
    blog = np.full((T + 1, d, 1), NEG_INF)
    bsign = np.ones((T + 1, d, 1))
    blog[0], bsign[0] = _log_sign_arrays(u.reshape(d, 1))
    stack = _Stack(alog, asign, blog, bsign, np.zeros(T + 1, dtype=bool))
    out = _scan_affine_stack(stack, block_size)
    final_log = out.blog[-1].ravel()
    m = final_log.max()
    if m == NEG_INF:
        raise ValueError("deviation vector vanished")
    lse = 2.0 * m + math.log(np.sum(np.exp(2.0 * (final_log - m))))
    return lse / (2.0 * chain.dt * chain.T)


# ---------------------------------------------------------------------------
# jacobian chain file format


def save_jacobian_chain(chain, path):
    """Write the ``goomjac v1`` text format."""
    with open(path, "w") as fh:
        fh.write(f"goomjac v1 d={chain.dim} T={chain.T} dt={chain.dt!r}\n")
        for t in range(chain.T):
            for row in chain.mats[t]:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_jacobian_chain(path):
    """Parse the ``goomjac v1`` format; any deviation is an error."""
    with open(path) as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ValueError("empty jacobian chain file")
    header = lines[0].split()
    if len(header) != 5 or header[0] != "goomjac" or header[1] != "v1":
        raise ValueError(f"bad header: {lines[0]!r}")
    try:
        fields = dict(item.split("=", 1) for item in header[2:])
        d = int(fields["d"])
        T = int(fields["T"])
        dt = float(fields["dt"])
    except (KeyError, ValueError) as exc:
        raise ValueError(f"bad header: {lines[0]!r}") from exc
    if d < 1 or T < 1 or not (dt > 0):
        raise ValueError("header fields out of range")
    body = lines[1:]
    if len(body) != T * d:
        raise ValueError(f"expected {T * d} matrix rows, found {len(body)}")
    mats = np.empty((T, d, d))
    for i, line in enumerate(body):
        parts = line.split()
        if len(parts) != d:
            raise ValueError(f"row {i + 2}: expected {d} values, found {len(parts)}")
        mats[i // d, i % d] = [float(p) for p in parts]
    if not np.isfinite(mats).all():
        raise ValueError("non-finite matrix entries")
    return JacobianChain(dt=dt, mats=mats)
