"""Prefix scans over log-domain affine pairs, with optional selective resets.

A scan element is a pair (A, B) representing the affine map x -> A x + B in
the log domain. Composition is (A2, B2) o (A1, B1) = (A2 A1, A2 B1 + B2).
A reset policy may replace an interim compound state with a fresh value
(for example an orthonormalized basis); the reset is recorded by zeroing the
transition slot and parking the new state in the bias slot.

Reset sites are value-determined: a reset fires at the first position whose
preceding prefix state satisfies the policy, under the dynamics produced by
all earlier resets. Sites therefore do not depend on block size, and the
parallel scan reproduces the sequential reference exactly.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import NEG_INF, GoomMatrix, _gadd_arrays, _lmme_arrays
from .util import worker_count


@dataclass(frozen=True)
class ScanPair:
    """One scan element: transition A, bias B, and a reset marker.

    ``reset_applied`` is true exactly when a selective reset has replaced
    this element's state; the transition slot is then all zero Gooms and the
    state lives in the bias slot.
    """

    A: GoomMatrix
    B: GoomMatrix
    reset_applied: bool = False

    def __post_init__(self):
        if self.A.rows != self.A.cols:
            raise ValueError("transition must be square")
        if self.B.rows != self.A.rows:
            raise ValueError("bias row count must match the transition")

    @property
    def state(self):
        """The compound state for product chains: B after a reset, else A."""
        return self.B if self.reset_applied else self.A


@dataclass(frozen=True)
class ResetPolicy:
    """Selective-reset rule: a predicate and a replacement map.

    ``select`` sees the compound transition accumulated since the last reset
    (with any reset value folded in as the new starting state) and decides
    whether to fire. ``reset`` produces the replacement state. Both must be
    pure. ``check_interval`` evaluates the predicate only at every k-th
    position, which bounds how often the scan must synchronize on a
    data-dependent decision.
    """

    select: callable
    reset: callable
    check_interval: int = 1
    # when a reset fires, the element at the firing site is replaced by the
    # reset value and its own leaf is dropped; with consume_leaf False the
    # site's leaf is applied on top of the reset value instead, so no
    # transition ever leaves the compound lineage
    consume_leaf: bool = True
    # optional fast paths on raw (log, sign) arrays; used by the scan's hot
    # loop so the wrapped matrix type never has to be constructed per test
    select_raw: callable = field(default=None)
    reset_raw: callable = field(default=None)

    def __post_init__(self):
        if self.check_interval < 1:
            raise ValueError("check_interval must be >= 1")

    def select_arrays(self, log, sign):
        if self.select_raw is not None:
            return bool(self.select_raw(log, sign))
        return bool(self.select(GoomMatrix(log, sign)))

    def reset_arrays(self, log, sign):
        if self.reset_raw is not None:
            return self.reset_raw(log, sign)
        value = self.reset(GoomMatrix(log, sign))
        return value.log_mag, value.sign


def combine_affine(prev, curr):
    """Affine composition of two scan elements (prev first, then curr)."""
    if curr.A.cols != prev.A.rows or curr.A.cols != prev.B.rows:
        raise ValueError("dimension mismatch between scan elements")
    a_log, a_sign = _lmme_arrays(curr.A.log_mag, curr.A.sign, prev.A.log_mag, prev.A.sign)
    t_log, t_sign = _lmme_arrays(curr.A.log_mag, curr.A.sign, prev.B.log_mag, prev.B.sign)
    b_log, b_sign = _gadd_arrays(t_log, t_sign, curr.B.log_mag, curr.B.sign)
    return ScanPair(
        GoomMatrix(a_log, a_sign),
        GoomMatrix(b_log, b_sign),
        prev.reset_applied or curr.reset_applied,
    )


class SelectiveCombiner:
    """Affine combiner extended with selective resets.

    When the predicate fires on the preceding compound state, the combine
    consumes the incoming element and yields the reset pair instead: the
    transition slot is zeroed and the reset value becomes the new starting
    state for everything downstream. Each element is reset at most once.
    """

    def __init__(self, policy):
        self.policy = policy

    def __call__(self, prev, curr):
        tested = prev.state
        if self.policy.select(tested):
            reset_value = self.policy.reset(tested)
            if reset_value.shape != tested.shape:
                raise ValueError("reset must preserve the state's shape")
            zero = GoomMatrix.zeros(prev.A.rows, prev.A.cols, dtype=prev.A.dtype)
            return ScanPair(zero, reset_value, True)
        return combine_affine(prev, curr)


def combine_selective(policy):
    """Build the selective-resetting combiner for a policy."""
    return SelectiveCombiner(policy)


# ---------------------------------------------------------------------------
# stacked representation


class _Stack:
    """Scan elements as stacked arrays for batched kernels."""

    __slots__ = ("alog", "asign", "blog", "bsign", "flags")

    def __init__(self, alog, asign, blog, bsign, flags):
        self.alog = alog
        self.asign = asign
        self.blog = blog
        self.bsign = bsign
        self.flags = flags

    @classmethod
    def from_pairs(cls, leaves):
        alog = np.stack([p.A.log_mag for p in leaves])
        asign = np.stack([p.A.sign for p in leaves])
        blog = np.stack([p.B.log_mag for p in leaves])
        bsign = np.stack([p.B.sign for p in leaves])
        flags = np.array([p.reset_applied for p in leaves], dtype=bool)
        return cls(alog, asign, blog, bsign, flags)

    def to_pairs(self):
        return [
            ScanPair(
                GoomMatrix(self.alog[i], self.asign[i]),
                GoomMatrix(self.blog[i], self.bsign[i]),
                bool(self.flags[i]),
            )
            for i in range(len(self.flags))
        ]

    def __len__(self):
        return len(self.flags)


def _combine_arrays(pAl, pAs, pBl, pBs, cAl, cAs, cBl, cBs):
    """Batched affine composition; leading axes broadcast."""
    oAl, oAs = _lmme_arrays(cAl, cAs, pAl, pAs)
    tl, ts = _lmme_arrays(cAl, cAs, pBl, pBs)
    oBl, oBs = _gadd_arrays(tl, ts, cBl, cBs)
    return oAl, oAs, oBl, oBs


def _scan_affine_stack(stack, block_size):
    """Blocked inclusive affine scan on a stack; returns new arrays.

    Within each block of ``block_size`` leaves a local inclusive scan runs
    batched across blocks; block carries are then folded left to right, one
    batched combine per block. The combine tree is fixed by the block size,
    so results are deterministic for a given block size.
    """
    T = len(stack)
    b = min(block_size, T)
    Al = stack.alog.copy()
    As = stack.asign.copy()
    Bl = stack.blog.copy()
    Bs = stack.bsign.copy()
    flags = stack.flags.copy()
    # local scans, batched across blocks
    for i in range(1, b):
        idx = np.arange(i, T, b)
        if idx.size == 0:
            break
        prev = idx - 1
        Al[idx], As[idx], Bl[idx], Bs[idx] = _combine_arrays(
            Al[prev], As[prev], Bl[prev], Bs[prev], Al[idx], As[idx], Bl[idx], Bs[idx]
        )
        flags[idx] |= flags[prev]
    # fold block carries
    for start in range(b, T, b):
        sl = slice(start, min(start + b, T))
        c = start - 1
        Al[sl], As[sl], Bl[sl], Bs[sl] = _combine_arrays(
            Al[c], As[c], Bl[c], Bs[c], Al[sl], As[sl], Bl[sl], Bs[sl]
        )
        flags[sl] |= flags[c]
    return _Stack(Al, As, Bl, Bs, flags)


# ---------------------------------------------------------------------------
# selective scans


def _tested(p, interval):
    # position p (0-based) is a tested prefix when 1-based p+1 is a multiple
    return (p + 1) % interval == 0


def _selective_sequential(leaves, policy):
    """Reference selective scan: a left fold with interval-aware testing."""
    out = [leaves[0]]
    sites = []
    T = len(leaves)
    for t in range(1, T):
        prev = out[-1]
        if _tested(t - 1, policy.check_interval):
            tested = prev.state
            if policy.select(tested):
                value = policy.reset(tested)
                zero = GoomMatrix.zeros(prev.A.rows, prev.A.cols, dtype=prev.A.dtype)
                reset_pair = ScanPair(zero, value, True)
                if policy.consume_leaf:
                    out.append(reset_pair)
                else:
                    out.append(combine_affine(reset_pair, leaves[t]))
                sites.append(t)
                continue
        out.append(combine_affine(prev, leaves[t]))
    return out, sites


def _state_arrays(stack, i):
    if stack.flags[i]:
        return stack.blog[i], stack.bsign[i]
    return stack.alog[i], stack.asign[i]


def _selective_rounds(stack, policy, block_size):
    """Selective scan as repeated affine scans with materialized resets.

    Each round scans the suffix after the last reset, then the first tested
    position whose state fires the predicate becomes the next reset site.
    Correct for arbitrary leaves; cost grows with the number of resets.
    """
    T = len(stack)
    out = _scan_affine_stack(stack, block_size)
    sites = []
    start = 0
    interval = policy.check_interval
    while True:
        fired = None
        for p in range(start, T - 1):
            if not _tested(p, interval):
                continue
            log, sign = _state_arrays(out, p)
            if policy.select(GoomMatrix(log, sign)):
                fired = p
                break
        if fired is None:
            break
        q = fired + 1
        log, sign = _state_arrays(out, fired)
        value = policy.reset(GoomMatrix(log, sign))
        sites.append(q)
        if policy.consume_leaf:
            out.alog[q] = NEG_INF
            out.asign[q] = 1.0
            out.blog[q] = value.log_mag
            out.bsign[q] = value.sign
        else:
            zeros = np.full_like(out.alog[q], NEG_INF)
            ones = np.ones_like(out.asign[q])
            oAl, oAs, oBl, oBs = _combine_arrays(
                zeros, ones, value.log_mag, value.sign,
                stack.alog[q], stack.asign[q], stack.blog[q], stack.bsign[q],
            )
            out.alog[q] = oAl
            out.asign[q] = oAs
            out.blog[q] = oBl
            out.bsign[q] = oBs
        out.flags[q:] = True
        if q == T - 1:
            break
        suffix = _Stack(
            np.concatenate([out.alog[q : q + 1], stack.alog[q + 1 :]]),
            np.concatenate([out.asign[q : q + 1], stack.asign[q + 1 :]]),
            np.concatenate([out.blog[q : q + 1], stack.blog[q + 1 :]]),
            np.concatenate([out.bsign[q : q + 1], stack.bsign[q + 1 :]]),
            out.flags[q:].copy(),
        )
        scanned = _scan_affine_stack(suffix, block_size)
        out.alog[q:] = scanned.alog
        out.asign[q:] = scanned.asign
        out.blog[q:] = scanned.blog
        out.bsign[q:] = scanned.bsign
        start = q
    return out, sites


def _local_products(alog, asign, s, skip_first):
    """Per-tile inclusive transition products, batched across tiles.

    With ``skip_first`` the first leaf of each tile is excluded, which is the
    shape needed after a reset consumed that leaf.
    """
    T = len(alog)
    Ll = alog.copy()
    Ls = asign.copy()
    if skip_first:
        # position k*s holds the identity so tile states start at k*s + 1
        n = alog.shape[-1]
        eye_log = np.full((n, n), NEG_INF, dtype=alog.dtype)
        np.fill_diagonal(eye_log, 0.0)
        Ll[::s] = eye_log
        Ls[::s] = 1.0
    for i in range(1, s):
        idx = np.arange(i, T, s)
        if idx.size == 0:
            break
        prev = idx - 1
        Ll[idx], Ls[idx] = _lmme_arrays(Ll[idx], Ls[idx], Ll[prev], Ls[prev])
    return Ll, Ls


def _selective_chain_core(alog, asign, policy, block_size):
    """Selective scan over a pure product chain, on raw transition arrays.

    Returns per-position compound state matrices (as log/sign arrays) plus
    the reset sites. With an interval above one the sweep only touches tile
    totals (one small combine and one predicate per tile) and all
    per-position states materialize afterwards in a single batched pass;
    with interval one every position is tested in a tile-by-tile walk.
    """
    if policy.check_interval > 1:
        return _selective_chain_strided(alog, asign, policy)
    return _selective_chain_walk(alog, asign, policy, block_size)


def _selective_chain_strided(alog, asign, policy):
    T = len(alog)
    s = min(policy.check_interval, T)
    ntiles = (T + s - 1) // s
    loc0l, loc0s = _local_products(alog, asign, s, skip_first=False)
    loc1l = loc1s = None  # only needed when a consuming reset fires
    d = alog.shape[-1]
    carry_l = np.empty((ntiles, d, d), dtype=alog.dtype)
    carry_s = np.empty((ntiles, d, d), dtype=asign.dtype)
    # 0: no incoming carry, 1: plain carry, 2: carry after a consuming reset
    mode = np.zeros(ntiles, dtype=np.int8)
    sites = []
    cl = cs = None
    consumed = False
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(ntiles):
            start = k * s
            end = min(start + s, T)
            p = end - 1
            if cl is None:
                mode[k] = 0
                el, es = loc0l[p], loc0s[p]
            elif consumed:
                mode[k] = 2
                carry_l[k] = cl
                carry_s[k] = cs
                if loc1l is None:
                    loc1l, loc1s = _local_products(alog, asign, s, skip_first=True)
                if p == start:
                    el, es = cl, cs
                else:
                    el, es = _lmme_arrays(loc1l[p], loc1s[p], cl, cs)
            else:
                mode[k] = 1
                carry_l[k] = cl
                carry_s[k] = cs
                el, es = _lmme_arrays(loc0l[p], loc0s[p], cl, cs)
            consumed = False
            if p % s == s - 1 and p <= T - 2 and policy.select_arrays(el, es):
                rl, rs = policy.reset_arrays(el, es)
                sites.append(p + 1)
                cl, cs = np.asarray(rl), np.asarray(rs)
                consumed = policy.consume_leaf
            else:
                cl, cs = el, es
    # materialize every position in one batched pass
    if mode[0] == 0:
        # seed the leading tile with a log-domain identity carry; its exact
        # values are overwritten below
        carry_l[0] = NEG_INF
        np.fill_diagonal(carry_l[0], 0.0)
        carry_s[0] = 1.0
    reps = np.full(ntiles, s)
    reps[-1] = T - (ntiles - 1) * s
    locl = loc0l
    locs = loc0s
    if (mode == 2).any():
        pos_mode = np.repeat(mode, reps)
        locl = np.where(pos_mode[:, None, None] == 2, loc1l, loc0l)
        locs = np.where(pos_mode[:, None, None] == 2, loc1s, loc0s)
    prev_l = np.repeat(carry_l, reps, axis=0)
    prev_s = np.repeat(carry_s, reps, axis=0)
    Vl, Vs = _lmme_arrays(locl, locs, prev_l, prev_s)
    first_end = min(s, T)
    if mode[0] == 0:
        Vl[:first_end] = loc0l[:first_end]
        Vs[:first_end] = loc0s[:first_end]
    # a consuming reset's own slot holds the reset value itself
    for k in np.flatnonzero(mode == 2):
        q = k * s
        Vl[q] = carry_l[k]
        Vs[q] = carry_s[k]
    return Vl, Vs, sites


def _selective_chain_walk(alog, asign, policy, block_size):
    T = len(alog)
    s = min(block_size, T)
    Vl = np.empty_like(alog)
    Vs = np.empty_like(asign)
    loc0l, loc0s = _local_products(alog, asign, s, skip_first=False)
    loc1l = loc1s = None  # built lazily; only needed once a reset fires
    sites = []
    carry = None  # (log, sign) of the state at the previous tile's last slot
    consumed = False  # previous tile's test fired, eating this tile's first leaf
    for start in range(0, T, s):
        end = min(start + s, T)
        sl = slice(start, end)
        if consumed:
            if loc1l is None:
                loc1l, loc1s = _local_products(alog, asign, s, skip_first=True)
            Vl[sl], Vs[sl] = _lmme_arrays(loc1l[sl], loc1s[sl], carry[0], carry[1])
            Vl[start] = carry[0]
            Vs[start] = carry[1]
            consumed = False
        elif carry is None:
            Vl[sl] = loc0l[sl]
            Vs[sl] = loc0s[sl]
        else:
            Vl[sl], Vs[sl] = _lmme_arrays(loc0l[sl], loc0s[sl], carry[0], carry[1])
        # every position is tested: walk the tile, resetting inline
        consumed = False
        boundary_fire = False
        p = start
        while p <= min(end - 1, T - 2):
            if policy.select_arrays(Vl[p], Vs[p]):
                rl, rs = policy.reset_arrays(Vl[p], Vs[p])
                q = p + 1
                sites.append(q)
                if q >= end:
                    carry = (np.asarray(rl), np.asarray(rs))
                    # consuming resets drop the next tile's first leaf
                    consumed = policy.consume_leaf
                    boundary_fire = True
                    break
                if policy.consume_leaf:
                    Vl[q] = rl
                    Vs[q] = rs
                else:
                    Vl[q], Vs[q] = _lmme_arrays(alog[q], asign[q], np.asarray(rl), np.asarray(rs))
                # rebuild the rest of the tile from the reset value
                for r in range(q + 1, end):
                    Vl[r], Vs[r] = _lmme_arrays(alog[r], asign[r], Vl[r - 1], Vs[r - 1])
                p = q
            else:
                p += 1
        if not boundary_fire:
            carry = (Vl[end - 1], Vs[end - 1])
    return Vl, Vs, sites


def _selective_tiled(stack, policy, block_size):
    """Pair-level wrapper for the product-chain fast path."""
    Vl, Vs, sites = _selective_chain_core(stack.alog, stack.asign, policy, block_size)
    T = len(stack)
    # before the first reset the state rides in A; afterwards in B
    Al = Vl.copy()
    As = Vs.copy()
    Bl = np.full_like(Vl, NEG_INF)
    Bs = np.ones_like(Vs)
    flags = np.zeros(T, dtype=bool)
    if sites:
        first = sites[0]
        flags[first:] = True
        Al[first:] = NEG_INF
        As[first:] = 1.0
        Bl[first:] = Vl[first:]
        Bs[first:] = Vs[first:]
    return _Stack(Al, As, Bl, Bs, flags), sites


def _all_zero_bias(stack):
    return not stack.flags.any() and bool(np.all(stack.blog == NEG_INF))


# ---------------------------------------------------------------------------
# public scans


def scan_sequential(leaves, combiner):
    """Inclusive prefix states of a left fold under the combiner."""
    leaves = list(leaves)
    if not leaves:
        raise ValueError("scan of an empty sequence")
    if isinstance(combiner, SelectiveCombiner):
        out, _ = _selective_sequential(leaves, combiner.policy)
        return out
    out = [leaves[0]]
    for leaf in leaves[1:]:
        out.append(combiner(out[-1], leaf))
    return out


def scan_parallel(leaves, combiner, block_size, workers=None):
    """Inclusive prefix states computed blockwise with batched kernels.

    Matches ``scan_sequential`` within floating-point reassociation error;
    with a selective combiner the reset sites are identical to the
    sequential reference.
    """
    leaves = list(leaves)
    if not leaves:
        raise ValueError("scan of an empty sequence")
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    if isinstance(combiner, SelectiveCombiner):
        out, _ = _scan_selective_stack(leaves, combiner.policy, block_size)
        return out.to_pairs()
    if combiner is combine_affine:
        stack = _Stack.from_pairs(leaves)
        return _scan_affine_stack(stack, block_size).to_pairs()
    return _scan_generic_blocked(leaves, combiner, block_size, workers)


def scan_selective(leaves, policy, block_size=None, workers=None):
    """Selective scan returning (prefix states, reset sites).

    ``block_size`` None runs the sequential reference; otherwise the blocked
    parallel implementation. Sites are leaf indices (0-based) of the elements
    whose state was replaced; both paths produce identical sites.
    """
    leaves = list(leaves)
    if not leaves:
        raise ValueError("scan of an empty sequence")
    if block_size is None:
        return _selective_sequential(leaves, policy)
    out, sites = _scan_selective_stack(leaves, policy, block_size)
    return out.to_pairs(), sites


def _scan_selective_stack(leaves, policy, block_size):
    stack = _Stack.from_pairs(leaves)
    if _all_zero_bias(stack):
        return _selective_tiled(stack, policy, block_size)
    return _selective_rounds(stack, policy, block_size)


def _scan_generic_blocked(leaves, combiner, block_size, workers):
    """Blocked scan for arbitrary pure combiners, blocks across a thread pool."""
    T = len(leaves)
    b = min(block_size, T)
    blocks = [leaves[i : i + b] for i in range(0, T, b)]

    def local_scan(block):
        acc = [block[0]]
        for leaf in block[1:]:
            acc.append(combiner(acc[-1], leaf))
        return acc

    n_workers = worker_count(workers)
    if n_workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            locals_ = list(pool.map(local_scan, blocks))
    else:
        locals_ = [local_scan(block) for block in blocks]
    out = list(locals_[0])
    for block in locals_[1:]:
        carry = out[-1]
        out.extend(combiner(carry, item) for item in block)
    return out
