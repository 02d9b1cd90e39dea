"""Message-passing kernels for flooding BP over row/column ranges of the coupled graph."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .code import CoupledCode, Graph

LLR_MAX = 50.0

SUM_PRODUCT = 0
NORMALIZED_MIN_SUM = 1
OFFSET_MIN_SUM = 2

CHECK_RULES = {"sum-product": SUM_PRODUCT, "normalized-min-sum": NORMALIZED_MIN_SUM,
               "offset-min-sum": OFFSET_MIN_SUM}


@njit(cache=True)
def phi(x):
    """-log(tanh(x/2)) for x >= 0; an involution, with phi(0) = inf and phi(inf) = 0."""
    if x <= 0.0:
        return math.inf
    if x < 1.0:
        return -math.log(math.tanh(0.5 * x))
    return 2.0 * math.atanh(math.exp(-x))


@njit(cache=True)
def _clip(x):
    if x > LLR_MAX:
        return LLR_MAX
    if x < -LLR_MAX:
        return -LLR_MAX
    return x


@njit(cache=True)
def _check_node(x, out, rule, param, mags, suffix):
    d = x.shape[0]
    neg = 0
    for i in range(d):
        if x[i] < 0.0:
            neg += 1
    if rule == SUM_PRODUCT:
        for i in range(d):
            mags[i] = phi(abs(x[i]))
        suffix[d] = 0.0
        for i in range(d - 1, -1, -1):
            suffix[i] = suffix[i + 1] + mags[i]
        prefix = 0.0
        for i in range(d):
            m = phi(prefix + suffix[i + 1])
            if m > LLR_MAX:
                m = LLR_MAX
            s = neg - (1 if x[i] < 0.0 else 0)
            out[i] = -m if s % 2 else m
            prefix += mags[i]
    else:
        min1 = math.inf
        min2 = math.inf
        arg = -1
        for i in range(d):
            a = abs(x[i])
            if a < min1:
                min2 = min1
                min1 = a
                arg = i
            elif a < min2:
                min2 = a
        for i in range(d):
            m = min2 if i == arg else min1
            if rule == NORMALIZED_MIN_SUM:
                m = param * m
            else:
                m = max(m - param, 0.0)
            if m > LLR_MAX:
                m = LLR_MAX
            s = neg - (1 if x[i] < 0.0 else 0)
            out[i] = -m if s % 2 else m


@njit(cache=True)
def check_node(x, out, rule=SUM_PRODUCT, param=0.0):
    """Extrinsic check-node outputs for incoming messages ``x``.

    Sum-product works on phi-magnitudes with prefix/suffix sums so that no
    "total minus own" subtraction is needed.
    """
    d = x.shape[0]
    _check_node(x, out, rule, param, np.empty(d), np.empty(d + 1))


@njit(cache=True)
def variable_node(ch, incoming, out):
    """Write extrinsic variable-to-check messages into ``out``; return the clipped APP LLR."""
    total = ch
    for i in range(incoming.shape[0]):
        total += incoming[i]
    for i in range(incoming.shape[0]):
        out[i] = _clip(total - incoming[i])
    return _clip(total)


@njit(cache=True)
def cn_sweep(row_ptr, v2c, c2v, r0, r1, rule, param):
    dmax = 0
    for r in range(r0, r1):
        dmax = max(dmax, row_ptr[r + 1] - row_ptr[r])
    mags = np.empty(dmax)
    suffix = np.empty(dmax + 1)
    for r in range(r0, r1):
        lo = row_ptr[r]
        hi = row_ptr[r + 1]
        _check_node(v2c[lo:hi], c2v[lo:hi], rule, param, mags, suffix)


@njit(cache=True)
def vn_sweep(col_ptr, col_edges, ch, c2v, v2c, app, v0, v1):
    dmax = 0
    for v in range(v0, v1):
        dmax = max(dmax, col_ptr[v + 1] - col_ptr[v])
    buf = np.empty(dmax)
    res = np.empty(dmax)
    for v in range(v0, v1):
        lo = col_ptr[v]
        d = col_ptr[v + 1] - lo
        for k in range(d):
            buf[k] = c2v[col_edges[lo + k]]
        app[v] = variable_node(ch[v], buf[:d], res[:d])
        for k in range(d):
            v2c[col_edges[lo + k]] = res[k]


@njit(cache=True)
def _unsatisfied(row_ptr, edge_var, app, r0, r1):
    bad = 0
    for r in range(r0, r1):
        parity = 0
        for e in range(row_ptr[r], row_ptr[r + 1]):
            if app[edge_var[e]] < 0.0:
                parity ^= 1
        bad += parity
    return bad


class UninitializedRegion(RuntimeError):
    pass


@dataclass(eq=False)
class MessageStore:
    """Per-edge messages and per-variable APP LLRs for one decode in flight."""

    graph: Graph
    ch: np.ndarray
    v2c: np.ndarray
    c2v: np.ndarray
    app: np.ndarray
    activated: np.ndarray  # per-variable flag: touched by at least one VN sweep
    rule: int = SUM_PRODUCT
    param: float = 0.0
    cn_sweeps: int = 0

    @classmethod
    def init(cls, code: CoupledCode, llr, rule="sum-product", param=None) -> "MessageStore":
        g = code.graph
        ch = np.clip(np.asarray(llr, dtype=np.float64), -LLR_MAX, LLR_MAX)
        if ch.shape != (g.n_vars,):
            raise ValueError(f"expected {g.n_vars} channel LLRs, got {ch.shape}")
        rule_id = CHECK_RULES[rule] if isinstance(rule, str) else int(rule)
        if param is None:
            param = {SUM_PRODUCT: 0.0, NORMALIZED_MIN_SUM: 0.75, OFFSET_MIN_SUM: 0.5}[rule_id]
        return cls(g, ch, ch[g.edge_var].copy(), np.zeros(g.n_edges), ch.copy(),
                   np.zeros(g.n_vars, dtype=bool), rule_id, float(param))

    def cn_update(self, r0: int, r1: int) -> None:
        """Check-node sweep over global check rows ``[r0, r1)``."""
        cn_sweep(self.graph.row_ptr, self.v2c, self.c2v, r0, r1, self.rule, self.param)
        self.cn_sweeps += 1

    def vn_update(self, v0: int, v1: int) -> None:
        """Variable-node sweep over global variables ``[v0, v1)``."""
        g = self.graph
        vn_sweep(g.col_ptr, g.col_edges, self.ch, self.c2v, self.v2c, self.app, v0, v1)
        self.activated[v0:v1] = True

    def flood(self, iterations: int = 1) -> None:
        for _ in range(iterations):
            self.cn_update(0, self.graph.n_checks)
            self.vn_update(0, self.graph.n_vars)

    def unsatisfied(self, r0: int, r1: int) -> int:
        """Number of unsatisfied checks among rows ``[r0, r1)`` under current hard decisions."""
        g = self.graph
        v = g.edge_var[g.row_ptr[r0]:g.row_ptr[r1]]
        if len(v) and not self.activated[v].all():
            raise UninitializedRegion(f"check rows {r0}..{r1} touch variables never activated")
        return int(_unsatisfied(g.row_ptr, g.edge_var, self.app, r0, r1))


def soft_ber(llrs) -> float:
    """Expected bit-error rate (1/K) * sum 1/(1 + exp|L_k|) of a set of LLRs."""
    a = np.abs(np.asarray(llrs, dtype=np.float64)).ravel()
    if a.size == 0:
        raise ValueError("soft_ber needs at least one LLR")
    e = np.exp(-a)
    return float(np.mean(e / (1.0 + e)))


def hard_decision(app) -> np.ndarray:
    """Bit 1 iff the LLR is negative; ties decide 0."""
    return (np.asarray(app) < 0).astype(np.uint8)


def syndrome_ok(code: CoupledCode, bits, positions=None, activated=None) -> np.ndarray:
    """Per check block row, whether every check in it is satisfied by ``bits``.

    ``positions`` are 1-based block rows (default: all ``L + mu``). When an
    ``activated`` mask is given, rows touching inactive variables raise.
    """
    g = code.graph
    bits = np.asarray(bits)
    m = code.m
    if positions is None:
        positions = range(1, code.L + code.mu + 1)
    out = []
    for t in positions:
        if not 1 <= t <= code.L + code.mu:
            raise ValueError(f"block row {t} outside 1..{code.L + code.mu}")
        lo, hi = g.row_ptr[(t - 1) * m], g.row_ptr[t * m]
        idx = g.edge_var[lo:hi]
        b = bits[idx]
        if activated is not None and not np.all(activated[idx]):
            raise UninitializedRegion(f"block row {t} touches variables that were never activated")
        parity = np.add.reduceat(b.astype(np.int64), g.row_ptr[(t - 1) * m:t * m] - lo) % 2
        out.append(not parity.any())
    return np.array(out, dtype=bool)
