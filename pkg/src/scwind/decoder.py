"""Windowed BP decoding of terminated SC-LDPC codes with adaptive window shifts.

Window geometry
---------------
The outer traversal index ``p_win`` runs over ``1 .. N_win`` with
``N_win = L + w + mu - 1``. Window ``p_win`` activates check block rows
``p_win - w + 1 .. p_win`` and variable blocks ``a .. a + w + mu - 1`` where
``a = p_win - w - mu + 1`` is its leftmost block. Blocks outside ``1..L`` are
virtual (known, +LLR_MAX); they are never stored because a saturated message
contributes exactly zero in the phi domain. When ``w >= L`` the window covers
the whole chain and decoding collapses to a single window of flooding BP.

Schemes
-------
``fixed``  a constant number of iterations per window.
``aid``    adaptive iterations: stop after ``i_min`` once no stall is detected.
``wsd``    window shift: on a detected stall at ``i_min`` move back ``n_b`` blocks.
``wtd``    wave tracking: back ``n_b`` on a stall, then forward as the wave clears.

A position is committed (its output frozen) once no later backward shift can
reach it: immediately when it leaves the window for ``fixed``/``aid``, and
``n_b`` blocks later for ``wsd``/``wtd``. A backward shift may only be issued
from a window at a leftmost block beyond the origin of the previous backward
shift, which bounds the traversal even when a stall never clears.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bp import MessageStore, hard_decision, soft_ber
from .channel import LlrFrame
from .code import CoupledCode

SCHEMES = ("fixed", "aid", "wsd", "wtd")


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class DecoderConfig:
    w: int = 9
    i_min: int = 3
    i_max: int | None = None  # default 2 * i_min
    n_b: int = 2
    detector: str = "llr"
    delta_ber: float = 1e-7
    detect_position: int = 3
    eta: int = 1
    delta: float = 0.01
    rule: str = "sum-product"
    rule_param: float | None = None

    def __post_init__(self):
        if self.i_max is None:
            object.__setattr__(self, "i_max", 2 * self.i_min)
        if not 1 <= self.i_min <= self.i_max:
            raise ValueError(f"need 1 <= i_min <= i_max, got {self.i_min}, {self.i_max}")
        if self.w < 1:
            raise ValueError("window size must be >= 1")
        if not 1 <= self.n_b < max(self.w, 2):
            raise ValueError(f"need 1 <= n_b < w, got n_b={self.n_b}, w={self.w}")
        if self.detector not in ("llr", "parity"):
            raise ValueError(f"unknown detector {self.detector!r}")
        if self.detect_position < 1:
            raise ValueError("detect_position must be >= 1")
        if self.eta < 1 or not 0 <= self.delta < 1:
            raise ValueError("need eta >= 1 and 0 <= delta < 1")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ComplexityLedger:
    entries: list[tuple[int, int]] = field(default_factory=list)

    def add(self, iterations: int, w: int) -> None:
        self.entries.append((int(iterations), int(w)))

    @property
    def n_windows(self) -> int:
        return len(self.entries)

    @property
    def total_iterations(self) -> int:
        return sum(i for i, _ in self.entries)

    def average(self) -> float:
        return average_complexity(self)


def average_complexity(ledger: ComplexityLedger) -> float:
    """Mean of ``I_i * w_i`` over the visited windows."""
    if not ledger.entries:
        raise ValueError("empty complexity ledger")
    return sum(i * w for i, w in ledger.entries) / len(ledger.entries)


@dataclass
class StallRecord:
    s: int | None
    per_position_errors: np.ndarray
    recovered: bool = False


@dataclass
class WindowState:
    p_win: int
    store: MessageStore
    committed_upto: int = 0
    ledger: ComplexityLedger = field(default_factory=ComplexityLedger)


@dataclass
class DecodeResult:
    bits: np.ndarray
    app: np.ndarray  # APP LLRs snapshotted when each position was committed
    final_app: np.ndarray
    ledger: ComplexityLedger
    stall: StallRecord
    cn_sweeps: int
    detector_fired: int
    trace: list[dict] = field(default_factory=list)

    @property
    def bit_errors(self) -> int:
        return int(self.stall.per_position_errors.sum())

    @property
    def stalled(self) -> bool:
        return self.stall.s is not None

    def trace_jsonl(self) -> str:
        return "".join(json.dumps(t) + "\n" for t in self.trace)


class _Geometry:
    def __init__(self, code: CoupledCode, w: int):
        self.code = code
        self.w = w
        self.mu = code.mu
        self.L = code.L
        self.span = w + code.mu
        self.whole_chain = w >= code.L
        self.n_win = 1 if self.whole_chain else code.L + w + code.mu - 1

    def leftmost(self, p: int) -> int:
        return 1 if self.whole_chain else p - self.span + 1

    def p_for_leftmost(self, a: int) -> int:
        return a + self.span - 1

    def check_range(self, p: int) -> tuple[int, int]:
        if self.whole_chain:
            lo, hi = 1, self.L + self.mu
        else:
            lo, hi = max(1, p - self.w + 1), min(self.L + self.mu, p)
        return (lo - 1) * self.code.m, hi * self.code.m

    def var_range(self, p: int) -> tuple[int, int]:
        if self.whole_chain:
            lo, hi = 1, self.L
        else:
            a = self.leftmost(p)
            lo, hi = max(1, a), min(self.L, a + self.span - 1)
        return (lo - 1) * self.code.n, hi * self.code.n

    def inspected_position(self, p: int, detect_position: int) -> int | None:
        """Block inspected by the stall detector, or None if it is virtual."""
        a = self.leftmost(p)
        pos = a + detect_position - 1
        if pos < 1:
            return None
        last = self.L if self.whole_chain else min(self.L, a + self.span - 1)
        return min(pos, last)


def detect_stall(state: WindowState, config: DecoderConfig, code: CoupledCode) -> bool:
    """Retrospective stall test on the inspected position of the current window."""
    geo = _Geometry(code, config.w)
    pos = geo.inspected_position(state.p_win, config.detect_position)
    if pos is None:
        return False
    if config.detector == "parity":
        m = code.m
        return state.store.unsatisfied((pos - 1) * m, pos * m) > 0
    n = code.n
    return soft_ber(state.store.app[(pos - 1) * n:pos * n]) > config.delta_ber


Detector = Callable[[WindowState, DecoderConfig], bool]


def find_stall_position(per_position_errors, n: int, delta: float = 0.01, eta: int = 1) -> int | None:
    """Smallest 1-based ``i`` such that blocks ``i .. i+eta-1`` all have error fraction > delta."""
    if eta < 1 or not 0 <= delta < 1:
        raise ValueError("need eta >= 1 and 0 <= delta < 1")
    bad = np.asarray(per_position_errors, dtype=np.float64) / n > delta
    run = 0
    for i, b in enumerate(bad):
        run = run + 1 if b else 0
        if run == eta:
            return i - eta + 2
    return None


def estimate_post_ber(e_s: float, L: int, p_pre: float, p_stall: float) -> float:
    """Post-decoding BER predicted from the mean stall position, channel BER and stall rate."""
    if not 0 <= e_s <= L:
        raise ValueError(f"E[s]={e_s} outside [0, {L}]")
    if not (0 <= p_pre <= 1 and 0 <= p_stall <= 1):
        raise ValueError("probabilities must lie in [0, 1]")
    return (1.0 - e_s / L) * p_pre * p_stall


def _decode(code: CoupledCode, frame: LlrFrame, config: DecoderConfig, scheme: str,
            detector: Detector | None = None, iterations: int | None = None,
            local_iterations: tuple[int, int, int] | None = None, trace: bool = False) -> DecodeResult:
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if frame.L != code.L or frame.n != code.n:
        raise GeometryError(f"frame geometry {frame.L}x{frame.n} does not match code {code.L}x{code.n}")
    geo = _Geometry(code, config.w)
    if config.detect_position > geo.span:
        raise ValueError(f"detect_position {config.detect_position} exceeds w + mu = {geo.span}")
    store = MessageStore.init(code, frame.llr, config.rule, config.rule_param)
    state = WindowState(p_win=1, store=store)
    if detector is None:
        def detector(st, cfg):
            return detect_stall(st, cfg, code)

    n, L, w = code.n, code.L, config.w
    bits = np.zeros(L * n, dtype=np.uint8)
    app_out = np.zeros(L * n)
    lag = config.n_b if scheme in ("wsd", "wtd") else 0
    fixed_iters = config.i_min if iterations is None else iterations
    a_max = -np.inf
    last_back_origin = -np.inf
    fired_total = 0
    steps = []

    def commit(upto: int) -> None:
        upto = min(upto, L)
        if upto > state.committed_upto:
            lo, hi = state.committed_upto * n, upto * n
            app_out[lo:hi] = store.app[lo:hi]
            bits[lo:hi] = hard_decision(store.app[lo:hi])
            state.committed_upto = upto

    p = 1
    while p <= geo.n_win:
        start = p
        shifts = []
        fired_here = False
        run = 0
        total = 0

        def iterate() -> None:
            nonlocal run, total
            store.cn_update(*geo.check_range(p))
            store.vn_update(*geo.var_range(p))
            run += 1
            total += 1

        def detect() -> bool:
            nonlocal fired_here, fired_total
            state.p_win = p
            hit = bool(detector(state, config))
            fired_here |= hit
            fired_total += hit
            return hit

        def move(target: int) -> None:
            nonlocal p, run
            # lowest window whose real blocks are all uncommitted; never a forward clamp
            floor = geo.p_for_leftmost(state.committed_upto + 1) if state.committed_upto else 1
            target = min(max(target, min(floor, p)), geo.n_win)
            if target == p:
                return
            if run:
                state.ledger.add(run, w)
            run = 0
            shifts.append([p, target])
            p = target

        a_max = max(a_max, geo.leftmost(p))
        if scheme == "fixed":
            a = geo.leftmost(p)
            count = fixed_iters
            if local_iterations is not None and local_iterations[0] <= a <= local_iterations[1]:
                count = local_iterations[2]
            for _ in range(count):
                iterate()
        elif scheme == "aid":
            for it in range(1, config.i_max + 1):
                iterate()
                if it >= config.i_min and not detect():
                    break
        else:
            flag = False
            back_from = p
            for it in range(1, config.i_max + 1):
                iterate()
                if it == config.i_min:
                    if not detect():
                        break
                    a = geo.leftmost(p)
                    if a > last_back_origin:
                        last_back_origin = a
                        back_from = p
                        move(p - config.n_b)
                        flag = scheme == "wtd" and p != back_from
                elif it > config.i_min and scheme == "wtd":
                    if not detect():
                        if flag:
                            move(back_from)
                            flag = False
                        elif p < geo.n_win:
                            move(p + 1)
                        else:
                            break
        if run:
            state.ledger.add(run, w)
        a_max = max(a_max, geo.leftmost(p))
        commit(int(a_max) - lag)
        if trace:
            steps.append({"p_win": start, "iterations": total, "detector_fired": fired_here,
                          "shifts": shifts})
        p += 1

    commit(L)
    errors = bits.reshape(L, n).sum(axis=1).astype(np.int64)
    s = find_stall_position(errors, n, config.delta, config.eta)
    stall = StallRecord(s, errors, recovered=s is None and fired_total > 0)
    return DecodeResult(bits, app_out, store.app.copy(), state.ledger, stall, store.cn_sweeps,
                        fired_total, steps)


def decode_fixed(code, frame, config, iterations=None, local_iterations=None, trace=False) -> DecodeResult:
    """Windowed decoding with ``iterations`` (default ``config.i_min``) per window.

    ``local_iterations=(first, last, I)`` overrides the count for windows whose
    leftmost block lies in ``first..last``.
    """
    return _decode(code, frame, config, "fixed", iterations=iterations,
                   local_iterations=local_iterations, trace=trace)


def decode_aid(code, frame, config, detector=None, trace=False) -> DecodeResult:
    return _decode(code, frame, config, "aid", detector=detector, trace=trace)


def decode_wsd(code, frame, config, detector=None, trace=False) -> DecodeResult:
    return _decode(code, frame, config, "wsd", detector=detector, trace=trace)


def decode_wtd(code, frame, config, detector=None, trace=False) -> DecodeResult:
    return _decode(code, frame, config, "wtd", detector=detector, trace=trace)


def decode(code, frame, config, scheme: str, **kw) -> DecodeResult:
    return _decode(code, frame, config, scheme, **kw)
