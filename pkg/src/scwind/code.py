"""Terminated spatially coupled LDPC codes built from a lifted protograph.

The coupled chain has ``L`` variable blocks of ``n`` bits and ``L + mu`` check
block rows of ``m`` checks. Check block row ``t`` (1-based) holds ``H_k`` in
variable block ``t - k`` for ``k = 0..mu``; blocks that fall outside ``1..L``
are dropped (termination).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

MAX_SHIFT_RETRIES = 100


class CodeError(ValueError):
    pass


class GirthWarning(UserWarning):
    """Shift selection could not avoid every length-4 cycle."""


@dataclass(frozen=True)
class CodeSpec:
    dv: int = 5
    dc: int = 25
    mu: int = 1
    spread: tuple[int, ...] = (3, 2)
    Z: int = 96
    L: int = 99
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "spread", tuple(int(s) for s in self.spread))
        if self.dv < 1 or self.dc < 1:
            raise CodeError("degrees must be positive")
        if self.dc % self.dv:
            raise CodeError(f"dc={self.dc} is not divisible by dv={self.dv}")
        if self.mu < 1:
            raise CodeError("coupling memory must be >= 1")
        if len(self.spread) != self.mu + 1:
            raise CodeError(f"spread needs mu+1={self.mu + 1} entries, got {len(self.spread)}")
        if any(s < 0 for s in self.spread) or sum(self.spread) != self.dv:
            raise CodeError(f"spread {self.spread} must be non-negative and sum to dv={self.dv}")
        if sum(1 for s in self.spread if s > 0) < 2:
            raise CodeError(f"spread {self.spread} has a single nonzero component (uncoupled)")
        if self.Z < max(self.spread):
            raise CodeError(f"Z={self.Z} is smaller than the largest multi-edge {max(self.spread)}")
        if self.L < 1:
            raise CodeError("L must be >= 1")

    @property
    def base_cols(self) -> int:
        return self.dc // self.dv

    def to_dict(self) -> dict:
        return {"dv": self.dv, "dc": self.dc, "mu": self.mu, "spread": list(self.spread),
                "Z": self.Z, "L": self.L, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "CodeSpec":
        return cls(dv=d["dv"], dc=d["dc"], mu=d["mu"], spread=tuple(d["spread"]),
                   Z=d["Z"], L=d["L"], seed=d["seed"])


@dataclass(frozen=True, eq=False)
class SparseBlock:
    """Binary ``rows x cols`` matrix kept as sorted (row, col) coordinates."""

    rows: int
    cols: int
    entries: np.ndarray  # (nnz, 2) int64, row-major order

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.int64).reshape(-1, 2)
        order = np.lexsort((e[:, 1], e[:, 0]))
        object.__setattr__(self, "entries", e[order])

    @classmethod
    def from_dense(cls, a) -> "SparseBlock":
        a = np.asarray(a)
        r, c = np.nonzero(a)
        return cls(a.shape[0], a.shape[1], np.column_stack([r, c]))

    @property
    def nnz(self) -> int:
        return len(self.entries)

    @cached_property
    def col_major(self) -> np.ndarray:
        e = self.entries
        return e[np.lexsort((e[:, 0], e[:, 1]))]

    def row_weights(self) -> np.ndarray:
        return np.bincount(self.entries[:, 0], minlength=self.rows)

    def col_weights(self) -> np.ndarray:
        return np.bincount(self.entries[:, 1], minlength=self.cols)

    def has_duplicates(self) -> bool:
        e = self.entries
        return bool(len(e) > 1 and np.any(np.all(e[1:] == e[:-1], axis=1)))

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.rows, self.cols), dtype=np.uint8)
        # duplicates stay visible as counts > 1
        np.add.at(a, (self.entries[:, 0], self.entries[:, 1]), 1)
        return a

    def __eq__(self, other):
        return (isinstance(other, SparseBlock) and self.rows == other.rows
                and self.cols == other.cols and np.array_equal(self.entries, other.entries))

    __hash__ = None


def build_protograph(dv: int, dc: int, mu: int, spread) -> list[np.ndarray]:
    """Base matrices ``B_0..B_mu``, each ``1 x dc/dv`` with constant entry ``spread[i]``."""
    spec = CodeSpec(dv=dv, dc=dc, mu=mu, spread=tuple(spread), Z=max(spread), L=1)
    return [np.full((1, spec.base_cols), s, dtype=np.int64) for s in spec.spread]


def _pick_shifts(count: int, offset: int, Z: int, column: list, used: set,
                 rng: np.random.Generator) -> tuple[list[int], bool]:
    """Choose ``count`` distinct shifts for block ``offset`` of one base column.

    ``column`` holds the ``(offset, shift)`` circulants already placed in this
    base column; ``used`` holds the keys ``(offset - offset', shift - shift')``
    of every ordered pair placed so far. A repeated key is a 4-cycle.
    """
    shifts: list[int] = []
    clean = True
    for _ in range(count):
        chosen = None
        for _ in range(MAX_SHIFT_RETRIES):
            s = int(rng.integers(Z))
            if s in shifts:
                continue
            keys = _pair_keys(offset, s, column, Z)
            if len(set(keys)) == len(keys) and not used.intersection(keys):
                chosen = s
                break
        if chosen is None:
            clean = False
            free = [s for s in range(Z) if s not in shifts]
            chosen = free[int(rng.integers(len(free)))]
        used.update(_pair_keys(offset, chosen, column, Z))
        column.append((offset, chosen))
        shifts.append(chosen)
    return shifts, clean


def _pair_keys(offset: int, s: int, column: list, Z: int) -> list[tuple[int, int]]:
    keys = []
    for o, t in column:
        keys.append((offset - o, (s - t) % Z))
        keys.append((o - offset, (t - s) % Z))
    return keys


def lift(base: list[np.ndarray], Z: int, seed: int) -> list[SparseBlock]:
    """Quasi-cyclic lift: entry ``e`` becomes a sum of ``e`` distinct ``Z x Z`` circulants.

    A circulant with shift ``s`` connects row ``r`` to column ``(r + s) mod Z``.
    Shifts are drawn so that no length-4 cycle forms anywhere in the coupled
    chain: within one block as well as across ``H_0 .. H_mu``.
    """
    if Z < 1:
        raise CodeError("Z must be >= 1")
    top = max(int(b.max()) for b in base)
    if Z < top:
        raise CodeError(f"Z={Z} too small for multi-edge of weight {top}")
    shapes = {b.shape for b in base}
    if len(shapes) != 1:
        raise CodeError(f"base matrices differ in shape: {sorted(shapes)}")
    rows_b, cols_b = base[0].shape
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    degraded = False
    r = np.arange(Z)
    used: set = set()
    coords: list[list] = [[] for _ in base]
    for i in range(rows_b):
        for j in range(cols_b):
            column: list = []
            for k, b in enumerate(base):
                shifts, clean = _pick_shifts(int(b[i, j]), k, Z, column, used, rng)
                degraded |= not clean
                for s in shifts:
                    coords[k].append(np.column_stack([i * Z + r, j * Z + (r + s) % Z]))
    blocks = []
    for c in coords:
        e = np.concatenate(c) if c else np.zeros((0, 2), dtype=np.int64)
        blocks.append(SparseBlock(rows_b * Z, cols_b * Z, e))
    if degraded:
        warnings.warn(f"lift: could not avoid all 4-cycles with Z={Z}", GirthWarning, stacklevel=2)
    return blocks


@dataclass(frozen=True)
class Graph:
    """Edge arrays of the full terminated matrix, used by the message-passing kernels.

    Edges are numbered in (check, variable) order. ``col_edges`` lists the edge
    ids of each variable in increasing check order.
    """

    n_checks: int
    n_vars: int
    row_ptr: np.ndarray
    edge_var: np.ndarray
    edge_check: np.ndarray
    col_ptr: np.ndarray
    col_edges: np.ndarray

    @property
    def n_edges(self) -> int:
        return len(self.edge_var)


@dataclass(frozen=True, eq=False)
class CoupledCode:
    spec: CodeSpec
    h: tuple[SparseBlock, ...]

    @classmethod
    def build(cls, spec: CodeSpec) -> "CoupledCode":
        base = build_protograph(spec.dv, spec.dc, spec.mu, spec.spread)
        return cls(spec, tuple(lift(base, spec.Z, spec.seed)))

    @property
    def m(self) -> int:
        return self.h[0].rows

    @property
    def n(self) -> int:
        return self.h[0].cols

    @property
    def mu(self) -> int:
        return len(self.h) - 1

    @property
    def L(self) -> int:
        return self.spec.L

    @property
    def rate(self) -> float:
        return 1.0 - (self.L + self.mu) * self.m / (self.L * self.n)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.L + self.mu) * self.m, self.L * self.n

    def block_entries(self, t: int) -> np.ndarray:
        """Global (check, var) coordinates of check block row ``t`` (1-based), row-major."""
        m, n = self.m, self.n
        parts = []
        for k, blk in enumerate(self.h):
            j = t - k
            if 1 <= j <= self.L:
                e = blk.entries
                parts.append(np.column_stack([(t - 1) * m + e[:, 0], (j - 1) * n + e[:, 1]]))
        e = np.concatenate(parts)
        return e[np.lexsort((e[:, 1], e[:, 0]))]

    @cached_property
    def graph(self) -> Graph:
        e = np.concatenate([self.block_entries(t) for t in range(1, self.L + self.mu + 1)])
        n_checks, n_vars = self.shape
        edge_check = e[:, 0].astype(np.int64)
        edge_var = e[:, 1].astype(np.int64)
        row_ptr = np.zeros(n_checks + 1, dtype=np.int64)
        np.cumsum(np.bincount(edge_check, minlength=n_checks), out=row_ptr[1:])
        col_edges = np.lexsort((edge_check, edge_var)).astype(np.int64)
        col_ptr = np.zeros(n_vars + 1, dtype=np.int64)
        np.cumsum(np.bincount(edge_var, minlength=n_vars), out=col_ptr[1:])
        return Graph(n_checks, n_vars, row_ptr, edge_var, edge_check, col_ptr, col_edges)

    def to_dense(self) -> np.ndarray:
        a = np.zeros(self.shape, dtype=np.uint8)
        for t in range(1, self.L + self.mu + 1):
            e = self.block_entries(t)
            np.add.at(a, (e[:, 0], e[:, 1]), 1)
        return a

    def save(self, out_dir) -> Path:
        """Write ``H_<i>.alist`` for every sub-matrix plus ``code.json``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, blk in enumerate(self.h):
            write_alist(blk, out / f"H_{i}.alist")
        (out / "code.json").write_text(json.dumps(self.spec.to_dict(), indent=2) + "\n")
        return out

    @classmethod
    def load(cls, path) -> "CoupledCode":
        """Load from a directory written by :meth:`save` (or the ``code.json`` inside it)."""
        p = Path(path)
        desc = p if p.suffix == ".json" else p / "code.json"
        try:
            spec = CodeSpec.from_dict(json.loads(desc.read_text()))
        except (OSError, ValueError, KeyError) as exc:
            raise CodeError(f"unreadable code descriptor {desc}: {exc}") from exc
        blocks = tuple(read_alist(desc.parent / f"H_{i}.alist") for i in range(spec.mu + 1))
        return cls(spec, blocks)


@dataclass(frozen=True, eq=False)
class WindowView:
    """Index view of the banded window matrix over the shared sub-matrices.

    Window row ``r`` (1-based) holds ``H_mu .. H_0`` in window block columns
    ``r .. r + mu``. ``start`` is the absolute check block row of window row 1,
    so window block column ``c`` is absolute variable block ``start - mu + c - 1``.
    """

    code: CoupledCode
    w: int
    start: int = 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.w * self.code.m, (self.w + self.code.mu) * self.code.n

    def blocks(self):
        """Yield ``(row_block, col_block, k)`` meaning ``H_k`` sits at that window position."""
        mu = self.code.mu
        for r in range(1, self.w + 1):
            for k in range(mu, -1, -1):
                yield r, r + mu - k, k

    def entries(self) -> np.ndarray:
        m, n = self.code.m, self.code.n
        parts = []
        for r, c, k in self.blocks():
            e = self.code.h[k].entries
            parts.append(np.column_stack([(r - 1) * m + e[:, 0], (c - 1) * n + e[:, 1]]))
        e = np.concatenate(parts)
        return e[np.lexsort((e[:, 1], e[:, 0]))]

    def to_dense(self) -> np.ndarray:
        a = np.zeros(self.shape, dtype=np.uint8)
        e = self.entries()
        np.add.at(a, (e[:, 0], e[:, 1]), 1)
        return a

    def absolute_row_block(self, r: int) -> int:
        return self.start + r - 1

    def absolute_col_block(self, c: int) -> int:
        return self.start - self.code.mu + c - 1


def assemble_window(code: CoupledCode, w: int, start: int = 1) -> WindowView:
    if not 1 <= w <= code.L:
        raise CodeError(f"window size w={w} outside 1..L={code.L}")
    return WindowView(code, w, start)


def validate(code: CoupledCode) -> dict:
    """Check the structural invariants; returns ``{"checks": {name: bool}, ...}``."""
    spec = code.spec
    base = build_protograph(spec.dv, spec.dc, spec.mu, spec.spread)
    checks = {}
    checks["no_duplicates"] = not any(b.has_duplicates() for b in code.h)
    checks["block_dims"] = all(b.rows == spec.Z and b.cols == spec.Z * spec.base_cols for b in code.h)
    checks["block_weights"] = all(
        np.all(b.col_weights() == int(bb[0, 0])) and np.all(b.row_weights() == int(bb.sum()))
        for b, bb in zip(code.h, base))
    stack_w = sum(b.col_weights() for b in code.h)
    checks["column_weight_dv"] = bool(np.all(stack_w == spec.dv))
    checks["rate"] = abs(code.rate - (1 - (code.L + code.mu) * code.m / (code.L * code.n))) < 1e-15
    row_w = np.concatenate([
        np.bincount(code.block_entries(t)[:, 0] - (t - 1) * code.m, minlength=code.m)
        for t in range(1, code.L + code.mu + 1)]).reshape(code.L + code.mu, code.m)
    interior = row_w[code.mu:code.L] if code.L > code.mu else row_w[:0]
    checks["row_weight_bound"] = bool(np.all(row_w <= spec.dc)) and bool(np.all(interior == spec.dc))
    checks["full_dims"] = code.shape == ((code.L + code.mu) * code.m, code.L * code.n)
    return {
        "checks": checks,
        "ok": all(checks.values()),
        "shape": code.shape,
        "column_degree_hist": dict(zip(*map(np.ndarray.tolist, np.unique(stack_w, return_counts=True)))),
        "row_degree_hist": dict(zip(*map(np.ndarray.tolist, np.unique(row_w, return_counts=True)))),
        "four_cycles": [count_four_cycles(b) for b in code.h],
    }


def count_four_cycles(blk: SparseBlock) -> int:
    """Number of length-4 cycles (pairs of rows sharing two or more columns)."""
    a = blk.to_dense().astype(np.int64)
    overlap = a @ a.T
    np.fill_diagonal(overlap, 0)
    return int((overlap * (overlap - 1) // 2).sum() // 2)


def write_alist(blk: SparseBlock, path) -> None:
    """MacKay alist: header, degrees, then 1-based column and row adjacency lists."""
    cw, rw = blk.col_weights(), blk.row_weights()
    max_c, max_r = int(cw.max(initial=0)), int(rw.max(initial=0))
    cols = [[] for _ in range(blk.cols)]
    rows = [[] for _ in range(blk.rows)]
    for r, c in blk.entries:
        rows[r].append(c + 1)
        cols[c].append(r + 1)
    lines = [f"{blk.cols} {blk.rows}", f"{max_c} {max_r}",
             " ".join(map(str, cw)), " ".join(map(str, rw))]
    lines += [" ".join(map(str, sorted(c) + [0] * (max_c - len(c)))) for c in cols]
    lines += [" ".join(map(str, sorted(r) + [0] * (max_r - len(r)))) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_alist(path) -> SparseBlock:
    tok = iter(int(x) for x in Path(path).read_text().split())
    try:
        n_cols, n_rows = next(tok), next(tok)
        max_c, max_r = next(tok), next(tok)
        cw = [next(tok) for _ in range(n_cols)]
        rw = [next(tok) for _ in range(n_rows)]
        coords = []
        by_row: list[list[int]] = [[] for _ in range(n_rows)]
        for c in range(n_cols):
            idx = [next(tok) for _ in range(max_c)]
            for r in idx[:cw[c]]:
                coords.append((r - 1, c))
                by_row[r - 1].append(c)
        for r in range(n_rows):
            idx = [next(tok) for _ in range(max_r)]
            if sorted(x - 1 for x in idx[:rw[r]]) != sorted(by_row[r]):
                raise CodeError(f"{path}: row {r + 1} disagrees with column lists")
    except StopIteration:
        raise CodeError(f"{path}: truncated alist file") from None
    return SparseBlock(n_rows, n_cols, np.array(coords, dtype=np.int64).reshape(-1, 2))
