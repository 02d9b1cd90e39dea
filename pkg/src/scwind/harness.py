"""Monte Carlo experiments: BER sweeps, stall test sets, block manipulation and reports.

Every frame is generated from ``(seed, trial)`` alone, trials are grouped in
fixed-size chunks, and results are reduced in trial order. Output therefore
does not depend on the number of workers.
"""

from __future__ import annotations

import csv
import io
import json
import math
import multiprocessing as mp
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bp import soft_ber
from .channel import LlrFrame, awgn_llrs, channel_ber, manipulate_block
from .code import CodeError, CodeSpec, CoupledCode
from .decoder import DecoderConfig, GeometryError, decode, estimate_post_ber

CSV_COLUMNS = ("snr_db", "scheme", "trials", "ber", "p_stall", "e_s", "cbar", "ci_halfwidth")
CHUNK = 8
Z95 = 1.959963984540054

# desk scale keeps L and shrinks the lift; paper scale uses the full block size
SCALES = {
    "desk": dict(Z=96, L=99, trials=200),
    "paper": dict(Z=960, L=99, trials=2000),
}


@dataclass(frozen=True)
class SchemeRun:
    """One decoder variant in an experiment."""

    label: str
    scheme: str
    config: DecoderConfig
    iterations: int | None = None
    local_iterations: tuple[int, int, int] | None = None

    def run(self, code, frame):
        kw = {}
        if self.scheme == "fixed":
            kw = dict(iterations=self.iterations, local_iterations=self.local_iterations)
        return decode(code, frame, self.config, self.scheme, **kw)


def parse_scheme(text: str, base: DecoderConfig | None = None) -> SchemeRun:
    """``fixed`` or ``fixed:I`` for a fixed count, otherwise ``aid``/``wsd``/``wtd``."""
    base = base or DecoderConfig()
    name, _, arg = text.partition(":")
    if name == "fixed":
        it = int(arg) if arg else base.i_min
        return SchemeRun(f"fixed{it}", "fixed", base, iterations=it)
    if name in ("aid", "wsd", "wtd") and not arg:
        return SchemeRun(name, name, base)
    raise ValueError(f"unknown scheme {text!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    code: CodeSpec | str
    snrs: tuple[float, ...]
    schemes: tuple[SchemeRun, ...]
    trials: int = 100
    seed: int = 0
    min_errors: int = 100  # frame error events; a point stops at whichever comes first

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.schemes:
            raise ValueError("at least one scheme is required")
        labels = [s.label for s in self.schemes]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate scheme labels {labels}")
        if self.min_errors < 1:
            raise ValueError("min_errors must be >= 1")


def load_code(code: CodeSpec | CoupledCode | str | Path) -> CoupledCode:
    if isinstance(code, CoupledCode):
        return code
    if isinstance(code, CodeSpec):
        return CoupledCode.build(code)
    return CoupledCode.load(code)


@dataclass
class PointStats:
    """Accumulated counts of one (SNR, scheme) point."""

    snr_db: float
    scheme: str
    L: int
    n: int
    trials: int = 0
    bit_errors: int = 0
    pre_errors: int = 0
    frame_errors: int = 0
    stalls: list[int] = field(default_factory=list)
    cbar_sum: float = 0.0
    tail_fractions: list[float] = field(default_factory=list)

    @property
    def total_bits(self) -> int:
        return self.trials * self.L * self.n

    @property
    def ber(self) -> float:
        return self.bit_errors / self.total_bits if self.trials else math.nan

    @property
    def p_pre(self) -> float:
        return self.pre_errors / self.total_bits if self.trials else math.nan

    @property
    def p_stall(self) -> float:
        return len(self.stalls) / self.trials if self.trials else math.nan

    @property
    def e_s(self) -> float:
        return float(np.mean(self.stalls)) if self.stalls else math.nan

    @property
    def cbar(self) -> float:
        return self.cbar_sum / self.trials if self.trials else math.nan

    @property
    def ci_halfwidth(self) -> float:
        """95% normal-approximation half-width of ``p_stall``."""
        return bernoulli_halfwidth(len(self.stalls), self.trials)

    def histogram(self) -> list[int]:
        return np.bincount(np.asarray(self.stalls, dtype=np.int64), minlength=self.L + 1)[1:].tolist()

    def predicted_post_ber(self) -> float:
        """Post-decoding BER predicted from measured ``E[s]``, ``P_e,pre`` and ``P_stall``."""
        if not self.stalls:
            return 0.0
        return estimate_post_ber(self.e_s, self.L, self.p_pre, self.p_stall)

    def csv_row(self) -> list[str]:
        return [repr(float(self.snr_db)), self.scheme, str(self.trials), repr(self.ber),
                repr(self.p_stall), repr(self.e_s), repr(self.cbar), repr(self.ci_halfwidth)]

    def to_dict(self) -> dict:
        return dict(snr_db=self.snr_db, scheme=self.scheme, L=self.L, n=self.n, trials=self.trials,
                    bit_errors=self.bit_errors, pre_errors=self.pre_errors,
                    frame_errors=self.frame_errors, stalls=self.stalls, cbar_sum=self.cbar_sum,
                    tail_fractions=self.tail_fractions)

    @classmethod
    def from_dict(cls, d: dict) -> "PointStats":
        return cls(**d)


@dataclass
class StatsReport:
    points: list[PointStats]

    def point(self, snr_db: float, scheme: str) -> PointStats:
        for p in self.points:
            if p.scheme == scheme and p.snr_db == snr_db:
                return p
        raise KeyError((snr_db, scheme))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for p in self.points:
            w.writerow(p.csv_row())
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"points": [p.to_dict() for p in self.points]}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "StatsReport":
        return cls([PointStats.from_dict(d) for d in json.loads(text)["points"]])


def bernoulli_halfwidth(k: int, n: int) -> float:
    if n == 0:
        return math.nan
    p = k / n
    return Z95 * math.sqrt(p * (1.0 - p) / n)


def point_seed(seed: int, index: int) -> int:
    """Independent 63-bit seed for sweep point ``index``."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


# worker pool -------------------------------------------------------------

_CODE: CoupledCode | None = None


def _ensure_code(code: CoupledCode) -> None:
    global _CODE
    _CODE = code


class _Pool:
    """Ordered map over chunks, in-process when ``workers == 1``.

    Workers are forked after the code is installed, so they share it read-only.
    """

    def __init__(self, code: CoupledCode, workers: int):
        self.code = code
        self.workers = max(1, int(workers))
        self.ex = None

    def __enter__(self):
        _ensure_code(self.code)
        if self.workers > 1:
            self.ex = ProcessPoolExecutor(self.workers, mp_context=mp.get_context("fork"))
        return self

    def __exit__(self, *exc):
        if self.ex is not None:
            self.ex.shutdown()

    def map(self, fn, items):
        if self.ex is None:
            return [fn(x) for x in items]
        return list(self.ex.map(fn, items))


def _summarize(code: CoupledCode, frame: LlrFrame, res) -> dict:
    s = res.stall.s
    tail = None
    if s is not None:
        tail = float(np.mean(res.stall.per_position_errors[s - 1:] / code.n > 0))
    return dict(errors=res.bit_errors, s=s, cbar=res.ledger.average(), tail=tail,
                recovered=res.stall.recovered)


def _sweep_chunk(args):
    snr, seed, trials, runs = args
    code = _CODE
    out = []
    for t in trials:
        frame = awgn_llrs(code.L, code.n, snr, code.rate, seed, t)
        per = {}
        for r in runs:
            per[r.label] = _summarize(code, frame, r.run(code, frame))
        out.append((t, frame.pre_errors(), per))
    return out


def run_ber_sweep(config: ExperimentConfig, workers: int = 1, code: CoupledCode | None = None) -> StatsReport:
    """Decode independent frames per SNR with every scheme and accumulate statistics.

    Each scheme stops at the first trial index where it has collected
    ``min_errors`` frame errors, or after ``trials`` frames.
    """
    try:
        code = code or load_code(config.code)
    except (OSError, ValueError) as e:
        raise CodeError(f"cannot load code descriptor {config.code!r}: {e}") from e
    points = []
    with _Pool(code, workers) as pool:
        for k, snr in enumerate(config.snrs):
            seed = point_seed(config.seed, k)
            stats = {r.label: PointStats(float(snr), r.label, code.L, code.n) for r in config.schemes}
            active = list(config.schemes)
            t = 0
            while active and t < config.trials:
                span = CHUNK * pool.workers
                trials = list(range(t, min(t + span, config.trials)))
                chunks = [(snr, seed, trials[i:i + CHUNK], tuple(active))
                          for i in range(0, len(trials), CHUNK)]
                for chunk in pool.map(_sweep_chunk, chunks):
                    for trial, pre, per in chunk:
                        for label, r in per.items():
                            st = stats[label]
                            if st.frame_errors >= config.min_errors:
                                continue
                            st.trials += 1
                            st.pre_errors += pre
                            st.bit_errors += r["errors"]
                            st.frame_errors += r["errors"] > 0
                            st.cbar_sum += r["cbar"]
                            if r["s"] is not None:
                                st.stalls.append(r["s"])
                                st.tail_fractions.append(r["tail"])
                active = [r for r in active if stats[r.label].frame_errors < config.min_errors]
                t = trials[-1] + 1
            points.extend(stats[r.label] for r in config.schemes)
    return StatsReport(points)


def scan_stall_region(code: CoupledCode, snrs, trials: int, config: DecoderConfig | None = None,
                      seed: int = 0, workers: int = 1) -> list[tuple[float, float]]:
    """Coarse SNR scan of the baseline stall rate, used to place test sets."""
    config = config or DecoderConfig()
    run = SchemeRun("baseline", "fixed", config)
    cfg = ExperimentConfig(code.spec, tuple(snrs), (run,), trials=trials, seed=seed,
                           min_errors=trials)
    rep = run_ber_sweep(cfg, workers, code)
    return [(p.snr_db, p.p_stall) for p in rep.points]


# test sets ----------------------------------------------------------------

MAGIC = b"SCTS"
VERSION = 1


class TestsetError(RuntimeError):
    __test__ = False


@dataclass
class Testset:
    header: dict
    stall_positions: np.ndarray
    llrs: np.ndarray  # (frame_count, L * n) float32

    __test__ = False

    def frames(self):
        h = self.header
        for i, row in enumerate(self.llrs):
            yield LlrFrame(row.astype(np.float64), h["L"], h["n"], h["snr_db"], h["rate"],
                           h["seed"], int(h["trials"][i]) if "trials" in h else i)


def write_testset(path, header: dict, stall_positions, llrs) -> None:
    llrs = np.asarray(llrs, dtype="<f4")
    s = np.asarray(stall_positions, dtype="<u4")
    header = dict(header, frame_count=len(s))
    if llrs.shape != (len(s), header["L"] * header["n"]):
        raise ValueError(f"LLR array shape {llrs.shape} does not match header")
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<HI", VERSION, len(blob)) + blob)
        for k in range(len(s)):
            f.write(struct.pack("<I", int(s[k])))
            f.write(llrs[k].tobytes())


def read_testset(path) -> Testset:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise TestsetError(f"{path}: bad magic {data[:4]!r}")
    version, hlen = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise TestsetError(f"{path}: unsupported version {version}")
    off = 10 + hlen
    header = json.loads(data[10:off].decode("utf-8"))
    count, width = header["frame_count"], header["L"] * header["n"]
    rec = np.dtype([("s", "<u4"), ("llr", "<f4", (width,))])
    if len(data) - off != count * rec.itemsize:
        raise TestsetError(f"{path}: expected {count} records of {rec.itemsize} bytes")
    recs = np.frombuffer(data, dtype=rec, count=count, offset=off)
    return Testset(header, recs["s"].astype(np.int64), recs["llr"].astype(np.float32))


def quantize(frame: LlrFrame) -> LlrFrame:
    """Round LLRs through float32, the precision stored in test-set files."""
    return replace(frame, llr=frame.llr.astype(np.float32).astype(np.float64))


def _testset_chunk(args):
    snr, seed, trials, run = args
    code = _CODE
    out = []
    for t in trials:
        frame = quantize(awgn_llrs(code.L, code.n, snr, code.rate, seed, t))
        res = run.run(code, frame)
        if res.stalled:
            out.append((t, res.stall.s, frame.llr.astype(np.float32)))
        else:
            out.append((t, None, None))
    return out


def build_testset(code: CoupledCode, path, snr_db: float, count: int, seed: int = 0,
                  config: DecoderConfig | None = None, max_trials: int = 10**7,
                  min_rate: float = 1e-6, workers: int = 1) -> dict:
    """Collect ``count`` frames that stall under the fixed-iteration baseline.

    Aborts once the rule-of-three upper bound on the stall rate drops below
    ``min_rate`` or ``max_trials`` frames have been tried.
    """
    config = config or DecoderConfig()
    run = SchemeRun("baseline", "fixed", config)
    found: list[tuple[int, int, np.ndarray]] = []
    t = 0
    with _Pool(code, workers) as pool:
        while len(found) < count:
            upper = 3.0 / t if t else 1.0
            if (not found and upper < min_rate) or t >= max_trials:
                raise TestsetError(f"collected {len(found)}/{count} stalls in {t} trials "
                                   f"(rate {len(found) / max(t, 1):.3g}); SNR {snr_db} dB is "
                                   f"outside the stall region")
            span = CHUNK * pool.workers
            trials = list(range(t, min(t + span, max_trials)))
            chunks = [(snr_db, seed, trials[i:i + CHUNK], run) for i in range(0, len(trials), CHUNK)]
            for chunk in pool.map(_testset_chunk, chunks):
                for trial, s, llr in chunk:
                    if s is not None and len(found) < count:
                        found.append((trial, s, llr))
            t = trials[-1] + 1
    # trials consumed up to the last accepted frame, independent of chunking
    if found:
        t = found[-1][0] + 1
    s = np.array([f[1] for f in found], dtype=np.int64)
    header = dict(code=code.spec.to_dict(), snr_db=float(snr_db), seed=int(seed), L=code.L,
                  n=code.n, rate=code.rate, e_s=float(s.mean()) if len(s) else None,
                  histogram=np.bincount(s, minlength=code.L + 1)[1:].tolist(),
                  trials=[f[0] for f in found], trials_run=t, decoder=config.to_dict())
    llrs = np.array([f[2] for f in found], dtype=np.float32).reshape(len(found), code.L * code.n)
    write_testset(path, header, s, llrs)
    header["frame_count"] = len(found)
    return header


@dataclass
class VariantStats:
    label: str
    frames: int = 0
    stalls: list[int] = field(default_factory=list)
    bit_errors: int = 0
    cbar_sum: float = 0.0
    L: int = 0
    n: int = 0

    @property
    def stall_rate(self) -> float:
        return len(self.stalls) / self.frames if self.frames else math.nan

    @property
    def ci_halfwidth(self) -> float:
        return bernoulli_halfwidth(len(self.stalls), self.frames)

    @property
    def e_s(self) -> float:
        return float(np.mean(self.stalls)) if self.stalls else math.nan

    @property
    def cbar(self) -> float:
        return self.cbar_sum / self.frames if self.frames else math.nan

    @property
    def ber(self) -> float:
        return self.bit_errors / (self.frames * self.L * self.n) if self.frames else math.nan

    def histogram(self) -> list[int]:
        return np.bincount(np.asarray(self.stalls, dtype=np.int64), minlength=self.L + 1)[1:].tolist()

    def summary(self) -> dict:
        return dict(label=self.label, frames=self.frames, stalls=len(self.stalls),
                    stall_rate=self.stall_rate, ci_halfwidth=self.ci_halfwidth, e_s=self.e_s,
                    cbar=self.cbar, ber=self.ber, histogram=self.histogram())


def _replay_chunk(args):
    frames, runs = args
    code = _CODE
    out = []
    for frame in frames:
        out.append({r.label: _summarize(code, frame, r.run(code, frame)) for r in runs})
    return out


def _accumulate(stats: dict, rows: list[dict]) -> None:
    for per in rows:
        for label, r in per.items():
            v = stats[label]
            v.frames += 1
            v.bit_errors += r["errors"]
            v.cbar_sum += r["cbar"]
            if r["s"] is not None:
                v.stalls.append(r["s"])


def replay_testset(path, code: CoupledCode, runs, workers: int = 1) -> dict[str, VariantStats]:
    """Decode every stored frame with each scheme; report stall survival and complexity."""
    ts = read_testset(path)
    h = ts.header
    if h["L"] != code.L or h["n"] != code.n or h["code"] != code.spec.to_dict():
        raise GeometryError(f"test set was built for {h['code']}, not {code.spec.to_dict()}")
    stats = {r.label: VariantStats(r.label, L=code.L, n=code.n) for r in runs}
    frames = list(ts.frames())
    chunks = [(frames[i:i + CHUNK], tuple(runs)) for i in range(0, len(frames), CHUNK)]
    with _Pool(code, workers) as pool:
        for rows in pool.map(_replay_chunk, chunks):
            _accumulate(stats, rows)
    return stats


# manipulation -------------------------------------------------------------

def manipulation_variants(config: DecoderConfig, local: tuple[int, int, int] = (8, 12, 4)):
    return (SchemeRun("fixed", "fixed", config),
            SchemeRun("local", "fixed", config, local_iterations=local),
            SchemeRun("wtd", "wtd", config))


def _manip_chunk(args):
    snr, snr_manip, block, seed, trials, runs = args
    code = _CODE
    out = []
    base = SchemeRun("baseline", "fixed", runs[0].config)
    for t in trials:
        frame = awgn_llrs(code.L, code.n, snr, code.rate, seed, t)
        if base.run(code, frame).bit_errors:
            out.append(None)
            continue
        bad = manipulate_block(frame, block, snr_manip)
        out.append({r.label: _summarize(code, bad, r.run(code, bad)) for r in runs})
    return out


def manipulation_experiment(code: CoupledCode, snr_db: float, snr_manip_db: float, count: int,
                            block: int = 10, seed: int = 0, config: DecoderConfig | None = None,
                            local: tuple[int, int, int] = (8, 12, 4), workers: int = 1,
                            max_trials: int | None = None) -> dict:
    """Lower the SNR of one block in frames the baseline decodes cleanly, then decode three ways.

    Variants: the fixed baseline, the baseline with ``local[2]`` iterations for
    windows whose leftmost block lies in ``local[0]..local[1]``, and WTD.
    """
    config = config or DecoderConfig()
    runs = manipulation_variants(config, local)
    stats = {r.label: VariantStats(r.label, L=code.L, n=code.n) for r in runs}
    max_trials = max_trials or 20 * count
    rows: list[dict] = []
    t = 0
    with _Pool(code, workers) as pool:
        while len(rows) < count and t < max_trials:
            span = CHUNK * pool.workers
            trials = list(range(t, min(t + span, max_trials)))
            chunks = [(snr_db, snr_manip_db, block, seed, trials[i:i + CHUNK], runs)
                      for i in range(0, len(trials), CHUNK)]
            for chunk in pool.map(_manip_chunk, chunks):
                rows.extend(r for r in chunk if r is not None)
            t = trials[-1] + 1
    _accumulate(stats, rows[:count])
    tail_from = block + config.w + code.mu
    out = {}
    for label, v in stats.items():
        d = v.summary()
        d["tail_fraction"] = (sum(s > tail_from for s in v.stalls) / len(v.stalls)) if v.stalls else 0.0
        out[label] = d
    return dict(snr_db=snr_db, snr_manip_db=snr_manip_db, block=block, trials_run=t,
                tail_from=tail_from, variants=out)


# reporting ----------------------------------------------------------------

def report(stats_files) -> str:
    """Table of complexity per scheme and the measured/predicted post-BER ratio."""
    points = []
    for f in stats_files:
        points.extend(StatsReport.from_json(Path(f).read_text()).points)
    lines = [f"{'snr_db':>8} {'scheme':>8} {'trials':>7} {'cbar':>9} {'p_stall':>9} "
             f"{'e_s':>7} {'ber':>10} {'predicted':>10} {'ratio':>7}"]
    for p in points:
        pred = p.predicted_post_ber()
        ratio = p.ber / pred if pred > 0 else (1.0 if p.ber == 0 else math.inf)
        lines.append(f"{p.snr_db:8.3f} {p.scheme:>8} {p.trials:7d} {p.cbar:9.4f} {p.p_stall:9.3g} "
                     f"{p.e_s:7.2f} {p.ber:10.3g} {pred:10.3g} {ratio:7.3f}")
    return "\n".join(lines) + "\n"


def post_ber_ratio(p: PointStats) -> float:
    pred = p.predicted_post_ber()
    if pred == 0:
        return 1.0 if p.ber == 0 else math.inf
    return p.ber / pred


def channel_calibration(snr_db: float, rate: float, samples: int, seed: int = 0) -> tuple[float, float]:
    """Mean soft BER of raw channel LLRs and the exact uncoded BER ``Q(1/sigma)``."""
    frame = awgn_llrs(1, samples, snr_db, rate, seed)
    return soft_ber(frame.llr), channel_ber(snr_db, rate)
