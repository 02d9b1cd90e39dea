"""Command-line entry point: ``scwind <command> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .channel import LlrFrame, awgn_llrs
from .code import CodeSpec, CoupledCode, validate
from .decoder import SCHEMES, DecoderConfig, decode
from .harness import (SCALES, ExperimentConfig, build_testset, manipulation_experiment, parse_scheme,
                      read_testset, replay_testset, report, run_ber_sweep, scan_stall_region, write_testset)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(","))


def _decoder_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("decoder")
    g.add_argument("--w", type=int, default=9)
    g.add_argument("--imin", type=int, default=3)
    g.add_argument("--imax", type=int, default=None)
    g.add_argument("--nb", type=int, default=2)
    g.add_argument("--detector", choices=("llr", "parity"), default="llr")
    g.add_argument("--delta-ber", type=float, default=1e-7)
    g.add_argument("--detect-position", type=int, default=3)
    g.add_argument("--rule", default="sum-product",
                   choices=("sum-product", "normalized-min-sum", "offset-min-sum"))


def _decoder_config(a) -> DecoderConfig:
    return DecoderConfig(w=a.w, i_min=a.imin, i_max=a.imax, n_b=a.nb, detector=a.detector,
                         delta_ber=a.delta_ber, detect_position=a.detect_position, rule=a.rule)


def _code_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--code", help="directory written by 'code build' (default: build from --scale)")


def _load_code(a) -> CoupledCode:
    if a.code:
        return CoupledCode.load(a.code)
    s = SCALES[a.scale]
    return CoupledCode.build(CodeSpec(Z=s["Z"], L=s["L"], seed=a.seed))


def _write(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_code_build(a) -> int:
    s = SCALES[a.scale]
    spec = CodeSpec(dv=a.dv, dc=a.dc, mu=a.mu, spread=_ints(a.spread), Z=a.Z or s["Z"],
                    L=a.L or s["L"], seed=a.seed)
    code = CoupledCode.build(spec)
    code.save(a.out)
    v = validate(code)
    print(json.dumps({"shape": v["shape"], "rate": code.rate, "ok": v["ok"],
                      "four_cycles": v["four_cycles"]}))
    return 0 if v["ok"] else 1


def cmd_channel_sample(a) -> int:
    code = _load_code(a)
    frames = np.stack([awgn_llrs(code.L, code.n, a.snr, code.rate, a.seed, t).llr
                       for t in range(a.frames)])
    if str(a.out).endswith(".npy"):
        np.save(a.out, frames)
    else:
        # unlabelled frames: stall position 0
        header = dict(code=code.spec.to_dict(), snr_db=a.snr, seed=a.seed, L=code.L, n=code.n,
                      rate=code.rate, e_s=None, histogram=[], trials=list(range(a.frames)))
        write_testset(a.out, header, np.zeros(a.frames, dtype=np.int64), frames.astype(np.float32))
    return 0


def _read_frames(path, code: CoupledCode, snr: float):
    if str(path).endswith(".npy"):
        arr = np.load(path)
        return [LlrFrame(np.asarray(r, dtype=np.float64), code.L, code.n, snr, code.rate, trial=i)
                for i, r in enumerate(np.atleast_2d(arr))]
    return list(read_testset(path).frames())


def cmd_decode(a) -> int:
    code = _load_code(a)
    config = _decoder_config(a)
    lines, traces = [], []
    for i, frame in enumerate(_read_frames(a.inp, code, a.snr)):
        res = decode(code, frame, config, a.scheme, trace=bool(a.trace))
        lines.append(json.dumps({"frame": i, "bit_errors": res.bit_errors, "s": res.stall.s,
                                 "cbar": res.ledger.average(), "windows": res.ledger.n_windows}))
        if a.trace:
            traces.append(res.trace_jsonl())
    _write(a.out, "".join(x + "\n" for x in lines))
    if a.trace:
        Path(a.trace).write_text("".join(traces))
    return 0


def cmd_sweep(a) -> int:
    code = _load_code(a)
    runs = tuple(parse_scheme(s, _decoder_config(a)) for s in a.schemes)
    cfg = ExperimentConfig(code.spec, _floats(a.snr), runs, trials=a.trials or SCALES[a.scale]["trials"],
                           seed=a.seed, min_errors=a.min_errors)
    rep = run_ber_sweep(cfg, a.workers, code)
    _write(a.out, rep.to_csv())
    if a.stats:
        Path(a.stats).write_text(rep.to_json())
    return 0


def cmd_scan(a) -> int:
    code = _load_code(a)
    for snr, p in scan_stall_region(code, _floats(a.snr), a.trials, _decoder_config(a), a.seed, a.workers):
        print(f"{snr:.3f} {p:.4g}")
    return 0


def cmd_testset_build(a) -> int:
    code = _load_code(a)
    h = build_testset(code, a.out, a.snr, a.count, a.seed, _decoder_config(a), workers=a.workers)
    print(json.dumps({k: h[k] for k in ("frame_count", "e_s", "trials_run")}))
    return 0


def cmd_testset_replay(a) -> int:
    code = _load_code(a)
    runs = [parse_scheme(s, _decoder_config(a)) for s in a.schemes]
    res = replay_testset(a.inp, code, runs, a.workers)
    _write(a.out, json.dumps({k: v.summary() for k, v in res.items()}, indent=1) + "\n")
    return 0


def cmd_manip(a) -> int:
    code = _load_code(a)
    res = manipulation_experiment(code, a.snr, a.snr_manip, a.count, a.block, a.seed,
                                  _decoder_config(a), _ints(a.local), a.workers)
    _write(a.out, json.dumps(res, indent=1) + "\n")
    return 0


def cmd_report(a) -> int:
    sys.stdout.write(report(a.stats))
    return 0


def _global_args(p: argparse.ArgumentParser, default) -> None:
    p.add_argument("--seed", type=int, default=default(0))
    p.add_argument("--workers", type=int, default=default(1))
    p.add_argument("--scale", choices=sorted(SCALES), default=default("desk"))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scwind", description=__doc__)
    _global_args(p, lambda v: v)
    # the global flags are also accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    _global_args(common, lambda v: argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)

    def leaf(group, name, **kw):
        return group.add_parser(name, parents=[common], **kw)

    code = sub.add_parser("code", help="code construction").add_subparsers(dest="action", required=True)
    b = leaf(code, "build", help="lift a coupled code and write alist files")
    b.add_argument("--dv", type=int, default=5)
    b.add_argument("--dc", type=int, default=25)
    b.add_argument("--mu", type=int, default=1)
    b.add_argument("--spread", default="3,2")
    b.add_argument("--Z", "--z", dest="Z", type=int, default=None)
    b.add_argument("--L", type=int, default=None)
    b.add_argument("--out", required=True)
    b.set_defaults(fn=cmd_code_build)

    ch = sub.add_parser("channel", help="channel LLRs").add_subparsers(dest="action", required=True)
    s = leaf(ch, "sample", help="draw AWGN frames")
    _code_arg(s)
    s.add_argument("--snr", type=float, required=True)
    s.add_argument("--frames", "--trials", dest="frames", type=int, default=1)
    s.add_argument("--out", required=True, help=".npy array, otherwise a test-set file")
    s.set_defaults(fn=cmd_channel_sample)

    d = leaf(sub, "decode", help="decode stored frames")
    _code_arg(d)
    _decoder_args(d)
    d.add_argument("--scheme", choices=SCHEMES, default="fixed")
    d.add_argument("--in", dest="inp", required=True, help=".npy frames or a test-set file")
    d.add_argument("--snr", type=float, default=float("nan"), help="nominal SNR recorded with .npy frames")
    d.add_argument("--out", default="-")
    d.add_argument("--trace", help="write per-step traces as JSON lines")
    d.set_defaults(fn=cmd_decode)

    sw = leaf(sub, "sweep", help="Monte Carlo BER sweep")
    _code_arg(sw)
    _decoder_args(sw)
    sw.add_argument("--snr", required=True, help="comma-separated SNRs in dB")
    sw.add_argument("--schemes", nargs="+", default=["fixed:3", "fixed:4", "aid", "wsd", "wtd"])
    sw.add_argument("--trials", type=int, default=None)
    sw.add_argument("--min-errors", type=int, default=100)
    sw.add_argument("--out", default="-")
    sw.add_argument("--stats", help="also write full statistics as JSON")
    sw.set_defaults(fn=cmd_sweep)

    sc = leaf(sub, "scan", help="coarse stall-rate scan of the baseline decoder")
    _code_arg(sc)
    _decoder_args(sc)
    sc.add_argument("--snr", required=True)
    sc.add_argument("--trials", type=int, default=100)
    sc.set_defaults(fn=cmd_scan)

    ts = sub.add_parser("testset", help="stall test sets").add_subparsers(dest="action", required=True)
    tb = leaf(ts, "build", help="collect frames that stall under the baseline")
    _code_arg(tb)
    _decoder_args(tb)
    tb.add_argument("--snr", type=float, required=True)
    tb.add_argument("--count", type=int, required=True)
    tb.add_argument("--out", required=True)
    tb.set_defaults(fn=cmd_testset_build)
    tr = leaf(ts, "replay", help="decode a test set with several schemes")
    _code_arg(tr)
    _decoder_args(tr)
    tr.add_argument("--in", dest="inp", required=True)
    tr.add_argument("--schemes", nargs="+", default=["fixed:3", "fixed:4", "aid", "wsd", "wtd"])
    tr.add_argument("--out", default="-")
    tr.set_defaults(fn=cmd_testset_replay)

    m = leaf(sub, "manip", help="single-block SNR manipulation experiment")
    _code_arg(m)
    _decoder_args(m)
    m.add_argument("--snr", type=float, required=True)
    m.add_argument("--snr-manip", type=float, required=True)
    m.add_argument("--block", type=int, default=10)
    m.add_argument("--count", type=int, default=200)
    m.add_argument("--local", default="8,12,4", help="first,last,iterations of the local boost")
    m.add_argument("--out", default="-")
    m.set_defaults(fn=cmd_manip)

    r = leaf(sub, "report", help="summarize sweep statistics")
    r.add_argument("stats", nargs="+")
    r.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    return a.fn(a)


if __name__ == "__main__":
    sys.exit(main())
