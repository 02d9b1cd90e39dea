"""Acceptance criteria 1-9.

Each test records one PASS/FAIL line; the lines are printed together in the
terminal summary. The stall-region experiments run on a (5,25) chain with
Z=480 and L=30 because the Z=96 desk code has no stall region (see the
decisions ledger). The operating points below were fixed from a coarse scan
before these tests were run. Skip the slow experiments with ``-m "not slow"``.
"""

import math
import warnings

import numpy as np
import pytest

from scwind.bp import LLR_MAX, MessageStore, hard_decision, soft_ber
from scwind.channel import awgn_llrs
from scwind.code import CodeSpec, CoupledCode, GirthWarning
from scwind.decoder import DecoderConfig, decode, decode_aid, decode_fixed, decode_wsd, decode_wtd
from scwind.harness import (Z95, ExperimentConfig, build_testset, channel_calibration, post_ber_ratio,
                            manipulation_experiment, parse_scheme, replay_testset, run_ber_sweep)

from conftest import small_code

STALL_SPEC = CodeSpec(Z=480, L=30, seed=1)
SNR_STALL = 3.05          # criterion 5
TRIALS_STALL = 1000
SNR_TESTSET = 2.9         # criterion 6 and second criterion 8 point
TESTSET_FRAMES = 500
TRIALS_POST_BER = 300
SNR_NOMINAL = 3.2         # criterion 7
SNR_MANIP = 2.0
MANIP_FRAMES = 300
MANIP_BLOCK = 10
FRAMES = 100

ACCEPTANCE: list[tuple[int, bool, str]] = []


def record(k: int, ok: bool, detail: str) -> None:
    ACCEPTANCE.append((k, bool(ok), detail))
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def small():
    return small_code(Z=8, L=12)


@pytest.fixture(scope="module")
def big():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GirthWarning)
        return CoupledCode.build(STALL_SPEC)


def frames(code, snr, count=FRAMES, seed=11):
    return [awgn_llrs(code.L, code.n, snr, code.rate, seed, t) for t in range(count)]


def same(a, b):
    return (np.array_equal(a.app, b.app) and np.array_equal(a.bits, b.bits)
            and a.ledger.entries == b.ledger.entries and a.stall.s == b.stall.s)


def dense_flooding(code, llr, iterations):
    """Sum-product flooding written against the dense parity-check matrix."""
    rows, cols = np.nonzero(code.to_dense())
    v2c = llr[cols].astype(np.float64)
    c2v = np.zeros_like(v2c)
    phi = lambda x: -np.log(np.tanh(np.maximum(x, 1e-300) / 2))
    for _ in range(iterations):
        mag = phi(np.abs(v2c))
        neg = (v2c < 0).astype(np.int64)
        row_mag = np.bincount(rows, mag, minlength=rows.max() + 1)
        row_neg = np.bincount(rows, neg, minlength=rows.max() + 1)
        ext = row_mag[rows] - mag
        val = np.where(ext > 0, np.minimum(phi(ext), LLR_MAX), LLR_MAX)
        c2v = np.where((row_neg[rows] - neg) % 2, -val, val)
        total = llr + np.bincount(cols, c2v, minlength=llr.size)
        v2c = np.clip(total[cols] - c2v, -LLR_MAX, LLR_MAX)
    return np.clip(total, -LLR_MAX, LLR_MAX)


# 1 ---------------------------------------------------------------------------

@pytest.mark.parametrize("w,I", [(12, 3), (15, 5)])
def test_criterion_1_whole_chain_window_is_flooding(small, w, I):
    bad = []
    for f in frames(small, 1.8):
        res = decode_fixed(small, f, DecoderConfig(w=w, i_min=I))
        store = MessageStore.init(small, f.llr)
        store.flood(I)
        ref = dense_flooding(small, f.llr, I)
        if not (np.array_equal(res.app, store.app) and np.array_equal(res.bits, hard_decision(store.app))
                and np.allclose(res.app, ref, rtol=1e-9, atol=1e-9)
                and np.array_equal(res.bits, hard_decision(ref))):
            bad.append(f.trial)
    record(1, not bad, f"w={w} I={I}: {FRAMES - len(bad)}/{FRAMES} frames identical to flooding")


# 2 ---------------------------------------------------------------------------

def never(state, config):
    return False


@pytest.mark.parametrize("variant", ["aid", "wsd", "wtd"])
def test_criterion_2_degeneration(small, variant):
    cfg = DecoderConfig(w=4, i_min=3, i_max=3 if variant == "aid" else 6)
    bad = 0
    for f in frames(small, 1.9):
        if variant == "aid":
            got = decode_aid(small, f, cfg)
        else:
            got = (decode_wsd if variant == "wsd" else decode_wtd)(small, f, cfg, detector=never)
        bad += not same(got, decode_fixed(small, f, cfg))
    record(2, bad == 0, f"{variant}: {FRAMES - bad}/{FRAMES} frames bit-identical to fixed(i_min)")


# 3 ---------------------------------------------------------------------------

@pytest.mark.parametrize("I", [3, 4])
def test_criterion_3_fixed_complexity(small, I):
    cfg = DecoderConfig(w=9, i_min=I)
    cbars = {decode_fixed(small, f, cfg).ledger.average() for f in frames(small, 2.0, 20)}
    record(3, cbars == {I * 9.0}, f"fixed{I}: cbar values {sorted(cbars)} (expected {I * 9.0})")


def test_criterion_3_ledger_matches_sweeps(small):
    cfg = DecoderConfig(w=4, i_min=3, i_max=6)
    results = [decode(small, f, cfg, s) for f in frames(small, 1.8) for s in ("fixed", "aid", "wsd", "wtd")]
    bad = sum(r.ledger.total_iterations != r.cn_sweeps for r in results)
    record(3, bad == 0, f"ledger iteration sum equals CN sweep count on {4 * FRAMES - bad}/{4 * FRAMES} decodes")


# 4 ---------------------------------------------------------------------------

def test_criterion_4_soft_ber_values():
    a, b = soft_ber(np.zeros(7)), soft_ber(np.array([0.0, math.log(3)]))
    record(4, a == 0.5 and b == 0.375, f"soft_ber(zeros)={a!r} soft_ber(0, ln 3)={b!r}")


@pytest.mark.parametrize("snr", [0.0, 2.0, 4.0, 6.0])
def test_criterion_4_calibration(snr):
    est, exact = channel_calibration(snr, 0.8, 10**6, seed=int(snr * 10))
    rel = abs(est - exact) / exact
    record(4, exact >= 1e-3 and rel < 0.05, f"{snr} dB: estimate {est:.5g} vs Q(1/sigma) {exact:.5g} (rel {rel:.3%})")


# 5 and 8 ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def stall_sweep(big):
    runs = tuple(parse_scheme(s) for s in ("fixed:3", "fixed:4"))
    cfg = ExperimentConfig(STALL_SPEC, (SNR_STALL,), runs, trials=TRIALS_STALL, seed=5, min_errors=10**9)
    return run_ber_sweep(cfg, code=big)


@pytest.mark.slow
def test_criterion_5_stall_phenomenon(stall_sweep):
    p3 = stall_sweep.point(SNR_STALL, "fixed3")
    p4 = stall_sweep.point(SNR_STALL, "fixed4")
    ratio = p3.p_stall / p4.p_stall if p4.p_stall else math.inf
    record(5, p3.p_stall >= 1e-3 and ratio >= 5,
           f"{SNR_STALL} dB, {p3.trials} frames: P_stall fixed3 {p3.p_stall:.4g} "
           f"({len(p3.stalls)} stalls), fixed4 {p4.p_stall:.4g} ({len(p4.stalls)}), ratio {ratio:.3g}")


@pytest.fixture(scope="module")
def post_ber_points(big, stall_sweep):
    cfg = ExperimentConfig(STALL_SPEC, (SNR_TESTSET,), (parse_scheme("fixed:3"),), trials=TRIALS_POST_BER,
                           seed=6, min_errors=10**9)
    return [run_ber_sweep(cfg, code=big).point(SNR_TESTSET, "fixed3"), stall_sweep.point(SNR_STALL, "fixed3")]


@pytest.mark.slow
@pytest.mark.parametrize("idx", [0, 1])
def test_criterion_8_post_ber_prediction(post_ber_points, idx):
    p = post_ber_points[idx]
    r = post_ber_ratio(p)
    record(8, 0.5 <= r <= 2, f"{p.snr_db} dB: measured BER {p.ber:.4g}, predicted "
                            f"{p.predicted_post_ber():.4g} (E[s]={p.e_s:.2f}, P_pre={p.p_pre:.4g}, "
                            f"P_stall={p.p_stall:.4g}), ratio {r:.3g}")


# 6 ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def replay(big, tmp_path_factory):
    path = tmp_path_factory.mktemp("acc") / "stalls.scts"
    build_testset(big, path, SNR_TESTSET, TESTSET_FRAMES, seed=7)
    runs = [parse_scheme(s) for s in ("fixed:3", "fixed:4", "aid", "wsd", "wtd")]
    return replay_testset(path, big, runs)


def _not_above(a, b):
    """False only if ``a`` exceeds ``b`` by more than the combined 95% interval."""
    half = Z95 * math.sqrt(a.stall_rate * (1 - a.stall_rate) / a.frames + b.stall_rate * (1 - b.stall_rate) / b.frames)
    return a.stall_rate - b.stall_rate <= half


@pytest.mark.slow
def test_criterion_6_stall_ordering(replay):
    chain = [replay[k] for k in ("wtd", "wsd", "aid", "fixed3")]
    ok = all(_not_above(a, b) for a, b in zip(chain, chain[1:]))
    detail = ", ".join(f"{v.label} {v.stall_rate:.3f}+-{v.ci_halfwidth:.3f}" for v in chain)
    record(6, ok, f"{chain[0].frames} test-set frames, stall survival {detail}")


@pytest.mark.slow
def test_criterion_6_complexity(replay):
    wtd, f4 = replay["wtd"].cbar, replay["fixed4"].cbar
    record(6, wtd <= 0.8 * f4, f"cbar wtd {wtd:.3f} vs fixed4 {f4:.3f} ({1 - wtd / f4:.1%} lower, need >= 20%)")


@pytest.mark.slow
def test_criterion_6_ber(replay):
    wtd, f4 = replay["wtd"].ber, replay["fixed4"].ber
    record(6, wtd <= 2 * f4, f"BER wtd {wtd:.4g} vs fixed4 {f4:.4g}")


# 7 ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def manip(big):
    return manipulation_experiment(big, SNR_NOMINAL, SNR_MANIP, MANIP_FRAMES, block=MANIP_BLOCK, seed=8)


def _mass_near(v, block):
    h = v["histogram"]
    return sum(h[block - 1:block + 2]) / max(v["stalls"], 1)


def _peak(v):
    # histogram index i counts stalls at s = i + 1
    return int(np.argmax(v["histogram"])) + 1


@pytest.mark.slow
def test_criterion_7_fixed_shape(manip):
    v = manip["variants"]["fixed"]
    ok = v["stalls"] > 0 and MANIP_BLOCK <= _peak(v) <= MANIP_BLOCK + 2 and v["tail_fraction"] >= 0.05
    record(7, ok, f"fixed: {v['stalls']}/{v['frames']} stalls, peak at s={_peak(v)}, "
                  f"mass at s in 10..12 {_mass_near(v, MANIP_BLOCK):.2f}, "
                  f"tail beyond s>{manip['tail_from']} {v['tail_fraction']:.2f}")


@pytest.mark.slow
def test_criterion_7_local_iterations(manip):
    f, loc = manip["variants"]["fixed"], manip["variants"]["local"]
    cut = 1 - loc["stalls"] / f["stalls"] if f["stalls"] else math.nan
    ok = 0.25 <= cut <= 0.55 and (loc["stalls"] == 0 or loc["tail_fraction"] > 0)
    record(7, ok, f"local iterations: {loc['stalls']} vs {f['stalls']} stalls ({cut:.1%} fewer), "
                  f"tail {loc['tail_fraction']:.2f}")


@pytest.mark.slow
def test_criterion_7_wtd_has_no_tail(manip):
    v = manip["variants"]["wtd"]
    record(7, v["tail_fraction"] == 0.0, f"wtd: {v['stalls']} stalls, tail fraction {v['tail_fraction']:.2f}")


# 9 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_9_determinism(big):
    runs = tuple(parse_scheme(s) for s in ("fixed:3", "fixed:4", "aid", "wsd", "wtd"))
    cfg = ExperimentConfig(STALL_SPEC, (SNR_TESTSET, SNR_STALL), runs, trials=16, seed=9, min_errors=10**9)
    a = run_ber_sweep(cfg, workers=1, code=big).to_csv()
    b = run_ber_sweep(cfg, workers=2, code=big).to_csv()
    c = run_ber_sweep(cfg, workers=3, code=big).to_csv()
    record(9, a == b == c, f"CSV for 1, 2 and 3 workers byte-identical: {a == b == c} ({len(a)} bytes)")
