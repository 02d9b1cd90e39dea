import json
import math
import struct

import numpy as np
import pytest

from scwind.code import CodeError
from scwind.decoder import DecoderConfig, GeometryError, decode_fixed
from scwind.harness import (CSV_COLUMNS, ExperimentConfig, PointStats, SchemeRun, StatsReport, TestsetError,
                            build_testset, channel_calibration, post_ber_ratio, manipulation_experiment,
                            parse_scheme, read_testset, replay_testset, report, run_ber_sweep,
                            scan_stall_region, write_testset)

from conftest import small_code

CFG = DecoderConfig(w=3, i_min=2, i_max=4, n_b=1)


@pytest.fixture(scope="module")
def code():
    return small_code(Z=8, L=8)


def runs(cfg=CFG):
    return tuple(parse_scheme(s, cfg) for s in ("fixed:2", "fixed:3", "aid", "wsd", "wtd"))


@pytest.mark.parametrize("text,label,scheme,it", [
    ("fixed", "fixed2", "fixed", 2), ("fixed:5", "fixed5", "fixed", 5), ("wtd", "wtd", "wtd", None),
])
def test_parse_scheme(text, label, scheme, it):
    r = parse_scheme(text, CFG)
    assert (r.label, r.scheme, r.iterations) == (label, scheme, it)


@pytest.mark.parametrize("text", ["wsd:3", "foo", "fixed:x"])
def test_parse_scheme_rejects(text):
    with pytest.raises(ValueError):
        parse_scheme(text, CFG)


@pytest.mark.parametrize("kw", [dict(trials=0), dict(schemes=()), dict(min_errors=0)])
def test_experiment_config_rejects(code, kw):
    base = dict(code=code.spec, snrs=(3.0,), schemes=runs())
    with pytest.raises(ValueError):
        ExperimentConfig(**{**base, **kw})


def test_duplicate_labels_rejected(code):
    r = parse_scheme("aid", CFG)
    with pytest.raises(ValueError):
        ExperimentConfig(code.spec, (3.0,), (r, r))


def test_noise_free_sweep(code):
    cfg = ExperimentConfig(code.spec, (12.0,), runs(), trials=5, seed=1)
    rep = run_ber_sweep(cfg)
    for p in rep.points:
        assert p.ber == 0 and p.p_stall == 0 and p.trials == 5
    assert rep.point(12.0, "fixed2").cbar == 2 * 3
    assert rep.point(12.0, "fixed3").cbar == 3 * 3


def test_csv_layout(code):
    cfg = ExperimentConfig(code.spec, (12.0, 11.0), runs(), trials=2)
    lines = run_ber_sweep(cfg).to_csv().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 1 + 2 * 5
    assert lines[1].startswith("12.0,fixed2,2,0.0,0.0,nan,6.0,")


@pytest.fixture(scope="module")
def noisy_sweep(code):
    cfg = ExperimentConfig(code.spec, (2.0, 2.8), runs(), trials=24, seed=7, min_errors=6)
    return cfg, run_ber_sweep(cfg)


def test_sweep_independent_of_workers(code, noisy_sweep):
    cfg, rep = noisy_sweep
    assert run_ber_sweep(cfg, workers=3).to_csv() == rep.to_csv()


def test_stop_rule(noisy_sweep):
    _, rep = noisy_sweep
    for p in rep.points:
        assert p.frame_errors == 6 or p.trials == 24
        assert p.frame_errors <= 6
    assert any(p.trials < 24 for p in rep.points)


def test_counting_conservation(noisy_sweep):
    _, rep = noisy_sweep
    for p in rep.points:
        assert 0 <= p.bit_errors <= p.total_bits
        assert len(p.stalls) <= p.trials
        assert all(1 <= s <= p.L for s in p.stalls)
        assert 0 <= p.ber <= 1 and 0 <= p.p_stall <= 1
        if p.stalls:
            assert 1 <= p.e_s <= p.L
        assert sum(p.histogram()) == len(p.stalls)


def test_stats_json_roundtrip(noisy_sweep):
    _, rep = noisy_sweep
    back = StatsReport.from_json(rep.to_json())
    assert back.to_csv() == rep.to_csv()


def test_unreadable_code_descriptor(tmp_path):
    cfg = ExperimentConfig(str(tmp_path / "missing"), (3.0,), runs(), trials=1)
    with pytest.raises(CodeError):
        run_ber_sweep(cfg)


def test_scan_reports_rates(code):
    out = scan_stall_region(code, (1.5, 12.0), trials=6, config=CFG)
    assert out[0][0] == 1.5 and out[1] == (12.0, 0.0)
    assert out[0][1] > 0


# test sets -------------------------------------------------------------------

def test_empty_testset(tmp_path, code):
    path = tmp_path / "empty.scts"
    header = build_testset(code, path, 2.0, 0, config=CFG)
    ts = read_testset(path)
    assert ts.header["frame_count"] == 0 == header["frame_count"]
    assert ts.llrs.shape == (0, code.L * code.n)


def test_testset_byte_layout(tmp_path):
    path = tmp_path / "t.scts"
    llrs = np.array([[1.5, -2.0, 0.25], [3.0, 4.0, -5.0]], dtype=np.float32)
    write_testset(path, {"L": 1, "n": 3, "snr_db": 2.0}, [7, 9], llrs)
    raw = path.read_bytes()
    assert raw[:4] == b"SCTS"
    version, hlen = struct.unpack_from("<HI", raw, 4)
    assert version == 1
    header = json.loads(raw[10:10 + hlen])
    assert header["frame_count"] == 2
    rec = raw[10 + hlen:]
    assert len(rec) == 2 * (4 + 3 * 4)
    assert struct.unpack_from("<I3f", rec, 0) == (7, 1.5, -2.0, 0.25)
    assert struct.unpack_from("<I3f", rec, 16) == (9, 3.0, 4.0, -5.0)
    ts = read_testset(path)
    assert ts.stall_positions.tolist() == [7, 9]
    assert np.array_equal(ts.llrs, llrs)


@pytest.mark.parametrize("damage", ["magic", "truncate"])
def test_testset_corrupt(tmp_path, damage):
    path = tmp_path / "t.scts"
    write_testset(path, {"L": 1, "n": 2}, [1], np.zeros((1, 2), dtype=np.float32))
    raw = path.read_bytes()
    path.write_bytes(b"XXXX" + raw[4:] if damage == "magic" else raw[:-3])
    with pytest.raises(TestsetError):
        read_testset(path)


@pytest.fixture(scope="module")
def testset(tmp_path_factory, code):
    path = tmp_path_factory.mktemp("ts") / "stalls.scts"
    header = build_testset(code, path, 2.0, 6, seed=3, config=CFG)
    return path, header


def test_testset_header(code, testset):
    path, header = testset
    ts = read_testset(path)
    h = ts.header
    assert h["frame_count"] == 6 and h["L"] == code.L and h["n"] == code.n
    assert h["code"] == code.spec.to_dict()
    assert sum(h["histogram"]) == 6
    assert h["e_s"] == pytest.approx(ts.stall_positions.mean())


def test_testset_frames_stall_again(code, testset):
    path, _ = testset
    ts = read_testset(path)
    for frame, s in zip(ts.frames(), ts.stall_positions):
        res = decode_fixed(code, frame, CFG)
        assert res.stall.s == s


def test_testset_build_independent_of_workers(tmp_path, code, testset):
    path, _ = testset
    other = tmp_path / "w2.scts"
    build_testset(code, other, 2.0, 6, seed=3, config=CFG, workers=2)
    assert other.read_bytes() == path.read_bytes()


def test_replay(code, testset):
    path, _ = testset
    res = replay_testset(path, code, runs())
    base = res["fixed2"]
    assert base.frames == 6 and base.stall_rate == 1.0
    assert res["fixed3"].cbar == 9.0
    assert all(v.frames == 6 for v in res.values())


def test_replay_geometry_mismatch(testset):
    path, _ = testset
    with pytest.raises(GeometryError):
        replay_testset(path, small_code(Z=8, L=7), runs())


@pytest.mark.parametrize("kw", [dict(max_trials=16), dict(min_rate=0.5)])
def test_testset_aborts_outside_stall_region(tmp_path, code, kw):
    with pytest.raises(TestsetError, match="outside the stall region"):
        build_testset(code, tmp_path / "x.scts", 12.0, 2, config=CFG, **kw)


# manipulation and reports -------------------------------------------------------

def test_manipulation_experiment(code):
    out = manipulation_experiment(code, 4.0, 1.0, count=6, block=4, seed=2, config=CFG, local=(3, 5, 3))
    assert set(out["variants"]) == {"fixed", "local", "wtd"}
    assert out["tail_from"] == 4 + 3 + 1
    for v in out["variants"].values():
        assert v["frames"] == 6
        assert 0 <= v["stall_rate"] <= 1
        assert 0 <= v["tail_fraction"] <= 1
    assert out["variants"]["fixed"]["cbar"] == 6.0
    assert out["variants"]["local"]["cbar"] > 6.0


def test_report_ratio_with_stall_at_end(tmp_path):
    p = PointStats(3.0, "fixed3", L=10, n=100, trials=4, stalls=[10], cbar_sum=4 * 27.0, pre_errors=20)
    assert p.predicted_post_ber() == 0.0 and post_ber_ratio(p) == 1.0
    f = tmp_path / "s.json"
    f.write_text(StatsReport([p]).to_json())
    text = report([f])
    row = text.splitlines()[1].split()
    assert row[:4] == ["3.000", "fixed3", "4", "27.0000"]
    assert row[-1] == "1.000"


def test_soft_ber_calibration():
    est, exact = channel_calibration(1.0, 0.8, 10**6, seed=5)
    assert exact > 1e-3
    assert abs(est - exact) / exact < 0.05


def test_schemerun_local_iterations(code):
    from scwind.channel import awgn_llrs
    r = SchemeRun("local", "fixed", CFG, local_iterations=(2, 3, 4))
    res = r.run(code, awgn_llrs(code.L, code.n, math.inf, code.rate, 0))
    assert sorted({i for i, _ in res.ledger.entries}) == [2, 4]
