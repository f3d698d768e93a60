import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from math import comb

from osdlab import osd
from osdlab.channel import ChannelParams, ReceivedFrame, hard_decision
from osdlab.codebook import CodeSpec, code_by_name, weight_spectrum
from osdlab.harness import _frame
from osdlab.rules import RuleConfig
from conftest import all_codewords, same_row_space


@pytest.fixture(scope="module")
def c64():
    code = code_by_name("ebch-64-30")
    return code, weight_spectrum(code, "Binomial")


def ml_decode(codewords, r):
    y = hard_decision(r)
    alpha = np.abs(r)
    whd = ((codewords != y) * alpha).sum(axis=1)
    return codewords[int(np.argmin(whd))], float(whd.min())


def is_codeword(code, c):
    return same_row_space(code.G, np.vstack([code.G, c]))


def test_schedule_counts():
    assert osd.total_teps(30, 3) == 4526
    assert sum(1 for _ in osd.tep_schedule(30, 3, "WeightLex")) == 4526
    assert list(osd.tep_schedule(7, 0, "WeightLex")) == [()]
    for k, m in [(7, 2), (16, 3)]:
        assert sum(1 for _ in osd.tep_schedule(k, m, "WeightLex")) == sum(comb(k, i) for i in range(m + 1))


def test_reliability_schedule_orders_by_support_reliability(rng):
    alpha = np.sort(rng.uniform(0, 3, 12))[::-1]
    sup = osd.phase_supports(12, 2, "WeightThenReliability", alpha)
    sums = alpha[sup].sum(axis=1)
    assert np.all(np.diff(sums) >= 0)
    assert osd.phase_supports(12, 1, "WeightThenReliability", alpha)[0].tolist() == [11]
    assert sorted(map(tuple, sup.tolist())) == sorted(map(tuple, osd.phase_supports(12, 2, "WeightLex").tolist()))
    with pytest.raises(ValueError):
        osd.phase_supports(12, 2, "WeightThenReliability")


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50)
def test_permutation_round_trip(seed):
    code = code_by_name("ebch-16-7")
    rng = np.random.default_rng(seed)
    r = rng.normal(0.5, 1.0, 16)
    of = osd.prepare(ReceivedFrame(r, hard_decision(r), np.abs(r)), code)
    vecs = rng.normal(size=(200, 16))
    for v in vecs:
        assert np.array_equal(of.to_original(of.to_decoder(v)), v)
        assert np.array_equal(of.to_decoder(of.to_original(v)), v)
    assert np.array_equal(of.r_sorted, of.to_decoder(r))


def test_prepare_sorts_and_systematizes(rng):
    code = code_by_name("ebch-16-7")
    r = rng.normal(0.3, 1.0, 16)
    of = osd.prepare(ReceivedFrame(r, hard_decision(r), np.abs(r)), code)
    assert np.array_equal(np.sort(np.abs(r))[::-1], np.abs(r)[of.pi1])
    assert np.array_equal(of.Gsys[:, :7], np.eye(7, dtype=np.uint8))
    assert same_row_space(of.Gsys, code.G[:, of.perm])


def test_prepare_handles_dependent_top_columns():
    # columns 0 and 1 are identical, so the top-2 positions cannot form a basis
    g = np.array([[1, 1, 0, 1, 0], [0, 0, 1, 1, 1]], dtype=np.uint8)
    code = CodeSpec(5, 2, 2, g)
    r = np.array([3.0, 2.5, 1.0, 0.5, 0.2])
    of = osd.prepare(ReceivedFrame(r, hard_decision(r), np.abs(r)), code)
    assert np.array_equal(of.pi1, np.arange(5))
    assert not np.array_equal(of.pi2, np.arange(5))
    assert np.array_equal(of.Gsys[:, :2], np.eye(2, dtype=np.uint8))


def test_prepare_rejects_wrong_length():
    code = code_by_name("hamming-7-4")
    with pytest.raises(ValueError):
        osd.prepare(ReceivedFrame(np.ones(6), np.zeros(6), np.ones(6)), code)


@pytest.mark.parametrize("name", ["hamming-7-4", "ebch-16-7"])
def test_full_order_matches_ml(name):
    code = code_by_name(name)
    words = all_codewords(code.G)
    p = ChannelParams.from_snr_db(1.0)
    dec = osd.OsdDecoder(code, code.k)
    for t in range(300):
        fr = _frame(code, p, 17, t)
        res = dec.decode(fr)
        best, dw = ml_decode(words, fr.r)
        assert np.array_equal(res.c_hat, best)
        assert res.d_best_W == pytest.approx(dw)


def test_decoder_outputs_codewords_with_consistent_distances(c64):
    code, _ = c64
    p = ChannelParams.from_snr_db(1.0)
    dec = osd.OsdDecoder(code, 1)
    for t in range(40):
        fr = _frame(code, p, 3, t)
        res = dec.decode(fr)
        assert is_codeword(code, res.c_hat)
        diff = res.c_hat != fr.y
        assert res.d_best_H == int(diff.sum())
        assert res.d_best_W == pytest.approx(float(fr.alpha[diff].sum()))
        assert res.teps_reencoded == res.teps_evaluated == 31


def test_best_distance_nonincreasing_in_trace(c64):
    code, _ = c64
    p = ChannelParams.from_snr_db(1.5)
    for t in range(10):
        trace = []
        osd.decode_reference(_frame(code, p, 4, t), code, 2, trace=trace)
        dws = [row[4] for row in trace]
        assert dws == sorted(dws, reverse=True)
        assert all(len(row[2]) <= row[3] <= code.n for row in trace)


def test_noiseless_frame_stops_after_one_reencoding(c64):
    code, spec = c64
    p = ChannelParams.from_snr_db(3.0)
    msg = np.random.default_rng(0).integers(0, 2, code.k)
    c = (msg @ code.G % 2).astype(np.uint8)
    r = 1.0 - 2.0 * c
    fr = ReceivedFrame(r, c.copy(), np.abs(r), c)
    for rule in ("HISR", "SISR", "PSC", "HGSR", "SGSR"):
        res = osd.decode(fr, code, 2, [RuleConfig(rule, p_t_suc=0.99, tau=0)], params=p, spectrum=spec)
        assert np.array_equal(res.c_hat, c)
        assert res.d_best_W == 0
        assert res.teps_reencoded == 1, rule


RULE_SETS = [
    [RuleConfig("HISR", p_t_suc=0.9)],
    [RuleConfig("SISR", p_t_suc=0.9)],
    [RuleConfig("PSC", tau=4)],
    [RuleConfig("HGSR", p_t_suc=0.99)],
    [RuleConfig("SGSR", p_t_suc=0.99)],
    [RuleConfig("HDR", p_t_pro=0.08)],
    [RuleConfig("HDR", adaptive=True, lam=1.0, ell_step=3)],
    [RuleConfig("SDR", p_t_pro=1e-3)],
    [RuleConfig("SDR", adaptive=True)],
    [RuleConfig("DNC", lam=1.0)],
    [RuleConfig("SISR", p_t_suc=0.9), RuleConfig("SDR", p_t_pro=1e-3)],
    [RuleConfig("HISR", p_t_suc=0.99), RuleConfig("DNC", lam=0.5)],
]


@pytest.mark.parametrize("rules", RULE_SETS, ids=lambda rs: "+".join(r.rule for r in rs))
def test_compiled_decoder_matches_reference(c64, rules):
    code, spec = c64
    p = ChannelParams.from_snr_db(2.5)
    dec = osd.OsdDecoder(code, 2, rules, params=p, spectrum=spec)
    for t in range(25):
        fr = _frame(code, p, 5, t)
        fast = dec.decode(fr)
        ref = osd.decode_reference(fr, code, 2, rules, params=p, spectrum=spec, decoder=dec)
        assert np.array_equal(fast.c_hat, ref.c_hat)
        assert (fast.teps_reencoded, fast.teps_evaluated) == (ref.teps_reencoded, ref.teps_evaluated)
        assert fast.stop_reason == ref.stop_reason
        assert fast.d_best_W == pytest.approx(ref.d_best_W)
        assert fast.teps_reencoded <= fast.teps_evaluated <= osd.total_teps(code.k, 2)


@pytest.mark.parametrize(
    "rules",
    [
        [RuleConfig("HISR", p_t_suc=1.0)],
        [RuleConfig("SISR", p_t_suc=1.0)],
        [RuleConfig("HGSR", p_t_suc=1.0)],
        [RuleConfig("SGSR", p_t_suc=1.0)],
        [RuleConfig("HDR", p_t_pro=0.0)],
        [RuleConfig("SDR", p_t_pro=0.0)],
        [RuleConfig("HISR", p_t_suc=1.0), RuleConfig("SDR", p_t_pro=0.0)],
    ],
    ids=lambda rs: "+".join(r.rule for r in rs),
)
def test_limit_thresholds_reproduce_plain_decoder(c64, rules):
    code, spec = c64
    p = ChannelParams.from_snr_db(1.5)
    plain = osd.OsdDecoder(code, 2)
    ruled = osd.OsdDecoder(code, 2, rules, params=p, spectrum=spec)
    for t in range(40):
        fr = _frame(code, p, 6, t)
        a, b = plain.decode(fr), ruled.decode(fr)
        assert np.array_equal(a.c_hat, b.c_hat)
        assert (a.teps_reencoded, a.teps_evaluated, a.d_best_H) == (b.teps_reencoded, b.teps_evaluated, b.d_best_H)


def test_exact_mode_runs_reference_path(c64):
    code, spec = c64
    p = ChannelParams.from_snr_db(3.0)
    dec = osd.OsdDecoder(code, 1, [RuleConfig("SISR", p_t_suc=0.9, eval_mode="Exact")], params=p, spectrum=spec)
    assert dec.use_reference
    res = dec.decode(_frame(code, p, 1, 0))
    assert is_codeword(code, res.c_hat)


def test_decoder_configuration_errors(c64):
    code, _ = c64
    with pytest.raises(ValueError):
        osd.OsdDecoder(code, 31)
    with pytest.raises(ValueError):
        osd.OsdDecoder(code, 1, [RuleConfig("HISR")])
    with pytest.raises(ValueError):
        osd.OsdDecoder(code, 1, [RuleConfig("HISR"), RuleConfig("SISR")], params=ChannelParams.from_snr_db(1))
    with pytest.raises(ValueError):
        osd.OsdDecoder(code, 1, ordering="Random")


def test_discard_reports_tail(c64):
    code, spec = c64
    p = ChannelParams.from_snr_db(3.0)
    res = osd.decode(_frame(code, p, 2, 0), code, 2, [RuleConfig("DNC", lam=1.0)], params=p)
    assert res.stop_reason in (osd.StopReason.DISCARD_TAIL, osd.StopReason.EXHAUSTED)
    assert res.teps_reencoded < osd.total_teps(code.k, 2)
