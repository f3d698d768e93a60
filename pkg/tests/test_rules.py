import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from osdlab import rules as R
from osdlab.channel import ChannelParams
from osdlab.codebook import CodeSpec, code_by_name, minimum_distance, weight_spectrum
from osdlab.gf2 import BitMatrix, parity_check_matrix
from osdlab.harness import ExperimentConfig, _frame, run_rule_agreement
from osdlab.osd import _reencode, phase_supports, prepare

Z12 = np.array(list(itertools.product([0, 1], repeat=12)), dtype=np.int64)


@pytest.fixture(scope="module")
def code12():
    rng = np.random.default_rng(5)
    while True:
        g = rng.integers(0, 2, (6, 12), dtype=np.uint8)
        try:
            d = minimum_distance(g)
        except ValueError:
            continue
        if d >= 4:
            return CodeSpec(12, 6, d, g)


@pytest.fixture(scope="module")
def code64():
    return code_by_name("ebch-64-30")


def pattern_probs(pe):
    return np.prod(np.where(Z12 == 1, pe, 1 - pe), axis=1)


def bayes_hard(pe, support, d, k=6, r=6):
    """P(e_B = e | D_e = d, alpha) by enumerating all channel error patterns.

    A missing candidate's parity part is uniform under the Binomial spectrum.
    """
    e = np.zeros(k, dtype=np.int64)
    e[list(support)] = 1
    pz = pattern_probs(pe)
    hit_rows = (Z12[:, :k] == e).all(axis=1)
    j = d - len(support)
    hit = pz[hit_rows & (Z12[:, k:].sum(axis=1) == j)].sum()
    miss = pz[~hit_rows].sum() * comb(r, j) / 2**r
    return hit / (hit + miss)


def bayes_soft(pe, support, diff, k=6, r=6):
    e = np.zeros(k, dtype=np.int64)
    e[list(support)] = 1
    pz = pattern_probs(pe)
    hit_rows = (Z12[:, :k] == e).all(axis=1)
    hit = pz[hit_rows & (Z12[:, k:] == diff).all(axis=1)].sum()
    miss = pz[~hit_rows].sum() / 2**r
    return hit / (hit + miss)


def bayes_promising(pe, support, d_H, k=6, r=6):
    e = np.zeros(k, dtype=np.int64)
    e[list(support)] = 1
    pz = pattern_probs(pe)
    hit_rows = (Z12[:, :k] == e).all(axis=1)
    top = d_H - len(support)
    hit = pz[hit_rows & (Z12[:, k:].sum(axis=1) <= top)].sum()
    miss_cdf = sum(comb(r, j) for j in range(top + 1)) / 2**r
    return hit + pz[~hit_rows].sum() * miss_cdf


def frames12(code, snr, count=60, seed=3):
    p = ChannelParams.from_snr_db(snr)
    for t in range(count):
        of = prepare(_frame(code, p, seed, t), code)
        yield of, R.frame_stats(of.alpha_sorted, code.k, p)


def candidates(of, k, m=2, per_phase=5):
    for w in range(m + 1):
        for sup in phase_supports(k, w, "WeightLex")[:per_phase]:
            c = _reencode(of, sup)
            yield sup, c != of.y_sorted


# ----- configuration -----------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [
        {"rule": "FOO"},
        {"rule": "HISR", "p_t_suc": 1.5},
        {"rule": "HDR", "p_t_pro": -0.1},
        {"rule": "DNC", "lam": -1},
        {"rule": "PSC", "tau": -1},
        {"rule": "HDR", "ell_step": 0},
        {"rule": "HISR", "eval_mode": "Slow"},
    ],
)
def test_rule_config_rejects_bad_values(kwargs):
    with pytest.raises(ValueError):
        R.RuleConfig(**kwargs)


def test_rule_families():
    assert R.RuleConfig("SGSR").is_stopping and R.RuleConfig("SGSR").is_group
    assert R.RuleConfig("SDR").is_discarding and not R.RuleConfig("SDR").is_stopping


def test_tep_probability_is_product(code12):
    of, fs = next(frames12(code12, 2.0))
    e = np.zeros(6)
    e[[1, 4]] = 1
    direct = np.prod(np.where(e == 1, fs.pe[:6], 1 - fs.pe[:6]))
    assert np.exp(R.tep_log_pe(fs, [1, 4])) == pytest.approx(direct, rel=1e-12)
    with pytest.raises(IndexError):
        R.tep_log_pe(fs, [7])


# ----- brute-force Bayes oracles on a (12,6) code -------------------------------


def test_hisr_exact_equals_bayes_posterior(code12):
    spec = weight_spectrum(code12, "Binomial")
    for snr in (1.0, 3.0):
        rctx = R.RuleContext(12, 6, code12.d_H, ChannelParams.from_snr_db(snr), spec)
        for of, fs in frames12(code12, snr, count=20):
            for sup, diff in candidates(of, 6):
                want = bayes_hard(fs.pe, sup, int(diff.sum()))
                assert R.hisr_prob(fs, sup, int(diff.sum()), rctx, "Exact") == pytest.approx(want, abs=1e-9)


def test_hisr_fast_close_to_bayes_posterior(code12):
    gaps = []
    for of, fs in frames12(code12, 2.0):
        for sup, diff in candidates(of, 6):
            d = int(diff.sum())
            gaps.append(abs(R.hisr_prob(fs, sup, d) - bayes_hard(fs.pe, sup, d)))
    assert max(gaps) <= 0.05


def test_sisr_fast_equals_bayes_posterior(code12):
    spec = weight_spectrum(code12, "Binomial")
    rctx = R.RuleContext(12, 6, code12.d_H, ChannelParams.from_snr_db(2.0), spec)
    for of, fs in frames12(code12, 2.0, count=30):
        for sup, diff in candidates(of, 6):
            want = bayes_soft(fs.pe, sup, diff[6:].astype(np.int64))
            assert R.sisr_prob(fs, sup, diff[6:]) == pytest.approx(want, abs=1e-9)
            assert R.sisr_prob(fs, sup, diff[6:], rctx, "Exact") == pytest.approx(want, abs=1e-9)


def test_hdr_exact_equals_enumeration(code12):
    spec = weight_spectrum(code12, "Binomial")
    rctx = R.RuleContext(12, 6, code12.d_H, ChannelParams.from_snr_db(2.0), spec)
    for of, fs in frames12(code12, 2.0, count=20):
        for sup, _ in candidates(of, 6):
            want = bayes_promising(fs.pe, sup, code12.d_H)
            assert R.hdr_prob(fs, sup, code12.d_H, rctx, "Exact") == pytest.approx(want, abs=1e-9)


# ----- limits and tie handling ---------------------------------------------------


def certain_frame(k=6, n=12, snr=2.0, wrong=()):
    """Reliabilities that make the MRB bits in ``wrong`` certain errors and the rest certain."""
    p = ChannelParams.from_snr_db(snr)
    alpha = np.full(n, 0.5)
    alpha[:k] = 60.0
    fs = R.frame_stats(alpha, k, p)
    pe = fs.pe.copy()
    log_pe, log_qe = fs.log_pe.copy(), fs.log_qe.copy()
    for u in wrong:
        pe[u], log_pe[u], log_qe[u] = 1.0, 0.0, -np.inf
    return R.FrameStats(alpha, k, p, pe, log_pe, log_qe)


def test_hisr_limits():
    fs = certain_frame(wrong=[2])
    assert R.hisr_prob(fs, [2], 3) == pytest.approx(1.0)
    assert R.hisr_check(fs, [2], 3, R.RuleConfig("HISR", p_t_suc=1.0)).action is R.Action.STOP
    fs0 = certain_frame()
    assert R.hisr_prob(fs0, [2], 3) == pytest.approx(0.0, abs=1e-12)


def test_sisr_limits():
    fs = certain_frame(wrong=[0, 5])
    assert R.sisr_prob(fs, [0, 5], np.zeros(6, bool)) == pytest.approx(1.0)
    assert R.sisr_prob(certain_frame(), [0, 5], np.zeros(6, bool)) == pytest.approx(0.0, abs=1e-12)


def test_stop_ties_fire_and_discard_ties_continue(code12):
    of, fs = next(frames12(code12, 2.0))
    sup = np.array([5])
    score = R.hisr_prob(fs, sup, 3)
    assert R.hisr_check(fs, sup, 3, R.RuleConfig("HISR", p_t_suc=score)).action is R.Action.STOP
    pro = R.hdr_prob(fs, sup, code12.d_H)
    verdict = R.hdr_check(fs, sup, R.RuleConfig("HDR", p_t_pro=pro), code12.d_H)
    assert verdict.action is R.Action.CONTINUE
    assert R.hdr_check(fs, sup, R.RuleConfig("HDR", p_t_pro=0.0), code12.d_H).action is R.Action.CONTINUE


def test_hdr_full_support_never_discards(code12):
    _, fs = next(frames12(code12, 2.0))
    assert R.hdr_prob(fs, [0], 12) == pytest.approx(1.0, abs=1e-2)
    assert R.hdr_prob(fs, [0, 1, 2], 2) == 0.0


def test_sdr_limits(code12):
    _, fs = next(frames12(code12, 2.0))
    assert R.sdr_prob(fs, [0], np.inf) == 1.0
    heavy = float(fs.alpha[[0, 1]].sum())
    assert R.sdr_prob(fs, [0, 1], heavy * 0.5) < 1e-3


def test_group_rules_limits(code12):
    _, fs = next(frames12(code12, 2.0))
    assert R.hgsr_prob(fs, 6, 0) == 1.0
    assert R.sgsr_prob(fs, 6, 0.0) == 1.0
    assert R.sgsr_prob(fs, 1, 0.0) > 0.99
    with pytest.raises(ValueError):
        R.hgsr_prob(fs, 7, 0)


def test_dnc_bound():
    p = ChannelParams.from_snr_db(2.0)
    alpha = np.array([3.0, 2.0, 1.0, 0.5, 0.25])
    fs = R.frame_stats(alpha, 3, p)
    assert R.dnc_bound(fs, 1.2, 2.0) == pytest.approx(1.2 * 6.0 / (6.0 + 2.0 * 0.75))
    cfg = R.RuleConfig("DNC", lam=2.0)
    assert R.dnc_check(fs, [], 1.2, cfg).action is R.Action.CONTINUE
    assert R.dnc_check(fs, [0], 1.2, cfg).action is R.Action.DISCARD
    assert R.dnc_check(fs, [2], np.inf, cfg).action is R.Action.CONTINUE


def test_psc_weight_is_parity_disagreement(code64):
    p = ChannelParams.from_snr_db(3.0)
    of = prepare(_frame(code64, p, 9, 0), code64)
    H = parity_check_matrix(BitMatrix.from_array(of.Gsys))
    for sup in ([], [29], [3, 17]):
        c = _reencode(of, sup)
        assert R.psc_syndrome_weight(of.y_sorted, sup, H) == int((c[30:] != of.y_sorted[30:]).sum())


def test_psc_zero_syndrome_on_clean_parity(code64):
    p = ChannelParams.from_snr_db(3.0)
    of = prepare(_frame(code64, p, 9, 1), code64)
    H = parity_check_matrix(BitMatrix.from_array(of.Gsys))
    sup = [2, 11]
    c = _reencode(of, sup)
    y = of.y_sorted.copy()
    y[30:] = c[30:]
    assert R.psc_check(y, sup, R.RuleConfig("PSC", tau=0), H).action is R.Action.STOP


def test_weighted_bernoulli_cdf_matches_enumeration(rng):
    w = rng.uniform(0.1, 2.0, 10)
    p = rng.uniform(0.0, 0.6, 10)
    sums, probs = [], []
    for bits in itertools.product([0, 1], repeat=10):
        b = np.array(bits)
        sums.append(b @ w)
        probs.append(np.prod(np.where(b == 1, p, 1 - p)))
    sums, probs = np.array(sums), np.array(probs)
    for x in (0.5, 2.0, 4.5, 8.0):
        want = probs[sums < x].sum()
        assert R._weighted_bernoulli_cdf(w, p, x) == pytest.approx(want, abs=2e-3)


def test_sgsr_exact_hit_moments_match_enumeration(code12):
    _, fs = next(frames12(code12, 1.0))
    spec = weight_spectrum(code12, "Binomial")
    rctx = R.RuleContext(12, 6, code12.d_H, fs.params, spec)
    i = 2
    _, p_le, m_hit, v_hit, _, _ = R._sgsr_moments(fs, i, "Exact", rctx)
    pz = pattern_probs(fs.pe)
    keep = Z12[:, :6].sum(axis=1) <= i
    d = Z12 @ fs.alpha
    w = pz[keep] / pz[keep].sum()
    assert p_le == pytest.approx(pz[keep].sum(), abs=1e-12)
    assert m_hit == pytest.approx(w @ d[keep], rel=1e-9)
    assert v_hit == pytest.approx(w @ d[keep] ** 2 - (w @ d[keep]) ** 2, rel=1e-6)


# ----- monotonicity in Pe(e | alpha) -------------------------------------------------


def _phase_scores(fn, fs, k, w):
    sup = phase_supports(k, w, "WeightThenReliability", fs.alpha[:k])
    return sup, np.array([fn(s) for s in sup])


def test_hdr_monotone_in_tep_probability(code64):
    p = ChannelParams.from_snr_db(2.0)
    for t in range(100):
        of = prepare(_frame(code64, p, 40, t), code64)
        fs = R.frame_stats(of.alpha_sorted, 30, p)
        sup, scores = _phase_scores(lambda s: R.hdr_prob(fs, s, code64.d_H), fs, 30, 2)
        pe = np.array([R.tep_log_pe(fs, s) for s in sup])
        order = np.argsort(pe)
        assert np.all(np.diff(scores[order]) >= -1e-12)


def test_sdr_monotone_along_schedule(code64):
    p = ChannelParams.from_snr_db(2.0)
    for t in range(100):
        of = prepare(_frame(code64, p, 41, t), code64)
        fs = R.frame_stats(of.alpha_sorted, 30, p)
        d_min = float(of.alpha_sorted[30:][of.y_sorted[30:] != _reencode(of, [])[30:]].sum())
        _, scores = _phase_scores(lambda s: R.sdr_prob(fs, s, d_min), fs, 30, 2)
        assert np.all(np.diff(scores) <= 1e-12)


@pytest.mark.parametrize("rule", ["HDR", "SDR"])
def test_discard_suffix_property(code64, rule):
    """Once a discard fires in a phase, the next 32 TEPs of that phase would fire too."""
    p = ChannelParams.from_snr_db(2.0)
    cfg = R.RuleConfig(rule, p_t_pro=0.1 if rule == "HDR" else 1e-3)
    fired = 0
    for t in range(60):
        of = prepare(_frame(code64, p, 42, t), code64)
        fs = R.frame_stats(of.alpha_sorted, 30, p)
        d_min = float(of.alpha_sorted[of.y_sorted != _reencode(of, [])].sum())
        sup = phase_supports(30, 2, "WeightThenReliability", fs.alpha[:30])
        check = (
            (lambda s: R.hdr_check(fs, s, cfg, code64.d_H))
            if rule == "HDR"
            else (lambda s: R.sdr_check(fs, s, d_min, cfg))
        )
        for idx, s in enumerate(sup):
            if check(s).action is R.Action.DISCARD:
                fired += 1
                assert all(check(x).action is R.Action.DISCARD for x in sup[idx + 1 : idx + 33])
                break
    assert fired > 0


@given(st.integers(0, 10_000), st.floats(0.0, 5.0))
@settings(max_examples=40)
def test_scores_are_probabilities(seed, snr):
    code = code_by_name("ebch-16-7")
    p = ChannelParams.from_snr_db(snr)
    of = prepare(_frame(code, p, seed, 0), code)
    fs = R.frame_stats(of.alpha_sorted, 7, p)
    for sup, diff in candidates(of, 7):
        d = int(diff.sum())
        d_w = float(of.alpha_sorted[diff].sum())
        for score in (
            R.hisr_prob(fs, sup, d),
            R.sisr_prob(fs, sup, diff[7:]),
            R.hdr_prob(fs, sup, code.d_H),
            R.sdr_prob(fs, sup, d_w),
            R.hgsr_prob(fs, len(sup), d),
            R.sgsr_prob(fs, len(sup), d_w),
        ):
            assert 0.0 <= score <= 1.0


# ----- Fast versus Exact ---------------------------------------------------------------


@pytest.fixture(scope="module")
def agreement():
    cfg = ExperimentConfig(code="ebch-64-30", snr_db=(2.0,), order=2, trials=1000, seed=8, kind="rule_agreement")
    return {row["rule"]: row for row in run_rule_agreement(cfg).rows}


@pytest.mark.slow
@pytest.mark.parametrize("rule", ["HISR", "HDR", "SISR", "SDR"])
def test_fast_matches_exact_on_1000_pairs(agreement, rule):
    row = agreement[rule]
    assert row["pairs"] == 1000
    assert row["max_gap"] <= 0.05, row
