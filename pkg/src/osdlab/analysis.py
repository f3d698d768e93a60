"""Offline predictions of loss factors and average TEP counts.

These quantities are computed from unconditional distance models, without
decoding any frame. Each rule reduces to a per-candidate (or per-phase)
stopping probability ``P_j``. The predicted loss factor is
``theta = sum_j P_j (1 - mean success | stop) / sum_{i<=m} p_E(i)``. The
predicted FER bound (without the ML term) is ``1 - (1 - theta) sum_{i<=m} p_E(i)``.

Threshold distances use the unconditional success probability. A candidate
stops when its distance is at most the largest distance whose
unconditional success probability still meets the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from .channel import ChannelParams, log_bit_error_given_reliability
from .codebook import WeightSpectrumModel
from .dist_model import (
    ExchangeableMin,
    b_sum,
    hamming_di_mixture,
    whd_di_gauss,
    xor_weight_kernel,
)
from .ordered_stats import OrderedStatsCtx

ANALYSIS_RULES = ("HISR", "HGSR", "SGSR", "HDR")


@dataclass(frozen=True)
class Prediction:
    rule: str
    snr_db: float
    order: int
    threshold: float
    theta: float
    na: float
    fer_bound: float  # excludes the ML term
    details: dict = field(default_factory=dict)


class ReliabilitySample:
    """Sorted reliability vectors drawn once and shared across TEP averages."""

    def __init__(self, n: int, k: int, params: ChannelParams, samples: int = 2000, seed: int = 0):
        rng = np.random.default_rng(seed)
        r = 1.0 + rng.normal(0.0, params.sigma, size=(samples, n))
        self.alpha = -np.sort(-np.abs(r), axis=1)
        lp, lq = log_bit_error_given_reliability(self.alpha[:, :k], params)
        self.log_base = lq.sum(axis=1)
        self.logit = lp - lq
        self.k = k

    @property
    def mean_alpha(self) -> np.ndarray:
        return self.alpha.mean(axis=0)

    def tep_pe(self, supports: np.ndarray, chunk: int = 512) -> np.ndarray:
        """Unconditional Pe(e) for each support row, averaged over the sample."""
        supports = np.asarray(supports, dtype=np.int64)
        out = np.empty(len(supports))
        for s in range(0, len(supports), chunk):
            part = supports[s : s + chunk]
            logs = self.log_base[:, None] + self.logit[:, part].sum(axis=-1)
            out[s : s + chunk] = np.exp(logs).mean(axis=0)
        return out


def schedule_by_mean_reliability(k: int, m: int, mean_alpha: np.ndarray) -> list[np.ndarray]:
    """Per-phase supports ordered by ascending expected support reliability."""
    from .osd import phase_supports

    return [phase_supports(k, i, "WeightThenReliability", mean_alpha[:k]) for i in range(m + 1)]


def _miss_parity_law(ctx: OrderedStatsCtx, spectrum: WeightSpectrumModel, w: int) -> np.ndarray:
    """Parity-distance law of a weight-w TEP's candidate when the TEP misses (e_B != e)."""
    q_law = xor_weight_kernel(ctx.k)[:, w, :].T @ ctx.mrb_error_pmf()
    q_law[0] = 0.0
    q_law /= q_law.sum()
    ell = spectrum.pcp_table @ q_law
    return np.einsum("l,v,lvj->j", ell, ctx.error_count_pmf(ctx.k + 1, ctx.n), xor_weight_kernel(ctx.n - ctx.k))


def _threshold_index(psuc: np.ndarray, p_t: float) -> int:
    """Largest index whose success probability meets the threshold, or -1."""
    hits = np.flatnonzero(psuc >= p_t)
    return int(hits[-1]) if hits.size else -1


def _chain(masses: np.ndarray) -> np.ndarray:
    """P_j = prod_{v<j}(1 - mass_v) mass_j."""
    survive = np.concatenate([[1.0], np.cumprod(1.0 - masses)[:-1]])
    return survive * masses


def _finish(rule, params, m, p_t, p_e, stops, succ, na, details) -> Prediction:
    covered = float(p_e[: m + 1].sum())
    theta = float(np.sum(stops * (1.0 - succ)) / covered) if covered > 0 else 0.0
    return Prediction(rule, params.snr_db, m, p_t, theta, float(na), 1.0 - (1.0 - theta) * covered, details)


def hisr_prediction(
    ctx: OrderedStatsCtx, spectrum: WeightSpectrumModel, m: int, p_t: float, sample: ReliabilitySample
) -> Prediction:
    k, r = ctx.k, ctx.n - ctx.k
    p_mrb = ctx.mrb_error_pmf()
    p_par = ctx.error_count_pmf(k + 1, ctx.n)
    phases = schedule_by_mean_reliability(k, m, sample.mean_alpha)
    masses, succ = [], []
    for w, sup in enumerate(phases):
        miss = _miss_parity_law(ctx, spectrum, w)
        for pe in sample.tep_pe(sup):
            hit = pe * p_par
            total = hit + (1.0 - pe) * miss
            with np.errstate(divide="ignore", invalid="ignore"):
                psuc = np.where(total > 0, hit / total, 0.0)
            j_b = _threshold_index(psuc, p_t)
            mass = float(total[: j_b + 1].sum())
            masses.append(mass)
            succ.append(float(hit[: j_b + 1].sum() / mass) if mass > 0 else 1.0)
    masses = np.clip(np.array(masses), 0.0, 1.0)
    stops = _chain(masses)
    B = len(masses)
    na = B * (1 - stops.sum()) + np.sum(np.arange(1, B + 1) * stops)
    return _finish("HISR", ctx.params, m, p_t, p_mrb, stops, np.array(succ), na, {"r": r})


def hgsr_prediction(ctx: OrderedStatsCtx, spectrum: WeightSpectrumModel, m: int, p_t: float) -> Prediction:
    k = ctx.k
    p_mrb = ctx.mrb_error_pmf()
    p_par = ctx.error_count_pmf(k + 1, ctx.n)
    masses, succ = [], []
    for i in range(m + 1):
        pmf, miss, _ = hamming_di_mixture(p_mrb, p_par, spectrum, i)
        with np.errstate(divide="ignore", invalid="ignore"):
            psuc = np.where(pmf > 0, 1.0 - miss / pmf, 0.0)
        j_b = _threshold_index(psuc, p_t)
        mass = float(pmf[: j_b + 1].sum())
        masses.append(mass)
        succ.append(float((pmf - miss)[: j_b + 1].sum() / mass) if mass > 0 else 1.0)
    stops = _chain(np.clip(np.array(masses), 0.0, 1.0))
    counts = np.array([b_sum(0, i, k) for i in range(m + 1)])
    na = counts[-1] * (1 - stops.sum()) + np.sum(counts * stops)
    return _finish("HGSR", ctx.params, m, p_t, p_mrb, stops, np.array(succ), na, {})


def sgsr_prediction(ctx: OrderedStatsCtx, spectrum: WeightSpectrumModel, m: int, p_t: float) -> Prediction:
    k = ctx.k
    masses, succ = [], []
    for i in range(m + 1):
        model = whd_di_gauss(ctx, spectrum, i)
        x, pdf = model.x, model.pdf
        p_hi = float(model.components["weights"][1])
        mu2, var2 = model.components["miss_high"]
        miss = p_hi * ExchangeableMin(mu2, var2, model.rho2, b_sum(0, i, k)).pdf(x) if p_hi > 1e-15 else np.zeros_like(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            psuc = np.where(pdf > 1e-300, 1.0 - miss / pdf, 0.0)
        j_b = _threshold_index(psuc, p_t)
        if j_b < 0:
            masses.append(0.0)
            succ.append(1.0)
            continue
        mass = float(np.trapezoid(pdf[: j_b + 1], x[: j_b + 1]))
        good = float(np.trapezoid((pdf - miss)[: j_b + 1], x[: j_b + 1]))
        masses.append(mass)
        succ.append(good / mass if mass > 0 else 1.0)
    stops = _chain(np.clip(np.array(masses), 0.0, 1.0))
    counts = np.array([b_sum(0, i, k) for i in range(m + 1)])
    na = counts[-1] * (1 - stops.sum()) + np.sum(counts * stops)
    return _finish("SGSR", ctx.params, m, p_t, ctx.mrb_error_pmf(), stops, np.array(succ), na, {})


def hdr_prediction(
    ctx: OrderedStatsCtx,
    spectrum: WeightSpectrumModel,
    d_H: int,
    m: int,
    p_t: float,
    sample: ReliabilitySample,
) -> Prediction:
    """Expected re-encodings and the per-phase degradation bound C(k,i) Pe*(p_t).

    ``Pe*`` inverts the unconditional promising probability, which is linear
    in Pe(e): Ppro = Pe H_i + (1 - Pe) M_i.
    """
    k = ctx.k
    p_mrb = ctx.mrb_error_pmf()
    p_par = ctx.error_count_pmf(k + 1, ctx.n)
    phases = schedule_by_mean_reliability(k, m, sample.mean_alpha)
    na = 0.0
    eta = np.zeros(m + 1)
    for i, sup in enumerate(phases):
        top = d_H - i
        hit_cdf = float(p_par[: top + 1].sum()) if top >= 0 else 0.0
        miss_cdf = float(_miss_parity_law(ctx, spectrum, i)[: top + 1].sum()) if top >= 0 else 0.0
        pe = sample.tep_pe(sup)
        ppro = pe * hit_cdf + (1 - pe) * miss_cdf
        na += float(np.sum(ppro >= p_t)) if i > 0 else 1.0
        if i == 0 or hit_cdf == miss_cdf:
            continue
        pe_star = float(np.clip((p_t - miss_cdf) / (hit_cdf - miss_cdf), 0.0, 1.0))
        eta[i] = min(comb(k, i) * pe_star, float(p_mrb[i]))
    covered = p_mrb[: m + 1]
    fer = 1.0 - float(np.sum(covered - eta))
    return Prediction("HDR", ctx.params.snr_db, m, p_t, float(eta.sum() / covered.sum()), na, fer, {"eta": eta.tolist()})


def predict(
    rule: str,
    ctx: OrderedStatsCtx,
    spectrum: WeightSpectrumModel,
    m: int,
    threshold: float,
    *,
    d_H: int | None = None,
    samples: int = 2000,
    seed: int = 0,
) -> Prediction:
    if rule == "HISR":
        return hisr_prediction(ctx, spectrum, m, threshold, ReliabilitySample(ctx.n, ctx.k, ctx.params, samples, seed))
    if rule == "HGSR":
        return hgsr_prediction(ctx, spectrum, m, threshold)
    if rule == "SGSR":
        return sgsr_prediction(ctx, spectrum, m, threshold)
    if rule == "HDR":
        if d_H is None:
            raise ValueError("HDR prediction needs the code's minimum distance")
        return hdr_prediction(ctx, spectrum, d_H, m, threshold, ReliabilitySample(ctx.n, ctx.k, ctx.params, samples, seed))
    raise ValueError(f"no offline prediction for rule {rule!r}; available: {ANALYSIS_RULES}")
