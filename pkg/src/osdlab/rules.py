"""Stopping and discarding rules consulted by the decoder.

Every rule is a pure function of per-frame reliability caches
(:class:`FrameStats`), per-code constants (:class:`RuleContext`), the TEP or
phase at hand, and the distances recorded so far. ``Fast`` evaluation uses
the closed forms that cost O(n) per TEP (O(n) per phase for group rules);
``Exact`` evaluation uses exact error-count laws given the reliabilities and
the code's parity-weight table, and exists to validate the fast forms.

A TEP is described by its support: 0-based MRB positions in the sorted,
systematized frame.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from math import comb, log

import numpy as np
from scipy import special, stats

from .channel import ChannelParams, log_bit_error_given_reliability, q_function
from .channel import Q_POLY_COEFFS
from .codebook import WeightSpectrumModel
from .dist_model import b_sum, hamming_di_mixture, poisson_binomial, xor_weight_kernel
from .ordered_stats import OrderedStatsCtx

RULE_NAMES = ("HISR", "HGSR", "HDR", "SISR", "SGSR", "SDR", "PSC", "DNC", "None")
STOPPING_RULES = frozenset({"HISR", "HGSR", "SISR", "SGSR", "PSC"})
DISCARDING_RULES = frozenset({"HDR", "SDR", "DNC"})
GROUP_RULES = frozenset({"HGSR", "SGSR"})
EVAL_MODES = ("Exact", "Fast")

# lattice resolution for exact weighted-Bernoulli sums, as a fraction of the largest weight
LATTICE_DIVISIONS = 2000
VAR_FLOOR = 1e-12


class Action(enum.Enum):
    CONTINUE = "Continue"
    STOP = "Stop"
    DISCARD = "Discard"


@dataclass(frozen=True)
class RuleConfig:
    """One rule and the thresholds it reads.

    ``lam`` is the scaling written ``lambda`` on the command line. With
    ``adaptive`` set, HDR and SDR derive a per-phase threshold from ``lam``
    instead of using ``p_t_pro``.
    """

    rule: str = "None"
    p_t_suc: float = 0.99
    p_t_pro: float = 0.0
    lam: float = 1.0
    tau: int = 2
    ell_step: int = 1
    eval_mode: str = "Fast"
    adaptive: bool = False

    def __post_init__(self):
        if self.rule not in RULE_NAMES:
            raise ValueError(f"unknown rule {self.rule!r}; expected one of {RULE_NAMES}")
        if not 0.0 <= self.p_t_suc <= 1.0:
            raise ValueError(f"p_t_suc must lie in [0, 1], got {self.p_t_suc}")
        if not 0.0 <= self.p_t_pro <= 1.0:
            raise ValueError(f"p_t_pro must lie in [0, 1], got {self.p_t_pro}")
        if self.lam < 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if self.tau < 0:
            raise ValueError(f"tau must be nonnegative, got {self.tau}")
        if int(self.ell_step) != self.ell_step or self.ell_step < 1:
            raise ValueError(f"ell_step must be a positive integer, got {self.ell_step}")
        if self.eval_mode not in EVAL_MODES:
            raise ValueError(f"eval_mode must be one of {EVAL_MODES}, got {self.eval_mode!r}")

    @property
    def is_stopping(self) -> bool:
        return self.rule in STOPPING_RULES

    @property
    def is_discarding(self) -> bool:
        return self.rule in DISCARDING_RULES

    @property
    def is_group(self) -> bool:
        return self.rule in GROUP_RULES


@dataclass(frozen=True)
class RuleVerdict:
    action: Action
    score: float
    cost: int
    discard_rest: bool = False

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0 or np.isnan(self.score)):
            # PSC and DNC report a nonnegative statistic rather than a probability
            if self.score < 0:
                raise ValueError(f"negative verdict score {self.score}")


CONTINUE = RuleVerdict(Action.CONTINUE, 1.0, 0)


# ----- per-frame and per-code caches ----------------------------------------


@dataclass(frozen=True, eq=False)
class FrameStats:
    """Reliability-derived quantities shared by every rule check on one frame.

    ``alpha`` is in decoder order (sorted, then column-swapped by the
    systematization), so its first ``k`` entries are the MRB.
    """

    alpha: np.ndarray
    k: int
    params: ChannelParams
    pe: np.ndarray
    log_pe: np.ndarray
    log_qe: np.ndarray  # log(1 - Pe)

    @property
    def n(self) -> int:
        return len(self.alpha)

    @property
    def r(self) -> int:
        return self.n - self.k

    @property
    def mrb_log_base(self) -> float:
        """log Pe(0 | alpha): every MRB bit correct."""
        return float(self.log_qe[: self.k].sum())

    @property
    def p_bar_mrb(self) -> float:
        return float(self.pe[: self.k].mean())

    @property
    def p_bar_parity(self) -> float:
        return float(self.pe[self.k :].mean()) if self.r else 0.0


def frame_stats(alpha, k: int, params: ChannelParams) -> FrameStats:
    alpha = np.asarray(alpha, dtype=np.float64)
    if not 1 <= k <= len(alpha):
        raise ValueError(f"k={k} incompatible with frame length {len(alpha)}")
    log_pe, log_qe = log_bit_error_given_reliability(alpha, params)
    return FrameStats(alpha, k, params, np.exp(log_pe), log_pe, log_qe)


@dataclass(eq=False)
class RuleContext:
    """Per (code, SNR) constants: spectrum, unconditional laws, kernels."""

    n: int
    k: int
    d_H: int
    params: ChannelParams
    spectrum: WeightSpectrumModel | None = None
    cache: dict = field(default_factory=dict, repr=False)

    def ordered_ctx(self) -> OrderedStatsCtx:
        if "ctx" not in self.cache:
            self.cache["ctx"] = OrderedStatsCtx(self.n, self.k, self.params)
        return self.cache["ctx"]

    def p_e1k(self) -> np.ndarray:
        if "p_e1k" not in self.cache:
            self.cache["p_e1k"] = self.ordered_ctx().mrb_error_pmf()
        return self.cache["p_e1k"]

    def p_parity_errors(self) -> np.ndarray:
        if "p_par" not in self.cache:
            self.cache["p_par"] = self.ordered_ctx().error_count_pmf(self.k + 1, self.n)
        return self.cache["p_par"]

    def kernel(self, length: int) -> np.ndarray:
        key = ("kernel", length)
        if key not in self.cache:
            self.cache[key] = xor_weight_kernel(length)
        return self.cache[key]

    def need_spectrum(self) -> WeightSpectrumModel:
        if self.spectrum is None:
            raise ValueError("this evaluation needs a weight spectrum model")
        return self.spectrum

    def wecp_pmf(self, tep_weight: int) -> np.ndarray:
        """Unconditional pmf of the parity distance of a weight-v TEP's candidate when it misses."""
        key = ("wecp", tep_weight)
        if key not in self.cache:
            spec = self.need_spectrum()
            q_law = self.kernel(self.k)[:, tep_weight, :].T @ self.p_e1k()
            ell = spec.pcp_table @ q_law
            self.cache[key] = np.einsum("l,v,lvj->j", ell, self.p_parity_errors(), self.kernel(self.n - self.k))
        return self.cache[key]

    def hdr_threshold(self, i: int, lam: float) -> float:
        """Per-phase hard promising threshold: lam p_E(i)/C(k,i) plus the miss-branch mass below d_H."""
        wecp = self.wecp_pmf(i)
        top = self.d_H - i
        tail = float(wecp[: top + 1].sum()) if top >= 0 else 0.0
        return float(min(lam * self.p_e1k()[i] / comb(self.k, i) + tail, 1.0))

    def sdr_threshold(self, i: int, lam: float) -> float:
        return float(min(lam * self.p_e1k()[i] / comb(self.k, i), 1.0))


# ----- shared helpers --------------------------------------------------------


def _log1mexp(x: float) -> float:
    """log(1 - exp(x)) for x <= 0."""
    if x >= 0:
        return -np.inf
    if x > -0.693:
        return float(np.log(-np.expm1(x)))
    return float(np.log1p(-np.exp(x)))


def tep_log_pe(fs: FrameStats, support) -> float:
    """log Pe(e | alpha): exactly the support positions of the MRB are in error."""
    s = np.asarray(support, dtype=np.int64)
    if s.size and (s.min() < 0 or s.max() >= fs.k):
        raise IndexError("TEP support outside the MRB")
    val = fs.mrb_log_base + float((fs.log_pe[s] - fs.log_qe[s]).sum())
    if np.isfinite(val) or val == -np.inf and np.isfinite(fs.log_qe[: fs.k]).all():
        return val
    # a certain error in the MRB: sum the per-position terms directly
    mask = np.zeros(fs.k, dtype=bool)
    mask[s] = True
    return float(np.where(mask, fs.log_pe[: fs.k], fs.log_qe[: fs.k]).sum())


def _odds_to_prob(log_odds_against: float) -> float:
    """1 / (1 + exp(t)), stable for infinite t."""
    if np.isnan(log_odds_against):
        return 0.0
    return float(special.expit(-log_odds_against))


def _log_sf_gauss(z, mode: str):
    """log Q(z): PolyApprox in Fast mode, exact log-ndtr otherwise."""
    z = np.asarray(z, dtype=np.float64)
    if mode == "Fast":
        a, b, c = Q_POLY_COEFFS
        az = np.abs(z)
        log_tail = np.minimum(a * az * az + b * az + c, np.log(0.5))
        out = np.where(z >= 0, log_tail, np.log1p(-np.exp(log_tail)))
    else:
        out = special.log_ndtr(-z)
    return out if out.ndim else float(out)


def _q(z, mode: str):
    return q_function(z, "PolyApprox" if mode == "Fast" else "Exact")


def _cdf_gauss(x, mean, var, mode):
    if var <= VAR_FLOOR:
        return float(x >= mean)
    return 1.0 - float(_q((x - mean) / np.sqrt(var), mode))


def _conditional_counts(fs: FrameStats, mode: str):
    """Error-count laws of the MRB and parity blocks given alpha."""
    if mode == "Fast":
        p_mrb = stats.binom.pmf(np.arange(fs.k + 1), fs.k, fs.p_bar_mrb)
        p_par = stats.binom.pmf(np.arange(fs.r + 1), fs.r, fs.p_bar_parity)
        return p_mrb, p_par
    return poisson_binomial(fs.pe[: fs.k]), poisson_binomial(fs.pe[fs.k :])


def _mismatch_law(fs: FrameStats, support) -> np.ndarray:
    """pmf of w(e ^ e_B) given alpha, excluding e_B = e and renormalized."""
    flip = np.zeros(fs.k, dtype=bool)
    flip[np.asarray(support, dtype=np.int64)] = True
    p = np.where(flip, 1.0 - fs.pe[: fs.k], fs.pe[: fs.k])
    law = poisson_binomial(p)
    law[0] = 0.0
    total = law.sum()
    return law / total if total > 0 else law


def _parity_miss_law(fs: FrameStats, rctx: RuleContext, support) -> np.ndarray:
    """pmf of the parity distance of a missing candidate given alpha."""
    spec = rctx.need_spectrum()
    ell = spec.pcp_table @ _mismatch_law(fs, support)
    p_par = poisson_binomial(fs.pe[fs.k :])
    return np.einsum("l,v,lvj->j", ell, p_par, rctx.kernel(fs.r))


def _parity_one_prob(fs: FrameStats, rctx: RuleContext, support) -> float:
    """Average probability that a parity bit of a missing candidate's codeword is set."""
    spec = rctx.need_spectrum()
    return float(spec.pcp_bit() @ _mismatch_law(fs, support))


# ----- HISR ------------------------------------------------------------------


def hisr_prob(fs: FrameStats, support, d_e_H: int, rctx: RuleContext | None = None, mode: str = "Fast") -> float:
    """Hard success probability of one candidate given its Hamming distance."""
    w = len(support)
    j = int(d_e_H) - w
    if not 0 <= j <= fs.r:
        raise ValueError(f"Hamming distance {d_e_H} impossible for a weight-{w} TEP")
    lpe = tep_log_pe(fs, support)
    l1 = _log1mexp(lpe)
    if mode == "Fast":
        p = fs.p_bar_parity
        t = (
            l1
            - lpe
            + (fs.k - fs.n) * log(2.0)
            - special.xlogy(j, p)
            - special.xlogy(fs.r - j, 1.0 - p)
        )
        return _odds_to_prob(t)
    if rctx is None:
        raise ValueError("Exact evaluation needs a RuleContext")
    p_hit = poisson_binomial(fs.pe[fs.k :])[j]
    p_miss = _parity_miss_law(fs, rctx, support)[j]
    pe_e = np.exp(lpe)
    num = pe_e * p_hit
    den = num + (1.0 - pe_e) * p_miss
    return float(num / den) if den > 0 else 0.0


def hisr_check(fs, support, d_e_H, cfg: RuleConfig, rctx=None) -> RuleVerdict:
    score = hisr_prob(fs, support, d_e_H, rctx, cfg.eval_mode)
    cost = len(support) + 4 if cfg.eval_mode == "Fast" else fs.n**2
    return RuleVerdict(Action.STOP if score >= cfg.p_t_suc else Action.CONTINUE, score, cost)


# ----- HGSR ------------------------------------------------------------------


def _hgsr_fast(fs: FrameStats, i: int, d: int) -> float:
    k, r = fs.k, fs.r
    p_mrb = stats.binom.pmf(np.arange(i + 1), k, fs.p_bar_mrb)
    p_le = float(stats.binom.cdf(i, k, fs.p_bar_mrb))
    pb = fs.p_bar_parity
    mu_e, var_e = r * pb, max(r * pb * (1 - pb), VAR_FLOOR)
    mu_w, sd_w = r / 2.0, np.sqrt(r / 4.0)
    b_other = b_sum(1, i, k)
    b_all = b_sum(0, i, k)

    def log_phi_w(y):
        return stats.norm.logpdf(y, mu_w, sd_w)

    def log_sf_w(y):
        return _log_sf_gauss((2.0 * y - r) / np.sqrt(r), "Fast")

    def log_min_density(y, b):
        return log(b) + log_phi_w(y) + (b - 1) * log_sf_w(y)

    terms = []
    for u in range(i + 1):
        y = d - u
        if p_mrb[u] <= 0:
            continue
        lp = log(p_mrb[u])
        hit = stats.norm.logpdf(y, mu_e, np.sqrt(var_e)) + b_other * log_sf_w(y)
        terms.append(lp + hit)
        if b_other:
            comp = log_min_density(y, b_other) + stats.norm.logsf(y, mu_e, np.sqrt(var_e))
            terms.append(lp + comp)
    if p_le >= 1.0:
        return 1.0
    log_miss = log1p_safe(-p_le) + log_min_density(d - i, b_all)
    log_total = special.logsumexp(terms + [log_miss])
    if not np.isfinite(log_total):
        raise FloatingPointError("HGSR fast density vanished")
    return float(np.clip(1.0 - np.exp(log_miss - log_total), 0.0, 1.0))


def log1p_safe(x: float) -> float:
    return float(np.log1p(x)) if x > -1 else -np.inf


def _hgsr_exact(fs: FrameStats, i: int, d: int, rctx: RuleContext) -> float:
    p_mrb, p_par = _conditional_counts(fs, "Exact")
    pmf, miss, p_hi = hamming_di_mixture(p_mrb, p_par, rctx.need_spectrum(), i)
    if p_hi <= 0:
        return 1.0
    if pmf[d] <= 0:
        # a distance the model deems impossible gives no evidence for stopping
        return 0.0
    return float(np.clip(1.0 - miss[d] / pmf[d], 0.0, 1.0))


def hgsr_prob(fs: FrameStats, i: int, d_i_H: int, rctx: RuleContext | None = None, mode: str = "Fast") -> float:
    """Probability that the MRB holds at most i errors given the minimum Hamming distance."""
    if not 0 <= i <= fs.k:
        raise ValueError(f"phase {i} outside 0..{fs.k}")
    if mode == "Fast":
        try:
            return _hgsr_fast(fs, i, int(d_i_H))
        except FloatingPointError as exc:
            if rctx is None or rctx.spectrum is None:
                raise
            warnings.warn(f"HGSR fast form failed ({exc}); using the exact form", RuntimeWarning, stacklevel=2)
    if rctx is None:
        raise ValueError("Exact evaluation needs a RuleContext")
    return _hgsr_exact(fs, i, int(d_i_H), rctx)


def hgsr_check(fs, i, d_i_H, cfg: RuleConfig, rctx=None) -> RuleVerdict:
    score = hgsr_prob(fs, i, d_i_H, rctx, cfg.eval_mode)
    return RuleVerdict(Action.STOP if score >= cfg.p_t_suc else Action.CONTINUE, score, fs.n * (i + 1))


# ----- HDR -------------------------------------------------------------------


def hdr_prob(fs: FrameStats, support, d_H: int, rctx: RuleContext | None = None, mode: str = "Fast") -> float:
    """Hard promising probability: P(candidate distance <= d_H | alpha)."""
    w = len(support)
    top = int(d_H) - w
    if top < 0:
        return 0.0
    pe_e = float(np.exp(tep_log_pe(fs, support)))
    if mode == "Fast":
        r, p = fs.r, fs.p_bar_parity
        hit = _cdf_gauss(top, r * p, r * p * (1 - p), "Fast")
        miss = _cdf_gauss(top, r / 2.0, r / 4.0, "Fast")
        return float(np.clip(pe_e * hit + (1 - pe_e) * miss, 0.0, 1.0))
    if rctx is None:
        raise ValueError("Exact evaluation needs a RuleContext")
    hit = poisson_binomial(fs.pe[fs.k :])[: top + 1].sum()
    miss = _parity_miss_law(fs, rctx, support)[: top + 1].sum()
    return float(np.clip(pe_e * hit + (1 - pe_e) * miss, 0.0, 1.0))


def hdr_check(fs, support, cfg: RuleConfig, d_H: int, rctx=None, threshold: float | None = None) -> RuleVerdict:
    score = hdr_prob(fs, support, d_H, rctx, cfg.eval_mode)
    t = cfg.p_t_pro if threshold is None else threshold
    fire = score < t
    return RuleVerdict(Action.DISCARD if fire else Action.CONTINUE, score, len(support) + 4, discard_rest=fire)


# ----- SISR ------------------------------------------------------------------


def sisr_prob(fs: FrameStats, support, diff_parity, rctx: RuleContext | None = None, mode: str = "Fast") -> float:
    """Soft success probability of one candidate given its parity difference pattern.

    ``diff_parity`` marks the parity positions where the candidate disagrees
    with the hard decision.
    """
    diff = np.asarray(diff_parity, dtype=bool)
    if diff.shape != (fs.r,):
        raise ValueError(f"difference pattern must have length {fs.r}")
    lpe = tep_log_pe(fs, support)
    l1 = _log1mexp(lpe)
    lp, lq = fs.log_pe[fs.k :], fs.log_qe[fs.k :]
    if mode == "Fast":
        # mismatch: 1/(2 Pe); match: 1/(2 - 2 Pe)
        ratio = np.where(diff, -(log(2.0) + lp), -(log(2.0) + lq)).sum()
    else:
        if rctx is None:
            raise ValueError("Exact evaluation needs a RuleContext")
        pc_bar = _parity_one_prob(fs, rctx, support)
        pe = fs.pe[fs.k :]
        pc = pc_bar * (1 - pe) + (1 - pc_bar) * pe
        with np.errstate(divide="ignore"):
            ratio = np.where(diff, np.log(pc) - lp, np.log1p(-pc) - lq).sum()
    return _odds_to_prob(l1 - lpe + ratio)


def sisr_check(fs, support, diff_parity, cfg: RuleConfig, rctx=None) -> RuleVerdict:
    score = sisr_prob(fs, support, diff_parity, rctx, cfg.eval_mode)
    return RuleVerdict(Action.STOP if score >= cfg.p_t_suc else Action.CONTINUE, score, fs.n + len(support))


# ----- SGSR ------------------------------------------------------------------


def _sgsr_moments(fs: FrameStats, i: int, mode: str, rctx: RuleContext | None):
    """(P(w(e_B) <= i), hit mean/var, miss mean/var) with alpha held fixed."""
    k = fs.k
    a_b, a_p = fs.alpha[:k], fs.alpha[k:]
    pe_b, pe_p = fs.pe[:k], fs.pe[k:]
    if mode == "Fast":
        p_mrb = stats.binom.pmf(np.arange(k + 1), k, fs.p_bar_mrb)
        p_le = float(p_mrb[: i + 1].sum())
        c1 = 1.0 - p_mrb[i] / p_le if p_le > 0 else 0.0
        c2 = 1.0 - (p_mrb[i] + (p_mrb[i - 1] if i >= 1 else 0.0)) / p_le if p_le > 0 else 0.0
        s_b = pe_b @ a_b
        pair_b = (pe_b * a_b).sum() ** 2 - ((pe_b * a_b) ** 2).sum() + (pe_b * a_b * a_b).sum()
        m_hit = c1 * s_b + pe_p @ a_p
        ex2 = c2 * pair_b + 2 * c1 * s_b * (pe_p @ a_p) + (pe_p @ a_p) ** 2 + (pe_p * (1 - pe_p)) @ (a_p**2)
        v_hit = ex2 - m_hit**2
        pc = np.full_like(pe_p, 0.5)
    else:
        # exact moments of the MRB error sum restricted to w(e_B) <= i
        p_mrb = poisson_binomial(pe_b)
        p_le = float(p_mrb[: i + 1].sum())
        e1 = np.zeros(k)
        for u in range(k):
            rest = poisson_binomial(np.delete(pe_b, u))
            e1[u] = pe_b[u] * rest[:i].sum() if i >= 1 else 0.0
        e2 = np.diag(e1)
        if i >= 2:
            for u in range(k):
                for v in range(u + 1, k):
                    rest = poisson_binomial(np.delete(pe_b, [u, v]))
                    e2[u, v] = e2[v, u] = pe_b[u] * pe_b[v] * rest[: i - 1].sum()
        e1, e2 = e1 / p_le, e2 / p_le
        s_b = e1 @ a_b
        m_p = pe_p @ a_p
        m_hit = s_b + m_p
        ex2 = a_b @ e2 @ a_b + 2 * s_b * m_p + m_p**2 + (pe_p * (1 - pe_p)) @ (a_p**2)
        v_hit = ex2 - m_hit**2
        pc_bar = float(rctx.need_spectrum().pcp_bit()[1:].mean()) if rctx is not None and rctx.spectrum else 0.5
        pc = pc_bar * (1 - pe_p) + (1 - pc_bar) * pe_p
    b_all = b_sum(0, i, k)
    f1 = b_sum(0, i - 1, k - 1) / b_all
    f2 = b_sum(0, i - 2, k - 2) / b_all if k >= 2 else 0.0
    sum_b, sq_b = a_b.sum(), (a_b**2).sum()
    m_miss = f1 * sum_b + pc @ a_p
    v_miss = f1 * sq_b + f2 * (sum_b**2 - sq_b) - (f1 * sum_b) ** 2 + (pc * (1 - pc)) @ (a_p**2)
    return p_mrb, p_le, m_hit, max(v_hit, VAR_FLOOR), m_miss, max(v_miss, VAR_FLOOR)


def sgsr_prob(fs: FrameStats, i: int, d_i_W: float, rctx: RuleContext | None = None, mode: str = "Fast") -> float:
    """Probability that the MRB holds at most i errors given the minimum WHD, alpha fixed."""
    if not 0 <= i <= fs.k:
        raise ValueError(f"phase {i} outside 0..{fs.k}")
    _, p_le, m_h, v_h, m_m, v_m = _sgsr_moments(fs, i, mode, rctx)
    if p_le >= 1.0:
        return 1.0
    if p_le <= 0.0:
        return 0.0
    x = float(d_i_W)
    b_other = b_sum(1, i, fs.k)
    b_all = b_sum(0, i, fs.k)
    sd_h, sd_m = np.sqrt(v_h), np.sqrt(v_m)
    lf_h = stats.norm.logpdf(x, m_h, sd_h)
    lf_m = stats.norm.logpdf(x, m_m, sd_m)
    ls_h = _log_sf_gauss((x - m_h) / sd_h, mode)
    ls_m = _log_sf_gauss((x - m_m) / sd_m, mode)
    terms = [log(p_le) + lf_h + b_other * ls_m]
    if b_other:
        terms.append(log(p_le) + log(b_other) + lf_m + (b_other - 1) * ls_m + ls_h)
    log_miss = log1p_safe(-p_le) + log(b_all) + lf_m + (b_all - 1) * ls_m
    log_total = special.logsumexp(terms + [log_miss])
    if not np.isfinite(log_total):
        return 0.0 if x > m_m else 1.0
    return float(np.clip(1.0 - np.exp(log_miss - log_total), 0.0, 1.0))


def sgsr_check(fs, i, d_i_W, cfg: RuleConfig, rctx=None) -> RuleVerdict:
    score = sgsr_prob(fs, i, d_i_W, rctx, cfg.eval_mode)
    return RuleVerdict(Action.STOP if score >= cfg.p_t_suc else Action.CONTINUE, score, fs.n**2)


# ----- SDR -------------------------------------------------------------------


def _weighted_bernoulli_cdf(weights: np.ndarray, probs: np.ndarray, x: float) -> float:
    """P(sum_u B_u w_u < x) for independent B_u ~ Bernoulli(p_u), on a fine lattice."""
    if x <= 0:
        return 0.0
    if weights.size == 0 or weights.max() <= 0:
        return 1.0
    h = weights.max() / LATTICE_DIVISIONS
    steps = np.rint(weights / h).astype(np.int64)
    dist = np.zeros(int(steps.sum()) + 1)
    dist[0] = 1.0
    top = 0
    for s, p in zip(steps, probs):
        new = dist[: top + s + 1] * 0.0
        new[: top + 1] += (1 - p) * dist[: top + 1]
        new[s : s + top + 1] += p * dist[: top + 1]
        top += s
        dist[: top + 1] = new
    cut = int(np.ceil(x / h - 1e-9))  # lattice points strictly below x
    return float(dist[: min(cut, top + 1)].sum())


def sdr_moments(fs: FrameStats):
    """Parity-part means and variances of the hit and miss branches (TEP independent)."""
    a_p, pe_p = fs.alpha[fs.k :], fs.pe[fs.k :]
    return (pe_p @ a_p, (pe_p * (1 - pe_p)) @ (a_p**2), a_p.sum() / 2.0, (a_p**2).sum() / 4.0)


def sdr_prob(fs: FrameStats, support, d_min_W: float, rctx: RuleContext | None = None, mode: str = "Fast") -> float:
    """Soft promising probability: P(candidate WHD < d_min_W | alpha)."""
    if not np.isfinite(d_min_W):
        return 1.0
    s = np.asarray(support, dtype=np.int64)
    ell = float(fs.alpha[s].sum())
    pe_e = float(np.exp(tep_log_pe(fs, support)))
    room = float(d_min_W) - ell
    if mode == "Fast":
        m_h, v_h, m_m, v_m = sdr_moments(fs)
        hit = _cdf_gauss(room, m_h, v_h, "Fast")
        miss = _cdf_gauss(room, m_m, v_m, "Fast")
    else:
        if rctx is None:
            raise ValueError("Exact evaluation needs a RuleContext")
        a_p, pe_p = fs.alpha[fs.k :], fs.pe[fs.k :]
        pc_bar = _parity_one_prob(fs, rctx, support)
        pc = pc_bar * (1 - pe_p) + (1 - pc_bar) * pe_p
        hit = _weighted_bernoulli_cdf(a_p, pe_p, room)
        miss = _weighted_bernoulli_cdf(a_p, pc, room)
    return float(np.clip(pe_e * hit + (1 - pe_e) * miss, 0.0, 1.0))


def sdr_check(fs, support, d_min_W, cfg: RuleConfig, rctx=None, threshold: float | None = None) -> RuleVerdict:
    score = sdr_prob(fs, support, d_min_W, rctx, cfg.eval_mode)
    t = cfg.p_t_pro if threshold is None else threshold
    fire = score < t
    return RuleVerdict(Action.DISCARD if fire else Action.CONTINUE, score, len(support) + 6, discard_rest=fire)


# ----- baselines -------------------------------------------------------------


def psc_syndrome_weight(y_tilde, support, H_tilde) -> int:
    """Weight of [y_B ^ e | y_P] H^T for the ordered parity-check matrix."""
    from .gf2 import BitVector, syndrome

    word = np.array(y_tilde, dtype=np.uint8)
    word[np.asarray(support, dtype=np.int64)] ^= 1
    return syndrome(BitVector.from_array(word), H_tilde).weight()


def psc_check(y_tilde, support, cfg: RuleConfig, H_tilde) -> RuleVerdict:
    weight = psc_syndrome_weight(y_tilde, support, H_tilde)
    return RuleVerdict(Action.STOP if weight <= cfg.tau else Action.CONTINUE, float(weight), len(y_tilde))


def dnc_bound(fs: FrameStats, d_min_W: float, lam: float) -> float:
    """Reliability bound l*: TEPs whose support reliability reaches it cannot win."""
    if not np.isfinite(d_min_W):
        return np.inf
    s_b = float(fs.alpha[: fs.k].sum())
    s_p = float(fs.alpha[fs.k :].sum())
    den = s_b + lam * s_p
    return float(d_min_W) * s_b / den if den > 0 else np.inf


def dnc_check(fs, support, d_min_W, cfg: RuleConfig) -> RuleVerdict:
    ell = float(fs.alpha[np.asarray(support, dtype=np.int64)].sum())
    bound = dnc_bound(fs, d_min_W, cfg.lam)
    fire = ell >= bound and np.isfinite(bound)
    return RuleVerdict(Action.DISCARD if fire else Action.CONTINUE, ell, len(support) + 1, discard_rest=fire)
