"""Distributions of Hamming and weighted Hamming distances seen by the decoder.

Hamming models are pmfs over ``0..n``. Weighted (WHD) models are densities
tabulated on a grid, possibly with a point mass at zero, and are compared
through their cdfs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy import integrate, special, stats

from .channel import bit_error_given_reliability, log_bit_error_given_reliability
from .codebook import WeightSpectrumModel
from .ordered_stats import OrderedStatsCtx, PairMoments

SUPPORT_CAP = 12
RHO_SLACK = 1e-6
HERMITE_NODES = 64
WHD_GRID = 4001
TINY_GRID = 1201
GAUSS_CELL_POINTS = 40


class MonteCarloBudgetError(RuntimeError):
    pass


def b_sum(a: int, b: int, c: int) -> int:
    """Sum of C(c, j) for j = a..b (zero for an empty range)."""
    return sum(comb(c, j) for j in range(max(a, 0), min(b, c) + 1))


# ----- model containers ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class HammingDistModel:
    kind: str
    components: dict
    provenance: dict = field(default_factory=dict)

    @property
    def pmf(self) -> np.ndarray:
        return self.components["pmf"]

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.pmf)

    def mean(self) -> float:
        return float(np.arange(len(self.pmf)) @ self.pmf)


@dataclass(frozen=True, eq=False)
class WhdDistModel:
    """Tabulated WHD distribution: ``pdf``/``cdf`` on ``x`` plus ``atom`` at 0."""

    kind: str
    components: dict
    rho1: float = 0.0
    rho2: float = 0.0
    support_cap: int = SUPPORT_CAP

    @property
    def x(self) -> np.ndarray:
        return self.components["x"]

    @property
    def pdf(self) -> np.ndarray:
        return self.components["pdf"]

    @property
    def atom(self) -> float:
        return float(self.components.get("atom", 0.0))

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        grid_cdf = self.components["cdf"]
        return np.interp(x, self.x, grid_cdf, left=0.0, right=grid_cdf[-1]) + np.where(x >= 0, self.atom, 0.0)

    def total_mass(self) -> float:
        return float(self.components["cdf"][-1] + self.atom)


# ----- shared combinatorial pieces ------------------------------------------


def xor_weight_kernel(length: int) -> np.ndarray:
    """``K[u, v, j]``: P(w(a ^ b) = j) for fixed w(a) = u and uniform b of weight v."""
    u = np.arange(length + 1)[:, None, None]
    v = np.arange(length + 1)[None, :, None]
    j = np.arange(length + 1)[None, None, :]
    twice = u + v - j
    delta = twice // 2
    with np.errstate(invalid="ignore"):
        p = stats.hypergeom.pmf(delta, length, u, v)
    return np.where((twice >= 0) & (twice % 2 == 0), np.nan_to_num(p), 0.0)


def _tep_weight_dist(k: int, i: int) -> np.ndarray:
    """Weight distribution of a TEP drawn uniformly from those of weight <= i."""
    w = np.array([comb(k, v) if v <= i else 0 for v in range(k + 1)], dtype=np.float64)
    return w / w.sum()


def xor_with_tep_pmf(k: int, i: int, eb_weights: np.ndarray) -> np.ndarray:
    """pmf of w(e ^ e_B) for a uniform TEP of weight <= i and a given law of w(e_B)."""
    K = xor_weight_kernel(k)
    return np.einsum("u,v,uvj->j", eb_weights, _tep_weight_dist(k, i), K)


def _parity_from_message(spectrum: WeightSpectrumModel, q_pmf: np.ndarray) -> np.ndarray:
    """pmf of the parity weight of a codeword whose message weight has law ``q_pmf``."""
    return spectrum.pcp_table @ q_pmf


def _min_of_iid(pmf: np.ndarray, b: int) -> np.ndarray:
    """pmf of the minimum of ``b`` i.i.d. draws; ``b = 0`` gives an empty min."""
    if b <= 0:
        return np.zeros_like(pmf)
    F = np.clip(np.cumsum(pmf), 0.0, 1.0)
    F_prev = np.concatenate([[0.0], F[:-1]])
    return np.clip((1 - F_prev) ** b - (1 - F) ** b, 0.0, 1.0)


def _add_shifted(out: np.ndarray, pmf: np.ndarray, shift: int, weight: float) -> None:
    hi = min(len(out), shift + len(pmf))
    if shift < len(out):
        out[shift:hi] += weight * pmf[: hi - shift]


def _spectrum_check(ctx: OrderedStatsCtx, spectrum: WeightSpectrumModel) -> None:
    if spectrum.pcp_table is None or spectrum.pcp_table.shape != (ctx.n - ctx.k + 1, ctx.k + 1):
        raise ValueError("spectrum has no parity-weight table matching the code dimensions")


# ----- Hamming distance: exact mixtures -------------------------------------


def hamming_d0_pmf(ctx: OrderedStatsCtx, spectrum: WeightSpectrumModel) -> HammingDistModel:
    """Hamming distance between the 0-reprocessing estimate and the hard decision."""
    _spectrum_check(ctx, spectrum)
    n, k = ctx.n, ctx.k
    r = n - k
    p_mrb = ctx.mrb_error_pmf()
    p_par = ctx.error_count_pmf(k + 1, n) if k < n else np.array([1.0])
    p_e = float(p_mrb[0])
    q_law = np.zeros(k + 1)
    if p_e < 1:
        q_law[1:] = p_mrb[1:] / (1.0 - p_e)
    p_d = _parity_from_message(spectrum, q_law)
    p_wcp = np.einsum("u,v,uvj->j", p_d, p_par, xor_weight_kernel(r))
    pmf = np.zeros(n + 1)
    pmf[: r + 1] = p_e * p_par + (1.0 - p_e) * p_wcp
    return HammingDistModel(
        "D0_exact",
        {"pmf": pmf, "weights": np.array([p_e, 1 - p_e]), "p_parity_errors": p_par, "p_wcp": p_wcp},
        {"n": n, "k": k, "snr_db": ctx.params.snr_db, "order": 0, "spectrum": spectrum.mode},
    )


def _wecp_given(spectrum, q_pmf: np.ndarray, parity_errors: int, K: np.ndarray) -> np.ndarray:
    """pmf of the parity distance for a fixed number of parity errors."""
    ell = _parity_from_message(spectrum, q_pmf)
    return K[parity_errors].T @ ell


def hamming_di_pmf(
    ctx: OrderedStatsCtx, spectrum: WeightSpectrumModel, i: int, *, competitors: str = "full"
) -> HammingDistModel:
    """Minimum Hamming distance after all TEPs of weight <= i, assuming independent candidates.

    ``competitors`` sets the distance law of a non-matching candidate:
    ``"full"`` adds the TEP weight to its parity distance, ``"parity"`` uses
    the parity distance alone when the MRB has at most i errors and shifts it
    by i otherwise. In the hit term the transmitted codeword is chosen
    whenever no competitor lies strictly below u + v; index 0 belongs to the
    below-boundary part so the pmf normalizes.
    """
    _spectrum_check(ctx, spectrum)
    n, k = ctx.n, ctx.k
    if not 0 <= i <= k:
        raise ValueError(f"order {i} outside 0..{k}")
    if competitors not in ("full", "parity"):
        raise ValueError(f"unknown competitor law {competitors!r}")
    if i == 0:
        base = hamming_d0_pmf(ctx, spectrum)
        return HammingDistModel("Di_exact", dict(base.components), {**base.provenance, "kind_of": "D0"})
    p_mrb = ctx.mrb_error_pmf()
    p_par = ctx.error_count_pmf(k + 1, n) if k < n else np.array([1.0])
    pmf, miss, p_hi = hamming_di_mixture(p_mrb, p_par, spectrum, i, competitors=competitors)
    return HammingDistModel(
        "Di_exact",
        {"pmf": pmf, "miss": miss, "weights": np.array([1 - p_hi, p_hi])},
        {
            "n": n,
            "k": k,
            "snr_db": ctx.params.snr_db,
            "order": i,
            "spectrum": spectrum.mode,
            "competitors": competitors,
            "assumption": "candidate distances treated as independent",
        },
    )


def hamming_di_mixture(
    p_mrb: np.ndarray, p_par: np.ndarray, spectrum: WeightSpectrumModel, i: int, *, competitors: str = "full"
):
    """Core of :func:`hamming_di_pmf` for arbitrary MRB and parity error-count laws.

    Returns:
        (pmf, miss, p_hi) where ``miss`` is the part of ``pmf`` contributed by
        frames with more than ``i`` MRB errors (already weighted by ``p_hi``).
    """
    k = len(p_mrb) - 1
    r = len(p_par) - 1
    n = k + r
    K_par = xor_weight_kernel(r)
    K_mrb = xor_weight_kernel(k)
    teps = _tep_weight_dist(k, i)
    b_other = b_sum(1, i, k)
    b_all = b_sum(0, i, k)
    pmf = np.zeros(n + 1)
    miss = np.zeros(n + 1)

    def competitor(q_law, v, parity_shift):
        wecp = _wecp_given(spectrum, q_law, v, K_par)
        out = np.zeros(n + 1)
        if competitors == "full":
            for w, pw in enumerate(teps):
                if pw > 0:
                    _add_shifted(out, wecp, w, pw)
        else:
            _add_shifted(out, wecp, parity_shift, 1.0)
        return out

    for u in range(i + 1):
        if p_mrb[u] <= 0:
            continue
        onehot = np.zeros(k + 1)
        onehot[u] = 1.0
        q_law = np.einsum("u,v,uvj->j", onehot, teps, K_mrb)
        # the other candidates exclude e = e_B
        q_law[0] = 0.0
        if q_law.sum() > 0:
            q_law = q_law / q_law.sum()
        for v in range(r + 1):
            if p_par[v] <= 0:
                continue
            # with no competitors the transmitted codeword is the only candidate
            best_other = _min_of_iid(competitor(q_law, v, 0), b_other) if b_other else np.zeros(n + 1)
            edge = u + v
            term = np.zeros(n + 1)
            term[:edge] = best_other[:edge]
            term[edge] += best_other[edge:].sum() + (1.0 - best_other.sum())
            pmf += p_mrb[u] * p_par[v] * term

    p_hi = max(1.0 - float(p_mrb[: i + 1].sum()), 0.0)
    if p_hi > 0:
        eb = np.zeros(k + 1)
        eb[i + 1 :] = p_mrb[i + 1 :] / p_hi
        q_law = np.einsum("u,v,uvj->j", eb, teps, K_mrb)
        for v in range(r + 1):
            if p_par[v] <= 0:
                continue
            miss += p_hi * p_par[v] * _min_of_iid(competitor(q_law, v, i), b_all)
    return pmf + miss, miss, p_hi


def pe_of_tep(
    ctx: OrderedStatsCtx,
    e,
    alpha=None,
    *,
    rng: np.random.Generator | None = None,
    rel_target: float = 0.02,
    batch: int = 20000,
    max_samples: int = 400000,
) -> tuple[float, float]:
    """Probability that the MRB error pattern equals ``e``.

    With ``alpha`` (sorted reliabilities, length >= k) the exact conditional
    product is returned with zero standard error. Without it, the unconditional
    value is a Monte Carlo average over sorted reliability vectors.

    Returns:
        (probability, standard error)
    """
    e = np.asarray(e, dtype=np.uint8).ravel()
    k = ctx.k
    if e.size != k:
        raise ValueError(f"TEP length {e.size} != k = {k}")
    if alpha is not None:
        a = np.asarray(alpha, dtype=np.float64)[:k]
        lp, lq = log_bit_error_given_reliability(a, ctx.params)
        return float(np.exp(np.where(e == 1, lp, lq).sum())), 0.0
    rng = rng if rng is not None else np.random.default_rng(0)
    total = 0.0
    total_sq = 0.0
    count = 0
    while count < max_samples:
        r = 1.0 + rng.normal(0.0, ctx.params.sigma, size=(batch, ctx.n))
        a = -np.sort(-np.abs(r), axis=1)[:, :k]
        lp, lq = log_bit_error_given_reliability(a, ctx.params)
        vals = np.exp(np.where(e[None, :] == 1, lp, lq).sum(axis=1))
        total += vals.sum()
        total_sq += (vals * vals).sum()
        count += batch
        mean = total / count
        se = np.sqrt(max(total_sq / count - mean * mean, 0.0) / count)
        if mean > 0 and se <= rel_target * mean:
            return float(mean), float(se)
    raise MonteCarloBudgetError(
        f"Pe(e) estimate {mean:.3e} +- {se:.1e} missed relative target {rel_target} after {count} samples"
    )


def poisson_binomial(p: np.ndarray) -> np.ndarray:
    out = np.array([1.0])
    for pi in p:
        out = np.convolve(out, [1.0 - pi, pi])
    return out


def hamming_de_pmf(
    ctx: OrderedStatsCtx,
    spectrum: WeightSpectrumModel,
    tep_weight: int | None = None,
    *,
    e=None,
    alpha=None,
    rng: np.random.Generator | None = None,
) -> HammingDistModel:
    """Hamming distance of the candidate produced by one TEP.

    ``e`` defaults to the weight-``tep_weight`` TEP on the least reliable MRB
    positions. With ``alpha`` the error counts use the exact per-position
    probabilities given those reliabilities.
    """
    _spectrum_check(ctx, spectrum)
    n, k = ctx.n, ctx.k
    r = n - k
    if e is None:
        if tep_weight is None or not 0 <= tep_weight <= k:
            raise ValueError("give a TEP or a weight in 0..k")
        e = np.zeros(k, dtype=np.uint8)
        if tep_weight:
            e[k - tep_weight :] = 1
    e = np.asarray(e, dtype=np.uint8)
    w_e = int(e.sum())
    pe_e, pe_se = pe_of_tep(ctx, e, alpha, rng=rng)
    if alpha is not None:
        pe_pos = bit_error_given_reliability(np.asarray(alpha, dtype=np.float64), ctx.params)
        p_mrb = poisson_binomial(pe_pos[:k])
        p_par = poisson_binomial(pe_pos[k:])
    else:
        p_mrb = ctx.mrb_error_pmf()
        p_par = ctx.error_count_pmf(k + 1, n) if k < n else np.array([1.0])

    # law of w(e ^ e_B) given e != e_B
    K_mrb = xor_weight_kernel(k)
    q_law = K_mrb[:, w_e, :].T @ p_mrb
    q_law[0] = max(q_law[0] - pe_e, 0.0)
    q_law = q_law / q_law.sum() if q_law.sum() > 0 else q_law
    ell = _parity_from_message(spectrum, q_law)
    wecp = np.einsum("l,v,lvj->j", ell, p_par, xor_weight_kernel(r))
    pmf = np.zeros(n + 1)
    _add_shifted(pmf, pe_e * p_par, w_e, 1.0)
    _add_shifted(pmf, (1 - pe_e) * wecp, w_e, 1.0)
    return HammingDistModel(
        "De_exact",
        {"pmf": pmf, "weights": np.array([pe_e, 1 - pe_e]), "pe_stderr": pe_se},
        {"n": n, "k": k, "snr_db": ctx.params.snr_db, "tep_weight": w_e, "conditional": alpha is not None},
    )


# ----- Hamming distance: normal approximation -------------------------------


def _discretize(density, n: int) -> np.ndarray:
    """Integrate a density over the cells [j - 1/2, j + 1/2], j = 0..n.

    The end cells also take the tails beyond -1/2 and n + 1/2, so a density
    of unit mass gives a pmf of unit mass.
    """
    pad = n + 8
    edges = np.arange(-pad, n + pad + 2) - 0.5
    x = np.linspace(edges[0], edges[-1], (len(edges) - 1) * GAUSS_CELL_POINTS + 1)
    cum = integrate.cumulative_simpson(density(x), x=x, initial=0.0)
    cells = np.clip(np.diff(cum[::GAUSS_CELL_POINTS]), 0.0, None)
    out = cells[pad : pad + n + 1].copy()
    out[0] += cells[:pad].sum()
    out[-1] += cells[pad + n + 1 :].sum()
    return out


def hamming_gauss_approx(ctx: OrderedStatsCtx, i: int = 0) -> HammingDistModel:
    """Normal approximation of the minimum Hamming distance after order-i reprocessing."""
    n, k = ctx.n, ctx.k
    if not 0 <= i <= k:
        raise ValueError(f"order {i} outside 0..{k}")
    r = n - k
    p_mrb = ctx.mrb_error_pmf()
    p_par = ctx.error_count_pmf(k + 1, n)
    j = np.arange(r + 1)
    mu_e = float(j @ p_par)
    var_e = float(((j - mu_e) ** 2) @ p_par)
    sd_e = np.sqrt(max(var_e, 1e-12))
    mu_w, sd_w = r / 2.0, np.sqrt(r / 4.0)

    def f_w(x):
        return stats.norm.pdf(x, mu_w, sd_w)

    def sf_w(x):
        return stats.norm.sf(x, mu_w, sd_w)

    def f_min(x, b):
        if b <= 0:
            return np.zeros_like(x)
        return b * f_w(x) * sf_w(x) ** (b - 1)

    b_other = b_sum(1, i, k)
    b_all = b_sum(0, i, k)
    p_cum = float(p_mrb[: i + 1].sum())

    # both competitors are shifted by u so each hit term is the density of u + min(E, W~)
    def density(x):
        out = np.zeros_like(x)
        for u in range(i + 1):
            hit = stats.norm.pdf(x - u, mu_e, sd_e) * sf_w(x - u) ** b_other
            miss = f_min(x - u, b_other) * stats.norm.sf(x - u, mu_e, sd_e)
            out += p_mrb[u] * (hit + miss)
        return out + (1 - p_cum) * f_min(x - i, b_all)

    pmf = _discretize(density, n)
    return HammingDistModel(
        "D0_gauss" if i == 0 else "Di_gauss",
        {
            "pmf": pmf,
            "weights": np.array([p_cum, 1 - p_cum]),
            "means": np.array([mu_e, mu_w]),
            "variances": np.array([var_e, r / 4.0]),
        },
        {"n": n, "k": k, "snr_db": ctx.params.snr_db, "order": i},
    )


# ----- weighted Hamming distance ---------------------------------------------


def _moments(ctx: OrderedStatsCtx, mode: str, weighting: str) -> PairMoments:
    pm = ctx.pair_moments(mode)
    if weighting == "Joint":
        return pm
    if weighting == "Product":
        return pm.product_form()
    raise ValueError(f"unknown weighting {weighting!r}")


def _parity_diff_probs(spectrum: WeightSpectrumModel, q_law: np.ndarray, pe: np.ndarray, pe_pair: np.ndarray):
    """P(candidate parity bit differs from the hard decision), single and pairwise.

    ``q_law`` is the law of the message weight that generated the candidate's
    parity offset; the parity pattern and channel errors are taken as independent.
    """
    bit = float(spectrum.pcp_bit() @ q_law)
    pair = float(spectrum.pcp_bit_pair() @ q_law)
    single = bit * (1 - pe) + (1 - bit) * pe
    p11 = pe_pair
    p10 = pe[:, None] - pe_pair
    p01 = pe[None, :] - pe_pair
    p00 = 1 - pe[:, None] - pe[None, :] + pe_pair
    both = pair * p00 + (bit - pair) * (p01 + p10) + (1 - 2 * bit + pair) * p11
    np.fill_diagonal(both, single)
    return single, np.clip(both, 0.0, 1.0)


@dataclass(frozen=True)
class _ParityOffset:
    """Probabilities that one / two given parity bits of a candidate's offset are set."""

    bit: float
    pair: float

    @classmethod
    def from_law(cls, spectrum: WeightSpectrumModel, q_law: np.ndarray) -> "_ParityOffset":
        return cls(float(spectrum.pcp_bit() @ q_law), float(spectrum.pcp_bit_pair() @ q_law))


def _diff_moments(pm: PairMoments, k: int, off: _ParityOffset):
    """Moments of d_v A_v over parity positions, d_v = offset bit XOR channel error.

    Returns (E[d_v A_v], E[d_u d_v A_u A_v] on parity x parity,
    E[A_u d_v A_v] on MRB x parity).
    """
    P = slice(k, None)
    S, Se, See = pm.second[P, P], pm.err_second[P, P], pm.both_second[P, P]
    bit, pair = off.bit, off.pair
    s00 = S - Se - Se.T + See
    mixed = Se + Se.T - 2 * See
    both = pair * s00 + (bit - pair) * mixed + (1 - 2 * bit + pair) * See
    diag = bit * (np.diag(S) - np.diag(Se)) + (1 - bit) * np.diag(Se)
    np.fill_diagonal(both, diag)
    single = bit * (pm.mean[P] - pm.err_mean[P]) + (1 - bit) * pm.err_mean[P]
    err_on_parity = pm.err_second[P, :k].T
    cross = bit * (pm.second[:k, P] - err_on_parity) + (1 - bit) * err_on_parity
    return single, both, cross


def _hit_moments(pm: PairMoments, k: int, coef_b: float, coef_bb: float, coef_bp: float):
    B, P = slice(0, k), slice(k, None)
    See = pm.both_second
    mu = coef_b * pm.err_mean[B].sum() + pm.err_mean[P].sum()
    m2 = coef_bb * See[B, B].sum() + See[P, P].sum() + 2 * coef_bp * See[B, P].sum()
    return float(mu), float(max(m2 - mu * mu, 0.0))


def _candidate_cross_moment(pm: PairMoments, k: int, f_b: float, bit: float, cross: np.ndarray) -> float:
    """E[D D'] for two distinct candidates sharing the channel but not the offset.

    TEP bits of different candidates are treated as independent, as are the
    two parity offsets, so only the reliabilities and errors are shared.
    """
    P = slice(k, None)
    S, Se, See = pm.second[P, P], pm.err_second[P, P], pm.both_second[P, P]
    s00 = S - Se - Se.T + See
    pp = bit**2 * s00 + bit * (1 - bit) * (Se + Se.T - 2 * See) + (1 - bit) ** 2 * See
    np.fill_diagonal(pp, bit**2 * (np.diag(S) - np.diag(Se)) + (1 - bit) ** 2 * np.diag(Se))
    return float(f_b**2 * pm.second[:k, :k].sum() + 2 * f_b * cross.sum() + pp.sum())


def _miss_moments(pm: PairMoments, spectrum, q_law, k: int, i: int, printed_cov: bool = False):
    """Mean, variance and pairwise covariance of one non-matching candidate's WHD.

    ``printed_cov`` selects the closed covariance built from the reliability
    covariances only; otherwise the covariance follows from the shared
    channel moments.
    """
    B, P = slice(0, k), slice(k, None)
    b_all = b_sum(0, i, k)
    f_b = b_sum(0, i - 1, k - 1) / b_all
    f_bb = b_sum(0, i - 2, k - 2) / b_all
    g_b = b_sum(0, i, k - 1) / b_all
    off = _ParityOffset.from_law(spectrum, q_law)
    single, both, cross = _diff_moments(pm, k, off)
    sBB = pm.second[B, B]
    upper = np.triu_indices(k, 1)
    mu = f_b * pm.mean[B].sum() + single.sum()
    m2 = f_b * np.trace(sBB) + 2 * f_bb * sBB[upper].sum() + both.sum() + 2 * f_b * cross.sum()
    var = max(m2 - mu * mu, 0.0)

    if not printed_cov:
        return float(mu), float(var), _candidate_cross_moment(pm, k, f_b, off.bit, cross) - mu * mu

    pc, pc2 = _parity_diff_probs(spectrum, q_law, pm.pe[P], pm.pe_pair[P, P])
    cov = pm.cov
    cBB = cov[B, B]
    up_p = np.triu_indices(len(pc), 1)
    not_u_v = pc[None, :] - pc2
    u_not_v = pc[:, None] - pc2
    c = (
        2 * (b_sum(0, i - 1, k - 2) / b_all) ** 2 * cBB[upper].sum()
        + 2 * (not_u_v * u_not_v * cov[P, P])[up_p].sum()
        + 2 * (f_b * g_b * ((1 - pc) * pc)[None, :] * cov[B, P]).sum()
    )
    return float(mu), float(var), float(c)


def _correlation(cov: float, var: float, label: str) -> float:
    if var <= 0:
        return 0.0
    rho = cov / var
    if 0 <= rho < 1:
        return float(rho)
    if -RHO_SLACK <= rho < 0:
        warnings.warn(f"{label} = {rho:.2e} clamped to 0", RuntimeWarning, stacklevel=3)
        return 0.0
    if 1 <= rho < 1 + RHO_SLACK:
        warnings.warn(f"{label} = {rho:.6f} clamped below 1", RuntimeWarning, stacklevel=3)
        return 1 - RHO_SLACK
    raise ArithmeticError(f"{label} = {rho:.4f} outside [0, 1)")


class ExchangeableMin:
    """Minimum of ``b`` exchangeable normals with common mean, variance and correlation."""

    def __init__(self, mean: float, var: float, rho: float, b: int, nodes: int = HERMITE_NODES):
        self.mean, self.sd, self.rho, self.b = mean, np.sqrt(max(var, 1e-300)), rho, b
        z, w = np.polynomial.hermite_e.hermegauss(nodes)
        self.z, self.w = z, w / w.sum()

    def _y(self, x):
        x = np.asarray(x, dtype=np.float64)[..., None]
        return ((x - self.mean) / self.sd - np.sqrt(self.rho) * self.z) / np.sqrt(1 - self.rho)

    def pdf(self, x):
        if self.b <= 0:
            return np.zeros_like(np.asarray(x, dtype=np.float64))
        y = self._y(x)
        log_f = np.log(self.b) + stats.norm.logpdf(y) + (self.b - 1) * special.log_ndtr(-y)
        return (np.exp(log_f) @ self.w) / (self.sd * np.sqrt(1 - self.rho))

    def sf(self, x):
        if self.b <= 0:
            return np.ones_like(np.asarray(x, dtype=np.float64))
        y = self._y(x)
        return np.exp(self.b * special.log_ndtr(-y)) @ self.w


def _grid_for(branches, truncate: bool, points: int = WHD_GRID):
    lo = min(m - 10 * np.sqrt(v) for m, v in branches)
    hi = max(m + 10 * np.sqrt(v) for m, v in branches)
    if truncate:
        lo = max(lo, 0.0)
    return np.linspace(lo, hi, points)


def _finish(x, pdf, truncate):
    pdf = np.clip(pdf, 0.0, None)
    cdf = integrate.cumulative_simpson(pdf, x=x, initial=0.0)
    if truncate and cdf[-1] > 0:
        pdf, cdf = pdf / cdf[-1], cdf / cdf[-1]
    return pdf, cdf


def whd_di_gauss(
    ctx: OrderedStatsCtx,
    spectrum: WeightSpectrumModel,
    i: int = 0,
    *,
    mode: str = "Fast",
    weighting: str = "Joint",
    truncate: bool = False,
) -> WhdDistModel:
    """Minimum WHD after order-i reprocessing as a three-branch normal model.

    ``weighting="Joint"`` uses the moments of error-weighted reliabilities
    such as E[e_u A_u] and derives the candidate correlation from the shared
    channel; ``"Product"`` replaces the weighted moments by Pe(u) E[A_u] and
    the like and uses the closed reliability-covariance form.
    """
    _spectrum_check(ctx, spectrum)
    n, k = ctx.n, ctx.k
    if not 0 <= i <= k:
        raise ValueError(f"order {i} outside 0..{k}")
    pm = _moments(ctx, mode, weighting)
    p_mrb = ctx.mrb_error_pmf()
    p_cum = float(p_mrb[: i + 1].sum())
    p_i = float(p_mrb[i])
    p_im1 = float(p_mrb[i - 1]) if i >= 1 else 0.0

    hit = _hit_moments(
        pm, k,
        coef_b=1 - p_i / p_cum,
        coef_bb=1 - (p_i + p_im1) / p_cum,
        coef_bp=1 - p_i / p_cum,
    )

    K_mrb = xor_weight_kernel(k)
    teps = _tep_weight_dist(k, i)

    def q_law_for(eb_law):
        q = np.einsum("u,v,uvj->j", eb_law, teps, K_mrb)
        q[0] = 0.0
        return q / q.sum()

    b_other = b_sum(1, i, k)
    b_all = b_sum(0, i, k)
    branches = [hit]
    mu1 = var1 = rho1 = 0.0
    if b_other > 0:
        low = np.zeros(k + 1)
        low[: i + 1] = p_mrb[: i + 1] / p_cum
        mu1, var1, c1 = _miss_moments(pm, spectrum, q_law_for(low), k, i, weighting == "Product")
        rho1 = _correlation(c1, var1, "rho1")
        branches.append((mu1, var1))

    p_hi = 1 - p_cum
    mu2 = var2 = rho2 = 0.0
    if p_hi > 1e-15:
        high = np.zeros(k + 1)
        high[i + 1 :] = p_mrb[i + 1 :] / p_hi
        mu2, var2, c2 = _miss_moments(pm, spectrum, q_law_for(high), k, i, weighting == "Product")
        rho2 = _correlation(c2, var2, "rho2")
        branches.append((mu2, var2))

    x = _grid_for(branches, truncate)
    hit_sd = np.sqrt(max(hit[1], 1e-300))
    f_hit = stats.norm.pdf(x, hit[0], hit_sd)
    s_hit = stats.norm.sf(x, hit[0], hit_sd)
    miss1 = ExchangeableMin(mu1, var1, rho1, b_other)
    pdf = p_cum * (f_hit * miss1.sf(x) + miss1.pdf(x) * s_hit)
    if p_hi > 1e-15:
        pdf = pdf + p_hi * ExchangeableMin(mu2, var2, rho2, b_all).pdf(x)
    pdf, cdf = _finish(x, pdf, truncate)
    return WhdDistModel(
        "Di_gauss",
        {
            "x": x,
            "pdf": pdf,
            "cdf": cdf,
            "weights": np.array([p_cum, p_hi]),
            "hit": hit,
            "miss_low": (mu1, var1),
            "miss_high": (mu2, var2),
            "order": i,
            "mode": mode,
            "weighting": weighting,
        },
        rho1,
        rho2,
    )


# ----- exact-structure WHD for short parity parts -----------------------------


def _bit_reverse_order(bits: int) -> np.ndarray:
    idx = np.arange(1 << bits)
    out = np.zeros_like(idx)
    for b in range(bits):
        out |= ((idx >> b) & 1) << (bits - 1 - b)
    return out


def _walsh_hadamard(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    h = 1
    while h < len(a):
        a = a.reshape(-1, 2, h)
        a = np.stack([a[:, 0] + a[:, 1], a[:, 0] - a[:, 1]], axis=1).reshape(-1)
        h *= 2
    return a


def xor_convolve(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Distribution of x ^ y for independent x ~ p and y ~ q over {0,1}^m."""
    return _walsh_hadamard(_walsh_hadamard(p) * _walsh_hadamard(q)) / len(p)


class SignPatternTable:
    """Probabilities of sorted hard-decision error patterns for short parity parts.

    Pattern index bit ``b`` refers to sorted position ``k + 1 + b``. All tables
    come from nested cumulative integrals of ``f_R(x)`` (correct) and
    ``f_R(-x)`` (error) on a uniform grid.
    """

    def __init__(self, ctx: OrderedStatsCtx, points: int = TINY_GRID):
        n, k = ctx.n, ctx.k
        r = n - k
        self.ctx = ctx
        x = np.linspace(0.0, ctx.alpha_max, points)
        sigma = ctx.params.sigma
        g = np.stack([stats.norm.pdf(x, 1.0, sigma), stats.norm.pdf(-x, 1.0, sigma)])
        # suffix tree: L[z](x) = integral over x > x_{k+1} > ... > x_n > 0
        L = np.ones((1, points))
        for depth in range(r):
            nxt = np.empty((2 * L.shape[0], points))
            for s in (0, 1):
                nxt[s * L.shape[0] : (s + 1) * L.shape[0]] = integrate.cumulative_simpson(
                    g[s][None, :] * L, x=x, axis=1, initial=0.0
                )
            L = nxt
        self.suffix = L[self._suffix_index_map(r)]
        self.x = x
        self.g = g
        self.log_scale = special.gammaln(n + 1) - special.gammaln(k)

    @staticmethod
    def _suffix_index_map(r: int) -> np.ndarray:
        """Row of the suffix table for each pattern in natural bit order.

        Rows are built by prepending: row = s * 2^depth + old_row, so the bit
        at value 2^depth belongs to position n - depth, i.e. natural bit
        r - 1 - depth. Mapping natural index -> row is a bit reversal.
        """
        return _bit_reverse_order(r)

    def _join(self, top_density: np.ndarray) -> np.ndarray:
        """n!/(k-1)! * integral of top_density(x) * suffix[z](x) over x, per pattern z."""
        vals = integrate.simpson(top_density[None, :] * self.suffix, x=self.x, axis=1)
        return np.exp(self.log_scale) * vals

    def parity_given_mrb_correct(self) -> np.ndarray:
        """P(MRB all correct and parity pattern = z)."""
        ctx = self.ctx
        s0 = stats.norm.sf(self.x, 1.0, ctx.params.sigma)
        return self._join(s0 ** (ctx.k - 1) * self.g[0])

    def parity_marginal(self) -> np.ndarray:
        """P(parity pattern = z), unconditional over the MRB."""
        ctx = self.ctx
        sigma = ctx.params.sigma
        sf = stats.norm.sf(self.x, 1.0, sigma) + stats.norm.cdf(-self.x, 1.0, sigma)
        return self._join(sf ** (ctx.k - 1) * (self.g[0] + self.g[1]))


def parity_offset_pmf(spectrum: WeightSpectrumModel, p_mrb: np.ndarray) -> np.ndarray:
    """P(parity of the 0-reprocessing codeword offset = z) given the MRB is wrong."""
    r = spectrum.n - spectrum.k
    p0 = p_mrb[0]
    q_law = np.zeros_like(p_mrb)
    q_law[1:] = p_mrb[1:] / (1 - p0)
    by_weight = _parity_from_message(spectrum, q_law)
    w = np.array([bin(z).count("1") for z in range(1 << r)])
    denom = np.array([comb(r, int(t)) for t in w], dtype=np.float64)
    return by_weight[w] / denom


def _sampled_parity_sums(ctx, offset_pmf, p_e, samples, rng):
    """Draws of the D0 WHD with true conditional reliabilities at the disagreement set.

    Hit draws come from frames whose MRB is error-free; miss draws XOR an
    independent parity offset onto the frame's parity error pattern.
    Returns (values, weights) with the weights summing to one.
    """
    n, k = ctx.n, ctx.k
    r = n - k
    rx = 1.0 + rng.normal(0.0, ctx.params.sigma, size=(samples, n))
    order = np.argsort(-np.abs(rx), axis=1)
    rs = np.take_along_axis(rx, order, axis=1)
    a_par = np.abs(rs[:, k:])
    err = rs < 0
    mrb_ok = ~err[:, :k].any(axis=1)
    z = (err[:, k:] * (1 << np.arange(r))).sum(axis=1)
    offset = rng.choice(1 << r, size=samples, p=offset_pmf / offset_pmf.sum())
    t = z ^ offset
    bits = (np.arange(r)[None, :])
    hit_vals = (((z[:, None] >> bits) & 1) * a_par).sum(axis=1)[mrb_ok]
    miss_vals = (((t[:, None] >> bits) & 1) * a_par).sum(axis=1)
    values = np.concatenate([hit_vals, miss_vals])
    weights = np.concatenate(
        [np.full(hit_vals.size, p_e / max(hit_vals.size, 1)), np.full(samples, (1 - p_e) / samples)]
    )
    return values, weights


def whd_d0_exact_tiny(
    ctx: OrderedStatsCtx,
    spectrum: WeightSpectrumModel,
    *,
    mode: str = "Exact",
    components: str = "Gaussian",
    samples: int = 200000,
    rng: np.random.Generator | None = None,
    support_cap: int = SUPPORT_CAP,
    grid_points: int = WHD_GRID,
) -> WhdDistModel:
    """WHD of the 0-reprocessing estimate by enumerating the parity disagreement set.

    Mixture weights are exact. ``components="Gaussian"`` gives each
    disagreement set a normal law with the unconditional moments of the sorted
    reliabilities (``mode`` picks Fast or Exact moments); ``"Sampled"``
    estimates the continuous part from draws that keep the reliabilities
    consistent with the error pattern.
    """
    _spectrum_check(ctx, spectrum)
    n, k = ctx.n, ctx.k
    r = n - k
    if r > support_cap:
        raise ValueError(f"n - k = {r} exceeds the enumeration cap {support_cap}")
    table = SignPatternTable(ctx)
    pe_t = table.parity_given_mrb_correct()
    p_ep = table.parity_marginal()
    p_mrb = ctx.mrb_error_pmf()
    p_e = float(p_mrb[0])
    offset_pmf = parity_offset_pmf(spectrum, p_mrb) if p_e < 1 else np.eye(1, 1 << r).ravel()
    pc_t = np.clip(xor_convolve(offset_pmf, p_ep), 0.0, None)
    weights = pe_t + (1 - p_e) * pc_t
    atom = float(weights[0])

    mean = ctx.mean_vector(mode)[k:]
    cov = ctx.pair_moments(mode).cov[k:, k:]
    masks = ((np.arange(1 << r)[:, None] >> np.arange(r)[None, :]) & 1).astype(np.float64)
    comp_mean = masks @ mean
    comp_var = np.einsum("ti,ij,tj->t", masks, cov, masks)
    rest = slice(1, None)
    branches = list(zip(comp_mean[rest], comp_var[rest])) or [(0.0, 1.0)]
    x = _grid_for(branches, False, grid_points)

    if components == "Gaussian":
        sd = np.sqrt(np.maximum(comp_var[rest], 1e-300))
        pdf = np.zeros_like(x)
        cdf = np.zeros_like(x)
        for start in range(0, len(sd), 256):
            sl = slice(start, start + 256)
            w = weights[rest][sl]
            z = (x[None, :] - comp_mean[rest][sl, None]) / sd[sl, None]
            pdf += w @ (stats.norm.pdf(z) / sd[sl, None])
            cdf += w @ stats.norm.cdf(z)
    elif components == "Sampled":
        rng = rng if rng is not None else np.random.default_rng(0)
        vals, w = _sampled_parity_sums(ctx, offset_pmf, p_e, samples, rng)
        keep = vals > 0
        vals, w = vals[keep], w[keep]
        w = w * (1 - atom) / w.sum()
        x = np.linspace(0.0, max(float(vals.max()), 1e-9) * 1.01, grid_points)
        srt = np.argsort(vals)
        cum = np.concatenate([[0.0], np.cumsum(w[srt])])
        cdf = cum[np.searchsorted(vals[srt], x, side="right")]
        hist, _ = np.histogram(vals, bins=np.append(x, x[-1] + (x[1] - x[0])), weights=w)
        pdf = hist / (x[1] - x[0])
    else:
        raise ValueError(f"unknown component mode {components!r}")
    return WhdDistModel(
        "D0_exact_tiny",
        {
            "x": x,
            "pdf": pdf,
            "cdf": cdf,
            "atom": atom,
            "weights_hit": pe_t,
            "weights_miss": pc_t,
            "p_e": p_e,
            "mode": mode,
            "components": components,
        },
        support_cap=support_cap,
    )


def whd_de_given_e(
    ctx: OrderedStatsCtx,
    spectrum: WeightSpectrumModel,
    e,
    *,
    mode: str = "Fast",
    weighting: str = "Joint",
    pe_e: float | None = None,
    rng: np.random.Generator | None = None,
    truncate: bool = False,
) -> WhdDistModel:
    """WHD of the candidate produced by one TEP ``e`` as a two-branch normal mixture."""
    _spectrum_check(ctx, spectrum)
    k = ctx.k
    e = np.asarray(e, dtype=np.uint8).ravel()
    if e.size != k:
        raise ValueError(f"TEP length {e.size} != k = {k}")
    if pe_e is None:
        pe_e, _ = pe_of_tep(ctx, e, rng=rng)
    pm = _moments(ctx, mode, weighting)
    supp = np.flatnonzero(e)
    P = slice(k, None)

    # hit: e_B = e, so the support positions are channel errors
    pe_s = np.maximum(pm.pe[supp], 1e-300)
    pair_s = np.maximum(pm.pe_pair[np.ix_(supp, supp)], 1e-300)
    hit_mu = (pm.err_mean[supp] / pe_s).sum() + pm.err_mean[P].sum()
    hit_m2 = (
        (pm.both_second[np.ix_(supp, supp)] / pair_s).sum()
        + 2 * (pm.both_second[supp, k:] / pe_s[:, None]).sum()
        + pm.both_second[P, P].sum()
    )
    hit = (float(hit_mu), float(max(hit_m2 - hit_mu**2, 0.0)))

    p_mrb = ctx.mrb_error_pmf()
    q_law = xor_weight_kernel(k)[:, int(e.sum()), :].T @ p_mrb
    q_law[0] = 0.0
    q_law = q_law / q_law.sum()
    single, both, cross = _diff_moments(pm, k, _ParityOffset.from_law(spectrum, q_law))
    miss_mu = pm.mean[supp].sum() + single.sum()
    miss_m2 = pm.second[np.ix_(supp, supp)].sum() + both.sum() + 2 * cross[supp].sum()
    miss = (float(miss_mu), float(max(miss_m2 - miss_mu**2, 0.0)))

    x = _grid_for([hit, miss], truncate)
    pdf = pe_e * stats.norm.pdf(x, hit[0], np.sqrt(max(hit[1], 1e-300)))
    pdf += (1 - pe_e) * stats.norm.pdf(x, miss[0], np.sqrt(max(miss[1], 1e-300)))
    pdf, cdf = _finish(x, pdf, truncate)
    return WhdDistModel(
        "De_given_e",
        {"x": x, "pdf": pdf, "cdf": cdf, "weights": np.array([pe_e, 1 - pe_e]), "hit": hit, "miss": miss},
    )


def write_model_csv(path, model) -> None:
    """Dump a model as ``x, value, branch`` rows."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["# schema", "osdlab-dist-v1", model.kind])
        w.writerow(["x", "value", "branch"])
        if isinstance(model, HammingDistModel):
            for j, p in enumerate(model.pmf):
                w.writerow([j, repr(float(p)), "pmf"])
        else:
            if model.atom:
                w.writerow([0.0, repr(model.atom), "atom"])
            for xi, p in zip(model.x, model.pdf):
                w.writerow([repr(float(xi)), repr(float(p)), "pdf"])
