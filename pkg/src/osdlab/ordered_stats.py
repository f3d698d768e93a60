"""Distributions of sorted reliabilities and of error counts in sorted blocks.

Positions are 1-based throughout: ``u = 1`` is the most reliable position
after sorting ``|r|`` in descending order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, special, stats

from .channel import (
    ChannelParams,
    bit_error_given_reliability,
    q_function,
    reliability_cdf,
    reliability_pdf,
    reliability_sf,
)

QUAD_EPSABS = 1e-10
QUAD_EPSREL = 1e-8
# reported quadrature error above this is treated as non-convergence
QUAD_FAIL_ERR = 1e-6
INTERIOR_GRID = 256
PAIR_GRID = 48
BISECT_TOL = 1e-10
COV_CLAMP = 1e-9
SUPPORT_TAIL = 1e-15


class QuadratureError(RuntimeError):
    pass


def _log_falling(n: int, *parts: int) -> float:
    """log of the multinomial n! / prod(parts!)."""
    return float(special.gammaln(n + 1) - sum(special.gammaln(p + 1) for p in parts))


def _quad_vec(fn, lo, hi, points=None):
    res, err = integrate.quad_vec(
        fn, lo, hi, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, norm="max", points=points, limit=2000
    )
    if not np.all(np.isfinite(res)) or err > QUAD_FAIL_ERR:
        raise QuadratureError(f"adaptive quadrature did not converge (error estimate {err:.2e})")
    return res


def _safe_log(x):
    with np.errstate(divide="ignore"):
        return np.log(np.maximum(x, 0.0))


@dataclass
class OrderedStatsCtx:
    """Order-statistic model of one (n, k, N0) configuration, with memoized results."""

    n: int
    k: int
    params: ChannelParams
    q_mode: str = "Exact"
    cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not 1 <= self.k <= self.n:
            raise ValueError(f"need 1 <= k <= n, got n={self.n}, k={self.k}")
        self.alpha_max = self.params.alpha_max
        gl_x, gl_w = np.polynomial.legendre.leggauss(INTERIOR_GRID)
        self.grid = (gl_x, gl_w)
        self.cache["mean"], self.cache["var"] = self._normal_moments()

    # ----- index checks -------------------------------------------------

    def _check_index(self, u: int) -> int:
        u = int(u)
        if not 1 <= u <= self.n:
            raise IndexError(f"position {u} outside 1..{self.n}")
        return u

    def _check_pair(self, u: int, v: int) -> tuple[int, int]:
        u, v = self._check_index(u), self._check_index(v)
        if not u < v:
            raise IndexError(f"need u < v, got u={u}, v={v}")
        return u, v

    # ----- channel pieces ----------------------------------------------

    def _f(self, x):
        return reliability_pdf(x, self.params)

    def _F(self, x):
        return reliability_cdf(x, self.params)

    def _S(self, x):
        return reliability_sf(x, self.params)

    # ----- exact densities ---------------------------------------------

    def log_ordered_pdf(self, u: int, x):
        u = self._check_index(u)
        n = self.n
        x = np.asarray(x, dtype=np.float64)
        const = _log_falling(n, u - 1, n - u)
        out = const + _safe_log(self._f(x))
        if u > 1:
            out = out + (u - 1) * _safe_log(self._S(x))
        if n > u:
            out = out + (n - u) * _safe_log(self._F(x))
        return np.where(x >= 0, out, -np.inf)

    def ordered_pdf(self, u: int):
        """Density of the u-th largest reliability."""
        u = self._check_index(u)
        return lambda x: np.exp(self.log_ordered_pdf(u, x))

    def ordered_cdf(self, u: int, x):
        """P(A_u <= x): at least n-u+1 of the n reliabilities are below x."""
        u = self._check_index(u)
        return stats.binom.sf(self.n - u, self.n, self._F(x))

    def ordered_joint_pdf(self, u: int, v: int):
        """Joint density of the u-th and v-th largest reliabilities, u < v."""
        u, v = self._check_pair(u, v)
        n = self.n
        const = _log_falling(n, u - 1, v - u - 1, n - v)

        def pdf(xu, xv):
            xu = np.asarray(xu, dtype=np.float64)
            xv = np.asarray(xv, dtype=np.float64)
            val = const + _safe_log(self._f(xu)) + _safe_log(self._f(xv))
            if u > 1:
                val = val + (u - 1) * _safe_log(self._S(xu))
            if v - u > 1:
                val = val + (v - u - 1) * _safe_log(self._S(xv) - self._S(xu))
            if n > v:
                val = val + (n - v) * _safe_log(self._F(xv))
            ok = (xv <= xu) & (xv >= 0)
            return np.where(ok, np.exp(np.where(ok, val, -np.inf)), 0.0)

        return pdf

    def support(self, u: int) -> tuple[float, float]:
        """Interval carrying all but ~1e-15 of the u-th order statistic's mass."""
        key = ("support", u)
        if key not in self.cache:
            u = self._check_index(u)
            hi_cap = self.alpha_max
            lo = self._bisect_scalar(lambda x: self.ordered_cdf(u, x), SUPPORT_TAIL, 0.0, hi_cap)
            hi = self._bisect_scalar(lambda x: self.ordered_cdf(u, x), 1.0 - SUPPORT_TAIL, 0.0, hi_cap)
            self.cache[key] = (lo, max(hi, lo + 1e-9))
        return self.cache[key]

    @staticmethod
    def _bisect_scalar(fn, target, lo, hi):
        if fn(lo) >= target:
            return lo
        if fn(hi) <= target:
            return hi
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if fn(mid) < target:
                lo = mid
            else:
                hi = mid
            if hi - lo < BISECT_TOL:
                break
        return 0.5 * (lo + hi)

    # ----- normal approximation ----------------------------------------

    def inverse_cdf(self, p):
        """F_A^{-1} by bisection, vectorized over ``p``."""
        p = np.atleast_1d(np.asarray(p, dtype=np.float64))
        if np.any((p < 0) | (p > 1)):
            raise ValueError("probabilities must lie in [0, 1]")
        lo = np.zeros_like(p)
        hi = np.full_like(p, 1.0)
        # grow the bracket until F(hi) >= p everywhere
        for _ in range(200):
            short = self._F(hi) < p
            if not short.any():
                break
            hi = np.where(short, hi * 2.0, hi)
        else:
            raise ArithmeticError("could not bracket F_A^{-1}; target too close to 1")
        while np.max(hi - lo) > BISECT_TOL:
            mid = 0.5 * (lo + hi)
            below = self._F(mid) < p
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        out = 0.5 * (lo + hi)
        return np.where(p <= 0, 0.0, out)

    def _normal_moments(self):
        n = self.n
        u = np.arange(1, n + 1, dtype=np.float64)
        mean = self.inverse_cdf(1.0 - u / n)
        N0 = self.params.N0
        dens = np.exp(-((mean + 1) ** 2) / N0) + np.exp(-((mean - 1) ** 2) / N0)
        var = np.pi * N0 * (n - u) * u / n**3 / dens**2
        return mean, var

    def ordered_normal_approx(self, u: int) -> tuple[float, float]:
        u = self._check_index(u)
        return float(self.cache["mean"][u - 1]), float(self.cache["var"][u - 1])

    def ordered_joint_normal_approx(self, u: int, v: int, alpha_u: float) -> tuple[float, float]:
        """Mean and variance of the v-th reliability given the u-th equals ``alpha_u``."""
        u, v = self._check_pair(u, v)
        n = self.n
        F_u = float(self._F(alpha_u))
        cond_mean = float(self.inverse_cdf(F_u * (n - v) / (n - u))[0])
        N0 = self.params.N0
        dens = np.exp(-((cond_mean - 1) ** 2) / N0) + np.exp(-((cond_mean + 1) ** 2) / N0)
        if F_u <= 0:
            return cond_mean, 0.0
        cond_var = np.pi * N0 * (n - v) * (v - u) / (n - u) ** 3 * (dens / F_u) ** -2
        return cond_mean, float(cond_var)

    # ----- exact moments -----------------------------------------------

    def _all_ordered_pdf(self, x):
        """Vector of all n order-statistic densities at scalar ``x``."""
        n = self.n
        u = np.arange(1, n + 1)
        if x < 0:
            return np.zeros(n)
        log_const = special.gammaln(n + 1) - special.gammaln(u) - special.gammaln(n - u + 1)
        lf, lF, lS = _safe_log(self._f(x)), _safe_log(self._F(x)), _safe_log(self._S(x))
        with np.errstate(invalid="ignore"):
            val = log_const + lf + np.where(u > 1, (u - 1) * lS, 0.0) + np.where(n > u, (n - u) * lF, 0.0)
        return np.exp(np.nan_to_num(val, nan=-np.inf))

    def exact_means(self) -> np.ndarray:
        if "exact_mean" not in self.cache:
            m = self.cache["mean"]
            self.cache["exact_mean"] = _quad_vec(
                lambda x: x * self._all_ordered_pdf(x), 0.0, self.alpha_max, points=m[m > 0]
            )
        return self.cache["exact_mean"]

    def exact_second_moments(self) -> np.ndarray:
        if "exact_m2" not in self.cache:
            m = self.cache["mean"]
            self.cache["exact_m2"] = _quad_vec(
                lambda x: x * x * self._all_ordered_pdf(x), 0.0, self.alpha_max, points=m[m > 0]
            )
        return self.cache["exact_m2"]

    def exact_variances(self) -> np.ndarray:
        return np.maximum(self.exact_second_moments() - self.exact_means() ** 2, 0.0)

    def _pair_grid(self, u: int, v: int, nodes: int = INTERIOR_GRID):
        """Gauss-Legendre nodes for (A_u, A_v), u < v, following the x_v <= x_u edge.

        Returns the node arrays and the normalized joint-density weights.
        """
        t, tw = np.polynomial.legendre.leggauss(nodes)
        lo_u, hi_u = self.support(u)
        lo_v, hi_v = self.support(v)
        xu = 0.5 * (hi_u - lo_u) * (t + 1) + lo_u
        wu = 0.5 * (hi_u - lo_u) * tw
        top = np.clip(np.minimum(hi_v, xu), lo_v, None)
        XV = lo_v + 0.5 * (top - lo_v)[:, None] * (t[None, :] + 1)
        WV = 0.5 * (top - lo_v)[:, None] * tw[None, :]
        XU = np.broadcast_to(xu[:, None], XV.shape)
        dens = self.ordered_joint_pdf(u, v)(XU, XV) * wu[:, None] * WV
        mass = dens.sum()
        if not mass > 0:
            raise QuadratureError(f"joint density of ({u}, {v}) has no mass on its grid")
        return XU, XV, dens / mass, float(mass)

    def covariance_entries(self, u: int, v: int, mode: str = "Fast") -> float:
        """cov(A_u, A_v) for u <= v, by 2-D quadrature or the bivariate normal model."""
        u, v = self._check_index(u), self._check_index(v)
        if u > v:
            raise IndexError(f"need u <= v, got u={u}, v={v}")
        key = ("cov", mode, u, v)
        if key in self.cache:
            return self.cache[key]
        if mode == "Fast":
            if u == v:
                val = float(self.cache["var"][u - 1])
            else:
                n = self.n
                mu_u, mu_v = self.cache["mean"][u - 1], self.cache["mean"][v - 1]
                val = u * (n - v) / (n**3 * self._f(mu_u) * self._f(mu_v))
        elif mode == "Exact":
            if u == v:
                val = float(self.exact_variances()[u - 1])
            else:
                XU, XV, dens, _ = self._pair_grid(u, v)
                cross = (XU * XV * dens).sum()
                m = self.exact_means()
                val = float(cross - m[u - 1] * m[v - 1])
        else:
            raise ValueError(f"unknown mode {mode!r}")
        val = float(val)
        if -COV_CLAMP < val < 0:
            val = 0.0
        self.cache[key] = val
        return val

    def mean_vector(self, mode: str = "Fast") -> np.ndarray:
        return self.cache["mean"] if mode == "Fast" else self.exact_means()

    def covariance_matrix(self, positions, mode: str = "Fast") -> np.ndarray:
        """Covariance of the reliabilities at the given 1-based positions."""
        pos = np.asarray(positions, dtype=np.int64)
        m = len(pos)
        if mode == "Fast":
            n = self.n
            mu = self.cache["mean"][pos - 1]
            f = self._f(mu)
            lo = np.minimum.outer(pos, pos).astype(np.float64)
            hi = np.maximum.outer(pos, pos).astype(np.float64)
            return lo * (n - hi) / (n**3 * np.outer(f, f))
        out = np.zeros((m, m))
        for i in range(m):
            for j in range(i, m):
                a, b = sorted((int(pos[i]), int(pos[j])))
                out[i, j] = out[j, i] = self.covariance_entries(a, b, mode)
        return out

    def _diag_weighted_moments(self, mode: str, nodes: int):
        """E[A^2], E[e A] and E[e A^2] per position, e the hard-decision error indicator."""
        pe_of = lambda x: bit_error_given_reliability(np.maximum(x, 0.0), self.params)  # noqa: E731
        if mode == "Fast":
            z, w = np.polynomial.hermite_e.hermegauss(nodes)
            w = w / w.sum()
            x = self.cache["mean"][:, None] + np.sqrt(self.cache["var"])[:, None] * z[None, :]
            p = pe_of(x)
            return (x * x) @ w, (p * x) @ w, (p * x * x) @ w
        m = self.cache["mean"]
        pts = m[m > 0]
        vals = _quad_vec(
            lambda x: np.concatenate([x * pe_of(x) * self._all_ordered_pdf(x), x * x * pe_of(x) * self._all_ordered_pdf(x)]),
            0.0,
            self.alpha_max,
            points=pts,
        )
        return self.exact_second_moments(), vals[: self.n], vals[self.n :]

    def pair_moments(self, mode: str = "Fast", nodes: int = PAIR_GRID) -> "PairMoments":
        """Joint moments of all reliability pairs, plain and error-weighted.

        ``Fast`` treats each pair as bivariate normal with the approximate
        moments and integrates by Gauss-Hermite; ``Exact`` integrates the
        joint order-statistic density on a Gauss-Legendre grid that follows
        the ``x_v <= x_u`` boundary.
        """
        key = ("pair_moments", mode, nodes)
        if key in self.cache:
            return self.cache[key]
        n = self.n
        pe = self.bit_error_probs()
        iu, iv = np.triu_indices(n, 1)
        npairs = len(iu)
        # columns: E[AuAv], E[eu AuAv], E[ev AuAv], E[eu ev AuAv], E[eu ev]
        acc = np.empty((npairs, 5))
        pe_of = lambda x: bit_error_given_reliability(np.maximum(x, 0.0), self.params)  # noqa: E731
        if mode == "Fast":
            mean = self.cache["mean"]
            cov = self.covariance_matrix(np.arange(1, n + 1), "Fast")
            z, w = np.polynomial.hermite_e.hermegauss(nodes)
            w = w / w.sum()
            Z1, Z2 = (g.ravel() for g in np.meshgrid(z, z, indexing="ij"))
            W = np.outer(w, w).ravel()
            su = np.sqrt(np.diag(cov))
            slope = cov[iu, iv] / np.maximum(su[iu], 1e-300)
            resid = np.sqrt(np.maximum(cov[iv, iv] - slope**2, 0.0))
            for start in range(0, npairs, 1024):
                sl = slice(start, start + 1024)
                xu = mean[iu[sl], None] + su[iu[sl], None] * Z1[None, :]
                xv = mean[iv[sl], None] + slope[sl, None] * Z1[None, :] + resid[sl, None] * Z2[None, :]
                pu, pv = pe_of(xu), pe_of(xv)
                xx = xu * xv
                acc[sl] = np.stack([xx, pu * xx, pv * xx, pu * pv * xx, pu * pv], axis=-1).transpose(0, 2, 1) @ W
        elif mode == "Exact":
            mean = self.exact_means()
            cov = np.diag(self.exact_variances()).astype(np.float64)
            for idx, (a, b) in enumerate(zip(iu + 1, iv + 1)):
                XU, XV, dens, _ = self._pair_grid(a, b, nodes)
                pu, pv = pe_of(XU), pe_of(XV)
                xx = XU * XV * dens
                acc[idx] = [xx.sum(), (pu * xx).sum(), (pv * xx).sum(), (pu * pv * xx).sum(), (pu * pv * dens).sum()]
            cov[iu, iv] = acc[:, 0] - mean[iu] * mean[iv]
            cov[iv, iu] = cov[iu, iv]
        else:
            raise ValueError(f"unknown mode {mode!r}")
        cov = np.where((cov < 0) & (cov > -COV_CLAMP), 0.0, cov)
        sq, e1, e2 = self._diag_weighted_moments(mode, nodes)

        def sym(vals, diag):
            out = np.diag(np.asarray(diag, dtype=np.float64))
            out[iu, iv] = out[iv, iu] = vals
            return out

        second = sym(acc[:, 0], sq)
        err_second = np.diag(np.asarray(e2, dtype=np.float64))
        err_second[iu, iv] = acc[:, 1]
        err_second[iv, iu] = acc[:, 2]
        both_second = sym(acc[:, 3], e2)
        pe_pair = sym(np.clip(acc[:, 4], 0.0, 1.0), pe)
        out = PairMoments(mode, np.asarray(mean, dtype=np.float64), cov, pe, pe_pair, second,
                          np.asarray(e1, dtype=np.float64), err_second, both_second)
        self.cache[key] = out
        return out

    # ----- error probabilities -----------------------------------------

    def _p_between(self, x, y):
        """P(error | y < reliability < x); ``x`` may be ``np.inf``."""
        s = self.params.sigma
        q = lambda t: q_function(t, self.q_mode)  # noqa: E731
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        wrong = q((y + 1) / s) - np.where(np.isinf(x), 0.0, q((x + 1) / s))
        right = q((y - 1) / s) - np.where(np.isinf(x), 0.0, q((x - 1) / s))
        total = wrong + right
        with np.errstate(invalid="ignore", divide="ignore"):
            p = np.where(total > 0, wrong / total, 0.5)
        return np.clip(p, 0.0, 1.0)

    def error_count_pmf(self, a: int, b: int) -> np.ndarray:
        """pmf of the number of hard-decision errors among sorted positions a..b."""
        a, b = self._check_index(a), self._check_index(b)
        if a > b:
            raise IndexError(f"need a <= b, got a={a}, b={b}")
        key = ("pmf", a, b)
        if key in self.cache:
            return self.cache[key]
        n = self.n
        cnt = b - a + 1
        j = np.arange(cnt + 1)
        if a == 1 and b == n:
            p_raw = q_function(np.sqrt(2.0 / self.params.N0), self.q_mode)
            pmf = stats.binom.pmf(j, n, p_raw)
        elif a == 1:
            lo, hi = self.support(b + 1)
            dens = self.ordered_pdf(b + 1)
            pmf = _quad_vec(lambda y: stats.binom.pmf(j, cnt, self._p_between(np.inf, y)) * dens(y), lo, hi)
        elif b == n:
            lo, hi = self.support(a - 1)
            dens = self.ordered_pdf(a - 1)
            pmf = _quad_vec(lambda x: stats.binom.pmf(j, cnt, self._p_between(x, 0.0)) * dens(x), lo, hi)
        else:
            XU, XV, dens, mass = self._pair_grid(a - 1, b + 1)
            keep = dens > 1e-300
            p = self._p_between(XU[keep], XV[keep])
            pmf = (stats.binom.pmf(j[:, None], cnt, p[None, :]) * dens[keep][None, :]).sum(axis=1)
            self.cache[("pmf_mass", a, b)] = mass
        pmf = np.clip(np.asarray(pmf, dtype=np.float64), 0.0, 1.0)
        self.cache[key] = pmf
        return pmf

    def p_error_count(self, a: int, b: int, j: int) -> float:
        pmf = self.error_count_pmf(a, b)
        if not 0 <= j < len(pmf):
            raise IndexError(f"error count {j} outside 0..{len(pmf) - 1}")
        return float(pmf[j])

    def mrb_error_pmf(self) -> np.ndarray:
        """pmf of the error count in the k most reliable positions."""
        return self.error_count_pmf(1, self.k)

    def bit_error_probs(self) -> np.ndarray:
        """Pe(l) for l = 1..n: error probability of the l-th sorted position."""
        if "pe" not in self.cache:
            m = self.cache["mean"]
            pe = _quad_vec(
                lambda x: bit_error_given_reliability(x, self.params) * self._all_ordered_pdf(x),
                0.0,
                self.alpha_max,
                points=m[m > 0],
            )
            self.cache["pe"] = np.clip(pe, 0.0, 1.0)
        return self.cache["pe"]

    def bit_error_prob(self, ell: int) -> float:
        ell = self._check_index(ell)
        return float(self.bit_error_probs()[ell - 1])


@dataclass(frozen=True, eq=False)
class PairMoments:
    """Moments of sorted reliabilities A and error indicators e, all positions 0-based.

    ``err_second[u, v] = E[e_u A_u A_v]`` (the error sits on the row index);
    ``both_second[u, v] = E[e_u e_v A_u A_v]``. Diagonals hold the one-position
    versions, e.g. ``both_second[u, u] = E[e_u A_u^2]``.
    """

    mode: str
    mean: np.ndarray
    cov: np.ndarray
    pe: np.ndarray
    pe_pair: np.ndarray
    second: np.ndarray
    err_mean: np.ndarray
    err_second: np.ndarray
    both_second: np.ndarray

    def product_form(self) -> "PairMoments":
        """Replace every error-weighted moment by P(errors) times the plain moment.

        This treats an error event as independent of its own reliability.
        """
        M = np.outer(self.mean, self.mean) + self.cov
        return PairMoments(
            self.mode + "-product",
            self.mean,
            self.cov,
            self.pe,
            self.pe_pair,
            M,
            self.pe * self.mean,
            self.pe[:, None] * M,
            self.pe_pair * M,
        )


@dataclass(frozen=True)
class ConditionalErrors:
    """Per-position error probabilities given observed reliabilities."""

    pe: np.ndarray

    def count_pmf(self, a: int, b: int) -> np.ndarray:
        """Binomial error-count pmf over positions a..b using their mean Pe."""
        if not 1 <= a <= b <= len(self.pe):
            raise IndexError(f"bad block {a}..{b}")
        p_bar = float(self.pe[a - 1 : b].mean())
        return stats.binom.pmf(np.arange(b - a + 2), b - a + 1, p_bar)

    def joint(self, u: int, v: int) -> float:
        """Pe(u, v | alpha): independent given the reliabilities."""
        return float(self.pe[u - 1] * self.pe[v - 1])


def conditional_error_probs(alpha, params: ChannelParams) -> ConditionalErrors:
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.size > 1 and np.any(np.diff(alpha) > 0):
        raise ValueError("alpha must be sorted in descending order")
    return ConditionalErrors(bit_error_given_reliability(alpha, params))


def write_distribution_csv(path, index, values, header=("index", "probability")) -> None:
    """Two-column dump used for plotting densities or pmfs."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, v in zip(np.asarray(index).tolist(), np.asarray(values).tolist()):
            w.writerow([i, repr(float(v))])
