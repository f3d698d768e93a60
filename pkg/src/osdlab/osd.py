"""Order-m ordered statistics decoding with optional stopping and discarding rules.

Pipeline per frame: sort positions by reliability, systematize the permuted
generator, then re-encode ``(y_B ^ e) G`` for every test error pattern (TEP)
``e`` of weight 0..m and keep the candidate with the smallest weighted
Hamming distance (WHD) to the hard decision.

Two implementations share the same semantics:

* :class:`OsdDecoder` runs each phase in a compiled kernel and evaluates
  per-TEP rules in their fast closed forms inside it;
* :func:`decode_reference` walks the TEPs in plain Python and calls the rule
  functions from :mod:`osdlab.rules`. It handles Exact evaluation and serves
  as the oracle for the compiled path.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from math import comb, log

import numpy as np
from numba import njit

from .channel import Q_POLY_COEFFS, ChannelParams, ReceivedFrame
from .codebook import CodeSpec, WeightSpectrumModel
from .gf2 import BitMatrix, pack_bits, systematize_array
from . import rules as R

ORDERINGS = ("WeightLex", "WeightThenReliability")

_STOP_CODES = {"HISR": 1, "SISR": 2, "PSC": 3}
_DISCARD_CODES = {"HDR": 1, "SDR": 2, "DNC": 3}

# kernel status codes
_DONE, _STOPPED, _TAIL = 0, 1, 2


class StopReason(enum.Enum):
    EXHAUSTED = "Exhausted"
    STOP_RULE = "StopRule"
    DISCARD_TAIL = "DiscardTail"


@dataclass(frozen=True, eq=False)
class OrderedFrame:
    """A frame in decoder order: ``vec_sorted[j] = vec[perm[j]]`` with ``perm = pi1[pi2]``."""

    pi1: np.ndarray
    pi2: np.ndarray
    r_sorted: np.ndarray
    alpha_sorted: np.ndarray
    y_sorted: np.ndarray
    Gsys: np.ndarray
    mrb_len: int

    @property
    def perm(self) -> np.ndarray:
        return self.pi1[self.pi2]

    @property
    def parity(self) -> np.ndarray:
        return self.Gsys[:, self.mrb_len :]

    def to_original(self, vec: np.ndarray) -> np.ndarray:
        vec = np.asarray(vec)
        out = np.empty_like(vec)
        out[self.perm] = vec
        return out

    def to_decoder(self, vec: np.ndarray) -> np.ndarray:
        return np.asarray(vec)[self.perm]


@dataclass(frozen=True)
class DecodeResult:
    c_hat: np.ndarray  # original order
    d_best_H: int
    d_best_W: float
    teps_evaluated: int
    teps_reencoded: int
    stop_reason: StopReason
    phase_reached: int
    d_min_H: int = -1  # smallest Hamming distance over all re-encoded candidates
    phase_minima: tuple = ()  # (min Hamming, min WHD) after each completed phase


def prepare(frame: ReceivedFrame, code: CodeSpec) -> OrderedFrame:
    """Sort by descending reliability (stable) and systematize the permuted generator."""
    r = np.asarray(frame.r, dtype=np.float64)
    if r.shape != (code.n,):
        raise ValueError(f"frame length {r.shape} does not match n={code.n}")
    pi1 = np.argsort(-np.abs(r), kind="stable")
    gsys, pi2, ok = systematize_array(code.G[:, pi1])
    if not ok:
        raise ValueError("generator matrix is rank deficient")
    perm = pi1[pi2]
    r_sorted = r[perm]
    return OrderedFrame(
        pi1=pi1,
        pi2=pi2,
        r_sorted=r_sorted,
        alpha_sorted=np.abs(r_sorted),
        y_sorted=(r_sorted < 0).astype(np.uint8),
        Gsys=gsys,
        mrb_len=code.k,
    )


# ----- TEP schedule ------------------------------------------------------------


@lru_cache(maxsize=64)
def _lex_supports(k: int, i: int) -> np.ndarray:
    out = np.array(list(combinations(range(k), i)), dtype=np.int64)
    out = out.reshape(comb(k, i), i)
    out.setflags(write=False)
    return out


def phase_supports(k: int, i: int, ordering: str = "WeightThenReliability", alpha_mrb=None) -> np.ndarray:
    """All weight-i supports as a (C(k,i), i) array in schedule order."""
    if ordering not in ORDERINGS:
        raise ValueError(f"ordering must be one of {ORDERINGS}")
    if not 0 <= i <= k:
        raise ValueError(f"phase {i} outside 0..{k}")
    lex = _lex_supports(k, i)
    if ordering == "WeightLex" or i == 0:
        return lex
    if alpha_mrb is None:
        raise ValueError("WeightThenReliability needs the MRB reliabilities")
    sums = np.asarray(alpha_mrb, dtype=np.float64)[lex].sum(axis=1)
    return lex[np.argsort(sums, kind="stable")]


def tep_schedule(k: int, m: int, ordering: str = "WeightThenReliability", alpha=None):
    """Yield TEP supports (tuples of MRB positions), phase by phase."""
    if not 0 <= m <= k:
        raise ValueError(f"order {m} outside 0..{k}")
    alpha_mrb = None if alpha is None else np.asarray(alpha)[:k]
    for i in range(m + 1):
        for row in phase_supports(k, i, ordering, alpha_mrb):
            yield tuple(int(u) for u in row)


def total_teps(k: int, m: int) -> int:
    return sum(comb(k, i) for i in range(m + 1))


# ----- compiled phase kernel -----------------------------------------------------


@njit(cache=True)
def _popcount64(x):
    x = x - ((x >> np.uint64(1)) & np.uint64(0x5555555555555555))
    x = (x & np.uint64(0x3333333333333333)) + ((x >> np.uint64(2)) & np.uint64(0x3333333333333333))
    x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return int((x * np.uint64(0x0101010101010101)) >> np.uint64(56))


@njit(cache=True)
def _log1mexp(x):
    if x >= 0.0:
        return -np.inf
    if x > -0.693:
        return np.log(-np.expm1(x))
    return np.log1p(-np.exp(x))


@njit(cache=True)
def _q_poly(z, a, b, c):
    az = abs(z)
    tail = min(np.exp(a * az * az + b * az + c), 0.5)
    return tail if z >= 0 else 1.0 - tail


@njit(cache=True)
def _cdf_poly(x, mean, var, a, b, c):
    if var <= 1e-12:
        return 1.0 if x >= mean else 0.0
    return 1.0 - _q_poly((x - mean) / np.sqrt(var), a, b, c)


@njit(cache=True)
def _xlogy(x, y):
    if x == 0:
        return 0.0
    return x * np.log(y)


@njit(cache=True)
def _run_phase(supports, P, base, ypar, a_mrb, a_par, logit_mrb, c_par, stop_code, disc_code, fp, ell_step, fstate, istate):
    """Process one phase of TEPs; returns a kernel status code.

    fp: [p_t_suc, p_t_pro, tau, p_bar_par, log_pe0, sisr_const, hdr_hit, hdr_miss,
         sdr_mh, sdr_vh, sdr_mm, sdr_vm, dnc_ratio, q_a, q_b, q_c, n, k]
    fstate: [best_dw]; istate: [best_dh, best_phase, best_idx, n_reenc, n_eval, phase, min_dh]
    """
    T, w = supports.shape
    W = P.shape[1]
    r = a_par.shape[0]
    qa, qb, qc = fp[13], fp[14], fp[15]
    n, k = fp[16], fp[17]
    cand = np.empty(W, dtype=np.uint64)
    for t in range(T):
        istate[4] += 1
        ell = 0.0
        lpe = fp[4]
        for s in range(w):
            u = supports[t, s]
            ell += a_mrb[u]
            lpe += logit_mrb[u]
        if disc_code != 0 and istate[5] > 0 and t % ell_step == 0:
            fire = False
            if disc_code == 1:
                pe_e = np.exp(lpe)
                ppro = pe_e * fp[6] + (1.0 - pe_e) * fp[7]
                fire = ppro < fp[1]
            elif disc_code == 2:
                if np.isfinite(fstate[0]):
                    pe_e = np.exp(lpe)
                    room = fstate[0] - ell
                    ppro = pe_e * _cdf_poly(room, fp[8], fp[9], qa, qb, qc) + (1.0 - pe_e) * _cdf_poly(
                        room, fp[10], fp[11], qa, qb, qc
                    )
                    fire = ppro < fp[1]
            else:
                if np.isfinite(fstate[0]):
                    fire = ell >= fstate[0] * fp[12]
            if fire:
                return 2
        for j in range(W):
            cand[j] = base[j]
        for s in range(w):
            u = supports[t, s]
            for j in range(W):
                cand[j] ^= P[u, j]
        istate[3] += 1
        dh = 0
        dw = ell
        sisr_sum = 0.0
        for j in range(W):
            x = cand[j] ^ ypar[j]
            if x != 0:
                dh += _popcount64(x)
                for b in range(64):
                    if (x >> np.uint64(b)) & np.uint64(1):
                        pos = j * 64 + b
                        dw += a_par[pos]
                        sisr_sum += c_par[pos]
        if w + dh < istate[6]:
            istate[6] = w + dh
        if dw < fstate[0]:
            fstate[0] = dw
            istate[0] = w + dh
            istate[1] = istate[5]
            istate[2] = t
            if stop_code == 1:
                tt = _log1mexp(lpe) - lpe + (k - n) * np.log(2.0) - _xlogy(dh, fp[3]) - _xlogy(r - dh, 1.0 - fp[3])
                if 1.0 / (1.0 + np.exp(tt)) >= fp[0]:
                    return 1
            elif stop_code == 2:
                tt = _log1mexp(lpe) - lpe + fp[5] + sisr_sum
                if 1.0 / (1.0 + np.exp(tt)) >= fp[0]:
                    return 1
            elif stop_code == 3:
                if dh <= fp[2]:
                    return 1
    return 0


# ----- decoder -------------------------------------------------------------------


def _split_rules(rules) -> tuple[R.RuleConfig | None, R.RuleConfig | None]:
    stop = disc = None
    for cfg in rules or ():
        if cfg.rule == "None":
            continue
        if cfg.is_stopping:
            if stop is not None:
                raise ValueError("at most one stopping rule per decoder")
            stop = cfg
        else:
            if disc is not None:
                raise ValueError("at most one discarding rule per decoder")
            disc = cfg
    return stop, disc


class OsdDecoder:
    """Order-m OSD bound to one code, rule set and channel.

    Per-(code, SNR) tables used by the rules are built once and reused for
    every frame.
    """

    def __init__(
        self,
        code: CodeSpec,
        m: int,
        rules=(),
        *,
        params: ChannelParams | None = None,
        spectrum: WeightSpectrumModel | None = None,
        ordering: str = "WeightThenReliability",
    ):
        if not 0 <= m <= code.k:
            raise ValueError(f"order {m} outside 0..{code.k}")
        if ordering not in ORDERINGS:
            raise ValueError(f"ordering must be one of {ORDERINGS}")
        self.code, self.m, self.ordering = code, m, ordering
        self.stop, self.disc = _split_rules(rules)
        needs_channel = any(c is not None and c.rule not in ("PSC", "DNC") for c in (self.stop, self.disc))
        if needs_channel and params is None:
            raise ValueError("probabilistic rules need channel parameters")
        self.params = params
        self.rctx = R.RuleContext(code.n, code.k, code.d_H, params, spectrum) if params is not None else None
        exact = any(c is not None and c.eval_mode == "Exact" for c in (self.stop, self.disc))
        self.use_reference = exact
        self._thresholds = {}

    def phase_threshold(self, i: int) -> float:
        """Discarding threshold in phase i (adaptive or fixed)."""
        cfg = self.disc
        if not cfg.adaptive or cfg.rule == "DNC":
            return cfg.p_t_pro
        if i not in self._thresholds:
            fn = self.rctx.hdr_threshold if cfg.rule == "HDR" else self.rctx.sdr_threshold
            self._thresholds[i] = fn(i, cfg.lam)
        return self._thresholds[i]

    def decode(self, frame: ReceivedFrame) -> DecodeResult:
        if self.use_reference:
            return decode_reference(
                frame, self.code, self.m, [c for c in (self.stop, self.disc) if c is not None],
                params=self.params, rctx=self.rctx, ordering=self.ordering, decoder=self,
            )
        return self._decode_compiled(frame)

    def _frame_stats(self, of: OrderedFrame):
        if self.params is None:
            return None
        return R.frame_stats(of.alpha_sorted, self.code.k, self.params)

    def _decode_compiled(self, frame: ReceivedFrame) -> DecodeResult:
        code, k = self.code, self.code.k
        of = prepare(frame, code)
        fs = self._frame_stats(of)
        a = of.alpha_sorted
        a_mrb, a_par = a[:k], a[k:]
        P = pack_bits(of.parity)
        base = np.bitwise_xor.reduce(P[of.y_sorted[:k].astype(bool)], axis=0) if of.y_sorted[:k].any() else np.zeros(P.shape[1], np.uint64)
        ypar = pack_bits(of.y_sorted[k:])
        r = code.n - k
        if fs is not None:
            logit_mrb = fs.log_pe[:k] - fs.log_qe[:k]
            c_par = fs.log_qe[k:] - fs.log_pe[k:]
            log_pe0 = fs.mrb_log_base
            sisr_const = float(-(log(2.0) + fs.log_qe[k:]).sum())
            p_bar = fs.p_bar_parity
        else:
            logit_mrb = np.zeros(k)
            c_par = np.zeros(r)
            log_pe0 = sisr_const = p_bar = 0.0
        stop_code = _STOP_CODES.get(self.stop.rule, 0) if self.stop else 0
        disc_code = _DISCARD_CODES.get(self.disc.rule, 0) if self.disc else 0
        fp = np.zeros(18)
        fp[13:16] = Q_POLY_COEFFS
        fp[16], fp[17] = code.n, k
        fp[3], fp[4], fp[5] = p_bar, log_pe0, sisr_const
        if self.stop is not None:
            fp[0], fp[2] = self.stop.p_t_suc, self.stop.tau
        if self.disc is not None and self.disc.rule == "SDR":
            fp[8:12] = R.sdr_moments(fs)
        if self.disc is not None and self.disc.rule == "DNC":
            s_b, s_p = a_mrb.sum(), a_par.sum()
            den = s_b + self.disc.lam * s_p
            fp[12] = s_b / den if den > 0 else np.inf
        ell_step = self.disc.ell_step if self.disc is not None else 1
        fstate = np.array([np.inf])
        istate = np.array([0, -1, -1, 0, 0, 0, code.n + 1], dtype=np.int64)
        minima = []
        reason = StopReason.EXHAUSTED
        phase_supports_used = {}
        phase = 0
        for i in range(self.m + 1):
            phase = i
            istate[5] = i
            sup = phase_supports(k, i, self.ordering, a_mrb)
            phase_supports_used[i] = sup
            if self.disc is not None:
                fp[1] = self.phase_threshold(i)
                if self.disc.rule == "HDR":
                    top = code.d_H - i
                    fp[6] = R._cdf_gauss(top, r * p_bar, r * p_bar * (1 - p_bar), "Fast") if top >= 0 else 0.0
                    fp[7] = R._cdf_gauss(top, r / 2.0, r / 4.0, "Fast") if top >= 0 else 0.0
            status = _run_phase(
                sup, P, base, ypar, a_mrb, a_par, logit_mrb, c_par, stop_code, disc_code, fp, ell_step, fstate, istate
            )
            if status == _STOPPED:
                reason = StopReason.STOP_RULE
                break
            minima.append((int(istate[6]), float(fstate[0])))
            if status == _TAIL:
                reason = StopReason.DISCARD_TAIL
            if self.stop is not None and self.stop.is_group and i < self.m:
                if _group_stop(self.stop, fs, i, istate[6], fstate[0], self.rctx):
                    reason = StopReason.STOP_RULE
                    break
        best_phase, best_idx = int(istate[1]), int(istate[2])
        support = phase_supports_used[best_phase][best_idx]
        c_tilde = _reencode(of, support)
        return DecodeResult(
            c_hat=of.to_original(c_tilde),
            d_best_H=int(istate[0]),
            d_best_W=float(fstate[0]),
            teps_evaluated=int(istate[4]),
            teps_reencoded=int(istate[3]),
            stop_reason=reason,
            phase_reached=phase,
            d_min_H=int(istate[6]),
            phase_minima=tuple(minima),
        )


def _group_stop(cfg: R.RuleConfig, fs, i: int, d_h: int, d_w: float, rctx) -> bool:
    if cfg.rule == "HGSR":
        return R.hgsr_check(fs, i, d_h, cfg, rctx).action is R.Action.STOP
    return R.sgsr_check(fs, i, d_w, cfg, rctx).action is R.Action.STOP


def _reencode(of: OrderedFrame, support) -> np.ndarray:
    k = of.mrb_len
    msg = of.y_sorted[:k].copy()
    msg[np.asarray(support, dtype=np.int64)] ^= 1
    return (msg @ of.Gsys % 2).astype(np.uint8)


def decode(frame: ReceivedFrame, code: CodeSpec, m: int, rules=(), *, params=None, spectrum=None, ordering="WeightThenReliability") -> DecodeResult:
    """Decode one frame; builds a throwaway :class:`OsdDecoder`."""
    return OsdDecoder(code, m, rules, params=params, spectrum=spectrum, ordering=ordering).decode(frame)


def decode_reference(
    frame: ReceivedFrame,
    code: CodeSpec,
    m: int,
    rules=(),
    *,
    params=None,
    rctx=None,
    spectrum=None,
    ordering="WeightThenReliability",
    decoder: OsdDecoder | None = None,
    trace: list | None = None,
) -> DecodeResult:
    """Straight-line decoder calling the rule functions TEP by TEP.

    With ``trace`` given, every candidate that improves the best WHD is
    appended as ``(phase, index, support, d_H, d_W)``.
    """
    dec = decoder or OsdDecoder(code, m, rules, params=params, spectrum=spectrum, ordering=ordering)
    stop, disc = dec.stop, dec.disc
    rctx = rctx or dec.rctx
    k, n = code.k, code.n
    of = prepare(frame, code)
    fs = dec._frame_stats(of)
    a = of.alpha_sorted
    y = of.y_sorted
    H = None
    if stop is not None and stop.rule == "PSC":
        H = BitMatrix.from_array(np.concatenate([of.parity.T, np.eye(n - k, dtype=np.uint8)], axis=1))
    best_dw, best_dh, best_c = np.inf, -1, None
    min_dh = n + 1
    minima = []
    n_eval = n_reenc = 0
    reason = StopReason.EXHAUSTED
    phase = 0
    for i in range(m + 1):
        phase = i
        sup = phase_supports(k, i, ordering, a[:k])
        threshold = dec.phase_threshold(i) if disc is not None else None
        stopped = False
        for t, support in enumerate(sup):
            n_eval += 1
            if disc is not None and i > 0 and t % disc.ell_step == 0:
                if disc.rule == "HDR":
                    v = R.hdr_check(fs, support, disc, code.d_H, rctx, threshold)
                elif disc.rule == "SDR":
                    v = R.sdr_check(fs, support, best_dw, disc, rctx, threshold)
                else:
                    v = R.dnc_check(fs, support, best_dw, disc)
                if v.action is R.Action.DISCARD:
                    reason = StopReason.DISCARD_TAIL
                    break
            c = _reencode(of, support)
            n_reenc += 1
            diff = c != y
            dw = float(a[diff].sum())
            min_dh = min(min_dh, int(diff.sum()))
            if dw < best_dw:
                best_dw, best_dh, best_c = dw, int(diff.sum()), c
                if trace is not None:
                    trace.append((i, t, tuple(int(u) for u in support), best_dh, best_dw))
                if stop is not None and not stop.is_group:
                    if stop.rule == "HISR":
                        v = R.hisr_check(fs, support, best_dh, stop, rctx)
                    elif stop.rule == "SISR":
                        v = R.sisr_check(fs, support, diff[k:], stop, rctx)
                    else:
                        v = R.psc_check(y, support, stop, H)
                    if v.action is R.Action.STOP:
                        stopped = True
                        break
        if stopped:
            reason = StopReason.STOP_RULE
            break
        minima.append((min_dh, best_dw))
        if stop is not None and stop.is_group and i < m:
            if _group_stop(stop, fs, i, min_dh, best_dw, rctx):
                reason = StopReason.STOP_RULE
                break
    return DecodeResult(
        c_hat=of.to_original(best_c),
        d_best_H=best_dh,
        d_best_W=best_dw,
        teps_evaluated=n_eval,
        teps_reencoded=n_reenc,
        stop_reason=reason,
        phase_reached=phase,
        d_min_H=min_dh,
        phase_minima=tuple(minima),
    )

