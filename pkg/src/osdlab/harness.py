"""Monte Carlo experiments, distribution histograms, offline predictions and CSV I/O.

Every trial draws its message and noise from ``trial_rng(seed, t)``. Trial t
therefore sees the same underlying normal draws at every SNR and under every
rule (common random numbers), and a rerun with the same configuration
reproduces the output byte for byte. Wall-clock timings are kept out of the
main CSV and written to a ``.timing.csv`` sidecar.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import analysis
from .channel import ChannelParams, hard_decision, transmit, trial_rng
from .codebook import CodeSpec, code_by_name, code_from_file, weight_spectrum
from .dist_model import hamming_di_pmf, hamming_gauss_approx, whd_di_gauss
from .ordered_stats import OrderedStatsCtx
from .osd import ORDERINGS, OsdDecoder, total_teps
from .rules import EVAL_MODES, RuleConfig

CSV_SCHEMA_VERSION = 1
EXPERIMENT_KINDS = ("fer", "na", "dist_hist", "dist_model", "rule_agreement", "analyze")
DIST_KINDS = ("E1k", "D0_H", "Di_H", "D0_W", "Di_W")
DEFAULT_TARGET_ERRORS = 200
Z_95 = 1.959963984540054


# ----- configuration ---------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment. ``rules`` may combine one stopping and one discarding rule."""

    code: str = "ebch-64-30"
    gen_file: str | None = None
    snr_db: tuple = (2.0,)
    order: int = 1
    rules: tuple = ()
    trials: int = 10000
    target_errors: int = DEFAULT_TARGET_ERRORS
    seed: int = 1
    out: str | None = None
    kind: str = "fer"
    spectrum: str = "Binomial"
    ordering: str = "WeightThenReliability"
    dist: str = "E1k"
    dist_order: int = 0
    dist_model: str = "exact"
    thresholds: tuple = ()

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trial budget must be at least 1")
        if not self.snr_db:
            raise ValueError("SNR list is empty")
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"experiment kind must be one of {EXPERIMENT_KINDS}")
        if self.ordering not in ORDERINGS:
            raise ValueError(f"ordering must be one of {ORDERINGS}")
        if self.dist not in DIST_KINDS:
            raise ValueError(f"distribution must be one of {DIST_KINDS}")
        if self.target_errors < 0:
            raise ValueError("target error count must be nonnegative")

    def echo(self) -> dict:
        out = asdict(self)
        out["rules"] = [asdict(r) for r in self.rules]
        out["snr_db"] = list(self.snr_db)
        out["thresholds"] = list(self.thresholds)
        return out


# config key -> (ExperimentConfig field or rule field, parser)
_RULE_KEYS = {
    "p_t_suc": ("p_t_suc", float),
    "p_t_pro": ("p_t_pro", float),
    "lambda": ("lam", float),
    "tau": ("tau", int),
    "ell_step": ("ell_step", int),
    "eval_mode": ("eval_mode", str),
    "adaptive": ("adaptive", lambda v: str(v).lower() in ("1", "true", "yes", "on")),
}


def _floats(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).replace(" ", "").split(",") if v)


_EXP_KEYS = {
    "code": str,
    "gen_file": str,
    "snr": _floats,
    "snr_db": _floats,
    "order": int,
    "m": int,
    "trials": int,
    "target_errors": int,
    "seed": int,
    "out": str,
    "kind": str,
    "spectrum": str,
    "ordering": str,
    "dist": str,
    "dist_order": int,
    "dist_model": str,
    "thresholds": _floats,
}


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _EXP_KEYS and key not in _RULE_KEYS and key != "rule":
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def build_config(settings: dict) -> ExperimentConfig:
    """Turn merged string settings (file values overridden by CLI values) into a config."""
    exp = {}
    for key, value in settings.items():
        if value is None or key == "rule" or key in _RULE_KEYS:
            continue
        if key not in _EXP_KEYS:
            raise ValueError(f"unknown setting {key!r}")
        name = {"snr": "snr_db", "m": "order"}.get(key, key)
        exp[name] = _EXP_KEYS[key](value)
    rule_kw = {}
    for key, (name, parse) in _RULE_KEYS.items():
        if settings.get(key) is not None:
            rule_kw[name] = parse(settings[key])
    names = [r for r in str(settings.get("rule") or "None").replace("+", ",").split(",") if r.strip()]
    rules = tuple(RuleConfig(rule=r.strip(), **rule_kw) for r in names if r.strip() != "None")
    if "eval_mode" in rule_kw and rule_kw["eval_mode"] not in EVAL_MODES:
        raise ValueError(f"eval_mode must be one of {EVAL_MODES}")
    return ExperimentConfig(rules=rules, **exp)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    settings = parse_config_text(Path(path).read_text()) if path else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            settings[key] = value
    return build_config(settings)


def resolve_code(cfg: ExperimentConfig) -> CodeSpec:
    if cfg.gen_file:
        return code_from_file(cfg.gen_file)
    return code_by_name(cfg.code)


# ----- reports and CSV -----------------------------------------------------------


@dataclass
class SimReport:
    kind: str
    rows: list
    meta: dict = field(default_factory=dict)
    timing: list = field(default_factory=list)

    def columns(self) -> list:
        cols = []
        for row in self.rows:
            for key in row:
                if key not in cols:
                    cols.append(key)
        return cols

    def csv_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"# osdlab-csv v{CSV_SCHEMA_VERSION} kind={self.kind}\n")
        buf.write("# meta " + json.dumps(self.meta, sort_keys=True) + "\n")
        writer = csv.DictWriter(buf, fieldnames=self.columns(), lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})
        return buf.getvalue()

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.csv_text())
        if self.timing:
            with path.with_suffix(".timing.csv").open("w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(self.timing[0]), lineterminator="\n")
                writer.writeheader()
                writer.writerows(self.timing)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def read_csv_report(path) -> tuple[dict, list[dict]]:
    """Inverse of :meth:`SimReport.write_csv`: (header info, rows as strings)."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# osdlab-csv v"):
        raise ValueError(f"{path} is not an osdlab CSV")
    version = int(lines[0].split()[2][1:])
    if version != CSV_SCHEMA_VERSION:
        raise ValueError(f"unsupported CSV schema version {version}")
    meta = json.loads(lines[1][len("# meta ") :])
    rows = list(csv.DictReader(lines[2:]))
    return {"version": version, "kind": lines[0].split("kind=")[1], "meta": meta}, rows


# ----- FER / N_a simulation ----------------------------------------------------------


def fer_ci(errors: int, frames: int) -> float:
    """Half-width of the 95% normal-approximation interval."""
    if frames == 0:
        return float("nan")
    p = errors / frames
    return Z_95 * float(np.sqrt(p * (1 - p) / frames))


def _frame(code: CodeSpec, params: ChannelParams, seed: int, t: int, zero: bool = False):
    rng = trial_rng(seed, t)
    msg = rng.integers(0, 2, code.k, dtype=np.uint8)
    if zero:
        msg[:] = 0
    c = (msg.astype(np.int64) @ code.G % 2).astype(np.uint8)
    return transmit(c, params, rng)


def run_fer(cfg: ExperimentConfig, progress=None) -> SimReport:
    """Per-SNR FER and re-encoding counts, stopping at the error target or the trial budget."""
    code = resolve_code(cfg)
    spec = weight_spectrum(code, cfg.spectrum) if cfg.rules else None
    rows, timing = [], []
    for snr in cfg.snr_db:
        params = ChannelParams.from_snr_db(snr)
        dec = OsdDecoder(code, cfg.order, cfg.rules, params=params, spectrum=spec, ordering=cfg.ordering)
        na, evaluated, phases, secs = [], [], [], []
        errors = bit_errors = 0
        frames = 0
        for t in range(cfg.trials):
            fr = _frame(code, params, cfg.seed, t)
            t0 = time.perf_counter()
            res = dec.decode(fr)
            secs.append(time.perf_counter() - t0)
            frames += 1
            wrong = int(np.count_nonzero(res.c_hat != fr.truth_c))
            errors += wrong > 0
            bit_errors += wrong
            na.append(res.teps_reencoded)
            evaluated.append(res.teps_evaluated)
            phases.append(res.phase_reached)
            if cfg.target_errors and errors >= cfg.target_errors:
                break
        na = np.array(na)
        rows.append(
            {
                "snr_db": float(snr),
                "frames": frames,
                "frame_errors": errors,
                "fer": errors / frames,
                "fer_ci": fer_ci(errors, frames),
                "ber": bit_errors / (frames * code.n),
                "na_mean": float(na.mean()),
                "na_ci": Z_95 * float(na.std(ddof=1) / np.sqrt(frames)) if frames > 1 else 0.0,
                "na_p50": float(np.percentile(na, 50)),
                "na_p95": float(np.percentile(na, 95)),
                "na_max": int(na.max()),
                "evaluated_mean": float(np.mean(evaluated)),
                "phase_mean": float(np.mean(phases)),
                "na_bound": total_teps(code.k, cfg.order),
            }
        )
        timing.append({"snr_db": snr, "median_sec_per_frame": float(np.median(secs))})
        if progress:
            progress(rows[-1])
    return SimReport("fer", rows, _meta(cfg, code), timing)


def _meta(cfg: ExperimentConfig, code: CodeSpec) -> dict:
    return {"config": cfg.echo(), "code": code.name, "code_digest": code.digest(), "seed": cfg.seed}


# ----- distribution histograms ----------------------------------------------------------


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    size = max(len(p), len(q))
    a = np.zeros(size)
    b = np.zeros(size)
    a[: len(p)] = p
    b[: len(q)] = q
    return 0.5 * float(np.abs(a - b).sum())


def ks_gap(model_cdf, samples) -> float:
    """Kolmogorov distance between a model cdf and an empirical sample, atoms included."""
    s = np.sort(np.asarray(samples, dtype=np.float64))
    u = np.unique(s)
    right = np.searchsorted(s, u, "right") / len(s)
    left = np.searchsorted(s, u, "left") / len(s)
    eps = 1e-9 * max(1.0, float(np.abs(u).max()))
    return float(max(np.max(np.abs(model_cdf(u) - right)), np.max(np.abs(model_cdf(u - eps) - left))))


def sample_mrb_errors(n: int, k: int, params: ChannelParams, trials: int, seed: int) -> np.ndarray:
    """Hard-decision error counts among the k most reliable positions (all-zero codeword)."""
    out = np.empty(trials, dtype=np.int64)
    for t in range(trials):
        rng = trial_rng(seed, t)
        r = 1.0 + rng.normal(0.0, params.sigma, n)
        top = np.argsort(-np.abs(r), kind="stable")[:k]
        out[t] = int(hard_decision(r[top]).sum())
    return out


def sample_phase_minima(code: CodeSpec, params: ChannelParams, order: int, trials: int, seed: int):
    """Minimum Hamming distance and minimum WHD after each phase, all-zero codeword."""
    dec = OsdDecoder(code, order)
    H = np.empty((trials, order + 1), dtype=np.int64)
    W = np.empty((trials, order + 1))
    for t in range(trials):
        res = dec.decode(_frame(code, params, seed, t, zero=True))
        H[t] = [p[0] for p in res.phase_minima]
        W[t] = [p[1] for p in res.phase_minima]
    return H, W


def run_dist_hist(cfg: ExperimentConfig) -> SimReport:
    """Empirical histogram, analytic model and their gap (TV for counts, Kolmogorov for WHD)."""
    code = resolve_code(cfg)
    spec = weight_spectrum(code, cfg.spectrum)
    i = 0 if cfg.dist in ("E1k", "D0_H", "D0_W") else cfg.dist_order
    rows = []
    for snr in cfg.snr_db:
        params = ChannelParams.from_snr_db(snr)
        ctx = OrderedStatsCtx(code.n, code.k, params)
        if cfg.dist == "E1k":
            emp = np.bincount(sample_mrb_errors(code.n, code.k, params, cfg.trials, cfg.seed), minlength=code.k + 1)
            emp = emp / cfg.trials
            model = ctx.mrb_error_pmf()
            gap = tv_distance(emp, model)
            rows += [{"snr_db": snr, "x": j, "empirical": float(emp[j]), "model": float(model[j]), "gap_tv": gap} for j in range(code.k + 1)]
            continue
        H, W = sample_phase_minima(code, params, i, cfg.trials, cfg.seed)
        if cfg.dist.endswith("_H"):
            emp = np.bincount(H[:, i], minlength=code.n + 1) / cfg.trials
            if cfg.dist_model == "gauss":
                model = hamming_gauss_approx(ctx, i).pmf
            else:
                model = hamming_di_pmf(ctx, spec, i).pmf
            gap = tv_distance(emp, model)
            rows += [{"snr_db": snr, "x": j, "empirical": float(emp[j]), "model": float(model[j]), "gap_tv": gap} for j in range(code.n + 1)]
        else:
            wm = whd_di_gauss(ctx, spec, i)
            gap = ks_gap(wm.cdf, W[:, i])
            grid = np.linspace(0.0, float(np.quantile(W[:, i], 0.999)) * 1.2 + 1e-9, 201)
            emp_cdf = np.searchsorted(np.sort(W[:, i]), grid, "right") / cfg.trials
            rows += [{"snr_db": snr, "x": float(x), "empirical": float(e), "model": float(m), "gap_ks": gap} for x, e, m in zip(grid, emp_cdf, wm.cdf(grid))]
    return SimReport("dist_hist", rows, _meta(cfg, code))


# ----- offline analysis -------------------------------------------------------------------


def run_offline_analysis(cfg: ExperimentConfig) -> SimReport:
    """Predicted loss factor, FER bound and N_a for each rule and threshold on the SNR grid."""
    code = resolve_code(cfg)
    spec = weight_spectrum(code, cfg.spectrum)
    rules = cfg.rules or (RuleConfig("HISR"),)
    rows = []
    for snr in cfg.snr_db:
        ctx = OrderedStatsCtx(code.n, code.k, ChannelParams.from_snr_db(snr))
        for rc in rules:
            default = rc.p_t_pro if rc.rule == "HDR" else rc.p_t_suc
            for thr in cfg.thresholds or (default,):
                pred = analysis.predict(rc.rule, ctx, spec, cfg.order, thr, d_H=code.d_H, seed=cfg.seed)
                rows.append(
                    {
                        "snr_db": float(snr),
                        "rule": rc.rule,
                        "order": cfg.order,
                        "threshold": float(thr),
                        "theta": pred.theta,
                        "na_pred": pred.na,
                        "fer_bound_no_ml": pred.fer_bound,
                    }
                )
    return SimReport("analyze", rows, _meta(cfg, code))


def run_rule_agreement(cfg: ExperimentConfig) -> SimReport:
    """Fast versus Exact rule probabilities on random (frame, TEP) pairs."""
    from . import rules as R
    from .osd import _reencode, phase_supports, prepare

    code = resolve_code(cfg)
    spec = weight_spectrum(code, cfg.spectrum)
    rows = []
    for snr in cfg.snr_db:
        params = ChannelParams.from_snr_db(snr)
        rctx = R.RuleContext(code.n, code.k, code.d_H, params, spec)
        gaps = {name: [] for name in ("HISR", "HDR", "SISR", "SDR")}
        for t in range(cfg.trials):
            fr = _frame(code, params, cfg.seed, t)
            rng = trial_rng(cfg.seed + 1, t)
            of = prepare(fr, code)
            fs = R.frame_stats(of.alpha_sorted, code.k, params)
            w = int(rng.integers(0, cfg.order + 1))
            sup = phase_supports(code.k, w, "WeightThenReliability", of.alpha_sorted[: code.k])
            support = sup[int(rng.integers(len(sup)))]
            c = _reencode(of, support)
            diff = c != of.y_sorted
            d_w = float(of.alpha_sorted[diff].sum()) * float(rng.uniform(0.5, 1.5))
            for name, fn, args in (
                ("HISR", R.hisr_prob, (fs, support, int(diff.sum()))),
                ("HDR", R.hdr_prob, (fs, support, code.d_H)),
                ("SISR", R.sisr_prob, (fs, support, diff[code.k :])),
                ("SDR", R.sdr_prob, (fs, support, d_w)),
            ):
                gaps[name].append(abs(fn(*args, rctx, "Fast") - fn(*args, rctx, "Exact")))
        for name, g in gaps.items():
            g = np.array(g)
            rows.append({"snr_db": float(snr), "rule": name, "pairs": len(g), "max_gap": float(g.max()), "mean_gap": float(g.mean()), "over_0.05": int((g > 0.05).sum())})
    return SimReport("rule_agreement", rows, _meta(cfg, code))


def run(cfg: ExperimentConfig) -> SimReport:
    if cfg.kind in ("fer", "na"):
        return replace(run_fer(cfg), kind=cfg.kind)
    if cfg.kind in ("dist_hist", "dist_model"):
        return run_dist_hist(cfg)
    if cfg.kind == "rule_agreement":
        return run_rule_agreement(cfg)
    return run_offline_analysis(cfg)
