"""Command-line entry point: ``osdlab simulate|dist|analyze|spectrum|decode``."""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

import click
import numpy as np

from . import harness
from .channel import ChannelParams, ReceivedFrame, hard_decision
from .codebook import weight_spectrum
from .osd import OsdDecoder, decode_reference


def _common(fn):
    options = [
        click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False), help="key=value settings file; flags override it."),
        click.option("--code", help="Code name such as ebch-64-30, polar-64-21 or hamming-7-4."),
        click.option("--gen-file", type=click.Path(exists=True, dir_okay=False), help="Generator matrix file ('n k' header, then k rows of 0/1)."),
        click.option("--snr", help="Comma-separated SNR list in dB."),
        click.option("--order", type=int, help="OSD order m."),
        click.option("--rule", help="Rule name, or 'STOP,DISCARD' to combine two."),
        click.option("--p-t-suc", type=float, help="Success-probability threshold of stopping rules."),
        click.option("--p-t-pro", type=float, help="Promising-probability threshold of discarding rules."),
        click.option("--lambda", "lam", type=float, help="Scaling for DNC and adaptive HDR/SDR thresholds."),
        click.option("--tau", type=int, help="PSC syndrome-weight threshold."),
        click.option("--ell-step", type=int, help="Check HDR/SDR every this many TEPs."),
        click.option("--adaptive/--fixed-threshold", default=None, help="Per-phase HDR/SDR thresholds from --lambda."),
        click.option("--trials", type=int, help="Trial budget per SNR."),
        click.option("--target-errors", type=int, help="Stop an SNR point after this many frame errors (0 disables)."),
        click.option("--seed", type=int, help="Master seed."),
        click.option("--out", type=click.Path(dir_okay=False), help="CSV output path (stdout when omitted)."),
        click.option("--eval-mode", type=click.Choice(["Fast", "Exact"]), help="Rule evaluation mode."),
        click.option("--spectrum", type=click.Choice(["Binomial", "Exhaustive"]), help="Weight spectrum model."),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def _settings(kw: dict, **extra) -> dict:
    mapping = {"lam": "lambda", "snr": "snr"}
    out = {}
    for key, value in kw.items():
        if key == "config_file" or value is None:
            continue
        out[mapping.get(key, key)] = value
    out.update({k: v for k, v in extra.items() if v is not None})
    return out


def _config(kw: dict, **extra) -> harness.ExperimentConfig:
    return harness.load_config(kw.get("config_file"), _settings(kw, **extra))


def _emit(report: harness.SimReport, out: str | None) -> None:
    if out:
        report.write_csv(out)
        click.echo(f"wrote {out}", err=True)
    else:
        click.echo(report.csv_text(), nl=False)


@click.group()
def main():
    """Ordered statistics decoding experiments."""


@main.command()
@_common
@click.option("--kind", type=click.Choice(["fer", "na", "rule_agreement"]), default=None)
def simulate(kind, **kw):
    """FER and average re-encoding count per SNR."""
    cfg = _config(kw, kind=kind)
    if cfg.kind not in ("fer", "na", "rule_agreement"):
        raise click.UsageError("simulate runs fer, na or rule_agreement experiments")

    def progress(row):
        click.echo(f"snr={row['snr_db']:g} frames={row['frames']} fer={row['fer']:.3e} na={row['na_mean']:.1f}", err=True)

    report = harness.run_fer(cfg, progress) if cfg.kind != "rule_agreement" else harness.run_rule_agreement(cfg)
    _emit(report, cfg.out)


@main.command()
@_common
@click.option("--dist", "dist", type=click.Choice(list(harness.DIST_KINDS)), default=None)
@click.option("--dist-order", type=int, default=None, help="Phase i for Di distributions.")
@click.option("--model", "dist_model", type=click.Choice(["exact", "gauss"]), default=None)
def dist(**kw):
    """Empirical distance histogram next to the analytic model."""
    cfg = _config(kw, kind="dist_hist")
    report = harness.run_dist_hist(cfg)
    gaps = {(r["snr_db"], r.get("gap_tv", r.get("gap_ks"))) for r in report.rows}
    for snr, gap in sorted(gaps):
        click.echo(f"snr={snr:g} gap={gap:.4f}", err=True)
    _emit(report, cfg.out)


@main.command()
@_common
@click.option("--thresholds", help="Comma-separated thresholds to sweep.")
def analyze(thresholds, **kw):
    """Predicted loss factor, FER bound and N_a without simulation."""
    cfg = _config(kw, kind="analyze", thresholds=thresholds)
    _emit(harness.run_offline_analysis(cfg), cfg.out)


@main.command()
@_common
def spectrum(**kw):
    """Write the parity-weight table of the chosen spectrum model."""
    cfg = _config(kw)
    code = harness.resolve_code(cfg)
    spec = weight_spectrum(code, cfg.spectrum)
    if cfg.out:
        spec.to_csv(cfg.out)
        click.echo(f"wrote {cfg.out}", err=True)
    else:
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "spectrum.csv"
            spec.to_csv(path)
            click.echo(path.read_text(), nl=False)


@main.command()
@_common
@click.argument("received", type=click.Path(exists=True, dir_okay=False))
def decode(received, **kw):
    """Decode one frame of received values and print the candidate trace."""
    cfg = _config(kw)
    code = harness.resolve_code(cfg)
    r = np.array([float(v) for v in Path(received).read_text().replace(",", " ").split()])
    if r.size != code.n:
        raise click.UsageError(f"expected {code.n} received values, found {r.size}")
    params = ChannelParams.from_snr_db(cfg.snr_db[0])
    spec = weight_spectrum(code, cfg.spectrum) if cfg.rules else None
    dec = OsdDecoder(code, cfg.order, cfg.rules, params=params, spectrum=spec, ordering=cfg.ordering)
    trace = []
    frame = ReceivedFrame(r, hard_decision(r), np.abs(r))
    res = decode_reference(frame, code, cfg.order, cfg.rules, params=params, spectrum=spec, decoder=dec, trace=trace)
    click.echo("phase,index,support,d_H,d_W")
    for phase, idx, support, d_h, d_w in trace:
        click.echo(f"{phase},{idx},{' '.join(map(str, support))},{d_h},{d_w:.6f}")
    click.echo(f"# c_hat={''.join(map(str, res.c_hat.tolist()))}")
    click.echo(
        f"# d_H={res.d_best_H} d_W={res.d_best_W:.6f} reencoded={res.teps_reencoded} "
        f"evaluated={res.teps_evaluated} stop={res.stop_reason.value} phase={res.phase_reached}"
    )


def run() -> None:
    try:
        main(standalone_mode=False)
    except click.exceptions.Abort:
        sys.exit(1)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except Exception as exc:  # every failure maps to a nonzero exit status
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
