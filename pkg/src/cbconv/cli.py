"""Command-line interface wiring the pipeline stages together."""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__, fileio
from .analyze import psd as psd_op
from .analyze import snr_in_band, snr_sweep
from .design import design_filter, parallelize
from .errors import CbconvError, NoToneError
from .estimate import estimate_batch, estimate_mixed, estimate_parallel
from .model import AnalogSystem, ChainSpec, build_chain
from .presets import get_preset
from .sim import InputSignal, Mismatch, NoiseInjection, simulate
from .xfer import bandwidth, eta_from_osr, transfer_grid


def _outdir_default():
    return os.environ.get("CBCONV_OUTDIR", ".")


def spec_from_config(cfg: dict) -> ChainSpec:
    sysc = cfg["system"]
    return ChainSpec(
        n=int(sysc["n"]),
        beta=sysc.get("beta", 1.0),
        rho=sysc.get("rho", 0.0),
        kappa=sysc.get("kappa", 1.0),
        kappa_fb=sysc.get("kappa_fb"),
        quantizer_bits=int(sysc.get("quantizer_bits", 1)),
        dither_amplitude=float(sysc.get("dither_amplitude", 0.0)),
        state_bound=float(sysc.get("state_bound", 1.0)),
        input_bound=float(sysc.get("input_bound", 1.0)),
    )


def system_from_config(cfg: dict, readout: str = "last_state"):
    sysc = cfg["system"]
    if "matrices" in sysc:
        m = sysc["matrices"]
        return None, AnalogSystem(np.array(m["A"]), np.array(m["B"]),
                                  np.array(m["Gamma"]), np.array(m["C_T"]),
                                  state_bound=float(sysc.get("state_bound", 1.0)),
                                  input_bound=float(sysc.get("input_bound", 1.0)))
    spec = spec_from_config(cfg)
    return spec, build_chain(spec, readout=readout)


def _resolve_eta2(cfg: dict, eta2_opt, osr_opt, spec: ChainSpec | None, T: float):
    dsn = cfg.get("design", {})
    eta2 = eta2_opt if eta2_opt is not None else dsn.get("eta2")
    osr = osr_opt if osr_opt is not None else dsn.get("osr")
    if eta2 is None and osr is None:
        raise click.UsageError("one of --eta2 or --osr (or design.eta2/design.osr) is required")
    if eta2 is None:
        if spec is None:
            raise click.UsageError("--osr needs a chain spec (gamma, n); give --eta2 instead")
        gamma = T * abs(spec.beta[0])
        eta = eta_from_osr(gamma, float(osr), spec.n)
        click.echo(f"derived eta = {eta!r} from osr = {osr} (gamma = {gamma!r})")
        eta2 = eta * eta
    return float(eta2)


def _load_config(config, preset):
    if (config is None) == (preset is None):
        raise click.UsageError("give exactly one of --config or --preset")
    if preset is not None:
        return get_preset(preset)
    return json.loads(Path(config).read_text())


@click.group()
@click.version_option(version=__version__)
def main():
    """Control-bounded converter pipeline: design, simulate, estimate, analyze."""


@main.command()
@click.option("--config", type=click.Path(exists=True), help="system/pipeline config JSON")
@click.option("--preset", type=str, help="bundled preset name")
@click.option("--eta2", type=float, default=None)
@click.option("--osr", type=float, default=None)
@click.option("--tu", type=float, default=None, help="estimate sample period (default: clock T)")
@click.option("--out", type=click.Path(), required=True)
def design(config, preset, eta2, osr, tu, out):
    """Compute estimator coefficients and write them with quality gates."""
    cfg = _load_config(config, preset)
    T = float(cfg["control"]["T"])
    readout = cfg.get("design", {}).get("readout", "last_state")
    spec, system = system_from_config(cfg, readout)
    eta2 = _resolve_eta2(cfg, eta2, osr, spec, T)
    T_u = tu if tu is not None else (cfg.get("run", {}).get("T_u") or T)
    try:
        coeffs = design_filter(system, eta2, T_u)
    except CbconvError as exc:
        raise click.ClickException(f"design gate failure: {exc}")
    rf, rb = coeffs.residuals(system)
    sf, sb = coeffs.spectral_radii()
    w_crit = bandwidth(system, eta2)
    gamma = T * abs(system.B[0, 0])
    osr_eff = (1.0 / T) / (2.0 * w_crit / (2.0 * np.pi))
    click.echo(f"riccati residuals: forward {rf:.3e}, backward {rb:.3e}")
    click.echo(f"spectral radii: rho(Af) = {sf:.6f}, rho(Ab) = {sb:.6f}")
    click.echo(f"eta2 = {eta2!r}, omega_crit = {w_crit!r} rad/s, "
               f"gamma = {gamma!r}, OSR = {osr_eff!r}")
    click.echo("W = " + np.array2string(coeffs.W.ravel(), precision=10))
    h = fileio.config_hash({"system": cfg["system"], "eta2": eta2, "T_u": T_u})
    fileio.write_coefficients(out, coeffs, cfg_hash=h,
                              gates={"residual_f": rf, "residual_b": rb,
                                     "spectral_radius_f": sf, "spectral_radius_b": sb})
    click.echo(f"wrote {out}")


@main.command(name="simulate")
@click.option("--config", type=click.Path(exists=True))
@click.option("--preset", type=str)
@click.option("--input", "input_str", type=str, default=None,
              help="zero | constant:C | sine:A,F_HZ[,PHASE]")
@click.option("--periods", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--substeps", type=int, default=64)
@click.option("--text", is_flag=True, help="text body instead of packed bits")
@click.option("--allow-unstable", is_flag=True)
@click.option("--allow-overload", is_flag=True)
@click.option("--noise", type=str, default=None, help="SIGMA2,STAGE white-noise injection")
@click.option("--mismatch-beta", type=float, default=0.0, help="fractional beta mismatch")
@click.option("--mismatch-kappa", type=float, default=0.0, help="fractional kappa mismatch")
@click.option("--mismatch-fixed", is_flag=True, help="apply mismatch as a fixed offset, not sampled")
@click.option("--out", type=click.Path(), required=True)
def simulate_cmd(config, preset, input_str, periods, seed, substeps, text,
                 allow_unstable, allow_overload, noise, mismatch_beta,
                 mismatch_kappa, mismatch_fixed, out):
    """Run the controlled analog system and record the control trace."""
    cfg = _load_config(config, preset)
    T = float(cfg["control"]["T"])
    spec, system = system_from_config(cfg)
    run = cfg.get("run", {})
    periods = periods if periods is not None else int(run.get("periods", 1 << 16))
    seed = seed if seed is not None else int(run.get("seed", 0))
    if input_str is None:
        inp_cfg = cfg.get("input", {"kind": "zero"})
        if inp_cfg["kind"] == "sine":
            sig = InputSignal.sine(inp_cfg["amplitude"], inp_cfg["frequency_hz"],
                                   inp_cfg.get("phase", 0.0))
        elif inp_cfg["kind"] == "constant":
            sig = InputSignal.constant(inp_cfg["value"])
        else:
            sig = InputSignal.zero()
    else:
        sig = InputSignal.parse(input_str)
    noise_inj = None
    if noise:
        sigma2, stage = noise.split(",")
        noise_inj = NoiseInjection(sigma2=float(sigma2), stage=int(stage))
    mism = None
    if mismatch_beta or mismatch_kappa:
        mism = Mismatch(beta_pct=mismatch_beta, kappa_pct=mismatch_kappa,
                        sampled=not mismatch_fixed)
    h = fileio.config_hash({"system": cfg["system"], "T": T, "input": sig.spec_string(),
                            "periods": periods, "seed": seed, "substeps": substeps,
                            "noise": noise, "mismatch": [mismatch_beta, mismatch_kappa,
                                                         mismatch_fixed]})
    try:
        trace, report = simulate(system, T, periods, sig, seed=seed, spec=spec,
                                 noise=noise_inj, mismatch=mism, substeps=substeps,
                                 allow_unstable=allow_unstable,
                                 allow_input_overload=allow_overload)
    except CbconvError as exc:
        raise click.ClickException(str(exc))
    trace.config_hash = h
    fileio.write_trace(out, trace, encoding="text" if text else "packed", cfg_hash=h)
    click.echo(f"max |x_l|: {np.array2string(report.max_abs_state, precision=4)}; "
               f"bound violations: {report.bound_violations}")
    if report.input_bound_exceeded:
        click.echo("note: input exceeded the declared bound (overload run)")
    click.echo(f"wrote {out}")


@main.command()
@click.option("--coeffs", type=click.Path(exists=True), required=True)
@click.option("--trace", type=click.Path(exists=True), required=True)
@click.option("--form", type=click.Choice(["batch", "mixed", "parallel"]), default="batch")
@click.option("--latency", type=int, default=None, help="lookahead L for the mixed form")
@click.option("--tu", type=float, default=None)
@click.option("--binary", is_flag=True, help="raw binary64 stream output")
@click.option("--keep-edges", is_flag=True, help="do not trim boundary-affected samples")
@click.option("--out", type=click.Path(), required=True)
def estimate(coeffs, trace, form, latency, tu, binary, keep_edges, out):
    """Run the estimation filter over a recorded control trace."""
    cf = fileio.read_coefficients(coeffs)
    tr = fileio.read_trace(trace)
    if tr.length == 0:
        raise click.ClickException("trace is empty")
    try:
        if form == "batch":
            est = estimate_batch(cf, tr, T_u=tu)
        elif form == "mixed":
            est = estimate_mixed(cf, tr, latency=latency)
        else:
            est = estimate_parallel(parallelize(cf), tr)
    except CbconvError as exc:
        raise click.ClickException(str(exc))
    fileio.write_estimates(out, est, binary=binary, trim_to_valid=not keep_edges)
    a, b = est.valid_range
    click.echo(f"estimated {est.length} samples at T_u = {est.T_u!r}; "
               f"valid range [{a}, {b})")
    click.echo(f"wrote {out}")


@main.command()
@click.option("--estimates", type=click.Path(exists=True), required=True)
@click.option("--band", type=str, required=True, help="F_LO_HZ,F_HI_HZ")
@click.option("--segment", type=int, default=1 << 14)
@click.option("--window", type=str, default="hann", help="hann or kaiser:BETA")
@click.option("--binary-k", type=int, default=None, help="columns when input is binary")
@click.option("--binary-tu", type=float, default=None)
@click.option("--psd-out", type=click.Path(), default=None)
@click.option("--report-out", type=click.Path(), default=None)
def analyze(estimates, band, segment, window, binary_k, binary_tu, psd_out, report_out):
    """Measure PSD and band metrics from an estimates file."""
    if binary_k is not None:
        est = fileio.read_estimates(estimates, binary=True, k=binary_k, T_u=binary_tu)
    else:
        est = fileio.read_estimates(estimates)
    f_lo, f_hi = (float(v) for v in band.split(","))
    win = ("kaiser", float(window.split(":")[1])) if window.startswith("kaiser") else window
    rpt = psd_op(est.samples[:, 0], 1.0 / est.T_u, segment_length=segment, window=win)
    try:
        done = snr_in_band(rpt, (f_lo, f_hi))
        tone = done.tone
        metrics = {"snr_db": done.snr_db, "sndr_db": done.sndr_db,
                   "sfdr_db": done.sfdr_db,
                   "tone_hz": tone[0], "tone_amp": tone[1],
                   "band": [f_lo, f_hi]}
    except NoToneError:
        metrics = {"snr_db": None, "sndr_db": None, "sfdr_db": None,
                   "tone_hz": None, "tone_amp": None, "band": [f_lo, f_hi],
                   "note": "no tone detected; in-band power reported",
                   "in_band_power": rpt.integrated_power(f_lo, f_hi)}
    click.echo(json.dumps(metrics))
    if psd_out:
        fileio.write_psd_csv(psd_out, rpt.freqs, rpt.psd)
        click.echo(f"wrote {psd_out}")
    if report_out:
        fileio.write_report(report_out, metrics)
        click.echo(f"wrote {report_out}")


@main.command()
@click.option("--config", type=click.Path(exists=True))
@click.option("--preset", type=str)
@click.option("--eta2", type=float, default=None)
@click.option("--osr", type=float, default=None)
@click.option("--omega-lo", type=float, required=True)
@click.option("--omega-hi", type=float, required=True)
@click.option("--points", type=int, default=200)
@click.option("--out", type=click.Path(), required=True)
def predict(config, preset, eta2, osr, omega_lo, omega_hi, points, out):
    """Evaluate STF/NTF magnitudes on a log frequency grid (CSV)."""
    cfg = _load_config(config, preset)
    T = float(cfg["control"]["T"])
    readout = cfg.get("design", {}).get("readout", "last_state")
    spec, system = system_from_config(cfg, readout)
    eta2 = _resolve_eta2(cfg, eta2, osr, spec, T)
    omegas = np.geomspace(omega_lo, omega_hi, points)
    pts = transfer_grid(system, eta2, omegas)
    w_crit = bandwidth(system, eta2)
    click.echo(f"omega_crit = {w_crit!r} rad/s (f_crit = {w_crit/(2*np.pi)!r} Hz)")
    fileio.write_transfer_csv(out, pts)
    click.echo(f"wrote {out}")


@main.command()
@click.option("--config", type=click.Path(exists=True))
@click.option("--preset", type=str)
@click.option("--outdir", type=click.Path(), default=None)
@click.option("--periods", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--form", type=click.Choice(["batch", "mixed", "parallel"]), default="batch")
@click.option("--latency", type=int, default=None)
@click.pass_context
def pipeline(ctx, config, preset, outdir, periods, seed, form, latency):
    """design -> simulate -> estimate -> analyze, writing all artifacts."""
    cfg = _load_config(config, preset)
    outdir = Path(outdir or _outdir_default())
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True))
    T = float(cfg["control"]["T"])
    spec, system = system_from_config(cfg)
    coeffs_path = outdir / "coeffs.json"
    trace_path = outdir / "trace.cbt"
    est_path = outdir / "estimates.csv"
    ctx.invoke(design, config=str(outdir / "config.json"), preset=None,
               eta2=None, osr=None, tu=None, out=str(coeffs_path))
    ctx.invoke(simulate_cmd, config=str(outdir / "config.json"), preset=None,
               input_str=None, periods=periods, seed=seed, substeps=64,
               text=False, allow_unstable=False, allow_overload=False,
               noise=None, mismatch_beta=0.0, mismatch_kappa=0.0,
               mismatch_fixed=False, out=str(trace_path))
    ctx.invoke(estimate, coeffs=str(coeffs_path), trace=str(trace_path),
               form=form, latency=latency, tu=None, binary=False,
               keep_edges=False, out=str(est_path))
    eta2 = _resolve_eta2(cfg, None, None, spec, T)
    w_crit = bandwidth(system, eta2)
    f_crit = w_crit / (2 * np.pi)
    est = fileio.read_estimates(est_path)
    ctx.invoke(analyze, estimates=str(est_path),
               band=f"{3.0 / (est.T_u * (1 << 14))},{f_crit}",
               segment=1 << 14, window="hann", binary_k=None, binary_tu=None,
               psd_out=str(outdir / "psd.csv"),
               report_out=str(outdir / "report.json"))
    click.echo(f"pipeline artifacts in {outdir}")


@main.command()
@click.option("--config", type=click.Path(exists=True))
@click.option("--preset", type=str)
@click.option("--amplitudes", type=str, required=True, help="comma-separated, ascending")
@click.option("--f0", type=float, default=0.1)
@click.option("--periods", type=int, default=1 << 16)
@click.option("--seed", type=int, default=0)
@click.option("--osr", type=float, default=None)
@click.option("--out", type=click.Path(), required=True)
def sweep(config, preset, amplitudes, f0, periods, seed, osr, out):
    """Measured vs predicted SNR over input amplitudes (CSV)."""
    cfg = _load_config(config, preset)
    spec = spec_from_config(cfg)
    T = float(cfg["control"]["T"])
    osr = osr if osr is not None else cfg.get("design", {}).get("osr")
    if osr is None:
        raise click.UsageError("sweep needs an OSR (flag or design.osr)")
    amps = sorted(float(a) for a in amplitudes.split(","))
    points = snr_sweep(spec, T, float(osr), amps, f0, periods, seed=seed)
    import csv as _csv
    with open(out, "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["amplitude", "snr_db", "sndr_db", "predicted_db",
                    "noise_power", "bound_violations"])
        for p in points:
            w.writerow([p.amplitude, p.snr_db, p.sndr_db, p.predicted_db,
                        p.noise_power, p.bound_violations])
    for p in points:
        click.echo(f"A={p.amplitude}: measured {p.snr_db} dB, predicted {p.predicted_db} dB")
    click.echo(f"wrote {out}")


if __name__ == "__main__":
    sys.exit(main())
