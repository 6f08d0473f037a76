"""``vsic`` command line: one subcommand per experiment family."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import SUBENSEMBLES, ConfigError, RunConfig, composition_of, load_config
from .dynamics import (AntennaProfile, NoiseModel, Trace, calibrate_pi_pulse, central_frequency,
                       ensemble_average, simulate_hahn, simulate_rabi,
                       simulate_ramsey)
from .fitting import (FitError, fit_rabi, fit_ramsey, fit_spectrum,
                      model_select_t2_sharing, read_trace_csv)
from .hamiltonian import DEFAULT_PROFILE, SystemConfig, profile
from .spectra import (EnsembleComposition, TrackingError, anticrossings, find_clock_transition,
                      odmr_spectrum, sidepeaks, sweep_levels)

COLUMNS = {
    "levels": "levels.csv: b_mT, then one energy column (MHz) per tracked level label; "
              "anticrossings.csv: lower, upper, b_mT, gap_MHz",
    "clock": "clock.csv: b_star_mT, f_star_MHz, slope_MHz_per_mT, curvature_MHz_per_mT2",
    "odmr": "odmr.csv: frequency_MHz, intensity; sticks.csv: frequency_MHz, weight",
    "rabi": "rabi.csv: swept_parameter (pulse duration, us), signal, stderr_over_samples",
    "ramsey": "ramsey.csv: swept_parameter (free precession, us), signal, stderr_over_samples",
    "hahn": "hahn.csv: swept_parameter (tau_var, us), signal, stderr_over_samples; "
            "echo.csv: tau_fix_us, echo_amplitude",
    "fit": "fit.json: estimates, 95% half-widths, residual norm, status; fitted.csv: x, y, model",
    "validate": "validate.csv: check, status, value, tolerance",
}


class PhysicsError(RuntimeError):
    pass


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_trace(path: Path, trace: Trace) -> None:
    cols = trace.columns()
    write_csv(path, list(cols), zip(*cols.values()))


# ------------------------------------------------------------------ models


def _base_model(cfg: RunConfig, n_si: int) -> SystemConfig:
    return profile(cfg.root["profile"], n_si).with_params(**cfg.parameter_overrides())


def _ensemble(cfg: RunConfig) -> list[tuple[str, float, SystemConfig]]:
    """(name, weight, model) for every contributing subensemble."""
    if cfg.root["n_si"] is not None:
        n = cfg.root["n_si"]
        return [(SUBENSEMBLES[n], 1.0, _base_model(cfg, n))]
    comp = composition_of(cfg)
    return [(SUBENSEMBLES[n], w, _base_model(cfg, n)) for n, w in enumerate(comp.weights) if w > 0]


def _b0(cfg: RunConfig, command: str) -> float:
    b0 = cfg.root["b0"]
    if b0 is None:
        raise ConfigError(f"'{command}' needs b0 (e.g. b0: \"33 mT\")")
    return b0


def _noise(cfg: RunConfig, sub: str) -> NoiseModel:
    nz = cfg["noise"]
    rate = nz["dephasing_rate"]
    per = nz["dephasing_by_subensemble"] or {}
    rate = per.get(sub, rate)
    return NoiseModel(nz["sigma_b"], nz["samples"], rate, cfg.root["seed"])


def _antenna(cfg: RunConfig) -> AntennaProfile | None:
    a = cfg["antenna"]
    if not a["enabled"]:
        return None
    return AntennaProfile(a["radius"], a["thickness"], a["slabs"])


def _sequence_kw(cfg: RunConfig) -> dict:
    s = cfg["sequence"]
    return dict(polarized_pair=tuple(s["polarized_pair"]), polarization=s["polarization"],
                pair_weight=s["pair_weight"], readout=tuple(s["readout"]))


def _drive(cfg: RunConfig, b0: float):
    """Central frequency and pi/2 duration shared by all subensembles."""
    s = cfg["sequence"]
    ref = _base_model(cfg, 0)
    f0 = s["frequency"] if s["frequency"] is not None else central_frequency(ref, b0)
    axis = tuple(s["axis"])
    pi_half = s["pi_half"]
    if pi_half is None:
        pi_half = 0.5 * calibrate_pi_pulse(ref, b0, s["b1"], f0, axis)
    return f0, pi_half, axis


# ---------------------------------------------------------------- commands


def cmd_levels(cfg: RunConfig, out: Path) -> list[Path]:
    start, stop, points = cfg["levels"]["sweep"]
    model = _base_model(cfg, cfg.root["n_si"] or 0)
    diagram = sweep_levels(model, np.linspace(start, stop, points))
    header = ["b_mT"] + [f"E{lab} MHz" for lab in diagram.labels]
    rows = ([b, *e] for b, e in zip(diagram.b_values, diagram.energies))
    write_csv(out / "levels.csv", header, rows)
    acs = anticrossings(diagram)
    write_csv(out / "anticrossings.csv", ["lower", "upper", "b_mT", "gap_MHz"],
              ([a.lower, a.upper, a.b, a.gap] for a in acs))
    print(f"{len(diagram.labels)} levels at {points} fields; {len(acs)} anti-crossings")
    return [out / "levels.csv", out / "anticrossings.csv"]


def cmd_clock(cfg: RunConfig, out: Path) -> list[Path]:
    model = _base_model(cfg, cfg.root["n_si"] or 0)
    res = find_clock_transition(model, tuple(cfg["clock"]["pair"]), cfg["clock"]["range"])
    if not res.found:
        raise PhysicsError(res.message)
    write_csv(out / "clock.csv", ["b_star_mT", "f_star_MHz", "slope_MHz_per_mT", "curvature_MHz_per_mT2"],
              [[res.b_star, res.f_star, res.slope, res.curvature]])
    print(f"b_star = {res.b_star:.4f} mT, f_star = {res.f_star:.4f} MHz, "
          f"curvature = {res.curvature:.4f} MHz/mT^2")
    return [out / "clock.csv"]


def cmd_odmr(cfg: RunConfig, out: Path, threads: int) -> list[Path]:
    b0 = _b0(cfg, "odmr")
    o = cfg["odmr"]
    members = _ensemble(cfg)
    comp = EnsembleComposition.from_ratio(*(w for _, w, _ in members))
    center = o["center"] if o["center"] is not None else central_frequency(_base_model(cfg, 0), b0)
    f = np.linspace(center - o["span"] / 2, center + o["span"] / 2, o["points"])
    trace = odmr_spectrum([m for _, _, m in members], b0, comp, o["linewidth"], f,
                          tuple(o["axis"]), threads=threads)
    write_csv(out / "odmr.csv", ["frequency_MHz", "intensity"], zip(trace.frequency, trace.intensity))
    write_csv(out / "sticks.csv", ["frequency_MHz", "weight"], sorted(trace.sticks))
    sp = sidepeaks(trace, center)
    print(f"central {center:.4f} MHz; {len(sp.sidepeaks)} sidepeaks at offsets "
          + ", ".join(f"{x:+.3f}" for x in sp.offsets) + f" MHz; ratio {sp.ratio:.3f}")
    return [out / "odmr.csv", out / "sticks.csv"]


def _run_members(cfg, fn):
    traces, weights = [], []
    for name, w, model in _ensemble(cfg):
        traces.append(fn(name, model))
        weights.append(w)
    return ensemble_average(traces, weights)


def cmd_rabi(cfg: RunConfig, out: Path, threads: int) -> list[Path]:
    b0 = _b0(cfg, "rabi")
    s = cfg["sequence"]
    f0, _, axis = _drive(cfg, b0)
    durations = np.linspace(*s["durations"][:2], s["durations"][2])
    trace = _run_members(cfg, lambda name, m: simulate_rabi(
        m, b0, s["b1"], durations, s["detuning"], f0, axis, noise=_noise(cfg, name),
        antenna=_antenna(cfg), threads=threads, **_sequence_kw(cfg)))
    write_trace(out / "rabi.csv", trace)
    print(f"Rabi trace: {len(durations)} durations at {f0 + s['detuning']:.4f} MHz")
    return [out / "rabi.csv"]


def cmd_ramsey(cfg: RunConfig, out: Path, threads: int) -> list[Path]:
    b0 = _b0(cfg, "ramsey")
    s = cfg["sequence"]
    f0, pi_half, axis = _drive(cfg, b0)
    tau = np.linspace(*s["tau"][:2], s["tau"][2])
    trace = _run_members(cfg, lambda name, m: simulate_ramsey(
        m, b0, s["detuning"], tau, s["b1"], pi_half, f0, axis, noise=_noise(cfg, name),
        antenna=_antenna(cfg), threads=threads, **_sequence_kw(cfg)))
    write_trace(out / "ramsey.csv", trace)
    print(f"Ramsey trace: {len(tau)} delays, detuning {s['detuning']} MHz, pi/2 = {pi_half:.5f} us")
    return [out / "ramsey.csv"]


def cmd_hahn(cfg: RunConfig, out: Path, threads: int) -> list[Path]:
    b0 = _b0(cfg, "hahn")
    s = cfg["sequence"]
    f0, pi_half, axis = _drive(cfg, b0)
    tau_var = np.linspace(*s["tau_var"][:2], s["tau_var"][2])
    amps = []

    def one(name, m):
        kw = dict(noise=_noise(cfg, name), antenna=_antenna(cfg), threads=threads, **_sequence_kw(cfg))
        res = simulate_hahn(m, b0, s["tau_fix"], tau_var, s["b1"], pi_half, f0, axis, **kw)
        amps.append(res.echo_amplitude)
        return res.trace

    trace = _run_members(cfg, one)
    weights = np.array([w for _, w, _ in _ensemble(cfg)])
    echo = float(np.dot(weights / weights.sum(), amps))
    write_trace(out / "hahn.csv", trace)
    write_csv(out / "echo.csv", ["tau_fix_us", "echo_amplitude"], [[s["tau_fix"], echo]])
    print(f"echo amplitude at tau_fix = {s['tau_fix']} us: {echo:.6g}")
    return [out / "hahn.csv", out / "echo.csv"]


def cmd_fit(cfg: RunConfig, out: Path, config_dir: Path) -> list[Path]:
    fc = cfg["fit"]
    if fc["input"] is None:
        raise ConfigError("'fit' needs fit.input (a CSV trace)")
    path = Path(fc["input"])
    if not path.is_absolute() and not path.exists():
        path = config_dir / path
    x, y, _ = read_trace_csv(path)
    n = fc["components"]
    doc: dict
    if fc["model"] == "gaussian":
        res = fit_spectrum(x, y, n)
        doc = res.to_dict()
    elif fc["model"] == "rabi":
        res = fit_rabi(x, y, n)
        doc = res.to_dict()
    elif fc["sharing"] == "auto":
        sel = model_select_t2_sharing(x, y, n)
        if sel.choice is None:
            raise PhysicsError(f"T2 sharing selection abstained: {sel.message}")
        res = sel.shared if sel.choice == "shared-T2" else sel.per_component
        doc = {"selection": sel.to_dict(), **res.to_dict()}
    else:
        res = fit_ramsey(x, y, n, fc["sharing"])
        doc = res.to_dict()
    (out / "fit.json").write_text(json.dumps(doc, indent=2, default=float) + "\n")
    write_csv(out / "fitted.csv", ["x", "y", "model"], zip(x, y, res.predict(x)))
    status = "converged" if res.converged else "NON-CONVERGED"
    print(f"{fc['model']} fit ({n} components): {status}, residual norm {res.residual_norm:.4g}")
    return [out / "fit.json", out / "fitted.csv"]


def cmd_validate(out: Path) -> tuple[list[Path], bool]:
    from .validation import run_suite
    results = run_suite()
    for r in results:
        print(r.line())
    write_csv(out / "validate.csv", ["check", "status", "value", "tolerance"],
              ([r.name, "PASS" if r.passed else "FAIL", r.value, r.tolerance] for r in results))
    ok = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    return [out / "validate.csv"], ok


# ------------------------------------------------------------------ driver


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cfg: RunConfig, outputs: list[Path]) -> Path:
    resolved = cfg.to_dict()
    canonical = json.dumps({"command": command, "config": resolved}, sort_keys=True,
                           ensure_ascii=False)
    manifest = {
        "tool": "vsic",
        "version": __version__,
        "command": command,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "input_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "config": resolved,
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, ensure_ascii=False) + "\n")
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vsic", description="Spin simulator and fitting toolkit for vanadium defects in 4H-SiC.")
    parser.add_argument("--version", action="version", version=f"vsic {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration (or a manifest.json)")
    common.add_argument("--seed", type=int, help="rng seed for noise sampling (overrides config)")
    common.add_argument("--out", type=Path, help="output directory (overrides config)")
    common.add_argument("--threads", type=int, help="worker threads for trajectory/subensemble loops")
    common.add_argument("--profile", help=f"parameter profile (default {DEFAULT_PROFILE})")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "levels": "tracked level diagram over a field sweep",
        "clock": "locate the clock transition of a level pair",
        "odmr": "ensemble ODMR spectrum at b0",
        "rabi": "Rabi oscillations versus pulse duration",
        "ramsey": "Ramsey fringes versus free precession time",
        "hahn": "Hahn echo versus second delay, plus echo amplitude",
        "fit": "fit a CSV trace (Ramsey, Rabi or Gaussian spectrum)",
        "validate": "run the structural invariant and oracle suite",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text,
                       epilog=f"Outputs: {COLUMNS[name]}; plus manifest.json.")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        over = {}
        if args.seed is not None:
            over["seed"] = args.seed
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be at least 1")
            over["threads"] = args.threads
        if args.profile is not None:
            over["profile"] = args.profile
        if args.out is not None:
            over["output"] = str(args.out)
        if over:
            # re-validate so command-line overrides get the same checks as the file
            cfg = load_config(text=json.dumps(cfg.with_overrides(**over).to_dict(), ensure_ascii=False))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    out = Path(cfg.root["output"])
    out.mkdir(parents=True, exist_ok=True)
    threads = cfg.root["threads"]
    config_dir = args.config.parent if args.config else Path.cwd()
    ok = True
    try:
        if args.command == "levels":
            files = cmd_levels(cfg, out)
        elif args.command == "clock":
            files = cmd_clock(cfg, out)
        elif args.command == "odmr":
            files = cmd_odmr(cfg, out, threads)
        elif args.command == "rabi":
            files = cmd_rabi(cfg, out, threads)
        elif args.command == "ramsey":
            files = cmd_ramsey(cfg, out, threads)
        elif args.command == "hahn":
            files = cmd_hahn(cfg, out, threads)
        elif args.command == "fit":
            files = cmd_fit(cfg, out, config_dir)
        else:
            files, ok = cmd_validate(out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PhysicsError, FitError, TrackingError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    write_manifest(out, args.command, cfg, files)
    return 0 if ok else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
