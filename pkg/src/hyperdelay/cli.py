"""Command-line virtual experiments.

Every command writes into a fresh ``<out>/<command>-<UTC timestamp>``
directory so earlier results are never overwritten. Exit codes: 0 success,
2 validation/input error, 3 runtime or convergence failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import analysis, franson, optics, qstate, simkit, tomography
from .config import ConfigError, RunConfig, parse_projection

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


class MissingInputError(ValueError):
    pass


def new_run_dir(out, command: str) -> Path:
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    path = root / f"{command}-{stamp}"
    k = 1
    while path.exists():
        path = root / f"{command}-{stamp}-{k}"
        k += 1
    path.mkdir()
    return path


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


# -- simulate ---------------------------------------------------------------

def run_simulate(cfg: RunConfig, out_dir: Path, displacement_nm: float | None = None,
                 write_csv: bool = False) -> dict:
    x = cfg.analysis.displacement_nm if displacement_nm is None else displacement_nm
    stream = simkit.simulate(cfg.source_spec(), cfg.interferometer, x)
    paths = {}
    for name in ("signal", "idler"):
        part = stream.select(name)
        simkit.write_ttag(out_dir / f"{name}.ttag", part)
        paths[name] = str(out_dir / f"{name}.ttag")
        if write_csv:
            simkit.write_tag_csv(out_dir / f"{name}.csv", part)
    meta = {
        "config": cfg.to_dict(),
        "displacement_nm": x,
        "pairs_emitted": stream.meta["pairs"],
        "signal_tags": stream.count("signal"),
        "idler_tags": stream.count("idler"),
        "digest": stream.meta["digest"],
    }
    _dump(out_dir / "simulate.json", meta)
    return meta


# -- histogram --------------------------------------------------------------

def locate_delay(a, b, search_ps: float = 2e6, coarse_bin_ps: float = 1000.0) -> float | None:
    """Coarse cross-correlation peak, or None when there are no matches."""
    h = simkit.cross_correlate(a, b, coarse_bin_ps, (-search_ps, search_ps))
    if h.total == 0:
        return None
    return h.peak_center()


def run_histogram(a: simkit.TimeTagStream, b: simkit.TimeTagStream, out_dir: Path,
                  bin_width_ps: float = 100.0, window_ps: float = 700.0,
                  range_ps: tuple[float, float] | None = None, imbalance_ps: float | None = None) -> dict:
    if range_ps is None:
        center = locate_delay(a, b)
        half = 5000.0 if imbalance_ps is None else 2 * imbalance_ps + 2000.0
        range_ps = simkit.centered_range(0.0 if center is None else round(center), half, bin_width_ps)
    h = simkit.cross_correlate(a, b, bin_width_ps, range_ps)
    h.to_csv(out_dir / "histogram.csv")
    peak = h.peak_center() if h.total else None
    span = max(a.times[-1] if len(a) else 0, b.times[-1] if len(b) else 0) * 1e-12
    summary = {
        "bin_width_ps": bin_width_ps,
        "range_ps": list(h.range_ps),
        "total_counts": h.total,
        "peak_center_ps": peak,
        "window_ps": window_ps,
        "window_counts": None,
        "accidental_estimate": 0.0,
    }
    if peak is not None:
        summary["window_counts"] = simkit.window_counts(h, peak, window_ps)
        if span > 0:
            rate = simkit.accidental_rate(len(a) / span, len(b) / span, window_ps)
            summary["accidental_estimate"] = rate * span
        if imbalance_ps is not None:
            side = [simkit.window_counts(h, peak + s * imbalance_ps, window_ps) for s in (-1, 1)]
            summary["side_window_counts"] = side
            summary["central_to_side_ratio"] = (
                summary["window_counts"] / (sum(side) / 2) if sum(side) else None
            )
    else:
        summary["window_counts"] = 0
    _dump(out_dir / "histogram.json", summary)
    return summary


# -- fringe -----------------------------------------------------------------

def _fringe_scans(cfg: RunConfig, projections: list[str]) -> dict:
    """Named scans: before/after the delay line plus projected after-scans."""
    scans = {"before": (False, None), "after": (cfg.delay_line is not None, None)}
    for p in projections:
        scans[f"after_{p.replace(',', '_')}"] = (cfg.delay_line is not None, parse_projection(p))
    return scans


def run_fringe(cfg: RunConfig, out_dir: Path, analytic: bool = False, steps: int | None = None,
               projections: list[str] | None = None, window_ps: float | None = None,
               bin_width_ps: float | None = None) -> dict:
    a = cfg.analysis
    steps = a.scan_steps if steps is None else steps
    window = a.window_ps if window_ps is None else window_ps
    bin_w = a.bin_width_ps if bin_width_ps is None else bin_width_ps
    projections = a.projections if projections is None else projections
    spec = cfg.interferometer
    xs = franson.scan_grid(a.scan_start_nm, a.scan_step_nm, steps)
    phases = franson.two_photon_phase(xs, spec.lambda_s_nm, spec.lambda_i_nm)
    if steps < 4 or np.ptp(phases) < np.pi:
        raise ConfigError("fringe scan too short: need >= 4 points spanning >= pi of phase")

    fits = {}
    for k, (name, (delayed, proj)) in enumerate(_fringe_scans(cfg, projections).items()):
        state = cfg.joint_state()
        if delayed:
            state, _ = optics.delay_line_channel(state, cfg.delay_line)
        if analytic:
            pts = franson.fringe_scan(state, spec, xs, proj)
            y = np.array([p.normalized_coincidences for p in pts])
            fit = dataclasses.replace(analysis.fit_sinusoid(phases, y, weights=np.ones_like(y)),
                                      visibility_sigma=0.0)
            franson.write_fringe_csv(out_dir / f"fringe_{name}.csv", pts)
        else:
            counts = []
            for j, x in enumerate(xs):
                seed = simkit.derive_seed(cfg.seed, k, j)
                stream = simkit.simulate(cfg.source_spec(seed, delayed=delayed), spec, x, proj)
                center = round(cfg.delay_line.delay_ns * 1000) if delayed else 0
                h = simkit.cross_correlate(stream.select("idler"), stream.select("signal"), bin_w,
                                           simkit.centered_range(center, window, bin_w))
                counts.append(simkit.window_counts(h, center, window))
            counts = np.array(counts, dtype=float)
            fit = analysis.fit_sinusoid(phases, counts)
            norm = counts / counts.max() if counts.max() > 0 else counts
            pts = [franson.FringePoint(float(x), float(p), float(c)) for x, p, c in zip(xs, phases, norm)]
            franson.write_fringe_csv(out_dir / f"fringe_{name}.csv", pts, counts.tolist())
        fits[name] = fit.to_dict()

    result = {
        "mode": "analytic" if analytic else "monte_carlo",
        "fits": fits,
        "F_E": {name: tomography.fidelity_from_visibility(f["visibility"]) for name, f in fits.items()},
        "step_phase_rad": float(franson.two_photon_phase(a.scan_step_nm, spec.lambda_s_nm, spec.lambda_i_nm)),
        "config": cfg.to_dict(),
    }
    _dump(out_dir / "fringe_fit.json", result)
    return result


# -- tomography -------------------------------------------------------------

TARGET_STATES = {
    "phi+": lambda cfg: qstate.bell_pol(cfg.source.theta).projector(),
    "phi-": lambda cfg: qstate.bell_pol(cfg.source.theta + np.pi).projector(),
}


def _reconstruct(records, target, cfg: RunConfig, seed: int, n_boot: int):
    res = tomography.mle_reconstruct(records)
    if not res.converged:
        raise RuntimeError("maximum-likelihood reconstruction did not converge")
    replicas = []
    if n_boot > 1:

        def stats(rho):
            return {"fidelity_to_target": qstate.fidelity(rho, target), "purity": rho.purity(),
                    "S": tomography.chsh(rho)}

        res.bootstrap_sigma, replicas = tomography.parametric_bootstrap(records, res, stats, n_boot, seed)
    return res, replicas


def run_tomo(cfg: RunConfig, out_dir: Path, analytic: bool = False, counts_path=None, counts_after_path=None,
             target: str | None = None, n_boot: int | None = None) -> dict:
    t = cfg.tomography
    target = target or t.target
    n_boot = t.bootstrap if n_boot is None else n_boot
    truth = {"before": cfg.pol_state()}
    if cfg.delay_line is not None:
        truth["after"] = optics.delay_line_channel(truth["before"], cfg.delay_line)[0]

    records = {}
    if counts_path is not None:
        records["before"] = tomography.read_counts_csv(counts_path)
        if counts_after_path is not None:
            records["after"] = tomography.read_counts_csv(counts_after_path)
        if target == "truth":
            raise ConfigError("target 'truth' is only available for synthetic runs")
    else:
        for k, (name, rho) in enumerate(truth.items()):
            p = tomography.born_probabilities(rho)
            if analytic:
                records[name] = tomography.expected_counts(p, t.n_per_setting)
            else:
                records[name] = tomography.simulate_counts(p, t.n_per_setting, simkit.derive_seed(cfg.seed, 100, k))
    for name, recs in records.items():
        tomography.write_counts_csv(out_dir / f"counts_{name}.csv", recs)

    report = {"target": target, "mode": "analytic" if analytic else "counts"}
    recon = {}
    for k, (name, recs) in enumerate(records.items()):
        tgt = truth[name] if target == "truth" else TARGET_STATES[target](cfg)
        res, replicas = _reconstruct(recs, tgt, cfg, simkit.derive_seed(cfg.seed, 200, k), n_boot)
        recon[name] = (res, replicas)
        entry = tomography.tomography_report(res, tgt)
        entry["polarization_visibility"] = analysis.polarization_visibilities(res.rho, cfg.analysis.polarizer_points)
        if counts_path is None:
            entry["fidelity_to_truth"] = qstate.fidelity(res.rho, truth[name])
            probs = tomography.chsh_outcome_probabilities(truth[name])
            if analytic:
                direct = probs * t.chsh_n_per_setting
            else:
                rng = simkit.make_rng(simkit.derive_seed(cfg.seed, 300, k))
                direct = rng.poisson(probs * t.chsh_n_per_setting)
            s, sig = tomography.chsh_from_counts(direct)
            entry["S_direct"] = s
            entry["S_direct_sigma"] = sig
        report[name] = entry

    if "before" in recon and "after" in recon:
        (rb, reps_b), (ra, reps_a) = recon["before"], recon["after"]
        report["mutual_fidelity"] = qstate.fidelity(rb.rho, ra.rho)
        if reps_b and reps_a:
            fs = [qstate.fidelity(x, y) for x, y in zip(reps_b, reps_a)]
            report["mutual_fidelity_sigma"] = float(np.std(fs, ddof=1))
        else:
            report["mutual_fidelity_sigma"] = None
    _dump(out_dir / "tomo_report.json", report)
    return report


# -- report -----------------------------------------------------------------

REPORT_ROWS = [
    # key, label, target value
    ("et_visibility_before", "Energy-time visibility, before delay", 0.943),
    ("et_visibility_after", "Energy-time visibility, after delay", 0.939),
    ("et_visibility_after_HH", "Energy-time visibility, after delay, H/H projection", 0.939),
    ("et_visibility_after_DD", "Energy-time visibility, after delay, D/D projection", 0.938),
    ("F_E_before", "Visibility-based fidelity F_E, before", 0.972),
    ("F_E_after", "Visibility-based fidelity F_E, after", 0.970),
    ("pol_visibility_HV_before", "Polarization visibility H/V, before", None),
    ("pol_visibility_DA_before", "Polarization visibility D/A, before", None),
    ("pol_visibility_mean_before", "Polarization visibility (mean), before", 0.977),
    ("pol_visibility_HV_after", "Polarization visibility H/V, after", None),
    ("pol_visibility_DA_after", "Polarization visibility D/A, after", None),
    ("pol_visibility_mean_after", "Polarization visibility (mean), after", 0.976),
    ("tomographic_fidelity", "Tomographic fidelity before vs after", 0.995),
    ("S_before", "CHSH S, before", 2.760),
    ("S_after", "CHSH S, after", 2.758),
]


def _latest(run_dir: Path, pattern: str):
    found = sorted(run_dir.glob(pattern))
    return json.loads(found[-1].read_text()) if found else None


def collect_report(run_dir) -> dict:
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise MissingInputError(f"run directory {run_dir} does not exist")
    values: dict[str, dict] = {}
    fr = _latest(run_dir, "fringe-*/fringe_fit.json")
    if fr is not None:
        for name, f in fr["fits"].items():
            values[f"et_visibility_{name}"] = {"value": f["visibility"], "sigma": f["sigma"]}
        for name in ("before", "after"):
            if name in fr["F_E"]:
                sig = fr["fits"][name]["sigma"]
                values[f"F_E_{name}"] = {"value": fr["F_E"][name], "sigma": sig / 2}
    tm = _latest(run_dir, "tomo-*/tomo_report.json")
    if tm is not None:
        for name in ("before", "after"):
            if name not in tm:
                continue
            e = tm[name]
            boot = e.get("bootstrap") or {}
            for basis in ("HV", "DA", "mean"):
                values[f"pol_visibility_{basis}_{name}"] = {"value": e["polarization_visibility"][basis], "sigma": None}
            values[f"S_{name}"] = {"value": e["S"], "sigma": boot.get("S")}
        if "mutual_fidelity" in tm:
            values["tomographic_fidelity"] = {"value": tm["mutual_fidelity"], "sigma": tm.get("mutual_fidelity_sigma")}

    rows, missing = [], []
    for key, label, tgt in REPORT_ROWS:
        v = values.get(key)
        if v is None:
            missing.append(key)
        rows.append({"key": key, "label": label, "target": tgt,
                     "value": None if v is None else v["value"], "sigma": None if v is None else v["sigma"]})
    return {"rows": rows, "missing": missing, "extra": {k: v for k, v in values.items()
                                                       if k not in {r[0] for r in REPORT_ROWS}}}


def _fmt(v, sigma=None) -> str:
    if v is None:
        return "MISSING"
    s = f"{v:.4f}"
    if sigma:
        s += f" ± {sigma:.4f}"
    return s


def report_markdown(rep: dict) -> str:
    lines = ["| quantity | value | target |", "|---|---|---|"]
    for r in rep["rows"]:
        tgt = "" if r["target"] is None else f"{r['target']:.3f}"
        lines.append(f"| {r['label']} | {_fmt(r['value'], r['sigma'])} | {tgt} |")
    if rep["missing"]:
        lines.append("")
        lines.append("Missing inputs: " + ", ".join(rep["missing"]))
    return "\n".join(lines) + "\n"


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hyperdelay", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="run configuration JSON (defaults used when omitted)")
            sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", default="runs", help="output root; a new subdirectory is created per run")

    sp = sub.add_parser("simulate", help="Monte Carlo time tags for signal and idler")
    common(sp)
    sp.add_argument("--displacement-nm", type=float)
    sp.add_argument("--csv", action="store_true", help="also write CSV tag files")

    sp = sub.add_parser("histogram", help="cross-correlate two tag files")
    sp.add_argument("tags_a")
    sp.add_argument("tags_b")
    common(sp, config=False)
    sp.add_argument("--bin-width-ps", type=float, default=100.0)
    sp.add_argument("--window-ps", type=float, default=700.0)
    sp.add_argument("--range-ps", type=float, nargs=2, metavar=("LO", "HI"))
    sp.add_argument("--imbalance-ps", type=float, help="also report side-peak windows at +-imbalance")

    sp = sub.add_parser("fringe", help="phase-scanned Franson fringes and visibility fits")
    common(sp)
    sp.add_argument("--analytic", action="store_true", help="closed-form expectations instead of Monte Carlo")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--projection", action="append",
                    help="polarization projection, e.g. HH, DD or '45deg,45deg' (repeatable)")
    sp.add_argument("--bin-width-ps", type=float)
    sp.add_argument("--window-ps", type=float)

    sp = sub.add_parser("tomo", help="maximum-likelihood polarization tomography report")
    common(sp)
    sp.add_argument("--analytic", action="store_true", help="use exact expected counts")
    sp.add_argument("--counts", help="counts CSV (before the delay line)")
    sp.add_argument("--counts-after", help="counts CSV (after the delay line)")
    sp.add_argument("--target", choices=sorted(TARGET_STATES) + ["truth"])
    sp.add_argument("--bootstrap", type=int, help="parametric bootstrap replicas")

    sp = sub.add_parser("report", help="summary table from a run directory")
    sp.add_argument("run_dir")
    sp.add_argument("--out", help="output root (defaults to the run directory)")

    sp = sub.add_parser("config", help="print the default configuration")
    return p


def _read_tags(path):
    return simkit.read_tag_csv(path) if str(path).endswith(".csv") else simkit.read_ttag(path)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "config":
            print(RunConfig().to_json())
            return EXIT_OK
        if args.command == "report":
            rep = collect_report(args.run_dir)
            out = new_run_dir(args.out or args.run_dir, "report")
            _dump(out / "report.json", rep)
            md = report_markdown(rep)
            (out / "report.md").write_text(md)
            print(md, end="")
            if rep["missing"]:
                print(f"missing inputs: {', '.join(rep['missing'])}", file=sys.stderr)
                return EXIT_INVALID
            return EXIT_OK
        if args.command == "histogram":
            a, b = _read_tags(args.tags_a), _read_tags(args.tags_b)
            out = new_run_dir(args.out, "histogram")
            summary = run_histogram(a, b, out, args.bin_width_ps, args.window_ps,
                                    tuple(args.range_ps) if args.range_ps else None, args.imbalance_ps)
            print(json.dumps(summary, indent=2))
            return EXIT_OK

        cfg = load_config(args)
        if args.command == "simulate":
            out = new_run_dir(args.out, "simulate")
            run_simulate(cfg, out, args.displacement_nm, args.csv)
        elif args.command == "fringe":
            out = new_run_dir(args.out, "fringe")
            res = run_fringe(cfg, out, args.analytic, args.steps, args.projection, args.window_ps, args.bin_width_ps)
            print(json.dumps(res["fits"], indent=2))
        elif args.command == "tomo":
            out = new_run_dir(args.out, "tomo")
            rep = run_tomo(cfg, out, args.analytic, args.counts, args.counts_after, args.target, args.bootstrap)
            print(json.dumps({k: v for k, v in rep.items() if k not in ("before", "after")}, indent=2))
        print(out)
        return EXIT_OK
    except (ValueError, OSError) as e:
        # config, file-format, physicality and fit errors all derive from ValueError
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except RuntimeError as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
