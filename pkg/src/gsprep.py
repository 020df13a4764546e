#!/usr/bin/env python3
"""
Ground-state preparation pipeline for the open Heisenberg chain with a
staggered field:

    dmrg    ground-state MPS at chi = N          points/<key>/dmrg/
    encode  staircase encoder + rank diagnostics  points/<key>/encode/
    pite    scheduled PITE refinement             points/<key>/pite/<init>_<backend>/
    scan    all points of a config, then aggregate
    fit     redo the logistic and tail fits of one point
    report  scaling summary from aggregate/

Every command reads an optional JSON ScanConfig (--config); flags override
its fields. Exit codes: 0 ok, 1 internal error, 2 config or missing input,
3 at least one scan point failed.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import ValidationError
from tqdm import tqdm

import artifacts
from encoder import (
    DIAGNOSTIC_COLUMNS,
    auto_stop,
    encode_state,
    encoder_circuit,
    half_rank_crossing,
    load_layers,
    lstar_sensitivity,
    run_disentangler,
    save_layers,
)
from circuit import dag_depth, two_qubit_count
from fits import FitError, auto_tail_window, fit_logistic, fit_tail, predict_delta_L
from hamiltonian import (
    HamiltonianSpec,
    build_hamiltonian,
    neel_state,
    reference_spectrum,
    split_terms,
    subspace_fidelity,
)
from mps_dmrg import build_mpo, chi_max, dmrg_ground, load_mps, mps_to_statevector, save_mps, w0_ref
from pite import crossing_metrics, filter_product, make_schedule, run_trajectory
from report import aggregate, build_report
from scan_config import RunManifest, ScanConfig, point_key

log = logging.getLogger("gsprep")

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_POINTS = 0, 1, 2, 3
STAGES = ("dmrg", "encode", "pite")
TRAJECTORY_COLUMNS = ("k", "dtau", "r", "cap_hit", "p", "P_cum", "infidelity", "delta_E", "depth", "D_cum")
W0_CEILING = 1.0 - 1e-12


class MissingInputError(FileNotFoundError):
    """An upstream stage has not produced its files yet."""


# -------------------------------
# Logging and small helpers
# -------------------------------

def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else (logging.WARNING if quiet else logging.INFO)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("[%(levelname)s] %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level)


def point_dir(cfg: ScanConfig, n: int, hz: float) -> Path:
    return Path(cfg.output_dir) / "points" / point_key(n, hz)


def config_digest(cfg: ScanConfig) -> str:
    """Hash of everything that changes results (not output_dir or workers)."""
    data = cfg.model_dump(mode="json", exclude={"output_dir", "workers"})
    return hashlib.sha256(artifacts.dumps_json(data).encode("utf-8")).hexdigest()


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingInputError(f"{path} not found; run `{stage}` for this point first")
    return path


def _reference(cfg: ScanConfig, spec: HamiltonianSpec):
    return reference_spectrum(spec, cfg.numerics.lanczos_tol, seed=cfg.seed)


def _read_status(pdir: Path) -> dict:
    path = pdir / "status.json"
    return artifacts.read_json(path) if path.exists() else {"stages": {}}


def _record_stage(cfg: ScanConfig, pdir: Path, stage: str, files) -> dict:
    status = _read_status(pdir)
    status.setdefault("stages", {})[stage] = artifacts.checksums(pdir, files)
    status["config_digest"] = config_digest(cfg)
    status["status"] = "done" if all(s in status["stages"] for s in STAGES) else "partial"
    status.pop("error", None)
    status["checksums"] = {k: v for s in STAGES for k, v in sorted(status["stages"].get(s, {}).items())}
    artifacts.write_json(pdir / "status.json", status)
    return status


def write_manifest(cfg: ScanConfig) -> Path:
    root = Path(cfg.output_dir)
    points = {}
    for key in sorted(point_key(n, hz) for n, hz in cfg.points()):
        status = _read_status(root / "points" / key)
        points[key] = {"status": status.get("status", "missing"),
                       "error": status.get("error"),
                       "checksums": status.get("checksums", {})}
    return RunManifest.create(cfg).with_points(points).write(root / "manifest.json")


# -------------------------------
# Stage: DMRG
# -------------------------------

def run_dmrg_stage(cfg: ScanConfig, n: int, hz: float, progress: bool = False) -> dict:
    spec = HamiltonianSpec(n=n, j=cfg.j, hz=hz)
    pdir = point_dir(cfg, n, hz)
    chi = cfg.dmrg.chi_for(n)
    result = dmrg_ground(build_mpo(spec), chi, cfg.dmrg.sweeps, cfg.dmrg.e_tol, seed=cfg.seed,
                         lanczos_dim=cfg.dmrg.lanczos_dim, progress=progress)
    reference = _reference(cfg, spec)
    psi = mps_to_statevector(result.mps)

    summary = {
        "n": n, "hz": hz, "j": cfg.j, "chi": chi, "seed": cfg.seed,
        "energy": result.energy,
        "e0": reference.e0, "e1": reference.e1, "gap": reference.gap,
        "degenerate": reference.degenerate,
        "ground_space_dim": len(reference.ground_space),
        "energy_error": result.energy - reference.e0,
        "fidelity": subspace_fidelity(reference.ground_space, psi),
        "converged_by": result.converged_by,
        "energy_rise": result.energy_rise,
        "sweeps": len(result.sweep_energies),
        "bond_dims": result.mps.bond_dims,
        "delta_eff_source": "lanczos_e1",
    }
    files = [
        save_mps(pdir / "dmrg" / "mps.npz", result.mps, seed=cfg.seed, energy=result.energy, hz=hz, j=cfg.j),
        artifacts.write_json(pdir / "dmrg" / "summary.json", summary),
        artifacts.write_csv(pdir / "dmrg" / "sweeps.csv", ("sweep", "energy"),
                            enumerate(result.sweep_energies, start=1)),
    ]
    _record_stage(cfg, pdir, "dmrg", files)
    log.info("%s dmrg: E=%.12f (exact %.12f), %s after %d sweeps",
             point_key(n, hz), result.energy, reference.e0, result.converged_by, summary["sweeps"])
    return summary


# -------------------------------
# Stage: encoder
# -------------------------------

def analyse_encoding(layers_l, ratios, if_per_site, n: int, window, eps: float,
                     half_crossing: Optional[int] = None) -> dict:
    """Logistic fit, L*, the tail fit and the extra-layer estimate from per-layer series."""
    layers_l = np.asarray(layers_l, dtype=float)
    ratios = np.asarray(ratios, dtype=float)
    if_per_site = np.asarray(if_per_site, dtype=float)
    if half_crossing is None:
        hits = layers_l[ratios >= 0.5]
        half_crossing = int(hits[0]) if hits.size else None

    out = {"half_crossing": half_crossing, "layers": int(layers_l.size)}
    lstar = None
    try:
        logistic = fit_logistic(layers_l, ratios)
        lstar = logistic.lstar
        out["logistic"] = logistic.to_dict()
    except FitError as exc:
        log.warning("N=%d logistic fit failed: %s", n, exc)
        out["logistic"] = None
        out["logistic_error"] = str(exc)
    out["lstar"] = lstar

    # Layer count used for the MPS initializer: L* rounded into the computed range.
    if lstar is not None and math.isfinite(lstar):
        chosen, source = int(min(max(round(lstar), 1), layers_l.size)), "lstar"
    elif half_crossing is not None:
        chosen, source = half_crossing, "half_crossing"
    else:
        chosen, source = int(layers_l.size), "all_layers"
    out["lstar_layer"], out["lstar_layer_source"] = chosen, source
    at = np.nonzero(layers_l == chosen)[0]
    out["if_per_site_at_lstar"] = float(if_per_site[at[0]]) if at.size else None

    out["tail"], out["delta_L"] = None, None
    try:
        win, source = auto_tail_window(layers_l, lstar, window)
        tail = fit_tail(layers_l, if_per_site, win, source=source)
        out["tail"] = tail.to_dict()
        try:
            out["delta_L"] = predict_delta_L(tail, n, eps)
        except ValueError as exc:
            log.warning("N=%d extra-layer estimate unavailable: %s", n, exc)
    except FitError as exc:
        log.warning("N=%d tail fit skipped: %s", n, exc)
        out["tail_error"] = str(exc)
    return out


def run_encode_stage(cfg: ScanConfig, n: int, hz: float, progress: bool = False) -> dict:
    spec = HamiltonianSpec(n=n, j=cfg.j, hz=hz)
    pdir = point_dir(cfg, n, hz)
    mps, _ = load_mps(_require(pdir / "dmrg" / "mps.npz", "dmrg"))
    psi0 = mps_to_statevector(mps)
    reference = _reference(cfg, spec)
    window = cfg.encoder.tail_window(n)

    if cfg.encoder.lmax == "auto":
        lmax, stop = 4 * n, auto_stop(n)
        if cfg.encoder.extend_to_tail_window and window is not None:
            lmax, stop = max(lmax, window[1]), None
    else:
        lmax, stop = int(cfg.encoder.lmax), None

    layers, diag = run_disentangler(psi0, lmax, reference.ground_space,
                                    threshold=cfg.encoder.schmidt_threshold, stop=stop, progress=progress)
    analysis = analyse_encoding(diag.layers(), diag.ratios(), [r.if_per_site for r in diag.records],
                                n, window, cfg.pite.eps, half_crossing=half_rank_crossing(diag))
    enc = encoder_circuit(layers, analysis["lstar_layer"], n)
    summary = {
        "n": n, "hz": hz, "chi_max": chi_max(n),
        "threshold": cfg.encoder.schmidt_threshold,
        "lstar_sensitivity": lstar_sensitivity(diag),
        "G_enc": two_qubit_count(enc),
        "D_enc": dag_depth(enc),
        "final_F": diag.records[-1].fidelity,
        **analysis,
    }
    files = [
        save_layers(pdir / "encode" / "layers.npz", layers, n, seed=cfg.seed, hz=hz),
        artifacts.write_csv(pdir / "encode" / "diagnostics.csv", DIAGNOSTIC_COLUMNS, diag.rows()),
        artifacts.write_json(pdir / "encode" / "summary.json", summary),
    ]
    _record_stage(cfg, pdir, "encode", files)
    log.info("%s encode: %d layers, L*=%s, half-rank crossing at %s",
             point_key(n, hz), len(layers), analysis["lstar"], analysis["half_crossing"])
    return summary


def run_fit(cfg: ScanConfig, n: int, hz: float, window=None) -> dict:
    """Refit a finished encode stage from diagnostics.csv; layers are not recomputed."""
    pdir = point_dir(cfg, n, hz)
    rows = artifacts.read_csv(_require(pdir / "encode" / "diagnostics.csv", "encode"))
    if not rows:
        raise MissingInputError(f"{pdir / 'encode' / 'diagnostics.csv'} holds no layers")
    window = tuple(window) if window else cfg.encoder.tail_window(n)
    analysis = analyse_encoding([r["l"] for r in rows], [r["chi_ratio"] for r in rows],
                                [r["IF_per_site"] for r in rows], n, window, cfg.pite.eps)
    artifacts.write_json(pdir / "encode" / "fit.json", {"n": n, "hz": hz, "window": window, **analysis})
    return analysis


# -------------------------------
# Stage: PITE
# -------------------------------

def initial_state(name: str, n: int, pdir: Path, reference) -> np.ndarray:
    if name == "neel":
        return neel_state(n)
    if name == "exact":
        return np.asarray(reference.ground, dtype=np.complex128)
    layers, _ = load_layers(_require(pdir / "encode" / "layers.npz", "encode"))
    enc = artifacts.read_json(_require(pdir / "encode" / "summary.json", "encode"))
    return encode_state(layers, enc["lstar_layer"], n)


def run_pite_stage(cfg: ScanConfig, n: int, hz: float, progress: bool = False) -> list:
    spec = HamiltonianSpec(n=n, j=cfg.j, hz=hz)
    pdir = point_dir(cfg, n, hz)
    dmrg_summary = artifacts.read_json(_require(pdir / "dmrg" / "summary.json", "dmrg"))
    mps, _ = load_mps(_require(pdir / "dmrg" / "mps.npz", "dmrg"))
    psi_dmrg = mps_to_statevector(mps)
    reference = _reference(cfg, spec)
    hamiltonian = build_hamiltonian(spec)
    split = split_terms(spec)

    files, summaries = [], []
    for name in cfg.initializers:
        init = initial_state(name, n, pdir, reference)
        w0 = w0_ref(psi_dmrg, init)
        if w0 > W0_CEILING:
            log.info("%s %s: w0_ref=%.15f capped at %.12f", point_key(n, hz), name, w0, W0_CEILING)
            w0 = W0_CEILING
        schedule = make_schedule(dmrg_summary["energy"], reference.gap, w0, cfg.pite.eps,
                                 cfg.pite.m0, cfg.pite.dtau_min_ratio, cfg.pite.r_cap)
        for backend in cfg.backends:
            traj = run_trajectory(init, schedule, backend, reference, hamiltonian, split,
                                  initializer=name, metric=cfg.pite.trotter_metric,
                                  tol=cfg.numerics.krylov_tol, progress=progress)
            cross = crossing_metrics(traj)
            exact_factor, cos2 = filter_product(reference.gap, traj.schedule)
            sub = pdir / "pite" / f"{name}_{backend}"
            rows = [(r.k, r.dtau, r.r, r.cap_hit, r.p, r.p_cum, r.infidelity, r.delta_e, r.depth, r.depth_cum)
                    for r in traj.records]
            summary = {
                "n": n, "hz": hz, "initializer": name, "backend": backend,
                "metric": cfg.pite.trotter_metric,
                "reached": cross.reached, "k_chem": cross.k_chem, "d_raw": cross.d_raw,
                "d_post": cross.d_post, "p_cum": cross.p_cum, "target": cross.target,
                "k_safe": schedule.k_safe, "k_safe_clamped": schedule.k_safe_clamped,
                "steps_run": len(traj.records) - 1,
                "w0_ref": w0,
                "final_delta_e": traj.final.delta_e,
                "final_infidelity": traj.final.infidelity,
                "cap_hits": sum(r.cap_hit for r in traj.records),
                "filter_product": {"exact": exact_factor, "cos2": cos2},
                "depth_convention": traj.depth_convention,
            }
            files += [
                artifacts.write_csv(sub / "trajectory.csv", TRAJECTORY_COLUMNS, rows),
                artifacts.write_json(sub / "schedule.json", traj.schedule.to_dict()),
                artifacts.write_json(sub / "summary.json", summary),
            ]
            summaries.append(summary)
            log.info("%s pite %s/%s: dE=%.3e after %d steps, P_cum=%.4f, D_raw=%.1f",
                     point_key(n, hz), name, backend, traj.final.delta_e, summary["steps_run"],
                     traj.final.p_cum, cross.d_raw)
    _record_stage(cfg, pdir, "pite", files)
    return summaries


# -------------------------------
# Scan
# -------------------------------

def point_is_current(cfg: ScanConfig, n: int, hz: float) -> bool:
    pdir = point_dir(cfg, n, hz)
    status = _read_status(pdir)
    return (status.get("status") == "done"
            and status.get("config_digest") == config_digest(cfg)
            and artifacts.verify_checksums(pdir, status.get("checksums", {})))


def run_point(cfg: ScanConfig, n: int, hz: float, progress: bool = False) -> tuple[str, str, Optional[str]]:
    """All three stages for one point; failures are recorded, never raised."""
    key = point_key(n, hz)
    if point_is_current(cfg, n, hz):
        log.info("[SKIP] %s (already complete, checksums verified)", key)
        return key, "skipped", None
    try:
        run_dmrg_stage(cfg, n, hz, progress)
        run_encode_stage(cfg, n, hz, progress)
        run_pite_stage(cfg, n, hz, progress)
        return key, "done", None
    except Exception as exc:  # noqa: BLE001 - one bad point must not stop the scan
        log.error("%s failed: %s: %s", key, type(exc).__name__, exc)
        pdir = point_dir(cfg, n, hz)
        status = _read_status(pdir)
        status.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        artifacts.write_json(pdir / "status.json", status)
        return key, "failed", str(exc)


def _run_point_task(config_json: str, n: int, hz: float):
    return run_point(ScanConfig.from_json(config_json), n, hz, progress=False)


def run_scan(cfg: ScanConfig, progress: bool = False) -> dict:
    """Every (N, h_z) point, then aggregation over the survivors. Returns key -> outcome."""
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    points = cfg.points()
    outcomes = {}
    if cfg.workers > 1 and len(points) > 1:
        payload = cfg.to_json()
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_run_point_task, payload, n, hz) for n, hz in points]
            for fut in tqdm(as_completed(futures), total=len(futures), desc="scan", disable=not progress):
                key, outcome, _ = fut.result()
                outcomes[key] = outcome
    else:
        for n, hz in tqdm(points, desc="scan", disable=not progress):
            key, outcome, _ = run_point(cfg, n, hz, progress)
            outcomes[key] = outcome
    aggregate(cfg.output_dir)
    write_manifest(cfg)
    failed = sorted(k for k, v in outcomes.items() if v == "failed")
    if failed:
        log.warning("%d of %d points failed: %s", len(failed), len(points), ", ".join(failed))
    return outcomes


# -------------------------------
# Command line
# -------------------------------

def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _int_or_keyword(keyword: str):
    def parse(text: str):
        return text if text == keyword else int(text)
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gsprep",
        description="DMRG -> MPS encoder -> scheduled PITE for the staggered-field Heisenberg chain.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings only, no progress bars")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="ScanConfig JSON file")
    common.add_argument("--output-dir", type=Path, help="result tree root (default: results)")
    common.add_argument("--seed", type=int)
    common.add_argument("--j", type=float, help="exchange coupling J")
    common.add_argument("--chi", type=_int_or_keyword("N"), help="DMRG bond cap, or N")
    common.add_argument("--sweeps", type=int)
    common.add_argument("--lmax", type=_int_or_keyword("auto"), help="encoder layers, or auto")
    common.add_argument("--schmidt-threshold", type=float)
    common.add_argument("--extend-to-tail-window", action="store_true", default=None)
    common.add_argument("--m0", type=float)
    common.add_argument("--eps", type=float)
    common.add_argument("--r-cap", type=int)
    common.add_argument("--trotter-metric", choices=("norm", "infidelity"))
    common.add_argument("--initializers", type=_str_list, help="comma list of mps,neel,exact")
    common.add_argument("--backends", type=_str_list, help="comma list of trotter,exact-filter")

    point = argparse.ArgumentParser(add_help=False)
    point.add_argument("--n", type=int, required=True, help="chain length")
    point.add_argument("--hz", type=float, required=True, help="staggered field amplitude")

    sub.add_parser("dmrg", parents=[common, point], help="ground-state MPS by two-site DMRG")
    sub.add_parser("encode", parents=[common, point], help="sequential encoder and Schmidt diagnostics")
    sub.add_parser("pite", parents=[common, point], help="PITE trajectories from each initializer")
    p_fit = sub.add_parser("fit", parents=[common, point], help="refit logistic and tail of one point")
    p_fit.add_argument("--window", type=int, nargs=2, metavar=("LO", "HI"), help="tail-fit layer window")
    p_scan = sub.add_parser("scan", parents=[common], help="run every point, then aggregate")
    p_scan.add_argument("--n-values", type=_int_list, help="comma list of N")
    p_scan.add_argument("--hz-values", type=_float_list, help="comma list of h_z")
    p_scan.add_argument("--workers", type=int, help="worker processes (default: $GSPREP_WORKERS or 1)")
    p_rep = sub.add_parser("report", help="scaling summary from aggregates")
    p_rep.add_argument("--output-dir", type=Path, default=Path("results"))
    p_rep.add_argument("--reaggregate", action="store_true", help="rebuild aggregate/ first")
    return parser


def overrides_from_args(args) -> dict:
    get = lambda name: getattr(args, name, None)  # noqa: E731
    over = {
        "output_dir": str(args.output_dir) if get("output_dir") else None,
        "seed": get("seed"),
        "j": get("j"),
        "initializers": get("initializers"),
        "backends": get("backends"),
        "workers": get("workers"),
        "dmrg": {"chi": get("chi"), "sweeps": get("sweeps")},
        "encoder": {"lmax": get("lmax"), "schmidt_threshold": get("schmidt_threshold"),
                    "extend_to_tail_window": get("extend_to_tail_window")},
        "pite": {"m0": get("m0"), "eps": get("eps"), "r_cap": get("r_cap"),
                 "trotter_metric": get("trotter_metric")},
    }
    if get("n") is not None:
        over["n_values"] = [args.n]
        over["hz_values"] = [args.hz]
    else:
        over["n_values"] = get("n_values")
        over["hz_values"] = get("hz_values")
    return over


def _report_validation(exc: ValidationError) -> None:
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        log.error("%s: %s", path, err["msg"])


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose, args.quiet)
    progress = not args.quiet and sys.stderr.isatty()

    try:
        if args.command == "report":
            if args.reaggregate:
                aggregate(args.output_dir)
            build_report(args.output_dir)
            log.info("report written to %s", Path(args.output_dir) / "report")
            return EXIT_OK

        cfg = ScanConfig.load(args.config, overrides_from_args(args))

        if args.command == "scan":
            outcomes = run_scan(cfg, progress)
            return EXIT_POINTS if "failed" in outcomes.values() else EXIT_OK

        n, hz = args.n, args.hz
        if args.command == "dmrg":
            run_dmrg_stage(cfg, n, hz, progress)
        elif args.command == "encode":
            run_encode_stage(cfg, n, hz, progress)
        elif args.command == "pite":
            run_pite_stage(cfg, n, hz, progress)
        elif args.command == "fit":
            run_fit(cfg, n, hz, args.window)
        write_manifest(cfg)
        return EXIT_OK
    except ValidationError as exc:
        _report_validation(exc)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error: %s", exc)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
