"""
Aggregation over a result tree and the scaling summary.

aggregate() reads the per-point summaries and writes the tables under
aggregate/; build_report() turns those tables into report/.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from pathlib import Path

import numpy as np

from artifacts import read_csv, read_json, write_csv, write_json
from fits import FitError, fit_linear, fit_powerlaw, k_scaling

log = logging.getLogger(__name__)

LSTAR_COLUMNS = ("hz", "N", "lstar", "half_crossing", "IF_per_site_at_lstar", "lstar_layer", "layers")
LINEAR_COLUMNS = ("hz", "slope", "intercept", "r2", "n_points")
TAIL_COLUMNS = ("hz", "N", "C", "A", "k", "l_lo", "l_hi", "source", "residual", "active", "delta_L")
PITE_COLUMNS = ("hz", "N", "initializer", "backend", "reached", "k_chem", "D_raw", "D_post",
                "P_cum", "K_safe", "w0_ref", "final_delta_e", "cap_hits")
POWERLAW_COLUMNS = ("hz", "initializer", "backend", "quantity", "alpha", "beta", "stderr",
                    "r2_log", "n_points")
SUMMARY_COLUMNS = ("row", "hz", "quantity", "fitted_exponent", "stderr", "reference_exponent",
                   "n_points")

# Depth-scaling exponents the measured rows are compared against.
REFERENCE_EXPONENTS = {
    "encoder_to_lstar": 1.0,
    "encoder_tail": 5.0,
    "pite_gapless": 3.0,
    "pite_gapped": 1.5,
}

# Plot-ready sources: file globs relative to the result root, the x column
# and the y columns of the first file (None for tables without an axis).
PLOT_MAPPING = {
    "rank_growth_and_fidelity": {"files": ["points/*/encode/diagnostics.csv"],
                                 "x": "l", "y": ["IF_per_site", "chi_ratio"]},
    "lstar_vs_N": {"files": ["aggregate/lstar_vs_N.csv"],
                   "x": "N", "y": ["lstar", "IF_per_site_at_lstar"]},
    "tail_barrier": {"files": ["points/*/encode/diagnostics.csv", "aggregate/tail_fits.csv"],
                     "x": "l", "y": ["IF_per_site"]},
    "pite_trajectories": {"files": ["points/*/pite/*/trajectory.csv"],
                          "x": "D_cum", "y": ["infidelity", "delta_E", "P_cum"]},
    "pite_cost_vs_N": {"files": ["aggregate/pite_vs_N.csv"],
                       "x": "N", "y": ["D_raw", "D_post", "P_cum"]},
    "powerlaw_table": {"files": ["aggregate/powerlaw.csv"],
                       "x": None, "y": ["alpha", "beta", "stderr"]},
    "scaling_summary": {"files": ["report/scaling_summary.csv"],
                        "x": None, "y": ["fitted_exponent", "reference_exponent"]},
}


def _point_dirs(root: Path):
    points = Path(root) / "points"
    if not points.is_dir():
        return []
    return sorted(p for p in points.iterdir() if p.is_dir())


def _finite(x) -> bool:
    return isinstance(x, (int, float)) and math.isfinite(x)


# -------------------------------
# Aggregation
# -------------------------------

def collect(root: Path) -> tuple[list, list]:
    """Encode and PITE summaries of every point that has them."""
    encodes, pites = [], []
    for pdir in _point_dirs(root):
        enc = pdir / "encode" / "summary.json"
        if enc.exists():
            encodes.append(read_json(enc))
        for summary in sorted((pdir / "pite").glob("*/summary.json")):
            pites.append(read_json(summary))
    return encodes, pites


def _powerlaw_row(keys, quantity, ns, ys):
    pairs = [(n, y) for n, y in zip(ns, ys) if _finite(y) and y > 0]
    if len(pairs) < 2:
        return None
    try:
        fit = fit_powerlaw(*zip(*pairs))
    except (FitError, ValueError) as exc:
        log.warning("power-law fit %s %s skipped: %s", keys, quantity, exc)
        return None
    return (*keys, quantity, fit.alpha, fit.beta, fit.stderr, fit.r2_log, fit.n_points)


def aggregate(root: Path) -> dict:
    """Write aggregate/*.csv and k_scaling.json; returns the tables as row lists."""
    root = Path(root)
    out = root / "aggregate"
    encodes, pites = collect(root)
    if not encodes and not pites:
        log.warning("no point summaries under %s; aggregates will be empty", root)

    encodes.sort(key=lambda s: (s["hz"], s["n"]))
    lstar_rows, tail_rows = [], []
    by_hz = defaultdict(list)
    for s in encodes:
        lstar_rows.append((s["hz"], s["n"], s.get("lstar"), s.get("half_crossing"),
                           s.get("if_per_site_at_lstar"), s.get("lstar_layer"), s.get("layers")))
        tail = s.get("tail")
        if tail:
            tail_rows.append((s["hz"], s["n"], tail["C"], tail["A"], tail["k"], tail["window"][0],
                              tail["window"][1], tail["source"], tail["residual"],
                              "|".join(tail["active"]), s.get("delta_L")))
        by_hz[s["hz"]].append(s)

    linear_rows, k_json = [], {}
    for hz, group in sorted(by_hz.items()):
        pts = [(s["n"], s["lstar"]) for s in group if _finite(s.get("lstar"))]
        if len(pts) >= 2:
            try:
                fit = fit_linear(*zip(*pts))
                linear_rows.append((hz, fit.slope, fit.intercept, fit.r2, len(pts)))
            except FitError as exc:
                log.warning("L* linear fit at h_z=%g skipped: %s", hz, exc)
        ks = [(s["n"], s["tail"]["k"]) for s in group if s.get("tail")]
        k_json[repr(hz)] = k_scaling(*zip(*ks)) if ks else k_scaling([], [])

    pites.sort(key=lambda s: (s["hz"], s["initializer"], s["backend"], s["n"]))
    pite_rows = [
        (s["hz"], s["n"], s["initializer"], s["backend"], s["reached"], s["k_chem"], s["d_raw"],
         s["d_post"], s["p_cum"], s["k_safe"], s["w0_ref"], s["final_delta_e"], s.get("cap_hits", 0))
        for s in pites
    ]

    powerlaw_rows = []
    series = defaultdict(list)
    for s in pites:
        if s["reached"]:
            series[(s["hz"], s["initializer"], s["backend"])].append(s)
    for keys, group in sorted(series.items()):
        ns = [s["n"] for s in group]
        for quantity, field in (("D_raw", "d_raw"), ("D_post", "d_post")):
            row = _powerlaw_row(keys, quantity, ns, [s[field] for s in group])
            if row:
                powerlaw_rows.append(row)

    write_csv(out / "lstar_vs_N.csv", LSTAR_COLUMNS, lstar_rows)
    write_csv(out / "lstar_linear.csv", LINEAR_COLUMNS, linear_rows)
    write_csv(out / "tail_fits.csv", TAIL_COLUMNS, tail_rows)
    write_csv(out / "pite_vs_N.csv", PITE_COLUMNS, pite_rows)
    write_csv(out / "powerlaw.csv", POWERLAW_COLUMNS, powerlaw_rows)
    write_json(out / "k_scaling.json", k_json)
    log.info("aggregated %d encode and %d PITE summaries", len(encodes), len(pites))
    return {"lstar": lstar_rows, "linear": linear_rows, "tail": tail_rows,
            "pite": pite_rows, "powerlaw": powerlaw_rows, "k_scaling": k_json}


# -------------------------------
# Report
# -------------------------------

def _read_table(path: Path) -> list[dict]:
    return read_csv(path) if path.exists() else []


def _gapless_gapped(hz_values):
    hz_values = sorted(set(hz_values))
    if not hz_values:
        return None, None
    gapless = 0.0 if 0.0 in hz_values else hz_values[0]
    gapped = max(hz_values) if max(hz_values) > 0 else None
    return gapless, gapped


def _pick_pite(powerlaw, hz):
    """Preferred series at h_z: MPS initializer before Neel, Trotter before the exact filter."""
    order = {"mps": 0, "neel": 1, "exact": 2}
    border = {"trotter": 0, "exact-filter": 1}
    rows = [r for r in powerlaw if r["hz"] == hz and r["quantity"] == "D_raw"]
    rows.sort(key=lambda r: (order.get(r["initializer"], 9), border.get(r["backend"], 9)))
    return rows[0] if rows else None


def _empty_row(name, hz=None, quantity=""):
    return (name, hz if hz is not None else math.nan, quantity, math.nan, math.nan,
            REFERENCE_EXPONENTS[name], 0)


def scaling_summary(lstar, tail, powerlaw) -> list:
    """The four scaling rows with fitted exponents beside the reference ones."""
    hz_values = [r["hz"] for r in lstar] + [r["hz"] for r in powerlaw]
    gapless, gapped = _gapless_gapped(hz_values)
    rows = []

    pts = [(r["N"], r["lstar"]) for r in lstar if r["hz"] == gapless and _finite(r["lstar"]) and r["lstar"] > 0]
    if len(pts) >= 2:
        fit = fit_powerlaw(*zip(*pts))
        rows.append(("encoder_to_lstar", gapless, "L*", fit.beta, fit.stderr,
                     REFERENCE_EXPONENTS["encoder_to_lstar"], fit.n_points))
    else:
        rows.append(_empty_row("encoder_to_lstar", gapless, "L*"))

    # k(N) ~ N^-5, so the reported exponent is that of 1/k.
    pts = [(r["N"], 1.0 / r["k"]) for r in tail if r["hz"] == gapless and _finite(r["k"]) and r["k"] > 0]
    if len(pts) >= 2:
        fit = fit_powerlaw(*zip(*pts))
        rows.append(("encoder_tail", gapless, "1/k", fit.beta, fit.stderr,
                     REFERENCE_EXPONENTS["encoder_tail"], fit.n_points))
    else:
        rows.append(_empty_row("encoder_tail", gapless, "1/k"))

    for name, hz in (("pite_gapless", gapless), ("pite_gapped", gapped)):
        row = _pick_pite(powerlaw, hz) if hz is not None else None
        if row:
            rows.append((name, hz, f"D_raw[{row['initializer']},{row['backend']}]", row["beta"],
                         row["stderr"], REFERENCE_EXPONENTS[name], row["n_points"]))
        else:
            rows.append(_empty_row(name, hz, "D_raw"))
    return rows


def _format_text(rows, warnings) -> str:
    lines = ["Circuit-depth scaling summary", ""]
    lines.append(f"{'row':<18} {'h_z':>6} {'quantity':<26} {'fitted':>9} {'stderr':>9} {'reference':>9} {'pts':>4}")
    for name, hz, quantity, beta, stderr, ref, npts in rows:
        lines.append(f"{name:<18} {hz:>6.3g} {quantity:<26} {beta:>9.4g} {stderr:>9.3g} {ref:>9.3g} {npts:>4d}")
    if warnings:
        lines.append("")
        lines.extend(f"warning: {w}" for w in warnings)
    lines.append("")
    lines.append("Delta_eff is taken from Lanczos E1 - E0, not from DMRG.")
    return "\n".join(lines) + "\n"


def build_report(root: Path) -> dict:
    """Write report/scaling_summary.csv, summary.json and summary.txt."""
    root = Path(root)
    agg = root / "aggregate"
    warnings = []
    if not agg.is_dir():
        warnings.append(f"no aggregates under {agg}; report is empty")
        log.warning(warnings[-1])
    lstar = _read_table(agg / "lstar_vs_N.csv")
    tail = _read_table(agg / "tail_fits.csv")
    powerlaw = _read_table(agg / "powerlaw.csv")
    linear = _read_table(agg / "lstar_linear.csv")
    k_json = read_json(agg / "k_scaling.json") if (agg / "k_scaling.json").exists() else {}

    rows = scaling_summary(lstar, tail, powerlaw)
    missing = [r[0] for r in rows if r[6] == 0]
    if missing and agg.is_dir():
        warnings.append(f"not enough points for: {', '.join(missing)}")
        log.warning(warnings[-1])

    out = root / "report"
    write_csv(out / "scaling_summary.csv", SUMMARY_COLUMNS, rows)
    summary = {
        "scaling_summary": [dict(zip(SUMMARY_COLUMNS, r)) for r in rows],
        "lstar_linear": linear,
        "k_scaling": k_json,
        "powerlaw": powerlaw,
        "plot_mapping": PLOT_MAPPING,
        "delta_eff_source": "lanczos_e1",
        "warnings": warnings,
    }
    write_json(out / "summary.json", summary)
    (out / "summary.txt").write_text(_format_text(rows, warnings), encoding="utf-8")
    return summary


def gapless_steeper(summary: dict) -> bool:
    """True when the gapless PITE exponent exceeds the gapped one."""
    rows = {r["row"]: r for r in summary["scaling_summary"]}
    a, b = rows["pite_gapless"]["fitted_exponent"], rows["pite_gapped"]["fitted_exponent"]
    return bool(np.isfinite(a) and np.isfinite(b) and a > b)
