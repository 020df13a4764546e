import math

import numpy as np
import pytest

from artifacts import read_csv, write_json
from encoder import DIAGNOSTIC_COLUMNS
from gsprep import TRAJECTORY_COLUMNS
from report import (
    LSTAR_COLUMNS,
    PITE_COLUMNS,
    PLOT_MAPPING,
    POWERLAW_COLUMNS,
    REFERENCE_EXPONENTS,
    SUMMARY_COLUMNS,
    aggregate,
    build_report,
    gapless_steeper,
)

NS = (8, 10, 12, 14)


def _plant(root, hz, n, d_raw):
    pdir = root / "points" / f"N{n}_hz{hz!r}"
    write_json(pdir / "encode" / "summary.json", {
        "n": n, "hz": hz, "lstar": 2.0 * n, "half_crossing": 2 * n, "if_per_site_at_lstar": 1e-3,
        "lstar_layer": 2 * n, "layers": 8 * n,
        "tail": {"C": 0.0, "A": 1e-3, "k": 3.0 * n ** -5.0, "window": [10, 20], "source": "table",
                 "residual": 0.0, "active": ["C"]},
        "delta_L": 12.5,
    })
    write_json(pdir / "pite" / "mps_trotter" / "summary.json", {
        "n": n, "hz": hz, "initializer": "mps", "backend": "trotter", "reached": True,
        "k_chem": 5.0, "d_raw": d_raw, "d_post": 2 * d_raw, "p_cum": 0.5, "k_safe": 20,
        "w0_ref": 0.9, "final_delta_e": 1e-5, "cap_hits": 0,
    })
    write_json(pdir / "pite" / "neel_trotter" / "summary.json", {
        "n": n, "hz": hz, "initializer": "neel", "backend": "trotter", "reached": True,
        "k_chem": 9.0, "d_raw": 7 * d_raw * n, "d_post": 9 * d_raw * n, "p_cum": 0.2, "k_safe": 30,
        "w0_ref": 0.3, "final_delta_e": 1e-5, "cap_hits": 1,
    })


@pytest.fixture
def planted(tmp_path):
    for n in NS:
        _plant(tmp_path, 0.0, n, 10.0 * n ** 3)
        _plant(tmp_path, 0.5, n, 40.0 * n ** 1.5)
    return tmp_path


def test_aggregate_tables(planted):
    tables = aggregate(planted)
    assert len(tables["lstar"]) == 8
    assert len(tables["pite"]) == 16
    assert {row[0] for row in tables["linear"]} == {0.0, 0.5}
    assert all(row[1] == pytest.approx(2.0) for row in tables["linear"])
    assert tables["k_scaling"]["0.0"]["slope"] == pytest.approx(-5.0)
    rows = read_csv(planted / "aggregate" / "tail_fits.csv")
    assert rows[0]["active"] == "C"
    assert (planted / "aggregate" / "powerlaw.csv").exists()


def test_report_recovers_planted_exponents(planted):
    aggregate(planted)
    summary = build_report(planted)
    rows = {r["row"]: r for r in summary["scaling_summary"]}
    assert rows["encoder_to_lstar"]["fitted_exponent"] == pytest.approx(1.0)
    assert rows["encoder_tail"]["fitted_exponent"] == pytest.approx(5.0)
    assert rows["pite_gapless"]["fitted_exponent"] == pytest.approx(3.0)
    assert rows["pite_gapped"]["fitted_exponent"] == pytest.approx(1.5)
    assert rows["pite_gapless"]["quantity"] == "D_raw[mps,trotter]"
    for name, ref in REFERENCE_EXPONENTS.items():
        assert rows[name]["reference_exponent"] == ref
    assert gapless_steeper(summary)
    assert summary["warnings"] == []
    assert (planted / "report" / "summary.txt").read_text().startswith("Circuit-depth scaling summary")


def test_empty_tree_gives_valid_report(tmp_path, caplog):
    aggregate(tmp_path)
    summary = build_report(tmp_path / "elsewhere")
    assert summary["warnings"]
    assert all(math.isnan(r["fitted_exponent"]) for r in summary["scaling_summary"])
    assert not gapless_steeper(summary)
    rows = read_csv(tmp_path / "elsewhere" / "report" / "scaling_summary.csv")
    assert [r["row"] for r in rows] == list(REFERENCE_EXPONENTS)
    assert "aggregates will be empty" in caplog.text


def test_unreached_trajectories_are_left_out_of_power_laws(planted):
    write_json(planted / "points" / "N16_hz0.0" / "pite" / "mps_trotter" / "summary.json", {
        "n": 16, "hz": 0.0, "initializer": "mps", "backend": "trotter", "reached": False,
        "k_chem": 20.0, "d_raw": 1.0, "d_post": 1.0, "p_cum": 0.1, "k_safe": 20,
        "w0_ref": 0.9, "final_delta_e": 1e-2, "cap_hits": 0,
    })
    tables = aggregate(planted)
    row = next(r for r in tables["powerlaw"] if r[:4] == (0.0, "mps", "trotter", "D_raw"))
    assert row[5] == pytest.approx(3.0)
    assert row[-1] == len(NS)
    assert np.isfinite(row[6])


def test_plot_mapping_names_existing_columns(planted):
    columns = {
        "diagnostics.csv": DIAGNOSTIC_COLUMNS,
        "trajectory.csv": TRAJECTORY_COLUMNS,
        "lstar_vs_N.csv": LSTAR_COLUMNS,
        "pite_vs_N.csv": PITE_COLUMNS,
        "powerlaw.csv": POWERLAW_COLUMNS,
        "scaling_summary.csv": SUMMARY_COLUMNS,
    }
    aggregate(planted)
    summary = build_report(planted)
    assert summary["plot_mapping"] == PLOT_MAPPING
    for name, entry in PLOT_MAPPING.items():
        first = columns[entry["files"][0].rsplit("/", 1)[-1]]
        assert all(col in first for col in entry["y"]), name
        assert entry["x"] is None or entry["x"] in first, name
