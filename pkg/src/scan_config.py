"""
Scan configuration and run manifest.

A ScanConfig is a frozen pydantic model stored as JSON. CLI flags are
merged into the raw document before validation so that error paths name
the merged fields.
"""

from __future__ import annotations

import os
import platform
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import scipy
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

import artifacts
from numerics import KRYLOV_TOL, LANCZOS_TOL

WORKERS_ENV = "GSPREP_WORKERS"

# N -> (l_lo, l_hi), inclusive layer windows for the tail fit.
DEFAULT_TAIL_WINDOWS = {
    8: (20, 100),
    10: (50, 250),
    12: (200, 900),
    14: (100, 400),
    16: (1100, 1800),
    18: (200, 400),
    20: (1100, 1800),
}

INITIALIZERS = ("mps", "neel", "exact")


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class DmrgSection(_Section):
    chi: Union[Literal["N"], int] = "N"
    sweeps: int = Field(default=30, ge=1)
    e_tol: float = Field(default=1e-10, gt=0)
    lanczos_dim: int = Field(default=32, ge=4)

    @field_validator("chi")
    @classmethod
    def _positive_chi(cls, v):
        if isinstance(v, int) and v < 1:
            raise ValueError("chi must be 'N' or a positive integer")
        return v

    def chi_for(self, n: int) -> int:
        return n if self.chi == "N" else int(self.chi)


class EncoderSection(_Section):
    lmax: Union[Literal["auto"], int] = "auto"
    schmidt_threshold: float = Field(default=1e-10, gt=0, lt=1)
    tail_windows: dict[int, tuple[int, int]] = Field(default_factory=lambda: dict(DEFAULT_TAIL_WINDOWS))
    extend_to_tail_window: bool = False

    @field_validator("lmax")
    @classmethod
    def _positive_lmax(cls, v):
        if isinstance(v, int) and v < 1:
            raise ValueError("lmax must be 'auto' or >= 1")
        return v

    @field_validator("tail_windows")
    @classmethod
    def _ordered_windows(cls, v):
        for n, (lo, hi) in v.items():
            if not 0 <= lo < hi:
                raise ValueError(f"tail window for N={n} must satisfy 0 <= lo < hi, got ({lo}, {hi})")
        return v

    def tail_window(self, n: int) -> Optional[tuple[int, int]]:
        return self.tail_windows.get(n)


class PiteSection(_Section):
    m0: float = Field(default=0.999, gt=0, lt=1)
    eps: float = Field(default=1e-6, gt=0, lt=1)
    dtau_min_ratio: float = Field(default=1 / 50, gt=0, le=1)
    r_cap: int = Field(default=1024, ge=1)
    trotter_metric: Literal["norm", "infidelity"] = "norm"


class NumericsSection(_Section):
    lanczos_tol: float = Field(default=LANCZOS_TOL, gt=0)
    krylov_tol: float = Field(default=KRYLOV_TOL, gt=0)


def _env_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


class ScanConfig(_Section):
    n_values: list[int] = Field(default_factory=lambda: [8, 10, 12])
    hz_values: list[float] = Field(default_factory=lambda: [0.0, 0.5])
    j: float = Field(default=1.0, gt=0)
    initializers: list[Literal["mps", "neel", "exact"]] = Field(default_factory=lambda: ["mps", "neel"])
    backends: list[Literal["trotter", "exact-filter"]] = Field(default_factory=lambda: ["trotter"])
    dmrg: DmrgSection = Field(default_factory=DmrgSection)
    encoder: EncoderSection = Field(default_factory=EncoderSection)
    pite: PiteSection = Field(default_factory=PiteSection)
    numerics: NumericsSection = Field(default_factory=NumericsSection)
    seed: int = 1234
    output_dir: Path = Path("results")
    workers: int = Field(default_factory=_env_workers, ge=1)

    @field_validator("n_values")
    @classmethod
    def _chain_lengths(cls, v):
        if not v:
            raise ValueError("n_values must not be empty")
        for n in v:
            if not 2 <= n <= 20:
                raise ValueError(f"N must be in [2, 20], got {n}")
        return sorted(set(v))

    @field_validator("hz_values")
    @classmethod
    def _fields(cls, v):
        if not v:
            raise ValueError("hz_values must not be empty")
        if any(h < 0 for h in v):
            raise ValueError("h_z values must be >= 0")
        return sorted(set(v))

    @model_validator(mode="after")
    def _lists_nonempty(self):
        if not self.initializers or not self.backends:
            raise ValueError("initializers and backends must not be empty")
        return self

    def points(self) -> list[tuple[int, float]]:
        return [(n, hz) for n in self.n_values for hz in self.hz_values]

    def to_json(self) -> str:
        return artifacts.dumps_json(self.model_dump(mode="json"))

    @classmethod
    def from_json(cls, text: str) -> "ScanConfig":
        return cls.model_validate_json(text)

    @classmethod
    def load(cls, path: Path, overrides: Optional[dict] = None) -> "ScanConfig":
        raw = artifacts.read_json(path) if path is not None else {}
        return cls.model_validate(merge(raw, overrides or {}))


def merge(base: dict, overrides: dict) -> dict:
    """Recursive dict merge; override values that are None are ignored."""
    out = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict):
            out[key] = merge(out.get(key) or {}, value)
        else:
            out[key] = value
    return out


def point_key(n: int, hz: float) -> str:
    return f"N{n}_hz{hz!r}"


def decided_defaults() -> dict:
    """Choices not fixed by the method description, recorded in every manifest."""
    return {
        "depth_convention": "convention-D1",
        "bit_convention": "site1=MSB",
        "controlled_gate_form": "Z_a x P (effective Z_a H interaction)",
        "theta_eff": "kappa*Theta + s*dtau*E_shift",
        "dtau_min_rule": "dtau_max * dtau_min_ratio",
        "trotter_budget": "proportional to dtau^3",
        "lmax_rule": "min(4N, 3 * half-rank crossing), floor 6",
        "exact_filter_reps": 1,
    }


class RunManifest(_Section):
    config: dict
    versions: dict
    decided_defaults: dict
    points: dict = Field(default_factory=dict)
    format_version: int = artifacts.FORMAT_VERSION

    @classmethod
    def create(cls, config: ScanConfig) -> "RunManifest":
        return cls(
            config=config.model_dump(mode="json"),
            versions={
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            decided_defaults=decided_defaults(),
        )

    def with_points(self, points: dict) -> "RunManifest":
        return self.model_copy(update={"points": dict(points)})

    def write(self, path: Path) -> Path:
        return artifacts.write_json(path, self.model_dump(mode="json"))
