"""One-call FDFD runs: assemble, solve and wrap the result as a field."""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .assembly import PmlProfile, StencilVariant, assemble, build_rhs
from .dispersion import WeightTable
from .linsolve import SolverConfig, SolveStats, solve
from .model import ComplexField, SourceSpec, VelocityModel

__all__ = ["SimulationConfig", "SimulationResult", "run_fdfd", "config_hash"]


@dataclass(frozen=True)
class SimulationConfig:
    freq: float
    source: SourceSpec
    variant: str = "GA"
    npml: int = 12
    r_coeff: float = 1e-3
    mass_mode: str = "heterogeneous_kappa"
    source_scaling: str = "nodal"
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if not self.freq > 0:
            raise ValueError("frequency must be positive")
        canon = {t.lower(): t for t in StencilVariant.TAGS}.get(str(self.variant).lower())
        if canon is None:
            raise ValueError(f"unknown stencil variant {self.variant!r}")
        object.__setattr__(self, "variant", canon)

    @property
    def pml(self) -> PmlProfile:
        return PmlProfile(self.npml, self.r_coeff)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["source"] = {
            "position": list(self.source.position),
            "amplitude": [self.source.amplitude.real, self.source.amplitude.imag],
        }
        return d


def config_hash(payload: dict) -> str:
    """SHA-256 of the canonical JSON form of ``payload``."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class SimulationResult:
    field: ComplexField
    stats: SolveStats
    assembly_time: float
    nnz: int


def run_fdfd(model: VelocityModel, cfg: SimulationConfig, table: WeightTable | None = None) -> SimulationResult:
    """Assemble the impedance matrix for ``cfg.variant`` and solve for the source."""
    variant = StencilVariant.from_tag(cfg.variant, table=table)
    t0 = time.perf_counter()
    A = assemble(model, cfg.freq, cfg.pml, variant, cfg.mass_mode)
    rhs = build_rhs(model, cfg.source, cfg.npml, cfg.freq, cfg.source_scaling)
    t_asm = time.perf_counter() - t0
    x, stats = solve(A, rhs, cfg.solver)
    shape = tuple(n + 2 * cfg.npml for n in model.shape)
    meta = {"variant": cfg.variant, "mass_mode": cfg.mass_mode, "source_scaling": cfg.source_scaling}
    fld = ComplexField(x.reshape(shape), model.h, cfg.npml, cfg.freq, meta)
    return SimulationResult(fld, stats, t_asm, int(A.nnz))
