"""Heterogeneous media: FDFD stencils against the convergent Born series.

    python demos/03_heterogeneous_benchmarks.py [gradient|salt] [scale]

``gradient``: wavespeed rising linearly 1500 -> 4500 m/s along y, so the
local sampling G spans 4..12 cells per wavelength.  ``salt``: a lobed
4482 m/s body in a 1500 m/s background.  ``scale`` shrinks the grids
(default 0.5; 1.0 matches the acceptance suite and takes tens of minutes).
"""
import sys
import time

from helmholtz27.linsolve import SolverConfig
from helmholtz27.metrics import error_metric
from helmholtz27.model import ComplexField, SourceSpec, linear_gradient_model, salt_body_model
from helmholtz27.reference import CbsConfig, cbs_solve
from helmholtz27.simulation import SimulationConfig, run_fdfd

kind = sys.argv[1] if len(sys.argv) > 1 else "gradient"
scale = float(sys.argv[2]) if len(sys.argv) > 2 else 0.5
h, f = 50.0, 7.5

if kind == "gradient":
    nx, ny = int(32 * scale), int(96 * scale)
    model = linear_gradient_model((nx, ny, nx), h, 1500.0, 4500.0, axis=1)
    src = SourceSpec((nx // 2 * h, ny // 2 * h, nx // 2 * h))
    tags = ("G4", "Gm", "GA")
else:
    n = int(48 * scale)
    model = salt_body_model((n, n, n), h)
    src = SourceSpec((n // 6 * h, n // 2 * h, n // 2 * h))
    tags = ("Gm", "GA", "GAm")

g = model.c / (f * h)
print(f"{kind}: {model.shape}, local G from {g.min():.1f} to {g.max():.1f}")

t0 = time.perf_counter()
cbs = cbs_solve(model, f, src, CbsConfig(tol=1e-10, pad_wavelengths=2))
print(f"CBS oracle: {cbs.iterations} iterations, backward error {cbs.backward_error:.1e}, "
      f"{time.perf_counter() - t0:.0f} s")

# Jacobi-scaled GMRES needs a long restart here: the well-sampled fast
# region makes the operator Laplacian-like and GMRES(30) stalls.
solver = SolverConfig("gmres", 1e-6, max_iter=20000, restart=100)
for tag in tags:
    t0 = time.perf_counter()
    res = run_fdfd(model, SimulationConfig(f, src, tag, solver=solver))
    rep = error_metric(cbs.field, ComplexField(res.field.interior(), h, 0, f), src)
    print(f"{tag:>3}: err {rep.err:.4f}  ({res.stats.iterations} iterations, "
          f"{time.perf_counter() - t0:.0f} s)")
