"""Plane-wave dispersion analysis of the mixed-grid 27-point stencil and
estimation of the stencil weights.

Weights come in two groups.  The stiffness weights ``ws1, ws2, ws3``
combine the Cartesian, the three 45-degree rotated and the four
body-diagonal second-order stencils.  The mass weights ``wm0..wm3``
distribute ``omega**2 / kappa`` over the collocation node, its 6 face
neighbours, 12 edge neighbours and 8 corners (class weights, each class
weight is shared evenly by the nodes of its class).  Both groups sum to one.

The optimisation unknowns are ``[ws1, ws2, wm0, wm1/6, wm2/12]``: the
dependent weights ``ws3`` and ``wm3`` are eliminated and the two mass
unknowns are per-node values of their class, which is the scaling the
linearised dispersion coefficients :func:`h_row` are written in.
"""
from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "AngleGrid",
    "WeightVector",
    "WeightTable",
    "DispersionDomainError",
    "RankDeficiencyWarning",
    "abc",
    "normalized_phase_velocity",
    "h_row",
    "solve_weights_single",
    "solve_weights_joint",
    "solve_weights_adaptive",
    "default_lambda",
    "lookup",
    "lookup_indices",
    "g4_weights",
    "gm_weights",
    "default_table",
    "dispersion_curves",
    "write_dispersion_csv",
]

#: Column scaling between optimisation unknowns and class weights.
_UNKNOWN_SCALE = np.array([1.0, 1.0, 1.0, 6.0, 12.0])


class DispersionDomainError(ValueError):
    """Raised when G or the weights fall outside the dispersion formula's domain."""


class RankDeficiencyWarning(UserWarning):
    """Emitted when a least-squares block has fewer than five independent rows."""


@dataclass(frozen=True)
class AngleGrid:
    """Plane-wave propagation directions used by the weight fit.

    ``thetas`` are azimuths in ``[0, pi/2]`` and ``phis`` dips in
    ``[0, pi/4]``, both in radians, strictly increasing.
    """

    thetas: tuple[float, ...]
    phis: tuple[float, ...]

    def __post_init__(self):
        th = np.asarray(self.thetas, dtype=float)
        ph = np.asarray(self.phis, dtype=float)
        if th.size == 0 or ph.size == 0:
            raise ValueError("angle lists must be non-empty")
        if np.any(np.diff(th) <= 0) or np.any(np.diff(ph) <= 0):
            raise ValueError("angle lists must be strictly increasing")
        tol = 1e-12
        if th.min() < -tol or th.max() > np.pi / 2 + tol:
            raise ValueError("thetas must lie in [0, pi/2]")
        if ph.min() < -tol or ph.max() > np.pi / 4 + tol:
            raise ValueError("phis must lie in [0, pi/4]")
        object.__setattr__(self, "thetas", tuple(float(t) for t in th))
        object.__setattr__(self, "phis", tuple(float(p) for p in ph))

    @classmethod
    def from_degrees(cls, thetas: Iterable[float], phis: Iterable[float]) -> "AngleGrid":
        return cls(tuple(np.deg2rad(list(thetas))), tuple(np.deg2rad(list(phis))))

    @classmethod
    def default(cls) -> "AngleGrid":
        """0 to 45 degrees in 10-degree steps for both angles."""
        deg = np.arange(0.0, 45.0 + 1e-9, 10.0)
        return cls.from_degrees(deg, deg)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened (theta, phi) pairs, theta varying fastest."""
        ph, th = np.meshgrid(self.phis, self.thetas, indexing="ij")
        return th.ravel(), ph.ravel()

    @property
    def size(self) -> int:
        return len(self.thetas) * len(self.phis)


@dataclass(frozen=True)
class WeightVector:
    ws1: float
    ws2: float
    ws3: float
    wm0: float
    wm1: float
    wm2: float
    wm3: float

    def __post_init__(self):
        for name in ("ws1", "ws2", "ws3", "wm0", "wm1", "wm2", "wm3"):
            object.__setattr__(self, name, float(getattr(self, name)))
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise ValueError("weights must be finite")
        if abs(self.ws1 + self.ws2 + self.ws3 - 1.0) > 1e-12:
            raise ValueError("stiffness weights must sum to 1")
        if abs(self.wm0 + self.wm1 + self.wm2 + self.wm3 - 1.0) > 1e-12:
            raise ValueError("mass weights must sum to 1")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.ws1, self.ws2, self.ws3, self.wm0, self.wm1, self.wm2, self.wm3]
        )

    @classmethod
    def from_array(cls, w: Sequence[float]) -> "WeightVector":
        return cls(*(float(x) for x in w))

    @classmethod
    def from_unknowns(cls, u: Sequence[float]) -> "WeightVector":
        """Build from the five fit unknowns ``[ws1, ws2, wm0, wm1/6, wm2/12]``."""
        ws1, ws2, wm0, wm1, wm2 = np.asarray(u, dtype=float) * _UNKNOWN_SCALE
        return cls(ws1, ws2, 1.0 - ws1 - ws2, wm0, wm1, wm2, 1.0 - wm0 - wm1 - wm2)

    def unknowns(self) -> np.ndarray:
        return np.array([self.ws1, self.ws2, self.wm0, self.wm1, self.wm2]) / _UNKNOWN_SCALE

    @classmethod
    def classical(cls) -> "WeightVector":
        """Plain 7-point Laplacian with a lumped mass term."""
        return cls(1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0)


def _weights_from_unknowns(u: np.ndarray) -> np.ndarray:
    """Vectorised :meth:`WeightVector.from_unknowns` on an ``(n, 5)`` array."""
    u = np.atleast_2d(u) * _UNKNOWN_SCALE
    ws1, ws2, wm0, wm1, wm2 = u.T
    return np.column_stack(
        [ws1, ws2, 1.0 - ws1 - ws2, wm0, wm1, wm2, 1.0 - wm0 - wm1 - wm2]
    )


@dataclass(frozen=True, eq=False)
class WeightTable:
    """Weights tabulated on a uniform grid of ``1/G``.

    ``rows`` is an ``(n, 7)`` array ordered as
    ``ws1, ws2, ws3, wm0, wm1, wm2, wm3``.
    """

    inv_g_min: float
    inv_g_max: float
    inv_g_step: float
    rows: np.ndarray
    lam: float = 0.0
    angles: AngleGrid = field(default_factory=AngleGrid.default)

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        n = int(round((self.inv_g_max - self.inv_g_min) / self.inv_g_step)) + 1
        if rows.shape != (n, 7):
            raise ValueError(f"expected {n} rows of 7 weights, got {rows.shape}")
        if np.max(np.abs(rows[:, :3].sum(1) - 1.0)) > 1e-12:
            raise ValueError("stiffness weights must sum to 1 in every row")
        if np.max(np.abs(rows[:, 3:].sum(1) - 1.0)) > 1e-12:
            raise ValueError("mass weights must sum to 1 in every row")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    def __len__(self):
        return self.rows.shape[0]

    @property
    def inv_g(self) -> np.ndarray:
        return self.inv_g_min + self.inv_g_step * np.arange(len(self))

    def row(self, i: int) -> WeightVector:
        return WeightVector.from_array(self.rows[i])

    def to_csv(self, path=None, meta: dict | None = None) -> str:
        """Serialise with a ``#`` header; floats use 17 significant digits.

        ``meta`` adds extra ``# key=value`` header lines.
        """
        buf = io.StringIO()
        for key, val in (meta or {}).items():
            buf.write(f"# {key}={val}\n")
        th = ",".join(f"{np.rad2deg(t):.17g}" for t in self.angles.thetas)
        ph = ",".join(f"{np.rad2deg(p):.17g}" for p in self.angles.phis)
        buf.write(f"# inv_g_min={self.inv_g_min:.17g}\n")
        buf.write(f"# inv_g_max={self.inv_g_max:.17g}\n")
        buf.write(f"# inv_g_step={self.inv_g_step:.17g}\n")
        buf.write(f"# lambda={self.lam:.17g}\n")
        buf.write(f"# theta_deg={th}\n")
        buf.write(f"# phi_deg={ph}\n")
        buf.write("inv_g,ws1,ws2,ws3,wm0,wm1,wm2,wm3\n")
        for x, r in zip(self.inv_g, self.rows):
            buf.write(",".join(f"{v:.17g}" for v in (x, *r)) + "\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text) -> "WeightTable":
        text = str(path_or_text)
        if "\n" not in text:
            text = Path(path_or_text).read_text()
        meta = {}
        body = []
        for line in text.splitlines():
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key.strip()] = val.strip()
            elif line.strip() and not line.startswith("inv_g"):
                body.append([float(v) for v in line.split(",")])
        data = np.array(body)
        if data.ndim != 2 or data.shape[1] != 8:
            raise ValueError("weight table needs 8 columns: inv_g and seven weights")
        try:
            angles = AngleGrid.from_degrees(
                [float(v) for v in meta["theta_deg"].split(",")],
                [float(v) for v in meta["phi_deg"].split(",")],
            )
            return cls(
                float(meta["inv_g_min"]),
                float(meta["inv_g_max"]),
                float(meta["inv_g_step"]),
                data[:, 1:],
                float(meta.get("lambda", 0.0)),
                angles,
            )
        except KeyError as exc:
            raise ValueError(f"weight table header lacks {exc}") from exc


def _check_g(G):
    G = np.asarray(G, dtype=float)
    if np.any(~(G > 2.0)):
        raise DispersionDomainError(f"G must exceed 2 (Nyquist); got min {G.min()}")
    return G


def _cosines(G, theta, phi):
    G = _check_g(G)
    kh = 2.0 * np.pi / G
    cx = np.cos(kh * np.cos(phi) * np.cos(theta))
    cy = np.cos(kh * np.cos(phi) * np.sin(theta))
    cz = np.cos(kh * np.sin(phi))
    return cx, cy, cz


def abc(G, theta, phi):
    """Return the cosine products ``(A, B, C)`` for a plane wave.

    ``A`` multiplies the three axis cosines, ``B`` sums their pairwise
    products and ``C`` sums them.  Broadcasts over array arguments;
    ``G = inf`` gives the continuum limit ``(1, 3, 3)``.
    """
    cx, cy, cz = _cosines(G, theta, phi)
    A = cx * cy * cz
    B = cx * cy + cx * cz + cy * cz
    C = cx + cy + cz
    return A, B, C


def normalized_phase_velocity(w: WeightVector, G, theta, phi):
    """Numerical phase velocity divided by the true wavespeed.

    Raises
    ------
    DispersionDomainError
        If ``G <= 2``, the mass factor is not positive or the stiffness
        radicand is negative at any of the requested points.
    """
    A, B, C = abc(G, theta, phi)
    # mass factor; per-node weights of each class are folded in here
    J = w.wm0 + 2 * (w.wm1 / 6) * C + 4 * (w.wm2 / 12) * B + 8 * (w.wm3 / 8) * A
    rad = (
        w.ws1 * (3 - C)
        + w.ws2 / 3 * (6 - C - B)
        + 2 * w.ws3 / 4 * (3 - 3 * A + B - C)
    )
    bad = (np.asarray(J) <= 0) | (np.asarray(rad) < 0)
    if np.any(bad):
        Gb, tb, pb = (np.broadcast_to(x, bad.shape)[bad] for x in np.broadcast_arrays(G, theta, phi))
        raise DispersionDomainError(
            f"dispersion formula undefined at (G, theta, phi)="
            f"({float(Gb.flat[0])}, {float(tb.flat[0])}, {float(pb.flat[0])})"
        )
    G = np.asarray(G, dtype=float)
    return G / (np.sqrt(2.0 * J) * np.pi) * np.sqrt(rad)


def h_row(G, theta, phi):
    """Coefficients ``H1..H5`` and right-hand side ``g`` of the linearised
    unit-phase-velocity condition ``sum_l H_l w_l = g``.

    The unknowns are ``[ws1, ws2, wm0, wm1/6, wm2/12]``.  Every term is
    written in ``u = 1 - cos`` form so that the ``O(G**-4)`` values keep
    their relative precision at large G.

    Returns
    -------
    H : ndarray, shape ``broadcast_shape + (5,)``
    g : ndarray, shape ``broadcast_shape``
    """
    G = _check_g(G)
    kh = 2.0 * np.pi / G
    th = np.asarray(theta, dtype=float)
    ph = np.asarray(phi, dtype=float)
    ka = kh * np.cos(ph) * np.cos(th)
    kb = kh * np.cos(ph) * np.sin(th)
    kc = kh * np.sin(ph)
    ux, uy, uz = (2.0 * np.sin(0.5 * k) ** 2 for k in (ka, kb, kc))
    s1 = ux + uy + uz
    s2 = ux * uy + ux * uz + uy * uz
    s3 = ux * uy * uz
    q = 2.0 * np.pi**2 / G**2
    H1 = s2 - 1.5 * s3
    H2 = (2.0 / 3.0) * s2 - 1.5 * s3
    H3 = q * (-s1 + s2 - s3)
    H4 = q * (-4.0 * s1 + 6.0 * s2 - 6.0 * s3)
    H5 = q * (-4.0 * s1 + 8.0 * s2 - 12.0 * s3)
    # continuum part of A in the g term cancels the leading order of the stiffness
    g = q * (1.0 - s1 + s2 - s3) - (s1 - s2 + 1.5 * s3)
    H = np.stack(np.broadcast_arrays(H1, H2, H3, H4, H5), axis=-1)
    return H, np.broadcast_to(g, H.shape[:-1]).copy()


def _block(G: float, angles: AngleGrid):
    th, ph = angles.mesh()
    return h_row(np.full_like(th, G), th, ph)


def _lstsq(H, g, label, n_g=1):
    # at fixed G every column vanishes on (1, A, B, C) = (1, 1, 3, 3), so a
    # block contributes at most rank 3; warn only below what is attainable
    attainable = min(H.shape[1], 3 * n_g, H.shape[0])
    u, _, rank, _ = np.linalg.lstsq(H, g, rcond=None)
    if rank < attainable:
        warnings.warn(
            f"{label}: least-squares system has rank {rank} < {attainable}; "
            "returning the minimum-norm solution",
            RankDeficiencyWarning,
            stacklevel=3,
        )
    return u


def solve_weights_single(G: float, angles: AngleGrid | None = None) -> WeightVector:
    """Weights minimising the linearised dispersion misfit at one G."""
    angles = angles or AngleGrid.default()
    H, g = _block(G, angles)
    return WeightVector.from_unknowns(_lstsq(H, g, f"G={G}"))


def solve_weights_joint(Gs: Sequence[float], angles: AngleGrid | None = None) -> WeightVector:
    """One weight vector fitted jointly over several G values."""
    if len(Gs) == 0:
        raise ValueError("Gs must be non-empty")
    angles = angles or AngleGrid.default()
    blocks = [_block(G, angles) for G in Gs]
    H = np.vstack([b[0] for b in blocks])
    g = np.concatenate([b[1] for b in blocks])
    return WeightVector.from_unknowns(_lstsq(H, g, f"Gs={list(Gs)}", len(Gs)))


def _difference_operator(n: int) -> sp.csr_matrix:
    # forward differences; the last row repeats the backward difference
    D = sp.diags([-np.ones(n), np.ones(n - 1)], [0, 1], shape=(n, n), format="lil")
    if n > 1:
        D[n - 1, n - 2] = -1.0
        D[n - 1, n - 1] = 1.0
    else:
        D[0, 0] = 0.0
    return D.tocsr()


def _smoothing_operator(n_g: int) -> sp.csr_matrix:
    """``L = D P`` for unknowns stored block-major (all five for G_1 first)."""
    D = _difference_operator(n_g)
    perm = np.array([i * 5 + l for l in range(5) for i in range(n_g)])
    P = sp.csr_matrix((np.ones(5 * n_g), (np.arange(5 * n_g), perm)), shape=(5 * n_g, 5 * n_g))
    return (sp.kron(sp.identity(5), D) @ P).tocsr()


def _stacked_system(Gs, angles):
    blocks = [_block(G, angles) for G in Gs]
    H = sp.block_diag([b[0] for b in blocks], format="csr")
    g = np.concatenate([b[1] for b in blocks])
    return H, g, blocks


def default_lambda(Gs: Sequence[float], angles: AngleGrid | None = None) -> float:
    """Regularisation weight with ``lam * ||L||_2**2`` equal to 1% of the
    mean diagonal of ``H^T H``."""
    angles = angles or AngleGrid.default()
    H, _, _ = _stacked_system(Gs, angles)
    mean_diag = float(np.mean(H.multiply(H).sum(axis=0)))
    n = len(Gs)
    if n < 2:
        return 0.0
    D = _difference_operator(n)
    DtD = (D.T @ D).tocsr()
    norm2 = scipy.linalg.eigvalsh_tridiagonal(
        DtD.diagonal(), DtD.diagonal(1), select="i", select_range=(n - 1, n - 1)
    )[0]
    return 1e-2 * mean_diag / norm2


def solve_weights_adaptive(
    inv_g_grid: Sequence[float] | None = None,
    angles: AngleGrid | None = None,
    lam: float | None = None,
) -> WeightTable:
    """Tabulate weights against ``1/G`` with a first-difference Tikhonov
    penalty tying neighbouring rows together.

    ``lam=None`` selects :func:`default_lambda`.  ``lam=0`` decouples the
    rows into independent single-G fits.
    """
    if inv_g_grid is None:
        inv_g_grid = np.round(np.arange(1, 401) * 1e-3, 12)
    inv_g = np.asarray(inv_g_grid, dtype=float)
    if inv_g.size > 1:
        steps = np.diff(inv_g)
        if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * steps.mean():
            raise ValueError("inv_g_grid must be uniform and increasing")
        step = float(steps.mean())
    else:
        step = 1.0
    angles = angles or AngleGrid.default()
    Gs = 1.0 / inv_g
    if lam is None:
        lam = default_lambda(Gs, angles)
    if lam < 0:
        raise ValueError("lam must be non-negative")

    H, g, blocks = _stacked_system(Gs, angles)
    if lam == 0:
        u = np.vstack([_lstsq(Hb, gb, f"G={G}") for (Hb, gb), G in zip(blocks, Gs)])
    else:
        L = _smoothing_operator(len(Gs))
        N = (H.T @ H + lam * (L.T @ L)).tocsc()
        with warnings.catch_warnings():
            warnings.simplefilter("error", spla.MatrixRankWarning)
            try:
                u = spla.spsolve(N, H.T @ g)
            except spla.MatrixRankWarning as exc:
                raise np.linalg.LinAlgError("singular regularised normal equations") from exc
        u = u.reshape(len(Gs), 5)
    rows = _weights_from_unknowns(u)
    # back-substitution leaves the sums at 1 up to rounding; restore exactly
    rows[:, 2] = 1.0 - rows[:, 0] - rows[:, 1]
    rows[:, 6] = 1.0 - rows[:, 3] - rows[:, 4] - rows[:, 5]
    return WeightTable(float(inv_g[0]), float(inv_g[-1]), step, rows, float(lam), angles)


def lookup_indices(table: WeightTable, G_local) -> np.ndarray:
    """Nearest-row indices for an array of local G values (ties to even)."""
    pos = (1.0 / np.asarray(G_local, dtype=float) - table.inv_g_min) / table.inv_g_step
    return np.clip(np.rint(pos), 0, len(table) - 1).astype(np.intp)


def lookup(table: WeightTable, G_local: float) -> WeightVector:
    """Row of ``table`` whose ``1/G`` is nearest to ``1/G_local``.

    Values beyond the tabulated range clamp to the end rows.
    """
    return table.row(int(lookup_indices(table, G_local)))


@lru_cache(maxsize=None)
def g4_weights() -> WeightVector:
    """Weights fitted for G = 4 only."""
    return solve_weights_single(4.0)


@lru_cache(maxsize=None)
def gm_weights() -> WeightVector:
    """Weights fitted jointly for G = 4, 6, 8 and 10."""
    return solve_weights_joint([4.0, 6.0, 8.0, 10.0])


@lru_cache(maxsize=None)
def default_table() -> WeightTable:
    """Adaptive table on ``1/G`` = 0.001 ... 0.4, step 0.001, default lambda."""
    return solve_weights_adaptive()


def dispersion_curves(weights, inv_g, angles: AngleGrid | None = None) -> np.ndarray:
    """Tabulate normalised phase velocity over ``inv_g`` and the angle grid.

    ``weights`` is a :class:`WeightVector` or a :class:`WeightTable` (rows
    looked up per ``1/G``).  Returns a record array with fields
    ``inv_g, theta_deg, phi_deg, v_norm``.
    """
    angles = angles or AngleGrid.default()
    th, ph = angles.mesh()
    out = []
    for x in np.asarray(inv_g, dtype=float):
        G = 1.0 / x
        w = lookup(weights, G) if isinstance(weights, WeightTable) else weights
        v = normalized_phase_velocity(w, G, th, ph)
        for t, p, vv in zip(th, ph, v):
            out.append((x, np.rad2deg(t), np.rad2deg(p), vv))
    return np.array(
        out,
        dtype=[("inv_g", float), ("theta_deg", float), ("phi_deg", float), ("v_norm", float)],
    )


def write_dispersion_csv(curves: np.ndarray, path) -> None:
    lines = ["inv_g,theta_deg,phi_deg,v_norm"]
    for r in curves:
        lines.append(",".join(f"{float(r[k]):.17g}" for k in ("inv_g", "theta_deg", "phi_deg", "v_norm")))
    Path(path).write_text("\n".join(lines) + "\n")


def max_dispersion_error(w: WeightVector, G: float, angles: AngleGrid | None = None) -> float:
    """``max |v_norm - 1|`` over the angle grid at one G."""
    angles = angles or AngleGrid.default()
    th, ph = angles.mesh()
    return float(np.max(np.abs(normalized_phase_velocity(w, G, th, ph) - 1.0)))


__all__.append("max_dispersion_error")
