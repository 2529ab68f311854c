"""Sparse impedance matrix ``A = M + S`` of the mixed-grid 27-point stencil.

The stiffness part is a weighted sum of second-order operators
``(1/xi) d/dx (b/xi) d/dx + ...`` discretised on eight coordinate systems:
the Cartesian axes, three systems rotated by 45 degrees about one axis and
four systems spanned by three of the four cube diagonals.  On a system with
(integer) direction vectors ``d_j`` the physical gradient is recovered as
``sum_j T[:, j] * D_j`` with ``T = inv(E).T``, ``E = [d_1 d_2 d_3]``, where
``D_j`` is the centred difference across ``d_j``.  Differentiating the
resulting staggered flux along the same directions keeps every coefficient
inside the 3x3x3 neighbourhood.  Buoyancy at a staggered point is the mean of
its two end nodes and the PML stretch ``1/xi`` is applied at the point where
each directional derivative is evaluated.

The mass part spreads ``omega**2 / kappa`` over the collocation node and its
face, edge and corner neighbours.

Unknowns live on the padded grid, flattened with z fastest.  Nodes beyond
the padded grid are a homogeneous Dirichlet wall, so their columns are
simply dropped.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.io
import scipy.sparse as sp

from .dispersion import WeightTable, WeightVector, default_table, g4_weights, gm_weights, lookup_indices
from .model import SourceSpec, VelocityModel

__all__ = [
    "OFFSETS",
    "SYSTEMS",
    "PmlProfile",
    "StencilVariant",
    "AssemblyError",
    "TableCoverageWarning",
    "elementary_stiffness",
    "assemble",
    "build_rhs",
    "source_factor",
    "dump_matrix_market",
    "stencil_weights",
]

#: The 27 stencil offsets in column order (z fastest).
OFFSETS = np.array([(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)])

#: Direction vectors (columns) of each coordinate system.
SYSTEMS: dict[str, np.ndarray] = {
    "cartesian": np.eye(3, dtype=int),
    "rotated45_x": np.array([[1, 0, 0], [0, 1, 1], [0, 1, -1]]).T,
    "rotated45_y": np.array([[0, 1, 0], [1, 0, 1], [1, 0, -1]]).T,
    "rotated45_z": np.array([[0, 0, 1], [1, 1, 0], [1, -1, 0]]).T,
}
_DIAGONALS = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]])
for _i in range(4):
    SYSTEMS[f"diagonal_{_i + 1}"] = np.delete(_DIAGONALS, _i, axis=0).T

MASS_MODES = ("heterogeneous_kappa", "collocation_kappa")


class AssemblyError(ValueError):
    """A matrix coefficient came out non-finite."""


class TableCoverageWarning(UserWarning):
    """Local G values fell outside the weight table and were clamped."""


def _offset_index(o) -> int:
    return int((o[0] + 1) * 9 + (o[1] + 1) * 3 + (o[2] + 1))


@dataclass(frozen=True)
class PmlProfile:
    """Quadratic damping ``gamma(d) = 1.5 * c_face / L * ln(1/r_coeff) * (d/L)**2``.

    ``d`` is the depth into the layer and ``L = npml * h``.  ``c_face`` is
    the largest wavespeed on the adjacent interior face.  ``r_coeff = 1``
    switches damping off while keeping the pad.
    """

    npml: int = 12
    r_coeff: float = 1e-3

    def __post_init__(self):
        if self.npml < 0:
            raise ValueError("npml must be non-negative")
        if not 0 < self.r_coeff <= 1:
            raise ValueError("r_coeff must lie in (0, 1]")

    def gamma(self, depth, c_face: float, h: float):
        """Damping in 1/s at depth ``depth`` (metres) into the layer."""
        depth = np.asarray(depth, dtype=float)
        if self.npml == 0:
            return np.zeros_like(depth)
        L = self.npml * h
        return 1.5 * c_face / L * np.log(1.0 / self.r_coeff) * (depth / L) ** 2

    def gamma_axis(self, n_interior: int, h: float, c_lo: float, c_hi: float) -> np.ndarray:
        """Damping on the half-integer padded positions ``-0.5, 0, ..., N - 0.5``.

        Entry ``2 t + 1`` belongs to padded position ``t``.
        """
        N = n_interior + 2 * self.npml
        t = np.arange(2 * N + 1) * 0.5 - 0.5
        lo = np.maximum(self.npml - t, 0.0) * h
        hi = np.maximum(t - (self.npml + n_interior - 1), 0.0) * h
        return np.where(lo > 0, self.gamma(lo, c_lo, h), self.gamma(hi, c_hi, h))

    def inverse_stretch(self, model: VelocityModel, omega: float) -> list[np.ndarray]:
        """``1 / xi`` per axis on half-integer padded positions."""
        out = []
        for ax in range(3):
            c_lo = float(np.take(model.c, 0, axis=ax).max())
            c_hi = float(np.take(model.c, -1, axis=ax).max())
            g = self.gamma_axis(model.shape[ax], model.h, c_lo, c_hi)
            out.append(1.0 / (1.0 + 1j * g / omega))
        return out


@dataclass(frozen=True, eq=False)
class StencilVariant:
    """Weight selection rule: fixed vector (G4, Gm) or table driven (GA, GAm)."""

    tag: str
    weights: WeightVector | None = None
    table: WeightTable | None = None

    TAGS = ("G4", "Gm", "GA", "GAm")

    def __post_init__(self):
        if self.tag not in self.TAGS:
            raise ValueError(f"unknown stencil variant {self.tag!r}; expected one of {self.TAGS}")
        if self.tag in ("G4", "Gm") and self.weights is None:
            raise ValueError(f"{self.tag} needs a weight vector")
        if self.tag in ("GA", "GAm") and self.table is None:
            raise ValueError(f"{self.tag} needs a weight table")

    @classmethod
    def from_tag(cls, tag: str, table: WeightTable | None = None,
                 weights: WeightVector | None = None) -> "StencilVariant":
        """Case-insensitive tag lookup with the package default weights."""
        canon = {t.lower(): t for t in cls.TAGS}.get(str(tag).lower())
        if canon is None:
            raise ValueError(f"unknown stencil variant {tag!r}; expected one of {cls.TAGS}")
        if canon == "G4":
            return cls(canon, weights=weights or g4_weights())
        if canon == "Gm":
            return cls(canon, weights=weights or gm_weights())
        return cls(canon, table=table or default_table())

    @classmethod
    def fixed(cls, weights: WeightVector, tag: str = "G4") -> "StencilVariant":
        return cls(tag, weights=weights)


# -- weights per node ------------------------------------------------------------


def stencil_weights(variant: StencilVariant, g_local: np.ndarray):
    """Per-node weights as arrays ``(7,) + g_local.shape`` or a ``(7,)`` vector."""
    if variant.tag in ("G4", "Gm"):
        return variant.weights.as_array()
    table = variant.table
    g_lo, g_hi = 1.0 / table.inv_g_max, 1.0 / table.inv_g_min
    if g_local.min() < g_lo * (1 - 1e-12) or g_local.max() > g_hi * (1 + 1e-12):
        warnings.warn(
            f"local G range [{g_local.min():.4g}, {g_local.max():.4g}] exceeds the "
            f"table range [{g_lo:.4g}, {g_hi:.4g}]; end rows used",
            TableCoverageWarning,
            stacklevel=3,
        )
    w = np.moveaxis(table.rows[lookup_indices(table, g_local)], -1, 0)
    if variant.tag == "GA":
        return w
    ext = np.pad(w, [(0, 0)] + [(1, 1)] * 3, mode="edge")
    n = g_local.shape
    # average the deviations from the centre row so a uniform medium keeps
    # its weights bit for bit
    acc = np.zeros_like(w)
    for o in OFFSETS:
        acc += ext[:, 1 + o[0]:1 + o[0] + n[0], 1 + o[1]:1 + o[1] + n[1], 1 + o[2]:1 + o[2] + n[2]] - w
    acc = w + acc / 27.0
    acc[2] = 1.0 - acc[0] - acc[1]
    acc[6] = 1.0 - acc[3] - acc[4] - acc[5]
    return acc


# -- stencil coefficients ---------------------------------------------------------


@lru_cache(maxsize=None)
def _system_terms(name: str):
    """``(j, s_j, k, s_k, offset index, T[:, j] * T[:, k] * s_j * s_k)`` per nonzero term."""
    E = SYSTEMS[name].astype(float)
    T = np.linalg.inv(E).T
    terms = []
    for j in range(3):
        for k in range(3):
            tt = T[:, j] * T[:, k]
            if not np.any(tt):
                continue
            for sj in (-1, 1):
                for sk in (-1, 1):
                    off = (sj * SYSTEMS[name][:, j] + sk * SYSTEMS[name][:, k]) // 2
                    terms.append((j, sj, k, sk, _offset_index(off), tt * sj * sk))
    return terms


def _window(arr_ext, lo, hi, shift):
    """Slice of an array padded by one cell, shifted by an integer vector."""
    return arr_ext[
        lo[0] + 1 + shift[0]:hi[0] + 1 + shift[0],
        lo[1] + 1 + shift[1]:hi[1] + 1 + shift[1],
        lo[2] + 1 + shift[2]:hi[2] + 1 + shift[2],
    ]


def _stretch_at(invxi, ax, lo, hi, half_shift):
    """``1/xi`` along ``ax`` at nodes ``lo..hi-1`` displaced by ``half_shift / 2``."""
    v = invxi[ax][2 * lo[ax] + 1 + half_shift:2 * hi[ax] + 1 + half_shift:2]
    shape = [1, 1, 1]
    shape[ax] = v.size
    return v.reshape(shape)


def _add_system(coef, name, b_ext, invxi, h, lo, hi, weight):
    d = SYSTEMS[name]
    b0 = _window(b_ext, lo, hi, (0, 0, 0))
    flux = {}
    for j in range(3):
        for sj in (-1, 1):
            bm = 0.5 * (b0 + _window(b_ext, lo, hi, sj * d[:, j]))
            flux[j, sj] = [
                _stretch_at(invxi, a, lo, hi, 0) * _stretch_at(invxi, a, lo, hi, sj * d[a, j]) * bm
                for a in range(3)
            ]
    scale = weight / h**2
    for j, sj, k, sk, o, tt in _system_terms(name):
        f = flux[j, sj]
        acc = 0.0
        for a in range(3):
            if tt[a] != 0.0:
                acc = acc + tt[a] * f[a]
        coef[o] += scale * acc


def _add_mass(coef, wm, inv_kappa_ext, omega, lo, hi, mode):
    nclass = (1.0, 6.0, 12.0, 8.0)
    if mode == "collocation_kappa":
        k0 = _window(inv_kappa_ext, lo, hi, (0, 0, 0))
    for o in OFFSETS:
        cls = int(np.count_nonzero(o))
        ik = k0 if mode == "collocation_kappa" else _window(inv_kappa_ext, lo, hi, o)
        coef[_offset_index(o)] += omega**2 * (wm[cls] / nclass[cls]) * ik


def _prepare(model, freq, pml):
    if not freq > 0:
        raise ValueError("frequency must be positive")
    pml = pml or PmlProfile(npml=0)
    omega = 2.0 * np.pi * freq
    c_pad, b_pad = model.padded(pml.npml)
    invxi = pml.inverse_stretch(model, omega)
    return pml, omega, c_pad, b_pad, invxi


def elementary_stiffness(system: str, node, model: VelocityModel, freq: float,
                         pml: PmlProfile | None = None) -> np.ndarray:
    """27 stiffness coefficients of one coordinate system at a padded-grid node.

    Coefficients are ordered like :data:`OFFSETS`; the combination weight is
    not applied.
    """
    if system not in SYSTEMS:
        raise ValueError(f"unknown coordinate system {system!r}")
    pml, omega, c_pad, b_pad, invxi = _prepare(model, freq, pml)
    node = np.asarray(node, dtype=int)
    if np.any(node < 0) or np.any(node >= c_pad.shape):
        raise ValueError(f"node {tuple(node)} outside the padded grid {c_pad.shape}")
    coef = np.zeros((27, 1, 1, 1), dtype=complex)
    b_ext = np.pad(b_pad, 1, mode="edge")
    _add_system(coef, system, b_ext, invxi, model.h, node, node + 1, 1.0)
    return coef.ravel()


def _coefficients(model, freq, pml, variant, mass_mode):
    if mass_mode not in MASS_MODES:
        raise ValueError(f"mass_mode must be one of {MASS_MODES}")
    pml, omega, c_pad, b_pad, invxi = _prepare(model, freq, pml)
    shape = c_pad.shape
    w = stencil_weights(variant, c_pad / (freq * model.h))
    lo, hi = np.zeros(3, dtype=int), np.array(shape)
    coef = np.zeros((27,) + shape, dtype=complex)
    b_ext = np.pad(b_pad, 1, mode="edge")
    _add_system(coef, "cartesian", b_ext, invxi, model.h, lo, hi, w[0])
    for ax in "xyz":
        _add_system(coef, f"rotated45_{ax}", b_ext, invxi, model.h, lo, hi, w[1] / 3.0)
    for i in range(1, 5):
        _add_system(coef, f"diagonal_{i}", b_ext, invxi, model.h, lo, hi, w[2] / 4.0)
    inv_kappa_ext = np.pad(b_pad / c_pad**2, 1, mode="edge")
    _add_mass(coef, w[3:], inv_kappa_ext, omega, lo, hi, mass_mode)
    return coef, pml


def _to_csr(coef: np.ndarray) -> sp.csr_matrix:
    shape = coef.shape[1:]
    N = int(np.prod(shape))
    valid = np.ones((27,) + shape, dtype=bool)
    for oi, o in enumerate(OFFSETS):
        for ax in range(3):
            if o[ax] == 0:
                continue
            sl = [slice(None)] * 3
            sl[ax] = slice(0, 1) if o[ax] < 0 else slice(shape[ax] - 1, shape[ax])
            valid[(oi,) + tuple(sl)] = False
    strides = OFFSETS @ np.array([shape[1] * shape[2], shape[2], 1])
    idx_dtype = np.int32 if N * 27 < 2**31 - 1 else np.int64
    valid_t = valid.reshape(27, N).T
    cols = (np.arange(N, dtype=idx_dtype)[:, None] + strides.astype(idx_dtype)[None, :])[valid_t]
    data = coef.reshape(27, N).T[valid_t]
    indptr = np.zeros(N + 1, dtype=idx_dtype)
    np.cumsum(valid_t.sum(axis=1), out=indptr[1:])
    A = sp.csr_matrix((data, cols, indptr), shape=(N, N))
    A.has_sorted_indices = True
    return A


def assemble(model: VelocityModel, freq: float, pml: PmlProfile | None = None,
             variant: StencilVariant | None = None,
             mass_mode: str = "heterogeneous_kappa") -> sp.csr_matrix:
    """Impedance matrix on the PML-padded grid.

    ``variant`` defaults to GA with the package's default weight table.
    Explicit zeros are kept so every interior row stores all 27 entries.
    """
    variant = variant or StencilVariant.from_tag("GA")
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        coef, _ = _coefficients(model, freq, pml, variant, mass_mode)
    bad = ~np.isfinite(coef)
    if np.any(bad):
        o, i, j, k = np.argwhere(bad)[0]
        raise AssemblyError(
            f"non-finite coefficient at padded node {(int(i), int(j), int(k))}, offset {tuple(OFFSETS[o])}"
        )
    return _to_csr(coef)


SOURCE_SCALINGS = ("delta", "nodal")


def source_factor(model: VelocityModel, source: SourceSpec, freq: float) -> float:
    """Amplitude factor ``(kh/2) cot(kh/2)`` at the source node.

    A compact three-point-per-axis operator whose dispersion is exact at
    wavenumber ``k`` has a discrete Green's function ``2 (1 - cos kh) /
    (kh sin kh)`` times the continuum one along the grid axes.  Scaling the
    nodal delta by the inverse restores the continuum amplitude; the factor
    tends to one as the sampling is refined.
    """
    if not freq > 0:
        raise ValueError("frequency must be positive")
    c = float(model.c[source.node(model.shape, model.h)])
    half = np.pi * freq * model.h / c
    if not half < np.pi / 2:
        raise ValueError("fewer than two grid points per wavelength at the source")
    return float(half / np.tan(half)) if half > 0 else 1.0


def build_rhs(model: VelocityModel, source: SourceSpec, npml: int = 0,
              freq: float | None = None, scaling: str = "delta") -> np.ndarray:
    """Right-hand side of a point source: one nonzero entry at the snapped node.

    ``scaling="delta"`` puts ``amplitude / h**3`` there.  ``"nodal"``
    multiplies it by :func:`source_factor` (needs ``freq``).
    """
    if scaling not in SOURCE_SCALINGS:
        raise ValueError(f"scaling must be one of {SOURCE_SCALINGS}")
    node = np.asarray(source.node(model.shape, model.h)) + npml
    shape = np.asarray(model.shape) + 2 * npml
    value = source.amplitude / model.h**3
    if scaling == "nodal":
        if freq is None:
            raise ValueError("nodal source scaling needs the frequency")
        value *= source_factor(model, source, freq)
    rhs = np.zeros(int(np.prod(shape)), dtype=complex)
    rhs[np.ravel_multi_index(tuple(node), tuple(shape))] = value
    return rhs


def dump_matrix_market(A: sp.spmatrix, path, comment: str = "") -> None:
    """Write ``A`` as a complex general Matrix Market coordinate file."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(A, dtype=complex), comment=comment,
                     field="complex", symmetry="general")
