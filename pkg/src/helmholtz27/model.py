"""Velocity models, wavefields, point sources and the ``.f32raw`` file format.

Grids are indexed ``[ix, iy, iz]`` and flattened with z varying fastest.
Interior node ``(i, j, k)`` sits at ``(i*h, j*h, k*h)`` metres; a PML pad of
``npml`` cells surrounds the interior in padded arrays.

On disk a model or field is a headerless little-endian float32 payload
(``.f32raw``) plus a JSON sidecar (``.json``) holding dims, spacing, pad,
frequency and provenance.  Complex fields are interleaved ``re, im`` pairs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

__all__ = [
    "VelocityModel",
    "ComplexField",
    "SourceSpec",
    "ModelFileError",
    "NonFiniteError",
    "local_g_field",
    "save_model",
    "load_model",
    "save_field",
    "load_field",
    "homogeneous_model",
    "linear_gradient_model",
    "salt_body_model",
]

_LE_F32 = np.dtype("<f4")
FORMAT_VERSION = 1


class ModelFileError(OSError):
    """Unreadable header, inconsistent payload size or unexpected content."""


class NonFiniteError(ValueError):
    """A grid holds NaN or Inf; ``location`` is the first offending index."""

    def __init__(self, what: str, location: tuple[int, ...]):
        super().__init__(f"{what} has a non-finite value at index {location}")
        self.location = location


def _first_nonfinite(a: np.ndarray):
    bad = np.argwhere(~np.isfinite(a))
    return None if bad.size == 0 else tuple(int(i) for i in bad[0])


@dataclass(frozen=True, eq=False)
class VelocityModel:
    """Wavespeed ``c`` (m/s) and buoyancy ``b`` on a uniform interior grid."""

    c: np.ndarray
    h: float
    b: np.ndarray | None = None

    def __post_init__(self):
        c = np.array(self.c, dtype=float)
        if c.ndim != 3 or min(c.shape) < 3:
            raise ValueError(f"c must be 3D with every dimension >= 3, got {c.shape}")
        loc = _first_nonfinite(c)
        if loc is not None:
            raise NonFiniteError("wavespeed", loc)
        if np.any(c <= 0):
            raise ValueError("wavespeed must be positive everywhere")
        if not (np.isfinite(self.h) and self.h > 0):
            raise ValueError("grid spacing must be positive")
        if self.b is None:
            b = np.ones_like(c)
        else:
            b = np.array(self.b, dtype=float)
            if b.shape != c.shape:
                raise ValueError("buoyancy and wavespeed grids differ in shape")
            loc = _first_nonfinite(b)
            if loc is not None:
                raise NonFiniteError("buoyancy", loc)
            if np.any(b <= 0):
                raise ValueError("buoyancy must be positive everywhere")
        c.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "h", float(self.h))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.c.shape

    nx = property(lambda self: self.c.shape[0])
    ny = property(lambda self: self.c.shape[1])
    nz = property(lambda self: self.c.shape[2])

    @property
    def kappa(self) -> np.ndarray:
        """Bulk modulus ``c**2 / b``."""
        return self.c**2 / self.b

    @property
    def is_homogeneous(self) -> bool:
        return bool(np.ptp(self.c) == 0 and np.ptp(self.b) == 0)

    @property
    def has_unit_buoyancy(self) -> bool:
        return bool(np.all(self.b == 1.0))

    def padded(self, npml: int) -> tuple[np.ndarray, np.ndarray]:
        """``(c, b)`` extended by ``npml`` edge-replicated cells per face."""
        if npml < 0:
            raise ValueError("npml must be non-negative")
        return np.pad(self.c, npml, mode="edge"), np.pad(self.b, npml, mode="edge")

    def extent(self) -> np.ndarray:
        """Physical size ``(n - 1) * h`` per axis."""
        return (np.array(self.shape) - 1) * self.h


@dataclass(frozen=True, eq=False)
class ComplexField:
    """Complex pressure on a padded grid; ``npml`` cells of pad per face."""

    values: np.ndarray
    h: float
    npml: int = 0
    freq: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.array(self.values, dtype=complex)
        if v.ndim != 3:
            raise ValueError("field values must be 3D")
        if self.npml < 0 or any(n <= 2 * self.npml for n in v.shape):
            raise ValueError("pad leaves no interior")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def interior_shape(self) -> tuple[int, int, int]:
        return tuple(n - 2 * self.npml for n in self.shape)

    def interior(self) -> np.ndarray:
        p = self.npml
        if p == 0:
            return self.values
        return self.values[p:-p, p:-p, p:-p]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


@dataclass(frozen=True)
class SourceSpec:
    """Point source at ``position`` (metres, interior coordinates)."""

    position: tuple[float, float, float]
    amplitude: complex = 1.0

    def __post_init__(self):
        pos = tuple(float(x) for x in self.position)
        if len(pos) != 3 or not all(np.isfinite(pos)):
            raise ValueError("source position must be three finite numbers")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "amplitude", complex(self.amplitude))

    def node(self, shape, h: float) -> tuple[int, int, int]:
        """Nearest interior node; raises ``ValueError`` outside the interior."""
        idx = np.rint(np.asarray(self.position) / h).astype(int)
        if np.any(idx < 0) or np.any(idx >= np.asarray(shape)):
            raise ValueError(
                f"source at {self.position} m snaps to {tuple(idx)}, outside the "
                f"interior grid {tuple(shape)}"
            )
        return tuple(int(i) for i in idx)

    def snapped_position(self, shape, h: float) -> np.ndarray:
        return np.asarray(self.node(shape, h), dtype=float) * h


def local_g_field(model: VelocityModel, freq: float) -> np.ndarray:
    """Grid points per wavelength ``c / (freq * h)`` at every node."""
    if not freq > 0:
        raise ValueError("frequency must be positive")
    return model.c / (freq * model.h)


# -- file format ---------------------------------------------------------------


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".f32raw", ".json"):
        p = p.with_suffix("")
    return p.with_suffix(".f32raw"), p.with_suffix(".json")


def _write(path, payload: np.ndarray, header: dict) -> tuple[Path, Path]:
    raw, side = _paths(path)
    try:
        raw.write_bytes(payload.astype(_LE_F32).tobytes(order="C"))
        side.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise ModelFileError(f"cannot write {raw}: {exc}") from exc
    return raw, side


def _read(path, kind: str) -> tuple[np.ndarray, dict]:
    raw, side = _paths(path)
    try:
        header = json.loads(side.read_text())
    except (OSError, ValueError) as exc:
        raise ModelFileError(f"unreadable header {side}: {exc}") from exc
    if not isinstance(header, dict) or header.get("kind") != kind:
        raise ModelFileError(f"{side} does not describe a {kind}")
    try:
        dims = tuple(int(n) for n in header["dims"])
        ncomp = len(header["components"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"malformed header {side}: {exc}") from exc
    if len(dims) != 3 or min(dims) < 1:
        raise ModelFileError(f"bad dims {dims} in {side}")
    try:
        data = raw.read_bytes()
    except OSError as exc:
        raise ModelFileError(f"cannot read {raw}: {exc}") from exc
    expected = int(np.prod(dims)) * ncomp * _LE_F32.itemsize
    if len(data) != expected:
        raise ModelFileError(
            f"size mismatch in {raw}: {len(data)} bytes, header implies {expected}"
        )
    arr = np.frombuffer(data, dtype=_LE_F32)
    loc = _first_nonfinite(arr)
    if loc is not None:
        raise ModelFileError(f"non-finite value in {raw} at flat index {loc[0]}")
    return arr, header


def save_model(model: VelocityModel, path, provenance: dict | None = None) -> tuple[Path, Path]:
    """Write ``c`` (and ``b`` unless it is identically 1) as float32."""
    comps = ["c"] if model.has_unit_buoyancy else ["c", "b"]
    grids = [model.c] + ([] if model.has_unit_buoyancy else [model.b])
    header: dict[str, Any] = {
        "format": "f32raw",
        "version": FORMAT_VERSION,
        "kind": "model",
        "dims": list(model.shape),
        "spacing": model.h,
        "pad": 0,
        "components": comps,
        "order": "z-fastest",
        "endianness": "little",
        "provenance": provenance or {},
    }
    return _write(path, np.concatenate([g.ravel() for g in grids]), header)


def load_model(path) -> VelocityModel:
    arr, header = _read(path, "model")
    dims = tuple(header["dims"])
    n = int(np.prod(dims))
    comps = header["components"]
    grids = {name: arr[i * n:(i + 1) * n].astype(float).reshape(dims) for i, name in enumerate(comps)}
    if "c" not in grids:
        raise ModelFileError("model file lacks a wavespeed component")
    try:
        return VelocityModel(grids["c"], float(header["spacing"]), grids.get("b"))
    except (KeyError, ValueError) as exc:
        raise ModelFileError(f"invalid model content: {exc}") from exc


def save_field(fld: ComplexField, path, provenance: dict | None = None) -> tuple[Path, Path]:
    """Write interleaved float32 ``re, im`` pairs; non-finite values are refused."""
    loc = _first_nonfinite(fld.values)
    if loc is not None:
        raise NonFiniteError("field", loc)
    inter = np.empty(fld.values.size * 2)
    flat = fld.values.ravel()
    inter[0::2] = flat.real
    inter[1::2] = flat.imag
    header = {
        "format": "f32raw",
        "version": FORMAT_VERSION,
        "kind": "field",
        "dims": list(fld.shape),
        "spacing": fld.h,
        "pad": fld.npml,
        "frequency": fld.freq,
        "components": ["re", "im"],
        "order": "z-fastest",
        "endianness": "little",
        "provenance": {**fld.meta, **(provenance or {})},
    }
    return _write(path, inter, header)


def load_field(path) -> ComplexField:
    arr, header = _read(path, "field")
    if header["components"] != ["re", "im"]:
        raise ModelFileError("field file must hold interleaved re, im pairs")
    # assign parts directly: re + 1j*im would turn -0.0 real parts into +0.0
    vals = np.empty(arr.size // 2, dtype=complex)
    vals.real, vals.imag = arr[0::2], arr[1::2]
    vals = vals.reshape(header["dims"])
    try:
        return ComplexField(
            vals,
            float(header["spacing"]),
            int(header.get("pad", 0)),
            header.get("frequency"),
            dict(header.get("provenance", {})),
        )
    except (KeyError, ValueError) as exc:
        raise ModelFileError(f"invalid field content: {exc}") from exc


# -- procedural models ----------------------------------------------------------


def homogeneous_model(shape, h: float, c: float) -> VelocityModel:
    return VelocityModel(np.full(tuple(shape), float(c)), h)


def linear_gradient_model(shape, h: float, c_start: float, c_end: float, axis: int = 1) -> VelocityModel:
    """Wavespeed varying linearly from ``c_start`` to ``c_end`` along ``axis``."""
    shape = tuple(shape)
    prof = np.linspace(c_start, c_end, shape[axis])
    bshape = [1, 1, 1]
    bshape[axis] = shape[axis]
    return VelocityModel(np.broadcast_to(prof.reshape(bshape), shape).copy(), h)


def salt_body_model(
    shape,
    h: float,
    c_background: float = 1500.0,
    c_body: float = 4482.0,
    center=None,
    radii=None,
    roughness: float = 0.15,
) -> VelocityModel:
    """Background with an embedded high-velocity body with a sharp, lobed boundary.

    The body is an ellipsoid whose radius is modulated by a few low-order
    angular harmonics, giving an irregular, salt-like outline.  The geometry
    is fully deterministic.
    """
    shape = tuple(shape)
    n = np.array(shape, dtype=float)
    center = n / 2.0 - 0.5 if center is None else np.asarray(center, float)
    radii = n * np.array([0.25, 0.22, 0.18]) if radii is None else np.asarray(radii, float)
    ix, iy, iz = np.meshgrid(*(np.arange(s, dtype=float) for s in shape), indexing="ij")
    dx, dy, dz = (ix - center[0]) / radii[0], (iy - center[1]) / radii[1], (iz - center[2]) / radii[2]
    rho = np.sqrt(dx**2 + dy**2 + dz**2)
    az = np.arctan2(dy, dx)
    el = np.arctan2(dz, np.hypot(dx, dy))
    lobes = 1.0 + roughness * (np.cos(3 * az) * np.cos(el) + 0.5 * np.sin(2 * el + az))
    c = np.where(rho <= lobes, float(c_body), float(c_background))
    return VelocityModel(c, h)
