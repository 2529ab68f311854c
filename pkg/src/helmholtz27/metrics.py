"""Gain-weighted relative error between wavefields and line-profile extraction.

The error is the sum of two relative l1 misfits, one for the real and one for
the imaginary part, each weighted by the distance from the source so that
geometric spreading does not let the near field dominate::

    err = |W Re(u_ref - u)|_1 / |W Re u_ref|_1 + |W Im(u_ref - u)|_1 / |W Im u_ref|_1
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .model import ComplexField, SourceSpec

__all__ = ["ErrorReport", "DegenerateReferenceError", "comparison_mask", "error_metric", "line_profile",
           "write_line_profile"]


class DegenerateReferenceError(ValueError):
    """The reference field vanishes on the compared nodes."""


@dataclass(frozen=True)
class ErrorReport:
    err: float
    real_part: float
    imag_part: float
    n_compared: int
    n_masked: int
    source_ball_cells: float

    def to_json(self, path=None, **extra) -> str:
        text = json.dumps({**asdict(self), **extra}, indent=2, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def _distance(shape, npml, h, source: SourceSpec):
    """Distance in metres from every padded node to the snapped source node."""
    interior = tuple(n - 2 * npml for n in shape)
    s = np.asarray(source.node(interior, h)) + npml
    axes = [(np.arange(n) - s[i]) * h for i, n in enumerate(shape)]
    return np.sqrt(axes[0][:, None, None] ** 2 + axes[1][None, :, None] ** 2 + axes[2][None, None, :] ** 2)


def comparison_mask(shape, npml: int, h: float, source: SourceSpec, ball_cells: float = 2.0) -> np.ndarray:
    """True on interior nodes farther than ``ball_cells * h`` from the source."""
    mask = np.zeros(shape, dtype=bool)
    p = npml
    mask[p:shape[0] - p, p:shape[1] - p, p:shape[2] - p] = True
    mask &= _distance(shape, npml, h, source) > ball_cells * h * (1 + 1e-12)
    return mask


def error_metric(u_ref: ComplexField, u_test: ComplexField, source: SourceSpec,
                 mask: np.ndarray | None = None, ball_cells: float = 2.0) -> ErrorReport:
    """Gain-weighted relative l1 error of ``u_test`` against ``u_ref``.

    The default mask drops the PML pad and a ``ball_cells`` ball around the
    source.  A custom ``mask`` replaces it entirely.
    """
    if u_ref.shape != u_test.shape or u_ref.npml != u_test.npml:
        raise ValueError(f"field layouts differ: {u_ref.shape}/{u_ref.npml} vs {u_test.shape}/{u_test.npml}")
    if not np.isclose(u_ref.h, u_test.h, rtol=1e-12, atol=0):
        raise ValueError("fields have different grid spacing")
    if mask is None:
        mask = comparison_mask(u_ref.shape, u_ref.npml, u_ref.h, source, ball_cells)
    elif mask.shape != u_ref.shape:
        raise ValueError("mask shape differs from the fields")
    W = _distance(u_ref.shape, u_ref.npml, u_ref.h, source)[mask]
    ref = u_ref.values[mask]
    diff = ref - u_test.values[mask]
    parts = []
    for f in (np.real, np.imag):
        den = np.sum(np.abs(W * f(ref)))
        if not den > 0:
            raise DegenerateReferenceError("reference field is zero on the compared nodes")
        parts.append(float(np.sum(np.abs(W * f(diff))) / den))
    return ErrorReport(parts[0] + parts[1], parts[0], parts[1], int(mask.sum()),
                       int(mask.size - mask.sum()), float(ball_cells))


def line_profile(fld: ComplexField, source: SourceSpec, axis: int, through=None) -> np.ndarray:
    """Interior values along ``axis`` through a node (default: the source).

    Returns a record array with the coordinate along the line, the distance
    to the source and the raw and distance-scaled real/imaginary parts.
    """
    shape = fld.interior_shape
    node = source.node(shape, fld.h) if through is None else tuple(int(i) for i in through)
    idx = [slice(n, n + 1) for n in node]
    idx[axis] = slice(None)
    vals = fld.interior()[tuple(idx)].ravel()
    coord = np.arange(shape[axis]) * fld.h
    pos = np.tile(np.asarray(node, dtype=float) * fld.h, (shape[axis], 1))
    pos[:, axis] = coord
    dist = np.linalg.norm(pos - np.asarray(source.node(shape, fld.h)) * fld.h, axis=1)
    out = np.zeros(shape[axis], dtype=[(k, float) for k in
                                       ("coord_m", "distance_m", "re", "im", "re_gain", "im_gain")])
    out["coord_m"], out["distance_m"] = coord, dist
    out["re"], out["im"] = vals.real, vals.imag
    out["re_gain"], out["im_gain"] = vals.real * dist, vals.imag * dist
    return out


def write_line_profile(profile: np.ndarray, path) -> None:
    names = profile.dtype.names
    lines = [",".join(names)]
    lines += [",".join(f"{float(r[k]):.9g}" for k in names) for r in profile]
    Path(path).write_text("\n".join(lines) + "\n")
