"""Reference wavefields: the free-space Green's function and a convergent
Born series (CBS) solver for heterogeneous constant-density media.

Both solve ``(laplacian + k(x)**2) u = amplitude * delta(x - x_s)`` with
``k = omega / c`` and the ``exp(-i omega t)`` convention, so the outgoing
free-space solution is ``-amplitude * exp(i k r) / (4 pi r)``.

CBS details
-----------
The point source is handled by singularity subtraction: with a smooth radial
window ``chi`` (``erfc`` profile, equal to one near the source) the field is
split as ``u = chi * G_s + u_reg`` where ``G_s`` is the free-space solution at
the source wavenumber ``k_s``.  The remainder obeys

    (laplacian + k**2 + i*alpha) u_reg = -(chi*(k**2 + i*alpha - k_s**2)*G_s
                                           + 2 grad(chi).grad(G_s) + lap(chi)*G_s)

whose right-hand side is smooth, so the FFT Laplacian resolves it.  The model
is embedded in a periodic box whose pad carries an absorbing term
``i*alpha(x)`` rising smoothly from zero; the pad wavespeed repeats the
nearest model value.  ``k0**2`` is the midpoint of the (complex) range of
``k**2 + i*alpha`` and ``eps`` exceeds the largest deviation from it, which
makes the preconditioned Born iteration a contraction.  The box may be
oversampled by an integer factor to give the spectral Laplacian headroom at
coarse sampling; the result is read back on the model nodes.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
import scipy.special as ssp
from scipy.ndimage import map_coordinates

from .model import ComplexField, SourceSpec, VelocityModel

__all__ = ["CbsConfig", "CbsResult", "CbsNotConverged", "analytic_homogeneous", "cbs_solve", "greens_function"]


def greens_function(r, k: complex, amplitude: complex = 1.0):
    """Outgoing solution of ``(laplacian + k**2) u = amplitude * delta``."""
    r = np.asarray(r, dtype=float)
    return -amplitude * np.exp(1j * k * r) / (4.0 * np.pi * r)


def _node_distance(shape, h, node):
    ax = [(np.arange(n) - node[i]) * h for i, n in enumerate(shape)]
    return np.sqrt(ax[0][:, None, None] ** 2 + ax[1][None, :, None] ** 2 + ax[2][None, None, :] ** 2)


def analytic_homogeneous(shape, h: float, c0: float, freq: float, source: SourceSpec,
                         npml: int = 0) -> ComplexField:
    """Free-space field sampled on an interior grid plus ``npml`` pad cells.

    The source node takes the value at radius ``h / 4``.
    """
    if not (c0 > 0 and freq > 0):
        raise ValueError("wavespeed and frequency must be positive")
    shape = tuple(int(n) for n in shape)
    node = np.asarray(source.node(shape, h)) + npml
    padded = tuple(n + 2 * npml for n in shape)
    r = np.maximum(_node_distance(padded, h, node), 0.25 * h)
    vals = greens_function(r, 2.0 * np.pi * freq / c0, source.amplitude)
    return ComplexField(vals, h, npml, freq, {"reference": "analytic"})


@dataclass(frozen=True)
class CbsConfig:
    """Settings of the Born-series oracle.

    ``pad`` is the absorbing thickness in model cells (``None``: enough for
    ``pad_wavelengths`` of the longest wavelength found on the model's outer
    faces, which is what the edge-replicated pad holds).  The absorption
    ``alpha`` rises as ``(depth / pad)**ramp_power`` to ``absorption *
    Re(k**2)``.  ``refine`` oversamples the model grid.  ``window_width`` is
    the ``erfc`` width of the source window in model cells and
    ``window_flat`` the window radius in widths.
    """

    tol: float = 1e-12
    max_iters: int = 50000
    pad: int | None = None
    pad_wavelengths: float = 4.0
    absorption: float = 2.0
    ramp_power: float = 4.0
    eps_factor: float = 1.3
    refine: int = 1
    window_width: float = 3.0
    window_flat: float = 4.0
    check_every: int = 10
    workers: int | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1 or self.refine < 1 or self.check_every < 1:
            raise ValueError("max_iters, refine and check_every must be positive")
        if self.pad is not None and self.pad < 1:
            raise ValueError("pad must be at least one cell")
        if not self.eps_factor >= 1:
            raise ValueError("eps_factor must be >= 1 for a convergent series")
        if not (self.absorption > 0 and self.ramp_power > 0 and self.window_width > 0
                and self.window_flat > 0):
            raise ValueError("absorption and window parameters must be positive")


@dataclass
class CbsResult:
    field: ComplexField
    iterations: int
    backward_error: float
    history: list = field(default_factory=list)
    eps: float = 0.0
    k0_sq: complex = 0.0
    pad: int = 0
    wall_time: float = 0.0

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "backward_error": self.backward_error,
            "eps": self.eps,
            "k0_sq": [self.k0_sq.real, self.k0_sq.imag],
            "pad_cells": self.pad,
            "wall_time_s": self.wall_time,
        }


class CbsNotConverged(ArithmeticError):
    def __init__(self, result: CbsResult, tol: float):
        super().__init__(
            f"CBS stopped after {result.iterations} iterations at backward error "
            f"{result.backward_error:.3e} > {tol:.1e}"
        )
        self.result = result


def _absorption_profile(n_int, pad, q, power):
    """Per-axis ramp ``(depth / pad)**power`` on the oversampled box."""
    t = np.arange((n_int + 2 * pad) * q) / q
    depth = np.maximum(np.maximum(pad - t, t - (pad + n_int - 1)), 0.0) / pad
    return np.minimum(depth, 1.0) ** power


def _window(r, width, r0):
    """``chi`` and its first two radial derivatives."""
    x = (r - r0) / width
    chi = 0.5 * ssp.erfc(x)
    g = np.exp(-x * x) / (np.sqrt(np.pi) * width)
    return chi, -g, 2.0 * x / width * g


def cbs_solve(model: VelocityModel, freq: float, source: SourceSpec, cfg: CbsConfig | None = None,
              npml: int = 0, raise_on_failure: bool = True) -> CbsResult:
    """Convergent Born series solution read back on the model nodes.

    The returned field uses the layout of a PML-padded FDFD field with
    ``npml`` pad cells; pad entries are zero (they are not modelled).
    """
    cfg = cfg or CbsConfig()
    if not freq > 0:
        raise ValueError("frequency must be positive")
    if not model.has_unit_buoyancy:
        raise ValueError("the CBS oracle handles constant unit buoyancy only")
    t_start = time.perf_counter()
    q, h = cfg.refine, model.h
    hf = h / q
    omega = 2.0 * np.pi * freq
    if cfg.pad is None:
        c_face = max(float(np.take(model.c, i, axis=a).max()) for a in range(3) for i in (0, -1))
        pad = int(np.ceil(cfg.pad_wavelengths * c_face / freq / h))
    else:
        pad = cfg.pad

    c_pad = np.pad(model.c, pad, mode="edge")
    shape = tuple(n * q for n in c_pad.shape)
    if q > 1:
        # trilinear resampling; coarse node i sits on fine index q*i
        coords = np.meshgrid(*(np.arange(n) / q for n in shape), indexing="ij")
        c_box = map_coordinates(c_pad, coords, order=1, mode="nearest")
    else:
        c_box = c_pad
    k2 = (omega / c_box) ** 2
    prof = [_absorption_profile(n, pad, q, cfg.ramp_power) for n in model.shape]
    ramp = 1.0 - (1.0 - prof[0])[:, None, None] * (1.0 - prof[1])[None, :, None] * (1.0 - prof[2])[None, None, :]
    k2 = k2 + 1j * cfg.absorption * k2.real * ramp

    lo = complex(k2.real.min(), k2.imag.min())
    hi = complex(k2.real.max(), k2.imag.max())
    k0_sq = 0.5 * (lo + hi)
    eps = cfg.eps_factor * float(np.abs(k2 - k0_sq).max())
    eps = max(eps, 1e-3 * abs(k0_sq))
    V = k2 - k0_sq - 1j * eps

    node_c = np.asarray(source.node(model.shape, h))
    node_f = (node_c + pad) * q
    r = _node_distance(shape, hf, node_f)
    k_s = omega / float(model.c[tuple(node_c)])
    width = cfg.window_width * h
    chi, d1, d2 = _window(r, width, cfg.window_flat * width)
    rs = np.where(r > 0, r, 1.0)
    Gs = greens_function(rs, k_s, source.amplitude)
    dGs = -source.amplitude * np.exp(1j * k_s * rs) * (1j * k_s * rs - 1.0) / (4.0 * np.pi * rs**2)
    lap_chi = d2 + 2.0 * d1 / rs
    f_reg = -(2.0 * d1 * dGs + lap_chi * Gs + chi * (k2 - k_s**2) * Gs)
    f_reg[tuple(node_f)] = 0.0  # chi is flat there; every term vanishes in the limit
    fnorm = float(np.linalg.norm(f_reg))

    p = [2.0 * np.pi * sfft.fftfreq(n, hf) for n in shape]
    P2 = p[0][:, None, None] ** 2 + p[1][None, :, None] ** 2 + p[2][None, None, :] ** 2
    Ghat = 1.0 / (P2 - k0_sq - 1j * eps)
    gamma = (1j / eps) * V
    S = -f_reg
    w = cfg.workers

    def backward_error(psi):
        lap = sfft.ifftn(-P2 * sfft.fftn(psi, workers=w), workers=w)
        return float(np.linalg.norm(lap + k2 * psi - f_reg) / fnorm)

    psi = np.zeros(shape, dtype=complex)
    history = []
    be = 1.0
    it = 0
    if fnorm > 0:
        for it in range(1, cfg.max_iters + 1):
            upd = sfft.ifftn(Ghat * sfft.fftn(V * psi + S, workers=w), workers=w)
            upd -= psi
            psi += gamma * upd
            if it % cfg.check_every == 0 or it == cfg.max_iters:
                be = backward_error(psi)
                history.append((it, be))
                if be <= cfg.tol:
                    break
    else:
        be = 0.0

    r_safe = np.where(r > 0, r, 0.25 * h)
    u = chi * greens_function(r_safe, k_s, source.amplitude) + psi
    sl = tuple(slice(pad * q, pad * q + (n - 1) * q + 1, q) for n in model.shape)
    vals = np.zeros(tuple(n + 2 * npml for n in model.shape), dtype=complex)
    vals[tuple(slice(npml, npml + n) for n in model.shape)] = u[sl]
    fld = ComplexField(vals, h, npml, freq, {"reference": "cbs", "backward_error": be})
    res = CbsResult(fld, it, be, history, eps, k0_sq, pad, time.perf_counter() - t_start)
    if be > cfg.tol and raise_on_failure:
        raise CbsNotConverged(res, cfg.tol)
    return res
