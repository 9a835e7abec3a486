"""Analytic cavity spectrum and the semi-analytic waveguide pulse."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import special


@dataclass(frozen=True)
class CavitySpec:
    a: float = np.pi
    b: float = np.pi / 2
    c: float = np.pi / 4
    max_index: int = 40

    def __post_init__(self):
        if min(self.a, self.b, self.c) <= 0:
            raise ValueError("cavity side lengths must be positive")


def cavity_eigenvalues(spec: CavitySpec, count: int) -> np.ndarray:
    """Smallest ``count`` resonances ``k^2`` of the perfectly conducting box, with multiplicity.

    TM modes need ``m, n >= 1``; TE modes need ``p >= 1`` and ``(m, n) != (0, 0)``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    M = spec.max_index
    r = np.arange(M + 1)
    m, n, p = np.meshgrid(r, r, r, indexing="ij")
    k2 = (m * np.pi / spec.a) ** 2 + (n * np.pi / spec.b) ** 2 + (p * np.pi / spec.c) ** 2
    tm = (m >= 1) & (n >= 1)
    te = (p >= 1) & ((m + n) > 0)
    vals = np.sort(np.concatenate([k2[tm], k2[te]]))
    # the truncation is safe below the smallest value with an index equal to M + 1
    bound = (M + 1) ** 2 * min((np.pi / spec.a) ** 2, (np.pi / spec.b) ** 2, (np.pi / spec.c) ** 2)
    if count > np.count_nonzero(vals < bound):
        raise ValueError("max_index too small for the requested count")
    return vals[:count]


def cavity_mode_tm(spec: CavitySpec, m: int, n: int):
    """``E = (0, 0, sin(m pi x / a) sin(n pi y / b))`` and ``H = curl E`` (unnormalised)."""
    kx, ky = m * np.pi / spec.a, n * np.pi / spec.b

    def E(x):
        x = np.atleast_2d(x)
        out = np.zeros_like(x)
        out[:, 2] = np.sin(kx * x[:, 0]) * np.sin(ky * x[:, 1])
        return out

    def H(x):
        x = np.atleast_2d(x)
        out = np.zeros_like(x)
        out[:, 0] = ky * np.sin(kx * x[:, 0]) * np.cos(ky * x[:, 1])
        out[:, 1] = -kx * np.cos(kx * x[:, 0]) * np.sin(ky * x[:, 1])
        return out

    return E, H


def bessel_j1(x):
    """Bessel function of the first kind, order one."""
    return special.j1(x)


def e0_default(t):
    """Incoming pulse ``exp(-5 (1 - t)^2) sin(10 t)``, zero for ``t <= 0``."""
    t = np.asarray(t, dtype=float)
    return np.where(t > 0, np.exp(-5.0 * (1.0 - t) ** 2) * np.sin(10.0 * t), 0.0)


@dataclass(frozen=True)
class WaveguideSpec:
    lx: float = 2.0
    ly: float = 0.5
    lz: float = 0.5
    e0: Callable = field(default=e0_default)
    tol: float = 1e-10

    def __post_init__(self):
        if self.ly <= 0:
            raise ValueError("ly must be positive")

    @property
    def kc(self) -> float:
        return np.pi / self.ly


_GX, _GW = leggauss(16)


def _kernel(spec: WaveguideSpec, t: float, x: float, tau: np.ndarray) -> np.ndarray:
    r = np.sqrt(np.maximum(tau * tau - x * x, 0.0))
    z = spec.kc * r
    # J1(z) / z is analytic with value 1/2 at z = 0
    small = z < 1e-8
    ratio = np.where(small, 0.5 - z * z / 16.0, bessel_j1(np.where(small, 1.0, z)) / np.where(small, 1.0, z))
    return spec.e0(t - tau) * spec.kc**2 * x * ratio


def _panel(spec, t, x, a, b):
    tau = 0.5 * (b - a) * _GX + 0.5 * (a + b)
    return 0.5 * (b - a) * np.dot(_GW, _kernel(spec, t, x, tau))


def waveguide_reference(spec: WaveguideSpec, t: float, x: float, max_depth: int = 40) -> tuple[float, float]:
    """``e(t, x)`` and the estimated quadrature error.

    ``e = e0(t - x) - int_x^t e0(t - tau) k x J1(k r) / r dtau`` with
    ``k = pi / ly`` and ``r = sqrt(tau^2 - x^2)``; zero for ``t < x``.  The
    integral uses adaptive 16-point Gauss panels (a panel is accepted when
    it agrees with its two halves to the tolerance share of its length).
    """
    if t < x:
        return 0.0, 0.0
    if x == 0.0 or t == x:
        # no convolution at the boundary, empty integration interval on the front
        return float(spec.e0(t - x)), 0.0
    total = 0.0
    err = 0.0
    # the pulse only lives on t - tau > 0, i.e. the whole interval; seed with unit panels
    edges = np.linspace(x, t, max(2, int(np.ceil(t - x)) * 4 + 1))
    stack = [(edges[i], edges[i + 1], 0) for i in range(len(edges) - 1)]
    L = t - x
    while stack:
        a, b, depth = stack.pop()
        whole = _panel(spec, t, x, a, b)
        m = 0.5 * (a + b)
        halves = _panel(spec, t, x, a, m) + _panel(spec, t, x, m, b)
        diff = abs(whole - halves)
        if diff <= spec.tol * (b - a) / L or depth >= max_depth:
            if depth >= max_depth and diff > spec.tol * (b - a) / L:
                raise RuntimeError(f"quadrature tolerance not met at t={t}, x={x}")
            total += halves
            err += diff
        else:
            stack.append((a, m, depth + 1))
            stack.append((m, b, depth + 1))
    return float(spec.e0(t - x)) - total, err


def waveguide_reference_grid(spec: WaveguideSpec, t: float, xs: np.ndarray, npts: int = 400) -> np.ndarray:
    """Vectorised ``e(t, x)`` for many ``x`` with a fixed composite Gauss rule.

    Intended for dense sampling (error norms); agrees with
    :func:`waveguide_reference` to about its tolerance for smooth pulses.
    """
    xs = np.asarray(xs, dtype=float)
    out = np.zeros_like(xs)
    live = xs <= t
    if not live.any():
        return out
    xl = xs[live]
    npan = max(4, npts // 16)
    u = np.linspace(0.0, 1.0, npan + 1)
    # tau = x + (t - x) s, s in [0, 1]
    s = (0.5 * (u[1:] - u[:-1])[:, None] * _GX[None, :] + 0.5 * (u[1:] + u[:-1])[:, None]).ravel()
    w = (0.5 * (u[1:] - u[:-1])[:, None] * _GW[None, :]).ravel()
    tau = xl[:, None] + (t - xl)[:, None] * s[None, :]
    r = np.sqrt(np.maximum(tau * tau - xl[:, None] ** 2, 0.0))
    z = spec.kc * r
    small = z < 1e-8
    zs = np.where(small, 1.0, z)
    ratio = np.where(small, 0.5 - z * z / 16.0, bessel_j1(zs) / zs)
    kern = spec.e0(t - tau) * spec.kc**2 * xl[:, None] * ratio
    integral = (t - xl) * (kern @ w)
    out[live] = spec.e0(t - xl) - np.where(xl > 0, integral, 0.0)
    return out


def waveguide_field(spec: WaveguideSpec, t: float, x, y, z=None) -> np.ndarray:
    """``(0, 0, e(t, x) sin(pi y / ly))``; arrays are broadcast."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    e = waveguide_reference_grid(spec, t, x)
    out = np.zeros(np.broadcast(x, y).shape + (3,))
    out[..., 2] = e * np.sin(np.pi * y / spec.ly)
    return out


def dump_reference_csv(path, spec: WaveguideSpec, times, xs) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "e"])
        for t in times:
            for x, v in zip(xs, waveguide_reference_grid(spec, t, xs)):
                w.writerow([repr(float(t)), repr(float(x)), repr(float(v))])
