"""Lattice Klein-Gordon solutions, support moving and first-order scattering.

The discrete operator used throughout is

    D_h phi = (phi^{n+1} - 2 phi^n + phi^{n-1}) / dt^2
              - (phi_{j+1} - 2 phi_j + phi_{j-1}) / dx^2
              + m^2 (phi^{n+1} + phi^{n-1}) / 2

with zero Dirichlet data outside the spatial window.  Averaging the mass
term over the outer time levels keeps the scheme stable at ``dt = dx``,
where the massless update is exact along characteristics.  Retarded
solutions start from two zero time slices, and advanced solutions are the
time reversal of a retarded solve.  Since every construction below uses
the same ``D_h``, the discrete identities (``Delta_h D_h (rho phi) = phi`` for
the support mover) hold to rounding error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .geometry import Point, Rect, RegionSet
from .smearing import (
    BumpSpec,
    DeltaKernel,
    QuadratureConfig,
    SampledFunction,
    SmearingFunction,
    delta_bilinear,
)


class LatticeError(ValueError):
    """Invalid lattice, window or source placement."""


@dataclass(frozen=True)
class Lattice:
    """Nodes ``(t0 + n dt, x0 + j dx)`` covering ``window``; nodes sit on integer multiples of the spacings."""

    dt: float
    dx: float
    window: Rect

    def __post_init__(self) -> None:
        if not (self.dt > 0 and self.dx > 0):
            raise LatticeError("lattice spacings must be positive")
        if self.dt > self.dx * (1.0 + 1e-12):
            raise LatticeError(f"CFL violation: dt = {self.dt} exceeds dx = {self.dx}")

    @classmethod
    def covering(
        cls,
        functions: Iterable[SmearingFunction],
        dx: float,
        dt: float | None = None,
        t_pad: float | None = None,
        x_pad: float | None = None,
        extra: Iterable[Rect] = (),
    ) -> "Lattice":
        """Window around the supports with a light-crossing margin in ``x``.

        With ``x_pad`` at least the window duration, Dirichlet reflections
        cannot return to the supports before the window ends.
        """
        rects = [fn.support() for fn in functions] + list(extra)
        if not rects:
            raise LatticeError("need at least one support to cover")
        t_lo = min(r.t_lo for r in rects)
        t_hi = max(r.t_hi for r in rects)
        x_lo = min(r.x_lo for r in rects)
        x_hi = max(r.x_hi for r in rects)
        t_pad = 4 * dx if t_pad is None else t_pad
        duration = t_hi - t_lo + 2 * t_pad
        x_pad = duration + 4 * dx if x_pad is None else x_pad
        return cls(dt or dx, dx, Rect(t_lo - t_pad, t_hi + t_pad, x_lo - x_pad, x_hi + x_pad))

    @property
    def i0(self) -> int:
        return math.floor(self.window.t_lo / self.dt + 1e-9)

    @property
    def j0(self) -> int:
        return math.floor(self.window.x_lo / self.dx + 1e-9)

    @property
    def shape(self) -> tuple[int, int]:
        nt = math.ceil(self.window.t_hi / self.dt - 1e-9) - self.i0 + 1
        nx = math.ceil(self.window.x_hi / self.dx - 1e-9) - self.j0 + 1
        return nt, nx

    @property
    def t(self) -> np.ndarray:
        return (self.i0 + np.arange(self.shape[0])) * self.dt

    @property
    def x(self) -> np.ndarray:
        return (self.j0 + np.arange(self.shape[1])) * self.dx

    @property
    def origin(self) -> Point:
        return Point(self.i0 * self.dt, self.j0 * self.dx)

    def sample(self, fn: SmearingFunction) -> np.ndarray:
        """Values of ``fn`` on the lattice nodes; aligned sampled functions are copied exactly."""
        nt, nx = self.shape
        if isinstance(fn, SampledFunction) and math.isclose(fn.spacing, self.dx) and math.isclose(self.dt, self.dx):
            si = (fn.origin.t - self.origin.t) / self.dt
            sj = (fn.origin.x - self.origin.x) / self.dx
            if abs(si - round(si)) < 1e-6 and abs(sj - round(sj)) < 1e-6:
                si, sj = int(round(si)), int(round(sj))
                out = np.zeros((nt, nx))
                a, b = fn.shape
                if si < 0 or sj < 0 or si + a > nt or sj + b > nx:
                    if np.any(fn.values):
                        raise LatticeError("sampled function extends beyond the lattice window")
                out[si : si + a, sj : sj + b] = fn.values
                return out
        return np.asarray(fn.evaluate(self.t[:, None], self.x[None, :]), dtype=float)

    def slab_rows(self, t1: float, t2: float) -> np.ndarray:
        tt = self.t
        return np.nonzero((tt >= t1 - 1e-12) & (tt <= t2 + 1e-12))[0]


@dataclass(frozen=True, eq=False)
class LatticeField:
    values: np.ndarray
    lattice: Lattice

    def __post_init__(self) -> None:
        if self.values.shape != self.lattice.shape:
            raise LatticeError("field shape does not match its lattice")
        if not np.all(np.isfinite(self.values)):
            raise LatticeError("field has non-finite values")

    def __add__(self, other: "LatticeField") -> "LatticeField":
        return LatticeField(self.values + other.values, self.lattice)

    def __sub__(self, other: "LatticeField") -> "LatticeField":
        return LatticeField(self.values - other.values, self.lattice)

    def __mul__(self, s: float) -> "LatticeField":
        return LatticeField(self.values * s, self.lattice)

    __rmul__ = __mul__

    def as_sampled(self) -> SampledFunction:
        if not math.isclose(self.lattice.dt, self.lattice.dx):
            raise LatticeError("sampled functions need dt = dx")
        return SampledFunction(self.lattice.origin, self.lattice.dx, self.values)


@dataclass(frozen=True)
class WindowSpec:
    """Temporal transition ``[t1, t2]`` of a smoothstep ramp from 0 to 1."""

    t1: float
    t2: float

    def __post_init__(self) -> None:
        if not self.t1 < self.t2:
            raise LatticeError("window needs t1 < t2")

    def ramp(self, t: np.ndarray) -> np.ndarray:
        u = np.clip((np.asarray(t, dtype=float) - self.t1) / (self.t2 - self.t1), 0.0, 1.0)
        return u * u * (3.0 - 2.0 * u)


@dataclass(frozen=True)
class InteractionSpec:
    """Coupling ``kappa * chi * phi^2`` switched on inside the support ``L`` of ``chi``."""

    kappa: float
    chi: BumpSpec

    def __post_init__(self) -> None:
        if not math.isfinite(self.kappa):
            raise LatticeError("kappa must be finite")


def _laplacian(row: np.ndarray) -> np.ndarray:
    padded = np.pad(row, 1)
    return padded[2:] - 2.0 * row + padded[:-2]


def _check_source(F: np.ndarray) -> None:
    if np.any(F[:2]) or np.any(F[-2:]):
        raise LatticeError("source reaches the first or last two time slices; enlarge the window")


def _leapfrog(F: np.ndarray, m: float, lat: Lattice) -> np.ndarray:
    nt, nx = F.shape
    dt2, dx2 = lat.dt ** 2, lat.dx ** 2
    c = 1.0 / dt2 + 0.5 * m * m
    phi = np.zeros((nt, nx))
    for n in range(1, nt - 1):
        phi[n + 1] = (F[n] + 2.0 * phi[n] / dt2 + _laplacian(phi[n]) / dx2 - c * phi[n - 1]) / c
    return phi


def apply_operator(phi: np.ndarray, m: float, lat: Lattice) -> np.ndarray:
    """``D_h phi`` on interior time rows; the first and last rows are left at zero."""
    out = np.zeros_like(phi)
    dt2, dx2 = lat.dt ** 2, lat.dx ** 2
    prev, cur, nxt = phi[:-2], phi[1:-1], phi[2:]
    padded = np.pad(cur, ((0, 0), (1, 1)))
    lap = padded[:, 2:] - 2.0 * cur + padded[:, :-2]
    out[1:-1] = (nxt - 2.0 * cur + prev) / dt2 - lap / dx2 + 0.5 * m * m * (nxt + prev)
    return out


def solve_retarded(f: SmearingFunction, m: float, lat: Lattice) -> LatticeField:
    F = lat.sample(f)
    _check_source(F)
    return LatticeField(_leapfrog(F, m, lat), lat)


def solve_advanced(f: SmearingFunction, m: float, lat: Lattice) -> LatticeField:
    F = lat.sample(f)
    _check_source(F)
    return LatticeField(_leapfrog(F[::-1], m, lat)[::-1].copy(), lat)


def _solve_array(F: np.ndarray, m: float, lat: Lattice, advanced: bool = False) -> np.ndarray:
    _check_source(F)
    if advanced:
        return _leapfrog(F[::-1], m, lat)[::-1].copy()
    return _leapfrog(F, m, lat)


def generate_solution(f: SmearingFunction, m: float, lat: Lattice) -> LatticeField:
    """``Delta f = phi_R - phi_A``, the homogeneous solution generated by ``f``."""
    F = lat.sample(f)
    return LatticeField(_solve_array(F, m, lat) - _solve_array(F, m, lat, advanced=True), lat)


def lattice_delta(f: SmearingFunction, g: SmearingFunction, m: float, lat: Lattice) -> float:
    """Lattice oracle for ``Delta(f, g) = sum f * (Delta g) dt dx``."""
    return float(np.sum(lat.sample(f) * generate_solution(g, m, lat).values) * lat.dt * lat.dx)


def discrete_energy(phi: np.ndarray, m: float, lat: Lattice) -> np.ndarray:
    """Energy between consecutive slices; conserved exactly on source-free rows."""
    dt2, dx2 = lat.dt ** 2, lat.dx ** 2
    a, b = phi[:-1], phi[1:]
    da = np.diff(np.pad(a, ((0, 0), (1, 1))), axis=1)
    db = np.diff(np.pad(b, ((0, 0), (1, 1))), axis=1)
    e = (
        ((b - a) ** 2).sum(axis=1) / (2.0 * dt2)
        + 0.25 * m * m * (a ** 2 + b ** 2).sum(axis=1)
        + (da * db).sum(axis=1) / (2.0 * dx2)
    )
    return e * lat.dx


def _require_square(lat: Lattice) -> None:
    if not math.isclose(lat.dt, lat.dx):
        raise LatticeError("support moving produces sampled functions and needs dt = dx")


def _moved_source(phi: np.ndarray, m: float, lat: Lattice, w: WindowSpec) -> np.ndarray:
    tt = lat.t
    if w.t1 <= tt[1] or w.t2 >= tt[-2]:
        raise LatticeError("the slab must lie strictly inside the lattice window")
    rows = lat.slab_rows(w.t1, w.t2)
    if len(rows) < 2:
        raise LatticeError("the slab must contain at least two lattice rows")
    # ramp between the first and last rows inside the slab, so D_h(rho phi)
    # vanishes identically on every row outside it
    inner = WindowSpec(float(tt[rows[0]]), float(tt[rows[-1]]))
    rho = inner.ramp(tt)[:, None]
    g = apply_operator(rho * phi, m, lat)
    keep = np.zeros(len(tt), dtype=bool)
    keep[rows] = True
    g[~keep] = 0.0
    return g


def _crop(values: np.ndarray, lat: Lattice) -> SampledFunction:
    nz = np.nonzero(values)
    if nz[0].size == 0:
        return SampledFunction(lat.origin, lat.dx, np.zeros((1, 1)))
    i0, i1 = nz[0].min(), nz[0].max()
    j0, j1 = nz[1].min(), nz[1].max()
    origin = Point(float(lat.t[i0]), float(lat.x[j0]))
    return SampledFunction(origin, lat.dx, values[i0 : i1 + 1, j0 : j1 + 1])


def move_support(f: SmearingFunction, m: float, lat: Lattice, w: WindowSpec) -> SampledFunction:
    """Equivalent smearing function ``g = D_h(rho phi)`` supported in the slab ``[t1, t2]``.

    ``phi`` is the solution generated by ``f`` and ``rho`` is the window's
    ramp, so ``Delta_h g = phi``.
    """
    _require_square(lat)
    phi = generate_solution(f, m, lat).values
    return _crop(_moved_source(phi, m, lat, w), lat)


@dataclass(frozen=True, eq=False)
class ScatterResult:
    h0: SampledFunction
    h1: SampledFunction
    kappa: float

    @property
    def h(self) -> SampledFunction:
        return _combine(self.h0, self.h1, self.kappa)


def _combine(a: SampledFunction, b: SampledFunction, kappa: float) -> SampledFunction:
    if kappa == 0.0 or not np.any(b.values):
        return a
    h = a.spacing
    t0 = min(a.origin.t, b.origin.t)
    x0 = min(a.origin.x, b.origin.x)

    def offs(s: SampledFunction) -> tuple[int, int]:
        return int(round((s.origin.t - t0) / h)), int(round((s.origin.x - x0) / h))

    (ai, aj), (bi, bj) = offs(a), offs(b)
    nt = max(ai + a.shape[0], bi + b.shape[0])
    nx = max(aj + a.shape[1], bj + b.shape[1])
    out = np.zeros((nt, nx))
    out[ai : ai + a.shape[0], aj : aj + a.shape[1]] += a.values
    out[bi : bi + b.shape[0], bj : bj + b.shape[1]] += kappa * b.values
    return SampledFunction(Point(t0, x0), h, out)


def scatter_first_order(
    f: SmearingFunction,
    m: float,
    lat: Lattice,
    interaction: InteractionSpec,
    w: WindowSpec,
    return_parts: bool = False,
):
    """Out-region smearing function ``h = h0 + kappa h1`` to first order in ``kappa``.

    ``phi0`` is generated by ``f``; ``phi1`` is the retarded response to
    ``chi phi0^2``; both are moved into the slab after the interaction region.
    """
    _require_square(lat)
    L = interaction.chi.support()
    if w.t1 <= L.t_hi:
        raise LatticeError("the slab must lie after the interaction region (it meets J^-(L))")
    phi0 = generate_solution(f, m, lat).values
    chi = lat.sample(interaction.chi)
    phi1 = _solve_array(chi * phi0 ** 2, m, lat)
    h0 = _crop(_moved_source(phi0, m, lat, w), lat)
    h1 = _crop(_moved_source(phi1, m, lat, w), lat)
    result = ScatterResult(h0, h1, interaction.kappa)
    return result if return_parts else result.h


def effective_delta(
    h: SmearingFunction,
    g: SmearingFunction,
    q: QuadratureConfig | None = None,
    mass: float = 0.0,
) -> float:
    """``Delta(h, g)`` with the free kernel, standing in for ``Delta(f, g)`` after scattering."""
    return delta_bilinear(h, g, q, DeltaKernel(mass))
