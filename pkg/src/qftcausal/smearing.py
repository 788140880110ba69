"""Test functions, the Pauli-Jordan function and the vacuum covariance.

Sign convention
---------------
``Delta = G_R - G_A`` where ``(d_t^2 - d_x^2 + m^2) G = delta``.  With this
choice ``Delta(x, y) = +1/2`` for massless fields when ``x`` lies in the
future of ``y``.  The lattice solver in :mod:`qftcausal.classical` reproduces
the sign independently, and the imaginary part of the vacuum two-point
function equals ``Delta(f, g) / 2``, which the tests also check.

Quadrature
----------
Smeared values are computed on a global midpoint lattice whose cell centres
sit at ``(i + 1/2) h``.  Differences between cell centres are then lattice
vectors, so the kernel only has to be tabulated on integer offsets and the
double integral becomes a cross-correlation times a kernel table.  Offsets
that are exactly lightlike get half the interior weight and the coincident
offset gets zero; this is the trapezoid treatment of the jump across the
cone and keeps the rule antisymmetric and second order.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np
from scipy import integrate, signal, special

from .geometry import Point, Rect, RegionSet, strictly_spacelike


class SmearingError(ValueError):
    """Invalid smearing function or pairing request."""


class QuadratureError(RuntimeError):
    """Richardson refinement did not reach the requested tolerance."""

    def __init__(self, message: str, estimates: tuple[float, float]):
        super().__init__(f"{message} (last two estimates: {estimates[0]!r}, {estimates[1]!r})")
        self.estimates = estimates


# ---------------------------------------------------------------------------
# Smearing functions
# ---------------------------------------------------------------------------

BUMP_KINDS = ("cosine_bump", "truncated_gaussian")


@dataclass(frozen=True)
class BumpSpec:
    """Product bump on the square of half-width ``half_width`` around ``center``.

    ``cosine_bump`` is ``A * c(u_t) * c(u_x)`` with ``c(u) = (1 + cos(pi u / a)) / 2``,
    which is C^1 across the edge of the square.  ``truncated_gaussian`` is
    ``A * exp(-(u_t^2 + u_x^2) / (2 w^2))`` with ``w = a / 2``, cut to zero
    outside the square.
    """

    center: Point
    half_width: float
    amplitude: float = 1.0
    kind: str = "cosine_bump"

    def __post_init__(self) -> None:
        if not isinstance(self.center, Point):
            object.__setattr__(self, "center", Point(*self.center))
        if not (self.half_width > 0.0 and math.isfinite(self.half_width)):
            raise SmearingError(f"half_width must be positive, got {self.half_width!r}")
        if not math.isfinite(self.amplitude):
            raise SmearingError("amplitude must be finite")
        if self.kind not in BUMP_KINDS:
            raise SmearingError(f"unknown bump kind {self.kind!r}; expected one of {BUMP_KINDS}")

    def support(self) -> Rect:
        return Rect.square(self.center, self.half_width)

    def region(self) -> RegionSet:
        return RegionSet([self.support()])

    def profile(self, u: np.ndarray) -> np.ndarray:
        """One-dimensional factor as a function of the offset ``u``."""
        a = self.half_width
        u = np.asarray(u, dtype=float)
        inside = np.abs(u) <= a
        if self.kind == "cosine_bump":
            val = 0.5 * (1.0 + np.cos(np.pi * u / a))
        else:
            w = 0.5 * a
            val = np.exp(-0.5 * (u / w) ** 2)
        return np.where(inside, val, 0.0)

    def evaluate(self, t: np.ndarray, x: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        return self.amplitude * self.profile(t - self.center.t) * self.profile(x - self.center.x)

    def profile_transform(self, kappa: np.ndarray) -> np.ndarray:
        """``B(kappa) = int profile(u) exp(i kappa u) du`` (real, even)."""
        a = self.half_width
        kappa = np.asarray(kappa, dtype=float)
        if self.kind == "cosine_bump":
            z = kappa * a / np.pi
            return a * (np.sinc(z) + 0.5 * np.sinc(z + 1.0) + 0.5 * np.sinc(z - 1.0))
        # int_{-a}^{a} exp(-u^2 / 2w^2 + i kappa u) du via the Faddeeva function,
        # which stays finite where the plain complex erf would overflow
        s = a / math.sqrt(2.0)  # w * sqrt(2) with w = a / 2
        A = a / s
        B = 0.5 * kappa * s
        ph = np.exp(-2j * A * B)
        inner = 2.0 * np.exp(-B * B) - math.exp(-A * A) * (
            ph * special.wofz(-B + 1j * A) + np.conj(ph) * special.wofz(B + 1j * A)
        )
        return 0.5 * s * math.sqrt(math.pi) * inner.real

    def fourier(self, omega: np.ndarray, k: np.ndarray) -> np.ndarray:
        """``F(omega, k) = int f(t, x) exp(i (omega t - k x)) dt dx``."""
        omega = np.asarray(omega, dtype=float)
        k = np.asarray(k, dtype=float)
        phase = np.exp(1j * (omega * self.center.t - k * self.center.x))
        return self.amplitude * phase * self.profile_transform(omega) * self.profile_transform(k)

    def l1_norm(self) -> float:
        a = self.half_width
        if self.kind == "cosine_bump":
            one = a
        else:
            w = 0.5 * a
            one = w * math.sqrt(2.0 * math.pi) * math.erf(a / (w * math.sqrt(2.0)))
        return abs(self.amplitude) * one * one


def eval_bump(spec: BumpSpec, p: Point) -> float:
    return float(spec.evaluate(p.t, p.x))


_HEADER = "# qftcausal sampled function v1"


@dataclass(frozen=True, eq=False)
class SampledFunction:
    """Values on nodes ``(origin.t + i h, origin.x + j h)``; ``values[i, j]``."""

    origin: Point
    spacing: float
    values: np.ndarray

    def __post_init__(self) -> None:
        if not isinstance(self.origin, Point):
            object.__setattr__(self, "origin", Point(*self.origin))
        if not (self.spacing > 0.0 and math.isfinite(self.spacing)):
            raise SmearingError(f"spacing must be positive, got {self.spacing!r}")
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] < 1 or vals.shape[1] < 1:
            raise SmearingError("values must be a non-empty 2-D array")
        if not np.all(np.isfinite(vals)):
            raise SmearingError("values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SampledFunction):
            return NotImplemented
        return (
            self.origin == other.origin
            and self.spacing == other.spacing
            and self.values.shape == other.values.shape
            and bool(np.array_equal(self.values, other.values))
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]

    def node_coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        nt, nx = self.shape
        t = self.origin.t + self.spacing * np.arange(nt)
        x = self.origin.x + self.spacing * np.arange(nx)
        return t, x

    def nonzero_bounds(self) -> tuple[int, int, int, int] | None:
        nz = np.nonzero(self.values)
        if nz[0].size == 0:
            return None
        return int(nz[0].min()), int(nz[0].max()), int(nz[1].min()), int(nz[1].max())

    def support(self) -> Rect:
        """Bounding box of the nonzero nodes, padded by half a cell."""
        b = self.nonzero_bounds()
        if b is None:
            raise SmearingError("sampled function is identically zero")
        h = self.spacing
        return Rect(
            self.origin.t + (b[0] - 0.5) * h,
            self.origin.t + (b[1] + 0.5) * h,
            self.origin.x + (b[2] - 0.5) * h,
            self.origin.x + (b[3] + 0.5) * h,
        )

    def region(self) -> RegionSet:
        return RegionSet([self.support()])

    def evaluate(self, t: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Bilinear interpolation; zero outside the node grid."""
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        nt, nx = self.shape
        ft = (t - self.origin.t) / self.spacing
        fx = (x - self.origin.x) / self.spacing
        i0 = np.floor(ft).astype(int)
        j0 = np.floor(fx).astype(int)
        wt = ft - i0
        wx = fx - j0
        padded = np.pad(self.values, 1)
        out = np.zeros(np.broadcast(t, x).shape)
        for di, a in ((0, 1.0 - wt), (1, wt)):
            for dj, b in ((0, 1.0 - wx), (1, wx)):
                ii = np.clip(i0 + di + 1, 0, nt + 1)
                jj = np.clip(j0 + dj + 1, 0, nx + 1)
                out = out + a * b * padded[ii, jj]
        outside = (ft < 0) | (ft > nt - 1) | (fx < 0) | (fx > nx - 1)
        return np.where(outside, 0.0, out)

    def fourier(self, omega: np.ndarray, k: np.ndarray) -> np.ndarray:
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        k = np.atleast_1d(np.asarray(k, dtype=float))
        t, x = self.node_coordinates()
        h2 = self.spacing ** 2
        et = np.exp(1j * np.multiply.outer(omega, t))      # (nk, nt)
        ex = np.exp(-1j * np.multiply.outer(k, x))         # (nk, nx)
        return h2 * np.einsum("kt,tx,kx->k", et, self.values, ex)

    def l1_norm(self) -> float:
        return float(np.abs(self.values).sum() * self.spacing ** 2)

    # -- text format -------------------------------------------------------

    def to_text(self) -> str:
        nt, nx = self.shape
        lines = [
            _HEADER,
            f"origin {self.origin.t!r} {self.origin.x!r}",
            f"spacing {self.spacing!r}",
            f"dims {nt} {nx}",
        ]
        for row in self.values:
            lines.append(" ".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SampledFunction":
        rows = [ln for ln in text.splitlines() if ln.strip()]
        if not rows or rows[0].strip() != _HEADER:
            raise SmearingError("missing sampled-function header line")

        def keyed(line: str, key: str, n: int) -> list[str]:
            parts = line.split()
            if len(parts) != n + 1 or parts[0] != key:
                raise SmearingError(f"expected '{key}' line with {n} values, got {line!r}")
            return parts[1:]

        try:
            ot, ox = (float(v) for v in keyed(rows[1], "origin", 2))
            (h,) = (float(v) for v in keyed(rows[2], "spacing", 1))
            nt, nx = (int(v) for v in keyed(rows[3], "dims", 2))
        except IndexError:
            raise SmearingError("truncated sampled-function header") from None
        body = rows[4:]
        if len(body) != nt:
            raise SmearingError(f"expected {nt} rows of values, found {len(body)}")
        vals = np.empty((nt, nx))
        for i, line in enumerate(body):
            parts = line.split()
            if len(parts) != nx:
                raise SmearingError(f"row {i} has {len(parts)} values, expected {nx}")
            vals[i] = [float(p) for p in parts]
        return cls(Point(ot, ox), h, vals)

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "SampledFunction":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


SmearingFunction = Union[BumpSpec, SampledFunction]


def evaluate(fn: SmearingFunction, t: np.ndarray, x: np.ndarray) -> np.ndarray:
    return fn.evaluate(t, x)


def support_region(fn: SmearingFunction) -> RegionSet:
    return fn.region()


# ---------------------------------------------------------------------------
# Pauli-Jordan kernel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DeltaKernel:
    mass: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.mass) and self.mass >= 0.0):
            raise SmearingError(f"mass must be finite and non-negative, got {self.mass!r}")


def pauli_jordan_point(kernel: DeltaKernel, x: Point, y: Point) -> float:
    """Pointwise ``Delta(x, y)``.

    Inside the cone the value is ``(s / 2) J0(m tau)`` with ``s = +1`` when
    ``x`` is in the future of ``y``.  Lightlike pairs take the interior value.
    The coincident pair ``x == y`` returns ``+1/2`` by convention; it is a
    measure-zero choice that the quadrature does not use.
    """
    dt = x.t - y.t
    dx = abs(x.x - y.x)
    if abs(dt) < dx:
        return 0.0
    s = 1.0 if dt >= 0.0 else -1.0
    if kernel.mass == 0.0:
        return 0.5 * s
    tau = math.sqrt(max(dt * dt - dx * dx, 0.0))
    return 0.5 * s * float(special.j0(kernel.mass * tau))


def _kernel_table(mass: float, h: float, dt_idx: np.ndarray, dx_idx: np.ndarray) -> np.ndarray:
    """Kernel weights on integer offsets (cell units) with cone-boundary halving."""
    DT, DX = np.meshgrid(dt_idx, dx_idx, indexing="ij")
    adt, adx = np.abs(DT), np.abs(DX)
    s = np.sign(DT).astype(float)
    if mass == 0.0:
        mag = np.full(DT.shape, 0.5)
    else:
        tau = h * np.sqrt(np.maximum(DT.astype(float) ** 2 - DX.astype(float) ** 2, 0.0))
        mag = 0.5 * special.j0(mass * tau)
    w = np.where(adt > adx, 1.0, np.where(adt == adx, 0.5, 0.0))
    return s * mag * w


# ---------------------------------------------------------------------------
# Smeared Pauli-Jordan function
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureConfig:
    """Base spacing, number of halvings and tolerance for ``delta_bilinear``.

    The tolerance is absolute, measured in units of ``||f||_1 ||g||_1 / 2``,
    the largest value the pairing can take.
    """

    dx: float = 0.05
    levels: int = 6
    tol: float = 1e-9

    def __post_init__(self) -> None:
        if not (self.dx > 0.0 and self.tol > 0.0 and self.levels >= 1):
            raise SmearingError("quadrature config needs dx > 0, tol > 0 and levels >= 1")


def _grid_samples(fn: BumpSpec, h: float) -> tuple[int, int, np.ndarray]:
    """Sample a bump at midpoint cells ``(i + 1/2) h`` covering its support."""
    r = fn.support()
    i0 = math.floor(r.t_lo / h)
    i1 = math.ceil(r.t_hi / h)
    j0 = math.floor(r.x_lo / h)
    j1 = math.ceil(r.x_hi / h)
    t = (np.arange(i0, i1) + 0.5) * h
    x = (np.arange(j0, j1) + 0.5) * h
    vals = fn.evaluate(t[:, None], x[None, :])
    return i0, j0, vals


def _correlate_pairing(
    F: np.ndarray, f_off: tuple[int, int], G: np.ndarray, g_off: tuple[int, int], mass: float, h: float
) -> float:
    """``h^4 sum_{a,b} F[a] K(a - b) G[b]`` for grids anchored at integer offsets."""
    C = signal.correlate(F, G, mode="full")
    nt_g, nx_g = G.shape
    dt_idx = f_off[0] - g_off[0] + np.arange(C.shape[0]) - (nt_g - 1)
    dx_idx = f_off[1] - g_off[1] + np.arange(C.shape[1]) - (nx_g - 1)
    K = _kernel_table(mass, h, dt_idx, dx_idx)
    return float(np.sum(K * C)) * h ** 4


def _pair_single_level(f: SmearingFunction, g: SmearingFunction, mass: float, h: float) -> float:
    fi0, fj0, F = _grid_samples(f, h)  # type: ignore[arg-type]
    gi0, gj0, G = _grid_samples(g, h)  # type: ignore[arg-type]
    return _correlate_pairing(F, (fi0, fj0), G, (gi0, gj0), mass, h)


def _pair_on_sample_grid(f: SmearingFunction, g: SmearingFunction, mass: float) -> float:
    ref = f if isinstance(f, SampledFunction) else g
    assert isinstance(ref, SampledFunction)
    h = ref.spacing
    ot, ox = ref.origin.t, ref.origin.x

    def on_grid(fn: SmearingFunction) -> tuple[tuple[int, int], np.ndarray]:
        if isinstance(fn, SampledFunction):
            if not math.isclose(fn.spacing, h, rel_tol=1e-12):
                raise SmearingError("sampled functions must share one spacing")
            si = (fn.origin.t - ot) / h
            sj = (fn.origin.x - ox) / h
            if abs(si - round(si)) > 1e-6 or abs(sj - round(sj)) > 1e-6:
                raise SmearingError("sampled functions must share one lattice")
            return (int(round(si)), int(round(sj))), np.asarray(fn.values)
        r = fn.support()
        i0 = math.floor((r.t_lo - ot) / h)
        i1 = math.ceil((r.t_hi - ot) / h)
        j0 = math.floor((r.x_lo - ox) / h)
        j1 = math.ceil((r.x_hi - ox) / h)
        t = ot + h * np.arange(i0, i1 + 1)
        x = ox + h * np.arange(j0, j1 + 1)
        return (i0, j0), fn.evaluate(t[:, None], x[None, :])

    f_off, F = on_grid(f)
    g_off, G = on_grid(g)
    return _correlate_pairing(F, f_off, G, g_off, mass, h)


def delta_bilinear(
    f: SmearingFunction,
    g: SmearingFunction,
    q: QuadratureConfig | None = None,
    kernel: DeltaKernel | None = None,
) -> float:
    """Smeared ``Delta(f, g) = int f(x) Delta(x, y) g(y) dx dy``.

    Bumps are integrated with the midpoint rule at spacings ``q.dx / 2**l``
    and Richardson-extrapolated until two successive extrapolants agree.
    Sampled functions fix the grid, so a single pass on their nodes is used.
    """
    q = q or QuadratureConfig()
    mass = (kernel or DeltaKernel()).mass
    if strictly_spacelike(f.support(), g.support()):
        return 0.0
    if isinstance(f, SampledFunction) or isinstance(g, SampledFunction):
        return _pair_on_sample_grid(f, g, mass)

    scale = 0.5 * f.l1_norm() * g.l1_norm()
    tol = q.tol * max(scale, np.finfo(float).tiny)
    raw = [_pair_single_level(f, g, mass, q.dx)]
    best = [raw[0]]
    for level in range(1, q.levels + 1):
        raw.append(_pair_single_level(f, g, mass, q.dx / 2 ** level))
        best.append((4.0 * raw[-1] - raw[-2]) / 3.0)
        if abs(best[-1] - best[-2]) < tol:
            return best[-1]
    raise QuadratureError(
        f"delta_bilinear did not reach tolerance {q.tol:g} in {q.levels} refinements",
        (best[-2], best[-1]),
    )


def delta_single_level(f: BumpSpec, g: BumpSpec, h: float, kernel: DeltaKernel | None = None) -> float:
    """Unextrapolated midpoint value at spacing ``h`` (used in convergence studies)."""
    return _pair_single_level(f, g, (kernel or DeltaKernel()).mass, h)


# ---------------------------------------------------------------------------
# Vacuum two-point function
# ---------------------------------------------------------------------------

def _momentum_cutoff(f: SmearingFunction, g: SmearingFunction) -> float:
    cut = math.inf
    for fn in (f, g):
        if isinstance(fn, SampledFunction):
            cut = min(cut, math.pi / fn.spacing)
        elif fn.kind == "cosine_bump":
            cut = min(cut, 120.0 / fn.half_width)
        else:
            cut = min(cut, 400.0 / fn.half_width)
    return cut


def _oscillation_scale(f: SmearingFunction, g: SmearingFunction) -> float:
    """Bound on the phase rate of ``F G^*`` along the mass shell (``d omega / dk <= 1``)."""
    ra, rb = f.support(), g.support()
    dt = max(abs(ra.t_hi - rb.t_lo), abs(rb.t_hi - ra.t_lo))
    dx = max(abs(ra.x_hi - rb.x_lo), abs(rb.x_hi - ra.x_lo))
    return dt + dx


@dataclass(frozen=True)
class TwoPoint:
    """Vacuum ``<phi(f) phi(g)>`` with the neglected momentum tail bound.

    ``quadrature_error`` is the change between two panel resolutions.
    """

    value: complex
    tail_bound: float
    cutoff: float
    quadrature_error: float = 0.0


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(12)


def _panel_integral(fun, lo: float, hi: float, panels: int) -> complex:
    edges = np.linspace(lo, hi, panels + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1:] - edges[:-1])
    k = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    total = 0.0j
    for start in range(0, len(k), 1 << 14):
        sl = slice(start, start + (1 << 14))
        total += np.sum(w[sl] * fun(k[sl]))
    return complex(total)


def vacuum_two_point(f: SmearingFunction, g: SmearingFunction, mass: float) -> TwoPoint:
    """``int dk / (4 pi omega) F(omega, k) G(omega, k)^*`` on the mass shell.

    The real part is the symmetric covariance ``W_s(f, g)`` and the imaginary
    part is ``Delta(f, g) / 2``.  The momentum integral uses composite
    12-point Gauss-Legendre panels narrow enough to resolve the phase of
    ``F G^*``; the result at half the panel width gives the error estimate.
    """
    if not (mass > 0.0 and math.isfinite(mass)):
        raise SmearingError(
            "vacuum covariance needs mass > 0: the massless vacuum in 1+1 dimensions "
            "is infrared divergent"
        )
    cutoff = _momentum_cutoff(f, g)

    def integrand(k: np.ndarray) -> np.ndarray:
        w = np.sqrt(k * k + mass * mass)
        out = f.fourier(w, k) * np.conj(g.fourier(w, k))
        out = out + f.fourier(w, -k) * np.conj(g.fourier(w, -k))
        return out / (4.0 * np.pi * w)

    def envelope(k: np.ndarray) -> np.ndarray:
        w = np.sqrt(k * k + mass * mass)
        out = np.abs(f.fourier(w, k) * g.fourier(w, k)) + np.abs(f.fourier(w, -k) * g.fourier(w, -k))
        return out / (4.0 * np.pi * w)

    # one 12-point panel per six radians of phase, at least 64 panels
    rate = _oscillation_scale(f, g)
    panels = max(64, int(math.ceil(cutoff * max(rate, 1.0) / 6.0)))
    coarse = _panel_integral(integrand, 0.0, cutoff, panels)
    fine = _panel_integral(integrand, 0.0, cutoff, 2 * panels)
    if isinstance(f, SampledFunction) or isinstance(g, SampledFunction):
        # Beyond the Nyquist momentum a sampled transform carries no information.
        tail = float(envelope(np.array([cutoff]))[0]) * cutoff
    else:
        tail = _panel_integral(envelope, cutoff, 4.0 * cutoff, 3 * panels).real
        tail += float(envelope(np.array([4.0 * cutoff]))[0]) * 4.0 * cutoff
    return TwoPoint(fine, float(tail), float(cutoff), float(abs(fine - coarse)))


def vacuum_covariance(
    f: SmearingFunction,
    g: SmearingFunction,
    m: float,
    q: QuadratureConfig | None = None,
) -> float:
    """Symmetric vacuum covariance ``W_s(f, g)`` for mass ``m > 0``.

    ``q`` is accepted for interface symmetry with ``delta_bilinear``; the
    momentum integral is adaptive and does not use the spatial grid.
    """
    return vacuum_two_point(f, g, m).value.real


# ---------------------------------------------------------------------------
# Pairing table
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PairingTable:
    """Registered labels with their ``Delta`` and ``W_s`` matrices.

    ``wsym`` is ``None`` for massless tables, which support commutator
    algebra but not vacuum expectation values.
    """

    labels: tuple[str, ...]
    delta: np.ndarray
    wsym: np.ndarray | None = None
    supports: Mapping[str, RegionSet] | None = None
    functions: Mapping[str, SmearingFunction] | None = None
    mass: float | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        labels = tuple(self.labels)
        if len(set(labels)) != len(labels):
            raise SmearingError("duplicate labels in pairing table")
        object.__setattr__(self, "labels", labels)
        n = len(labels)
        d = np.array(self.delta, dtype=float)
        if d.shape != (n, n):
            raise SmearingError(f"delta must be {n}x{n}")
        if not np.allclose(d, -d.T, rtol=0.0, atol=1e-14 * max(1.0, np.abs(d).max(initial=0.0))):
            raise SmearingError("delta matrix is not antisymmetric")
        d = 0.5 * (d - d.T)
        d.setflags(write=False)
        object.__setattr__(self, "delta", d)
        if self.wsym is not None:
            w = np.array(self.wsym, dtype=float)
            if w.shape != (n, n):
                raise SmearingError(f"wsym must be {n}x{n}")
            w = 0.5 * (w + w.T)
            if np.any(np.diag(w) < -1e-14):
                raise SmearingError("wsym has a negative diagonal entry")
            w.setflags(write=False)
            object.__setattr__(self, "wsym", w)
        object.__setattr__(self, "_index", {lab: i for i, lab in enumerate(labels)})

    # lookups ---------------------------------------------------------------

    def index(self, label: str) -> int:
        try:
            return self._index[label]  # type: ignore[attr-defined]
        except KeyError:
            raise SmearingError(f"unregistered label {label!r}") from None

    def has(self, label: str) -> bool:
        return label in self._index  # type: ignore[attr-defined]

    def d(self, a: str, b: str) -> float:
        return float(self.delta[self.index(a), self.index(b)])

    def w(self, a: str, b: str) -> float:
        if self.wsym is None:
            raise SmearingError("this pairing table has no vacuum covariance (massless or not computed)")
        return float(self.wsym[self.index(a), self.index(b)])

    def two_point(self, a: str, b: str) -> complex:
        """``<phi(a) phi(b)> = W_s(a, b) + (i/2) Delta(a, b)``."""
        return complex(self.w(a, b), 0.5 * self.d(a, b))

    def support(self, label: str) -> RegionSet:
        if self.supports is None or label not in self.supports:
            raise SmearingError(f"no registered support for label {label!r}")
        return self.supports[label]

    def psd_margin(self) -> float:
        """Smallest eigenvalue of ``wsym + (i/2) delta``."""
        if self.wsym is None:
            raise SmearingError("no covariance to check")
        return float(np.linalg.eigvalsh(self.wsym + 0.5j * self.delta).min())

    def check_psd(self, rel_tol: float = 1e-10) -> None:
        if self.wsym is None:
            return
        lam = self.psd_margin()
        scale = max(np.abs(self.wsym).max(initial=0.0), np.abs(self.delta).max(initial=0.0), 1e-300)
        if lam < -rel_tol * scale:
            raise SmearingError(
                f"wsym + (i/2) delta is not positive semidefinite (min eigenvalue {lam:.3e})"
            )


def build_pairing_table(
    functions: Mapping[str, SmearingFunction],
    mass: float = 0.0,
    q: QuadratureConfig | None = None,
    covariance: bool = True,
    check_psd: bool = True,
) -> PairingTable:
    """Evaluate all pairings of the named smearing functions."""
    labels = tuple(functions)
    n = len(labels)
    kernel = DeltaKernel(mass)
    delta = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            v = delta_bilinear(functions[labels[i]], functions[labels[j]], q, kernel)
            delta[i, j], delta[j, i] = v, -v
    wsym = None
    if covariance and mass > 0.0:
        wsym = np.zeros((n, n))
        for i in range(n):
            for j in range(i, n):
                v = vacuum_covariance(functions[labels[i]], functions[labels[j]], mass)
                wsym[i, j] = wsym[j, i] = v
    table = PairingTable(
        labels,
        delta,
        wsym,
        supports={k: fn.region() for k, fn in functions.items()},
        functions=dict(functions),
        mass=mass,
    )
    if check_psd:
        table.check_psd()
    return table


def table_from_matrices(
    labels: Sequence[str],
    delta: np.ndarray,
    wsym: np.ndarray | None = None,
    supports: Mapping[str, RegionSet] | None = None,
) -> PairingTable:
    return PairingTable(tuple(labels), np.asarray(delta, float), None if wsym is None else np.asarray(wsym, float), supports)
