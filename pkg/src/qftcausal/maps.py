"""Update maps acting on field polynomials and Weyl jets.

Every map in the catalog acts on a Weyl generator by left multiplication,

    E(exp(i phi(u))) = m(x_1, ..., x_r) exp(i phi(u)),    x_j = Delta(k_j, u),

where ``k_j`` are the probe labels of the map (the measured or kicked
fields) and ``m`` is operator valued, built only from fields that commute
with each other.  Writing a word ``phi(a_1)...phi(a_n)`` as derivatives of
``exp(i s_1 phi(a_1))...exp(i s_n phi(a_n))`` and using linearity gives

    E(phi(a_1)...phi(a_n) W(tg)) =
        sum_S (-i)^|S| [d_S m](x = t Delta(k, g)) prod_{i not in S} phi(a_i) W(tg)

with ``d_{s_i} = sum_j Delta(k_j, a_i) d/dx_j``.  The maps therefore only
have to supply the Taylor coefficients of ``m`` at the origin, and one
routine handles polynomials and jets for all variants.

For the selective and LOCC maps, the push-through step works as follows.
A Gaussian Kraus operator ``G(phi(f) - alpha)`` is a function of ``phi(f)``,
and ``exp(i phi(u)) G(phi(f) - alpha) = G(phi(f) + Delta(f, u) - alpha) exp(i phi(u))``.
Pulling both Kraus factors to the left of the Weyl generator and
integrating over the outcome window turns the product of two Gaussians into
``exp(-x^2 / 8 sigma^2)`` times the normal probability of ``[a, b]`` centred
at ``phi(f) + x / 2``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np
from scipy import integrate, special

from .algebra import (
    DEFAULT_MAX_DEGREE,
    AlgebraError,
    DegreeBoundExceeded,
    GaussianState,
    OperatorPoly,
    SpectralFamily,
    SpectralFn,
    WeylJet,
    multiply,
    normalize,
    shift_labels,
    word_degree,
)
from .geometry import Rect, RegionRelation, RegionSet, region_relation
from .smearing import PairingTable

COMMUTE_TOL = 1e-12


class MapError(ValueError):
    """A map precondition does not hold."""


# ---------------------------------------------------------------------------
# Special functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SampledKrausProfile:
    """Complex samples ``G(start + j * spacing)``; zero outside the grid."""

    start: float
    spacing: float
    values: tuple[complex, ...]
    norm_tol: float = 1e-6

    def __post_init__(self) -> None:
        vals = tuple(complex(v) for v in np.asarray(self.values).ravel())
        object.__setattr__(self, "values", vals)
        if not (self.spacing > 0.0):
            raise MapError("profile spacing must be positive")
        if len(vals) < 3:
            raise MapError("profile needs at least three samples")
        norm = self.norm()
        if abs(norm - 1.0) > self.norm_tol:
            raise MapError(f"Kraus profile must be L2-normalised, got norm^2 = {norm:.9f}")

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=complex)

    @property
    def grid(self) -> np.ndarray:
        return self.start + self.spacing * np.arange(len(self.values))

    def norm(self) -> float:
        return float(integrate.trapezoid(np.abs(np.asarray(self.values)) ** 2, dx=self.spacing))

    @classmethod
    def gaussian(cls, sigma: float, spacing: float | None = None, span: float = 12.0) -> "SampledKrausProfile":
        """``G(beta) = (2 pi sigma^2)^(-1/4) exp(-beta^2 / 4 sigma^2)`` on ``|beta| <= span sigma``."""
        if not sigma > 0:
            raise MapError("sigma must be positive")
        spacing = spacing or sigma / 400.0
        n = int(math.ceil(span * sigma / spacing))
        beta = spacing * np.arange(-n, n + 1)
        g = (2.0 * math.pi * sigma ** 2) ** -0.25 * np.exp(-(beta ** 2) / (4.0 * sigma ** 2))
        return cls(float(beta[0]), spacing, tuple(g))

    def derivatives_at_zero(self, nmax: int) -> list[complex]:
        """``H^(n)(0)`` for ``n <= nmax`` from the power spectrum of ``G``."""
        g = self.array
        npad = 1 << int(math.ceil(math.log2(4 * len(g))))
        spec = np.abs(np.fft.fft(g, npad)) ** 2
        k = 2.0 * math.pi * np.fft.fftfreq(npad, d=self.spacing)
        if npad % 2 == 0:
            spec[npad // 2] = 0.0
        return [complex(self.spacing / npad * np.sum((1j * k) ** n * spec)) for n in range(nmax + 1)]


def h_function(G: SampledKrausProfile, t: float) -> complex:
    """``H(t) = int G(beta)^* G(beta + t) d beta`` by the trapezoid rule."""
    beta = G.grid
    g = G.array
    span = beta[-1] - beta[0]
    if abs(t) >= span:
        warnings.warn(f"H({t}) shifts the profile off its grid; returning 0", RuntimeWarning, stacklevel=2)
        return 0.0j
    shifted = np.interp(beta + t, beta, g.real, left=0.0, right=0.0) + 1j * np.interp(
        beta + t, beta, g.imag, left=0.0, right=0.0
    )
    return complex(integrate.trapezoid(np.conj(g) * shifted, dx=G.spacing))


_ETA_WINDOW = 12.0
ETA_TAIL_BOUND = math.erfc(_ETA_WINDOW / math.sqrt(2.0))
_ETA_MAX_RATE = 1e4
_ETA_WARN_ERROR = 1e-6


def _eta_direct(t: float, r: float) -> tuple[complex, float]:
    def part(x: float, which: int) -> float:
        ph = (math.exp(-x * r) - 1.0) * t
        return math.exp(-0.5 * x * x) * (math.cos(ph) if which == 0 else math.sin(ph))

    edges = np.linspace(-_ETA_WINDOW, _ETA_WINDOW, 49)
    opts = dict(limit=200, epsabs=1e-15, epsrel=1e-13)
    val, err = 0j, 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        for which, unit in ((0, 1.0), (1, 1j)):
            v, e = integrate.quad(part, a, b, args=(which,), **opts)
            val += unit * v
            err += e
    norm = 1.0 / math.sqrt(2.0 * math.pi)
    return norm * val, norm * err + ETA_TAIL_BOUND


def _eta_fourier(t: float, r: float) -> tuple[complex, float]:
    # U = exp(-X r) is lognormal and eta(t) = exp(-i t) E[exp(i t U)]
    def density(u: float) -> float:
        if u <= 0.0:
            return 0.0
        lu = math.log(u)
        return math.exp(-lu * lu / (2.0 * r * r)) / (u * r * math.sqrt(2.0 * math.pi))

    w = abs(t)
    c, ec = integrate.quad(density, 0.0, math.inf, weight="cos", wvar=w, limlst=200)
    s, es = integrate.quad(density, 0.0, math.inf, weight="sin", wvar=w, limlst=200)
    s = s if t > 0 else -s
    return complex(math.cos(t), -math.sin(t)) * complex(c, s), ec + es


def eta_function(t: float, r: float) -> complex:
    """``(2 pi)^(-1/2) int exp(-x^2/2) exp(i (exp(-x r) - 1) t) dx``.

    When the phase rate ``|r t| exp(12 |r|)`` stays below 1e4 the x-integral
    is done piecewise on ``|x| <= 12`` (neglected tail about 2e-33).  Otherwise
    the integral is rewritten as the Fourier transform of the lognormal law of
    ``exp(-x r)`` and done with QUADPACK's QAWF, whose error estimate (about
    2e-8) is conservative: against 25-digit references the error is about
    1e-10 for ``|r| <= 1``.  For ``|r| >= 2`` and small ``t`` the references
    themselves disagree at 1e-6.  A RuntimeWarning reports estimates above 1e-6.
    """
    if t == 0.0 or r == 0.0:
        return 1.0 + 0.0j
    # eta(t; r) = eta(t; -r) under x -> -x
    r = abs(r)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        if r * abs(t) * math.exp(_ETA_WINDOW * r) <= _ETA_MAX_RATE:
            val, err = _eta_direct(t, r)
        else:
            val, err = _eta_fourier(t, r)
    if not err < _ETA_WARN_ERROR:
        warnings.warn(f"eta({t}, {r}) error estimate {err:.1e}", RuntimeWarning, stacklevel=2)
    return val


def eta_derivative_at_zero(n: int, r: float) -> complex:
    """``eta^(n)(0) = i^n E[(exp(-X r) - 1)^n]`` with ``E[exp(-j X r)] = exp(j^2 r^2 / 2)``."""
    s = sum(math.comb(n, j) * (-1) ** (n - j) * math.exp(0.5 * j * j * r * r) for j in range(n + 1))
    return (1j) ** n * s


@dataclass(frozen=True)
class GaussianWindow(SpectralFamily):
    """``P(z) = Phi((b - z)/sigma) - Phi((a - z)/sigma)``: probability that ``z + N(0, sigma^2)`` lands in ``[a, b]``."""

    a: float
    b: float
    sigma: float
    name: str = "P"

    def derivative(self, n, z):
        z = np.asarray(z, dtype=float)
        out = np.zeros(z.shape)
        for c, sign in ((self.b, 1.0), (self.a, -1.0)):
            if math.isinf(c):
                if n == 0 and c > 0:
                    out = out + sign * 1.0
                continue
            u = (c - z) / self.sigma
            if n == 0:
                out = out + sign * special.ndtr(u)
            else:
                # d^n/dz^n Phi((c - z)/s) = (-1/s)^n (-1)^(n-1) He_{n-1}(u) phi(u)
                he = special.eval_hermitenorm(n - 1, u)
                pdf = np.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)
                out = out + sign * (-1.0 / self.sigma) ** n * (-1.0) ** (n - 1) * he * pdf
        return out if out.ndim else float(out)

    def gaussian_expectation(self, n: int, var: float, shift: float) -> float:
        # Averaging over v ~ N(0, var) widens the window's Gaussian to sqrt(sigma^2 + var).
        wide = GaussianWindow(self.a, self.b, math.sqrt(self.sigma ** 2 + max(var, 0.0)))
        return float(wide.derivative(n, shift))


def selective_probability(f: str, sigma: float, interval: tuple[float, float], state: GaussianState) -> float:
    """Probability that a Gaussian measurement of ``phi(f)`` lands in ``[a, b]``.

    In a mean-zero Gaussian state the outcome is ``N(0, W_s(f, f) + sigma^2)``.
    """
    a, b = interval
    if a > b:
        raise MapError("interval needs a <= b")
    if not sigma > 0:
        raise MapError("sigma must be positive")
    s = math.sqrt(state.table.w(f, f) + sigma * sigma)
    return float(special.ndtr(b / s) - special.ndtr(a / s))


def bin_overlap_profile(w: float, s: float, lam: float) -> int:
    """1 when ``lam`` and ``lam + s`` fall in the same bin ``[n w, (n+1) w)``."""
    if not w > 0:
        raise MapError("bin width must be positive")
    return int(math.floor(lam / w) == math.floor((lam + s) / w))


# ---------------------------------------------------------------------------
# Truncated multivariate power series with operator coefficients
# ---------------------------------------------------------------------------

Index = tuple


class _Series:
    """``sum_gamma c_gamma x^gamma`` truncated at total degree ``order``."""

    def __init__(self, nvars: int, order: int, coeffs: dict | None = None):
        self.nvars = nvars
        self.order = order
        self.coeffs: dict[Index, OperatorPoly] = {}
        for k, v in (coeffs or {}).items():
            if sum(k) <= order:
                self.coeffs[k] = self.coeffs.get(k, OperatorPoly.zero()) + v

    @classmethod
    def const(cls, nvars: int, order: int, value: OperatorPoly) -> "_Series":
        return cls(nvars, order, {(0,) * nvars: value})

    def __add__(self, other: "_Series") -> "_Series":
        out = _Series(self.nvars, self.order, self.coeffs)
        for k, v in other.coeffs.items():
            if sum(k) <= self.order:
                out.coeffs[k] = out.coeffs.get(k, OperatorPoly.zero()) + v
        return out

    def scale(self, s: complex) -> "_Series":
        return _Series(self.nvars, self.order, {k: v * s for k, v in self.coeffs.items()})

    def mul(self, other: "_Series", table: PairingTable) -> "_Series":
        out: dict[Index, OperatorPoly] = {}
        for k1, v1 in self.coeffs.items():
            for k2, v2 in other.coeffs.items():
                k = tuple(a + b for a, b in zip(k1, k2))
                if sum(k) > self.order:
                    continue
                out[k] = out.get(k, OperatorPoly.zero()) + multiply(v1, v2, table)
        return _Series(self.nvars, self.order, out)

    def exp(self, table: PairingTable) -> "_Series":
        zero = (0,) * self.nvars
        c0 = self.coeffs.get(zero, OperatorPoly.zero())
        if not c0.is_scalar():
            raise AlgebraError("series exponential needs a scalar constant term")
        tail = _Series(self.nvars, self.order, {k: v for k, v in self.coeffs.items() if k != zero})
        result = _Series.const(self.nvars, self.order, OperatorPoly.identity())
        term = _Series.const(self.nvars, self.order, OperatorPoly.identity())
        for n in range(1, self.order + 1):
            term = term.mul(tail, table).scale(1.0 / n)
            result = result + term
        scale = complex(np.exp(c0.scalar_part()))
        return result.scale(scale)


def _univariate(order: int, coeffs: Sequence[complex | OperatorPoly]) -> _Series:
    out = {}
    for n, c in enumerate(coeffs[: order + 1]):
        out[(n,)] = c if isinstance(c, OperatorPoly) else OperatorPoly.scalar(c)
    return _Series(1, order, out)


def _gaussian_damping(nvars: int, var_index: int, sigma: float, order: int, table: PairingTable) -> _Series:
    """``exp(-x_j^2 / 8 sigma^2)``."""
    idx = [0] * nvars
    idx[var_index] = 2
    return _Series(nvars, order, {tuple(idx): OperatorPoly.scalar(-1.0 / (8.0 * sigma * sigma))}).exp(table)


def _shifted_spectral(nvars: int, var_index: int, fn: SpectralFn, scale: float, order: int) -> _Series:
    """``F(phi + scale * x_j)`` expanded in ``x_j``."""
    out = {}
    for n in range(order + 1):
        idx = [0] * nvars
        idx[var_index] = n
        out[tuple(idx)] = OperatorPoly.word(fn.derivative(n), coeff=scale ** n / math.factorial(n))
    return _Series(nvars, order, out)


# ---------------------------------------------------------------------------
# Map catalog
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UpdateMap:
    """Base class; ``region`` is the compact set the map is local to."""

    def member_labels(self) -> tuple[str, ...]:
        raise NotImplementedError

    def probes(self) -> tuple[str, ...]:
        raise NotImplementedError

    @property
    def non_selective(self) -> bool:
        return True

    def validate(self, table: PairingTable) -> None:
        for lab in self.member_labels():
            table.index(lab)
        region = getattr(self, "region", None)
        if region is not None and table.supports is not None:
            for lab in self.member_labels():
                if lab in table.supports and not _covered(table.supports[lab], region):
                    raise MapError(f"support of {lab!r} is not inside the map's region")

    def multiplier(self, table: PairingTable, order: int) -> _Series:
        raise NotImplementedError


def _covered(support: RegionSet, region: RegionSet) -> bool:
    return all(
        any(r.t_lo <= s.t_lo and s.t_hi <= r.t_hi and r.x_lo <= s.x_lo and s.x_hi <= r.x_hi for r in region)
        for s in support
    )


def _check_sigma(sigma: float) -> None:
    if not (sigma > 0 and math.isfinite(sigma)):
        raise MapError(f"sigma must be positive and finite, got {sigma!r}")


@dataclass(frozen=True)
class KickField(UpdateMap):
    """Unitary kick ``exp(i lam phi(f))``."""

    f: str
    strength: float = 1.0
    region: RegionSet | None = None

    def member_labels(self):
        return (self.f,)

    def probes(self):
        return (self.f,)

    def multiplier(self, table, order):
        return _Series(1, order, {(1,): OperatorPoly.scalar(-1j * self.strength)}).exp(table)


@dataclass(frozen=True)
class KickFieldSquared(UpdateMap):
    """Unitary kick ``exp(i phi(f)^2)``."""

    f: str
    region: RegionSet | None = None

    def member_labels(self):
        return (self.f,)

    def probes(self):
        return (self.f,)

    def multiplier(self, table, order):
        # exp(-i x^2) exp(-2 i x phi(f)); the two exponents commute.
        exponent = _Series(
            1, order, {(2,): OperatorPoly.scalar(-1j), (1,): OperatorPoly.field(self.f) * (-2j)}
        )
        return exponent.exp(table)


@dataclass(frozen=True)
class GaussianMeasureField(UpdateMap):
    f: str
    sigma: float
    region: RegionSet | None = None

    def __post_init__(self):
        _check_sigma(self.sigma)

    def member_labels(self):
        return (self.f,)

    def probes(self):
        return (self.f,)

    def multiplier(self, table, order):
        return _gaussian_damping(1, 0, self.sigma, order, table)


@dataclass(frozen=True)
class GeneralMeasureField(UpdateMap):
    """Non-selective measurement of ``phi(f)`` with Kraus profile ``G``; multiplier ``H(x)``."""

    f: str
    profile: SampledKrausProfile
    region: RegionSet | None = None

    def member_labels(self):
        return (self.f,)

    def probes(self):
        return (self.f,)

    def multiplier(self, table, order):
        d = self.profile.derivatives_at_zero(order)
        return _univariate(order, [d[n] / math.factorial(n) for n in range(order + 1)])


def _poly_shift_series(C: OperatorPoly, probes: tuple[str, ...], order: int, table: PairingTable) -> _Series:
    """``C(phi + x) - C`` with ``x_j`` added to every ``phi(probes[j])``."""
    r = len(probes)
    pos = {lab: j for j, lab in enumerate(probes)}
    total = _Series(r, order)
    for w, c in C.items():
        term = _Series.const(r, order, OperatorPoly.scalar(c))
        for e in w:
            idx = [0] * r
            idx[pos[e]] = 1
            fac = _Series(r, order, {(0,) * r: OperatorPoly.field(e), tuple(idx): OperatorPoly.identity()})
            term = term.mul(fac, table)
        total = total + term
    zero = (0,) * r
    total.coeffs.pop(zero, None)
    return total


@dataclass(frozen=True)
class GaussianMeasureCommutingPoly(UpdateMap):
    """Gaussian measurement of a real polynomial ``C`` in mutually commuting fields."""

    C: OperatorPoly
    sigma: float
    region: RegionSet | None = None

    def __post_init__(self):
        _check_sigma(self.sigma)
        if self.C.has_spectral():
            raise MapError("C must be a polynomial in smeared fields")
        if any(abs(c.imag) > 0 for _, c in self.C.items()):
            raise MapError("C must have real coefficients")

    def member_labels(self):
        return tuple(sorted(self.C.labels()))

    def probes(self):
        return self.member_labels()

    def validate(self, table):
        super().validate(table)
        labs = self.member_labels()
        for a, b in itertools.combinations(labs, 2):
            if abs(table.d(a, b)) > COMMUTE_TOL:
                raise MapError(
                    f"commutation precondition violated: Delta({a}, {b}) = {table.d(a, b):.3e} is not zero"
                )

    def multiplier(self, table, order):
        probes = self.probes()
        cminus = _poly_shift_series(self.C, probes, order, table)
        sq = cminus.mul(cminus, table).scale(-1.0 / (8.0 * self.sigma ** 2))
        return sq.exp(table)


@dataclass(frozen=True)
class GaussianMeasureJordanPair(UpdateMap):
    """Gaussian measurement of ``phi(f1) (.) phi(f2)`` for non-commuting ``f1, f2``.

    The closed form holds on operators built from labels ``a`` with
    ``Delta(f2, a) = 0``; other operands are rejected.
    """

    f1: str
    f2: str
    sigma: float
    region: RegionSet | None = None
    max_jet_order = 2

    def __post_init__(self):
        _check_sigma(self.sigma)

    def member_labels(self):
        return (self.f1, self.f2)

    def probes(self):
        return (self.f1,)

    def validate(self, table):
        super().validate(table)
        if abs(table.d(self.f1, self.f2)) <= COMMUTE_TOL:
            raise MapError("Jordan-pair measurement needs Delta(f1, f2) != 0")

    def operand_check(self, labels: set[str], table: PairingTable) -> None:
        for a in labels:
            if abs(table.d(self.f2, a)) > COMMUTE_TOL:
                raise MapError(
                    f"Jordan-pair closed form needs Delta({self.f2}, {a}) = 0, got {table.d(self.f2, a):.3e}"
                )

    def r(self, table: PairingTable) -> float:
        return table.d(self.f1, self.f2) / (2.0 * self.sigma)

    def multiplier(self, table, order):
        d12 = table.d(self.f1, self.f2)
        r = d12 / (2.0 * self.sigma)
        phi2 = OperatorPoly.field(self.f2)
        coeffs = []
        pw = OperatorPoly.identity()
        for n in range(order + 1):
            coeffs.append(pw * (eta_derivative_at_zero(n, r) / (math.factorial(n) * d12 ** n)))
            pw = multiply(pw, phi2, table)
        return _univariate(order, coeffs)


@dataclass(frozen=True)
class SelectiveGaussian(UpdateMap):
    """Gaussian measurement of ``phi(f)`` conditioned on the outcome landing in ``[a, b]``.

    With ``probability=None`` the map is the unnormalised operation (the
    probability times the conditional update).  Supply the probability, for
    example from :func:`selective_probability`, to obtain the normalised map.
    """

    f: str
    sigma: float
    a: float
    b: float
    probability: float | None = None
    region: RegionSet | None = None

    def __post_init__(self):
        _check_sigma(self.sigma)
        if self.a > self.b:
            raise MapError("interval needs a <= b")
        if self.probability is not None and not (0 < self.probability <= 1):
            raise MapError("probability must lie in (0, 1]")

    @property
    def non_selective(self):
        return False

    def member_labels(self):
        return (self.f,)

    def probes(self):
        return (self.f,)

    def window(self) -> SpectralFn:
        return SpectralFn(self.f, GaussianWindow(self.a, self.b, self.sigma))

    def multiplier(self, table, order):
        damp = _gaussian_damping(1, 0, self.sigma, order, table)
        win = _shifted_spectral(1, 0, self.window(), 0.5, order)
        out = damp.mul(win, table)
        if self.probability is not None:
            out = out.scale(1.0 / self.probability)
        return out


@dataclass(frozen=True)
class LoccConditional(UpdateMap):
    """Measure ``phi(f1)``; if the outcome lies in ``[a, b]`` then measure ``phi(f2)``.

    Both measurements are Gaussian with width ``sigma`` and the overall map
    is non-selective.  ``supp f1`` must lie totally in the causal past of
    ``supp f2``.
    """

    f1: str
    f2: str
    sigma: float
    a: float
    b: float
    region: RegionSet | None = None
    max_jet_order = 2

    def __post_init__(self):
        _check_sigma(self.sigma)
        if self.a > self.b:
            raise MapError("interval needs a <= b")

    def member_labels(self):
        return (self.f1, self.f2)

    def probes(self):
        return (self.f1, self.f2)

    def validate(self, table):
        super().validate(table)
        if table.supports is not None and self.f1 in table.supports and self.f2 in table.supports:
            rel = region_relation(table.supports[self.f1], table.supports[self.f2])
            if rel is not RegionRelation.TOTALLY_TIMELIKE_A_BEFORE_B:
                raise MapError(f"LOCC needs supp {self.f1} totally before supp {self.f2}, got {rel.value}")

    def window(self) -> SpectralFn:
        return SpectralFn(self.f1, GaussianWindow(self.a, self.b, self.sigma))

    def multiplier(self, table, order):
        # exp(-x^2/8s^2) [1 - (1 - exp(-y^2/8s^2)) P(phi(f1) + x/2)]
        damp_x = _gaussian_damping(2, 0, self.sigma, order, table)
        damp_y = _gaussian_damping(2, 1, self.sigma, order, table)
        one = _Series.const(2, order, OperatorPoly.identity())
        gap = one + damp_y.scale(-1.0)
        win = _shifted_spectral(2, 0, self.window(), 0.5, order)
        inner = one + gap.mul(win, table).scale(-1.0)
        return damp_x.mul(inner, table)


MapVariant = Union[
    KickField,
    KickFieldSquared,
    GaussianMeasureField,
    GeneralMeasureField,
    GaussianMeasureCommutingPoly,
    GaussianMeasureJordanPair,
    SelectiveGaussian,
    LoccConditional,
]


# ---------------------------------------------------------------------------
# Application engine
# ---------------------------------------------------------------------------

def _subsets(n: int):
    for r in range(n + 1):
        yield from itertools.combinations(range(n), r)


def _apply_multiplier(
    m: UpdateMap,
    coeffs: Sequence[OperatorPoly],
    base: str | None,
    table: PairingTable,
    max_degree: int | None,
) -> list[OperatorPoly]:
    J = len(coeffs) - 1
    probes = m.probes()
    r = len(probes)
    nmax = max((word_degree(w) for c in coeffs for w in c), default=0)
    for c in coeffs:
        if c.has_spectral():
            raise MapError(
                f"{type(m).__name__} cannot act on operators that already contain spectral functions"
            )
    F = m.multiplier(table, J + nmax)
    d = [table.d(k, base) if base is not None else 0.0 for k in probes]
    out: list[dict] = [dict() for _ in range(J + 1)]

    def add(level: int, poly: OperatorPoly, scale: complex) -> None:
        acc = out[level]
        for w, v in poly.items():
            acc[w] = acc.get(w, 0.0) + scale * v

    for tp, coeff in enumerate(coeffs):
        for word, z in coeff.items():
            n = len(word)
            e = [[table.d(k, a) for a in word] for k in probes]
            for S in _subsets(n):
                ops: dict[Index, complex] = {(0,) * r: 1.0}
                for i in S:
                    nxt: dict[Index, complex] = {}
                    for alpha, wgt in ops.items():
                        for j in range(r):
                            if e[j][i] == 0.0:
                                continue
                            a2 = list(alpha)
                            a2[j] += 1
                            a2 = tuple(a2)
                            nxt[a2] = nxt.get(a2, 0.0) + wgt * e[j][i]
                    ops = nxt
                if not ops:
                    continue
                rest = OperatorPoly.word(*[word[i] for i in range(n) if i not in S])
                pref = z * (-1j) ** len(S)
                for alpha, wgt in ops.items():
                    for gamma, cg in F.coeffs.items():
                        if any(g < a for g, a in zip(gamma, alpha)):
                            continue
                        beta = tuple(g - a for g, a in zip(gamma, alpha))
                        level = tp + sum(beta)
                        if level > J:
                            continue
                        fac = 1.0
                        for g, a, b, dj in zip(gamma, alpha, beta, d):
                            fac *= math.factorial(g) / math.factorial(b) * dj ** b
                        if fac == 0.0:
                            continue
                        add(level, multiply(cg, rest, table), pref * wgt * fac)
    result = [OperatorPoly(acc) for acc in out]
    if max_degree is not None:
        for c in result:
            if c.degree() > max_degree:
                raise DegreeBoundExceeded(f"result of degree {c.degree()} exceeds bound {max_degree}")
    return result


def _apply_kick(m: KickField, coeffs: Sequence[OperatorPoly], base: str | None, table: PairingTable) -> list[OperatorPoly]:
    shifted = [shift_labels(c, m.f, m.strength, table) for c in coeffs]
    if base is None:
        return shifted
    J = len(coeffs) - 1
    x = -1j * m.strength * table.d(m.f, base)
    phase = [x ** n / math.factorial(n) for n in range(J + 1)]
    return [sum((shifted[k - n] * phase[n] for n in range(k + 1)), OperatorPoly.zero()) for k in range(J + 1)]


Operand = Union[WeylJet, OperatorPoly]


def apply(m: UpdateMap, w: Operand, table: PairingTable) -> Operand:
    """Act with ``m`` on a Weyl jet or on a field polynomial (Heisenberg picture)."""
    m.validate(table)
    if isinstance(w, WeylJet):
        limit = getattr(m, "max_jet_order", None)
        if limit is not None and w.order > limit:
            raise MapError(f"{type(m).__name__} supports jet order <= {limit}, got {w.order}")
        coeffs, base, maxdeg = list(w.coeffs), w.base, w.max_degree
        labels = w.labels() | {w.base}
    elif isinstance(w, OperatorPoly):
        coeffs, base, maxdeg = [w], None, None
        labels = w.labels()
    else:
        raise TypeError(f"cannot apply a map to {type(w).__name__}")
    if isinstance(m, GaussianMeasureJordanPair):
        m.operand_check(labels, table)
    if isinstance(m, KickField):
        new = _apply_kick(m, coeffs, base, table)
    else:
        new = _apply_multiplier(m, coeffs, base, table, maxdeg)
    if isinstance(w, WeylJet):
        return WeylJet(w.base, tuple(normalize(c, table, None) for c in new), w.max_degree)
    return normalize(new[0], table, None)


# ---------------------------------------------------------------------------
# Compositions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Composition:
    """Maps in state order; operators see them in reverse."""

    maps: tuple[UpdateMap, ...]
    alice: int | None = None

    def __post_init__(self):
        maps = tuple(self.maps)
        if not maps:
            raise MapError("a composition needs at least one map")
        object.__setattr__(self, "maps", maps)
        if self.alice is not None:
            if not (0 <= self.alice < len(maps)) or not isinstance(maps[self.alice], KickField):
                raise MapError("Alice must be a KickField member of the composition")

    def with_strength(self, lam: float) -> "Composition":
        if self.alice is None:
            raise MapError("composition has no marked Alice kick")
        maps = list(self.maps)
        maps[self.alice] = replace(maps[self.alice], strength=lam)
        return Composition(tuple(maps), self.alice)


def compose(maps: Sequence[UpdateMap], alice: int | None = None) -> Composition:
    return Composition(tuple(maps), alice)


def apply_composition(c: Composition, w: Operand, table: PairingTable) -> Operand:
    for m in reversed(c.maps):
        w = apply(m, w, table)
    return w
