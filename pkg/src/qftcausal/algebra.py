"""Field polynomials, canonical commutation relations and Gaussian moments.

An :class:`OperatorPoly` is a finite sum of words with complex coefficients.
A word is a tuple of field labels, read left to right as an operator
product.  Normal ordering sorts labels by their registration index in the
:class:`~qftcausal.smearing.PairingTable`, rewriting with

    phi(a) phi(b) = phi(b) phi(a) + i Delta(a, b)

Some measurement maps produce coefficients that are smooth functions of a
single smeared field, for example the Gaussian window probability of a
selective measurement.  These appear in words as a :class:`SpectralFn`
element, always in leading position after normal ordering, and obey

    phi(b) F(phi(a)) = F(phi(a)) phi(b) + i Delta(b, a) F'(phi(a)).
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Union

import numpy as np

from .smearing import PairingTable

DEFAULT_MAX_DEGREE = 4
DEFAULT_JET_ORDER = 2


class AlgebraError(ValueError):
    """Invalid algebraic request (unknown label, unsupported product...)."""


class DegreeBoundExceeded(AlgebraError):
    pass


# ---------------------------------------------------------------------------
# Spectral functions of one field
# ---------------------------------------------------------------------------

class SpectralFamily(ABC):
    """A smooth real function ``F`` and its derivatives, applied to a field."""

    name: str = "F"

    @abstractmethod
    def derivative(self, n: int, z: np.ndarray | float) -> np.ndarray | float:
        """``F^(n)(z)``."""

    def gaussian_expectation(self, n: int, var: float, shift: float) -> float:
        """``E[F^(n)(v + shift)]`` for ``v ~ N(0, var)``."""
        if var <= 0.0:
            return float(self.derivative(n, shift))
        z, w = np.polynomial.hermite_e.hermegauss(160)
        vals = self.derivative(n, math.sqrt(var) * z + shift)
        return float(np.dot(w, vals) / math.sqrt(2.0 * math.pi))


@dataclass(frozen=True)
class SpectralFn:
    """``F^(order)(phi(label) + shift)`` as a word element."""

    label: str
    family: SpectralFamily
    order: int = 0
    shift: float = 0.0

    def derivative(self, n: int = 1) -> "SpectralFn":
        return SpectralFn(self.label, self.family, self.order + n, self.shift)

    def shifted(self, s: float) -> "SpectralFn":
        return SpectralFn(self.label, self.family, self.order, self.shift + s)

    def __call__(self, value):
        return self.family.derivative(self.order, np.asarray(value) + self.shift)

    def __str__(self) -> str:
        d = "'" * self.order if self.order <= 3 else f"^({self.order})"
        s = f" + {self.shift!r}" if self.shift else ""
        return f"{self.family.name}{d}(phi({self.label}){s})"


Element = Union[str, SpectralFn]
Word = tuple


def _is_field(e: Element) -> bool:
    return isinstance(e, str)


def word_degree(word: Word) -> int:
    return sum(1 for e in word if _is_field(e))


def _fmt_word(word: Word) -> str:
    if not word:
        return "1"
    return " ".join(f"phi({e})" if _is_field(e) else str(e) for e in word)


def _fmt_coeff(c: complex) -> str:
    if c.imag == 0.0:
        return repr(c.real)
    if c.real == 0.0:
        return f"{c.imag!r}j"
    return f"({c.real!r}{c.imag:+}j)"


# ---------------------------------------------------------------------------
# Operator polynomials
# ---------------------------------------------------------------------------

class OperatorPoly:
    """Immutable sum of coefficient-weighted words."""

    __slots__ = ("_terms",)

    def __init__(self, terms: Mapping[Word, complex] | Iterable[tuple[Word, complex]] | None = None):
        acc: dict[Word, complex] = {}
        items = terms.items() if isinstance(terms, Mapping) else (terms or ())
        for word, c in items:
            word = tuple(word)
            acc[word] = acc.get(word, 0.0) + complex(c)
        self._terms = {w: c for w, c in acc.items() if c != 0}

    # constructors ---------------------------------------------------------

    @classmethod
    def zero(cls) -> "OperatorPoly":
        return cls()

    @classmethod
    def identity(cls) -> "OperatorPoly":
        return cls({(): 1.0})

    @classmethod
    def scalar(cls, c: complex) -> "OperatorPoly":
        return cls({(): c})

    @classmethod
    def field(cls, label: str) -> "OperatorPoly":
        return cls({(label,): 1.0})

    @classmethod
    def word(cls, *elements: Element, coeff: complex = 1.0) -> "OperatorPoly":
        return cls({tuple(elements): coeff})

    # views ------------------------------------------------------------------

    @property
    def terms(self) -> Mapping[Word, complex]:
        return dict(self._terms)

    def items(self) -> Iterator[tuple[Word, complex]]:
        return iter(self._terms.items())

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self):
        return iter(self._terms)

    def coefficient(self, word: Iterable[Element]) -> complex:
        return self._terms.get(tuple(word), 0.0)

    def scalar_part(self) -> complex:
        return self._terms.get((), 0.0)

    def is_scalar(self) -> bool:
        return all(len(w) == 0 for w in self._terms)

    def degree(self) -> int:
        return max((word_degree(w) for w in self._terms), default=0)

    def labels(self, tol: float = 0.0) -> set[str]:
        out: set[str] = set()
        for w, c in self._terms.items():
            if abs(c) <= tol:
                continue
            for e in w:
                out.add(e if _is_field(e) else e.label)
        return out

    def has_spectral(self) -> bool:
        return any(not _is_field(e) for w in self._terms for e in w)

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def prune(self, tol: float) -> "OperatorPoly":
        return OperatorPoly({w: c for w, c in self._terms.items() if abs(c) > tol})

    def allclose(self, other: "OperatorPoly", atol: float = 1e-12, rtol: float = 0.0) -> bool:
        for w in set(self._terms) | set(other._terms):
            a, b = self.coefficient(w), other.coefficient(w)
            if abs(a - b) > atol + rtol * max(abs(a), abs(b)):
                return False
        return True

    # arithmetic (products need a table, see ``multiply``) -----------------

    def __add__(self, other):
        if isinstance(other, (int, float, complex)):
            other = OperatorPoly.scalar(other)
        if not isinstance(other, OperatorPoly):
            return NotImplemented
        return OperatorPoly(list(self._terms.items()) + list(other._terms.items()))

    __radd__ = __add__

    def __neg__(self) -> "OperatorPoly":
        return OperatorPoly({w: -c for w, c in self._terms.items()})

    def __sub__(self, other):
        if isinstance(other, (int, float, complex)):
            other = OperatorPoly.scalar(other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            return OperatorPoly({w: c * other for w, c in self._terms.items()})
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            return self * (1.0 / other)
        return NotImplemented

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, OperatorPoly):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self) -> int:
        return hash(frozenset(self._terms.items()))

    def __repr__(self) -> str:
        if not self._terms:
            return "OperatorPoly(0)"
        parts = [f"{_fmt_coeff(c)}*{_fmt_word(w)}" for w, c in sorted(self._terms.items(), key=lambda kv: (len(kv[0]), str(kv[0])))]
        return "OperatorPoly(" + " + ".join(parts) + ")"


# ---------------------------------------------------------------------------
# Normal ordering
# ---------------------------------------------------------------------------

def _key(e: Element, table: PairingTable) -> int:
    return -1 if not _is_field(e) else table.index(e)


def _commutator_term(left: Element, right: Element, rest_before: Word, rest_after: Word, table: PairingTable):
    """Swap ``left right -> right left`` and return the correction word and coefficient."""
    if _is_field(left) and _is_field(right):
        c = 1j * table.d(left, right)
        return (rest_before + rest_after, c) if c != 0 else None
    if _is_field(left) and not _is_field(right):
        c = 1j * table.d(left, right.label)
        return (rest_before + (right.derivative(),) + rest_after, c) if c != 0 else None
    raise AlgebraError("products of two spectral functions are not supported")


def _order_word(word: Word, table: PairingTable) -> dict[Word, complex]:
    cache = table._cache.setdefault("normal_order", {})
    hit = cache.get(word)
    if hit is not None:
        return hit
    n_spec = sum(1 for e in word if not _is_field(e))
    if n_spec > 1:
        raise AlgebraError("products of two spectral functions are not supported")
    for i in range(len(word) - 1):
        if _key(word[i], table) > _key(word[i + 1], table):
            break
    else:
        for e in word:
            if _is_field(e):
                table.index(e)
            else:
                table.index(e.label)
        result = {word: 1.0 + 0j}
        cache[word] = result
        return result
    a, b = word[i], word[i + 1]
    out = dict(_order_word(word[:i] + (b, a) + word[i + 2 :], table))
    corr = _commutator_term(a, b, word[:i], word[i + 2 :], table)
    if corr is not None:
        cw, cc = corr
        for w, v in _order_word(cw, table).items():
            out[w] = out.get(w, 0.0) + cc * v
    out = {w: v for w, v in out.items() if v != 0}
    cache[word] = out
    return out


def normal_order(word: Iterable[Element], table: PairingTable, max_degree: int | None = DEFAULT_MAX_DEGREE) -> OperatorPoly:
    """Canonical form of a single word."""
    word = tuple(word)
    if max_degree is not None and word_degree(word) > max_degree:
        raise DegreeBoundExceeded(f"word of degree {word_degree(word)} exceeds bound {max_degree}")
    return OperatorPoly(_order_word(word, table))


def normalize(p: OperatorPoly, table: PairingTable, max_degree: int | None = DEFAULT_MAX_DEGREE) -> OperatorPoly:
    acc: dict[Word, complex] = {}
    for w, c in p.items():
        if max_degree is not None and word_degree(w) > max_degree:
            raise DegreeBoundExceeded(f"word of degree {word_degree(w)} exceeds bound {max_degree}")
        for w2, v in _order_word(w, table).items():
            acc[w2] = acc.get(w2, 0.0) + c * v
    return OperatorPoly(acc)


def multiply(p: OperatorPoly, q: OperatorPoly, table: PairingTable, max_degree: int | None = None) -> OperatorPoly:
    """Normal-ordered operator product ``p q``."""
    acc: dict[Word, complex] = {}
    for w1, c1 in p.items():
        for w2, c2 in q.items():
            w = w1 + w2
            if max_degree is not None and word_degree(w) > max_degree:
                raise DegreeBoundExceeded(f"product of degree {word_degree(w)} exceeds bound {max_degree}")
            for w3, v in _order_word(w, table).items():
                acc[w3] = acc.get(w3, 0.0) + c1 * c2 * v
    return OperatorPoly(acc)


def power(p: OperatorPoly, n: int, table: PairingTable, max_degree: int | None = None) -> OperatorPoly:
    out = OperatorPoly.identity()
    for _ in range(n):
        out = multiply(out, p, table, max_degree)
    return out


def jordan(p: OperatorPoly, q: OperatorPoly, table: PairingTable, max_degree: int | None = None) -> OperatorPoly:
    """Symmetrised product ``(p q + q p) / 2``."""
    return 0.5 * (multiply(p, q, table, max_degree) + multiply(q, p, table, max_degree))


def shift_labels(p: OperatorPoly, f: str, lam: float, table: PairingTable) -> OperatorPoly:
    """Conjugation by ``exp(i lam phi(f))``: ``phi(a) -> phi(a) + lam Delta(a, f)``."""
    if lam == 0:
        return p
    table.index(f)
    acc = OperatorPoly.zero()
    for w, c in p.items():
        term = OperatorPoly.scalar(c)
        for e in w:
            if _is_field(e):
                rep = OperatorPoly({(e,): 1.0, (): lam * table.d(e, f)})
            else:
                rep = OperatorPoly({(e.shifted(lam * table.d(e.label, f)),): 1.0})
            term = multiply(term, rep, table)
        acc = acc + term
    return acc


# ---------------------------------------------------------------------------
# Gaussian states and Wick expectation values
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianState:
    """Mean-zero quasifree state with ``<phi(a) phi(b)> = W_s(a, b) + (i/2) Delta(a, b)``."""

    table: PairingTable

    def __post_init__(self) -> None:
        if self.table.wsym is None:
            raise AlgebraError("a Gaussian state needs a table with vacuum covariances (mass > 0)")
        self.table.check_psd()

    def two_point(self, a: str, b: str) -> complex:
        return self.table.two_point(a, b)


def _perfect_pairings_value(fields: Word, omega) -> complex:
    n = len(fields)
    if n == 0:
        return 1.0
    if n % 2:
        return 0.0
    first, rest = fields[0], fields[1:]
    total = 0.0
    for j in range(len(rest)):
        total += omega(first, rest[j]) * _perfect_pairings_value(rest[:j] + rest[j + 1 :], omega)
    return total


def _partial_pairings(fields: Word, omega, atom_label: str, unpaired: int = 0):
    """Yield (value, number_unpaired) over partial pairings; unpaired fields contract with the atom."""
    if not fields:
        yield 1.0, unpaired
        return
    first, rest = fields[0], fields[1:]
    c = omega(atom_label, first)
    if c != 0:
        for v, m in _partial_pairings(rest, omega, atom_label, unpaired + 1):
            yield c * v, m
    for j in range(len(rest)):
        cj = omega(first, rest[j])
        if cj == 0:
            continue
        for v, m in _partial_pairings(rest[:j] + rest[j + 1 :], omega, atom_label, unpaired):
            yield cj * v, m


def _word_expectation(word: Word, state: GaussianState) -> complex:
    table = state.table
    omega = table.two_point
    if all(_is_field(e) for e in word):
        return _perfect_pairings_value(word, omega)
    if _is_field(word[0]) or any(not _is_field(e) for e in word[1:]):
        raise AlgebraError("spectral functions must lead their word; normal-order first")
    atom: SpectralFn = word[0]
    var = table.w(atom.label, atom.label)
    total = 0.0
    for v, m in _partial_pairings(word[1:], omega, atom.label):
        total += v * atom.family.gaussian_expectation(atom.order + m, var, atom.shift)
    return total


def wick_expectation(p: OperatorPoly, state: GaussianState) -> complex:
    """Expectation value in a mean-zero Gaussian state."""
    total = 0.0 + 0.0j
    for w, c in p.items():
        if any(not _is_field(e) for e in w) and _is_field(w[0]):
            for w2, v in _order_word(w, state.table).items():
                total += c * v * _word_expectation(w2, state)
        else:
            total += c * _word_expectation(w, state)
    return complex(total)


# ---------------------------------------------------------------------------
# Weyl jets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeylJet:
    """Truncated ``c(t) exp(i t phi(base))`` with ``c(t) = sum_k coeffs[k] t^k``."""

    base: str
    coeffs: tuple[OperatorPoly, ...]
    max_degree: int = DEFAULT_MAX_DEGREE

    def __post_init__(self) -> None:
        coeffs = tuple(self.coeffs)
        if not coeffs:
            raise AlgebraError("a jet needs at least the zeroth coefficient")
        for c in coeffs:
            if not isinstance(c, OperatorPoly):
                raise AlgebraError("jet coefficients must be OperatorPoly")
            if c.degree() > self.max_degree:
                raise DegreeBoundExceeded(f"jet coefficient of degree {c.degree()} exceeds bound {self.max_degree}")
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def trivial(cls, base: str, order: int = DEFAULT_JET_ORDER, max_degree: int = DEFAULT_MAX_DEGREE) -> "WeylJet":
        return cls(base, (OperatorPoly.identity(),) + (OperatorPoly.zero(),) * order, max_degree)

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    def scaled(self, s: complex) -> "WeylJet":
        return WeylJet(self.base, tuple(c * s for c in self.coeffs), self.max_degree)

    def labels(self, tol: float = 0.0) -> set[str]:
        out: set[str] = set()
        for c in self.coeffs:
            out |= c.labels(tol)
        return out

    def allclose(self, other: "WeylJet", atol: float = 1e-12) -> bool:
        return (
            self.base == other.base
            and self.order == other.order
            and all(a.allclose(b, atol) for a, b in zip(self.coeffs, other.coeffs))
        )


def jet_extract(w: WeylJet, k: int, table: PairingTable) -> OperatorPoly:
    """``(-i d/dt)^k [c(t) exp(i t phi(g))]`` at ``t = 0`` for ``k`` in {1, 2}."""
    if k not in (1, 2):
        raise AlgebraError("jet_extract supports k = 1 or 2")
    if k > w.order:
        raise AlgebraError(f"k = {k} exceeds jet order {w.order}")
    g = OperatorPoly.field(w.base)
    c = w.coeffs
    if k == 1:
        return normalize(multiply(c[0], g, table) - 1j * c[1], table, None)
    g2 = multiply(g, g, table)
    return normalize(
        multiply(c[0], g2, table) - 2j * multiply(c[1], g, table) - 2.0 * c[2], table, None
    )
