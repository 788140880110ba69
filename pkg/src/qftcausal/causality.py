"""Causality audits of update maps.

Two tiers are offered.  ``psni_check`` is syntactic: it looks for smeared
fields that appear in a map's output and whose support leaves the causal
past of the original operator's support.  ``signal_gradient`` is semantic:
it sweeps Alice's kick strength and fits the exact polynomial dependence of
Bob's expectation value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence, Union

import numpy as np

from .algebra import GaussianState, OperatorPoly, WeylJet, jet_extract, wick_expectation
from .geometry import (
    GeometryError,
    Point,
    Rect,
    RegionSet,
    as_region,
    causal_shadow,
    contained_in_causal_past,
    outside_causal_past,
    strictly_spacelike,
)
from .maps import Composition, KickField, apply_composition
from .smearing import PairingTable

DEFAULT_LABEL_TOL = 1e-14
DEFAULT_SIGNAL_THRESHOLD = 1e-10


class CausalityError(ValueError):
    """An audit precondition does not hold."""


class Verdict(str, Enum):
    CAUSAL = "causal"
    ACAUSAL = "acausal"
    INCONCLUSIVE = "inconclusive"


def _rect_text(r: Rect) -> str:
    return f"[{r.t_lo!r},{r.t_hi!r}]x[{r.x_lo!r},{r.x_hi!r}]"


def _region_text(region: RegionSet) -> str:
    return " u ".join(_rect_text(r) for r in region)


def _region_dict(region: RegionSet) -> list[list[float]]:
    return [[r.t_lo, r.t_hi, r.x_lo, r.x_hi] for r in region]


@dataclass(frozen=True)
class Relocalization:
    """Outcome of the optional slab search for a label's re-localisation."""

    label: str
    found: Rect | None
    candidates: int

    @property
    def status(self) -> str:
        return "relocalised" if self.found is not None else "search exhausted"


@dataclass(frozen=True)
class SupportReport:
    base: str
    new_labels: dict[str, RegionSet]
    verdict: Verdict
    witnesses: tuple[tuple[str, Point, Point], ...] = ()
    repair: tuple[Relocalization, ...] = ()

    @property
    def new_support(self) -> RegionSet | None:
        regions = list(self.new_labels.values())
        if not regions:
            return None
        out = regions[0]
        for r in regions[1:]:
            out = out.union(r)
        return out

    def to_dict(self) -> dict:
        return {
            "kind": "support_report",
            "base": self.base,
            "verdict": self.verdict.value,
            "new_labels": {k: _region_dict(v) for k, v in sorted(self.new_labels.items())},
            "witnesses": [
                {"label": lab, "point": [p.t, p.x], "against": [q.t, q.x]} for lab, p, q in self.witnesses
            ],
            "repair": [
                {
                    "label": r.label,
                    "status": r.status,
                    "candidates": r.candidates,
                    "found": None if r.found is None else [r.found.t_lo, r.found.t_hi, r.found.x_lo, r.found.x_hi],
                }
                for r in self.repair
            ],
        }

    def to_text(self) -> str:
        lines = [f"base = {self.base}", f"verdict = {self.verdict.value}"]
        for lab, reg in sorted(self.new_labels.items()):
            lines.append(f"new_label {lab} = {_region_text(reg)}")
        for lab, p, q in self.witnesses:
            lines.append(f"witness {lab} = ({p.t!r}, {p.x!r}) not in past of ({q.t!r}, {q.x!r})")
        for r in self.repair:
            lines.append(f"repair {r.label} = {r.status} ({r.candidates} candidates)")
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class SignalReport:
    protocol: str
    observable: str
    lambdas: tuple[float, ...]
    values: tuple[complex, ...]
    coefficients: tuple[complex, ...]
    threshold: float

    @property
    def signal(self) -> bool:
        return any(abs(c) > self.threshold for c in self.coefficients[1:])

    @property
    def verdict(self) -> str:
        return "signal" if self.signal else "no-signal"

    def max_gradient(self) -> float:
        return max((abs(c) for c in self.coefficients[1:]), default=0.0)

    def to_dict(self) -> dict:
        def cplx(z: complex) -> list[float]:
            return [float(np.real(z)), float(np.imag(z))]

        return {
            "kind": "signal_report",
            "protocol": self.protocol,
            "observable": self.observable,
            "lambdas": list(self.lambdas),
            "values": [cplx(v) for v in self.values],
            "coefficients": [cplx(c) for c in self.coefficients],
            "threshold": self.threshold,
            "verdict": self.verdict,
        }

    def to_text(self) -> str:
        lines = [
            f"protocol = {self.protocol}",
            f"observable = {self.observable}",
            f"threshold = {self.threshold!r}",
            f"verdict = {self.verdict}",
        ]
        for k, c in enumerate(self.coefficients):
            lines.append(f"coefficient {k} = {complex(c)!r}")
        for lam, v in zip(self.lambdas, self.values):
            lines.append(f"value {lam!r} = {complex(v)!r}")
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


Auditable = Union[WeylJet, OperatorPoly]


def _supports(table: PairingTable, registry: Mapping[str, RegionSet] | None) -> Mapping[str, RegionSet]:
    if registry is not None:
        return registry
    if table.supports is None:
        raise CausalityError("no support registry available")
    return table.supports


def relocalization_search(
    label: str,
    target: RegionSet,
    support: RegionSet,
    slabs: int = 24,
    span: float | None = None,
) -> Relocalization:
    """Look for a time slab where the solution generated by ``label`` could be re-smeared inside ``J^-(target)``.

    A moved smearing function lives in ``slab`` intersected with the causal
    shadow of its support.  The search only reports failure as exhaustion of
    the candidate list; it proves nothing.
    """
    box = support.bounding_box()
    tbox = target.bounding_box()
    span = span or 2.0 * max(box.t_hi - box.t_lo, tbox.t_hi - tbox.t_lo, abs(tbox.t_hi - box.t_lo)) + 1.0
    t_lo = min(box.t_lo, tbox.t_lo) - span
    t_hi = tbox.t_hi
    edges = np.linspace(t_lo, t_hi, slabs + 1)
    # wide enough that no shadow is clipped in x
    reach = (max(t_hi, box.t_hi) - t_lo) + 1.0
    x_lo = min(box.x_lo, tbox.x_lo) - reach
    x_hi = max(box.x_hi, tbox.x_hi) + reach
    for a, b in zip(edges[:-1], edges[1:]):
        clip = Rect(float(a), float(b), x_lo, x_hi)
        pieces: list[Rect] = []
        for direction in ("future", "past"):
            try:
                pieces.extend(causal_shadow(support, direction, clip))
            except GeometryError:
                continue
        if not pieces:
            continue
        if contained_in_causal_past(RegionSet(pieces), target):
            return Relocalization(label, clip, slabs)
    return Relocalization(label, None, slabs)


def psni_check(
    result: Auditable,
    g_support: RegionSet | Rect,
    table: PairingTable,
    registry: Mapping[str, RegionSet] | None = None,
    original_labels: Sequence[str] | None = None,
    tol: float = DEFAULT_LABEL_TOL,
    repair: bool = False,
) -> SupportReport:
    """Support audit of a map's output.

    Labels present in the output but not in ``original_labels`` (by default
    the jet's base) are new.  A new label with a support point outside the
    causal past of ``g_support`` makes the verdict ``acausal``; new labels
    confined to that past leave it ``inconclusive``.
    """
    supports = _supports(table, registry)
    g_support = as_region(g_support)
    if isinstance(result, WeylJet):
        base = result.base
        present = result.labels(tol)
        original = set(original_labels) if original_labels is not None else {base}
    elif isinstance(result, OperatorPoly):
        present = result.labels(tol)
        original = set(original_labels or ())
        base = ",".join(sorted(original))
    else:
        raise TypeError(f"cannot audit {type(result).__name__}")
    for lab in present | original:
        if lab not in supports:
            raise CausalityError(f"label {lab!r} has no registered support")
    new = {lab: supports[lab] for lab in sorted(present - original)}
    witnesses = []
    for lab, reg in new.items():
        p = outside_causal_past(reg, g_support)
        if p is not None:
            q = min((r.center for r in g_support), key=lambda c: (c.t - p.t) ** 2 + (c.x - p.x) ** 2)
            witnesses.append((lab, p, q))
    if not new:
        verdict = Verdict.CAUSAL
    elif witnesses:
        verdict = Verdict.ACAUSAL
    else:
        verdict = Verdict.INCONCLUSIVE
    fixes: tuple[Relocalization, ...] = ()
    if repair and witnesses:
        fixes = tuple(relocalization_search(lab, g_support, new[lab]) for lab, _, _ in witnesses)
    return SupportReport(base, new, verdict, tuple(witnesses), fixes)


Observable = Union[OperatorPoly, tuple[str, int]]


def observable_name(obs: Observable) -> str:
    if isinstance(obs, tuple):
        label, k = obs
        return f"phi({label})" if k == 1 else f"phi({label})^{k}"
    return str(obs)


def observable_labels(obs: Observable) -> set[str]:
    return {obs[0]} if isinstance(obs, tuple) else obs.labels()


def evolve_observable(c: Composition | None, obs: Observable, table: PairingTable) -> OperatorPoly:
    """Heisenberg-picture image of ``obs`` under the composition.

    ``(label, k)`` observables go through the Weyl-jet route and
    ``jet_extract``; general polynomials are mapped directly.
    """
    if isinstance(obs, tuple):
        label, k = obs
        w = WeylJet.trivial(label, max(k, 1))
        if c is not None:
            w = apply_composition(c, w, table)
        return jet_extract(w, k, table)
    return obs if c is None else apply_composition(c, obs, table)


def expectation_after(c: Composition | None, obs: Observable, state: GaussianState) -> complex:
    return wick_expectation(evolve_observable(c, obs, state.table), state)


def _alice_region(c: Composition, table: PairingTable) -> RegionSet:
    kick = c.maps[c.alice]
    if kick.region is not None:
        return kick.region
    if table.supports is None or kick.f not in table.supports:
        raise CausalityError("Alice's kick has neither a region nor a registered support")
    return table.supports[kick.f]


def signal_gradient(
    c: Composition,
    observable: Observable,
    state: GaussianState,
    lambdas: Sequence[float] = (-1.0, -0.5, 0.0, 0.5, 1.0),
    threshold: float = DEFAULT_SIGNAL_THRESHOLD,
    degree: int = 2,
    protocol: str = "",
) -> SignalReport:
    """Fit ``<observable>`` after the composition as an exact polynomial in Alice's strength."""
    table = state.table
    if c.alice is None:
        raise CausalityError("composition has no marked Alice kick")
    lambdas = tuple(float(v) for v in lambdas)
    if len(set(lambdas)) < degree + 1:
        raise CausalityError(f"need at least {degree + 1} distinct lambda values")
    alice = _alice_region(c, table)
    for lab in observable_labels(observable):
        if table.supports is None or lab not in table.supports:
            raise CausalityError(f"observable label {lab!r} has no registered support")
        if not strictly_spacelike(alice, table.supports[lab]):
            raise CausalityError(f"Alice's region is not strictly spacelike to supp {lab}")
    values = tuple(expectation_after(c.with_strength(lam), observable, state) for lam in lambdas)
    vand = np.vander(np.asarray(lambdas), degree + 1, increasing=True)
    coeffs, *_ = np.linalg.lstsq(vand.astype(complex), np.asarray(values, dtype=complex), rcond=None)
    return SignalReport(
        protocol, observable_name(observable), lambdas, values, tuple(complex(z) for z in coeffs), threshold
    )
