"""Protocol files: parsing, printing, running and auditing.

A protocol is a plain-text file of sections::

    # comment
    [field]
    mass = 1.0
    backend = quadrature          # or: lattice
    dx = 0.05                     # quadrature base spacing
    levels = 6
    tol = 1e-9
    lattice_dx = 0.02             # used by the lattice backend

    [function g]
    kind = cosine_bump            # cosine_bump | truncated_gaussian | file
    center = 2.0, 3.8             # t, x
    half_width = 0.4
    amplitude = 1.0
    path = g.txt                  # kind = file only

    [op 1]
    agent = Alice
    map = kick                    # see MAP_KEYS
    field = h
    strength = lambda             # the literal token lambda is bound by the sweep
    region = -0.5, 0.5, -0.5, 0.5 # t_lo, t_hi, x_lo, x_hi; several joined by ';'

    [readout]
    observable = phi(g)^2
    lambda = -1, -0.5, 0, 0.5, 1  # or: sweep = -1:1:0.5
    samples = 0
    seed = 0
    sigma = 1.0

Operations are listed in the order they act on the state.  The runner
applies them to the observable in reverse.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .algebra import GaussianState, OperatorPoly, WeylJet, jet_extract, multiply, wick_expectation
from .causality import (
    DEFAULT_SIGNAL_THRESHOLD,
    SignalReport,
    SupportReport,
    Verdict,
    evolve_observable,
    psni_check,
    signal_gradient,
)
from .geometry import Point, Rect, RegionRelation, RegionSet, region_relation
from .maps import (
    Composition,
    GaussianMeasureCommutingPoly,
    GaussianMeasureField,
    GaussianMeasureJordanPair,
    GeneralMeasureField,
    KickField,
    KickFieldSquared,
    LoccConditional,
    SampledKrausProfile,
    SelectiveGaussian,
    UpdateMap,
    apply,
    selective_probability,
)
from .classical import Lattice, lattice_delta
from .sampler import COMMUTING, JORDAN, MeasurementPlan, estimate_moments, sample_measurements
from .smearing import (
    BumpSpec,
    PairingTable,
    QuadratureConfig,
    SampledFunction,
    build_pairing_table,
    vacuum_covariance,
)

LAMBDA = "lambda"


class ProtocolError(ValueError):
    """Parse or run failure, with a source location when one is known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None, op: int | None = None):
        self.line, self.column, self.op = line, column, op
        where = []
        if line is not None:
            where.append(f"line {line}" + (f", column {column}" if column is not None else ""))
        if op is not None:
            where.append(f"operation {op}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


# ---------------------------------------------------------------------------
# Observable expressions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Field:
    name: str


@dataclass(frozen=True)
class Scalar:
    value: float


@dataclass(frozen=True)
class Sum:
    terms: tuple  # of (sign, node)


@dataclass(frozen=True)
class Product:
    factors: tuple


@dataclass(frozen=True)
class Power:
    base: object
    exponent: int


@dataclass(frozen=True)
class Jordan:
    left: object
    right: object


ObservableExpr = Union[Field, Scalar, Sum, Product, Power, Jordan]

_NUMBER = re.compile(r"\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?")
_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class _ExprParser:
    """Recursive descent over ``expr := term (('+'|'-') term)*`` and friends."""

    def __init__(self, text: str, line: int | None = None, col0: int = 1):
        self.text, self.pos, self.line, self.col0 = text, 0, line, col0

    def error(self, msg: str) -> ProtocolError:
        return ProtocolError(f"{msg} in observable {self.text!r}", self.line, self.col0 + self.pos)

    def skip(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self, s: str) -> bool:
        self.skip()
        return self.text.startswith(s, self.pos)

    def expect(self, s: str) -> None:
        if not self.peek(s):
            raise self.error(f"expected {s!r}")
        self.pos += len(s)

    def parse(self) -> ObservableExpr:
        node = self.expr()
        self.skip()
        if self.pos != len(self.text):
            raise self.error(f"unexpected {self.text[self.pos]!r}")
        return node

    def expr(self) -> ObservableExpr:
        terms = [(1, self.term())]
        while True:
            if self.peek("+"):
                self.pos += 1
                terms.append((1, self.term()))
            elif self.peek("-"):
                self.pos += 1
                terms.append((-1, self.term()))
            else:
                break
        return terms[0][1] if len(terms) == 1 and terms[0][0] == 1 else Sum(tuple(terms))

    def term(self) -> ObservableExpr:
        factors = [self.factor()]
        while self.peek("*"):
            self.pos += 1
            factors.append(self.factor())
        return factors[0] if len(factors) == 1 else Product(tuple(factors))

    def factor(self) -> ObservableExpr:
        node = self.atom()
        while self.peek("^"):
            self.pos += 1
            self.skip()
            m = re.compile(r"\d+").match(self.text, self.pos)
            if not m:
                raise self.error("expected a non-negative integer exponent")
            self.pos = m.end()
            node = Power(node, int(m.group()))
        return node

    def atom(self) -> ObservableExpr:
        self.skip()
        if self.peek("("):
            self.pos += 1
            node = self.expr()
            self.expect(")")
            return node
        m = _NUMBER.match(self.text, self.pos)
        if m:
            self.pos = m.end()
            return Scalar(float(m.group()))
        m = _NAME.match(self.text, self.pos)
        if m and m.group() == "phi":
            self.pos = m.end()
            self.expect("(")
            self.skip()
            n = _NAME.match(self.text, self.pos)
            if not n:
                raise self.error("expected a function name")
            self.pos = n.end()
            self.expect(")")
            return Field(n.group())
        if m and m.group() == "jordan":
            self.pos = m.end()
            self.expect("(")
            a = self.expr()
            self.expect(",")
            b = self.expr()
            self.expect(")")
            return Jordan(a, b)
        raise self.error("expected phi(...), jordan(...), a number or '('")


def parse_observable(text: str, line: int | None = None, column: int = 1) -> ObservableExpr:
    return _ExprParser(text, line, column).parse()


def print_observable(node: ObservableExpr) -> str:
    if isinstance(node, Field):
        return f"phi({node.name})"
    if isinstance(node, Scalar):
        return repr(node.value)
    if isinstance(node, Sum):
        out = []
        for k, (sign, t) in enumerate(node.terms):
            s = print_observable(t)
            if isinstance(t, Sum):
                s = f"({s})"
            if k == 0:
                # the grammar has no unary minus
                out.append(s if sign > 0 else f"0 - {s}")
            else:
                out.append(f"+ {s}" if sign > 0 else f"- {s}")
        return " ".join(out)
    if isinstance(node, Product):
        return " * ".join(f"({print_observable(f)})" if isinstance(f, Sum) else print_observable(f) for f in node.factors)
    if isinstance(node, Power):
        b = print_observable(node.base)
        if not isinstance(node.base, (Field, Jordan)):
            b = f"({b})"
        return f"{b}^{node.exponent}"
    if isinstance(node, Jordan):
        return f"jordan({print_observable(node.left)}, {print_observable(node.right)})"
    raise TypeError(node)


def observable_fields(node: ObservableExpr) -> set[str]:
    if isinstance(node, Field):
        return {node.name}
    if isinstance(node, Scalar):
        return set()
    if isinstance(node, Sum):
        return set().union(*(observable_fields(t) for _, t in node.terms))
    if isinstance(node, Product):
        return set().union(*(observable_fields(f) for f in node.factors))
    if isinstance(node, Power):
        return observable_fields(node.base)
    return observable_fields(node.left) | observable_fields(node.right)


def lower_observable(node: ObservableExpr, table: PairingTable) -> OperatorPoly:
    """Normal-ordered polynomial of an expression; ``jordan(a, b) = (ab + ba) / 2``."""
    if isinstance(node, Field):
        return OperatorPoly.field(node.name)
    if isinstance(node, Scalar):
        return OperatorPoly.scalar(node.value)
    if isinstance(node, Sum):
        out = OperatorPoly.zero()
        for sign, t in node.terms:
            out = out + lower_observable(t, table) * sign
        return out
    if isinstance(node, Product):
        out = OperatorPoly.identity()
        for f in node.factors:
            out = multiply(out, lower_observable(f, table), table)
        return out
    if isinstance(node, Power):
        base = lower_observable(node.base, table)
        out = OperatorPoly.identity()
        for _ in range(node.exponent):
            out = multiply(out, base, table)
        return out
    a, b = lower_observable(node.left, table), lower_observable(node.right, table)
    return (multiply(a, b, table) + multiply(b, a, table)) * 0.5


def jet_form(node: ObservableExpr) -> tuple[str, int] | None:
    """``(g, k)`` when the observable is ``phi(g)`` or ``phi(g)^2``."""
    if isinstance(node, Field):
        return (node.name, 1)
    if isinstance(node, Power) and isinstance(node.base, Field) and node.exponent in (1, 2):
        return (node.base.name, node.exponent)
    return None


# ---------------------------------------------------------------------------
# Protocol specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FieldConfig:
    mass: float = 1.0
    backend: str = "quadrature"
    dx: float = 0.05
    levels: int = 6
    tol: float = 1e-9
    lattice_dx: float = 0.02

    @property
    def quadrature(self) -> QuadratureConfig:
        return QuadratureConfig(self.dx, self.levels, self.tol)


@dataclass(frozen=True)
class FunctionDef:
    name: str
    kind: str
    center: tuple[float, float] | None = None
    half_width: float | None = None
    amplitude: float = 1.0
    path: str | None = None
    line: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class OpDef:
    index: int
    agent: str
    map: str
    params: tuple  # sorted (key, value) pairs with parsed values
    region: tuple[tuple[float, float, float, float], ...] | None = None
    line: int | None = field(default=None, compare=False)

    def param(self, key: str, default=None):
        return dict(self.params).get(key, default)


@dataclass(frozen=True)
class Readout:
    observable: ObservableExpr
    lambdas: tuple[float, ...] = (0.0,)
    samples: int = 0
    seed: int = 0
    sigma: float = 1.0


@dataclass(frozen=True)
class ProtocolSpec:
    field: FieldConfig
    functions: tuple[FunctionDef, ...]
    ops: tuple[OpDef, ...]
    readout: Readout
    base_dir: str | None = field(default=None, compare=False)

    def function(self, name: str) -> FunctionDef:
        for fn in self.functions:
            if fn.name == name:
                return fn
        raise ProtocolError(f"unknown function {name!r}")

    @property
    def alice_index(self) -> int | None:
        for k, op in enumerate(self.ops):
            if op.map == "kick" and op.param("strength") == LAMBDA:
                return k
        return None


# map name -> (required keys, optional keys)
MAP_KEYS: dict[str, tuple[tuple[str, ...], tuple[str, ...]]] = {
    "kick": (("field", "strength"), ()),
    "kick_squared": (("field",), ()),
    "gaussian": (("field", "sigma"), ()),
    "general": (("field", "sigma"), ("spacing",)),
    "commuting_poly": (("poly", "sigma"), ()),
    "jordan_pair": (("fields", "sigma"), ()),
    "selective": (("field", "sigma", "interval"), ("normalize",)),
    "locc": (("fields", "sigma", "interval"), ()),
}
RESERVED_OP_KEYS = ("if", "condition", "then")
FIELD_KEYS = ("mass", "backend", "dx", "levels", "tol", "lattice_dx")
FUNCTION_KEYS = ("kind", "center", "half_width", "amplitude", "path")
READOUT_KEYS = ("observable", "lambda", "sweep", "samples", "seed", "sigma")
BUMP_KINDS = ("cosine_bump", "truncated_gaussian")


@dataclass
class _Entry:
    value: str
    line: int
    column: int


def _number(e: _Entry, what: str) -> float:
    try:
        v = float(e.value)
    except ValueError:
        raise ProtocolError(f"malformed number {e.value!r} for {what}", e.line, e.column) from None
    if not math.isfinite(v):
        raise ProtocolError(f"{what} must be finite", e.line, e.column)
    return v


def _integer(e: _Entry, what: str) -> int:
    try:
        return int(e.value)
    except ValueError:
        raise ProtocolError(f"malformed integer {e.value!r} for {what}", e.line, e.column) from None


def _numbers(e: _Entry, what: str, count: int | None = None) -> tuple[float, ...]:
    parts = [p.strip() for p in e.value.split(",")]
    vals = []
    for p in parts:
        try:
            vals.append(float(p))
        except ValueError:
            raise ProtocolError(f"malformed number {p!r} in {what}", e.line, e.column) from None
    if count is not None and len(vals) != count:
        raise ProtocolError(f"{what} needs {count} comma-separated numbers", e.line, e.column)
    return tuple(vals)


def parse_sweep(text: str, line: int | None = None, column: int | None = None) -> tuple[float, ...]:
    """``a:b:step`` inclusive of ``b`` up to rounding."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ProtocolError(f"sweep must read a:b:step, got {text!r}", line, column)
    try:
        a, b, step = (float(p) for p in parts)
    except ValueError:
        raise ProtocolError(f"malformed number in sweep {text!r}", line, column) from None
    if not step > 0 or b < a:
        raise ProtocolError("sweep needs step > 0 and a <= b", line, column)
    n = int(math.floor((b - a) / step + 1e-9))
    return tuple(float(a + k * step) for k in range(n + 1))


_SECTION = re.compile(r"^\[\s*([A-Za-z_]+)(?:\s+([A-Za-z0-9_]+))?\s*\]$")


def _sections(text: str):
    current = None
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.strip()
        col = len(line) - len(line.lstrip()) + 1
        if stripped.startswith("["):
            m = _SECTION.match(stripped)
            if not m:
                raise ProtocolError(f"malformed section header {stripped!r}", ln, col)
            current = (m.group(1), m.group(2), ln, {})
            yield current
            continue
        if current is None:
            raise ProtocolError("key outside any section", ln, col)
        if "=" not in line:
            raise ProtocolError("expected 'key = value'", ln, col)
        key, value = line.split("=", 1)
        key = key.strip()
        vcol = line.index("=") + 2 + (len(value) - len(value.lstrip()))
        if key in current[3]:
            raise ProtocolError(f"duplicate key {key!r} (first on line {current[3][key].line})", ln, col)
        current[3][key] = _Entry(value.strip(), ln, vcol)


def _unknown_keys(entries: dict, allowed: Sequence[str], section: str) -> None:
    for key, e in entries.items():
        if key not in allowed:
            raise ProtocolError(f"unknown key {key!r} in [{section}]", e.line, 1)


def _parse_region(e: _Entry) -> tuple[tuple[float, float, float, float], ...]:
    rects = []
    for chunk in e.value.split(";"):
        vals = _numbers(_Entry(chunk, e.line, e.column), "region rectangle", 4)
        t_lo, t_hi, x_lo, x_hi = vals
        if not (t_lo < t_hi and x_lo < x_hi):
            raise ProtocolError("region rectangle needs t_lo < t_hi and x_lo < x_hi", e.line, e.column)
        rects.append(vals)
    return tuple(rects)


def _parse_op(index: int, line: int, entries: dict) -> OpDef:
    for key in RESERVED_OP_KEYS:
        if key in entries:
            e = entries[key]
            raise ProtocolError(
                "conditional operations are reserved syntax; only the locc map is executable", e.line, 1
            )
    if "map" not in entries:
        raise ProtocolError(f"[op {index}] needs a 'map' key", line, 1)
    kind = entries["map"].value
    if kind not in MAP_KEYS:
        e = entries["map"]
        raise ProtocolError(f"unknown map {kind!r}; expected one of {', '.join(MAP_KEYS)}", e.line, e.column)
    required, optional = MAP_KEYS[kind]
    _unknown_keys(entries, ("agent", "map", "region") + required + optional, f"op {index}")
    for key in required:
        if key not in entries:
            raise ProtocolError(f"map {kind!r} needs key {key!r}", line, 1)
    params = {}
    for key in required + optional:
        if key not in entries:
            continue
        e = entries[key]
        if key == "strength":
            params[key] = LAMBDA if e.value == LAMBDA else _number(e, key)
        elif key in ("sigma", "spacing"):
            params[key] = _number(e, key)
            if not params[key] > 0:
                raise ProtocolError(f"{key} must be positive", e.line, e.column)
        elif key == "interval":
            a, b = _numbers(e, "interval", 2)
            if a > b:
                raise ProtocolError("interval needs a <= b", e.line, e.column)
            params[key] = (a, b)
        elif key == "fields":
            names = tuple(p.strip() for p in e.value.split(","))
            if len(names) != 2 or not all(_NAME.fullmatch(n) for n in names):
                raise ProtocolError("'fields' needs two function names", e.line, e.column)
            params[key] = names
        elif key == "poly":
            params[key] = parse_observable(e.value, e.line, e.column)
        elif key == "normalize":
            if e.value not in ("yes", "no"):
                raise ProtocolError("normalize must be yes or no", e.line, e.column)
            params[key] = e.value == "yes"
        else:
            if not _NAME.fullmatch(e.value):
                raise ProtocolError(f"malformed name {e.value!r}", e.line, e.column)
            params[key] = e.value
    region = _parse_region(entries["region"]) if "region" in entries else None
    agent = entries["agent"].value if "agent" in entries else f"agent{index}"
    return OpDef(index, agent, kind, tuple(sorted(params.items())), region, line)


def _op_field_names(op: OpDef) -> list[str]:
    names = []
    for key, v in op.params:
        if key == "field":
            names.append(v)
        elif key == "fields":
            names.extend(v)
        elif key == "poly":
            names.extend(sorted(observable_fields(v)))
    return names


def parse_protocol(text: str, base_dir: str | None = None) -> ProtocolSpec:
    fcfg = FieldConfig()
    functions: list[FunctionDef] = []
    ops: list[OpDef] = []
    readout: Readout | None = None
    seen_field = False
    for name, arg, line, entries in list(_sections(text)):
        if name == "field":
            if seen_field:
                raise ProtocolError("duplicate [field] section", line, 1)
            seen_field = True
            _unknown_keys(entries, FIELD_KEYS, "field")
            kw = {}
            for key, e in entries.items():
                if key == "backend":
                    if e.value not in ("quadrature", "lattice"):
                        raise ProtocolError("backend must be quadrature or lattice", e.line, e.column)
                    kw[key] = e.value
                elif key == "levels":
                    kw[key] = _integer(e, key)
                else:
                    kw[key] = _number(e, key)
            fcfg = FieldConfig(**kw)
            if fcfg.mass < 0:
                raise ProtocolError("mass must be non-negative", entries["mass"].line, entries["mass"].column)
        elif name == "function":
            if arg is None:
                raise ProtocolError("[function] needs a name", line, 1)
            for prev in functions:
                if prev.name == arg:
                    raise ProtocolError(
                        f"duplicate function {arg!r}: defined on line {prev.line} and line {line}", line, 1
                    )
            _unknown_keys(entries, FUNCTION_KEYS, f"function {arg}")
            kind = entries["kind"].value if "kind" in entries else "cosine_bump"
            if kind == "file":
                if "path" not in entries:
                    raise ProtocolError(f"function {arg!r} of kind file needs 'path'", line, 1)
                functions.append(FunctionDef(arg, kind, path=entries["path"].value, line=line))
                continue
            if kind not in BUMP_KINDS:
                e = entries["kind"]
                raise ProtocolError(f"unknown function kind {kind!r}", e.line, e.column)
            for key in ("center", "half_width"):
                if key not in entries:
                    raise ProtocolError(f"function {arg!r} needs {key!r}", line, 1)
            center = _numbers(entries["center"], "center", 2)
            hw = _number(entries["half_width"], "half_width")
            if not hw > 0:
                e = entries["half_width"]
                raise ProtocolError("half_width must be positive", e.line, e.column)
            amp = _number(entries["amplitude"], "amplitude") if "amplitude" in entries else 1.0
            functions.append(FunctionDef(arg, kind, (center[0], center[1]), hw, amp, None, line))
        elif name == "op":
            if arg is None or not arg.isdigit():
                raise ProtocolError("[op N] needs an integer index", line, 1)
            idx = int(arg)
            if ops and idx <= ops[-1].index:
                raise ProtocolError(f"operation indices must increase (got {idx} after {ops[-1].index})", line, 1)
            ops.append(_parse_op(idx, line, entries))
        elif name == "readout":
            if readout is not None:
                raise ProtocolError("duplicate [readout] section", line, 1)
            _unknown_keys(entries, READOUT_KEYS, "readout")
            if "observable" not in entries:
                raise ProtocolError("[readout] needs an observable", line, 1)
            e = entries["observable"]
            obs = parse_observable(e.value, e.line, e.column)
            if "lambda" in entries and "sweep" in entries:
                raise ProtocolError("give either 'lambda' or 'sweep', not both", entries["sweep"].line, 1)
            lambdas: tuple[float, ...] = (0.0,)
            if "lambda" in entries:
                lambdas = _numbers(entries["lambda"], "lambda")
            elif "sweep" in entries:
                s = entries["sweep"]
                lambdas = parse_sweep(s.value, s.line, s.column)
            samples = _integer(entries["samples"], "samples") if "samples" in entries else 0
            seed = _integer(entries["seed"], "seed") if "seed" in entries else 0
            sigma = _number(entries["sigma"], "sigma") if "sigma" in entries else 1.0
            if samples < 0 or not sigma > 0:
                raise ProtocolError("samples must be >= 0 and sigma > 0", line, 1)
            readout = Readout(obs, lambdas, samples, seed, sigma)
        else:
            raise ProtocolError(f"unknown section [{name}]", line, 1)
    if readout is None:
        raise ProtocolError("missing [readout] section")
    names = {fn.name for fn in functions}
    for op in ops:
        for n in _op_field_names(op):
            if n not in names:
                raise ProtocolError(f"unresolved function name {n!r}", op.line, 1, op.index)
    for n in observable_fields(readout.observable):
        if n not in names:
            raise ProtocolError(f"unresolved function name {n!r} in observable")
    return ProtocolSpec(fcfg, tuple(functions), tuple(ops), readout, base_dir)


def load_protocol(path: str | os.PathLike) -> ProtocolSpec:
    p = Path(path)
    if not p.is_absolute() and not p.exists() and os.environ.get("QFTCAUSAL_WORKDIR"):
        p = Path(os.environ["QFTCAUSAL_WORKDIR"]) / p
    return parse_protocol(p.read_text(encoding="utf-8"), str(p.parent))


def fixture_path(name: str) -> Path:
    """Path of a shipped protocol fixture, e.g. ``fixture_path("s1_kick_squared")``."""
    fname = name if name.endswith(".qfc") else f"{name}.qfc"
    p = resources.files("qftcausal") / "fixtures" / fname
    if not p.is_file():
        raise ProtocolError(f"no shipped fixture {name!r}")
    return Path(str(p))


def load_fixture(name: str) -> ProtocolSpec:
    return load_protocol(fixture_path(name))


def _fmt(v: float) -> str:
    return repr(float(v))


def print_protocol(spec: ProtocolSpec) -> str:
    c = spec.field
    out = [
        "[field]",
        f"mass = {_fmt(c.mass)}",
        f"backend = {c.backend}",
        f"dx = {_fmt(c.dx)}",
        f"levels = {c.levels}",
        f"tol = {_fmt(c.tol)}",
        f"lattice_dx = {_fmt(c.lattice_dx)}",
    ]
    for fn in spec.functions:
        out += ["", f"[function {fn.name}]", f"kind = {fn.kind}"]
        if fn.kind == "file":
            out.append(f"path = {fn.path}")
        else:
            out += [
                f"center = {_fmt(fn.center[0])}, {_fmt(fn.center[1])}",
                f"half_width = {_fmt(fn.half_width)}",
                f"amplitude = {_fmt(fn.amplitude)}",
            ]
    for op in spec.ops:
        out += ["", f"[op {op.index}]", f"agent = {op.agent}", f"map = {op.map}"]
        for key, v in op.params:
            if key == "strength":
                s = v if v == LAMBDA else _fmt(v)
            elif key in ("sigma", "spacing"):
                s = _fmt(v)
            elif key == "interval":
                s = f"{_fmt(v[0])}, {_fmt(v[1])}"
            elif key == "fields":
                s = ", ".join(v)
            elif key == "poly":
                s = print_observable(v)
            elif key == "normalize":
                s = "yes" if v else "no"
            else:
                s = str(v)
            out.append(f"{key} = {s}")
        if op.region is not None:
            out.append("region = " + "; ".join(", ".join(_fmt(x) for x in r) for r in op.region))
    r = spec.readout
    out += [
        "",
        "[readout]",
        f"observable = {print_observable(r.observable)}",
        "lambda = " + ", ".join(_fmt(v) for v in r.lambdas),
        f"samples = {r.samples}",
        f"seed = {r.seed}",
        f"sigma = {_fmt(r.sigma)}",
    ]
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------

def build_function(fn: FunctionDef, base_dir: str | None = None):
    if fn.kind == "file":
        p = Path(fn.path)
        if not p.is_absolute():
            root = base_dir or os.environ.get("QFTCAUSAL_WORKDIR") or "."
            p = Path(root) / p
        return SampledFunction.load(p)
    return BumpSpec(Point(*fn.center), fn.half_width, fn.amplitude, fn.kind)


def build_table(spec: ProtocolSpec) -> PairingTable:
    fns = {fn.name: build_function(fn, spec.base_dir) for fn in spec.functions}
    c = spec.field
    if c.backend == "quadrature":
        return build_pairing_table(fns, c.mass, c.quadrature, covariance=c.mass > 0)
    labels = tuple(fns)
    lat = Lattice.covering(fns.values(), c.lattice_dx)
    n = len(labels)
    delta = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            v = lattice_delta(fns[labels[i]], fns[labels[j]], c.mass, lat)
            delta[i, j], delta[j, i] = v, -v
    wsym = None
    if c.mass > 0:
        wsym = np.array([[vacuum_covariance(fns[a], fns[b], c.mass) for b in labels] for a in labels])
    table = PairingTable(
        labels, delta, wsym, supports={k: f.region() for k, f in fns.items()}, functions=fns, mass=c.mass
    )
    table.check_psd()
    return table


def _region(op: OpDef) -> RegionSet | None:
    if op.region is None:
        return None
    return RegionSet([Rect(*r) for r in op.region])


def build_map(op: OpDef, table: PairingTable, lam: float = 0.0) -> UpdateMap:
    p = dict(op.params)
    region = _region(op)
    k = op.map
    if k == "kick":
        s = lam if p["strength"] == LAMBDA else p["strength"]
        return KickField(p["field"], s, region)
    if k == "kick_squared":
        return KickFieldSquared(p["field"], region)
    if k == "gaussian":
        return GaussianMeasureField(p["field"], p["sigma"], region)
    if k == "general":
        prof = SampledKrausProfile.gaussian(p["sigma"], p.get("spacing"))
        return GeneralMeasureField(p["field"], prof, region)
    if k == "commuting_poly":
        return GaussianMeasureCommutingPoly(lower_observable(p["poly"], table), p["sigma"], region)
    if k == "jordan_pair":
        f1, f2 = p["fields"]
        return GaussianMeasureJordanPair(f1, f2, p["sigma"], region)
    if k == "selective":
        a, b = p["interval"]
        prob = None
        if p.get("normalize"):
            prob = selective_probability(p["field"], p["sigma"], (a, b), GaussianState(table))
        return SelectiveGaussian(p["field"], p["sigma"], a, b, prob, region)
    if k == "locc":
        f1, f2 = p["fields"]
        a, b = p["interval"]
        return LoccConditional(f1, f2, p["sigma"], a, b, region)
    raise ProtocolError(f"unknown map {k!r}", op.line, None, op.index)


def validate_ordering(spec: ProtocolSpec, table: PairingTable) -> None:
    """A later operation may not lie totally in the causal past of an earlier one."""

    def region_of(op: OpDef) -> RegionSet | None:
        r = _region(op)
        if r is not None:
            return r
        names = _op_field_names(op)
        if not names:
            return None
        reg = table.support(names[0])
        for n in names[1:]:
            reg = reg.union(table.support(n))
        return reg

    regions = [region_of(op) for op in spec.ops]
    for i in range(len(spec.ops)):
        for j in range(i + 1, len(spec.ops)):
            if regions[i] is None or regions[j] is None:
                continue
            if region_relation(regions[i], regions[j]) is RegionRelation.TOTALLY_TIMELIKE_B_BEFORE_A:
                raise ProtocolError(
                    f"operation {spec.ops[j].index} lies totally before operation {spec.ops[i].index}",
                    spec.ops[j].line,
                    None,
                    spec.ops[j].index,
                )


def build_composition(spec: ProtocolSpec, table: PairingTable, lam: float = 0.0) -> Composition | None:
    if not spec.ops:
        return None
    maps = []
    for op in spec.ops:
        try:
            maps.append(build_map(op, table, lam))
        except ProtocolError:
            raise
        except ValueError as exc:
            raise ProtocolError(str(exc), op.line, None, op.index) from exc
    return Composition(tuple(maps), spec.alice_index)


def _observable(spec: ProtocolSpec, table: PairingTable):
    jf = jet_form(spec.readout.observable)
    return jf if jf is not None else lower_observable(spec.readout.observable, table)


def _evolve(spec: ProtocolSpec, table: PairingTable, lam: float) -> OperatorPoly:
    comp = build_composition(spec, table, lam)
    obs = _observable(spec, table)
    if comp is None:
        return evolve_observable(None, obs, table)
    # apply one map at a time so failures carry the operation index
    if isinstance(obs, tuple):
        w = WeylJet.trivial(obs[0], max(obs[1], 1))
    else:
        w = obs
    for op, m in zip(reversed(spec.ops), reversed(comp.maps)):
        try:
            w = apply(m, w, table)
        except ValueError as exc:
            raise ProtocolError(str(exc), op.line, None, op.index) from exc
    if isinstance(obs, tuple):
        return jet_extract(w, obs[1], table)
    return w


def monte_carlo_estimate(
    poly: OperatorPoly, state: GaussianState, n: int, seed: int, sigma: float
) -> tuple[float, float]:
    """Estimate ``<poly>`` from simulated Gaussian measurement outcomes.

    Degree-one words use ``mean(alpha)``, squares use ``mean(alpha^2) - sigma^2``
    and mixed pairs use the symmetrised correlator plus ``(i/2) Delta``.
    Each word gets its own batch, so standard errors add in quadrature.
    Polynomials of degree above two or with spectral functions give NaN.
    """
    if poly.has_spectral() or poly.degree() > 2:
        return math.nan, math.nan
    table = state.table
    value = 0.0
    var = 0.0
    for k, (word, c) in enumerate(sorted(poly.items(), key=lambda it: str(it[0]))):
        if len(word) == 0:
            value += c.real
            continue
        s = seed + 7919 * (k + 1)
        if len(word) == 1:
            est = estimate_moments(sample_measurements(MeasurementPlan(((word[0], sigma),)), state, n, s))
            value += (c * est.means[0]).real
            var += (abs(c) * est.mean_se[0]) ** 2
            continue
        a, b = word
        if a == b:
            est = estimate_moments(sample_measurements(MeasurementPlan(((a, sigma),)), state, n, s))
            value += (c * (est.second_moments[0, 0] - sigma ** 2)).real
            var += (abs(c) * est.second_moment_se[0, 0]) ** 2
        else:
            conv = JORDAN if abs(table.d(a, b)) > 0 else COMMUTING
            est = estimate_moments(sample_measurements(MeasurementPlan(((a, sigma), (b, sigma)), conv), state, n, s))
            value += (c * complex(est.second_moments[0, 1], 0.5 * table.d(a, b))).real
            var += (abs(c) * est.second_moment_se[0, 1]) ** 2
    return float(value), float(math.sqrt(var))


@dataclass(frozen=True)
class ResultRow:
    lam: float
    analytic: complex
    mc_estimate: float
    mc_se: float


@dataclass(frozen=True)
class RunResult:
    observable: str
    rows: tuple[ResultRow, ...]
    table: PairingTable = field(repr=False, compare=False)

    COLUMNS = ("lambda", "analytic_re", "analytic_im", "mc_estimate", "mc_se")

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([r.lam for r in self.rows])

    @property
    def values(self) -> np.ndarray:
        return np.array([r.analytic for r in self.rows])

    def to_csv(self) -> str:
        lines = [",".join(self.COLUMNS)]
        for r in self.rows:
            lines.append(
                ",".join(repr(float(v)) for v in (r.lam, r.analytic.real, r.analytic.imag, r.mc_estimate, r.mc_se))
            )
        return "\n".join(lines) + "\n"


def run_protocol(
    spec: ProtocolSpec,
    lambdas: Sequence[float] | None = None,
    table: PairingTable | None = None,
    samples: int | None = None,
) -> RunResult:
    table = table or build_table(spec)
    validate_ordering(spec, table)
    state = GaussianState(table)
    lambdas = tuple(spec.readout.lambdas if lambdas is None else lambdas)
    n = spec.readout.samples if samples is None else samples
    rows = []
    for lam in lambdas:
        poly = _evolve(spec, table, lam)
        val = wick_expectation(poly, state)
        mc, se = (math.nan, math.nan)
        if n > 0:
            mc, se = monte_carlo_estimate(poly, state, n, spec.readout.seed, spec.readout.sigma)
        rows.append(ResultRow(float(lam), complex(val), mc, se))
    return RunResult(print_observable(spec.readout.observable), tuple(rows), table)


# ---------------------------------------------------------------------------
# Auditing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OperationVerdict:
    index: int
    agent: str
    map: str
    support: SupportReport | None
    verdict: Verdict
    note: str = ""


@dataclass(frozen=True)
class CheckResult:
    operations: tuple[OperationVerdict, ...]
    signal: SignalReport | None

    @property
    def acausal(self) -> bool:
        return any(o.verdict is Verdict.ACAUSAL for o in self.operations)

    def to_text(self) -> str:
        lines = []
        for o in self.operations:
            lines.append(f"[op {o.index}] agent = {o.agent}, map = {o.map}, verdict = {o.verdict.value}")
            if o.note:
                lines.append(f"  note = {o.note}")
            if o.support is not None:
                lines += ["  " + s for s in o.support.to_text().splitlines()]
        if self.signal is not None:
            lines.append("[signal]")
            lines += ["  " + s for s in self.signal.to_text().splitlines()]
        lines.append(f"overall = {'acausal' if self.acausal else 'causal'}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "operations": [
                {
                    "index": o.index,
                    "agent": o.agent,
                    "map": o.map,
                    "verdict": o.verdict.value,
                    "note": o.note,
                    "support": None if o.support is None else o.support.to_dict(),
                }
                for o in self.operations
            ],
            "signal": None if self.signal is None else self.signal.to_dict(),
            "overall": "acausal" if self.acausal else "causal",
        }


def check_protocol(
    spec: ProtocolSpec,
    table: PairingTable | None = None,
    threshold: float = DEFAULT_SIGNAL_THRESHOLD,
    repair: bool = False,
) -> CheckResult:
    """Per-operation support audits, with inconclusive ones settled by the signalling sweep."""
    table = table or build_table(spec)
    validate_ordering(spec, table)
    obs = _observable(spec, table)
    obs_labels = sorted(observable_fields(spec.readout.observable))
    g_support = table.support(obs_labels[0])
    for lab in obs_labels[1:]:
        g_support = g_support.union(table.support(lab))
    if isinstance(obs, tuple):
        operand = WeylJet.trivial(obs[0], max(obs[1], 1))
        original = None
    else:
        operand = obs
        original = obs_labels

    signal = None
    alice = spec.alice_index
    if alice is not None:
        state = GaussianState(table)
        comp = build_composition(spec, table, 0.0)
        lams = spec.readout.lambdas if len(set(spec.readout.lambdas)) >= 3 else (-1.0, -0.5, 0.0, 0.5, 1.0)
        try:
            signal = signal_gradient(comp, obs, state, lams, threshold)
        except ValueError as exc:
            raise ProtocolError(str(exc), spec.ops[alice].line, None, spec.ops[alice].index) from exc

    verdicts = []
    for k, op in enumerate(spec.ops):
        m = build_map(op, table, 1.0)
        try:
            out = apply(m, operand, table)
        except ValueError as exc:
            verdicts.append(
                OperationVerdict(op.index, op.agent, op.map, None, Verdict.INCONCLUSIVE, f"not auditable: {exc}")
            )
            continue
        rep = psni_check(out, g_support, table, original_labels=original, repair=repair)
        verdict, note = rep.verdict, ""
        if verdict is Verdict.INCONCLUSIVE:
            if signal is not None and k != alice:
                verdict = Verdict.ACAUSAL if signal.signal else Verdict.CAUSAL
                note = f"new labels lie in the causal past; signalling sweep says {signal.verdict}"
            else:
                note = "new labels lie in the causal past; no signalling sweep available"
        verdicts.append(OperationVerdict(op.index, op.agent, op.map, rep, verdict, note))
    return CheckResult(tuple(verdicts), signal)


def rename(spec: ProtocolSpec, functions: dict[str, str] | None = None, agents: dict[str, str] | None = None) -> ProtocolSpec:
    """Copy of ``spec`` with functions and agents renamed (used to test invariance)."""
    fmap = functions or {}
    amap = agents or {}

    def fn_name(n: str) -> str:
        return fmap.get(n, n)

    def expr(node):
        if isinstance(node, Field):
            return Field(fn_name(node.name))
        if isinstance(node, Scalar):
            return node
        if isinstance(node, Sum):
            return Sum(tuple((s, expr(t)) for s, t in node.terms))
        if isinstance(node, Product):
            return Product(tuple(expr(f) for f in node.factors))
        if isinstance(node, Power):
            return Power(expr(node.base), node.exponent)
        return Jordan(expr(node.left), expr(node.right))

    fns = tuple(replace(f, name=fn_name(f.name)) for f in spec.functions)
    ops = []
    for op in spec.ops:
        params = []
        for key, v in op.params:
            if key == "field":
                v = fn_name(v)
            elif key == "fields":
                v = tuple(fn_name(n) for n in v)
            elif key == "poly":
                v = expr(v)
            params.append((key, v))
        ops.append(replace(op, agent=amap.get(op.agent, op.agent), params=tuple(params)))
    return replace(spec, functions=fns, ops=tuple(ops), readout=replace(spec.readout, observable=expr(spec.readout.observable)))
