"""Command-line entry point ``qftcausal``.

Exit status is 0 on success, 1 on any error and 2 when ``check`` finds an
acausal operation.  ``QFTCAUSAL_WORKDIR`` is the directory relative spec and
function paths are resolved against; ``QFTCAUSAL_THREADS`` sets the number
of sampling threads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .algebra import GaussianState
from .classical import (
    InteractionSpec,
    Lattice,
    LatticeError,
    WindowSpec,
    effective_delta,
    generate_solution,
    move_support,
    scatter_first_order,
)
from .geometry import Point, Rect
from .protocol import (
    ProtocolError,
    build_function,
    build_table,
    check_protocol,
    load_protocol,
    observable_fields,
    parse_sweep,
    run_protocol,
)
from .sampler import COMMUTING, JORDAN, MeasurementPlan, sample_measurements
from .smearing import BumpSpec, DeltaKernel, QuadratureConfig, SampledFunction, delta_bilinear

EXIT_OK, EXIT_ERROR, EXIT_ACAUSAL = 0, 1, 2


def _workdir() -> Path:
    return Path(os.environ.get("QFTCAUSAL_WORKDIR") or ".")


def _threads(value: int | None) -> int:
    if value is not None:
        return max(1, value)
    env = os.environ.get("QFTCAUSAL_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ProtocolError(f"QFTCAUSAL_THREADS must be an integer, got {env!r}") from None
    return 1


def _out_path(path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else _workdir() / p


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    _out_path(path).write_text(text, encoding="utf-8")


def _function_arg(text: str, spec_path: str | None):
    """``kind:t,x,half_width[,amplitude]``, a sampled-function file, or a name in ``--spec``."""
    if spec_path is not None:
        spec = load_protocol(spec_path)
        return build_function(spec.function(text), spec.base_dir)
    if ":" in text:
        kind, _, rest = text.partition(":")
        try:
            nums = [float(v) for v in rest.split(",")]
        except ValueError:
            raise ProtocolError(f"bad function argument {text!r}") from None
        if len(nums) not in (3, 4):
            raise ProtocolError(f"expected kind:t,x,half_width[,amplitude], got {text!r}")
        amp = nums[3] if len(nums) == 4 else 1.0
        return BumpSpec(Point(nums[0], nums[1]), nums[2], amp, kind)
    p = Path(text)
    if not p.is_absolute() and not p.exists():
        p = _workdir() / p
    return SampledFunction.load(p)


def _slab(text: str) -> WindowSpec:
    try:
        t1, t2 = (float(v) for v in text.split(":"))
    except ValueError:
        raise ProtocolError(f"slab must be t1:t2, got {text!r}") from None
    return WindowSpec(t1, t2)


def cmd_delta(args) -> int:
    f = _function_arg(args.f, args.spec)
    g = _function_arg(args.g, args.spec)
    q = QuadratureConfig(args.dx, args.levels, args.tol)
    print(repr(delta_bilinear(f, g, q, DeltaKernel(args.mass))))
    return EXIT_OK


def cmd_run(args) -> int:
    spec = load_protocol(args.spec)
    lambdas = parse_sweep(args.sweep) if args.sweep else None
    result = run_protocol(spec, lambdas=lambdas, samples=args.samples)
    _write(args.out, result.to_csv())
    return EXIT_OK


def cmd_check(args) -> int:
    spec = load_protocol(args.spec)
    result = check_protocol(spec, repair=args.repair)
    text = json.dumps(result.to_dict(), sort_keys=True) + "\n" if args.json else result.to_text() + "\n"
    _write(args.out, text)
    return EXIT_ACAUSAL if result.acausal else EXIT_OK


def cmd_sample(args) -> int:
    spec = load_protocol(args.spec)
    table = build_table(spec)
    labels = args.fields or sorted(observable_fields(spec.readout.observable))
    sigma = args.sigma if args.sigma is not None else spec.readout.sigma
    conv = COMMUTING
    if len(labels) == 2 and abs(table.d(labels[0], labels[1])) > 0:
        conv = JORDAN
    plan = MeasurementPlan(tuple((lab, sigma) for lab in labels), conv)
    seed = args.seed if args.seed is not None else spec.readout.seed
    batch = sample_measurements(plan, GaussianState(table), args.n, seed, threads=_threads(args.threads))
    _write(args.out, batch.to_csv())
    return EXIT_OK


def _lattice_for(spec, fns, extra=()) -> Lattice:
    return Lattice.covering(fns, spec.field.lattice_dx, extra=extra)


def cmd_move_support(args) -> int:
    spec = load_protocol(args.spec)
    f = build_function(spec.function(args.function), spec.base_dir)
    w = _slab(args.slab)
    slab_box = Rect(w.t1, w.t2, f.support().x_lo, f.support().x_hi)
    lat = _lattice_for(spec, [f], extra=[slab_box])
    g = move_support(f, spec.field.mass, lat, w)
    if args.out:
        g.save(_out_path(args.out))
    phi_f = generate_solution(f, spec.field.mass, lat).values
    phi_g = generate_solution(g, spec.field.mass, lat).values
    outside = (lat.t < w.t1) | (lat.t > w.t2)
    scale = np.abs(phi_f).max()
    err = float(np.abs(phi_f - phi_g)[outside].max() / scale) if scale > 0 else 0.0
    s = g.support()
    print(f"support = [{s.t_lo!r},{s.t_hi!r}]x[{s.x_lo!r},{s.x_hi!r}]")
    print(f"relative_sup_error_outside_slab = {err!r}")
    return EXIT_OK


def cmd_scatter(args) -> int:
    spec = load_protocol(args.spec)
    f = build_function(spec.function(args.function), spec.base_dir)
    chi = build_function(spec.function(args.chi), spec.base_dir)
    if not isinstance(chi, BumpSpec):
        raise ProtocolError("the coupling profile must be a bump function")
    w = _slab(args.slab)
    slab_box = Rect(w.t1, w.t2, f.support().x_lo, f.support().x_hi)
    lat = _lattice_for(spec, [f, chi], extra=[slab_box])
    h = scatter_first_order(f, spec.field.mass, lat, InteractionSpec(args.kappa, chi), w)
    if args.out:
        h.save(_out_path(args.out))
    s = h.support()
    print(f"support = [{s.t_lo!r},{s.t_hi!r}]x[{s.x_lo!r},{s.x_hi!r}]")
    if args.against:
        g = build_function(spec.function(args.against), spec.base_dir)
        print(f"effective_delta = {effective_delta(h, g, spec.field.quadrature, spec.field.mass)!r}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1; status 2 is reserved for acausal verdicts."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _join_negative_values(argv: Sequence[str]) -> list[str]:
    # "--sweep -1:1:0.5" would otherwise be read as an option
    out: list[str] = []
    it = iter(argv)
    for tok in it:
        if tok in ("--sweep", "--slab"):
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qftcausal", description="Causality audits of measurement protocols.")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("delta", help="print the smeared Pauli-Jordan pairing Delta(f, g)")
    d.add_argument("f")
    d.add_argument("g")
    d.add_argument("--spec", help="resolve F and G as function names in this protocol file")
    d.add_argument("--mass", type=float, default=1.0)
    d.add_argument("--dx", type=float, default=0.05)
    d.add_argument("--levels", type=int, default=6)
    d.add_argument("--tol", type=float, default=1e-9)
    d.set_defaults(func=cmd_delta)

    r = sub.add_parser("run", help="analytic (and optional Monte Carlo) readout over a lambda sweep")
    r.add_argument("spec")
    r.add_argument("--sweep", help="a:b:step, overriding the readout's lambda list")
    r.add_argument("--samples", type=int, help="Monte Carlo samples per word (0 disables)")
    r.add_argument("--out", help="CSV path (default: stdout)")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("check", help="causality audit; exit status 2 when acausal")
    c.add_argument("spec")
    c.add_argument("--json", action="store_true", help="machine-readable report")
    c.add_argument("--repair", action="store_true", help="search for re-localisations of offending labels")
    c.add_argument("--out")
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("sample", help="simulate Gaussian measurement outcomes of the readout fields")
    s.add_argument("spec")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--sigma", type=float)
    s.add_argument("--fields", nargs="+", help="labels to measure (default: the readout's fields)")
    s.add_argument("--threads", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sample)

    m = sub.add_parser("move-support", help="re-smear a function inside a time slab on the lattice")
    m.add_argument("spec")
    m.add_argument("--function", required=True)
    m.add_argument("--slab", required=True, help="t1:t2")
    m.add_argument("--out", help="sampled-function file for the moved function")
    m.set_defaults(func=cmd_move_support)

    sc = sub.add_parser("scatter", help="first-order out-region smearing function")
    sc.add_argument("spec")
    sc.add_argument("--function", required=True)
    sc.add_argument("--chi", required=True, help="function naming the coupling profile")
    sc.add_argument("--kappa", type=float, required=True)
    sc.add_argument("--slab", required=True, help="t1:t2, after the interaction region")
    sc.add_argument("--against", help="print Delta(h, g) for this function")
    sc.add_argument("--out")
    sc.set_defaults(func=cmd_scatter)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else argv
    args = parser.parse_args(_join_negative_values(argv))
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError, LatticeError) as exc:
        print(f"qftcausal {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
