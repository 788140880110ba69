"""Quantum operations on a real scalar field in 1+1 Minkowski spacetime, and audits of their causality."""

from .geometry import (
    CausalRelation,
    GeometryError,
    Point,
    Rect,
    RegionRelation,
    RegionSet,
    causal_relation,
    causal_shadow,
    contained_in_causal_past,
    outside_causal_past,
    region_relation,
    strictly_spacelike,
)
from .smearing import (
    BumpSpec,
    DeltaKernel,
    PairingTable,
    QuadratureConfig,
    QuadratureError,
    SampledFunction,
    SmearingError,
    build_pairing_table,
    delta_bilinear,
    table_from_matrices,
    vacuum_covariance,
    vacuum_two_point,
)
from .algebra import (
    AlgebraError,
    GaussianState,
    OperatorPoly,
    WeylJet,
    jet_extract,
    jordan,
    multiply,
    normalize,
    wick_expectation,
)
from .maps import (
    Composition,
    GaussianMeasureCommutingPoly,
    GaussianMeasureField,
    GaussianMeasureJordanPair,
    GaussianWindow,
    GeneralMeasureField,
    KickField,
    KickFieldSquared,
    LoccConditional,
    MapError,
    SampledKrausProfile,
    SelectiveGaussian,
    apply,
    apply_composition,
    bin_overlap_profile,
    compose,
    eta_function,
    h_function,
)
from .causality import CausalityError, SignalReport, SupportReport, Verdict, psni_check, signal_gradient
from .sampler import (
    COMMUTING,
    JORDAN,
    MeasurementPlan,
    SamplerError,
    estimate_moments,
    recover_correlator,
    sample_measurements,
)
from .classical import (
    InteractionSpec,
    Lattice,
    LatticeError,
    WindowSpec,
    effective_delta,
    generate_solution,
    lattice_delta,
    move_support,
    scatter_first_order,
)
from .protocol import (
    ProtocolError,
    ProtocolSpec,
    check_protocol,
    load_fixture,
    load_protocol,
    parse_protocol,
    print_protocol,
    run_protocol,
)

__version__ = "0.1.0"
