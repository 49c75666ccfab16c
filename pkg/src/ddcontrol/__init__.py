"""Data-driven synthesis and certification of contractive feedback controllers.

The toolkit takes sampled state/input/derivative triples from an unknown
nonlinear system whose vector field lies in the span of a known function
library, solves semidefinite programs that return a feedback gain together
with a constant contraction metric, and then independently verifies the
resulting closed loop (sampled contraction margins, equilibria, regions of
attraction, disturbance rejection, reference tracking).
"""

from ddcontrol.dictionary import (
    BasisFunction,
    BoxSet,
    Dictionary,
    DictionaryError,
    JacobianBound,
    bound_jacobian,
    eval_Z,
    jac_Z,
)
from ddcontrol.plants import (
    AffineController,
    BoundedNoise,
    ExoModel,
    ExperimentDataset,
    IntegralController,
    Plant,
    SimulationError,
    StaticController,
    Trajectory,
    builtin_plant,
    input_extended,
    run_experiment,
    run_integral_experiment,
    simulate_closed_loop,
)
from ddcontrol.datamat import (
    AnnihilatorW,
    DataMatrices,
    ExtendedDataMatrices,
    build_annihilator,
    build_extended,
    build_integral,
    build_matrices,
)
from ddcontrol.lmi import ConicForm, LmiError, LmiProgram, SolverReport, lower_to_conic, solve
from ddcontrol.synthesis import (
    NoiseModel,
    SynthesisError,
    SynthesisResult,
    SynthOptions,
    synth_contractive,
    synth_convex_hull,
    synth_extended,
    synth_general_nonlin,
    synth_integral,
    synth_known_freq,
    synth_min_nonlinearity,
    synth_monotone,
    synth_noisy,
    synth_remainder,
    synth_taylor_baseline,
    synth_taylor_remainder,
)
from ddcontrol.certify import (
    ContractionCertificate,
    RoaEstimate,
    certify_contraction,
    certify_contraction_robust,
    check_contraction_envelope,
    check_convergent_behavior,
    check_tracking,
    find_equilibrium,
    estimate_roa,
)

__version__ = "0.1.0"
