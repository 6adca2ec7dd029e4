"""Motion compensated tomographic reconstruction toolkit.

The package splits into composable layers: abstract linear operators
(:mod:`.linops`), a matched-adjoint ray transform (:mod:`.projector`),
invertible gate warps (:mod:`.motion`), the strongly convex objective
pieces (:mod:`.functionals`), deterministic and stochastic saddle
point solvers (:mod:`.solvers`), predicted-rate analysis
(:mod:`.theory`), dataset simulation (:mod:`.simulate`), file formats
and trajectory analysis (:mod:`.experiment_io`), figure rendering
(:mod:`.figures`), and a CLI (:mod:`.cli`) that chains them.
"""

__version__ = "0.1.0"

from .experiment_io import (
    ConvergenceRecord,
    RateFit,
    fit_rate,
    load_dataset,
    load_saddle,
    read_raster,
    rmse,
    save_dataset,
    save_saddle,
    write_raster,
)
from .functionals import moduli, objective, prox_fstar, prox_g
from .linops import (
    ComposedMap,
    DiagonalMap,
    GramSumMap,
    IdentityMap,
    LinearMap,
    StackedMap,
    adjoint_mismatch,
    compose,
    power_method,
    stacked_norm_sq,
)
from .motion import MotionParams, WarpOperator, motion_sequence
from .projector import Geometry, RayTransform, adjoint, forward, ray_transform
from .simulate import (
    GatedDataset,
    NoiseModel,
    estimate_norms,
    gate_operators,
    generate,
    make_phantom,
    nonrigid_preset,
    rigid_preset,
)
from .solvers import (
    DivergenceError,
    Problem,
    SaddlePoint,
    SolverConfig,
    SolverState,
    cg_reference,
    default_config,
    run,
    sample_gates,
    step,
)
from .theory import (
    RateReport,
    build_rate_report,
    condition_numbers,
    dominance_check,
    epoch_rate,
    near_isometry_report,
    predicted_rates,
)

__all__ = [
    "__version__",
    "ConvergenceRecord",
    "RateFit",
    "fit_rate",
    "load_dataset",
    "load_saddle",
    "read_raster",
    "rmse",
    "save_dataset",
    "save_saddle",
    "write_raster",
    "moduli",
    "objective",
    "prox_fstar",
    "prox_g",
    "ComposedMap",
    "DiagonalMap",
    "GramSumMap",
    "IdentityMap",
    "LinearMap",
    "StackedMap",
    "adjoint_mismatch",
    "compose",
    "power_method",
    "stacked_norm_sq",
    "MotionParams",
    "WarpOperator",
    "motion_sequence",
    "Geometry",
    "RayTransform",
    "adjoint",
    "forward",
    "ray_transform",
    "GatedDataset",
    "NoiseModel",
    "estimate_norms",
    "gate_operators",
    "generate",
    "make_phantom",
    "nonrigid_preset",
    "rigid_preset",
    "DivergenceError",
    "Problem",
    "SaddlePoint",
    "SolverConfig",
    "SolverState",
    "cg_reference",
    "default_config",
    "run",
    "sample_gates",
    "step",
    "RateReport",
    "build_rate_report",
    "condition_numbers",
    "dominance_check",
    "epoch_rate",
    "near_isometry_report",
    "predicted_rates",
]
