"""Sensing capacity of sensor networks: types, sensor laws, lower bounds and simulation."""

from .bounds import (
    BoundProblem,
    BoundResult,
    ExponentResult,
    SolverOptions,
    clb_bisect,
    clb_grid,
    compute_bound,
    error_exponent,
    objective_ratio,
    random_coding_exponent,
    replication_comparison,
    sweep,
)
from .errors import ConfigError, SensCapError, SolverError
from .models import (
    ModelSpec,
    NoiseChannel,
    SensingFunction,
    joint_output_dist,
    load_model,
    make_exponential_noise,
    model_from_dict,
    output_dist,
    pxy,
    qxy,
    simple_model,
)
from .simulate import (
    FactorGraph,
    SensorNetwork,
    TrialRecord,
    decode_bp,
    decode_ml,
    encode,
    generate_network,
    observe,
    run_trials,
    sensors_for_rate,
    sweep_rate,
)
from .types import (
    JointType,
    TypeHistogram,
    compute_joint_type,
    compute_type,
    count_type_classes,
    enumerate_type_class,
    marginalize,
)

__version__ = "0.1.0"
