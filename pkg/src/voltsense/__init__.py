"""voltsense: probabilistic voltage-violation prediction for radial feeders.

Predicts the probability distribution of node-voltage magnitudes in an
unbalanced three-phase radial feeder under uncertain distributed-PV power
injections, flags nodes likely to violate voltage limits, and validates
every prediction against a built-in load-flow oracle.
"""

from importlib import resources

from .network import (
    Feeder,
    FeederFormatError,
    LineSegment,
    Phase,
    PHASES,
    PhasorSet,
    TopologyError,
    UnknownNodeError,
    chain_feeder,
    load_feeder,
    parse_feeder,
    path_to_source,
    shared_path_impedance,
)
from .loadflow import (
    ConvergenceError,
    InjectionSet,
    MonteCarloSamples,
    SolveReport,
    apply_power_change,
    base_injections,
    gaussian_draws,
    monte_carlo_voltage_samples,
    solve,
)
from .sensitivity import (
    PowerChange,
    VoltageChange,
    delta_v_cumulative,
    delta_v_real_imag,
    delta_v_single,
)
from .probabilistic import (
    GaussianDeltaV,
    PowerChangeModel,
    RicianPrediction,
    SensitivityVectors,
    ViolationAssessment,
    assess_network,
    build_c_vectors,
    delta_v_distribution,
    predicted_voltage_distribution,
    rician_interval_probability,
    violation_probability,
)
from .scenarios import (
    GenerationLossEvent,
    PenetrationConfig,
    PVProfile,
    ScenarioPack,
    TimeGrid,
    allocate_penetration,
    load_pack,
    net_power_change,
    run_timeseries,
)
from .metrics import (
    ErrorReport,
    Histogram,
    benchmark_sensitivity_vs_loadflow,
    jensen_shannon_distance,
    make_histogram,
    violation_count_series,
)

__version__ = "0.1.0"


def bundled_path(name):
    """Filesystem path of a bundled data file (feeder datasets, scenario packs)."""
    return resources.files(__package__).joinpath("data", name)


def bundled_feeder():
    """The 37-node feeder dataset shipped with the package."""
    return parse_feeder(bundled_path("ieee37.feeder").read_text())


def bundled_pack():
    """The default scenario pack shipped with the package."""
    return load_pack(bundled_path("default.pack"))
