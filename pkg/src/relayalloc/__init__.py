"""Power and resource allocation for block-fading relay-assisted broadcast channels.

Library plus CLI simulator: decode-and-forward link math with optimal
source/relay power splits, best-relay (and coherent multi-relay) selection,
the virtual-user reduction to an equivalent no-relay broadcast channel,
water-filling scheduling against a calibrated power price, per-block
constant-power allocation, and a Monte-Carlo experiment harness.
"""

__version__ = "0.1.0"

from .errors import CalibrationError, ConfigurationError
from .fading import (
    ChannelBlock,
    FadingSpec,
    FadingTable,
    Family,
    block_iter,
    sample_block,
    sample_gain,
)
from .relaying import (
    DfLink,
    DfPowerSplit,
    alpha_gain,
    is_useful,
    rdf_rate,
    select_miso_set,
    select_relay,
    split_power,
)
from .virtualize import Mode, VirtualUser, build_virtual_users, rate_of, user_rate_of
from .scheduler_global import (
    Allocation,
    PolicyAverages,
    PowerPrice,
    ScheduledEntry,
    calibrate_price,
    run_policy,
    schedule_block,
    waterfill,
)
from .scheduler_perblock import PerBlockSolution, solve_block, solve_block_near_optimal
from .experiments import (
    ExperimentConfig,
    Policy,
    RegionPoint,
    SweepPoint,
    SweepResult,
    compare_policies,
    default_mu_grid,
    mode_fractions,
    rate_region,
    sweep_snr,
)

__all__ = [
    "Allocation",
    "CalibrationError",
    "ChannelBlock",
    "ConfigurationError",
    "DfLink",
    "DfPowerSplit",
    "ExperimentConfig",
    "FadingSpec",
    "FadingTable",
    "Family",
    "Mode",
    "PerBlockSolution",
    "Policy",
    "PolicyAverages",
    "PowerPrice",
    "RegionPoint",
    "ScheduledEntry",
    "SweepPoint",
    "SweepResult",
    "VirtualUser",
    "alpha_gain",
    "block_iter",
    "build_virtual_users",
    "calibrate_price",
    "compare_policies",
    "default_mu_grid",
    "is_useful",
    "mode_fractions",
    "rate_of",
    "rate_region",
    "rdf_rate",
    "run_policy",
    "sample_block",
    "sample_gain",
    "schedule_block",
    "select_miso_set",
    "select_relay",
    "solve_block",
    "solve_block_near_optimal",
    "split_power",
    "sweep_snr",
    "user_rate_of",
    "waterfill",
]
