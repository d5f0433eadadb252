"""Monte-Carlo harness: SNR sweeps, mode statistics, rate regions, policy duels.

Power levels are swept on an SNR grid given in dB relative to unit noise
(P_bar = 10^(snr_db/10)); with the direct-link mean gain normalized to 1 the
grid equals the destination-referenced average SNR, and the interpretation
is recorded in the result metadata. All policies of one run share the same
sampled blocks (common random numbers), and the calibration sample is a
separate fixed sub-stream, so every result is bit-reproducible for a fixed
(config, seed) regardless of worker count.
"""

from __future__ import annotations

import enum
import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import _parallel
from .errors import ConfigurationError
from .fading import (
    STREAM_CALIBRATION,
    STREAM_EVAL,
    FadingTable,
    sample_gain_arrays,
)
from .relaying import LinkArrays, effective_links
from .scheduler_global import (
    RunStats,
    calibrate_on_arrays,
    global_stats,
    reduce_partials,
)
from .scheduler_perblock import perblock_stats
from .virtualize import VirtualArrays, build_virtual_arrays, validate_weights

class Policy(enum.Enum):
    GLOBAL_WATERFILL = "GlobalWaterfill"
    CONSTANT_PER_BLOCK = "ConstantPerBlock"
    CONSTANT_PER_BLOCK_NEAR_OPT = "ConstantPerBlockNearOpt"
    DT_ONLY = "DTOnly"
    EQUAL_SPLIT_DF = "EqualSplitDF"


_MIN_BLOCKS = 1000


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: fading grid, operating point and simulation controls."""

    table: FadingTable
    mu: tuple[float, ...]
    snr_grid: tuple[float, ...]  # average power targets, dB relative to unit noise
    policy: Policy = Policy.GLOBAL_WATERFILL
    miso_enabled: bool = False
    blocks: int = 100_000
    seed: int = 0
    cal_blocks: int = 100_000
    cal_tolerance: float = 0.002

    def __post_init__(self):
        validate_weights(self.mu, self.table.users)
        if not self.snr_grid:
            raise ConfigurationError("snr_grid must not be empty")
        if self.blocks < _MIN_BLOCKS:
            raise ConfigurationError(f"blocks must be >= {_MIN_BLOCKS}, got {self.blocks}")
        if self.cal_blocks < _MIN_BLOCKS:
            raise ConfigurationError(
                f"cal_blocks must be >= {_MIN_BLOCKS}, got {self.cal_blocks}"
            )
        if not 0 < self.cal_tolerance < 1:
            raise ConfigurationError(
                f"cal_tolerance must be in (0, 1), got {self.cal_tolerance}"
            )
        if self.policy is Policy.EQUAL_SPLIT_DF and self.table.relays < 1:
            raise ConfigurationError("EqualSplitDF requires at least one relay")

    @property
    def users(self) -> int:
        return self.table.users

    @property
    def relays(self) -> int:
        return self.table.relays

    def echo(self) -> dict:
        """Canonical plain-dict form (used for hashing and manifests)."""
        spec = lambda s: {
            "family": s.family.value,
            "mean_gain": s.mean_gain,
            "k_factor": s.k_factor,
        }
        return {
            "users": self.users,
            "relays": self.relays,
            "links": {
                "sd": [spec(s) for s in self.table.sd],
                "sr": [spec(s) for s in self.table.sr],
                "rd": [[spec(s) for s in row] for row in self.table.rd],
            },
            "mu": list(self.mu),
            "snr_grid_db": list(self.snr_grid),
            "policy": self.policy.value,
            "miso": self.miso_enabled,
            "blocks": self.blocks,
            "seed": self.seed,
            "calibration": {
                "blocks": self.cal_blocks,
                "tolerance": self.cal_tolerance,
            },
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.echo(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class SweepPoint:
    """Averages at one grid point; rates in bits/sec/Hz."""

    snr_db: float
    policy: Policy
    rates: tuple[float, ...]
    avg_power: float
    frac_df: float
    frac_dt: float
    frac_none: float
    lambda_g: float | None = None


@dataclass(frozen=True)
class SweepResult:
    points: tuple[SweepPoint, ...]
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RegionPoint:
    """One boundary point of the achievable-rate region (rates in bits/sec/Hz)."""

    mu: tuple[float, ...]
    rates: tuple[float, ...]
    policy: Policy


def snr_db_to_power(snr_db: float) -> float:
    return 10.0 ** (snr_db / 10.0)


# ---------------------------------------------------------------------------
# forced equal-split DF baseline
# ---------------------------------------------------------------------------

def _eqsplit_chunk(links: LinkArrays, mu: np.ndarray, p_bar: float, a: int, b: int):
    """Every block carries a forced DF link with source and relay at p_bar each."""
    coeff = links.eq_coeff[:, a:b]  # (M, n)
    rates = 0.5 * np.log1p(coeff * p_bar)
    weighted = mu[:, None] * rates
    i = np.argmax(weighted, axis=0)
    cols = np.arange(b - a)
    rate_user = np.bincount(i, weights=rates[i, cols], minlength=links.gamma_sd.shape[0])
    return (
        rate_user,
        float(weighted[i, cols].sum()),
        float(p_bar) * (b - a),
        float(b - a),
        0.0,
        0.0,
    )


def eqsplit_stats(
    links: LinkArrays, mu, p_bar: float, threads: int | None = None
) -> RunStats:
    m = np.asarray(mu, dtype=float)
    partials = _parallel.chunked_partials(
        links.gamma_sd.shape[1],
        lambda a, b: _eqsplit_chunk(links, m, p_bar, a, b),
        threads,
    )
    return reduce_partials(partials, links.gamma_sd.shape[1])


# ---------------------------------------------------------------------------
# shared evaluation context
# ---------------------------------------------------------------------------

class _Runner:
    """Caches sampled gains and link quantities of one config for reuse
    across SNR points, policies and weight vectors (common random numbers)."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.gains_eval = sample_gain_arrays(
            config.table, config.seed, STREAM_EVAL, 0, config.blocks
        )
        self.gains_cal = sample_gain_arrays(
            config.table, config.seed, STREAM_CALIBRATION, 0, config.cal_blocks
        )
        self.links_eval = effective_links(self.gains_eval, config.miso_enabled)
        self.links_cal = effective_links(self.gains_cal, config.miso_enabled)
        self._varr: dict = {}

    def varr(self, which: str, mu, include_df: bool) -> VirtualArrays:
        key = (which, tuple(mu), include_df)
        if key not in self._varr:
            links = self.links_eval if which == "eval" else self.links_cal
            self._varr[key] = build_virtual_arrays(links, mu, include_df=include_df)
        return self._varr[key]

    def point(
        self, policy: Policy, snr_db: float, mu=None, threads: int | None = None
    ) -> SweepPoint:
        mu = tuple(self.config.mu if mu is None else mu)
        p_bar = snr_db_to_power(snr_db)
        lam = None
        if policy in (Policy.GLOBAL_WATERFILL, Policy.DT_ONLY):
            include_df = policy is Policy.GLOBAL_WATERFILL
            lam, _ = calibrate_on_arrays(
                self.varr("cal", mu, include_df), p_bar, self.config.cal_tolerance
            )
            stats = global_stats(self.varr("eval", mu, include_df), lam, threads)
        elif policy is Policy.CONSTANT_PER_BLOCK:
            stats = perblock_stats(self.varr("eval", mu, True), p_bar, False, threads)
        elif policy is Policy.CONSTANT_PER_BLOCK_NEAR_OPT:
            stats = perblock_stats(self.varr("eval", mu, True), p_bar, True, threads)
        elif policy is Policy.EQUAL_SPLIT_DF:
            if self.config.relays < 1:
                raise ConfigurationError("EqualSplitDF requires at least one relay")
            stats = eqsplit_stats(self.links_eval, mu, p_bar, threads)
        else:
            raise ConfigurationError(f"unknown policy {policy}")
        avg = stats.averages()
        return SweepPoint(
            snr_db=snr_db,
            policy=policy,
            rates=avg.rates,
            avg_power=avg.avg_power,
            frac_df=avg.frac_df,
            frac_dt=avg.frac_dt,
            frac_none=avg.frac_none,
            lambda_g=lam,
        )

    def metadata(self, runtime_s: float) -> dict:
        return {
            "config_hash": self.config.config_hash(),
            "seed": self.config.seed,
            "blocks": self.config.blocks,
            "runtime_s": runtime_s,
            "snr_reference": "snr_db = average power target in dB relative to unit noise",
            "rate_units": "bits/sec/Hz",
        }


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def sweep_snr(config: ExperimentConfig, threads: int | None = None) -> SweepResult:
    """Average rates, power and mode usage along the configured SNR grid."""
    t0 = time.perf_counter()
    runner = _Runner(config)
    points = tuple(
        runner.point(config.policy, s, threads=threads) for s in config.snr_grid
    )
    return SweepResult(points=points, metadata=runner.metadata(time.perf_counter() - t0))


def mode_fractions(config: ExperimentConfig, threads: int | None = None) -> SweepResult:
    """Fraction of blocks carrying a DF link, a DT link, or nothing per point."""
    if config.policy not in (Policy.GLOBAL_WATERFILL, Policy.CONSTANT_PER_BLOCK):
        raise ConfigurationError(
            "mode_fractions requires GlobalWaterfill or ConstantPerBlock policy"
        )
    return sweep_snr(config, threads=threads)


def default_mu_grid(points: int = 41) -> tuple[tuple[float, float], ...]:
    """Evenly spaced weight vectors on the two-user simplex."""
    return tuple((float(t), float(1.0 - t)) for t in np.linspace(0.0, 1.0, points))


def rate_region(
    config: ExperimentConfig, mu_grid=None, threads: int | None = None
) -> list[RegionPoint]:
    """Boundary points of the achievable-rate region, one per weight vector.

    Each weight vector is a separate operating point with its own calibration;
    the first SNR grid entry sets the power budget. Results are sorted by the
    first weight for plotting.
    """
    if config.users < 2:
        raise ConfigurationError("rate_region needs at least two users")
    if mu_grid is None:
        if config.users != 2:
            raise ConfigurationError("default mu grid is two-user only; pass mu_grid")
        mu_grid = default_mu_grid()
    snr_db = config.snr_grid[0]
    runner = _Runner(config)
    out = []
    for mu in mu_grid:
        mu = validate_weights(mu, config.users)
        pt = runner.point(config.policy, snr_db, mu=mu, threads=threads)
        out.append(RegionPoint(mu=mu, rates=pt.rates, policy=config.policy))
    out.sort(key=lambda rp: rp.mu[0])
    return out


def compare_policies(
    config: ExperimentConfig,
    policies: tuple[Policy, ...] | None = None,
    threads: int | None = None,
) -> dict[Policy, SweepResult]:
    """Common-random-number sweep of several policies over the same blocks."""
    if policies is None:
        policies = (
            Policy.GLOBAL_WATERFILL,
            Policy.CONSTANT_PER_BLOCK,
            Policy.CONSTANT_PER_BLOCK_NEAR_OPT,
            Policy.DT_ONLY,
        )
        if config.relays >= 1:
            policies = policies + (Policy.EQUAL_SPLIT_DF,)
    t0 = time.perf_counter()
    runner = _Runner(config)
    out: dict[Policy, SweepResult] = {}
    for pol in policies:
        points = tuple(runner.point(pol, s, threads=threads) for s in config.snr_grid)
        out[pol] = SweepResult(
            points=points, metadata=runner.metadata(time.perf_counter() - t0)
        )
    return out
