"""Optimal long-term policy: per-block water-filling against a global power price.

Per block, every virtual user gets the water-filling power
P = [omega/lambda_G - 1/eta]^+ and the single user with the largest surplus
f(P) - lambda_G * P is scheduled (no transmission when every surplus clamps
to zero). The price lambda_G is calibrated by bisection on a dedicated
calibration sample so the sample-average scheduled power meets the long-term
budget; average power is monotone nonincreasing in the price, which makes
the bisection valid. Calibration returns the bracket edge whose average
power is at or slightly above the target (within tolerance), so the policy
never quietly underspends its budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable

import numpy as np

from . import _parallel
from .errors import CalibrationError
from .fading import STREAM_CALIBRATION, ChannelBlock, GainArrays, sample_gain_arrays
from .relaying import DfPowerSplit, effective_links, split_power
from .virtualize import Mode, VirtualArrays, VirtualUser, build_virtual_arrays, rate_of

if TYPE_CHECKING:
    from .experiments import ExperimentConfig

_MAX_DOUBLINGS = 60
_MAX_BISECTIONS = 200


@dataclass(frozen=True)
class PowerPrice:
    """Calibrated power price for a long-term average power target."""

    lambda_g: float
    target_avg_power: float
    achieved_avg_power: float  # on the calibration sample
    calibration_tolerance: float


@dataclass(frozen=True)
class ScheduledEntry:
    vu: VirtualUser
    tau: float
    p: float
    split: DfPowerSplit | None = None


@dataclass(frozen=True)
class Allocation:
    """Per-block decision of the global policy (rates in nats/sec/Hz)."""

    block_index: int
    scheduled: ScheduledEntry | None
    weighted_rate: float
    user_rates: tuple[float, ...]


@dataclass(frozen=True)
class PolicyAverages:
    """Long-term averages of a policy run; rates in bits/sec/Hz."""

    rates: tuple[float, ...]
    avg_power: float
    frac_df: float
    frac_dt: float
    frac_none: float
    blocks: int


def waterfill(vu: VirtualUser, lambda_g: float) -> float:
    """Power maximizing f(P) - lambda_G * P over P >= 0."""
    if lambda_g <= 0:
        raise ValueError(f"lambda_g must be > 0, got {lambda_g}")
    return max(vu.omega / lambda_g - 1.0 / vu.eta, 0.0)


def schedule_block(
    vus: list[VirtualUser],
    lambda_g: float,
    n_users: int | None = None,
    block_index: int = 0,
) -> Allocation:
    """Schedule the surplus-argmax virtual user; ties go to the lowest index."""
    if n_users is None:
        n_users = max(vu.actual_user for vu in vus) + 1 if vus else 0
    best_j = -1
    best_surplus = 0.0
    best_p = 0.0
    for j, vu in enumerate(vus):
        p = waterfill(vu, lambda_g)
        surplus = rate_of(vu, p) - lambda_g * p
        if surplus > best_surplus:
            best_j, best_surplus, best_p = j, surplus, p
    rates = [0.0] * n_users
    if best_j < 0:
        return Allocation(block_index, None, 0.0, tuple(rates))
    vu = vus[best_j]
    split = None
    if vu.mode is Mode.DF:
        split = split_power(vu.relay_link, best_p)
    r = math.log1p(vu.eta * best_p)
    if vu.mode is Mode.DF:
        r *= 0.5
    rates[vu.actual_user] = r
    entry = ScheduledEntry(vu=vu, tau=1.0, p=best_p, split=split)
    return Allocation(block_index, entry, rate_of(vu, best_p), tuple(rates))


# ---------------------------------------------------------------------------
# array engine
# ---------------------------------------------------------------------------

def waterfill_arrays(varr: VirtualArrays, lam):
    """Water-filling powers and weighted rates per virtual-user row.

    lam may be a scalar or a per-block vector (n,). Invalid rows get P = 0.
    """
    p = varr.omega[:, None] / lam - 1.0 / varr.eta
    np.maximum(p, 0.0, out=p)
    p = np.where(varr.valid, p, 0.0)
    f = varr.omega[:, None] * np.log1p(varr.eta * p)
    return p, f


def schedule_arrays(varr: VirtualArrays, lam):
    """Winner row, transmit mask, scheduled power and weighted rate per block."""
    p, f = waterfill_arrays(varr, lam)
    surplus = f - lam * p
    j = np.argmax(surplus, axis=0)
    cols = np.arange(varr.blocks)
    on = surplus[j, cols] > 0.0
    p_sel = np.where(on, p[j, cols], 0.0)
    f_sel = np.where(on, f[j, cols], 0.0)
    return j, on, p_sel, f_sel


def _global_chunk(varr: VirtualArrays, lam: float, a: int, b: int):
    sub = varr.cols(a, b)
    j, on, p_sel, f_sel = schedule_arrays(sub, lam)
    df_sel = sub.is_df[j]
    r = np.log1p(sub.eta[j, np.arange(b - a)] * p_sel)
    r = np.where(df_sel, 0.5 * r, r)
    r = np.where(on, r, 0.0)
    rate_user = np.bincount(
        sub.user[j][on], weights=r[on], minlength=sub.n_users
    )
    return (
        rate_user,
        float(f_sel.sum()),
        float(p_sel.sum()),
        float((on & df_sel).sum()),
        float((on & ~df_sel).sum()),
        float((~on).sum()),
    )


def _nudged(x: float, ulps: int) -> float:
    target = math.inf if ulps > 0 else -math.inf
    for _ in range(abs(ulps)):
        x = math.nextafter(x, target)
    return x


def _unit_partition(frac_df: float, frac_none: float):
    """Mode fractions that sum to exactly 1.0 as floats.

    The dt fraction is the complement; division rounding can make every
    nearby complement miss 1.0 exactly, so df (and as a last resort none)
    may be moved by one ulp. The reported values stay within one ulp of the
    exact ratios.
    """
    for d_ulp in (0, -1, 1):
        df = _nudged(frac_df, d_ulp)
        base = (1.0 - frac_none) - df
        for t_ulp in (0, -1, 1, -2, 2):
            dt = max(_nudged(base, t_ulp), 0.0)
            if (df + dt) + frac_none == 1.0:
                return df, dt, frac_none
    return frac_df, max((1.0 - frac_none) - frac_df, 0.0), frac_none


@dataclass(frozen=True)
class RunStats:
    """Summed per-block quantities of a policy run (rates in nats)."""

    rate_sums: np.ndarray  # (M,)
    weighted_sum: float
    power_sum: float
    df_sum: float
    dt_sum: float
    none_sum: float
    blocks: int

    def averages(self) -> PolicyAverages:
        n = self.blocks
        ln2 = math.log(2.0)
        frac_df, frac_dt, frac_none = _unit_partition(
            self.df_sum / n, self.none_sum / n
        )
        return PolicyAverages(
            rates=tuple(float(x) / n / ln2 for x in self.rate_sums),
            avg_power=self.power_sum / n,
            frac_df=frac_df,
            frac_dt=frac_dt,
            frac_none=frac_none,
            blocks=n,
        )


def reduce_partials(partials: list, blocks: int) -> RunStats:
    return RunStats(
        rate_sums=_parallel.fsum_field(partials, 0),
        weighted_sum=_parallel.fsum_field(partials, 1),
        power_sum=_parallel.fsum_field(partials, 2),
        df_sum=_parallel.fsum_field(partials, 3),
        dt_sum=_parallel.fsum_field(partials, 4),
        none_sum=_parallel.fsum_field(partials, 5),
        blocks=blocks,
    )


def global_stats(varr: VirtualArrays, lam: float, threads: int | None = None) -> RunStats:
    """Chunked, worker-count-independent evaluation of the global policy."""
    partials = _parallel.chunked_partials(
        varr.blocks, lambda a, b: _global_chunk(varr, lam, a, b), threads
    )
    return reduce_partials(partials, varr.blocks)


# ---------------------------------------------------------------------------
# price calibration
# ---------------------------------------------------------------------------

def calibrate_on_arrays(
    varr: VirtualArrays, target: float, tolerance: float
) -> tuple[float, float]:
    """Bisect lambda_G until the sample-average power is within tolerance.

    Returns (lambda_g, achieved) with achieved in [target, (1+tol)*target]
    whenever the bisection resolves; the returned price sits on the
    feasible-from-above bracket edge.
    """
    if target <= 0:
        raise ValueError(f"target average power must be > 0, got {target}")

    def avg_power(lam: float) -> float:
        _, _, p_sel, _ = schedule_arrays(varr, lam)
        return float(p_sel.mean())

    lam_lo = lam_hi = 1.0
    pw_lo = avg_power(1.0)
    if pw_lo >= target:
        for _ in range(_MAX_DOUBLINGS):
            lam_hi *= 2.0
            pw = avg_power(lam_hi)
            if pw < target:
                break
            lam_lo, pw_lo = lam_hi, pw
        else:
            raise CalibrationError(
                f"no price with average power below {target} after "
                f"{_MAX_DOUBLINGS} doublings"
            )
    else:
        for _ in range(_MAX_DOUBLINGS):
            lam_lo *= 0.5
            pw = avg_power(lam_lo)
            if pw >= target:
                pw_lo = pw
                break
            lam_hi = lam_lo
        else:
            raise CalibrationError(
                f"no price with average power above {target} after "
                f"{_MAX_DOUBLINGS} halvings"
            )
    for _ in range(_MAX_BISECTIONS):
        if pw_lo <= target * (1.0 + tolerance):
            break
        if lam_hi - lam_lo <= 1e-15 * lam_hi:
            break
        mid = math.sqrt(lam_lo * lam_hi)
        pw = avg_power(mid)
        if pw >= target:
            lam_lo, pw_lo = mid, pw
        else:
            lam_hi = mid
    return lam_lo, pw_lo


def calibrate_price(config: "ExperimentConfig", target: float) -> PowerPrice:
    """Calibrate lambda_G for the config's statistics at average power target.

    Uses a dedicated calibration sample (fixed sub-stream of the master
    seed), separate from evaluation blocks.
    """
    gains = sample_gain_arrays(
        config.table, config.seed, STREAM_CALIBRATION, 0, config.cal_blocks
    )
    links = effective_links(gains, config.miso_enabled)
    varr = build_virtual_arrays(
        links, config.mu, include_df=config.policy.value != "DTOnly"
    )
    lam, achieved = calibrate_on_arrays(varr, target, config.cal_tolerance)
    return PowerPrice(
        lambda_g=lam,
        target_avg_power=target,
        achieved_avg_power=achieved,
        calibration_tolerance=config.cal_tolerance,
    )


# ---------------------------------------------------------------------------
# policy runner over a block stream
# ---------------------------------------------------------------------------

def _stats_from_blocks(
    blocks: list[ChannelBlock], mu, miso: bool, lam: float
) -> tuple:
    m = blocks[0].gamma_sd.shape[0]
    gains = GainArrays(
        sd=np.stack([blk.gamma_sd for blk in blocks], axis=1),
        sr=np.stack([blk.gamma_sr for blk in blocks], axis=1)
        if blocks[0].gamma_sr.size
        else np.empty((0, len(blocks))),
        rd=np.stack([blk.gamma_rd for blk in blocks], axis=2)
        if blocks[0].gamma_sr.size
        else np.empty((0, m, len(blocks))),
        k0=blocks[0].block_index,
    )
    varr = build_virtual_arrays(effective_links(gains, miso), mu)
    return _global_chunk(varr, lam, 0, varr.blocks)


def run_policy(
    config: "ExperimentConfig",
    price: PowerPrice,
    blocks: Iterable[ChannelBlock],
) -> PolicyAverages:
    """Run the calibrated global policy over a block stream and average.

    Blocks are folded in fixed-size batches and reduced in batch order with
    exact summation, so the averages do not depend on batching or workers.
    """
    partials = []
    total = 0
    buf: list[ChannelBlock] = []
    for blk in blocks:
        buf.append(blk)
        if len(buf) == _parallel.CHUNK_BLOCKS:
            partials.append(
                _stats_from_blocks(buf, config.mu, config.miso_enabled, price.lambda_g)
            )
            total += len(buf)
            buf = []
    if buf:
        partials.append(
            _stats_from_blocks(buf, config.mu, config.miso_enabled, price.lambda_g)
        )
        total += len(buf)
    if total == 0:
        raise ValueError("run_policy needs at least one block")
    return reduce_partials(partials, total).averages()
