"""Constant-power-per-block allocation.

Each block solves

    max sum_j tau_j f_j(P_j)   s.t.   sum_j tau_j P_j <= P[k],  sum_j tau_j <= 1

whose optimum is the upper concave envelope of max_j f_j at P[k]: either a
single virtual user at full budget, or a time-share of the two tangency
points of a common supporting line. The envelope is found by bisecting a
per-block power price: at price lam each user's optimum is the water-filling
power, the surplus-argmax user is selected, and the price is driven to where
the selected power crosses the budget. A crossing inside a single-user
interval returns that user with tau = 1; a crossing at a two-user kink
returns the two bracket winners time-shared to meet the budget exactly.

The near-optimal rule schedules only argmax_j f_j(P[k]) at full budget; it
coincides with the optimum whenever the envelope touches a single function.
"""

from __future__ import annotations

import numpy as np

from dataclasses import dataclass

from . import _parallel
from .errors import ConfigurationError
from .scheduler_global import RunStats, reduce_partials, waterfill_arrays
from .virtualize import VirtualArrays, VirtualUser

_LAMBDA_RTOL = 1e-10
_MAX_ITER = 200


@dataclass(frozen=True)
class PerBlockSolution:
    """Entries are (virtual user, tau, P); objective is the weighted rate (nats)."""

    entries: tuple[tuple[VirtualUser, float, float], ...]
    objective: float


def _activation(varr: VirtualArrays) -> np.ndarray:
    """Price below which each row starts transmitting (0 for invalid rows)."""
    return np.where(varr.valid, varr.omega[:, None] * varr.eta, 0.0)


def _selected(varr: VirtualArrays, lam: np.ndarray):
    """Surplus-argmax row per block and its power/weighted rate at price lam."""
    p, f = waterfill_arrays(varr, lam)
    surplus = f - lam * p
    j = np.argmax(surplus, axis=0)
    cols = np.arange(varr.blocks)
    return j, p[j, cols], f[j, cols]


def solve_blocks_arrays(varr: VirtualArrays, p_block):
    """Vectorized per-block envelope solution; p_block is a scalar or (n,) budget.

    Returns (j1, tau1, p1, j2, tau2, p2, objective); the second entry has
    tau2 = 0 on blocks solved by a single user.
    """
    p_block = np.asarray(p_block, dtype=float)
    if np.any(p_block <= 0):
        raise ValueError("p_block must be > 0")
    n = varr.blocks
    act = _activation(varr)
    lam_hi = act.max(axis=0)
    if np.any(lam_hi <= 0.0):
        raise ConfigurationError("every virtual user has zero activation price")

    # lower bracket: halve until the selected power reaches the budget
    lam_lo = lam_hi.copy()
    for _ in range(_MAX_ITER + 100):
        _, p_sel, _ = _selected(varr, lam_lo)
        need = p_sel < p_block
        if not need.any():
            break
        lam_lo = np.where(need, 0.5 * lam_lo, lam_lo)
    else:
        raise ConfigurationError("per-block price bracket did not close")

    for _ in range(_MAX_ITER):
        live = (lam_hi - lam_lo) > _LAMBDA_RTOL * lam_hi
        if not live.any():
            break
        mid = np.where(live, np.sqrt(lam_lo * lam_hi), lam_lo)
        _, p_sel, _ = _selected(varr, mid)
        ge = p_sel >= p_block
        lam_lo = np.where(live & ge, mid, lam_lo)
        lam_hi = np.where(live & ~ge, mid, lam_hi)

    j_lo, p_lo, f_lo = _selected(varr, lam_lo)  # power >= budget side
    j_hi, p_hi, f_hi = _selected(varr, lam_hi)  # power <= budget side

    # two-point time-share meeting the budget exactly
    denom = p_lo - p_hi
    safe = denom > 0.0
    tau_lo = np.where(safe, (p_block - p_hi) / np.where(safe, denom, 1.0), 1.0)
    tau_lo = np.clip(tau_lo, 0.0, 1.0)
    obj_share = tau_lo * f_lo + (1.0 - tau_lo) * f_hi

    # always-feasible single-user candidate: argmax_j f_j(p_block)
    f_full = varr.omega[:, None] * np.log1p(varr.eta * p_block)
    f_full = np.where(varr.valid, f_full, 0.0)
    j_one = np.argmax(f_full, axis=0)
    obj_one = f_full[j_one, np.arange(n)]

    share_wins = (j_lo != j_hi) & (obj_share > obj_one)
    j1 = np.where(share_wins, j_lo, j_one)
    tau1 = np.where(share_wins, tau_lo, 1.0)
    p1 = np.where(share_wins, p_lo, p_block)
    j2 = np.where(share_wins, j_hi, 0)
    tau2 = np.where(share_wins, 1.0 - tau_lo, 0.0)
    p2 = np.where(share_wins, p_hi, 0.0)
    objective = np.where(share_wins, obj_share, obj_one)
    return j1, tau1, p1, j2, tau2, p2, objective


def near_optimal_arrays(varr: VirtualArrays, p_block):
    """argmax_j f_j(p_block) with full budget; returns (j, objective)."""
    p_block = np.asarray(p_block, dtype=float)
    if np.any(p_block <= 0):
        raise ValueError("p_block must be > 0")
    f_full = varr.omega[:, None] * np.log1p(varr.eta * p_block)
    f_full = np.where(varr.valid, f_full, 0.0)
    j = np.argmax(f_full, axis=0)
    return j, f_full[j, np.arange(varr.blocks)]


def _varr_from_vus(vus: list[VirtualUser]) -> VirtualArrays:
    if not vus:
        raise ConfigurationError("need at least one virtual user")
    n_users = max(vu.actual_user for vu in vus) + 1
    return VirtualArrays(
        omega=np.array([vu.omega for vu in vus]),
        eta=np.array([[vu.eta] for vu in vus]),
        valid=np.ones((len(vus), 1), dtype=bool),
        user=np.array([vu.actual_user for vu in vus], dtype=np.intp),
        is_df=np.array([vu.mode.value == "DF" for vu in vus], dtype=bool),
        n_users=n_users,
    )


def solve_block(vus: list[VirtualUser], p_block: float) -> PerBlockSolution:
    """Optimal constant-power allocation of one block across virtual users."""
    varr = _varr_from_vus(vus)
    j1, tau1, p1, j2, tau2, p2, obj = solve_blocks_arrays(varr, p_block)
    entries = [(vus[int(j1[0])], float(tau1[0]), float(p1[0]))]
    if tau2[0] > 0.0:
        entries.append((vus[int(j2[0])], float(tau2[0]), float(p2[0])))
        entries.sort(key=lambda e: vus.index(e[0]))
    return PerBlockSolution(entries=tuple(entries), objective=float(obj[0]))


def solve_block_near_optimal(
    vus: list[VirtualUser], p_block: float
) -> PerBlockSolution:
    """Single-user rule: schedule argmax_j f_j(P[k]) with the whole budget."""
    varr = _varr_from_vus(vus)
    j, obj = near_optimal_arrays(varr, p_block)
    return PerBlockSolution(
        entries=((vus[int(j[0])], 1.0, float(p_block)),), objective=float(obj[0])
    )


# ---------------------------------------------------------------------------
# policy statistics over block ranges
# ---------------------------------------------------------------------------

def _perblock_chunk(varr: VirtualArrays, p_block, near_opt: bool, a: int, b: int):
    sub = varr.cols(a, b)
    cols = np.arange(b - a)
    pb = np.broadcast_to(np.asarray(p_block, dtype=float), (varr.blocks,))[a:b]
    if near_opt:
        j, obj = near_optimal_arrays(sub, pb)
        j1, tau1, p1 = j, np.ones(b - a), pb
        tau2 = np.zeros(b - a)
        j2, p2 = np.zeros(b - a, dtype=np.intp), np.zeros(b - a)
    else:
        j1, tau1, p1, j2, tau2, p2, obj = solve_blocks_arrays(sub, pb)

    def entry_rates(j, tau, p):
        r = np.log1p(sub.eta[j, cols] * p)
        r = np.where(sub.is_df[j], 0.5 * r, r) * tau
        return r

    r1 = entry_rates(j1, tau1, p1)
    r2 = entry_rates(j2, tau2, p2)
    rate_user = np.bincount(sub.user[j1], weights=r1, minlength=sub.n_users)
    rate_user += np.bincount(sub.user[j2], weights=r2, minlength=sub.n_users)
    df1 = np.where(sub.is_df[j1], tau1, 0.0)
    df2 = np.where(sub.is_df[j2], tau2, 0.0)
    df_share = df1 + df2
    dt_share = (tau1 + tau2) - df_share
    return (
        rate_user,
        float(obj.sum()),
        float(pb.sum()),
        float(df_share.sum()),
        float(dt_share.sum()),
        0.0,
    )


def perblock_stats(
    varr: VirtualArrays,
    p_block: float,
    near_opt: bool = False,
    threads: int | None = None,
) -> RunStats:
    """Chunked per-block policy statistics (constant budget p_block per block)."""
    partials = _parallel.chunked_partials(
        varr.blocks,
        lambda a, b: _perblock_chunk(varr, p_block, near_opt, a, b),
        threads,
    )
    return reduce_partials(partials, varr.blocks)
