"""Closed-form decode-and-forward link math.

A half-duplex regenerative DF link sends the codeword to the relay in slot 1
and retransmits it in slot 2 while the destination combines both receptions.
With the source/relay power split chosen so the decode constraint and the
combining rate coincide, a useful link behaves like a direct link with power
gain alpha at half the degrees of freedom:

    rate(P) = 0.5 * log(1 + 2 * alpha * gamma_sd * P)
    alpha   = a * b / (a + b - 1),  a = gamma_sr/gamma_sd, b = gamma_rd/gamma_sd

The link is useful only when both normalized gains exceed 1; alpha is then
strictly between 1 and min(a, b). The coherent multi-relay extension treats
the selected relays (plus the source) as distributed antennas in slot 2: the
decode constraint is set by the worst source-relay gain in the set and the
slot-2 effective gain is gamma_sd plus the sum of the members' relay-user
gains, with slot-2 power shared proportionally to each antenna's gain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fading import ChannelBlock, GainArrays


@dataclass(frozen=True)
class DfLink:
    """Effective DF link for one user: single relay or coherent relay set."""

    gamma_sd: float
    gamma_sr_eff: float  # min source-relay gain of the set (the decode bound)
    gamma_rd_eff: float  # slot-2 combined gain (includes gamma_sd in MISO mode)
    relay_set: tuple[int, ...]
    alpha: float
    miso: bool = False
    gamma_rd_each: tuple[float, ...] = field(default=())  # per-member relay-user gains


@dataclass(frozen=True)
class DfPowerSplit:
    """Source / relay power densities over one DF link (Joul/sec/Hz)."""

    p_source: float  # slot-1 source power P_s
    p_relay_total: float  # slot-2 total power P_r
    p_relay_each: tuple[float, ...] = ()
    p_source_slot2: float = 0.0  # source's slot-2 antenna share (MISO only)


def is_useful(gamma_sd: float, gamma_sr: float, gamma_rd: float) -> bool:
    """True iff the DF link can beat direct transmission for some power."""
    if not (gamma_sd > 0 and gamma_sr > 0 and gamma_rd > 0):
        raise ValueError("gains must be strictly positive")
    return gamma_sr > gamma_sd and gamma_rd > gamma_sd


def alpha_gain(gamma_sd: float, gamma_sr_eff: float, gamma_rd_eff: float) -> float:
    """Power gain of a useful DF link; depends only on the normalized gains."""
    if not is_useful(gamma_sd, gamma_sr_eff, gamma_rd_eff):
        raise ValueError(
            f"link (sd={gamma_sd}, sr={gamma_sr_eff}, rd={gamma_rd_eff}) is not useful"
        )
    a = gamma_sr_eff / gamma_sd
    b = gamma_rd_eff / gamma_sd
    return a * b / (a + b - 1.0)


def split_power(link: DfLink, p_df: float) -> DfPowerSplit:
    """Optimal source/relay split of the DF budget p_df = (P_s + P_r) / 2.

    Equalizes the decode-constraint term and the combining term of the DF
    rate: P_s = 2 p / (1 + (a-1)/b), P_r = 2 p - P_s. In MISO mode the slot-2
    budget is additionally shared among the member relays and the source in
    proportion to their individual gains.
    """
    if p_df < 0:
        raise ValueError(f"p_df must be nonnegative, got {p_df}")
    if not is_useful(link.gamma_sd, link.gamma_sr_eff, link.gamma_rd_eff):
        raise ValueError("cannot split power over a non-useful link")
    a = link.gamma_sr_eff / link.gamma_sd
    b = link.gamma_rd_eff / link.gamma_sd
    p_s = 2.0 * p_df / (1.0 + (a - 1.0) / b)
    p_r = 2.0 * p_df - p_s
    if not link.miso:
        return DfPowerSplit(p_source=p_s, p_relay_total=p_r, p_relay_each=(p_r,))
    each = tuple(g / link.gamma_rd_eff * p_r for g in link.gamma_rd_each)
    src2 = link.gamma_sd / link.gamma_rd_eff * p_r
    return DfPowerSplit(
        p_source=p_s, p_relay_total=p_r, p_relay_each=each, p_source_slot2=src2
    )


def rdf_rate(link: DfLink, p_df: float) -> float:
    """Achievable DF rate (nats/sec/Hz) at budget p_df under the optimal split."""
    if not is_useful(link.gamma_sd, link.gamma_sr_eff, link.gamma_rd_eff):
        raise ValueError("rate defined for useful links only")
    return 0.5 * math.log1p(2.0 * link.alpha * link.gamma_sd * p_df)


def select_relay(block: ChannelBlock, user: int) -> DfLink | None:
    """Best single relay for this user (max alpha); None if none is useful."""
    gsd = float(block.gamma_sd[user])
    best: DfLink | None = None
    for j in range(block.gamma_sr.shape[0]):
        gsr = float(block.gamma_sr[j])
        grd = float(block.gamma_rd[j, user])
        if not is_useful(gsd, gsr, grd):
            continue
        a = alpha_gain(gsd, gsr, grd)
        if best is None or a > best.alpha:
            best = DfLink(
                gamma_sd=gsd,
                gamma_sr_eff=gsr,
                gamma_rd_eff=grd,
                relay_set=(j,),
                alpha=a,
                gamma_rd_each=(grd,),
            )
    return best


def select_miso_set(block: ChannelBlock, user: int) -> DfLink | None:
    """Best coherent relay set for this user; None if no relay can decode.

    Candidates are the relays with gamma_sr above the direct gain. Sorted by
    gamma_sr descending, only the nested prefixes can be optimal: growing the
    set with a relay whose gamma_sr is at least the current minimum keeps the
    decode bound and raises the combined slot-2 gain, so every prefix
    dominates all other subsets sharing its weakest member. All prefixes are
    scanned because alpha is not monotone along the prefix sequence.
    """
    gsd = float(block.gamma_sd[user])
    cand = [
        (float(block.gamma_sr[j]), float(block.gamma_rd[j, user]), j)
        for j in range(block.gamma_sr.shape[0])
        if float(block.gamma_sr[j]) > gsd
    ]
    if not cand:
        return None
    cand.sort(key=lambda t: (-t[0], t[2]))
    best: DfLink | None = None
    rd_sum = gsd  # the source transmits in slot 2 as one of the antennas
    members: list[int] = []
    rd_each: list[float] = []
    for gsr, grd, j in cand:
        rd_sum += grd
        members.append(j)
        rd_each.append(grd)
        a = alpha_gain(gsd, gsr, rd_sum)
        if best is None or a > best.alpha:
            best = DfLink(
                gamma_sd=gsd,
                gamma_sr_eff=gsr,
                gamma_rd_eff=rd_sum,
                relay_set=tuple(members),
                alpha=a,
                miso=True,
                gamma_rd_each=tuple(rd_each),
            )
    return best


@dataclass(frozen=True)
class LinkArrays:
    """Per-user effective link quantities over a block range (engine form).

    alpha is the best DF power gain per block (NaN where no link is useful);
    eq_coeff is the equivalent direct-link coefficient of a forced
    equal-power DF transmission, min(gamma_sr, gamma_sd + gamma_rd), for the
    relay the equal-split baseline would pick.
    """

    gamma_sd: np.ndarray  # (M, n)
    alpha: np.ndarray  # (M, n)
    has_df: np.ndarray  # (M, n) bool
    eq_coeff: np.ndarray  # (M, n)


def _best_single_alpha(gsd: np.ndarray, gsr: np.ndarray, grd: np.ndarray):
    """Max-alpha single relay per block for one user: gsd (n,), gsr/grd (L, n)."""
    useful = (gsr > gsd) & (grd > gsd)
    a = gsr / gsd
    b = grd / gsd
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.where(useful, a * b / (a + b - 1.0), -np.inf)
    best = alpha.max(axis=0)
    has = np.isfinite(best)
    return np.where(has, best, np.nan), has, alpha


def _best_miso_alpha(gsd: np.ndarray, gsr: np.ndarray, grd: np.ndarray):
    """Best prefix-set alpha per block for one user (vector form of select_miso_set)."""
    l, n = gsr.shape
    cand = gsr > gsd
    key = np.where(cand, gsr, -np.inf)
    order = np.argsort(-key, axis=0, kind="stable")
    sr_sorted = np.take_along_axis(key, order, axis=0)
    rd_sorted = np.take_along_axis(np.where(cand, grd, 0.0), order, axis=0)
    rd_eff = gsd + np.cumsum(rd_sorted, axis=0)  # (L, n), prefix t rows
    valid = np.isfinite(sr_sorted)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = sr_sorted / gsd
        b = rd_eff / gsd
        alpha = np.where(valid, a * b / (a + b - 1.0), -np.inf)
    best = alpha.max(axis=0)
    has = np.isfinite(best)
    return np.where(has, best, np.nan), has


def effective_links(gains: GainArrays, miso: bool = False) -> LinkArrays:
    """Per-user best DF link quantities for a sampled block range."""
    m, n = gains.sd.shape
    l = gains.sr.shape[0]
    alpha = np.full((m, n), np.nan)
    has = np.zeros((m, n), dtype=bool)
    eq = np.full((m, n), np.nan)
    for i in range(m):
        gsd = gains.sd[i]
        if l == 0:
            continue
        grd = gains.rd[:, i, :]
        if miso:
            alpha[i], has[i] = _best_miso_alpha(gsd, gains.sr, grd)
            _, _, alpha_single = _best_single_alpha(gsd, gains.sr, grd)
        else:
            alpha[i], has[i], alpha_single = _best_single_alpha(gsd, gains.sr, grd)
        # equal-split baseline: max-alpha relay when one is useful, otherwise
        # the relay with the best forced equal-power rate
        c = np.minimum(gains.sr, gsd + grd)  # (L, n)
        any_useful = np.isfinite(alpha_single).any(axis=0)
        pick = np.where(any_useful, alpha_single.argmax(axis=0), c.argmax(axis=0))
        eq[i] = np.take_along_axis(c, pick[None, :], axis=0)[0]
    return LinkArrays(gamma_sd=gains.sd, alpha=alpha, has_df=has, eq_coeff=eq)
