"""Virtual-user transform: each actual user becomes up to two virtual users.

An actual user i with multiplexing weight mu_i contributes a DT virtual user
(omega = mu_i, eta = gamma_sd_i) always, and a DF virtual user (omega =
mu_i/2, eta = 2 * gamma_sd_i * alpha_i) whenever a useful relay link exists.
Every virtual user then carries the same weighted-rate shape

    f(P) = omega * log(1 + eta * P)

which reduces the relay-assisted problem to a no-relay broadcast problem.
Virtual users are ordered (user index, DT before DF); downstream tie-breaks
reference this order.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .fading import ChannelBlock
from .relaying import DfLink, LinkArrays, select_miso_set, select_relay

_MU_SUM_TOL = 1e-9


class Mode(enum.Enum):
    DT = "DT"
    DF = "DF"


@dataclass(frozen=True)
class VirtualUser:
    actual_user: int
    mode: Mode
    omega: float
    eta: float
    relay_link: DfLink | None = None


def validate_weights(mu, n_users: int) -> tuple[float, ...]:
    """Check mu lies on the simplex; never renormalize silently."""
    mu = tuple(float(x) for x in mu)
    if len(mu) != n_users:
        raise ConfigurationError(f"mu has {len(mu)} entries, expected {n_users}")
    if any(x < 0 for x in mu):
        raise ConfigurationError(f"mu entries must be nonnegative, got {mu}")
    if abs(sum(mu) - 1.0) > _MU_SUM_TOL:
        raise ConfigurationError(f"mu must sum to 1, got sum {sum(mu)!r}")
    return mu


def build_virtual_users(
    block: ChannelBlock, mu, miso: bool = False
) -> list[VirtualUser]:
    """Virtual users of one block: DT per user, DF where a useful link exists."""
    m = block.gamma_sd.shape[0]
    mu = validate_weights(mu, m)
    out: list[VirtualUser] = []
    for i in range(m):
        gsd = float(block.gamma_sd[i])
        out.append(VirtualUser(actual_user=i, mode=Mode.DT, omega=mu[i], eta=gsd))
        link = select_miso_set(block, i) if miso else select_relay(block, i)
        if link is not None:
            out.append(
                VirtualUser(
                    actual_user=i,
                    mode=Mode.DF,
                    omega=mu[i] / 2.0,
                    eta=2.0 * gsd * link.alpha,
                    relay_link=link,
                )
            )
    return out


def rate_of(vu: VirtualUser, p: float) -> float:
    """Weighted rate f(P) = omega * log(1 + eta * P), in nats."""
    if p < 0:
        raise ValueError(f"power must be nonnegative, got {p}")
    return vu.omega * math.log1p(vu.eta * p)


def user_rate_of(vu: VirtualUser, p: float) -> float:
    """Rate delivered to the actual user (nats/sec/Hz); half rate under DF."""
    r = math.log1p(vu.eta * p)
    return r if vu.mode is Mode.DT else 0.5 * r


@dataclass(frozen=True)
class VirtualArrays:
    """Virtual users over a block range, row-major in virtual-user order.

    eta holds a placeholder 1.0 wherever valid is False (DF rows on blocks
    with no useful link); every consumer masks with valid.
    """

    omega: np.ndarray  # (J,)
    eta: np.ndarray  # (J, n)
    valid: np.ndarray  # (J, n) bool
    user: np.ndarray  # (J,) int
    is_df: np.ndarray  # (J,) bool
    n_users: int

    @property
    def blocks(self) -> int:
        return self.eta.shape[1]

    def cols(self, a: int, b: int) -> "VirtualArrays":
        return VirtualArrays(
            omega=self.omega,
            eta=self.eta[:, a:b],
            valid=self.valid[:, a:b],
            user=self.user,
            is_df=self.is_df,
            n_users=self.n_users,
        )


def build_virtual_arrays(
    links: LinkArrays, mu, include_df: bool = True
) -> VirtualArrays:
    """Array form of the virtual-user transform for a sampled block range."""
    m, n = links.gamma_sd.shape
    mu = validate_weights(mu, m)
    omega, eta, valid, user, is_df = [], [], [], [], []
    for i in range(m):
        omega.append(mu[i])
        eta.append(links.gamma_sd[i])
        valid.append(np.ones(n, dtype=bool))
        user.append(i)
        is_df.append(False)
        if include_df and links.has_df[i].any():
            omega.append(mu[i] / 2.0)
            eta.append(
                np.where(
                    links.has_df[i], 2.0 * links.gamma_sd[i] * links.alpha[i], 1.0
                )
            )
            valid.append(links.has_df[i])
            user.append(i)
            is_df.append(True)
    return VirtualArrays(
        omega=np.asarray(omega),
        eta=np.vstack(eta),
        valid=np.vstack(valid),
        user=np.asarray(user, dtype=np.intp),
        is_df=np.asarray(is_df, dtype=bool),
        n_users=m,
    )
