"""Block-fading generation of effective power gains for every link of the grid.

Every link of the resource grid (source->user, source->relay, relay->user)
carries an independent stationary fading process. Gains are effective power
gains gamma = |h|^2 / N0, i.e. received SNR per unit transmit power density.

Sampling is counter-based: each link owns a stream derived from the master
seed, and block k always consumes the same two uniforms of that stream, so a
(seed, block_index) pair fully determines the realization no matter how many
blocks are drawn, in which order, or by how many workers.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ConfigurationError

# Two uniforms are reserved per (link, block) draw regardless of family:
# Rayleigh consumes one (inverse CDF), Rician consumes both (Box-Muller).
_DRAWS_PER_BLOCK = 2
# Blocks served by one child stream; block k sits at offset k % _CHUNK of
# chunk k // _CHUNK, which keeps addressing independent of the sampled span.
_CHUNK = 4096

# Stream tags separating the evaluation sample from the calibration sample.
STREAM_EVAL = 0
STREAM_CALIBRATION = 1


class Family(enum.Enum):
    RAYLEIGH = "rayleigh"
    RICIAN = "rician"


@dataclass(frozen=True)
class FadingSpec:
    """Distribution of one link's effective power gain.

    mean_gain is the average effective power gain; k_factor is the Rician
    ratio of line-of-sight to scattered received power (forced to 0 for
    Rayleigh).
    """

    family: Family
    mean_gain: float
    k_factor: float = 0.0

    def __post_init__(self):
        if not self.mean_gain > 0.0:
            raise ConfigurationError(f"mean_gain must be > 0, got {self.mean_gain}")
        if self.k_factor < 0.0:
            raise ConfigurationError(f"k_factor must be >= 0, got {self.k_factor}")
        if self.family is Family.RAYLEIGH and self.k_factor != 0.0:
            object.__setattr__(self, "k_factor", 0.0)


@dataclass(frozen=True)
class FadingTable:
    """Per-link fading specs: sd[i], sr[j], rd[j][i] for users i, relays j."""

    sd: tuple[FadingSpec, ...]
    sr: tuple[FadingSpec, ...] = ()
    rd: tuple[tuple[FadingSpec, ...], ...] = ()

    def __post_init__(self):
        if not self.sd:
            raise ConfigurationError("fading table needs at least one sd (user) spec")
        if len(self.rd) != len(self.sr):
            raise ConfigurationError(
                f"fading table has {len(self.sr)} sr specs but {len(self.rd)} rd rows"
            )
        for j, row in enumerate(self.rd):
            if len(row) != len(self.sd):
                raise ConfigurationError(
                    f"rd row for relay {j} has {len(row)} entries, expected {len(self.sd)}"
                )

    @property
    def users(self) -> int:
        return len(self.sd)

    @property
    def relays(self) -> int:
        return len(self.sr)

    def link_id(self, kind: str, j: int = 0, i: int = 0) -> int:
        """Stable id of a link within the M*(L+1)+L grid (kind: sd|sr|rd)."""
        m, l = self.users, self.relays
        if kind == "sd":
            return i
        if kind == "sr":
            return m + j
        if kind == "rd":
            return m + l + j * m + i
        raise ValueError(f"unknown link kind {kind!r}")


@dataclass(frozen=True)
class ChannelBlock:
    """One resource unit's realization of all link gains."""

    gamma_sd: np.ndarray  # (M,)
    gamma_sr: np.ndarray  # (L,)
    gamma_rd: np.ndarray  # (L, M)
    block_index: int

    def __post_init__(self):
        m = self.gamma_sd.shape[0]
        l = self.gamma_sr.shape[0]
        if self.gamma_rd.shape != (l, m):
            raise ConfigurationError(
                f"gamma_rd shape {self.gamma_rd.shape} inconsistent with M={m}, L={l}"
            )
        if not (
            np.all(self.gamma_sd > 0)
            and np.all(self.gamma_sr > 0)
            and np.all(self.gamma_rd > 0)
        ):
            raise ConfigurationError("channel gains must be strictly positive")


@dataclass(frozen=True)
class GainArrays:
    """Gains for the contiguous block range [k0, k0+n): sd (M,n), sr (L,n), rd (L,M,n)."""

    sd: np.ndarray
    sr: np.ndarray
    rd: np.ndarray
    k0: int

    @property
    def blocks(self) -> int:
        return self.sd.shape[1]


def _gains_from_uniforms(spec: FadingSpec, u: np.ndarray) -> np.ndarray:
    """Map uniform pairs (n, 2) to n gain draws of the spec's distribution."""
    if spec.family is Family.RAYLEIGH:
        g = -spec.mean_gain * np.log1p(-u[:, 0])
    else:
        kappa = spec.k_factor
        # |LOS + scattered complex Gaussian|^2 scaled so the mean is mean_gain
        # and the LOS/scattered power ratio is kappa.
        los = math.sqrt(kappa / (kappa + 1.0) * spec.mean_gain)
        sigma = math.sqrt(spec.mean_gain / (2.0 * (kappa + 1.0)))
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        phase = 2.0 * np.pi * u[:, 1]
        g = (los + sigma * r * np.cos(phase)) ** 2 + (sigma * r * np.sin(phase)) ** 2
    # u = 0 (or an exact LOS cancellation) would give 0; keep gains strictly positive
    return np.maximum(g, spec.mean_gain * 1e-300)


def _link_uniforms(seed: int, stream: int, link: int, k0: int, k1: int) -> np.ndarray:
    """Uniform pairs for blocks [k0, k1) of one link, shape (k1-k0, 2)."""
    out = np.empty((k1 - k0, 2))
    for c in range(k0 // _CHUNK, (k1 - 1) // _CHUNK + 1):
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream, link, c))
        u = np.random.default_rng(ss).random(_CHUNK * _DRAWS_PER_BLOCK)
        u = u.reshape(_CHUNK, _DRAWS_PER_BLOCK)
        lo = max(k0, c * _CHUNK)
        hi = min(k1, (c + 1) * _CHUNK)
        out[lo - k0 : hi - k0] = u[lo - c * _CHUNK : hi - c * _CHUNK]
    return out


def sample_gain(spec: FadingSpec, rng_stream: np.random.Generator) -> float:
    """One gain draw from an externally managed stream (consumes two uniforms)."""
    u = rng_stream.random(_DRAWS_PER_BLOCK).reshape(1, _DRAWS_PER_BLOCK)
    return float(_gains_from_uniforms(spec, u)[0])


def sample_gain_arrays(
    table: FadingTable, seed: int, stream: int, k0: int, k1: int
) -> GainArrays:
    """All link gains for blocks [k0, k1), drawn independently per link."""
    if k1 <= k0 or k0 < 0:
        raise ValueError(f"invalid block range [{k0}, {k1})")

    def draw(spec: FadingSpec, link: int) -> np.ndarray:
        return _gains_from_uniforms(spec, _link_uniforms(seed, stream, link, k0, k1))

    m, l = table.users, table.relays
    sd = np.stack([draw(table.sd[i], table.link_id("sd", i=i)) for i in range(m)])
    if l:
        sr = np.stack([draw(table.sr[j], table.link_id("sr", j=j)) for j in range(l)])
        rd = np.stack(
            [
                np.stack(
                    [
                        draw(table.rd[j][i], table.link_id("rd", j=j, i=i))
                        for i in range(m)
                    ]
                )
                for j in range(l)
            ]
        )
    else:
        sr = np.empty((0, k1 - k0))
        rd = np.empty((0, m, k1 - k0))
    return GainArrays(sd=sd, sr=sr, rd=rd, k0=k0)


def sample_block(
    table: FadingTable, k: int, seed: int, stream: int = STREAM_EVAL
) -> ChannelBlock:
    """Realization of block k; bit-identical for identical (seed, k)."""
    g = sample_gain_arrays(table, seed, stream, k, k + 1)
    return ChannelBlock(
        gamma_sd=g.sd[:, 0].copy(),
        gamma_sr=g.sr[:, 0].copy(),
        gamma_rd=g.rd[:, :, 0].copy(),
        block_index=k,
    )


def block_iter(
    table: FadingTable, seed: int, n: int, stream: int = STREAM_EVAL, k0: int = 0
) -> Iterator[ChannelBlock]:
    """Yield blocks k0 .. k0+n-1, sampling chunk-wise."""
    done = 0
    while done < n:
        a = k0 + done
        b = min(k0 + n, a + _CHUNK)
        g = sample_gain_arrays(table, seed, stream, a, b)
        for t in range(b - a):
            yield ChannelBlock(
                gamma_sd=g.sd[:, t].copy(),
                gamma_sr=g.sr[:, t].copy(),
                gamma_rd=g.rd[:, :, t].copy(),
                block_index=a + t,
            )
        done += b - a
