"""Built-in invariant checks behind the `relay-alloc selftest` subcommand.

Small, fast versions of the package's core correctness properties; the full
suites live in the test directory.
"""

from __future__ import annotations

import math

import numpy as np

from .experiments import ExperimentConfig, Policy, sweep_snr
from .fading import ChannelBlock, FadingSpec, FadingTable, Family
from .relaying import DfLink, alpha_gain, rdf_rate, select_miso_set, split_power
from .scheduler_perblock import solve_block, solve_block_near_optimal
from .virtualize import Mode, VirtualUser


def _random_useful_triples(rng, n):
    gsd = rng.uniform(0.2, 5.0, n)
    a = rng.uniform(1.0 + 1e-6, 100.0, n)
    b = rng.uniform(1.0 + 1e-6, 100.0, n)
    return gsd, a * gsd, b * gsd


def _check_equal_term_split() -> str:
    rng = np.random.default_rng(7)
    gsd, gsr, grd = _random_useful_triples(rng, 1000)
    p = rng.uniform(1e-3, 10.0, 1000)
    worst = 0.0
    for i in range(1000):
        link = DfLink(
            gamma_sd=gsd[i],
            gamma_sr_eff=gsr[i],
            gamma_rd_eff=grd[i],
            relay_set=(0,),
            alpha=alpha_gain(gsd[i], gsr[i], grd[i]),
        )
        s = split_power(link, p[i])
        t1 = 0.5 * math.log1p(gsr[i] * s.p_source)
        t2 = 0.5 * math.log1p(gsd[i] * s.p_source + grd[i] * s.p_relay_total)
        worst = max(worst, abs(t1 - t2) / t1, abs(min(t1, t2) - rdf_rate(link, p[i])) / t1)
        if abs(0.5 * s.p_source + 0.5 * s.p_relay_total - p[i]) > 1e-12 * p[i]:
            raise AssertionError("budget not conserved")
    if worst > 1e-9:
        raise AssertionError(f"equal-term residual {worst:.2e} > 1e-9")
    return f"1000 useful links, worst residual {worst:.2e}"


def _check_alpha_bounds() -> str:
    rng = np.random.default_rng(11)
    gsd, gsr, grd = _random_useful_triples(rng, 2000)
    alpha = np.array([alpha_gain(*t) for t in zip(gsd, gsr, grd)])
    lo = alpha > 1.0
    hi = alpha < np.minimum(gsr / gsd, grd / gsd)
    if not (lo.all() and hi.all()):
        raise AssertionError("alpha out of (1, min(normalized gains))")
    return "2000 links inside (1, min(a, b))"


def _check_waterfill_grid() -> str:
    rng = np.random.default_rng(13)
    worst_p = 0.0
    for _ in range(200):
        omega = rng.uniform(0.1, 1.0)
        eta = 10.0 ** rng.uniform(-1, 2)
        lam = rng.uniform(0.5, 2.0)
        vu = VirtualUser(0, Mode.DT, omega, eta)
        from .scheduler_global import waterfill

        p_star = waterfill(vu, lam)
        grid = np.arange(0.0, omega / lam + 1e-4, 1e-4)
        surplus = omega * np.log1p(eta * grid) - lam * grid
        p_grid = grid[int(np.argmax(surplus))]
        worst_p = max(worst_p, abs(p_star - p_grid))
    if worst_p > 2e-4:
        raise AssertionError(f"waterfill deviates from grid argmax by {worst_p:.2e}")
    return f"200 instances, max |P - grid argmax| = {worst_p:.1e}"


def _check_perblock_oracle() -> str:
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(25):
        n_vu = rng.integers(1, 5)
        vus = [
            VirtualUser(i, Mode.DT, rng.uniform(0.1, 1.0), 10.0 ** rng.uniform(-1, 2))
            for i in range(n_vu)
        ]
        p_block = 10.0 ** rng.uniform(-1, 1)
        sol = solve_block(vus, p_block)
        near = solve_block_near_optimal(vus, p_block)
        taus = np.linspace(0.0, 1.0, 51)
        best = 0.0
        for a in range(n_vu):
            for b in range(a, n_vu):
                for tau in taus:
                    xs = np.linspace(0.0, 1.0, 201)
                    pa = np.where(tau > 0, xs * p_block / max(tau, 1e-12), 0.0)
                    pb = np.where(
                        tau < 1, (1 - xs) * p_block / max(1 - tau, 1e-12), 0.0
                    )
                    obj = tau * vus[a].omega * np.log1p(vus[a].eta * pa) + (
                        1 - tau
                    ) * vus[b].omega * np.log1p(vus[b].eta * pb)
                    best = max(best, float(obj.max()))
        if sol.objective < best - 1e-6:
            raise AssertionError("per-block objective below coarse oracle")
        if near.objective > sol.objective + 1e-12:
            raise AssertionError("near-optimal objective above the optimum")
        worst = max(worst, best - sol.objective)
    return f"25 instances, oracle never above optimum (max slack {worst:.1e})"


def _check_miso_exhaustive() -> str:
    rng = np.random.default_rng(19)
    for _ in range(100):
        l = int(rng.integers(1, 7))
        block = ChannelBlock(
            gamma_sd=np.array([rng.uniform(0.3, 2.0)]),
            gamma_sr=rng.uniform(0.1, 10.0, l),
            gamma_rd=rng.uniform(0.1, 10.0, (l, 1)),
            block_index=0,
        )
        link = select_miso_set(block, 0)
        gsd = float(block.gamma_sd[0])
        best = None
        for mask in range(1, 2**l):
            members = [j for j in range(l) if mask >> j & 1]
            if any(block.gamma_sr[j] <= gsd for j in members):
                continue
            sr_eff = float(min(block.gamma_sr[j] for j in members))
            rd_eff = gsd + float(sum(block.gamma_rd[j, 0] for j in members))
            alpha = alpha_gain(gsd, sr_eff, rd_eff)
            if best is None or alpha > best:
                best = alpha
        if (link is None) != (best is None):
            raise AssertionError("greedy and exhaustive disagree on feasibility")
        if link is not None and abs(link.alpha - best) > 1e-12 * best:
            raise AssertionError("greedy alpha differs from exhaustive maximum")
    return "100 blocks, greedy set matches exhaustive search"


def _fig_like_config(blocks=2000) -> ExperimentConfig:
    table = FadingTable(
        sd=(FadingSpec(Family.RAYLEIGH, 1.0),),
        sr=(FadingSpec(Family.RICIAN, 5.0, 10.0),),
        rd=((FadingSpec(Family.RICIAN, 3.0, 5.0),),),
    )
    return ExperimentConfig(
        table=table,
        mu=(1.0,),
        snr_grid=(0.0, 10.0, 20.0),
        policy=Policy.GLOBAL_WATERFILL,
        blocks=blocks,
        seed=321,
        cal_blocks=2000,
    )


def _check_determinism() -> str:
    config = _fig_like_config()
    r1 = sweep_snr(config, threads=1)
    r2 = sweep_snr(config, threads=4)
    for a, b in zip(r1.points, r2.points):
        if a.rates != b.rates or a.avg_power != b.avg_power:
            raise AssertionError("results depend on worker count")
    return "1 vs 4 workers bit-identical"


def _check_budget() -> str:
    config = _fig_like_config()
    result = sweep_snr(config)
    for pt in result.points:
        target = 10.0 ** (pt.snr_db / 10.0)
        if pt.avg_power > 1.02 * target:
            raise AssertionError(f"average power {pt.avg_power} above 1.02 * target")
        if abs(pt.frac_df + pt.frac_dt + pt.frac_none - 1.0) > 1e-12:
            raise AssertionError("mode fractions do not sum to 1")
    return "power within budget, mode fractions sum to 1"


_CHECKS = (
    ("df-equal-term-split", _check_equal_term_split),
    ("df-alpha-bounds", _check_alpha_bounds),
    ("waterfill-grid-argmax", _check_waterfill_grid),
    ("perblock-envelope-oracle", _check_perblock_oracle),
    ("miso-greedy-exhaustive", _check_miso_exhaustive),
    ("worker-determinism", _check_determinism),
    ("budget-feasibility", _check_budget),
)


def run_selftest() -> bool:
    ok = True
    for name, fn in _CHECKS:
        try:
            detail = fn()
            print(f"[pass] {name}: {detail}")
        except AssertionError as exc:
            ok = False
            print(f"[FAIL] {name}: {exc}")
    print("selftest:", "all checks passed" if ok else "FAILURES above")
    return ok
