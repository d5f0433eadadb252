"""Command-line front end: parse configs, run experiments, write CSV outputs.

Config files are TOML with [system], [weights], [grid], optional
[calibration] and [[links.sd]] / [[links.sr]] / [[links.rd]] tables (1-based
user/relay indices). Every run writes deterministic CSVs (12 significant
digits, byte-identical for a fixed config and seed) plus run_manifest.json
listing each output with row count and SHA-256 checksum.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .errors import CalibrationError, ConfigurationError
from .experiments import (
    ExperimentConfig,
    Policy,
    compare_policies,
    default_mu_grid,
    mode_fractions,
    rate_region,
    snr_db_to_power,
    sweep_snr,
)
from .fading import FadingSpec, FadingTable, Family
from .scheduler_global import calibrate_price

_TOP_KEYS = {"system", "weights", "grid", "calibration", "links"}
_SYSTEM_KEYS = {"users", "relays", "seed", "blocks", "policy", "miso"}
_LINK_KEYS = {"sd": {"user"}, "sr": {"relay"}, "rd": {"relay", "user"}}
_SPEC_KEYS = {"family", "mean_gain", "k_factor"}


def _reject_unknown(mapping: dict, allowed: set, where: str) -> None:
    for key in mapping:
        if key not in allowed:
            raise ConfigurationError(f"unknown key {where}.{key}")


def _parse_spec(item: dict, where: str) -> FadingSpec:
    family_raw = item.get("family")
    if family_raw is None:
        raise ConfigurationError(f"{where}.family is required")
    try:
        family = Family(str(family_raw).lower())
    except ValueError:
        raise ConfigurationError(
            f"{where}.family must be 'rayleigh' or 'rician', got {family_raw!r}"
        ) from None
    if "mean_gain" not in item:
        raise ConfigurationError(f"{where}.mean_gain is required")
    return FadingSpec(
        family=family,
        mean_gain=float(item["mean_gain"]),
        k_factor=float(item.get("k_factor", 0.0)),
    )


def _parse_links(raw: dict, users: int, relays: int) -> FadingTable:
    _reject_unknown(raw, set(_LINK_KEYS), "links")
    sd: list = [None] * users
    sr: list = [None] * relays
    rd: list = [[None] * users for _ in range(relays)]
    for kind, index_keys in _LINK_KEYS.items():
        for t, item in enumerate(raw.get(kind, ())):
            where = f"links.{kind}[{t}]"
            _reject_unknown(item, index_keys | _SPEC_KEYS, where)
            spec = _parse_spec(item, where)
            if kind == "sd":
                i = int(item.get("user", 0)) - 1
                if not 0 <= i < users:
                    raise ConfigurationError(f"{where}.user out of range 1..{users}")
                if sd[i] is not None:
                    raise ConfigurationError(f"duplicate spec for links.sd user {i + 1}")
                sd[i] = spec
            elif kind == "sr":
                j = int(item.get("relay", 0)) - 1
                if not 0 <= j < relays:
                    raise ConfigurationError(f"{where}.relay out of range 1..{relays}")
                if sr[j] is not None:
                    raise ConfigurationError(f"duplicate spec for links.sr relay {j + 1}")
                sr[j] = spec
            else:
                j = int(item.get("relay", 0)) - 1
                i = int(item.get("user", 0)) - 1
                if not 0 <= j < relays:
                    raise ConfigurationError(f"{where}.relay out of range 1..{relays}")
                if not 0 <= i < users:
                    raise ConfigurationError(f"{where}.user out of range 1..{users}")
                if rd[j][i] is not None:
                    raise ConfigurationError(
                        f"duplicate spec for links.rd relay {j + 1} user {i + 1}"
                    )
                rd[j][i] = spec
    for i, spec in enumerate(sd):
        if spec is None:
            raise ConfigurationError(f"missing link spec links.sd for user {i + 1}")
    for j, spec in enumerate(sr):
        if spec is None:
            raise ConfigurationError(f"missing link spec links.sr for relay {j + 1}")
    for j in range(relays):
        for i in range(users):
            if rd[j][i] is None:
                raise ConfigurationError(
                    f"missing link spec links.rd for relay {j + 1} user {i + 1}"
                )
    return FadingTable(
        sd=tuple(sd), sr=tuple(sr), rd=tuple(tuple(row) for row in rd)
    )


def parse_config(path: str | Path) -> ExperimentConfig:
    """Read and validate a TOML experiment config; defaults applied."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"malformed config {path}: {exc}") from None

    _reject_unknown(raw, _TOP_KEYS, str(path.name))
    system = raw.get("system", {})
    _reject_unknown(system, _SYSTEM_KEYS, "system")
    users = int(system.get("users", 1))
    relays = int(system.get("relays", 0))
    if users < 1:
        raise ConfigurationError(f"system.users must be >= 1, got {users}")
    if relays < 0:
        raise ConfigurationError(f"system.relays must be >= 0, got {relays}")

    weights = raw.get("weights", {})
    _reject_unknown(weights, {"mu"}, "weights")
    mu = weights.get("mu", [1.0] if users == 1 else None)
    if mu is None:
        raise ConfigurationError("weights.mu is required for multi-user configs")

    grid = raw.get("grid", {})
    _reject_unknown(grid, {"snr_db"}, "grid")
    snr = grid.get("snr_db")
    if not snr:
        raise ConfigurationError("grid.snr_db must be a nonempty list")

    cal = raw.get("calibration", {})
    _reject_unknown(cal, {"blocks", "tolerance"}, "calibration")

    policy_raw = system.get("policy", Policy.GLOBAL_WATERFILL.value)
    try:
        policy = Policy(policy_raw)
    except ValueError:
        names = ", ".join(p.value for p in Policy)
        raise ConfigurationError(
            f"system.policy must be one of {names}, got {policy_raw!r}"
        ) from None

    table = _parse_links(raw.get("links", {}), users, relays)
    try:
        return ExperimentConfig(
            table=table,
            mu=tuple(float(x) for x in mu),
            snr_grid=tuple(float(s) for s in snr),
            policy=policy,
            miso_enabled=bool(system.get("miso", False)),
            blocks=int(system.get("blocks", 100_000)),
            seed=int(system.get("seed", 0)),
            cal_blocks=int(cal.get("blocks", 100_000)),
            cal_tolerance=float(cal.get("tolerance", 0.002)),
        )
    except ConfigurationError as exc:
        raise ConfigurationError(f"{path.name}: {exc}") from None


# ---------------------------------------------------------------------------
# output writing
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> int:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return len(rows)


def _sweep_rows(results: list) -> tuple[list[str], list[list]]:
    n_users = len(results[0].rates)
    header = (
        ["snr_db", "policy"]
        + [f"rate_bps_hz_user{i + 1}" for i in range(n_users)]
        + ["power_avg", "frac_df", "frac_dt", "frac_none"]
    )
    rows = [
        [pt.snr_db, pt.policy.value]
        + list(pt.rates)
        + [pt.avg_power, pt.frac_df, pt.frac_dt, pt.frac_none]
        for pt in results
    ]
    return header, rows


def _write_manifest(
    out_dir: Path, command: str, config: ExperimentConfig, files: list[Path], t0: float
) -> Path:
    outputs = []
    for f in files:
        data = f.read_bytes()
        digest = hashlib.sha256(data).hexdigest()
        rows = max(data.decode().count("\n") - 1, 0)  # minus header line
        outputs.append({"path": f.name, "rows": rows, "sha256": digest})
    manifest = {
        "command": command,
        "version": __version__,
        "seed": config.seed,
        "config": config.echo(),
        "outputs": outputs,
        "runtime_s": round(time.perf_counter() - t0, 3),
    }
    path = out_dir / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for entry, f in zip(outputs, files):
        if hashlib.sha256(f.read_bytes()).hexdigest() != entry["sha256"]:
            raise RuntimeError(f"manifest checksum mismatch for {f}")
    return path


def _load_config(args) -> ExperimentConfig:
    config = parse_config(args.config)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.blocks is not None:
        updates["blocks"] = args.blocks
    if args.policy is not None:
        updates["policy"] = Policy(args.policy)
    if args.miso:
        updates["miso_enabled"] = True
    return dataclasses.replace(config, **updates) if updates else config


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_sweep_snr(args) -> int:
    t0 = time.perf_counter()
    config = _load_config(args)
    result = sweep_snr(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header, rows = _sweep_rows(list(result.points))
    n = _write_csv(out / "sweep.csv", header, rows)
    _write_manifest(out, "sweep-snr", config, [out / "sweep.csv"], t0)
    print(f"wrote {out / 'sweep.csv'} ({n} rows)")
    return 0


def _cmd_mode_stats(args) -> int:
    t0 = time.perf_counter()
    config = _load_config(args)
    result = mode_fractions(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["snr_db", "policy", "frac_df", "frac_dt", "frac_none"]
    rows = [
        [pt.snr_db, pt.policy.value, pt.frac_df, pt.frac_dt, pt.frac_none]
        for pt in result.points
    ]
    n = _write_csv(out / "modes.csv", header, rows)
    _write_manifest(out, "mode-stats", config, [out / "modes.csv"], t0)
    print(f"wrote {out / 'modes.csv'} ({n} rows)")
    return 0


def _cmd_rate_region(args) -> int:
    t0 = time.perf_counter()
    config = _load_config(args)
    grid = default_mu_grid(args.mu_points) if config.users == 2 else None
    points = rate_region(config, mu_grid=grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["mu1", "rate1_bps_hz", "rate2_bps_hz", "policy"]
    rows = [
        [rp.mu[0], rp.rates[0], rp.rates[1], rp.policy.value] for rp in points
    ]
    n = _write_csv(out / "region.csv", header, rows)
    _write_manifest(out, "rate-region", config, [out / "region.csv"], t0)
    print(f"wrote {out / 'region.csv'} ({n} rows)")
    return 0


def _cmd_compare_policies(args) -> int:
    t0 = time.perf_counter()
    config = _load_config(args)
    results = compare_policies(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    points = [pt for res in results.values() for pt in res.points]
    header, rows = _sweep_rows(points)
    n = _write_csv(out / "compare.csv", header, rows)
    _write_manifest(out, "compare-policies", config, [out / "compare.csv"], t0)
    print(f"wrote {out / 'compare.csv'} ({n} rows)")
    return 0


def _cmd_calibrate(args) -> int:
    t0 = time.perf_counter()
    config = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for snr_db in config.snr_grid:
        target = snr_db_to_power(snr_db)
        price = calibrate_price(config, target)
        rows.append([snr_db, target, price.lambda_g, price.achieved_avg_power])
    header = ["snr_db", "target_power", "lambda_g", "achieved_power"]
    n = _write_csv(out / "calibration.csv", header, rows)
    _write_manifest(out, "calibrate", config, [out / "calibration.csv"], t0)
    print(f"wrote {out / 'calibration.csv'} ({n} rows)")
    return 0


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return 0 if run_selftest() else 1


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="path to TOML config")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override seed")
    parser.add_argument("--blocks", type=int, default=None, help="override block count")
    parser.add_argument(
        "--policy",
        default=None,
        choices=[p.value for p in Policy],
        help="override policy",
    )
    parser.add_argument("--miso", action="store_true", help="enable coherent multi-relay mode")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relay-alloc",
        description="Resource allocation simulator for relay-assisted broadcast channels",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, helptext in (
        ("sweep-snr", _cmd_sweep_snr, "average rates over the SNR grid"),
        ("mode-stats", _cmd_mode_stats, "transmission-mode fractions over the SNR grid"),
        ("rate-region", _cmd_rate_region, "two-user achievable-rate region boundary"),
        ("compare-policies", _cmd_compare_policies, "common-random-number policy duel"),
        ("calibrate", _cmd_calibrate, "power-price calibration per SNR point"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        if name == "rate-region":
            p.add_argument(
                "--mu-points", type=int, default=41, help="weight grid size (two-user)"
            )
        p.set_defaults(fn=fn)
    p = sub.add_parser("selftest", help="run the built-in invariant checks")
    p.set_defaults(fn=_cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigurationError, CalibrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
