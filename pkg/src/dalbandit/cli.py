"""Command-line entry point: ``dalbandit {synth,replay,detect-demo,cover}``.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .detect import GlrConfig, GlrFamily, ObservationBuffer, glr_scan
from .harness import build_cover, build_env, emit_csv, run_experiment, trial_streams

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _overrides(args) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in args.set or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = val.strip()
    for flag, key in (("seed", "run.base_seed"), ("trials", "run.n_trials"), ("parallelism", "run.parallelism"), ("thin", "run.thin")):
        val = getattr(args, flag, None)
        if val is not None:
            out[key] = str(val)
    return out


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--seed", type=int, help="base seed (overrides run.base_seed)")
    p.add_argument("--trials", type=int, help="number of trials (overrides run.n_trials)")
    p.add_argument("--parallelism", type=int, help="concurrent trials (overrides run.parallelism)")
    p.add_argument("--thin", type=int, help="emit every N-th round")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dalbandit", description="Detection augmented learning for non-stationary bandits.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="run a synthetic experiment from a config file")
    p.add_argument("--config", required=True)
    _add_run_flags(p)

    p = sub.add_parser("replay", help="run on a replay file (matrix or logged CSV)")
    p.add_argument("--file", required=True, help="replay CSV")
    p.add_argument("--config", help="config for policy and detector settings")
    p.add_argument("--noise", choices=("gaussian", "bernoulli"), help="reward noise for matrix files")
    _add_run_flags(p)

    p = sub.add_parser("detect-demo", help="feed a CSV reward column through the GLR test")
    p.add_argument("file")
    p.add_argument("--column", default="0", help="column name or 0-based index")
    p.add_argument("--family", choices=("bernoulli", "gaussian"), default="bernoulli")
    p.add_argument("--sigma2", type=float, default=0.25)
    p.add_argument("--delta-F", dest="delta_F", type=float, default=0.01)
    p.add_argument("--batch", action="store_true", help="scan the whole column once instead of sequentially")

    p = sub.add_parser("cover", help="print the covering set chosen for a config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="trial seed (default run.base_seed)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    return parser


def _cmd_synth(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    result = run_experiment(cfg)
    emit_csv(result, args.out, cfg.run.thin)
    print(f"wrote {args.out}: {len(result.t)} rounds, {result.n_trials} trials, final mean regret {result.mean_regret[-1]:.6g}")
    return EXIT_OK


def _cmd_replay(args) -> int:
    overrides = {"env.variant": "replay", "env.replay_path": args.file}
    if args.noise:
        overrides["env.replay_noise"] = args.noise
    overrides.update(_overrides(args))
    cfg = load_config(args.config, overrides) if args.config else parse_config("", overrides)
    if not Path(args.file).is_file():
        raise ConfigError(f"replay file not found: {args.file}")
    result = run_experiment(cfg)
    emit_csv(result, args.out, cfg.run.thin)
    total = result.mean_reward[-1] if len(result.mean_reward) else 0.0
    print(f"wrote {args.out}: {len(result.t)} credited rounds, mean cumulative reward {total:.6g}")
    return EXIT_OK


def _read_column(path: str, column: str) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"{path} is empty")
    idx = int(column) if column.isdigit() else None
    start = 0
    try:
        float(rows[0][idx if idx is not None else 0])
    except (ValueError, IndexError):
        start = 1
        if idx is None:
            if column not in rows[0]:
                raise ConfigError(f"column {column!r} not in header of {path}") from None
            idx = rows[0].index(column)
    if idx is None:
        raise ConfigError(f"{path} has no header to look up column {column!r}")
    try:
        return np.array([float(r[idx]) for r in rows[start:]])
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: bad value in column {column}: {exc}") from None


def _cmd_detect_demo(args) -> int:
    family = GlrFamily.bernoulli() if args.family == "bernoulli" else GlrFamily.gaussian(args.sigma2)
    try:
        config = GlrConfig(family, args.delta_F)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not Path(args.file).is_file():
        raise ConfigError(f"reward file not found: {args.file}")
    values = _read_column(args.file, args.column)
    buf = ObservationBuffer(bounded=args.family == "bernoulli")
    if args.batch:
        buf.extend(values)
        res = glr_scan(buf, config)
    else:
        res = None
        for x in values:
            buf.append(x)
            res = glr_scan(buf, config)
            if res.detected:
                break
    if res is None or not res.detected:
        print("none")
    else:
        print(f"detected at n={res.n} split s={res.split_index} statistic={res.statistic:.6g}")
    return EXIT_OK


def _cmd_cover(args) -> int:
    overrides = {}
    for item in args.set or []:
        key, _, val = item.partition("=")
        overrides[key.strip()] = val.strip()
    cfg: ExperimentConfig = load_config(args.config, overrides)
    seed = cfg.run.base_seed if args.seed is None else args.seed
    env_rng, _ = trial_streams(seed)
    env = build_env(cfg, env_rng)
    cover = build_cover(cfg, env, cfg.run.T)
    print(f"covering set: {cover.size} of {env.n_actions} actions")
    np.set_printoptions(precision=6, suppress=True, linewidth=200)
    for i in cover.indices:
        row = env.actions[i] if hasattr(env, "actions") else None
        print(f"{i}" if row is None else f"{i}\t{row}")
    return EXIT_OK


_COMMANDS = {"synth": _cmd_synth, "replay": _cmd_replay, "detect-demo": _cmd_detect_demo, "cover": _cmd_cover}


def cli_main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 2
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(cli_main())
