"""``rtrrl`` command line: train, eval, verify, sweep.

Every :class:`~rtrrl.config.TrainConfig` field is a dotted flag
(``--alg.mode rflo``, ``--train.max_steps 1e6``); environment parameters are
free-form ``--env.<name> value``. Values resolve as flag > ``RTRRL_*``
environment variable > ``--config`` YAML file > default.

Exit status: 0 success, 1 failed check / evaluation error, 2 usage or
configuration error, 3 numeric fault during training.
"""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .agent import Agent, evaluate, substream, train
from .config import TrainConfig, dotted_fields, load_config
from .envs import make_env, parse_env_name
from .errors import ConfigError, NumericFault, SnapshotError
from .metrics import MetricSink
from .snapshot import load_snapshot, save_snapshot

log = logging.getLogger("rtrrl")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML config file")
    g = p.add_argument_group("configuration (dotted paths)")
    for path in sorted(dotted_fields()):
        g.add_argument(f"--{path}", dest=f"cfg:{path}", metavar="V", default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rtrrl", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one agent")
    _add_config_flags(p)
    p.add_argument("--out", help="output directory (default runs/<env>-s<seed>)")
    p.add_argument("--wall-time", action="store_true",
                   help="record wall-clock time in metrics (makes logs non-reproducible)")

    p = sub.add_parser("eval", help="evaluate a snapshot")
    p.add_argument("snapshot")
    p.add_argument("--eval-steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="evaluation seed (default: the run seed)")

    p = sub.add_parser("verify", help="run the gradient and convergence checks")
    p.add_argument("--quick", action="store_true", help="small instances only")
    p.add_argument("--inject", default=None, help="perturb one engine output (negative control)")
    p.add_argument("--only", nargs="*", default=None, help="subset of check groups")

    p = sub.add_parser("sweep", help="train several seeds and summarise")
    _add_config_flags(p)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None, help="output directory (default runs/sweep-<env>)")
    return parser


def _overrides(ns: argparse.Namespace, extra: list, parser) -> dict:
    out = {k[4:]: v for k, v in vars(ns).items() if k.startswith("cfg:")}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--env."):
            parser.error(f"unrecognized argument {tok}")
        if "=" in tok:
            key, value = tok[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                parser.error(f"missing value for {tok}")
            key, value = tok[2:], extra[i + 1]
            i += 2
        out[key] = value
    return out


def resolve_config(ns, extra, parser) -> TrainConfig:
    cfg = load_config(ns.config, _overrides(ns, extra, parser))
    name, params = parse_env_name(cfg.env)
    if params:
        cfg = cfg.replace(env=name, env_params={**params, **cfg.env_params})
    # fail early on unknown environments or parameters
    make_env(cfg.env, np.random.default_rng(0), **cfg.env_params)
    cfg.validate()
    return cfg


def run_header(cfg: TrainConfig) -> dict:
    return {"run_id": f"{cfg.env}-s{cfg.seed}", "config": cfg.to_dict(), "format": 1}


def train_to_dir(cfg: TrainConfig, out: Path, wall_time=False) -> dict:
    """Train, writing metrics and snapshots into ``out``; returns a summary."""
    out.mkdir(parents=True, exist_ok=True)
    with MetricSink(out / "metrics.jsonl", out / "metrics.csv", header=run_header(cfg)) as sink:
        result = train(cfg, sink=sink, record_wall_time=wall_time)
    meta = {"config": cfg.to_dict(), "steps": result.steps}
    save_snapshot(out / "final.snap", result.agent.state_dict(), meta)
    save_snapshot(out / "best.snap", result.best_state, {**meta, "best_eval": result.best_eval})
    return {"seed": cfg.seed, "best_eval": result.best_eval, "steps": result.steps,
            "episodes": result.episodes, "stop_reason": result.stop_reason}


def cmd_train(ns, extra, parser) -> int:
    cfg = resolve_config(ns, extra, parser)
    out = Path(ns.out or f"runs/{cfg.env}-s{cfg.seed}")
    summary = train_to_dir(cfg, out, ns.wall_time)
    print(f"best eval reward: {summary['best_eval']:.6g} "
          f"(steps {summary['steps']}, stop: {summary['stop_reason']}, out: {out})")
    return EXIT_OK


def _agent_from_snapshot(path):
    tensors, meta = load_snapshot(path)
    if "config" not in meta:
        raise SnapshotError(f"{path}: snapshot carries no config")
    raw = dict(meta["config"])
    try:
        cfg = TrainConfig(**raw)
    except TypeError as exc:
        raise SnapshotError(f"{path}: unreadable config ({exc})") from None
    env = make_env(cfg.env, substream(cfg.seed, "env"), **cfg.env_params)
    agent = Agent(cfg, env.spec)
    agent.load_state_dict(tensors)
    return agent, cfg


def cmd_eval(ns, extra, parser) -> int:
    if extra:
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    agent, cfg = _agent_from_snapshot(ns.snapshot)
    seed = cfg.seed if ns.seed is None else ns.seed
    env = make_env(cfg.env, substream(seed, "eval", 0), **cfg.env_params)
    probe = make_env(cfg.env, substream(seed, "eval", 0), **cfg.env_params)
    agent.begin_episode(probe.reset())
    dist = agent.policy()
    if dist.kind == "categorical":
        desc = "[" + ", ".join(f"{p:.4f}" for p in dist.probs) + "]"
    else:
        desc = f"mean={np.round(dist.mean, 4).tolist()} std={np.round(dist.std, 4).tolist()}"
    print(f"initial action distribution: {desc}")
    score = evaluate(agent, env, ns.eval_steps or cfg.eval_steps)
    print(f"mean eval reward: {score:.6g}")
    return EXIT_OK


def cmd_verify(ns, extra, parser) -> int:
    from .verify import injectable_names, run_checks

    if extra:
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    if ns.inject and ns.inject not in injectable_names():
        parser.error(f"--inject must be one of {', '.join(injectable_names())}")
    results = run_checks(quick=ns.quick, inject=ns.inject, only=ns.only)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} properties passed"
          + (f"; failing: {', '.join(failed)}" if failed else ""))
    return EXIT_FAIL if failed else EXIT_OK


def _sweep_one(args):
    cfg, out = args
    return train_to_dir(cfg, out)


def cmd_sweep(ns, extra, parser) -> int:
    base = resolve_config(ns, extra, parser)
    root = Path(ns.out or f"runs/sweep-{base.env}")
    jobs = [(base.replace(seed=s), root / f"seed{s}") for s in ns.seeds]
    if ns.jobs > 1:
        with ProcessPoolExecutor(max_workers=ns.jobs) as pool:
            summaries = list(pool.map(_sweep_one, jobs))
    else:
        summaries = [_sweep_one(j) for j in jobs]
    for s in summaries:
        print(f"seed {s['seed']}: best eval {s['best_eval']:.6g} steps {s['steps']} ({s['stop_reason']})")
    med = statistics.median(s["best_eval"] for s in summaries)
    print(f"median best eval over {len(summaries)} seeds: {med:.6g}")
    (root / "summary.json").write_text(json.dumps({"median_best_eval": med, "runs": summaries}, indent=2))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "verify": cmd_verify, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    ns, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[ns.command](ns, extra, parser)
    except ConfigError as exc:
        print(f"rtrrl: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericFault as exc:
        print(f"rtrrl: numeric fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SnapshotError as exc:
        print(f"rtrrl: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
