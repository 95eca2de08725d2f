"""Command-line entry point: ``acil <command> [--config PATH] [--seed N] ...``.

Stages chain through files in ``--out``: ``expert-gen`` writes
``expert.jsonl``, ``align`` reads it and writes ``surrogate.jsonl`` plus
``align_metrics.csv``, ``train-bc`` writes ``policy.json``, ``eval`` writes
``eval.csv``. ``compare`` runs the whole pipeline and the two baselines and
writes ``compare.csv``. Input locations can be overridden with ``paths.*``
config keys.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from threadpoolctl import threadpool_limits

from .alignment import dtwil_generate, write_metrics
from .config import ConfigError, RunConfig, derive_seed, load_config
from .constraints import ConstraintError
from .data import dump_trajectories_csv, read_dataset, write_dataset
from .envs import generate_expert_dataset
from .imitation import PolicyNet, ReplayController, evaluate_policy, train_bc, write_report_csv

log = logging.getLogger("acil")

COMMANDS = ["expert-gen", "align", "train-bc", "eval", "compare", "dump-traj"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acil", description="Action-constrained imitation via surrogate demos.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="key = value config file")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1)")
        p.add_argument("--out", type=Path, default=Path("runs/default"), help="output directory")
        if name == "eval":
            p.add_argument("--normalized", action="store_true", help="report min-max normalised d_DTW")
        if name == "train-bc":
            p.add_argument("--data", choices=["surrogate", "expert"], default="surrogate",
                           help="which dataset to clone")
        if name == "dump-traj":
            p.add_argument("--input", type=Path, help="dataset to dump (default: surrogate, else expert)")
    return parser


def _input(cfg_path: str, out: Path, default: str) -> Path:
    p = Path(cfg_path) if cfg_path else out / default
    if not p.is_file():
        raise FileNotFoundError(f"input file not found: {p}")
    return p


def cmd_expert_gen(cfg: RunConfig, args):
    env = cfg.make_env()
    ds = generate_expert_dataset(env, cfg.expert.n, cfg.expert.max_steps, derive_seed(cfg.seed, "expert"),
                                 cfg.gains())
    path = args.out / "expert.jsonl"
    write_dataset(path, ds)
    print(f"wrote {len(ds)} expert trajectories to {path}")


def _align(cfg: RunConfig, out: Path, expert_ds):
    env = cfg.make_env()
    spec = cfg.constraint_spec()
    acfg = cfg.alignment_config(seed=derive_seed(cfg.seed, "align"))
    sur, records, model = dtwil_generate(expert_ds, env, spec, acfg)
    meta = dict(expert_ds.meta, constraint=spec.to_text(), seed=cfg.seed)
    sur.write(out / "surrogate.jsonl", meta)
    write_metrics(out / "align_metrics.csv", records)
    model.save(out / "dynamics.json")
    return sur.to_dataset(meta), records


def cmd_align(cfg: RunConfig, args):
    expert_ds = read_dataset(_input(cfg.paths.expert, args.out, "expert.jsonl"))
    sur_ds, records = _align(cfg, args.out, expert_ds)
    print(f"wrote {len(sur_ds)} surrogate trajectories ({len(records)} episodes) to {args.out}")


def cmd_train_bc(cfg: RunConfig, args):
    if args.data == "expert":
        src = _input(cfg.paths.expert, args.out, "expert.jsonl")
    else:
        src = _input(cfg.paths.surrogate, args.out, "surrogate.jsonl")
    ds = read_dataset(src)
    history = []
    policy = train_bc(ds, cfg.bc, derive_seed(cfg.seed, "bc"), history)
    path = args.out / "policy.json"
    policy.save(path)
    print(f"trained on {ds.n_transitions()} transitions from {src} (loss {history[0]:.4g} -> {history[-1]:.4g}); "
          f"wrote {path}")


def cmd_eval(cfg: RunConfig, args):
    expert_ds = read_dataset(_input(cfg.paths.expert, args.out, "expert.jsonl"))
    policy = PolicyNet.load(_input(cfg.paths.policy, args.out, "policy.json"))
    env = cfg.make_env()
    rep = evaluate_policy(policy, env, cfg.constraint_spec(), expert_ds, cfg.eval.episodes, cfg.seeds,
                          normalized=args.normalized, max_steps=cfg.eval.max_steps)
    write_report_csv(args.out / "eval.csv", [("policy", rep)])
    print(rep.summary())


def cmd_compare(cfg: RunConfig, args):
    env = cfg.make_env()
    spec = cfg.constraint_spec()
    t0 = time.perf_counter()
    expert_ds = generate_expert_dataset(env, cfg.expert.n, cfg.expert.max_steps, derive_seed(cfg.seed, "expert"),
                                        cfg.gains())
    write_dataset(args.out / "expert.jsonl", expert_ds)
    sur_ds, _ = _align(cfg, args.out, expert_ds)
    log.info("alignment finished after %.1fs", time.perf_counter() - t0)

    def ev(pol):
        return evaluate_policy(pol, env, spec, expert_ds, cfg.eval.episodes, cfg.seeds,
                               max_steps=cfg.eval.max_steps)

    rows = [("projected-replay", ev(ReplayController(expert_ds)))]
    raw = {s: train_bc(expert_ds, cfg.bc, derive_seed(s, "bc")) for s in cfg.seeds}
    rows.append(("bc-raw-expert", ev(raw)))
    dtwil = {s: train_bc(sur_ds, cfg.bc, derive_seed(s, "bc")) for s in cfg.seeds}
    rows.append(("dtwil", ev(dtwil)))
    write_report_csv(args.out / "compare.csv", rows)
    for method, rep in rows:
        print(rep.summary(method))
    print(f"total {time.perf_counter() - t0:.1f}s; wrote {args.out / 'compare.csv'}")
    return rows


def cmd_dump_traj(cfg: RunConfig, args):
    if args.input is not None:
        src = args.input
        if not src.is_file():
            raise FileNotFoundError(f"input file not found: {src}")
    elif cfg.paths.surrogate or (args.out / "surrogate.jsonl").is_file():
        src = _input(cfg.paths.surrogate, args.out, "surrogate.jsonl")
    else:
        src = _input(cfg.paths.expert, args.out, "expert.jsonl")
    ds = read_dataset(src)
    files = dump_trajectories_csv(ds, args.out / "traj", Path(src).stem)
    print(f"wrote {len(files)} trajectory CSVs to {args.out / 'traj'}")


HANDLERS = {
    "expert-gen": cmd_expert_gen,
    "align": cmd_align,
    "train-bc": cmd_train_bc,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "dump-traj": cmd_dump_traj,
}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("ACIL_LOG", "WARNING").upper(),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config is not None else RunConfig().validate()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads < 1:
            raise ConfigError("--threads: must be >= 1")
    except (ConfigError, ConstraintError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    args.out.mkdir(parents=True, exist_ok=True)
    try:
        with threadpool_limits(limits=args.threads):
            HANDLERS[args.command](cfg, args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
