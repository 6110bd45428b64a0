"""Command-line interface.

Exit codes: 0 success, 1 verification or runtime failure, 2 input/config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import secrets
import sys
from pathlib import Path

import numpy as np

from . import kernels, verify
from .errors import ConfigError, EmolabError, InvalidInputError
from .harness import (
    ExperimentConfig,
    build_world,
    derive_seed,
    evaluate,
    loss_config_for,
    run_oracle_experiment,
)
from .lm import ToyLM, load_checkpoint, save_checkpoint, train
from .losses import Objective
from .numerics import as_distribution
from .records import atomic_write
from .transport import CostMatrix, cost_matrix_from_embeddings, exact_emd

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2
DEFAULT_OUT = "emolab-out"

log = logging.getLogger("emolab")


class InputError(Exception):
    """Bad files or arguments; maps to exit code 2."""


def read_rows(path) -> list[list[float]]:
    """Parse whitespace-separated float rows, skipping blank and '#' lines."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from None
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0]
        if not body.strip():
            continue
        row = []
        col = 0
        for tok in body.split():
            col = body.index(tok, col)
            try:
                row.append(float(tok))
            except ValueError:
                raise InputError(f"{path}: line {lineno}, column {col + 1}: cannot parse {tok!r} as a number") from None
            col += len(tok)
        rows.append(row)
    if not rows:
        raise InputError(f"{path}: no data rows")
    return rows


def read_distribution(path) -> np.ndarray:
    values = [v for row in read_rows(path) for v in row]
    try:
        return as_distribution(values, name=str(path))
    except InvalidInputError as exc:
        raise InputError(str(exc)) from None


def read_matrix(path) -> np.ndarray:
    rows = read_rows(path)
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise InputError(f"{path}: row {i + 1} has {len(r)} values, expected {width}")
    return np.array(rows)


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get("EMOLAB_OUT") or DEFAULT_OUT)


def _prepare_out(out: Path, outputs, force: bool):
    existing = [name for name in outputs if (out / name).exists()]
    if existing and not force:
        raise InputError(f"{out}: {', '.join(existing)} already exist; pass --force to overwrite")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc.strerror}") from None
    if not os.access(out, os.W_OK):
        raise InputError(f"output directory {out} is not writable")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    return cfg


def _parse_seeds(text):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise InputError(f"--seeds must be a comma-separated list of integers, got {text!r}") from None


# -- subcommands ------------------------------------------------------------

def cmd_verify(args) -> int:
    seed = args.seed if args.seed is not None else secrets.randbelow(2**31)
    print(f"verify scope={args.scope} seed={seed} backend={kernels.BACKEND}")
    results = verify.run(args.scope, seed)
    failed = 0
    for r in results:
        status = "PASS" if r.failed == 0 else "FAIL"
        print(f"  [{status}] {r.name}: {r.passed} passed, {r.failed} failed")
        for f in r.failures:
            print(f"      {f}")
        failed += r.failed
    total = sum(r.passed + r.failed for r in results)
    print(f"{total - failed}/{total} checks passed (seed {seed})")
    return EXIT_OK if failed == 0 else EXIT_FAIL


def cmd_emd(args) -> int:
    p1 = read_distribution(args.p1)
    p2 = read_distribution(args.p2)
    if p1.size != p2.size:
        raise InputError(f"distribution lengths differ: {p1.size} ({args.p1}) vs {p2.size} ({args.p2})")
    if args.cost:
        C = CostMatrix(read_matrix(args.cost))
    else:
        try:
            C = cost_matrix_from_embeddings(read_matrix(args.embeddings))
        except InvalidInputError as exc:
            raise InputError(f"{args.embeddings}: {exc}") from None
    if C.size != p1.size:
        raise InputError(f"cost matrix is {C.size}x{C.size} but distributions have length {p1.size}")
    if np.any(C.entries < 0):
        raise InputError("cost matrix has negative entries")
    value, plan = exact_emd(p1, p2, C)
    print(json.dumps({"value": value, "plan": plan.mass.tolist()}))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    objective = Objective.parse(args.objective)
    if objective is Objective.DEMD:
        raise InputError("train supports mle, tailr, mixce and emo; pure demd is not a training objective here")
    if objective is Objective.EMO and not args.pretrained:
        raise InputError("--objective emo needs --pretrained CHECKPOINT: the transport cost "
                         "embedding is snapshotted from a pretrained output head")
    out = _out_dir(args)
    _prepare_out(out, ["checkpoint.json", "record.json"], args.force)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    _, corpus = build_world(cfg, seed)
    if args.pretrained:
        start = load_checkpoint(args.pretrained)
        e_hat = start.e_hat if start.e_hat is not None else start.head_snapshot()
        epochs = cfg.finetune_epochs
    else:
        start = ToyLM.create(cfg.vocab, cfg.embed_dim, cfg.context, cfg.hidden, seed=derive_seed(seed, 2))
        e_hat = None
        epochs = cfg.pretrain_epochs
    if start.vocab != cfg.vocab:
        raise InputError(f"checkpoint vocabulary {start.vocab} does not match config {cfg.vocab}")
    gamma = args.gamma
    if objective in (Objective.TAILR, Objective.MIXCE) and gamma is None:
        gamma = cfg.gamma_grid[0]
    lcfg = loss_config_for(objective, gamma, e_hat, objective.value in cfg.detach_weight)
    model, rec = train(start, corpus.train, lcfg, cfg.train_config(epochs, derive_seed(seed, 3)), corpus.valid)
    if model.e_hat is None:
        model.e_hat = model.head_snapshot()
    rec.config = {**cfg.to_dict(), **rec.config}
    rec.seeds["seed"] = seed
    rec.artifacts = {"checkpoint": "checkpoint.json", "pretrained": args.pretrained}
    save_checkpoint(model, out / "checkpoint.json")
    atomic_write(out / "record.json", rec.to_json())
    print(f"trained {objective.value} for {epochs} epochs; best epoch {rec.best_epoch}, "
          f"valid loss {rec.valid_losses[rec.best_epoch - 1]:.6f}; wrote {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    if not args.checkpoint:
        raise InputError("eval needs --checkpoint PATH")
    out = _out_dir(args)
    _prepare_out(out, ["metrics.json"], args.force)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    oracle, corpus = build_world(cfg, seed)
    model = load_checkpoint(args.checkpoint)
    if model.vocab != cfg.vocab:
        raise InputError(f"checkpoint vocabulary {model.vocab} does not match config {cfg.vocab}")
    rng = np.random.default_rng(derive_seed(seed, 5))
    report = evaluate(model, oracle, corpus.test, cfg.prefix_len, cfg.sample_reps, rng)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    atomic_write(out / "metrics.json", text + "\n")
    print(text)
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _load_config(args)
    seeds = _parse_seeds(args.seeds) if args.seeds else cfg.seeds
    if not seeds:
        raise InputError("no seeds given")
    cfg = cfg.with_overrides(seeds=seeds)
    out = _out_dir(args)
    _prepare_out(out, ["summary.csv", "medians.csv", "curves.csv"], args.force)
    res = run_oracle_experiment(cfg, seeds, out)
    print(f"{len(res.rows)} runs over seeds {seeds}; medians:")
    cols = ("ppl_test", "ppl_oracle", "rouge1_f", "rougeL_f", "fwd_ce", "rev_ce")
    print("  objective " + " ".join(f"{c:>10}" for c in cols))
    for m in res.medians:
        print(f"  {m['objective']:<9} " + " ".join(
            f"{m[c]:>10.4f}" if m[c] is not None else f"{'n/a':>10}" for c in cols))
    failed = [r for r in res.records if r.errors]
    for r in failed:
        print(f"  run {r.config['objective']} seed {r.seeds['seed']}: {'; '.join(r.errors)}")
    print(f"wrote {out / 'summary.csv'}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emolab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run randomized property suites")
    p.add_argument("--scope", choices=("all",) + verify.SCOPES, default="all")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("emd", help="exact EMD between two distribution files")
    p.add_argument("p1")
    p.add_argument("p2")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--cost", help="cost matrix file, one row per line")
    g.add_argument("--embeddings", help="token embedding file, one vector per line")
    p.set_defaults(func=cmd_emd)

    def common(p):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help=f"output directory (default $EMOLAB_OUT or {DEFAULT_OUT})")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p = sub.add_parser("train", help="train one student on oracle data")
    common(p)
    p.add_argument("--objective", required=True, choices=[o.value for o in Objective])
    p.add_argument("--pretrained", help="checkpoint to start from (required for emo)")
    p.add_argument("--gamma", type=float, help="mixing gamma for tailr/mixce")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint against the oracle")
    common(p)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="full oracle experiment over seeds and objectives")
    common(p)
    p.add_argument("--seeds", help="comma-separated seeds, e.g. 1,2,3")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, ConfigError, InvalidInputError) as exc:
        print(f"emolab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EmolabError as exc:
        print(f"emolab {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
