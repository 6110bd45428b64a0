"""Oracle-distribution experiment: a known Markov oracle generates the data,
students are trained under each objective and scored against the oracle.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import statistics
import time
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, EmolabError, InvalidInputError, ZeroProbabilityError
from .lm import (
    ToyLM,
    TrainConfig,
    Vocabulary,
    _inverse_cdf,
    perplexity,
    positions,
    sample_batch,
    train,
)
from .losses import LossConfig, Objective
from .numerics import softmax
from .records import RunRecord, atomic_write

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("ppl_test", "ppl_oracle", "rouge1_f", "rougeL_f", "fwd_ce", "rev_ce")
SUMMARY_COLUMNS = ("objective", "seed") + METRIC_COLUMNS


def derive_seed(seed: int, *stream: int) -> int:
    """Independent 32-bit seed for one named RNG stream of a run."""
    return int(np.random.SeedSequence([int(seed), *stream]).generate_state(1)[0])


# -- oracle -----------------------------------------------------------------

@dataclass
class OracleModel:
    """k-th order Markov chain over a vocabulary with a known transition table.

    ``table[c]`` is the next-token distribution for context index
    ``c = sum(tok_i * V**(k-1-i))`` over the previous ``k`` tokens. Every
    sequence starts from the all-BOS context; reserved tokens get zero mass.
    """

    vocab: Vocabulary
    order: int
    table: np.ndarray

    def __post_init__(self):
        V, k = self.vocab.size, self.order
        if self.table.shape != (V ** k, V):
            raise InvalidInputError(f"oracle table must have shape {(V ** k, V)}, got {self.table.shape}")
        if np.any(self.table < 0) or np.max(np.abs(self.table.sum(axis=1) - 1.0)) > 1e-9:
            raise InvalidInputError("every oracle row must be a probability distribution")

    @property
    def initial(self) -> np.ndarray:
        """Distribution over contexts at the first position (all mass on BOS^k)."""
        d = np.zeros(self.vocab.size ** self.order)
        d[self._index(np.full((1, self.order), self.vocab.bos))[0]] = 1.0
        return d

    def _index(self, ctx):
        V = self.vocab.size
        idx = np.zeros(ctx.shape[0], dtype=np.int64)
        for i in range(self.order):
            idx = idx * V + ctx[:, i]
        return idx

    def window(self, prefix) -> np.ndarray:
        toks = [int(t) for t in prefix][-self.order:] if self.order else []
        return np.asarray([self.vocab.bos] * (self.order - len(toks)) + toks, dtype=np.int64)

    def positions(self, sequences):
        """(contexts, targets) over every token of every sequence."""
        k = self.order
        ctxs, tgts = [], []
        for x in sequences:
            toks = np.asarray(x, dtype=np.int64)
            padded = np.concatenate([np.full(k, self.vocab.bos, dtype=np.int64), toks])
            ctxs.append(np.lib.stride_tricks.sliding_window_view(padded, k)[:-1])
            tgts.append(toks)
        return np.concatenate(ctxs), np.concatenate(tgts)

    def probs(self, contexts) -> np.ndarray:
        ctx = np.asarray(contexts, dtype=np.int64)
        if ctx.size and (ctx.min() < 0 or ctx.max() >= self.vocab.size):
            raise InvalidInputError("context token outside oracle vocabulary")
        return self.table[self._index(ctx)]

    def sample(self, num: int, length: int, rng: np.random.Generator, prefixes=None) -> np.ndarray:
        windows = (np.full((num, self.order), self.vocab.bos, dtype=np.int64) if prefixes is None
                   else np.stack([self.window(p) for p in prefixes]))
        out = np.zeros((num, length), dtype=np.int64)
        for t in range(length):
            nxt = _inverse_cdf(self.probs(windows), rng.random(num))
            out[:, t] = nxt
            windows = np.concatenate([windows[:, 1:], nxt[:, None]], axis=1)
        return out

    def sequence_log_prob(self, x) -> float:
        ctx, tgt = self.positions([x])
        with np.errstate(divide="ignore"):
            return float(np.log(self.probs(ctx)[np.arange(tgt.size), tgt]).sum())

    def _step(self, d):
        V, k = self.vocab.size, self.order
        flow = d[:, None] * self.table
        return flow.reshape(V, V ** (k - 1), V).sum(axis=0).reshape(-1)

    def context_marginals(self, length: int):
        """Exact context distributions at positions 1..length from the start state."""
        d = self.initial
        for _ in range(length):
            yield d
            d = self._step(d)

    def row_entropies(self) -> np.ndarray:
        T = self.table
        with np.errstate(divide="ignore", invalid="ignore"):
            return -np.where(T > 0, T * np.log(T), 0.0).sum(axis=1)

    def entropy_rate(self, length: Optional[int] = None) -> float:
        """Mean per-token entropy (nats) of length-``length`` samples.

        ``None`` gives the stationary entropy rate.
        """
        H = self.row_entropies()
        if length is None:
            return float(self.stationary_contexts() @ H)
        return float(np.mean([d @ H for d in self.context_marginals(length)]))

    def stationary_contexts(self, tol: float = 1e-14, max_steps: int = 100_000) -> np.ndarray:
        d = self.initial
        for _ in range(max_steps):
            nxt = self._step(d)
            if np.abs(nxt - d).sum() < tol:
                return nxt
            d = nxt
        return d

    def stationary_unigram(self) -> np.ndarray:
        return self.stationary_contexts() @ self.table

    def expected_unigram(self, length: int) -> np.ndarray:
        """Exact position-averaged token marginal of length-``length`` samples."""
        return np.mean([d @ self.table for d in self.context_marginals(length)], axis=0)


def make_oracle(vocab: Vocabulary, order: int = 2, concentration: float = 0.1, seed: int = 0) -> OracleModel:
    """Oracle whose context rows are symmetric Dirichlet draws over content tokens."""
    if not concentration > 0 or not np.isfinite(concentration):
        raise InvalidInputError(f"Dirichlet concentration must be positive, got {concentration!r}")
    if order < 1:
        raise InvalidInputError("oracle order must be at least 1")
    rng = np.random.default_rng(seed)
    content = vocab.content
    rows = rng.dirichlet(np.full(content.size, float(concentration)), size=vocab.size ** order)
    table = np.zeros((vocab.size ** order, vocab.size))
    table[:, content] = rows
    table /= table.sum(axis=1, keepdims=True)
    return OracleModel(vocab, order, table)


@dataclass
class Corpus:
    train: list
    valid: list
    test: list


def sample_corpus(oracle: OracleModel, num_sequences, length: int, seed: int) -> Corpus:
    """Ancestral samples from the oracle split into train/valid/test.

    ``num_sequences`` is a ``(train, valid, test)`` triple; the splits are
    consecutive slices of one sample batch, so they never share a sequence.
    """
    n_train, n_valid, n_test = (int(n) for n in num_sequences)
    if min(n_train, n_valid, n_test) < 1 or length < 1:
        raise InvalidInputError("corpus split sizes and length must be positive")
    rng = np.random.default_rng(seed)
    data = oracle.sample(n_train + n_valid + n_test, length, rng)
    seqs = list(data)
    return Corpus(seqs[:n_train], seqs[n_train:n_train + n_valid], seqs[n_train + n_valid:])


# -- metrics ----------------------------------------------------------------

@dataclass
class MetricReport:
    ppl_test: float
    ppl_oracle: Optional[float]
    rouge1_f: float
    rougeL_f: float
    fwd_ce: float
    rev_ce: float

    def to_dict(self) -> dict:
        return asdict(self)


def ppl_oracle(oracle: OracleModel, samples, prefixes=None) -> float:
    """Oracle perplexity of generated text.

    Each sample is scored as a continuation of the matching prefix (BOS
    context when ``prefixes`` is None). A token with zero oracle probability
    raises :class:`ZeroProbabilityError` instead of returning infinity.
    """
    if len(samples) == 0:
        raise InvalidInputError("ppl_oracle needs at least one sample")
    total, count = 0.0, 0
    for s, x in enumerate(samples):
        x = np.asarray(x, dtype=np.int64)
        if x.size and (x.min() < 0 or x.max() >= oracle.vocab.size):
            raise InvalidInputError(f"sample {s} has a token outside the oracle vocabulary")
        prefix = [] if prefixes is None else list(prefixes[s])
        full = np.concatenate([np.asarray(prefix, dtype=np.int64), x])
        ctx, tgt = oracle.positions([full])
        p = oracle.probs(ctx[len(prefix):])[np.arange(x.size), tgt[len(prefix):]]
        if np.any(p <= 0):
            pos = int(np.argmax(p <= 0))
            raise ZeroProbabilityError(s, pos, int(x[pos]))
        total += np.log(p).sum()
        count += x.size
    return float(np.exp(-total / count))


def rouge_pair(candidate, reference) -> tuple[float, float]:
    c = [int(t) for t in candidate]
    r = [int(t) for t in reference]
    if not c or not r:
        return 0.0, 0.0
    overlap = sum((Counter(c) & Counter(r)).values())
    lcs = kernels.lcs_length(np.asarray(c), np.asarray(r))
    return _f1(overlap, len(c), len(r)), _f1(lcs, len(c), len(r))


def _f1(hits, n_cand, n_ref):
    if hits == 0:
        return 0.0
    p, r = hits / n_cand, hits / n_ref
    return 2 * p * r / (p + r)


def rouge_scores(candidates, references) -> tuple[float, float]:
    """Mean ROUGE-1 and ROUGE-L F1 over aligned candidate/reference pairs."""
    if len(candidates) == 0 or len(candidates) != len(references):
        raise InvalidInputError("rouge_scores needs equally many, at least one, candidates and references")
    scores = np.array([rouge_pair(c, r) for c, r in zip(candidates, references)])
    return float(scores[:, 0].mean()), float(scores[:, 1].mean())


def position_distributions(model, sequences) -> np.ndarray:
    """Next-token distributions at every position of ``sequences``.

    ``model`` is either a :class:`ToyLM` or an :class:`OracleModel`.
    """
    if isinstance(model, OracleModel):
        ctx, _ = model.positions(sequences)
        return model.probs(ctx)
    ctx, _ = positions(model, sequences)
    return softmax(model.logits(ctx))


def _xlogy(x, y):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, x * np.log(y), 0.0)


def ce_diagnostic(student, surrogate, corpus) -> tuple[float, float]:
    """Position-averaged forward CE(P, Q) and reverse CE(Q, P).

    ``P`` comes from ``surrogate`` and ``Q`` from ``student``; either may be a
    toy LM or an oracle.
    """
    if student.vocab.size != surrogate.vocab.size:
        raise InvalidInputError(
            f"vocabulary mismatch: student {student.vocab.size} vs surrogate {surrogate.vocab.size}"
        )
    Q = position_distributions(student, corpus)
    P = position_distributions(surrogate, corpus)
    fwd = -_xlogy(P, Q).sum(axis=1).mean()
    rev = -_xlogy(Q, P).sum(axis=1).mean()
    return float(fwd), float(rev)


def evaluate(student: ToyLM, oracle: OracleModel, test, prefix_len: int, reps: int,
             rng: np.random.Generator) -> MetricReport:
    """Full metric battery for one student against the oracle.

    Each test sequence is split into a prefix and a reference continuation;
    the student continues every prefix ``reps`` times by ancestral sampling.
    """
    prefixes = [np.asarray(x[:prefix_len]) for x in test]
    refs = [np.asarray(x[prefix_len:]) for x in test]
    gen_len = min(r.size for r in refs)
    if gen_len < 1:
        raise InvalidInputError("prefix_len leaves no continuation to generate")
    cands, cand_refs, cand_prefixes = [], [], []
    for _ in range(reps):
        gen = sample_batch(student, prefixes, gen_len, rng)
        cands.extend(gen)
        cand_refs.extend(r[:gen_len] for r in refs)
        cand_prefixes.extend(prefixes)
    try:
        p_or = ppl_oracle(oracle, cands, cand_prefixes)
    except ZeroProbabilityError:
        p_or = None
    r1, rl = rouge_scores(cands, cand_refs)
    fwd, rev = ce_diagnostic(student, oracle, test)
    return MetricReport(perplexity(student, test), p_or, r1, rl, fwd, rev)


# -- experiment -------------------------------------------------------------

@dataclass
class ExperimentConfig:
    vocab_size: int = 50
    oracle_order: int = 1
    concentration: float = 0.1
    num_train: int = 5000
    num_valid: int = 500
    num_test: int = 500
    seq_len: int = 32
    embed_dim: int = 16
    context: int = 4
    hidden: int = 64
    lr: float = 1.0
    momentum: float = 0.0
    batch_size: int = 32
    pretrain_epochs: int = 3
    finetune_epochs: int = 3
    objectives: list = field(default_factory=lambda: ["mle", "tailr", "mixce", "emo"])
    gamma_grid: list = field(default_factory=lambda: [0.9, 0.8, 0.7])
    prefix_len: int = 8
    sample_reps: int = 5
    from_scratch: bool = False
    detach_weight: list = field(default_factory=lambda: ["tailr"])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])

    def __post_init__(self):
        for name in ("vocab_size", "oracle_order", "num_train", "num_valid", "num_test", "seq_len",
                     "embed_dim", "context", "hidden", "batch_size", "pretrain_epochs",
                     "finetune_epochs", "sample_reps"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if not 0 <= self.prefix_len < self.seq_len:
            raise ConfigError("prefix_len must lie in [0, seq_len)")
        if not self.concentration > 0:
            raise ConfigError("concentration must be positive")
        if self.vocab_size ** self.oracle_order > 2_000_000:
            raise ConfigError("oracle table too large; reduce vocab_size or oracle_order")
        try:
            self.objectives = [Objective.parse(o).value for o in self.objectives]
        except InvalidInputError as exc:
            raise ConfigError(str(exc)) from None
        if not self.objectives or "demd" in self.objectives:
            raise ConfigError("objectives must be a non-empty subset of mle, tailr, mixce, emo")
        if any(o not in ("tailr", "mixce") for o in self.detach_weight):
            raise ConfigError("detach_weight may only list tailr and/or mixce")
        if not self.gamma_grid or any(not 0 <= g <= 1 for g in self.gamma_grid):
            raise ConfigError("gamma_grid must be a non-empty list of values in [0, 1]")
        if not self.seeds or any(isinstance(s, bool) or not isinstance(s, int) for s in self.seeds):
            raise ConfigError("seeds must be a non-empty list of integers")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        d = self.to_dict()
        d.update({k: v for k, v in kw.items() if v is not None})
        return ExperimentConfig.from_dict(d)

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(self.vocab_size)

    def train_config(self, epochs: int, seed: int) -> TrainConfig:
        return TrainConfig(epochs=epochs, lr=self.lr, momentum=self.momentum,
                           batch_size=self.batch_size, seed=seed)


# RNG stream ids within one seed
_ORACLE, _CORPUS, _INIT, _PRETRAIN, _FINETUNE, _SAMPLE = range(6)


def build_world(cfg: ExperimentConfig, seed: int):
    """Oracle and corpus for one seed."""
    oracle = make_oracle(cfg.vocab, cfg.oracle_order, cfg.concentration, derive_seed(seed, _ORACLE))
    corpus = sample_corpus(oracle, (cfg.num_train, cfg.num_valid, cfg.num_test), cfg.seq_len,
                           derive_seed(seed, _CORPUS))
    return oracle, corpus


def pretrain_base(cfg: ExperimentConfig, corpus: Corpus, seed: int):
    init = ToyLM.create(cfg.vocab, cfg.embed_dim, cfg.context, cfg.hidden, seed=derive_seed(seed, _INIT))
    base, rec = train(init, corpus.train, LossConfig(Objective.MLE),
                      cfg.train_config(cfg.pretrain_epochs, derive_seed(seed, _PRETRAIN)), corpus.valid)
    return init, base, rec


def loss_config_for(objective: str, gamma=None, e_hat=None, detach=False) -> LossConfig:
    obj = Objective.parse(objective)
    if obj in (Objective.TAILR, Objective.MIXCE):
        return LossConfig(obj, mixing_gamma=gamma, detach_weight=detach)
    if obj in (Objective.DEMD, Objective.EMO):
        return LossConfig(obj, e_hat=e_hat)
    return LossConfig(obj)


def finetune(cfg: ExperimentConfig, start: ToyLM, corpus: Corpus, objective: str, seed: int,
             e_hat: Optional[np.ndarray]):
    """Train one student; sweeps ``gamma_grid`` for TaiLr/MixCE and keeps the
    gamma with the lowest validation NLL."""
    obj = Objective.parse(objective)
    gammas = cfg.gamma_grid if obj in (Objective.TAILR, Objective.MIXCE) else [None]
    tcfg = cfg.train_config(cfg.finetune_epochs, derive_seed(seed, _FINETUNE, list(Objective).index(obj)))
    best = None
    sweep = []
    for g in gammas:
        lcfg = loss_config_for(obj, g, e_hat, obj.value in cfg.detach_weight)
        model, rec = train(start, corpus.train, lcfg, tcfg, corpus.valid)
        nll = rec.valid_nll[rec.best_epoch - 1]
        sweep.append({"gamma": g, "valid_nll": nll})
        if best is None or nll < best[2]:
            best = (model, rec, nll, g)
    model, rec, _, g = best
    rec.extra["gamma_sweep"] = sweep
    rec.config["mixing_gamma"] = g
    return model, rec


def run_single_seed(cfg: ExperimentConfig, seed: int) -> list[RunRecord]:
    oracle, corpus = build_world(cfg, seed)
    init, base, pre_rec = pretrain_base(cfg, corpus, seed)
    e_hat = base.head_snapshot()
    start = init if cfg.from_scratch else base
    records = []
    for objective in cfg.objectives:
        t0 = time.perf_counter()
        rec = RunRecord(config={"objective": objective}, seeds={})
        try:
            student, rec = finetune(cfg, start, corpus, objective, seed, e_hat)
            rng = np.random.default_rng(derive_seed(seed, _SAMPLE, list(Objective).index(Objective(objective))))
            report = evaluate(student, oracle, corpus.test, cfg.prefix_len, cfg.sample_reps, rng)
            rec.metrics = report.to_dict()
            if report.ppl_oracle is None:
                rec.errors.append("ppl_oracle overflow: a generated token has zero oracle probability")
        except EmolabError as exc:
            log.warning("seed %s objective %s failed: %s", seed, objective, exc)
            rec.errors.append(f"{type(exc).__name__}: {exc}")
        rec.config = {**cfg.to_dict(), **rec.config, "objective": objective}
        rec.seeds = {"seed": seed, "oracle": derive_seed(seed, _ORACLE), "corpus": derive_seed(seed, _CORPUS),
                     "init": derive_seed(seed, _INIT), **rec.seeds}
        rec.extra["pretrain"] = {"train_losses": pre_rec.train_losses, "valid_losses": pre_rec.valid_losses,
                                 "best_epoch": pre_rec.best_epoch}
        rec.extra["oracle_entropy_rate"] = oracle.entropy_rate(cfg.seq_len)
        rec.wall_clock = time.perf_counter() - t0
        records.append(rec)
    return records


def _fmt(v):
    return "" if v is None else repr(float(v))


def summary_rows(records: Sequence[RunRecord]) -> list[dict]:
    rows = []
    for rec in records:
        m = rec.metrics or {}
        rows.append({"objective": rec.config["objective"], "seed": rec.seeds["seed"],
                     **{k: m.get(k) for k in METRIC_COLUMNS}})
    return rows


def medians(rows: Sequence[dict], objectives: Sequence[str]) -> list[dict]:
    out = []
    for obj in objectives:
        sel = [r for r in rows if r["objective"] == obj]
        med = {"objective": obj, "n_seeds": len(sel)}
        for k in METRIC_COLUMNS:
            vals = [r[k] for r in sel if r[k] is not None]
            med[k] = statistics.median(vals) if vals else None
        out.append(med)
    return out


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r[h]) if isinstance(r[h], float) or r[h] is None else r[h] for h in header])
    return buf.getvalue()


def summary_csv(rows) -> str:
    return _csv(SUMMARY_COLUMNS, rows)


def medians_csv(meds) -> str:
    return _csv(("objective", "n_seeds") + METRIC_COLUMNS, meds)


def curves_csv(records: Sequence[RunRecord]) -> str:
    header = ("objective", "seed", "phase", "epoch", "train_loss", "valid_loss", "valid_nll")
    rows = []
    for rec in records:
        obj, seed = rec.config["objective"], rec.seeds["seed"]
        pre = rec.extra.get("pretrain", {})
        for e, (tl, vl) in enumerate(zip(pre.get("train_losses", []), pre.get("valid_losses", [])), 1):
            rows.append({"objective": obj, "seed": seed, "phase": "pretrain", "epoch": e,
                         "train_loss": tl, "valid_loss": vl, "valid_nll": vl})
        for e, (tl, vl, nl) in enumerate(zip(rec.train_losses, rec.valid_losses, rec.valid_nll), 1):
            rows.append({"objective": obj, "seed": seed, "phase": "finetune", "epoch": e,
                         "train_loss": tl, "valid_loss": vl, "valid_nll": nl})
    return _csv(header, rows)


@dataclass
class ExperimentResult:
    records: list
    rows: list
    medians: list


def run_oracle_experiment(cfg: ExperimentConfig, seeds: Optional[Sequence[int]] = None,
                          out_dir=None) -> ExperimentResult:
    """Run every (seed, objective) pair; optionally write records and CSVs to ``out_dir``.

    Files written: ``runs/<objective>-seed<seed>.json``, ``summary.csv``
    (one row per run), ``medians.csv`` and ``curves.csv``.
    """
    seeds = list(cfg.seeds if seeds is None else seeds)
    if not seeds:
        raise ConfigError("at least one seed is required")
    records = []
    for seed in seeds:
        log.info("seed %s", seed)
        records.extend(run_single_seed(cfg, seed))
    rows = summary_rows(records)
    meds = medians(rows, cfg.objectives)
    if out_dir is not None:
        out = Path(out_dir)
        (out / "runs").mkdir(parents=True, exist_ok=True)
        for rec in records:
            name = f"{rec.config['objective']}-seed{rec.seeds['seed']}.json"
            rec.artifacts["record"] = os.path.join("runs", name)
            atomic_write(out / "runs" / name, rec.to_json())
        atomic_write(out / "summary.csv", summary_csv(rows))
        atomic_write(out / "medians.csv", medians_csv(meds))
        atomic_write(out / "curves.csv", curves_csv(records))
    return ExperimentResult(records, rows, meds)
