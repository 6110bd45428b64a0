"""A small fixed-window feed-forward language model.

The model embeds the last ``context`` tokens (left-padded with BOS),
concatenates them, applies one tanh hidden layer, projects to the embedding
width and scores every vocabulary entry against an untied output head:

    logits = (tanh(X W1 + b1) W2 + b2) @ head.T + head_bias

Gradients are hand-derived (chain rule through the layers above); each
objective supplies its own gradient w.r.t. logits.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, DivergenceError, InvalidInputError
from .losses import LossConfig, Objective, batch_losses, sequence_loss
from .numerics import log_softmax, softmax
from .records import RunRecord, atomic_write
from .transport import normalize_rows

CHECKPOINT_FORMAT = "emolab-toylm"
CHECKPOINT_VERSION = 1
# Reserved tokens never appear as targets; masking their logits with a large
# finite constant gives them exactly zero probability in float64.
MASKED_LOGIT = -1e4

PARAM_NAMES = ("embed", "W1", "b1", "W2", "b2", "head", "head_bias")


@dataclass(frozen=True)
class Vocabulary:
    size: int
    pad: int = 0
    bos: int = 1

    def __post_init__(self):
        if self.size < 3:
            raise InvalidInputError(f"vocabulary size must be at least 3, got {self.size}")
        if self.pad == self.bos:
            raise InvalidInputError("pad and bos must be distinct tokens")
        for tok in (self.pad, self.bos):
            if not 0 <= tok < self.size:
                raise InvalidInputError(f"reserved token {tok} outside vocabulary of size {self.size}")

    @property
    def reserved(self) -> tuple[int, int]:
        return (self.pad, self.bos)

    @property
    def content(self) -> np.ndarray:
        """Indices of tokens that may appear in text."""
        keep = np.ones(self.size, dtype=bool)
        keep[list(self.reserved)] = False
        return np.flatnonzero(keep)


def _param_shapes(V, d, n, H):
    return {
        "embed": (V, d),
        "W1": (n * d, H),
        "b1": (H,),
        "W2": (H, d),
        "b2": (d,),
        "head": (V, d),
        "head_bias": (V,),
    }


class ToyLM:
    """Windowed MLP language model over a :class:`Vocabulary`.

    ``e_hat`` optionally carries a frozen unit-row snapshot of an output head
    used as the transport-cost embedding for DEMD/EMO training.
    """

    def __init__(self, vocab: Vocabulary, params: dict, context: int = 4,
                 mask_reserved: bool = True, e_hat: Optional[np.ndarray] = None):
        self.vocab = vocab
        self.context = int(context)
        self.mask_reserved = bool(mask_reserved)
        if self.context < 1:
            raise InvalidInputError("context window must be at least 1")
        V = vocab.size
        d = np.shape(params["embed"])[1]
        H = np.shape(params["W1"])[1]
        shapes = _param_shapes(V, d, self.context, H)
        if set(params) != set(PARAM_NAMES):
            raise InvalidInputError(f"parameter set must be exactly {PARAM_NAMES}")
        self.params = {}
        for name in PARAM_NAMES:
            arr = np.array(params[name], dtype=np.float64)
            if arr.shape != shapes[name]:
                raise DimensionError(f"parameter {name} has shape {arr.shape}, expected {shapes[name]}")
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"parameter {name} has non-finite entries")
            self.params[name] = arr
        self.e_hat = None if e_hat is None else np.array(e_hat, dtype=np.float64)
        if self.e_hat is not None and self.e_hat.shape != (V, d):
            raise DimensionError(f"e_hat shape {self.e_hat.shape} does not match head shape {(V, d)}")

    @classmethod
    def create(cls, vocab: Vocabulary, embed_dim=16, context=4, hidden=64, seed=0,
               mask_reserved=True) -> "ToyLM":
        rng = np.random.default_rng(seed)
        n, d, H, V = context, embed_dim, hidden, vocab.size
        params = {
            "embed": rng.normal(0.0, 1.0, (V, d)),
            "W1": rng.normal(0.0, 1.0 / np.sqrt(n * d), (n * d, H)),
            "b1": np.zeros(H),
            "W2": rng.normal(0.0, 1.0 / np.sqrt(H), (H, d)),
            "b2": np.zeros(d),
            "head": rng.normal(0.0, 1.0, (V, d)),
            "head_bias": np.zeros(V),
        }
        return cls(vocab, params, context=context, mask_reserved=mask_reserved)

    @classmethod
    def zeros(cls, vocab: Vocabulary, embed_dim=16, context=4, hidden=64,
              mask_reserved=True) -> "ToyLM":
        shapes = _param_shapes(vocab.size, embed_dim, context, hidden)
        return cls(vocab, {k: np.zeros(s) for k, s in shapes.items()},
                   context=context, mask_reserved=mask_reserved)

    @property
    def embed_dim(self) -> int:
        return self.params["embed"].shape[1]

    @property
    def hidden(self) -> int:
        return self.params["W1"].shape[1]

    def copy(self) -> "ToyLM":
        return ToyLM(self.vocab, {k: v.copy() for k, v in self.params.items()},
                     context=self.context, mask_reserved=self.mask_reserved,
                     e_hat=None if self.e_hat is None else self.e_hat.copy())

    def head_snapshot(self) -> np.ndarray:
        """Unit-normalized copy of the current output head."""
        return normalize_rows(self.params["head"])

    # -- batched core -----------------------------------------------------

    def _forward(self, contexts):
        p = self.params
        B = contexts.shape[0]
        X = p["embed"][contexts].reshape(B, -1)
        h = np.tanh(X @ p["W1"] + p["b1"])
        proj = h @ p["W2"] + p["b2"]
        logits = proj @ p["head"].T + p["head_bias"]
        if self.mask_reserved:
            logits[:, list(self.vocab.reserved)] = MASKED_LOGIT
        return logits, (contexts, X, h, proj)

    def logits(self, contexts) -> np.ndarray:
        """Next-token logits for a ``(B, context)`` array of token windows."""
        ctx = np.asarray(contexts, dtype=np.int64)
        if ctx.ndim != 2 or ctx.shape[1] != self.context:
            raise DimensionError(f"contexts must have shape (B, {self.context}), got {ctx.shape}")
        self._check_tokens(ctx)
        return self._forward(ctx)[0]

    def _backward(self, G, cache) -> dict:
        contexts, X, h, proj = cache
        p = self.params
        if self.mask_reserved:
            G = G.copy()
            G[:, list(self.vocab.reserved)] = 0.0
        grads = {
            "head": G.T @ proj,
            "head_bias": G.sum(axis=0),
        }
        dproj = G @ p["head"]
        grads["W2"] = h.T @ dproj
        grads["b2"] = dproj.sum(axis=0)
        da = (dproj @ p["W2"].T) * (1.0 - h * h)
        grads["W1"] = X.T @ da
        grads["b1"] = da.sum(axis=0)
        dX = (da @ p["W1"].T).reshape(contexts.shape[0], self.context, -1)
        d_embed = np.zeros_like(p["embed"])
        np.add.at(d_embed, contexts.reshape(-1), dX.reshape(-1, dX.shape[-1]))
        grads["embed"] = d_embed
        return grads

    def loss_and_grad(self, contexts, targets, config: LossConfig, mask=None):
        """Mean objective over unmasked positions and its parameter gradients."""
        ctx = np.asarray(contexts, dtype=np.int64)
        self._check_tokens(ctx)
        logits, cache = self._forward(ctx)
        value, G = sequence_loss(logits, targets, config, mask)
        return value, self._backward(G, cache)

    def _check_tokens(self, tokens):
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.vocab.size):
            bad = tokens[(tokens < 0) | (tokens >= self.vocab.size)][0]
            raise InvalidInputError(f"token {bad} outside vocabulary of size {self.vocab.size}")

    def window(self, prefix) -> np.ndarray:
        """Last ``context`` tokens of ``prefix``, left-padded with BOS."""
        toks = [int(t) for t in prefix]
        pad = [self.vocab.bos] * max(0, self.context - len(toks))
        return np.asarray(pad + toks[len(toks) - self.context + len(pad):], dtype=np.int64)

    # -- persistence ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "vocab": {"size": self.vocab.size, "pad": self.vocab.pad, "bos": self.vocab.bos},
            "context": self.context,
            "embed_dim": self.embed_dim,
            "hidden": self.hidden,
            "mask_reserved": self.mask_reserved,
            "shapes": {k: list(v.shape) for k, v in self.params.items()},
            "params": {k: v.tolist() for k, v in self.params.items()},
            "e_hat": None if self.e_hat is None else self.e_hat.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToyLM":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise InvalidInputError(f"not a {CHECKPOINT_FORMAT} checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise InvalidInputError(f"unsupported checkpoint version {d.get('version')!r}")
        vocab = Vocabulary(**d["vocab"])
        expected = _param_shapes(vocab.size, d["embed_dim"], d["context"], d["hidden"])
        for name, shape in expected.items():
            got = tuple(np.shape(d["params"].get(name)))
            if got != shape or tuple(d["shapes"].get(name, ())) != shape:
                raise DimensionError(f"checkpoint parameter {name} has shape {got}, expected {shape}")
        return cls(vocab, d["params"], context=d["context"],
                   mask_reserved=d["mask_reserved"], e_hat=d.get("e_hat"))


def save_checkpoint(model: ToyLM, path) -> None:
    atomic_write(path, json.dumps(model.to_dict()))


def load_checkpoint(path) -> ToyLM:
    with open(path) as fh:
        return ToyLM.from_dict(json.load(fh))


# -- sequences --------------------------------------------------------------

def _strip_bos(model, x):
    toks = np.asarray(x, dtype=np.int64).reshape(-1)
    if toks.size and toks[0] == model.vocab.bos:
        toks = toks[1:]
    return toks


def positions(model: ToyLM, sequences: Sequence):
    """Flatten sequences into (contexts, targets), one row per scored token.

    A leading BOS in a sequence is treated as the start marker, not a token.
    """
    n = model.context
    ctxs, tgts = [], []
    for x in sequences:
        toks = _strip_bos(model, x)
        if toks.size == 0:
            raise InvalidInputError("empty token sequence")
        padded = np.concatenate([np.full(n, model.vocab.bos, dtype=np.int64), toks])
        ctxs.append(np.lib.stride_tricks.sliding_window_view(padded, n)[:-1])
        tgts.append(toks)
    if not ctxs:
        raise InvalidInputError("no sequences given")
    contexts = np.concatenate(ctxs)
    targets = np.concatenate(tgts)
    model._check_tokens(contexts)
    model._check_tokens(targets)
    return contexts, targets


def forward(model: ToyLM, prefix) -> np.ndarray:
    """Logits of the next token after ``prefix``."""
    return model.logits(model.window(prefix)[None, :])[0]


def token_log_probs(model: ToyLM, x) -> np.ndarray:
    contexts, targets = positions(model, [x])
    logp = log_softmax(model.logits(contexts))
    return logp[np.arange(targets.size), targets]


def sequence_log_prob(model: ToyLM, x) -> float:
    return float(token_log_probs(model, x).sum())


def perplexity(model: ToyLM, corpus: Sequence) -> float:
    if len(corpus) == 0:
        raise InvalidInputError("perplexity of an empty corpus")
    contexts, targets = positions(model, corpus)
    logp = log_softmax(model.logits(contexts))
    nll = -logp[np.arange(targets.size), targets].sum()
    return float(np.exp(nll / targets.size))


def _inverse_cdf(probs, u):
    # index of the first cumulative bin exceeding u; zero-mass tokens are never hit
    cdf = np.cumsum(probs, axis=-1)
    idx = (cdf <= (u * cdf[:, -1])[:, None]).sum(axis=1)
    last = probs.shape[1] - 1 - np.argmax(probs[:, ::-1] > 0, axis=1)
    return np.minimum(idx, last)


def sample_batch(model: ToyLM, prefixes, length: int, rng: np.random.Generator) -> np.ndarray:
    """Ancestral sampling for many prefixes at once.

    ``prefixes`` is a list of token sequences (may be empty). Returns an
    ``(B, length)`` array of generated continuations. One uniform draw per
    row and step, consumed in row order.
    """
    if length < 1:
        raise InvalidInputError("sample length must be at least 1")
    B = len(prefixes)
    windows = np.stack([model.window(p) for p in prefixes]) if B else np.zeros((0, model.context), np.int64)
    model._check_tokens(windows)
    out = np.zeros((B, length), dtype=np.int64)
    for t in range(length):
        probs = softmax(model.logits(windows))
        nxt = _inverse_cdf(probs, rng.random(B))
        out[:, t] = nxt
        windows = np.concatenate([windows[:, 1:], nxt[:, None]], axis=1)
    return out


def ancestral_sample(model: ToyLM, prefix, length: int, seed: int) -> np.ndarray:
    """Sample ``length`` tokens after ``prefix`` from the exact model distribution."""
    return sample_batch(model, [list(prefix)], length, np.random.default_rng(seed))[0]


# -- training ---------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    lr: float = 0.1
    momentum: float = 0.0
    batch_size: int = 32
    seed: int = 0
    select_best: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidInputError("epochs and batch_size must be positive")
        if self.lr < 0 or not 0 <= self.momentum < 1:
            raise InvalidInputError("lr must be >= 0 and momentum in [0, 1)")


def _collate(model, sequences):
    """Pad sequences to a common length; returns (contexts, targets, mask) flattened."""
    n = model.context
    stripped = [_strip_bos(model, x) for x in sequences]
    if any(s.size == 0 for s in stripped):
        raise InvalidInputError("empty token sequence in corpus")
    T = max(s.size for s in stripped)
    pad = model.vocab.pad
    toks = np.full((len(stripped), T), pad, dtype=np.int64)
    mask = np.zeros((len(stripped), T), dtype=bool)
    for i, s in enumerate(stripped):
        toks[i, : s.size] = s
        mask[i, : s.size] = True
    padded = np.concatenate([np.full((len(stripped), n), model.vocab.bos, dtype=np.int64), toks], axis=1)
    ctx = np.lib.stride_tricks.sliding_window_view(padded, n, axis=1)[:, :-1]
    return ctx, toks, mask


def evaluate_loss(model: ToyLM, corpus, config: LossConfig):
    """Token-mean objective value and token-mean NLL over a corpus."""
    contexts, targets = positions(model, corpus)
    logits = model.logits(contexts)
    vals, _ = batch_losses(logits, targets, config)
    logp = log_softmax(logits)
    nll = -logp[np.arange(targets.size), targets]
    return float(vals.mean()), float(nll.mean())


def train(model: ToyLM, corpus, loss_config: LossConfig, train_config: TrainConfig = TrainConfig(),
          valid=None) -> tuple[ToyLM, RunRecord]:
    """Mini-batch SGD (optionally with momentum) on ``corpus``.

    Per-epoch training and validation losses are recorded; with
    ``select_best`` the parameters of the epoch with the lowest validation
    objective are returned. ``valid`` defaults to the training corpus.
    """
    if len(corpus) == 0:
        raise InvalidInputError("training corpus is empty")
    start = time.perf_counter()
    valid = corpus if valid is None else valid
    work = model.copy()
    if loss_config.objective in (Objective.DEMD, Objective.EMO):
        work.e_hat = np.array(loss_config.e_hat)
    rng = np.random.default_rng(train_config.seed)
    ctx, toks, mask = _collate(work, corpus)
    work._check_tokens(toks)
    work._check_tokens(ctx)
    positions(work, valid)
    velocity = {k: np.zeros_like(v) for k, v in work.params.items()}
    lr, mu, bs = train_config.lr, train_config.momentum, train_config.batch_size
    record = RunRecord(
        config={"objective": loss_config.objective.value, "mixing_gamma": loss_config.mixing_gamma,
                "epochs": train_config.epochs, "lr": lr, "momentum": mu, "batch_size": bs},
        seeds={"train": train_config.seed},
    )
    best_val, best_params, best_epoch = np.inf, None, None
    for epoch in range(1, train_config.epochs + 1):
        order = rng.permutation(len(corpus))
        total, count = 0.0, 0
        for b, lo in enumerate(range(0, len(order), bs)):
            idx = order[lo: lo + bs]
            c = ctx[idx].reshape(-1, work.context)
            m = mask[idx].reshape(-1)
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    value, grads = work.loss_and_grad(c, toks[idx].reshape(-1), loss_config, m)
            except InvalidInputError:
                # tokens were validated up front, so this is overflowed logits
                raise DivergenceError(epoch, b, float("inf")) from None
            if not np.isfinite(value):
                raise DivergenceError(epoch, b, value)
            k = int(m.sum())
            total += value * k
            count += k
            with np.errstate(over="ignore", invalid="ignore"):
                for name, g in grads.items():
                    if mu:
                        velocity[name] = mu * velocity[name] + g
                        g = velocity[name]
                    work.params[name] -= lr * g
            if not all(np.all(np.isfinite(p)) for p in work.params.values()):
                raise DivergenceError(epoch, b, float("nan"))
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                val, nll = evaluate_loss(work, valid, loss_config)
        except InvalidInputError:
            raise DivergenceError(epoch, b, float("inf")) from None
        if not (np.isfinite(val) and np.isfinite(nll)):
            raise DivergenceError(epoch, b, val)
        record.train_losses.append(total / count)
        record.valid_losses.append(val)
        record.valid_nll.append(nll)
        if val < best_val or not train_config.select_best:
            best_val, best_epoch = val, epoch
            best_params = {k: v.copy() for k, v in work.params.items()}
    work.params = best_params
    record.best_epoch = best_epoch
    record.wall_clock = time.perf_counter() - start
    return work, record


def flat_params(model: ToyLM) -> np.ndarray:
    return np.concatenate([model.params[k].ravel() for k in PARAM_NAMES])


def set_flat_params(model: ToyLM, flat) -> None:
    flat = np.asarray(flat, dtype=np.float64)
    expected = sum(model.params[k].size for k in PARAM_NAMES)
    if flat.shape != (expected,):
        raise DimensionError(f"flat parameter vector has shape {flat.shape}, expected ({expected},)")
    off = 0
    for k in PARAM_NAMES:
        size = model.params[k].size
        model.params[k] = flat[off: off + size].reshape(model.params[k].shape).copy()
        off += size


def flat_grad(grads: dict) -> np.ndarray:
    return np.concatenate([grads[k].ravel() for k in PARAM_NAMES])
