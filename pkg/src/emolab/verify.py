"""Randomized property suites behind ``emolab verify``."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .losses import (
    demd_general_loss,
    demd_loss,
    emo_loss,
    mixce_loss,
    mle_loss,
    tailr_loss,
)
from . import reference
from .numerics import one_hot, softmax
from .transport import CostMatrix, cost_matrix_from_embeddings, exact_emd, normalize_rows, plan_cost, surrogate_plan

SCOPES = ("bounds", "gradients", "reductions")

# Test hook: a callable applied to every cost matrix the bounds suite builds.
COST_HOOK: Optional[Callable[[CostMatrix], CostMatrix]] = None


@dataclass
class SuiteResult:
    name: str
    passed: int = 0
    failed: int = 0
    failures: list = field(default_factory=list)

    def record(self, ok: bool, detail: Callable[[], str]):
        if ok:
            self.passed += 1
        else:
            self.failed += 1
            if len(self.failures) < 5:
                self.failures.append(detail())


def random_instance(rng, vocab_min=3, vocab_max=16, dim=4):
    V = int(rng.integers(vocab_min, vocab_max + 1))
    E = normalize_rows(rng.normal(size=(V, dim)))
    Q = rng.dirichlet(np.full(V, 0.5))
    P = rng.dirichlet(np.full(V, 0.5))
    return V, E, Q, P


def bounds_suite(rng, trials=300) -> list[SuiteResult]:
    costs = SuiteResult("cost matrix invariants")
    upper = SuiteResult("surrogate plan cost >= exact EMD")
    tight = SuiteResult("DEMD equals exact EMD for one-hot target")
    general = SuiteResult("generalized DEMD >= |Q'CP - P'CP|")
    for trial in range(trials):
        V, E, Q, P = random_instance(rng)
        C = cost_matrix_from_embeddings(E)
        if COST_HOOK is not None:
            C = COST_HOOK(C)
        bad = C.violations()
        costs.record(not bad, lambda: f"trial {trial}: {'; '.join(bad)}")
        emd, _ = exact_emd(Q, P, C)
        sur = plan_cost(surrogate_plan(Q, P), C)
        upper.record(sur >= emd - 1e-9, lambda: f"trial {trial}: surrogate {sur!r} < exact {emd!r}")
        t = int(rng.integers(V))
        z = np.log(Q)
        demd = demd_loss(z, t, E).value
        emd1, _ = exact_emd(softmax(z), one_hot(t, V), C)
        tight.record(abs(demd - emd1) <= 1e-9, lambda: f"trial {trial}: DEMD {demd!r} vs EMD {emd1!r}")
        c = C.entries
        g = demd_general_loss(Q, P, C)
        rhs = abs(Q @ c @ P - P @ c @ P)
        general.record(g >= rhs - 1e-12, lambda: f"trial {trial}: {g!r} < {rhs!r}")
    return [costs, upper, tight, general]


def gradient_suite(rng, trials=100, tol=1e-6) -> list[SuiteResult]:
    results = []
    V, d = 8, 4
    cases = {
        "mle": lambda z, t, E, g: mle_loss(z, t),
        "tailr": lambda z, t, E, g: tailr_loss(z, t, g),
        "mixce": lambda z, t, E, g: mixce_loss(z, t, g),
        "demd": lambda z, t, E, g: demd_loss(z, t, E),
        "emo": lambda z, t, E, g: emo_loss(z, t, E),
    }
    for name, fn in cases.items():
        res = SuiteResult(f"{name} logit gradient vs extended-precision central differences")
        for trial in range(trials):
            z = rng.normal(size=V)
            t = int(rng.integers(V))
            E = normalize_rows(rng.normal(size=(V, d)))
            gamma = float(rng.uniform(0.05, 0.95))
            err = reference.grad_check(name, fn(z, t, E, gamma).grad_logits, z, t, gamma, E)
            res.record(err <= tol, lambda: f"trial {trial}: rel err {err:.3g}, z={z.tolist()}, target={t}")
        results.append(res)
    return results


def reduction_suite(rng, trials=200) -> list[SuiteResult]:
    tailr = SuiteResult("TaiLr(gamma=0) equals MLE")
    mixce = SuiteResult("MixCE(gamma=1) equals MLE")
    emo = SuiteResult("EMO value equals MLE value")
    for trial in range(trials):
        V = int(rng.integers(3, 17))
        z = rng.normal(scale=2.0, size=V)
        t = int(rng.integers(V))
        E = normalize_rows(rng.normal(size=(V, 4)))
        m = mle_loss(z, t).value
        a = tailr_loss(z, t, 0.0).value
        b = mixce_loss(z, t, 1.0).value
        tailr.record(abs(a - m) <= 1e-12, lambda: f"trial {trial}: {a!r} vs {m!r}")
        mixce.record(abs(b - m) <= 1e-12, lambda: f"trial {trial}: {b!r} vs {m!r}")
        if demd_loss(z, t, E).value > 1e-12:
            e = emo_loss(z, t, E).value
            emo.record(abs(e - m) <= 1e-12, lambda: f"trial {trial}: {e!r} vs {m!r}")
    return [tailr, mixce, emo]


def run(scope: str = "all", seed: int = 0) -> list[SuiteResult]:
    if scope != "all" and scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}")
    rng = np.random.default_rng(seed)
    suites = {"bounds": bounds_suite, "gradients": gradient_suite, "reductions": reduction_suite}
    out = []
    for name in SCOPES:
        if scope in ("all", name):
            out.extend(suites[name](rng))
    return out
