import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from emolab.errors import ConfigError, InvalidInputError, ZeroProbabilityError
from emolab.harness import (
    SUMMARY_COLUMNS,
    ExperimentConfig,
    OracleModel,
    ce_diagnostic,
    derive_seed,
    make_oracle,
    medians,
    ppl_oracle,
    rouge_pair,
    rouge_scores,
    run_oracle_experiment,
    sample_corpus,
    summary_csv,
)
from emolab.lm import ToyLM, Vocabulary
from emolab.records import RunRecord
from oracles import lcs_brute

V10 = Vocabulary(10)
SMOKE = dict(vocab_size=10, num_train=60, num_valid=20, num_test=10, seq_len=10, embed_dim=4, context=2,
             hidden=8, pretrain_epochs=1, finetune_epochs=1, gamma_grid=[0.8], prefix_len=3, sample_reps=2,
             seeds=[0])


def test_oracle_rows_are_distributions():
    o = make_oracle(V10, order=2, seed=1)
    assert o.table.shape == (100, 10)
    np.testing.assert_allclose(o.table.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(o.table[:, list(V10.reserved)] == 0)


def test_oracle_seed_determinism():
    np.testing.assert_array_equal(make_oracle(V10, seed=4).table, make_oracle(V10, seed=4).table)
    assert not np.array_equal(make_oracle(V10, seed=4).table, make_oracle(V10, seed=5).table)


def test_oracle_large_concentration_is_near_uniform():
    o = make_oracle(V10, order=1, concentration=1e6, seed=0)
    tv = 0.5 * np.abs(o.table[:, 2:] - 1 / 8).sum(axis=1)
    assert tv.max() <= 0.01


def test_oracle_rejects_bad_parameters():
    with pytest.raises(InvalidInputError):
        make_oracle(V10, concentration=0.0)
    with pytest.raises(InvalidInputError):
        make_oracle(V10, order=0)


def deterministic_oracle():
    table = np.zeros((10, 10))
    table[:, 4] = 1.0
    table[4, :] = 0.0
    table[4, 6] = 1.0
    return OracleModel(V10, 1, table)


def test_deterministic_oracle_sequences_identical():
    xs = deterministic_oracle().sample(5, 8, np.random.default_rng(0))
    assert (xs == xs[0]).all()
    np.testing.assert_array_equal(xs[0], [4, 6, 4, 6, 4, 6, 4, 6])


def test_corpus_split_sizes_and_unigram():
    o = make_oracle(V10, order=1, concentration=0.5, seed=2)
    c = sample_corpus(o, (3000, 7, 5), 30, seed=1)
    assert (len(c.train), len(c.valid), len(c.test)) == (3000, 7, 5)
    emp = np.bincount(np.concatenate(c.train), minlength=10) / (3000 * 30)
    assert 0.5 * np.abs(emp - o.expected_unigram(30)).sum() <= 0.02


def test_long_run_unigram_matches_stationary():
    o = make_oracle(V10, order=2, concentration=0.5, seed=2)
    xs = o.sample(200, 1000, np.random.default_rng(5))
    emp = np.bincount(xs.ravel(), minlength=10) / xs.size
    assert 0.5 * np.abs(emp - o.stationary_unigram()).sum() <= 0.02


def test_corpus_determinism():
    o = make_oracle(V10, order=2, seed=2)
    a = sample_corpus(o, (10, 2, 2), 12, seed=3)
    b = sample_corpus(o, (10, 2, 2), 12, seed=3)
    assert all(np.array_equal(x, y) for x, y in zip(a.train, b.train))


def test_ppl_oracle_matches_entropy_rate():
    o = make_oracle(V10, order=2, concentration=0.3, seed=7)
    samples = o.sample(500, 40, np.random.default_rng(1))
    target = math.exp(o.entropy_rate(40))
    assert ppl_oracle(o, samples) == pytest.approx(target, rel=0.05)


def test_ppl_oracle_band_narrows_with_sample_count():
    o = make_oracle(V10, order=1, concentration=0.3, seed=8)
    target = math.exp(o.entropy_rate(20))
    spread = []
    for n in (20, 500):
        vals = [ppl_oracle(o, o.sample(n, 20, np.random.default_rng(s))) for s in range(12)]
        spread.append(np.std(np.log(vals) - math.log(target)))
    assert spread[1] < spread[0]


def test_ppl_oracle_uniform():
    uniform = OracleModel(V10, 1, np.full((10, 10), 0.1))
    samples = np.random.default_rng(0).integers(0, 10, size=(200, 20))
    assert ppl_oracle(uniform, samples) == pytest.approx(10.0, rel=1e-9)


def test_ppl_oracle_zero_probability_is_reported():
    o = make_oracle(V10, order=1, seed=0)
    with pytest.raises(ZeroProbabilityError) as exc:
        ppl_oracle(o, [[3, 4, 0, 5]])
    assert exc.value.position == 2 and exc.value.token == 0


def test_rouge_examples():
    assert rouge_pair([3, 4, 5], [3, 4, 5]) == (1.0, 1.0)
    assert rouge_pair([2, 3], [4, 5]) == (0.0, 0.0)
    assert rouge_pair([1, 2, 3, 4], [2, 3, 5, 4]) == pytest.approx((0.75, 0.75), abs=1e-15)


token_lists = st.lists(st.integers(0, 5), min_size=1, max_size=9)


@given(token_lists, token_lists)
def test_rouge_symmetric_and_bounded(a, b):
    r1, rl = rouge_pair(a, b)
    assert (r1, rl) == pytest.approx(rouge_pair(b, a), abs=1e-15)
    assert 0 <= rl <= r1 <= 1


@given(token_lists, token_lists)
def test_lcs_matches_brute_force(a, b):
    _, rl = rouge_pair(a, b)
    k = lcs_brute(a, b)
    expect = 0.0 if k == 0 else 2 * k / (len(a) + len(b))
    assert rl == pytest.approx(expect, abs=1e-15)


def test_rouge_scores_validation():
    with pytest.raises(InvalidInputError):
        rouge_scores([[1]], [])


def test_ce_diagnostic_identities(rng):
    o = make_oracle(V10, order=1, concentration=0.5, seed=3)
    corpus = list(o.sample(20, 12, rng))
    fwd, rev = ce_diagnostic(o, o, corpus)
    assert fwd == rev
    rows = o.table[[int(t) for x in corpus for t in [1, *x[:-1]]]]
    ent = -np.mean([np.sum(r[r > 0] * np.log(r[r > 0])) for r in rows])
    assert fwd == pytest.approx(ent, abs=1e-12)
    u = ToyLM.zeros(V10, embed_dim=4, context=2, hidden=4, mask_reserved=False)
    assert ce_diagnostic(u, o, corpus)[0] == pytest.approx(math.log(10), abs=1e-12)
    m = ToyLM.create(V10, embed_dim=4, context=2, hidden=4, seed=1)
    f1, r1 = ce_diagnostic(m, m, corpus)
    assert abs(f1 - r1) <= 1e-12


def test_ce_diagnostic_brute_force(rng):
    o = make_oracle(V10, order=1, concentration=0.5, seed=3)
    m = ToyLM.create(V10, embed_dim=4, context=1, hidden=4, seed=2)
    corpus = [list(o.sample(1, 6, rng)[0]) for _ in range(3)]
    from emolab.lm import forward
    from emolab.numerics import softmax

    fwd = rev = 0.0
    n = 0
    for x in corpus:
        for i in range(len(x)):
            prev = x[i - 1] if i else 1
            P = o.table[prev]
            Q = softmax(forward(m, x[:i]))
            fwd -= sum(P[k] * math.log(Q[k]) for k in range(10) if P[k] > 0)
            rev -= sum(Q[k] * math.log(P[k]) for k in range(10) if Q[k] > 0 and P[k] > 0)
            n += 1
    f, r = ce_diagnostic(m, o, corpus)
    assert f == pytest.approx(fwd / n, abs=1e-9)
    if np.isfinite(r):
        assert r == pytest.approx(rev / n, abs=1e-9)


def test_derive_seed_is_stable():
    assert derive_seed(3, 1) == derive_seed(3, 1)
    assert len({derive_seed(3, s) for s in range(6)}) == 6


def test_config_strict_parsing(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"vocab_sise": 10})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"objectives": ["mle", "emd"]})
    p = tmp_path / "c.json"
    p.write_text("{ not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(p)
    cfg = ExperimentConfig.from_dict(SMOKE)
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_shipped_default_config_matches_defaults():
    from importlib.resources import files

    text = files("emolab").joinpath("configs/default.json").read_text()
    assert ExperimentConfig.from_dict(json.loads(text)) == ExperimentConfig()


def test_run_record_roundtrip():
    rec = RunRecord(config={"objective": "emo"}, seeds={"seed": 1}, train_losses=[1.0, 0.5],
                    valid_losses=[1.1, 0.6], valid_nll=[1.1, 0.6], best_epoch=2,
                    metrics={"ppl_oracle": None, "ppl_test": np.float64(3.5)}, wall_clock=0.1)
    back = RunRecord.from_json(rec.to_json())
    assert back.to_dict() == RunRecord.from_json(back.to_json()).to_dict()
    assert back.metrics["ppl_test"] == 3.5
    assert json.loads(RunRecord(config={}, seeds={}, metrics={"x": float("inf")}).to_json())["metrics"]["x"] is None


def test_smoke_experiment(tmp_path):
    cfg = ExperimentConfig.from_dict(SMOKE)
    res = run_oracle_experiment(cfg, [0, 1], tmp_path)
    assert len(res.rows) == 2 * len(cfg.objectives)
    header = (tmp_path / "summary.csv").read_text().splitlines()[0]
    assert header == ",".join(SUMMARY_COLUMNS)
    for rec in res.records:
        assert not rec.errors
        name = f"{rec.config['objective']}-seed{rec.seeds['seed']}.json"
        stored = RunRecord.from_json((tmp_path / "runs" / name).read_text())
        assert stored.to_dict() == RunRecord.from_json(rec.to_json()).to_dict()
    again = run_oracle_experiment(cfg, [0, 1], tmp_path / "again")
    assert summary_csv(again.rows) == summary_csv(res.rows)
    assert (tmp_path / "curves.csv").exists() and (tmp_path / "medians.csv").exists()
    assert [m["objective"] for m in medians(res.rows, cfg.objectives)] == cfg.objectives
