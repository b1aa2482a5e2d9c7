import json
import math
import os

import numpy as np
import pytest

import sar_prompt as sp

FIXTURES = os.environ.get(
    "SAR_FIXTURE_DIR", os.path.join(os.path.dirname(__file__), "..", "..", "fixtures")
)


def three():
    s = 1 / math.sqrt(2)
    return np.array([[1.0, 0.0], [0.0, 1.0], [s, s]])


def test_worked_distribution():
    p = sp.full_distribution(three(), tau=1.0)
    assert p.shape == (3, 3)
    assert np.allclose(np.diag(p), 0.0)
    assert abs(p[0, 1] - 0.3302) < 1e-4
    assert abs(p[0, 2] - 0.6698) < 1e-4
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_sampled_matches_full_when_k_is_m_minus_one():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(6, 4))
    fam = sp.sample_index_family(6, 5, seed=3)
    s = sp.sampled_distribution(v, fam, tau=0.2)
    full = sp.full_distribution(v, tau=0.2)
    for i, row in enumerate(fam):
        assert np.allclose(s[i], full[i, row], atol=1e-12)


def test_kl_example_and_errors():
    assert abs(sp.kl_rows(np.array([[0.5, 0.5]]), np.array([[0.9, 0.1]])) - 0.5108) < 1e-3
    with pytest.raises(ValueError, match="K exceeds M-1"):
        sp.sample_index_family(210, 400, seed=1)


def test_rank_disagreements_identity():
    c = sp.cosine_matrix(np.random.default_rng(1).normal(size=(7, 3)))
    assert sp.rank_disagreements(c, c) == 0
    assert abs(sp.harmonic_mean(80, 60) - 68.5714) < 1e-3


def test_gradcheck_passes():
    errs = sp.gradcheck(1)
    assert "total_loss" in errs
    assert max(errs.values()) < 1e-4


def test_analyze_fixture():
    path = os.path.join(FIXTURES, "hand3.json")
    rep = sp.analyze(path, path, tau=1.0)
    assert rep["rank_disagreements"] == 0
    assert max(abs(r["kl"]) for r in rep["rows"]) < 1e-12


def test_short_training_is_deterministic():
    a = sp.train_synthetic(seed=2, lam=1.0, epochs=3)
    b = sp.train_synthetic(seed=2, lam=1.0, epochs=3)
    assert a["report_json"] == b["report_json"]
    assert np.array_equal(a["prompts"], b["prompts"])
    assert a["prompts"].shape == (4, 48)
    assert len(json.loads(a["report_json"])["epochs"]) == 3
    assert 0.0 <= a["new_acc"] <= 100.0
