"""Subset sampler uniformity and the conditioning simplex contract."""

import numpy as np
import pytest
from scipy import stats

from crossgen import toydata as td
from crossgen.bridging import PromptEncoders, SharedEmbedding
from crossgen.conditioning import (ConditioningVector, SubsetSampler, combine,
                                   draw_conditioning, draw_conditioning_batch,
                                   sample_subset)
from crossgen.rng import stream


def embeddings_of(vectors, tags=None):
    tags = tags or [f"m{i}" for i in range(len(vectors))]
    return [SharedEmbedding(np.asarray(v, dtype=np.float64), t)
            for v, t in zip(vectors, tags)]


def test_sampler_requires_nonempty():
    with pytest.raises(ValueError):
        SubsetSampler([], stream(0, "x"))


def test_singleton_always_returned():
    sampler = SubsetSampler(["report"], stream(1, "s"))
    for _ in range(50):
        assert sample_subset(sampler) == ("report",)


def test_k2_uniform_over_three_subsets():
    sampler = SubsetSampler(["view_b", "report"], stream(2, "s"))
    n = 100_000
    counts = {}
    for _ in range(n):
        s = sample_subset(sampler)
        counts[s] = counts.get(s, 0) + 1
    assert len(counts) == 3
    freqs = np.array([c / n for c in counts.values()])
    np.testing.assert_allclose(freqs, 1.0 / 3, atol=0.01)
    chi2 = sum((c - n / 3) ** 2 / (n / 3) for c in counts.values())
    assert stats.chi2.sf(chi2, df=2) > 0.001


@pytest.mark.parametrize("k", [1, 2, 3])
def test_uniformity_chi_square_all_k(k):
    sampler = SubsetSampler([f"m{i}" for i in range(k)], stream(3, f"s{k}"))
    n = 30_000
    counts = {}
    for _ in range(n):
        s = sample_subset(sampler)
        counts[s] = counts.get(s, 0) + 1
    n_subsets = 2 ** k - 1
    assert len(counts) == n_subsets
    if n_subsets > 1:
        chi2 = sum((c - n / n_subsets) ** 2 / (n / n_subsets) for c in counts.values())
        assert stats.chi2.sf(chi2, df=n_subsets - 1) > 0.001


def test_sampler_deterministic_sequence():
    s1 = SubsetSampler(["a", "b"], stream(7, "cond"))
    s2 = SubsetSampler(["a", "b"], stream(7, "cond"))
    seq1 = [sample_subset(s1) for _ in range(1000)]
    seq2 = [sample_subset(s2) for _ in range(1000)]
    assert seq1 == seq2


def test_combine_singleton_exact():
    e = embeddings_of([[0.3, -0.4, 0.5]])
    cv = combine(e)
    np.testing.assert_array_equal(cv.omega, e[0].vector)
    assert cv.subset == ("m0",)
    np.testing.assert_array_equal(cv.weights, [1.0])


def test_combine_mean_of_two():
    e = embeddings_of([[1.0, 0.0], [0.0, 1.0]])
    cv = combine(e, weights=[0.5, 0.5])
    np.testing.assert_allclose(cv.omega, [0.5, 0.5], atol=0)


def test_combine_rejects_bad_weights():
    e = embeddings_of([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        combine(e, weights=[0.8, 0.1])
    with pytest.raises(ValueError):
        combine(e, weights=[1.5, -0.5])
    with pytest.raises(ValueError):
        combine([])


def test_combine_simplex_invariants_random():
    rng = np.random.default_rng(4)
    for _ in range(10_000):
        k = int(rng.integers(1, 4))
        vecs = rng.normal(size=(k, 8))
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        w = rng.dirichlet(np.ones(k))
        cv = combine(embeddings_of(vecs), weights=w)
        assert abs(cv.weights.sum() - 1.0) <= 1e-12
        assert np.all(cv.weights >= 0)
        np.testing.assert_allclose(cv.omega, w @ vecs, atol=1e-12)
        # convex hull of the unit ball
        assert np.linalg.norm(cv.omega) <= 1.0 + 1e-12


def test_draw_conditioning_singleton_equals_encode():
    ds = td.generate_dataset(seed=5, n=12, positive_rates=[0.5] * 5)
    enc = PromptEncoders(dim=8, hidden=16, seed=5)
    sampler = SubsetSampler(["report"], stream(5, "draw"))
    rec = ds.records[0]
    cv = draw_conditioning(sampler, enc, rec, target="view_a")
    np.testing.assert_array_equal(cv.omega, enc.encode("report", rec.report).vector)
    assert cv.subset == ("report",)


def test_draw_conditioning_rejects_target_in_available():
    ds = td.generate_dataset(seed=5, n=12)
    enc = PromptEncoders(dim=8, hidden=16, seed=5)
    sampler = SubsetSampler(["view_a", "report"], stream(5, "draw"))
    with pytest.raises(ValueError):
        draw_conditioning(sampler, enc, ds.records[0], target="view_a")


def test_generation_task_shares_at_k2():
    # each specific prompt configuration appears ~1/3 of the time
    sampler = SubsetSampler(["view_b", "report"], stream(6, "tasks"))
    counts = {("view_b",): 0, ("report",): 0, ("view_b", "report"): 0}
    n = 30_000
    for _ in range(n):
        counts[sample_subset(sampler)] += 1
    for c in counts.values():
        assert abs(c / n - 1.0 / 3) < 0.02


def test_draw_conditioning_batch_matches_invariants():
    ds = td.generate_dataset(seed=7, n=20, positive_rates=[0.5] * 5)
    enc = PromptEncoders(dim=8, hidden=16, seed=7)
    sampler = SubsetSampler(["view_b", "report"], stream(7, "batch"))
    omega, provenance = draw_conditioning_batch(sampler, enc, ds.records, "view_a")
    assert omega.shape == (20, 8)
    for i, cv in enumerate(provenance):
        assert isinstance(cv, ConditioningVector)
        assert cv.subset
        np.testing.assert_array_equal(omega[i], cv.omega)
        assert abs(cv.weights.sum() - 1.0) <= 1e-12


def test_dirichlet_mode_weights_on_simplex():
    rng = stream(8, "dirichlet")
    sampler = SubsetSampler(["a", "b", "c"], rng, weight_mode="dirichlet")
    for _ in range(200):
        n = len(sampler.sample_subset())
        w = sampler.sample_weights(n)
        assert abs(w.sum() - 1.0) < 1e-9
        assert np.all(w >= 0)
