import numpy as np
import pytest

from cclrec.data import load_triples
from cclrec.metrics import gini
from cclrec.simulate import (
    SimConfig,
    estimate_inclusion_probs,
    generate,
    oracle_propensities,
    save_bundle,
)


def exposure_gini(bundle):
    counts = np.bincount(bundle.train.items, minlength=bundle.n)
    return gini(counts)


class TestConfig:
    def test_defaults_valid(self):
        SimConfig().validate()

    def test_negative_skew(self):
        with pytest.raises(ValueError):
            SimConfig(exposure_skew=-1.0).validate()

    def test_infeasible_counts(self):
        with pytest.raises(ValueError):
            SimConfig(n=10, exposures_per_user=8, test_exposures_per_user=3).validate()


class TestGenerate:
    def test_uniform_exposure_is_equitable(self):
        synth = generate(SimConfig(exposure_skew=0.0, seed=0), inclusion_draws=10)
        assert exposure_gini(synth.dataset) < 0.1

    def test_skew_increases_exposure_gini(self):
        flat = generate(SimConfig(exposure_skew=0.0, seed=0), inclusion_draws=10)
        skewed = generate(SimConfig(exposure_skew=3.0, seed=0), inclusion_draws=10)
        assert exposure_gini(skewed.dataset) > exposure_gini(flat.dataset)

    def test_deterministic(self):
        a = generate(SimConfig(m=40, n=30, seed=5,
                               exposures_per_user=6, test_exposures_per_user=4),
                     inclusion_draws=20)
        b = generate(SimConfig(m=40, n=30, seed=5,
                               exposures_per_user=6, test_exposures_per_user=4),
                     inclusion_draws=20)
        assert (a.dataset.train.items == b.dataset.train.items).all()
        assert (a.dataset.test.labels == b.dataset.test.labels).all()
        assert (a.true_preference == b.true_preference).all()
        assert (a.inclusion_probs == b.inclusion_probs).all()

    def test_per_user_train_test_disjoint(self):
        synth = generate(SimConfig(m=30, n=40, seed=2, exposures_per_user=8,
                                   test_exposures_per_user=6), inclusion_draws=10)
        d = synth.dataset
        for u in range(d.m):
            tr = set(d.train.items[d.train.users == u].tolist())
            te = set(d.test.items[d.test.users == u].tolist())
            assert len(tr) == 8 and len(te) == 6
            assert not (tr & te)

    def test_preference_matrix_is_probabilities(self):
        synth = generate(SimConfig(m=20, n=15, seed=1, exposures_per_user=4,
                                   test_exposures_per_user=3), inclusion_draws=10)
        p = synth.true_preference
        assert p.shape == (20, 15)
        assert ((p > 0) & (p < 1)).all()

    def test_test_exposure_independent_of_labels(self):
        # within an item, which users land in the test split must not depend
        # on their preference (exposure is driven by the confounder alone)
        cfg = SimConfig(m=2000, n=100, seed=3, exposures_per_user=20,
                        test_exposures_per_user=10)
        synth = generate(cfg, inclusion_draws=10)
        d = synth.dataset
        exposed = np.zeros((d.m, d.n), dtype=bool)
        exposed[d.test.users, d.test.items] = True
        gaps = []
        for i in range(d.n):
            col = exposed[:, i]
            if 0 < col.sum() < d.m:
                gaps.append(synth.true_preference[col, i].mean()
                            - synth.true_preference[~col, i].mean())
        assert abs(np.mean(gaps)) < 0.005


class TestInclusionProbs:
    def test_sums_to_draw_count(self):
        w = np.array([0.5, 0.3, 0.1, 0.1])
        probs = estimate_inclusion_probs(w, k=2, draws=2000, seed=0)
        assert probs.sum() == pytest.approx(2.0, abs=1e-9)

    def test_uniform_weights(self):
        probs = estimate_inclusion_probs(np.ones(5), k=2, draws=5000, seed=1)
        np.testing.assert_allclose(probs, 0.4, atol=0.03)

    def test_monotone_in_weight(self):
        w = np.array([4.0, 2.0, 1.0, 0.5])
        probs = estimate_inclusion_probs(w, k=2, draws=5000, seed=2)
        assert (np.diff(probs) <= 0).all()

    def test_matches_realized_exposure_rates(self):
        cfg = SimConfig(m=400, n=30, seed=4, exposures_per_user=5,
                        test_exposures_per_user=5)
        synth = generate(cfg, inclusion_draws=2000)
        realized = np.bincount(synth.dataset.train.items, minlength=30) / cfg.m
        np.testing.assert_allclose(synth.inclusion_probs, realized, atol=0.05)


class TestOraclePropensities:
    def test_gathers_per_item_probs(self):
        synth = generate(SimConfig(m=10, n=12, seed=0, exposures_per_user=3,
                                   test_exposures_per_user=2), inclusion_draws=50)
        props = oracle_propensities(synth, synth.dataset.train)
        expected = np.maximum(synth.inclusion_probs[synth.dataset.train.items], 1e-3)
        np.testing.assert_array_equal(props, expected)


class TestSaveBundle:
    def test_round_trips_through_triple_loader(self, tmp_path):
        synth = generate(SimConfig(m=15, n=12, seed=6, exposures_per_user=4,
                                   test_exposures_per_user=3), inclusion_draws=10)
        save_bundle(synth, tmp_path)
        loaded = load_triples(tmp_path / "train.txt", tmp_path / "test.txt",
                              m=15, n=12)
        d = synth.dataset
        # the loader sorts rows by (user, item); compare as triple sets
        def triples(t):
            return sorted(zip(t.users.tolist(), t.items.tolist(), t.labels.tolist()))
        assert triples(loaded.train) == triples(d.train)
        assert triples(loaded.test) == triples(d.test)
        truth = np.load(tmp_path / "ground_truth.npz")
        np.testing.assert_array_equal(truth["true_preference"], synth.true_preference)
