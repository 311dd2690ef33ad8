import numpy as np
import pytest

from formopt.experts import (
    EncoderConfig,
    GatingDecision,
    PointCloud,
    choose_k_emb,
    gate,
    mixture_predict,
    resample,
    train_encoder,
)
from formopt.surrogate import PosteriorPrediction


def blob(part_id, center, n, seed, spread=0.5):
    rng = np.random.default_rng(seed)
    return PointCloud(part_id, center + spread * rng.standard_normal((n, 3)))


class TestPointCloud:
    def test_rejects_wrong_shape(self):
        with pytest.raises(ValueError, match="A"):
            PointCloud("A", np.zeros((4, 2)))

    def test_rejects_nan(self):
        pts = np.zeros((4, 3))
        pts[1, 2] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            PointCloud("A", pts)

    def test_text_round_trip(self, tmp_path):
        cloud = blob("A", np.zeros(3), 10, seed=0)
        cloud.save(tmp_path / "a.xyz")
        loaded = PointCloud.load("A", tmp_path / "a.xyz")
        np.testing.assert_allclose(loaded.points, cloud.points)


class TestResample:
    def test_down_sample_draws_subset(self):
        cloud = blob("A", np.zeros(3), 20, seed=1)
        out = resample(cloud, 8, "down_sample", seed=0)
        assert len(out) == 8
        rows = {tuple(p) for p in cloud.points}
        assert all(tuple(p) in rows for p in out.points)
        # without replacement -> all distinct
        assert len({tuple(p) for p in out.points}) == 8

    def test_down_sample_too_small_errors(self):
        cloud = blob("A", np.zeros(3), 5, seed=1)
        with pytest.raises(ValueError, match="down_sample"):
            resample(cloud, 8, "down_sample")

    def test_up_sample_doubles_until_enough(self):
        cloud = blob("A", np.zeros(3), 3, seed=1)
        out = resample(cloud, 10, "up_sample", seed=0)
        assert len(out) == 10
        rows = {tuple(p) for p in cloud.points}
        assert all(tuple(p) in rows for p in out.points)

    def test_choose_k_emb(self):
        clouds = [blob("A", np.zeros(3), 5, 0), blob("B", np.zeros(3), 9, 1)]
        assert choose_k_emb(clouds, "down_sample") == 5
        assert choose_k_emb(clouds, "up_sample") == 9


class TestEncoder:
    def separable_clouds(self):
        return [
            blob("boxy", np.array([0.0, 0.0, 0.0]), 32, seed=0),
            blob("domed", np.array([10.0, 10.0, 10.0]), 32, seed=1),
        ]

    def test_requires_two_parts(self):
        with pytest.raises(ValueError, match=">= 2"):
            train_encoder([blob("A", np.zeros(3), 8, 0)])

    def test_separable_parts_reach_full_accuracy(self):
        encoder, embeddings = train_encoder(self.separable_clouds())
        assert encoder.training_accuracy == 1.0
        assert set(embeddings) == {"boxy", "domed"}
        assert all(e.shape == (encoder.k_emb,) for e in embeddings.values())

    def test_new_part_routes_to_nearest_geometry(self):
        encoder, embeddings = train_encoder(self.separable_clouds())
        near_boxy = encoder.embed(blob("new", np.array([0.5, 0.0, 0.0]), 40, seed=7))
        decision = gate(near_boxy, embeddings, mode="hard")
        assert decision.selected == [("boxy", 1.0)]

    def test_embedding_permutation_invariant(self):
        encoder, _ = train_encoder(self.separable_clouds())
        cloud = blob("new", np.zeros(3), encoder.k_points, seed=3)
        rng = np.random.default_rng(0)
        permuted = PointCloud("new", cloud.points[rng.permutation(len(cloud))])
        a = encoder.embed(cloud)
        b = encoder.embed(permuted)
        # global max pooling: the embedding must be exactly order-free
        assert (np.sort(a) == np.sort(b)).all()
        assert (a == b).all()

    def test_training_is_seeded(self):
        cfg = EncoderConfig(seed=5, max_steps=20)
        _, e1 = train_encoder(self.separable_clouds(), cfg)
        _, e2 = train_encoder(self.separable_clouds(), cfg)
        for part in e1:
            assert (e1[part] == e2[part]).all()

    def test_inseparable_parts_warn(self):
        clouds = [
            blob("A", np.zeros(3), 16, seed=0, spread=1.0),
            blob("B", np.zeros(3), 16, seed=0, spread=1.0),  # identical stats
        ]
        cfg = EncoderConfig(max_steps=1)
        with pytest.warns(UserWarning, match="accuracy"):
            train_encoder(clouds, cfg)


class TestGate:
    def embeddings(self, **dists):
        # place experts on separate axes so distances to the origin are exact
        out = {}
        for i, (name, d) in enumerate(sorted(dists.items())):
            e = np.zeros(len(dists))
            e[i] = d
            out[name] = e
        return out

    def test_equal_distances_split_evenly(self):
        decision = gate(np.zeros(2), self.embeddings(A=1.0, B=1.0))
        assert decision.weights == pytest.approx({"A": 0.5, "B": 0.5})

    def test_inverse_distance_weighting(self):
        decision = gate(np.zeros(2), self.embeddings(A=1.0, B=3.0))
        assert decision.weights == pytest.approx({"A": 0.75, "B": 0.25})

    def test_far_expert_dropped_at_cutoff(self):
        # w_B = (1/20)/(1 + 1/20) ~ 0.048 <= 0.1 -> dropped, A renormalized
        decision = gate(np.zeros(2), self.embeddings(A=1.0, B=20.0))
        assert decision.weights == {"A": 1.0}

    def test_top_expert_survives_even_below_cutoff(self):
        emb = self.embeddings(**{c: 1.0 for c in "ABCDEFGHIJKL"})
        decision = gate(np.zeros(12), emb, cutoff=0.1)
        # every weight is 1/12 <= 0.1, but the argmax must be kept
        assert len(decision.selected) >= 1
        assert sum(decision.weights.values()) == pytest.approx(1.0)

    def test_exact_match_short_circuits(self):
        emb = self.embeddings(A=1.0, B=2.0)
        decision = gate(emb["B"], emb)
        assert decision.weights == {"B": 1.0}

    def test_hard_mode_matches_argmin_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            k = int(rng.integers(2, 8))
            emb = {f"part{i}": rng.normal(size=4) for i in range(k)}
            x = rng.normal(size=4)
            decision = gate(x, emb, mode="hard")
            expected = min(emb, key=lambda a: (np.linalg.norm(x - emb[a]), a))
            assert decision.selected == [(expected, 1.0)]

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            emb = {f"p{i}": rng.normal(size=3) for i in range(5)}
            decision = gate(rng.normal(size=3), emb)
            assert sum(decision.weights.values()) == pytest.approx(1.0)

    def test_no_experts_errors(self):
        with pytest.raises(ValueError, match="no expert"):
            gate(np.zeros(2), {})


class _StubExpert:
    def __init__(self, mean, variance):
        self.mean = np.asarray(mean, float)
        self.variance = np.asarray(variance, float)

    def predict(self, candidates, full_covariance=False, batch_size=512):
        return PosteriorPrediction(mean=self.mean.copy(), variance=self.variance.copy())


def even_decision(*part_ids):
    w = 1.0 / len(part_ids)
    return GatingDecision(mode="soft", selected=[(p, w) for p in part_ids], distances={})


class TestMixture:
    def test_two_expert_fixture(self):
        # experts at mu 0 and 2, unit variance, equal weight:
        # mu = 1, var = 0.5*(1+0) + 0.5*(1+4) - 1 = 2
        experts = {
            "A": _StubExpert([[0.0]], [[1.0]]),
            "B": _StubExpert([[2.0]], [[1.0]]),
        }
        pred = mixture_predict(even_decision("A", "B"), experts, candidates=None)
        assert pred.mean[0, 0] == pytest.approx(1.0)
        assert pred.variance[0, 0] == pytest.approx(2.0)

    def test_single_expert_passthrough(self):
        experts = {"A": _StubExpert([[3.0, 4.0]], [[0.5, 0.25]])}
        decision = GatingDecision(mode="hard", selected=[("A", 1.0)], distances={})
        pred = mixture_predict(decision, experts, candidates=None)
        np.testing.assert_allclose(pred.mean, [[3.0, 4.0]])
        np.testing.assert_allclose(pred.variance, [[0.5, 0.25]])

    def test_missing_expert_errors(self):
        with pytest.raises(ValueError, match="ghost"):
            mixture_predict(even_decision("ghost"), {}, candidates=None)

    def test_disagreement_inflates_variance(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            k = int(rng.integers(2, 5))
            w = rng.dirichlet(np.ones(k))
            mus = rng.normal(size=(k, 1, 1))
            vars_ = rng.uniform(0.01, 2.0, size=(k, 1, 1))
            experts = {
                f"p{i}": _StubExpert(mus[i], vars_[i]) for i in range(k)
            }
            decision = GatingDecision(
                mode="soft",
                selected=[(f"p{i}", float(w[i])) for i in range(k)],
                distances={},
            )
            pred = mixture_predict(decision, experts, candidates=None)
            avg_var = float((w[:, None, None] * vars_).sum())
            assert pred.variance[0, 0] >= avg_var - 1e-9
