import functools
import tempfile
from pathlib import Path

import numpy as np
import pytest

from bagvote.data import load_dataset, write_dataset
from bagvote.synth import SynthConfig, generate
from bagvote.ekde import (
    EkdeConfig,
    ScoreTable,
    SoftLabels,
    class_conditionals,
    class_priors,
    decide,
    decide_all,
    margin_table,
    run_ekde,
    update_soft_labels,
    voting_score,
    voting_scores,
)
from bagvote.errors import DegenerateClassError, ValidationError
from bagvote.kernels import KernelConfig

import oracles
from conftest import make_dataset, random_dataset, random_soft_labels


def soft(dataset, values):
    return SoftLabels(dataset.pos_index, np.asarray(values, dtype=np.float64))


class TestSoftLabels:
    def test_ones_cover_positive_instances(self):
        ds = make_dataset([[[0.0], [1.0]], [[2.0]]], [[[3.0]]])
        w = SoftLabels.ones(ds)
        assert w.index == ds.pos_index
        assert w.values.tolist() == [1.0, 1.0, 1.0]

    def test_rejects_out_of_range(self):
        ds = make_dataset([[[0.0]]], [[[1.0]]])
        with pytest.raises(ValidationError):
            soft(ds, [1.5])
        with pytest.raises(ValidationError):
            soft(ds, [-0.1])

    def test_rejects_wrong_length(self):
        ds = make_dataset([[[0.0]]], [[[1.0]]])
        with pytest.raises(ValidationError):
            soft(ds, [0.5, 0.5])


class TestClassPriors:
    def test_worked_example(self):
        ds = make_dataset([[[0.0], [1.0]]], [[[2.0], [3.0], [4.0]]])
        priors = class_priors(ds, soft(ds, [1.0, 0.5]))
        assert priors.p1 == pytest.approx(0.3)
        assert priors.pm1 == pytest.approx(0.7)

    def test_all_zero(self):
        ds = make_dataset([[[0.0], [1.0]]], [[[2.0], [3.0], [4.0]]])
        priors = class_priors(ds, soft(ds, [0.0, 0.0]))
        assert priors.p1 == 0.0
        assert priors.pm1 == 1.0

    def test_counts_only_when_all_one(self):
        ds = make_dataset([[[0.0], [1.0], [2.0]]], [[[3.0], [4.0], [5.0]]])
        priors = class_priors(ds, SoftLabels.ones(ds))
        assert priors.p1 == pytest.approx(0.5)

    def test_normalization_invariant(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            ds = random_dataset(rng)
            w = random_soft_labels(rng, ds)
            priors = class_priors(ds, w)
            assert priors.p1 + priors.pm1 == pytest.approx(1.0, abs=1e-12)


class TestClassConditionals:
    def test_reduces_to_plain_kde_when_all_one(self):
        rng = np.random.default_rng(1)
        kernel = KernelConfig(0.7, 1.3, normalized=True)
        for _ in range(10):
            ds = random_dataset(rng)
            query = rng.normal(size=4)
            pp, pn = class_conditionals(query, ds, SoftLabels.ones(ds), kernel)
            opp, opn = oracles.plain_kde(query, ds, 0.7, 1.3, normalized=True)
            assert pp == pytest.approx(opp, rel=1e-12)
            assert pn == pytest.approx(opn, rel=1e-12)

    def test_peak_density_single_positive(self):
        ds = make_dataset([[[0.0]]], [[[100.0]]])
        kernel = KernelConfig(1.0, 1.0, normalized=True)
        pp, _ = class_conditionals(np.array([0.0]), ds, SoftLabels.ones(ds), kernel)
        assert pp == pytest.approx((2.0 * np.pi) ** -0.5)

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(2)
        kernel = KernelConfig(0.9, 0.6, normalized=True)
        for _ in range(10):
            ds = random_dataset(rng, max_bags=3, max_instances=3)
            w = random_soft_labels(rng, ds)
            query = rng.normal(size=4)
            pp, pn = class_conditionals(query, ds, w, kernel)
            opp, opn = oracles.soft_conditionals(
                query, ds, w.as_dict(), 0.9, 0.6, normalized=True
            )
            assert pp == pytest.approx(opp, rel=1e-12)
            assert pn == pytest.approx(opn, rel=1e-12)

    def test_degenerate_positive_mass(self):
        ds = make_dataset([[[0.0]]], [[[1.0]]])
        kernel = KernelConfig(1.0, 1.0)
        with pytest.raises(DegenerateClassError, match="positive class"):
            class_conditionals(np.array([0.0]), ds, soft(ds, [0.0]), kernel)

    def test_convex_combination_bound(self):
        rng = np.random.default_rng(3)
        kernel = KernelConfig(0.8, 0.8, normalized=True)
        for _ in range(10):
            ds = random_dataset(rng)
            w = random_soft_labels(rng, ds)
            if w.values.sum() < 1e-6:
                continue
            query = rng.normal(size=4)
            pp, pn = class_conditionals(query, ds, w, kernel)
            from bagvote.kernels import gaussian_kernel

            max_pos = max(
                gaussian_kernel(query, inst.features, 0.8, True)
                for bag in ds.positive_bags
                for inst in bag.instances
            )
            assert pp <= max_pos + 1e-15


class TestUpdateSoftLabels:
    def test_balanced_posterior_is_half(self):
        # One positive and one negative instance at the same point: at
        # w = 1 the two class masses at that point are equal.
        ds = make_dataset([[[0.0, 0.0]]], [[[0.0, 0.0]]])
        kernel = KernelConfig(1.0, 1.0, normalized=True)
        w2 = update_soft_labels(ds, SoftLabels.ones(ds), kernel)
        assert w2.values[0] == pytest.approx(0.5, abs=1e-12)

    def test_zero_negative_evidence_gives_one(self):
        # Negative instance so far away the kernel underflows to zero.
        ds = make_dataset([[[0.0]]], [[[1e6]]])
        kernel = KernelConfig(1.0, 1.0, normalized=True)
        w2 = update_soft_labels(ds, SoftLabels.ones(ds), kernel)
        assert w2.values[0] == 1.0

    def test_both_masses_vanish_gives_half(self):
        # Bandwidths so wide the density constants underflow to zero:
        # the posterior is 0/0 at every instance and the guard yields 1/2.
        ds = make_dataset([[[0.0], [1.0]]], [[[2.0]]])
        kernel = KernelConfig(1e200, 1e200, normalized=True)
        w2 = update_soft_labels(ds, SoftLabels.ones(ds), kernel)
        assert w2.values.tolist() == [0.5, 0.5]

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(4)
        kernel = KernelConfig(1.1, 0.7, normalized=True)
        for _ in range(10):
            ds = random_dataset(rng, max_bags=3, max_instances=4)
            w = random_soft_labels(rng, ds)
            if w.values.sum() < 1e-6:
                continue
            w2 = update_soft_labels(ds, w, kernel)
            expected = oracles.posterior_update(ds, w.as_dict(), 1.1, 0.7, True)
            for key, value in w2.as_dict().items():
                assert value == pytest.approx(expected[key], rel=1e-12, abs=1e-15)

    def test_range_preserved(self):
        rng = np.random.default_rng(5)
        kernel = KernelConfig(0.5, 2.0, normalized=True)
        for _ in range(25):
            ds = random_dataset(rng)
            w = random_soft_labels(rng, ds)
            if w.values.sum() < 1e-6:
                continue
            w2 = update_soft_labels(ds, w, kernel)
            assert np.all(w2.values >= 0.0)
            assert np.all(w2.values <= 1.0)


class TestVotingScore:
    def test_two_instance_example(self):
        ds = make_dataset([[[0.0, 0.0]]], [[[1.0, 1.0]]])
        kernel = KernelConfig(1.0, 1.0, normalized=False)
        score = voting_score(np.array([0.0, 0.0]), ds, SoftLabels.ones(ds), kernel)
        expected = 1.0 - np.exp(-1.0)
        assert score == pytest.approx(expected, rel=1e-12)
        assert score > 0

    def test_all_zero_soft_labels_vote_against(self):
        rng = np.random.default_rng(6)
        ds = random_dataset(rng, max_bags=3, max_instances=3)
        kernel = KernelConfig(1.0, 1.0, normalized=False)
        w = soft(ds, np.zeros(ds.n_positive_instances))
        for _ in range(5):
            query = rng.normal(size=4)
            score = voting_score(query, ds, w, kernel)
            expected = -sum(
                oracles.gauss(query, inst.features, 1.0)
                for bag in ds.bags()
                for inst in bag.instances
            )
            assert score == pytest.approx(expected, rel=1e-10)
            assert score < 0

    def test_equivalence_with_direct_votes(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            ds = random_dataset(rng, max_bags=2, max_instances=4)
            w = random_soft_labels(rng, ds)
            sigma = float(rng.uniform(0.3, 2.0))
            normalized = bool(rng.integers(0, 2))
            kernel = KernelConfig(sigma, sigma, normalized=normalized)
            query = rng.normal(size=4)
            fast = voting_score(query, ds, w, kernel)
            slow = oracles.direct_vote_score(query, ds, w.as_dict(), sigma, normalized)
            assert fast == pytest.approx(slow, rel=1e-10, abs=1e-12)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(8)
        ds = random_dataset(rng)
        w = random_soft_labels(rng, ds)
        kernel = KernelConfig(0.9, 1.4, normalized=True)
        queries = rng.normal(size=(6, 4))
        batch = voting_scores(queries, ds, w, kernel)
        for i in range(6):
            assert batch[i] == pytest.approx(voting_score(queries[i], ds, w, kernel))


class TestDecide:
    def test_positive(self):
        assert decide(0.3) == 1

    def test_negative(self):
        assert decide(-0.3) == -1

    def test_zero_is_background(self):
        assert decide(0.0) == -1

    def test_rejects_non_finite(self):
        for bad in (float("nan"), float("inf"), float("-inf")):
            with pytest.raises(ValidationError):
                decide(bad)
        with pytest.raises(ValidationError):
            decide_all(np.array([0.0, np.nan]))


@functools.lru_cache(maxsize=1)
def two_cluster_gen():
    """Small two-cluster dataset routed through the normalize-on-load path
    the CLI uses; (1.0, 0.1) bandwidths suit the normalized scale."""
    config = SynthConfig(dimension=5, n_pos_bags=4, n_neg_bags=4, bag_size=6,
                         witness_rate=0.34, separation=8.0, seed=3)
    gen = generate(config)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "bench.json"
        write_dataset(gen.dataset, path)
        gen.dataset = load_dataset(path, normalize=True)
    return gen


class TestRunEkde:
    def bench_dataset(self):
        return two_cluster_gen()

    def test_huge_epsilon_one_iteration(self):
        result = run_ekde(
            self.bench_dataset().dataset,
            EkdeConfig(kernel=KernelConfig(1.0, 0.1), epsilon=2.0),
        )
        assert result.iterations == 1
        assert result.converged

    def test_isolated_witnesses_labeled_positive(self):
        # Witness instances sit 10+ sigma away from every negative.
        rng = np.random.default_rng(9)
        witness = np.array([50.0, 50.0])
        pos_bags = []
        for _ in range(3):
            bag = [witness + rng.normal(scale=0.01, size=2)]
            bag += list(rng.normal(size=(2, 2)))
            pos_bags.append(bag)
        neg_bags = [list(rng.normal(size=(3, 2))) for _ in range(3)]
        ds = make_dataset(pos_bags, neg_bags)
        result = run_ekde(ds, EkdeConfig(kernel=KernelConfig(1.0, 1.0)))
        labels = result.score_table.label_map()
        for bag_id, inst_id in ds.pos_index:
            expected = 1 if inst_id == "x0" else -1
            assert labels[(bag_id, inst_id)] == expected

    def test_two_cluster_accuracy(self):
        gen = self.bench_dataset()
        result = run_ekde(gen.dataset, EkdeConfig(kernel=KernelConfig(1.0, 0.1)))
        labels = result.score_table.label_map()
        acc = np.mean(
            [(1 if gen.gt[key] else -1) == lab for key, lab in labels.items()]
        )
        assert result.converged
        assert acc >= 0.95

    def test_fixed_point_consistency(self):
        gen = self.bench_dataset()
        config = EkdeConfig(kernel=KernelConfig(1.0, 0.1))
        first = run_ekde(gen.dataset, config)
        assert first.converged
        again = run_ekde(gen.dataset, config, initial_w=first.soft_labels)
        assert again.iterations == 1
        assert again.converged

    def test_history_within_bounds(self):
        gen = self.bench_dataset()
        result = run_ekde(
            gen.dataset,
            EkdeConfig(kernel=KernelConfig(1.0, 0.1)),
            record_history=True,
        )
        assert len(result.w_history) == result.iterations
        for snapshot in result.w_history:
            assert np.all(snapshot >= 0.0)
            assert np.all(snapshot <= 1.0)

    def test_bitwise_deterministic(self):
        gen = self.bench_dataset()
        config = EkdeConfig(kernel=KernelConfig(1.0, 0.1))
        a = run_ekde(gen.dataset, config)
        b = run_ekde(gen.dataset, config)
        assert (a.soft_labels.values == b.soft_labels.values).all()
        assert (a.score_table.scores == b.score_table.scores).all()

    def test_degenerate_collapse_reports_iteration(self):
        # A very wide positive bandwidth starves the positive class: its
        # density constant underflows and the soft labels die out.
        gen = self.bench_dataset()
        with pytest.raises(DegenerateClassError) as exc_info:
            run_ekde(gen.dataset, EkdeConfig(kernel=KernelConfig(100.0, 0.1)))
        assert exc_info.value.iteration is not None
        assert exc_info.value.iteration >= 1

    def test_label_decision_consistency(self):
        gen = self.bench_dataset()
        result = run_ekde(gen.dataset, EkdeConfig(kernel=KernelConfig(1.0, 0.1)))
        table = result.score_table
        for score, label in zip(table.scores, table.labels):
            assert label == decide(float(score))

    def test_requires_both_classes(self):
        ds = make_dataset([[[0.0], [1.0]]], [])
        with pytest.raises(ValidationError):
            run_ekde(ds, EkdeConfig(kernel=KernelConfig(1.0, 1.0)))


class TestMarginTable:
    def test_margins_bounded_and_sign_consistent(self):
        rng = np.random.default_rng(10)
        ds = random_dataset(rng)
        w = random_soft_labels(rng, ds)
        if w.values.sum() < 1e-6:
            w = SoftLabels.ones(ds)
        kernel = KernelConfig(0.8, 1.2, normalized=True)
        margins = margin_table(ds, w, kernel)
        scores = voting_scores(ds.pos_matrix, ds, w, kernel)
        assert np.all(margins.scores >= -1.0)
        assert np.all(margins.scores <= 1.0)
        assert (np.sign(margins.scores) == np.sign(scores)).all()
        assert (margins.labels == ScoreTable.from_scores(ds.pos_index, scores).labels).all()


class TestEkdeConfig:
    def test_validation(self):
        kernel = KernelConfig(1.0, 1.0)
        with pytest.raises(ValidationError):
            EkdeConfig(kernel=kernel, epsilon=0.0)
        with pytest.raises(ValidationError):
            EkdeConfig(kernel=kernel, max_iter=0)
