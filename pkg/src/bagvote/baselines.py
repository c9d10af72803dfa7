"""Negative-mining baselines recast as similarity voting.

All three baselines score positive-bag instances using only their
similarity to the definitely-negative instances, with the unnormalized
Gaussian kernel as the similarity:

* ``negmin``: one vote per negative bag, from that bag's most similar
  instance; the score is minus the sum of those maxima.  Each positive
  bag's top-scoring instance is the selected object candidate.
* ``crane``: each negative instance penalizes (by a constant 1) the
  positive-bag instance(s) it is most similar to; ties all get hit.
* ``negvote``: minus the similarity sum over every negative instance.

These methods rank but do not classify; ``top_k_select`` converts a
ranking into labels with a fixed detection budget so methods can be
compared at equal detection counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Bag, Dataset, Instance
from .errors import ValidationError
from .kernels import kernel_matrix

__all__ = [
    "BaselineScores",
    "negmin_score",
    "negmin_scores",
    "negmin_select",
    "negmin_selections",
    "crane_scores",
    "negvote_scores",
    "top_k_select",
]


@dataclass(eq=False)
class BaselineScores:
    """Scores keyed by (positive bag id, instance id), in dataset order."""

    method: str
    index: tuple[tuple[str, str], ...]
    scores: np.ndarray

    def score_map(self) -> dict:
        return {key: float(s) for key, s in zip(self.index, self.scores)}


def _query_matrix(query) -> np.ndarray:
    qv = query.features if isinstance(query, Instance) else np.asarray(query, float)
    return qv.reshape(1, -1)


def _negmin_from_sim(sim: np.ndarray, neg_bag_slices) -> np.ndarray:
    """Closed form of the per-bag one-vote minimization.

    Choosing exactly one negative instance per bag to minimize the summed
    negated similarities picks each bag's maximum, so the score is minus
    the sum of per-bag maxima.
    """
    total = np.zeros(sim.shape[0])
    for start, stop in neg_bag_slices:
        total += sim[:, start:stop].max(axis=1)
    return -total


def negmin_score(query, dataset: Dataset, sigma: float) -> float:
    """Score one instance against the nearest instance of every negative bag."""
    dataset.require_annotatable()
    sim = kernel_matrix(_query_matrix(query), dataset.neg_matrix, sigma).values
    return float(_negmin_from_sim(sim, dataset.neg_bag_slices)[0])


def negmin_scores(dataset: Dataset, sigma: float) -> BaselineScores:
    """Batch negmin scores for every positive-bag instance."""
    dataset.require_annotatable()
    sim = kernel_matrix(dataset.pos_matrix, dataset.neg_matrix, sigma).values
    return BaselineScores(
        method="negmin",
        index=dataset.pos_index,
        scores=_negmin_from_sim(sim, dataset.neg_bag_slices),
    )


def negmin_select(bag: Bag, dataset: Dataset, sigma: float) -> str:
    """Id of the bag's top-scoring instance; first occurrence wins ties."""
    if not bag.is_positive or len(bag.instances) == 0:
        raise ValidationError("negmin selects from a non-empty positive bag")
    sim = kernel_matrix(
        [inst for inst in bag.instances], dataset.neg_matrix, sigma
    ).values
    scores = _negmin_from_sim(sim, dataset.neg_bag_slices)
    return bag.instances[int(np.argmax(scores))].id


def negmin_selections(dataset: Dataset, sigma: float) -> dict:
    """Hard labels from per-bag argmax selection: one +1 per positive bag."""
    labels = {}
    for bag in dataset.positive_bags:
        chosen = negmin_select(bag, dataset, sigma)
        for inst in bag.instances:
            labels[(bag.id, inst.id)] = 1 if inst.id == chosen else -1
    return labels


def _crane_from_sim(sim_neg_pos: np.ndarray) -> np.ndarray:
    """Accumulate -1 from each negative-instance row onto its row-max columns."""
    n_pos = sim_neg_pos.shape[1]
    scores = np.zeros(n_pos)
    if sim_neg_pos.shape[0] == 0 or n_pos == 0:
        return scores
    row_max = sim_neg_pos.max(axis=1)
    hits = sim_neg_pos >= row_max[:, None]
    return -hits.sum(axis=0).astype(np.float64)


def crane_scores(dataset: Dataset, sigma: float) -> BaselineScores:
    """Nearest-positive penalty votes from every negative instance.

    For each negative instance the threshold is its maximum similarity to
    any positive-bag instance; every positive-bag instance reaching that
    maximum (ties included) receives a -1 vote.  Unpenalized instances
    keep score 0.
    """
    dataset.require_annotatable()
    sim = kernel_matrix(dataset.neg_matrix, dataset.pos_matrix, sigma).values
    return BaselineScores(
        method="crane", index=dataset.pos_index, scores=_crane_from_sim(sim)
    )


def negvote_scores(dataset: Dataset, sigma: float) -> BaselineScores:
    """Aggregate vote of all negative instances: minus the similarity sum."""
    dataset.require_annotatable()
    sim = kernel_matrix(dataset.pos_matrix, dataset.neg_matrix, sigma).values
    return BaselineScores(
        method="negvote", index=dataset.pos_index, scores=-sim.sum(axis=1)
    )


def top_k_select(scores: BaselineScores, k: int) -> dict:
    """Label the k best-scored instances +1, the rest -1.

    Ties at the cut are broken by (bag id, instance id) lexicographic
    order so the selection is reproducible.
    """
    n = len(scores.index)
    if k < 0 or k > n:
        raise ValidationError(f"top-k count {k} out of range [0, {n}]")
    order = sorted(
        range(n), key=lambda i: (-scores.scores[i], scores.index[i])
    )
    selected = set(order[:k])
    return {
        key: (1 if i in selected else -1) for i, key in enumerate(scores.index)
    }
