"""Soft-label voting core: class densities, priors, the fixed-point
iteration over instance soft labels, and the signed voting score.

Every instance in a positive bag carries a soft label ``w`` in [0, 1] --
its probability of being a true object instance.  Class-conditional
densities are kernel density estimates taken in expectation over those
uncertain labels: positive-bag instances contribute ``w`` of their kernel
mass to the positive class and ``1 - w`` to the negative class, while
negative-bag instances contribute wholly to the negative class.  Class
priors are the matching soft instance-count fractions.

The densities determine the soft labels through the Bayes posterior, and
the soft labels determine the densities, so annotation iterates the two
until the labels stop moving.  The final score of an instance is the
posterior-mass difference

    f(x) = N * [ p(x|+1) p(+1) - p(x|-1) p(-1) ]

whose sign is the predicted label.  With a single bandwidth this equals
the direct similarity-weighted vote sum over all instances, where each
instance votes for its own (soft) label with its kernel similarity as
magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Instance
from .errors import DegenerateClassError, ValidationError
from .kernels import KernelConfig, kernel_matrix

__all__ = [
    "SoftLabels",
    "Priors",
    "ScoreTable",
    "EkdeConfig",
    "EkdeResult",
    "class_conditionals",
    "class_priors",
    "update_soft_labels",
    "voting_score",
    "voting_scores",
    "posterior_margins",
    "margin_table",
    "decide",
    "run_ekde",
]


@dataclass(eq=False)
class SoftLabels:
    """Per-instance soft labels for every positive-bag instance.

    ``index`` lists ``(bag id, instance id)`` pairs in dataset order and
    ``values`` is the aligned float array, all entries in [0, 1].
    """

    index: tuple[tuple[str, str], ...]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.index),):
            raise ValidationError(
                f"soft labels shape {self.values.shape} does not match "
                f"{len(self.index)} indexed instances"
            )
        if self.values.size and (
            self.values.min() < 0.0 or self.values.max() > 1.0
        ):
            raise ValidationError("soft labels must lie in [0, 1]")

    @classmethod
    def ones(cls, dataset: Dataset) -> "SoftLabels":
        """The initialization: every positive-bag instance starts at 1."""
        return cls(dataset.pos_index, np.ones(dataset.n_positive_instances))

    def get(self, bag_id: str, instance_id: str) -> float:
        return self.as_dict()[(bag_id, instance_id)]

    def as_dict(self) -> dict:
        return {key: float(v) for key, v in zip(self.index, self.values)}


@dataclass(frozen=True)
class Priors:
    """Class priors estimated from soft instance-count fractions."""

    p1: float
    pm1: float


@dataclass(eq=False)
class ScoreTable:
    """Voting scores and hard labels for positive-bag instances."""

    index: tuple[tuple[str, str], ...]
    scores: np.ndarray
    labels: np.ndarray

    @classmethod
    def from_scores(cls, index, scores: np.ndarray) -> "ScoreTable":
        scores = np.asarray(scores, dtype=np.float64)
        return cls(tuple(index), scores, decide_all(scores))

    def score_map(self) -> dict:
        return {key: float(s) for key, s in zip(self.index, self.scores)}

    def label_map(self) -> dict:
        return {key: int(l) for key, l in zip(self.index, self.labels)}


@dataclass(frozen=True)
class EkdeConfig:
    """Iteration controls around a kernel configuration."""

    kernel: KernelConfig
    epsilon: float = 1e-6
    max_iter: int = 100
    degenerate_floor: float = 1e-12

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_iter < 1:
            raise ValidationError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.degenerate_floor <= 0:
            raise ValidationError("degenerate_floor must be positive")


@dataclass(eq=False)
class EkdeResult:
    soft_labels: SoftLabels
    score_table: ScoreTable
    iterations: int
    converged: bool
    # Soft-label snapshot after each update, only when history is requested.
    w_history: list = field(default_factory=list)


# --- kernel blocks ------------------------------------------------------------
#
# The three pairwise matrices below are fixed for a given (queries, dataset,
# kernel) triple; only the soft labels change between iterations, so the
# iteration precomputes them once.


@dataclass(eq=False)
class _KernelBlocks:
    k_pos: np.ndarray  # queries x positive refs, at sigma_pos
    k_neg_neg: np.ndarray  # queries x negative refs, at sigma_neg
    k_neg_pos: np.ndarray  # queries x positive refs, at sigma_neg


def _blocks_for(queries: np.ndarray, dataset: Dataset, kernel: KernelConfig) -> _KernelBlocks:
    k_pos = kernel_matrix(
        queries, dataset.pos_matrix, kernel.sigma_pos, kernel.normalized
    ).values
    k_neg_neg = kernel_matrix(
        queries, dataset.neg_matrix, kernel.sigma_neg, kernel.normalized
    ).values
    if kernel.sigma_neg == kernel.sigma_pos:
        k_neg_pos = k_pos
    else:
        k_neg_pos = kernel_matrix(
            queries, dataset.pos_matrix, kernel.sigma_neg, kernel.normalized
        ).values
    return _KernelBlocks(k_pos, k_neg_neg, k_neg_pos)


def _conditionals_from_blocks(
    blocks: _KernelBlocks,
    w_values: np.ndarray,
    n_negative: int,
    degenerate_floor: float,
    iteration: int | None = None,
):
    pos_den = float(np.sum(w_values))
    neg_den = n_negative + float(np.sum(1.0 - w_values))
    if pos_den <= degenerate_floor:
        raise DegenerateClassError(
            f"positive class collapsed: total soft-label mass {pos_den:.3e} "
            f"is below the degeneracy floor {degenerate_floor:.1e}",
            iteration=iteration,
        )
    if neg_den <= degenerate_floor:
        raise DegenerateClassError(
            f"negative class collapsed: effective count {neg_den:.3e} "
            f"is below the degeneracy floor {degenerate_floor:.1e}",
            iteration=iteration,
        )
    p_pos = (blocks.k_pos @ w_values) / pos_den
    p_neg = (blocks.k_neg_neg.sum(axis=1) + blocks.k_neg_pos @ (1.0 - w_values)) / neg_den
    return p_pos, p_neg


# --- public operations --------------------------------------------------------


def class_priors(dataset: Dataset, w: SoftLabels) -> Priors:
    """Soft-count class priors: ``p1 = sum(w) / N``; remainder negative."""
    n_total = dataset.total_instances
    p1 = float(np.sum(w.values)) / n_total
    pm1 = (dataset.n_negative_instances + float(np.sum(1.0 - w.values))) / n_total
    return Priors(p1=p1, pm1=pm1)


def class_conditionals(
    query,
    dataset: Dataset,
    w: SoftLabels,
    kernel: KernelConfig,
    degenerate_floor: float = 1e-12,
) -> tuple[float, float]:
    """Class-conditional density estimates ``(p(x|+1), p(x|-1))`` at one point."""
    qv = query.features if isinstance(query, Instance) else np.asarray(query, float)
    blocks = _blocks_for(qv.reshape(1, -1), dataset, kernel)
    p_pos, p_neg = _conditionals_from_blocks(
        blocks, w.values, dataset.n_negative_instances, degenerate_floor
    )
    return float(p_pos[0]), float(p_neg[0])


def _update_from_blocks(
    dataset: Dataset,
    blocks: _KernelBlocks,
    w: SoftLabels,
    degenerate_floor: float,
    iteration: int | None = None,
) -> SoftLabels:
    p_pos, p_neg = _conditionals_from_blocks(
        blocks, w.values, dataset.n_negative_instances, degenerate_floor, iteration
    )
    priors = class_priors(dataset, w)
    num = p_pos * priors.p1
    den = num + p_neg * priors.pm1
    # 0/0 guard: when both weighted densities vanish at an instance the
    # posterior is uninformative, so its soft label becomes 1/2.
    new = np.full_like(num, 0.5)
    ok = den > degenerate_floor
    new[ok] = num[ok] / den[ok]
    return SoftLabels(w.index, new)


def update_soft_labels(
    dataset: Dataset,
    w: SoftLabels,
    kernel: KernelConfig,
    degenerate_floor: float = 1e-12,
) -> SoftLabels:
    """One synchronous Bayes-posterior pass over all soft labels.

    All updated values are computed from the input ``w`` (densities and
    priors first, then every label), never from partially updated state.
    """
    blocks = _blocks_for(dataset.pos_matrix, dataset, kernel)
    return _update_from_blocks(dataset, blocks, w, degenerate_floor)


def _masses_from_blocks(
    dataset: Dataset,
    blocks: _KernelBlocks,
    w: SoftLabels,
    degenerate_floor: float,
):
    """Per-class posterior masses ``N * p(x|y) p(y)`` at the block queries."""
    n_total = dataset.total_instances
    priors = class_priors(dataset, w)
    if float(np.sum(w.values)) <= degenerate_floor:
        # Algebraic limit: the positive mass N * p(x|+1) p(+1) collapses to
        # sum_j w_j k_j, which vanishes with the soft labels, while the
        # negative mass reduces to the raw kernel sums.
        pos_mass = np.zeros(blocks.k_pos.shape[0])
        neg_mass = blocks.k_neg_neg.sum(axis=1) + blocks.k_neg_pos @ (1.0 - w.values)
    else:
        p_pos, p_neg = _conditionals_from_blocks(
            blocks, w.values, dataset.n_negative_instances, degenerate_floor
        )
        pos_mass = n_total * p_pos * priors.p1
        neg_mass = n_total * p_neg * priors.pm1
    return pos_mass, neg_mass


def _scores_from_blocks(
    dataset: Dataset,
    blocks: _KernelBlocks,
    w: SoftLabels,
    degenerate_floor: float,
) -> np.ndarray:
    pos_mass, neg_mass = _masses_from_blocks(dataset, blocks, w, degenerate_floor)
    return pos_mass - neg_mass


def voting_scores(
    queries,
    dataset: Dataset,
    w: SoftLabels,
    kernel: KernelConfig,
    degenerate_floor: float = 1e-12,
) -> np.ndarray:
    """Vector of voting scores for a batch of query points."""
    if isinstance(queries, np.ndarray):
        qm = queries
    else:
        qm = np.vstack([q.features if isinstance(q, Instance) else np.asarray(q) for q in queries])
    blocks = _blocks_for(qm, dataset, kernel)
    return _scores_from_blocks(dataset, blocks, w, degenerate_floor)


def voting_score(
    query,
    dataset: Dataset,
    w: SoftLabels,
    kernel: KernelConfig,
    degenerate_floor: float = 1e-12,
) -> float:
    """Signed voting score of one query point.

    Positive means the weighted votes for the object class outweigh the
    votes against.  Computed as the N-scaled posterior-mass difference;
    with ``sigma_pos == sigma_neg`` this equals the direct vote sum
    ``sum_pos(w * s) - sum_neg(s) - sum_pos((1 - w) * s)``.
    """
    qv = query.features if isinstance(query, Instance) else np.asarray(query, float)
    return float(
        voting_scores(qv.reshape(1, -1), dataset, w, kernel, degenerate_floor)[0]
    )


def posterior_margins(
    queries,
    dataset: Dataset,
    w: SoftLabels,
    kernel: KernelConfig,
    degenerate_floor: float = 1e-12,
) -> np.ndarray:
    """Bounded confidence ``(pos_mass - neg_mass) / (pos_mass + neg_mass)``.

    Lies in [-1, 1] with the same sign as the voting score, so labels
    agree, but magnitudes are comparable across instances.  This is the
    score scale handed to adjacency refinement: raw voting masses span
    orders of magnitude (a dense background neighborhood outvotes a
    sparse object cluster by count alone), and blending raw scores lets
    one background neighbor overwhelm a correct object instance.
    """
    if isinstance(queries, np.ndarray):
        qm = queries
    else:
        qm = np.vstack([q.features if isinstance(q, Instance) else np.asarray(q) for q in queries])
    blocks = _blocks_for(qm, dataset, kernel)
    pos_mass, neg_mass = _masses_from_blocks(dataset, blocks, w, degenerate_floor)
    total = pos_mass + neg_mass
    out = np.zeros_like(total)
    ok = total > degenerate_floor
    out[ok] = (pos_mass[ok] - neg_mass[ok]) / total[ok]
    return out


def margin_table(
    dataset: Dataset,
    w: SoftLabels,
    kernel: KernelConfig,
    degenerate_floor: float = 1e-12,
) -> ScoreTable:
    """Posterior-margin scores for every positive-bag instance."""
    margins = posterior_margins(
        dataset.pos_matrix, dataset, w, kernel, degenerate_floor
    )
    return ScoreTable.from_scores(dataset.pos_index, margins)


def decide(score: float) -> int:
    """Hard label from a voting score: +1 iff the score is positive.

    A zero score resolves to background (-1), the conservative choice.
    """
    if not np.isfinite(score):
        raise ValidationError(f"cannot decide on non-finite score {score!r}")
    return 1 if score > 0.0 else -1


def decide_all(scores: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(scores)):
        raise ValidationError("cannot decide on non-finite scores")
    return np.where(scores > 0.0, 1, -1).astype(np.int64)


def run_ekde(
    dataset: Dataset,
    config: EkdeConfig,
    record_history: bool = False,
    initial_w: SoftLabels | None = None,
) -> EkdeResult:
    """Annotate every positive-bag instance by soft-label iteration.

    Soft labels start at 1 (or at ``initial_w``) and are repeatedly
    replaced by their Bayes posterior until the largest per-instance
    change drops below ``config.epsilon`` or ``config.max_iter`` passes
    have run.  Scores and hard labels are then computed from the final
    labels.
    """
    dataset.require_annotatable()
    blocks = _blocks_for(dataset.pos_matrix, dataset, config.kernel)
    w = SoftLabels.ones(dataset) if initial_w is None else initial_w
    history = []
    converged = False
    iterations = 0
    for it in range(1, config.max_iter + 1):
        w_new = _update_from_blocks(
            dataset, blocks, w, config.degenerate_floor, iteration=it
        )
        delta = float(np.max(np.abs(w_new.values - w.values))) if w.values.size else 0.0
        w = w_new
        iterations = it
        if record_history:
            history.append(w.values.copy())
        if delta < config.epsilon:
            converged = True
            break
    scores = _scores_from_blocks(dataset, blocks, w, config.degenerate_floor)
    table = ScoreTable.from_scores(dataset.pos_index, scores)
    return EkdeResult(
        soft_labels=w,
        score_table=table,
        iterations=iterations,
        converged=converged,
        w_history=history,
    )
