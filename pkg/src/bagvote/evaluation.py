"""Evaluation protocol: per-bag overlap, average precision, PR curves.

A positive bag counts as correctly annotated when the size-weighted
intersection-over-union between its predicted-positive segments and its
ground-truth segments exceeds the overlap threshold (0.5 for images,
0.125 for videos).  Average precision here is the fraction of correctly
annotated positive bags.  PR curves sweep a threshold over instance
scores and report instance-level precision/recall.
"""

from __future__ import annotations

from dataclasses import dataclass

from .data import Bag, Dataset
from .errors import ValidationError

__all__ = [
    "OVERLAP_THRESHOLD_IMAGE",
    "OVERLAP_THRESHOLD_VIDEO",
    "BagOutcome",
    "EvalReport",
    "PRPoint",
    "PRCurve",
    "bag_overlap",
    "average_precision",
    "pr_curve",
]

OVERLAP_THRESHOLD_IMAGE = 0.5
OVERLAP_THRESHOLD_VIDEO = 0.125


@dataclass(frozen=True)
class BagOutcome:
    bag_id: str
    overlap: float
    correct: bool


@dataclass(eq=False)
class EvalReport:
    ap: float
    per_bag: list
    threshold_used: float
    detected_count: int


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float
    recall: float


@dataclass(eq=False)
class PRCurve:
    points: list


def _gt_ids(bag: Bag) -> set:
    gt = set()
    for inst in bag.instances:
        if inst.gt is None:
            raise ValidationError(
                f"bag {bag.id!r} instance {inst.id!r} lacks a ground-truth flag"
            )
        if inst.gt:
            gt.add(inst.id)
    return gt


def bag_overlap(predicted_positive_ids, bag: Bag) -> float:
    """Size-weighted IoU between predicted and ground-truth segment sets.

    Segment sizes default to 1, so without pixel counts this degrades to
    counting segments.  Both sets empty gives 1 (nothing to find, nothing
    claimed); exactly one empty gives 0.
    """
    predicted = set(predicted_positive_ids)
    ids_in_bag = {inst.id for inst in bag.instances}
    stray = predicted - ids_in_bag
    if stray:
        raise ValidationError(
            f"predicted ids {sorted(stray)} are not instances of bag {bag.id!r}"
        )
    gt = _gt_ids(bag)
    if not predicted and not gt:
        return 1.0
    sizes = {inst.id: inst.effective_size for inst in bag.instances}
    inter = sum(sizes[i] for i in predicted & gt)
    union = sum(sizes[i] for i in predicted | gt)
    return inter / union


def average_precision(
    labels, dataset: Dataset, overlap_threshold: float
) -> EvalReport:
    """Fraction of positive bags annotated with overlap above the threshold.

    ``labels`` maps (bag id, instance id) to +1/-1; instances absent from
    the map count as background.  Correctness uses strict inequality:
    the overlap must exceed the threshold.
    """
    if not (0.0 < overlap_threshold <= 1.0):
        raise ValidationError(
            f"overlap threshold must lie in (0, 1], got {overlap_threshold}"
        )
    if dataset.n_positive_bags == 0:
        raise ValidationError("no positive bags to evaluate")
    per_bag = []
    correct = 0
    detected = 0
    for bag in dataset.positive_bags:
        predicted = {
            inst.id
            for inst in bag.instances
            if labels.get((bag.id, inst.id), -1) == 1
        }
        detected += len(predicted)
        overlap = bag_overlap(predicted, bag)
        ok = overlap > overlap_threshold
        correct += ok
        per_bag.append(BagOutcome(bag_id=bag.id, overlap=overlap, correct=ok))
    return EvalReport(
        ap=correct / dataset.n_positive_bags,
        per_bag=per_bag,
        threshold_used=overlap_threshold,
        detected_count=detected,
    )


def pr_curve(scores, dataset: Dataset) -> PRCurve:
    """Instance-level precision/recall by sweeping the score threshold.

    ``scores`` maps (bag id, instance id) to a real score for positive-bag
    instances.  Each distinct score value, taken in descending order,
    predicts positive everything scoring at least that value.
    """
    truth = {}
    for bag in dataset.positive_bags:
        gt = _gt_ids(bag)
        for inst in bag.instances:
            truth[(bag.id, inst.id)] = inst.id in gt
    pairs = [(float(s), truth[key]) for key, s in scores.items() if key in truth]
    if not pairs:
        raise ValidationError("no scored positive-bag instances to evaluate")
    total_pos = sum(1 for _, is_pos in pairs if is_pos)
    if total_pos == 0:
        raise ValidationError(
            "instance-level recall is undefined: no ground-truth positives "
            "among the scored instances"
        )
    points = []
    for t in sorted({s for s, _ in pairs}, reverse=True):
        tp = sum(1 for s, is_pos in pairs if s >= t and is_pos)
        fp = sum(1 for s, is_pos in pairs if s >= t and not is_pos)
        precision = tp / (tp + fp) if (tp + fp) > 0 else 1.0
        points.append(PRPoint(threshold=t, precision=precision, recall=tp / total_pos))
    return PRCurve(points=points)
