"""Second voting round: smooth instance scores over region adjacency.

An object is a contiguous group of regions, so after per-instance scoring
each score is blended with the mean score of its spatial neighbors.  One
pass, convex blend; isolated regions are untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .ekde import ScoreTable, decide_all
from .errors import ValidationError

__all__ = ["AdjacencyGraph", "build_adjacency", "refine_scores"]


@dataclass(eq=False)
class AdjacencyGraph:
    """Undirected in-bag neighbor relation over (bag id, instance id) keys."""

    neighbors: dict


def build_adjacency(dataset: Dataset) -> AdjacencyGraph:
    """Symmetrized, de-duplicated adjacency from instance neighbor lists.

    Instances without neighbor data become isolated vertices.  Neighbor
    ids must name another instance in the same bag; self-references are
    dropped.
    """
    neighbors = {}
    for bag in dataset.bags():
        ids_in_bag = {inst.id for inst in bag.instances}
        adj = {inst.id: set() for inst in bag.instances}
        for inst in bag.instances:
            for other in inst.neighbors or ():
                if other not in ids_in_bag:
                    raise ValidationError(
                        f"bag {bag.id!r} instance {inst.id!r}: neighbor {other!r} "
                        "is not an instance of the same bag"
                    )
                if other == inst.id:
                    continue
                adj[inst.id].add(other)
                adj[other].add(inst.id)
        for inst_id, nbrs in adj.items():
            neighbors[(bag.id, inst_id)] = tuple(sorted(nbrs))
    return AdjacencyGraph(neighbors=neighbors)


def refine_scores(
    scores: ScoreTable, graph: AdjacencyGraph, alpha: float = 0.5
) -> ScoreTable:
    """One smoothing pass: blend each score with its neighborhood mean.

    ``score' = (1 - alpha) * score + alpha * mean(neighborhood scores)``
    where the neighborhood of a region is itself plus its neighbors, so an
    isolated region keeps its score for every alpha.  Computed against an
    immutable snapshot of the input scores; labels are re-derived from
    the blended scores.
    """
    if not (0.0 <= alpha <= 1.0):
        raise ValidationError(f"alpha must lie in [0, 1], got {alpha}")
    snapshot = scores.score_map()
    refined = np.empty_like(scores.scores)
    for i, (bag_id, inst_id) in enumerate(scores.index):
        if (bag_id, inst_id) not in graph.neighbors:
            raise ValidationError(
                f"scored instance ({bag_id!r}, {inst_id!r}) missing from the "
                "adjacency graph"
            )
        nbrs = graph.neighbors[(bag_id, inst_id)]
        own = scores.scores[i]
        mean = (own + sum(snapshot[(bag_id, n)] for n in nbrs)) / (1 + len(nbrs))
        refined[i] = (1.0 - alpha) * own + alpha * mean
    return ScoreTable(scores.index, refined, decide_all(refined))
