import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bagvote import backends
from bagvote.data import Bag, Dataset, Instance


@pytest.fixture(scope="session", autouse=True)
def _warm_backend():
    # JIT compile (or no-op on the numpy path) before any timed test runs.
    backends.warmup()


def make_instance(inst_id, features, size=None, gt=None, neighbors=None):
    arr = np.asarray(features, dtype=np.float64)
    arr.setflags(write=False)
    return Instance(
        id=inst_id,
        features=arr,
        size=size,
        gt=gt,
        neighbors=tuple(neighbors) if neighbors is not None else None,
    )


def make_dataset(pos_bags, neg_bags, dimension=None):
    """Build a dataset from nested feature lists.

    ``pos_bags``/``neg_bags`` are lists of bags; each bag is a list of
    feature vectors or ``Instance`` objects.  Ids default to ``p{i}``,
    ``n{i}`` for bags and ``x{j}`` for instances.
    """

    def build(bags, prefix, label):
        out = []
        for i, raw in enumerate(bags):
            instances = []
            for j, item in enumerate(raw):
                if isinstance(item, Instance):
                    instances.append(item)
                else:
                    instances.append(make_instance(f"x{j}", item))
            out.append(Bag(id=f"{prefix}{i}", label=label, instances=tuple(instances)))
        return tuple(out)

    positive = build(pos_bags, "p", 1)
    negative = build(neg_bags, "n", -1)
    if dimension is None:
        first = (positive or negative)[0].instances[0]
        dimension = first.features.shape[0]
    return Dataset(positive_bags=positive, negative_bags=negative, dimension=dimension)


def random_dataset(rng, max_bags=5, max_instances=6, dim=4, gt=False):
    """Small random dataset: at least one bag per class."""
    n_pos = int(rng.integers(1, max_bags + 1))
    n_neg = int(rng.integers(1, max_bags + 1))

    def bag(with_gt):
        size = int(rng.integers(1, max_instances + 1))
        feats = rng.normal(size=(size, dim))
        if not with_gt:
            return list(feats)
        flags = rng.random(size) < 0.5
        flags[int(rng.integers(0, size))] = True
        return [
            make_instance(f"x{j}", feats[j], gt=bool(flags[j]))
            for j in range(size)
        ]

    return make_dataset(
        [bag(gt) for _ in range(n_pos)],
        [bag(False) for _ in range(n_neg)],
        dimension=dim,
    )


def random_soft_labels(rng, dataset):
    from bagvote.ekde import SoftLabels

    return SoftLabels(
        dataset.pos_index, rng.random(dataset.n_positive_instances)
    )
