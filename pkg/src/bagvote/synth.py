"""Seeded synthetic generator for weakly labeled bags with known truth.

Two isotropic unit-variance Gaussian clusters stand in for the object and
background feature distributions, centered at ``+/- separation/2`` along
the first axis so class geometry survives L2 normalization.  Each
positive bag holds ``ceil(witness_rate * bag_size)`` object instances and
background otherwise; negative bags hold background, optionally
contaminated with object-cluster draws (label noise) that stay marked as
background per the bag-label semantics.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .data import Bag, Dataset, Instance
from .errors import ParseError, ValidationError

__all__ = ["SynthConfig", "SynthResult", "generate", "load_synth_config"]


@dataclass(frozen=True)
class SynthConfig:
    dimension: int
    n_pos_bags: int
    n_neg_bags: int
    bag_size: int
    witness_rate: float
    separation: float
    noise_rate: float = 0.0
    seed: int = 0
    chain_adjacency: bool = False

    def __post_init__(self):
        if self.dimension < 1:
            raise ValidationError("dimension must be >= 1")
        if min(self.n_pos_bags, self.n_neg_bags, self.bag_size) < 1:
            raise ValidationError("bag counts and bag size must be >= 1")
        if not (0.0 < self.witness_rate <= 1.0):
            raise ValidationError("witness_rate must lie in (0, 1]")
        if self.separation < 0.0:
            raise ValidationError("separation must be >= 0")
        if not (0.0 <= self.noise_rate < 1.0):
            raise ValidationError("noise_rate must lie in [0, 1)")

    @property
    def witnesses_per_bag(self) -> int:
        return math.ceil(self.witness_rate * self.bag_size)


@dataclass(eq=False)
class SynthResult:
    dataset: Dataset
    # (bag id, instance id) -> True for object instances in positive bags.
    gt: dict
    # Config echo plus contamination records for noisy negative bags.
    meta: dict


def _chain_neighbors(j: int, bag_size: int) -> tuple:
    nbrs = []
    if j > 0:
        nbrs.append(f"s{j - 1:03d}")
    if j + 1 < bag_size:
        nbrs.append(f"s{j + 1:03d}")
    return tuple(nbrs)


def generate(config: SynthConfig) -> SynthResult:
    """Draw a dataset; identical configs produce identical output."""
    rng = np.random.default_rng(config.seed)
    half = config.separation / 2.0
    center_pos = np.zeros(config.dimension)
    center_pos[0] = +half
    center_neg = np.zeros(config.dimension)
    center_neg[0] = -half

    def draw(center):
        return rng.normal(loc=center, scale=1.0, size=config.dimension)

    gt = {}
    contaminated = []
    pos_bags = []
    n_wit = config.witnesses_per_bag
    for i in range(config.n_pos_bags):
        bag_id = f"pos{i:03d}"
        instances = []
        for j in range(config.bag_size):
            inst_id = f"s{j:03d}"
            is_witness = j < n_wit
            features = draw(center_pos if is_witness else center_neg)
            instances.append(
                Instance(
                    id=inst_id,
                    features=features,
                    gt=is_witness,
                    neighbors=_chain_neighbors(j, config.bag_size)
                    if config.chain_adjacency
                    else None,
                )
            )
            gt[(bag_id, inst_id)] = is_witness
        pos_bags.append(Bag(id=bag_id, label=1, instances=tuple(instances)))

    neg_bags = []
    for i in range(config.n_neg_bags):
        bag_id = f"neg{i:03d}"
        instances = []
        for j in range(config.bag_size):
            inst_id = f"s{j:03d}"
            noisy = config.noise_rate > 0.0 and rng.random() < config.noise_rate
            features = draw(center_pos if noisy else center_neg)
            if noisy:
                contaminated.append([bag_id, inst_id])
            instances.append(
                Instance(
                    id=inst_id,
                    features=features,
                    neighbors=_chain_neighbors(j, config.bag_size)
                    if config.chain_adjacency
                    else None,
                )
            )
        neg_bags.append(Bag(id=bag_id, label=-1, instances=tuple(instances)))

    dataset = Dataset(
        positive_bags=tuple(pos_bags),
        negative_bags=tuple(neg_bags),
        dimension=config.dimension,
    )
    meta = {"config": asdict(config), "contaminated": contaminated}
    return SynthResult(dataset=dataset, gt=gt, meta=meta)


_CONFIG_KEYS = {
    "dimension",
    "n_pos_bags",
    "n_neg_bags",
    "bag_size",
    "witness_rate",
    "separation",
    "noise_rate",
    "seed",
    "chain_adjacency",
}


def load_synth_config(path) -> SynthConfig:
    """Read a generator config JSON; field names mirror ``SynthConfig``."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ParseError(f"{path}: config must be an object")
    unknown = set(obj) - _CONFIG_KEYS
    if unknown:
        raise ParseError(f"{path}: unknown config field(s) {sorted(unknown)}")
    try:
        return SynthConfig(**obj)
    except TypeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
