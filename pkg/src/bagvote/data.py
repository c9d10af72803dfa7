"""Bag/instance data model, dataset file I/O, and feature normalization.

A dataset is a UTF-8 JSON file:

    {
      "dimension": int,
      "bags": [
        {
          "id": str,
          "label": 1 | -1,
          "instances": [
            {
              "id": str,                 # unique within the bag
              "features": [float, ...],  # length == dimension
              "size": int,               # optional, pixel count, > 0
              "gt": bool,                # optional ground-truth flag
              "neighbors": [str, ...]    # optional in-bag instance ids
            }
          ]
        }
      ]
    }

Parsing is strict: unknown keys are rejected so typos surface as errors
instead of silently ignored options.  A loaded ``Dataset`` is immutable
(feature matrices are marked read-only) and safe to share across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

__all__ = [
    "Instance",
    "Bag",
    "Dataset",
    "l2_normalize",
    "load_dataset",
    "dataset_to_dict",
    "write_dataset",
]


def l2_normalize(v) -> np.ndarray:
    """Scale ``v`` to unit Euclidean norm, preserving direction.

    Raises ``ValidationError`` for an all-zero vector, which has no
    direction to preserve.
    """
    arr = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ValidationError("cannot L2-normalize an all-zero feature vector")
    return arr / norm


@dataclass(frozen=True, eq=False)
class Instance:
    """One segment: a feature vector plus optional annotation metadata."""

    id: str
    features: np.ndarray
    size: int | None = None
    gt: bool | None = None
    neighbors: tuple[str, ...] | None = None

    @property
    def effective_size(self) -> int:
        """Pixel count used by overlap evaluation; defaults to 1."""
        return 1 if self.size is None else self.size


@dataclass(frozen=True, eq=False)
class Bag:
    """A weakly labeled collection of instances."""

    id: str
    label: int
    instances: tuple[Instance, ...]

    @property
    def is_positive(self) -> bool:
        return self.label == 1


@dataclass(eq=False)
class Dataset:
    """Validated collection of positive and negative bags.

    Construction validates every type invariant and precomputes the
    stacked feature matrices and index maps used by the numeric paths.
    """

    positive_bags: tuple[Bag, ...]
    negative_bags: tuple[Bag, ...]
    dimension: int

    # Derived, filled in __post_init__.
    pos_matrix: np.ndarray = field(init=False, repr=False)
    neg_matrix: np.ndarray = field(init=False, repr=False)
    pos_index: tuple[tuple[str, str], ...] = field(init=False, repr=False)
    neg_index: tuple[tuple[str, str], ...] = field(init=False, repr=False)
    pos_bag_slices: tuple[tuple[int, int], ...] = field(init=False, repr=False)
    neg_bag_slices: tuple[tuple[int, int], ...] = field(init=False, repr=False)

    def __post_init__(self):
        self.positive_bags = tuple(self.positive_bags)
        self.negative_bags = tuple(self.negative_bags)
        self._validate()
        self.pos_matrix, self.pos_index, self.pos_bag_slices = _stack(
            self.positive_bags
        )
        self.neg_matrix, self.neg_index, self.neg_bag_slices = _stack(
            self.negative_bags
        )

    def _validate(self):
        if self.dimension < 1:
            raise ValidationError(f"dimension must be >= 1, got {self.dimension}")
        for bag in self.positive_bags:
            if bag.label != 1:
                raise ValidationError(f"bag {bag.id!r} in positive list has label {bag.label}")
        for bag in self.negative_bags:
            if bag.label != -1:
                raise ValidationError(f"bag {bag.id!r} in negative list has label {bag.label}")
        seen_bag_ids = set()
        for bag in self.bags():
            if bag.id in seen_bag_ids:
                raise ValidationError(f"duplicate bag id {bag.id!r}")
            seen_bag_ids.add(bag.id)
            if len(bag.instances) == 0:
                raise ValidationError(f"bag {bag.id!r} has no instances")
            seen_inst_ids = set()
            for inst in bag.instances:
                if inst.id in seen_inst_ids:
                    raise ValidationError(
                        f"bag {bag.id!r}: duplicate instance id {inst.id!r}"
                    )
                seen_inst_ids.add(inst.id)
                if inst.features.ndim != 1 or inst.features.shape[0] != self.dimension:
                    raise ValidationError(
                        f"bag {bag.id!r} instance {inst.id!r}: feature dimension "
                        f"{inst.features.shape} does not match dataset dimension "
                        f"{self.dimension}"
                    )
                if not np.all(np.isfinite(inst.features)):
                    raise ValidationError(
                        f"bag {bag.id!r} instance {inst.id!r}: non-finite feature"
                    )
                if inst.size is not None and inst.size < 1:
                    raise ValidationError(
                        f"bag {bag.id!r} instance {inst.id!r}: size must be >= 1"
                    )
                if bag.label == -1 and inst.gt is True:
                    raise ValidationError(
                        f"negative bag {bag.id!r} contains instance {inst.id!r} "
                        "flagged as ground-truth object"
                    )
        if self.total_instances < 2:
            raise ValidationError("dataset must contain at least 2 instances")

    def bags(self):
        """All bags, positives first, in file order."""
        yield from self.positive_bags
        yield from self.negative_bags

    @property
    def n_positive_bags(self) -> int:
        return len(self.positive_bags)

    @property
    def n_negative_bags(self) -> int:
        return len(self.negative_bags)

    @property
    def n_positive_instances(self) -> int:
        return len(self.pos_index)

    @property
    def n_negative_instances(self) -> int:
        return len(self.neg_index)

    @property
    def total_instances(self) -> int:
        return sum(len(b.instances) for b in self.bags())

    def require_annotatable(self):
        """Annotation methods need at least one bag of each polarity."""
        if self.n_positive_bags < 1 or self.n_negative_bags < 1:
            raise ValidationError(
                "annotation requires at least one positive and one negative bag "
                f"(got {self.n_positive_bags} positive, {self.n_negative_bags} negative)"
            )


def _stack(bags: tuple[Bag, ...]):
    index = []
    slices = []
    rows = []
    start = 0
    for bag in bags:
        for inst in bag.instances:
            index.append((bag.id, inst.id))
            rows.append(inst.features)
        slices.append((start, start + len(bag.instances)))
        start += len(bag.instances)
    if rows:
        matrix = np.vstack(rows).astype(np.float64, copy=True)
    else:
        matrix = np.empty((0, 0), dtype=np.float64)
    matrix.setflags(write=False)
    return matrix, tuple(index), tuple(slices)


# --- JSON ingestion ----------------------------------------------------------

_ROOT_KEYS = {"dimension", "bags"}
_BAG_KEYS = {"id", "label", "instances"}
_INSTANCE_KEYS = {"id", "features", "size", "gt", "neighbors"}


def _reject_unknown(obj: dict, allowed: set, where: str):
    unknown = set(obj) - allowed
    if unknown:
        raise ParseError(f"{where}: unknown field(s) {sorted(unknown)}")


def _parse_instance(obj, where: str, normalize: bool) -> Instance:
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: instance must be an object")
    _reject_unknown(obj, _INSTANCE_KEYS, where)
    for key in ("id", "features"):
        if key not in obj:
            raise ParseError(f"{where}: missing required field {key!r}")
    if not isinstance(obj["id"], str):
        raise ParseError(f"{where}: 'id' must be a string")
    feats = obj["features"]
    if not isinstance(feats, list) or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in feats
    ):
        raise ParseError(f"{where}: 'features' must be a list of numbers")
    size = obj.get("size")
    if size is not None and (isinstance(size, bool) or not isinstance(size, int)):
        raise ParseError(f"{where}: 'size' must be an integer")
    gt = obj.get("gt")
    if gt is not None and not isinstance(gt, bool):
        raise ParseError(f"{where}: 'gt' must be a boolean")
    neighbors = obj.get("neighbors")
    if neighbors is not None:
        if not isinstance(neighbors, list) or not all(
            isinstance(x, str) for x in neighbors
        ):
            raise ParseError(f"{where}: 'neighbors' must be a list of strings")
        neighbors = tuple(neighbors)
    features = np.asarray(feats, dtype=np.float64)
    if normalize:
        try:
            features = l2_normalize(features)
        except ValidationError:
            raise ValidationError(
                f"{where}: all-zero feature vector cannot be normalized"
            ) from None
    features.setflags(write=False)
    return Instance(
        id=obj["id"], features=features, size=size, gt=gt, neighbors=neighbors
    )


def _parse_bag(obj, where: str, normalize: bool) -> Bag:
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: bag must be an object")
    _reject_unknown(obj, _BAG_KEYS, where)
    for key in _BAG_KEYS:
        if key not in obj:
            raise ParseError(f"{where}: missing required field {key!r}")
    if not isinstance(obj["id"], str):
        raise ParseError(f"{where}: 'id' must be a string")
    label = obj["label"]
    if isinstance(label, bool) or label not in (1, -1):
        raise ParseError(f"{where}: 'label' must be 1 or -1")
    if not isinstance(obj["instances"], list):
        raise ParseError(f"{where}: 'instances' must be a list")
    instances = tuple(
        _parse_instance(inst, f"{where} instance[{i}]", normalize)
        for i, inst in enumerate(obj["instances"])
    )
    return Bag(id=obj["id"], label=label, instances=instances)


def load_dataset(path, normalize: bool = True) -> Dataset:
    """Read, validate, and optionally L2-normalize a dataset file.

    Parameters
    ----------
    path : str or Path
        Dataset JSON file.
    normalize : bool
        When true (the default), every feature vector is rescaled to unit
        L2 norm during ingestion; all-zero vectors are rejected.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read dataset file {path}: {exc}") from exc
    try:
        root = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(root, dict):
        raise ParseError(f"{path}: top-level value must be an object")
    _reject_unknown(root, _ROOT_KEYS, str(path))
    for key in _ROOT_KEYS:
        if key not in root:
            raise ParseError(f"{path}: missing required field {key!r}")
    dimension = root["dimension"]
    if isinstance(dimension, bool) or not isinstance(dimension, int):
        raise ParseError(f"{path}: 'dimension' must be an integer")
    if not isinstance(root["bags"], list):
        raise ParseError(f"{path}: 'bags' must be a list")

    positive = []
    negative = []
    for i, bag_obj in enumerate(root["bags"]):
        bag = _parse_bag(bag_obj, f"{path} bag[{i}]", normalize)
        (positive if bag.label == 1 else negative).append(bag)
    dataset = Dataset(
        positive_bags=tuple(positive),
        negative_bags=tuple(negative),
        dimension=dimension,
    )
    if normalize:
        # Belt-and-braces: ingestion must leave unit-norm features.
        for bag in dataset.bags():
            for inst in bag.instances:
                assert math.isclose(
                    float(np.linalg.norm(inst.features)), 1.0, abs_tol=1e-9
                )
    return dataset


# --- serialization -----------------------------------------------------------


def dataset_to_dict(dataset: Dataset) -> dict:
    """Schema-conformant plain-dict form of a dataset, preserving order."""
    bags = []
    for bag in dataset.bags():
        instances = []
        for inst in bag.instances:
            obj = {"id": inst.id, "features": [float(x) for x in inst.features]}
            if inst.size is not None:
                obj["size"] = inst.size
            if inst.gt is not None:
                obj["gt"] = inst.gt
            if inst.neighbors is not None:
                obj["neighbors"] = list(inst.neighbors)
            instances.append(obj)
        bags.append({"id": bag.id, "label": bag.label, "instances": instances})
    return {"dimension": dataset.dimension, "bags": bags}


def write_dataset(dataset: Dataset, path):
    """Serialize a dataset to JSON; floats round-trip exactly via repr."""
    Path(path).write_text(
        json.dumps(dataset_to_dict(dataset), indent=2) + "\n", encoding="utf-8"
    )
