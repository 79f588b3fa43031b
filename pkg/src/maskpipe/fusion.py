"""Combine class-agnostic instance label maps with a semantic map into
classed, scored instances, plus the on-disk instance-set format
(16-bit label PNG + `image_id,label,class_id,score` CSV sidecar).
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .raster import (
    BinaryMask,
    LabelMap,
    ProbMap,
    SemanticMap,
    ValidationError,
    read_label_png,
    write_label_png,
)


@dataclass(frozen=True)
class Instance:
    mask: BinaryMask
    class_id: int
    score: float = 1.0

    def __post_init__(self):
        if self.class_id <= 0:
            raise ValidationError(f"class_id must be positive, got {self.class_id}")
        if self.mask.area == 0:
            raise ValidationError("instance mask is empty")


@dataclass
class InstanceSet:
    image_id: str
    instances: list[Instance] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.instances)


def assign_classes(instances: LabelMap, semantic: SemanticMap) -> InstanceSet:
    """Give each instance its majority semantic class (ties -> lowest class
    id); instances whose majority class is background are dropped."""
    if instances.data.shape != semantic.data.shape:
        raise ValidationError("instances vs semantic dimension mismatch")
    out: list[Instance] = []
    labels = instances.data
    for lab in range(1, labels.max(initial=0) + 1):
        m = labels == lab
        if not m.any():
            continue
        votes = np.bincount(semantic.data[m])
        cls = int(votes.argmax())  # argmax breaks ties toward lowest id
        if cls == 0:
            continue
        out.append(Instance(mask=BinaryMask(m), class_id=cls))
    return InstanceSet(image_id="", instances=out)


def score_instances(instance_set: InstanceSet, boundary: ProbMap) -> InstanceSet:
    """Score = mean of (1 - boundary probability) over the instance's pixels;
    instances re-sorted by descending score (stable)."""
    scored: list[Instance] = []
    for inst in instance_set.instances:
        if inst.mask.data.shape != boundary.data.shape:
            raise ValidationError("instance vs boundary dimension mismatch")
        mean_b = float(boundary.data[inst.mask.data].mean())
        score = min(1.0, max(0.0, 1.0 - mean_b))
        scored.append(Instance(mask=inst.mask, class_id=inst.class_id, score=score))
    scored.sort(key=lambda i: -i.score)
    return InstanceSet(image_id=instance_set.image_id, instances=scored)


# ---------------------------------------------------------------------------
# serialization: label PNG + CSV sidecar

CSV_HEADER = ["image_id", "label", "class_id", "score"]


def write_instance_set(instance_set: InstanceSet, out_dir, image_id: str | None = None) -> None:
    image_id = image_id or instance_set.image_id
    if not image_id:
        raise ValidationError("image_id required for serialization")
    h = w = None
    for inst in instance_set.instances:
        h, w = inst.mask.data.shape
        break
    if h is None:
        raise ValidationError("cannot serialize an empty instance set without dimensions")
    labels = np.zeros((h, w), np.int32)
    rows = []
    for i, inst in enumerate(instance_set.instances, start=1):
        labels[inst.mask.data] = i
        rows.append([image_id, i, inst.class_id, f"{inst.score:.6f}"])
    write_label_png(LabelMap(labels), os.path.join(out_dir, f"{image_id}.png"))
    tmp = os.path.join(out_dir, f"{image_id}.csv.tmp")
    with open(tmp, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        writer.writerows(rows)
    os.replace(tmp, os.path.join(out_dir, f"{image_id}.csv"))


def write_empty_instance_set(image_id: str, height: int, width: int, out_dir) -> None:
    """Zero-instance serialization: all-background PNG plus header-only CSV."""
    write_label_png(
        LabelMap(np.zeros((height, width), np.int32)),
        os.path.join(out_dir, f"{image_id}.png"),
    )
    tmp = os.path.join(out_dir, f"{image_id}.csv.tmp")
    with open(tmp, "w", newline="") as f:
        csv.writer(f).writerow(CSV_HEADER)
    os.replace(tmp, os.path.join(out_dir, f"{image_id}.csv"))


def read_instance_set(in_dir, image_id: str) -> InstanceSet:
    lmap = read_label_png(os.path.join(in_dir, f"{image_id}.png"))
    instances: list[Instance] = []
    with open(os.path.join(in_dir, f"{image_id}.csv"), newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            label = int(row["label"])
            m = lmap.data == label
            if not m.any():
                raise ValidationError(
                    f"{image_id}: CSV row for label {label} has no pixels in the PNG"
                )
            instances.append(
                Instance(
                    mask=BinaryMask(m),
                    class_id=int(row["class_id"]),
                    score=float(row["score"]),
                )
            )
    return InstanceSet(image_id=image_id, instances=instances)
