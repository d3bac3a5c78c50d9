"""In-memory skeleton and object-track streams."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

JOINTS = ("head", "neck", "torso", "left_shoulder", "left_elbow", "left_palm",
          "right_shoulder", "right_elbow", "right_palm")
UPPER_BODY = JOINTS[1:]
HEAD = 0
TORSO = JOINTS.index("torso")
# index of the vertical axis in every 3D position
VERTICAL = 1


class StreamError(ValueError):
    pass


@dataclass(frozen=True)
class SkeletonFrame:
    frame_id: int
    joints: Mapping[str, Sequence[float]]

    def __post_init__(self):
        missing = [j for j in JOINTS if j not in self.joints]
        if missing:
            raise StreamError(f"frame {self.frame_id}: missing joints {missing}")
        if not np.all(np.isfinite(self.array())):
            raise StreamError(f"frame {self.frame_id}: non-finite joint position")

    def array(self) -> np.ndarray:
        return np.array([self.joints[j] for j in JOINTS], dtype=float)


class Skeleton:
    """Joint positions as a (frames, 9, 3) array in meters."""

    def __init__(self, positions, frame_ids=None):
        self.positions = np.asarray(positions, dtype=float)
        if self.positions.ndim != 3 or self.positions.shape[1:] != (len(JOINTS), 3):
            raise StreamError(f"skeleton array has shape {self.positions.shape}")
        n = len(self.positions)
        self.frame_ids = np.arange(n) if frame_ids is None else np.asarray(frame_ids, dtype=int)

    @classmethod
    def from_frames(cls, frames: Sequence[SkeletonFrame]) -> "Skeleton":
        return cls(np.stack([f.array() for f in frames]) if frames else np.zeros((0, 9, 3)),
                   [f.frame_id for f in frames])

    def frames(self) -> list[SkeletonFrame]:
        return [SkeletonFrame(int(fid), {j: p.tolist() for j, p in zip(JOINTS, pos)})
                for fid, pos in zip(self.frame_ids, self.positions)]

    def __len__(self):
        return len(self.positions)

    def head_relative(self) -> np.ndarray:
        """Upper-body joints relative to the head, shape (frames, 8, 3)."""
        return self.positions[:, 1:, :] - self.positions[:, :1, :]


@dataclass
class ObjectTrack:
    """Per-frame object observations starting at frame ``start``."""

    object_id: str
    start: int
    centroids: np.ndarray
    bboxes: np.ndarray
    occluded: np.ndarray
    transforms: np.ndarray | None = None

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=float).reshape(-1, 3)
        n = len(self.centroids)
        self.bboxes = np.asarray(self.bboxes, dtype=float).reshape(n, 4)
        self.occluded = np.asarray(self.occluded, dtype=bool).reshape(n)
        if self.transforms is None:
            self.transforms = np.zeros((n, 6))
        self.transforms = np.asarray(self.transforms, dtype=float).reshape(n, 6)
        ok = ~self.occluded
        if not np.all(np.isfinite(self.centroids[ok])):
            raise StreamError(f"object {self.object_id}: non-finite centroid in a visible frame")

    def __len__(self):
        return len(self.centroids)

    @property
    def end(self) -> int:
        return self.start + len(self) - 1

    def covers(self, a: int, b: int) -> bool:
        return self.start <= a and b <= self.end

    def window(self, a: int, b: int):
        """Rows for frames a..b inclusive."""
        return slice(a - self.start, b - self.start + 1)


@dataclass
class GroundTruth:
    segments: list[tuple[int, int]]
    subactivities: list[str]
    affordances: list[dict[str, str]]
    highlevel: str | None = None


@dataclass
class ActivitySequence:
    sequence_id: str
    subject_id: str
    skeleton: Skeleton
    objects: list[ObjectTrack]
    truth: GroundTruth | None = None
    meta: dict = field(default_factory=dict)

    @property
    def num_frames(self) -> int:
        return len(self.skeleton)

    def validate(self) -> None:
        T = self.num_frames
        for t in self.objects:
            if not t.covers(0, T - 1):
                raise StreamError(f"object {t.object_id} does not span frames 0..{T - 1}")
        if self.truth is None:
            return
        segs = self.truth.segments
        if not segs or segs[0][0] != 0 or segs[-1][1] != T - 1:
            raise StreamError("ground-truth segments do not cover the sequence")
        for (a0, b0), (a1, _) in zip(segs, segs[1:]):
            if a1 != b0 + 1:
                raise StreamError(f"ground-truth segments not contiguous at frame {a1}")
        if len(self.truth.subactivities) != len(segs) or len(self.truth.affordances) != len(segs):
            raise StreamError("ground truth needs one label set per segment")
        ids = {t.object_id for t in self.objects}
        for s, aff in enumerate(self.truth.affordances):
            if set(aff) != ids:
                raise StreamError(f"segment {s}: affordance labels do not match the object set")
