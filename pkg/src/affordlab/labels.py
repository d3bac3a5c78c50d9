"""Label vocabularies for sub-activities, affordances and high-level activities."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

SUBACTIVITY_LABELS = (
    "reaching", "moving", "pouring", "eating", "drinking",
    "opening", "placing", "closing", "scrubbing", "null",
)

AFFORDANCE_LABELS = (
    "reachable", "movable", "pourable", "pourto", "containable", "drinkable",
    "openable", "placeable", "closable", "scrubbable", "scrubber", "stationary",
)

HIGHLEVEL_LABELS = (
    "making_cereal", "taking_medicine", "stacking_objects", "unstacking_objects",
    "microwaving_food", "picking_objects", "cleaning_objects", "taking_food",
    "arranging_objects", "having_meal",
)


def _check_names(kind: str, names: Sequence[str]) -> tuple[str, ...]:
    names = tuple(names)
    if not names:
        raise ValueError(f"{kind} label list is empty")
    if len(set(names)) != len(names):
        raise ValueError(f"{kind} label names are not unique: {names}")
    return names


@dataclass(frozen=True)
class LabelSpace:
    """Ordered label lists. Label indices are positions in these tuples."""

    subactivity_labels: tuple[str, ...] = field(default=SUBACTIVITY_LABELS)
    affordance_labels: tuple[str, ...] = field(default=AFFORDANCE_LABELS)
    highlevel_labels: tuple[str, ...] = field(default=HIGHLEVEL_LABELS)

    def __post_init__(self):
        object.__setattr__(self, "subactivity_labels",
                           _check_names("sub-activity", self.subactivity_labels))
        object.__setattr__(self, "affordance_labels",
                           _check_names("affordance", self.affordance_labels))
        object.__setattr__(self, "highlevel_labels",
                           _check_names("high-level", self.highlevel_labels))

    @property
    def n_activity(self) -> int:
        return len(self.subactivity_labels)

    @property
    def n_affordance(self) -> int:
        return len(self.affordance_labels)

    def subactivity_index(self, name: str) -> int:
        return self.subactivity_labels.index(name)

    def affordance_index(self, name: str) -> int:
        return self.affordance_labels.index(name)

    def highlevel_index(self, name: str) -> int:
        return self.highlevel_labels.index(name)

    def to_dict(self) -> dict:
        return {
            "subactivity_labels": list(self.subactivity_labels),
            "affordance_labels": list(self.affordance_labels),
            "highlevel_labels": list(self.highlevel_labels),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LabelSpace":
        return cls(tuple(d["subactivity_labels"]), tuple(d["affordance_labels"]),
                   tuple(d["highlevel_labels"]))
