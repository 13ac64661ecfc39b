"""Element classes: the 24 (color, shape) object kinds and goal predicates.

An element class is the unit everything else is defined over: world objects
are element instances, subgoals are element indices, and instructions
describe elements fully or partially (color-only / shape-only).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterator, Optional


class Color(IntEnum):
    RED = 0
    GREEN = 1
    BLUE = 2
    PURPLE = 3
    YELLOW = 4
    GREY = 5


class Shape(IntEnum):
    KEY = 0
    BOX = 1
    BALL = 2
    DOOR = 3


N_COLORS = len(Color)
N_SHAPES = len(Shape)
N_ELEMENTS = N_COLORS * N_SHAPES  # 24

COLOR_NAMES = {c: c.name.lower() for c in Color}
SHAPE_NAMES = {s: s.name.lower() for s in Shape}
COLOR_BY_NAME = {v: k for k, v in COLOR_NAMES.items()}
SHAPE_BY_NAME = {v: k for k, v in SHAPE_NAMES.items()}


@dataclass(frozen=True, order=True)
class ElementId:
    """One of the 24 object classes, indexed as color * 4 + shape."""

    color: Color
    shape: Shape

    @property
    def index(self) -> int:
        return int(self.color) * N_SHAPES + int(self.shape)

    @staticmethod
    def from_index(index: int) -> "ElementId":
        if not 0 <= index < N_ELEMENTS:
            raise ValueError(f"element index out of range: {index}")
        return ElementId(Color(index // N_SHAPES), Shape(index % N_SHAPES))

    @property
    def name(self) -> str:
        return f"{COLOR_NAMES[self.color]} {SHAPE_NAMES[self.shape]}"

    def __str__(self) -> str:
        return self.name


def all_elements() -> Iterator[ElementId]:
    for i in range(N_ELEMENTS):
        yield ElementId.from_index(i)


def related(e: ElementId) -> list[ElementId]:
    """Elements sharing e's color or shape, excluding e (always 8 of them).

    Ordered same-shape-first: the 5 other colors of e's shape, then the
    3 other shapes of e's color, each group in enum order.
    """
    same_shape = [ElementId(c, e.shape) for c in Color if c != e.color]
    same_color = [ElementId(e.color, s) for s in Shape if s != e.shape]
    return same_shape + same_color


@dataclass(frozen=True)
class GoalPredicate:
    """Partial element description: at least one of color / shape is set."""

    color: Optional[Color] = None
    shape: Optional[Shape] = None

    def __post_init__(self):
        if self.color is None and self.shape is None:
            raise ValueError("goal predicate needs a color or a shape")

    @property
    def fully_specified(self) -> bool:
        return self.color is not None and self.shape is not None

    @property
    def element(self) -> ElementId:
        if not self.fully_specified:
            raise ValueError(f"predicate {self} does not name a single element")
        return ElementId(self.color, self.shape)

    def matches(self, e: ElementId) -> bool:
        if self.color is not None and e.color != self.color:
            return False
        if self.shape is not None and e.shape != self.shape:
            return False
        return True

    def satisfying(self) -> list[ElementId]:
        return [e for e in all_elements() if self.matches(e)]

    @staticmethod
    def of(e: ElementId) -> "GoalPredicate":
        return GoalPredicate(e.color, e.shape)

    @staticmethod
    def from_text(text: str) -> "GoalPredicate":
        """Parse forms like "red ball", "red", "ball" (used by config files)."""
        color = None
        shape = None
        for word in text.split():
            if word in COLOR_BY_NAME:
                color = COLOR_BY_NAME[word]
            elif word in SHAPE_BY_NAME:
                shape = SHAPE_BY_NAME[word]
            else:
                raise ValueError(f"unknown color/shape word: {word!r}")
        return GoalPredicate(color, shape)

    def __str__(self) -> str:
        parts = []
        if self.color is not None:
            parts.append(COLOR_NAMES[self.color])
        if self.shape is not None:
            parts.append(SHAPE_NAMES[self.shape])
        return " ".join(parts)


def all_predicates() -> list[GoalPredicate]:
    """All 34 predicates: 24 full, 6 color-only, 4 shape-only."""
    preds = [GoalPredicate.of(e) for e in all_elements()]
    preds += [GoalPredicate(color=c) for c in Color]
    preds += [GoalPredicate(shape=s) for s in Shape]
    return preds
