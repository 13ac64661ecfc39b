"""Element-randomized gridworld tasks with a hierarchical language agent."""

__version__ = "0.1.0"

from .elements import Color, ElementId, GoalPredicate, Shape  # noqa: F401
from .gridworld import Action, Family, TaskSpec, WorldState, new_task, step  # noqa: F401
