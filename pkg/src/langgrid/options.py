"""Option execution: run one subgoal on the world until something changes.

An option ends when the episode ends, the abstract observation changes, or
the low-level step cutoff hits. Door options therefore walk through the
opened door (that is what changes the observation); pickups end on the count
change.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import solver
from .elements import ElementId, Shape
from .gridworld import (
    DIR_VEC,
    Action,
    DoorState,
    Heading,
    WorldState,
    abstract_obs,
    grid_obs,
    step,
)
from .language import Sentence, subgoal_to_sentence


class SubgoalAbsent(ValueError):
    """The requested subgoal has no instance in the current room."""


@dataclass
class OptionResult:
    env_reward: float          # raw environment reward collected
    high_reward: float         # 1.0 iff the goal interaction happened
    obs_after: np.ndarray      # abstract observation when the option ended
    steps_used: int
    terminal: bool
    consummated: bool          # the option interacted with its own subgoal


class OracleExecutor:
    """Perfect scripted executor backed by the breadth-first planner."""

    def __init__(self):
        self._plan: list[Action] = []
        self._i = 0

    def begin_option(self, world: WorldState, g: ElementId) -> None:
        self._plan = solver.plan_interact(world, g) or []
        self._i = 0

    @property
    def exhausted(self) -> bool:
        return self._i >= len(self._plan)

    def next_action(self, world: WorldState) -> Action:
        a = self._plan[self._i]
        self._i += 1
        return a


def _leave_room_plan(world: WorldState, color) -> Optional[list[Action]]:
    """Shortest walk out of the current room using only open doors of `color`."""
    room = world.agent_room
    usable = {pos for pos, d in world.doors.items()
              if d.color == color and d.state == DoorState.OPEN}

    start = (*world.agent_pos, world.agent_dir)
    prev = {start: (start, Action.LEFT)}
    queue = deque([start])

    def done(s):
        x, y, _ = s
        return not world.is_wall(x, y) and world.room_of(x, y) != room

    if done(start):
        return []
    while queue:
        x, y, d = queue.popleft()
        succs = [((x, y, Heading((d - 1) % 4)), Action.LEFT),
                 ((x, y, Heading((d + 1) % 4)), Action.RIGHT)]
        dx, dy = DIR_VEC[d]
        nx, ny = x + dx, y + dy
        passable = world.passable(nx, ny)
        if passable and world.is_wall(nx, ny) and (nx, ny) not in usable:
            passable = False  # only exit through the subgoal's own doors
        if passable:
            succs.append(((nx, ny, d), Action.FORWARD))
        for nxt, act in succs:
            if nxt in prev:
                continue
            prev[nxt] = ((x, y, d), act)
            if done(nxt):
                out = []
                cur = nxt
                while cur != start:
                    cur, a = prev[cur]
                    out.append(a)
                return out[::-1]
            queue.append(nxt)
    return None


class PolicyExecutor:
    """Runs a learned low-level policy on a subgoal.

    The policy is trained on single-room episodes that end at the rewarded
    toggle, so walking through an opened door is off its training
    distribution; with traverse_open_doors on, a scripted walk-through takes
    over once the subgoal door is open (applies equally to every baseline
    that uses this executor).
    """

    def __init__(self, policy, mode: str = "greedy",
                 rng: Optional[np.random.Generator] = None,
                 traverse_open_doors: bool = True):
        self.policy = policy
        self.mode = mode
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.traverse_open_doors = traverse_open_doors
        self._g: Optional[ElementId] = None
        self._state = None
        self._reflex: list[Action] = []

    def begin_option(self, world: WorldState, g: ElementId) -> None:
        self._g = g
        self._state = self.policy.initial_state()
        self._reflex = []

    @property
    def exhausted(self) -> bool:
        return False

    def next_action(self, world: WorldState) -> Action:
        if self._reflex:
            return self._reflex.pop(0)
        if self.traverse_open_doors and self._g.shape == Shape.DOOR:
            # walk through only once no matching door is left to open
            states = [world.doors[pos].state for pos in world.room_doors(world.agent_room)
                      if world.doors[pos].color == self._g.color]
            if states and all(s == DoorState.OPEN for s in states):
                plan = _leave_room_plan(world, self._g.color)
                if plan:
                    self._reflex = list(plan)
                    return self._reflex.pop(0)
        action, self._state = self.policy.act(
            grid_obs(world), self._g.index, self._state, self.mode, self.rng)
        return Action(action)


def as_executor(x) -> object:
    """Accept an executor, a low-level policy, or the string 'oracle'."""
    if isinstance(x, str):
        if x == "oracle":
            return OracleExecutor()
        raise ValueError(f"unknown executor: {x!r}")
    if hasattr(x, "begin_option"):
        return x
    return PolicyExecutor(x)


def run_option(world: WorldState, executor, g: ElementId,
               option_max_steps: int) -> OptionResult:
    """Execute subgoal g until episode end, observation change, or cutoff."""
    executor = as_executor(executor)
    start_counts = abstract_obs(world)
    if start_counts[g.index] == 0:
        raise SubgoalAbsent(f"{g} not present in the current room")
    executor.begin_option(world, g)

    env_reward = 0.0
    consummated = False
    terminal = False
    steps = 0
    while steps < option_max_steps and not executor.exhausted:
        action = executor.next_action(world)
        _, out = step(world, action)
        steps += 1
        if out.interacted == g:
            consummated = True
        env_reward += out.reward
        if out.done:
            terminal = True
            break
        if not np.array_equal(abstract_obs(world), start_counts):
            break
    return OptionResult(
        env_reward=env_reward,
        high_reward=1.0 if env_reward > 0 else 0.0,
        obs_after=abstract_obs(world),
        steps_used=steps,
        terminal=terminal,
        consummated=consummated,
    )


@dataclass
class EpisodeResult:
    success: bool
    env_reward: float
    decisions: int
    low_steps: int
    trace: list[tuple[Sentence, ElementId]] = field(default_factory=list)


def uniform_chooser(rng: np.random.Generator) -> Callable:
    def choose(counts: np.ndarray) -> Optional[ElementId]:
        present = np.flatnonzero(counts > 0)
        if len(present) == 0:
            return None
        return ElementId.from_index(int(present[int(rng.integers(len(present)))]))
    return choose


def run_high_level_episode(world: WorldState, executor, choose: Callable,
                           option_max_steps: int,
                           decision_cap: int = 64) -> EpisodeResult:
    """Drive a whole episode through subgoal choices.

    `choose(counts)` picks the next subgoal (None gives up). Consummated
    subgoals are recorded as (sentence, element) pairs — the language trace.
    """
    executor = as_executor(executor)
    trace: list[tuple[Sentence, ElementId]] = []
    env_reward = 0.0
    decisions = 0
    low_steps = 0
    success = False
    while not world.done and decisions < decision_cap:
        counts = abstract_obs(world)
        g = choose(counts)
        if g is None:
            break
        decisions += 1
        res = run_option(world, executor, g, option_max_steps)
        low_steps += res.steps_used
        env_reward += res.env_reward
        if res.consummated:
            trace.append((subgoal_to_sentence(g), g))
        if res.terminal:
            success = res.env_reward > 0
            break
    return EpisodeResult(success, env_reward, decisions, low_steps, trace)
