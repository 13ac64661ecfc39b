"""Multi-room gridworld with randomized elements and sparse interaction rewards.

Rooms are 7x7 interiors chained left to right; inter-room doors sit in the
shared wall and may be locked (opened by a matching-color key, which the
unlock consumes). Episodes reward exactly one event: interacting with an
object that satisfies the task goal (pickup for key/box/ball, toggle-open
for doors). The reward is discounted by the steps used.

Task families:
  one room          training tasks, instruction available, goal + distractors
  3 / 5 / 9 rooms   test tasks: fixed object identities, random positions
  random nine room  as nine room, but door/key colors resampled per episode
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Optional

import numpy as np

from .elements import (
    N_ELEMENTS,
    Color,
    ElementId,
    GoalPredicate,
    Shape,
)

ROOM_SIZE = 7          # interior cells per side
ROOM_SPAN = ROOM_SIZE + 1  # interior plus one shared wall column
GRID_H = ROOM_SIZE + 2

# step limits: one-room training default, then 4x the minimum-step upper
# bounds of the 3/5/9-room task settings
DEFAULT_MAX_STEPS = {1: 100, 3: 152, 5: 272, 9: 392}

# fixed chain-door palette for the non-resampled multi-room families
DOOR_PALETTE = [Color.RED, Color.GREEN, Color.BLUE, Color.PURPLE, Color.YELLOW, Color.GREY]


class InvalidSpec(ValueError):
    """Malformed task specification."""


class UnsatisfiableSpec(ValueError):
    """Spec is well-formed but no valid world fits it."""


class Action(IntEnum):
    LEFT = 0
    RIGHT = 1
    FORWARD = 2
    PICKUP = 3
    DROP = 4
    TOGGLE = 5


N_ACTIONS = len(Action)


class Heading(IntEnum):
    N = 0
    E = 1
    S = 2
    W = 3


DIR_VEC = {Heading.N: (0, -1), Heading.E: (1, 0), Heading.S: (0, 1), Heading.W: (-1, 0)}


class DoorState(IntEnum):
    LOCKED = 0
    CLOSED = 1
    OPEN = 2


class Family(Enum):
    ONE_ROOM = "one_room"
    MULTI_ROOM = "multi_room"
    RANDOM_NINE_ROOM = "random_nine_room"


@dataclass
class Door:
    color: Color
    state: DoorState

    @property
    def element(self) -> ElementId:
        return ElementId(self.color, Shape.DOOR)


@dataclass(frozen=True)
class TaskSpec:
    family: Family
    n_rooms: int
    goal: GoalPredicate
    distractor_range: tuple[int, int] = (3, 5)
    max_steps: int = 100
    instruction_provided: bool = False
    # one-room training enrichment: chance the goal door is locked with the
    # matching key pre-carried, and chance a non-door episode starts with a
    # random item in hand (mirrors how options begin in multi-room tasks)
    locked_goal_prob: float = 0.0
    start_carried_prob: float = 0.0

    @staticmethod
    def one_room(goal: GoalPredicate, *, distractor_range=(3, 5), max_steps=None,
                 instruction=True, locked_goal_prob=0.0, start_carried_prob=0.0) -> "TaskSpec":
        return TaskSpec(Family.ONE_ROOM, 1, goal, tuple(distractor_range),
                        max_steps or DEFAULT_MAX_STEPS[1], instruction,
                        locked_goal_prob, start_carried_prob)

    @staticmethod
    def multi_room(n: int, goal: GoalPredicate | None = None, *,
                   distractor_range=(3, 5), max_steps=None) -> "TaskSpec":
        goal = goal if goal is not None else GoalPredicate(Color.RED, Shape.BALL)
        return TaskSpec(Family.MULTI_ROOM, n, goal, tuple(distractor_range),
                        max_steps or DEFAULT_MAX_STEPS.get(n, 0), False)

    @staticmethod
    def random_nine_room(goal: GoalPredicate | None = None, *,
                         distractor_range=(3, 5), max_steps=None) -> "TaskSpec":
        goal = goal if goal is not None else GoalPredicate(Color.RED, Shape.BALL)
        return TaskSpec(Family.RANDOM_NINE_ROOM, 9, goal, tuple(distractor_range),
                        max_steps or DEFAULT_MAX_STEPS[9], False)


def validate_spec(spec: TaskSpec) -> None:
    if spec.family == Family.ONE_ROOM:
        if spec.n_rooms != 1:
            raise InvalidSpec("one-room family must have n_rooms = 1")
    elif spec.family == Family.MULTI_ROOM:
        if spec.n_rooms not in (3, 5, 9):
            raise InvalidSpec(f"multi-room task needs 3, 5 or 9 rooms, got {spec.n_rooms}")
    elif spec.family == Family.RANDOM_NINE_ROOM:
        if spec.n_rooms != 9:
            raise InvalidSpec("random-nine-room family must have n_rooms = 9")
    if spec.family != Family.ONE_ROOM:
        if spec.instruction_provided:
            raise InvalidSpec("multi-room test tasks provide no instruction")
        if not spec.goal.fully_specified:
            raise InvalidSpec("multi-room tasks need a fully specified goal")
    lo, hi = spec.distractor_range
    if lo < 0 or lo > hi:
        raise InvalidSpec(f"bad distractor range: {spec.distractor_range}")
    # interior has 49 cells; keep slack for agent, goal, key and drop space
    if hi > 40:
        raise UnsatisfiableSpec(f"distractor range {spec.distractor_range} exceeds free cells")
    if spec.max_steps <= 0:
        raise InvalidSpec("max_steps must be positive")


@dataclass
class StepOutcome:
    reward: float
    done: bool
    interacted: Optional[ElementId] = None


def success_reward(steps_used: int, max_steps: int) -> float:
    """Sparse success reward, discounted by the steps consumed."""
    return 1.0 - 0.9 * (steps_used / max_steps)


@dataclass
class WorldState:
    """Full world configuration; all mutation happens through step()."""

    spec: TaskSpec
    n_rooms: int
    width: int
    doors: dict[tuple[int, int], Door]
    objects: dict[tuple[int, int], ElementId]
    chain_doors: list[tuple[int, int]]   # inter-room doors, left to right
    agent_pos: tuple[int, int]
    agent_dir: Heading
    carried: Optional[ElementId]
    goal: GoalPredicate
    goal_element: ElementId              # the concrete instance placed as goal
    max_steps: int
    step_count: int = 0
    done: bool = False
    rng: np.random.Generator = field(default_factory=np.random.default_rng, repr=False)

    @property
    def height(self) -> int:
        return GRID_H

    def in_grid(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < GRID_H

    def is_wall(self, x: int, y: int) -> bool:
        return y == 0 or y == GRID_H - 1 or x % ROOM_SPAN == 0

    def room_of(self, x: int, y: int) -> int:
        """Room index of a cell; cells on a shared wall count as the left room."""
        return min(max((x - 1) // ROOM_SPAN, 0), self.n_rooms - 1)

    @property
    def agent_room(self) -> int:
        return self.room_of(*self.agent_pos)

    def room_interior(self, r: int) -> list[tuple[int, int]]:
        x0 = r * ROOM_SPAN + 1
        return [(x, y) for x in range(x0, x0 + ROOM_SIZE) for y in range(1, 1 + ROOM_SIZE)]

    def room_doors(self, r: int) -> list[tuple[int, int]]:
        """Door cells on the boundary ring of room r."""
        x0, x1 = r * ROOM_SPAN, (r + 1) * ROOM_SPAN
        out = []
        for pos in self.doors:
            x, y = pos
            if (x == x0 or x == x1) and 1 <= y <= ROOM_SIZE:
                out.append(pos)
            elif (y == 0 or y == GRID_H - 1) and x0 < x < x1:
                out.append(pos)
        return out

    def front_cell(self) -> tuple[int, int]:
        dx, dy = DIR_VEC[self.agent_dir]
        return (self.agent_pos[0] + dx, self.agent_pos[1] + dy)

    def passable(self, x: int, y: int) -> bool:
        if not self.in_grid(x, y):
            return False
        if self.is_wall(x, y):
            door = self.doors.get((x, y))
            return door is not None and door.state == DoorState.OPEN
        return (x, y) not in self.objects

    def copy(self) -> "WorldState":
        w = WorldState(
            spec=self.spec, n_rooms=self.n_rooms, width=self.width,
            doors={p: Door(d.color, d.state) for p, d in self.doors.items()},
            objects=dict(self.objects), chain_doors=list(self.chain_doors),
            agent_pos=self.agent_pos, agent_dir=self.agent_dir, carried=self.carried,
            goal=self.goal, goal_element=self.goal_element, max_steps=self.max_steps,
            step_count=self.step_count, done=self.done, rng=self.rng,
        )
        return w


def step(world: WorldState, action: Action) -> tuple[WorldState, StepOutcome]:
    """Advance one step in place; illegal actions are no-ops that still cost a step."""
    if world.done:
        raise ValueError("cannot step a terminal world")
    world.step_count += 1
    interacted: Optional[ElementId] = None

    if action == Action.LEFT:
        world.agent_dir = Heading((world.agent_dir - 1) % 4)
    elif action == Action.RIGHT:
        world.agent_dir = Heading((world.agent_dir + 1) % 4)
    elif action == Action.FORWARD:
        fx, fy = world.front_cell()
        if world.passable(fx, fy):
            world.agent_pos = (fx, fy)
    elif action == Action.PICKUP:
        front = world.front_cell()
        if world.carried is None and front in world.objects:
            world.carried = world.objects.pop(front)
            interacted = world.carried
    elif action == Action.DROP:
        fx, fy = world.front_cell()
        if (world.carried is not None and world.in_grid(fx, fy)
                and not world.is_wall(fx, fy) and (fx, fy) not in world.objects
                and (fx, fy) != world.agent_pos):
            world.objects[(fx, fy)] = world.carried
            world.carried = None
    elif action == Action.TOGGLE:
        door = world.doors.get(world.front_cell())
        if door is not None:
            if door.state == DoorState.CLOSED:
                door.state = DoorState.OPEN
                interacted = door.element
            elif door.state == DoorState.LOCKED:
                if world.carried == ElementId(door.color, Shape.KEY):
                    door.state = DoorState.OPEN
                    world.carried = None  # the unlock consumes the key
                    interacted = door.element

    reward = 0.0
    if interacted is not None and world.goal.matches(interacted):
        reward = success_reward(world.step_count, world.max_steps)
    world.done = reward > 0.0 or world.step_count >= world.max_steps
    return world, StepOutcome(reward, world.done, interacted)


def abstract_obs(world: WorldState) -> np.ndarray:
    """Length-24 count vector of element instances in the agent's current room."""
    counts = np.zeros(N_ELEMENTS, dtype=np.int64)
    r = world.agent_room
    for pos, eid in world.objects.items():
        if world.room_of(*pos) == r and not world.is_wall(*pos):
            counts[eid.index] += 1
    for pos in world.room_doors(r):
        counts[world.doors[pos].element.index] += 1
    return counts


# ---------------------------------------------------------------------------
# egocentric view

VIEW_SIZE = 7
# per-cell channels: 4 shapes, 6 colors, 3 door states, wall, empty
C_SHAPE = 0
C_COLOR = C_SHAPE + 4
C_DOOR_STATE = C_COLOR + 6
C_WALL = C_DOOR_STATE + 3
C_EMPTY = C_WALL + 1
N_CHANNELS = C_EMPTY + 1  # 15
CARRIED_DIM = N_ELEMENTS + 1
OBS_DIM = VIEW_SIZE * VIEW_SIZE * N_CHANNELS + CARRIED_DIM

# ahead/right unit vectors per heading, for view-to-world mapping
_AHEAD = {Heading.N: (0, -1), Heading.E: (1, 0), Heading.S: (0, 1), Heading.W: (-1, 0)}
_RIGHT = {h: _AHEAD[Heading((h + 1) % 4)] for h in Heading}


def _room_ring(world: WorldState, r: int) -> tuple[int, int]:
    return r * ROOM_SPAN, (r + 1) * ROOM_SPAN


def grid_obs(world: WorldState) -> np.ndarray:
    """Egocentric 7x7 one-hot view plus carried-object block, flattened.

    The agent sits at the bottom-center of the view looking up it. Only the
    current room (interior plus its boundary ring) is visible; everything
    else, including cells past the walls, is wall-coded.
    """
    view = np.zeros((VIEW_SIZE, VIEW_SIZE, N_CHANNELS), dtype=np.float32)
    ax, ay = world.agent_pos
    ahead = _AHEAD[world.agent_dir]
    right = _RIGHT[world.agent_dir]
    x_lo, x_hi = _room_ring(world, world.agent_room)

    for vy in range(VIEW_SIZE):
        for vx in range(VIEW_SIZE):
            k = VIEW_SIZE - 1 - vy   # steps ahead
            j = vx - VIEW_SIZE // 2  # steps to the right
            x = ax + k * ahead[0] + j * right[0]
            y = ay + k * ahead[1] + j * right[1]
            cell = view[vy, vx]
            visible = (world.in_grid(x, y)
                       and x_lo <= x <= x_hi and 0 <= y <= GRID_H - 1)
            if not visible:
                cell[C_WALL] = 1.0
            elif world.is_wall(x, y):
                door = world.doors.get((x, y))
                if door is None:
                    cell[C_WALL] = 1.0
                else:
                    cell[C_SHAPE + Shape.DOOR] = 1.0
                    cell[C_COLOR + door.color] = 1.0
                    cell[C_DOOR_STATE + door.state] = 1.0
            elif (x, y) in world.objects:
                eid = world.objects[(x, y)]
                cell[C_SHAPE + eid.shape] = 1.0
                cell[C_COLOR + eid.color] = 1.0
            else:
                cell[C_EMPTY] = 1.0

    carried = np.zeros(CARRIED_DIM, dtype=np.float32)
    if world.carried is None:
        carried[N_ELEMENTS] = 1.0
    else:
        carried[world.carried.index] = 1.0
    return np.concatenate([view.ravel(), carried])


# ---------------------------------------------------------------------------
# task generation

def _family_rng(spec: TaskSpec) -> np.random.Generator:
    """Identity stream for fixed multi-room families: same for every seed."""
    tag = f"{spec.family.value}:{spec.n_rooms}:{spec.goal}:{spec.distractor_range}"
    return np.random.default_rng(zlib.crc32(tag.encode()))


def _locked_flags(spec: TaskSpec) -> list[bool]:
    n_doors = spec.n_rooms - 1
    if spec.n_rooms == 9:
        # alternate locked/closed so the minimal plan is 4 keys + 8 doors + goal
        return [i % 2 == 0 for i in range(n_doors)]
    return [True] * n_doors


def _pick_free(rng: np.random.Generator, cells: list[tuple[int, int]]) -> tuple[int, int]:
    return cells.pop(int(rng.integers(len(cells))))


def _wall_cells(world: WorldState, r: int) -> list[tuple[int, int]]:
    """Boundary cells of room r that can hold a decorative door."""
    x0, x1 = _room_ring(world, r)
    cells = [(x, 0) for x in range(x0 + 1, x1)]
    cells += [(x, GRID_H - 1) for x in range(x0 + 1, x1)]
    if r == 0:
        cells += [(0, y) for y in range(1, 1 + ROOM_SIZE)]
    if r == world.n_rooms - 1:
        cells += [(x1, y) for y in range(1, 1 + ROOM_SIZE)]
    return [c for c in cells if c not in world.doors]


def _generate(spec: TaskSpec, rng: np.random.Generator) -> WorldState:
    n = spec.n_rooms
    world = WorldState(
        spec=spec, n_rooms=n, width=n * ROOM_SPAN + 1, doors={}, objects={},
        chain_doors=[], agent_pos=(1, 1), agent_dir=Heading.N, carried=None,
        goal=spec.goal, goal_element=spec.goal.satisfying()[0],
        max_steps=spec.max_steps, rng=rng,
    )
    fixed_identities = spec.family == Family.MULTI_ROOM
    fam_rng = _family_rng(spec) if fixed_identities else rng

    # chain doors and their keys
    locked = _locked_flags(spec)
    for i in range(n - 1):
        x = (i + 1) * ROOM_SPAN
        y = 1 + int(rng.integers(ROOM_SIZE))
        if spec.family == Family.MULTI_ROOM:
            color = DOOR_PALETTE[i % len(DOOR_PALETTE)]
        else:
            color = Color(int(fam_rng.integers(len(Color))))
        world.doors[(x, y)] = Door(color, DoorState.LOCKED if locked[i] else DoorState.CLOSED)
        world.chain_doors.append((x, y))

    free = {r: list(world.room_interior(r)) for r in range(n)}
    for i in range(n - 1):
        if locked[i]:
            key = ElementId(world.doors[world.chain_doors[i]].color, Shape.KEY)
            world.objects[_pick_free(rng, free[i])] = key

    # goal object in the last room
    goal_room = n - 1
    if spec.goal.fully_specified:
        goal_elem = spec.goal.element
    else:
        options = spec.goal.satisfying()
        goal_elem = options[int(rng.integers(len(options)))]
    world.goal_element = goal_elem
    goal_locked = False
    if goal_elem.shape == Shape.DOOR:
        walls = _wall_cells(world, goal_room)
        pos = walls[int(rng.integers(len(walls)))]
        goal_locked = spec.locked_goal_prob > 0 and rng.random() < spec.locked_goal_prob
        world.doors[pos] = Door(goal_elem.color,
                                DoorState.LOCKED if goal_locked else DoorState.CLOSED)
    else:
        world.objects[_pick_free(rng, free[goal_room])] = goal_elem

    # distractors; identities come from the family stream in fixed families
    for r in range(n):
        lo, hi = spec.distractor_range
        count = int(fam_rng.integers(lo, hi + 1))
        for _ in range(count):
            if spec.family == Family.ONE_ROOM:
                eid = ElementId.from_index(int(fam_rng.integers(N_ELEMENTS)))
                if spec.goal.fully_specified and eid == spec.goal.element:
                    continue
                if eid.shape == Shape.DOOR:
                    walls = _wall_cells(world, r)
                    if walls:
                        pos = walls[int(rng.integers(len(walls)))]
                        world.doors[pos] = Door(eid.color, DoorState.CLOSED)
                    continue
            else:
                # keep key/door references unambiguous in chained tasks
                shape = Shape.BALL if fam_rng.random() < 0.5 else Shape.BOX
                eid = ElementId(Color(int(fam_rng.integers(len(Color)))), shape)
                if eid == spec.goal.element:
                    continue
            if free[r]:
                world.objects[_pick_free(rng, free[r])] = eid

    # agent start; optionally pre-carry an item (option-style episode starts)
    world.agent_pos = _pick_free(rng, free[0])
    world.agent_dir = Heading(int(rng.integers(4)))
    if goal_locked:
        world.carried = ElementId(goal_elem.color, Shape.KEY)
    elif (spec.family == Family.ONE_ROOM and goal_elem.shape != Shape.DOOR
          and spec.start_carried_prob > 0 and rng.random() < spec.start_carried_prob):
        while True:
            item = ElementId(Color(int(rng.integers(len(Color)))),
                             Shape(int(rng.integers(3))))  # key/box/ball
            if not (spec.goal.fully_specified and item == spec.goal.element):
                world.carried = item
                break
    return world


def new_task(spec: TaskSpec, seed: int) -> tuple[WorldState, Optional[tuple[str, ...]]]:
    """Build a solvable world for (spec, seed); deterministic in both.

    Candidate worlds are drawn from rng(seed) until the scripted solver
    confirms the goal is reachable.
    """
    from . import solver
    from .language import generate

    validate_spec(spec)
    rng = np.random.default_rng(seed)
    for _ in range(50):
        world = _generate(spec, rng)
        if solver.solve_task(world.copy()) is not None:
            instruction = generate(spec.goal, rng) if spec.instruction_provided else None
            return world, instruction
    raise UnsatisfiableSpec(f"no solvable layout found for {spec}")


# ---------------------------------------------------------------------------
# debug rendering

_SHAPE_CHAR = {Shape.KEY: "k", Shape.BOX: "b", Shape.BALL: "o", Shape.DOOR: "d"}
_COLOR_CHAR = {Color.RED: "r", Color.GREEN: "g", Color.BLUE: "b", Color.PURPLE: "p",
               Color.YELLOW: "y", Color.GREY: "e"}
_DIR_CHAR = {Heading.N: "^", Heading.E: ">", Heading.S: "v", Heading.W: "<"}


def render(world: WorldState) -> str:
    """ASCII dump: two characters per cell (color initial + shape code)."""
    rows = []
    for y in range(GRID_H):
        row = []
        for x in range(world.width):
            if (x, y) == world.agent_pos:
                row.append(_DIR_CHAR[world.agent_dir] + "A")
            elif (x, y) in world.doors:
                d = world.doors[(x, y)]
                code = {DoorState.LOCKED: "D", DoorState.CLOSED: "d", DoorState.OPEN: "/"}
                row.append(_COLOR_CHAR[d.color] + code[d.state])
            elif world.is_wall(x, y):
                row.append("##")
            elif (x, y) in world.objects:
                e = world.objects[(x, y)]
                row.append(_COLOR_CHAR[e.color] + _SHAPE_CHAR[e.shape])
            else:
                row.append("..")
        rows.append("".join(row))
    carried = str(world.carried) if world.carried else "nothing"
    rows.append(f"goal: {world.goal}   carrying: {carried}   "
                f"step {world.step_count}/{world.max_steps}")
    return "\n".join(rows)
