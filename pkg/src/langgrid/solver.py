"""Scripted breadth-first planner over the deterministic world mechanics.

Used three ways: as the generation-time reachability check, as the ORACLE
evaluation policy, and as a perfect option executor when the learned
low level should be factored out of a test.
"""
from __future__ import annotations

from collections import deque
from typing import Optional

import numpy as np

from .elements import ElementId, Shape
from .gridworld import (
    DIR_VEC,
    Action,
    DoorState,
    Heading,
    ROOM_SPAN,
    WorldState,
    step,
)

State = tuple[int, int, Heading]


def _bfs(world: WorldState, accept) -> Optional[list[Action]]:
    """Shortest action list over (pos, heading) reaching an accepted state."""
    start: State = (*world.agent_pos, world.agent_dir)
    if accept(world, start):
        return []
    prev: dict[State, tuple[State, Action]] = {start: (start, Action.LEFT)}
    queue = deque([start])
    while queue:
        x, y, d = queue.popleft()
        succs = [
            ((x, y, Heading((d - 1) % 4)), Action.LEFT),
            ((x, y, Heading((d + 1) % 4)), Action.RIGHT),
        ]
        dx, dy = DIR_VEC[d]
        if world.passable(x + dx, y + dy):
            succs.append(((x + dx, y + dy, d), Action.FORWARD))
        for nxt, act in succs:
            if nxt in prev:
                continue
            prev[nxt] = ((x, y, d), act)
            if accept(world, nxt):
                actions = []
                cur = nxt
                while cur != start:
                    cur, a = prev[cur]
                    actions.append(a)
                return actions[::-1]
            queue.append(nxt)
    return None


def _facing(state: State) -> tuple[int, int]:
    x, y, d = state
    dx, dy = DIR_VEC[d]
    return (x + dx, y + dy)


def nav_to_face(world: WorldState, targets: set[tuple[int, int]]) -> Optional[list[Action]]:
    return _bfs(world, lambda w, s: _facing(s) in targets)


def nav_to_room(world: WorldState, room: int) -> Optional[list[Action]]:
    def accept(w, s):
        x, y, _ = s
        return not w.is_wall(x, y) and w.room_of(x, y) == room
    return _bfs(world, accept)


def _apply(world: WorldState, actions: list[Action]) -> None:
    for a in actions:
        step(world, a)


def _empty_floor_targets(world: WorldState) -> set[tuple[int, int]]:
    out = set()
    r = world.agent_room
    for pos in world.room_interior(r):
        if pos not in world.objects and pos != world.agent_pos:
            out.add(pos)
    return out


def _door_sides(world: WorldState, pos: tuple[int, int]) -> list[int]:
    """Interior rooms adjacent to a door cell."""
    x, y = pos
    rooms = []
    for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nx, ny = x + dx, y + dy
        if world.in_grid(nx, ny) and not world.is_wall(nx, ny):
            rooms.append(world.room_of(nx, ny))
    return sorted(set(rooms))


def plan_interact(world: WorldState, eid: ElementId,
                  at: Optional[tuple[int, int]] = None) -> Optional[list[Action]]:
    """Action sequence consummating one interaction with an instance of eid.

    Pickups drop a carried item first when needed; door plans unlock with a
    carried matching key and walk through into the adjacent room afterwards
    (decorative doors just get opened). Returns None when impossible from
    the current state, e.g. a locked door without the right key in hand.
    """
    sim = world.copy()
    sim.max_steps = 10 ** 9
    sim.done = False
    room = sim.agent_room
    plan: list[Action] = []

    if eid.shape != Shape.DOOR:
        if sim.carried == eid:
            # re-pick the carried instance: drop it and take it back
            nav = nav_to_face(sim, _empty_floor_targets(sim))
            if nav is None:
                return None
            leg = nav + [Action.DROP, Action.PICKUP]
            _apply(sim, leg)
            return leg if sim.carried == eid else None
        if sim.carried is not None:
            nav = nav_to_face(sim, _empty_floor_targets(sim))
            if nav is None:
                return None
            leg = nav + [Action.DROP]
            _apply(sim, leg)
            plan += leg
        targets = {pos for pos, e in sim.objects.items()
                   if e == eid and sim.room_of(*pos) == room}
        if at is not None:
            targets &= {at}
        if not targets:
            return None
        nav = nav_to_face(sim, targets)
        if nav is None:
            return None
        leg = nav + [Action.PICKUP]
        _apply(sim, leg)
        plan += leg
        return plan if sim.carried == eid else None

    # door subgoal: open if needed, then walk through when it leads somewhere;
    # instances that can still be opened come before already-open ones
    candidates = [pos for pos in sim.room_doors(room)
                  if sim.doors[pos].color == eid.color]
    if at is not None:
        candidates = [pos for pos in candidates if pos == at]
    scored = []
    for pos in candidates:
        nav = nav_to_face(sim, {pos})
        if nav is not None:
            already_open = sim.doors[pos].state == DoorState.OPEN
            scored.append((already_open, len(nav), pos, nav))
    scored.sort(key=lambda t: (t[0], t[1], t[2]))

    for _, _, pos, nav in scored:
        door = sim.doors[pos]
        branch = sim.copy()
        leg: list[Action] = []
        if door.state == DoorState.LOCKED:
            if branch.carried != ElementId(door.color, Shape.KEY):
                continue
            leg = nav + [Action.TOGGLE]
        elif door.state == DoorState.CLOSED:
            leg = nav + [Action.TOGGLE]
        _apply(branch, leg)
        sides = [r for r in _door_sides(branch, pos) if r != room]
        if sides:
            through = nav_to_room(branch, sides[0])
            if through is None:
                if not leg:
                    continue
            else:
                _apply(branch, through)
                leg = leg + through
        if not leg:
            continue  # already-open decorative door: nothing to execute
        return plan + leg
    return None


def solve_task(world: WorldState) -> Optional[list[Action]]:
    """Full scripted solution: collect keys, open and cross each chain door,
    then interact with the goal object. Returns None if any leg fails."""
    sim = world.copy()
    sim.max_steps = 10 ** 9
    sim.done = False
    plan: list[Action] = []
    for pos in sim.chain_doors:
        door = sim.doors[pos]
        if door.state == DoorState.LOCKED:
            key = ElementId(door.color, Shape.KEY)
            if sim.carried != key:
                leg = plan_interact(sim, key)
                if leg is None:
                    return None
                _apply(sim, leg)
                plan += leg
        if door.state != DoorState.OPEN or sim.room_of(*sim.agent_pos) != _door_sides(sim, pos)[-1]:
            leg = plan_interact(sim, door.element, at=pos)
            if leg is None:
                return None
            _apply(sim, leg)
            plan += leg
    leg = plan_interact(sim, sim.goal_element)
    if leg is None:
        return None
    plan += leg

    # confirm on a fresh copy under the real step budget
    check = world.copy()
    reward = 0.0
    for a in plan:
        if check.done:
            return None
        _, out = step(check, a)
        reward += out.reward
    return plan if reward > 0.0 else None
