"""External language-trajectory memory: record, replay, explore, mutate.

High-level episodes are stored as ordered canonical sentences (one per
consummated subgoal). Replaying executes the sentences in sequence; a step
that cannot be resolved or completed can be patched by swapping in a related
element (same shape first, then same color) — the depth-1 heuristic repair.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .elements import ElementId, related
from .gridworld import WorldState, abstract_obs
from .language import Sentence, parse, subgoal_to_sentence
from .options import run_high_level_episode, run_option, uniform_chooser, as_executor


class Outcome(Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    TRUNCATED = "truncated"


class PairingViolation(ValueError):
    """A stored sentence does not match its paired element."""


class UnresolvableStep(RuntimeError):
    """Replay could not resolve or complete a step; carries the index."""

    def __init__(self, index: int, reason: str = "absent"):
        super().__init__(f"step {index} failed ({reason})")
        self.index = index
        self.reason = reason


Step = tuple[Sentence, ElementId]


@dataclass(frozen=True)
class LanguageTrajectory:
    tag: str
    steps: tuple[Step, ...]
    outcome: Outcome
    total_reward: float

    def __len__(self) -> int:
        return len(self.steps)


def _check_pairing(steps) -> tuple[Step, ...]:
    out = []
    for sentence, eid in steps:
        if tuple(sentence) != subgoal_to_sentence(eid):
            raise PairingViolation(f"{' '.join(sentence)!r} is not the sentence for {eid}")
        out.append((tuple(sentence), eid))
    return tuple(out)


class MemoryBuffer:
    """Per-task lists of trajectories; the shortest success is canonical."""

    def __init__(self, capacity_per_tag: int = 32):
        self.capacity_per_tag = capacity_per_tag
        self.store: dict[str, list[LanguageTrajectory]] = {}

    def record(self, tag: str, steps, outcome: Outcome, total_reward: float) -> LanguageTrajectory:
        steps = _check_pairing(steps)
        if not steps:
            raise PairingViolation("refusing to store an empty trajectory")
        traj = LanguageTrajectory(tag, steps, outcome, total_reward)
        bucket = self.store.setdefault(tag, [])
        bucket.append(traj)
        if len(bucket) > self.capacity_per_tag:
            canon = self.canonical(tag)
            for i, t in enumerate(bucket):
                if t is not canon:
                    bucket.pop(i)
                    break
        return traj

    def trajectories(self, tag: str) -> list[LanguageTrajectory]:
        return list(self.store.get(tag, []))

    def canonical(self, tag: str) -> Optional[LanguageTrajectory]:
        """Shortest successful trajectory; earliest recorded wins ties."""
        best = None
        for t in self.store.get(tag, []):
            if t.outcome != Outcome.SUCCESS:
                continue
            if best is None or len(t) < len(best):
                best = t
        return best

    # -- plain-text persistence: one block per trajectory ------------------
    #    # task:<tag> outcome:<o> reward:<r>
    #    <one sentence per line>
    #    <blank line>

    def save(self, path: str | Path) -> None:
        lines = []
        for tag in self.store:
            for t in self.store[tag]:
                lines.append(f"# task:{t.tag} outcome:{t.outcome.value} reward:{t.total_reward!r}")
                for sentence, _ in t.steps:
                    lines.append(" ".join(sentence))
                lines.append("")
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")

    @staticmethod
    def load(path: str | Path, capacity_per_tag: int = 32) -> "MemoryBuffer":
        buf = MemoryBuffer(capacity_per_tag)
        header = None
        sentences: list[Sentence] = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.startswith("# task:"):
                header = line
                sentences = []
            elif line.strip() == "":
                if header is not None:
                    buf._load_block(header, sentences)
                header = None
            else:
                sentences.append(tuple(line.split()))
        if header is not None:
            buf._load_block(header, sentences)
        return buf

    def _load_block(self, header: str, sentences: list[Sentence]) -> None:
        body = header[len("# task:"):]
        tag, rest = body.rsplit(" outcome:", 1)
        outcome_name, reward_str = rest.split(" reward:")
        steps = [(s, parse(s).element) for s in sentences]
        traj = LanguageTrajectory(tag, _check_pairing(steps),
                                  Outcome(outcome_name), float(reward_str))
        self.store.setdefault(tag, []).append(traj)


def record(buffer: MemoryBuffer, tag: str, steps, outcome: Outcome,
           total_reward: float = 0.0) -> LanguageTrajectory:
    return buffer.record(tag, steps, outcome, total_reward)


def _execute_step(world: WorldState, executor, eid: ElementId,
                  option_max_steps: int, retries: int) -> tuple[str, float]:
    """Run options on eid until the interaction consummates.

    Returns (status, env_reward) with status in {"done", "terminal",
    "absent", "stuck"}. One option can end early on an observation change it
    caused itself (e.g. a preparatory drop), hence the bounded retries.
    """
    reward = 0.0
    for _ in range(retries):
        if world.done:
            return "terminal", reward
        counts = abstract_obs(world)
        if counts[eid.index] == 0:
            return "absent", reward
        res = run_option(world, executor, eid, option_max_steps)
        reward += res.env_reward
        if res.terminal:
            return "terminal", reward
        if res.consummated:
            return "done", reward
    return "stuck", reward


def replay(traj: LanguageTrajectory, world: WorldState, executor,
           option_max_steps: int, step_retries: int = 4) -> bool:
    """Execute the stored sentences in order on a fresh world.

    Returns True iff the episode's final reward was collected. Raises
    UnresolvableStep (with the step index) when a sentence has no present
    instance or cannot be completed.
    """
    executor = as_executor(executor)
    if len(traj) == 0:
        raise UnresolvableStep(0, "empty trajectory")
    total = 0.0
    for i, (sentence, _) in enumerate(traj.steps):
        eid = parse(sentence).element
        status, r = _execute_step(world, executor, eid, option_max_steps, step_retries)
        total += r
        if status == "terminal":
            return total > 0.0
        if status in ("absent", "stuck"):
            raise UnresolvableStep(i, status)
    return total > 0.0


def heuristic_variants(traj: LanguageTrajectory, failed_index: int) -> list[LanguageTrajectory]:
    """The 8 single-step substitutions of the failed step, same-shape first."""
    if not 0 <= failed_index < len(traj):
        raise IndexError(f"failed_index {failed_index} out of range")
    variants = []
    for sub in related(traj.steps[failed_index][1]):
        steps = list(traj.steps)
        steps[failed_index] = (subgoal_to_sentence(sub), sub)
        variants.append(LanguageTrajectory(traj.tag, tuple(steps), traj.outcome,
                                           traj.total_reward))
    return variants


def replay_with_repair(traj: LanguageTrajectory, world: WorldState, executor,
                       option_max_steps: int, step_retries: int = 4
                       ) -> tuple[bool, int]:
    """Replay, patching each failed step with its first workable related element.

    Returns (success, repairs_used). Depth-1 per step: every failed index is
    repaired independently from the variant list for that index.
    """
    executor = as_executor(executor)
    current = traj
    repairs = 0
    i = 0
    while i < len(current):
        sentence, _ = current.steps[i]
        eid = parse(sentence).element
        status, r = _execute_step(world, executor, eid, option_max_steps, step_retries)
        if status == "terminal":
            return world.done and r > 0.0, repairs
        if status == "done":
            i += 1
            continue
        patched = False
        for variant in heuristic_variants(current, i):
            sub = variant.steps[i][1]
            if abstract_obs(world)[sub.index] == 0:
                continue
            status, r = _execute_step(world, executor, sub, option_max_steps, step_retries)
            if status == "terminal":
                return world.done and r > 0.0, repairs + 1
            if status == "done":
                current = variant
                repairs += 1
                patched = True
                break
        if not patched:
            return False, repairs
        i += 1
    return False, repairs


def explore(world_factory: Callable[[], WorldState], executor, budget_episodes: int,
            option_max_steps: int, rng: np.random.Generator,
            decision_cap: int = 64) -> Optional[LanguageTrajectory]:
    """Uniform subgoal exploration over fresh worlds; no instruction consumed.

    Returns the first trajectory whose episode collected the final reward,
    else None. Recorded steps are the consummated interactions, in order.
    """
    executor = as_executor(executor)
    chooser = uniform_chooser(rng)
    for _ in range(budget_episodes):
        world = world_factory()
        result = run_high_level_episode(world, executor, chooser,
                                        option_max_steps, decision_cap)
        if result.success and result.trace:
            return LanguageTrajectory("", tuple(result.trace), Outcome.SUCCESS,
                                      result.env_reward)
    return None
