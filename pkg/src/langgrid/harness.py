"""Experiment orchestration: evaluation bundles, memory pipeline, exports.

Bundles:
  random   uniform primitive actions
  oracle   scripted breadth-first solver (upper bound)
  flat     low-level executor driven by uniformly random present subgoals
  hier     the full method: instruction-driven subgoal selection on
           instruction tasks; explore-then-replay language memory on the
           instruction-free multi-room tasks
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import memory as memory_mod
from . import solver
from .config import ConfigError
from .elements import GoalPredicate, N_ELEMENTS, ElementId, all_elements
from .gridworld import (
    Action,
    Family,
    N_ACTIONS,
    TaskSpec,
    WorldState,
    grid_obs,
    new_task,
    step,
)
from .language import subgoal_to_sentence
from .memory import MemoryBuffer, Outcome
from .options import run_high_level_episode, uniform_chooser, as_executor
from .selector import LcnPolicy, select_subgoal


@dataclass
class EvalReport:
    family: str
    bundle: str
    episodes: int
    successes: int
    success_pct: float
    std_pct: float               # std over per-100-episode batch success rates
    mean_high_steps: float       # over successful episodes
    mean_low_steps: float        # over successful episodes

    @property
    def display_pct(self) -> str:
        return format_pct(self.success_pct)


def format_pct(pct: float) -> str:
    """Report convention: fewer than 1 success in 100 episodes prints "<1"."""
    if pct < 1.0:
        return "<1"
    return f"{pct:.1f}"


def _batch_std(successes: list[bool]) -> float:
    batches = [successes[i:i + 100] for i in range(0, len(successes), 100)]
    rates = [100.0 * sum(b) / len(b) for b in batches if b]
    if len(rates) < 2:
        return 0.0
    return float(np.std(rates, ddof=1))


def _report(family: str, bundle: str, results: list[tuple[bool, int, int]]) -> EvalReport:
    successes = [s for s, _, _ in results]
    wins = [(h, l) for s, h, l in results if s]
    n = len(results)
    return EvalReport(
        family=family, bundle=bundle, episodes=n, successes=sum(successes),
        success_pct=100.0 * sum(successes) / n,
        std_pct=_batch_std(successes),
        mean_high_steps=float(np.mean([h for h, _ in wins])) if wins else 0.0,
        mean_low_steps=float(np.mean([l for _, l in wins])) if wins else 0.0,
    )


def _episode_random(world: WorldState, rng: np.random.Generator) -> tuple[bool, int, int]:
    got = 0.0
    while not world.done:
        _, out = step(world, Action(int(rng.integers(N_ACTIONS))))
        got += out.reward
    return got > 0, 0, world.step_count


def _episode_oracle(world: WorldState) -> tuple[bool, int, int]:
    plan = solver.solve_task(world)
    if plan is None:
        return False, 0, 0
    got = 0.0
    for a in plan:
        if world.done:
            break
        _, out = step(world, a)
        got += out.reward
    return got > 0, 0, world.step_count


def evaluate(bundle: str, spec: TaskSpec, episodes: int, seed: int,
             sen=None, lcn: Optional[LcnPolicy] = None,
             option_max_steps: int = 30, explore_budget: int = 200) -> EvalReport:
    """Greedy evaluation of a policy bundle over fresh per-episode worlds."""
    rng = np.random.default_rng(seed)
    results: list[tuple[bool, int, int]] = []

    if bundle == "hier" and not spec.instruction_provided:
        outcome, _ = solve_with_memory(spec, sen, lcn=lcn, budget=explore_budget,
                                       episodes=episodes, seed=seed,
                                       option_max_steps=option_max_steps)
        agg = outcome.aggregate
        return EvalReport(spec.family.value, "hier", agg.episodes, agg.successes,
                          agg.success_pct, agg.std_pct,
                          agg.mean_high_steps, agg.mean_low_steps)

    for _ in range(episodes):
        world, instruction = new_task(spec, int(rng.integers(2 ** 62)))
        if bundle == "random":
            results.append(_episode_random(world, rng))
        elif bundle == "oracle":
            results.append(_episode_oracle(world))
        elif bundle == "flat":
            executor = as_executor(sen)
            res = run_high_level_episode(world, executor, uniform_chooser(rng),
                                         option_max_steps)
            results.append((res.success, res.decisions, res.low_steps))
        elif bundle == "hier":
            if lcn is None:
                raise ValueError("hier bundle on instruction tasks needs an lcn policy")
            tokens = lcn.vocab.tokenize(instruction or ())
            executor = as_executor(sen)

            def choose(counts):
                if not (counts > 0).any():
                    return None
                return select_subgoal(lcn, counts, tokens, 0.0, rng)

            res = run_high_level_episode(world, executor, choose, option_max_steps)
            results.append((res.success, res.decisions, res.low_steps))
        else:
            raise ValueError(f"unknown bundle: {bundle!r}")
    return _report(spec.family.value, bundle, results)


@dataclass
class SolveOutcome:
    aggregate: EvalReport
    pre: Optional[EvalReport]    # episodes before the first stored success
    post: Optional[EvalReport]   # replay episodes afterwards
    buffer: MemoryBuffer


def _task_tag(spec: TaskSpec) -> str:
    fam = spec.family.value if spec.family != Family.MULTI_ROOM else f"{spec.n_rooms}_room"
    return f"{fam}/{spec.goal}"


def solve_with_memory(spec: TaskSpec, sen, lcn: Optional[LcnPolicy] = None,
                      memory_buffer: Optional[MemoryBuffer] = None,
                      budget: int = 100, episodes: int = 100, seed: int = 0,
                      option_max_steps: int = 30,
                      world_factory=None) -> tuple[SolveOutcome, MemoryBuffer]:
    """Explore until one success, then replay the canonical trajectory.

    Phase 1 explores (uniform present-subgoal choices) for up to `budget`
    episodes or until a success is stored; the remaining episodes replay the
    canonical trajectory with heuristic repair. Pre- and post-discovery
    success rates are reported separately, plus the aggregate.
    """
    executor = as_executor(sen if sen is not None else "oracle")
    buffer = memory_buffer if memory_buffer is not None else MemoryBuffer()
    tag = _task_tag(spec)
    rng = np.random.default_rng(seed)

    if world_factory is None:
        def world_factory():
            world, _ = new_task(spec, int(rng.integers(2 ** 62)))
            return world

    chooser = uniform_chooser(np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0]))
    pre: list[tuple[bool, int, int]] = []
    post: list[tuple[bool, int, int]] = []
    explored = 0
    for _ in range(episodes):
        world = world_factory()
        canonical = buffer.canonical(tag)
        if canonical is None:
            if explored >= budget:
                pre.append((False, 0, 0))  # exploration budget exhausted
                continue
            explored += 1
            res = run_high_level_episode(world, executor, chooser, option_max_steps)
            pre.append((res.success, res.decisions, res.low_steps))
            if res.success and res.trace:
                buffer.record(tag, res.trace, Outcome.SUCCESS, res.env_reward)
        else:
            ok, _repairs = memory_mod.replay_with_repair(canonical, world, executor,
                                                         option_max_steps)
            post.append((ok, len(canonical), world.step_count))

    tag_name = _task_tag(spec)
    outcome = SolveOutcome(
        aggregate=_report(tag_name, "hier", pre + post),
        pre=_report(tag_name, "explore", pre) if pre else None,
        post=_report(tag_name, "replay", post) if post else None,
        buffer=buffer,
    )
    return outcome, buffer


def export_embeddings(policy, path: str | Path, kind: str = "lcn") -> int:
    """Penultimate-layer activations for a canonical probe set, as CSV rows."""
    path = Path(path)
    rows = []
    if kind == "lcn":
        obs = np.ones(N_ELEMENTS)
        for e in all_elements():
            sentence = subgoal_to_sentence(e)
            tokens = policy.vocab.tokenize(sentence)
            h = policy.hidden(obs, tokens)
            rows.append([" ".join(sentence), e.color.name.lower(),
                         e.shape.name.lower()] + [f"{v:.10g}" for v in h])
        header = ["sentence", "color", "shape"] + [f"h{i}" for i in range(len(rows[0]) - 3)]
    elif kind == "sen":
        world, _ = new_task(TaskSpec.one_room(GoalPredicate.from_text("red ball"),
                                              instruction=False), seed=0)
        obs = grid_obs(world)
        for e in all_elements():
            h = policy.hidden(obs, e.index, policy.initial_state())
            rows.append([str(e), e.color.name.lower(), e.shape.name.lower()]
                        + [f"{v:.10g}" for v in h])
        header = ["subgoal", "color", "shape"] + [f"h{i}" for i in range(len(rows[0]) - 3)]
    else:
        raise ValueError(f"unknown export kind: {kind!r}")

    with path.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)
    return len(rows)


# ---------------------------------------------------------------------------
# manifests and result files

def file_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir: str | Path, command: str, cfg: dict, seed: int,
                   outputs: Optional[list[str | Path]] = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "seed": seed,
        "config": cfg,
        "outputs": {Path(p).name: file_hash(p) for p in (outputs or []) if Path(p).exists()},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def write_results_csv(out_dir: str | Path, rows: list[dict]) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "results.csv"
    if not rows:
        path.write_text("", encoding="utf-8")
        return path
    fieldnames = list(rows[0])
    with path.open("w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=fieldnames)
        w.writeheader()
        for row in rows:
            w.writerow(row)
    return path


def spec_from_config(task_cfg: dict[str, Any]) -> TaskSpec:
    family = task_cfg["family"]
    try:
        goal = GoalPredicate.from_text(task_cfg["goal"])
    except ValueError as e:
        raise ConfigError(f"bad task goal: {e}") from e
    dr = (task_cfg["distractors_min"], task_cfg["distractors_max"])
    max_steps = task_cfg["max_steps"] or None
    if family == "one_room":
        return TaskSpec.one_room(goal, distractor_range=dr, max_steps=max_steps,
                                 instruction=task_cfg["instruction"])
    if family in ("three_room", "five_room", "nine_room"):
        n = {"three_room": 3, "five_room": 5, "nine_room": 9}[family]
        return TaskSpec.multi_room(n, goal, distractor_range=dr, max_steps=max_steps)
    if family == "random_nine_room":
        return TaskSpec.random_nine_room(goal, distractor_range=dr, max_steps=max_steps)
    raise ConfigError(f"unknown task family: {family!r}")
