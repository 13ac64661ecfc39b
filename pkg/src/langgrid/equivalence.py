"""Abstract task family laboratory: expected return vs goal-pick probability.

A family has k elements; each instruction names one element as its goal,
tasks are present-element sets containing the goal, a trajectory is one
element interaction drawn from the element-choice policy, and the reward is
1 exactly when the chosen element is the goal. Enumerating the expectation
over instructions, tasks and trajectories must equal the closed form
sum_e rho(e) * pi(e | e).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_ELEMENTS = 8
MAX_TASKS = 64


class NotEnumerable(ValueError):
    """Family too large for exhaustive enumeration."""


@dataclass
class AbstractTaskFamily:
    rho: np.ndarray                    # instruction distribution, one per element
    tasks: list[list[tuple[frozenset, float]]]  # per instruction: (present set, prob)
    policy: np.ndarray                 # rows: pi(element | instruction)

    @property
    def k(self) -> int:
        return len(self.rho)

    def validate(self) -> None:
        if self.k > MAX_ELEMENTS:
            raise NotEnumerable(f"k={self.k} exceeds {MAX_ELEMENTS}")
        if not np.isclose(self.rho.sum(), 1.0):
            raise ValueError("rho must sum to 1")
        if self.policy.shape != (self.k, self.k):
            raise ValueError("policy must be k x k")
        if not np.allclose(self.policy.sum(axis=1), 1.0):
            raise ValueError("each policy row must sum to 1")
        for goal, variants in enumerate(self.tasks):
            if len(variants) > MAX_TASKS:
                raise NotEnumerable(f"{len(variants)} task variants exceed {MAX_TASKS}")
            if not np.isclose(sum(p for _, p in variants), 1.0):
                raise ValueError(f"task distribution for goal {goal} must sum to 1")
            for present, _ in variants:
                if goal not in present:
                    raise ValueError("every task must contain its goal element")


def random_family(rng: np.random.Generator, k: int) -> AbstractTaskFamily:
    if k > MAX_ELEMENTS:
        raise NotEnumerable(f"k={k} exceeds {MAX_ELEMENTS}")
    rho = rng.random(k) + 0.05
    rho /= rho.sum()
    policy = rng.random((k, k)) + 0.05
    policy /= policy.sum(axis=1, keepdims=True)
    tasks = []
    for goal in range(k):
        n_variants = int(rng.integers(1, min(MAX_TASKS, 6) + 1))
        variants = []
        probs = rng.random(n_variants) + 0.05
        probs /= probs.sum()
        for p in probs:
            extra = {int(e) for e in range(k) if e != goal and rng.random() < 0.5}
            variants.append((frozenset({goal} | extra), float(p)))
        tasks.append(variants)
    return AbstractTaskFamily(rho, tasks, policy)


@dataclass
class EquivalenceResult:
    j_enumerated: float
    j_closed_form: float
    abs_diff: float
    mc_estimate: float
    mc_stderr: float


def verify_equivalence(family: AbstractTaskFamily, samples: int,
                       rng: np.random.Generator | None = None) -> EquivalenceResult:
    """Exhaustive expectation vs closed form, plus a Monte-Carlo estimate."""
    family.validate()
    rng = rng if rng is not None else np.random.default_rng(0)
    k = family.k

    j_enum = 0.0
    for goal in range(k):
        for present, p_task in family.tasks[goal]:
            for elem in range(k):
                reward = 1.0 if elem == goal else 0.0
                j_enum += family.rho[goal] * p_task * family.policy[goal, elem] * reward

    j_closed = float(sum(family.rho[g] * family.policy[g, g] for g in range(k)))

    draws = np.zeros(samples)
    task_probs = [np.asarray([p for _, p in family.tasks[g]]) for g in range(k)]
    for i in range(samples):
        goal = int(rng.choice(k, p=family.rho))
        rng.choice(len(family.tasks[goal]), p=task_probs[goal])  # task draw
        elem = int(rng.choice(k, p=family.policy[goal]))
        draws[i] = 1.0 if elem == goal else 0.0
    mc = float(draws.mean())
    stderr = float(draws.std(ddof=1) / np.sqrt(samples)) if samples > 1 else float("inf")

    return EquivalenceResult(j_enum, j_closed, abs(j_enum - j_closed), mc, stderr)
