"""High-level subgoal selector: Q-policy over (instruction, abstract observation).

Trained as a DQN whose exploration and greedy argmax are both masked to the
element classes present in the current room. One option execution = one
stored transition = one minibatch update; the target network syncs on an
episode schedule and training stops once the trailing success rate clears
the configured error bar.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import neural
from .elements import (
    N_COLORS,
    N_ELEMENTS,
    N_SHAPES,
    Color,
    ElementId,
    GoalPredicate,
    Shape,
)
from .gridworld import TaskSpec, abstract_obs, new_task
from .language import TokenSeq, Vocabulary, generate, default_vocabulary
from .neural import ParamSet, SelectorNet, Tensor
from .options import run_option, as_executor


class EmptyObservation(ValueError):
    """No element instance is present to select from."""


@dataclass
class LcnConfig:
    capacity: int = 10000
    batch_size: int = 32
    gamma: float = 0.9
    lr: float = 1e-3
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_frac: float = 0.2     # fraction of max_episodes to decay over
    target_sync: int = 200          # episodes between target syncs
    err_rate: float = 0.05          # stop once 1 - s_r <= err_rate
    option_max_steps: int = 30
    max_episodes: int = 20000
    fuzzy_frac: float = 0.2         # share of fuzzy instructions when training
    seed: int = 0
    max_episode_steps: int = 100
    distractor_lo: int = 3
    distractor_hi: int = 5
    decision_cap: int = 16
    emb_dim: int = 16
    obs_hid: int = 64
    hid_dim: int = 64


@dataclass
class HighTransition:
    obs: np.ndarray            # abstract observation when the subgoal was chosen
    tokens: TokenSeq
    subgoal: int
    reward: float
    next_obs: np.ndarray
    terminal: bool


class ReplayBuffer:
    """FIFO ring buffer of high-level transitions."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.storage: list[HighTransition] = []
        self.inserted = 0

    def add(self, t: HighTransition) -> None:
        if t.obs[t.subgoal] < 1:
            raise ValueError("stored subgoal was not present in its observation")
        if len(self.storage) < self.capacity:
            self.storage.append(t)
        else:
            self.storage[self.inserted % self.capacity] = t
        self.inserted += 1

    def __len__(self) -> int:
        return len(self.storage)

    def sample(self, rng: np.random.Generator, n: int) -> list[HighTransition]:
        idx = rng.integers(len(self.storage), size=n)
        return [self.storage[int(i)] for i in idx]


class LcnPolicy:
    """Online/target parameter pair over the selector network."""

    def __init__(self, net: SelectorNet, online: ParamSet, target: ParamSet,
                 vocab: Vocabulary):
        self.net = net
        self.online = online
        self.target = target
        self.vocab = vocab

    @staticmethod
    def create(config: LcnConfig, rng: np.random.Generator,
               vocab: Optional[Vocabulary] = None) -> "LcnPolicy":
        vocab = vocab or default_vocabulary()
        net = SelectorNet(len(vocab), N_ELEMENTS, N_ELEMENTS,
                          config.emb_dim, config.obs_hid, config.hid_dim)
        online = net.init_params(rng)
        return LcnPolicy(net, online, online.snapshot(), vocab)

    def q_values(self, obs: np.ndarray, tokens: TokenSeq,
                 params: Optional[ParamSet] = None) -> np.ndarray:
        params = params if params is not None else self.online
        q, _ = self.net.forward_np(params, tokens.ids, tokens.length,
                                   np.asarray(obs, dtype=np.float64))
        return q[0]

    def hidden(self, obs: np.ndarray, tokens: TokenSeq) -> np.ndarray:
        _, z = self.net.forward_np(self.online, tokens.ids, tokens.length,
                                   np.asarray(obs, dtype=np.float64))
        return z[0]

    def sync_target(self) -> None:
        self.target = self.online.snapshot()

    def save(self, path: str | Path) -> None:
        arrays = {f"online/{k}": v for k, v in self.online.arrays.items()}
        arrays.update({f"target/{k}": v for k, v in self.target.arrays.items()})
        neural.save_arrays(path, arrays)

    @staticmethod
    def load(path: str | Path, vocab: Optional[Vocabulary] = None) -> "LcnPolicy":
        arrays = neural.load_arrays(path)
        online = ParamSet({k[len("online/"):]: v for k, v in arrays.items()
                           if k.startswith("online/")})
        target = ParamSet({k[len("target/"):]: v for k, v in arrays.items()
                           if k.startswith("target/")})
        vocab = vocab or default_vocabulary()
        emb_dim = online["emb"].shape[1]
        obs_hid = online["obs.w"].shape[1]
        hid = online["h1.w"].shape[1]
        net = SelectorNet(online["emb"].shape[0], N_ELEMENTS, N_ELEMENTS,
                          emb_dim, obs_hid, hid)
        return LcnPolicy(net, online, target, vocab)


def select_subgoal(policy: LcnPolicy, obs: np.ndarray, tokens: TokenSeq,
                   epsilon: float, rng: np.random.Generator) -> ElementId:
    """Masked epsilon-greedy choice over the elements present in obs."""
    present = np.flatnonzero(np.asarray(obs) > 0)
    if len(present) == 0:
        raise EmptyObservation("all element counts are zero")
    if rng.random() < epsilon:
        return ElementId.from_index(int(present[int(rng.integers(len(present)))]))
    q = policy.q_values(obs, tokens)
    best = present[int(np.argmax(q[present]))]
    return ElementId.from_index(int(best))


def dqn_target(batch: list[HighTransition], policy: LcnPolicy,
               gamma: float) -> np.ndarray:
    """Per-transition TD targets; the bootstrap max is masked to present elements."""
    ys = np.zeros(len(batch))
    for i, t in enumerate(batch):
        if t.terminal:
            ys[i] = t.reward
        else:
            q = policy.q_values(t.next_obs, t.tokens, params=policy.target)
            present = np.flatnonzero(np.asarray(t.next_obs) > 0)
            bootstrap = float(q[present].max()) if len(present) else 0.0
            ys[i] = t.reward + gamma * bootstrap
    return ys


def td_gradients(policy: LcnPolicy, batch: list[HighTransition],
                 ys: np.ndarray) -> tuple[dict[str, np.ndarray], float]:
    """Gradients of the mean squared TD error over a minibatch."""
    pt = policy.online.lift()
    rows = []
    for t in batch:
        q, _ = policy.net.forward(pt, t.tokens.ids, t.tokens.length,
                                  np.asarray(t.obs, dtype=np.float64))
        rows.append(q)
    qs = neural.concat(rows, axis=0)
    picked = neural.select_cols(qs, np.asarray([t.subgoal for t in batch]))
    diff = neural.sub(Tensor(ys[:, None]), picked)
    loss = neural.scale(neural.tsum(neural.mul(diff, diff)), 1.0 / len(batch))
    if not np.isfinite(loss.data).all():
        raise neural.NonFiniteLoss("TD loss is non-finite")
    neural.backward(loss)
    return neural.grads_from(pt, policy.online), float(loss.data)


FUZZY_PREDICATES = [GoalPredicate(color=c) for c in Color] + \
                   [GoalPredicate(shape=s) for s in Shape]


def sample_instruction(rng: np.random.Generator,
                       fuzzy_frac: float) -> GoalPredicate:
    if rng.random() < fuzzy_frac:
        return FUZZY_PREDICATES[int(rng.integers(len(FUZZY_PREDICATES)))]
    return GoalPredicate.of(ElementId.from_index(int(rng.integers(N_ELEMENTS))))


def epsilon_at(config: LcnConfig, episode: int) -> float:
    horizon = max(1, int(config.max_episodes * config.eps_decay_frac))
    frac = min(1.0, episode / horizon)
    return config.eps_start + frac * (config.eps_end - config.eps_start)


@dataclass
class LcnTrainResult:
    policy: "LcnPolicy"
    converged: bool
    episodes: int
    s_r: float
    rows: list[dict] = field(default_factory=list)


def train_lcn(config: LcnConfig, executor,
              log: Optional[Callable[[dict], None]] = None) -> LcnTrainResult:
    """DQN training loop against a frozen low-level executor.

    `executor` is a SenPolicy, an options.Executor, or the string "oracle".
    Stops when 1 - s_r <= err_rate (s_r over the trailing 100 episodes,
    checked every 100) or when the episode budget runs out.
    """
    executor = as_executor(executor)
    rng = np.random.default_rng(config.seed)
    policy = LcnPolicy.create(config, rng)
    buffer = ReplayBuffer(config.capacity)

    window: list[bool] = []
    window_exact: list[tuple[bool, bool]] = []  # (success, was_fuzzy)
    recent_losses: list[float] = []
    rows: list[dict] = []
    converged = False
    episode = 0
    s_r = 0.0

    while episode < config.max_episodes:
        episode += 1
        pred = sample_instruction(rng, config.fuzzy_frac)
        sentence = generate(pred, rng)
        tokens = policy.vocab.tokenize(sentence)
        spec = TaskSpec.one_room(
            pred, distractor_range=(config.distractor_lo, config.distractor_hi),
            max_steps=config.max_episode_steps, instruction=False)
        world, _ = new_task(spec, int(rng.integers(2 ** 62)))

        eps = epsilon_at(config, episode)
        success = False
        decisions = 0
        while not world.done and decisions < config.decision_cap:
            counts = abstract_obs(world)
            if not (counts > 0).any():
                break
            decisions += 1
            g = select_subgoal(policy, counts, tokens, eps, rng)
            res = run_option(world, executor, g, config.option_max_steps)
            buffer.add(HighTransition(counts, tokens, g.index, res.high_reward,
                                      res.obs_after, res.terminal))
            if len(buffer) >= config.batch_size:
                batch = buffer.sample(rng, config.batch_size)
                ys = dqn_target(batch, policy, config.gamma)
                grads, loss = td_gradients(policy, batch, ys)
                neural.apply_update(policy.online, grads, config.lr)
                recent_losses.append(loss)
            if res.terminal:
                success = res.env_reward > 0
                break

        window.append(success)
        window_exact.append((success, not pred.fully_specified))
        if len(window) > 100:
            window.pop(0)
            window_exact.pop(0)
        if episode % config.target_sync == 0:
            policy.sync_target()
        if episode % 100 == 0:
            s_r = sum(window) / len(window)
            exact = [s for s, fz in window_exact if not fz]
            fuzzy = [s for s, fz in window_exact if fz]
            row = {
                "episode": episode,
                "s_r": s_r,
                "s_r_exact": sum(exact) / len(exact) if exact else 0.0,
                "s_r_fuzzy": sum(fuzzy) / len(fuzzy) if fuzzy else 0.0,
                "epsilon": eps,
                "loss": float(np.mean(recent_losses[-200:])) if recent_losses else 0.0,
                "buffer": len(buffer),
            }
            rows.append(row)
            if log is not None:
                log(row)
            if 1.0 - s_r <= config.err_rate:
                converged = True
                break
    return LcnTrainResult(policy, converged, episode, s_r, rows)
