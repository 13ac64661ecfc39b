"""Low-level subgoal executor: goal-conditioned policy over primitive actions.

Trained with synchronous multi-worker advantage actor-critic on randomized
one-room tasks: each worker samples a subgoal uniformly over the 24 element
classes, rolls out up to t_max steps of its own episode, and accumulates
gradients; the summed gradients are applied in one RMSProp update per
iteration. Actor and critic are separate networks of the same shape.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .elements import N_ELEMENTS, ElementId, GoalPredicate
from .gridworld import N_ACTIONS, OBS_DIM, TaskSpec, WorldState, grid_obs, new_task, step
from .gridworld import Action
from . import neural
from .neural import ExecutorNet, ParamSet, RmsPropState, Tensor


@dataclass
class SenConfig:
    workers: int = 4
    iterations: int = 60000
    t_max: int = 20
    gamma: float = 0.99
    lr: float = 7e-4
    entropy_coef: float = 0.01
    rmsprop_decay: float = 0.99
    rmsprop_eps: float = 1e-5
    eval_every: int = 1000
    eval_episodes: int = 2          # greedy episodes per subgoal per eval
    stop_success: float = 0.85      # early stop once eval success reaches this
    seed: int = 0
    max_episode_steps: int = 100
    distractor_lo: int = 3
    distractor_hi: int = 5
    locked_goal_prob: float = 0.3   # door goals: locked with key pre-carried
    start_carried_prob: float = 0.15
    fc_dim: int = 128
    gru_dim: int = 64
    comb_dim: int = 64


def _onehot(i: int, n: int) -> np.ndarray:
    v = np.zeros((1, n))
    v[0, i] = 1.0
    return v


class SenPolicy:
    """Actor/critic parameter pair plus the recurrent-state plumbing."""

    def __init__(self, actor_net: ExecutorNet, critic_net: ExecutorNet,
                 actor: ParamSet, critic: ParamSet, meta: Optional[dict] = None):
        self.actor_net = actor_net
        self.critic_net = critic_net
        self.actor = actor
        self.critic = critic
        self.meta = meta or {"episodes_seen": 0, "subgoal_success": np.zeros(N_ELEMENTS)}

    @staticmethod
    def create(config: SenConfig, rng: np.random.Generator) -> "SenPolicy":
        actor_net = ExecutorNet(OBS_DIM, N_ELEMENTS, N_ACTIONS,
                                config.fc_dim, config.gru_dim, config.comb_dim)
        critic_net = ExecutorNet(OBS_DIM, N_ELEMENTS, 1,
                                 config.fc_dim, config.gru_dim, config.comb_dim)
        return SenPolicy(actor_net, critic_net,
                         actor_net.init_params(rng), critic_net.init_params(rng))

    def initial_state(self) -> np.ndarray:
        return self.actor_net.initial_state()

    def act(self, obs: np.ndarray, g_index: int, state: np.ndarray, mode: str,
            rng: Optional[np.random.Generator] = None) -> tuple[int, np.ndarray]:
        logits, h2, _ = self.actor_net.forward_np(
            self.actor, obs, _onehot(g_index, N_ELEMENTS), state)
        if mode == "greedy":
            return int(np.argmax(logits[0])), h2
        if rng is None:
            raise ValueError("sample mode needs an rng")
        probs = neural.softmax_np(logits)[0]
        return int(rng.choice(N_ACTIONS, p=probs)), h2

    def value(self, obs: np.ndarray, g_index: int,
              state: np.ndarray) -> tuple[float, np.ndarray]:
        v, h2, _ = self.critic_net.forward_np(
            self.critic, obs, _onehot(g_index, N_ELEMENTS), state)
        return float(v[0, 0]), h2

    def hidden(self, obs: np.ndarray, g_index: int, state: np.ndarray) -> np.ndarray:
        _, _, z = self.actor_net.forward_np(
            self.actor, obs, _onehot(g_index, N_ELEMENTS), state)
        return z[0]

    def save(self, path: str | Path) -> None:
        arrays = {f"actor/{k}": v for k, v in self.actor.arrays.items()}
        arrays.update({f"critic/{k}": v for k, v in self.critic.arrays.items()})
        arrays["meta/episodes_seen"] = np.array([float(self.meta["episodes_seen"])])
        arrays["meta/subgoal_success"] = np.asarray(self.meta["subgoal_success"], dtype=np.float64)
        neural.save_arrays(path, arrays)

    @staticmethod
    def load(path: str | Path) -> "SenPolicy":
        arrays = neural.load_arrays(path)
        actor = ParamSet({k[len("actor/"):]: v for k, v in arrays.items() if k.startswith("actor/")})
        critic = ParamSet({k[len("critic/"):]: v for k, v in arrays.items() if k.startswith("critic/")})
        obs_dim, fc_dim = actor["fc1.w"].shape
        gru_dim = actor["gru.uz"].shape[0]
        comb_dim = actor["comb.w"].shape[1]
        actor_net = ExecutorNet(obs_dim, N_ELEMENTS, actor["head.w"].shape[1],
                                fc_dim, gru_dim, comb_dim)
        critic_net = ExecutorNet(obs_dim, N_ELEMENTS, 1, fc_dim, gru_dim, comb_dim)
        meta = {
            "episodes_seen": int(arrays["meta/episodes_seen"][0]),
            "subgoal_success": arrays["meta/subgoal_success"],
        }
        return SenPolicy(actor_net, critic_net, actor, critic, meta)


def compute_returns(rewards: list[float], bootstrap_value: float,
                    gamma: float) -> list[float]:
    """Discounted returns, seeded with the bootstrap beyond the last step."""
    out = [0.0] * len(rewards)
    acc = bootstrap_value
    for j in range(len(rewards) - 1, -1, -1):
        acc = rewards[j] + gamma * acc
        out[j] = acc
    return out


@dataclass
class RolloutSegment:
    subgoal: int
    obs: list[np.ndarray]
    actions: list[int]
    rewards: list[float]
    h0_actor: np.ndarray
    h0_critic: np.ndarray
    terminal: bool
    next_obs: Optional[np.ndarray] = None   # observation after the last step
    values: Optional[list[float]] = None    # value estimates; recomputed if absent
    bootstrap: Optional[float] = None


def a2c_accumulate(policy: SenPolicy, segment: RolloutSegment, gamma: float,
                   entropy_coef: float = 0.0
                   ) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray], dict]:
    """Gradients for one segment: policy-gradient actor, squared-error critic.

    The advantage treats the value estimates as constants. A segment may
    carry its own recorded values/bootstrap; otherwise both come from the
    critic forward pass done here (identical parameters either way).
    """
    g1h = _onehot(segment.subgoal, N_ELEMENTS)
    obs_seq = np.stack(segment.obs)

    pc = policy.critic.lift()
    values_t, hc_final = policy.critic_net.forward_sequence_h(
        pc, obs_seq, g1h, Tensor(segment.h0_critic))
    if segment.values is not None:
        values = np.asarray(segment.values, dtype=np.float64)
    else:
        values = values_t.data[:, 0].copy()
    if segment.terminal:
        bootstrap = 0.0
    elif segment.bootstrap is not None:
        bootstrap = segment.bootstrap
    else:
        v_next, _, _ = policy.critic_net.forward_np(policy.critic, segment.next_obs,
                                                    g1h, hc_final.data)
        bootstrap = float(v_next[0, 0])
    returns = compute_returns(segment.rewards, bootstrap, gamma)
    adv = np.asarray(returns) - values

    pa = policy.actor.lift()
    logits = policy.actor_net.forward_sequence(pa, obs_seq, g1h, Tensor(segment.h0_actor))
    logp = neural.log_softmax(logits)
    picked = neural.select_cols(logp, np.asarray(segment.actions))
    pol_term = neural.tsum(neural.mul(picked, Tensor(-adv[:, None])))
    # entropy bonus: subtracting c*H adds c * sum(p * log p)
    neg_ent = neural.tsum(neural.mul(neural.exp(logp), logp))
    actor_loss = neural.add(pol_term, neural.scale(neg_ent, entropy_coef))
    if not np.isfinite(actor_loss.data).all():
        raise neural.NonFiniteLoss("actor loss is non-finite")
    neural.backward(actor_loss)
    actor_grads = neural.grads_from(pa, policy.actor)

    diff = neural.sub(Tensor(np.asarray(returns)[:, None]), values_t)
    critic_loss = neural.tsum(neural.mul(diff, diff))
    if not np.isfinite(critic_loss.data).all():
        raise neural.NonFiniteLoss("critic loss is non-finite")
    neural.backward(critic_loss)
    critic_grads = neural.grads_from(pc, policy.critic)

    return actor_grads, critic_grads, {
        "actor_loss": float(actor_loss.data), "critic_loss": float(critic_loss.data),
        "returns": returns, "critic_state": hc_final.data,
    }


def default_env_factory(config: SenConfig) -> Callable[[ElementId, int], WorldState]:
    def factory(goal: ElementId, seed: int) -> WorldState:
        spec = TaskSpec.one_room(
            GoalPredicate.of(goal),
            distractor_range=(config.distractor_lo, config.distractor_hi),
            max_steps=config.max_episode_steps, instruction=False,
            locked_goal_prob=config.locked_goal_prob,
            start_carried_prob=config.start_carried_prob)
        world, _ = new_task(spec, seed)
        return world
    return factory


class _Worker:
    """One rollout stream: private env, rng, and recurrent state."""

    def __init__(self, rng: np.random.Generator, env_factory):
        self.rng = rng
        self.env_factory = env_factory
        self.env: Optional[WorldState] = None
        self.subgoal = 0
        self.ha = None
        self.hc = None
        self.episode_return = 0.0
        self.finished: list[float] = []
        self.episodes = 0

    def rollout(self, policy: SenPolicy, t_max: int) -> RolloutSegment:
        if self.env is None or self.env.done:
            self.subgoal = int(self.rng.integers(N_ELEMENTS))
            self.env = self.env_factory(ElementId.from_index(self.subgoal),
                                        int(self.rng.integers(2 ** 62)))
            self.ha = policy.actor_net.initial_state()
            self.hc = policy.critic_net.initial_state()
            self.episode_return = 0.0
        seg = RolloutSegment(self.subgoal, [], [], [],
                             self.ha.copy(), self.hc.copy(), False)
        for _ in range(t_max):
            obs = grid_obs(self.env)
            action, self.ha = policy.act(obs, self.subgoal, self.ha, "sample", self.rng)
            _, out = step(self.env, Action(action))
            seg.obs.append(obs)
            seg.actions.append(action)
            seg.rewards.append(out.reward)
            self.episode_return += out.reward
            if out.done:
                seg.terminal = True
                self.finished.append(self.episode_return)
                self.episodes += 1
                break
        if not seg.terminal:
            seg.next_obs = grid_obs(self.env)
        return seg


def evaluate_policy(policy: SenPolicy, env_factory, episodes_per_goal: int,
                    seed: int) -> tuple[float, np.ndarray]:
    """Greedy success rate per subgoal on held-out task seeds."""
    per_goal = np.zeros(N_ELEMENTS)
    rng = np.random.default_rng(seed)
    for g in range(N_ELEMENTS):
        wins = 0
        for _ in range(episodes_per_goal):
            env = env_factory(ElementId.from_index(g), int(rng.integers(2 ** 62)))
            h = policy.initial_state()
            got = 0.0
            while not env.done:
                action, h = policy.act(grid_obs(env), g, h, "greedy")
                _, out = step(env, Action(action))
                got += out.reward
            wins += got > 0
        per_goal[g] = wins / episodes_per_goal
    return float(per_goal.mean()), per_goal


def train_sen(config: SenConfig, env_factory=None,
              log: Optional[Callable[[dict], None]] = None) -> tuple[SenPolicy, list[dict]]:
    """Synchronous multi-worker A2C; returns the policy and per-eval log rows."""
    if env_factory is None:
        env_factory = default_env_factory(config)
    ss = np.random.SeedSequence(config.seed)
    init_rng = np.random.default_rng(ss.spawn(1)[0])
    policy = SenPolicy.create(config, init_rng)
    workers = [_Worker(np.random.default_rng(child), env_factory)
               for child in ss.spawn(config.workers + 1)[1:]]

    opt_actor = RmsPropState(config.rmsprop_decay, config.rmsprop_eps)
    opt_critic = RmsPropState(config.rmsprop_decay, config.rmsprop_eps)
    rows: list[dict] = []
    last_norm = 0.0
    for iteration in range(1, config.iterations + 1):
        # synchronous workers: rollouts are independent round-robin streams,
        # one summed update per iteration
        segments = [w.rollout(policy, config.t_max) for w in workers]

        ga = policy.actor.zeros_like()
        gc = policy.critic.zeros_like()
        for w, seg in zip(workers, segments):
            a, c, info = a2c_accumulate(policy, seg, config.gamma, config.entropy_coef)
            neural.add_grads(ga, a)
            neural.add_grads(gc, c)
            if not seg.terminal:
                w.hc = info["critic_state"]
        last_norm = neural.grad_norm(ga) + neural.grad_norm(gc)
        neural.apply_update(policy.actor, ga, config.lr, opt_actor)
        neural.apply_update(policy.critic, gc, config.lr, opt_critic)

        if iteration % config.eval_every == 0 or iteration == config.iterations:
            overall, per_goal = evaluate_policy(
                policy, env_factory, config.eval_episodes,
                seed=10 ** 9 + config.seed * 7 + iteration)
            finished = [r for w in workers for r in w.finished]
            for w in workers:
                w.finished = []
            policy.meta["episodes_seen"] = sum(w.episodes for w in workers)
            policy.meta["subgoal_success"] = per_goal
            row = {
                "iteration": iteration,
                "mean_return": float(np.mean(finished)) if finished else 0.0,
                "success": overall,
                "per_goal": per_goal.copy(),
                "grad_norm": last_norm,
            }
            rows.append(row)
            if log is not None:
                log(row)
            if overall >= config.stop_success:
                break
    return policy, rows
