"""Watch-try-learn imitation loop driven by density-ratio rewards.

Watch once (fit expert densities), then for each epoch: try (roll out the
current policy, refit the agent's state density), rebuild the reward, and
learn (policy-gradient updates on fresh rollouts scored by that reward).
Ground-truth rewards are only read for evaluation and the correlation probe.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .density import DEFAULT_RIDGE, DegenerateDataError, fit_conditional, fit_density
from .envs import EnvKind, expert_policy, rollout
from .learn import (
    LearnerConfig,
    NaNGradientError,
    PolicyParams,
    PPOLearner,
    evaluate_policy,
    params_to_json,
    policy_for_env,
    value_init,
    _act_raw,
)
from .reward import RewardModel

log = logging.getLogger(__name__)

RETRY_RIDGE = 1e-3


class BufferMode(str, enum.Enum):
    PER_EPOCH_FRESH = "PerEpochFresh"
    CUMULATIVE = "Cumulative"


@dataclass(frozen=True)
class PdeilConfig:
    env: EnvKind = EnvKind.CARTPOLE
    n_epochs: int = 50
    try_steps: int = 1000
    learn_steps: int = 4
    alpha: float = 0.5
    demo_episodes: int = 5
    seed: int = 0
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    ridge: float = DEFAULT_RIDGE
    use_kde: bool = False
    buffer_mode: BufferMode = BufferMode.PER_EPOCH_FRESH
    eval_episodes: int = 5
    evaluate: bool = True
    checkpoint_every: int = 0
    hidden: tuple = (64, 64)
    init_log_std: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "env", EnvKind.parse(self.env))
        object.__setattr__(self, "buffer_mode", BufferMode(self.buffer_mode))
        if self.n_epochs < 1 or self.try_steps < 2 or self.learn_steps < 0:
            raise ValueError("need n_epochs >= 1, try_steps >= 2, learn_steps >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.demo_episodes < 1:
            raise ValueError("demo_episodes must be >= 1")

    @property
    def beta(self) -> float:
        return 1.0 - self.alpha


@dataclass
class DemoSet:
    states: np.ndarray
    actions: np.ndarray
    env: EnvKind
    expert_returns: list
    seed: Optional[int] = None

    def __post_init__(self):
        if len(self.states) == 0:
            raise ValueError("demonstrations are empty")
        if self.states.shape[1] != self.env.state_dim:
            raise ValueError("demo states do not match the environment's dimension")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def pairs(self):
        return list(zip(self.states, self.actions))

    @property
    def return_stats(self) -> dict:
        r = np.asarray(self.expert_returns, dtype=np.float64)
        return {"episodes": len(r), "mean": float(r.mean()), "min": float(r.min()), "max": float(r.max())}

    def save(self, path) -> None:
        header = {"env": self.env.value, "seed": self.seed, "expert_returns": list(map(float, self.expert_returns))}
        with open(path, "w") as f:
            f.write(json.dumps(header) + "\n")
            for s, a in zip(self.states, self.actions):
                a = int(a) if self.env.discrete else float(a)
                f.write(json.dumps({"s": [float(x) for x in s], "a": a}) + "\n")

    @classmethod
    def load(cls, path) -> "DemoSet":
        with open(path) as f:
            header = json.loads(f.readline())
            recs = [json.loads(line) for line in f if line.strip()]
        env = EnvKind.parse(header["env"])
        states = np.array([r["s"] for r in recs], dtype=np.float64)
        actions = np.array([r["a"] for r in recs], dtype=np.int64 if env.discrete else np.float64)
        return cls(states, actions, env, header["expert_returns"], header.get("seed"))


def demo_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 0xDE40])


def collect_expert_demos(kind: EnvKind, episodes: int, seed: int) -> DemoSet:
    """Roll out the scripted expert for whole episodes."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rng = demo_rng(seed)
    pol = expert_policy(kind)
    states, actions, returns = [], [], []
    for _ in range(episodes):
        traj = rollout(kind, pol, kind.max_episode_steps, rng)
        end = int(np.argmax(traj.dones)) + 1
        states.append(traj.states[:end])
        actions.append(traj.actions[:end])
        returns.append(float(traj.rewards[:end].sum()))
    return DemoSet(np.concatenate(states), np.concatenate(actions), kind, returns, seed)


@dataclass(frozen=True)
class ExpertModels:
    expert_state: object
    expert_joint: Optional[object] = None
    expert_conditional: Optional[object] = None

    def reward_model(self, agent_state, alpha: float) -> RewardModel:
        return RewardModel(self.expert_state, agent_state, alpha, self.expert_joint, self.expert_conditional)


def watch(demos: DemoSet, cfg: PdeilConfig) -> ExpertModels:
    state_model = fit_density(demos.states, cfg.ridge, cfg.use_kde)
    if demos.env.discrete:
        return ExpertModels(state_model, expert_conditional=fit_conditional(demos.states, demos.actions, cfg.ridge))
    joint = np.hstack([demos.states, np.asarray(demos.actions, dtype=np.float64).reshape(len(demos), -1)])
    return ExpertModels(state_model, expert_joint=fit_density(joint, cfg.ridge, cfg.use_kde))


@dataclass
class StateBuffer:
    states: list = field(default_factory=list)

    def extend(self, states: np.ndarray) -> None:
        self.states.extend(np.asarray(states))

    def clear(self) -> None:
        self.states = []

    def __len__(self) -> int:
        return len(self.states)


def fit_agent_density(states, cfg: PdeilConfig):
    try:
        return fit_density(states, cfg.ridge, cfg.use_kde)
    except DegenerateDataError:
        log.warning("agent state density degenerate; retrying with ridge %g", RETRY_RIDGE)
        return fit_density(states, max(cfg.ridge, RETRY_RIDGE), cfg.use_kde)


def try_phase(kind: EnvKind, policy: PolicyParams, T: int, buffer: StateBuffer, cfg: PdeilConfig, rng):
    """Roll out ``policy`` for ``T`` steps, store the states and refit the agent density.

    Returns ``(buffer, agent_model, trajectory)``. Under ``PerEpochFresh`` the
    buffer comes back empty.
    """
    if T < 2:
        raise ValueError("try phase needs at least 2 steps")
    traj = rollout(kind, lambda s, r: _sample_env_action(policy, s, r), T, rng)
    buffer.extend(traj.states)
    model = fit_agent_density(np.asarray(buffer.states), cfg)
    if cfg.buffer_mode is BufferMode.PER_EPOCH_FRESH:
        buffer.clear()
    return buffer, model, traj


def _sample_env_action(policy: PolicyParams, s, rng):
    a, _ = _act_raw(policy, s, rng)
    return float(a[0]) if policy.gaussian else a


def pearson(xs, ys) -> float:
    """Pearson correlation; ``nan`` when either series is constant."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("need two equal-length series of length >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0 or not math.isfinite(sxx * syy):
        return float("nan")
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


def reward_correlation_probe(reward_model: RewardModel, traj) -> float:
    if traj.rewards is None:
        raise ValueError("trajectory has no ground-truth rewards")
    recovered, _ = reward_model.evaluate(traj.states, traj.actions)
    return pearson(recovered, traj.rewards)


METRICS_COLUMNS = (
    "epoch",
    "env_steps_total",
    "eval_return_mean",
    "recovered_vs_true_reward_correlation",
    "misleading_clamp_events",
    "alpha",
    "reward_mean",
    "reward_max",
    "failed",
)


@dataclass
class MetricsRow:
    epoch: int
    env_steps_total: int
    eval_return_mean: float
    recovered_vs_true_reward_correlation: float
    misleading_clamp_events: int
    alpha: float
    reward_mean: float = float("nan")
    reward_max: float = float("nan")
    failed: bool = False

    def as_csv(self) -> list:
        out = []
        for name in METRICS_COLUMNS:
            v = getattr(self, name)
            if isinstance(v, bool):
                out.append(int(v))
            elif isinstance(v, float):
                out.append(repr(v))
            else:
                out.append(v)
        return out


class MetricsWriter:
    """Appends one CSV row per epoch and flushes immediately."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._f = open(self.path, "w", newline="")
        self._w = csv.writer(self._f, lineterminator="\n")
        self._w.writerow(METRICS_COLUMNS)
        self._f.flush()

    def write(self, row: MetricsRow) -> None:
        self._w.writerow(row.as_csv())
        self._f.flush()

    def close(self) -> None:
        self._f.close()


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    out = []
    for r in rows:
        out.append(
            {
                "epoch": int(r["epoch"]),
                "env_steps_total": int(r["env_steps_total"]),
                "eval_return_mean": float(r["eval_return_mean"]),
                "recovered_vs_true_reward_correlation": float(r["recovered_vs_true_reward_correlation"]),
                "misleading_clamp_events": int(r["misleading_clamp_events"]),
                "alpha": float(r["alpha"]),
                "reward_mean": float(r["reward_mean"]),
                "reward_max": float(r["reward_max"]),
                "failed": bool(int(r["failed"])),
            }
        )
    return out


@dataclass
class PdeilResult:
    policy: PolicyParams
    metrics: list
    demos: DemoSet
    failed: bool = False
    demo_steps: int = 0


def _streams(seed: int):
    ss = np.random.SeedSequence(seed)
    policy_seed, value_seed, learner_seed, try_seed, eval_seed = (int(c.generate_state(1)[0]) for c in ss.spawn(5))
    return policy_seed, value_seed, learner_seed, np.random.default_rng(try_seed), np.random.default_rng(eval_seed)


def run_pdeil(
    cfg: PdeilConfig,
    demos: Optional[DemoSet] = None,
    metrics_path=None,
    checkpoint_dir=None,
    on_epoch=None,
) -> PdeilResult:
    """Full watch-try-learn run. Returns the final policy and per-epoch metrics.

    ``demos`` default to ``cfg.demo_episodes`` episodes of the scripted expert
    collected with ``cfg.seed``. ``on_epoch(epoch, reward_model, traj)`` is
    an optional hook used by tests.
    """
    kind = cfg.env
    if demos is None:
        demos = collect_expert_demos(kind, cfg.demo_episodes, cfg.seed)
    if demos.env is not kind:
        raise ValueError("demonstrations were collected in a different environment")
    demo_steps = len(demos)
    policy_seed, value_seed, learner_seed, try_rng, eval_rng = _streams(cfg.seed)
    policy = policy_for_env(kind, policy_seed, cfg.hidden, cfg.init_log_std)
    learner = PPOLearner(policy, value_init(kind.state_dim, value_seed, cfg.hidden), cfg.learner, learner_seed)

    experts = watch(demos, cfg)
    buffer = StateBuffer()
    writer = MetricsWriter(metrics_path) if metrics_path else None
    metrics = []
    env_steps = demo_steps
    failed = False
    try:
        for epoch in range(1, cfg.n_epochs + 1):
            buffer, agent_model, traj = try_phase(kind, learner.policy, cfg.try_steps, buffer, cfg, try_rng)
            env_steps += cfg.try_steps
            reward_model = experts.reward_model(agent_model, cfg.alpha)
            if on_epoch is not None:
                on_epoch(epoch, reward_model, traj)

            clamp_events = 0
            reward_sum, reward_n, reward_max = 0.0, 0, -math.inf

            def reward_fn(states, actions):
                nonlocal clamp_events, reward_sum, reward_n, reward_max
                r, c = reward_model.evaluate(states, actions)
                clamp_events += c
                reward_sum += float(r.sum())
                reward_n += len(r)
                reward_max = max(reward_max, float(r.max()))
                return r

            try:
                for _ in range(cfg.learn_steps):
                    batch, _ = learner.collect(kind, cfg.learner.rollout_steps, reward_fn)
                    env_steps += cfg.learner.rollout_steps
                    learner.update(batch)
            except NaNGradientError:
                log.error("non-finite gradients at epoch %d; aborting run", epoch)
                failed = True

            if cfg.evaluate:
                eval_mean = float(np.mean(evaluate_policy(kind, learner.policy, cfg.eval_episodes, eval_rng)))
                corr = reward_correlation_probe(reward_model, traj)
            else:
                eval_mean = corr = float("nan")
            row = MetricsRow(
                epoch,
                env_steps,
                eval_mean,
                corr,
                clamp_events,
                cfg.alpha,
                reward_sum / reward_n if reward_n else float("nan"),
                reward_max if reward_n else float("nan"),
                failed,
            )
            metrics.append(row)
            if writer:
                writer.write(row)
            log.info(
                "epoch %d steps %d eval %.1f corr %.3f clamps %d",
                epoch, env_steps, eval_mean, corr, clamp_events,
            )
            if checkpoint_dir and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                ckpt = Path(checkpoint_dir)
                ckpt.mkdir(parents=True, exist_ok=True)
                (ckpt / f"policy_epoch{epoch:04d}.json").write_text(params_to_json(learner.policy))
            if failed:
                break
    finally:
        if writer:
            writer.close()
    return PdeilResult(learner.policy, metrics, demos, failed, demo_steps)
