"""Policies, a clipped-surrogate policy-gradient learner and behavioral cloning.

Networks are small tanh MLPs stored as flat float64 vectors; gradients are
computed by hand and checked against finite differences in the tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .envs import EnvKind, Trajectory, env_reset, env_step, rollout

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
HEAD_SCALE = 0.01
HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)
# keeps atanh finite when inverting actions that sit on the torque bound
SQUASH_EPS = 1e-6


class NaNGradientError(FloatingPointError):
    """Raised when an update produces non-finite gradients."""


@dataclass(frozen=True)
class Categorical:
    n_actions: int

    @property
    def out_dim(self) -> int:
        return self.n_actions


@dataclass(frozen=True)
class DiagonalGaussian:
    """Gaussian over pre-squash actions, mapped to ``bound * tanh(u)``."""

    action_dim: int
    bound: float

    @property
    def out_dim(self) -> int:
        return self.action_dim


def layer_shapes(in_dim: int, hidden: Sequence[int], out_dim: int) -> list[tuple[int, int]]:
    sizes = [in_dim, *hidden, out_dim]
    return [(sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)]


def n_mlp_weights(in_dim: int, hidden: Sequence[int], out_dim: int) -> int:
    return sum(i * o + o for i, o in layer_shapes(in_dim, hidden, out_dim))


def _unpack(weights: np.ndarray, shapes):
    layers = []
    k = 0
    for i, o in shapes:
        W = weights[k : k + i * o].reshape(i, o)
        k += i * o
        b = weights[k : k + o]
        k += o
        layers.append((W, b))
    return layers, k


def mlp_forward(weights: np.ndarray, shapes, x: np.ndarray):
    """Tanh hidden layers, linear output. Returns ``(out, activations)``."""
    layers, _ = _unpack(weights, shapes)
    acts = [x]
    h = x
    for W, b in layers[:-1]:
        h = np.tanh(h @ W + b)
        acts.append(h)
    W, b = layers[-1]
    return h @ W + b, acts


def mlp_backward(weights: np.ndarray, shapes, acts, dout: np.ndarray) -> np.ndarray:
    layers, n = _unpack(weights, shapes)
    grads = []
    delta = dout
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        h_in = acts[li]
        grads.append((h_in.T @ delta, delta.sum(axis=0)))
        if li > 0:
            delta = (delta @ W.T) * (1.0 - h_in * h_in)
    flat = np.empty(n)
    k = 0
    for dW, db in reversed(grads):
        flat[k : k + dW.size] = dW.ravel()
        k += dW.size
        flat[k : k + db.size] = db
        k += db.size
    return flat


def _init_mlp(shapes, rng: np.random.Generator, last_scale: float) -> np.ndarray:
    parts = []
    for li, (i, o) in enumerate(shapes):
        lim = 1.0 / math.sqrt(i)
        scale = last_scale if li == len(shapes) - 1 else 1.0
        parts.append(scale * rng.uniform(-lim, lim, size=i * o))
        parts.append(scale * rng.uniform(-lim, lim, size=o))
    return np.concatenate(parts)


@dataclass(frozen=True)
class PolicyParams:
    weights: np.ndarray
    obs_dim: int
    head: object
    hidden: tuple = (64, 64)

    @property
    def shapes(self):
        return layer_shapes(self.obs_dim, self.hidden, self.head.out_dim)

    @property
    def n_net(self) -> int:
        return n_mlp_weights(self.obs_dim, self.hidden, self.head.out_dim)

    @property
    def gaussian(self) -> bool:
        return isinstance(self.head, DiagonalGaussian)

    @property
    def log_std(self) -> np.ndarray:
        return np.clip(self.weights[self.n_net :], LOG_STD_MIN, LOG_STD_MAX)

    def with_weights(self, weights: np.ndarray) -> "PolicyParams":
        return replace(self, weights=weights)


@dataclass(frozen=True)
class ValueParams:
    weights: np.ndarray
    obs_dim: int
    hidden: tuple = (64, 64)

    @property
    def shapes(self):
        return layer_shapes(self.obs_dim, self.hidden, 1)

    def __call__(self, states) -> np.ndarray:
        out, _ = mlp_forward(self.weights, self.shapes, np.atleast_2d(states))
        return out[:, 0]


def policy_init(obs_dim: int, head, seed: int, hidden=(64, 64), init_log_std: float = 0.0) -> PolicyParams:
    rng = np.random.default_rng(seed)
    shapes = layer_shapes(obs_dim, hidden, head.out_dim)
    w = _init_mlp(shapes, rng, HEAD_SCALE)
    if isinstance(head, DiagonalGaussian):
        w = np.concatenate([w, np.full(head.action_dim, float(init_log_std))])
    return PolicyParams(w, obs_dim, head, tuple(hidden))


def value_init(obs_dim: int, seed: int, hidden=(64, 64)) -> ValueParams:
    rng = np.random.default_rng(seed)
    return ValueParams(_init_mlp(layer_shapes(obs_dim, hidden, 1), rng, 1.0), obs_dim, tuple(hidden))


def policy_for_env(kind: EnvKind, seed: int, hidden=(64, 64), init_log_std: float = 0.0) -> PolicyParams:
    head = Categorical(kind.n_actions) if kind.discrete else DiagonalGaussian(1, kind.action_bound)
    return policy_init(kind.state_dim, head, seed, hidden, init_log_std)


def _log_one_minus_tanh_sq(u: np.ndarray) -> np.ndarray:
    # log(1 - tanh(u)^2) = 2 * (log 2 - u - softplus(-2u))
    return 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def squash(p: PolicyParams, u: np.ndarray) -> np.ndarray:
    return p.head.bound * np.tanh(u)


def unsquash(p: PolicyParams, a: np.ndarray) -> np.ndarray:
    y = np.clip(np.asarray(a, dtype=np.float64) / p.head.bound, -1.0 + SQUASH_EPS, 1.0 - SQUASH_EPS)
    return np.arctanh(y)


def _head_out(p: PolicyParams, states: np.ndarray):
    return mlp_forward(p.weights, p.shapes, np.atleast_2d(np.asarray(states, dtype=np.float64)))


def action_probs(p: PolicyParams, states) -> np.ndarray:
    logits, _ = _head_out(p, states)
    return np.exp(logits - logsumexp(logits, axis=1, keepdims=True))


def _gauss_logprob_raw(mean: np.ndarray, log_std: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Log-density of pre-squash ``u`` (shape ``(n, d)``), summed over dims."""
    z = (u - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - HALF_LOG_2PI, axis=1)


def logprob_raw(p: PolicyParams, states, raw_actions) -> np.ndarray:
    """Log-probability of taken actions; Gaussian heads take pre-squash ``u``."""
    out, _ = _head_out(p, states)
    if p.gaussian:
        u = np.asarray(raw_actions, dtype=np.float64).reshape(len(out), -1)
        return _gauss_logprob_raw(out, p.log_std, u) - np.sum(
            math.log(p.head.bound) + _log_one_minus_tanh_sq(u), axis=1
        )
    logp = out - logsumexp(out, axis=1, keepdims=True)
    idx = np.asarray(raw_actions, dtype=np.int64).reshape(-1)
    return logp[np.arange(len(out)), idx]


def policy_logprob(p: PolicyParams, s, a) -> float:
    """Exact log mass (discrete) or log density (squashed continuous) of ``a`` at ``s``."""
    s = np.asarray(s, dtype=np.float64)[None, :]
    if p.gaussian:
        return float(logprob_raw(p, s, unsquash(p, np.atleast_1d(a))[None, :])[0])
    return float(logprob_raw(p, s, [int(a)])[0])


def _act_raw(p: PolicyParams, s: np.ndarray, rng: np.random.Generator):
    out, _ = mlp_forward(p.weights, p.shapes, s[None, :])
    out = out[0]
    if p.gaussian:
        u = out + np.exp(p.log_std) * rng.standard_normal(len(out))
        return squash(p, u), u
    z = np.exp(out - out.max())
    cdf = np.cumsum(z)
    a = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(z) - 1)
    return a, a


def policy_act(p: PolicyParams, s, rng: np.random.Generator):
    """Sample an action; returns ``(action, logprob)``."""
    s = np.asarray(s, dtype=np.float64)
    a, raw = _act_raw(p, s, rng)
    lp = float(logprob_raw(p, s[None, :], np.atleast_1d(raw)[None, :] if p.gaussian else [raw])[0])
    if p.gaussian:
        a = a.reshape(-1)
        a = float(a[0]) if len(a) == 1 else a
    return a, lp


def policy_mode(p: PolicyParams, s):
    """Deterministic action used for evaluation (argmax / squashed mean)."""
    out, _ = mlp_forward(p.weights, p.shapes, np.asarray(s, dtype=np.float64)[None, :])
    if p.gaussian:
        a = squash(p, out[0])
        return float(a[0]) if len(a) == 1 else a
    return int(np.argmax(out[0]))


def entropy(p: PolicyParams, states) -> np.ndarray:
    out, _ = _head_out(p, states)
    if p.gaussian:
        return np.full(len(out), float(np.sum(p.log_std + 0.5 + HALF_LOG_2PI)))
    logp = out - logsumexp(out, axis=1, keepdims=True)
    return -np.sum(np.exp(logp) * logp, axis=1)


# --------------------------------------------------------------------------
# losses with analytic gradients


@dataclass(frozen=True)
class LearnerConfig:
    clip_epsilon: float = 0.2
    learning_rate: float = 3e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    minibatch: int = 64
    update_epochs: int = 10
    rollout_steps: int = 1024
    max_grad_norm: float = 0.5

    def __post_init__(self):
        if self.clip_epsilon <= 0:
            raise ValueError("clip_epsilon must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.minibatch < 1 or self.update_epochs < 0 or self.rollout_steps < 1:
            raise ValueError("minibatch, rollout_steps must be >= 1 and update_epochs >= 0")


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    old_logprobs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self) -> int:
        return len(self.states)

    def take(self, idx) -> "Batch":
        return Batch(
            self.states[idx], self.actions[idx], self.old_logprobs[idx], self.advantages[idx], self.returns[idx]
        )


def _logp_grad_parts(p: PolicyParams, states, raw_actions):
    """Forward pass plus per-sample pieces needed for gradients."""
    out, acts = _head_out(p, states)
    n = len(out)
    if p.gaussian:
        log_std = p.log_std
        u = np.asarray(raw_actions, dtype=np.float64).reshape(n, -1)
        inv_var = np.exp(-2.0 * log_std)
        diff = u - out
        logp = _gauss_logprob_raw(out, log_std, u) - np.sum(
            math.log(p.head.bound) + _log_one_minus_tanh_sq(u), axis=1
        )
        dlogp_dout = diff * inv_var
        dlogp_dlogstd = diff * diff * inv_var - 1.0
        ent = np.full(n, float(np.sum(log_std + 0.5 + HALF_LOG_2PI)))
        return out, acts, logp, dlogp_dout, dlogp_dlogstd, ent, None
    logq = out - logsumexp(out, axis=1, keepdims=True)
    probs = np.exp(logq)
    idx = np.asarray(raw_actions, dtype=np.int64).reshape(-1)
    logp = logq[np.arange(n), idx]
    onehot = np.zeros_like(out)
    onehot[np.arange(n), idx] = 1.0
    ent = -np.sum(probs * logq, axis=1)
    dent_dout = -probs * (logq + ent[:, None])
    return out, acts, logp, onehot - probs, None, ent, dent_dout


def _assemble_policy_grad(p, acts, dout, dlogstd):
    g_net = mlp_backward(p.weights, p.shapes, acts, dout)
    if p.gaussian:
        return np.concatenate([g_net, dlogstd])
    return g_net


def surrogate_loss_and_grad(p: PolicyParams, batch: Batch, clip_epsilon: float, entropy_coef: float):
    """Negative clipped surrogate minus entropy bonus, with its gradient."""
    out, acts, logp, dlogp_dout, dlogp_dlogstd, ent, dent_dout = _logp_grad_parts(p, batch.states, batch.actions)
    n = len(out)
    adv = batch.advantages
    ratio = np.exp(logp - batch.old_logprobs)
    clipped = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon)
    unclipped_obj = ratio * adv
    clipped_obj = clipped * adv
    obj = np.minimum(unclipped_obj, clipped_obj)
    loss = -obj.mean() - entropy_coef * ent.mean()
    active = unclipped_obj <= clipped_obj
    dloss_dlogp = -(ratio * adv * active) / n
    if p.gaussian:
        dout = dloss_dlogp[:, None] * dlogp_dout
        dlogstd = (dloss_dlogp[:, None] * dlogp_dlogstd).sum(axis=0) - entropy_coef * np.ones(p.head.action_dim)
    else:
        dout = dloss_dlogp[:, None] * dlogp_dout - (entropy_coef / n) * dent_dout
        dlogstd = None
    grad = _assemble_policy_grad(p, acts, dout, dlogstd)
    info = {
        "ratio_mean": float(ratio.mean()),
        "ratio_max_dev": float(np.max(np.abs(ratio - 1.0))) if n else 0.0,
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > clip_epsilon)) if n else 0.0,
        "entropy": float(ent.mean()) if n else 0.0,
    }
    return float(loss), grad, info


def value_loss_and_grad(v: ValueParams, states, returns, value_coef: float = 0.5):
    out, acts = mlp_forward(v.weights, v.shapes, np.atleast_2d(states))
    err = out[:, 0] - returns
    n = len(err)
    loss = value_coef * float(np.mean(err * err))
    dout = (2.0 * value_coef / n) * err[:, None]
    return loss, mlp_backward(v.weights, v.shapes, acts, dout)


def bc_loss_and_grad(p: PolicyParams, states, raw_actions):
    """Mean negative log-likelihood of expert actions and its gradient."""
    out, acts, logp, dlogp_dout, dlogp_dlogstd, _, _ = _logp_grad_parts(p, states, raw_actions)
    n = len(out)
    dout = -dlogp_dout / n
    dlogstd = -dlogp_dlogstd.sum(axis=0) / n if p.gaussian else None
    return float(-logp.mean()), _assemble_policy_grad(p, acts, dout, dlogstd)


# --------------------------------------------------------------------------
# optimizer


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    t: int = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _clip_norm(grad: np.ndarray, max_norm: Optional[float]) -> np.ndarray:
    if not max_norm:
        return grad
    norm = float(np.linalg.norm(grad))
    return grad * (max_norm / norm) if norm > max_norm else grad


def _clamp_log_std(p: PolicyParams, w: np.ndarray) -> np.ndarray:
    if p.gaussian:
        w = w.copy()
        w[p.n_net :] = np.clip(w[p.n_net :], LOG_STD_MIN, LOG_STD_MAX)
    return w


# --------------------------------------------------------------------------
# advantage estimation


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    next_values: np.ndarray,
    dones: np.ndarray,
    truncated: np.ndarray,
    gamma: float,
    lam: float,
    normalize: bool = True,
):
    """GAE(lambda) over a segment that may span several episodes.

    Episodes ended by the time limit still bootstrap from ``next_values``; the
    last step of the segment bootstraps if it is not an episode end.
    Returns ``(advantages, returns)``; returns are computed before the
    optional advantage normalization.
    """
    n = len(rewards)
    terminal = dones & ~truncated
    deltas = rewards + gamma * next_values * (~terminal) - values
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        if dones[t]:
            running = 0.0
        running = deltas[t] + gamma * lam * running
        adv[t] = running
    returns = adv + values
    if normalize and n > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, returns


def gae_for_trajectory(traj: Trajectory, v: ValueParams, gamma: float, lam: float, rewards=None, normalize=True):
    rewards = traj.rewards if rewards is None else np.asarray(rewards, dtype=np.float64)
    values = v(traj.states)
    next_values = v(traj.next_states)
    return compute_gae(rewards, values, next_values, traj.dones, traj.truncated, gamma, lam, normalize)


# --------------------------------------------------------------------------
# learner


class PPOLearner:
    """Clipped-surrogate policy-gradient learner with a separate value network.

    Holds the Adam moment estimates across updates. Policy and value
    parameters are replaced (never mutated) after each update.
    """

    def __init__(self, policy: PolicyParams, value: ValueParams, cfg: LearnerConfig, seed: int):
        self.policy = policy
        self.value = value
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.policy_opt = Adam(cfg.learning_rate)
        self.value_opt = Adam(cfg.learning_rate)

    def collect(self, kind: EnvKind, n_steps: int, reward_fn=None):
        """Roll out the current policy and build an update batch.

        ``reward_fn(states, actions) -> rewards`` replaces the ground-truth
        reward (which is still returned for reporting in the trajectory).
        """
        p = self.policy
        raws = []

        def act(s, rng):
            a, raw = _act_raw(p, s, rng)
            raws.append(raw)
            return float(a[0]) if p.gaussian else a

        traj = rollout(kind, act, n_steps, self.rng)
        raw = np.array(raws, dtype=np.float64).reshape(n_steps, -1) if p.gaussian else traj.actions
        rewards = traj.rewards if reward_fn is None else np.asarray(reward_fn(traj.states, traj.actions))
        adv, ret = gae_for_trajectory(traj, self.value, self.cfg.gamma, self.cfg.gae_lambda, rewards)
        old_lp = logprob_raw(p, traj.states, raw)
        return Batch(traj.states, raw, old_lp, adv, ret), traj

    def update(self, batch: Batch) -> dict:
        cfg = self.cfg
        p, v = self.policy, self.value
        n = len(batch)
        stats = {"policy_loss": [], "value_loss": [], "ratio_mean": [], "clip_frac": [], "entropy": []}
        first_dev = None
        for _ in range(cfg.update_epochs):
            order = self.rng.permutation(n)
            for start in range(0, n, cfg.minibatch):
                mb = batch.take(order[start : start + cfg.minibatch])
                pl, pg, info = surrogate_loss_and_grad(p, mb, cfg.clip_epsilon, cfg.entropy_coef)
                vl, vg = value_loss_and_grad(v, mb.states, mb.returns, cfg.value_coef)
                if not (np.all(np.isfinite(pg)) and np.all(np.isfinite(vg))):
                    raise NaNGradientError("non-finite gradient in learner update")
                if first_dev is None:
                    first_dev = info["ratio_max_dev"]
                p = p.with_weights(_clamp_log_std(p, self.policy_opt.step(p.weights, _clip_norm(pg, cfg.max_grad_norm))))
                v = replace(v, weights=self.value_opt.step(v.weights, _clip_norm(vg, cfg.max_grad_norm)))
                stats["policy_loss"].append(pl)
                stats["value_loss"].append(vl)
                for k in ("ratio_mean", "clip_frac", "entropy"):
                    stats[k].append(info[k])
        self.policy, self.value = p, v
        diag = {k: float(np.mean(vals)) if vals else float("nan") for k, vals in stats.items()}
        diag["first_ratio_max_dev"] = 0.0 if first_dev is None else first_dev
        return diag


def learner_update(p: PolicyParams, v: ValueParams, batch: Batch, cfg: LearnerConfig, seed: int = 0):
    """One update pass with fresh optimizer state. Returns ``(p, v, diagnostics)``."""
    learner = PPOLearner(p, v, cfg, seed)
    diag = learner.update(batch)
    return learner.policy, learner.value, diag


# --------------------------------------------------------------------------
# behavioral cloning


@dataclass(frozen=True)
class BCConfig:
    epochs: int = 500
    learning_rate: float = 1e-3
    minibatch: Optional[int] = None  # None: full batch
    optimizer: str = "adam"


def bc_train(
    states,
    actions,
    kind: EnvKind,
    cfg: BCConfig = BCConfig(),
    seed: int = 0,
    hidden=(64, 64),
    history: Optional[list] = None,
) -> PolicyParams:
    """Fit a policy to expert pairs by maximizing the mean log-likelihood."""
    states = np.asarray(states, dtype=np.float64)
    if len(states) == 0:
        raise ValueError("demonstrations are empty")
    p = policy_for_env(kind, seed, hidden)
    raw = unsquash(p, np.asarray(actions)).reshape(len(states), -1) if p.gaussian else np.asarray(actions, dtype=np.int64)
    rng = np.random.default_rng(seed + 1)
    opt = Adam(cfg.learning_rate) if cfg.optimizer == "adam" else None
    n = len(states)
    mb = cfg.minibatch or n
    for _ in range(cfg.epochs):
        order = rng.permutation(n) if mb < n else np.arange(n)
        for start in range(0, n, mb):
            idx = order[start : start + mb]
            loss, grad = bc_loss_and_grad(p, states[idx], raw[idx])
            if history is not None:
                history.append(loss)
            w = opt.step(p.weights, grad) if opt is not None else p.weights - cfg.learning_rate * grad
            p = p.with_weights(_clamp_log_std(p, w))
    return p


# --------------------------------------------------------------------------
# checkpoints


def params_to_json(p) -> str:
    if isinstance(p, PolicyParams):
        head = (
            {"type": "DiagonalGaussian", "action_dim": p.head.action_dim, "bound": p.head.bound}
            if p.gaussian
            else {"type": "Categorical", "n_actions": p.head.n_actions}
        )
        desc = {"kind": "policy", "obs_dim": p.obs_dim, "hidden": list(p.hidden), "head": head}
    else:
        desc = {"kind": "value", "obs_dim": p.obs_dim, "hidden": list(p.hidden)}
    desc["weights"] = p.weights.tolist()
    return json.dumps(desc)


def params_from_json(text: str):
    d = json.loads(text)
    w = np.asarray(d["weights"], dtype=np.float64)
    hidden = tuple(d["hidden"])
    if d["kind"] == "value":
        if len(w) != n_mlp_weights(d["obs_dim"], hidden, 1):
            raise ValueError("weight count does not match architecture")
        return ValueParams(w, d["obs_dim"], hidden)
    h = d["head"]
    head = (
        DiagonalGaussian(h["action_dim"], h["bound"]) if h["type"] == "DiagonalGaussian" else Categorical(h["n_actions"])
    )
    p = PolicyParams(w, d["obs_dim"], head, hidden)
    expected = p.n_net + (head.action_dim if isinstance(head, DiagonalGaussian) else 0)
    if len(w) != expected:
        raise ValueError("weight count does not match architecture")
    return p


def evaluate_policy(kind: EnvKind, p: PolicyParams, episodes: int, rng: np.random.Generator) -> list[float]:
    """Ground-truth returns of deterministic (mode) actions."""
    returns = []
    for _ in range(episodes):
        s = env_reset(kind, rng)
        total = 0.0
        for _ in range(kind.max_episode_steps):
            s, r, term = env_step(kind, s, policy_mode(p, s), check=False)
            total += r
            if term:
                break
        returns.append(total)
    return returns
