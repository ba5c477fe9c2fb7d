"""Synchronous advantage actor-critic: categorical policy with a value head
sharing the policy trunk, generalized advantage estimation, and the combined
policy/value/entropy loss with hand-derived gradients.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .tensor import (
    MLPConfig,
    ParamSet,
    log_softmax,
    mlp_backward,
    mlp_forward,
    mlp_init,
)

ADV_STD_GUARD = 1e-8


class NonFiniteLogits(ValueError):
    """Policy produced NaN/Inf logits; carries the offending state batch."""


def identity_features(dim: int) -> tuple[int, Callable]:
    return dim, lambda states: states


def scaled_features(scale) -> tuple[int, Callable]:
    """Divide each component by a fixed positive scale."""
    scale = np.asarray(scale, dtype=np.float64)
    return len(scale), lambda states: states / scale


def grid_onehot_features(width: int, height: int) -> tuple[int, Callable]:
    """One-hot cell indicator for integer (x, y) grid states."""
    dim = width * height

    def featurize(states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(states)
        idx = (states[:, 1].astype(np.int64) * width + states[:, 0].astype(np.int64))
        out = np.zeros((len(states), dim))
        out[np.arange(len(states)), idx] = 1.0
        return out

    return dim, featurize


class ActorCritic:
    """Categorical policy MLP plus a linear value head on its last hidden
    layer. `featurize` maps raw environment states to network inputs."""

    def __init__(
        self,
        feature_dim: int,
        n_actions: int,
        hidden: tuple[int, ...] = (64, 64),
        seed: int = 0,
        featurize: Optional[Callable] = None,
        entropy_coef: float = 0.01,
        value_coef: float = 0.5,
    ):
        if not hidden:
            raise ValueError("the actor-critic needs at least one hidden layer")
        self.n_actions = n_actions
        self.featurize = featurize if featurize is not None else (lambda s: s)
        self.entropy_coef = entropy_coef
        self.value_coef = value_coef
        self.policy_config = MLPConfig((feature_dim, *hidden, n_actions), "tanh", "softmax")
        self.value_config = MLPConfig((hidden[-1], 1), "tanh", "identity")
        self.policy_params = mlp_init(self.policy_config, seed, prefix="pi.")
        self.value_params = mlp_init(self.value_config, seed + 1, prefix="vf.")

    # -- forward ---------------------------------------------------------------

    def policy_value(self, states) -> tuple[np.ndarray, np.ndarray, object, object]:
        """Action probabilities and state values for a batch of raw states."""
        feats = self.featurize(np.atleast_2d(np.asarray(states, dtype=np.float64)))
        probs, pcache = mlp_forward(self.policy_params, self.policy_config, feats, "pi.")
        logits = pcache.pre[-1]
        if not np.all(np.isfinite(logits)):
            raise NonFiniteLogits(
                f"non-finite logits for states {np.asarray(states)!r}"
            )
        h_last = pcache.post[-2]
        values, vcache = mlp_forward(self.value_params, self.value_config, h_last, "vf.")
        return probs, values[:, 0], pcache, vcache

    def act_batch(self, states, rng: np.random.Generator):
        """Sample one action per state; returns actions, log-probs, values."""
        probs, values, pcache, _ = self.policy_value(states)
        cum = np.cumsum(probs, axis=1)
        u = rng.random((len(probs), 1))
        actions = np.minimum((cum < u).sum(axis=1), self.n_actions - 1)
        logp = log_softmax(pcache.pre[-1])[np.arange(len(probs)), actions]
        return actions, logp, values

    def act(self, state, rng: np.random.Generator) -> tuple[int, float, float]:
        actions, logp, values = self.act_batch(np.asarray(state)[None, :], rng)
        return int(actions[0]), float(logp[0]), float(values[0])

    def greedy_batch(self, states) -> np.ndarray:
        probs, _, _, _ = self.policy_value(states)
        return np.argmax(probs, axis=1)

    def values_batch(self, states) -> np.ndarray:
        _, values, _, _ = self.policy_value(states)
        return values


# ---------------------------------------------------------------------------
# Rollout storage


@dataclass
class RolloutBuffer:
    """One iteration's worth of experience from B parallel streams.

    All arrays are time-major: (T, B) scalars, (T, B, d) states. `rewards`
    holds the total per-step reward the policy trains on; `env_rewards`
    keeps the raw environment component for bookkeeping.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    env_rewards: np.ndarray
    dones: np.ndarray
    values: np.ndarray
    log_probs: np.ndarray
    next_states: np.ndarray
    bootstrap_values: np.ndarray

    @property
    def steps(self) -> int:
        return self.states.shape[0] * self.states.shape[1]

    def gae(self, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
        """Advantages and value targets over every stream, time-major."""
        return gae_batch(self.rewards, self.values, self.dones, gamma, lam,
                         self.bootstrap_values)

    def flat_states(self) -> np.ndarray:
        T, B, d = self.states.shape
        return self.states.reshape(T * B, d)

    def flat_next_states(self) -> np.ndarray:
        T, B, d = self.next_states.shape
        return self.next_states.reshape(T * B, d)

    def flat_actions(self) -> np.ndarray:
        return self.actions.reshape(-1)


# ---------------------------------------------------------------------------
# Generalized advantage estimation


def gae_advantages(
    rewards,
    values,
    dones,
    gamma: float,
    lam: float,
    bootstrap_value: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """GAE over one time-ordered sequence.

    delta_t = r_t + gamma * V(s_{t+1}) * (1 - done_t) - V(s_t)
    A_t     = delta_t + gamma * lam * (1 - done_t) * A_{t+1}
    returns = A + V

    `bootstrap_value` stands in for V(s_T) when the last step is not
    terminal; it is ignored (masked by done) otherwise.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=np.float64)
    if not (len(r) == len(v) == len(d)) or len(r) == 0:
        raise ValueError("rewards, values and dones must share a positive length")
    T = len(r)
    next_values = np.append(v[1:], bootstrap_value)
    deltas = r + gamma * next_values * (1.0 - d) - v
    advantages = np.zeros(T)
    acc = 0.0
    for t in range(T - 1, -1, -1):
        acc = deltas[t] + gamma * lam * (1.0 - d[t]) * acc
        advantages[t] = acc
    return advantages, advantages + v


def gae_batch(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    gamma: float,
    lam: float,
    bootstrap_values: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Column-wise GAE over (T, B) arrays of independent rollout streams."""
    T, _ = rewards.shape
    next_values = np.vstack([values[1:], bootstrap_values[None, :]])
    not_done = 1.0 - dones
    deltas = rewards + gamma * next_values * not_done - values
    advantages = np.zeros_like(rewards)
    acc = np.zeros(rewards.shape[1])
    for t in range(T - 1, -1, -1):
        acc = deltas[t] + gamma * lam * not_done[t] * acc
        advantages[t] = acc
    return advantages, advantages + values


def standardize_advantages(advantages: np.ndarray) -> np.ndarray:
    """Center/scale to mean 0, std 1; left unchanged when the raw std is
    degenerate (< 1e-8), so all-equal advantage batches stay all-equal."""
    std = float(np.std(advantages))
    if std < ADV_STD_GUARD:
        return advantages
    return (advantages - float(np.mean(advantages))) / std


# ---------------------------------------------------------------------------
# Loss


def policy_value_loss(
    model: ActorCritic,
    states: np.ndarray,
    actions: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
) -> tuple[float, ParamSet, ParamSet, dict]:
    """Combined actor-critic loss and its gradients.

    loss = -mean(log pi(a|s) * A_hat)
           + value_coef * mean((V(s) - returns)^2)
           - entropy_coef * mean(entropy(pi(.|s)))

    A_hat is the standardized advantage. Returns (loss, policy gradients,
    value-head gradients, stats). The value head's gradient flows into the
    shared trunk through the policy backward pass.
    """
    actions = np.asarray(actions, dtype=np.int64)
    n = len(actions)
    a_hat = standardize_advantages(np.asarray(advantages, dtype=np.float64))
    returns = np.asarray(returns, dtype=np.float64)

    probs, values, pcache, vcache = model.policy_value(states)
    logits = pcache.pre[-1]
    logp_all = log_softmax(logits)
    rows = np.arange(n)
    logp = logp_all[rows, actions]
    entropy = -np.sum(probs * np.where(probs > 0.0, logp_all, 0.0), axis=1)
    v_err = values - returns

    pg_loss = -float(np.mean(logp * a_hat))
    value_loss = float(np.mean(v_err * v_err))
    entropy_mean = float(np.mean(entropy))
    loss = pg_loss + model.value_coef * value_loss - model.entropy_coef * entropy_mean

    # d loss / d probs: policy-gradient term touches only the taken action's
    # probability; the entropy term touches all of them.
    d_probs = model.entropy_coef * (logp_all + 1.0) / n
    d_probs[rows, actions] += -(a_hat / probs[rows, actions]) / n
    d_values = (2.0 * model.value_coef / n) * v_err

    value_grads, d_hidden = mlp_backward(
        model.value_params, model.value_config, vcache, d_values[:, None]
    )
    last_hidden = model.policy_config.n_layers - 2
    policy_grads, _ = mlp_backward(
        model.policy_params,
        model.policy_config,
        pcache,
        d_probs,
        hidden_grads={last_hidden: d_hidden},
    )
    stats = {
        "loss": loss,
        "policy_loss": pg_loss,
        "value_loss": value_loss,
        "entropy": entropy_mean,
    }
    return loss, policy_grads, value_grads, stats
