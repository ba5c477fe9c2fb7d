"""Learned one-step dynamics: (state, action) -> predicted next state.

A plain MLP regressor trained with mean squared error, so its predictions
converge to the conditional mean of the next-state distribution. States are
normalized by running statistics on the way in and out; actions enter as a
one-hot block appended to the input.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from .tensor import (
    MLPConfig,
    Optimizer,
    ParamSet,
    UpdateRejected,
    mlp_backward,
    mlp_forward,
    mlp_init,
)

STD_FLOOR = 1e-6


class RunningNorm:
    """Per-component running mean/std (Welford), std floored at 1e-6."""

    def __init__(self, dim: int):
        self.dim = dim
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def update(self, states: np.ndarray) -> None:
        batch = np.atleast_2d(np.asarray(states, dtype=np.float64))
        n = len(batch)
        if n == 0:
            return
        b_mean = batch.mean(axis=0)
        b_m2 = ((batch - b_mean) ** 2).sum(axis=0)
        delta = b_mean - self.mean
        total = self.count + n
        self.mean = self.mean + delta * (n / total)
        self.m2 = self.m2 + b_m2 + delta * delta * (self.count * n / total)
        self.count = total

    @property
    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.ones(self.dim)
        return np.maximum(np.sqrt(self.m2 / self.count), STD_FLOOR)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return z * self.std + self.mean

    def get_state(self) -> dict:
        return {
            "count": self.count,
            "mean": self.mean.tolist(),
            "m2": self.m2.tolist(),
        }

    def set_state(self, state: dict) -> None:
        self.count = state["count"]
        self.mean = np.asarray(state["mean"], dtype=np.float64)
        self.m2 = np.asarray(state["m2"], dtype=np.float64)


def _as_triples(batch):
    """Accept a list of (s, a, s') triples or a (states, actions, nexts) tuple."""
    if isinstance(batch, tuple) and len(batch) == 3:
        s, a, s2 = batch
    else:
        if len(batch) == 0:
            raise ValueError("empty batch")
        s = [t[0] for t in batch]
        a = [t[1] for t in batch]
        s2 = [t[2] for t in batch]
    states = np.atleast_2d(np.asarray(s, dtype=np.float64))
    actions = np.asarray(a, dtype=np.int64).ravel()
    nexts = np.atleast_2d(np.asarray(s2, dtype=np.float64))
    if len(states) == 0:
        raise ValueError("empty batch")
    if not (len(states) == len(actions) == len(nexts)):
        raise ValueError("batch arrays disagree on length")
    return states, actions, nexts


class ForwardModel:
    """MSE-trained deterministic point predictor of the next state."""

    def __init__(
        self,
        state_dim: int,
        n_actions: int,
        hidden: tuple[int, ...] = (64, 64),
        seed: int = 0,
        optimizer: str = "adam",
        learning_rate: float = 1e-3,
    ):
        self.state_dim = state_dim
        self.n_actions = n_actions
        self.config = MLPConfig((state_dim + n_actions, *hidden, state_dim), "tanh", "identity")
        self.params = mlp_init(self.config, seed, prefix="fwd.")
        self.normalizer = RunningNorm(state_dim)
        self.optimizer = Optimizer(optimizer, learning_rate)

    # -- inputs ---------------------------------------------------------------

    def _net_input(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        onehot = np.zeros((len(states), self.n_actions))
        onehot[np.arange(len(states)), actions] = 1.0
        return np.concatenate([self.normalizer.normalize(states), onehot], axis=1)

    def update_normalizer(self, states: np.ndarray) -> None:
        self.normalizer.update(states)

    # -- prediction -----------------------------------------------------------

    def predict_batch(self, states, actions) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        actions = np.asarray(actions, dtype=np.int64).ravel()
        if not np.all(np.isfinite(states)):
            raise ValueError("non-finite state components")
        if np.any(actions < 0) or np.any(actions >= self.n_actions):
            raise ValueError("action index out of range")
        z, _ = mlp_forward(self.params, self.config, self._net_input(states, actions), "fwd.")
        return self.normalizer.denormalize(z)

    def predict(self, state, action: int) -> np.ndarray:
        return self.predict_batch(np.asarray(state)[None, :], [action])[0]

    # -- training -------------------------------------------------------------

    def loss_and_grads(self, batch) -> tuple[float, ParamSet]:
        """Mean over the batch of squared L2 error, in normalized state units."""
        states, actions, nexts = _as_triples(batch)
        x = self._net_input(states, actions)
        targets = self.normalizer.normalize(nexts)
        z, cache = mlp_forward(self.params, self.config, x, "fwd.")
        err = z - targets
        loss = float(np.mean(np.sum(err * err, axis=1)))
        if not np.isfinite(loss):
            raise UpdateRejected(f"non-finite dynamics loss {loss}; step aborted")
        grads, _ = mlp_backward(self.params, self.config, cache, 2.0 * err / len(states))
        return loss, grads

    def fit_step(self, batch, learning_rate: Optional[float] = None) -> float:
        """One optimizer step on the model parameters; aborts on NaN loss."""
        loss, grads = self.loss_and_grads(batch)
        if not np.isfinite(loss):
            raise UpdateRejected(f"non-finite dynamics loss {loss}; step aborted")
        if learning_rate is not None:
            self.optimizer.learning_rate = learning_rate
        self.params = self.optimizer.step(self.params, grads)
        return loss


def forward_loss(model: ForwardModel, batch) -> tuple[float, ParamSet]:
    """Loss and gradient of the dynamics regressor on one batch."""
    return model.loss_and_grads(batch)


def fit_step(model: ForwardModel, batch, learning_rate: float) -> float:
    return model.fit_step(batch, learning_rate)


def predict(model: ForwardModel, state, action: int) -> np.ndarray:
    return model.predict(state, action)
