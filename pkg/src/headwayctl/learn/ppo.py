"""Clipped-surrogate policy optimisation on collected rollouts.

The loss is the standard clipped ratio objective plus a mean-squared value
error, a sampled-KL penalty against the rollout policy, and an (optionally
weighted) entropy bonus.  Everything is differentiated by hand; a finite
difference check in the test suite pins the math down.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .nets import (PolicyParameters, flatten, gaussian_logp,
                   policy_backward, policy_forward_cached, unflatten_like)

__all__ = [
    "TrainConfig",
    "RolloutBatch",
    "AdamState",
    "UpdateDiagnostics",
    "TrainingDiverged",
    "compute_gae",
    "normalize_advantages",
    "loss_and_grads",
    "adam_init",
    "adam_step",
    "ppo_update",
]


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation hyperparameters, in rollout decision steps.

    ``batch_size`` is the minimum number of decision transitions gathered
    per iteration (whole episodes are collected, so the actual count may
    overshoot by up to one episode).  ``budget_steps`` is the total engine
    step budget for a training run.
    """

    gamma: float = 0.99
    gae_lambda: float = 1.0
    clip_ratio: float = 0.3
    vf_coeff: float = 1.0
    kl_coeff: float = 0.2
    entropy_coeff: float = 0.0
    learning_rate: float = 5e-5
    batch_size: int = 2000
    minibatch_size: int = 128
    epochs: int = 30
    hidden: int = 256
    budget_steps: int = 60_000
    checkpoint_every: int = 5

    def validate(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.clip_ratio <= 0.0:
            raise ValueError("clip_ratio must be positive")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if min(self.batch_size, self.minibatch_size, self.epochs,
               self.hidden, self.budget_steps) <= 0:
            raise ValueError("sizes must be positive")


@dataclass
class RolloutBatch:
    """Transitions from one or more complete episodes."""

    observations: np.ndarray   # (N, obs_dim)
    actions: np.ndarray        # (N, act_dim) raw, unclipped samples
    log_probs: np.ndarray      # (N,) under the rollout policy
    advantages: np.ndarray     # (N,)
    returns: np.ndarray        # (N,) GAE value targets

    def __len__(self) -> int:
        return self.observations.shape[0]

    @classmethod
    def concatenate(cls, parts: list["RolloutBatch"]) -> "RolloutBatch":
        return cls(
            observations=np.concatenate([p.observations for p in parts]),
            actions=np.concatenate([p.actions for p in parts]),
            log_probs=np.concatenate([p.log_probs for p in parts]),
            advantages=np.concatenate([p.advantages for p in parts]),
            returns=np.concatenate([p.returns for p in parts]))


class TrainingDiverged(RuntimeError):
    """Raised when the loss or gradients stop being finite."""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def compute_gae(rewards: np.ndarray, values: np.ndarray, gamma: float,
                lam: float, last_value: float = 0.0
                ) -> tuple[np.ndarray, np.ndarray]:
    """Generalised advantage estimates and value targets for one episode.

    ``last_value`` bootstraps past the final transition; zero for episodes
    that actually terminate.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if rewards.shape != values.shape:
        raise ValueError("rewards and values must align")
    n = rewards.size
    adv = np.zeros(n)
    gae = 0.0
    for t in range(n - 1, -1, -1):
        next_value = values[t + 1] if t + 1 < n else last_value
        delta = rewards[t] + gamma * next_value - values[t]
        gae = delta + gamma * lam * gae
        adv[t] = gae
    return adv, adv + values


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance advantages; degenerate batches pass through
    centred only (a zero std would otherwise blow up)."""
    centred = adv - adv.mean()
    std = adv.std()
    if std == 0.0:
        return centred
    return centred / std


def loss_and_grads(params: PolicyParameters, obs: np.ndarray,
                   actions: np.ndarray, logp_old: np.ndarray,
                   advantages: np.ndarray, returns: np.ndarray,
                   cfg: TrainConfig
                   ) -> tuple[float, PolicyParameters, dict]:
    """Total loss, its exact gradient, and scalar diagnostics.

    Gradient flows through the unclipped surrogate branch only where it is
    the active minimum, matching the usual subgradient convention.
    """
    n = obs.shape[0]
    mean, value, cache = policy_forward_cached(params, obs)
    std = np.exp(params.log_std)
    z = (actions - mean) / std
    logp = gaussian_logp(mean, params.log_std, actions)

    ratio = np.exp(logp - logp_old)
    clipped = np.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio)
    surr = ratio * advantages
    surr_clip = clipped * advantages
    take_raw = surr <= surr_clip
    policy_loss = -float(np.mean(np.minimum(surr, surr_clip)))

    kl = float(np.mean(logp_old - logp))
    value_err = value - returns
    value_loss = float(np.mean(value_err ** 2))
    entropy = float(np.sum(params.log_std)
                    + 0.5 * params.act_dim * (1.0 + np.log(2.0 * np.pi)))

    total = (policy_loss + cfg.vf_coeff * value_loss + cfg.kl_coeff * kl
             - cfg.entropy_coeff * entropy)

    # d(total)/d(logp): surrogate (active branch) + KL penalty
    d_logp = np.where(take_raw, -(advantages * ratio) / n, 0.0)
    d_logp += cfg.kl_coeff * (-1.0 / n)
    # logp derivatives: d/d(mean) = z/std, d/d(log_std) = z^2 - 1
    d_mean = d_logp[:, None] * (z / std)
    g_log_std = np.sum(d_logp[:, None] * (z * z - 1.0), axis=0)
    g_log_std -= cfg.entropy_coeff * np.ones_like(params.log_std)
    d_value = cfg.vf_coeff * 2.0 * value_err / n

    grads = policy_backward(params, obs, cache, d_mean, d_value)
    grads.log_std = g_log_std

    diags = {
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "kl": kl,
        "entropy": entropy,
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > cfg.clip_ratio)),
        "total_loss": total,
    }
    return total, grads, diags


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_init(params: PolicyParameters) -> AdamState:
    flat = flatten(params)
    return AdamState(m=np.zeros_like(flat), v=np.zeros_like(flat), t=0)


def adam_step(theta: np.ndarray, grad: np.ndarray, state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> np.ndarray:
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class UpdateDiagnostics:
    policy_loss: float
    value_loss: float
    kl: float
    entropy: float
    clip_fraction: float
    total_loss: float

    @classmethod
    def from_minibatches(cls, rows: list[dict]) -> "UpdateDiagnostics":
        def avg(key: str) -> float:
            return float(np.mean([r[key] for r in rows]))
        return cls(policy_loss=avg("policy_loss"),
                   value_loss=avg("value_loss"), kl=avg("kl"),
                   entropy=avg("entropy"),
                   clip_fraction=avg("clip_fraction"),
                   total_loss=avg("total_loss"))


def ppo_update(params: PolicyParameters, batch: RolloutBatch,
               cfg: TrainConfig, adam: AdamState,
               rng: np.random.Generator) -> tuple[PolicyParameters,
                                                  UpdateDiagnostics]:
    """Run the full epoch schedule on one batch and return new parameters.

    Advantages are normalised once per batch.  Minibatch order reshuffles
    every epoch; a short final minibatch is kept, not dropped.
    """
    cfg.validate()
    adv = normalize_advantages(batch.advantages)
    n = len(batch)
    theta = flatten(params)
    current = params
    rows: list[dict] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start:start + cfg.minibatch_size]
            total, grads, diags = loss_and_grads(
                current, batch.observations[idx], batch.actions[idx],
                batch.log_probs[idx], adv[idx], batch.returns[idx], cfg)
            if not np.isfinite(total):
                raise TrainingDiverged(
                    f"non-finite loss {total}", diagnostics=diags)
            gflat = flatten(grads)
            if not np.all(np.isfinite(gflat)):
                raise TrainingDiverged("non-finite gradient",
                                       diagnostics=diags)
            theta = adam_step(theta, gflat, adam, cfg.learning_rate)
            current = unflatten_like(params, theta)
            rows.append(diags)
    return current, UpdateDiagnostics.from_minibatches(rows)
