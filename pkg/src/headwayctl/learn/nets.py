"""Two-layer tanh policy/value network in plain numpy.

Gradients are computed by hand (see :func:`policy_backward`); keeping the
whole computation in numpy makes every update step exactly reproducible
and directly checkable against finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Union

import numpy as np

__all__ = [
    "PolicyParameters",
    "init_params",
    "policy_forward",
    "policy_forward_cached",
    "policy_backward",
    "gaussian_logp",
    "flatten",
    "unflatten_like",
    "zeros_like_params",
    "save_params",
    "load_params",
]

# flat layout order; also the npz key order
_FIELDS = ("w1", "b1", "w2", "b2", "w_mu", "b_mu", "w_v", "b_v", "log_std")


@dataclass
class PolicyParameters:
    """Weights of the shared-trunk Gaussian policy and value head.

    The action mean and the scalar value share the trunk; the log standard
    deviation is a free per-action vector, independent of the input.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w_mu: np.ndarray
    b_mu: np.ndarray
    w_v: np.ndarray   # (hidden, 1)
    b_v: np.ndarray   # (1,)
    log_std: np.ndarray

    @property
    def obs_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def act_dim(self) -> int:
        return self.w_mu.shape[1]

    def copy(self) -> "PolicyParameters":
        return PolicyParameters(**{f.name: getattr(self, f.name).copy()
                                   for f in fields(self)})


def _orthogonal(rng: np.random.Generator, rows: int, cols: int,
                gain: float) -> np.ndarray:
    a = rng.standard_normal((rows, cols))
    u, _, vt = np.linalg.svd(a, full_matrices=False)
    q = u if u.shape == (rows, cols) else vt
    return gain * q


def init_params(obs_dim: int, act_dim: int, hidden: int = 256,
                seed: int = 0, mean_bias: float = 0.0) -> PolicyParameters:
    """Orthogonal initialisation; the mean head starts tiny so the initial
    policy sits at ``mean_bias`` (set it to the midpoint of the action box).
    """
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0x1717])
    return PolicyParameters(
        w1=_orthogonal(rng, obs_dim, hidden, math.sqrt(2.0)),
        b1=np.zeros(hidden),
        w2=_orthogonal(rng, hidden, hidden, math.sqrt(2.0)),
        b2=np.zeros(hidden),
        w_mu=_orthogonal(rng, hidden, act_dim, 0.01),
        b_mu=np.full(act_dim, float(mean_bias)),
        w_v=_orthogonal(rng, hidden, 1, 1.0),
        b_v=np.zeros(1),
        log_std=np.zeros(act_dim),
    )


def policy_forward_cached(p: PolicyParameters, obs: np.ndarray):
    """Forward pass on a batch: (mean (B,A), value (B,), cache)."""
    h1 = np.tanh(obs @ p.w1 + p.b1)
    h2 = np.tanh(h1 @ p.w2 + p.b2)
    mean = h2 @ p.w_mu + p.b_mu
    value = (h2 @ p.w_v).ravel() + p.b_v[0]
    return mean, value, (h1, h2)


def policy_forward(p: PolicyParameters, obs: np.ndarray):
    mean, value, _ = policy_forward_cached(p, obs)
    return mean, value


def policy_backward(p: PolicyParameters, obs: np.ndarray, cache,
                    d_mean: np.ndarray, d_value: np.ndarray
                    ) -> PolicyParameters:
    """Gradients of a scalar loss given its derivatives at both heads.

    ``log_std`` is not part of the trunk; its gradient is zeroed here and
    filled in by the caller.
    """
    h1, h2 = cache
    g_w_mu = h2.T @ d_mean
    g_b_mu = d_mean.sum(axis=0)
    g_w_v = h2.T @ d_value[:, None]
    g_b_v = np.array([d_value.sum()])
    d_h2 = d_mean @ p.w_mu.T + d_value[:, None] @ p.w_v.T
    d_a2 = d_h2 * (1.0 - h2 * h2)
    g_w2 = h1.T @ d_a2
    g_b2 = d_a2.sum(axis=0)
    d_h1 = d_a2 @ p.w2.T
    d_a1 = d_h1 * (1.0 - h1 * h1)
    g_w1 = obs.T @ d_a1
    g_b1 = d_a1.sum(axis=0)
    return PolicyParameters(w1=g_w1, b1=g_b1, w2=g_w2, b2=g_b2,
                            w_mu=g_w_mu, b_mu=g_b_mu, w_v=g_w_v, b_v=g_b_v,
                            log_std=np.zeros_like(p.log_std))


def gaussian_logp(mean: np.ndarray, log_std: np.ndarray,
                  x: np.ndarray) -> np.ndarray:
    """Log density of a diagonal Gaussian, summed over action dims."""
    z = (x - mean) / np.exp(log_std)
    return (-0.5 * np.sum(z * z, axis=-1) - np.sum(log_std)
            - 0.5 * mean.shape[-1] * math.log(2.0 * math.pi))


def flatten(p: PolicyParameters) -> np.ndarray:
    return np.concatenate([getattr(p, name).ravel() for name in _FIELDS])


def unflatten_like(template: PolicyParameters,
                   vec: np.ndarray) -> PolicyParameters:
    out = {}
    offset = 0
    for name in _FIELDS:
        ref = getattr(template, name)
        out[name] = vec[offset:offset + ref.size].reshape(ref.shape).copy()
        offset += ref.size
    if offset != vec.size:
        raise ValueError("flat vector length does not match parameters")
    return PolicyParameters(**out)


def zeros_like_params(p: PolicyParameters) -> PolicyParameters:
    return PolicyParameters(**{name: np.zeros_like(getattr(p, name))
                               for name in _FIELDS})


def save_params(p: PolicyParameters, path: Union[str, Path],
                **extra: np.ndarray) -> None:
    np.savez(path, **{name: getattr(p, name) for name in _FIELDS}, **extra)


def load_params(path: Union[str, Path]
                ) -> tuple[PolicyParameters, dict[str, np.ndarray]]:
    with np.load(path) as data:
        params = PolicyParameters(**{name: data[name].copy()
                                     for name in _FIELDS})
        extra = {k: data[k].copy() for k in data.files if k not in _FIELDS}
    return params, extra
