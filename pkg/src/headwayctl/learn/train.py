"""Training loop: collect whole episodes, update, checkpoint, repeat.

Episode seeds are a pure function of (root seed, iteration, episode index),
so runs are reproducible and resumable regardless of how the work is
scheduled.  The budget is counted in engine steps, not updates.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from ..config import ScenarioConfig
from ..control import PolicyController
from ..engine import run_episode
from ..metrics import paired_speed_change
from ..network import build_merge_network
from .nets import PolicyParameters, init_params, load_params, save_params
from .ppo import (AdamState, RolloutBatch, TrainConfig, adam_init,
                  compute_gae, ppo_update)

__all__ = [
    "CurvePoint",
    "TrainResult",
    "policy_dimensions",
    "episode_seed",
    "collect_episode",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "save_curve",
    "load_curve",
    "evaluate_policy",
]


def policy_dimensions(cfg: ScenarioConfig) -> tuple[int, int]:
    """(observation, action) sizes implied by a scenario."""
    net = build_merge_network(cfg)
    return 2 * net.num_segments, cfg.control.num_control_segments


def episode_seed(root_seed: int, iteration: int, index: int) -> int:
    # distinct affine combination; keeps every episode's draw independent
    # of scheduling order
    return (int(root_seed) * 1_000_003 + iteration * 10_007 + index
            ) & 0x7FFFFFFF


def collect_episode(cfg: ScenarioConfig, params: PolicyParameters,
                    seed: int, tcfg: TrainConfig
                    ) -> tuple[RolloutBatch, float, int]:
    """Roll out one stochastic episode; returns (batch, return, steps)."""
    controller = PolicyController(cfg, params, stochastic=True, seed=seed,
                                  collect=True)
    record = run_episode(cfg, controller, seed=seed)
    every = round(cfg.control.action_interval / cfg.dt)
    if record.n_steps % every != 0:
        raise ValueError("episode length is not a whole number of actions")
    n_dec = record.n_steps // every
    if len(controller.observations) != n_dec:
        raise RuntimeError("controller was not polled once per interval")
    rewards = record.rewards.reshape(n_dec, every).sum(axis=1)
    values = np.array(controller.values)
    adv, returns = compute_gae(rewards, values, tcfg.gamma,
                               tcfg.gae_lambda, last_value=0.0)
    batch = RolloutBatch(
        observations=np.stack(controller.observations),
        actions=np.stack(controller.actions),
        log_probs=np.array(controller.log_probs),
        advantages=adv, returns=returns)
    return batch, float(record.rewards.sum()), record.n_steps


@dataclass(frozen=True)
class CurvePoint:
    iteration: int
    env_steps: int
    mean_return: float
    policy_loss: float
    value_loss: float
    kl: float
    clip_fraction: float


@dataclass
class TrainResult:
    params: PolicyParameters
    curve: list[CurvePoint]
    env_steps: int
    iterations: int


def save_checkpoint(path: Union[str, Path], params: PolicyParameters,
                    adam: AdamState, iteration: int, env_steps: int,
                    root_seed: int) -> None:
    save_params(params, path,
                adam_m=adam.m, adam_v=adam.v,
                adam_t=np.array([adam.t]),
                iteration=np.array([iteration]),
                env_steps=np.array([env_steps]),
                root_seed=np.array([root_seed]))


def load_checkpoint(path: Union[str, Path]
                    ) -> tuple[PolicyParameters, AdamState, int, int, int]:
    params, extra = load_params(path)
    adam = AdamState(m=extra["adam_m"], v=extra["adam_v"],
                     t=int(extra["adam_t"][0]))
    return (params, adam, int(extra["iteration"][0]),
            int(extra["env_steps"][0]), int(extra["root_seed"][0]))


def save_curve(curve: list[CurvePoint], path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "env_steps", "mean_return", "policy_loss",
                    "value_loss", "kl", "clip_fraction"])
        for pt in curve:
            w.writerow([pt.iteration, pt.env_steps, repr(pt.mean_return),
                        repr(pt.policy_loss), repr(pt.value_loss),
                        repr(pt.kl), repr(pt.clip_fraction)])


def load_curve(path: Union[str, Path]) -> list[CurvePoint]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(CurvePoint(
                iteration=int(row["iteration"]),
                env_steps=int(row["env_steps"]),
                mean_return=float(row["mean_return"]),
                policy_loss=float(row["policy_loss"]),
                value_loss=float(row["value_loss"]),
                kl=float(row["kl"]),
                clip_fraction=float(row["clip_fraction"])))
    return out


def train(cfg: ScenarioConfig, tcfg: TrainConfig, seed: int = 0,
          out_dir: Optional[Union[str, Path]] = None, resume: bool = False,
          log: Optional[Callable[[str], None]] = None) -> TrainResult:
    """Optimise a policy on the scenario within the engine-step budget.

    With ``out_dir`` set, checkpoints and the learning curve land there;
    ``resume`` picks up from ``checkpoint.npz`` bit-exactly (iteration
    boundaries only).
    """
    cfg.validate()
    tcfg.validate()
    obs_dim, act_dim = policy_dimensions(cfg)
    mid = 0.5 * (cfg.control.min_headway + cfg.control.max_headway)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.npz" if out is not None else None
    start_iter = 0
    env_steps = 0
    curve: list[CurvePoint] = []
    if resume and ckpt_path is not None and ckpt_path.exists():
        params, adam, start_iter, env_steps, saved_seed = \
            load_checkpoint(ckpt_path)
        if saved_seed != seed:
            raise ValueError("checkpoint was trained with a different seed")
        curve_path = out / "curve.csv"
        if curve_path.exists():
            curve = [pt for pt in load_curve(curve_path)
                     if pt.iteration <= start_iter]
    else:
        params = init_params(obs_dim, act_dim, hidden=tcfg.hidden,
                             seed=seed, mean_bias=mid)
        adam = adam_init(params)

    steps_per_episode = round(cfg.sim_duration / cfg.dt)
    decisions_per_episode = steps_per_episode // round(
        cfg.control.action_interval / cfg.dt)
    episodes_per_iter = max(1, math.ceil(
        tcfg.batch_size / decisions_per_episode))

    iteration = start_iter
    while env_steps < tcfg.budget_steps:
        parts = []
        ep_returns = []
        for e in range(episodes_per_iter):
            batch, ep_ret, steps = collect_episode(
                cfg, params, episode_seed(seed, iteration, e), tcfg)
            parts.append(batch)
            ep_returns.append(ep_ret)
            env_steps += steps
        batch = RolloutBatch.concatenate(parts)
        rng = np.random.default_rng(
            [int(seed) & 0xFFFFFFFF, 0x9970, iteration])
        params, diags = ppo_update(params, batch, tcfg, adam, rng)
        iteration += 1
        point = CurvePoint(iteration=iteration, env_steps=env_steps,
                           mean_return=float(np.mean(ep_returns)),
                           policy_loss=diags.policy_loss,
                           value_loss=diags.value_loss, kl=diags.kl,
                           clip_fraction=diags.clip_fraction)
        curve.append(point)
        if log is not None:
            log(f"iter {point.iteration:3d}  steps {point.env_steps:8d}  "
                f"return {point.mean_return:+.4f}  "
                f"kl {point.kl:+.2e}  clip {point.clip_fraction:.3f}")
        if out is not None and (iteration % tcfg.checkpoint_every == 0
                                or env_steps >= tcfg.budget_steps):
            save_checkpoint(ckpt_path, params, adam, iteration, env_steps,
                            seed)
            save_curve(curve, out / "curve.csv")
    if out is not None:
        save_checkpoint(ckpt_path, params, adam, iteration, env_steps, seed)
        save_curve(curve, out / "curve.csv")
    return TrainResult(params=params, curve=curve, env_steps=env_steps,
                       iterations=iteration)


def evaluate_policy(cfg: ScenarioConfig, params: PolicyParameters,
                    seeds, stochastic: bool = False) -> list[float]:
    """Paired speed change of the (by default deterministic) policy against
    the human baseline, one value per seed."""
    out = []
    for s in seeds:
        controller = PolicyController(cfg, params, stochastic=stochastic,
                                      seed=s)
        rec = run_episode(cfg, controller, seed=s)
        base = run_episode(cfg, None, seed=s)
        out.append(paired_speed_change(rec, base))
    return out
