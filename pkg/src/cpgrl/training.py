"""Residual-policy training: the planner stays frozen while PPO trains the
feedback policy on top of it.

Checkpoints capture everything mutable (policy, optimizer moments, env state
arrays, every RNG stream, curriculum), so an interrupted run resumed from its
checkpoint reproduces subsequent metrics bit-identically.
"""

import csv
import json
import time
from pathlib import Path

import numpy as np

from .config import RunConfig, config_from_dict, config_hash, config_to_dict, save_config
from .env import POLICY_DT, VecLocomotionEnv
from .gait_planner import (
    GaitPlannerModel,
    build_planner,
    fit_motor_layer,
    fitted_planner,
    generate_demo_trot,
)
from .nn import Adam, RunningNorm
from .ppo import GaussianPolicy, PpoConfig, RolloutBuffer, ppo_update
from .randomization import CurriculumState, curriculum_update, initial_curriculum
from .task import OBS_DIM, RewardBreakdown

ACTION_DIM = 12
_POLICY_STREAM = 500
_TRAIN_STREAM = 501
CHECKPOINT_VERSION = 1


def planner_from_config(cfg: RunConfig, demo=None):
    """The behavior-cloning pipeline: oscillator, centers, fitted motor map."""
    geometry = cfg.leg_geometry()
    nominal_q = cfg.env_params().nominal_q
    model = build_planner(
        cfg.cpg, h=cfg.planner.h, sigma=cfg.planner.sigma,
        burn_in_ticks=cfg.planner.burn_in_ticks, nominal_q=nominal_q,
    )
    if demo is None:
        d = cfg.demo
        demo = generate_demo_trot(
            freq=d.freq, clearance_front=d.clearance_front,
            clearance_rear=d.clearance_rear, step_length=d.step_length,
            stance_fraction=d.stance_fraction, sample_rate=d.sample_rate,
            stand_height=cfg.robot.stand_height, stance_x_offset=d.stance_x_offset,
            geometry=geometry,
        )
    motor, report = fit_motor_layer(demo, model, geometry, split_seed=cfg.seed)
    return fitted_planner(model, motor), report


def collect_rollouts(env: VecLocomotionEnv, policy: GaussianPolicy,
                     rng: np.random.Generator, horizon: int,
                     curriculum: CurriculumState | None = None):
    """Fill a fresh buffer with horizon policy steps from every env."""
    buf = RolloutBuffer.empty(horizon, env.n, OBS_DIM, ACTION_DIM)
    term_totals = {name: 0.0 for name in RewardBreakdown.term_names()}
    tracking_sum = 0.0
    buf.sample_log_std = policy.log_std.copy()
    for t in range(horizon):
        obs = policy.prepare_obs(env.observe(), update=True)
        actions, logp, means = policy.sample(obs, rng, return_mean=True)
        values = policy.value(obs)
        rewards, dones, info = env.step(actions, curriculum)
        buf.observations[t] = obs
        buf.actions[t] = actions
        buf.log_probs[t] = logp
        buf.values[t] = values
        buf.rewards[t] = rewards
        buf.dones[t] = dones
        buf.action_means[t] = means
        for name, value in info["terms"].items():
            term_totals[name] += float(np.sum(value))
        w = env.cfg.reward.weights.lin_vel_tracking
        if w != 0.0:
            tracking_sum += float(np.sum(info["terms"]["lin_vel_tracking"])) / (w * POLICY_DT)
    buf.bootstrap_values = policy.value(policy.prepare_obs(env.observe()))

    n_samples = horizon * env.n
    stats = {name: total / n_samples for name, total in term_totals.items()}
    stats["tracking_fraction"] = tracking_sum / n_samples
    stats["mean_reward"] = float(np.mean(buf.rewards))
    return buf, stats


METRICS_COLUMNS = (
    ["iteration", "env_steps", "wall_time_s", "mean_reward", "tracking_fraction"]
    + list(RewardBreakdown.term_names())
    + ["episodes_finished", "mean_episode_len", "mean_episode_return",
       "policy_loss", "value_loss", "entropy", "approx_kl", "lr",
       "curriculum_interval", "curriculum_cap"]
)


def save_checkpoint(path, policy: GaussianPolicy, optimizer: Adam,
                    env: VecLocomotionEnv, train_rng: np.random.Generator,
                    curriculum: CurriculumState, iteration: int,
                    cfg: RunConfig, planner: GaitPlannerModel) -> None:
    env_state = env.state_dict()
    rng_states = env_state.pop("rng_states")
    meta = {
        "version": CHECKPOINT_VERSION,
        "iteration": iteration,
        "policy_lr": policy.lr,
        "adam_t": optimizer.t,
        "hidden": list(cfg.train.hidden),
        "curriculum": {
            "impulse_interval": curriculum.impulse_interval,
            "impulse_mag_cap": curriculum.impulse_mag_cap,
            "tracking_reward_ema": curriculum.tracking_reward_ema,
        },
        "train_rng": train_rng.bit_generator.state,
        "env_rngs": rng_states,
        "config": config_to_dict(cfg),
        "config_hash": config_hash(cfg),
    }
    arrays = {f"env_{k}": v for k, v in env_state.items()}
    if policy.obs_norm is not None:
        arrays["norm_mean"] = policy.obs_norm.mean
        arrays["norm_var"] = policy.obs_norm.var
        meta["norm_count"] = policy.obs_norm.count
    np.savez(
        path,
        policy_flat=policy.get_flat(),
        adam_m=optimizer.m,
        adam_v=optimizer.v,
        planner_phi=planner.params.phi,
        planner_alpha=planner.params.alpha,
        planner_tick_rate=planner.params.tick_rate,
        planner_orbit=planner.orbit.samples,
        planner_period=planner.orbit.period_ticks,
        planner_centers=planner.rbf.centers,
        planner_sigma=planner.rbf.sigma,
        planner_weights=planner.motor.weights,
        planner_bias=planner.motor.bias,
        meta=np.array(json.dumps(meta)),
        **arrays,
    )


def load_checkpoint(path) -> dict:
    from .gait_planner import GaitPlannerModel, MotorLayer, RbfLayer
    from .oscillator import OscillatorParams, PeriodicOrbit

    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        planner = GaitPlannerModel(
            params=OscillatorParams(
                phi=float(data["planner_phi"]), alpha=float(data["planner_alpha"]),
                tick_rate=float(data["planner_tick_rate"]),
            ),
            orbit=PeriodicOrbit(samples=data["planner_orbit"],
                                period_ticks=int(data["planner_period"])),
            rbf=RbfLayer(centers=data["planner_centers"], sigma=float(data["planner_sigma"])),
            motor=MotorLayer(weights=data["planner_weights"], bias=data["planner_bias"]),
        )
        out = {
            "meta": meta,
            "policy_flat": data["policy_flat"].copy(),
            "adam_m": data["adam_m"].copy(),
            "adam_v": data["adam_v"].copy(),
            "planner": planner,
            "env_arrays": {
                k[4:]: data[k].copy()
                for k in data.files
                if k.startswith("env_") and not k.startswith("env_rng")
            },
        }
        if "norm_mean" in data.files:
            out["norm_mean"] = data["norm_mean"].copy()
            out["norm_var"] = data["norm_var"].copy()
    out["config"] = config_from_dict(meta["config"])
    return out


def policy_from_checkpoint(ck: dict) -> GaussianPolicy:
    cfg = ck["config"]
    policy = GaussianPolicy(
        OBS_DIM, ACTION_DIM, cfg.train.hidden,
        np.random.default_rng([cfg.seed, _POLICY_STREAM]),
        log_std_init=cfg.train.log_std_init, lr=ck["meta"]["policy_lr"],
        actor_out_scale=cfg.train.actor_out_scale,
    )
    policy.set_flat(ck["policy_flat"])
    if "norm_mean" in ck:
        policy.obs_norm = RunningNorm(OBS_DIM)
        policy.obs_norm.load_state_dict(
            {"count": ck["meta"]["norm_count"], "mean": ck["norm_mean"], "var": ck["norm_var"]}
        )
    return policy


def train(cfg: RunConfig, planner: GaitPlannerModel, out_dir,
          iterations: int | None = None, resume_from=None, log=print):
    """Run PPO for the configured iterations; returns the metrics path.

    On NumericalDivergence the exception propagates after the message is
    logged; the last scheduled checkpoint stays on disk.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out_dir / "config.yaml")

    env = VecLocomotionEnv(cfg, planner, train_mode=True)
    policy = GaussianPolicy(
        OBS_DIM, ACTION_DIM, cfg.train.hidden,
        np.random.default_rng([cfg.seed, _POLICY_STREAM]),
        log_std_init=cfg.train.log_std_init, lr=cfg.train.lr_init,
        actor_out_scale=cfg.train.actor_out_scale,
    )
    if cfg.train.normalize_obs:
        policy.obs_norm = RunningNorm(OBS_DIM)
    optimizer = Adam(policy.n_params, lr=policy.lr)
    train_rng = np.random.default_rng([cfg.seed, _TRAIN_STREAM])
    curriculum = initial_curriculum(cfg.curriculum, cfg.dr)
    start_iteration = 0

    if resume_from is not None:
        ck = load_checkpoint(resume_from)
        if ck["meta"]["config_hash"] != config_hash(cfg):
            raise ValueError("checkpoint was produced by a different config")
        policy.set_flat(ck["policy_flat"])
        policy.lr = ck["meta"]["policy_lr"]
        if "norm_mean" in ck:
            policy.obs_norm = RunningNorm(OBS_DIM)
            policy.obs_norm.load_state_dict(
                {"count": ck["meta"]["norm_count"], "mean": ck["norm_mean"], "var": ck["norm_var"]}
            )
        optimizer.m = ck["adam_m"]
        optimizer.v = ck["adam_v"]
        optimizer.t = ck["meta"]["adam_t"]
        train_rng.bit_generator.state = ck["meta"]["train_rng"]
        env.load_state_dict({**ck["env_arrays"], "rng_states": ck["meta"]["env_rngs"]})
        c = ck["meta"]["curriculum"]
        curriculum = CurriculumState(**c)
        start_iteration = ck["meta"]["iteration"]

    total_iterations = cfg.train.iterations if iterations is None else iterations
    metrics_path = out_dir / "metrics.csv"
    mode = "a" if (resume_from is not None and metrics_path.exists()) else "w"
    ppo_cfg: PpoConfig = cfg.train.ppo
    horizon = cfg.train.horizon
    t_start = time.perf_counter()

    with open(metrics_path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(METRICS_COLUMNS)
        for iteration in range(start_iteration, total_iterations):
            buf, roll_stats = collect_rollouts(env, policy, train_rng, horizon, curriculum)
            if cfg.dr.apply_impulses:
                curriculum = curriculum_update(
                    curriculum, min(1.0, max(0.0, roll_stats["tracking_fraction"])),
                    cfg.curriculum,
                )
            update_stats = ppo_update(policy, optimizer, buf, ppo_cfg, train_rng)
            lengths, returns = env.drain_episode_stats()

            row = [
                iteration + 1,
                (iteration + 1) * horizon * env.n,
                time.perf_counter() - t_start,
                roll_stats["mean_reward"],
                roll_stats["tracking_fraction"],
            ]
            row += [roll_stats[name] for name in RewardBreakdown.term_names()]
            row += [
                len(lengths),
                float(np.mean(lengths)) if lengths else 0.0,
                float(np.mean(returns)) if returns else 0.0,
                update_stats.policy_loss,
                update_stats.value_loss,
                update_stats.entropy,
                update_stats.approx_kl,
                update_stats.new_lr,
                curriculum.impulse_interval,
                curriculum.impulse_mag_cap,
            ]
            writer.writerow(row)
            fh.flush()

            if (iteration + 1) % max(1, cfg.train.checkpoint_every) == 0 or (
                iteration + 1 == total_iterations
            ):
                save_checkpoint(
                    out_dir / f"checkpoint_{iteration + 1:06d}.npz",
                    policy, optimizer, env, train_rng, curriculum,
                    iteration + 1, cfg, planner,
                )
            if log is not None and (
                (iteration + 1) % 10 == 0 or iteration == start_iteration
            ):
                log(
                    f"iter {iteration + 1:4d}/{total_iterations}: "
                    f"reward/step {roll_stats['mean_reward']:+.4f} "
                    f"tracking {roll_stats['tracking_fraction']:.3f} "
                    f"kl {update_stats.approx_kl:.4f} lr {update_stats.new_lr:.1e}"
                )
    return metrics_path
