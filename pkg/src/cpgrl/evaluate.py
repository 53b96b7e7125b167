"""Deterministic policy evaluation: trace export and trunk-state summaries."""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import quat
from .config import RunConfig
from .env import POLICY_DT, POLICY_RATE, VecLocomotionEnv
from .gait_planner import GaitPlannerModel
from .kinematics import LEG_NAMES, forward_kinematics_all
from .ppo import GaussianPolicy, policy_sample
from .task import RewardBreakdown


def constant_profile(value: float):
    def profile(t: float) -> np.ndarray:
        return np.array([value, 0.0, 0.0])

    return profile


def ramp_profile(peak: float = 1.0, hold: float = 1.0, duration: float = 10.0):
    """Command rising linearly to the peak, then held for the final second(s)."""
    ramp_time = max(duration - hold, 1e-9)

    def profile(t: float) -> np.ndarray:
        vx = peak * min(t / ramp_time, 1.0)
        return np.array([vx, 0.0, 0.0])

    return profile


TRACE_COLUMNS = (
    ["time", "cmd_vx", "cmd_vy", "cmd_wz",
     "pos_x", "pos_y", "pos_z", "roll", "pitch", "yaw",
     "vel_x", "vel_y", "vel_z", "vx_body",
     "angvel_x", "angvel_y", "angvel_z"]
    + [f"q_{i}" for i in range(12)]
    + [f"qdot_{i}" for i in range(12)]
    + [f"contact_{name}" for name in LEG_NAMES]
    + [f"foot_{name}_{ax}_world" for name in LEG_NAMES for ax in "xyz"]
    + [f"foot_{name}_{ax}_body" for name in LEG_NAMES for ax in "xyz"]
    + [f"reward_{name}" for name in RewardBreakdown.term_names()]
    + ["reward_total"]
)


@dataclass(frozen=True)
class EvalSummary:
    duration: float
    mean_vx_body: float
    std_vx_body: float
    mean_height: float
    std_height: float
    mean_pitch_deg: float
    std_pitch_deg: float
    mean_roll_deg: float
    std_roll_deg: float
    falls: int
    distance: float

    def lines(self) -> list:
        return [
            f"duration          {self.duration:.2f} s",
            f"velocity (body x) {self.mean_vx_body:.3f} +- {self.std_vx_body:.3f} m/s",
            f"height            {self.mean_height:.3f} +- {self.std_height:.3f} m",
            f"pitch             {self.mean_pitch_deg:.3f} +- {self.std_pitch_deg:.3f} deg",
            f"roll              {self.mean_roll_deg:.3f} +- {self.std_roll_deg:.3f} deg",
            f"falls             {self.falls}",
            f"distance          {self.distance:.3f} m",
        ]


def run_eval(cfg: RunConfig, planner: GaitPlannerModel, policy: GaussianPolicy | None,
             profile, duration: float, trace_path=None, settle_time: float = 2.0):
    """Deterministic rollout in a noise-free env; returns (summary, rows).

    policy=None runs the pure planner baseline (zero residual). The robot
    first settles for settle_time seconds under zero command; the trace and
    the summary cover only the commanded window.
    """
    env = VecLocomotionEnv(cfg, planner, n_envs=1, train_mode=False)
    zero_cmd = np.zeros((1, 3))
    rows = []
    falls = 0
    n_settle = int(round(settle_time * POLICY_RATE))
    n_steps = int(round(duration * POLICY_RATE))
    start_x = None

    for k in range(n_settle + n_steps):
        in_window = k >= n_settle
        t = (k - n_settle) * POLICY_DT if in_window else 0.0
        cmd = profile(t) if in_window else zero_cmd[0]
        env.set_commands(cmd[None, :])
        obs = env.observe(noisy=False)
        if policy is None:
            action = np.zeros((1, 12))
        else:
            action, _ = policy_sample(policy, policy.prepare_obs(obs), deterministic=True)
        rewards, dones, info = env.step(action)
        if not in_window:
            continue
        if start_x is None:
            start_x = float(env.pos[0, 0])
        if info["collision"][0]:
            falls += 1
        rpy = quat.to_euler_zyx(env.rot[0])
        vx_body = float(quat.rotate_inv(env.rot[0], env.linvel[0])[0])
        feet_b = forward_kinematics_all(env.q[0], env.geometry)
        feet_w = env.pos[0] + quat.rotate(env.rot[0], feet_b)
        term_values = [float(info["terms"][name][0]) for name in RewardBreakdown.term_names()]
        rows.append(
            [t, *cmd, *env.pos[0], *rpy, *env.linvel[0], vx_body, *env.angvel[0],
             *env.q[0], *env.qdot[0], *env.contacts[0].astype(int),
             *feet_w.ravel(), *feet_b.ravel(), *term_values, float(rewards[0])]
        )

    data = np.array([[float(v) for v in row] for row in rows])
    col = {name: i for i, name in enumerate(TRACE_COLUMNS)}
    summary = EvalSummary(
        duration=duration,
        mean_vx_body=float(data[:, col["vx_body"]].mean()),
        std_vx_body=float(data[:, col["vx_body"]].std()),
        mean_height=float(data[:, col["pos_z"]].mean()),
        std_height=float(data[:, col["pos_z"]].std()),
        mean_pitch_deg=float(np.degrees(data[:, col["pitch"]]).mean()),
        std_pitch_deg=float(np.degrees(data[:, col["pitch"]]).std()),
        mean_roll_deg=float(np.degrees(data[:, col["roll"]]).mean()),
        std_roll_deg=float(np.degrees(data[:, col["roll"]]).std()),
        falls=falls,
        distance=float(data[-1, col["pos_x"]] - start_x),
    )
    if trace_path is not None:
        trace_path = Path(trace_path)
        trace_path.parent.mkdir(parents=True, exist_ok=True)
        with open(trace_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            writer.writerows(rows)
    return summary, data


def export_gait(planner: GaitPlannerModel, geometry, n_periods: int, path) -> int:
    """Baseline joint targets and body-frame FK feet, one row per tick."""
    table = planner.baseline_table()
    feet = planner.desired_feet_table(geometry)
    t_ticks = planner.orbit.period_ticks
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = (
        ["tick", "time"]
        + [f"q_{i}" for i in range(12)]
        + [f"foot_{name}_{ax}" for name in LEG_NAMES for ax in "xyz"]
    )
    n_rows = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for k in range(n_periods * t_ticks):
            i = k % t_ticks
            writer.writerow(
                [k, k / planner.params.tick_rate, *table[i], *feet[i].ravel()]
            )
            n_rows += 1
    return n_rows


def contact_gait_stats(data: np.ndarray):
    """Trot structure from an eval trace: diagonal/adjacent contact lags and
    per-foot stance fractions, on the 50 Hz contact log."""
    col = {name: i for i, name in enumerate(TRACE_COLUMNS)}
    contacts = np.stack(
        [data[:, col[f"contact_{name}"]] for name in LEG_NAMES], axis=1
    )
    stance_fraction = contacts.mean(axis=0)

    def best_lag(a, b, max_lag):
        a = a - a.mean()
        b = b - b.mean()
        scores = [(float(np.dot(a, np.roll(b, -lag))), lag) for lag in range(max_lag)]
        return max(scores)[1]

    period_steps = 30  # 120 oscillator ticks / 4 substeps per policy step
    diag = best_lag(contacts[:, 0], contacts[:, 3], period_steps)
    adj = best_lag(contacts[:, 0], contacts[:, 1], period_steps)

    def cyc_dist(lag, target):
        d = abs(lag - target) % period_steps
        return min(d, period_steps - d)

    return {
        "stance_fraction": stance_fraction,
        "diag_lag_dist": cyc_dist(diag, 0),
        "adj_lag_dist": cyc_dist(adj, period_steps // 2),
        "period_steps": period_steps,
    }
