"""Vectorized locomotion environment: N independent robots in lockstep.

State lives in stacked arrays and every numerical path reuses the same
broadcast-friendly kernels as the scalar simulator, so batched stepping is
bit-identical to stepping each env alone. Each env owns its RNG stream,
seeded from (master seed, env index), which makes whole runs reproducible
and env streams mutually independent.
"""

from dataclasses import replace

import numpy as np

from . import quat
from .config import RunConfig
from .gait_planner import GaitPlannerModel
from .kinematics import forward_kinematics_all
from .randomization import (
    CurriculumState,
    sample_command_values,
    schedule_impulse,
)
from .simulator import NumericalDivergence, _check_divergence, _step_core, trunk_clearance
from .task import build_observation_arrays, compose_action, reward_terms_arrays

POLICY_RATE = 50.0  # Hz
POLICY_DT = 1.0 / POLICY_RATE


class VecLocomotionEnv:
    """Lockstep batch of simulated quadrupeds driven by residual actions."""

    def __init__(self, cfg: RunConfig, planner: GaitPlannerModel,
                 n_envs: int | None = None, master_seed: int | None = None,
                 train_mode: bool = True):
        cfg.validate()
        self.cfg = cfg
        self.base_params = cfg.env_params()
        self.geometry = self.base_params.geometry
        self.nominal_q = self.base_params.nominal_q
        self.n = int(n_envs if n_envs is not None else cfg.train.n_envs)
        self.train_mode = train_mode
        seed = cfg.seed if master_seed is None else master_seed
        self.rngs = [np.random.default_rng([seed, 1000 + i]) for i in range(self.n)]

        self.baseline = planner.baseline_table()                      # (T, 12)
        self.desired_feet = planner.desired_feet_table(self.geometry)  # (T, 4, 3)
        self.period = planner.orbit.period_ticks

        self.substeps = int(round(1.0 / (self.base_params.dt * POLICY_RATE)))
        if abs(self.substeps * self.base_params.dt * POLICY_RATE - 1.0) > 1e-9:
            raise ValueError("sim.dt must divide the policy period 1/50 s")

        n = self.n
        self.pos = np.zeros((n, 3))
        self.rot = np.tile(quat.IDENTITY, (n, 1))
        self.linvel = np.zeros((n, 3))
        self.angvel = np.zeros((n, 3))
        self.q = np.zeros((n, 12))
        self.qdot = np.zeros((n, 12))
        self.contacts = np.zeros((n, 4), dtype=bool)
        self.air = np.zeros((n, 4))
        self.ep_time = np.zeros(n)
        self.filter_mem = np.zeros((n, 12))
        self.phase = np.zeros(n, dtype=np.int64)
        self.ep_steps = np.zeros(n, dtype=np.int64)
        self.cmd = np.zeros((n, 3))
        self.mass = np.full(n, self.base_params.trunk_mass)
        self.friction = np.full(n, self.base_params.friction)
        self.prev_action = np.zeros((n, 12))
        self.prev_target = np.tile(self.nominal_q, (n, 1))
        self.episode_return = np.zeros(n)
        self.finished_lengths: list[int] = []
        self.finished_returns: list[float] = []

        for i in range(self.n):
            self._reset_env(i)

    # ------------------------------------------------------------- resets

    def _reset_env(self, i: int) -> None:
        """Spawn in the air with the default pose; fresh command and dynamics."""
        rng = self.rngs[i]
        self.pos[i] = [0.0, 0.0, self.base_params.stand_height + self.cfg.sim.spawn_drop_height]
        self.rot[i] = quat.IDENTITY
        self.linvel[i] = 0.0
        self.angvel[i] = 0.0
        self.q[i] = self.nominal_q
        self.qdot[i] = 0.0
        self.contacts[i] = False
        self.air[i] = 0.0
        self.ep_time[i] = 0.0
        self.filter_mem[i] = self.nominal_q
        self.phase[i] = 0
        self.ep_steps[i] = 0
        self.prev_action[i] = 0.0
        self.prev_target[i] = self.baseline[0]
        self.episode_return[i] = 0.0
        self.cmd[i] = sample_command_values(rng, self.cfg.commands.ranges)
        if self.train_mode and self.cfg.dr.randomize_dynamics:
            self.mass[i] = self.base_params.trunk_mass + rng.uniform(*self.cfg.dr.mass_offset_range)
            self.friction[i] = rng.uniform(*self.cfg.dr.friction_range)
        else:
            self.mass[i] = self.base_params.trunk_mass
            self.friction[i] = self.base_params.friction

    def set_commands(self, cmd) -> None:
        """Pin commands externally (evaluation profiles)."""
        self.cmd[:] = np.asarray(cmd, dtype=float)

    # ------------------------------------------------------------- observe

    def observe(self, noisy: bool | None = None) -> np.ndarray:
        """(n, 61) observations; sensor noise only in training mode."""
        gravity_b = quat.gravity_body(self.rot)
        obs = build_observation_arrays(
            self.cmd, self.angvel, gravity_b, self.q, self.qdot,
            self.contacts, self.prev_action, self.baseline[self.phase % self.period],
            self.nominal_q,
        )
        use_noise = self.train_mode and self.cfg.dr.add_noise if noisy is None else noisy
        if use_noise:
            from .randomization import add_sensor_noise

            for i in range(self.n):
                obs[i] = add_sensor_noise(obs[i], self.rngs[i], self.cfg.dr)
        return obs

    # ------------------------------------------------------------- stepping

    def step(self, actions: np.ndarray, curriculum: CurriculumState | None = None):
        """One 50 Hz policy step (4 physics substeps); returns rewards, dones, info.

        Resets finished envs in place: done flags mark transitions whose next
        observation comes from a fresh episode.
        """
        actions = np.asarray(actions, dtype=float)
        p = self.base_params

        # impulse perturbations on episode-time boundaries
        if self.train_mode and self.cfg.dr.apply_impulses and curriculum is not None:
            cap = min(curriculum.impulse_mag_cap, self.cfg.dr.impulse_mag_range[1])
            schedule = replace(curriculum, impulse_mag_cap=cap)
            for i in range(self.n):
                t_next = (self.ep_steps[i] + 1) * POLICY_DT
                dv = schedule_impulse(self.rngs[i], t_next, schedule, dt=POLICY_DT)
                if dv is not None:
                    self.linvel[i, 0] += dv[0]
                    self.linvel[i, 1] += dv[1]

        target = compose_action(self.baseline[self.phase % self.period], actions,
                                self.cfg.robot.residual_limit)
        filtered = self.cfg.robot.filter_alpha * target + (1.0 - self.cfg.robot.filter_alpha) * self.filter_mem
        self.filter_mem = filtered

        prev_qdot = self.qdot.copy()
        prev_contacts = self.contacts.copy()
        prev_air = self.air.copy()

        pos, rot, linvel, angvel = self.pos, self.rot, self.linvel, self.angvel
        q, qdot, air, ep_time = self.q, self.qdot, self.air, self.ep_time
        contacts = self.contacts
        for _ in range(self.substeps):
            pos, rot, linvel, angvel, q, qdot, contacts, air, ep_time = _step_core(
                pos, rot, linvel, angvel, q, qdot, air, ep_time,
                filtered, p, p.dt, mass=self.mass, friction=self.friction,
            )
        bad, worst = _check_divergence(pos, linvel, q, qdot, p.divergence_limit)
        if bad:
            per_env = np.max(np.abs(pos), axis=-1)
            idx = int(np.argmax(per_env))
            raise NumericalDivergence(
                f"state magnitude {worst:.3e} exceeds {p.divergence_limit:.1e}", env_index=idx
            )
        self.pos, self.rot, self.linvel, self.angvel = pos, rot, linvel, angvel
        self.q, self.qdot, self.air, self.ep_time = q, qdot, air, ep_time
        self.contacts = contacts
        self.phase = self.phase + self.substeps

        feet_body = forward_kinematics_all(self.q, self.geometry)
        desired = self.desired_feet[self.phase % self.period]
        terms = reward_terms_arrays(
            self.cmd, self.rot, self.linvel, self.angvel, self.pos[:, 2],
            self.q, self.qdot, prev_qdot, self.contacts, prev_contacts, prev_air,
            target, self.prev_target, feet_body, desired,
            self.cfg.reward.weights, self.cfg.reward.h_star, POLICY_DT,
        )
        rewards = np.zeros(self.n)
        for v in terms.values():
            rewards = rewards + v

        timeout = self.ep_time >= p.episode_limit - 0.5 * p.dt
        clearance = trunk_clearance(self.pos, self.rot, p)
        collided = clearance < p.collision_margin
        dones = timeout | collided

        self.prev_action = actions.copy()
        self.prev_target = target
        self.ep_steps = self.ep_steps + 1
        self.episode_return = self.episode_return + rewards

        info = {
            "terms": terms,
            "timeout": timeout.copy(),
            "collision": collided.copy(),
        }

        for i in np.nonzero(dones)[0]:
            self.finished_lengths.append(int(self.ep_steps[i]))
            self.finished_returns.append(float(self.episode_return[i]))
            self._reset_env(int(i))

        # command resampling on the 10 s grid for surviving envs
        interval = self.cfg.commands.resample_interval
        for i in range(self.n):
            if dones[i] or self.ep_steps[i] == 0:
                continue
            t = self.ep_steps[i] * POLICY_DT
            steps = t / interval
            if abs(steps - round(steps)) < 1e-9:
                self.cmd[i] = sample_command_values(self.rngs[i], self.cfg.commands.ranges)

        return rewards, dones.astype(float), info

    def drain_episode_stats(self):
        lengths, returns = self.finished_lengths, self.finished_returns
        self.finished_lengths, self.finished_returns = [], []
        return lengths, returns

    # ------------------------------------------------------------- snapshot

    _ARRAY_FIELDS = (
        "pos", "rot", "linvel", "angvel", "q", "qdot", "contacts", "air",
        "ep_time", "filter_mem", "phase", "ep_steps", "cmd", "mass",
        "friction", "prev_action", "prev_target", "episode_return",
    )

    def state_dict(self) -> dict:
        state = {name: getattr(self, name).copy() for name in self._ARRAY_FIELDS}
        state["rng_states"] = [rng.bit_generator.state for rng in self.rngs]
        return state

    def load_state_dict(self, state: dict) -> None:
        for name in self._ARRAY_FIELDS:
            getattr(self, name)[...] = state[name]
        for rng, s in zip(self.rngs, state["rng_states"]):
            rng.bit_generator.state = s
