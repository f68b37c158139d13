"""Episode simulation, the training loop, stochastic evaluation, and metrics.

One `Simulation` wires the plant, driver, source controller, and reward for a
config.  Episodes run the drive cycle at the control step: lead vehicle from
the cycle, IDM driver request, source actions, agent actions (sampled when
training, highest-probability when evaluating), plant step, reward.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import agent as agent_mod
from .agent import (GateState, HeadBounds, HybridAction, PolicyHeads,
                    StateNorms, encode_state, gate_update, mix_actions,
                    policy_mode, policy_sample)
from .config import RunConfig
from .cycles import (DriveCycle, NoisePolicy, bundled_cycle_path, load_cycle,
                     perturb_cycle)
from .datasets import load_powertrain
from .driver import CollisionError, IdmParams, LeadVehicle, desired_acceleration
from .mpo import Critic, KlBudget, LearnerConfig, MpoLearner, ReplayBuffer
from .nets import Mlp, load_checkpoint, save_checkpoint
from .powertrain import N_GEARS, PowertrainSpec, FLAT_ROAD, gear_feasible
from .powertrain import initial_state, power_reserve, step as plant_step
from .reward import RewardNorms, RewardWeights, reward as reward_fn
from .source import SourceAction, source_action

METERS_PER_MILE = 1609.344
ML_PER_GALLON = 3785.411784


class ZeroDistanceError(ValueError):
    """Episode covered no distance; MPG and travel time are undefined."""

LOG_FIELDS = ("time", "lead_speed", "gap", "velocity", "accel_des", "accel",
              "gear", "source_torque", "source_gear_cmd", "torque_cmd",
              "torque_applied", "fuel_rate", "reward")


@dataclass(frozen=True)
class Metrics:
    mpg: float
    accel_rmse: float
    shift_count: int
    travel_time: float
    fuel_used: float
    distance: float
    reward_sum: float

    def as_dict(self) -> dict:
        return {"mpg": self.mpg, "accel_rmse": self.accel_rmse,
                "shift_count": self.shift_count,
                "travel_time": self.travel_time, "fuel_used": self.fuel_used,
                "distance": self.distance, "reward_sum": self.reward_sum}


class Simulation:
    """Config-derived simulation context shared by every episode of a run."""

    def __init__(self, cfg: RunConfig, spec: PowertrainSpec | None = None):
        self.cfg = cfg
        self.spec = spec if spec is not None else load_powertrain(
            cfg.data_dir or None, mass=cfg.mass, frontal_area=cfg.frontal_area,
            drag_coeff=cfg.drag_coeff, rolling_coeff=cfg.rolling_coeff,
            wheel_radius=cfg.wheel_radius, air_density=cfg.air_density,
            gravity=cfg.gravity)
        self.road = FLAT_ROAD
        self.idm = IdmParams(desired_speed=cfg.desired_speed,
                             headway_time=cfg.headway_time,
                             max_accel=cfg.a_max,
                             comfort_decel=cfg.comfort_decel,
                             accel_exponent=cfg.accel_exponent,
                             jam_distance=cfg.jam_distance,
                             max_decel=cfg.max_decel)
        engine, trans = self.spec.engine, self.spec.transmission
        peak_engine_torque = float(engine.max_torque_curve.y.max())
        self.wheel_torque_max = peak_engine_torque * trans.overall_ratio(1) \
            * trans.driveline_efficiency
        self.fuel_rate_max = float(engine.fuel_map.rates.max())
        self.reward_weights = RewardWeights(cfg.w_accel, cfg.w_torque,
                                            cfg.w_fuel, cfg.w_shift,
                                            cfg.w_reserve)
        self.reward_norms = RewardNorms(accel_error_max=cfg.a_max,
                                        torque_max=self.wheel_torque_max,
                                        fuel_rate_max=self.fuel_rate_max)
        self.state_norms = StateNorms(speed=cfg.desired_speed,
                                      accel=cfg.a_max,
                                      torque=self.wheel_torque_max)

    def torque_range(self) -> float:
        if self.cfg.agent == "rpl":
            return self.cfg.residual_torque_frac * self.wheel_torque_max
        return self.wheel_torque_max

    def state_dim(self) -> int:
        return (agent_mod.RPL_STATE_DIM if self.cfg.agent == "rpl"
                else agent_mod.RL_STATE_DIM)

    def head_bounds(self) -> HeadBounds:
        r = self.torque_range()
        return HeadBounds(torque_range=r,
                          sigma_min=self.cfg.sigma_min_frac * r,
                          sigma_max=self.cfg.sigma_max_frac * r)

    def build_actor(self, rng: np.random.Generator) -> PolicyHeads:
        sizes = [self.state_dim()] + [self.cfg.hidden_units] * \
            self.cfg.hidden_layers + [agent_mod.HEAD_WIDTH]
        return PolicyHeads(Mlp(sizes, self.cfg.activation, rng),
                           self.head_bounds())

    def build_critic(self, rng: np.random.Generator) -> Critic:
        sizes = [self.state_dim() + 1] + [self.cfg.hidden_units] * \
            self.cfg.hidden_layers + [agent_mod.N_GEAR_CMDS]
        return Critic(Mlp(sizes, self.cfg.activation, rng), self.torque_range())

    def start_gear(self, velocity: float) -> int:
        for gear in range(N_GEARS, 0, -1):
            if gear_feasible(velocity, gear, self.spec):
                return gear
        return 1


def run_episode(sim: Simulation, cycle: DriveCycle, stochastic: bool,
                heads: PolicyHeads | None = None,
                gate: GateState | None = None,
                act_rng: np.random.Generator | None = None,
                buffer: ReplayBuffer | None = None,
                on_step=None) -> tuple[Metrics, dict[str, np.ndarray]]:
    """Simulate one full cycle; returns metrics and the per-step log.

    In stochastic mode actions are sampled and (for learning agents)
    transitions are pushed to the buffer; otherwise the mode action is used
    and the buffer is left untouched.  Raises CollisionError when the gap
    closes; the caller decides how to account for the aborted episode.
    """
    cfg = sim.cfg
    kind = cfg.agent
    if kind != "baseline" and heads is None:
        raise ValueError(f"agent kind {kind!r} needs policy heads")
    lead = LeadVehicle(cycle)
    v0 = cycle.speeds[0]
    gap0 = sim.idm.jam_distance + v0 * sim.idm.headway_time
    plant = initial_state(sim.spec, velocity=float(v0),
                          gear=sim.start_gear(float(v0)))
    n_steps = int(round(cycle.duration / cfg.dt))
    log = {f: np.empty(n_steps) for f in LOG_FIELDS}
    push = buffer is not None and stochastic and kind != "baseline"
    pending = None
    reward_sum = 0.0

    def encode(state, a_des, src):
        return encode_state(state, a_des, src if kind == "rpl" else None,
                            sim.state_norms)

    for k in range(n_steps):
        t = k * cfg.dt
        lead_state = lead.at(t)
        gap = lead_state.position + gap0 - plant.position
        a_des = desired_acceleration(plant.velocity, gap, lead_state.velocity,
                                     sim.idm)
        src = source_action(a_des, plant, sim.spec, sim.road, cfg.shift_cost)

        if kind == "baseline":
            applied = HybridAction(torque=src.torque, gear_cmd=src.gear_cmd)
            enc = None
        else:
            enc = encode(plant, a_des, src)
            if stochastic:
                act, logp_t, prob_g = policy_sample(enc, heads, act_rng)
            else:
                act = policy_mode(enc, heads)
            applied = act if kind == "rl" else mix_actions(src, act, gate)

        if push and pending is not None:
            buffer.push(*pending, next_state=enc, done=False)
            pending = None

        prev_gear = plant.gear
        plant, out = plant_step(plant, applied.torque, applied.gear_cmd,
                                cfg.dt, sim.spec, sim.road)
        delivered = max(0.0, out.wheel_torque) * plant.velocity \
            / sim.spec.vehicle.wheel_radius
        reserve, reserve_max = power_reserve(plant.velocity, plant.gear,
                                             delivered, sim.spec)
        torque_term = out.wheel_torque if cfg.torque_term == "applied" \
            else applied.torque
        r = reward_fn(a_des, out.accel, torque_term, out.fuel_rate, prev_gear,
                      plant.gear, reserve, reserve_max, sim.reward_weights,
                      sim.reward_norms)
        reward_sum += r
        if push:
            pending = (enc, act.torque, act.gear_cmd, logp_t, prob_g, r)

        row = (t, lead_state.velocity, gap, plant.velocity, a_des, out.accel,
               plant.gear, src.torque, src.gear_cmd, applied.torque,
               out.wheel_torque, out.fuel_rate, r)
        for f, val in zip(LOG_FIELDS, row):
            log[f][k] = val

        if on_step is not None:
            on_step()

    if push and pending is not None:
        final_lead = lead.at(cycle.duration)
        final_gap = final_lead.position + gap0 - plant.position
        final_a_des = desired_acceleration(plant.velocity, final_gap,
                                           final_lead.velocity, sim.idm)
        final_src = source_action(final_a_des, plant, sim.spec, sim.road,
                                  cfg.shift_cost)
        buffer.push(*pending, next_state=encode(plant, final_a_des, final_src),
                    done=True)

    lead_distance = float(cycle.cumulative_positions()[-1])
    metrics = compute_metrics(log, plant.fuel_used, plant.position,
                              cycle.duration, lead_distance, cfg.fuel_density)
    return metrics, log


def compute_metrics(log: dict[str, np.ndarray], fuel_used: float,
                    distance: float, duration: float, lead_distance: float,
                    fuel_density: float) -> Metrics:
    """Summary metrics of one episode log.

    MPG converts grams of diesel through the configured density; travel time
    is the cycle duration scaled by the lead/ego distance ratio, i.e. the
    time needed to cover the route at the achieved average speed (equal to
    the duration when the ego keeps pace with the lead).
    """
    if len(log["time"]) == 0:
        raise ValueError("empty step log")
    if distance <= 0.0:
        raise ZeroDistanceError("no distance covered; MPG undefined")
    gallons = fuel_used / fuel_density / ML_PER_GALLON
    accel_err = log["accel_des"] - log["accel"]
    gears = log["gear"]
    shifts = int(np.abs(np.diff(gears)).sum())
    return Metrics(
        mpg=(distance / METERS_PER_MILE) / gallons,
        accel_rmse=float(np.sqrt(np.mean(accel_err ** 2))),
        shift_count=shifts,
        travel_time=duration * lead_distance / distance,
        fuel_used=float(fuel_used),
        distance=float(distance),
        reward_sum=float(log["reward"].sum()),
    )


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(path: Path, header: list[str], rows: list[tuple]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def write_step_log(path: Path, log: dict[str, np.ndarray]) -> None:
    rows = list(zip(*(log[f] for f in LOG_FIELDS)))
    write_csv(path, list(LOG_FIELDS), rows)


class Trainer:
    """Training orchestration for one (agent, seed) run."""

    def __init__(self, cfg: RunConfig, out_dir: Path):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.sim = Simulation(cfg)
        cycle_path = cfg.cycle or bundled_cycle_path()
        self.base_cycle = load_cycle(cycle_path)
        seq = np.random.SeedSequence(cfg.seed)
        noise_ss, act_ss, learn_ss, actor_ss, critic_ss = seq.spawn(5)
        self.noise_rng = np.random.default_rng(noise_ss)
        self.act_rng = np.random.default_rng(act_ss)
        self.noise = NoisePolicy(cfg.noise_amplitude, cfg.noise_period)

        self.heads = None
        self.learner = None
        self.gate = GateState(threshold=cfg.beta, ema_decay=cfg.gate_ema_decay)
        if cfg.agent != "baseline":
            self.heads = self.sim.build_actor(np.random.default_rng(actor_ss))
            critic = self.sim.build_critic(np.random.default_rng(critic_ss))
            buffer = ReplayBuffer(self.sim.state_dim(), cfg.buffer_capacity)
            lcfg = LearnerConfig(
                gamma=cfg.gamma, lam=cfg.lam, batch_size=cfg.batch_size,
                segment_len=cfg.retrace_steps,
                action_samples=cfg.action_samples,
                retrace_torque_samples=cfg.retrace_torque_samples,
                critic_updates=cfg.critic_updates,
                policy_updates=cfg.policy_updates,
                mstep_iterations=cfg.mstep_iterations,
                target_refresh=cfg.target_refresh,
                eps_e_step=cfg.eps_e_step,
                budget=KlBudget(e_step=cfg.eps_e_step, mean=cfg.eps_mu,
                                sigma=cfg.eps_sigma, discrete=cfg.eps_disc))
            self.learner = MpoLearner(self.heads, critic, buffer, lcfg,
                                      cfg.actor_lr, cfg.critic_lr,
                                      np.random.default_rng(learn_ss))
        self.global_step = 0
        self.last_critic_loss = math.nan
        self.curve_rows: list[tuple] = []

        baseline_cfg = cfg.replace(agent="baseline")
        baseline_sim = Simulation(baseline_cfg, spec=self.sim.spec)
        self.baseline_metrics, _ = run_episode(baseline_sim, self.base_cycle,
                                               stochastic=False)

    def _on_step(self):
        self.global_step += 1
        if (self.learner is None
                or self.global_step % self.cfg.learn_every != 0
                or not self.learner.buffer.ready(self.cfg.retrace_steps)):
            return
        info = self.learner.update()
        if not math.isfinite(info.get("critic_loss", 0.0)):
            raise FloatingPointError(f"learner diverged at step "
                                     f"{self.global_step}: {info}")
        self.last_critic_loss = info["critic_loss"]
        if self.cfg.agent == "rpl":
            self.gate = gate_update(self.gate, info["critic_loss"])

    def run_cycle(self, cycle_index: int) -> dict:
        """One perturbed training episode plus one clean greedy evaluation."""
        noisy = perturb_cycle(self.base_cycle, self.noise, self.noise_rng)
        collided = False
        train_log = None
        buffer = self.learner.buffer if self.learner else None
        try:
            _, train_log = run_episode(self.sim, noisy, stochastic=True,
                                       heads=self.heads, gate=self.gate,
                                       act_rng=self.act_rng, buffer=buffer,
                                       on_step=self._on_step)
        except CollisionError:
            collided = True
        except ZeroDistanceError:
            pass  # agent never moved; the experience is still stored
        if buffer is not None:
            buffer.end_episode()

        try:
            metrics, log = run_episode(self.sim, self.base_cycle,
                                       stochastic=False, heads=self.heads,
                                       gate=self.gate)
        except (CollisionError, ZeroDistanceError):
            # degenerate policy this early; record a zero-economy row
            metrics = Metrics(mpg=0.0, accel_rmse=math.nan, shift_count=0,
                              travel_time=math.inf, fuel_used=0.0,
                              distance=0.0, reward_sum=-math.inf)
            log = None
        self.curve_rows.append((
            cycle_index, metrics.mpg, self.baseline_metrics.mpg,
            metrics.accel_rmse, metrics.shift_count, metrics.travel_time,
            metrics.fuel_used, metrics.distance, metrics.reward_sum,
            self.gate.active, self.last_critic_loss, collided))
        return {"metrics": metrics, "log": log, "train_log": train_log,
                "collided": collided}

    def checkpoint_meta(self, cycle_index: int) -> dict:
        return {"agent": self.cfg.agent, "cycle": cycle_index,
                "gate_active": int(self.gate.active),
                "gate_loss_ema": float(self.gate.loss_ema or 0.0),
                "torque_range": self.sim.torque_range(),
                "state_dim": self.sim.state_dim()}

    def save(self, path: Path, cycle_index: int) -> None:
        nets = {}
        if self.heads is not None:
            nets["actor"] = self.heads.net
            nets["critic"] = self.learner.critic.net
        save_checkpoint(path, nets, self.checkpoint_meta(cycle_index))

    def train(self) -> Path:
        cfg = self.cfg
        final_log = None
        for i in range(cfg.train_cycles):
            result = self.run_cycle(i)
            final_log = result["log"]
            if (i + 1) % cfg.checkpoint_every == 0:
                self.save(self.out / f"ckpt_cycle_{i + 1:04d}.npz", i + 1)
        self.save(self.out / "ckpt_final.npz", cfg.train_cycles)
        header = ["cycle", "mpg", "baseline_mpg", "accel_rmse", "shift_count",
                  "travel_time", "fuel_used", "distance", "reward_sum",
                  "gate_active", "critic_loss", "collided"]
        write_csv(self.out / "learning_curve.csv", header, self.curve_rows)
        if final_log is not None:
            write_step_log(self.out / "steps.csv", final_log)
        return self.out / "ckpt_final.npz"


def train(cfg: RunConfig, out_dir: Path) -> Path:
    """Train per the config; returns the final checkpoint path."""
    return Trainer(cfg, out_dir).train()


def load_policy(checkpoint: Path, sim: Simulation
                ) -> tuple[PolicyHeads | None, GateState, dict]:
    """Restore the actor and gate state of a finished run."""
    nets, meta = load_checkpoint(checkpoint)
    agent_kind = str(meta.get("agent", "baseline"))
    if agent_kind != sim.cfg.agent:
        raise ValueError(f"checkpoint is for agent {agent_kind!r}, "
                         f"config says {sim.cfg.agent!r}")
    gate = GateState(threshold=sim.cfg.beta, ema_decay=sim.cfg.gate_ema_decay,
                     loss_ema=float(meta.get("gate_loss_ema", 0.0)),
                     active=bool(meta.get("gate_active", 0)))
    if agent_kind == "baseline":
        return None, gate, meta
    ckpt_range = float(meta.get("torque_range", sim.torque_range()))
    if not math.isclose(ckpt_range, sim.torque_range(), rel_tol=1e-9):
        raise ValueError(f"checkpoint torque range {ckpt_range} does not "
                         f"match config-derived {sim.torque_range()}")
    heads = PolicyHeads(nets["actor"], sim.head_bounds())
    return heads, gate, meta


def evaluate(cfg: RunConfig, checkpoint: Path, cycle_paths: list,
             reps: int, out_dir: Path) -> dict:
    """Noisy greedy evaluation: `reps` episodes per cycle, reduced to
    mean/std of the headline metrics; collided episodes are excluded and
    counted.  Noise streams depend only on (seed, cycle, rep), so different
    agents face identical traffic."""
    sim = Simulation(cfg)
    heads, gate, _ = load_policy(Path(checkpoint), sim)
    noise = NoisePolicy(cfg.noise_amplitude, cfg.noise_period)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    summary = {"agent": cfg.agent, "seed": cfg.seed, "reps": reps,
               "cycles": []}
    for ci, cycle_path in enumerate(cycle_paths):
        cycle = load_cycle(cycle_path)
        per_rep: list[Metrics] = []
        collisions = 0
        for rep in range(reps):
            rng = np.random.default_rng(
                np.random.SeedSequence([cfg.seed, ci, rep]))
            noisy = perturb_cycle(cycle, noise, rng)
            try:
                metrics, _ = run_episode(sim, noisy, stochastic=False,
                                         heads=heads, gate=gate)
            except (CollisionError, ZeroDistanceError):
                collisions += 1
                continue
            per_rep.append(metrics)
        row = {"cycle": cycle.name, "collisions": collisions,
               "episodes": len(per_rep)}
        for field in ("mpg", "accel_rmse", "shift_count", "travel_time",
                      "fuel_used", "distance", "reward_sum"):
            vals = np.array([getattr(m, field) for m in per_rep], dtype=float)
            row[f"{field}_mean"] = float(vals.mean()) if vals.size else math.nan
            row[f"{field}_std"] = float(vals.std()) if vals.size else math.nan
        summary["cycles"].append(row)

    (out / "metrics.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return summary
