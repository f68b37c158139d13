"""Hybrid-action actor: a factorized Gaussian torque head and a 3-way
categorical gear-shift head over a shared trunk, plus residual-action mixing
with a critic-loss gate and the state encodings for both agent variants.

The same machinery drives two agents: a plain one whose actions go straight
to the plant, and a residual one whose actions are added to the source
controller's output.  The residual agent sees the source actions as extra
state inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .nets import Mlp
from .powertrain import N_GEARS, PlantState
from .source import SourceAction

GEAR_CMDS = (-1, 0, 1)          # categorical index -> gear command
N_GEAR_CMDS = 3
HEAD_WIDTH = 2 + N_GEAR_CMDS    # torque mean, torque spread, 3 logits
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class HybridAction:
    torque: float   # N·m (residual or full, depending on the agent)
    gear_cmd: int   # -1, 0, +1

    def __post_init__(self):
        if self.gear_cmd not in GEAR_CMDS:
            raise ValueError(f"gear command {self.gear_cmd} not in {GEAR_CMDS}")


@dataclass(frozen=True)
class StateNorms:
    """Scales that bring state entries to O(1) for the networks."""

    speed: float = 30.0     # m/s
    accel: float = 2.0      # m/s^2
    torque: float = 1.0     # N·m, set from the powertrain's peak wheel torque

    def __post_init__(self):
        if any(not (n > 0.0) for n in (self.speed, self.accel, self.torque)):
            raise ValueError("state norms must be positive")


RL_STATE_DIM = 3 + N_GEARS
RPL_STATE_DIM = RL_STATE_DIM + 1 + N_GEAR_CMDS


def encode_state(plant: PlantState, a_des: float,
                 source: SourceAction | None, norms: StateNorms) -> np.ndarray:
    """Normalized feature vector; appends the source action in residual mode."""
    vec = np.zeros(RPL_STATE_DIM if source is not None else RL_STATE_DIM,
                   dtype=np.float32)
    vec[0] = plant.velocity / norms.speed
    vec[1] = plant.acceleration / norms.accel
    vec[2] = a_des / norms.accel
    vec[3 + plant.gear - 1] = 1.0
    if source is not None:
        vec[RL_STATE_DIM] = source.torque / norms.torque
        vec[RL_STATE_DIM + 1 + GEAR_CMDS.index(source.gear_cmd)] = 1.0
    return vec


@dataclass(frozen=True)
class HeadBounds:
    """Squashing ranges for the torque head."""

    torque_range: float  # mean squashed into [-range, +range]
    sigma_min: float
    sigma_max: float

    def __post_init__(self):
        if not 0.0 < self.sigma_min < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")
        if self.torque_range <= 0.0:
            raise ValueError("torque range must be positive")


class PolicyHeads:
    """Maps raw network outputs to (mean, sigma, gear probabilities).

    The mean is tanh-bounded, the spread sigmoid-bounded, and the gear
    logits go through a softmax.
    """

    def __init__(self, net: Mlp, bounds: HeadBounds):
        if net.sizes[-1] != HEAD_WIDTH:
            raise ValueError(f"policy net must have {HEAD_WIDTH} outputs")
        self.net = net
        self.bounds = bounds

    def __call__(self, states: np.ndarray, keep_cache: bool = False):
        raw, cache = self.net.forward_cached(np.atleast_2d(states),
                                             keep=keep_cache)
        b = self.bounds
        mu = b.torque_range * np.tanh(raw[:, 0])
        gate = 1.0 / (1.0 + np.exp(-raw[:, 1]))
        sigma = b.sigma_min + (b.sigma_max - b.sigma_min) * gate
        logits = raw[:, 2:]
        z = logits - logits.max(axis=1, keepdims=True)
        ez = np.exp(z)
        probs = ez / ez.sum(axis=1, keepdims=True)
        if keep_cache:
            return mu, sigma, probs, (cache, mu, gate)
        return mu, sigma, probs

    def head_gradients(self, head_cache, d_mu, d_sigma, d_logits):
        """Backprop loss gradients at (mu, sigma, logits) into net parameters."""
        cache, mu, gate = head_cache
        b = self.bounds
        n = mu.shape[0]
        grad_raw = np.empty((n, HEAD_WIDTH), dtype=self.net.dtype)
        # d mu / d raw0 = range * (1 - tanh^2) = range - mu^2 / range
        grad_raw[:, 0] = d_mu * (b.torque_range - mu * mu / b.torque_range)
        grad_raw[:, 1] = d_sigma * (b.sigma_max - b.sigma_min) * gate * (1.0 - gate)
        grad_raw[:, 2:] = d_logits
        return self.net.backward(cache, grad_raw)


def gaussian_logpdf(x, mu, sigma):
    z = (x - mu) / sigma
    return -0.5 * z * z - np.log(sigma) - LOG_SQRT_2PI


def policy_sample(state: np.ndarray, heads: PolicyHeads,
                  rng: np.random.Generator
                  ) -> tuple[HybridAction, float, float]:
    """Draw a hybrid action; returns it with the torque log-density and the
    gear probability used for off-policy corrections later.

    The torque draw is clipped to the head's range; the stored density is
    evaluated at the clipped value so behavior and target densities stay
    comparable.
    """
    mu, sigma, probs = heads(state)
    mu, sigma, probs = float(mu[0]), float(sigma[0]), probs[0]
    if not (math.isfinite(mu) and math.isfinite(sigma)):
        raise FloatingPointError("non-finite policy head outputs")
    r = heads.bounds.torque_range
    torque = float(np.clip(mu + sigma * rng.standard_normal(), -r, r))
    gear_idx = int(rng.choice(N_GEAR_CMDS, p=probs))
    logp_t = float(gaussian_logpdf(torque, mu, sigma))
    return (HybridAction(torque=torque, gear_cmd=GEAR_CMDS[gear_idx]),
            logp_t, float(probs[gear_idx]))


def policy_mode(state: np.ndarray, heads: PolicyHeads) -> HybridAction:
    """Highest-probability action: the torque mean and the argmax gear
    command, with exact ties broken toward holding, then upshifting."""
    mu, _, probs = heads(state)
    probs = probs[0]
    best = 1  # hold
    for idx in (2, 0):  # upshift, then downshift
        if probs[idx] > probs[best]:
            best = idx
    return HybridAction(torque=float(mu[0]), gear_cmd=GEAR_CMDS[best])


@dataclass(frozen=True)
class GateState:
    """Residual-activation gate: latches on once the critic-loss EMA drops
    below the threshold."""

    threshold: float
    ema_decay: float = 0.99
    loss_ema: float | None = None
    active: bool = False


def gate_update(gate: GateState, critic_loss: float) -> GateState:
    if critic_loss < 0.0 or not math.isfinite(critic_loss):
        raise ValueError(f"invalid critic loss {critic_loss}")
    if gate.loss_ema is None:
        ema = critic_loss
    else:
        ema = gate.ema_decay * gate.loss_ema + (1.0 - gate.ema_decay) * critic_loss
    active = gate.active or ema < gate.threshold
    return replace(gate, loss_ema=ema, active=active)


def mix_actions(source: SourceAction, residual: HybridAction,
                gate: GateState) -> HybridAction:
    """Source plus residual; the gear sum is clamped to one step.  Before the
    gate activates the residual is suppressed entirely."""
    if not gate.active:
        return HybridAction(torque=source.torque, gear_cmd=source.gear_cmd)
    gear = max(-1, min(1, source.gear_cmd + residual.gear_cmd))
    return HybridAction(torque=source.torque + residual.torque, gear_cmd=gear)
