"""Off-policy learner: replay buffer with contiguous trajectory windows,
Retrace critic targets, and the two-step policy improvement (non-parametric
reweighting under a KL bound, then a trust-region parametric fit) with the
KL factorized across the Gaussian torque head and the categorical gear head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .agent import (GEAR_CMDS, N_GEAR_CMDS, PolicyHeads, gaussian_logpdf)
from .nets import AdamState, Mlp, adam_step


class BufferNotReady(RuntimeError):
    """Not enough stored experience to sample a batch."""


@dataclass(frozen=True)
class KlBudget:
    """Trust-region bounds: the reweighting step bound and the per-head
    parametric-fit bounds."""

    e_step: float = 0.1
    mean: float = 0.1
    sigma: float = 0.001
    discrete: float = 0.1

    def __post_init__(self):
        if any(not (b > 0.0) for b in (self.e_step, self.mean, self.sigma,
                                       self.discrete)):
            raise ValueError("KL budgets must be positive")


@dataclass
class DualVars:
    """Temperature of the reweighting dual and the trust-region multipliers."""

    eta: float = 1.0
    alpha_mean: float = 0.0
    alpha_sigma: float = 0.0
    alpha_disc: float = 0.0


@dataclass
class Segment:
    """A contiguous slice of one episode (batched: leading dim is segments)."""

    states: np.ndarray       # [B, L, d]
    torques: np.ndarray      # [B, L]
    gear_idx: np.ndarray     # [B, L] indices into GEAR_CMDS
    logp_torque: np.ndarray  # [B, L] behavior log-density of the torque draw
    prob_gear: np.ndarray    # [B, L] behavior probability of the gear draw
    rewards: np.ndarray      # [B, L]
    next_states: np.ndarray  # [B, L, d]
    dones: np.ndarray        # [B, L] bool


class ReplayBuffer:
    """FIFO experience store organized by episode.

    Windows of exactly `segment_len` contiguous steps are sampled uniformly
    over all (episode, start) pairs; windows never span episode boundaries,
    so only a window's last element can be terminal.
    """

    def __init__(self, state_dim: int, capacity: int = 2 ** 20):
        self.state_dim = state_dim
        self.capacity = capacity
        self._episodes: list[dict[str, np.ndarray]] = []
        self._current: list[tuple] = []
        self._stored = 0
        self._win_cum: np.ndarray | None = None  # cumulative window counts
        self._win_len = 0

    def __len__(self) -> int:
        return self._stored + len(self._current)

    def push(self, state, torque, gear_cmd, logp_torque, prob_gear, reward,
             next_state, done) -> None:
        if not 0.0 < prob_gear <= 1.0:
            raise ValueError(f"gear probability {prob_gear} outside (0, 1]")
        if not all(map(math.isfinite, (torque, logp_torque, reward))):
            raise ValueError("non-finite transition field")
        self._current.append((np.asarray(state, dtype=np.float32),
                              float(torque), GEAR_CMDS.index(int(gear_cmd)),
                              float(logp_torque), float(prob_gear),
                              float(reward),
                              np.asarray(next_state, dtype=np.float32),
                              bool(done)))
        if done:
            self.end_episode()

    def end_episode(self) -> None:
        if not self._current:
            return
        rows = self._current
        self._current = []
        episode = {
            "states": np.stack([r[0] for r in rows]),
            "torques": np.array([r[1] for r in rows], dtype=np.float32),
            "gear_idx": np.array([r[2] for r in rows], dtype=np.int64),
            "logp_torque": np.array([r[3] for r in rows], dtype=np.float32),
            "prob_gear": np.array([r[4] for r in rows], dtype=np.float32),
            "rewards": np.array([r[5] for r in rows], dtype=np.float32),
            "next_states": np.stack([r[6] for r in rows]),
            "dones": np.array([r[7] for r in rows], dtype=bool),
        }
        self._episodes.append(episode)
        self._stored += len(rows)
        while self._stored > self.capacity and len(self._episodes) > 1:
            evicted = self._episodes.pop(0)
            self._stored -= evicted["rewards"].size
        self._win_cum = None

    def _window_index(self, segment_len: int) -> np.ndarray:
        if self._win_cum is None or self._win_len != segment_len:
            counts = [max(0, ep["rewards"].size - segment_len + 1)
                      for ep in self._episodes]
            self._win_cum = np.cumsum([0] + counts)
            self._win_len = segment_len
        return self._win_cum

    def ready(self, segment_len: int) -> bool:
        return int(self._window_index(segment_len)[-1]) > 0

    def sample_segments(self, batch_size: int, segment_len: int,
                        rng: np.random.Generator) -> Segment:
        """Sample ~batch_size transitions as full-length windows, uniformly
        over all (episode, start) pairs, with replacement."""
        cum = self._window_index(segment_len)
        total = int(cum[-1])
        if total == 0:
            raise BufferNotReady(
                f"no {segment_len}-step window available "
                f"({len(self)} transitions stored)")
        n_seg = max(1, int(math.ceil(batch_size / segment_len)))
        picks = rng.integers(0, total, size=n_seg)
        ep_ids = np.searchsorted(cum, picks, side="right") - 1
        fields = ("states", "torques", "gear_idx", "logp_torque", "prob_gear",
                  "rewards", "next_states", "dones")
        cols = {f: [] for f in fields}
        for p, ep_i in zip(picks, ep_ids):
            ep = self._episodes[int(ep_i)]
            s = int(p - cum[ep_i])
            for f in fields:
                cols[f].append(ep[f][s:s + segment_len])
        return Segment(**{f: np.stack(cols[f]) for f in fields})


class Critic:
    """Q network over (state, scaled torque) emitting one value per gear
    command, so expectations over the discrete head are exact."""

    def __init__(self, net: Mlp, torque_scale: float):
        if net.sizes[-1] != N_GEAR_CMDS:
            raise ValueError(f"critic must emit {N_GEAR_CMDS} values")
        self.net = net
        self.torque_scale = float(torque_scale)

    def inputs(self, states: np.ndarray, torques: np.ndarray) -> np.ndarray:
        t = (np.asarray(torques, dtype=np.float32) / self.torque_scale)
        return np.concatenate([states, t.reshape(-1, 1)], axis=1)

    def q_all(self, states: np.ndarray, torques: np.ndarray) -> np.ndarray:
        return self.net.forward(self.inputs(states, torques))

    def q(self, states: np.ndarray, torques: np.ndarray,
          gear_idx: np.ndarray) -> np.ndarray:
        q_all = self.q_all(states, torques)
        return q_all[np.arange(q_all.shape[0]), gear_idx]

    def snapshot(self) -> "Critic":
        return Critic(self.net.snapshot(), self.torque_scale)


def expected_q(critic: Critic, heads: PolicyHeads, states: np.ndarray,
               n_torque_samples: int, rng: np.random.Generator) -> np.ndarray:
    """E_a[Q(s, a)] under the policy: Monte-Carlo over the torque head,
    exact sum over the gear head."""
    mu, sigma, probs = heads(states)
    n, m = states.shape[0], n_torque_samples
    z = rng.standard_normal((n, m), dtype=np.float32)
    draws = mu[:, None] + sigma[:, None] * z
    r = heads.bounds.torque_range
    np.clip(draws, -r, r, out=draws)
    rep_states = np.repeat(states, m, axis=0)
    q_all = critic.q_all(rep_states, draws.reshape(-1))      # [n*m, 3]
    q_mean = q_all.reshape(n, m, N_GEAR_CMDS).mean(axis=1)   # [n, 3]
    return np.einsum("ng,ng->n", q_mean, probs.astype(q_mean.dtype))


def retrace_targets(segment: Segment, critic: Critic, target_critic: Critic,
                    heads: PolicyHeads, gamma: float, lam: float,
                    n_torque_samples: int, rng: np.random.Generator
                    ) -> np.ndarray:
    """Per-step off-policy Q targets over trajectory windows.

    target_t = Q'(s_t, a_t) + sum_{j>=t} gamma^{j-t} (prod_{i=t+1..j} c_i) d_j
    with d_j the one-step TD residual under the bootstrap critic Q' and
    c_i = lam * min(1, pi(a_i|s_i) / b(a_i|s_i)) the truncated importance
    ratio of the hybrid action.  Terminal steps bootstrap to zero.
    """
    if segment.rewards.size == 0:
        raise ValueError("empty segment batch")
    if not (0.0 < gamma < 1.0 and 0.0 <= lam <= 1.0):
        raise ValueError(f"bad gamma/lambda: {gamma}, {lam}")
    b, length, dim = segment.states.shape
    flat_s = segment.states.reshape(-1, dim)
    flat_next = segment.next_states.reshape(-1, dim)
    flat_t = segment.torques.reshape(-1)
    flat_g = segment.gear_idx.reshape(-1)

    q_sa = target_critic.q(flat_s, flat_t, flat_g).reshape(b, length)
    eq_next = expected_q(target_critic, heads, flat_next, n_torque_samples,
                         rng).reshape(b, length)
    eq_next = np.where(segment.dones, 0.0, eq_next)

    mu, sigma, probs = heads(flat_s)
    logp_t = gaussian_logpdf(flat_t, mu, sigma)
    p_gear = probs[np.arange(flat_g.size), flat_g]
    log_ratio = (logp_t - segment.logp_torque.reshape(-1)
                 + np.log(p_gear) - np.log(segment.prob_gear.reshape(-1)))
    ratio = np.exp(np.minimum(log_ratio, 0.0))  # min(1, pi/b)
    c = (lam * ratio).reshape(b, length)

    delta = segment.rewards + gamma * eq_next - q_sa
    corr = np.zeros(b, dtype=delta.dtype)
    targets = np.empty_like(delta)
    for j in range(length - 1, -1, -1):
        corr = delta[:, j] + gamma * (c[:, j + 1] * corr if j + 1 < length
                                      else 0.0)
        targets[:, j] = q_sa[:, j] + corr
    return targets


def critic_update(segment: Segment, critic: Critic, target_critic: Critic,
                  heads: PolicyHeads, opt: AdamState, gamma: float, lam: float,
                  n_torque_samples: int, rng: np.random.Generator) -> float:
    """One squared-error gradient step of the critic toward the Retrace
    targets; returns the pre-step loss."""
    targets = retrace_targets(segment, critic, target_critic, heads, gamma,
                              lam, n_torque_samples, rng)
    b, length, dim = segment.states.shape
    flat_s = segment.states.reshape(-1, dim)
    flat_t = segment.torques.reshape(-1)
    flat_g = segment.gear_idx.reshape(-1)

    x = critic.inputs(flat_s, flat_t)
    q_all, cache = critic.net.forward_cached(x)
    rows = np.arange(flat_g.size)
    err = q_all[rows, flat_g] - targets.reshape(-1)
    loss = float(np.mean(err ** 2))
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite critic loss")
    grad_out = np.zeros_like(q_all)
    grad_out[rows, flat_g] = 2.0 * err / err.size
    grads = critic.net.backward(cache, grad_out)
    adam_step(critic.net.params, grads, opt)
    return loss


def dual_objective(q_samples: np.ndarray, eps: float, eta) -> np.ndarray:
    """Dual of the KL-bounded reweighting problem, max-stabilized:
    g(eta) = eta*eps + mean_s[max_j Q] + eta*mean_s[log mean_j exp((Q-max)/eta)].
    Convex in eta; vectorized over eta values."""
    eta = np.atleast_1d(np.asarray(eta, dtype=np.float64))
    q = q_samples.astype(np.float64)
    q_max = q.max(axis=1, keepdims=True)
    z = (q - q_max)[None, :, :] / eta[:, None, None]
    lse = np.log(np.mean(np.exp(z), axis=2))
    return eta * eps + float(q_max.mean()) + eta * np.mean(lse, axis=1)


def solve_temperature(q_samples: np.ndarray, eps: float,
                      lo: float = 1e-6, hi: float = 1e3,
                      tol: float = 1e-9) -> float:
    """Golden-section minimization of the dual on [lo, hi]."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    gc = float(dual_objective(q_samples, eps, c)[0])
    gd = float(dual_objective(q_samples, eps, d)[0])
    while b - a > tol:
        if gc < gd:
            b, d, gd = d, c, gc
            c = b - inv_phi * (b - a)
            gc = float(dual_objective(q_samples, eps, c)[0])
        else:
            a, c, gc = c, d, gd
            d = a + inv_phi * (b - a)
            gd = float(dual_objective(q_samples, eps, d)[0])
    eta = 0.5 * (a + b)
    if not math.isfinite(eta) or eta <= 0.0:
        raise FloatingPointError(f"temperature search failed on [{lo}, {hi}]")
    return eta


def e_step_weights(q_samples: np.ndarray, eps: float,
                   eta: float | None = None) -> tuple[np.ndarray, float]:
    """Per-state sample weights q_j ∝ exp(Q_j / eta), eta from the dual."""
    if eta is None:
        eta = solve_temperature(q_samples, eps)
    z = (q_samples - q_samples.max(axis=1, keepdims=True)) / eta
    w = np.exp(z)
    w /= w.sum(axis=1, keepdims=True)
    return w, eta


def e_step(states: np.ndarray, heads: PolicyHeads, critic: Critic,
           n_samples: int, eps: float, rng: np.random.Generator):
    """Sample actions from the current policy and reweight them toward
    higher Q under the KL-bounded dual.

    Returns (torques [B,M], gear_idx [B,M], weights [B,M], anchor, eta) where
    anchor carries the sampling policy's head values for the fit step.
    """
    if n_samples < 2:
        raise ValueError("need at least two action samples per state")
    mu, sigma, probs = heads(states)
    n = states.shape[0]
    z = rng.standard_normal((n, n_samples), dtype=np.float32)
    torques = mu[:, None] + sigma[:, None] * z
    r = heads.bounds.torque_range
    np.clip(torques, -r, r, out=torques)
    u = rng.random((n, n_samples))
    gear_idx = (u[:, :, None] > np.cumsum(probs, axis=1)[:, None, :]).sum(axis=2)
    np.minimum(gear_idx, N_GEAR_CMDS - 1, out=gear_idx)  # roundoff guard

    rep = np.repeat(states, n_samples, axis=0)
    q_all = critic.q_all(rep, torques.reshape(-1))
    q = q_all[np.arange(q_all.shape[0]),
              gear_idx.reshape(-1)].reshape(n, n_samples)
    weights, eta = e_step_weights(q, eps)
    anchor = (mu, sigma, probs)
    return torques, gear_idx, weights, anchor, eta


def _categorical_kl(p_ref: np.ndarray, p: np.ndarray) -> np.ndarray:
    return np.sum(p_ref * (np.log(p_ref) - np.log(p)), axis=1)


def m_step(states: np.ndarray, torques: np.ndarray, gear_idx: np.ndarray,
           weights: np.ndarray, heads: PolicyHeads, anchor, opt: AdamState,
           budget: KlBudget, duals: DualVars, iterations: int = 5,
           alpha_lr: tuple[float, float, float] = (1.0, 100.0, 1.0),
           alpha_max: float = 100.0) -> dict:
    """Fit the policy to the reweighted samples under decoupled trust regions.

    Maximizes the weighted log-likelihood with Lagrangian penalties keeping
    the Gaussian mean and spread and the categorical head each within their
    KL budget of the sampling policy; the multipliers follow dual ascent.
    """
    mu_k, sigma_k, probs_k = anchor
    n, m = weights.shape
    onehot = np.eye(N_GEAR_CMDS, dtype=np.float32)[gear_idx]  # [n, m, 3]
    kls = {}
    for _ in range(iterations):
        mu, sigma, probs, cache = heads(states, keep_cache=True)

        # weighted log-likelihood gradients at the head outputs
        diff = torques - mu[:, None]
        inv_var = 1.0 / (sigma * sigma)
        d_mu = np.sum(weights * diff, axis=1) * inv_var / n
        d_sigma = np.sum(weights * (diff * diff), axis=1) / (sigma ** 3) / n \
            - np.sum(weights, axis=1) / sigma / n
        d_logits = (np.einsum("nm,nmg->ng", weights, onehot)
                    - weights.sum(axis=1, keepdims=True) * probs) / n

        kl_mean = float(np.mean((mu - mu_k) ** 2 * 0.5 / (sigma_k * sigma_k)))
        kl_sigma = float(np.mean(np.log(sigma / sigma_k)
                                 + (sigma_k * sigma_k) / (2.0 * sigma * sigma)
                                 - 0.5))
        kl_disc = float(np.mean(_categorical_kl(probs_k, probs)))
        if not all(map(math.isfinite, (kl_mean, kl_sigma, kl_disc))):
            raise FloatingPointError("non-finite policy KL")

        # loss = -loglik + sum alpha * KL  (gradients at heads, then trunk)
        g_mu = -d_mu + duals.alpha_mean * (mu - mu_k) / (sigma_k * sigma_k) / n
        g_sigma = -d_sigma + duals.alpha_sigma * (
            1.0 / sigma - (sigma_k * sigma_k) / sigma ** 3) / n
        g_logits = -d_logits + duals.alpha_disc * (probs - probs_k) / n

        grads = heads.head_gradients(cache, g_mu.astype(np.float32),
                                     g_sigma.astype(np.float32),
                                     g_logits.astype(np.float32))
        adam_step(heads.net.params, grads, opt)

        duals.alpha_mean = float(np.clip(
            duals.alpha_mean + alpha_lr[0] * (kl_mean - budget.mean),
            0.0, alpha_max))
        duals.alpha_sigma = float(np.clip(
            duals.alpha_sigma + alpha_lr[1] * (kl_sigma - budget.sigma),
            0.0, alpha_max))
        duals.alpha_disc = float(np.clip(
            duals.alpha_disc + alpha_lr[2] * (kl_disc - budget.discrete),
            0.0, alpha_max))
        kls = {"kl_mean": kl_mean, "kl_sigma": kl_sigma, "kl_disc": kl_disc}
    return kls


@dataclass
class LearnerConfig:
    gamma: float = 0.99
    lam: float = 0.90
    batch_size: int = 3072
    segment_len: int = 15
    action_samples: int = 40
    retrace_torque_samples: int = 8
    critic_updates: int = 1
    policy_updates: int = 1
    mstep_iterations: int = 5
    target_refresh: int = 200
    eps_e_step: float = 0.1
    budget: KlBudget = field(default_factory=KlBudget)


class MpoLearner:
    """Owns the critic pair, the policy optimizer state, and the buffer;
    one `update` call is one learning trigger."""

    def __init__(self, heads: PolicyHeads, critic: Critic, buffer: ReplayBuffer,
                 cfg: LearnerConfig, actor_lr: float, critic_lr: float,
                 rng: np.random.Generator):
        self.heads = heads
        self.critic = critic
        self.target_critic = critic.snapshot()
        self.buffer = buffer
        self.cfg = cfg
        self.rng = rng
        self.actor_opt = AdamState.for_params(heads.net.params, actor_lr)
        self.critic_opt = AdamState.for_params(critic.net.params, critic_lr)
        self.duals = DualVars()
        self.critic_updates_done = 0

    def update(self) -> dict:
        """Run the configured critic and policy updates on fresh batches."""
        cfg = self.cfg
        info = {}
        for _ in range(cfg.critic_updates):
            seg = self.buffer.sample_segments(cfg.batch_size, cfg.segment_len,
                                              self.rng)
            loss = critic_update(seg, self.critic, self.target_critic,
                                 self.heads, self.critic_opt, cfg.gamma,
                                 cfg.lam, cfg.retrace_torque_samples, self.rng)
            info["critic_loss"] = loss
            self.critic_updates_done += 1
            if self.critic_updates_done % cfg.target_refresh == 0:
                self.target_critic = self.critic.snapshot()
        for _ in range(cfg.policy_updates):
            seg = self.buffer.sample_segments(cfg.batch_size, cfg.segment_len,
                                              self.rng)
            states = seg.states.reshape(-1, seg.states.shape[-1])
            torques, gear_idx, weights, anchor, eta = e_step(
                states, self.heads, self.target_critic, cfg.action_samples,
                cfg.eps_e_step, self.rng)
            kls = m_step(states, torques, gear_idx, weights, self.heads,
                         anchor, self.actor_opt, cfg.budget, self.duals,
                         cfg.mstep_iterations)
            info["eta"] = eta
            info.update(kls)
        return info
