"""Learning agents.

Two learners share the approximator and replay machinery:

* ``QLearnerAgent`` -- epsilon-greedy Q(lambda) with prioritized episode
  replay, an invertible value-rescaling transform on targets, and a
  periodically-copied target network.
* ``ActorCriticAgent`` -- a synchronous on-policy advantage actor-critic
  (single actor, so behavior equals target policy and no off-policy
  correction is needed), optionally trained with an auxiliary pixel
  reconstruction loss that backpropagates into the shared encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from zipfgrid.errors import ContractViolationError, InvalidArgumentError, NumericalError
from zipfgrid.nets import AdamW, AdamWConfig, Network
from zipfgrid.replay import EpisodeRecord, PrioritizedBuffer


# ---- value rescaling ----------------------------------------------------------


def rescale(x, eps: float = 1e-3):
    """h(x) = sign(x) * (sqrt(|x| + 1) - 1) + eps * x."""
    x = np.asarray(x, dtype=np.float64)
    out = np.sign(x) * (np.sqrt(np.abs(x) + 1.0) - 1.0) + eps * x
    return float(out) if out.ndim == 0 else out


def rescale_inverse(z, eps: float = 1e-3):
    """Closed-form inverse of :func:`rescale`."""
    z = np.asarray(z, dtype=np.float64)
    root = np.sqrt(1.0 + 4.0 * eps * (np.abs(z) + 1.0 + eps))
    out = np.sign(z) * (np.square((root - 1.0) / (2.0 * eps)) - 1.0)
    return float(out) if out.ndim == 0 else out


# ---- lambda returns -------------------------------------------------------------


def q_lambda_returns(
    rewards: np.ndarray, bootstraps: np.ndarray, gamma: float, lam: float
) -> np.ndarray:
    """Backward recursion in un-rescaled space.

    ``bootstraps[t]`` holds ``h^-1(max_a Qbar(s_{t+1}, a))`` for t < L-1; the
    entry at the terminal step is ignored (terminal bootstrap is zero).
    """
    n = len(rewards)
    returns = np.empty(n, dtype=np.float64)
    acc = float(rewards[n - 1])
    returns[n - 1] = acc
    for t in range(n - 2, -1, -1):
        acc = rewards[t] + gamma * ((1.0 - lam) * bootstraps[t] + lam * acc)
        returns[t] = acc
    return returns


def q_lambda_targets(
    episode: EpisodeRecord,
    target_net: Network,
    gamma: float,
    lam: float,
    rescale_eps: float = 1e-3,
) -> np.ndarray:
    """Per-step training targets ``h(G_t)`` for one full episode."""
    if not episode.terminals[-1]:
        raise ContractViolationError("episode lacks a terminal step")
    n = len(episode)
    bootstraps = np.zeros(n, dtype=np.float64)
    if n > 1:
        nxt = _prep(episode.observations[1:])
        qbar = target_net.forward(nxt, ["q"])["q"]
        bootstraps[: n - 1] = rescale_inverse(qbar.max(axis=1), rescale_eps)
    returns = q_lambda_returns(episode.rewards, bootstraps, gamma, lam)
    return rescale(returns, rescale_eps)


# ---- action selection ----------------------------------------------------------


def act_epsilon_greedy(q_values: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Uniform action with probability epsilon, else lowest-index argmax."""
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(len(q_values)))
    return int(np.argmax(q_values))


def _prep(obs: np.ndarray) -> np.ndarray:
    """Batch of observations -> float32 network input scaled to [0, 1]."""
    if obs.dtype == np.uint8:
        return obs.astype(np.float32) * np.float32(1.0 / 255.0)
    return np.asarray(obs, dtype=np.float32)


# ---- Q(lambda) learner ----------------------------------------------------------


@dataclass
class QAgentConfig:
    discount: float = 0.9
    lam: float = 0.3
    epsilon: float = 0.1
    target_update_interval: int = 10
    rescale_eps: float = 1e-3
    batch_size: int = 32

    def __post_init__(self):
        if not 0.0 <= self.discount <= 1.0 or not 0.0 <= self.lam <= 1.0:
            raise InvalidArgumentError("discount and lambda must lie in [0, 1]")
        if not 0.0 <= self.epsilon <= 1.0:
            raise InvalidArgumentError("epsilon must lie in [0, 1]")


class QLearnerAgent:
    """Prioritized-replay Q(lambda) learner with target network."""

    def __init__(
        self,
        net: Network,
        target_net: Network,
        buffer: PrioritizedBuffer,
        config: QAgentConfig,
        optimizer: AdamW | None = None,
        optimizer_config: AdamWConfig | None = None,
    ):
        self.net = net
        self.target_net = target_net
        self.target_net.copy_weights_from(net)
        self.buffer = buffer
        self.config = config
        self.num_actions = net.spec.heads["q"]
        self.optimizer = optimizer or AdamW(
            net.parameters(), optimizer_config or AdamWConfig()
        )
        self.updates_done = 0

    def q_values(self, obs: np.ndarray) -> np.ndarray:
        return self.net.forward(_prep(obs[None]), ["q"])["q"][0]

    def act(self, obs: np.ndarray, rng: np.random.Generator, epsilon: float | None = None) -> int:
        eps = self.config.epsilon if epsilon is None else epsilon
        if eps > 0.0 and rng.random() < eps:
            return int(rng.integers(self.num_actions))
        return int(np.argmax(self.q_values(obs)))

    def greedy_action(self, obs: np.ndarray) -> int:
        return int(np.argmax(self.q_values(obs)))

    # keep per-chunk working sets cache-resident; chunk boundaries fall on
    # episode boundaries and gradients accumulate exactly (fixed add order)
    CHUNK_STEPS = 512

    def _episode_chunks(self, episodes):
        chunk: list = []
        steps = 0
        for i, ep in enumerate(episodes):
            if chunk and steps + len(ep) > self.CHUNK_STEPS:
                yield chunk
                chunk, steps = [], 0
            chunk.append(i)
            steps += len(ep)
        if chunk:
            yield chunk

    def learner_update(self, rng: np.random.Generator) -> dict:
        """One prioritized batch update; returns loss and diagnostics."""
        cfg = self.config
        episodes, weights, handles = self.buffer.sample_batch(cfg.batch_size, rng)
        n_steps = sum(len(ep) for ep in episodes)
        total_grads = None
        loss_sum = 0.0
        abs_deltas: list[np.ndarray] = [None] * len(episodes)

        for chunk in self._episode_chunks(episodes):
            chunk_eps = [episodes[i] for i in chunk]
            lengths = [len(ep) for ep in chunk_eps]
            x = _prep(np.concatenate([ep.observations for ep in chunk_eps]))

            # bootstrap values come from the target net on the shifted
            # states; the per-episode terminal step bootstraps zero
            qbar = self.target_net.forward(x, ["q"])["q"]
            maxq = rescale_inverse(qbar.max(axis=1), cfg.rescale_eps)
            targets = np.empty(sum(lengths), dtype=np.float64)
            offset = 0
            for ep, n in zip(chunk_eps, lengths):
                boot = np.zeros(n)
                boot[: n - 1] = maxq[offset + 1: offset + n]
                g = q_lambda_returns(ep.rewards, boot, cfg.discount, cfg.lam)
                targets[offset: offset + n] = rescale(g, cfg.rescale_eps)
                offset += n

            actions = np.concatenate([ep.actions for ep in chunk_eps]).astype(np.int64)
            step_weights = np.repeat(weights[chunk], lengths)

            out = self.net.forward(x, ["q"], cache=True)["q"]
            rows = np.arange(out.shape[0])
            delta = out[rows, actions].astype(np.float64) - targets
            if not np.all(np.isfinite(delta)):
                raise NumericalError("non-finite TD errors; training halted")
            loss_sum += float(np.sum(step_weights * 0.5 * delta ** 2))
            dq = np.zeros_like(out)
            dq[rows, actions] = (step_weights * delta / n_steps).astype(out.dtype)
            grads = self.net.backward({"q": dq})
            if total_grads is None:
                total_grads = grads
            else:
                for acc, g in zip(total_grads, grads):
                    acc += g

            abs_delta = np.abs(delta)
            offset = 0
            for i, n in zip(chunk, lengths):
                abs_deltas[i] = abs_delta[offset: offset + n]
                offset += n

        grad_norm = self.optimizer.step(self.net.parameters(), total_grads)
        self.updates_done += 1
        if self.updates_done % cfg.target_update_interval == 0:
            self.target_net.copy_weights_from(self.net)
        self.buffer.update_priorities(handles, abs_deltas)
        return {"loss": loss_sum / n_steps, "grad_norm": grad_norm, "batch_steps": n_steps}


# ---- advantage actor-critic ------------------------------------------------------


@dataclass
class ACAgentConfig:
    discount: float = 0.99
    baseline_scale: float = 0.59
    entropy_cost: float = 9.4e-5
    unroll_length: int = 128
    ssl_weight: float = 0.0

    def __post_init__(self):
        if self.baseline_scale < 0 or self.entropy_cost < 0 or self.ssl_weight < 0:
            raise InvalidArgumentError("loss scales must be non-negative")


@dataclass
class Rollout:
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    bootstrap_obs: np.ndarray | None  # state after the last step, None if done
    steps: int = field(init=False)

    def __post_init__(self):
        self.steps = len(self.actions)
        if self.steps == 0:
            raise InvalidArgumentError("empty rollout")


def sigmoid_xent(logits: np.ndarray, targets: np.ndarray) -> float:
    """Mean per-element sigmoid cross-entropy, numerically stable."""
    l, t = logits.astype(np.float64), targets.astype(np.float64)
    per = np.maximum(l, 0.0) - l * t + np.log1p(np.exp(-np.abs(l)))
    return float(per.mean())


class ActorCriticAgent:
    """On-policy advantage actor-critic with optional reconstruction loss."""

    def __init__(
        self,
        net: Network,
        config: ACAgentConfig,
        optimizer: AdamW | None = None,
        optimizer_config: AdamWConfig | None = None,
    ):
        self.net = net
        self.config = config
        self.optimizer = optimizer or AdamW(
            net.parameters(),
            optimizer_config
            or AdamWConfig(learning_rate=3e-4, weight_decay=0.0, epsilon=1e-8,
                           max_grad_norm=None),
        )
        self.updates_done = 0

    def policy(self, obs: np.ndarray) -> np.ndarray:
        logits = self.net.forward(_prep(obs[None]), ["policy"])["policy"][0]
        return _softmax(logits[None])[0]

    def act(self, obs: np.ndarray, rng: np.random.Generator) -> int:
        probs = self.policy(obs)
        idx = int(np.searchsorted(np.cumsum(probs), rng.random() * probs.sum(), side="right"))
        return min(idx, len(probs) - 1)

    def greedy_action(self, obs: np.ndarray) -> int:
        logits = self.net.forward(_prep(obs[None]), ["policy"])["policy"][0]
        return int(np.argmax(logits))

    def update(self, rollout: Rollout) -> dict:
        """One synchronous update from an on-policy rollout."""
        cfg = self.config
        x = _prep(rollout.observations)
        heads = ["policy", "value"]
        use_ssl = cfg.ssl_weight > 0.0
        if use_ssl:
            heads.append("recon")

        bootstrap = 0.0
        if rollout.bootstrap_obs is not None:
            bootstrap = float(
                self.net.forward(_prep(rollout.bootstrap_obs[None]), ["value"])["value"][0, 0]
            )
        outs = self.net.forward(x, heads, cache=True)
        logits = outs["policy"]
        values = outs["value"][:, 0].astype(np.float64)

        returns = np.empty(rollout.steps, dtype=np.float64)
        acc = bootstrap
        for t in range(rollout.steps - 1, -1, -1):
            acc = rollout.rewards[t] + cfg.discount * (0.0 if rollout.dones[t] else acc)
            returns[t] = acc

        pi = _softmax(logits).astype(np.float64)
        logpi = np.log(np.maximum(pi, 1e-30))
        advantage = returns - values
        rows = np.arange(rollout.steps)
        actions = rollout.actions.astype(np.int64)
        entropy = -(pi * logpi).sum(axis=1)

        pg_loss = float(-(advantage * logpi[rows, actions]).sum())
        baseline_loss = float(cfg.baseline_scale * 0.5 * np.sum((values - returns) ** 2))
        entropy_loss = float(-cfg.entropy_cost * entropy.sum())

        one_hot = np.zeros_like(pi)
        one_hot[rows, actions] = 1.0
        dlogits = -advantage[:, None] * (one_hot - pi)
        dlogits += cfg.entropy_cost * pi * (logpi + entropy[:, None])
        dvalue = cfg.baseline_scale * (values - returns)[:, None]

        head_grads = {
            "policy": dlogits.astype(self.net.dtype),
            "value": dvalue.astype(self.net.dtype),
        }
        recon_loss = 0.0
        if use_ssl:
            logits_r = outs["recon"]
            recon_loss = sigmoid_xent(logits_r, x)
            head_grads["recon"] = (
                cfg.ssl_weight * (expit(logits_r.astype(np.float64)) - x) / logits_r.size
            ).astype(self.net.dtype)

        loss = pg_loss + baseline_loss + entropy_loss + cfg.ssl_weight * recon_loss
        if not np.isfinite(loss):
            raise NumericalError("non-finite actor-critic loss; training halted")
        grads = self.net.backward(head_grads)
        grad_norm = self.optimizer.step(self.net.parameters(), grads)
        self.updates_done += 1
        return {
            "loss": loss,
            "pg_loss": pg_loss,
            "baseline_loss": baseline_loss,
            "entropy": float(entropy.mean()),
            "recon_loss": recon_loss,
            "grad_norm": grad_norm,
        }


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)
