"""Training loop orchestration: collect/update loops, eval cadence, persistence.

A run directory receives the exact config, a manifest (code version, seed),
a ``metrics.csv`` with one row per (eval point, split), and a checkpoint per
eval point. Reference mode is single-threaded and bit-reproducible given
(config, seed); ``threads=2`` overlaps collection and learning for the
replay-based agents under the replay buffer's lock, preserving the 1-update-
per-episode schedule.
"""

from __future__ import annotations

import json
import logging
import threading
from pathlib import Path

import numpy as np

from zipfgrid import __version__
from zipfgrid.agents import (
    ACAgentConfig,
    ActorCriticAgent,
    QAgentConfig,
    QLearnerAgent,
    Rollout,
)
from zipfgrid.config import PAPER_WINDOW, ExperimentConfig, save_config
from zipfgrid.errors import NumericalError
from zipfgrid.evaluation import (
    EvalReport,
    evaluate,
    format_metrics_row,
    metrics_header,
)
from zipfgrid.gridworld import ZipfGridworld, build_level, generate_world
from zipfgrid.nets import (
    AdamW,
    AdamWConfig,
    ConvSpec,
    Network,
    NetworkSpec,
    save_checkpoint,
)
from zipfgrid.replay import EpisodeRecord, PrioritizedBuffer
from zipfgrid.seeding import stream

log = logging.getLogger("zipfgrid")


def network_spec_for(config: ExperimentConfig) -> NetworkSpec:
    heads = {"q": 8} if config.agent.startswith("q_") else {"policy": 8, "value": 1}
    input_shape = (63, 63, 3)
    if config.agent == "ac_ssl":
        heads["recon"] = int(np.prod(input_shape))
    return NetworkSpec(
        input_shape=input_shape,
        encoder=tuple(ConvSpec(*c) for c in config.net.encoder),
        trunk=tuple(config.net.trunk),
        heads=heads,
    )


def build_world_and_envs(config: ExperimentConfig):
    env = config.env
    maps = generate_world(env.world_seed, env.num_maps, env.num_objects)
    train_env = build_level(
        config.level_name, maps, goal_exponent=env.goal_exponent,
        rare_fraction=env.rare_fraction,
    )
    zipf_split = f"zipf_{env.goal_exponent:g}"
    eval_envs = {
        zipf_split: build_level(zipf_split, maps, env.goal_exponent, env.rare_fraction),
        "uniform": build_level("uniform", maps, env.goal_exponent, env.rare_fraction),
        "rare": build_level("rare", maps, env.goal_exponent, env.rare_fraction),
    }
    return maps, train_env, eval_envs


def build_agent(config: ExperimentConfig):
    spec = network_spec_for(config)
    net = Network(spec, seed=config.seed)
    if config.agent in ("q_per", "q_uniform"):
        q = config.q
        buffer = PrioritizedBuffer(
            capacity_episodes=q.buffer_episodes,
            priority_mix=q.priority_mix,
            priority_exponent=q.priority_exponent if config.agent == "q_per" else 0.0,
            is_exponent=q.is_exponent,
        )
        target = Network(spec, seed=config.seed)
        return QLearnerAgent(
            net,
            target,
            buffer,
            QAgentConfig(
                discount=q.discount,
                lam=q.lam,
                epsilon=q.epsilon,
                target_update_interval=q.target_update_interval,
                rescale_eps=q.rescale_eps,
                batch_size=q.batch_size,
            ),
            optimizer=AdamW(
                net.parameters(),
                AdamWConfig(
                    learning_rate=q.learning_rate,
                    weight_decay=q.weight_decay,
                    epsilon=q.adam_epsilon,
                    max_grad_norm=q.max_grad_norm,
                ),
            ),
        )
    ac = config.ac
    agent_cfg = ACAgentConfig(
        discount=ac.discount,
        baseline_scale=ac.baseline_scale,
        entropy_cost=ac.entropy_cost,
        unroll_length=ac.unroll_length,
        ssl_weight=config.ssl.weight if config.agent == "ac_ssl" else 0.0,
    )
    return ActorCriticAgent(
        net,
        agent_cfg,
        optimizer=AdamW(
            net.parameters(),
            AdamWConfig(
                learning_rate=ac.learning_rate,
                weight_decay=0.0,
                epsilon=ac.adam_epsilon,
                max_grad_norm=ac.max_grad_norm,
            ),
        ),
    )


def collect_episode(
    env: ZipfGridworld, agent, env_rng, agent_rng
) -> EpisodeRecord:
    obs = env.reset(env_rng)
    observations, actions, rewards = [], [], []
    done = False
    reward = 0
    while not done:
        action = agent.act(obs, agent_rng)
        observations.append(obs)
        actions.append(action)
        obs, reward, done = env.step(action)
        rewards.append(reward)
    n = len(actions)
    terminals = np.zeros(n, dtype=bool)
    terminals[-1] = True
    return EpisodeRecord(
        observations=np.stack(observations),
        actions=np.asarray(actions, dtype=np.int8),
        rewards=np.asarray(rewards, dtype=np.float32),
        terminals=terminals,
    )


class _Run:
    """Shared state of one training run."""

    def __init__(self, config: ExperimentConfig, out_dir: Path):
        self.config = config
        self.out_dir = out_dir
        self.maps, self.train_env, self.eval_envs = build_world_and_envs(config)
        self.agent = build_agent(config)
        self.env_rng = stream(config.seed, "train-env")
        self.agent_rng = stream(config.seed, "agent")
        self.replay_rng = stream(config.seed, "replay")
        self.metrics_path = out_dir / "metrics.csv"
        self._metrics_fh = open(self.metrics_path, "w", encoding="utf-8")
        self._metrics_fh.write(metrics_header() + "\n")
        (out_dir / "checkpoints").mkdir(exist_ok=True)

    def close(self):
        self._metrics_fh.close()

    def eval_and_checkpoint(self, learner_step: int) -> list[EvalReport]:
        cfg = self.config
        reports = []
        for i, (split, env) in enumerate(self.eval_envs.items()):
            rng = stream(cfg.seed, "eval", learner_step, i)
            report = evaluate(
                self.agent, env, cfg.eval.episodes, rng,
                learner_step=learner_step, seed=cfg.seed, split=split,
            )
            self._metrics_fh.write(format_metrics_row(report) + "\n")
            reports.append(report)
        self._metrics_fh.flush()
        save_checkpoint(
            self.out_dir / "checkpoints" / f"step{learner_step:08d}.bin",
            self.agent.net, learner_step,
        )
        log.info(
            "step %d: %s", learner_step,
            "  ".join(f"{r.split}={r.success_rate:.3f}" for r in reports),
        )
        return reports


def run_training(config: ExperimentConfig, out_dir: str | Path | None = None) -> Path:
    """Execute one run; returns the output directory."""
    config.validate()
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(config, out / "config.json")
    (out / "manifest.json").write_text(
        json.dumps(
            {
                "package_version": __version__,
                "seed": config.seed,
                "condition": config.condition,
                "eval_window": list(config.eval.window),
                "paper_reference_window": list(PAPER_WINDOW),
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    log.info(
        "run %s seed %d: window %s (paper-scale reference %s)",
        config.condition, config.seed, config.eval.window, list(PAPER_WINDOW),
    )
    run = _Run(config, out)
    log.info("network parameters: %d", run.agent.net.param_count())
    try:
        if config.agent in ("q_per", "q_uniform"):
            if config.threads > 1:
                _train_q_threaded(run)
            else:
                _train_q(run)
        else:
            if config.threads > 1:
                log.warning("actor-critic is synchronous by design; ignoring threads=%d",
                            config.threads)
            _train_ac(run)
    except NumericalError:
        save_checkpoint(
            run.out_dir / "checkpoints" / "diverged_last_good.bin",
            run.agent.net, run.agent.updates_done,
        )
        raise
    finally:
        run.close()
    return out


def _eval_points(config: ExperimentConfig):
    pts = set(range(config.eval.cadence, config.total_updates + 1, config.eval.cadence))
    pts.add(config.total_updates)
    return pts


def _train_q(run: _Run) -> None:
    cfg = run.config
    points = _eval_points(cfg)
    episodes_done = 0
    updates = 0
    while updates < cfg.total_updates:
        episode = collect_episode(run.train_env, run.agent, run.env_rng, run.agent_rng)
        run.agent.buffer.insert(episode)
        episodes_done += 1
        if episodes_done <= cfg.q.warmup_episodes:
            continue
        run.agent.learner_update(run.replay_rng)
        updates += 1
        if updates in points:
            run.eval_and_checkpoint(updates)


def _train_q_threaded(run: _Run) -> None:
    """Collector thread + learner thread, same 1-update-per-episode pacing."""
    cfg = run.config
    points = _eval_points(cfg)
    cond = threading.Condition()
    state = {"collected": 0, "updates": 0, "stop": False, "error": None}
    max_ahead = 4  # episodes the collector may lead the schedule by
    actor_net = Network(run.agent.net.spec, seed=cfg.seed)
    copy_lock = threading.Lock()

    class _Actor:
        def act(self, obs, rng):
            eps = cfg.q.epsilon
            if eps > 0.0 and rng.random() < eps:
                return int(rng.integers(8))
            from zipfgrid.agents import _prep
            return int(np.argmax(actor_net.forward(_prep(obs[None]), ["q"])["q"][0]))

    actor = _Actor()

    def collector():
        try:
            while True:
                with cond:
                    cond.wait_for(
                        lambda: state["stop"]
                        or state["collected"] - cfg.q.warmup_episodes - state["updates"] < max_ahead
                    )
                    if state["stop"]:
                        return
                with copy_lock:
                    actor_net.copy_weights_from(run.agent.net)
                episode = collect_episode(run.train_env, actor, run.env_rng, run.agent_rng)
                run.agent.buffer.insert(episode)
                with cond:
                    state["collected"] += 1
                    cond.notify_all()
        except Exception as exc:  # propagate to the learner thread
            with cond:
                state["error"] = exc
                state["stop"] = True
                cond.notify_all()

    thread = threading.Thread(target=collector, name="collector", daemon=True)
    thread.start()
    try:
        while state["updates"] < cfg.total_updates:
            with cond:
                cond.wait_for(
                    lambda: state["error"] is not None
                    or state["collected"] > cfg.q.warmup_episodes + state["updates"]
                )
                if state["error"] is not None:
                    raise state["error"]
            with copy_lock:
                run.agent.learner_update(run.replay_rng)
            with cond:
                state["updates"] += 1
                cond.notify_all()
            if state["updates"] in points:
                run.eval_and_checkpoint(state["updates"])
    finally:
        with cond:
            state["stop"] = True
            cond.notify_all()
        thread.join(timeout=30)


def _train_ac(run: _Run) -> None:
    cfg = run.config
    points = _eval_points(cfg)
    unroll = cfg.ac.unroll_length
    obs = run.train_env.reset(run.env_rng)
    updates = 0
    e0 = cfg.ac.entropy_cost
    e1 = cfg.ac.entropy_cost_final
    while updates < cfg.total_updates:
        if e1 is not None:
            frac = updates / max(cfg.total_updates - 1, 1)
            run.agent.config.entropy_cost = e0 + (e1 - e0) * frac
        observations, actions, rewards, dones = [], [], [], []
        for _ in range(unroll):
            action = run.agent.act(obs, run.agent_rng)
            observations.append(obs)
            actions.append(action)
            obs, reward, done = run.train_env.step(action)
            rewards.append(reward)
            dones.append(done)
            if done:
                obs = run.train_env.reset(run.env_rng)
        rollout = Rollout(
            observations=np.stack(observations),
            actions=np.asarray(actions, dtype=np.int8),
            rewards=np.asarray(rewards, dtype=np.float32),
            dones=np.asarray(dones, dtype=bool),
            bootstrap_obs=None if dones[-1] else obs,
        )
        run.agent.update(rollout)
        updates += 1
        if updates in points:
            run.eval_and_checkpoint(updates)
