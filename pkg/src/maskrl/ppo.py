"""PPO with masked policies: rollouts, GAE, clipped updates, evaluation.

The update consumes each mask's own log-probabilities and scores: ratios
are exp(log pi^r_new - log pi^r_old) under the active mask (for the
distributional mask the enclosed-mass term enters the ratio but not the
gradient), and the policy gradient is assembled from the mask's exact
mean/log-std scores chained through the MLP backward pass. Advantages
are normalized per minibatch; the optimizer is Adam over the
concatenation of policy and value parameters with global gradient-norm
clipping.

Everything is driven by explicit numpy Generators split per concern
(environment, network init, action sampling, minibatch shuffling), so a
seed fixes a training run bit-for-bit.
"""

from __future__ import annotations

import json

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .configs import TrainConfig
from .environments import env_template, make_env
from .masking import MaskedSample, make_mask
from .policy import DiagonalGaussianPolicy, ValueNet
from .relevant_sets import make_provider

__all__ = [
    "RolloutBatch",
    "Adam",
    "collect_rollouts",
    "compute_gae",
    "minibatch_loss_and_grads",
    "ppo_update",
    "Trainer",
    "train",
    "evaluate_policy",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass
class RolloutBatch:
    obs: np.ndarray  # (T, obs_dim)
    samples: list[MaskedSample]
    rewards: np.ndarray
    dones: np.ndarray
    values: np.ndarray
    log_probs: np.ndarray
    bootstrap_value: float
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    episode_returns: list[float] = field(default_factory=list)
    episode_infos: list[dict] = field(default_factory=list)

    def __len__(self):
        return self.obs.shape[0]


class Adam:
    """Adam over one flat parameter vector (eps follows the RL default)."""

    def __init__(self, size: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-5):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1 - self.beta2) * grads**2
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def compute_gae(rewards, values, next_values, dones, gamma, lam):
    """Generalized advantage estimation with episode-boundary truncation.

    delta_t = r_t + gamma V(s_{t+1}) (1 - done_t) - V(s_t);
    A_t = sum_k (gamma lam)^k delta_{t+k}, truncated at episode ends.
    Returns (advantages, returns) with returns = A + V.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    next_values = np.asarray(next_values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    t_len = rewards.size
    adv = np.zeros(t_len)
    running = 0.0
    for t in range(t_len - 1, -1, -1):
        delta = rewards[t] + gamma * next_values[t] * (1.0 - dones[t]) - values[t]
        running = delta + gamma * lam * (1.0 - dones[t]) * running
        adv[t] = running
    return adv, adv + values


def collect_rollouts(
    policy: DiagonalGaussianPolicy,
    value_net: ValueNet,
    env,
    mask,
    provider,
    n_steps: int,
    rng: np.random.Generator,
    obs=None,
    carry_return: float = 0.0,
):
    """Gather one on-policy batch.

    Returns (batch, resume_obs, carry_return); the carry threads the
    running return of the episode that straddles the batch boundary.
    """
    box = env.action_space
    obs_list, samples, rewards, flags, values = [], [], [], [], []
    episode_returns, episode_infos = [], []
    if obs is None:
        obs = env.reset()
        if provider is not None:
            provider.reset_episode()
        carry_return = 0.0
    for _ in range(n_steps):
        mu = policy.mean(obs)[0]
        ar = provider.compute(env).zonotope if mask.needs_set else None
        sample = mask.sample(mu, policy.log_std, ar, box, rng)
        value = float(value_net.value(obs)[0])
        nxt, reward, done, info = env.step(sample.executed)
        obs_list.append(obs)
        samples.append(sample)
        rewards.append(reward)
        flags.append(float(done))
        values.append(value)
        carry_return += reward
        if done:
            episode_returns.append(carry_return)
            episode_infos.append(info)
            carry_return = 0.0
            obs = env.reset()
            if provider is not None:
                provider.reset_episode()
        else:
            obs = nxt
    bootstrap = float(value_net.value(obs)[0])
    batch = RolloutBatch(
        obs=np.array(obs_list),
        samples=samples,
        rewards=np.array(rewards),
        dones=np.array(flags),
        values=np.array(values),
        log_probs=np.array([s.log_prob for s in samples]),
        bootstrap_value=bootstrap,
        episode_returns=episode_returns,
        episode_infos=episode_infos,
    )
    return batch, obs, carry_return


def minibatch_loss_and_grads(
    policy, value_net, mask, config, obs_mb, samples_mb, adv_norm, old_logp, ret_mb
):
    """Clipped-surrogate loss plus exact gradients for one minibatch.

    Loss = -mean(min(r A, clip(r) A)) + vf_coef * MSE(V, returns)
           - ent_coef * entropy, with r the active mask's probability
    ratio. Returns (stats dict, flat gradient over [policy, value]).
    """
    b = len(samples_mb)
    means = policy.mean(obs_mb, cache=True)
    new_logp = mask.batch_log_prob(means, policy.log_std, samples_mb)
    # Ratios far outside the clip band behave identically; bounding the
    # exponent keeps a collapsing policy from overflowing to inf.
    ratio = np.exp(np.clip(new_logp - old_logp, -50.0, 50.0))
    clipped = np.clip(ratio, 1.0 - config.clip_range, 1.0 + config.clip_range)
    surr1 = ratio * adv_norm
    surr2 = clipped * adv_norm
    policy_loss = -np.minimum(surr1, surr2).mean()
    active = surr1 <= surr2  # the unclipped branch carries the gradient
    dlogp = np.where(active, -adv_norm * ratio, 0.0) / b

    entropy = policy.entropy()

    values = value_net.value(obs_mb, cache=True)
    verr = values - ret_mb
    value_loss = float((verr**2).mean())

    policy.zero_grads()
    dmean, dlogstd = mask.batch_score(means, policy.log_std, samples_mb, dlogp)
    policy.backward_mean(dmean)
    policy.grad_log_std += dlogstd
    policy.grad_log_std += -config.ent_coef  # d(-ent_coef * H)/d log_std
    value_net.zero_grads()
    value_net.backward(config.vf_coef * 2.0 * verr / b)
    grads = np.concatenate([policy.flat_grads(), value_net.flat_grads()])

    if not np.isfinite(policy_loss + value_loss):
        raise FloatingPointError(
            "non-finite PPO loss "
            f"(policy {policy_loss}, value {value_loss}, "
            f"ratio range [{ratio.min()}, {ratio.max()}])"
        )
    stats = {
        "policy_loss": float(policy_loss),
        "value_loss": value_loss,
        "entropy": entropy,
        "clip_frac": float(np.mean(~active)),
        "total_loss": float(
            policy_loss + config.vf_coef * value_loss - config.ent_coef * entropy
        ),
    }
    return stats, grads


def ppo_update(
    policy: DiagonalGaussianPolicy,
    value_net: ValueNet,
    optimizer: Adam,
    batch: RolloutBatch,
    config: TrainConfig,
    mask,
    shuffle_rng: np.random.Generator,
) -> dict:
    """Clipped-surrogate update over the batch; returns loss statistics."""
    t_len = len(batch)
    next_values = np.append(batch.values[1:], batch.bootstrap_value)
    adv, returns = compute_gae(
        batch.rewards, batch.values, next_values, batch.dones,
        config.gamma, config.gae_lambda,
    )
    batch.advantages, batch.returns = adv, returns

    stats = {"policy_loss": [], "value_loss": [], "entropy": [], "clip_frac": []}
    n_params_policy = policy.n_params
    for _ in range(config.epochs):
        perm = shuffle_rng.permutation(t_len)
        for start in range(0, t_len, config.minibatch_size):
            idx = perm[start : start + config.minibatch_size]
            if idx.size == 0:
                continue
            adv_mb = adv[idx]
            adv_mb = (adv_mb - adv_mb.mean()) / (adv_mb.std() + 1e-8)
            mb_stats, grads = minibatch_loss_and_grads(
                policy,
                value_net,
                mask,
                config,
                batch.obs[idx],
                [batch.samples[i] for i in idx],
                adv_mb,
                batch.log_probs[idx],
                returns[idx],
            )
            gnorm = float(np.linalg.norm(grads))
            if gnorm > config.max_grad_norm:
                grads *= config.max_grad_norm / gnorm
            params = np.concatenate([policy.flat_params(), value_net.flat_params()])
            params = optimizer.step(params, grads)
            policy.set_flat_params(params[:n_params_policy])
            value_net.set_flat_params(params[n_params_policy:])
            # Keep the exploration scale in a sane band; a fully collapsed
            # log-std makes every later log-prob degenerate.
            np.clip(policy.log_std, -20.0, 5.0, out=policy.log_std)
            for key in stats:
                stats[key].append(mb_stats[key])
    return {k: float(np.mean(v)) for k, v in stats.items()}


class Trainer:
    """Owns networks, environment, provider and the metric log for one run."""

    def __init__(self, config: TrainConfig):
        self.config = config
        seeds = np.random.SeedSequence(config.seed).spawn(4)
        env_seed = int(seeds[0].generate_state(1)[0])
        self.env = make_env(config.env, seed=env_seed)
        self.sample_rng = np.random.default_rng(seeds[1])
        self.shuffle_rng = np.random.default_rng(seeds[2])
        init_seed = int(np.random.default_rng(seeds[3]).integers(2**31))

        self.mask = make_mask(config.mask)
        template = env_template(config.env)
        out_dim = self.mask.policy_out_dim(self.env.action_dim, template)
        self.policy = DiagonalGaussianPolicy(
            self.env.observation_dim,
            out_dim,
            hidden_layers=config.hidden_layers,
            hidden_size=config.hidden_size,
            activation=config.activation,
            init_log_std=config.init_log_std,
            seed=init_seed,
        )
        self.value_net = ValueNet(
            self.env.observation_dim,
            hidden_layers=config.hidden_layers,
            hidden_size=config.hidden_size,
            activation=config.activation,
            seed=init_seed + 1,
        )
        self.provider = None
        if self.mask.needs_set:
            kwargs = (
                {} if config.force_full_set else {"gap_tol": config.provider_gap_tol}
            )
            self.provider = make_provider(
                config.env, force_full_set=config.force_full_set, **kwargs
            )
        self.optimizer = Adam(
            self.policy.n_params + self.value_net.n_params, config.learning_rate
        )
        self.metrics: list[dict] = []
        self.global_step = 0
        self._next_log = config.log_every
        self._window_returns: list[float] = []
        self._window_collisions = 0
        self._window_episodes = 0
        self._clamp_events = 0
        self._mask_samples = 0

    def _provider_fallbacks(self) -> int:
        if self.provider is None or not hasattr(self.provider, "telemetry"):
            return 0
        return self.provider.telemetry.fallbacks

    def train(self) -> list[dict]:
        cfg = self.config
        obs = None
        carry = 0.0
        last_stats = {}
        while self.global_step < cfg.total_steps:
            batch, obs, carry = collect_rollouts(
                self.policy,
                self.value_net,
                self.env,
                self.mask,
                self.provider,
                cfg.n_steps,
                self.sample_rng,
                obs=obs,
                carry_return=carry,
            )
            self.global_step += len(batch)
            self._window_returns.extend(batch.episode_returns)
            self._window_episodes += len(batch.episode_returns)
            self._window_collisions += sum(
                1 for i in batch.episode_infos if i.get("collision")
            )
            self._clamp_events += sum(1 for s in batch.samples if s.clamped)
            self._mask_samples += len(batch)
            last_stats = ppo_update(
                self.policy,
                self.value_net,
                self.optimizer,
                batch,
                cfg,
                self.mask,
                self.shuffle_rng,
            )
            if self.global_step >= self._next_log:
                self._flush_metrics(last_stats)
                self._next_log += cfg.log_every
        if not self.metrics or self.metrics[-1]["step"] != self.global_step:
            self._flush_metrics(last_stats)
        return self.metrics

    def _flush_metrics(self, stats: dict):
        rets = np.array(self._window_returns) if self._window_returns else None
        row = {
            "step": self.global_step,
            "episode_return_mean": float(rets.mean()) if rets is not None else np.nan,
            "episode_return_std": float(rets.std()) if rets is not None else np.nan,
            "episodes": self._window_episodes,
            "collisions": self._window_collisions,
            "clamp_rate": self._clamp_events / max(self._mask_samples, 1),
            "fallback_rate": (
                self._provider_fallbacks() / max(self._mask_samples, 1)
                if self.mask.needs_set
                else 0.0
            ),
            "underflow_rate": (
                getattr(self.mask, "underflows", 0) / max(self._mask_samples, 1)
            ),
            "policy_loss": stats.get("policy_loss", np.nan),
            "value_loss": stats.get("value_loss", np.nan),
            "entropy": stats.get("entropy", np.nan),
        }
        self.metrics.append(row)
        self._window_returns = []
        self._window_collisions = 0
        self._window_episodes = 0


def train(config: TrainConfig) -> Trainer:
    trainer = Trainer(config)
    trainer.train()
    return trainer


def evaluate_policy(
    policy,
    mask,
    provider,
    env,
    episodes: int,
    deterministic: bool = True,
    rng: np.random.Generator | None = None,
    trajectory_path=None,
) -> dict:
    """Mean and standard deviation of the episode return over rollouts.

    ``trajectory_path`` optionally dumps every step as CSV rows
    (episode, t, state..., action..., reward, done).
    """
    rng = rng or np.random.default_rng(0)
    box = env.action_space
    returns = []
    rows = []
    for episode in range(episodes):
        obs = env.reset()
        if provider is not None:
            provider.reset_episode()
        total = 0.0
        done = False
        t = 0
        while not done:
            mu = policy.mean(obs)[0]
            ar = provider.compute(env).zonotope if mask.needs_set else None
            if deterministic:
                action = mask.deterministic(mu, ar, box, rng)
            else:
                action = mask.sample(mu, policy.log_std, ar, box, rng).executed
            obs, reward, done, _ = env.step(action)
            total += reward
            if trajectory_path is not None:
                rows.append(
                    [episode, t, *np.asarray(obs).tolist(),
                     *np.asarray(action).tolist(), reward, int(done)]
                )
            t += 1
        returns.append(total)
    if trajectory_path is not None:
        obs_dim = env.observation_dim
        act_dim = env.action_dim
        header = (
            ["episode", "t"]
            + [f"s{i}" for i in range(obs_dim)]
            + [f"a{i}" for i in range(act_dim)]
            + ["reward", "done"]
        )
        lines = [",".join(header)]
        lines += [",".join(repr(v) if isinstance(v, float) else str(v) for v in r)
                  for r in rows]
        Path(trajectory_path).write_text("\n".join(lines) + "\n")
    returns = np.array(returns)
    return {
        "mean": float(returns.mean()),
        "std": float(returns.std()),
        "returns": returns.tolist(),
    }


def save_checkpoint(path, trainer: Trainer):
    """Flat float64 parameter blob plus JSON metadata."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    params = np.concatenate(
        [trainer.policy.flat_params(), trainer.value_net.flat_params()]
    )
    (path / "params.bin").write_bytes(params.astype("<f8").tobytes())
    meta = {
        "format_version": 1,
        "config": trainer.config.to_dict(),
        "config_hash": trainer.config.config_hash(),
        "step_count": trainer.global_step,
        "policy_params": trainer.policy.n_params,
        "value_params": trainer.value_net.n_params,
        "obs_dim": trainer.policy.obs_dim,
        "policy_out_dim": trainer.policy.out_dim,
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=2))


def load_checkpoint(path) -> Trainer:
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    config = TrainConfig(**meta["config"])
    trainer = Trainer(config)
    params = np.frombuffer((path / "params.bin").read_bytes(), dtype="<f8").copy()
    if params.size != meta["policy_params"] + meta["value_params"]:
        raise ValueError("checkpoint parameter count does not match metadata")
    trainer.policy.set_flat_params(params[: meta["policy_params"]])
    trainer.value_net.set_flat_params(params[meta["policy_params"] :])
    trainer.global_step = meta["step_count"]
    return trainer
