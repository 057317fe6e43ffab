"""Output-feedback policy synthesis with a soft actor-critic learner.

Networks and reverse-mode gradients come from the in-package tape
(`autodiff`); there is no external learning framework.  Policies read only
the measurable tuple (k, SOC, V, T, I_prev) and squash their mean action
into [0, i_max], so the deterministic evaluation policy is reproducible
and bounded by construction.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from chargecert import autodiff as ad
from chargecert.battery import (
    GOAL,
    KELVIN,
    RUNNING,
    UNSAFE,
    CellState,
    OutputMeasurement,
    measure,
    sample_cell,
    step,
)

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
_LOG_2PI = math.log(2.0 * math.pi)


class TrainingError(Exception):
    def __init__(self, message, policy=None):
        super().__init__(message)
        self.policy = policy


@dataclass(frozen=True)
class RewardConfig:
    """Weights balancing charge progress, elapsed time, ageing, and terminal
    outcomes.  The elapsed-time term is a per-step penalty by default;
    ``literal_elapsed_time`` switches to the raw ``+lambda2 * (k+1)`` form
    for comparison runs."""

    lambda1: float = 100.0
    lambda2: float = 50.0
    lambda3: float = 2.0e3
    r_succ: float = 1000.0
    r_fail: float = -1000.0
    literal_elapsed_time: bool = False

    def __post_init__(self):
        if not (self.r_succ > 0.0 > self.r_fail):
            raise ValueError("require r_succ > 0 > r_fail")


def reward(prev: CellState, nxt: CellState, cfg: RewardConfig, dt: float = 15.0) -> float:
    """Per-transition reward; goal or safety violation ends the episode."""
    r = cfg.lambda1 * (nxt.soc - prev.soc)
    r += cfg.lambda3 * (-(nxt.q_loss - prev.q_loss))
    if cfg.literal_elapsed_time:
        r += cfg.lambda2 * nxt.k
    else:
        r -= cfg.lambda2 * (nxt.k - prev.k) * dt / 3600.0
    if nxt.terminal == GOAL:
        r += cfg.r_succ
    elif nxt.terminal == UNSAFE:
        r += cfg.r_fail
    return float(r)


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 200_000          # desk default; full-scale runs use more
    replay_capacity: int = 100_000
    batch_size: int = 128
    discount: float = 0.995
    entropy_target: float = -1.0
    lr: float = 3e-4
    alpha_lr: float = 3e-4
    alpha_init: float = 0.2
    autotune_alpha: bool = True
    tau: float = 0.005
    warmup_steps: int = 500
    update_every: int = 1
    hidden: tuple[int, int] = (64, 64)
    horizon: int = 320                  # episode cap in control steps
    control_dt: float = 15.0            # one action per 15 s
    action_high: float = 10.0
    reward_scale: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        if min(self.total_steps, self.replay_capacity, self.batch_size) < 0:
            raise ValueError("sizes must be nonnegative")
        if not (0 < self.discount <= 1):
            raise ValueError("discount in (0, 1]")

    def content_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(asdict(self), sort_keys=True).encode()
        ).hexdigest()[:16]


def observation_norms(horizon: int, i_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Shift/scale for the raw vector [k, soc, volt, temp_K, i_prev]."""
    shift = np.array([0.0, 0.0, 2.5, 17.0 + KELVIN, 0.0])
    scale = np.array([float(horizon), 1.0, 1.8, 28.0, float(i_max)])
    return shift, scale


def measurement_vector(z: OutputMeasurement) -> np.ndarray:
    return np.array([float(z.k), z.soc, z.volt, z.temp, z.i_prev])


@dataclass
class Policy:
    """Two-hidden-layer deterministic actor with input normalization and a
    tanh squash onto [0, action_high]."""

    weights: list            # [w1, b1, w2, b2, w_mu, b_mu]
    obs_shift: np.ndarray
    obs_scale: np.ndarray
    action_high: float
    activation: str = "relu"
    config_hash: str = ""

    def _features(self, z) -> np.ndarray:
        vec = measurement_vector(z) if isinstance(z, OutputMeasurement) else np.asarray(z, float)
        return (vec - self.obs_shift) / self.obs_scale

    def act(self, z) -> float:
        h = self._features(z)
        w1, b1, w2, b2, wm, bm = self.weights
        f = np.tanh if self.activation == "tanh" else lambda v: np.maximum(v, 0.0)
        h = f(h @ w1 + b1)
        h = f(h @ w2 + b2)
        mu = float(h @ wm + bm[0])
        return 0.5 * (math.tanh(mu) + 1.0) * self.action_high

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "shapes": [list(w.shape) for w in self.weights],
            "weights": [w.tolist() for w in self.weights],
            "obs_shift": self.obs_shift.tolist(),
            "obs_scale": self.obs_scale.tolist(),
            "action_high": self.action_high,
            "activation": self.activation,
            "config_hash": self.config_hash,
        }

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "Policy":
        return cls(
            weights=[np.asarray(w, dtype=float) for w in doc["weights"]],
            obs_shift=np.asarray(doc["obs_shift"], dtype=float),
            obs_scale=np.asarray(doc["obs_scale"], dtype=float),
            action_high=float(doc["action_high"]),
            activation=doc.get("activation", "relu"),
            config_hash=doc.get("config_hash", ""),
        )

    @classmethod
    def load(cls, path) -> "Policy":
        with open(path) as f:
            return cls.from_json_dict(json.load(f))


def act(policy: Policy, z: OutputMeasurement) -> float:
    return policy.act(z)


def scripted_taper_policy(
    horizon: int = 80,
    i_max: float = 10.0,
    u_hi: float = 6.0,
    u_lo: float = 4.8,
    knee: float = 0.75,
    gain: float = 40.0,
) -> Policy:
    """Hand-set network weights implementing an SOC-indexed current taper:
    ``u_hi`` below the knee, ``u_lo`` above it, smooth in between.

    Useful as a strong reference controller and for driving the synthesis
    pipeline with a known-certifiable closed loop.
    """
    m_hi = math.atanh(2.0 * u_hi / i_max - 1.0)
    m_lo = math.atanh(2.0 * u_lo / i_max - 1.0)
    c0, c1 = 0.5 * (m_hi + m_lo), 0.5 * (m_hi - m_lo)
    w1 = np.zeros((5, 2))
    b1 = np.zeros(2)
    w1[1, 0] = -gain  # soc is feature 1 and normalized with unit scale
    b1[0] = gain * knee
    w2 = np.zeros((2, 2))
    b2 = np.zeros(2)
    w2[0, 0] = 0.1    # keep the second tanh in its near-linear range
    wm = np.zeros(2)
    bm = np.zeros(1)
    wm[0] = c1 / 0.1
    bm[0] = c0
    shift, scale = observation_norms(horizon, i_max)
    return Policy(weights=[w1, b1, w2, b2, wm, bm], obs_shift=shift,
                  obs_scale=scale, action_high=i_max, activation="tanh")


class ChargingEnv:
    """One training episode on a freshly sampled cell.

    Each construction draws new initial conditions, manufacturing quality
    and state of health; with a ``region`` the initial voltage/temperature
    are drawn uniformly from that rectangle only.
    """

    def __init__(self, seed: int, rcfg: RewardConfig, horizon: int = 320,
                 template: dict | None = None, region=None, dt: float = 15.0):
        if region is not None:
            v_range = (region.v_lo, region.v_hi)
            t_range = (region.t_lo, region.t_hi)
            self.params, self.state = sample_cell(
                seed, template=template, v_range=v_range, t_range_c=t_range)
        else:
            self.params, self.state = sample_cell(seed, template=template)
        self.rcfg = rcfg
        self.horizon = horizon
        self.dt = dt
        self._shift, self._scale = observation_norms(horizon, self.params.i_max)

    @property
    def action_high(self) -> float:
        return self.params.i_max

    def _obs(self) -> np.ndarray:
        z = measure(self.state, self.params)
        return (measurement_vector(z) - self._shift) / self._scale

    def reset(self) -> np.ndarray:
        return self._obs()

    def step(self, current: float):
        prev = self.state
        current = float(np.clip(current, 0.0, self.params.i_max))
        self.state = step(prev, self.params, current, self.dt, max_k=self.horizon)
        r = reward(prev, self.state, self.rcfg, self.dt)
        done = self.state.terminal != RUNNING
        return self._obs(), r, done


def make_env_factory(rcfg: RewardConfig, horizon: int, template: dict | None = None,
                     region=None, dt: float = 15.0):
    def factory(seed: int) -> ChargingEnv:
        return ChargingEnv(seed, rcfg, horizon=horizon, template=template,
                           region=region, dt=dt)

    return factory


# ---------------------------------------------------------------------------
# networks


def _init_mlp(rng, sizes, zero_last=False):
    params = []
    for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        last = i == len(sizes) - 2
        if last and zero_last:
            w = np.zeros((n_in, n_out))
        else:
            w = rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_in, n_out))
        params.append(ad.param(w))
        params.append(ad.param(np.zeros((1, n_out))))
    return params


def _mlp_forward(params, x: ad.Tensor, activation: str) -> ad.Tensor:
    act_fn = ad.tanh if activation == "tanh" else ad.relu
    h = x
    n_layers = len(params) // 2
    for i in range(n_layers):
        h = h @ params[2 * i] + params[2 * i + 1]
        if i < n_layers - 1:
            h = act_fn(h)
    return h


class SacAgent:
    """Twin-critic soft actor-critic with target networks and a tunable
    entropy temperature, all on the in-package tape."""

    def __init__(self, cfg: TrainConfig, obs_dim: int = 5, act_dim: int = 1,
                 activation: str = "relu"):
        self.cfg = cfg
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.activation = activation
        rng = np.random.default_rng(cfg.seed)
        h1, h2 = cfg.hidden
        self.actor = _init_mlp(rng, [obs_dim, h1, h2, 2 * act_dim], zero_last=True)
        self.q1 = _init_mlp(rng, [obs_dim + act_dim, h1, h2, 1])
        self.q2 = _init_mlp(rng, [obs_dim + act_dim, h1, h2, 1])
        self.q1_targ = [ad.param(p.value.copy()) for p in self.q1]
        self.q2_targ = [ad.param(p.value.copy()) for p in self.q2]
        self.log_alpha = ad.param(np.array([[math.log(max(cfg.alpha_init, 1e-8))]]))
        self.opt_actor = ad.Adam(self.actor, lr=cfg.lr)
        self.opt_critic = ad.Adam(self.q1 + self.q2, lr=cfg.lr)
        self.opt_alpha = ad.Adam([self.log_alpha], lr=cfg.alpha_lr)

    # -- policy heads ------------------------------------------------------
    def _actor_heads(self, obs: ad.Tensor):
        out = _mlp_forward(self.actor, obs, self.activation)
        mu = out @ ad.Tensor(np.vstack([np.eye(self.act_dim), np.zeros((self.act_dim, self.act_dim))]))
        ls_raw = out @ ad.Tensor(np.vstack([np.zeros((self.act_dim, self.act_dim)), np.eye(self.act_dim)]))
        log_std = LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (ad.tanh(ls_raw) + 1.0)
        return mu, log_std

    def _sample(self, obs: ad.Tensor, noise: np.ndarray):
        """Reparametrized squashed-Gaussian action (normalized to [0, 1])."""
        mu, log_std = self._actor_heads(obs)
        std = ad.exp(log_std)
        raw = mu + std * ad.Tensor(noise)
        a = ad.tanh(raw)
        u01 = 0.5 * (a + 1.0)
        log_n = -0.5 * ad.Tensor(noise * noise) - log_std - 0.5 * _LOG_2PI
        corr = ad.log(1.0 - ad.square(a) + 1e-6)
        scale_const = math.log(0.5 * self.cfg.action_high)
        logp = ad.sum_(log_n - corr, axis=1, keepdims=True) - scale_const
        return u01, logp

    def _q(self, params, obs: ad.Tensor, act01: ad.Tensor) -> ad.Tensor:
        return _mlp_forward(params, ad.concat([obs, act01], axis=1), self.activation)

    # -- losses (exact analytic gradients via the tape) --------------------
    def critic_loss(self, batch) -> ad.Tensor:
        obs, act01, rew, obs2, done, noise2 = batch
        u2, logp2 = self._sample(ad.Tensor(obs2), noise2)
        alpha = float(np.exp(self.log_alpha.value))
        qt = ad.minimum(
            self._q(self.q1_targ, ad.Tensor(obs2), u2),
            self._q(self.q2_targ, ad.Tensor(obs2), u2),
        )
        y = rew + self.cfg.discount * (1.0 - done) * (qt.value - alpha * logp2.value)
        y_t = ad.Tensor(y)
        q1 = self._q(self.q1, ad.Tensor(obs), ad.Tensor(act01))
        q2 = self._q(self.q2, ad.Tensor(obs), ad.Tensor(act01))
        return 0.5 * (ad.mean(ad.square(q1 - y_t)) + ad.mean(ad.square(q2 - y_t)))

    def actor_loss(self, batch) -> ad.Tensor:
        obs, _, _, _, _, noise = batch
        u, logp = self._sample(ad.Tensor(obs), noise)
        q = ad.minimum(
            self._q(self.q1, ad.Tensor(obs), u),
            self._q(self.q2, ad.Tensor(obs), u),
        )
        alpha = float(np.exp(self.log_alpha.value))
        return ad.mean(alpha * logp - q)

    def alpha_loss(self, batch) -> ad.Tensor:
        obs, _, _, _, _, noise = batch
        _, logp = self._sample(ad.Tensor(obs), noise)
        target = ad.Tensor(logp.value + self.cfg.entropy_target)
        return ad.mean(-(self.log_alpha * target))

    # -- one gradient update ----------------------------------------------
    def update(self, batch) -> dict:
        self.opt_critic.zero_grad()
        for p in self.actor + [self.log_alpha]:
            p.zero_grad()
        lc = self.critic_loss(batch)
        lc.backward()
        self.opt_critic.step()

        self.opt_actor.zero_grad()
        for p in self.q1 + self.q2 + [self.log_alpha]:
            p.zero_grad()
        la = self.actor_loss(batch)
        la.backward()
        self.opt_actor.step()

        lt_val = 0.0
        if self.cfg.autotune_alpha:
            self.opt_alpha.zero_grad()
            lt = self.alpha_loss(batch)
            lt.backward()
            self.opt_alpha.step()
            lt_val = float(lt.value)

        tau = self.cfg.tau
        for targ, src in ((self.q1_targ, self.q1), (self.q2_targ, self.q2)):
            for pt, ps in zip(targ, src):
                pt.value = (1 - tau) * pt.value + tau * ps.value
        return {"critic": float(lc.value), "actor": float(la.value), "alpha": lt_val}

    # -- action interfaces ---------------------------------------------------
    def sample_action(self, obs: np.ndarray, rng: np.random.Generator) -> float:
        mu, log_std = self._actor_heads(ad.Tensor(obs.reshape(1, -1)))
        raw = mu.value + np.exp(log_std.value) * rng.standard_normal((1, self.act_dim))
        return float(0.5 * (np.tanh(raw[0, 0]) + 1.0) * self.cfg.action_high)

    def export_policy(self, obs_shift, obs_scale) -> Policy:
        w1, b1, w2, b2, w_out, b_out = (p.value.copy() for p in self.actor)
        # keep only the mean head of the final layer
        wm = w_out[:, : self.act_dim]
        bm = b_out[:, : self.act_dim]
        return Policy(
            weights=[w1, b1[0], w2, b2[0], wm[:, 0], bm[0]],
            obs_shift=np.asarray(obs_shift, float),
            obs_scale=np.asarray(obs_scale, float),
            action_high=self.cfg.action_high,
            activation=self.activation,
            config_hash=self.cfg.content_hash(),
        )


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.obs2 = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, 1))
        self.rew = np.zeros((capacity, 1))
        self.done = np.zeros((capacity, 1))
        self.ptr = 0
        self.size = 0

    def add(self, obs, act01, rew, obs2, done):
        i = self.ptr
        self.obs[i] = obs
        self.act[i] = act01
        self.rew[i] = rew
        self.obs2[i] = obs2
        self.done[i] = done
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator, act_dim: int = 1):
        idx = rng.integers(0, self.size, size=batch_size)
        noise = rng.standard_normal((batch_size, act_dim))
        return (self.obs[idx], self.act[idx], self.rew[idx], self.obs2[idx],
                self.done[idx], noise)

    def __len__(self):
        return self.size


def train(env_factory, cfg: TrainConfig, rcfg: RewardConfig | None = None) -> Policy:
    """Off-policy training loop; returns the deterministic mean-action policy.

    ``env_factory(seed) -> env`` must yield a fresh episode with
    ``reset() -> obs`` and ``step(current) -> (obs, reward, done)``;
    rewards are expected to already reflect ``rcfg`` (the factory owns the
    reward wiring).  Fully reproducible from ``cfg.seed``.
    """
    rng = np.random.default_rng(cfg.seed + 0x5AC)
    agent = SacAgent(cfg)
    shift, scale = observation_norms(cfg.horizon, cfg.action_high)
    buffer = ReplayBuffer(cfg.replay_capacity, agent.obs_dim)

    env = None
    obs = None
    episode = 0
    for step_i in range(cfg.total_steps):
        if env is None:
            env = env_factory(int(cfg.seed * 1_000_003 + episode))
            episode += 1
            obs = env.reset()
        if step_i < cfg.warmup_steps:
            u = float(rng.uniform(0.0, cfg.action_high))
        else:
            u = agent.sample_action(obs, rng)
        obs2, r, done = env.step(u)
        buffer.add(obs, u / cfg.action_high, r * cfg.reward_scale, obs2, float(done))
        obs = obs2
        if done:
            env = None
        if step_i >= cfg.warmup_steps and step_i % cfg.update_every == 0 and len(buffer) >= cfg.batch_size:
            losses = agent.update(buffer.sample(cfg.batch_size, rng))
            if not all(np.isfinite(v) for v in losses.values()):
                raise TrainingError(
                    f"non-finite loss at step {step_i}: {losses}",
                    policy=agent.export_policy(shift, scale),
                )
    return agent.export_policy(shift, scale)
