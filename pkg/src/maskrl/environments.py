"""Benchmark environments: Seeker reach-avoid and the two quadrotors.

Dynamics, rewards and set bounds follow the benchmark definitions used by
the relevant-action-set computation:

* Seeker: single integrator ds = a on [-10, 10]^2; reward +100 at the
  goal, -100 on collision (obstacle disk or leaving the bounds), else
  -1 - distance(goal, next position).
* 2-d quadrotor: planar thrust-pair model, state [x, z, xd, zd, th, thd],
  disturbance on the translational accelerations; reward
  exp(-||s - s*|| - 0.005 * ||normalized action||_1) with s* = 0.
* 3-d quadrotor: twelve-state linear model with four inputs; same reward
  with the normalized-action term extended over all four dimensions.

All stepping is explicit-RK4 for the quadrotors with the disturbance held
constant across the step, and trajectories are bit-reproducible for a
fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import IntervalBox, Zonotope

__all__ = [
    "ENV_TAGS",
    "SeekerConfig",
    "SeekerEnv",
    "QuadConfig",
    "QuadEnv",
    "make_env",
    "quad_derivative",
    "dynamics_jacobians",
    "env_action_space",
    "env_template",
]

ENV_TAGS = ("seeker", "quad2d", "quad3d")

# 2-d quadrotor parameters.
GRAVITY = 9.81
THRUST_GAIN = 1.0  # k
ANGLE_STIFFNESS = 70.0  # d0
ANGLE_DAMPING = 17.0  # d1
THRUST_TORQUE = 55.0  # n0

QUAD2D_ACTION_LOW = np.array([6.83, 6.83])
QUAD2D_ACTION_HIGH = np.array([8.59, 8.59])
QUAD2D_STATE_LOW = np.array([-1.7, 0.3, -0.8, -1.0, -np.pi / 12, -np.pi / 2])
QUAD2D_STATE_HIGH = np.array([1.7, 2.0, 0.8, 1.0, np.pi / 12, np.pi / 2])
QUAD2D_DISTURBANCE = 0.08  # W = [-0.08, 0.08]^2 on the accelerations

QUAD3D_ACTION_LOW = np.array([-9.81, -0.5, -0.5, -0.5])
QUAD3D_ACTION_HIGH = np.array([2.38, 0.5, 0.5, 0.5])
QUAD3D_STATE_LOW = np.array(
    [-3, -3, -3, -3, -3, -3, -np.pi / 4, -np.pi / 4, -np.pi, -3, -3, -3],
    dtype=float,
)
QUAD3D_STATE_HIGH = -QUAD3D_STATE_LOW

# Template generator matrices for the relevant-action-set programs.
SEEKER_TEMPLATE = np.array([[1.0, 1.0, 1.0, 0.0], [1.0, -1.0, 0.0, 1.0]])
QUAD2D_TEMPLATE = np.array([[1.0, 1.0, 1.0], [1.0, -1.0, 0.0]])
QUAD3D_TEMPLATE = np.eye(4)


def quad_derivative(model: str, s: np.ndarray, a: np.ndarray, w) -> np.ndarray:
    """Continuous-time state derivative f(s, a, w) for the quadrotors.

    The 2-d state is ordered [x, z, xd, zd, th, thd]; each printed dynamics
    expression is assigned to the derivative slot of its matching state
    component, and the disturbance enters only the two translational
    acceleration slots.
    """
    if model == "quad2d":
        x, z, xd, zd, th, thd = s
        a1, a2 = a
        thrust = (a1 + a2) * THRUST_GAIN
        out = np.empty(6)
        out[0] = xd
        out[1] = zd
        out[2] = thrust * np.sin(th)
        out[3] = -GRAVITY + thrust * np.cos(th)
        out[4] = thd
        out[5] = -ANGLE_STIFFNESS * th - ANGLE_DAMPING * thd + THRUST_TORQUE * (
            -a1 + a2
        )
        if w is not None:
            out[2] += w[0]
            out[3] += w[1]
        return out
    if model == "quad3d":
        out = np.empty(12)
        out[0:3] = s[3:6]
        out[3] = -GRAVITY * s[7]
        out[4] = GRAVITY * s[6]
        out[5] = a[0]
        out[6:9] = s[9:12]
        out[9:12] = a[1:4]
        return out
    if model == "seeker":
        return np.asarray(a, dtype=float)
    raise ValueError(f"unknown model {model!r}")


def dynamics_jacobians(model: str, s: np.ndarray, a: np.ndarray):
    """Analytic Jacobians (d f/d s, d f/d a, disturbance injection E)."""
    if model == "seeker":
        return np.zeros((2, 2)), np.eye(2), None
    if model == "quad2d":
        th = s[4]
        thrust = (a[0] + a[1]) * THRUST_GAIN
        j_s = np.zeros((6, 6))
        j_s[0, 2] = 1.0
        j_s[1, 3] = 1.0
        j_s[2, 4] = thrust * np.cos(th)
        j_s[3, 4] = -thrust * np.sin(th)
        j_s[4, 5] = 1.0
        j_s[5, 4] = -ANGLE_STIFFNESS
        j_s[5, 5] = -ANGLE_DAMPING
        j_a = np.zeros((6, 2))
        j_a[2, :] = THRUST_GAIN * np.sin(th)
        j_a[3, :] = THRUST_GAIN * np.cos(th)
        j_a[5, 0] = -THRUST_TORQUE
        j_a[5, 1] = THRUST_TORQUE
        e = np.zeros((6, 2))
        e[2, 0] = 1.0
        e[3, 1] = 1.0
        return j_s, j_a, e
    if model == "quad3d":
        j_s = np.zeros((12, 12))
        j_s[0, 3] = j_s[1, 4] = j_s[2, 5] = 1.0
        j_s[3, 7] = -GRAVITY
        j_s[4, 6] = GRAVITY
        j_s[6, 9] = j_s[7, 10] = j_s[8, 11] = 1.0
        j_a = np.zeros((12, 4))
        j_a[5, 0] = 1.0
        j_a[9, 1] = j_a[10, 2] = j_a[11, 3] = 1.0
        return j_s, j_a, None
    raise ValueError(f"unknown model {model!r}")


def env_action_space(tag: str) -> IntervalBox:
    if tag == "seeker":
        return IntervalBox([-1.0, -1.0], [1.0, 1.0])
    if tag == "quad2d":
        return IntervalBox(QUAD2D_ACTION_LOW, QUAD2D_ACTION_HIGH)
    if tag == "quad3d":
        return IntervalBox(QUAD3D_ACTION_LOW, QUAD3D_ACTION_HIGH)
    raise ValueError(f"unknown environment {tag!r}")


def env_template(tag: str) -> np.ndarray:
    return {
        "seeker": SEEKER_TEMPLATE,
        "quad2d": QUAD2D_TEMPLATE,
        "quad3d": QUAD3D_TEMPLATE,
    }[tag]


# ----------------------------------------------------------------------- seeker


@dataclass
class SeekerConfig:
    """Episode geometry.

    The defaults are calibrated for desk-scale training: the horizon is
    short enough that colliding costs more return than wandering (which
    is what makes the masks' no-collision guarantee visible in the very
    first training windows), the goal disk is reachable by undirected
    exploration, and resets keep start and goal a bounded distance apart.
    """

    bound: float = 10.0
    goal_radius: float = 2.5
    horizon: int = 20
    dt: float = 1.0
    obstacle_radius_range: tuple[float, float] = (1.5, 3.5)
    separation_range: tuple[float, float] = (3.0, 7.0)


@dataclass
class SeekerState:
    position: np.ndarray
    goal: np.ndarray
    obstacle_center: np.ndarray
    obstacle_radius: float
    steps: int = 0


def _segment_distance(p, q, o) -> float:
    """Distance from point o to the segment p-q."""
    d = q - p
    denom = float(d @ d)
    if denom <= 1e-300:
        return float(np.linalg.norm(o - p))
    t = float(np.clip((o - p) @ d / denom, 0.0, 1.0))
    return float(np.linalg.norm(p + t * d - o))


class SeekerEnv:
    """Reach the goal, avoid the obstacle disk, stay inside the box.

    The observation exposes everything episode-specific the policy needs:
    [position, goal - position, obstacle - position, obstacle radius].
    """

    tag = "seeker"
    observation_dim = 7
    action_dim = 2

    def __init__(self, config: SeekerConfig | None = None, seed: int = 0):
        self.config = config or SeekerConfig()
        self.rng = np.random.default_rng(seed)
        self.state: SeekerState | None = None

    @property
    def action_space(self) -> IntervalBox:
        return env_action_space("seeker")

    def observe(self) -> np.ndarray:
        st = self.state
        return np.concatenate(
            [
                st.position,
                st.goal - st.position,
                st.obstacle_center - st.position,
                [st.obstacle_radius],
            ]
        )

    def reset(self) -> np.ndarray:
        cfg = self.config
        b = cfg.bound
        lo = max(cfg.separation_range[0], cfg.goal_radius + 0.5)
        hi = cfg.separation_range[1]
        for _ in range(10000):
            obstacle = self.rng.uniform(-b, b, size=2)
            radius = float(self.rng.uniform(*cfg.obstacle_radius_range))
            pos = self.rng.uniform(-b, b, size=2)
            goal = self.rng.uniform(-b, b, size=2)
            if not lo <= np.linalg.norm(goal - pos) <= hi:
                continue
            if np.linalg.norm(pos - obstacle) <= radius + 1e-6:
                continue
            if np.linalg.norm(goal - obstacle) <= radius:
                continue
            # The obstacle must block the straight path from start to goal.
            if _segment_distance(pos, goal, obstacle) >= radius:
                continue
            self.state = SeekerState(pos, goal, obstacle, radius)
            return self.observe()
        raise RuntimeError("seeker reset rejection sampling did not converge")

    def step(self, action) -> tuple[np.ndarray, float, bool, dict]:
        st = self.state
        cfg = self.config
        a = np.asarray(action, dtype=float)
        assert np.abs(a).max() <= 1.0 + 1e-6, "action outside the action space"
        nxt = st.position + cfg.dt * a
        st.steps += 1
        info = {"goal": False, "collision": False}
        dist_goal = float(np.linalg.norm(st.goal - nxt))
        outside = bool(np.abs(nxt).max() > cfg.bound)
        inside_obstacle = (
            float(np.linalg.norm(nxt - st.obstacle_center)) < st.obstacle_radius
        )
        if dist_goal <= cfg.goal_radius:
            reward, done = 100.0, True
            info["goal"] = True
        elif outside or inside_obstacle:
            reward, done = -100.0, True
            info["collision"] = True
        else:
            reward = -1.0 - dist_goal
            done = st.steps >= cfg.horizon
        st.position = nxt
        return self.observe(), reward, done, info


# -------------------------------------------------------------------- quadrotor


@dataclass
class QuadConfig:
    model: str = "quad2d"
    dt: float = 0.1
    horizon: int = 200
    reset_fraction: float = 0.2  # uniform reset inside this fraction of the box
    disturbed: bool = True

    state_low: np.ndarray = field(init=False)
    state_high: np.ndarray = field(init=False)
    action_low: np.ndarray = field(init=False)
    action_high: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.model == "quad2d":
            self.state_low, self.state_high = QUAD2D_STATE_LOW, QUAD2D_STATE_HIGH
            self.action_low, self.action_high = QUAD2D_ACTION_LOW, QUAD2D_ACTION_HIGH
        elif self.model == "quad3d":
            self.state_low, self.state_high = QUAD3D_STATE_LOW, QUAD3D_STATE_HIGH
            self.action_low, self.action_high = QUAD3D_ACTION_LOW, QUAD3D_ACTION_HIGH
        else:
            raise ValueError(f"unknown quad model {self.model!r}")


def rk4_step(model: str, s: np.ndarray, a: np.ndarray, w, dt: float) -> np.ndarray:
    k1 = quad_derivative(model, s, a, w)
    k2 = quad_derivative(model, s + 0.5 * dt * k1, a, w)
    k3 = quad_derivative(model, s + 0.5 * dt * k2, a, w)
    k4 = quad_derivative(model, s + dt * k3, a, w)
    return s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class QuadEnv:
    """Stabilization toward s* = 0 under bounded thrust commands."""

    def __init__(self, config: QuadConfig | None = None, seed: int = 0):
        self.config = config or QuadConfig()
        self.rng = np.random.default_rng(seed)
        self.state: np.ndarray | None = None
        self.steps = 0

    @property
    def tag(self) -> str:
        return self.config.model

    @property
    def observation_dim(self) -> int:
        return self.config.state_low.size

    @property
    def action_dim(self) -> int:
        return self.config.action_low.size

    @property
    def action_space(self) -> IntervalBox:
        return IntervalBox(self.config.action_low, self.config.action_high)

    def disturbance_set(self) -> Zonotope | None:
        if self.config.model == "quad2d" and self.config.disturbed:
            return Zonotope(
                np.zeros(2), QUAD2D_DISTURBANCE * np.eye(2)
            )
        return None

    def observe(self) -> np.ndarray:
        return self.state.copy()

    def reset(self) -> np.ndarray:
        cfg = self.config
        center = 0.5 * (cfg.state_low + cfg.state_high)
        half = 0.5 * (cfg.state_high - cfg.state_low) * cfg.reset_fraction
        self.state = self.rng.uniform(center - half, center + half)
        self.steps = 0
        return self.observe()

    def reward(self, s: np.ndarray, a: np.ndarray) -> float:
        cfg = self.config
        normalized = (a - cfg.action_low) / (cfg.action_high - cfg.action_low)
        return float(
            np.exp(-np.linalg.norm(s) - 0.005 * np.abs(normalized).sum())
        )

    def step(self, action) -> tuple[np.ndarray, float, bool, dict]:
        cfg = self.config
        a = np.asarray(action, dtype=float)
        assert np.all(a >= cfg.action_low - 1e-6) and np.all(
            a <= cfg.action_high + 1e-6
        ), "action outside the action space"
        w = None
        if cfg.model == "quad2d" and cfg.disturbed:
            w = self.rng.uniform(-QUAD2D_DISTURBANCE, QUAD2D_DISTURBANCE, size=2)
        reward = self.reward(self.state, a)
        nxt = rk4_step(cfg.model, self.state, a, w, cfg.dt)
        self.steps += 1
        out_of_bounds = bool(
            np.any(nxt < cfg.state_low) or np.any(nxt > cfg.state_high)
        )
        done = out_of_bounds or self.steps >= cfg.horizon
        self.state = nxt
        return self.observe(), reward, done, {"out_of_bounds": out_of_bounds}


def make_env(tag: str, seed: int = 0, **overrides):
    if tag == "seeker":
        return SeekerEnv(SeekerConfig(**overrides), seed=seed)
    if tag in ("quad2d", "quad3d"):
        return QuadEnv(QuadConfig(model=tag, **overrides), seed=seed)
    raise ValueError(f"unknown environment {tag!r}")
