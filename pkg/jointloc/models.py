"""Motion and measurement models shared by the generator and the tracker.

Bearings are degrees, clockwise from the +y axis ("north"), in [0, 360).
Range-bearing densities are per metre per degree.

API (important functions):
  - bearing(origin, target) -> float
  - ncv_matrices(dt) -> (A, W)
  - ncv_step(state, process_std, dt, rng) -> state
  - ncv_propagate(particles, process_std, dt, rng) -> ndarray
  - nav_likelihood(g, state, nav_pos_std) -> float
  - inter_agent_likelihood(rho, s_rx, s_tx, noise, range_scale) -> float
  - predict_mot(object_pos, rx_pos, tx_pos, range_scale, monostatic) -> (range, bearing)
  - mot_likelihood(z, object_pos, s_rx, s_tx, noise, range_scale, monostatic) -> float
  - detection_probability(model, object_id, rx, tx) -> float
  - measurement_to_cartesian(z, rx_pos, tx_pos, range_scale, monostatic) -> ndarray
  - conversion_jacobian(z, rx_pos, tx_pos, range_scale, monostatic) -> float
  - clutter_pdf / clutter_measurement_pdf / birth_pdf / sample_birth
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple, Union

import numpy as np
from scipy.stats import norm

from errors import GeometryError

ArrayLike = Union[np.ndarray, Tuple[float, float]]


def _vec2(value: ArrayLike, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape != (2,):
        raise ValueError(f"{name} must be a 2-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr}")
    return arr


@dataclass
class KinematicState:
    """2D position (m) and velocity (m/s)."""

    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self) -> None:
        self.position = _vec2(self.position, "position")
        self.velocity = _vec2(self.velocity, "velocity")

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])

    @classmethod
    def from_array(cls, arr: np.ndarray):
        arr = np.asarray(arr, dtype=float).reshape(-1)
        if arr.shape != (4,):
            raise ValueError(f"state array must have 4 entries, got {arr.shape}")
        return cls(position=arr[:2], velocity=arr[2:])


class AgentState(KinematicState):
    pass


class TargetState(KinematicState):
    pass


@dataclass(frozen=True)
class RangeBearing:
    range: float
    bearing: float

    def __post_init__(self) -> None:
        r = float(self.range)
        b = float(self.bearing)
        if not np.isfinite(r) or r < 0:
            raise ValueError(f"range must be finite and non-negative, got {self.range}")
        if not np.isfinite(b):
            raise ValueError(f"bearing must be finite, got {self.bearing}")
        object.__setattr__(self, "range", r)
        object.__setattr__(self, "bearing", float(wrap_bearing(b)))


@dataclass
class NoiseSpec:
    range_std: float = 20.0
    bearing_std: float = 1.0
    nav_pos_std: Dict[int, float] = field(default_factory=lambda: {3: 20.0, 4: 5.0})
    process_std_agent: float = 0.1
    process_std_target: float = 0.1

    def __post_init__(self) -> None:
        for name in ("range_std", "bearing_std", "process_std_agent", "process_std_target"):
            val = float(getattr(self, name))
            if not np.isfinite(val) or val <= 0:
                raise ValueError(f"{name} must be strictly positive, got {val}")
            setattr(self, name, val)
        nav: Dict[int, float] = {}
        for agent, std in dict(self.nav_pos_std).items():
            std = float(std)
            if not np.isfinite(std) or std <= 0:
                raise ValueError(f"nav_pos_std for agent {agent} must be strictly positive, got {std}")
            nav[int(agent)] = std
        self.nav_pos_std = nav


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle, also used for velocity boxes."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self) -> None:
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError(f"rectangle must have positive area, got {self}")

    @classmethod
    def centered(cls, half_x: float, half_y: Optional[float] = None) -> "Rect":
        half_y = half_x if half_y is None else half_y
        return cls(-half_x, half_x, -half_y, half_y)

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return (
            (pts[..., 0] >= self.x_min)
            & (pts[..., 0] <= self.x_max)
            & (pts[..., 1] >= self.y_min)
            & (pts[..., 1] <= self.y_max)
        )

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        low = np.array([self.x_min, self.y_min])
        high = np.array([self.x_max, self.y_max])
        return rng.uniform(low, high, size=(n, 2))


@dataclass
class ModelConfig:
    dt: float = 30.0
    detection_prob: float = 0.7
    clutter_mean: float = 3.0
    clutter_region: Rect = field(default_factory=lambda: Rect.centered(5000.0))
    birth_mean: float = 0.1
    birth_pos_std: float = 500.0
    birth_vel_box: Rect = field(default_factory=lambda: Rect.centered(1.54))
    survival_prob: float = 0.99
    range_scale: float = 2.0
    agent_reflectors: bool = True

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        for name in ("detection_prob", "survival_prob"):
            val = float(getattr(self, name))
            if not 0.0 <= val <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {val}")
        for name in ("clutter_mean", "birth_mean"):
            if float(getattr(self, name)) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not self.birth_pos_std > 0:
            raise ValueError(f"birth_pos_std must be positive, got {self.birth_pos_std}")
        if not self.range_scale > 0:
            raise ValueError(f"range_scale must be positive, got {self.range_scale}")


# ---------------------------------------------------------------------------
# Angles


def wrap_bearing(angle):
    """Wrap degrees into [0, 360)."""
    wrapped = np.mod(angle, 360.0)
    # np.mod of a tiny negative number rounds up to exactly 360
    return np.where(wrapped >= 360.0, 0.0, wrapped)


def bearing_residual(measured, predicted):
    """Shortest signed angular difference in degrees, in [-180, 180)."""
    return np.mod(np.asarray(measured) - np.asarray(predicted) + 180.0, 360.0) - 180.0


def bearing_array(dx, dy):
    return wrap_bearing(np.degrees(np.arctan2(dx, dy)))


def bearing(origin: ArrayLike, target: ArrayLike) -> float:
    o = _vec2(origin, "origin")
    t = _vec2(target, "target")
    d = t - o
    if d[0] == 0.0 and d[1] == 0.0:
        raise GeometryError(f"undefined bearing: coincident points {o}")
    return float(bearing_array(d[0], d[1]))


# ---------------------------------------------------------------------------
# Motion


def ncv_matrices(dt: float) -> Tuple[np.ndarray, np.ndarray]:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    eye = np.eye(2)
    A = np.block([[eye, dt * eye], [np.zeros((2, 2)), eye]])
    W = np.vstack([0.5 * dt * dt * eye, dt * eye])
    return A, W


def ncv_propagate(particles: np.ndarray, process_std: float, dt: float, rng: np.random.Generator) -> np.ndarray:
    """Push an (N, 4) particle array through the NCV model."""
    if process_std < 0:
        raise ValueError(f"process_std must be non-negative, got {process_std}")
    A, W = ncv_matrices(dt)
    parts = np.atleast_2d(np.asarray(particles, dtype=float))
    noise = rng.normal(0.0, process_std, size=(parts.shape[0], 2))
    return parts @ A.T + noise @ W.T


def ncv_step(state: KinematicState, process_std: float, dt: float, rng: np.random.Generator) -> KinematicState:
    moved = ncv_propagate(state.as_array()[None, :], process_std, dt, rng)[0]
    return type(state).from_array(moved)


# ---------------------------------------------------------------------------
# Likelihoods


def range_bearing_density(z_range, z_bearing, pred_range, pred_bearing, noise: NoiseSpec):
    """Gaussian range times wrapped-Gaussian bearing density."""
    return norm.pdf(z_range, loc=pred_range, scale=noise.range_std) * norm.pdf(
        bearing_residual(z_bearing, pred_bearing), loc=0.0, scale=noise.bearing_std
    )


def nav_likelihood_array(g: ArrayLike, positions: np.ndarray, nav_pos_std: float) -> np.ndarray:
    if not nav_pos_std > 0:
        raise ValueError(f"nav_pos_std must be positive, got {nav_pos_std}")
    g = _vec2(g, "g")
    pos = np.asarray(positions, dtype=float)
    return norm.pdf(g[0], loc=pos[..., 0], scale=nav_pos_std) * norm.pdf(g[1], loc=pos[..., 1], scale=nav_pos_std)


def nav_likelihood(g: ArrayLike, state: KinematicState, nav_pos_std: float) -> float:
    return float(nav_likelihood_array(g, state.position, nav_pos_std))


def predict_inter_agent(rx_pos: np.ndarray, tx_pos: np.ndarray, range_scale: float):
    """Predicted (range, bearing, one-way distance) for a link rx <- tx, broadcasting over leading axes."""
    d = np.asarray(tx_pos, dtype=float) - np.asarray(rx_pos, dtype=float)
    dist = np.hypot(d[..., 0], d[..., 1])
    return range_scale * dist, bearing_array(d[..., 0], d[..., 1]), dist


def predict_mot(object_pos, rx_pos, tx_pos, range_scale: float, monostatic: bool):
    """Predicted (range, bearing, distance to rx) of a reflection, broadcasting over leading axes."""
    obj = np.asarray(object_pos, dtype=float)
    d_rx = obj - np.asarray(rx_pos, dtype=float)
    dist_rx = np.hypot(d_rx[..., 0], d_rx[..., 1])
    if monostatic:
        rng_pred = range_scale * dist_rx
    else:
        d_tx = obj - np.asarray(tx_pos, dtype=float)
        rng_pred = dist_rx + np.hypot(d_tx[..., 0], d_tx[..., 1])
    return rng_pred, bearing_array(d_rx[..., 0], d_rx[..., 1]), dist_rx


def _masked_density(z: RangeBearing, pred_range, pred_bearing, dist, noise: NoiseSpec, strict: bool):
    coincident = np.asarray(dist) == 0.0
    if strict and np.any(coincident):
        raise GeometryError("undefined bearing: coincident positions")
    dens = range_bearing_density(z.range, z.bearing, pred_range, pred_bearing, noise)
    return np.where(coincident, 0.0, dens)


def inter_agent_likelihood_array(
    rho: RangeBearing, rx_pos, tx_pos, noise: NoiseSpec, range_scale: float, strict: bool = True
) -> np.ndarray:
    pr, pb, dist = predict_inter_agent(rx_pos, tx_pos, range_scale)
    return _masked_density(rho, pr, pb, dist, noise, strict)


def inter_agent_likelihood(
    rho: RangeBearing, s_rx: KinematicState, s_tx: KinematicState, noise: NoiseSpec, range_scale: float = 2.0
) -> float:
    return float(inter_agent_likelihood_array(rho, s_rx.position, s_tx.position, noise, range_scale))


def mot_likelihood_array(
    z: RangeBearing, object_pos, rx_pos, tx_pos, noise: NoiseSpec, range_scale: float, monostatic: bool,
    strict: bool = True,
) -> np.ndarray:
    pr, pb, dist = predict_mot(object_pos, rx_pos, tx_pos, range_scale, monostatic)
    return _masked_density(z, pr, pb, dist, noise, strict)


def mot_likelihood(
    z: RangeBearing, object_pos: ArrayLike, s_rx: KinematicState, s_tx: KinematicState, noise: NoiseSpec,
    range_scale: float = 2.0, monostatic: bool = False,
) -> float:
    obj = _vec2(object_pos, "object_pos")
    return float(mot_likelihood_array(z, obj, s_rx.position, s_tx.position, noise, range_scale, monostatic))


def detection_probability(
    model: ModelConfig, object_id: Optional[int] = None, rx: Optional[int] = None, tx: Optional[int] = None
) -> float:
    """P_d for an object seen by pair (rx, tx); zero for the pair's own agents.

    ``object_id`` is an agent id when the object is an agent, None for PTs.
    """
    if object_id is not None and object_id in (rx, tx):
        return 0.0
    return float(model.detection_prob)


# ---------------------------------------------------------------------------
# Measurement-space <-> Cartesian


def _one_way_distance(z_range, u: np.ndarray, rx_pos: np.ndarray, tx_pos: np.ndarray, range_scale, monostatic):
    if monostatic:
        return np.asarray(z_range, dtype=float) / range_scale, None
    c = rx_pos - tx_pos
    uc = u[..., 0] * c[..., 0] + u[..., 1] * c[..., 1]
    c2 = c[..., 0] ** 2 + c[..., 1] ** 2
    den = 2.0 * (z_range + uc)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(den > 0, (z_range ** 2 - c2) / np.where(den > 0, den, 1.0), 0.0)
    return np.maximum(d, 0.0), uc


def measurement_to_cartesian(
    z: RangeBearing, rx_pos: ArrayLike, tx_pos: ArrayLike, range_scale: float = 2.0, monostatic: bool = False
) -> np.ndarray:
    """Point on the bearing ray from rx whose predicted range equals the measured range.

    For bistatic pairs the one-way distance d solves d + |rx + d*u - tx| = range,
    which is linear in d. Ranges shorter than the baseline clamp to d = 0.
    """
    rx = _vec2(rx_pos, "rx_pos")
    tx = _vec2(tx_pos, "tx_pos")
    b = np.radians(z.bearing)
    u = np.array([np.sin(b), np.cos(b)])
    d, _ = _one_way_distance(z.range, u, rx, tx, range_scale, monostatic)
    return rx + float(d) * u


def conversion_jacobian(
    z: RangeBearing, rx_pos: ArrayLike, tx_pos: ArrayLike, range_scale: float = 2.0, monostatic: bool = False,
    min_distance: float = 1.0,
) -> float:
    """|det d(x, y)/d(range, bearing)| of the measurement -> Cartesian map, in m^2 per (m * degree)."""
    rx = _vec2(rx_pos, "rx_pos")
    tx = _vec2(tx_pos, "tx_pos")
    b = np.radians(z.bearing)
    u = np.array([np.sin(b), np.cos(b)])
    d, uc = _one_way_distance(z.range, u, rx, tx, range_scale, monostatic)
    d = max(float(d), min_distance)
    deg = np.pi / 180.0
    if monostatic:
        return d * deg / range_scale
    e = max(float(z.range) - float(d), 1e-9)
    dd_dr = 1.0 / (1.0 + (d + float(uc)) / e)
    return abs(dd_dr) * d * deg


def clutter_pdf(
    z: RangeBearing, clutter_region: Rect, rx_pos: ArrayLike, tx_pos: ArrayLike, range_scale: float = 2.0,
    monostatic: bool = False,
) -> float:
    """Cartesian clutter density (per m^2) at the point z maps to; 0 outside the region."""
    point = measurement_to_cartesian(z, rx_pos, tx_pos, range_scale, monostatic)
    if not bool(clutter_region.contains(point)):
        return 0.0
    return 1.0 / clutter_region.area


def clutter_measurement_pdf(
    z: RangeBearing, clutter_region: Rect, rx_pos: ArrayLike, tx_pos: ArrayLike, range_scale: float = 2.0,
    monostatic: bool = False, clip: bool = True,
) -> float:
    """Uniform clutter density expressed per metre per degree of measurement space.

    With ``clip=False`` the density is extended beyond the region so that
    likelihood ratios stay finite for measurements converted just outside it.
    """
    if clip and clutter_pdf(z, clutter_region, rx_pos, tx_pos, range_scale, monostatic) == 0.0:
        return 0.0
    return conversion_jacobian(z, rx_pos, tx_pos, range_scale, monostatic) / clutter_region.area


# ---------------------------------------------------------------------------
# Birth prior


def birth_pdf(
    x: KinematicState, z: RangeBearing, s_rx: KinematicState, s_tx: KinematicState, model: ModelConfig,
    monostatic: bool = False,
) -> float:
    center = measurement_to_cartesian(z, s_rx.position, s_tx.position, model.range_scale, monostatic)
    pos_density = norm.pdf(x.position[0], loc=center[0], scale=model.birth_pos_std) * norm.pdf(
        x.position[1], loc=center[1], scale=model.birth_pos_std
    )
    box = model.birth_vel_box
    vel_density = 1.0 / box.area if bool(box.contains(x.velocity)) else 0.0
    return float(pos_density * vel_density)


def sample_birth(
    z: RangeBearing, rx_pos: ArrayLike, tx_pos: ArrayLike, model: ModelConfig, n: int, rng: np.random.Generator,
    monostatic: bool = False,
) -> np.ndarray:
    """Draw n states (n, 4) from the birth prior attached to measurement z."""
    center = measurement_to_cartesian(z, rx_pos, tx_pos, model.range_scale, monostatic)
    pos = center + rng.normal(0.0, model.birth_pos_std, size=(n, 2))
    vel = model.birth_vel_box.sample(n, rng)
    return np.hstack([pos, vel])
