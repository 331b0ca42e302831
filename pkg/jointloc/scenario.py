"""Synthetic ground truth and measurement frames.

API (important functions):
  - paper_scenario_spec() -> ScenarioSpec
  - generate_truth(spec, seed) -> ScenarioTruth
  - build_paper_scenario(seed) -> ScenarioTruth
  - synthesize_frame(truth, t, seed) -> MeasurementFrame
  - sample_agent_prior(truth, num_particles, seed) -> {agent: AgentBelief}
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from belief import AgentBelief
from errors import ConfigError
from models import ModelConfig, NoiseSpec, RangeBearing, Rect, predict_inter_agent, predict_mot
from streams import Purpose, substream

logger = logging.getLogger("jointloc.scenario")

PairKey = Tuple[int, int]


# ---------------------------------------------------------------------------
# Frames


@dataclass(frozen=True)
class Link:
    rx: int
    tx: int
    measurement: RangeBearing


@dataclass
class MeasurementFrame:
    t: int
    nav: Dict[int, np.ndarray] = field(default_factory=dict)
    inter_agent: List[Link] = field(default_factory=list)
    mot: Dict[PairKey, List[RangeBearing]] = field(default_factory=dict)

    def mot_for(self, rx: int, tx: int) -> List[RangeBearing]:
        return self.mot.get((rx, tx), [])

    @property
    def mot_count(self) -> int:
        return sum(len(v) for v in self.mot.values())


# ---------------------------------------------------------------------------
# Scenario description


@dataclass
class AgentTrajectory:
    """Deterministic agent motion: ``circle``, ``static`` or ``linear``."""

    agent_id: int
    kind: str = "static"
    center: Tuple[float, float] = (0.0, 0.0)
    radius: float = 0.0
    phase_deg: float = 0.0
    speed: float = 0.0
    clockwise: bool = False
    position: Tuple[float, float] = (0.0, 0.0)
    velocity: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if self.kind not in ("circle", "static", "linear"):
            raise ConfigError(f"unknown trajectory kind '{self.kind}' for agent {self.agent_id}")
        if self.kind == "circle" and not self.radius > 0:
            raise ConfigError(f"circle trajectory of agent {self.agent_id} needs a positive radius")

    def state_at(self, t: int, dt: float) -> np.ndarray:
        if self.kind == "static":
            return np.array([self.position[0], self.position[1], 0.0, 0.0])
        if self.kind == "linear":
            p = np.asarray(self.position, dtype=float) + t * dt * np.asarray(self.velocity, dtype=float)
            return np.array([p[0], p[1], self.velocity[0], self.velocity[1]])
        sign = -1.0 if self.clockwise else 1.0
        omega = sign * self.speed / self.radius
        theta = np.radians(self.phase_deg) + omega * dt * t
        c = np.asarray(self.center, dtype=float)
        pos = c + self.radius * np.array([np.cos(theta), np.sin(theta)])
        vel = self.radius * omega * np.array([-np.sin(theta), np.cos(theta)])
        return np.array([pos[0], pos[1], vel[0], vel[1]])


@dataclass
class TargetSpec:
    target_id: int
    start: int
    end: int
    position: Optional[Tuple[float, float]] = None
    velocity: Optional[Tuple[float, float]] = None


@dataclass(frozen=True)
class Outage:
    """Deletes links between any of ``agents`` and ``partner`` (any agent when None) for t in [start, end]."""

    agents: Tuple[int, ...]
    start: int
    end: int
    partner: Optional[int] = None

    def blocks(self, a: int, b: int, t: int) -> bool:
        if not self.start <= t <= self.end:
            return False
        for x, y in ((a, b), (b, a)):
            if x in self.agents and (self.partner is None or y == self.partner):
                return True
        return False


@dataclass
class ScenarioSpec:
    horizon: int = 50
    agents: List[AgentTrajectory] = field(default_factory=list)
    receivers: Tuple[int, ...] = (1, 2, 3)
    transmitters: Tuple[int, ...] = (4,)
    links: Optional[List[PairKey]] = None
    targets: List[TargetSpec] = field(default_factory=list)
    outages: List[Outage] = field(default_factory=list)
    target_spawn_region: Rect = field(default_factory=lambda: Rect.centered(3000.0))
    target_velocity_box: Rect = field(default_factory=lambda: Rect.centered(1.54))
    prior_radius: float = 150.0
    prior_velocity_box: Rect = field(default_factory=lambda: Rect.centered(2.57))
    model: ModelConfig = field(default_factory=ModelConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ConfigError(f"horizon must be at least 1, got {self.horizon}")
        ids = [a.agent_id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate agent ids in {ids}")
        known = set(ids)
        for role, members in (("receiver", self.receivers), ("transmitter", self.transmitters)):
            for a in members:
                if a not in known:
                    raise ConfigError(f"{role} {a} is not a configured agent")
        for a in self.noise.nav_pos_std:
            if a not in known:
                raise ConfigError(f"navigation std given for unknown agent {a}")
        for rx, tx in self.links or []:
            if rx not in known or tx not in known or rx == tx:
                raise ConfigError(f"invalid inter-agent link ({rx}, {tx})")
        for tgt in self.targets:
            if not 1 <= tgt.start <= tgt.end <= self.horizon:
                raise ConfigError(
                    f"target {tgt.target_id} window [{tgt.start}, {tgt.end}] outside [1, {self.horizon}]"
                )

    @property
    def agent_ids(self) -> List[int]:
        return sorted(a.agent_id for a in self.agents)

    def pair_keys(self) -> List[PairKey]:
        """Agent pairs (rx, tx) producing MOT measurements, sorted by (rx, tx)."""
        return sorted((rx, tx) for rx in self.receivers for tx in self.transmitters)

    def link_keys(self) -> List[PairKey]:
        """Inter-agent links (rx, tx); by default every receiver-transmitter pair of distinct agents."""
        if self.links is not None:
            return list(self.links)
        return [(rx, tx) for rx, tx in self.pair_keys() if rx != tx]

    def link_available(self, rx: int, tx: int, t: int) -> bool:
        return not any(o.blocks(rx, tx, t) for o in self.outages)


def paper_scenario_spec(
    model: Optional[ModelConfig] = None, noise: Optional[NoiseSpec] = None, phases_deg: Sequence[float] = (0.0, 120.0, 240.0)
) -> ScenarioSpec:
    """Three receivers circling an anchored transmitter; four targets; outage of agents 1-2."""
    agents = [
        AgentTrajectory(agent_id=i + 1, kind="circle", radius=3500.0, phase_deg=ph, speed=0.69)
        for i, ph in enumerate(phases_deg)
    ]
    agents.append(AgentTrajectory(agent_id=4, kind="static", position=(0.0, 0.0)))
    targets = [
        TargetSpec(1, 5, 35),
        TargetSpec(2, 10, 40),
        TargetSpec(3, 20, 40),
        TargetSpec(4, 30, 45),
    ]
    return ScenarioSpec(
        horizon=50,
        agents=agents,
        receivers=(1, 2, 3),
        transmitters=(4,),
        targets=targets,
        outages=[Outage(agents=(1, 2), start=10, end=40, partner=4)],
        model=model or ModelConfig(),
        noise=noise or NoiseSpec(),
    )


# ---------------------------------------------------------------------------
# Ground truth


@dataclass
class TargetTrack:
    target_id: int
    start: int
    end: int
    states: np.ndarray  # (end - start + 1, 4)

    def active(self, t: int) -> bool:
        return self.start <= t <= self.end

    def state_at(self, t: int) -> np.ndarray:
        if not self.active(t):
            raise KeyError(f"target {self.target_id} inactive at t={t}")
        return self.states[t - self.start]


@dataclass
class ScenarioTruth:
    spec: ScenarioSpec
    agent_states: Dict[int, np.ndarray]  # agent -> (horizon + 1, 4), row t
    targets: List[TargetTrack]

    @property
    def horizon(self) -> int:
        return self.spec.horizon

    def agent_state(self, agent: int, t: int) -> np.ndarray:
        return self.agent_states[agent][t]

    def active_targets(self, t: int) -> List[Tuple[int, np.ndarray]]:
        return [(trk.target_id, trk.state_at(t)) for trk in self.targets if trk.active(t)]


def generate_truth(spec: ScenarioSpec, seed: int) -> ScenarioTruth:
    rng = substream(seed, 0, Purpose.TRUTH)
    dt = spec.model.dt
    agent_states = {
        traj.agent_id: np.vstack([traj.state_at(t, dt) for t in range(spec.horizon + 1)]) for traj in spec.agents
    }
    tracks: List[TargetTrack] = []
    for tgt in sorted(spec.targets, key=lambda s: s.target_id):
        # draws happen for every target so that fixing one start does not shift the others
        drawn_pos = spec.target_spawn_region.sample(1, rng)[0]
        drawn_vel = spec.target_velocity_box.sample(1, rng)[0]
        pos = np.asarray(tgt.position, dtype=float) if tgt.position is not None else drawn_pos
        vel = np.asarray(tgt.velocity, dtype=float) if tgt.velocity is not None else drawn_vel
        steps = np.arange(tgt.end - tgt.start + 1)[:, None]
        positions = pos[None, :] + steps * dt * vel[None, :]
        states = np.hstack([positions, np.repeat(vel[None, :], len(steps), axis=0)])
        tracks.append(TargetTrack(tgt.target_id, tgt.start, tgt.end, states))
    return ScenarioTruth(spec=spec, agent_states=agent_states, targets=tracks)


def build_paper_scenario(seed: int) -> ScenarioTruth:
    return generate_truth(paper_scenario_spec(), seed)


def sample_prior_around(
    initial: Dict[int, np.ndarray], radius: float, velocity_box: Rect, num_particles: int, seed: int
) -> Dict[int, AgentBelief]:
    """Position uniform on a disk around each initial position, velocity uniform in a box."""
    rng = substream(seed, 0, Purpose.PRIOR)
    priors: Dict[int, AgentBelief] = {}
    for agent in sorted(initial):
        start = np.asarray(initial[agent], dtype=float)
        rho = radius * np.sqrt(rng.random(num_particles))
        angle = rng.uniform(0.0, 2.0 * np.pi, num_particles)
        pos = start[:2] + np.column_stack([rho * np.cos(angle), rho * np.sin(angle)])
        vel = velocity_box.sample(num_particles, rng)
        priors[agent] = AgentBelief.from_samples(np.hstack([pos, vel]))
    return priors


def sample_agent_prior(truth: ScenarioTruth, num_particles: int, seed: int) -> Dict[int, AgentBelief]:
    spec = truth.spec
    initial = {a: truth.agent_state(a, 0) for a in spec.agent_ids}
    return sample_prior_around(initial, spec.prior_radius, spec.prior_velocity_box, num_particles, seed)


# ---------------------------------------------------------------------------
# Measurement synthesis


def _noisy(pred_range: float, pred_bearing: float, noise: NoiseSpec, rng: np.random.Generator) -> RangeBearing:
    r = pred_range + rng.normal(0.0, noise.range_std)
    b = pred_bearing + rng.normal(0.0, noise.bearing_std)
    return RangeBearing(max(r, 0.0), b)


def synthesize_frame(
    truth: ScenarioTruth, t: int, seed: int, model: Optional[ModelConfig] = None, noise: Optional[NoiseSpec] = None
) -> MeasurementFrame:
    spec = truth.spec
    if not 1 <= t <= spec.horizon:
        raise ValueError(f"t={t} outside horizon [1, {spec.horizon}]")
    model = model or spec.model
    noise = noise or spec.noise
    rng = substream(seed, t, Purpose.FRAME)
    frame = MeasurementFrame(t=t)

    for agent in sorted(noise.nav_pos_std):
        pos = truth.agent_state(agent, t)[:2]
        frame.nav[agent] = pos + rng.normal(0.0, noise.nav_pos_std[agent], size=2)

    for rx, tx in spec.link_keys():
        if not spec.link_available(rx, tx, t):
            continue
        pr, pb, dist = predict_inter_agent(truth.agent_state(rx, t)[:2], truth.agent_state(tx, t)[:2], model.range_scale)
        if dist == 0.0:
            logger.warning("t=%d: agents %d and %d coincide; link skipped", t, rx, tx)
            continue
        frame.inter_agent.append(Link(rx, tx, _noisy(float(pr), float(pb), noise, rng)))

    for rx, tx in spec.pair_keys():
        mono = rx == tx
        rx_pos = truth.agent_state(rx, t)[:2]
        tx_pos = truth.agent_state(tx, t)[:2]
        reflectors = [state[:2] for _, state in truth.active_targets(t)]
        if model.agent_reflectors:
            reflectors += [truth.agent_state(a, t)[:2] for a in spec.agent_ids if a not in (rx, tx)]
        measurements: List[RangeBearing] = []
        for obj in reflectors:
            if rng.random() >= model.detection_prob:
                continue
            pr, pb, dist = predict_mot(obj, rx_pos, tx_pos, model.range_scale, mono)
            if dist == 0.0:
                logger.warning("t=%d: reflector on top of receiver %d; detection skipped", t, rx)
                continue
            measurements.append(_noisy(float(pr), float(pb), noise, rng))
        n_clutter = rng.poisson(model.clutter_mean)
        for point in model.clutter_region.sample(n_clutter, rng):
            pr, pb, dist = predict_mot(point, rx_pos, tx_pos, model.range_scale, mono)
            if dist == 0.0:
                continue
            measurements.append(RangeBearing(float(pr), float(pb)))
        order = rng.permutation(len(measurements))
        frame.mot[(rx, tx)] = [measurements[i] for i in order]
    return frame


def synthesize_frames(truth: ScenarioTruth, seed: int) -> Dict[int, MeasurementFrame]:
    return {t: synthesize_frame(truth, t, seed) for t in range(1, truth.horizon + 1)}


def ensure_agents_known(agent_ids: Sequence[int], frame: MeasurementFrame) -> None:
    known = set(agent_ids)
    for link in frame.inter_agent:
        if link.rx not in known or link.tx not in known:
            raise ConfigError(f"t={frame.t}: link ({link.rx}, {link.tx}) references an unknown agent")
    for rx, tx in frame.mot:
        if rx not in known or tx not in known:
            raise ConfigError(f"t={frame.t}: MOT pair ({rx}, {tx}) references an unknown agent")
    for agent in frame.nav:
        if agent not in known:
            raise ConfigError(f"t={frame.t}: navigation datum for unknown agent {agent}")
