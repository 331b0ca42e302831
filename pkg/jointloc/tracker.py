"""Per-time-step joint localization and tracking.

One call to ``step`` runs, in order:

  agent prediction -> cooperative self-localization -> PT prediction ->
  for every agent pair (sorted by (rx, tx)):
      repair_joint_particles -> evaluate_pair -> bp_associate ->
      update_pair (PT mapping included)
  -> pruning -> report

In JLT mode the agent beliefs are refined by every pair's MOT evidence. In
SLT mode tracking sees each agent as a point mass at its self-localization
estimate and agent beliefs are never touched by MOT evidence.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from association import AssociationMarginals, AssociationProblem, bp_associate
from belief import (
    AgentBelief,
    PTBelief,
    collapse_to_mmse,
    existence_probability,
    mmse_estimate,
    normalize,
    resample_systematic,
)
from errors import ConfigError, DegenerateBeliefError
from models import (
    ModelConfig,
    NoiseSpec,
    RangeBearing,
    clutter_measurement_pdf,
    detection_probability,
    ncv_propagate,
    predict_mot,
    range_bearing_density,
    sample_birth,
)
from scenario import MeasurementFrame, ScenarioSpec, ensure_agents_known
from selfloc import SelfLocConfig, predict_agent, selfloc_round

logger = logging.getLogger("jointloc.tracker")


class Mode(str, Enum):
    JLT = "jlt"
    SLT = "slt"


@dataclass(frozen=True)
class PairIndex:
    j: int
    rx: int
    tx: int

    @property
    def monostatic(self) -> bool:
        return self.rx == self.tx


def make_pairs(pair_keys: Iterable[Tuple[int, int]]) -> List[PairIndex]:
    return [PairIndex(j, rx, tx) for j, (rx, tx) in enumerate(sorted(set(pair_keys)), start=1)]


@dataclass
class TrackerConfig:
    num_particles: int = 1000
    selfloc_iterations: int = 5
    association_iterations: int = 50
    prune_threshold: float = 0.01
    report_threshold: float = 0.75
    resample: bool = True

    def __post_init__(self) -> None:
        if int(self.num_particles) < 1:
            raise ConfigError(f"num_particles must be at least 1, got {self.num_particles}")
        if int(self.selfloc_iterations) < 1 or int(self.association_iterations) < 1:
            raise ConfigError("loop counts must be at least 1")
        if not 0.0 < self.prune_threshold < self.report_threshold < 1.0:
            raise ConfigError(
                f"thresholds must satisfy 0 < prune ({self.prune_threshold}) < report ({self.report_threshold}) < 1"
            )


@dataclass
class EngineConfig:
    model: ModelConfig
    noise: NoiseSpec
    tracker: TrackerConfig
    pairs: List[PairIndex]

    def __post_init__(self) -> None:
        if not self.model.clutter_mean > 0:
            raise ConfigError("tracking requires a positive clutter mean")

    @classmethod
    def from_spec(cls, spec: ScenarioSpec, tracker: Optional[TrackerConfig] = None) -> "EngineConfig":
        return cls(
            model=spec.model, noise=spec.noise, tracker=tracker or TrackerConfig(), pairs=make_pairs(spec.pair_keys())
        )

    def selfloc_config(self) -> SelfLocConfig:
        return SelfLocConfig(
            iterations=self.tracker.selfloc_iterations, noise=self.noise, range_scale=self.model.range_scale
        )


@dataclass
class TrackerState:
    t: int
    agents: Dict[int, AgentBelief]
    pts: List[PTBelief] = field(default_factory=list)
    # SLT keeps the full self-localization posterior here for the next prediction
    selfloc_posteriors: Optional[Dict[int, AgentBelief]] = None

    def agent_prior(self) -> Dict[int, AgentBelief]:
        return self.selfloc_posteriors if self.selfloc_posteriors is not None else self.agents


@dataclass
class ReportedTarget:
    label: Tuple[int, int, int]
    existence: float
    state: np.ndarray


@dataclass
class TrackReport:
    t: int
    targets: List[ReportedTarget]
    agents: Dict[int, np.ndarray]

    @property
    def detected(self) -> int:
        return len(self.targets)


def initial_state(priors: Dict[int, AgentBelief]) -> TrackerState:
    return TrackerState(t=0, agents={a: priors[a] for a in sorted(priors)})


# ---------------------------------------------------------------------------
# PT prediction


def predict_pts(
    pts: Sequence[PTBelief], model: ModelConfig, process_std: float, rng: np.random.Generator
) -> List[PTBelief]:
    out: List[PTBelief] = []
    for pt in pts:
        r = existence_probability(pt)
        moved = ncv_propagate(pt.particles, process_std, model.dt, rng)
        nonexistence = pt.nonexistence + (1.0 - model.survival_prob) * r
        out.append(
            normalize(
                PTBelief(moved, pt.weights * model.survival_prob, nonexistence, pt.label, demoted=pt.demoted)
            )
        )
    return out


# ---------------------------------------------------------------------------
# Evaluation


ObjectKey = Tuple[str, int]


@dataclass
class PairEvaluation(AssociationProblem):
    """Association tables plus the per-particle messages the update step reuses."""

    pair: Optional[PairIndex] = None
    measurements: List[RangeBearing] = field(default_factory=list)
    objects: List[ObjectKey] = field(default_factory=list)
    forced: List[bool] = field(default_factory=list)
    # object_side[i]: (N_i, M) evidence for object i's particles
    object_side: List[np.ndarray] = field(default_factory=list)
    # agent_side[i]: (Q, M) evidence from object i for the joint rx/tx particles
    agent_side: List[np.ndarray] = field(default_factory=list)
    birth_particles: List[np.ndarray] = field(default_factory=list)
    birth_h: List[np.ndarray] = field(default_factory=list)
    birth_agent_side: List[np.ndarray] = field(default_factory=list)
    q_weights: np.ndarray = field(default_factory=lambda: np.ones(1))


def _kernel(z: RangeBearing, pred_range, pred_bearing, dist, noise: NoiseSpec) -> np.ndarray:
    dens = range_bearing_density(z.range, z.bearing, pred_range, pred_bearing, noise)
    return np.where(dist == 0.0, 0.0, dens)


def _joint_weights(pair: PairIndex, rx: AgentBelief, tx: AgentBelief) -> np.ndarray:
    w = rx.weights.copy() if pair.monostatic else rx.weights * tx.weights
    total = w.sum()
    if not total > 0:
        raise DegenerateBeliefError(f"degenerate joint belief for pair {pair.j} ({pair.rx}, {pair.tx})")
    return w / total


def repair_joint_particles(state: TrackerState, pair: PairIndex, rng: np.random.Generator) -> TrackerState:
    """Make a bistatic pair's rx and tx beliefs equally weighted and independently paired.

    Joint particle q is (rx particle q, tx particle q), a sample of the product
    belief only while both weight vectors are uniform. Otherwise both beliefs
    are resampled and the tx particles shuffled.
    """
    if pair.monostatic or pair.rx not in state.agents or pair.tx not in state.agents:
        return state
    rx_b, tx_b = state.agents[pair.rx], state.agents[pair.tx]
    if rx_b.size != tx_b.size or all(np.all(b.weights == b.weights[0]) for b in (rx_b, tx_b)):
        return state
    agents = dict(state.agents)
    agents[pair.rx] = resample_systematic(rx_b, rng)
    tx_b = resample_systematic(tx_b, rng)
    agents[pair.tx] = AgentBelief(tx_b.particles[rng.permutation(tx_b.size)], tx_b.weights)
    logger.debug("t=%d: re-paired weighted particles of agents %d and %d", state.t, pair.rx, pair.tx)
    return TrackerState(t=state.t, agents=agents, pts=state.pts, selfloc_posteriors=state.selfloc_posteriors)


def evaluate_pair(
    state: TrackerState,
    pair: PairIndex,
    measurements: Sequence[RangeBearing],
    cfg: EngineConfig,
    rng: np.random.Generator,
) -> PairEvaluation:
    model, noise = cfg.model, cfg.noise
    if pair.rx not in state.agents or pair.tx not in state.agents:
        raise ConfigError(f"pair ({pair.rx}, {pair.tx}) references an agent without a belief")
    rx_b, tx_b = state.agents[pair.rx], state.agents[pair.tx]
    if rx_b.size != tx_b.size:
        raise ConfigError(
            f"pair ({pair.rx}, {pair.tx}): rx and tx beliefs have {rx_b.size} and {tx_b.size} particles"
        )
    mono = pair.monostatic
    q_w = _joint_weights(pair, rx_b, tx_b)
    rx_pos = rx_b.particles[None, :, :2]
    tx_pos = tx_b.particles[None, :, :2]
    rx_mean = mmse_estimate(rx_b)[:2]
    tx_mean = mmse_estimate(tx_b)[:2]

    meas = list(measurements)
    n_meas = len(meas)
    fc = np.array(
        [
            clutter_measurement_pdf(z, model.clutter_region, rx_mean, tx_mean, model.range_scale, mono, clip=False)
            for z in meas
        ]
    )
    scale = np.zeros(n_meas)
    if n_meas:
        scale = model.detection_prob / (model.clutter_mean * fc)

    objects: List[ObjectKey] = [("pt", i) for i in range(len(state.pts))]
    objects += [("agent", a) for a in sorted(state.agents)]
    xi = np.zeros((len(objects), n_meas + 1))
    forced: List[bool] = []
    object_side: List[np.ndarray] = []
    agent_side: List[np.ndarray] = []

    for i, (kind, ref) in enumerate(objects):
        if kind == "pt":
            pt = state.pts[ref]
            particles, w = pt.particles, pt.weights
            pd = detection_probability(model)
            missed = pt.nonexistence + w.sum() * (1.0 - pd)
        else:
            pd = detection_probability(model, ref, pair.rx, pair.tx)
            if pd == 0.0 or not model.agent_reflectors:
                xi[i, 0] = 1.0
                forced.append(True)
                object_side.append(np.zeros((state.agents[ref].size, n_meas)))
                agent_side.append(np.zeros((q_w.shape[0], n_meas)))
                continue
            belief = state.agents[ref]
            particles, w = belief.particles, belief.weights
            missed = 1.0 - pd
        forced.append(False)
        obj = np.zeros((particles.shape[0], n_meas))
        ag = np.zeros((q_w.shape[0], n_meas))
        if n_meas:
            pr, pb, dist = predict_mot(particles[:, None, :2], rx_pos, tx_pos, model.range_scale, mono)
            for m, z in enumerate(meas):
                kern = _kernel(z, pr, pb, dist, noise)
                obj[:, m] = scale[m] * (kern @ q_w)
                ag[:, m] = scale[m] * (w @ kern)
        xi[i, 0] = missed
        xi[i, 1:] = w @ obj
        object_side.append(obj)
        agent_side.append(ag)

    mu_ratio = model.birth_mean / model.clutter_mean
    sigma = np.ones((n_meas, len(objects) + 1))
    birth_particles: List[np.ndarray] = []
    birth_h: List[np.ndarray] = []
    birth_agent_side: List[np.ndarray] = []
    n_birth = cfg.tracker.num_particles
    for m, z in enumerate(meas):
        born = sample_birth(z, rx_mean, tx_mean, model, n_birth, rng, mono)
        pr, pb, dist = predict_mot(born[:, None, :2], rx_pos, tx_pos, model.range_scale, mono)
        kern = _kernel(z, pr, pb, dist, noise)
        h = (kern @ q_w) / fc[m]
        sigma[m, 0] = 1.0 + mu_ratio * h.mean()
        birth_particles.append(born)
        birth_h.append(h)
        birth_agent_side.append(mu_ratio * kern.mean(axis=0) / fc[m])

    logger.debug(
        "t=%d pair %d (%d,%d): %d objects, %d measurements", state.t, pair.j, pair.rx, pair.tx, len(objects), n_meas
    )
    return PairEvaluation(
        xi=xi,
        sigma=sigma,
        pair=pair,
        measurements=meas,
        objects=objects,
        forced=forced,
        object_side=object_side,
        agent_side=agent_side,
        birth_particles=birth_particles,
        birth_h=birth_h,
        birth_agent_side=birth_agent_side,
        q_weights=q_w,
    )


# ---------------------------------------------------------------------------
# Update


def _reweight_pt(pt: PTBelief, factor: np.ndarray) -> PTBelief:
    w = pt.weights * factor
    total = float(w.sum()) + pt.nonexistence
    if not np.isfinite(total) or total <= 0:
        logger.warning("PT %s lost all probability mass; demoted to nonexistence", pt.label)
        return PTBelief(pt.particles, np.zeros(pt.size), 1.0, pt.label, demoted=True)
    return normalize(PTBelief(pt.particles, w, pt.nonexistence, pt.label, demoted=pt.demoted))


def _reweight_agent(agent: int, belief: AgentBelief, log_factor: np.ndarray) -> AgentBelief:
    with np.errstate(divide="ignore"):
        total = np.log(belief.weights) + log_factor
    peak = np.max(total)
    if not np.isfinite(peak):
        raise DegenerateBeliefError(f"degenerate belief for agent {agent} after MOT update")
    w = np.exp(total - peak)
    return AgentBelief(belief.particles, w / w.sum())


def new_pt_from_measurement(
    ev: PairEvaluation, m: int, eta_none: float, mu_ratio: float, t: int
) -> PTBelief:
    """PT born from measurement m; its existence weighs the birth evidence against legacy-object explanations."""
    h = ev.birth_h[m]
    birth = mu_ratio * float(h.mean())
    r_new = eta_none * birth / (1.0 + birth)
    h_sum = float(h.sum())
    if not (h_sum > 0 and np.isfinite(h_sum)):
        weights = np.zeros(h.shape[0])
        r_new = 0.0
    else:
        weights = h / h_sum * r_new
    return PTBelief(ev.birth_particles[m], weights, 1.0 - r_new, (t, ev.pair.j, m + 1))


def update_pair(
    state: TrackerState,
    evaluation: PairEvaluation,
    marginals: AssociationMarginals,
    cfg: EngineConfig,
    rng: np.random.Generator,
    update_agents: bool = True,
) -> TrackerState:
    """Apply one pair's association result and append its new PTs as legacy PTs."""
    ev = evaluation
    pair = ev.pair
    model = cfg.model
    nu = marginals.nu
    phi = marginals.phi
    n_meas = ev.num_measurements
    pd = model.detection_prob
    do_resample = cfg.tracker.resample

    legacy: List[PTBelief] = []
    for i, (kind, ref) in enumerate(ev.objects):
        if kind != "pt":
            continue
        pt = state.pts[ref]
        factor = (1.0 - pd) + ev.object_side[i] @ nu[:, i]
        updated = _reweight_pt(pt, factor)
        legacy.append(resample_systematic(updated, rng) if do_resample else updated)

    mu_ratio = model.birth_mean / model.clutter_mean
    born: List[PTBelief] = []
    for m in range(n_meas):
        pt = new_pt_from_measurement(ev, m, float(marginals.eta_beta[m, 0]), mu_ratio, state.t)
        born.append(resample_systematic(pt, rng) if do_resample else pt)

    agents = dict(state.agents)
    if update_agents:
        q_log = np.zeros(ev.q_weights.shape[0])
        with np.errstate(divide="ignore"):
            for i in range(ev.num_objects):
                if ev.forced[i]:
                    continue
                q_log += np.log(ev.xi[i, 0] + ev.agent_side[i] @ nu[:, i])
            for m in range(n_meas):
                legacy_sum = float(phi[:, m] @ ev.sigma[m, 1:])
                q_log += np.log(1.0 + legacy_sum + ev.birth_agent_side[m])
        for agent in sorted({pair.rx, pair.tx}):
            agents[agent] = _reweight_agent(agent, agents[agent], q_log)
        for i, (kind, ref) in enumerate(ev.objects):
            if kind != "agent" or ev.forced[i]:
                continue
            factor = (1.0 - pd) + ev.object_side[i] @ nu[:, i]
            with np.errstate(divide="ignore"):
                agents[ref] = _reweight_agent(ref, agents[ref], np.log(factor))
        if do_resample:
            reflectors = {ref for (kind, ref), f in zip(ev.objects, ev.forced) if kind == "agent" and not f}
            for agent in sorted({pair.rx, pair.tx} | reflectors):
                agents[agent] = resample_systematic(agents[agent], rng)

    return TrackerState(
        t=state.t, agents=agents, pts=legacy + born, selfloc_posteriors=state.selfloc_posteriors
    )


# ---------------------------------------------------------------------------
# Pruning, reporting and the full step


def prune(pts: Sequence[PTBelief], threshold: float) -> List[PTBelief]:
    return [pt for pt in pts if existence_probability(pt) >= threshold]


def make_report(state: TrackerState, threshold: float) -> TrackReport:
    targets = [
        ReportedTarget(label=pt.label, existence=existence_probability(pt), state=mmse_estimate(pt))
        for pt in state.pts
        if existence_probability(pt) > threshold
    ]
    agents = {a: mmse_estimate(b) for a, b in sorted(state.agents.items())}
    return TrackReport(t=state.t, targets=targets, agents=agents)


def step(
    state: TrackerState, frame: MeasurementFrame, mode: Mode, cfg: EngineConfig, rng: np.random.Generator
) -> Tuple[TrackerState, TrackReport]:
    t = state.t + 1
    if frame.t != t:
        raise ConfigError(f"frame for t={frame.t} does not follow tracker time t={state.t}")
    mode = Mode(mode)
    prior = state.agent_prior()
    ensure_agents_known(list(prior), frame)
    known_pairs = {(p.rx, p.tx) for p in cfg.pairs}
    for key, meas in frame.mot.items():
        if meas and key not in known_pairs:
            raise ConfigError(f"t={t}: MOT measurements for unconfigured pair {key}")

    predicted = {a: predict_agent(prior[a], cfg.model, cfg.noise, rng) for a in sorted(prior)}
    fused = selfloc_round(predicted, frame, cfg.selfloc_config())
    if cfg.tracker.resample:
        fused = {a: resample_systematic(fused[a], rng) for a in sorted(fused)}

    if mode is Mode.SLT:
        work = TrackerState(
            t=t, agents={a: collapse_to_mmse(b) for a, b in fused.items()}, selfloc_posteriors=fused
        )
    else:
        work = TrackerState(t=t, agents=fused)
    work.pts = predict_pts(state.pts, cfg.model, cfg.noise.process_std_target, rng)

    for pair in cfg.pairs:
        work = repair_joint_particles(work, pair, rng)
        ev = evaluate_pair(work, pair, frame.mot_for(pair.rx, pair.tx), cfg, rng)
        marginals = bp_associate(ev, cfg.tracker.association_iterations)
        work = update_pair(work, ev, marginals, cfg, rng, update_agents=mode is Mode.JLT)

    before = len(work.pts)
    work.pts = prune(work.pts, cfg.tracker.prune_threshold)
    report = make_report(work, cfg.tracker.report_threshold)
    logger.debug(
        "t=%d %s: %d PTs (%d pruned), %d reported", t, mode.value, len(work.pts), before - len(work.pts), report.detected
    )
    return work, report


def run_tracker(
    priors: Dict[int, AgentBelief],
    frames: Dict[int, MeasurementFrame],
    mode: Mode,
    cfg: EngineConfig,
    rng_for_step,
) -> List[TrackReport]:
    """Run ``step`` over frames 1..T; ``rng_for_step(t)`` supplies each step's generator."""
    state = initial_state(priors)
    reports: List[TrackReport] = []
    for t in sorted(frames):
        state, report = step(state, frames[t], mode, cfg, rng_for_step(t))
        reports.append(report)
    return reports
