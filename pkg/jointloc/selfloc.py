"""Agent prediction and the cooperative self-localization loop.

Messages live on the recipient's particles. Each link keeps one message per
endpoint; an endpoint's outgoing message along a link is built from its
predicted weights, its navigation likelihood and every incoming message
except the one arriving on that same link.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping

import numpy as np

from belief import AgentBelief
from errors import ConfigError, DegenerateBeliefError
from models import ModelConfig, NoiseSpec, inter_agent_likelihood_array, nav_likelihood_array, ncv_propagate

logger = logging.getLogger("jointloc.selfloc")


@dataclass
class SelfLocConfig:
    iterations: int = 5
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    range_scale: float = 2.0

    def __post_init__(self) -> None:
        if int(self.iterations) < 1:
            raise ValueError(f"iterations must be at least 1, got {self.iterations}")
        self.iterations = int(self.iterations)


def predict_agent(prev: AgentBelief, model: ModelConfig, noise: NoiseSpec, rng: np.random.Generator) -> AgentBelief:
    moved = ncv_propagate(prev.particles, noise.process_std_agent, model.dt, rng)
    return AgentBelief(moved, prev.weights.copy())


def _log(values: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(values)


def extrinsic_weights(base_log: np.ndarray, incoming: Mapping[int, np.ndarray], exclude: int) -> np.ndarray:
    """Normalized weights from ``base_log`` times every incoming message except ``exclude``."""
    total = base_log.copy()
    for key, msg in incoming.items():
        if key != exclude:
            total = total + _log(msg)
    peak = np.max(total)
    if not np.isfinite(peak):
        raise DegenerateBeliefError("degenerate belief: extrinsic weights vanish")
    w = np.exp(total - peak)
    return w / w.sum()


def _scaled(msg: np.ndarray, link_idx: int) -> np.ndarray:
    peak = float(np.max(msg)) if msg.size else 0.0
    if not peak > 0 or not np.isfinite(peak):
        logger.warning("inter-agent link %d carries no likelihood mass; its message is dropped", link_idx)
        return np.ones_like(msg)
    return msg / peak


def selfloc_round(
    beliefs: Mapping[int, AgentBelief], frame, cfg: SelfLocConfig
) -> Dict[int, AgentBelief]:
    """Fuse navigation data and inter-agent links into the predicted beliefs.

    ``frame`` needs ``nav`` (agent -> 2-vector) and ``inter_agent`` (items with
    ``rx``, ``tx`` and ``measurement``). The output beliefs keep the predicted
    particles and carry the fused, normalized weights.
    """
    base_log: Dict[int, np.ndarray] = {}
    for agent, belief in beliefs.items():
        logw = _log(belief.weights)
        if agent in frame.nav:
            if agent not in cfg.noise.nav_pos_std:
                raise ConfigError(f"navigation datum for agent {agent} which has no nav_pos_std")
            lik = nav_likelihood_array(frame.nav[agent], belief.particles[:, :2], cfg.noise.nav_pos_std[agent])
            logw = logw + _log(lik)
        base_log[agent] = logw

    links = list(frame.inter_agent)
    kernels: List[np.ndarray] = []
    for link in links:
        for agent in (link.rx, link.tx):
            if agent not in beliefs:
                raise ConfigError(f"inter-agent link ({link.rx}, {link.tx}) references unknown agent {agent}")
        rx_pos = beliefs[link.rx].particles[:, None, :2]
        tx_pos = beliefs[link.tx].particles[None, :, :2]
        kernels.append(
            inter_agent_likelihood_array(link.measurement, rx_pos, tx_pos, cfg.noise, cfg.range_scale, strict=False)
        )

    incoming: Dict[int, Dict[int, np.ndarray]] = {a: {} for a in beliefs}
    if links:
        for idx, link in enumerate(links):
            incoming[link.rx][idx] = np.ones(beliefs[link.rx].size)
            incoming[link.tx][idx] = np.ones(beliefs[link.tx].size)
        for _ in range(cfg.iterations):
            updated: Dict[int, Dict[int, np.ndarray]] = {a: {} for a in beliefs}
            for idx, (link, kernel) in enumerate(zip(links, kernels)):
                ext_rx = extrinsic_weights(base_log[link.rx], incoming[link.rx], exclude=idx)
                ext_tx = extrinsic_weights(base_log[link.tx], incoming[link.tx], exclude=idx)
                updated[link.rx][idx] = _scaled(kernel @ ext_tx, idx)
                updated[link.tx][idx] = _scaled(kernel.T @ ext_rx, idx)
            incoming = updated

    fused: Dict[int, AgentBelief] = {}
    for agent, belief in beliefs.items():
        total = base_log[agent].copy()
        for msg in incoming[agent].values():
            total = total + _log(msg)
        peak = np.max(total)
        if not np.isfinite(peak):
            raise DegenerateBeliefError(f"degenerate belief for agent {agent} after self-localization")
        w = np.exp(total - peak)
        fused[agent] = AgentBelief(belief.particles.copy(), w / w.sum())
    logger.debug("self-localization fused %d agents over %d links", len(fused), len(links))
    return fused
