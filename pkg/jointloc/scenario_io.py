"""Scenario (TOML) and replay (line-oriented text) files.

Scenario files are TOML with the sections ``[scenario]``, ``[model]``,
``[noise]``, ``[[agents]]``, ``[[targets]]``, ``[[outages]]``, ``[tracker]``
and ``[metrics]``; every key is optional and defaults to the simulated
set-up. Replay files hold one record per line::

    <t> NAV <agent> <x> <y>
    <t> LINK <rx> <tx> <range> <bearing>
    <t> MOT <rx> <tx> <range> <bearing>
    <t> TRUTH_AGENT <agent> <x> <y> <vx> <vy>
    <t> TRUTH_TARGET <target> <x> <y> <vx> <vy>

Blank lines and text after ``#`` are ignored. Any malformed input raises
ConfigError carrying the file path and line number.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

try:
    import tomllib  # Python 3.11+
except Exception:  # pragma: no cover
    import tomli as tomllib  # type: ignore

from errors import ConfigError
from metrics import OspaConfig
from models import ModelConfig, NoiseSpec, RangeBearing, Rect
from scenario import (
    AgentTrajectory,
    Link,
    MeasurementFrame,
    Outage,
    ScenarioSpec,
    ScenarioTruth,
    TargetSpec,
    paper_scenario_spec,
)
from tracker import TrackerConfig

logger = logging.getLogger("jointloc.io")

PAPER_SCENARIO_FILE = os.path.join(os.path.dirname(__file__), "config", "paper_scenario", "paper_scenario.toml")


@dataclass
class ScenarioConfig:
    spec: ScenarioSpec
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    ospa: OspaConfig = field(default_factory=OspaConfig)


# ---------------------------------------------------------------------------
# TOML scenario files


class _Section:
    def __init__(self, data: Any, name: str, path: Optional[str]) -> None:
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"[{name}] must be a table", path)
        self.data = dict(data)
        self.name = name
        self.path = path
        self.used: set = set()

    def get(self, key: str, kind: str, default: Any = None) -> Any:
        self.used.add(key)
        if key not in self.data:
            return default
        value = self.data[key]
        where = f"[{self.name}] {key}"
        if kind == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{where} must be an integer, got {value!r}", self.path)
            return int(value)
        if kind == "float":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where} must be a number, got {value!r}", self.path)
            return float(value)
        if kind == "bool":
            if not isinstance(value, bool):
                raise ConfigError(f"{where} must be true or false, got {value!r}", self.path)
            return value
        if kind == "str":
            if not isinstance(value, str):
                raise ConfigError(f"{where} must be a string, got {value!r}", self.path)
            return value
        if kind == "ints":
            if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, int) for v in value):
                raise ConfigError(f"{where} must be a list of integers, got {value!r}", self.path)
            return tuple(int(v) for v in value)
        if kind.startswith("floats"):
            size = int(kind[len("floats"):]) if kind != "floats" else None
            if (
                not isinstance(value, list)
                or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value)
                or (size is not None and len(value) != size)
            ):
                raise ConfigError(f"{where} must be a list of {size or 'some'} numbers, got {value!r}", self.path)
            return tuple(float(v) for v in value)
        if kind == "rect":
            lo_hi = self.get(key, "floats4")
            try:
                return Rect(*lo_hi)
            except ValueError as exc:
                raise ConfigError(f"{where}: {exc}", self.path)
        raise ValueError(f"unknown kind {kind}")

    def finish(self) -> None:
        unknown = sorted(set(self.data) - self.used)
        if unknown:
            raise ConfigError(f"unknown key(s) in [{self.name}]: {', '.join(unknown)}", self.path)


def _model_from(sec: _Section) -> ModelConfig:
    base = ModelConfig()
    try:
        model = ModelConfig(
            dt=sec.get("dt", "float", base.dt),
            detection_prob=sec.get("detection_prob", "float", base.detection_prob),
            clutter_mean=sec.get("clutter_mean", "float", base.clutter_mean),
            clutter_region=sec.get("clutter_region", "rect", base.clutter_region),
            birth_mean=sec.get("birth_mean", "float", base.birth_mean),
            birth_pos_std=sec.get("birth_pos_std", "float", base.birth_pos_std),
            birth_vel_box=sec.get("birth_vel_box", "rect", base.birth_vel_box),
            survival_prob=sec.get("survival_prob", "float", base.survival_prob),
            range_scale=sec.get("range_scale", "float", base.range_scale),
            agent_reflectors=sec.get("agent_reflectors", "bool", base.agent_reflectors),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[model] {exc}", sec.path)
    sec.finish()
    return model


def _noise_from(sec: _Section) -> NoiseSpec:
    base = NoiseSpec()
    nav_raw = sec.data.get("nav_pos_std")
    sec.used.add("nav_pos_std")
    nav = dict(base.nav_pos_std)
    if nav_raw is not None:
        if not isinstance(nav_raw, dict):
            raise ConfigError("[noise] nav_pos_std must be a table of agent id -> std", sec.path)
        try:
            nav = {int(k): float(v) for k, v in nav_raw.items()}
        except (TypeError, ValueError):
            raise ConfigError(f"[noise] nav_pos_std has a malformed entry: {nav_raw!r}", sec.path)
    try:
        noise = NoiseSpec(
            range_std=sec.get("range_std", "float", base.range_std),
            bearing_std=sec.get("bearing_std", "float", base.bearing_std),
            nav_pos_std=nav,
            process_std_agent=sec.get("process_std_agent", "float", base.process_std_agent),
            process_std_target=sec.get("process_std_target", "float", base.process_std_target),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[noise] {exc}", sec.path)
    sec.finish()
    return noise


def _agent_from(sec: _Section) -> AgentTrajectory:
    agent_id = sec.get("id", "int")
    if agent_id is None:
        raise ConfigError("[[agents]] entry without id", sec.path)
    traj = AgentTrajectory(
        agent_id=agent_id,
        kind=sec.get("kind", "str", "static"),
        center=sec.get("center", "floats2", (0.0, 0.0)),
        radius=sec.get("radius", "float", 0.0),
        phase_deg=sec.get("phase_deg", "float", 0.0),
        speed=sec.get("speed", "float", 0.0),
        clockwise=sec.get("clockwise", "bool", False),
        position=sec.get("position", "floats2", (0.0, 0.0)),
        velocity=sec.get("velocity", "floats2", (0.0, 0.0)),
    )
    sec.finish()
    return traj


def _target_from(sec: _Section) -> TargetSpec:
    tid, start, end = sec.get("id", "int"), sec.get("start", "int"), sec.get("end", "int")
    if tid is None or start is None or end is None:
        raise ConfigError("[[targets]] entries need id, start and end", sec.path)
    spec = TargetSpec(
        target_id=tid,
        start=start,
        end=end,
        position=sec.get("position", "floats2"),
        velocity=sec.get("velocity", "floats2"),
    )
    sec.finish()
    return spec


def _outage_from(sec: _Section) -> Outage:
    agents, start, end = sec.get("agents", "ints"), sec.get("start", "int"), sec.get("end", "int")
    if not agents or start is None or end is None:
        raise ConfigError("[[outages]] entries need agents, start and end", sec.path)
    outage = Outage(agents=agents, start=start, end=end, partner=sec.get("partner", "int"))
    sec.finish()
    return outage


def scenario_from_dict(data: Dict[str, Any], path: Optional[str] = None) -> ScenarioConfig:
    known = {"scenario", "model", "noise", "agents", "targets", "outages", "tracker", "metrics"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}", path)

    default = paper_scenario_spec()
    model = _model_from(_Section(data.get("model"), "model", path))
    noise = _noise_from(_Section(data.get("noise"), "noise", path))

    def _entries(name: str) -> Optional[List[_Section]]:
        raw = data.get(name)
        if raw is None:
            return None
        if not isinstance(raw, list):
            raise ConfigError(f"[[{name}]] must be an array of tables", path)
        return [_Section(item, name, path) for item in raw]

    # a file that lays out its own agents starts without the default targets and outages
    agent_secs = _entries("agents")
    custom = agent_secs is not None
    agents = [_agent_from(s) for s in agent_secs] if custom else default.agents
    target_secs = _entries("targets")
    if target_secs is not None:
        targets = [_target_from(s) for s in target_secs]
    else:
        targets = [] if custom else default.targets
    outage_secs = _entries("outages")
    if outage_secs is not None:
        outages = [_outage_from(s) for s in outage_secs]
    else:
        outages = [] if custom else default.outages

    sec = _Section(data.get("scenario"), "scenario", path)
    links_raw = sec.data.get("links")
    sec.used.add("links")
    links: Optional[List[Tuple[int, int]]] = None
    if links_raw is not None:
        if not isinstance(links_raw, list) or any(
            not isinstance(pair, list) or len(pair) != 2 or any(isinstance(v, bool) or not isinstance(v, int) for v in pair)
            for pair in links_raw
        ):
            raise ConfigError(f"[scenario] links must be a list of [rx, tx] integer pairs, got {links_raw!r}", path)
        links = [(int(a), int(b)) for a, b in links_raw]
    spec = ScenarioSpec(
        horizon=sec.get("horizon", "int", default.horizon),
        agents=agents,
        receivers=sec.get("receivers", "ints", default.receivers),
        transmitters=sec.get("transmitters", "ints", default.transmitters),
        links=links,
        targets=targets,
        outages=outages,
        target_spawn_region=sec.get("target_spawn_region", "rect", default.target_spawn_region),
        target_velocity_box=sec.get("target_velocity_box", "rect", default.target_velocity_box),
        prior_radius=sec.get("prior_radius", "float", default.prior_radius),
        prior_velocity_box=sec.get("prior_velocity_box", "rect", default.prior_velocity_box),
        model=model,
        noise=noise,
    )
    sec.finish()

    sec = _Section(data.get("tracker"), "tracker", path)
    base_tracker = TrackerConfig()
    tracker = TrackerConfig(
        num_particles=sec.get("num_particles", "int", base_tracker.num_particles),
        selfloc_iterations=sec.get("selfloc_iterations", "int", base_tracker.selfloc_iterations),
        association_iterations=sec.get("association_iterations", "int", base_tracker.association_iterations),
        prune_threshold=sec.get("prune_threshold", "float", base_tracker.prune_threshold),
        report_threshold=sec.get("report_threshold", "float", base_tracker.report_threshold),
        resample=sec.get("resample", "bool", base_tracker.resample),
    )
    sec.finish()

    sec = _Section(data.get("metrics"), "metrics", path)
    try:
        ospa = OspaConfig(
            order=sec.get("ospa_order", "float", 1.0), cutoff=sec.get("ospa_cutoff", "float", 5000.0)
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[metrics] {exc}", path)
    sec.finish()
    return ScenarioConfig(spec=spec, tracker=tracker, ospa=ospa)


def load_scenario(path: str) -> ScenarioConfig:
    if not os.path.exists(path):
        raise ConfigError("scenario file not found", path)
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}", path)
    try:
        cfg = scenario_from_dict(data, path)
    except ConfigError as exc:
        if exc.path is None:
            raise ConfigError(exc.message, path)
        raise
    logger.info("loaded scenario %s (%d agents, %d targets)", path, len(cfg.spec.agents), len(cfg.spec.targets))
    return cfg


# ---------------------------------------------------------------------------
# Replay files


@dataclass
class Replay:
    frames: Dict[int, MeasurementFrame]
    horizon: int
    agent_truth: Dict[int, Dict[int, np.ndarray]] = field(default_factory=dict)
    target_truth: Dict[int, Dict[int, np.ndarray]] = field(default_factory=dict)

    @property
    def agent_ids(self) -> List[int]:
        ids = set(self.agent_truth)
        for frame in self.frames.values():
            ids.update(frame.nav)
            for link in frame.inter_agent:
                ids.update((link.rx, link.tx))
            for rx, tx in frame.mot:
                ids.update((rx, tx))
        return sorted(ids)

    @property
    def pair_keys(self) -> List[Tuple[int, int]]:
        return sorted({key for frame in self.frames.values() for key in frame.mot})


_RECORD_ARITY = {"NAV": (1, 2), "LINK": (2, 2), "MOT": (2, 2), "TRUTH_AGENT": (1, 4), "TRUTH_TARGET": (1, 4)}


def _parse_number(token: str, path: str, lineno: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ConfigError(f"not a number: {token!r}", path, lineno)
    if not np.isfinite(value):
        raise ConfigError(f"non-finite value: {token!r}", path, lineno)
    return value


def _parse_int(token: str, what: str, path: str, lineno: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise ConfigError(f"{what} must be an integer, got {token!r}", path, lineno)


def load_replay(path: str) -> Replay:
    if not os.path.exists(path):
        raise ConfigError("replay file not found", path)
    frames: Dict[int, MeasurementFrame] = {}
    agent_truth: Dict[int, Dict[int, np.ndarray]] = {}
    target_truth: Dict[int, Dict[int, np.ndarray]] = {}
    horizon = 0
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            if len(tokens) < 2:
                raise ConfigError(f"incomplete record: {line!r}", path, lineno)
            t = _parse_int(tokens[0], "time", path, lineno)
            kind = tokens[1].upper()
            if kind not in _RECORD_ARITY:
                raise ConfigError(f"unknown record type {tokens[1]!r}", path, lineno)
            n_ids, n_vals = _RECORD_ARITY[kind]
            if len(tokens) != 2 + n_ids + n_vals:
                raise ConfigError(
                    f"{kind} expects {n_ids} id(s) and {n_vals} value(s), got {len(tokens) - 2} fields", path, lineno
                )
            ids = [_parse_int(tok, "id", path, lineno) for tok in tokens[2 : 2 + n_ids]]
            vals = [_parse_number(tok, path, lineno) for tok in tokens[2 + n_ids :]]
            min_t = 0 if kind.startswith("TRUTH") else 1
            if t < min_t:
                raise ConfigError(f"time must be >= {min_t}, got {t}", path, lineno)

            if kind == "TRUTH_AGENT":
                agent_truth.setdefault(ids[0], {})[t] = np.array(vals)
                continue
            if kind == "TRUTH_TARGET":
                target_truth.setdefault(ids[0], {})[t] = np.array(vals)
                continue

            horizon = max(horizon, t)
            frame = frames.setdefault(t, MeasurementFrame(t=t))
            if kind == "NAV":
                frame.nav[ids[0]] = np.array(vals)
                continue
            if vals[0] < 0:
                raise ConfigError(f"range must be non-negative, got {vals[0]}", path, lineno)
            z = RangeBearing(vals[0], vals[1])
            if kind == "LINK":
                if ids[0] == ids[1]:
                    raise ConfigError(f"inter-agent link needs two distinct agents, got {ids}", path, lineno)
                frame.inter_agent.append(Link(ids[0], ids[1], z))
            else:
                frame.mot.setdefault((ids[0], ids[1]), []).append(z)
    if horizon == 0:
        raise ConfigError("replay holds no measurement records", path)
    for t in range(1, horizon + 1):
        frames.setdefault(t, MeasurementFrame(t=t))
    logger.info("loaded replay %s: %d steps", path, horizon)
    return Replay(frames=dict(sorted(frames.items())), horizon=horizon, agent_truth=agent_truth, target_truth=target_truth)


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def write_replay(path: str, frames: Dict[int, MeasurementFrame], truth: Optional[ScenarioTruth] = None) -> None:
    """Write frames (and optionally the ground truth they came from) in replay format."""
    lines: List[str] = ["# jointloc replay"]
    if truth is not None:
        for agent in truth.spec.agent_ids:
            s = truth.agent_state(agent, 0)
            lines.append(f"0 TRUTH_AGENT {agent} " + " ".join(_fmt(v) for v in s))
    for t in sorted(frames):
        frame = frames[t]
        if truth is not None:
            for agent in truth.spec.agent_ids:
                s = truth.agent_state(agent, t)
                lines.append(f"{t} TRUTH_AGENT {agent} " + " ".join(_fmt(v) for v in s))
            for tid, s in truth.active_targets(t):
                lines.append(f"{t} TRUTH_TARGET {tid} " + " ".join(_fmt(v) for v in s))
        for agent in sorted(frame.nav):
            g = frame.nav[agent]
            lines.append(f"{t} NAV {agent} {_fmt(g[0])} {_fmt(g[1])}")
        for link in frame.inter_agent:
            z = link.measurement
            lines.append(f"{t} LINK {link.rx} {link.tx} {_fmt(z.range)} {_fmt(z.bearing)}")
        for (rx, tx), zs in sorted(frame.mot.items()):
            for z in zs:
                lines.append(f"{t} MOT {rx} {tx} {_fmt(z.range)} {_fmt(z.bearing)}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
