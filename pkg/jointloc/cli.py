#!/usr/bin/env python3
"""
cli.py

Batch runner for joint localization and tracking:
- Load a TOML scenario (default: the built-in simulated set-up) or a replay file
- Run JLT and/or SLT over Monte Carlo repetitions, optionally in worker processes
- Write per-run CSV files plus summary.csv with per-time Monte Carlo means
- Record every (run, mode) in the SQLite run registry under the output directory

Run r uses seed = base seed + r; JLT and SLT of the same run consume the
same synthesized measurements.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

import run_store
from errors import ConfigError
from log_setup import configure_logging
from metrics import OspaConfig, aggregate, detected_count, ospa, position_error
from scenario import ScenarioTruth, generate_truth, paper_scenario_spec, sample_prior_around, synthesize_frames
from scenario_io import Replay, ScenarioConfig, load_replay, load_scenario
from streams import Purpose, substream
from tracker import EngineConfig, Mode, TrackReport, make_pairs, run_tracker

logger = logging.getLogger("jointloc.cli")

FLOAT_FORMAT = "%.17g"
MODE_PURPOSE = {Mode.JLT: Purpose.TRACK_JLT, Mode.SLT: Purpose.TRACK_SLT}

AGENT_COLUMNS = ["t", "agent", "true_x", "true_y", "est_x", "est_y", "error_m"]
TRACK_COLUMNS = ["t", "label", "existence", "est_x", "est_y", "est_vx", "est_vy"]
METRIC_COLUMNS = ["t", "mospa_m", "detected", "true_count"]


@dataclass
class RunConfig:
    config_path: Optional[str] = None
    replay_path: Optional[str] = None
    modes: Tuple[Mode, ...] = (Mode.JLT, Mode.SLT)
    mc_runs: int = 1
    base_seed: int = 0
    num_particles: Optional[int] = None
    out_dir: str = "out"
    workers: int = 1
    log_level: str = "INFO"

    def __post_init__(self) -> None:
        if self.mc_runs < 1:
            raise ConfigError(f"--mc must be at least 1, got {self.mc_runs}")
        if self.base_seed < 0:
            raise ConfigError(f"--seed must be non-negative, got {self.base_seed}")
        if self.num_particles is not None and self.num_particles < 1:
            raise ConfigError(f"--particles must be at least 1, got {self.num_particles}")
        if self.workers < 1:
            raise ConfigError(f"--workers must be at least 1, got {self.workers}")
        if not self.modes:
            raise ConfigError("at least one mode is required")


# ---------------------------------------------------------------------------
# Ground truth view shared by synthetic and replayed runs


@dataclass
class GroundTruth:
    agents: Dict[int, Dict[int, np.ndarray]]
    targets: Optional[Dict[int, Dict[int, np.ndarray]]]

    @classmethod
    def from_scenario(cls, truth: ScenarioTruth) -> "GroundTruth":
        agents = {a: {t: s for t, s in enumerate(states)} for a, states in truth.agent_states.items()}
        targets = {
            trk.target_id: {trk.start + i: s for i, s in enumerate(trk.states)} for trk in truth.targets
        }
        return cls(agents=agents, targets=targets)

    @classmethod
    def from_replay(cls, replay: Replay) -> "GroundTruth":
        return cls(agents=replay.agent_truth, targets=replay.target_truth or None)

    def agent_position(self, agent: int, t: int) -> Optional[np.ndarray]:
        state = self.agents.get(agent, {}).get(t)
        return None if state is None else np.asarray(state)[:2]

    def target_positions(self, t: int) -> Optional[List[np.ndarray]]:
        if self.targets is None:
            return None
        return [np.asarray(states[t])[:2] for _, states in sorted(self.targets.items()) if t in states]


# ---------------------------------------------------------------------------
# One Monte Carlo run


@dataclass
class RunTask:
    run_index: int
    seed: int
    modes: Tuple[Mode, ...]
    scenario: ScenarioConfig
    replay: Optional[Replay]
    out_dir: str
    log_level: str = "INFO"


def _label(label: Tuple[int, int, int]) -> str:
    return "-".join(str(v) for v in label)


def _nan_if_none(value: Optional[np.ndarray], i: int) -> float:
    return float("nan") if value is None else float(value[i])


def reports_to_frames(
    reports: Sequence[TrackReport], truth: GroundTruth, ospa_cfg: OspaConfig
) -> Tuple[pd.DataFrame, pd.DataFrame, pd.DataFrame]:
    agent_rows, track_rows, metric_rows = [], [], []
    for rep in reports:
        for agent, est in sorted(rep.agents.items()):
            true_pos = truth.agent_position(agent, rep.t)
            agent_rows.append(
                {
                    "t": rep.t,
                    "agent": agent,
                    "true_x": _nan_if_none(true_pos, 0),
                    "true_y": _nan_if_none(true_pos, 1),
                    "est_x": float(est[0]),
                    "est_y": float(est[1]),
                    "error_m": float("nan") if true_pos is None else position_error(est, true_pos),
                }
            )
        for tgt in rep.targets:
            track_rows.append(
                {
                    "t": rep.t,
                    "label": _label(tgt.label),
                    "existence": tgt.existence,
                    "est_x": float(tgt.state[0]),
                    "est_y": float(tgt.state[1]),
                    "est_vx": float(tgt.state[2]),
                    "est_vy": float(tgt.state[3]),
                }
            )
        true_targets = truth.target_positions(rep.t)
        estimates = [tgt.state[:2] for tgt in rep.targets]
        metric_rows.append(
            {
                "t": rep.t,
                "mospa_m": float("nan") if true_targets is None else ospa(estimates, true_targets, ospa_cfg),
                "detected": detected_count(rep),
                "true_count": float("nan") if true_targets is None else len(true_targets),
            }
        )
    return (
        pd.DataFrame(agent_rows, columns=AGENT_COLUMNS),
        pd.DataFrame(track_rows, columns=TRACK_COLUMNS),
        pd.DataFrame(metric_rows, columns=METRIC_COLUMNS),
    )


def write_csv(df: pd.DataFrame, path: str) -> str:
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def _engine_and_inputs(task: RunTask):
    scenario = task.scenario
    spec = scenario.spec
    if task.replay is not None:
        replay = task.replay
        pair_keys = replay.pair_keys or spec.pair_keys()
        engine = EngineConfig(model=spec.model, noise=spec.noise, tracker=scenario.tracker, pairs=make_pairs(pair_keys))
        agents = sorted(set(replay.agent_ids) | {p for key in pair_keys for p in key})
        initial: Dict[int, np.ndarray] = {}
        configured = {traj.agent_id: traj for traj in spec.agents}
        for a in agents:
            if 0 in replay.agent_truth.get(a, {}):
                initial[a] = replay.agent_truth[a][0]
            elif a in configured:
                initial[a] = configured[a].state_at(0, spec.model.dt)
            else:
                raise ConfigError(f"no initial state for agent {a}: add '0 TRUTH_AGENT {a} x y vx vy' to the replay")
        return engine, replay.frames, initial, GroundTruth.from_replay(replay)

    truth = generate_truth(spec, task.seed)
    frames = synthesize_frames(truth, task.seed)
    engine = EngineConfig.from_spec(spec, scenario.tracker)
    initial = {a: truth.agent_state(a, 0) for a in spec.agent_ids}
    return engine, frames, initial, GroundTruth.from_scenario(truth)


def execute_run(task: RunTask) -> Dict[str, Dict]:
    """Run every requested mode of one Monte Carlo run and write its CSV files."""
    spec = task.scenario.spec
    engine, frames, initial, truth = _engine_and_inputs(task)
    priors = sample_prior_around(
        initial, spec.prior_radius, spec.prior_velocity_box, engine.tracker.num_particles, task.seed
    )
    results: Dict[str, Dict] = {}
    for mode in task.modes:
        purpose = MODE_PURPOSE[mode]
        reports = run_tracker(priors, frames, mode, engine, lambda t, p=purpose: substream(task.seed, t, p))
        agents_df, tracks_df, metrics_df = reports_to_frames(reports, truth, task.scenario.ospa)
        suffix = f"{mode.value}_{task.run_index}"
        outputs = [
            write_csv(agents_df, os.path.join(task.out_dir, f"agents_{suffix}.csv")),
            write_csv(tracks_df, os.path.join(task.out_dir, f"tracks_{suffix}.csv")),
            write_csv(metrics_df, os.path.join(task.out_dir, f"metrics_{suffix}.csv")),
        ]
        results[mode.value] = {"agents": agents_df, "metrics": metrics_df, "outputs": outputs}
        last = metrics_df.iloc[-1] if len(metrics_df) else None
        logger.info(
            "run %d (%s, seed %d) finished: %d steps, final detected=%s",
            task.run_index,
            mode.value,
            task.seed,
            len(metrics_df),
            None if last is None else int(last["detected"]),
        )
    return results


def _worker_init(log_level: str) -> None:
    configure_logging(log_level)


# ---------------------------------------------------------------------------
# Batch


def summarize(per_mode: Dict[str, List[Dict]]) -> pd.DataFrame:
    frames = []
    for mode, results in per_mode.items():
        if not results:
            continue
        metrics = aggregate([res["metrics"] for res in results])
        agent_means = []
        for res in results:
            wide = res["agents"].pivot(index="t", columns="agent", values="error_m")
            wide.columns = [f"agent_{a}_error_m" for a in wide.columns]
            agent_means.append(wide.reset_index())
        agents = aggregate(agent_means)
        merged = metrics.merge(agents, on="t", how="left")
        merged.insert(0, "mode", mode)
        frames.append(merged)
    if not frames:
        return pd.DataFrame(columns=["mode"] + METRIC_COLUMNS)
    return pd.concat(frames, ignore_index=True)


def _load_inputs(cfg: RunConfig) -> Tuple[ScenarioConfig, Optional[Replay]]:
    scenario = load_scenario(cfg.config_path) if cfg.config_path else ScenarioConfig(spec=paper_scenario_spec())
    if cfg.num_particles is not None:
        scenario = replace(scenario, tracker=replace(scenario.tracker, num_particles=cfg.num_particles))
    replay = load_replay(cfg.replay_path) if cfg.replay_path else None
    return scenario, replay


def _record(fn, *args, **kwargs) -> None:
    try:
        fn(*args, **kwargs)
    except Exception:
        logger.exception("Failed to update run registry")


def run(cfg: RunConfig) -> int:
    """Execute the batch described by ``cfg``; returns the process exit status."""
    try:
        scenario, replay = _load_inputs(cfg)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return 1

    os.makedirs(cfg.out_dir, exist_ok=True)
    run_store.DB_FILENAME = os.path.join(os.path.abspath(cfg.out_dir), "runs.db")
    tasks = [
        RunTask(
            run_index=r,
            seed=cfg.base_seed + r,
            modes=cfg.modes,
            scenario=scenario,
            replay=replay,
            out_dir=cfg.out_dir,
            log_level=cfg.log_level,
        )
        for r in range(cfg.mc_runs)
    ]
    logger.info(
        "starting %d run(s), modes=%s, seed=%d, particles=%d, workers=%d",
        len(tasks),
        ",".join(m.value for m in cfg.modes),
        cfg.base_seed,
        scenario.tracker.num_particles,
        cfg.workers,
    )
    for task in tasks:
        for mode in task.modes:
            _record(run_store.add_run, f"{mode.value}-{task.run_index:04d}", task.run_index, mode.value, task.seed)

    per_mode: Dict[str, List[Dict]] = {m.value: [] for m in cfg.modes}
    status = 0

    def _collect(task: RunTask, outcome) -> None:
        nonlocal status
        if isinstance(outcome, BaseException):
            code = 1 if isinstance(outcome, ConfigError) else 2
            status = max(status, code)
            logger.error("run %d failed: %s", task.run_index, outcome)
            for mode in task.modes:
                _record(run_store.update_run_status, f"{mode.value}-{task.run_index:04d}", "failed", error=str(outcome))
            return
        for mode in task.modes:
            res = outcome[mode.value]
            per_mode[mode.value].append(res)
            _record(
                run_store.update_run_status, f"{mode.value}-{task.run_index:04d}", "finished", outputs=res["outputs"]
            )

    if cfg.workers == 1 or len(tasks) == 1:
        for task in tasks:
            try:
                outcome = execute_run(task)
            except Exception as exc:  # recorded per run; the batch continues
                logger.exception("run %d raised", task.run_index)
                outcome = exc
            _collect(task, outcome)
    else:
        with ProcessPoolExecutor(
            max_workers=cfg.workers, initializer=_worker_init, initargs=(cfg.log_level,)
        ) as pool:
            futures = [pool.submit(execute_run, task) for task in tasks]
            for task, fut in zip(tasks, futures):
                try:
                    outcome = fut.result()
                except Exception as exc:
                    outcome = exc
                _collect(task, outcome)

    if any(per_mode.values()):
        summary = summarize(per_mode)
        path = write_csv(summary, os.path.join(cfg.out_dir, "summary.csv"))
        logger.info("wrote %s", path)
    return status


# ---------------------------------------------------------------------------
# Command line


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # type: ignore[override]
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(description="Joint cooperative self-localization and multitarget tracking (batch runner)")
    p.add_argument("--config", help="TOML scenario file (default: built-in simulated scenario)")
    p.add_argument("--replay", help="Replay file with NAV/LINK/MOT records")
    p.add_argument("--mode", choices=["jlt", "slt", "both"], default="both", help="Algorithm(s) to run")
    p.add_argument("--mc", type=int, default=1, help="Number of Monte Carlo runs")
    p.add_argument("--seed", type=int, default=0, help="Base seed; run r uses seed + r")
    p.add_argument("--particles", type=int, default=None, help="Particles per belief (overrides the config)")
    p.add_argument("--out", default="out", help="Output directory")
    p.add_argument("--workers", type=int, default=1, help="Worker processes for Monte Carlo runs")
    p.add_argument("--log-level", default="INFO", help="Logging level (DEBUG, INFO, WARNING, ...)")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        modes = (Mode.JLT, Mode.SLT) if args.mode == "both" else (Mode(args.mode),)
        cfg = RunConfig(
            config_path=args.config,
            replay_path=args.replay,
            modes=modes,
            mc_runs=args.mc,
            base_seed=args.seed,
            num_particles=args.particles,
            out_dir=args.out,
            workers=args.workers,
            log_level=args.log_level,
        )
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        os.makedirs(cfg.out_dir, exist_ok=True)
        configure_logging(cfg.log_level, log_file=os.path.join(cfg.out_dir, "jointloc.log"))
        return run(cfg)
    except Exception:
        logger.exception("runtime failure")
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
