"""End-to-end scenario execution.

Wires the stages together per frame: synthetic sensing -> local map ->
{planner, global map}, with incremental graph optimization, per-stage timing,
pipeline-failure scheduling, and optional closed-loop path following. Writes
all run artifacts into a directory and returns a summary.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig, RunFailure, dump_resolved
from .core import Pose2, SensorSource, Velocity2, integrate_velocity, normalize_angle, relative_pose
from .evaluate import build_report, icp_align, map_rmse, planning_stats, save_report, save_trajectory
from .global_map import Graph, add_snapshot, export_map, optimize, save_graph, save_map
from .local_map import LocalMapState, SnapshotLogWriter, ingest_frame
from .planner import plan_record, plan_snapshot
from .simulate import (
    CenterlineGeometry,
    SimRun,
    TrackDefinition,
    curvature_limited_speed_profile,
    generate_track,
    load_track,
    noisy_velocity,
    observe_cones,
)


@dataclass
class RunResult:
    completed_lap: bool
    frames: int
    out_dir: Path
    rmse_m: float | None
    rmse_dead_reckoned_m: float | None
    report: dict


class _PipelineLiveness:
    """Tracks which perception pipelines are up, per the failure schedule."""

    def __init__(self, config: RunConfig):
        self.alive = {"fusion", "lidar_only", "camera_only"}
        if config.force_mode == "degraded":
            self.alive = {"lidar_only", "camera_only"}
        elif config.force_mode in ("lidar_only", "camera_only"):
            self.alive = {config.force_mode}
        elif config.force_mode == "fusion":
            self.alive = {"fusion"}
        self._events = sorted(config.mode_schedule, key=lambda e: e["time_s"])
        self._next = 0

    def advance(self, now: float) -> None:
        while self._next < len(self._events) and self._events[self._next]["time_s"] <= now:
            event = self._events[self._next]
            self.alive -= set(event.get("fail", []))
            self.alive |= set(event.get("restore", []))
            self._next += 1

    def emitting_sources(self) -> list[str]:
        # when early fusion runs, single-sensor pipelines stay silent
        if "fusion" in self.alive:
            return ["fusion"]
        return [m for m in ("lidar_only", "camera_only") if m in self.alive]


def _resolve_track(config: RunConfig, out_dir: Path) -> TrackDefinition:
    from .simulate import save_track

    if config.track_file:
        track = load_track(config.track_file)
    else:
        track = generate_track(config.track_spec, config.seed)
    save_track(track, out_dir / "track.json")
    return track


class _ClosedLoopSteering:
    """Pure-pursuit follower of the latest selected path (local frame)."""

    def __init__(self, lookahead_m: float = 4.0):
        self.lookahead = lookahead_m
        self._waypoints: np.ndarray | None = None
        self._local_ego: Pose2 | None = None

    def update_plan(self, waypoints: np.ndarray, local_ego: Pose2) -> None:
        if len(waypoints):
            self._waypoints = waypoints
            self._local_ego = local_ego

    def yaw_rate(self, speed: float) -> float:
        if self._waypoints is None:
            return 0.0
        c, s = math.cos(self._local_ego.theta), math.sin(self._local_ego.theta)
        rel = self._waypoints - self._local_ego.position
        body = np.column_stack([c * rel[:, 0] + s * rel[:, 1], -s * rel[:, 0] + c * rel[:, 1]])
        dist = np.hypot(body[:, 0], body[:, 1])
        ahead = np.flatnonzero((dist >= self.lookahead) & (body[:, 0] > 0))
        idx = int(ahead[0]) if len(ahead) else int(np.argmax(dist))
        target = body[idx]
        d2 = float(target @ target)
        if d2 < 1e-9:
            return 0.0
        curvature = 2.0 * target[1] / d2
        return curvature * speed


def run_pipeline(config: RunConfig, out_dir: Path | str) -> RunResult:
    """Execute one scenario and write all artifacts under ``out_dir``.

    Raises :class:`RunFailure` (after writing partial outputs) when the
    closed-loop follower leaves the track corridor by more than the
    configured margin.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_resolved(config, out_dir / "config_resolved.json")
    track = _resolve_track(config, out_dir)
    geom = CenterlineGeometry(track.centerline)

    speed_profile = curvature_limited_speed_profile(track, config.max_speed_mps, config.lateral_accel_mps2)
    run = SimRun(track, speed_profile, config.frame_rate_hz, config.seed)
    local_cfg = config.local_map_config()
    global_cfg = config.global_map_config()
    planner_cfg = config.planner_config()

    rng = np.random.default_rng(config.seed)
    liveness = _PipelineLiveness(config)
    state = LocalMapState()
    graph = Graph()
    baseline = Graph()  # never optimized: the dead-reckoning reference
    timings: dict[str, list[float]] = {"sense": [], "local_map": [], "planner": [], "global_map": []}
    planner_records: list[dict] = []
    trajectory_rows: list[tuple[float, Pose2, Pose2]] = []
    trajectory: dict[float, tuple[Pose2, Pose2]] = {}
    steering = _ClosedLoopSteering()

    dt = 1.0 / config.frame_rate_hz
    velocity_profile = config.profiles["fusion"]  # ego-motion source, independent of cone pipelines
    snapshots_since_opt = 0
    prev_ego: Pose2 | None = None
    start_pose: Pose2 | None = None
    frames = 0
    completed = False
    failure: RunFailure | None = None

    snapshot_writer = SnapshotLogWriter(out_dir / "snapshots.ndjson")
    planner_fh = open(out_dir / "planner_log.ndjson", "w", encoding="utf-8")
    planner_fh.write(json.dumps({"schema_version": 1, "kind": "planner_log"}, sort_keys=True) + "\n")

    true_pose = geom.pose_at(0.0)
    prev_true: Pose2 | None = None
    arc_s = 0.0  # open-loop position along the centerline
    progress = 0.0
    last_s = 0.0
    max_frames = int(3 * geom.length / (min(v for _, v in speed_profile) * dt)) + 10

    try:
        while progress < geom.length and frames < max_frames:
            timestamp = frames * dt
            frame_dt = 0.0 if frames == 0 else dt
            liveness.advance(timestamp)

            # exact discrete true velocity: dead-reckoning the noise-free
            # readings reproduces the true pose
            if prev_true is None:
                true_vel = Velocity2.zero()
            else:
                d = true_pose.position - prev_true.position
                c, s = math.cos(prev_true.theta), math.sin(prev_true.theta)
                true_vel = Velocity2(
                    (c * d[0] + s * d[1]) / frame_dt,
                    (-s * d[0] + c * d[1]) / frame_dt,
                    normalize_angle(true_pose.theta - prev_true.theta) / frame_dt,
                )
            start_pose = start_pose or true_pose

            t0 = time.perf_counter()
            observations = []
            present = set()
            for source in liveness.emitting_sources():
                observations.extend(observe_cones(track, true_pose, config.profiles[source], rng, timestamp))
                present.add(SensorSource(source))
            vel_reading = noisy_velocity(true_vel, velocity_profile, rng)
            timings["sense"].append((time.perf_counter() - t0) * 1e3)

            t0 = time.perf_counter()
            force = None if config.force_mode is None else _force_map_mode(config.force_mode)
            state, snapshot = ingest_frame(
                state, observations, vel_reading, frame_dt, local_cfg, mode=force, present_sources=present
            )
            timings["local_map"].append((time.perf_counter() - t0) * 1e3)
            snapshot_writer.write(snapshot)
            trajectory_rows.append((snapshot.timestamp, true_pose, snapshot.ego))
            trajectory[snapshot.timestamp] = (true_pose, snapshot.ego)

            if config.plan_enabled:
                t0 = time.perf_counter()
                result = plan_snapshot(snapshot, planner_cfg)
                timings["planner"].append((time.perf_counter() - t0) * 1e3)
                record = plan_record(result, snapshot, config.verbose_candidates)
                planner_records.append(record)
                planner_fh.write(json.dumps(record, sort_keys=True) + "\n")
                if config.closed_loop and result.selected is not None:
                    steering.update_plan(result.selected.waypoints, snapshot.ego)

            t0 = time.perf_counter()
            odom = Pose2.identity() if prev_ego is None else relative_pose(prev_ego, snapshot.ego)
            add_snapshot(graph, snapshot, odom, global_cfg)
            add_snapshot(baseline, snapshot, odom, global_cfg)
            snapshots_since_opt += 1
            if global_cfg.optimize_every and snapshots_since_opt >= global_cfg.optimize_every:
                result_opt = optimize(graph, global_cfg)
                graph.merge_estimates(result_opt.graph)
                snapshots_since_opt = 0
            timings["global_map"].append((time.perf_counter() - t0) * 1e3)

            prev_ego = snapshot.ego
            prev_true = true_pose
            frames += 1

            # advance the true pose
            if config.closed_loop:
                s_here = geom.nearest_arc_length(true_pose.position)
                lateral = float(np.hypot(*(true_pose.position - geom.point_at(s_here))))
                if lateral > config.divergence_margin_m:
                    raise RunFailure(
                        f"ego left the track corridor: {lateral:.2f} m off the centerline at {timestamp:.1f} s"
                    )
                delta_s = (s_here - last_s) % geom.length
                if delta_s < geom.length / 2:
                    progress += delta_s
                last_s = s_here
                speed = config.closed_loop_speed_mps
                yaw = steering.yaw_rate(speed)
                true_pose = integrate_velocity(true_pose, Velocity2(speed, 0.0, yaw), dt)
            else:
                arc_s += run.speed_at(arc_s) * dt
                progress = arc_s
                true_pose = geom.pose_at(arc_s)
        completed = progress >= geom.length
    except RunFailure as exc:
        failure = exc
    finally:
        snapshot_writer.close()
        planner_fh.close()

    # final optimization pass and exports
    final_cost = None
    if graph.poses:
        result_opt = optimize(graph, global_cfg)
        graph.merge_estimates(result_opt.graph)
        final_cost = result_opt.final_cost
    estimated = export_map(graph, require_optimized=False, min_edges=global_cfg.export_min_edges)
    dead_reckoned = export_map(baseline, require_optimized=False, min_edges=global_cfg.export_min_edges)
    save_map(estimated, out_dir / "map_estimated.json")
    save_map(dead_reckoned, out_dir / "map_dead_reckoned.json")
    save_graph(graph, out_dir / "graph.json")
    save_trajectory(out_dir / "trajectory.csv", trajectory_rows)
    _write_planner_timing(out_dir / "planner_timing.csv", timings["planner"])

    rmse = rmse_dr = None
    map_metrics: dict = {"landmarks": len(estimated), "final_cost": final_cost}
    if estimated and start_pose is not None:
        truth = track.cone_positions()
        rmse = _aligned_rmse(estimated, truth, start_pose)
        rmse_dr = _aligned_rmse(dead_reckoned, truth, start_pose)
        alignment = _alignment(estimated, truth, start_pose)
        map_metrics.update(
            {
                "rmse_m": rmse,
                "rmse_dead_reckoned_m": rmse_dr,
                "matched": len(alignment.correspondences),
                "unmatched_estimated": alignment.unmatched_estimated,
                "unmatched_truth": alignment.unmatched_truth,
                "alignment_rotation_rad": alignment.rotation,
                "alignment_translation_m": [float(v) for v in alignment.translation],
            }
        )

    stats = planning_stats(planner_records, track, trajectory) if planner_records else None
    report = build_report(
        map_metrics,
        stats,
        timings,
        {
            "name": config.name,
            "seed": config.seed,
            "frames": frames,
            "completed_lap": completed,
            "track_length_m": track.total_length,
            "failure": str(failure) if failure else None,
        },
    )
    save_report(report, out_dir / "report.json", out_dir / "report_hist.csv")

    if failure is not None:
        raise RunFailure(str(failure))
    return RunResult(completed, frames, out_dir, rmse, rmse_dr, report)


def _force_map_mode(name: str):
    from .local_map import MapMode

    return MapMode(name)


def _alignment(records: list[dict], truth: np.ndarray, start_pose: Pose2):
    pts = np.array([[r["x_m"], r["y_m"]] for r in records])
    world = np.array([start_pose.rotation() @ p + start_pose.position for p in pts])
    return icp_align(world, truth, init=Pose2.identity())


def _aligned_rmse(records: list[dict], truth: np.ndarray, start_pose: Pose2) -> float:
    return map_rmse(_alignment(records, truth, start_pose))


def _write_planner_timing(path: Path, samples_ms: list[float]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame,planner_ms\n")
        for k, v in enumerate(samples_ms):
            fh.write(f"{k},{v:.3f}\n")


# ---------------------------------------------------------------------------
# Replay: re-run planner / global map over a recorded snapshot log


def replay_snapshots(
    snapshots, config: RunConfig, out_dir: Path | str, track: TrackDefinition | None = None
) -> dict:
    """Re-run planning and graph building on recorded snapshots.

    Deterministic: identical snapshots and configs produce byte-identical
    planner logs and map exports.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_resolved(config, out_dir / "config_resolved.json")
    planner_cfg = config.planner_config()
    global_cfg = config.global_map_config()

    planner_records = []
    graph = Graph()
    prev_ego: Pose2 | None = None
    with open(out_dir / "planner_log.ndjson", "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema_version": 1, "kind": "planner_log"}, sort_keys=True) + "\n")
        for snapshot in snapshots:
            if config.plan_enabled:
                result = plan_snapshot(snapshot, planner_cfg)
                record = plan_record(result, snapshot, config.verbose_candidates)
                planner_records.append(record)
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            odom = Pose2.identity() if prev_ego is None else relative_pose(prev_ego, snapshot.ego)
            add_snapshot(graph, snapshot, odom, global_cfg)
            prev_ego = snapshot.ego

    if graph.poses:
        result_opt = optimize(graph, global_cfg)
        graph.merge_estimates(result_opt.graph)
    estimated = export_map(graph, require_optimized=False, min_edges=global_cfg.export_min_edges)
    save_map(estimated, out_dir / "map_estimated.json")
    save_graph(graph, out_dir / "graph.json")

    report: dict = {"frames": len(planner_records), "landmarks": len(estimated)}
    if track is not None and planner_records:
        stats = planning_stats(planner_records, track)
        report["planning"] = {
            "path_length_fractions": [float(v) for v in stats.path_length_fractions],
            "out_of_track_fractions": [float(v) for v in stats.out_of_track_fractions],
            "total_paths": stats.total_paths,
        }
    (out_dir / "replay_report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return report
