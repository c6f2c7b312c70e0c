"""Short-horizon filtered landmark map.

Fuses per-frame cone observations with velocity dead reckoning: the ego pose
is integrated from velocity readings starting at the origin, per-cone position
uncertainty is filtered with linear Kalman updates and grown with a process
noise term on prediction, colors accumulate as normalized evidence sums, and
an existence score driven by negative observations prunes false positives.

All operations are functional: they return new state objects and never touch
previously emitted snapshots.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import (
    ColorDistribution,
    ConeEstimate,
    ConeObservation,
    Gaussian2,
    Pose2,
    SensorSource,
    Velocity2,
    bhattacharyya_distance_matrix,
    integrate_velocity,
    rotate_covariance,
    transform_point,
)

SNAPSHOT_SCHEMA_VERSION = 1


class MapMode(Enum):
    """Operating mode, selected from which pipelines are currently alive."""

    FUSION = "fusion"
    LIDAR_ONLY = "lidar_only"
    CAMERA_ONLY = "camera_only"
    DEGRADED = "degraded"  # fusion down, both single-sensor pipelines up


# which observation sources feed the map in each mode; when fusion runs, the
# single-sensor pipelines are redundant and must not be fused in again
_MODE_SOURCES = {
    MapMode.FUSION: (SensorSource.FUSION,),
    MapMode.LIDAR_ONLY: (SensorSource.LIDAR_ONLY,),
    MapMode.CAMERA_ONLY: (SensorSource.CAMERA_ONLY,),
    MapMode.DEGRADED: (SensorSource.LIDAR_ONLY, SensorSource.CAMERA_ONLY),
}


@dataclass(frozen=True)
class LocalMapConfig:
    """Tunable filter parameters.

    The odometry process noise and existence dynamics are hand-set defaults
    (not calibrated against any recorded data); ``for_frame_rate`` picks an
    existence decay that rejects a fully-certain false positive in under half
    a second of consecutive misses.
    """

    # Bhattacharyya gate. The covariance-mismatch term alone reaches ~2 when
    # a long-unseen cone (grown covariance) meets a tight fresh observation,
    # so the gate must sit above that for revisits to re-associate; neighbor
    # confusion at rule-legal cone spacing stays far beyond this value.
    gate_distance: float = 3.0
    process_noise_rate: tuple[float, float] = (0.02, 0.02)  # m^2 per second
    # covariance growth saturates here (per-axis variance, m^2); bounds the
    # mismatch term for arbitrarily long revisit gaps
    covariance_ceiling: float = 0.25
    max_range_m: float = 15.0
    fov_half_angle_rad: float = 1.1
    negative_frustum_shrink: float = 0.9  # avoid penalizing cones at the frustum edge
    existence_gain: float = 0.5
    existence_decay: float = 0.45
    prune_threshold: float = 0.1
    initial_existence: float = 0.5
    # cones unseen this long are evicted: the map holds recently observed
    # cones only. Revisited ground then re-enters as fresh ids, which is what
    # lets the global map's Euclidean re-association carry loop-closure
    # information instead of the filter absorbing the drift locally.
    eviction_timeout_s: float = 8.0
    staleness_timeout_s: float = 0.35
    # per-(mode, source) color evidence scaling; unlisted pairs weigh 1.0
    color_weights: tuple[tuple[str, str, float], ...] = ((MapMode.DEGRADED.value, SensorSource.LIDAR_ONLY.value, 0.3),)

    def color_weight(self, mode: MapMode, source: SensorSource) -> float:
        for mode_v, source_v, w in self.color_weights:
            if mode_v == mode.value and source_v == source.value:
                return w
        return 1.0

    @classmethod
    def for_frame_rate(
        cls, frame_rate_hz: float, max_range_m: float = 15.0, fov_half_angle_rad: float = 1.1, **overrides
    ) -> "LocalMapConfig":
        base = cls(max_range_m=max_range_m, fov_half_angle_rad=fov_half_angle_rad, **overrides)
        # misses strictly inside 0.5 s must take a certain cone below the
        # prune threshold: decay^n < threshold with n = frames in (0, 0.5 s)
        n = max(int(math.ceil(0.5 * frame_rate_hz)) - 1, 1)
        decay = min(base.existence_decay, (0.5 * base.prune_threshold) ** (1.0 / n))
        return replace(base, existence_decay=decay)

    @classmethod
    def for_profile(cls, profile, frame_rate_hz: float, **overrides) -> "LocalMapConfig":
        """Derive frustum limits from a sensor profile.

        A drift-free velocity source (all sigmas zero) needs no covariance
        growth; otherwise the hand-set default applies.
        """
        if "process_noise_rate" not in overrides:
            drifts = tuple(profile.velocity_sigma) + tuple(profile.velocity_sigma_per_speed)
            if all(v == 0.0 for v in drifts):
                overrides["process_noise_rate"] = (0.0, 0.0)
        return cls.for_frame_rate(
            frame_rate_hz,
            max_range_m=profile.max_range_m,
            fov_half_angle_rad=profile.fov_half_angle_rad,
            **overrides,
        )


@dataclass(frozen=True)
class LocalMapState:
    """Filter state; treat as immutable and use the module operations."""

    ego: Pose2 = field(default_factory=Pose2.identity)
    cones: dict[int, ConeEstimate] = field(default_factory=dict)
    time: float = 0.0
    mode: MapMode = MapMode.FUSION
    next_cone_id: int = 0
    last_source_time: dict[SensorSource, float] = field(default_factory=dict)


@dataclass(frozen=True)
class AssociationResult:
    """One-to-one matching of a frame's observations against the map."""

    pairs: tuple[tuple[int, int], ...]  # (observation index, cone id)
    new_observations: tuple[int, ...]  # unmatched observation indices
    unmatched_cones_in_fov: tuple[int, ...]  # cone ids expected but unseen


@dataclass(frozen=True)
class LocalMapSnapshot:
    """Frozen copy of the map at one frame time.

    Cone ids are stable across snapshots (never reused), which is what lets
    downstream consumers re-use the map's data associations. ``observed_ids``
    lists the cones matched or created by the latest frame.
    """

    timestamp: float
    ego: Pose2
    cones: tuple[ConeEstimate, ...]
    observed_ids: frozenset[int]
    mode: MapMode


def predict(state: LocalMapState, vel: Velocity2, dt: float, config: LocalMapConfig) -> LocalMapState:
    """Dead-reckon the ego pose and grow every cone covariance by Q * dt.

    Growth saturates at the configured ceiling (uniform shrink back onto it),
    so estimates stay associable after arbitrarily long out-of-view gaps.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if dt == 0:
        return state
    ego = integrate_velocity(state.ego, vel, dt)
    growth = np.diag(config.process_noise_rate) * dt
    cones = {}
    for cid, cone in state.cones.items():
        cov = cone.position.cov + growth
        mean_var = 0.5 * (cov[0, 0] + cov[1, 1])
        if mean_var > config.covariance_ceiling:
            cov = cov * (config.covariance_ceiling / mean_var)
        cones[cid] = replace(cone, position=Gaussian2(cone.position.mean, cov))
    return replace(state, ego=ego, cones=cones, time=state.time + dt)


def observation_to_local(ego: Pose2, obs: ConeObservation) -> ConeObservation:
    """Re-express a car-frame observation in the local-map frame."""
    mean = transform_point(ego, obs.position.mean)
    cov = rotate_covariance(ego.theta, obs.position.cov)
    return replace(obs, position=Gaussian2(mean, cov))


def _in_frustum(ego: Pose2, point: np.ndarray, config: LocalMapConfig, shrink: float = 1.0) -> bool:
    d = point - ego.position
    r = math.hypot(d[0], d[1])
    if r > config.max_range_m * shrink:
        return False
    bearing = math.atan2(d[1], d[0]) - ego.theta
    bearing = math.atan2(math.sin(bearing), math.cos(bearing))
    return abs(bearing) <= config.fov_half_angle_rad * shrink


def associate(
    state: LocalMapState, observations: Sequence[ConeObservation], config: LocalMapConfig
) -> AssociationResult:
    """Greedy one-to-one matching by ascending Bhattacharyya distance.

    Observations must already be expressed in the local-map frame. Matches
    above the gate are rejected; leftover observations are new. Cones inside
    the (slightly shrunk) sensor frustum that received no observation are
    reported for the negative observation model.
    """
    cone_ids = sorted(state.cones)
    if not observations or not cone_ids:
        unmatched = tuple(
            cid for cid in cone_ids if _in_frustum(state.ego, state.cones[cid].position.mean, config, config.negative_frustum_shrink)
        )
        return AssociationResult((), tuple(range(len(observations))), unmatched)

    obs_means = np.array([o.position.mean for o in observations])
    obs_covs = np.array([o.position.cov for o in observations])
    cone_means = np.array([state.cones[cid].position.mean for cid in cone_ids])
    cone_covs = np.array([state.cones[cid].position.cov for cid in cone_ids])
    dist = bhattacharyya_distance_matrix(obs_means, obs_covs, cone_means, cone_covs)

    oi, ci = np.nonzero(dist <= config.gate_distance)
    order = sorted(range(len(oi)), key=lambda k: (dist[oi[k], ci[k]], cone_ids[ci[k]], oi[k]))
    used_obs: set[int] = set()
    used_cones: set[int] = set()
    pairs: list[tuple[int, int]] = []
    for k in order:
        o, c = int(oi[k]), int(ci[k])
        if o in used_obs or c in used_cones:
            continue
        used_obs.add(o)
        used_cones.add(c)
        pairs.append((o, cone_ids[c]))
    pairs.sort()
    new = tuple(i for i in range(len(observations)) if i not in used_obs)
    matched_ids = {cid for _, cid in pairs}
    unmatched = tuple(
        cid
        for cid in cone_ids
        if cid not in matched_ids
        and _in_frustum(state.ego, state.cones[cid].position.mean, config, config.negative_frustum_shrink)
    )
    return AssociationResult(tuple(pairs), new, unmatched)


def update_position(cone: ConeEstimate, obs: ConeObservation) -> ConeEstimate:
    """Linear Kalman update with an identity observation model."""
    sigma = cone.position.cov
    innovation_cov = sigma + obs.position.cov
    det = innovation_cov[0, 0] * innovation_cov[1, 1] - innovation_cov[0, 1] * innovation_cov[1, 0]
    if det <= 0 or not np.isfinite(det):
        raise ValueError("singular innovation covariance")
    inv = np.array(
        [[innovation_cov[1, 1], -innovation_cov[0, 1]], [-innovation_cov[1, 0], innovation_cov[0, 0]]]
    ) / det
    gain = sigma @ inv
    mean = cone.position.mean + gain @ (obs.position.mean - cone.position.mean)
    cov = (np.eye(2) - gain) @ sigma
    return replace(cone, position=Gaussian2(mean, cov))


def update_color(cone: ConeEstimate, obs_color: ColorDistribution, weight: float = 1.0) -> ConeEstimate:
    """Accumulate color evidence; the reported color is its normalization."""
    return replace(cone, color_evidence=cone.color_evidence + weight * obs_color.as_array())


def apply_negative_observations(
    state: LocalMapState, result: AssociationResult, config: LocalMapConfig
) -> LocalMapState:
    """Existence bookkeeping: boost matched cones, decay unseen-in-FOV cones.

    Cones whose existence falls below the prune threshold are deleted.
    """
    matched = {cid for _, cid in result.pairs}
    cones: dict[int, ConeEstimate] = {}
    unseen = set(result.unmatched_cones_in_fov)
    for cid, cone in state.cones.items():
        if cid in matched:
            existence = cone.existence + config.existence_gain * (1.0 - cone.existence)
            cones[cid] = replace(cone, existence=existence)
        elif cid in unseen:
            existence = cone.existence * config.existence_decay
            if existence >= config.prune_threshold:
                cones[cid] = replace(cone, existence=existence)
        else:
            cones[cid] = cone
    return replace(state, cones=cones)


def _resolve_mode(state: LocalMapState, now: float, config: LocalMapConfig) -> MapMode:
    def fresh(source: SensorSource) -> bool:
        last = state.last_source_time.get(source)
        return last is not None and now - last <= config.staleness_timeout_s

    if fresh(SensorSource.FUSION):
        return MapMode.FUSION
    lidar, camera = fresh(SensorSource.LIDAR_ONLY), fresh(SensorSource.CAMERA_ONLY)
    if lidar and camera:
        return MapMode.DEGRADED
    if lidar:
        return MapMode.LIDAR_ONLY
    if camera:
        return MapMode.CAMERA_ONLY
    return state.mode


def ingest_frame(
    state: LocalMapState,
    observations: Sequence[ConeObservation],
    vel: Velocity2,
    dt: float,
    config: LocalMapConfig,
    mode: MapMode | None = None,
    present_sources: Iterable[SensorSource] | None = None,
) -> tuple[LocalMapState, LocalMapSnapshot]:
    """Run one full filter step and emit a frozen snapshot.

    predict -> per-source association -> Kalman/color updates -> negative
    observation pass -> prune -> snapshot. ``mode`` forces the operating mode;
    otherwise it is derived from per-source message staleness.
    ``present_sources`` marks pipelines that delivered a (possibly empty)
    message this frame; by default it is inferred from the observations.
    """
    state = predict(state, vel, dt, config)
    now = state.time

    sources = set(present_sources) if present_sources is not None else {o.source for o in observations}
    last_seen = dict(state.last_source_time)
    for source in sources:
        last_seen[source] = now
    state = replace(state, last_source_time=last_seen)
    active_mode = mode if mode is not None else _resolve_mode(state, now, config)
    state = replace(state, mode=active_mode)

    all_pairs: list[tuple[int, int]] = []
    all_new: list[int] = []
    observed: set[int] = set()
    for source in _MODE_SOURCES[active_mode]:
        group = [(i, o) for i, o in enumerate(observations) if o.source is source]
        if not group:
            continue
        local_obs = [observation_to_local(state.ego, o) for _, o in group]
        assoc = associate(state, local_obs, config)
        cones = dict(state.cones)
        weight = config.color_weight(active_mode, source)
        for obs_idx, cid in assoc.pairs:
            cone = update_position(cones[cid], local_obs[obs_idx])
            cone = update_color(cone, local_obs[obs_idx].color, weight)
            cones[cid] = replace(cone, last_seen=now)
            observed.add(cid)
            all_pairs.append((group[obs_idx][0], cid))
        next_id = state.next_cone_id
        for obs_idx in assoc.new_observations:
            o = local_obs[obs_idx]
            cones[next_id] = ConeEstimate(
                id=next_id,
                position=o.position,
                color_evidence=weight * o.color.as_array() + 1e-12,
                existence=config.initial_existence,
                last_seen=now,
            )
            observed.add(next_id)
            all_new.append(group[obs_idx][0])
            next_id += 1
        state = replace(state, cones=cones, next_cone_id=next_id)

    unmatched_in_fov = tuple(
        cid
        for cid in sorted(state.cones)
        if cid not in observed
        and _in_frustum(state.ego, state.cones[cid].position.mean, config, config.negative_frustum_shrink)
    )
    frame_result = AssociationResult(tuple(sorted(all_pairs)), tuple(sorted(all_new)), unmatched_in_fov)
    state = apply_negative_observations(state, frame_result, config)
    if config.eviction_timeout_s is not None:
        fresh = {
            cid: cone
            for cid, cone in state.cones.items()
            if now - cone.last_seen <= config.eviction_timeout_s
        }
        if len(fresh) != len(state.cones):
            state = replace(state, cones=fresh)

    snapshot = LocalMapSnapshot(
        timestamp=now,
        ego=state.ego,
        cones=tuple(state.cones[cid] for cid in sorted(state.cones)),
        observed_ids=frozenset(cid for cid in observed if cid in state.cones),
        mode=active_mode,
    )
    return state, snapshot


# ---------------------------------------------------------------------------
# Snapshot log serialization (newline-delimited JSON)


def snapshot_to_dict(snapshot: LocalMapSnapshot) -> dict:
    return {
        "timestamp_s": snapshot.timestamp,
        "mode": snapshot.mode.value,
        "ego": {"x_m": snapshot.ego.x, "y_m": snapshot.ego.y, "theta_rad": snapshot.ego.theta},
        "observed_ids": sorted(snapshot.observed_ids),
        "cones": [
            {
                "id": cone.id,
                "x_m": float(cone.position.mean[0]),
                "y_m": float(cone.position.mean[1]),
                "cov_m2": [[float(v) for v in row] for row in cone.position.cov],
                "color_evidence": [float(v) for v in cone.color_evidence],
                "existence": cone.existence,
                "last_seen_s": cone.last_seen,
            }
            for cone in snapshot.cones
        ],
    }


def snapshot_from_dict(data: dict) -> LocalMapSnapshot:
    ego = Pose2(data["ego"]["x_m"], data["ego"]["y_m"], data["ego"]["theta_rad"])
    cones = tuple(
        ConeEstimate(
            id=c["id"],
            position=Gaussian2(np.array([c["x_m"], c["y_m"]]), np.array(c["cov_m2"])),
            color_evidence=np.array(c["color_evidence"]),
            existence=c["existence"],
            last_seen=c["last_seen_s"],
        )
        for c in data["cones"]
    )
    return LocalMapSnapshot(
        timestamp=data["timestamp_s"],
        ego=ego,
        cones=cones,
        observed_ids=frozenset(data["observed_ids"]),
        mode=MapMode(data["mode"]),
    )


class SnapshotLogWriter:
    """Writes one snapshot per line, with a schema header line."""

    def __init__(self, path: Path | str):
        self._fh = open(path, "w", encoding="utf-8")
        self._fh.write(json.dumps({"schema_version": SNAPSHOT_SCHEMA_VERSION, "kind": "snapshot_log"}, sort_keys=True) + "\n")

    def write(self, snapshot: LocalMapSnapshot) -> None:
        self._fh.write(json.dumps(snapshot_to_dict(snapshot), sort_keys=True) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "SnapshotLogWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class SchemaMismatchError(ValueError):
    """Log header version differs from what this build writes."""


def read_snapshot_log(path: Path | str, strict: bool = False) -> list[LocalMapSnapshot]:
    """Read a snapshot log; a malformed tail is tolerated unless ``strict``.

    Raises :class:`SchemaMismatchError` when the header announces another
    schema version.
    """
    snapshots: list[LocalMapSnapshot] = []
    with open(path, encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise SchemaMismatchError("snapshot log missing schema header") from exc
        if header.get("kind") != "snapshot_log" or header.get("schema_version") != SNAPSHOT_SCHEMA_VERSION:
            raise SchemaMismatchError(f"unsupported snapshot log header: {header}")
        for line in fh:
            if not line.strip():
                continue
            try:
                snapshots.append(snapshot_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError):
                if strict:
                    raise
                break  # truncated tail: keep the valid prefix
    return snapshots
