"""Run configuration: JSON schema, defaults, and builtin reference scenarios.

A run config is one JSON document selecting a track (inline spec or file),
sensor profiles per pipeline, the speed profile, seeds, and per-module
parameter overrides. Every resolved default is dumped into the run directory
so runs are self-describing.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .global_map import GlobalMapConfig
from .local_map import LocalMapConfig
from .planner import PlannerConfig, PriorConfig, SearchLimits
from .simulate import SensorProfile, TrackSpec, default_profile, noise_free_profile

SOURCE_MODES = ("fusion", "lidar_only", "camera_only")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration (CLI exit code 2)."""


class RunFailure(RuntimeError):
    """A started run could not complete (CLI exit code 1)."""


@dataclass
class RunConfig:
    name: str = "run"
    track_spec: TrackSpec | None = None
    track_file: str | None = None
    profiles: dict[str, SensorProfile] = field(default_factory=dict)
    max_speed_mps: float = 5.0
    lateral_accel_mps2: float = 6.0
    frame_rate_hz: float = 10.0
    seed: int = 0
    force_mode: str | None = None  # fusion | lidar_only | camera_only | degraded
    mode_schedule: list[dict] = field(default_factory=list)
    plan_enabled: bool = True
    verbose_candidates: bool = False
    closed_loop: bool = False
    closed_loop_speed_mps: float = 5.0
    divergence_margin_m: float = 3.0
    optimize_every: int = 10
    local_map_overrides: dict = field(default_factory=dict)
    global_map_overrides: dict = field(default_factory=dict)
    planner_limit_overrides: dict = field(default_factory=dict)
    prior_weight: float | None = None

    def __post_init__(self) -> None:
        if self.track_spec is None and self.track_file is None:
            self.track_spec = TrackSpec()
        if not self.profiles:
            self.profiles = {m: default_profile(m) for m in SOURCE_MODES}
        if self.force_mode not in (None, "fusion", "lidar_only", "camera_only", "degraded"):
            raise ConfigError(f"unknown force_mode {self.force_mode!r}")
        if self.frame_rate_hz <= 0 or self.max_speed_mps <= 0:
            raise ConfigError("frame rate and speed must be positive")
        for event in self.mode_schedule:
            if "time_s" not in event or not ({"fail", "restore"} & set(event)):
                raise ConfigError(f"schedule event needs time_s and fail/restore: {event}")
            for key in ("fail", "restore"):
                for source in event.get(key, []):
                    if source not in SOURCE_MODES:
                        raise ConfigError(f"unknown pipeline {source!r} in mode schedule")

    # -- derived module configs -------------------------------------------

    def primary_profile(self) -> SensorProfile:
        if self.force_mode in (None, "fusion"):
            return self.profiles["fusion"]
        if self.force_mode == "degraded":
            return self.profiles["lidar_only"]
        return self.profiles[self.force_mode]

    def local_map_config(self) -> LocalMapConfig:
        return LocalMapConfig.for_profile(
            self.primary_profile(), self.frame_rate_hz, **self.local_map_overrides
        )

    def global_map_config(self) -> GlobalMapConfig:
        overrides = dict(self.global_map_overrides)
        overrides.setdefault("optimize_every", self.optimize_every)
        return GlobalMapConfig(**overrides)

    def planner_config(self) -> PlannerConfig:
        limits = SearchLimits(**self.planner_limit_overrides)
        prior = PriorConfig.defaults(limits)
        if self.prior_weight is not None:
            prior = dataclasses.replace(prior, prior_weight=self.prior_weight)
        return PlannerConfig(limits=limits, prior=prior)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "track_spec": dataclasses.asdict(self.track_spec) if self.track_spec else None,
            "track_file": self.track_file,
            "profiles": {mode: p.to_dict() for mode, p in self.profiles.items()},
            "max_speed_mps": self.max_speed_mps,
            "lateral_accel_mps2": self.lateral_accel_mps2,
            "frame_rate_hz": self.frame_rate_hz,
            "seed": self.seed,
            "force_mode": self.force_mode,
            "mode_schedule": self.mode_schedule,
            "plan_enabled": self.plan_enabled,
            "verbose_candidates": self.verbose_candidates,
            "closed_loop": self.closed_loop,
            "closed_loop_speed_mps": self.closed_loop_speed_mps,
            "divergence_margin_m": self.divergence_margin_m,
            "optimize_every": self.optimize_every,
            "local_map_overrides": self.local_map_overrides,
            "global_map_overrides": self.global_map_overrides,
            "planner_limit_overrides": self.planner_limit_overrides,
            "prior_weight": self.prior_weight,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if data.get("track_spec") is not None:
            try:
                data["track_spec"] = TrackSpec.from_dict(data["track_spec"])
            except TypeError as exc:
                raise ConfigError(f"bad track_spec: {exc}") from exc
        profiles = {}
        for mode, value in (data.get("profiles") or {}).items():
            if mode not in SOURCE_MODES:
                raise ConfigError(f"unknown profile mode {mode!r}")
            if isinstance(value, str):
                profiles[mode] = resolve_profile(value)
            else:
                try:
                    profiles[mode] = SensorProfile.from_dict(value)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"bad profile for {mode}: {exc}") from exc
        data["profiles"] = profiles
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def resolve_profile(ref: str) -> SensorProfile:
    """Resolve a profile reference: builtin:<name>, noise_free:<mode>, or a path."""
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        if name not in SOURCE_MODES:
            raise ConfigError(f"no builtin profile {name!r}")
        return default_profile(name)
    if ref.startswith("noise_free:"):
        mode = ref.split(":", 1)[1]
        if mode not in SOURCE_MODES:
            raise ConfigError(f"no noise-free profile for mode {mode!r}")
        return noise_free_profile(mode)
    path = Path(ref)
    if not path.exists():
        raise ConfigError(f"profile file not found: {ref}")
    return SensorProfile.from_dict(json.loads(path.read_text()))


def load_config(ref: str | Path) -> RunConfig:
    """Load a run config from a file path or a builtin scenario name."""
    path = Path(ref)
    if path.exists():
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return RunConfig.from_dict(data)
    builtin = builtin_config_names()
    name = str(ref)
    if name in builtin:
        data = json.loads(resources.files("conetrack.configs").joinpath(f"{name}.json").read_text())
        return RunConfig.from_dict(data)
    raise ConfigError(f"no such config file or builtin scenario: {ref} (builtins: {sorted(builtin)})")


def builtin_config_names() -> set[str]:
    out = set()
    for entry in resources.files("conetrack.configs").iterdir():
        if entry.name.endswith(".json"):
            out.add(entry.name[: -len(".json")])
    return out


def dump_resolved(config: RunConfig, path: Path | str) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))
