"""Track boundary and middle-path estimation from a local-map snapshot.

Three stages: the cone layout is discretized by Delaunay triangulation,
candidate middle paths are grown through adjacent triangles (waypoints are the
midpoints of crossed edges), and the best candidate is picked by Bayesian
scoring. The log-prior penalizes geometric irregularity through six
hand-crafted features; the log-likelihood multiplies each observed cone's
probability of the color class its assigned role requires: left-boundary
cones count the better of blue/unknown, right-boundary cones the better of
yellow/unknown, and every remaining cone its most probable class, so the
whole snapshot votes on every candidate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .core import ConeEstimate, Pose2, normalize_angle

LIKELIHOOD_FLOOR = 1e-6


class DegenerateSnapshotError(ValueError):
    """Too few or collinear cones; no triangulation exists."""


@dataclass(frozen=True)
class Triangulation:
    """Delaunay triangulation over cone positions.

    ``neighbors[t, k]`` is the triangle across the edge opposite vertex ``k``
    of triangle ``t`` (or -1 on the hull), mirroring scipy's convention.
    """

    points: np.ndarray  # (n, 2)
    simplices: np.ndarray  # (m, 3) vertex indices
    neighbors: np.ndarray  # (m, 3)

    def edges(self) -> set[tuple[int, int]]:
        out: set[tuple[int, int]] = set()
        for tri in self.simplices:
            for a, b in ((0, 1), (1, 2), (0, 2)):
                out.add(tuple(sorted((int(tri[a]), int(tri[b])))))
        return out

    def interior_crossings(self, t: int) -> list[tuple[int, tuple[int, int]]]:
        """(neighbor triangle, shared edge) pairs reachable from triangle t."""
        out = []
        for k in range(3):
            nb = int(self.neighbors[t, k])
            if nb < 0:
                continue
            verts = [int(v) for i, v in enumerate(self.simplices[t]) if i != k]
            out.append((nb, (min(verts), max(verts))))
        return out


def triangulate(positions: np.ndarray) -> Triangulation:
    """Delaunay triangulation of cone positions."""
    pts = np.asarray(positions, dtype=float)
    if len(pts) < 3:
        raise DegenerateSnapshotError(f"need at least 3 cones, got {len(pts)}")
    try:
        tri = Delaunay(pts)
    except QhullError as exc:
        raise DegenerateSnapshotError("cones are degenerate (collinear?)") from exc
    if tri.simplices.size == 0:
        raise DegenerateSnapshotError("triangulation is empty")
    return Triangulation(pts, tri.simplices.copy(), tri.neighbors.copy())


@dataclass(frozen=True)
class PathFeatures:
    """Geometric features of a candidate path."""

    max_heading_change_rad: float  # sharpest bend between consecutive segments
    left_spacing_std_m: float  # std of consecutive left-cone gaps
    right_spacing_std_m: float  # std of consecutive right-cone gaps
    width_std_m: float  # std of crossed-edge lengths
    crossed_edges_capped: float  # edge count, saturated at the desired number
    length_m: float  # waypoint polyline length

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.max_heading_change_rad,
                self.left_spacing_std_m,
                self.right_spacing_std_m,
                self.width_std_m,
                self.crossed_edges_capped,
                self.length_m,
            ]
        )


@dataclass(frozen=True)
class CandidatePath:
    waypoints: np.ndarray  # (k, 2) crossed-edge midpoints, in path order
    crossed_edges: tuple[tuple[int, int], ...]  # cone index pairs
    left_cones: frozenset[int]
    right_cones: frozenset[int]
    left_sequence: tuple[int, ...]  # left cones in first-crossing order
    right_sequence: tuple[int, ...]
    features: PathFeatures
    log_prior: float = math.nan
    log_likelihood: float = math.nan
    log_posterior: float = math.nan

    def __post_init__(self) -> None:
        wp = np.asarray(self.waypoints, dtype=float).reshape(-1, 2)
        wp.setflags(write=False)
        object.__setattr__(self, "waypoints", wp)
        if len(wp) != len(self.crossed_edges):
            raise ValueError("one waypoint per crossed edge required")
        if self.left_cones & self.right_cones:
            raise ValueError("left and right cone sets must be disjoint")


@dataclass(frozen=True)
class SearchLimits:
    max_edges: int = 25
    max_length_m: float = 15.0
    desired_edge_count: int = 15
    beam_width: int | None = 300  # None: exhaustive enumeration
    require_forward_start: bool = True
    # middle paths never double back; expansions turning harder than this
    # are treated as dead ends
    max_step_turn_rad: float = math.pi / 2
    # rule-limit geometry bounds the distance between consecutive crossed-edge
    # midpoints; longer jumps mean leaving the cone corridor (sliver edges)
    max_step_length_m: float = 6.0


@dataclass(frozen=True)
class FeatureTerm:
    weight: float
    setpoint: float
    scale: float

    def __post_init__(self) -> None:
        if self.scale <= 0:
            raise ValueError("feature scale must be positive")
        if self.weight < 0:
            raise ValueError("feature weight must be non-negative")


@dataclass(frozen=True)
class PriorConfig:
    """Validity prior: exp(-prior_weight * sum of weighted feature deviations)."""

    prior_weight: float = 29.0
    terms: tuple[FeatureTerm, ...] = ()

    @classmethod
    def defaults(cls, limits: SearchLimits = SearchLimits()) -> "PriorConfig":
        # feature weights follow the published operating point; setpoints and
        # scales are uncalibrated defaults chosen for dimensional comparability
        return cls(
            prior_weight=29.0,
            terms=(
                FeatureTerm(0.1, 0.0, math.pi**2),
                FeatureTerm(0.1, 0.0, 1.0),
                FeatureTerm(0.1, 0.0, 1.0),
                FeatureTerm(0.1, 0.0, 1.0),
                FeatureTerm(0.1, float(limits.desired_edge_count), 1.0),
                FeatureTerm(0.5, limits.max_length_m, limits.max_length_m**2),
            ),
        )

    def __post_init__(self) -> None:
        if self.terms and len(self.terms) != 6:
            raise ValueError("exactly one term per feature required")


def _population_std(values: Sequence[float]) -> float:
    if len(values) < 1:
        return 0.0
    arr = np.asarray(values, dtype=float)
    return float(np.sqrt(np.mean((arr - arr.mean()) ** 2)))


def compute_features(
    waypoints: np.ndarray,
    crossed_edges: Sequence[tuple[int, int]],
    points: np.ndarray,
    left_sequence: Sequence[int],
    right_sequence: Sequence[int],
    limits: SearchLimits,
) -> PathFeatures:
    """Evaluate the six scoring features on a path's geometry.

    Sides with fewer than two cones contribute a zero spacing deviation so
    sparse far-field candidates are not discarded outright.
    """
    wp = np.asarray(waypoints, dtype=float)
    if len(wp) >= 2:
        seg = np.diff(wp, axis=0)
        length = float(np.hypot(seg[:, 0], seg[:, 1]).sum())
        headings = np.arctan2(seg[:, 1], seg[:, 0])
        turns = [abs(normalize_angle(b - a)) for a, b in zip(headings, headings[1:])]
        max_turn = max(turns) if turns else 0.0
    else:
        length = 0.0
        max_turn = 0.0

    def side_std(sequence: Sequence[int]) -> float:
        if len(sequence) < 2:
            return 0.0
        gaps = [
            float(np.hypot(*(points[b] - points[a])))
            for a, b in zip(sequence, sequence[1:])
        ]
        return _population_std(gaps)

    widths = [float(np.hypot(*(points[b] - points[a]))) for a, b in crossed_edges]
    return PathFeatures(
        max_heading_change_rad=max_turn,
        left_spacing_std_m=side_std(left_sequence),
        right_spacing_std_m=side_std(right_sequence),
        width_std_m=_population_std(widths) if widths else 0.0,
        crossed_edges_capped=float(min(len(crossed_edges), limits.desired_edge_count)),
        length_m=length,
    )


def log_prior(features: PathFeatures, config: PriorConfig) -> float:
    """Log of the validity prior: negative weighted squared feature deviations."""
    cost = 0.0
    for value, term in zip(features.as_array(), config.terms):
        cost += term.weight * (value - term.setpoint) ** 2 / term.scale
    return -config.prior_weight * cost


def log_likelihood(
    cones: Sequence[ConeEstimate],
    left_cones: frozenset[int],
    right_cones: frozenset[int],
    floor: float = LIKELIHOOD_FLOOR,
) -> float:
    """Color agreement of every snapshot cone with its role under this path."""
    total = 0.0
    for idx, cone in enumerate(cones):
        color = cone.color
        if idx in left_cones:
            p = max(color.p_blue, color.p_unknown)
        elif idx in right_cones:
            p = max(color.p_yellow, color.p_unknown)
        else:
            p = max(color.p_blue, color.p_yellow, color.p_unknown)
        total += math.log(max(p, floor))
    return total


class _ConeLogTable:
    """Per-cone log color probabilities for incremental likelihood scoring.

    ``value`` agrees with :func:`log_likelihood` up to summation order; the
    search uses it for expansion gating and beam ordering only, final
    candidate scores always come from the reference form.
    """

    def __init__(self, cones: Sequence[ConeEstimate], floor: float):
        n = len(cones)
        self.left = np.empty(n)
        self.right = np.empty(n)
        self.best = np.empty(n)
        for i, cone in enumerate(cones):
            c = cone.color
            self.left[i] = math.log(max(c.p_blue, c.p_unknown, floor))
            self.right[i] = math.log(max(c.p_yellow, c.p_unknown, floor))
            self.best[i] = math.log(max(c.p_blue, c.p_yellow, c.p_unknown, floor))
        self.base = float(self.best.sum())

    def value(self, left_ids, right_ids) -> float:
        total = self.base
        for i in left_ids:
            total += self.left[i] - self.best[i]
        for i in right_ids:
            total += self.right[i] - self.best[i]
        return total


@dataclass
class _PartialPath:
    triangle: int
    visited: set[int]
    crossed: list[tuple[int, int]]
    waypoints: list[np.ndarray]
    left_votes: dict[int, int]
    right_votes: dict[int, int]
    order: list[int]  # cone indices in first-crossing order
    length: float


def _finalize_sides(partial: _PartialPath) -> tuple[tuple[int, ...], tuple[int, ...]]:
    left, right = [], []
    for idx in partial.order:
        lv = partial.left_votes.get(idx, 0)
        rv = partial.right_votes.get(idx, 0)
        (left if lv >= rv else right).append(idx)
    return tuple(left), tuple(right)


def _candidate_from_partial(partial: _PartialPath, points: np.ndarray, limits: SearchLimits) -> CandidatePath:
    left_seq, right_seq = _finalize_sides(partial)
    waypoints = np.array(partial.waypoints)
    features = compute_features(waypoints, partial.crossed, points, left_seq, right_seq, limits)
    return CandidatePath(
        waypoints=waypoints,
        crossed_edges=tuple(partial.crossed),
        left_cones=frozenset(left_seq),
        right_cones=frozenset(right_seq),
        left_sequence=left_seq,
        right_sequence=right_seq,
        features=features,
    )


def enumerate_paths(
    tri: Triangulation,
    ego: Pose2,
    limits: SearchLimits = SearchLimits(),
    cones: Sequence[ConeEstimate] | None = None,
    prior_config: PriorConfig | None = None,
    likelihood_floor: float = LIKELIHOOD_FLOOR,
) -> list[CandidatePath]:
    """Grow maximal candidate paths triangle-to-triangle from the ego.

    The root triangle is the one whose centroid is nearest a probe point 1 m
    ahead of the ego. Expansion crosses interior edges into unvisited
    triangles, stopping at the edge budget, the length cap, or a dead end;
    each stop emits one candidate. The frontier is beam-limited for bounded
    worst-case cost.

    When ``cones`` (and a prior config) are given, a step that lowers the
    partial path's posterior is treated as a dead end: consistent corridor
    extensions always score upward through the edge-count and length terms,
    so growth stops exactly where continuing would mean crossing evidence
    that contradicts the path, instead of baking a bad tail into every
    candidate.
    """
    centroids = tri.points[tri.simplices].mean(axis=1)
    probe = ego.position + np.array([math.cos(ego.theta), math.sin(ego.theta)])
    start = int(np.argmin(np.hypot(centroids[:, 0] - probe[0], centroids[:, 1] - probe[1])))
    heading = np.array([math.cos(ego.theta), math.sin(ego.theta)])

    use_scores = cones is not None and prior_config is not None
    table = _ConeLogTable(cones, likelihood_floor) if use_scores else None

    def posterior(partial: _PartialPath) -> float:
        left_seq, right_seq = _finalize_sides(partial)
        features = compute_features(
            np.array(partial.waypoints) if partial.waypoints else np.zeros((0, 2)),
            partial.crossed,
            tri.points,
            left_seq,
            right_seq,
            limits,
        )
        return log_prior(features, prior_config) + table.value(left_seq, right_seq)

    def vote_sides(partial: _PartialPath, edge: tuple[int, int], midpoint: np.ndarray, prev: np.ndarray) -> None:
        d = midpoint - prev
        if np.hypot(*d) < 1e-12:
            d = heading
        for idx in edge:
            if idx not in partial.left_votes and idx not in partial.right_votes:
                partial.order.append(idx)
            off = tri.points[idx] - midpoint
            if d[0] * off[1] - d[1] * off[0] > 0:
                partial.left_votes[idx] = partial.left_votes.get(idx, 0) + 1
                partial.right_votes.setdefault(idx, 0)
            else:
                partial.right_votes[idx] = partial.right_votes.get(idx, 0) + 1
                partial.left_votes.setdefault(idx, 0)

    def extend(partial: _PartialPath, nb: int, edge: tuple[int, int]) -> _PartialPath:
        midpoint = 0.5 * (tri.points[edge[0]] + tri.points[edge[1]])
        prev = partial.waypoints[-1] if partial.waypoints else ego.position
        child = _PartialPath(
            triangle=nb,
            visited=partial.visited | {nb},
            crossed=partial.crossed + [edge],
            waypoints=partial.waypoints + [midpoint],
            left_votes=dict(partial.left_votes),
            right_votes=dict(partial.right_votes),
            order=list(partial.order),
            length=partial.length + (float(np.hypot(*(midpoint - prev))) if partial.waypoints else 0.0),
        )
        vote_sides(child, edge, midpoint, prev)
        return child

    root = _PartialPath(start, {start}, [], [], {}, {}, [], 0.0)
    first_moves = []
    for nb, edge in tri.interior_crossings(start):
        midpoint = 0.5 * (tri.points[edge[0]] + tri.points[edge[1]])
        ahead = float((midpoint - ego.position) @ heading) > 0.0
        first_moves.append((ahead, nb, edge))
    if limits.require_forward_start and any(ahead for ahead, _, _ in first_moves):
        first_moves = [m for m in first_moves if m[0]]

    frontier = [extend(root, nb, edge) for _, nb, edge in first_moves]
    scores = {id(p): posterior(p) for p in frontier} if use_scores else {}
    candidates: list[CandidatePath] = []
    if not frontier:
        return candidates

    def turn_ok(partial: _PartialPath, edge: tuple[int, int]) -> bool:
        midpoint = 0.5 * (tri.points[edge[0]] + tri.points[edge[1]])
        if len(partial.waypoints) < 2:
            prev_dir = partial.waypoints[-1] - ego.position if partial.waypoints else heading
        else:
            prev_dir = partial.waypoints[-1] - partial.waypoints[-2]
        new_dir = midpoint - partial.waypoints[-1]
        if np.hypot(*new_dir) > limits.max_step_length_m:
            return False
        if np.hypot(*new_dir) < 1e-12 or np.hypot(*prev_dir) < 1e-12:
            return True
        turn = math.atan2(
            prev_dir[0] * new_dir[1] - prev_dir[1] * new_dir[0],
            prev_dir[0] * new_dir[0] + prev_dir[1] * new_dir[1],
        )
        return abs(turn) <= limits.max_step_turn_rad

    while frontier:
        next_frontier: list[_PartialPath] = []
        next_scores: dict[int, float] = {}
        for partial in frontier:
            if len(partial.crossed) >= limits.max_edges or partial.length >= limits.max_length_m:
                candidates.append(_candidate_from_partial(partial, tri.points, limits))
                continue
            moves = [
                (nb, edge)
                for nb, edge in tri.interior_crossings(partial.triangle)
                if nb not in partial.visited and edge != partial.crossed[-1] and turn_ok(partial, edge)
            ]
            children = [extend(partial, nb, edge) for nb, edge in moves]
            if use_scores:
                kept = []
                for child in children:
                    score = posterior(child)
                    if score >= scores[id(partial)] - 1e-9:
                        next_scores[id(child)] = score
                        kept.append(child)
                children = kept
            if not children:
                candidates.append(_candidate_from_partial(partial, tri.points, limits))
                continue
            next_frontier.extend(children)
        if limits.beam_width is not None and len(next_frontier) > limits.beam_width:
            if use_scores:
                next_frontier.sort(key=lambda p: (-next_scores[id(p)], p.crossed))
            else:
                # deterministic trim: longer paths first, then lexicographic edges
                next_frontier.sort(key=lambda p: (-p.length, p.crossed))
            next_frontier = next_frontier[: limits.beam_width]
        frontier = next_frontier
        scores = next_scores
    return candidates


def score_candidates(
    candidates: Sequence[CandidatePath],
    cones: Sequence[ConeEstimate],
    prior_config: PriorConfig,
    floor: float = LIKELIHOOD_FLOOR,
) -> list[CandidatePath]:
    """Attach log prior, likelihood, and their sum (the log posterior)."""
    out = []
    for cand in candidates:
        lp = log_prior(cand.features, prior_config)
        ll = log_likelihood(cones, cand.left_cones, cand.right_cones, floor)
        out.append(replace(cand, log_prior=lp, log_likelihood=ll, log_posterior=lp + ll))
    return out


def select_path(candidates: Sequence[CandidatePath]) -> CandidatePath | None:
    """Highest-posterior candidate; ties prefer longer, then straighter paths."""
    best = None
    best_key = None
    for idx, cand in enumerate(candidates):
        if math.isnan(cand.log_posterior):
            raise ValueError("candidates must be scored before selection")
        key = (
            -cand.log_posterior,
            -cand.features.length_m,
            cand.features.max_heading_change_rad,
            idx,
        )
        if best_key is None or key < best_key:
            best_key = key
            best = cand
    return best


@dataclass(frozen=True)
class PlannerConfig:
    limits: SearchLimits = SearchLimits()
    prior: PriorConfig = PriorConfig.defaults()
    likelihood_floor: float = LIKELIHOOD_FLOOR

    @classmethod
    def with_limits(cls, **limit_overrides) -> "PlannerConfig":
        limits = SearchLimits(**limit_overrides)
        return cls(limits=limits, prior=PriorConfig.defaults(limits))


@dataclass(frozen=True)
class PlanResult:
    selected: CandidatePath | None
    candidates: tuple[CandidatePath, ...]
    cone_ids: tuple[int, ...]  # snapshot cone ids, indexed by triangulation vertex


def plan_snapshot(snapshot, config: PlannerConfig = PlannerConfig()) -> PlanResult:
    """Full planning pass over one snapshot; empty result when degenerate."""
    cones = snapshot.cones
    cone_ids = tuple(c.id for c in cones)
    if len(cones) < 3:
        return PlanResult(None, (), cone_ids)
    positions = np.array([c.position.mean for c in cones])
    try:
        tri = triangulate(positions)
    except DegenerateSnapshotError:
        return PlanResult(None, (), cone_ids)
    candidates = enumerate_paths(
        tri, snapshot.ego, config.limits, cones=cones, prior_config=config.prior,
        likelihood_floor=config.likelihood_floor,
    )
    scored = score_candidates(candidates, cones, config.prior, config.likelihood_floor)
    return PlanResult(select_path(scored), tuple(scored), cone_ids)


def plan_record(result: PlanResult, snapshot, verbose_candidates: bool = False) -> dict:
    """JSON-ready planner output for one snapshot."""
    record: dict = {
        "timestamp_s": snapshot.timestamp,
        "ego": {"x_m": snapshot.ego.x, "y_m": snapshot.ego.y, "theta_rad": snapshot.ego.theta},
        "n_candidates": len(result.candidates),
    }
    sel = result.selected
    if sel is None:
        record["waypoints_m"] = []
    else:
        record["waypoints_m"] = [[float(x), float(y)] for x, y in sel.waypoints]
        record["left_cone_ids"] = sorted(result.cone_ids[i] for i in sel.left_cones)
        record["right_cone_ids"] = sorted(result.cone_ids[i] for i in sel.right_cones)
        record["log_prior"] = sel.log_prior
        record["log_likelihood"] = sel.log_likelihood
        record["log_posterior"] = sel.log_posterior
        record["length_m"] = sel.features.length_m
    if verbose_candidates:
        record["candidates"] = [
            {
                "log_prior": c.log_prior,
                "log_likelihood": c.log_likelihood,
                "log_posterior": c.log_posterior,
                "length_m": c.features.length_m,
                "n_edges": len(c.crossed_edges),
            }
            for c in result.candidates
        ]
    return record
