"""Multi-tool identification from unordered 3D infrared marker observations.

Each rigid tool carries >= 4 retro-reflective markers with pairwise
distances unique enough to identify the tool in a cloud of observed
points. Matching searches slot-by-slot over the tool's markers with
explicit occlusion branches, resolves cross-tool conflicts by the
maximum-matching / minimum-error rule, and estimates poses by
closed-form least-squares rigid registration.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
from numpy.typing import NDArray

from .geometry import RigidTransform

OCCLUDED = -1

DEFAULT_MATCH_TOLERANCE = 3.0  # mm; covers depth-sensor quantization effects
DEFAULT_NODE_BUDGET = 10_000


class TrackingError(ValueError):
    """Base class for tracking failures."""


class InsufficientMarkers(TrackingError):
    """Fewer than 3 matched markers: pose is unconstrained."""


class DegenerateConfiguration(TrackingError):
    """Matched markers are collinear: rotation about the line is free."""


class SearchBudgetExceeded(Warning):
    """DFS aborted after its node budget; results may be incomplete."""


@dataclass(frozen=True)
class ToolDefinition:
    """Known rigid marker geometry of one infrared tool.

    Attributes:
        tool_id: Small integer identity used on the wire.
        markers: (n, 3) marker coordinates in the tool-local frame, mm.
        max_occlusion: Markers allowed to be invisible in a single frame.
        match_tolerance: Pairwise-distance gate (mm) this tool is certified
            unambiguous for: no two of its pairwise distances may lie
            within 2x this value of each other.
    """

    tool_id: int
    markers: NDArray[np.float64]
    max_occlusion: int = 1
    match_tolerance: float = DEFAULT_MATCH_TOLERANCE
    pairwise_distances: NDArray[np.float64] = field(init=False, repr=False)
    _visit_order: Tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        markers = np.asarray(self.markers, dtype=np.float64)
        if markers.ndim != 2 or markers.shape[1] != 3:
            raise ValueError("markers must have shape (n, 3)")
        if markers.shape[0] < 4:
            raise ValueError("a tool needs at least 4 markers")
        if not np.all(np.isfinite(markers)):
            raise ValueError("marker coordinates must be finite")
        if self.max_occlusion < 0:
            raise ValueError("max_occlusion cannot be negative")
        if not self.match_tolerance > 0:
            raise ValueError("match_tolerance must be positive")

        centered = markers - markers.mean(axis=0)
        s = np.linalg.svd(centered, compute_uv=False)
        if s[1] < 1e-6 * s[0]:
            raise ValueError("markers are collinear; need at least 3 spanning a plane")

        dist = np.linalg.norm(markers[:, None, :] - markers[None, :, :], axis=-1)
        self._check_distance_separation(dist)

        markers = markers.copy()
        markers.setflags(write=False)
        dist.setflags(write=False)
        object.__setattr__(self, "markers", markers)
        object.__setattr__(self, "pairwise_distances", dist)
        object.__setattr__(self, "_visit_order", self._compute_visit_order(dist))

    def _check_distance_separation(self, dist: NDArray[np.float64]) -> None:
        n = dist.shape[0]
        pairs = [(m, k) for m in range(n) for k in range(m + 1, n)]
        values = [dist[m, k] for m, k in pairs]
        for a in range(len(values)):
            for b in range(a + 1, len(values)):
                if abs(values[a] - values[b]) < 2.0 * self.match_tolerance:
                    raise ValueError(
                        f"tool {self.tool_id}: pairwise distances "
                        f"{pairs[a]} and {pairs[b]} are ambiguous within "
                        f"2 x match_tolerance ({2 * self.match_tolerance} mm)"
                    )

    @staticmethod
    def _compute_visit_order(dist: NDArray[np.float64]) -> Tuple[int, ...]:
        """Slot visit order: descending sum of pairwise-distance uniqueness.

        A marker whose distances sit far from every other model pair prunes
        wrong candidates earliest, so it is matched first.
        """
        n = dist.shape[0]
        pairs = [(m, k) for m in range(n) for k in range(m + 1, n)]
        uniqueness = np.zeros(n)
        for m, k in pairs:
            gaps = [
                abs(dist[m, k] - dist[p, q]) for p, q in pairs if (p, q) != (m, k)
            ]
            gap = min(gaps) if gaps else 0.0
            uniqueness[m] += gap
            uniqueness[k] += gap
        return tuple(int(i) for i in np.argsort(-uniqueness, kind="stable"))

    @property
    def marker_count(self) -> int:
        return int(self.markers.shape[0])


@dataclass(frozen=True)
class MarkerObservation:
    """Unordered detected 3D marker points in the camera frame (mm)."""

    points: NDArray[np.float64]
    timestamp_us: int = 0

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        if points.size == 0:
            points = points.reshape(0, 3)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError("points must have shape (m, 3)")
        if not np.all(np.isfinite(points)):
            raise ValueError("observed points must be finite")
        points = points.copy()
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    def __len__(self) -> int:
        return int(self.points.shape[0])


@dataclass(frozen=True)
class MatchResult:
    """One candidate tool/observation assignment.

    ``assignment[m]`` is the observation index matched to tool marker m,
    or OCCLUDED. ``rms_error`` is the RMS of pairwise-distance residuals
    over assigned marker pairs, mm.
    """

    tool_id: int
    assignment: Tuple[int, ...]
    occluded_count: int
    rms_error: float

    @property
    def matched_indices(self) -> Tuple[int, ...]:
        return tuple(i for i in self.assignment if i != OCCLUDED)

    @property
    def matched_count(self) -> int:
        return len(self.assignment) - self.occluded_count


@dataclass(frozen=True)
class ToolPose:
    """Estimated pose of one tool (tool-local -> camera)."""

    tool_id: int
    transform: RigidTransform
    rms_error: float
    occluded_count: int


def candidate_pairs(
    obs: MarkerObservation,
    tool: ToolDefinition,
    match_tolerance: Optional[float] = None,
) -> Set[Tuple[Tuple[int, int], Tuple[int, int]]]:
    """All observation pairs whose distance matches a model pair within tolerance.

    Returns the set of ((i, j), (m, n)) with i < j observation indices and
    m < n tool marker indices such that
    ``| |M_i M_j| - |S_m S_n| | < match_tolerance``.
    """
    tol = tool.match_tolerance if match_tolerance is None else match_tolerance
    if not tol > 0:
        raise ValueError("match_tolerance must be positive")
    pts = obs.points
    out: Set[Tuple[Tuple[int, int], Tuple[int, int]]] = set()
    if len(pts) < 2:
        return out
    d_obs = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    d_tool = tool.pairwise_distances
    n = tool.marker_count
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            for m in range(n):
                for k in range(m + 1, n):
                    if abs(d_obs[i, j] - d_tool[m, k]) < tol:
                        out.add(((i, j), (m, k)))
    return out


def _pairwise_rms(
    assignment: Sequence[int],
    d_obs: NDArray[np.float64],
    d_tool: NDArray[np.float64],
) -> float:
    residuals = []
    n = len(assignment)
    for m in range(n):
        if assignment[m] == OCCLUDED:
            continue
        for k in range(m + 1, n):
            if assignment[k] == OCCLUDED:
                continue
            residuals.append(d_obs[assignment[m], assignment[k]] - d_tool[m, k])
    if not residuals:
        return 0.0
    return float(np.sqrt(np.mean(np.square(residuals))))


def _prune_dominated(results: List[MatchResult]) -> List[MatchResult]:
    """Maximum-matching pruning: drop results another result strictly covers.

    A result is dominated when a second result for the same tool matches a
    strict superset of its observation indices, or matches the identical
    set with fewer occlusions.
    """
    kept: List[MatchResult] = []
    sets = [frozenset(r.matched_indices) for r in results]
    for a, ra in enumerate(results):
        dominated = False
        for b, rb in enumerate(results):
            if a == b:
                continue
            if sets[a] < sets[b]:
                dominated = True
                break
            if sets[a] == sets[b] and rb.occluded_count < ra.occluded_count:
                dominated = True
                break
        if not dominated:
            kept.append(ra)
    return kept


def dfs_match(
    obs: MarkerObservation,
    tool: ToolDefinition,
    match_tolerance: Optional[float] = None,
    node_budget: int = DEFAULT_NODE_BUDGET,
) -> List[MatchResult]:
    """Search for every maximal assignment of observed points to one tool.

    Tool markers are visited in the tool's fixed pruning order. At each
    slot the search branches over every unused observation consistent with
    all previously assigned slots (pairwise-distance gate), plus one
    occlusion branch while the occlusion budget lasts. Complete
    assignments are then maximum-matching pruned, so no returned result is
    covered by another matching strictly more observations.

    The search expands at most ``node_budget`` nodes; on exhaustion a
    SearchBudgetExceeded warning is emitted and the results found so far
    are returned rather than stalling the frame.
    """
    tol = tool.match_tolerance if match_tolerance is None else match_tolerance
    if not tol > 0:
        raise ValueError("match_tolerance must be positive")

    pts = obs.points
    n_obs = len(pts)
    n_slots = tool.marker_count
    if n_obs == 0 and tool.max_occlusion < n_slots:
        return []

    d_obs = (
        np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        if n_obs
        else np.zeros((0, 0))
    )
    d_tool = tool.pairwise_distances
    order = tool._visit_order

    assignment = [OCCLUDED] * n_slots
    used = [False] * n_obs
    raw: List[MatchResult] = []
    expanded = 0
    exhausted = False

    def descend(depth: int, occluded: int) -> None:
        nonlocal expanded, exhausted
        if exhausted:
            return
        if depth == n_slots:
            result = tuple(assignment)
            raw.append(
                MatchResult(
                    tool_id=tool.tool_id,
                    assignment=result,
                    occluded_count=occluded,
                    rms_error=_pairwise_rms(result, d_obs, d_tool),
                )
            )
            return
        expanded += 1
        if expanded > node_budget:
            exhausted = True
            return
        slot = order[depth]
        earlier = [order[k] for k in range(depth) if assignment[order[k]] != OCCLUDED]
        for i in range(n_obs):
            if used[i]:
                continue
            ok = True
            for prev_slot in earlier:
                if abs(d_obs[i, assignment[prev_slot]] - d_tool[slot, prev_slot]) >= tol:
                    ok = False
                    break
            if not ok:
                continue
            assignment[slot] = i
            used[i] = True
            descend(depth + 1, occluded)
            used[i] = False
            assignment[slot] = OCCLUDED
        if occluded < tool.max_occlusion:
            descend(depth + 1, occluded + 1)

    descend(0, 0)
    if exhausted:
        warnings.warn(
            f"tool {tool.tool_id}: DFS aborted after {node_budget} nodes; "
            f"{len(raw)} candidate assignments found so far",
            SearchBudgetExceeded,
            stacklevel=2,
        )

    results = _prune_dominated(raw)
    # Dedupe and fix output order for determinism.
    unique = {r.assignment: r for r in results}
    return sorted(
        unique.values(), key=lambda r: (r.occluded_count, r.rms_error, r.assignment)
    )


def resolve_conflicts(results: Sequence[MatchResult]) -> List[MatchResult]:
    """Pick one assignment per detected tool under the max-matching min-error rule.

    Selected results are mutually disjoint in observation indices. The
    selection maximizes total matched markers, breaking ties by minimum
    summed rms_error, then by (tool_id, assignment) lexicographically.
    """
    by_tool: Dict[int, List[MatchResult]] = {}
    for r in results:
        by_tool.setdefault(r.tool_id, []).append(r)
    tool_ids = sorted(by_tool)
    groups = [
        sorted(by_tool[tid], key=lambda r: (r.rms_error, r.assignment))
        for tid in tool_ids
    ]

    best: Dict[str, object] = {"key": None, "choice": None}

    def key_of(choice: List[Optional[MatchResult]]) -> Tuple:
        total = sum(r.matched_count for r in choice if r is not None)
        rms = sum(r.rms_error for r in choice if r is not None)
        lex = tuple(
            (r.tool_id, r.assignment) for r in choice if r is not None
        )
        return (-total, rms, lex)

    def choose(gi: int, taken: Set[int], choice: List[Optional[MatchResult]]) -> None:
        if gi == len(groups):
            key = key_of(choice)
            if best["key"] is None or key < best["key"]:
                best["key"] = key
                best["choice"] = list(choice)
            return
        for cand in groups[gi]:
            indices = set(cand.matched_indices)
            if indices & taken:
                continue
            choice.append(cand)
            choose(gi + 1, taken | indices, choice)
            choice.pop()
        choice.append(None)  # tool absent this frame
        choose(gi + 1, taken, choice)
        choice.pop()

    choose(0, set(), [])
    chosen = [r for r in best["choice"] if r is not None] if best["choice"] else []
    return sorted(chosen, key=lambda r: r.tool_id)


def estimate_pose(
    tool: ToolDefinition, match: MatchResult, obs: MarkerObservation
) -> ToolPose:
    """Least-squares rigid registration of matched tool markers to observations.

    Returns the rotation+translation minimizing the sum of squared
    distances between transformed tool markers and their assigned
    observations (SVD solution; a reflection is rejected by flipping the
    smallest singular direction).

    Raises:
        InsufficientMarkers: Fewer than 3 matched markers.
        DegenerateConfiguration: Matched markers collinear within a 1e-6
            relative tolerance.
    """
    slots = [m for m, i in enumerate(match.assignment) if i != OCCLUDED]
    if len(slots) < 3:
        raise InsufficientMarkers(
            f"tool {tool.tool_id}: {len(slots)} matched markers, need >= 3"
        )
    src = tool.markers[slots]
    dst = obs.points[[match.assignment[m] for m in slots]]

    src_centered = src - src.mean(axis=0)
    s = np.linalg.svd(src_centered, compute_uv=False)
    if s[1] < 1e-6 * s[0]:
        raise DegenerateConfiguration(
            f"tool {tool.tool_id}: matched markers are collinear"
        )

    dst_centered = dst - dst.mean(axis=0)
    h = src_centered.T @ dst_centered
    u, _, vt = np.linalg.svd(h)
    sign = np.sign(np.linalg.det(vt.T @ u.T))
    flip = np.diag([1.0, 1.0, sign if sign != 0 else 1.0])
    rotation = vt.T @ flip @ u.T
    translation = dst.mean(axis=0) - rotation @ src.mean(axis=0)
    transform = RigidTransform(rotation, translation)

    residual = dst - (src @ rotation.T + translation)
    rms = float(np.sqrt(np.mean(np.sum(residual**2, axis=1))))
    return ToolPose(
        tool_id=tool.tool_id,
        transform=transform,
        rms_error=rms,
        occluded_count=match.occluded_count,
    )


def track_frame(
    obs: MarkerObservation,
    tools: Sequence[ToolDefinition],
    match_tolerance: Optional[float] = None,
    node_budget: int = DEFAULT_NODE_BUDGET,
) -> List[ToolPose]:
    """Identify and pose every tool visible in one frame.

    Tools whose winning match is degenerate for pose estimation are
    skipped; clutter points matching no tool are ignored.
    """
    candidates: List[MatchResult] = []
    for tool in tools:
        candidates.extend(
            dfs_match(obs, tool, match_tolerance=match_tolerance, node_budget=node_budget)
        )
    poses = []
    by_id = {t.tool_id: t for t in tools}
    for match in resolve_conflicts(candidates):
        try:
            poses.append(estimate_pose(by_id[match.tool_id], match, obs))
        except TrackingError:
            continue
    return poses


def load_tools(path) -> List[ToolDefinition]:
    """Load tool definitions from a declarative JSON config.

    Schema: {"tools": [{"tool_id": int, "markers": [[x, y, z], ...] (mm),
    "max_occlusion": int, "match_tolerance": mm (optional)}, ...]}
    """
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    tools = []
    for entry in payload["tools"]:
        tools.append(
            ToolDefinition(
                tool_id=int(entry["tool_id"]),
                markers=np.asarray(entry["markers"], dtype=np.float64),
                max_occlusion=int(entry.get("max_occlusion", 1)),
                match_tolerance=float(
                    entry.get("match_tolerance", DEFAULT_MATCH_TOLERANCE)
                ),
            )
        )
    ids = [t.tool_id for t in tools]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate tool_id in config")
    return tools
