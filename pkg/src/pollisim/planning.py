"""Vantage points, collision-checked point-to-point paths, and visit order.

Planning happens in end-effector position space: each path is a polyline of
poses whose positions are collision-checked as capsules against the
occupancy map and whose orientations are interpolated between the start and
goal.  The visit order over all vantage points is an open path (the arm
stops at the last flower, it does not return), solved exactly by dynamic
programming for small instances and by nearest-neighbor plus 2-opt beyond.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose3, look_at_pose, quat_slerp

DEFAULT_STANDOFF = 0.15
# flowers farther than this from the arm base are out of reach (no vantage)
DEFAULT_REACH_LIMIT = 0.7
DEFAULT_CLEARANCE_RADIUS = 0.03
DEFAULT_STEP = 0.02
DEFAULT_SAMPLE_BUDGET = 5000
DEFAULT_GOAL_BIAS = 0.10
DEFAULT_SHORTCUT_PASSES = 50
# random samples are drawn from the start/goal bounding box grown by this
# margin (clipped to the map); the full map volume would dilute the tree
DEFAULT_SAMPLE_MARGIN = 0.3
# exact dynamic-programming solver is used up to this many vantages
HELD_KARP_MAX = 12


class NoPathError(RuntimeError):
    """The point-to-point planner exhausted its sample budget (or the goal
    is inside an obstacle)."""


class EmptyTourError(ValueError):
    """Visit-order requested for zero vantages."""


@dataclass(frozen=True)
class VantagePoint:
    flower_id: int
    pose: Pose3
    flower_position: np.ndarray

    @property
    def position(self) -> np.ndarray:
        return self.pose.position


def generate_vantage_points(flowers, standoff: float = DEFAULT_STANDOFF,
                            reach_limit: float = DEFAULT_REACH_LIMIT,
                            base_position=(0.0, 0.0, 0.0)):
    """One camera-facing vantage per reachable flower.

    flowers is an iterable of (id, Pose3, ...) records (the flower-map
    snapshot); the vantage sits standoff meters in front of the flower along
    its normal with the approach axis pointing back through the flower
    center.  Returns (vantages, skipped_ids) where skipped_ids lists flowers
    beyond reach_limit of the arm base.
    """
    if standoff <= 0:
        raise ValueError("standoff must be positive")
    base = np.asarray(base_position, dtype=float)
    vantages = []
    skipped = []
    for record in flowers:
        fid, pose = record[0], record[1]
        fpos = np.asarray(pose.position, dtype=float)
        if float(np.linalg.norm(fpos - base)) > reach_limit:
            skipped.append(fid)
            continue
        normal = pose.z_axis()
        vpos = fpos + standoff * normal
        vpose = look_at_pose(vpos, fpos)
        vantages.append(VantagePoint(flower_id=fid, pose=vpose,
                                     flower_position=fpos))
    return vantages, skipped


@dataclass
class PathPolyline:
    waypoints: list  # of Pose3
    valid: bool = True

    def positions(self) -> np.ndarray:
        return np.array([w.position for w in self.waypoints])


def path_cost(path: PathPolyline) -> float:
    """Polyline arc length in meters."""
    pts = path.positions()
    if pts.shape[0] < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def _segment_free(omap, a, b, radius: float) -> bool:
    if omap is None:
        return True
    return omap.is_region_free((a, b), radius)


def _discretize(points, start: Pose3, goal: Pose3, step: float):
    """Pose waypoints at most `step` apart along the position polyline, with
    orientation slerped by traversed arc length."""
    pts = [np.asarray(p, dtype=float) for p in points]
    seg_lens = [float(np.linalg.norm(b - a)) for a, b in zip(pts[:-1], pts[1:])]
    total = sum(seg_lens)
    dense = [pts[0]]
    for a, b, L in zip(pts[:-1], pts[1:], seg_lens):
        n = max(1, int(np.ceil(L / step)))
        for k in range(1, n + 1):
            dense.append(a + (b - a) * (k / n))
    waypoints = []
    run = 0.0
    prev = dense[0]
    for p in dense:
        run += float(np.linalg.norm(p - prev))
        prev = p
        t = run / total if total > 0 else 1.0
        waypoints.append(Pose3(p, quat_slerp(start.quat, goal.quat, t)))
    return waypoints


def plan_point_to_point(start: Pose3, goal: Pose3, omap=None,
                        radius: float = DEFAULT_CLEARANCE_RADIUS,
                        step: float = DEFAULT_STEP,
                        sample_budget: int = DEFAULT_SAMPLE_BUDGET,
                        goal_bias: float = DEFAULT_GOAL_BIAS,
                        shortcut_passes: int = DEFAULT_SHORTCUT_PASSES,
                        sample_margin: float = DEFAULT_SAMPLE_MARGIN,
                        seed: int = 0) -> PathPolyline:
    """Collision-free polyline from start to goal.

    Straight segment when free; otherwise a goal-biased random tree grown
    with fixed step size, then shortcut smoothing.  Raises NoPathError when
    the goal (or start) is inside occupied space or the sample budget runs
    out.
    """
    s = np.asarray(start.position, dtype=float)
    g = np.asarray(goal.position, dtype=float)
    if float(np.linalg.norm(g - s)) < 1e-12:
        raise ValueError("start and goal coincide")
    if omap is not None:
        if omap.is_occupied(g):
            raise NoPathError("goal lies inside occupied space")
        if omap.is_occupied(s):
            raise NoPathError("start lies inside occupied space")

    if _segment_free(omap, s, g, radius):
        return PathPolyline(_discretize([s, g], start, goal, step))

    # goal-biased tree in position space
    rng = np.random.default_rng(seed)
    map_lo = omap.min_corner
    map_hi = omap.min_corner + omap.size * omap.resolution
    lo = np.maximum(np.minimum(s, g) - sample_margin, map_lo)
    hi = np.minimum(np.maximum(s, g) + sample_margin, map_hi)
    nodes = [s]
    parents = [-1]
    goal_node = None
    for _ in range(sample_budget):
        if rng.random() < goal_bias:
            sample = g
        else:
            sample = rng.uniform(lo, hi)
        d = np.linalg.norm(np.asarray(nodes) - sample, axis=1)
        ni = int(np.argmin(d))
        base = nodes[ni]
        direction = sample - base
        dist = float(np.linalg.norm(direction))
        if dist < 1e-12:
            continue
        new = base + direction * min(1.0, step / dist)
        if not _segment_free(omap, base, new, radius):
            continue
        nodes.append(new)
        parents.append(ni)
        if float(np.linalg.norm(new - g)) <= step and \
                _segment_free(omap, new, g, radius):
            nodes.append(g)
            parents.append(len(nodes) - 2)
            goal_node = len(nodes) - 1
            break
    if goal_node is None:
        raise NoPathError(f"no path found within {sample_budget} samples")

    chain = []
    i = goal_node
    while i != -1:
        chain.append(nodes[i])
        i = parents[i]
    chain.reverse()

    # shortcut smoothing: splice random waypoint pairs when the direct
    # segment between them is free
    for _ in range(shortcut_passes):
        if len(chain) <= 2:
            break
        i, j = sorted(rng.integers(0, len(chain), size=2))
        if j - i < 2:
            continue
        if _segment_free(omap, chain[i], chain[j], radius):
            chain = chain[:i + 1] + chain[j:]
    return PathPolyline(_discretize(chain, start, goal, step))


def build_cost_matrix(vantages, omap=None, seed: int = 0,
                      **plan_kwargs) -> np.ndarray:
    """Pairwise path costs between vantage poses; infinity where no path."""
    n = len(vantages)
    if n == 0:
        raise ValueError("need at least one vantage point")
    costs = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            try:
                path = plan_point_to_point(vantages[i].pose, vantages[j].pose,
                                           omap, seed=seed + i * n + j,
                                           **plan_kwargs)
                costs[i, j] = path_cost(path)
            except NoPathError:
                costs[i, j] = np.inf
    return costs


@dataclass
class Tour:
    order: list
    cost: float


def tour_cost(costs: np.ndarray, order) -> float:
    c = 0.0
    for a, b in zip(order[:-1], order[1:]):
        c += float(costs[a, b])
    return c


def _held_karp(costs: np.ndarray, start: int) -> Tour:
    n = costs.shape[0]
    others = [i for i in range(n) if i != start]
    m = len(others)
    dp = np.full((1 << m, m), np.inf)
    parent = np.full((1 << m, m), -1, dtype=np.int64)
    for k, j in enumerate(others):
        dp[1 << k, k] = costs[start, j]
    for mask in range(1, 1 << m):
        for k in range(m):
            if not mask & (1 << k):
                continue
            base = dp[mask, k]
            if not np.isfinite(base):
                continue
            for nxt in range(m):
                if mask & (1 << nxt):
                    continue
                cand = base + costs[others[k], others[nxt]]
                nm = mask | (1 << nxt)
                if cand < dp[nm, nxt]:
                    dp[nm, nxt] = cand
                    parent[nm, nxt] = k
    full = (1 << m) - 1
    end = int(np.argmin(dp[full]))
    best = float(dp[full, end])
    order = []
    mask, k = full, end
    while k != -1:
        order.append(others[k])
        pk = int(parent[mask, k])
        mask &= ~(1 << k)
        k = pk
    order.append(start)
    order.reverse()
    return Tour(order, best)


def _nearest_neighbor_2opt(costs: np.ndarray, start: int) -> Tour:
    n = costs.shape[0]
    unvisited = set(range(n)) - {start}
    order = [start]
    while unvisited:
        last = order[-1]
        nxt = min(unvisited, key=lambda j: (costs[last, j], j))
        order.append(nxt)
        unvisited.remove(nxt)
    best = tour_cost(costs, order)
    improved = True
    while improved:
        improved = False
        for i in range(1, n - 1):
            for j in range(i + 1, n):
                cand = order[:i] + order[i:j + 1][::-1] + order[j + 1:]
                cc = tour_cost(costs, cand)
                if cc < best - 1e-12:
                    order, best = cand, cc
                    improved = True
    return Tour(order, best)


def solve_tsp(costs, start_index: int = 0) -> Tour:
    """Minimum-cost open visiting order starting at start_index.

    Exact (Held-Karp) for up to HELD_KARP_MAX vantages, nearest-neighbor
    with full 2-opt sweeps beyond; both deterministic.
    """
    c = np.asarray(costs, dtype=float)
    if c.size == 0:
        raise EmptyTourError("no vantage points to order")
    n = c.shape[0]
    if c.shape != (n, n):
        raise ValueError("cost matrix must be square")
    if not np.isfinite(c).all():
        raise ValueError("cost matrix has unreachable pairs; drop them first")
    if not (0 <= start_index < n):
        raise ValueError("start index out of range")
    if n == 1:
        return Tour([start_index], 0.0)
    if n <= HELD_KARP_MAX:
        return _held_karp(c, start_index)
    return _nearest_neighbor_2opt(c, start_index)


def write_tour_csv(path, tour: Tour, costs, ids=None) -> None:
    """Leg-by-leg CSV dump: leg index, endpoints, and leg cost."""
    ids = list(range(np.asarray(costs).shape[0])) if ids is None else list(ids)
    lines = ["leg,from,to,cost"]
    for k, (a, b) in enumerate(zip(tour.order[:-1], tour.order[1:])):
        lines.append(f"{k},{ids[a]},{ids[b]},{float(costs[a][b]):.6f}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def write_path_csv(path, polyline: PathPolyline) -> None:
    """Waypoint CSV (position + quaternion per row) for plotting."""
    lines = ["x,y,z,qw,qx,qy,qz"]
    for w in polyline.waypoints:
        p, q = w.position, w.quat
        lines.append(f"{p[0]:.6f},{p[1]:.6f},{p[2]:.6f},"
                     f"{q[0]:.6f},{q[1]:.6f},{q[2]:.6f},{q[3]:.6f}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
