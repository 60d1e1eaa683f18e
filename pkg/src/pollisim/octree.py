"""Occupancy mapping with per-leaf log-odds and hierarchical queries.

Leaves live on a 2^levels cube grid; coarser-depth queries return the max
child occupancy, which is conservative for collision checking.  Unknown
space (never observed) is treated as free by region queries because the
workspace is swept by the camera before any planning happens.

The backing store is a dense float32 grid sized by the workspace, which keeps
scan insertion vectorizable; the text export re-merges uniform sibling blocks
so the on-disk form is the compact tree.
"""

from __future__ import annotations

import numpy as np

from .geometry import CameraIntrinsics, Pose3, RgbdImage, back_project_many

try:
    import numba
except ImportError:  # pure-numpy fallback path below
    numba = None

# conventional occupancy-mapping defaults: increments per hit/miss and
# clamping bounds in log-odds, threshold as probability
DEFAULT_RESOLUTION = 0.01
DEFAULT_LEVELS = 8
DEFAULT_HIT = 0.85
DEFAULT_MISS = -0.4
DEFAULT_CLAMP = (-2.0, 3.5)
DEFAULT_THRESHOLD = 0.5


class OccupancyOctree:
    def __init__(self, resolution: float = DEFAULT_RESOLUTION,
                 levels: int = DEFAULT_LEVELS,
                 center=(0.0, 0.0, 0.0),
                 hit_logodds: float = DEFAULT_HIT,
                 miss_logodds: float = DEFAULT_MISS,
                 clamp: tuple = DEFAULT_CLAMP,
                 occupancy_threshold: float = DEFAULT_THRESHOLD):
        if resolution <= 0 or levels < 1:
            raise ValueError("bad resolution or level count")
        if not (clamp[0] < 0 < clamp[1]):
            raise ValueError("clamp bounds must straddle zero")
        self.resolution = float(resolution)
        self.levels = int(levels)
        self.size = 1 << levels
        self.center = np.asarray(center, dtype=float)
        self.min_corner = self.center - 0.5 * self.size * self.resolution
        self.hit_logodds = float(hit_logodds)
        self.miss_logodds = float(miss_logodds)
        self.clamp = (float(clamp[0]), float(clamp[1]))
        self.occupancy_threshold = float(occupancy_threshold)
        # log-odds of occupancy in a probability of 0.5 means "seen, undecided";
        # untouched cells are unknown
        self._grid = np.zeros((self.size,) * 3, dtype=np.float32)
        self._touched = np.zeros((self.size,) * 3, dtype=bool)
        self._occupied_cache = None

    # -- coordinate helpers -------------------------------------------------

    def world_to_grid(self, points) -> np.ndarray:
        """Continuous grid coordinates (leaf units) of world points."""
        return (np.asarray(points, dtype=float) - self.min_corner) / self.resolution

    def leaf_index(self, point) -> tuple:
        idx = np.floor(self.world_to_grid(point)).astype(int)
        if np.any(idx < 0) or np.any(idx >= self.size):
            raise ValueError(f"point {point} outside the mapped volume")
        return tuple(idx)

    def leaf_center(self, index) -> np.ndarray:
        return self.min_corner + (np.asarray(index, dtype=float) + 0.5) * self.resolution

    @property
    def logodds_threshold(self) -> float:
        p = self.occupancy_threshold
        return float(np.log(p / (1.0 - p)))

    # -- queries ------------------------------------------------------------

    def logodds_at(self, point):
        """Leaf log-odds, or None for unknown cells."""
        idx = self.leaf_index(point)
        if not self._touched[idx]:
            return None
        return float(self._grid[idx])

    def occupancy_at(self, point, depth: int | None = None):
        """Occupancy probability at the given tree depth (default: leaf).

        A coarser cell reports the max occupancy of its touched children;
        None if nothing inside was ever observed.
        """
        depth = self.levels if depth is None else int(depth)
        if not (0 <= depth <= self.levels):
            raise ValueError("depth out of range")
        idx = np.asarray(self.leaf_index(point))
        shift = self.levels - depth
        lo = (idx >> shift) << shift
        hi = lo + (1 << shift)
        sub_t = self._touched[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
        if not sub_t.any():
            return None
        sub = self._grid[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
        lmax = float(sub[sub_t].max())
        return 1.0 / (1.0 + np.exp(-lmax))

    def is_occupied(self, point) -> bool:
        lo = self.logodds_at(point)
        return lo is not None and lo > self.logodds_threshold

    def occupied_leaf_centers(self) -> np.ndarray:
        """(N, 3) world centers of leaves over the occupancy threshold."""
        if self._occupied_cache is None:
            mask = self._touched & (self._grid > self.logodds_threshold)
            idx = np.argwhere(mask)
            self._occupied_cache = self.min_corner + (idx + 0.5) * self.resolution
        return self._occupied_cache

    def is_region_free(self, segment, radius: float) -> bool:
        """True if no occupied leaf intersects the capsule around the segment.

        Leaf cubes are tested by center distance inflated by the half
        diagonal, which can reject near misses inside one voxel diagonal but
        never passes a true intersection.  Unknown space counts as free.
        """
        if radius < self.resolution / 2.0:
            raise ValueError("radius must be at least half a leaf")
        occ = self.occupied_leaf_centers()
        if occ.shape[0] == 0:
            return True
        a = np.asarray(segment[0], dtype=float)
        b = np.asarray(segment[1], dtype=float)
        reach = radius + 0.5 * self.resolution * np.sqrt(3.0)
        lo = np.minimum(a, b) - reach
        hi = np.maximum(a, b) + reach
        near = occ[np.all((occ >= lo) & (occ <= hi), axis=1)]
        if near.shape[0] == 0:
            return True
        ab = b - a
        denom = float(ab @ ab)
        if denom < 1e-18:
            d = np.linalg.norm(near - a, axis=1)
        else:
            t = np.clip((near - a) @ ab / denom, 0.0, 1.0)
            d = np.linalg.norm(near - (a + t[:, None] * ab), axis=1)
        return bool(np.all(d > reach))

    # -- updates ------------------------------------------------------------

    def update_leaves(self, indices: np.ndarray, deltas) -> None:
        """Batch log-odds update with clamping. indices is (N, 3) int."""
        if indices.shape[0] == 0:
            return
        flat = (indices[:, 0] * self.size + indices[:, 1]) * self.size + indices[:, 2]
        order = np.argsort(flat, kind="stable")
        flat_sorted = flat[order]
        uniq, starts = np.unique(flat_sorted, return_index=True)
        if np.isscalar(deltas):
            counts = np.diff(np.append(starts, flat_sorted.size))
            sums = counts * float(deltas)
        else:
            d = np.asarray(deltas, dtype=float)[order]
            sums = np.add.reduceat(d, starts)
        g = self._grid.reshape(-1)
        t = self._touched.reshape(-1)
        g[uniq] = np.clip(g[uniq] + sums, self.clamp[0], self.clamp[1])
        t[uniq] = True
        self._occupied_cache = None

    def insert_ray(self, origin, endpoint, hit: bool = True) -> None:
        """Single-ray insertion; endpoint leaf gets the hit update when hit=True,
        every other traversed leaf gets a miss."""
        o = self.world_to_grid(origin)[None, :]
        e = self.world_to_grid(endpoint)[None, :]
        miss_cells, end_cells, end_inside = _walk_rays(o, e, self.size)
        self.update_leaves(miss_cells, self.miss_logodds)
        if hit and end_inside[0]:
            self.update_leaves(end_cells, self.hit_logodds)
        elif not hit and end_inside[0]:
            self.update_leaves(end_cells, self.miss_logodds)

    def insert_depth_scan(self, sensor_pose: Pose3, image: RgbdImage,
                          K: CameraIntrinsics, max_range: float,
                          pixel_stride: int = 1) -> "OccupancyOctree":
        """Integrate one depth image taken from sensor_pose.

        Valid pixels within max_range add a hit at the endpoint leaf and a miss
        to every leaf the ray traverses; pixels beyond max_range only carve
        free space out to max_range.  Invalid (zero) depths are skipped.
        """
        depth = image.depth[::pixel_stride, ::pixel_stride]
        vs, us = np.nonzero(depth > 0)
        if us.size == 0:
            return self
        z = depth[vs, us]
        pts_cam = back_project_many(us * pixel_stride, vs * pixel_stride, z, K)
        ranges = np.linalg.norm(pts_cam, axis=1)
        beyond = ranges > max_range
        if np.any(beyond):
            scale = np.ones_like(ranges)
            scale[beyond] = max_range / ranges[beyond]
            pts_cam = pts_cam * scale[:, None]
        pts_world = sensor_pose.transform(pts_cam)
        origin = self.world_to_grid(sensor_pose.position)
        origins = np.broadcast_to(origin, pts_world.shape)
        ends = self.world_to_grid(pts_world)

        if _insert_scan_kernel is not None:
            o, ec, keep, end_inside = _clip_rays_to_grid(
                origins.astype(float), ends, self.size)
            o = np.clip(o[keep], 0, self.size - 1e-9)
            ec = np.clip(ec[keep], 0, self.size - 1e-9)
            target = np.floor(ec).astype(np.int64)
            # a direct walk takes exactly the manhattan voxel distance; the
            # budget guards against float corner cases stepping around the target
            budget = np.abs(target - np.floor(o)).sum(axis=1).astype(np.int64) + 2
            end_delta = np.where(beyond[keep], self.miss_logodds, self.hit_logodds)
            end_delta[~end_inside[keep]] = 0.0
            _insert_scan_kernel(self._grid, self._touched, o, ec, target,
                                end_delta, budget, self.miss_logodds,
                                self.clamp[0], self.clamp[1], self.size)
            self._occupied_cache = None
            return self

        miss_cells, end_cells, end_inside = _walk_rays(origins, ends, self.size)
        self.update_leaves(miss_cells, self.miss_logodds)
        # end_cells rows correspond to rays with end_inside True, in input order;
        # beyond-range rays only carve, so their clipped endpoint is a miss too
        inside_rays = np.nonzero(end_inside)[0]
        self.update_leaves(end_cells[~beyond[inside_rays]], self.hit_logodds)
        self.update_leaves(end_cells[beyond[inside_rays]], self.miss_logodds)
        return self

    # -- export -------------------------------------------------------------

    def export_text(self, path) -> int:
        """Write touched leaves as "x y z size log_odds" lines, merging uniform
        sibling blocks into coarser cells. Returns the number of lines."""
        idx = np.argwhere(self._touched)
        values = self._grid[self._touched]
        nodes = {tuple(i): float(v) for i, v in zip(idx, values)}
        lines = []
        level = self.levels
        while level > 0 and nodes:
            parents = {}
            for key, val in nodes.items():
                parents.setdefault((key[0] >> 1, key[1] >> 1, key[2] >> 1), []).append((key, val))
            next_nodes = {}
            cell = self.resolution * (1 << (self.levels - level))
            for pkey, children in parents.items():
                vals = [v for _, v in children]
                if len(children) == 8 and all(v == vals[0] for v in vals):
                    next_nodes[pkey] = vals[0]
                else:
                    for ckey, v in children:
                        c = self.min_corner + (np.asarray(ckey) + 0.5) * cell
                        lines.append(f"{c[0]:.6f} {c[1]:.6f} {c[2]:.6f} {cell:.6f} {v:.6f}")
            nodes = next_nodes
            level -= 1
        if nodes:
            cell = self.resolution * (1 << self.levels)
            for key, v in nodes.items():
                c = self.min_corner + (np.asarray(key) + 0.5) * cell
                lines.append(f"{c[0]:.6f} {c[1]:.6f} {c[2]:.6f} {cell:.6f} {v:.6f}")
        with open(path, "w") as f:
            f.write("\n".join(lines) + ("\n" if lines else ""))
        return len(lines)


def _clip_rays_to_grid(o: np.ndarray, e: np.ndarray, size: int):
    """Clip segments to the grid box [0, size)^3 (slab method).

    Returns clipped starts, ends, a keep mask, and whether the original
    endpoint cell lies inside the grid.
    """
    d = e - o
    t0 = np.zeros(o.shape[0])
    t1 = np.ones(o.shape[0])
    eps = 1e-12
    for ax in range(3):
        da = d[:, ax]
        oa = o[:, ax]
        lo = -oa / np.where(np.abs(da) < eps, np.inf, da)
        hi = (size - oa) / np.where(np.abs(da) < eps, np.inf, da)
        tlo = np.minimum(lo, hi)
        thi = np.maximum(lo, hi)
        moving = np.abs(da) >= eps
        t0 = np.where(moving, np.maximum(t0, tlo), t0)
        t1 = np.where(moving, np.minimum(t1, thi), t1)
        # rays parallel to this slab and outside it never intersect
        outside = (~moving) & ((oa < 0) | (oa >= size))
        t1 = np.where(outside, -1.0, t1)
    keep = t0 <= t1
    end_inside = np.all((e >= 0) & (e < size), axis=1)
    o_clip = o + t0[:, None] * d
    e_clip = o + t1[:, None] * d
    return o_clip, e_clip, keep, end_inside


if numba is not None:
    @numba.njit(cache=True)
    def _insert_scan_kernel(grid, touched, o, ec, target, end_delta, budget,
                            miss, lo, hi, size):  # pragma: no cover - jitted
        """Fused DDA walk + log-odds update for a batch of rays.

        Every traversed voxel before the target gets the miss increment; the
        target voxel gets end_delta[r] (hit, miss for carve-only rays, or 0
        when the endpoint is off-grid).  Clamping is applied per update, which
        for same-signed scalar increments matches batch sum-then-clamp.
        """
        n = o.shape[0]
        for r in range(n):
            vx = int(np.floor(o[r, 0]))
            vy = int(np.floor(o[r, 1]))
            vz = int(np.floor(o[r, 2]))
            tx, ty, tz = target[r, 0], target[r, 1], target[r, 2]
            steps_left = budget[r]
            dx = ec[r, 0] - o[r, 0]
            dy = ec[r, 1] - o[r, 1]
            dz = ec[r, 2] - o[r, 2]
            sx = 1 if dx > 0 else (-1 if dx < 0 else 0)
            sy = 1 if dy > 0 else (-1 if dy < 0 else 0)
            sz = 1 if dz > 0 else (-1 if dz < 0 else 0)
            big = 1e30
            tdx = 1.0 / abs(dx) if dx != 0.0 else big
            tdy = 1.0 / abs(dy) if dy != 0.0 else big
            tdz = 1.0 / abs(dz) if dz != 0.0 else big
            tmx = ((np.floor(o[r, 0]) + (1.0 if sx > 0 else 0.0)) - o[r, 0]) / dx if dx != 0.0 else big
            tmy = ((np.floor(o[r, 1]) + (1.0 if sy > 0 else 0.0)) - o[r, 1]) / dy if dy != 0.0 else big
            tmz = ((np.floor(o[r, 2]) + (1.0 if sz > 0 else 0.0)) - o[r, 2]) / dz if dz != 0.0 else big
            while not (vx == tx and vy == ty and vz == tz):
                if steps_left <= 0:
                    break
                steps_left -= 1
                if 0 <= vx < size and 0 <= vy < size and 0 <= vz < size:
                    g = grid[vx, vy, vz] + miss
                    grid[vx, vy, vz] = lo if g < lo else (hi if g > hi else g)
                    touched[vx, vy, vz] = True
                if tmx <= tmy and tmx <= tmz:
                    vx += sx
                    tmx += tdx
                elif tmy <= tmz:
                    vy += sy
                    tmy += tdy
                else:
                    vz += sz
                    tmz += tdz
            d = end_delta[r]
            if d != 0.0 and 0 <= tx < size and 0 <= ty < size and 0 <= tz < size:
                g = grid[tx, ty, tz] + d
                grid[tx, ty, tz] = lo if g < lo else (hi if g > hi else g)
                touched[tx, ty, tz] = True
else:
    _insert_scan_kernel = None


def _walk_rays(origins: np.ndarray, ends: np.ndarray, size: int):
    """Integer voxel walk for a batch of rays in grid coordinates.

    Returns (miss_cells, end_cells, end_inside): every voxel strictly before
    each ray's final voxel, the final voxel of rays whose endpoint is inside
    the grid (row order follows the input rays), and that inside mask.
    """
    o = np.asarray(origins, dtype=float)
    e = np.asarray(ends, dtype=float)
    o, ec, keep, end_inside = _clip_rays_to_grid(o, e, size)
    o = o[keep]
    ec = ec[keep]
    kept_end_inside = end_inside[keep]

    n = o.shape[0]
    if n == 0:
        return (np.empty((0, 3), dtype=np.int64),
                np.empty((0, 3), dtype=np.int64),
                end_inside & False)

    # nudge clipped starts inside so floor() lands in the grid
    v = np.floor(np.clip(o, 0, size - 1e-9)).astype(np.int64)
    target = np.floor(np.clip(ec, 0, size - 1e-9)).astype(np.int64)
    d = ec - o
    step = np.sign(d).astype(np.int64)
    safe = np.where(np.abs(d) < 1e-12, 1e-12, np.abs(d))
    t_delta = 1.0 / safe
    next_boundary = np.where(step > 0, np.floor(o) + 1.0, np.floor(o))
    t_max = np.where(step != 0, (next_boundary - o) / np.where(
        np.abs(d) < 1e-12, np.inf, d), np.inf)
    t_max = np.where(np.isfinite(t_max), t_max, np.inf)

    alive = ~np.all(v == target, axis=1)
    v_act = v[alive]
    t_max_act = t_max[alive]
    t_delta_act = t_delta[alive]
    step_act = step[alive]
    target_act = target[alive]

    # every iteration advances each active ray one voxel; a ray is done when it
    # reaches its target voxel (the endpoint cell, handled by the caller)
    miss_chunks = []
    max_iter = 4 * size + 8
    for _ in range(max_iter):
        if v_act.shape[0] == 0:
            break
        miss_chunks.append(v_act.copy())
        axis = np.argmin(t_max_act, axis=1)
        rows = np.arange(v_act.shape[0])
        v_act[rows, axis] += step_act[rows, axis]
        t_max_act[rows, axis] += t_delta_act[rows, axis]
        oob = np.any((v_act < 0) | (v_act >= size), axis=1)
        done = np.all(v_act == target_act, axis=1) | oob
        if np.any(done):
            cont = ~done
            v_act = v_act[cont]
            t_max_act = t_max_act[cont]
            t_delta_act = t_delta_act[cont]
            step_act = step_act[cont]
            target_act = target_act[cont]

    miss_cells = (np.concatenate(miss_chunks, axis=0) if miss_chunks
                  else np.empty((0, 3), dtype=np.int64))
    end_cells = target[kept_end_inside]

    # map the kept-ray inside mask back onto the original ray order
    full_inside = np.zeros(end_inside.shape[0], dtype=bool)
    full_inside[np.nonzero(keep)[0][kept_end_inside]] = True
    return miss_cells, end_cells, full_inside
