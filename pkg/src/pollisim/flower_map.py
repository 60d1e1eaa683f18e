"""Persistent flower map built from repeated noisy pose observations.

Each detected flower becomes a track holding a fused position (solved by the
factor graph), a categorical orientation belief, and a status that walks
candidate -> confirmed -> pollinated.  Observations are matched to tracks by
Mahalanobis gating; unmatched observations open new candidate tracks.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .classify import OrientationClass, orientation_yaw_offset
from .factor_graph import FactorGraph
from .geometry import Pose3, look_at_pose, quat_from_axis_angle, quat_rotate

STATUS_CANDIDATE = "candidate"
STATUS_CONFIRMED = "confirmed"
STATUS_POLLINATED = "pollinated"
_STATUSES = (STATUS_CANDIDATE, STATUS_CONFIRMED, STATUS_POLLINATED)

NUM_ORIENTATION_CLASSES = 3
DEFAULT_MIN_OBSERVATIONS = 2
# floor applied to observed class distributions so a one-hot observation can
# never zero out a class permanently
ORIENTATION_FLOOR = 1e-3
# observations arrive from roughly half a meter away looking down the x axis,
# so an unknown viewing direction defaults to "flower faces the robot base"
DEFAULT_VIEW_DIRECTION = np.array([-1.0, 0.0, 0.0])

CSV_HEADER = ("id", "x", "y", "z", "qw", "qx", "qy", "qz", "class", "status")


@dataclass
class AssociationGate:
    """Gating constants for matching observations to existing tracks.

    An observation joins the best track whose Mahalanobis distance (under
    the combined track + observation covariance) is below the threshold;
    new_track_distance is a Euclidean floor that keeps well-converged
    tracks (tiny covariance, huge Mahalanobis distances) from shedding
    observations a few millimeters away.
    """
    mahalanobis_threshold: float = 3.0
    new_track_distance: float = 0.03

    def __post_init__(self):
        if self.mahalanobis_threshold <= 0 or self.new_track_distance <= 0:
            raise ValueError("association gate thresholds must be positive")


def _check_belief(belief) -> np.ndarray:
    b = np.asarray(belief, dtype=float)
    if b.shape != (NUM_ORIENTATION_CLASSES,) or np.any(b < 0) or not np.isfinite(b).all():
        raise ValueError("orientation belief must be a nonnegative 3-vector")
    s = float(b.sum())
    if not np.isclose(s, 1.0, atol=1e-6):
        raise ValueError("orientation belief must sum to one")
    return b / s


def _check_cov(cov) -> np.ndarray:
    c = np.asarray(cov, dtype=float)
    if c.shape != (3, 3) or not np.allclose(c, c.T, atol=1e-9):
        raise ValueError("covariance must be symmetric 3x3")
    if float(np.linalg.eigvalsh(c).min()) <= 0.0:
        raise ValueError("covariance must be positive definite")
    return c


@dataclass
class FlowerTrack:
    id: int
    position: np.ndarray
    covariance: np.ndarray
    orientation_belief: np.ndarray
    observation_count: int = 1
    status: str = STATUS_CANDIDATE
    # unit vector from the flower toward the cameras that saw it; the
    # snapshot normal is this direction rotated by the class yaw
    view_direction: np.ndarray = field(
        default_factory=lambda: DEFAULT_VIEW_DIRECTION.copy())
    # raw (position, covariance) history kept so each update re-solves the
    # track instead of folding approximations into a running filter
    observations: list = field(default_factory=list)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.covariance = _check_cov(self.covariance)
        self.orientation_belief = _check_belief(self.orientation_belief)
        if self.status not in _STATUSES:
            raise ValueError(f"unknown track status {self.status!r}")
        if not self.observations:
            self.observations = [(self.position.copy(), self.covariance.copy())]

    @property
    def orientation_class(self) -> OrientationClass:
        return OrientationClass(int(np.argmax(self.orientation_belief)))


def associate_observation(tracks, obs_position, obs_covariance,
                          gate: AssociationGate):
    """Index of the gated track with the smallest Mahalanobis distance, or
    None when the observation should open a new track."""
    obs = np.asarray(obs_position, dtype=float)
    cov = _check_cov(obs_covariance)
    best = None
    best_m = np.inf
    for i, track in enumerate(tracks):
        delta = obs - track.position
        combined = track.covariance + cov
        m = float(np.sqrt(delta @ np.linalg.solve(combined, delta)))
        if m >= best_m:
            continue
        if m <= gate.mahalanobis_threshold or \
                float(np.linalg.norm(delta)) <= gate.new_track_distance:
            best = i
            best_m = m
    return best


def fuse_orientation(belief, obs_dist, weight: float = 1.0) -> np.ndarray:
    """Bayes product update of a categorical belief.

    The observation is floored at ORIENTATION_FLOOR (then renormalized) and
    raised to the given weight before the pointwise product, so repeated
    confident observations dominate but a single one-hot never makes a class
    unrecoverable.
    """
    b = _check_belief(belief)
    q = np.asarray(obs_dist, dtype=float)
    if q.shape != b.shape or np.any(q < 0):
        raise ValueError("observation distribution must be a nonnegative 3-vector")
    q = np.maximum(q, ORIENTATION_FLOOR)
    q = q / q.sum()
    fused = b * q ** float(weight)
    return fused / fused.sum()


def refit_track_position(track: FlowerTrack):
    """Re-solve the track position from its full observation history.

    The first sighting is the prior, later sightings are measurement
    factors; with the static motion model this is a tiny one-variable
    least-squares problem.  Returns (position, covariance).
    """
    graph = FactorGraph(var_dim=3)
    var = graph.add_variable()
    z0, cov0 = track.observations[0]
    graph.add_prior(var, z0, cov0)
    for z, cov in track.observations[1:]:
        graph.add_measurement(var, z, cov)
    values, _ = graph.optimize([track.position])
    info = graph.information_matrix(values)
    return values[0], np.linalg.inv(info)


def flower_pose(position, view_direction, orientation_class) -> Pose3:
    """World pose whose +z axis is the flower normal.

    The normal is the camera-facing direction rotated about vertical by the
    class yaw, so a left/right-facing flower points off to the side of
    whatever viewpoint mapped it.
    """
    yaw = orientation_yaw_offset(orientation_class)
    spin = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw)
    normal = quat_rotate(spin, np.asarray(view_direction, dtype=float))
    pose = look_at_pose(np.asarray(position, dtype=float),
                        np.asarray(position, dtype=float) + normal)
    return pose


def flower_map_snapshot(tracks, min_observations: int = DEFAULT_MIN_OBSERVATIONS):
    """Immutable (id, Pose3, status) view of sufficiently-observed tracks."""
    out = []
    for track in tracks:
        if track.observation_count < min_observations:
            continue
        pose = flower_pose(track.position, track.view_direction,
                           track.orientation_class)
        out.append((track.id, pose, track.status))
    return out


def write_flower_map_csv(path, tracks,
                         min_observations: int = DEFAULT_MIN_OBSERVATIONS) -> int:
    """Export eligible tracks as CSV rows; returns the row count."""
    rows = 0
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for track in tracks:
            if track.observation_count < min_observations:
                continue
            pose = flower_pose(track.position, track.view_direction,
                               track.orientation_class)
            p = pose.position
            q = pose.quat
            writer.writerow([track.id,
                             f"{p[0]:.6f}", f"{p[1]:.6f}", f"{p[2]:.6f}",
                             f"{q[0]:.6f}", f"{q[1]:.6f}", f"{q[2]:.6f}", f"{q[3]:.6f}",
                             int(track.orientation_class), track.status])
            rows += 1
    return rows


class FlowerMap:
    """Association + fusion front end over a list of FlowerTrack."""

    def __init__(self, gate: AssociationGate | None = None,
                 min_observations: int = DEFAULT_MIN_OBSERVATIONS):
        if min_observations < 1:
            raise ValueError("min_observations must be at least 1")
        self.gate = gate if gate is not None else AssociationGate()
        self.min_observations = int(min_observations)
        self.tracks: list[FlowerTrack] = []
        self._next_id = 0

    def observe(self, position, covariance, orientation_dist,
                camera_position=None, weight: float = 1.0) -> int:
        """Fold one detection into the map; returns the track id touched."""
        position = np.asarray(position, dtype=float)
        covariance = _check_cov(covariance)
        view = None
        if camera_position is not None:
            d = np.asarray(camera_position, dtype=float) - position
            n = float(np.linalg.norm(d))
            if n > 1e-9:
                view = d / n

        idx = associate_observation(self.tracks, position, covariance, self.gate)
        if idx is None:
            uniform = np.full(NUM_ORIENTATION_CLASSES,
                              1.0 / NUM_ORIENTATION_CLASSES)
            track = FlowerTrack(
                id=self._next_id,
                position=position.copy(),
                covariance=covariance.copy(),
                orientation_belief=fuse_orientation(uniform, orientation_dist,
                                                    weight),
                observation_count=1,
                status=(STATUS_CONFIRMED if self.min_observations <= 1
                        else STATUS_CANDIDATE),
            )
            if view is not None:
                track.view_direction = view
            self._next_id += 1
            self.tracks.append(track)
            return track.id

        track = self.tracks[idx]
        track.observations.append((position.copy(), covariance.copy()))
        track.position, track.covariance = refit_track_position(track)
        track.orientation_belief = fuse_orientation(
            track.orientation_belief, orientation_dist, weight)
        track.observation_count += 1
        if view is not None:
            blended = track.view_direction * (track.observation_count - 1) + view
            n = float(np.linalg.norm(blended))
            if n > 1e-9:
                track.view_direction = blended / n
        if track.status == STATUS_CANDIDATE and \
                track.observation_count >= self.min_observations:
            track.status = STATUS_CONFIRMED
        return track.id

    def mark_pollinated(self, track_id: int) -> None:
        for track in self.tracks:
            if track.id == track_id:
                track.status = STATUS_POLLINATED
                return
        raise KeyError(f"no track with id {track_id}")

    def confirmed_tracks(self):
        return [t for t in self.tracks if t.status != STATUS_CANDIDATE]

    def snapshot(self):
        return flower_map_snapshot(self.tracks, self.min_observations)

    def write_csv(self, path) -> int:
        return write_flower_map_csv(path, self.tracks, self.min_observations)
