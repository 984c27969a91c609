"""Synthetic multi-frame bird's-eye-view episodes.

An episode is a short clip of a moving ego vehicle observing rectangular
objects on a flat plane.  Objects move with constant world-frame velocity,
the ego follows a constant-speed / constant-yaw-rate arc, and each frame is
rendered into a per-class occupancy grid expressed in that frame's ego
coordinates.  Episodes stand in for real driving sequences at desk scale.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .validation import (
    ConfigurationError,
    check_positive,
    check_probability,
    check_range,
)

SCHEMA_VERSION = 1

# Extra observation channels carrying pure noise on top of the per-class
# occupancy channels.  Keeps the encoder from being an identity map.
NOISE_CHANNELS = 2

# Supersampling factor per cell axis for coverage rasterization.
_RASTER_SAMPLES = 4


def wrap_angle(angle: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class GridSpec:
    """Rasterization grid: cell counts, metric cell size, and the
    coordinates of cell (0, 0)'s corner in the frame the grid lives in."""

    cells_x: int
    cells_y: int
    cell_size: float
    origin: tuple[float, float]

    def __post_init__(self):
        if self.cells_x < 8 or self.cells_y < 8:
            raise ValueError(f"grid must be at least 8x8, got {self.cells_x}x{self.cells_y}")
        if not self.cell_size > 0:
            raise ValueError(f"cell_size must be > 0, got {self.cell_size}")

    @classmethod
    def centered(cls, cells_x: int, cells_y: int, cell_size: float) -> "GridSpec":
        return cls(
            cells_x,
            cells_y,
            cell_size,
            (-0.5 * cells_x * cell_size, -0.5 * cells_y * cell_size),
        )

    def world_to_cell(self, points: np.ndarray) -> np.ndarray:
        """Map metric coordinates to continuous cell coordinates."""
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.origin)) / self.cell_size

    def cell_to_world(self, cells: np.ndarray) -> np.ndarray:
        return np.asarray(cells, dtype=np.float64) * self.cell_size + np.asarray(self.origin)

    def contains(self, point: tuple[float, float]) -> bool:
        cx, cy = self.world_to_cell(point)
        return 0.0 <= cx < self.cells_x and 0.0 <= cy < self.cells_y


@dataclass(frozen=True)
class EgoPose:
    """Ego vehicle pose in the world frame."""

    x: float
    y: float
    yaw: float
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))


@dataclass(frozen=True)
class SceneObject:
    """A rectangular ground-plane object with constant-velocity motion."""

    object_id: int
    class_id: int
    center: tuple[float, float]
    size: tuple[float, float]  # (length, width), meters
    yaw: float
    velocity: tuple[float, float]  # m/s, same frame as center

    def __post_init__(self):
        if self.size[0] <= 0 or self.size[1] <= 0:
            raise ValueError(f"object size must be positive, got {self.size}")

    @property
    def speed(self) -> float:
        return math.hypot(self.velocity[0], self.velocity[1])


@dataclass(frozen=True)
class Frame:
    """One timestep: pose, rendered observation, and ground truth in this
    frame's ego coordinates."""

    timestamp: float
    ego_pose: EgoPose
    observation: np.ndarray  # [cells_x, cells_y, n_classes + NOISE_CHANNELS]
    objects: tuple[SceneObject, ...]


@dataclass(frozen=True)
class Episode:
    frames: tuple[Frame, ...]
    time_step: float
    seed: int

    @property
    def n_prev(self) -> int:
        return len(self.frames) - 1

    @property
    def current(self) -> Frame:
        return self.frames[-1]


@dataclass(frozen=True)
class SceneConfig:
    """Scene generation parameters; the `scene` section of an experiment
    config."""

    cells_x: int = 32
    cells_y: int = 32
    cell_size: float = 1.0
    n_prev: int = 2
    time_step: float = 1.0
    n_classes: int = 2
    object_count_range: tuple[int, int] = (2, 6)
    speed_range: tuple[float, float] = (0.0, 3.0)
    length_range: tuple[float, float] = (2.5, 5.0)
    width_range: tuple[float, float] = (1.5, 2.5)
    ego_speed_range: tuple[float, float] = (0.0, 2.0)
    ego_yaw_rate_range: tuple[float, float] = (-0.1, 0.1)
    noise_sigma: float = 0.05
    dropout_prob: float = 0.1

    def validate(self) -> None:
        if self.n_prev < 2:
            raise ConfigurationError(
                f"n_prev must be >= 2 so motion is estimable, got {self.n_prev}"
            )
        check_positive("time_step", self.time_step)
        check_positive("cell_size", self.cell_size)
        if self.n_classes < 1:
            raise ConfigurationError(f"n_classes must be >= 1, got {self.n_classes}")
        check_range("object_count_range", self.object_count_range, low_ok=0)
        check_range("speed_range", self.speed_range, low_ok=0.0)
        check_range("length_range", self.length_range, low_ok=1e-6)
        check_range("width_range", self.width_range, low_ok=1e-6)
        check_range("ego_speed_range", self.ego_speed_range, low_ok=0.0)
        check_range("ego_yaw_rate_range", self.ego_yaw_rate_range)
        if self.noise_sigma < 0:
            raise ConfigurationError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        check_probability("dropout_prob", self.dropout_prob)
        # GridSpec constructor enforces its own bounds.
        self.grid()

    def grid(self) -> GridSpec:
        return GridSpec.centered(self.cells_x, self.cells_y, self.cell_size)

    @property
    def in_channels(self) -> int:
        return self.n_classes + NOISE_CHANNELS


def _rotation(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s], [s, c]], dtype=np.float64)


def world_to_ego(obj: SceneObject, pose: EgoPose) -> SceneObject:
    """Express a world-frame object in the given ego frame."""
    rot = _rotation(-pose.yaw)
    center = rot @ (np.asarray(obj.center) - np.array([pose.x, pose.y]))
    vel = rot @ np.asarray(obj.velocity)
    return replace(
        obj,
        center=(float(center[0]), float(center[1])),
        velocity=(float(vel[0]), float(vel[1])),
        yaw=wrap_angle(obj.yaw - pose.yaw),
    )


def ego_to_world(obj: SceneObject, pose: EgoPose) -> SceneObject:
    """Inverse of :func:`world_to_ego`."""
    rot = _rotation(pose.yaw)
    center = rot @ np.asarray(obj.center) + np.array([pose.x, pose.y])
    vel = rot @ np.asarray(obj.velocity)
    return replace(
        obj,
        center=(float(center[0]), float(center[1])),
        velocity=(float(vel[0]), float(vel[1])),
        yaw=wrap_angle(obj.yaw + pose.yaw),
    )


def render_observation(
    objects: list[SceneObject] | tuple[SceneObject, ...],
    grid: GridSpec,
    n_classes: int,
) -> np.ndarray:
    """Rasterize oriented rectangles into per-class occupancy channels.

    Each cell's occupancy is the fraction of a regular sub-grid of sample
    points inside the rectangle, so fully covered cells read 1.0 and partly
    covered boundary cells read a fraction.  Overlapping same-class objects
    combine with elementwise max.  Returns [cells_x, cells_y, n_classes +
    NOISE_CHANNELS] float32; the trailing noise channels are zero here and
    filled by the episode generator.
    """
    obs = np.zeros((grid.cells_x, grid.cells_y, n_classes + NOISE_CHANNELS), dtype=np.float32)
    s = _RASTER_SAMPLES
    sub = (np.arange(s) + 0.5) / s  # sample offsets within a cell
    for obj in objects:
        if not 0 <= obj.class_id < n_classes:
            raise ValueError(f"class_id {obj.class_id} out of range [0, {n_classes})")
        half_diag = 0.5 * math.hypot(obj.size[0], obj.size[1])
        c = grid.world_to_cell(obj.center)
        r = half_diag / grid.cell_size
        i_lo = max(0, int(math.floor(c[0] - r)))
        i_hi = min(grid.cells_x, int(math.ceil(c[0] + r)) + 1)
        j_lo = max(0, int(math.floor(c[1] - r)))
        j_hi = min(grid.cells_y, int(math.ceil(c[1] + r)) + 1)
        if i_lo >= i_hi or j_lo >= j_hi:
            continue
        # Sample point coordinates in meters, shaped [ni, nj, s, s, 2].
        xs = grid.origin[0] + (np.arange(i_lo, i_hi)[:, None] + sub[None, :]) * grid.cell_size
        ys = grid.origin[1] + (np.arange(j_lo, j_hi)[:, None] + sub[None, :]) * grid.cell_size
        px = xs[:, None, :, None] - obj.center[0]
        py = ys[None, :, None, :] - obj.center[1]
        cos_y, sin_y = math.cos(obj.yaw), math.sin(obj.yaw)
        u = px * cos_y + py * sin_y  # along length
        v = -px * sin_y + py * cos_y  # along width
        inside = (np.abs(u) <= obj.size[0] / 2) & (np.abs(v) <= obj.size[1] / 2)
        coverage = inside.reshape(i_hi - i_lo, j_hi - j_lo, s * s).mean(axis=2)
        patch = obs[i_lo:i_hi, j_lo:j_hi, obj.class_id]
        np.maximum(patch, coverage.astype(np.float32), out=patch)
    return obs


def _ego_pose_at(
    t: float, speed: float, yaw_rate: float, yaw0: float
) -> tuple[float, float, float]:
    """Closed-form unicycle state at time t starting from the origin."""
    if abs(yaw_rate) < 1e-9:
        return speed * t * math.cos(yaw0), speed * t * math.sin(yaw0), yaw0
    yaw = yaw0 + yaw_rate * t
    x = speed / yaw_rate * (math.sin(yaw) - math.sin(yaw0))
    y = -speed / yaw_rate * (math.cos(yaw) - math.cos(yaw0))
    return x, y, yaw


def generate_episode(config: SceneConfig, seed: int) -> Episode:
    """Generate one episode deterministically from (config, seed).

    Objects follow constant-velocity world trajectories; the ego follows a
    constant-speed, constant-yaw-rate arc.  Object positions are sampled so
    centers fall inside the current (last) frame's grid.  Per-frame ground
    truth lists only objects whose centers lie inside that frame's grid.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    grid = config.grid()
    n_frames = config.n_prev + 1
    t_final = config.n_prev * config.time_step

    ego_speed = rng.uniform(*config.ego_speed_range)
    ego_yaw_rate = rng.uniform(*config.ego_yaw_rate_range)
    ego_yaw0 = rng.uniform(-math.pi, math.pi)

    poses = []
    for k in range(n_frames):
        t = k * config.time_step
        x, y, yaw = _ego_pose_at(t, ego_speed, ego_yaw_rate, ego_yaw0)
        poses.append(EgoPose(x, y, yaw, timestamp=t))
    pose_final = poses[-1]

    n_objects = int(rng.integers(config.object_count_range[0], config.object_count_range[1] + 1))
    lo = grid.cell_to_world((0.0, 0.0))
    hi = grid.cell_to_world((float(grid.cells_x), float(grid.cells_y)))
    rot_final = _rotation(pose_final.yaw)

    objects_world: list[SceneObject] = []
    for obj_id in range(n_objects):
        pos_ego = rng.uniform(lo, hi)
        speed = rng.uniform(*config.speed_range)
        heading = rng.uniform(-math.pi, math.pi)
        length = rng.uniform(*config.length_range)
        width = rng.uniform(*config.width_range)
        rest_yaw = rng.uniform(-math.pi, math.pi)  # orientation when (nearly) parked
        class_id = int(rng.integers(0, config.n_classes))
        pos_world = rot_final @ pos_ego + np.array([pose_final.x, pose_final.y])
        yaw_world = heading if speed > 0.1 else rest_yaw
        objects_world.append(
            SceneObject(
                object_id=obj_id,
                class_id=class_id,
                center=(float(pos_world[0]), float(pos_world[1])),
                size=(float(length), float(width)),
                yaw=wrap_angle(yaw_world),
                velocity=(speed * math.cos(heading), speed * math.sin(heading)),
            )
        )

    # Occlusion stand-in: with probability dropout_prob an object is hidden
    # from rendering in one uniformly chosen frame (possibly the current
    # one), while staying in the ground truth.  An object occluded now but
    # seen before can only be detected from temporal context.
    hidden: dict[int, int] = {}
    for obj in objects_world:
        u = rng.uniform()
        frame_idx = int(rng.integers(0, n_frames))
        if u < config.dropout_prob:
            hidden[obj.object_id] = frame_idx

    frames = []
    for k, pose in enumerate(poses):
        dt = pose.timestamp - t_final
        objects_ego = []
        for obj in objects_world:
            center_t = (
                obj.center[0] + obj.velocity[0] * dt,
                obj.center[1] + obj.velocity[1] * dt,
            )
            objects_ego.append(world_to_ego(replace(obj, center=center_t), pose))
        # Render every non-hidden object; the rasterizer clips footprints
        # that straddle the boundary.  Ground truth keeps only objects whose
        # centers are inside this frame's grid.
        visible = [o for o in objects_ego if hidden.get(o.object_id) != k]
        obs = render_observation(visible, grid, config.n_classes)
        if config.noise_sigma > 0:
            obs = obs + rng.normal(0.0, config.noise_sigma, obs.shape).astype(np.float32)
        ground_truth = tuple(o for o in objects_ego if grid.contains(o.center))
        frames.append(
            Frame(
                timestamp=pose.timestamp,
                ego_pose=pose,
                observation=obs.astype(np.float32),
                objects=ground_truth,
            )
        )
    return Episode(frames=tuple(frames), time_step=config.time_step, seed=seed)


def generate_dataset(config: SceneConfig, n_episodes: int, base_seed: int) -> list[Episode]:
    """Generate `n_episodes` episodes with seeds base_seed..base_seed+n-1."""
    return [generate_episode(config, base_seed + i) for i in range(n_episodes)]


# ---------------------------------------------------------------------------
# On-disk episode records: one .npz per episode plus a JSON manifest.

_OBJECT_COLUMNS = 10  # frame, id, class, cx, cy, length, width, yaw, vx, vy


def save_episode(episode: Episode, path: str | Path) -> None:
    obs = np.stack([f.observation for f in episode.frames])
    poses = np.array(
        [[f.ego_pose.x, f.ego_pose.y, f.ego_pose.yaw, f.timestamp] for f in episode.frames],
        dtype=np.float64,
    )
    rows = []
    for k, frame in enumerate(episode.frames):
        for o in frame.objects:
            rows.append(
                [k, o.object_id, o.class_id, o.center[0], o.center[1],
                 o.size[0], o.size[1], o.yaw, o.velocity[0], o.velocity[1]]
            )
    objects = (
        np.array(rows, dtype=np.float64)
        if rows
        else np.zeros((0, _OBJECT_COLUMNS), dtype=np.float64)
    )
    np.savez_compressed(
        path,
        schema_version=np.int64(SCHEMA_VERSION),
        seed=np.int64(episode.seed),
        time_step=np.float64(episode.time_step),
        observations=obs,
        poses=poses,
        objects=objects,
    )


def load_episode(path: str | Path) -> Episode:
    data = np.load(path)
    version = int(data["schema_version"])
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported episode schema version {version}")
    obs = data["observations"]
    poses = data["poses"]
    objects = data["objects"]
    frames = []
    for k in range(obs.shape[0]):
        rows = objects[objects[:, 0] == k]
        objs = tuple(
            SceneObject(
                object_id=int(r[1]),
                class_id=int(r[2]),
                center=(float(r[3]), float(r[4])),
                size=(float(r[5]), float(r[6])),
                yaw=float(r[7]),
                velocity=(float(r[8]), float(r[9])),
            )
            for r in rows
        )
        frames.append(
            Frame(
                timestamp=float(poses[k, 3]),
                ego_pose=EgoPose(*poses[k]),
                observation=obs[k].astype(np.float32),
                objects=objs,
            )
        )
    return Episode(frames=tuple(frames), time_step=float(data["time_step"]), seed=int(data["seed"]))


def save_dataset(episodes: list[Episode], directory: str | Path, config: SceneConfig | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, ep in enumerate(episodes):
        save_episode(ep, directory / f"episode_{i:05d}.npz")
    manifest = {"schema_version": SCHEMA_VERSION, "count": len(episodes)}
    if config is not None:
        from dataclasses import asdict

        manifest["scene"] = asdict(config)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_dataset(directory: str | Path) -> list[Episode]:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported dataset schema version {manifest.get('schema_version')}")
    paths = sorted(directory.glob("episode_*.npz"))
    if not paths:
        raise FileNotFoundError(f"no episode records found in {directory}")
    return [load_episode(p) for p in paths]
