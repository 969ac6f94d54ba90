"""
Synthetic scenes, image-method path tracing, RSS maps and GPS-noisy RSS crops
"""

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import permutations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.channel import (
    ETA_0, SPEED_OF_LIGHT, Path, PathSet, WaveformConfig, field_from_gain, watts_to_dbm,
)
from core.errors import ConfigurationError, DegenerateRange, RxOutsideScene, ValidationError

logger = logging.getLogger(__name__)

RSS_FLOOR_DBM = -200.0
DEFAULT_RX_HEIGHT_M = 1.5
_EPS = 1e-9


@dataclass(frozen=True)
class Building:
    """Axis-aligned opaque box standing on the ground"""
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    height: float
    reflection_coeff: complex = 0.7 + 0j

    def __post_init__(self):
        if self.x_max <= self.x_min or self.y_max <= self.y_min or self.height <= 0:
            raise ConfigurationError(f"degenerate building {self}")
        if abs(self.reflection_coeff) > 1.0 + 1e-12:
            raise ConfigurationError(f"|reflection_coeff| must not exceed 1, got {abs(self.reflection_coeff):.3f}")

    def contains_xy(self, x: float, y: float) -> bool:
        return self.x_min < x < self.x_max and self.y_min < y < self.y_max


@dataclass(frozen=True)
class Scene:
    """Ground extent [0, W] x [0, H] meters, one transmitter and a list of buildings"""
    extent_m: Tuple[float, float]
    tx_position_m: Tuple[float, float, float]
    buildings: Tuple[Building, ...] = ()
    rng_seed: int = 0

    def __post_init__(self):
        width, height = self.extent_m
        if width <= 0 or height <= 0:
            raise ConfigurationError("scene extent must be positive")
        tx, ty, _ = self.tx_position_m
        if not (0.0 <= tx <= width and 0.0 <= ty <= height):
            raise ConfigurationError("transmitter must lie inside the scene extent")
        object.__setattr__(self, 'buildings', tuple(self.buildings))

    def contains_xy(self, x: float, y: float) -> bool:
        width, height = self.extent_m
        return 0.0 <= x <= width and 0.0 <= y <= height

    def is_outdoor(self, x: float, y: float) -> bool:
        return not any(b.contains_xy(x, y) for b in self.buildings)

    def to_dict(self) -> Dict:
        return {
            'extent_m': list(self.extent_m),
            'tx_position_m': list(self.tx_position_m),
            'rng_seed': self.rng_seed,
            'buildings': [
                {
                    'x_min': b.x_min, 'y_min': b.y_min, 'x_max': b.x_max, 'y_max': b.y_max,
                    'height': b.height,
                    'reflection_coeff': [b.reflection_coeff.real, b.reflection_coeff.imag],
                }
                for b in self.buildings
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'Scene':
        try:
            buildings = []
            for b in data.get('buildings', []):
                coeff = b.get('reflection_coeff', [0.7, 0.0])
                if isinstance(coeff, (list, tuple)):
                    coeff = complex(coeff[0], coeff[1])
                buildings.append(Building(
                    float(b['x_min']), float(b['y_min']), float(b['x_max']), float(b['y_max']),
                    float(b['height']), complex(coeff),
                ))
            return cls(
                extent_m=tuple(float(v) for v in data['extent_m']),
                tx_position_m=tuple(float(v) for v in data['tx_position_m']),
                buildings=tuple(buildings),
                rng_seed=int(data.get('rng_seed', 0)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigurationError(f"invalid scene description: {e}") from e

    def scene_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def load_scene(filename: str) -> Scene:
    with open(filename, 'r', encoding='utf-8') as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"scene file {filename} is not valid JSON: {e}") from e
    scene = Scene.from_dict(data)
    logger.info(f"Scene loaded from {filename} ({len(scene.buildings)} buildings)")
    return scene


def save_scene(scene: Scene, filename: str) -> None:
    with open(filename, 'w', encoding='utf-8') as f:
        json.dump(scene.to_dict(), f, indent=2, ensure_ascii=False)
    logger.info(f"Scene saved to {filename}")


def random_urban_scene(extent_m=(160.0, 160.0), n_buildings: int = 8, seed: int = 0,
                       tx_height_m: float = 30.0, keep_out_m: float = 12.0) -> Scene:
    """Scatter non-overlapping boxes over the extent, keeping clear of the transmitter"""
    rng = np.random.default_rng(seed)
    width, height = extent_m
    tx = (width / 2.0, height / 2.0, tx_height_m)
    buildings: List[Building] = []
    attempts = 0
    while len(buildings) < n_buildings and attempts < 200 * max(n_buildings, 1):
        attempts += 1
        w, d = rng.uniform(8.0, 25.0, size=2)
        x0 = rng.uniform(0.0, width - w)
        y0 = rng.uniform(0.0, height - d)
        candidate = (x0, y0, x0 + w, y0 + d)
        if (candidate[0] - keep_out_m < tx[0] < candidate[2] + keep_out_m
                and candidate[1] - keep_out_m < tx[1] < candidate[3] + keep_out_m):
            continue
        if any(candidate[0] < b.x_max + 4.0 and b.x_min - 4.0 < candidate[2]
               and candidate[1] < b.y_max + 4.0 and b.y_min - 4.0 < candidate[3] for b in buildings):
            continue
        magnitude = rng.uniform(0.4, 0.8)
        phase = rng.uniform(-np.pi, np.pi)
        buildings.append(Building(*candidate, height=float(rng.uniform(10.0, 40.0)),
                                  reflection_coeff=complex(magnitude * np.exp(1j * phase))))
    if len(buildings) < n_buildings:
        logger.warning(f"Placed only {len(buildings)} of {n_buildings} buildings")
    return Scene(extent_m=(float(width), float(height)), tx_position_m=tx,
                 buildings=tuple(buildings), rng_seed=seed)


def urban_canyon_scene(length_m: float = 160.0, street_width_m: float = 20.0,
                       block_depth_m: float = 20.0, block_length_m: float = 30.0,
                       gap_m: float = 8.0, height_m: float = 25.0,
                       reflection_coeff: complex = 0.6 + 0j) -> Scene:
    """Two facing rows of buildings along a straight street, TX at one end of the street"""
    width = length_m
    height = 2.0 * block_depth_m + street_width_m
    south_face = block_depth_m
    north_face = block_depth_m + street_width_m
    buildings = []
    x = gap_m
    while x + block_length_m <= width - gap_m:
        buildings.append(Building(x, 0.0, x + block_length_m, south_face, height_m, reflection_coeff))
        buildings.append(Building(x, north_face, x + block_length_m, height, height_m, reflection_coeff))
        x += block_length_m + gap_m
    tx = (2.0, block_depth_m + street_width_m / 2.0, 10.0)
    return Scene(extent_m=(width, height), tx_position_m=tx, buildings=tuple(buildings))


@dataclass(frozen=True)
class _Wall:
    axis: int          # 0: plane x = coord, 1: plane y = coord
    coord: float
    span_lo: float     # extent along the other horizontal axis
    span_hi: float
    outward: float     # +1 or -1, sign of the outward normal along `axis`
    height: float
    coeff: complex


def _walls(buildings: Sequence[Building]) -> List[_Wall]:
    walls = []
    for b in buildings:
        walls.append(_Wall(0, b.x_min, b.y_min, b.y_max, -1.0, b.height, b.reflection_coeff))
        walls.append(_Wall(0, b.x_max, b.y_min, b.y_max, 1.0, b.height, b.reflection_coeff))
        walls.append(_Wall(1, b.y_min, b.x_min, b.x_max, -1.0, b.height, b.reflection_coeff))
        walls.append(_Wall(1, b.y_max, b.x_min, b.x_max, 1.0, b.height, b.reflection_coeff))
    return walls


def _box_array(buildings: Sequence[Building]) -> np.ndarray:
    if not buildings:
        return np.zeros((0, 2, 3))
    return np.array([[[b.x_min, b.y_min, 0.0], [b.x_max, b.y_max, b.height]] for b in buildings])


def segment_blocked(p0: np.ndarray, p1: np.ndarray, boxes: np.ndarray) -> bool:
    """True when the open segment p0-p1 passes through the interior of any box (slab test)"""
    if boxes.shape[0] == 0:
        return False
    d = p1 - p0
    lo = boxes[:, 0, :]
    hi = boxes[:, 1, :]
    with np.errstate(divide='ignore', invalid='ignore'):
        t1 = (lo - p0) / d
        t2 = (hi - p0) / d
    flat = np.abs(d) < 1e-12
    inside_flat = (p0 > lo + _EPS) & (p0 < hi - _EPS)
    t_enter = np.where(flat, np.where(inside_flat, -np.inf, np.inf), np.minimum(t1, t2))
    t_exit = np.where(flat, np.where(inside_flat, np.inf, -np.inf), np.maximum(t1, t2))
    t_min = np.maximum(t_enter.max(axis=1), 0.0)
    t_max = np.minimum(t_exit.min(axis=1), 1.0)
    return bool(np.any(t_max - t_min > _EPS))


def _mirror(p: np.ndarray, wall: _Wall) -> np.ndarray:
    q = p.copy()
    q[wall.axis] = 2.0 * wall.coord - p[wall.axis]
    return q


def _on_outward_side(p: np.ndarray, wall: _Wall) -> bool:
    return (p[wall.axis] - wall.coord) * wall.outward > _EPS


def _hit_point(start: np.ndarray, end: np.ndarray, wall: _Wall) -> Optional[np.ndarray]:
    """Intersection of segment start-end with the wall plane, if it lands on the wall face"""
    denom = end[wall.axis] - start[wall.axis]
    if abs(denom) < 1e-12:
        return None
    t = (wall.coord - start[wall.axis]) / denom
    if not _EPS < t < 1.0 - _EPS:
        return None
    q = start + t * (end - start)
    other = 1 - wall.axis
    if not (wall.span_lo - _EPS <= q[other] <= wall.span_hi + _EPS):
        return None
    if not (0.0 <= q[2] <= wall.height):
        return None
    return q


def _angles(vec: np.ndarray) -> Tuple[float, float]:
    norm = np.linalg.norm(vec)
    return float(np.arctan2(vec[1], vec[0])), float(np.arcsin(np.clip(vec[2] / norm, -1.0, 1.0)))


def _make_path(points: List[np.ndarray], coeff: complex, wf: WaveformConfig) -> Path:
    length = sum(float(np.linalg.norm(points[i + 1] - points[i])) for i in range(len(points) - 1))
    delay = length / SPEED_OF_LIGHT
    amplitude = wf.wavelength_m / (4.0 * np.pi * length)
    gain = coeff * amplitude * np.exp(-2j * np.pi * wf.carrier_hz * delay)
    aod_az, aod_el = _angles(points[1] - points[0])
    aoa_az, aoa_el = _angles(points[-2] - points[-1])
    return Path(complex(gain), delay, aoa_az, aoa_el, aod_az, aod_el)


def trace_paths(scene: Scene, rx_position_m, wf: WaveformConfig, max_order: int = 1) -> PathSet:
    """Enumerate the LOS path and specular wall reflections up to `max_order` bounces

    Args:
        scene: Scene to trace through
        rx_position_m: receiver position (x, y, z)
        wf: waveform (wavelength and carrier phase)
        max_order: 0, 1 or 2 reflections

    Returns:
        List of Path objects in the global frame
    """
    if max_order not in (0, 1, 2):
        raise ValidationError(f"max_order must be 0, 1 or 2, got {max_order}")
    rx = np.asarray(rx_position_m, dtype=np.float64)
    if not scene.contains_xy(rx[0], rx[1]):
        raise RxOutsideScene(f"receiver {tuple(rx)} lies outside the scene extent {scene.extent_m}")
    tx = np.asarray(scene.tx_position_m, dtype=np.float64)
    boxes = _box_array(scene.buildings)
    paths: PathSet = []

    if np.linalg.norm(rx - tx) > _EPS and not segment_blocked(tx, rx, boxes):
        paths.append(_make_path([tx, rx], 1.0 + 0j, wf))
    if max_order == 0:
        return paths

    walls = _walls(scene.buildings)
    for wall in walls:
        if not (_on_outward_side(tx, wall) and _on_outward_side(rx, wall)):
            continue
        image = _mirror(tx, wall)
        q = _hit_point(image, rx, wall)
        if q is None:
            continue
        if segment_blocked(tx, q, boxes) or segment_blocked(q, rx, boxes):
            continue
        paths.append(_make_path([tx, q, rx], wall.coeff, wf))

    if max_order == 2:
        for w1, w2 in permutations(walls, 2):
            if not (_on_outward_side(tx, w1) and _on_outward_side(rx, w2)):
                continue
            image1 = _mirror(tx, w1)
            image2 = _mirror(image1, w2)
            q2 = _hit_point(image2, rx, w2)
            if q2 is None or not _on_outward_side(q2, w1):
                continue
            q1 = _hit_point(image1, q2, w1)
            if q1 is None or not _on_outward_side(q1, w2):
                continue
            if (segment_blocked(tx, q1, boxes) or segment_blocked(q1, q2, boxes)
                    or segment_blocked(q2, rx, boxes)):
                continue
            paths.append(_make_path([tx, q1, q2, rx], w1.coeff * w2.coeff, wf))

    logger.debug(f"Traced {len(paths)} paths to rx {tuple(np.round(rx, 2))}")
    return paths


def rss_at(paths: Sequence[Path], wf: WaveformConfig) -> float:
    """Received power (W) from the coherent sum of path field phasors"""
    if not paths:
        return 0.0
    field_sum = sum(field_from_gain(p.gain, wf.tx_power_w) for p in paths)
    return float(wf.wavelength_m ** 2 / (8.0 * np.pi * ETA_0) * abs(field_sum) ** 2)


@dataclass
class RssMap:
    """Received power raster in dBm; row index follows y, column index follows x"""
    grid: np.ndarray
    origin_m: Tuple[float, float] = (0.0, 0.0)
    resolution_m_per_px: float = 1.0

    def __post_init__(self):
        if self.resolution_m_per_px <= 0:
            raise ConfigurationError("RSS map resolution must be positive")

    @property
    def shape(self) -> Tuple[int, int]:
        return tuple(self.grid.shape)

    def linear_w(self) -> np.ndarray:
        return np.where(self.grid <= RSS_FLOOR_DBM, 0.0, 10.0 ** ((self.grid - 30.0) / 10.0))

    def pixel_index(self, position_m) -> Tuple[int, int]:
        """Nearest (row, col) for a ground position, clamped to the raster"""
        col = int(np.floor((position_m[0] - self.origin_m[0]) / self.resolution_m_per_px))
        row = int(np.floor((position_m[1] - self.origin_m[1]) / self.resolution_m_per_px))
        rows, cols = self.grid.shape
        return min(max(row, 0), rows - 1), min(max(col, 0), cols - 1)

    def value_dbm(self, position_m) -> float:
        row, col = self.pixel_index(position_m)
        return float(self.grid[row, col])

    def value_w(self, position_m) -> float:
        dbm = self.value_dbm(position_m)
        return 0.0 if dbm <= RSS_FLOOR_DBM else 10.0 ** ((dbm - 30.0) / 10.0)


def _power_to_dbm(power_w: float) -> float:
    return RSS_FLOOR_DBM if power_w <= 0.0 else float(watts_to_dbm(power_w))


def _rss_row(args) -> np.ndarray:
    scene, wf, resolution_m, row, cols, max_order, rx_height_m = args
    y = (row + 0.5) * resolution_m
    out = np.empty(cols)
    for col in range(cols):
        x = (col + 0.5) * resolution_m
        out[col] = _power_to_dbm(rss_at(trace_paths(scene, (x, y, rx_height_m), wf, max_order), wf))
    return out


def compute_rss_map(scene: Scene, wf: WaveformConfig, resolution_m: float, max_order: int = 1,
                    rx_height_m: float = DEFAULT_RX_HEIGHT_M, workers: int = 1) -> RssMap:
    """Evaluate rss_at over pixel centers of the scene extent

    Args:
        scene: Scene to map
        wf: waveform
        resolution_m: pixel size in meters
        max_order: reflection order used for every pixel
        rx_height_m: receive height of the map
        workers: process count; rows are independent

    Returns:
        RssMap in dBm with the floor value where no path reaches
    """
    if resolution_m <= 0:
        raise ConfigurationError("resolution must be positive")
    width, height = scene.extent_m
    cols = int(round(width / resolution_m))
    rows = int(round(height / resolution_m))
    if abs(cols * resolution_m - width) > 1e-6 * width or abs(rows * resolution_m - height) > 1e-6 * height:
        logger.warning(f"Resolution {resolution_m} m does not divide extent {scene.extent_m}; rounding")
    jobs = [(scene, wf, resolution_m, r, cols, max_order, rx_height_m) for r in range(rows)]

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            grid_rows = list(pool.map(_rss_row, jobs))
    else:
        grid_rows = [_rss_row(job) for job in jobs]

    grid = np.vstack(grid_rows) if grid_rows else np.zeros((0, cols))
    logger.info(f"RSS map computed: {rows}x{cols} px at {resolution_m} m/px")
    return RssMap(grid=grid, origin_m=(0.0, 0.0), resolution_m_per_px=float(resolution_m))


@dataclass
class RssCrop:
    """Normalized square window of an RSS map around a (noisy) position estimate"""
    patch: np.ndarray
    center_estimate_m: np.ndarray
    origin_px: Tuple[int, int] = field(default=(0, 0))


def crop_rss(rss_map: RssMap, true_position_m, gps_sigma_m: float, crop_m: float,
             rng: np.random.Generator, value_range: Optional[Tuple[float, float]] = None) -> RssCrop:
    """Cut a crop_m x crop_m window around the GPS-noisy position and scale it to [0, 1]

    Args:
        rss_map: map in dBm
        true_position_m: true ground position (x, y)
        gps_sigma_m: per-axis standard deviation of the position noise
        crop_m: window side in meters
        rng: random generator owned by the caller
        value_range: (min, max) in dBm used for scaling; defaults to the map's own extremes

    Returns:
        RssCrop with the patch and the noisy center estimate
    """
    res = rss_map.resolution_m_per_px
    n = int(round(crop_m / res))
    rows, cols = rss_map.grid.shape
    if n < 1 or n > rows or n > cols:
        raise ValidationError(f"crop of {n} px does not fit a {rows}x{cols} map")

    lo, hi = value_range if value_range is not None else (float(rss_map.grid.min()), float(rss_map.grid.max()))
    if not hi > lo:
        raise DegenerateRange(f"RSS normalization range is empty (min {lo}, max {hi})")

    offset = rng.normal(0.0, gps_sigma_m, size=2) if gps_sigma_m > 0 else np.zeros(2)
    center = np.asarray(true_position_m[:2], dtype=np.float64) + offset

    c0 = int(np.floor((center[0] - rss_map.origin_m[0]) / res - n / 2.0 + 0.5))
    r0 = int(np.floor((center[1] - rss_map.origin_m[1]) / res - n / 2.0 + 0.5))
    c0 = min(max(c0, 0), cols - n)
    r0 = min(max(r0, 0), rows - n)

    window = rss_map.grid[r0:r0 + n, c0:c0 + n]
    patch = np.clip((window - lo) / (hi - lo), 0.0, 1.0)
    return RssCrop(patch=patch, center_estimate_m=center, origin_px=(r0, c0))
