"""
Dataset generation and the on-disk dataset bundle

A bundle is a directory holding manifest.json plus one little-endian float32 blob
per array. Complex channels are stored as interleaved (re, im) pairs in
[sample, d, nr, nt] order. Every blob carries a 64-bit checksum in the manifest.
"""

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.channel import (
    DELAY_MARGIN_SAMPLES, SPEED_OF_LIGHT, ArrayConfig, Path, WaveformConfig, channel_power, synthesize_channel,
)
from core.errors import (
    BlobSizeMismatch, BundleError, ChecksumMismatch, DegenerateRange, EmptyDataset, NonPositiveInput,
    SceneDegenerate, SchemaVersionUnsupported, StepBelowCoherenceTime, ValidationError,
)
from core.propagation import (
    DEFAULT_RX_HEIGHT_M, RSS_FLOOR_DBM, RssMap, Scene, compute_rss_map, crop_rss, rss_at, trace_paths,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MANIFEST_FILE = 'manifest.json'
BLOB_DTYPE = '<f4'
RSS_SOURCES = ('center', 'mean', 'true')


def coherence_time(velocity_mps: float, carrier_hz: float) -> float:
    """T_c = 0.5 c / (v f_c) in seconds"""
    if velocity_mps <= 0 or carrier_hz <= 0:
        raise NonPositiveInput(f"velocity ({velocity_mps}) and carrier ({carrier_hz}) must be positive")
    return 0.5 * SPEED_OF_LIGHT / (velocity_mps * carrier_hz)


@dataclass(frozen=True)
class TrajectorySpec:
    velocity_mps: float
    step_s: float


@dataclass
class DatasetBundle:
    """Channels, RSS map and per-sample crops of one generated dataset

    channels: complex [N, D, Nr, Nt]; crops: [N, c, c] in [0, 1]; locations: [N, 3];
    center_estimates: GPS-noisy (x, y) [N, 2]; crop_origins: (row, col) [N, 2];
    rss_true_w: received power at the true location [N]; trajectory_index:
    (trajectory id, step, velocity) [N, 3] or None.
    """
    manifest: Dict
    channels: np.ndarray
    rss_map: RssMap
    crops: np.ndarray
    locations: np.ndarray
    center_estimates: np.ndarray
    crop_origins: np.ndarray
    rss_true_w: np.ndarray
    trajectory_index: Optional[np.ndarray] = None

    def __len__(self):
        return self.channels.shape[0]

    def array_config(self) -> ArrayConfig:
        a = self.manifest['array']
        return ArrayConfig(a['nt_x'], a['nt_y'], a['nr_x'], a['nr_y'])

    def waveform_config(self) -> WaveformConfig:
        w = self.manifest['waveform']
        return WaveformConfig(w['sample_interval_s'], w['num_taps'], w['carrier_hz'], w['tx_power_w'], w['rolloff'])

    def scene(self) -> Scene:
        return Scene.from_dict(self.manifest['scene'])

    @property
    def channel_scale(self) -> float:
        return float(self.manifest['normalization']['channel_scale'])

    @property
    def power_scale(self) -> float:
        return float(self.manifest['normalization']['power_scale'])

    @property
    def crop_px(self) -> int:
        return int(self.manifest['dims']['crop_px'])

    def blob_arrays(self) -> Dict[str, np.ndarray]:
        blobs = {
            'channels': np.stack([self.channels.real, self.channels.imag], axis=-1),
            'rss_map': self.rss_map.grid,
            'crops': self.crops,
            'locations': self.locations,
            'center_estimates': self.center_estimates,
            'crop_origins': self.crop_origins,
            'rss_true': self.rss_true_w,
        }
        if self.trajectory_index is not None:
            blobs['trajectory'] = self.trajectory_index
        return blobs


def _checksum(data: bytes) -> str:
    return hashlib.blake2b(data, digest_size=8).hexdigest()


def _blob_bytes(array: np.ndarray) -> bytes:
    return np.ascontiguousarray(array, dtype=BLOB_DTYPE).tobytes()


def _expected_shapes(manifest: Dict) -> Dict[str, Tuple[int, ...]]:
    dims = manifest['dims']
    n, c = int(dims['samples']), int(dims['crop_px'])
    shapes = {
        'channels': (n, int(dims['D']), int(dims['Nr']), int(dims['Nt']), 2),
        'rss_map': (int(dims['map_rows']), int(dims['map_cols'])),
        'crops': (n, c, c),
        'locations': (n, 3),
        'center_estimates': (n, 2),
        'crop_origins': (n, 2),
        'rss_true': (n,),
    }
    if manifest.get('trajectory'):
        shapes['trajectory'] = (n, 3)
    return shapes


def _quantize(array: np.ndarray) -> np.ndarray:
    """Round-trip through the storage precision so reloaded bundles compare bit-identical"""
    if np.iscomplexobj(array):
        return array.astype(np.complex64).astype(np.complex128)
    return array.astype(np.float32).astype(np.float64)


def _sync_and_synthesize(paths: Sequence[Path], arr: ArrayConfig, wf: WaveformConfig) -> Tuple[np.ndarray, int]:
    """Align the receiver clock to the first arrival and drop paths that land past the tap window"""
    first = min(p.delay_s for p in paths)
    upper = (wf.num_taps + DELAY_MARGIN_SAMPLES) * wf.sample_interval_s
    kept = [p for p in paths if p.delay_s - first < upper]
    return synthesize_channel(kept, arr, wf.with_clock_offset(first)), len(paths) - len(kept)


class _PositionSampler:
    def __init__(self, scene: Scene, wf: WaveformConfig, max_order: int, rx_height_m: float,
                 rng: np.random.Generator):
        self.scene = scene
        self.wf = wf
        self.max_order = max_order
        self.rx_height_m = rx_height_m
        self.rng = rng

    def paths_at(self, x: float, y: float):
        """Traced paths, or None where no receiver can stand or nothing arrives"""
        if not self.scene.contains_xy(x, y) or not self.scene.is_outdoor(x, y):
            return None
        paths = trace_paths(self.scene, (x, y, self.rx_height_m), self.wf, self.max_order)
        return paths or None

    def random_valid(self, max_attempts: int):
        width, height = self.scene.extent_m
        for _ in range(max_attempts):
            x, y = self.rng.uniform(0.0, width), self.rng.uniform(0.0, height)
            paths = self.paths_at(x, y)
            if paths is not None:
                return np.array([x, y, self.rx_height_m]), paths
        return None, None


def _uniform_positions(sampler: _PositionSampler, n_samples: int):
    positions, path_sets = [], []
    budget = 50 * n_samples + 100
    while len(positions) < n_samples and budget > 0:
        position, paths = sampler.random_valid(1)
        budget -= 1
        if position is not None:
            positions.append(position)
            path_sets.append(paths)
    return positions, path_sets, None


def _trajectory_positions(sampler: _PositionSampler, n_samples: int, spec: TrajectorySpec):
    """Straight runs at constant speed; a blocked step turns to a new random heading"""
    step_m = spec.velocity_mps * spec.step_s
    positions, path_sets, index = [], [], []
    trajectory_id = 0
    position, paths = sampler.random_valid(200)
    if position is None:
        return positions, path_sets, None
    heading = sampler.rng.uniform(-np.pi, np.pi)
    step = 0
    while len(positions) < n_samples:
        positions.append(position)
        path_sets.append(paths)
        index.append((trajectory_id, step, spec.velocity_mps))
        for _ in range(8):
            candidate = position + step_m * np.array([np.cos(heading), np.sin(heading), 0.0])
            candidate_paths = sampler.paths_at(candidate[0], candidate[1])
            if candidate_paths is not None:
                position, paths = candidate, candidate_paths
                step += 1
                break
            heading = sampler.rng.uniform(-np.pi, np.pi)
        else:
            position, paths = sampler.random_valid(200)
            if position is None:
                break
            trajectory_id += 1
            step = 0
    return positions, path_sets, np.array(index, dtype=np.float64)


def generate_dataset(scene: Scene, arr: ArrayConfig, wf: WaveformConfig, n_samples: int, seed: int = 0,
                     resolution_m: float = 2.0, crop_m: float = 24.0, gps_sigma_m: float = 3.0,
                     max_order: int = 1, rx_height_m: float = DEFAULT_RX_HEIGHT_M,
                     trajectory: Optional[TrajectorySpec] = None, workers: int = 1) -> DatasetBundle:
    """Sample receiver positions, trace them and package channels with RSS crops

    Args:
        scene: Scene to sample
        arr: antenna arrays
        wf: waveform
        n_samples: number of receiver positions
        seed: master seed; positions and GPS noise use independent child streams
        resolution_m: RSS map pixel size
        crop_m: RSS crop side in meters
        gps_sigma_m: per-axis GPS error used to place the crops
        max_order: reflection order for the channels and the map
        rx_height_m: receiver height
        trajectory: sample consecutive positions along trajectories instead of uniformly
        workers: process count for the RSS map

    Returns:
        DatasetBundle
    """
    if n_samples < 1:
        raise EmptyDataset("n_samples must be at least 1")
    if trajectory is not None:
        t_c = coherence_time(trajectory.velocity_mps, wf.carrier_hz)
        if trajectory.step_s < t_c:
            raise StepBelowCoherenceTime(f"step {trajectory.step_s:.3e} s is below the coherence time {t_c:.3e} s")

    position_seq, gps_seq = np.random.SeedSequence(seed).spawn(2)
    sampler = _PositionSampler(scene, wf, max_order, rx_height_m, np.random.default_rng(position_seq))
    if trajectory is None:
        positions, path_sets, trajectory_index = _uniform_positions(sampler, n_samples)
    else:
        positions, path_sets, trajectory_index = _trajectory_positions(sampler, n_samples, trajectory)
    if len(positions) < n_samples:
        raise SceneDegenerate(f"found only {len(positions)} of {n_samples} receiver positions reached by a path")

    rss_map = compute_rss_map(scene, wf, resolution_m, max_order, rx_height_m, workers)
    rss_map.grid = _quantize(rss_map.grid)
    live = rss_map.grid[rss_map.grid > RSS_FLOOR_DBM]
    if live.size == 0:
        raise DegenerateRange(f"every RSS map pixel sits at the {RSS_FLOOR_DBM} dBm floor")
    value_range = (float(live.min()), float(live.max()))

    gps_rng = np.random.default_rng(gps_seq)
    channels = np.zeros((n_samples, wf.num_taps, arr.nr, arr.nt), dtype=np.complex128)
    crops, centers, origins, rss_true = [], [], [], []
    dropped = 0
    for i, (position, paths) in enumerate(zip(positions, path_sets)):
        channels[i], lost = _sync_and_synthesize(paths, arr, wf)
        dropped += lost
        rss_true.append(rss_at(paths, wf))
        crop = crop_rss(rss_map, position, gps_sigma_m, crop_m, gps_rng, value_range)
        crops.append(crop.patch)
        centers.append(crop.center_estimate_m)
        origins.append(crop.origin_px)
        if (i + 1) % 100 == 0:
            logger.info(f"Generated {i + 1}/{n_samples} samples")
    if dropped:
        logger.warning(f"Dropped {dropped} paths arriving after the {wf.num_taps}-tap window")

    channels = _quantize(channels)
    rss_true_w = _quantize(np.array(rss_true))
    channel_scale = float(np.max(np.abs(channels)))
    power_scale = float(np.max(rss_true_w))
    if not (channel_scale > 0 and power_scale > 0):
        raise SceneDegenerate("every sampled channel is zero")

    manifest = {
        'schema_version': SCHEMA_VERSION,
        'dims': {
            'samples': n_samples, 'D': wf.num_taps, 'Nr': arr.nr, 'Nt': arr.nt,
            'crop_px': int(crops[0].shape[0]), 'map_rows': rss_map.shape[0], 'map_cols': rss_map.shape[1],
        },
        'array': {'nt_x': arr.nt_x, 'nt_y': arr.nt_y, 'nr_x': arr.nr_x, 'nr_y': arr.nr_y},
        'waveform': {
            'sample_interval_s': wf.sample_interval_s, 'num_taps': wf.num_taps, 'carrier_hz': wf.carrier_hz,
            'tx_power_w': wf.tx_power_w, 'rolloff': wf.rolloff,
        },
        'rss_map': {
            'origin_m': list(rss_map.origin_m), 'resolution_m_per_px': rss_map.resolution_m_per_px,
            'value_range_dbm': list(value_range),
        },
        'scene': scene.to_dict(),
        'scene_hash': scene.scene_hash(),
        'seeds': {'master': seed},
        'generation': {'crop_m': crop_m, 'gps_sigma_m': gps_sigma_m, 'max_order': max_order,
                       'rx_height_m': rx_height_m},
        'normalization': {'channel_scale': channel_scale, 'power_scale': power_scale},
        'trajectory': None if trajectory is None else {'velocity_mps': trajectory.velocity_mps,
                                                        'step_s': trajectory.step_s},
    }
    bundle = DatasetBundle(
        manifest=manifest,
        channels=channels,
        rss_map=rss_map,
        crops=_quantize(np.stack(crops)),
        locations=_quantize(np.stack(positions)),
        center_estimates=_quantize(np.stack(centers)),
        crop_origins=np.array(origins, dtype=np.float64),
        rss_true_w=rss_true_w,
        trajectory_index=None if trajectory_index is None else _quantize(trajectory_index),
    )
    logger.info(f"Dataset generated: {n_samples} samples, channel scale {channel_scale:.3e}, "
                f"power scale {power_scale:.3e} W")
    return bundle


def bundle_hash(bundle: DatasetBundle) -> str:
    """SHA-256 over the manifest (without file bookkeeping) and the stored bytes of every blob"""
    manifest = {k: v for k, v in bundle.manifest.items() if k != 'blobs'}
    digest = hashlib.sha256(json.dumps(manifest, sort_keys=True, separators=(',', ':')).encode('utf-8'))
    for name, array in sorted(bundle.blob_arrays().items()):
        digest.update(name.encode('utf-8'))
        digest.update(_blob_bytes(array))
    return digest.hexdigest()


def save_bundle(bundle: DatasetBundle, path: str) -> None:
    os.makedirs(path, exist_ok=True)
    manifest = {k: v for k, v in bundle.manifest.items() if k != 'blobs'}
    manifest['blobs'] = {}
    for name, array in bundle.blob_arrays().items():
        data = _blob_bytes(array)
        filename = f"{name}.bin"
        with open(os.path.join(path, filename), 'wb') as f:
            f.write(data)
        manifest['blobs'][name] = {'file': filename, 'checksum': _checksum(data)}
    with open(os.path.join(path, MANIFEST_FILE), 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2, sort_keys=True, ensure_ascii=False)
    bundle.manifest = manifest
    logger.info(f"Bundle with {len(bundle)} samples saved to {path}")


def load_bundle(path: str) -> DatasetBundle:
    """Read a bundle directory, verifying schema, checksums and blob sizes"""
    manifest_path = os.path.join(path, MANIFEST_FILE)
    try:
        with open(manifest_path, 'r', encoding='utf-8') as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise BundleError(f"cannot read bundle manifest {manifest_path}: {e}") from e

    version = manifest.get('schema_version')
    if version != SCHEMA_VERSION:
        raise SchemaVersionUnsupported(f"bundle schema {version!r} is not supported (expected {SCHEMA_VERSION})")

    try:
        shapes = _expected_shapes(manifest)
        entries = manifest['blobs']
    except (KeyError, TypeError, ValueError) as e:
        raise BundleError(f"incomplete bundle manifest: {e}") from e

    arrays = {}
    for name, shape in shapes.items():
        entry = entries.get(name)
        if entry is None:
            raise BundleError(f"manifest lists no blob '{name}'")
        try:
            with open(os.path.join(path, entry['file']), 'rb') as f:
                data = f.read()
        except OSError as e:
            raise BundleError(f"cannot read blob '{name}': {e}") from e
        if _checksum(data) != entry.get('checksum'):
            raise ChecksumMismatch(f"blob '{name}' does not match its manifest checksum")
        expected = int(np.prod(shape)) * np.dtype(BLOB_DTYPE).itemsize
        if len(data) != expected:
            raise BlobSizeMismatch(f"blob '{name}' holds {len(data)} bytes, manifest dims imply {expected}")
        arrays[name] = np.frombuffer(data, dtype=BLOB_DTYPE).reshape(shape).astype(np.float64)

    norm = manifest.get('normalization', {})
    if not (norm.get('channel_scale', 0) > 0 and norm.get('power_scale', 0) > 0):
        raise BundleError("normalization constants must be strictly positive")

    meta = manifest['rss_map']
    channels = arrays['channels']
    bundle = DatasetBundle(
        manifest=manifest,
        channels=channels[..., 0] + 1j * channels[..., 1],
        rss_map=RssMap(arrays['rss_map'], tuple(meta['origin_m']), float(meta['resolution_m_per_px'])),
        crops=arrays['crops'],
        locations=arrays['locations'],
        center_estimates=arrays['center_estimates'],
        crop_origins=arrays['crop_origins'],
        rss_true_w=arrays['rss_true'],
        trajectory_index=arrays.get('trajectory'),
    )
    logger.info(f"Bundle with {len(bundle)} samples loaded from {path}")
    return bundle


def split_indices(bundle: DatasetBundle, fractions: Sequence[float] = (0.8, 0.1, 0.1), mode: str = 'random',
                  seed: int = 0) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Train/validation/test index arrays

    'random' shuffles with the seed; 'spatial' orders samples by x and cuts
    contiguous blocks so the splits cover disjoint strips of the scene.
    """
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError(f"split fractions {fractions} must be three non-negative values summing to 1")
    n = len(bundle)
    if mode == 'random':
        order = np.random.default_rng(seed).permutation(n)
    elif mode == 'spatial':
        order = np.argsort(bundle.locations[:, 0], kind='stable')
    else:
        raise ValidationError(f"unknown split mode {mode!r}")
    n_train = int(round(fractions[0] * n))
    n_val = min(int(round(fractions[1] * n)), n - n_train)
    parts = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])
    return tuple(np.sort(p) for p in parts)


def snapshot_windows(bundle: DatasetBundle, indices: Sequence[int], horizon: int) -> Tuple[np.ndarray, np.ndarray]:
    """Anchors whose next horizon-1 samples continue the same trajectory

    Returns:
        (kept anchor indices [M], window indices [M, horizon])
    """
    indices = np.asarray(indices, dtype=np.int64)
    if horizon < 1:
        raise ValidationError("horizon must be at least 1")
    if horizon == 1:
        return indices, indices[:, None]
    if bundle.trajectory_index is None:
        raise ValidationError(f"horizon {horizon} needs a trajectory dataset")
    n = len(bundle)
    traj = bundle.trajectory_index
    kept: List[int] = []
    for i in indices:
        last = i + horizon - 1
        if last < n and traj[last, 0] == traj[i, 0] and traj[last, 1] - traj[i, 1] == horizon - 1:
            kept.append(int(i))
    anchors = np.array(kept, dtype=np.int64)
    windows = anchors[:, None] + np.arange(horizon)[None, :]
    return anchors, windows


def rss_power(bundle: DatasetBundle, indices: Sequence[int], source: str = 'center') -> np.ndarray:
    """Received power (W) used by the physics term

    'center' reads the map at the GPS estimate, 'mean' averages the linear power
    over the crop window, 'true' is the traced power at the true location.
    """
    indices = np.asarray(indices, dtype=np.int64)
    if source == 'true':
        return bundle.rss_true_w[indices]
    if source == 'center':
        return np.array([bundle.rss_map.value_w(bundle.center_estimates[i]) for i in indices.reshape(-1)]
                        ).reshape(indices.shape)
    if source == 'mean':
        linear = bundle.rss_map.linear_w()
        c = bundle.crop_px
        out = np.empty(indices.size)
        for k, i in enumerate(indices.reshape(-1)):
            r0, c0 = (int(v) for v in bundle.crop_origins[i])
            out[k] = linear[r0:r0 + c, c0:c0 + c].mean()
        return out.reshape(indices.shape)
    raise ValidationError(f"unknown RSS source {source!r}; expected one of {RSS_SOURCES}")


def channel_powers(bundle: DatasetBundle, indices: Sequence[int]) -> np.ndarray:
    tx = bundle.waveform_config().tx_power_w
    return np.array([channel_power(bundle.channels[i], tx) for i in np.asarray(indices, dtype=np.int64)])
