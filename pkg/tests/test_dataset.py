import json
import os
import shutil
import tempfile
import unittest
from unittest import mock

import numpy as np

from core.channel import ArrayConfig, WaveformConfig, channel_power
from core.errors import (
    BlobSizeMismatch, BundleError, ChecksumMismatch, DegenerateRange, EmptyDataset, NonPositiveInput,
    SchemaVersionUnsupported, StepBelowCoherenceTime, ValidationError,
)
from core.propagation import RSS_FLOOR_DBM, Scene, compute_rss_map, rss_at, trace_paths
from harness.dataset import (
    MANIFEST_FILE, TrajectorySpec, bundle_hash, coherence_time, generate_dataset, load_bundle, rss_power,
    save_bundle, snapshot_windows, split_indices,
)

ARRAY = ArrayConfig(nt_x=2, nt_y=2, nr_x=1, nr_y=1)
WAVEFORM = WaveformConfig(sample_interval_s=20e-9, num_taps=4, carrier_hz=15e9, tx_power_w=100.0)


def open_scene() -> Scene:
    return Scene(extent_m=(40.0, 40.0), tx_position_m=(20.0, 20.0, 10.0))


def small_bundle(n_samples=12, seed=0, **kwargs):
    return generate_dataset(open_scene(), ARRAY, WAVEFORM, n_samples, seed=seed, resolution_m=2.0, crop_m=12.0,
                            **kwargs)


def floor_only_map(*args, **kwargs):
    rss_map = compute_rss_map(*args, **kwargs)
    rss_map.grid = np.full_like(rss_map.grid, RSS_FLOOR_DBM)
    return rss_map


class TestCoherenceTime(unittest.TestCase):
    def test_pedestrian_speed(self):
        self.assertAlmostEqual(coherence_time(9.722, 15e9), 1.028e-3, delta=1e-6)
    def test_vehicle_speed(self):
        self.assertAlmostEqual(coherence_time(100.0 / 3.6, 15e9), 3.6e-4, delta=1e-6)
    def test_non_positive(self):
        with self.assertRaises(NonPositiveInput):
            coherence_time(0.0, 15e9)


class TestGeneration(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.bundle = small_bundle()
    def test_shapes(self):
        b = self.bundle
        self.assertEqual(len(b), 12)
        self.assertEqual(b.channels.shape, (12, 4, 1, 4))
        self.assertEqual(b.crops.shape, (12, 6, 6))
        self.assertEqual(b.rss_map.shape, (20, 20))
        self.assertIsNone(b.trajectory_index)
        self.assertEqual(b.manifest['dims']['crop_px'], 6)
    def test_crops_normalized(self):
        self.assertGreaterEqual(self.bundle.crops.min(), 0.0)
        self.assertLessEqual(self.bundle.crops.max(), 1.0)
    def test_rss_matches_trace(self):
        for location, rss in zip(self.bundle.locations[:4], self.bundle.rss_true_w[:4]):
            expected = rss_at(trace_paths(open_scene(), tuple(location), WAVEFORM, 1), WAVEFORM)
            self.assertAlmostEqual(rss / expected, 1.0, places=4)
    def test_los_power_ratio_constant(self):
        # one synced LOS path per sample: channel power tracks RSS up to a fixed factor
        ratios = [channel_power(h, WAVEFORM.tx_power_w) / p for h, p in zip(self.bundle.channels,
                                                                              self.bundle.rss_true_w)]
        np.testing.assert_allclose(ratios, ratios[0], rtol=1e-4)
    def test_normalization_constants(self):
        self.assertAlmostEqual(self.bundle.channel_scale, float(np.max(np.abs(self.bundle.channels))))
        self.assertAlmostEqual(self.bundle.power_scale, float(np.max(self.bundle.rss_true_w)))
    def test_deterministic(self):
        self.assertEqual(bundle_hash(small_bundle()), bundle_hash(self.bundle))
        self.assertNotEqual(bundle_hash(small_bundle(seed=1)), bundle_hash(self.bundle))
    def test_empty_request(self):
        with self.assertRaises(EmptyDataset):
            small_bundle(n_samples=0)
    def test_floor_only_map(self):
        with mock.patch('harness.dataset.compute_rss_map', side_effect=floor_only_map):
            with self.assertRaises(DegenerateRange):
                small_bundle(n_samples=2)


class TestTrajectories(unittest.TestCase):
    def test_step_below_coherence_time(self):
        with self.assertRaises(StepBelowCoherenceTime):
            small_bundle(trajectory=TrajectorySpec(velocity_mps=10.0, step_s=1e-4))
    def test_consecutive_steps(self):
        bundle = small_bundle(n_samples=6, trajectory=TrajectorySpec(velocity_mps=10.0, step_s=2e-3))
        traj = bundle.trajectory_index
        self.assertEqual(traj.shape, (6, 3))
        for k in range(5):
            if traj[k + 1, 0] == traj[k, 0]:
                self.assertEqual(traj[k + 1, 1] - traj[k, 1], 1)
                step = np.linalg.norm(bundle.locations[k + 1, :2] - bundle.locations[k, :2])
                self.assertAlmostEqual(step, 0.02, delta=1e-4)
        anchors, windows = snapshot_windows(bundle, np.arange(6), 2)
        self.assertGreater(len(anchors), 0)
        np.testing.assert_array_equal(windows[:, 1], anchors + 1)
    def test_horizon_needs_trajectories(self):
        with self.assertRaises(ValidationError):
            snapshot_windows(small_bundle(n_samples=2), [0, 1], 2)


class TestBundleFiles(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.bundle = small_bundle()
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        save_bundle(self.bundle, self.temp_dir)
    def tearDown(self):
        shutil.rmtree(self.temp_dir)
    def _edit_manifest(self, edit):
        path = os.path.join(self.temp_dir, MANIFEST_FILE)
        with open(path, 'r', encoding='utf-8') as f:
            manifest = json.load(f)
        edit(manifest)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(manifest, f)
    def test_round_trip(self):
        loaded = load_bundle(self.temp_dir)
        np.testing.assert_array_equal(loaded.channels, self.bundle.channels)
        np.testing.assert_array_equal(loaded.crops, self.bundle.crops)
        np.testing.assert_array_equal(loaded.rss_map.grid, self.bundle.rss_map.grid)
        np.testing.assert_array_equal(loaded.rss_true_w, self.bundle.rss_true_w)
        self.assertEqual(bundle_hash(loaded), bundle_hash(self.bundle))
    def test_truncated_blob(self):
        path = os.path.join(self.temp_dir, 'crops.bin')
        with open(path, 'rb') as f:
            data = f.read()
        with open(path, 'wb') as f:
            f.write(data[:-4])
        with self.assertRaises(ChecksumMismatch):
            load_bundle(self.temp_dir)
    def test_dims_edit(self):
        self._edit_manifest(lambda m: m['dims'].update(crop_px=7))
        with self.assertRaises(BlobSizeMismatch):
            load_bundle(self.temp_dir)
    def test_schema_version(self):
        self._edit_manifest(lambda m: m.update(schema_version=99))
        with self.assertRaises(SchemaVersionUnsupported):
            load_bundle(self.temp_dir)
    def test_missing_manifest(self):
        os.remove(os.path.join(self.temp_dir, MANIFEST_FILE))
        with self.assertRaises(BundleError):
            load_bundle(self.temp_dir)
    def test_bad_normalization(self):
        self._edit_manifest(lambda m: m['normalization'].update(channel_scale=0.0))
        with self.assertRaises(BundleError):
            load_bundle(self.temp_dir)


class TestSplitsAndPowers(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.bundle = small_bundle(n_samples=20)
    def test_random_partition(self):
        train, val, test = split_indices(self.bundle, (0.6, 0.2, 0.2), 'random', seed=3)
        self.assertEqual((len(train), len(val), len(test)), (12, 4, 4))
        np.testing.assert_array_equal(np.sort(np.concatenate([train, val, test])), np.arange(20))
    def test_random_split_seeded(self):
        a = split_indices(self.bundle, seed=1)
        b = split_indices(self.bundle, seed=1)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
    def test_spatial_split_disjoint_strips(self):
        train, _, test = split_indices(self.bundle, (0.5, 0.0, 0.5), 'spatial')
        x = self.bundle.locations[:, 0]
        self.assertLessEqual(x[train].max(), x[test].min())
    def test_bad_fractions(self):
        with self.assertRaises(ValidationError):
            split_indices(self.bundle, (0.5, 0.5, 0.5))
        with self.assertRaises(ValidationError):
            split_indices(self.bundle, mode='diagonal')
    def test_rss_sources(self):
        idx = np.arange(5)
        np.testing.assert_array_equal(rss_power(self.bundle, idx, 'true'), self.bundle.rss_true_w[:5])
        self.assertTrue(np.all(rss_power(self.bundle, idx, 'center') > 0))
        self.assertTrue(np.all(rss_power(self.bundle, idx, 'mean') > 0))
        with self.assertRaises(ValidationError):
            rss_power(self.bundle, idx, 'median')


if __name__ == '__main__':
    unittest.main()
