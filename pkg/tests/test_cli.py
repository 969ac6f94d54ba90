import json
import logging
import os
import shutil
import tempfile
import unittest
from unittest import mock

import numpy as np

import main
from core.errors import NonFiniteLoss
from core.propagation import RSS_FLOOR_DBM, Scene, compute_rss_map, save_scene

SMALL_SETTINGS = {
    'array': {'nt_x': 2, 'nt_y': 2, 'nr_x': 1, 'nr_y': 1},
    'waveform': {'num_taps': 2},
    'propagation': {'resolution_m': 2.0},
    'estimators': {'pilot_count': 4, 'crop_m': 8.0},
    'harness': {'n_samples': 6},
}


class TestCli(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.config = os.path.join(self.temp_dir, 'settings.json')
        with open(self.config, 'w', encoding='utf-8') as f:
            json.dump(SMALL_SETTINGS, f)
        self.scene = os.path.join(self.temp_dir, 'scene.json')
        save_scene(Scene(extent_m=(30.0, 30.0), tx_position_m=(15.0, 15.0, 8.0)), self.scene)
        self.bundle = os.path.join(self.temp_dir, 'bundle')
    def tearDown(self):
        root = logging.getLogger()
        for handler in getattr(main.setup_logging, 'installed', []):
            root.removeHandler(handler)
            handler.close()
        main.setup_logging.installed = []
        shutil.rmtree(self.temp_dir)
    def _gen(self):
        return main.main(['gen', '--config', self.config, '--scene', self.scene, '--seed', '2', '--out', self.bundle])
    def test_gen_and_estimate(self):
        self.assertEqual(self._gen(), main.EXIT_OK)
        self.assertTrue(os.path.exists(os.path.join(self.bundle, 'manifest.json')))
        self.assertTrue(os.path.exists(os.path.join(self.bundle, main.LOG_FILE)))
        out = os.path.join(self.temp_dir, 'est')
        code = main.main(['estimate', '--config', self.config, '--bundle', self.bundle, '--method', 'ls-dft',
                          '--snr-db', '10', '--out', out, '--registry', os.path.join(self.temp_dir, 'runs.db')])
        self.assertEqual(code, main.EXIT_OK)
        with open(os.path.join(out, 'estimate_summary.json'), encoding='utf-8') as f:
            summary = json.load(f)
        self.assertEqual(summary['samples'], 6)
        self.assertEqual(summary['Np'], 4)
    def test_sweep_and_plot(self):
        self.assertEqual(self._gen(), main.EXIT_OK)
        out = os.path.join(self.temp_dir, 'sweep')
        code = main.main(['sweep', '--config', self.config, '--bundle', self.bundle, '--axis', 'snr_db',
                          '--values=0,10', '--methods', 'ls-interp,ls-ofdm', '--seeds', '0', '--out', out])
        self.assertEqual(code, main.EXIT_OK)
        self.assertTrue(os.path.exists(os.path.join(out, 'sweep_snr_db.csv')))
        plots = os.path.join(self.temp_dir, 'plots')
        self.assertEqual(main.main(['plot', '--bundle', self.bundle, '--crops', '2', '--out', plots]), main.EXIT_OK)
        self.assertTrue(os.path.exists(os.path.join(plots, 'rss_map.png')))
        self.assertTrue(os.path.exists(os.path.join(plots, 'crop_0001.png')))
    def test_invalid_config_exit_code(self):
        with open(self.config, 'w', encoding='utf-8') as f:
            json.dump({'waveform': {'rolloff': 3.0}}, f)
        code = main.main(['gen', '--config', self.config, '--out', self.bundle])
        self.assertEqual(code, main.EXIT_VALIDATION)
    def test_missing_bundle_exit_code(self):
        code = main.main(['estimate', '--bundle', os.path.join(self.temp_dir, 'nope'), '--method', 'ls-dft',
                          '--out', self.temp_dir])
        self.assertEqual(code, main.EXIT_VALIDATION)
    def test_unknown_method_exit_code(self):
        self.assertEqual(self._gen(), main.EXIT_OK)
        code = main.main(['estimate', '--config', self.config, '--bundle', self.bundle, '--method', 'lmmse',
                          '--out', self.temp_dir])
        self.assertEqual(code, main.EXIT_VALIDATION)
    def test_numerical_exit_code(self):
        with mock.patch.dict(main.COMMANDS, {'plot': mock.Mock(side_effect=NonFiniteLoss('loss is nan'))}):
            code = main.main(['plot', '--bundle', self.bundle, '--out', self.temp_dir])
        self.assertEqual(code, main.EXIT_NUMERICAL)
    def test_unexpected_exit_code(self):
        with mock.patch.dict(main.COMMANDS, {'plot': mock.Mock(side_effect=RuntimeError('boom'))}):
            code = main.main(['plot', '--bundle', self.bundle, '--out', self.temp_dir])
        self.assertEqual(code, main.EXIT_FAILURE)
    def test_floor_only_map_exit_code(self):
        def floor_only_map(*args, **kwargs):
            rss_map = compute_rss_map(*args, **kwargs)
            rss_map.grid = np.full_like(rss_map.grid, RSS_FLOOR_DBM)
            return rss_map
        with mock.patch('harness.dataset.compute_rss_map', side_effect=floor_only_map):
            self.assertEqual(self._gen(), main.EXIT_NUMERICAL)
    def test_gen_requires_out(self):
        with mock.patch('main.os.getcwd', return_value=self.temp_dir):
            self.assertEqual(main.main(['gen', '--config', self.config]), main.EXIT_VALIDATION)


if __name__ == '__main__':
    unittest.main()
