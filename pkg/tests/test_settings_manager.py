import unittest
import os
import json
import shutil
import tempfile
from core.errors import ConfigurationError, HeadDivisibility
from core.settings_manager import SettingsManager

class TestSettingsManager(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.test_file = os.path.join(self.temp_dir, 'test_settings.json')
    def tearDown(self):
        shutil.rmtree(self.temp_dir)
    def _write(self, name, data):
        path = os.path.join(self.temp_dir, name)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(data, f)
        return path
    def test_load_defaults(self):
        sm = SettingsManager(settings_file=self.test_file)
        self.assertIn('waveform', sm.settings)
        self.assertEqual(sm.get_setting('waveform.num_taps'), 4)
        self.assertTrue(sm.validate_settings()['valid'])
    def test_save_and_load(self):
        sm = SettingsManager(settings_file=self.test_file)
        sm.set_setting('train.epochs', 7)
        self.assertTrue(sm.save_settings())
        sm2 = SettingsManager(settings_file=self.test_file)
        self.assertEqual(sm2.get_setting('train.epochs'), 7)
        self.assertEqual(sm2.get_setting('train.batch_size'), 32)
    def test_nested_merge_keeps_defaults(self):
        path = self._write('partial.json', {'array': {'nt_x': 4}})
        sm = SettingsManager(settings_file=path)
        self.assertEqual(sm.get_setting('array.nt_x'), 4)
        self.assertEqual(sm.get_setting('array.nt_y'), 8)
        self.assertEqual(sm.array_config().nt, 32)
    def test_missing_key_default(self):
        sm = SettingsManager(settings_file=None)
        self.assertIsNone(sm.get_setting('array.nz'))
        self.assertEqual(sm.get_setting('nothing.here', 5), 5)
    def test_corrupt_file_falls_back(self):
        with open(self.test_file, 'w', encoding='utf-8') as f:
            f.write('{not json')
        sm = SettingsManager(settings_file=self.test_file)
        self.assertEqual(sm.get_setting('train.gamma'), 0.65)
    def test_reset_setting(self):
        sm = SettingsManager(settings_file=None)
        sm.set_setting('train.zeta', 3.0)
        sm.reset_setting('train.zeta')
        self.assertEqual(sm.get_setting('train.zeta'), 0.01)
    def test_reset_to_defaults_is_deep(self):
        sm = SettingsManager(settings_file=None)
        sm.set_setting('pinn.base_channels', [8, 8, 8])
        sm.reset_to_defaults()
        sm.settings['pinn']['base_channels'].append(1)
        self.assertEqual(sm.default_settings['pinn']['base_channels'], [16, 32, 64])
    def test_validation_errors(self):
        sm = SettingsManager(settings_file=None)
        sm.set_setting('waveform.rolloff', 1.5)
        sm.set_setting('train.gamma', 0.0)
        sm.set_setting('pinn.latent_dim', 10)
        sm.set_setting('harness.split', [0.5, 0.2, 0.2])
        result = sm.validate_settings()
        self.assertFalse(result['valid'])
        self.assertEqual(len(result['errors']), 4)
    def test_pilot_count_bound(self):
        sm = SettingsManager(settings_file=None)
        sm.set_setting('estimators.pilot_count', 65)
        self.assertFalse(sm.validate_settings()['valid'])
    def test_import_rejects_invalid(self):
        sm = SettingsManager(settings_file=None)
        path = self._write('bad.json', {'train': {'zeta': -1.0}})
        self.assertFalse(sm.import_settings(path))
        self.assertEqual(sm.get_setting('train.zeta'), 0.01)
    def test_import_merges(self):
        sm = SettingsManager(settings_file=None)
        path = self._write('good.json', {'train': {'epochs': 3}, 'estimators': {'snr_db': 0.0}})
        self.assertTrue(sm.import_settings(path))
        self.assertEqual(sm.get_setting('train.epochs'), 3)
        self.assertEqual(sm.get_setting('train.init_lr'), 1e-3)
        self.assertEqual(sm.get_setting('estimators.snr_db'), 0.0)
    def test_import_missing_file(self):
        sm = SettingsManager(settings_file=None)
        self.assertFalse(sm.import_settings(os.path.join(self.temp_dir, 'absent.json')))
    def test_typed_builders(self):
        sm = SettingsManager(settings_file=None)
        wf = sm.waveform_config()
        self.assertAlmostEqual(wf.tx_power_w, 100.0, delta=1e-9)
        self.assertAlmostEqual(wf.bandwidth_hz, 50e6, delta=1e-3)
        config = sm.pinn_config()
        self.assertEqual((config.d_taps, config.nr, config.nt, config.crop_px), (4, 4, 64, 12))
        self.assertEqual(sm.train_hyper().step_size, 40)
        self.assertIn(len(sm.scene().buildings), range(1, 9))
        sm.set_setting('scene.preset', 'canyon')
        self.assertGreater(len(sm.scene().buildings), 0)
    def test_builder_errors(self):
        sm = SettingsManager(settings_file=None)
        sm.set_setting('pinn.num_heads', 3)
        with self.assertRaises(HeadDivisibility):
            sm.pinn_config()
        sm.set_setting('train.momentum', 0.9)
        with self.assertRaises(ConfigurationError):
            sm.train_hyper()

if __name__ == '__main__':
    unittest.main()
