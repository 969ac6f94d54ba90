"""
Settings management for persistent experiment configuration
"""

import copy
import json
import logging
import os

from core.channel import ArrayConfig, WaveformConfig, dbm_to_watts
from core.errors import ConfigurationError
from core.propagation import Scene, load_scene, random_urban_scene, urban_canyon_scene

logger = logging.getLogger(__name__)

SCENE_PRESETS = ('random', 'canyon')
SPLIT_MODES = ('random', 'spatial')


def _merge(defaults, overrides):
    """Recursively overlay `overrides` on a deep copy of `defaults`"""
    merged = copy.deepcopy(defaults)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _is_positive_int(value):
    return isinstance(value, int) and not isinstance(value, bool) and value >= 1


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)


class SettingsManager:
    """Manages experiment settings with JSON persistence"""

    def __init__(self, settings_file='mbce_settings.json'):
        self.settings_file = settings_file
        self.settings = {}
        self.default_settings = {
            'array': {
                'nt_x': 8,
                'nt_y': 8,
                'nr_x': 2,
                'nr_y': 2
            },
            'waveform': {
                'sample_interval_s': 20e-9,  # 50 MHz
                'num_taps': 4,
                'carrier_hz': 15e9,
                'tx_power_dbm': 50.0,
                'rolloff': 0.4
            },
            'scene': {
                'file': None,
                'preset': 'random',
                'extent_m': [160.0, 160.0],
                'n_buildings': 8,
                'seed': 0
            },
            'propagation': {
                'max_order': 1,
                'resolution_m': 2.0,
                'rx_height_m': 1.5,
                'workers': 1
            },
            'estimators': {
                'pilot_kind': 'antenna',
                'pilot_count': 16,
                'snr_db': 10.0,
                'n_fft': 64,
                'grid_factor': 4,
                'max_sparsity': 8,
                'gps_sigma_m': 3.0,
                'crop_m': 24.0  # 12 px at the default resolution
            },
            'pinn': {
                'base_channels': [16, 32, 64],
                'rss_channels': [32, 64, 128, 256],
                'latent_dim': 64,
                'num_blocks': 2,
                'num_heads': 4,
                'ff_multiplier': 4,
                'multi_step_L': 1,
                'norm_groups': 8,
                'rss_token_mode': 'pooled',
                'input_residual': True
            },
            'train': {
                'batch_size': 32,
                'epochs': 50,
                'init_lr': 1e-3,
                'step_size': 40,
                'gamma': 0.65,
                'beta1': 0.9,
                'beta2': 0.999,
                'adam_eps': 1e-8,
                'zeta': 0.01,
                'seed': 0,
                'rss_source': 'center'
            },
            'harness': {
                'n_samples': 500,
                'seed': 0,
                'split': [0.8, 0.1, 0.1],
                'split_mode': 'random',
                'initial_method': 'ls-ofdm',
                'trajectory_velocity_mps': None,
                'trajectory_step_s': None,
                'sweep_seeds': [0, 1, 2]
            }
        }

        self.load_settings()
        logger.info("Settings manager initialized")

    def load_settings(self):
        """Load settings from JSON file, falling back to defaults key by key"""
        try:
            loaded = {}
            if self.settings_file and os.path.exists(self.settings_file):
                with open(self.settings_file, 'r', encoding='utf-8') as f:
                    loaded = json.load(f)
                logger.info(f"Settings loaded from {self.settings_file}")
            else:
                logger.info("No settings file found, using defaults")
            if not isinstance(loaded, dict):
                raise ValueError("settings file must hold a JSON object")
            self.settings = _merge(self.default_settings, loaded)

        except Exception as e:
            logger.error(f"Error loading settings: {str(e)}")
            self.settings = copy.deepcopy(self.default_settings)

    def save_settings(self):
        """Save settings to JSON file"""
        return self.export_settings(self.settings_file)

    def get_setting(self, key, default=None):
        """Get a setting value

        Args:
            key: Setting key (supports dot notation for nested keys)
            default: Default value if key not found

        Returns:
            Setting value or default
        """
        value = self.settings
        for k in key.split('.'):
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default
        return value

    def set_setting(self, key, value):
        """Set a setting value

        Args:
            key: Setting key (supports dot notation for nested keys)
            value: Value to set
        """
        keys = key.split('.')
        current = self.settings
        for k in keys[:-1]:
            if not isinstance(current.get(k), dict):
                current[k] = {}
            current = current[k]
        current[keys[-1]] = value
        logger.debug(f"Setting '{key}' set to: {value}")

    def get_all_settings(self):
        return copy.deepcopy(self.settings)

    def reset_to_defaults(self):
        self.settings = copy.deepcopy(self.default_settings)
        logger.info("Settings reset to defaults")

    def reset_setting(self, key):
        """Reset a specific (possibly nested) setting to its default"""
        sentinel = object()
        default = self._default(key, sentinel)
        if default is sentinel:
            logger.warning(f"No default value for setting '{key}'")
            return
        self.set_setting(key, copy.deepcopy(default))
        logger.info(f"Setting '{key}' reset to default")

    def _default(self, key, fallback):
        value = self.default_settings
        for k in key.split('.'):
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return fallback
        return value

    def validate_settings(self):
        """Validate current settings

        Returns:
            Dictionary with validation results
        """
        results = {
            'valid': True,
            'errors': [],
            'warnings': []
        }

        def error(message):
            results['errors'].append(message)
            results['valid'] = False

        try:
            for key in ('array.nt_x', 'array.nt_y', 'array.nr_x', 'array.nr_y', 'waveform.num_taps',
                        'estimators.pilot_count', 'estimators.n_fft', 'estimators.grid_factor',
                        'estimators.max_sparsity', 'pinn.latent_dim', 'pinn.num_heads', 'pinn.multi_step_L',
                        'pinn.norm_groups', 'train.batch_size', 'train.epochs', 'train.step_size',
                        'harness.n_samples'):
                if not _is_positive_int(self.get_setting(key)):
                    error(f"{key} must be a positive integer")

            for key in ('waveform.sample_interval_s', 'waveform.carrier_hz', 'propagation.resolution_m',
                        'estimators.crop_m', 'train.init_lr'):
                value = self.get_setting(key)
                if not _is_number(value) or value <= 0:
                    error(f"{key} must be positive")

            rolloff = self.get_setting('waveform.rolloff')
            if not _is_number(rolloff) or not 0.0 <= rolloff <= 1.0:
                error("waveform.rolloff must lie in [0, 1]")
            gamma = self.get_setting('train.gamma')
            if not _is_number(gamma) or not 0.0 < gamma <= 1.0:
                error("train.gamma must lie in (0, 1]")
            zeta = self.get_setting('train.zeta')
            if not _is_number(zeta) or zeta < 0:
                error("train.zeta must be non-negative")
            if self.get_setting('estimators.gps_sigma_m', 0) < 0:
                error("estimators.gps_sigma_m must be non-negative")
            if self.get_setting('propagation.max_order') not in (0, 1, 2):
                error("propagation.max_order must be 0, 1 or 2")

            latent = self.get_setting('pinn.latent_dim')
            heads = self.get_setting('pinn.num_heads')
            if _is_positive_int(latent) and _is_positive_int(heads) and latent % heads:
                error(f"pinn.latent_dim {latent} is not divisible by pinn.num_heads {heads}")
            groups = self.get_setting('pinn.norm_groups')
            if _is_positive_int(groups) and any(c % groups for c in self.get_setting('pinn.base_channels', [])):
                error("pinn.base_channels must be divisible by pinn.norm_groups")

            split = self.get_setting('harness.split')
            if (not isinstance(split, (list, tuple)) or len(split) != 3
                    or any(not _is_number(f) or f < 0 for f in split) or abs(sum(split) - 1.0) > 1e-9):
                error("harness.split must be three non-negative fractions summing to 1")
            if self.get_setting('harness.split_mode') not in SPLIT_MODES:
                error(f"harness.split_mode must be one of {SPLIT_MODES}")

            if self.get_setting('scene.file') is None and self.get_setting('scene.preset') not in SCENE_PRESETS:
                error(f"scene.preset must be one of {SCENE_PRESETS}")

            crop_px = self.crop_px()
            if crop_px < 4:
                results['warnings'].append(f"RSS crop is only {crop_px} px; the RSS encoder pools it away")
            pilots = self.get_setting('estimators.pilot_count')
            nt = self.get_setting('array.nt_x', 0) * self.get_setting('array.nt_y', 0)
            if self.get_setting('estimators.pilot_kind') == 'antenna' and _is_positive_int(pilots) and pilots > nt:
                error(f"estimators.pilot_count {pilots} exceeds Nt = {nt}")

        except Exception as e:
            error(f"Validation error: {str(e)}")

        return results

    def export_settings(self, filename):
        """Export settings to file

        Args:
            filename: Output filename

        Returns:
            Boolean success status
        """
        try:
            with open(filename, 'w', encoding='utf-8') as f:
                json.dump(self.settings, f, indent=2, ensure_ascii=False)
            logger.info(f"Settings exported to {filename}")
            return True

        except Exception as e:
            logger.error(f"Error exporting settings: {str(e)}")
            return False

    def import_settings(self, filename):
        """Import settings from file

        Args:
            filename: Input filename

        Returns:
            Boolean success status; current settings are unchanged on failure
        """
        try:
            with open(filename, 'r', encoding='utf-8') as f:
                imported_settings = json.load(f)

            if not isinstance(imported_settings, dict):
                logger.error("Invalid settings format")
                return False

            previous = self.settings
            self.settings = _merge(previous, imported_settings)

            validation = self.validate_settings()
            if validation['warnings']:
                logger.warning(f"Imported settings validation warnings: {validation['warnings']}")
            if not validation['valid']:
                logger.error(f"Imported settings validation errors: {validation['errors']}")
                self.settings = previous
                return False

            logger.info(f"Settings imported from {filename}")
            return True

        except Exception as e:
            logger.error(f"Error importing settings: {str(e)}")
            return False

    # -- typed views ------------------------------------------------------

    def array_config(self):
        a = self.settings['array']
        return ArrayConfig(a['nt_x'], a['nt_y'], a['nr_x'], a['nr_y'])

    def waveform_config(self):
        w = self.settings['waveform']
        return WaveformConfig(
            sample_interval_s=float(w['sample_interval_s']),
            num_taps=int(w['num_taps']),
            carrier_hz=float(w['carrier_hz']),
            tx_power_w=dbm_to_watts(float(w['tx_power_dbm'])),
            rolloff=float(w['rolloff']),
        )

    def crop_px(self):
        return int(round(self.get_setting('estimators.crop_m') / self.get_setting('propagation.resolution_m')))

    def pinn_config(self):
        from pinn.config import PinnConfig

        arr = self.array_config()
        p = dict(self.settings['pinn'])
        p.update(d_taps=int(self.get_setting('waveform.num_taps')), nr=arr.nr, nt=arr.nt,
                 crop_px=self.crop_px())
        return PinnConfig.from_dict(p)

    def train_hyper(self):
        from pinn.config import TrainHyper

        try:
            return TrainHyper(**self.settings['train'])
        except TypeError as e:
            raise ConfigurationError(f"invalid training settings: {e}") from e

    def scene(self) -> Scene:
        s = self.settings['scene']
        if s.get('file'):
            return load_scene(s['file'])
        if s['preset'] == 'canyon':
            return urban_canyon_scene()
        if s['preset'] == 'random':
            return random_urban_scene(tuple(s['extent_m']), int(s['n_buildings']), int(s['seed']))
        raise ConfigurationError(f"unknown scene preset {s['preset']!r}")
