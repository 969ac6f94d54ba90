"""
Example usage of the map-based channel estimation library
"""

import logging
import tempfile

from core.channel import ArrayConfig, WaveformConfig, dbm_to_watts
from core.propagation import urban_canyon_scene
from harness.dataset import generate_dataset, load_bundle, save_bundle
from harness.experiments import SweepSpec, run_estimate, run_sweep

logger = logging.getLogger(__name__)


def main():
    logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')

    arr = ArrayConfig(nt_x=8, nt_y=8, nr_x=2, nr_y=2)
    wf = WaveformConfig(sample_interval_s=20e-9, num_taps=4, carrier_hz=15e9, tx_power_w=dbm_to_watts(50.0))
    bundle = generate_dataset(urban_canyon_scene(), arr, wf, n_samples=40, seed=7)

    with tempfile.TemporaryDirectory() as tmp:
        save_bundle(bundle, tmp)
        bundle = load_bundle(tmp)

        for method in ('ls-interp', 'ls-dft', 'somp'):
            result = run_estimate(bundle, method, pilot_count=16, snr_db=10.0, seed=0)
            print(f"{method:10s} {result.aggregate_db:7.2f} dB over {len(result.rows)} samples")

        spec = SweepSpec(axis='snr_db', values=(0.0, 10.0, 20.0), methods=('ls-ofdm', 'somp'), seeds=(0, 1))
        sweep = run_sweep(bundle, spec, out_dir=tmp)
        for method in spec.methods:
            print(method, sweep.curve(method))


if __name__ == "__main__":
    main()
