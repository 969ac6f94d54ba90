import os
import shutil
import tempfile
import unittest

from harness.run_registry import RunRegistry


class TestRunRegistry(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.registry = RunRegistry(os.path.join(self.temp_dir, 'runs.db'))
    def tearDown(self):
        shutil.rmtree(self.temp_dir)
    def test_record_and_get(self):
        run_id = self.registry.record_run('estimate', {'Np': 4, 'snr_db': 0.0}, method='ls-ofdm',
                                          bundle_hash='abc', samples=10, aggregate_nmse_db=-12.5)
        run = self.registry.get_run(run_id)
        self.assertEqual(run['method'], 'ls-ofdm')
        self.assertEqual(run['params'], {'Np': 4, 'snr_db': 0.0})
        self.assertEqual(run['samples'], 10)
        self.assertIsNone(self.registry.get_run(run_id + 1))
    def test_list_newest_first(self):
        first = self.registry.record_run('estimate', {}, method='ls-dft', aggregate_nmse_db=-3.0)
        second = self.registry.record_run('sweep', {'axis': 'snr_db'})
        third = self.registry.record_run('estimate', {}, method='somp', aggregate_nmse_db=-9.0)
        self.assertEqual([r['id'] for r in self.registry.list_runs()], [third, second, first])
        self.assertEqual([r['id'] for r in self.registry.list_runs('estimate')], [third, first])
        self.assertEqual(len(self.registry.list_runs(limit=1)), 1)
    def test_best_run(self):
        self.registry.record_run('estimate', {'seed': 0}, method='somp', aggregate_nmse_db=-8.0)
        best = self.registry.record_run('estimate', {'seed': 1}, method='somp', aggregate_nmse_db=-11.0)
        self.registry.record_run('sweep', {}, method='somp')
        self.assertEqual(self.registry.best_run('somp')['id'], best)
        self.assertIsNone(self.registry.best_run('omp'))
    def test_persists_across_instances(self):
        self.registry.record_run('estimate', {}, method='sp')
        reopened = RunRegistry(self.registry.db_file)
        self.assertEqual(len(reopened.list_runs()), 1)
    def test_clear_all(self):
        self.registry.record_run('estimate', {})
        self.registry.clear_all()
        self.assertEqual(self.registry.list_runs(), [])


if __name__ == '__main__':
    unittest.main()
