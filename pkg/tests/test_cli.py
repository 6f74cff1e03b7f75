import contextlib
import io
import json
import pathlib
import tempfile
import unittest

from src import sightline
from src.sightline.__main__ import main

SMALL = {
    'synth': {'num_sites': 12, 'images_per_site': 15, 'dimension': 40},
    'train': {'epochs': 10},
    'protocol': {'k_iterations': 2, 'm_values': [4, 8], 'area_sizes_m': [5000.0]},
    'wild': {'n_queries': 20},
}


class CLITemplate(unittest.TestCase):
    def setUp(self) -> None:
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = pathlib.Path(self._tmp.name)
        self.config = self.tmp / 'config.json'
        self.config.write_text(json.dumps(SMALL))

    def tearDown(self) -> None:
        self._tmp.cleanup()

    def run_cli(self, *argv: str, code: int = 0) -> str:
        """Run the command line. Returns stdout on success and stderr on failure"""
        stdout, stderr = io.StringIO(), io.StringIO()
        with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
            self.assertEqual(main(list(argv)), code, stderr.getvalue())
        return stdout.getvalue() if code == 0 else stderr.getvalue()


class TestReports(CLITemplate):
    def test_eval_reproducible(self):
        outputs = []
        for name in ('a', 'b'):
            out = self.tmp / name
            self.assertIn('eval report written', self.run_cli('eval', '--config', str(self.config), '--out', str(out)))
            outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        self.assertEqual(sorted(outputs[0]), ['eval.json', sightline.FILTER_CSV])
        self.assertEqual(outputs[0], outputs[1])
        report = json.loads(outputs[0]['eval.json'])
        self.assertEqual(report['protocol'], 'eval')
        self.assertEqual(set(report['metrics']), {'off', 'on'})
        self.assertEqual(report['config']['settings']['synth']['num_sites'], 12)

    def test_seed_changes_output(self):
        self.run_cli('eval', '--config', str(self.config), '--out', str(self.tmp / 'a'), '--seed', '1')
        self.run_cli('eval', '--config', str(self.config), '--out', str(self.tmp / 'b'), '--seed', '2')
        a = json.loads((self.tmp / 'a' / 'eval.json').read_text())
        b = json.loads((self.tmp / 'b' / 'eval.json').read_text())
        self.assertEqual(a['config']['settings']['protocol']['seed'], 1)
        self.assertNotEqual(a['metrics'], b['metrics'])

    def test_protocols(self):
        cases = {
            'sweep-images': ('sweep_images.json', sightline.IMAGES_CSV),
            'sweep-area': ('sweep_area_grid.json', sightline.AREA_CSV),
            'confusion': ('confusion.json', sightline.CONFUSION_CSV),
            'sources': ('sources.json', sightline.SOURCES_CSV),
        }
        for command, files in cases.items():
            out = self.tmp / command
            self.run_cli(command, '--config', str(self.config), '--out', str(out))
            self.assertEqual(sorted(p.name for p in out.iterdir()), sorted(files))

    def test_wild(self):
        out = self.tmp / 'wild'
        self.run_cli('wild', '--config', str(self.config), '--out', str(out), '--region-size', '5000')
        report = json.loads((out / 'wild.json').read_text())
        self.assertEqual(len(report['metrics']['cells']), 8)
        rows = (out / sightline.CONTEXT_CSV).read_text().splitlines()
        self.assertEqual(rows[0], 'location,orientation,attention,accuracy,hits,n_queries,no_candidate,no_model')
        self.assertEqual(len(rows), 9)

    def test_errors(self):
        message = self.run_cli('train', '--config', str(self.config), '--features', 'missing.jsonl',
                               '--out', str(self.tmp), code = 1)
        self.assertIn('sightline train', message)
        bad = self.tmp / 'bad.json'
        bad.write_text(json.dumps({'synth': {'sites': 3}}))
        self.assertIn('InvalidConfig', self.run_cli('eval', '--config', str(bad), code = 1))


class TestPipeline(CLITemplate):
    def test_generate_train_publish_fetch(self):
        data = self.tmp / 'data'
        self.run_cli('generate', '--config', str(self.config), '--out', str(data))
        self.assertTrue((data / 'ground_truth.json').exists())
        catalog, features = str(data / 'catalog.csv'), str(data / 'features.jsonl')

        ingested = self.tmp / 'ingested'
        self.run_cli('ingest', '--catalog', catalog, '--features', features, '--format', 'binary',
                     '--out', str(ingested))
        summary = json.loads((ingested / 'ingest.json').read_text())
        self.assertEqual((summary['sites'], summary['images']), (12, 180))

        purified = self.tmp / 'purified'
        self.run_cli('purify', '--catalog', catalog, '--features', str(ingested / 'features.bin'),
                     '--out', str(purified))
        self.assertEqual(len((purified / 'cohesion.csv').read_text().splitlines()), 13)

        models = self.tmp / 'models'
        self.run_cli('train', '--config', str(self.config), '--catalog', catalog, '--features', features,
                     '--region-size', '5000', '--purify', '--out', str(models))
        blob = (models / 'models' / 'r000c000.grm').read_bytes()
        self.assertEqual(sightline.deserialize_model(blob).region_id, 'r000c000')

        store = sightline.RegistryStore(sightline.load_tiling(models / 'tiling.json'))
        with sightline.RegistryServer(store, ('127.0.0.1', 0)) as server:
            address = f'127.0.0.1:{server.addr[1]}'
            published = json.loads(self.run_cli('publish', str(models / 'models' / 'r000c000.grm'),
                                                '--server', address))
            self.assertEqual(published['version'], 1)
            fetched = self.tmp / 'fetched'
            center = store.tiling.get('r000c000').center
            reply = json.loads(self.run_cli('fetch', '--server', address, '--lat', str(center.lat),
                                            '--lon', str(center.lon), '--out', str(fetched)))
            self.assertFalse(reply['not_modified'])
            self.assertEqual((fetched / 'r000c000-v1.grm').read_bytes(), blob)
            reply = json.loads(self.run_cli('fetch', '--server', address, '--region', 'r000c000',
                                            '--if-hash', published['content_hash'], '--out', str(fetched)))
            self.assertTrue(reply['not_modified'])
            self.assertIn('RegionUnknown', self.run_cli('fetch', '--server', address, '--region', 'nowhere',
                                                        code = 1))

    def test_tile(self):
        self.run_cli('tile', '--bbox', '40.74', '-74.0', '40.758', '-73.9763', '--region-size', '1000',
                     '--out', str(self.tmp))
        tiling = sightline.load_tiling(self.tmp / 'tiling.json')
        self.assertEqual(len(tiling), 9)


if __name__ == '__main__':
    unittest.main()
