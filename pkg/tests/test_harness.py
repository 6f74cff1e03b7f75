import dataclasses
import math
import unittest

import numpy as np

from src import sightline
from src.sightline import (SynthConfig, ProtocolConfig, TrainConfig, ContextConfig, WildConfig, RegionModel,
                           MobileContext, FeatureDataset)

SMALL = SynthConfig(num_sites = 20, images_per_site = 40, chaotic_class_fraction = 0.2, seed = 3)
PLANTED = SynthConfig(num_sites = 8, images_per_site = 15, chaotic_class_fraction = 0.25, seed = 3)
FAST = TrainConfig(epochs = 20)


class TestSplit(unittest.TestCase):
    def test_stratified(self):
        _, dataset, _ = sightline.generate_synthetic(SynthConfig(num_sites = 5, images_per_site = 7))
        train, test = sightline.stratified_split(dataset, 0.2, np.random.default_rng(0))
        self.assertEqual(sorted(train + test), list(range(len(dataset))))
        self.assertFalse(set(train) & set(test))
        for site_id, indices in dataset.by_site.items():
            # round(0.2 * 7) = 1
            self.assertEqual(len(set(indices) & set(test)), 1)

    def test_tiny_classes(self):
        _, dataset, _ = sightline.generate_synthetic(SynthConfig(num_sites = 3, images_per_site = 2))
        train, test = sightline.stratified_split(dataset, 0.9, np.random.default_rng(1))
        self.assertEqual((len(train), len(test)), (3, 3))

    def test_class_too_small(self):
        _, dataset, _ = sightline.generate_synthetic(SynthConfig(num_sites = 3, images_per_site = 4))
        dataset = dataset.subset([0, 1, 2, 3, 4, 5, 6, 7, 8])
        with self.assertRaises(sightline.ClassTooSmall) as cm:
            sightline.monte_carlo_cv(dataset, ProtocolConfig(k_iterations = 1))
        self.assertEqual(cm.exception.site_id, 'site0002')


class TestMonteCarlo(unittest.TestCase):
    _, dataset, _ = sightline.generate_synthetic(SMALL)

    def test_deterministic(self):
        protocol = ProtocolConfig(k_iterations = 3, seed = 5)
        a = sightline.monte_carlo_cv(self.dataset, protocol, FAST)
        b = sightline.monte_carlo_cv(self.dataset, protocol.replace(max_workers = 3), FAST)
        self.assertEqual(a.to_dict(), b.to_dict())
        self.assertEqual(len(a.runs), 3)
        for run in a.runs:
            self.assertTrue(0.0 <= run.accuracy <= 1.0)
        self.assertGreaterEqual(a.std, 0.0)

    def test_purify_helps(self):
        protocol = ProtocolConfig(k_iterations = 3)
        off = sightline.monte_carlo_cv(self.dataset, protocol, purify = False)
        on = sightline.monte_carlo_cv(self.dataset, protocol, purify = True)
        self.assertFalse(off.purify)
        self.assertTrue(on.purify)
        self.assertGreaterEqual(on.mean - off.mean, 0.05)
        self.assertGreater(on.mean_removal('classes_removed_fraction'), 0.0)
        # the test images of the removed chaotic sites are not scored
        self.assertTrue(all(run.excluded_test_images > 0 for run in on.runs))

    def test_single_class(self):
        result = sightline.monte_carlo_cv(self.dataset.restrict(['site0000']), ProtocolConfig(k_iterations = 2),
                                          purify = False)
        self.assertEqual(result.accuracies, [1.0, 1.0])

    def test_mean_std(self):
        result = sightline.CVResult((sightline.CVRun(0.5, 1, 1), sightline.CVRun(1.0, 1, 1)), False)
        self.assertEqual(result.mean, 0.75)
        self.assertEqual(result.std, 0.25)


class TestImagesSweep(unittest.TestCase):
    def test_subsample(self):
        _, dataset, _ = sightline.generate_synthetic(SynthConfig(num_sites = 4, images_per_site = 10))
        rng = np.random.default_rng(0)
        self.assertEqual(len(sightline.subsample_per_class(dataset, 3, rng)), 12)
        whole = sightline.subsample_per_class(dataset, 50, rng)
        self.assertEqual([img.image_id for img in whole], [img.image_id for img in dataset])
        with self.assertRaises(sightline.InvalidConfig):
            sightline.subsample_per_class(dataset, 0, rng)

    def test_sweep(self):
        _, dataset, _ = sightline.generate_synthetic(SynthConfig(num_sites = 6, images_per_site = 12))
        protocol = ProtocolConfig(k_iterations = 2, purify = False)
        sweep = sightline.sweep_images_per_class(dataset, (3, 6, 12), protocol, FAST)
        self.assertEqual([m for m, _ in sweep.points], [3, 6, 12])
        self.assertIn('spearman', sweep.to_dict())
        with self.assertRaises(sightline.InvalidConfig):
            sightline.sweep_images_per_class(dataset, (5, 0), protocol, FAST)

    def test_full_size_matches_unswept(self):
        _, dataset, _ = sightline.generate_synthetic(PLANTED)
        protocol = ProtocolConfig(k_iterations = 2)
        sweep = sightline.sweep_images_per_class(dataset, (15,), protocol, FAST)
        unswept = sightline.monte_carlo_cv(dataset, protocol, FAST)
        self.assertTrue(unswept.purify)
        self.assertEqual(sweep.points[0][1].to_dict(), unswept.to_dict())

    def test_small_splits_skip_purification(self):
        _, dataset, _ = sightline.generate_synthetic(PLANTED)
        with self.assertLogs(level = 'WARNING') as log:
            sweep = sightline.sweep_images_per_class(dataset, (5, 15), ProtocolConfig(k_iterations = 1), FAST)
        (_, small), (_, full) = sweep.points
        # 5 images split into 4 for training, below min_images_after
        self.assertFalse(small.purify)
        self.assertTrue(full.purify)
        self.assertTrue(any('without purification' in line for line in log.output))

    def test_spearman(self):
        self.assertIsNone(sightline.spearman([1, 2], [3, 4]))
        self.assertIsNone(sightline.spearman([1, 2, 3], [0.5, 0.5, 0.5]))
        self.assertAlmostEqual(sightline.spearman([1, 2, 3, 4], [0.1, 0.4, 0.3, 0.9]), 0.8)


class TestAreaSweep(unittest.TestCase):
    catalog, dataset, _ = sightline.generate_synthetic(SynthConfig(num_sites = 8, images_per_site = 10,
                                                                   chaotic_class_fraction = 0.0))
    protocol = ProtocolConfig(k_iterations = 1, purify = False)

    def test_grid(self):
        sweep = sightline.sweep_area_size(self.catalog, self.dataset, (250.0, 5000.0), self.protocol, FAST)
        self.assertEqual(sweep.kind, 'grid')
        small, large = sweep.points
        # 5 km covers the whole benchmark area in one region
        self.assertEqual(large.region_sites, {'r000c000': 8})
        self.assertEqual(len(large.region_accuracies), 1)
        self.assertTrue(all(reason == 'no sites' for reason in small.skipped.values()))
        self.assertEqual(sum(small.region_sites.values()), 8)
        for accuracy in small.region_accuracies.values():
            self.assertTrue(0.0 <= accuracy <= 1.0)
        report = sightline.area_report(sweep, {})
        self.assertEqual(report.protocol, 'sweep_area_grid')
        self.assertEqual(len(report.tables[sightline.AREA_CSV].rows), 2)

    def test_radius(self):
        sweep = sightline.sweep_area_radius(self.catalog, self.dataset, (1.0, 10_000.0), 3, self.protocol, FAST)
        tiny, huge = sweep.points
        # a tiny circle holds only its center site
        self.assertEqual(set(tiny.region_accuracies.values()), {1.0})
        self.assertEqual(set(huge.region_sites.values()), {8})
        with self.assertRaises(sightline.InvalidConfig):
            sightline.sweep_area_radius(self.catalog, self.dataset, (0.0,), 3, self.protocol, FAST)


class TestTrends(unittest.TestCase):
    _, dataset, _ = sightline.generate_synthetic(SynthConfig.preset('noisy', num_sites = 40))

    def test_more_images_help(self):
        sweep = sightline.sweep_images_per_class(self.dataset, (5, 10, 20, 40, 70, 80),
                                                 ProtocolConfig(k_iterations = 5, purify = False))
        self.assertGreaterEqual(sweep.trend, 0.9)

    def test_larger_areas_hurt(self):
        catalog, dataset, _ = sightline.generate_synthetic(SynthConfig.preset('noisy'))
        sweep = sightline.sweep_area_size(catalog, dataset, (250.0, 354.0, 500.0, 707.0, 1000.0),
                                          ProtocolConfig(k_iterations = 2, purify = False))
        sites = [p.mean_sites for p in sweep.points]
        accuracy = [p.mean_accuracy for p in sweep.points]
        self.assertEqual(sites, sorted(sites))
        for before, after in zip(accuracy, accuracy[1:]):
            self.assertLessEqual(after, before + 0.02)
        self.assertGreaterEqual(accuracy[0] - accuracy[-1], 0.1)


class TestConfusion(unittest.TestCase):
    catalog, dataset, _ = sightline.generate_synthetic(SynthConfig(num_sites = 12, images_per_site = 10,
                                                                   chaotic_class_fraction = 0.0))

    def test_rows(self):
        model = sightline.train_region_model(self.dataset, FAST)
        for mode in ('top1', 'mass'):
            confusion = sightline.confusion_by_category(model, self.dataset, self.catalog, mode)
            self.assertEqual(confusion.categories, tuple(sorted(sightline.CATEGORIES)))
            for category, row in confusion.rows.items():
                self.assertAlmostEqual(math.fsum(row.values()), 1.0, places = 12)
                self.assertEqual(confusion.counts[category], 20)
            self.assertEqual(len(confusion.top('church')), 3)

    def test_uniform_model(self):
        model = RegionModel('r', self.dataset.classes, np.zeros((12, 100)), np.zeros(12))
        # every category owns two of the twelve sites
        mass = sightline.confusion_by_category(model, self.dataset, self.catalog, 'mass')
        for row in mass.rows.values():
            for value in row.values():
                self.assertAlmostEqual(value, 1 / 6)
        # ties go to site0000, a building
        top1 = sightline.confusion_by_category(model, self.dataset, self.catalog, 'top1')
        for category, row in top1.rows.items():
            self.assertEqual(row['building'], 1.0)
        self.assertIsNone(top1.same_category_correct['church'])
        self.assertEqual(top1.same_category_correct['building'], 0.5)

    def test_errors(self):
        model = sightline.train_region_model(self.dataset, TrainConfig(epochs = 1))
        with self.assertRaises(sightline.EmptyTestSet):
            sightline.confusion_by_category(model, FeatureDataset((), 100), self.catalog)
        with self.assertRaises(sightline.UnknownSiteId):
            sightline.confusion_by_category(model, self.dataset, self.catalog.subset(['site0000']))


class TestWild(unittest.TestCase):
    catalog, dataset, truth = sightline.generate_synthetic(SynthConfig(num_sites = 30, images_per_site = 20,
                                                                       chaotic_class_fraction = 0.0))
    tiling = sightline.tile_area(catalog.bbox(), 5000.0, 200.0)
    models = sightline.train_region_models(tiling, catalog, dataset, FAST)
    wild = WildConfig(n_queries = 40)

    def test_cells(self):
        report = sightline.simulate_wild(self.catalog, self.models, self.tiling, self.truth, self.wild)
        self.assertEqual(len(report.cells), 8)
        self.assertEqual({(c.location, c.orientation, c.attention) for c in report.cells},
                         set(sightline.ABLATION_GRID))
        for cell in report.cells:
            self.assertEqual(cell.n_queries, 40)
            self.assertEqual(cell.no_model, 0)
        self.assertEqual(report.cell(False, False, False).no_candidate, 0)

    def test_all_off_is_raw(self):
        report = sightline.simulate_wild(self.catalog, self.models, self.tiling, self.truth, self.wild)
        queries = sightline.draw_wild_queries(self.catalog, sorted(self.models['r000c000'].site_ids), self.truth,
                                              self.wild)
        model = self.models['r000c000']
        hits = sum(sightline.predict(model, q.feature).top1 == q.site_id for q in queries)
        self.assertEqual(report.cell(False, False, False).hits, hits)

    def test_tiny_radius(self):
        context = ContextConfig(radius_m = 0.001)
        report = sightline.simulate_wild(self.catalog, self.models, self.tiling, self.truth, self.wild, context)
        for cell in report.cells:
            if cell.location:
                self.assertEqual(cell.no_candidate, 40)
                self.assertIsNone(cell.accuracy)
            else:
                self.assertIsNotNone(cell.accuracy)
        rows = sightline.context_report(report, {}).tables[sightline.CONTEXT_CSV].rows
        self.assertTrue(any(row[3] is None for row in rows))

    def test_no_models(self):
        with self.assertRaises(sightline.InvalidConfig):
            sightline.simulate_wild(self.catalog, {}, self.tiling, self.truth, self.wild)

    def test_queries_face_their_site(self):
        queries = sightline.draw_wild_queries(self.catalog, self.catalog.site_ids, self.truth,
                                              dataclasses.replace(self.wild, gps_sigma_m = 0.0,
                                                                  compass_sigma_deg = 0.0))
        for q in queries:
            site = self.catalog.get(q.site_id)
            distance = sightline.haversine_distance(q.true_location, site.location)
            self.assertTrue(50.0 - 1e-6 <= distance <= 150.0 + 1e-6)
            self.assertLess(sightline.haversine_distance(q.reported_location, q.true_location), 1e-6)
            bearing = sightline.initial_bearing(q.reported_location, site.location)
            self.assertAlmostEqual(sightline.angular_difference(bearing, q.bearing), 0.0, places = 6)
            ctx = MobileContext(q.reported_location, q.bearing)
            self.assertIn(q.site_id, sightline.candidate_sites(self.catalog, ctx))


class TestWildBenchmark(unittest.TestCase):
    def test_context_helps(self):
        settings = sightline.Settings()
        catalog, dataset, truth = sightline.generate_synthetic(settings.synth)
        tiling = sightline.tile_area(catalog.bbox(), 1000.0, 200.0)
        dataset = sightline.purify_dataset(dataset, settings.purify).dataset
        models = sightline.train_region_models(tiling, catalog, dataset, settings.train)
        report = sightline.simulate_wild(catalog, models, tiling, truth, settings.wild, settings.context)
        full = report.cell(True, True, True).accuracy
        none = report.cell(False, False, False).accuracy
        self.assertGreaterEqual(full - none, 0.15)
        # a true site can fall outside a filter under sensor noise
        for single in ((True, False, False), (False, True, False), (False, False, True)):
            accuracy = report.cell(*single).accuracy
            self.assertGreaterEqual(accuracy, none - 0.01, single)
            self.assertLessEqual(accuracy, full + 0.01, single)


if __name__ == '__main__':
    unittest.main()
