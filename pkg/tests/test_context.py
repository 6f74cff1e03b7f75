import json
import math
import unittest

import numpy as np

from src import sightline
from src.sightline import (GeoPoint, SiteRecord, SiteCatalog, MobileContext, ContextConfig, Prediction, RegionModel,
                           FeatureDistribution)

USER = GeoPoint(40.7500, -73.9900)


def site_at(site_id: str, bearing: float, distance: float) -> SiteRecord:
    return SiteRecord(site_id, site_id, sightline.destination_point(USER, bearing, distance), 'building')


# a in front, b behind, c in front but far, d slightly off axis
SITES = SiteCatalog((site_at('a', 0.0, 100.0), site_at('b', 180.0, 100.0), site_at('c', 10.0, 900.0),
                     site_at('d', 50.0, 150.0)))


class TestCandidates(unittest.TestCase):
    def test_location_and_orientation(self):
        ctx = MobileContext(USER, 0.0)
        self.assertEqual(sightline.candidate_sites(SITES, ctx), {'a', 'd'})
        narrow = ContextConfig(half_angle_deg = 30.0)
        self.assertEqual(sightline.candidate_sites(SITES, ctx, narrow), {'a'})

    def test_filters_disabled(self):
        ctx = MobileContext(USER, 0.0)
        no_orientation = ContextConfig(enable_orientation = False)
        self.assertEqual(sightline.candidate_sites(SITES, ctx, no_orientation), {'a', 'b', 'd'})
        no_location = ContextConfig(enable_location = False)
        self.assertEqual(sightline.candidate_sites(SITES, ctx, no_location), {'a', 'c', 'd'})
        nothing = ContextConfig(enable_location = False, enable_orientation = False)
        self.assertEqual(sightline.candidate_sites(SITES, ctx, nothing), set(SITES.site_ids))

    def test_bearing_wraps(self):
        ctx = MobileContext(USER, 350.0)
        self.assertIn('a', sightline.candidate_sites(SITES, ctx, ContextConfig(half_angle_deg = 15.0)))
        self.assertEqual(MobileContext(USER, -10.0).bearing, 350.0)

    def test_site_at_user(self):
        sites = SiteCatalog((SiteRecord('here', 'here', USER, 'statue'),))
        self.assertEqual(sightline.candidate_sites(sites, MobileContext(USER, 123.0)), {'here'})


class TestMasking(unittest.TestCase):
    raw = Prediction(('a', 'b', 'c', 'd'), [0.1, 0.4, 0.3, 0.2])

    def test_masked(self):
        result = sightline.masked_predict(self.raw, {'a', 'c'})
        dist = result.masked_distribution
        self.assertAlmostEqual(dist.prob('a'), 0.25)
        self.assertAlmostEqual(dist.prob('c'), 0.75)
        self.assertEqual(dist.prob('b'), 0.0)
        self.assertEqual(dist.prob('d'), 0.0)
        self.assertAlmostEqual(math.fsum(dist.distribution), 1.0, places = 12)
        self.assertEqual(result.top1, 'c')

    def test_ratios_preserved(self):
        result = sightline.masked_predict(self.raw, {'b', 'c', 'd'})
        dist = result.masked_distribution
        self.assertAlmostEqual(dist.prob('b') / dist.prob('d'), 2.0)
        self.assertAlmostEqual(dist.prob('c') / dist.prob('d'), 1.5)

    def test_all_candidates(self):
        result = sightline.masked_predict(self.raw, self.raw.site_ids)
        np.testing.assert_allclose(result.masked_distribution.distribution, self.raw.distribution)

    def test_no_candidate(self):
        with self.assertRaises(sightline.NoCandidateInContext):
            sightline.masked_predict(self.raw, set())
        zero = Prediction(('a', 'b'), [1.0, 0.0])
        with self.assertRaises(sightline.NoCandidateInContext):
            sightline.masked_predict(zero, {'b'})

    def test_unknown_candidate(self):
        with self.assertRaises(sightline.UnknownSiteId):
            sightline.masked_predict(self.raw, {'a', 'zz'})

    def test_random_masks(self):
        rng = np.random.default_rng(7)
        for _ in range(10_000):
            n = int(rng.integers(2, 12))
            ids = tuple(f's{i:02d}' for i in range(n))
            raw = Prediction(ids, rng.dirichlet(np.ones(n)))
            keep = rng.random(n) < 0.5
            keep[rng.integers(n)] = True
            candidates = {s for s, k in zip(ids, keep) if k}
            result = sightline.masked_predict(raw, candidates)
            self.assertIn(result.top1, candidates)
            expected = np.where(keep, raw.distribution, 0.0)
            np.testing.assert_allclose(result.masked_distribution.distribution, expected / expected.sum(),
                                       rtol = 1e-12, atol = 0.0)
            if raw.top1 in candidates:
                self.assertEqual(result.top1, raw.top1)

    def test_dump(self):
        result = sightline.masked_predict(self.raw, {'a', 'c'}, {'location': True})
        data = json.loads(sightline.dump_contextual_prediction(result))
        self.assertEqual(data['top1'], 'c')
        self.assertEqual(data['candidates'], ['a', 'c'])
        self.assertEqual(data['applied_filters'], {'location': True})


class TestContextualClassify(unittest.TestCase):
    # site i answers atom i
    model = RegionModel('r', SITES.site_ids, 10.0 * np.eye(4), np.zeros(4))

    def test_context_changes_answer(self):
        feature = FeatureDistribution([0.1, 0.6, 0.1, 0.2])
        ctx = MobileContext(USER, 0.0)
        self.assertEqual(sightline.predict(self.model, feature).top1, 'b')
        result = sightline.contextual_classify(self.model, feature, ctx, SITES)
        self.assertEqual(result.top1, 'd')
        self.assertEqual(result.candidates, {'a', 'd'})
        self.assertEqual(result.applied_filters, {'location': True, 'orientation': True, 'attention': False})

    def test_all_filters_off_is_raw(self):
        feature = FeatureDistribution([0.1, 0.6, 0.1, 0.2])
        cfg = ContextConfig(enable_location = False, enable_orientation = False, enable_attention = False)
        result = sightline.contextual_classify(self.model, feature, MobileContext(USER, 0.0), SITES, cfg)
        np.testing.assert_allclose(result.masked_distribution.distribution,
                                   sightline.predict(self.model, feature).distribution)

    def test_attention(self):
        feature = FeatureDistribution([0.1, 0.2, 0.1, 0.6])
        focused = FeatureDistribution([0.7, 0.1, 0.1, 0.1])
        ctx = MobileContext(USER, 0.0, focused)
        self.assertEqual(sightline.contextual_classify(self.model, feature, ctx, SITES).top1, 'a')
        off = ContextConfig(enable_attention = False)
        self.assertEqual(sightline.contextual_classify(self.model, feature, ctx, SITES, off).top1, 'd')

    def test_no_candidate(self):
        far = MobileContext(sightline.destination_point(USER, 90.0, 5000.0), 0.0)
        with self.assertRaises(sightline.NoCandidateInContext):
            sightline.contextual_classify(self.model, FeatureDistribution([0.25] * 4), far, SITES)

    def test_unknown_catalog_sites_ignored(self):
        extra = SiteCatalog(SITES.records + (site_at('e', 0.0, 50.0),))
        result = sightline.contextual_classify(self.model, FeatureDistribution([0.25] * 4),
                                               MobileContext(USER, 0.0), extra)
        self.assertNotIn('e', result.candidates)


if __name__ == '__main__':
    unittest.main()
