"""
Seeded synthetic benchmark: sites with Dirichlet prototypes, noisy inlier images, planted outlier images and planted
chaotic classes. Everything is drawn from one PCG64 generator in a fixed order, so a seed reproduces the data exactly.
"""
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .config import CATEGORIES, SynthConfig
from .structs import (GeoPoint, SiteRecord, SiteCatalog, FeatureDistribution, ImageFeatureRecord, FeatureDataset)

ATOM_FLOOR = 1e-12


def _clean(row: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Drop underflowing atoms and renormalize. A draw that lost all its mass becomes a random one-hot vector"""
    row = np.nan_to_num(np.asarray(row, dtype = np.float64), nan = 0.0, posinf = 0.0, neginf = 0.0)
    row[row < ATOM_FLOOR] = 0.0
    total = row.sum()
    if total <= 0.0:
        row = np.zeros_like(row)
        row[rng.integers(row.size)] = 1.0
        return row
    return row / total


@dataclass(frozen = True, eq = False)
class GroundTruth:
    """What the generator planted. Prototypes are kept to draw further query images of the same sites"""
    config: SynthConfig
    site_ids: tuple[str, ...]
    prototypes: np.ndarray
    outlier_image_ids: frozenset = frozenset()
    chaotic_site_ids: tuple[str, ...] = ()

    @cached_property
    def _rows(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.site_ids)}

    def prototype(self, site_id: str) -> np.ndarray:
        return self.prototypes[self._rows[site_id]]

    def global_draw(self, rng: np.random.Generator) -> np.ndarray:
        alpha = np.full(self.prototypes.shape[1], self.config.global_concentration)
        return _clean(rng.dirichlet(alpha), rng)

    def sample_feature(self, site_id: str, noise: float, rng: np.random.Generator) -> FeatureDistribution:
        """A fresh image of site_id: (1 - noise) * prototype + noise * global draw"""
        mixed = (1.0 - noise) * self.prototype(site_id) + noise * self.global_draw(rng)
        return FeatureDistribution(_clean(mixed, rng))

    def to_dict(self) -> dict:
        return {'config': self.config.to_dict(),
                'chaotic_site_ids': list(self.chaotic_site_ids),
                'outlier_image_ids': sorted(self.outlier_image_ids)}


def _place_sites(cfg: SynthConfig, rng: np.random.Generator) -> SiteCatalog:
    south, west, north, east = cfg.geo_bbox
    lats = rng.uniform(south, north, cfg.num_sites)
    lons = rng.uniform(west, east, cfg.num_sites)
    pageviews = rng.integers(100, 100_000, cfg.num_sites)
    return SiteCatalog(tuple(
        SiteRecord(f'site{i:04d}', f'Synthetic site {i}', GeoPoint(float(lats[i]), float(lons[i])),
                   CATEGORIES[i % len(CATEGORIES)], int(pageviews[i]))
        for i in range(cfg.num_sites)))


def generate_synthetic(cfg: SynthConfig = SynthConfig()) -> tuple[SiteCatalog, FeatureDataset, GroundTruth]:
    """
    Build a catalog, its feature dataset and the planted ground truth.\n
    Chaotic sites get only global draws. Every other site gets round(outlier_fraction * images_per_site) global
    draws at random positions, the rest are prototype mixtures with weight inlier_noise on a global draw.
    """
    rng = np.random.default_rng(cfg.seed)
    catalog = _place_sites(cfg, rng)
    site_ids = catalog.site_ids
    prototypes = np.vstack([_clean(rng.dirichlet(np.full(cfg.dimension, cfg.prototype_concentration)), rng)
                            for _ in site_ids])
    n_chaotic = int(round(cfg.chaotic_class_fraction * cfg.num_sites))
    chaotic = tuple(site_ids[i] for i in sorted(rng.choice(cfg.num_sites, size = n_chaotic, replace = False)))
    truth = GroundTruth(cfg, site_ids, prototypes, frozenset(), chaotic)

    images, outliers = [], set()
    n_outliers = int(round(cfg.outlier_fraction * cfg.images_per_site))
    chaotic_set = set(chaotic)
    for site_id in site_ids:
        if site_id in chaotic_set:
            planted = set(range(cfg.images_per_site))
        else:
            planted = set(rng.choice(cfg.images_per_site, size = n_outliers, replace = False).tolist())
        for j in range(cfg.images_per_site):
            image_id = f'{site_id}-img{j:03d}'
            if j in planted:
                feature = FeatureDistribution(truth.global_draw(rng))
                if site_id not in chaotic_set:
                    outliers.add(image_id)
            else:
                feature = truth.sample_feature(site_id, cfg.inlier_noise, rng)
            images.append(ImageFeatureRecord(image_id, site_id, cfg.source, feature))

    truth = GroundTruth(cfg, site_ids, prototypes, frozenset(outliers), chaotic)
    dataset = FeatureDataset(tuple(images), cfg.dimension)
    logging.info(f'Generated {catalog!r} and {dataset!r} with {len(outliers)} planted outliers '
                 f'and {len(chaotic)} chaotic sites (seed {cfg.seed})')
    return catalog, dataset, truth


__all__ = ['GroundTruth', 'generate_synthetic']
