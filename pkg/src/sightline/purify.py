"""
Unsupervised purification of crowd-sourced image classes.\n
Stage 1 drops classes whose images disagree (multivariate Jensen-Shannon divergence with uniform weights),
stage 2 drops images far from their class centroid (forward Kullback-Leibler divergence).
All quantities are in nats.
"""
import logging
from concurrent import futures
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.special import entr, rel_entr

from .config import PurifyConfig
from .errors import EmptyClass, UnsupportedAtom, DimensionMismatch
from .structs import FeatureDistribution, FeatureDataset, FeatureLike, as_probs
from .utility import PathLike, fsum, write_csv

FeatureSet = Union[Sequence[FeatureLike], np.ndarray]


def _as_matrix(features: FeatureSet) -> np.ndarray:
    if isinstance(features, np.ndarray):
        mat = np.atleast_2d(np.asarray(features, dtype = np.float64))
    else:
        rows = [as_probs(f) for f in features]
        if not rows:
            raise EmptyClass('a class needs at least one feature')
        dims = {r.size for r in rows}
        if len(dims) > 1:
            raise DimensionMismatch(rows[0].size, max(dims - {rows[0].size}), 'class features')
        mat = np.vstack(rows)
    if mat.shape[0] == 0:
        raise EmptyClass('a class needs at least one feature')
    return mat


def shannon_entropy(p: FeatureLike) -> float:
    """H(p) = -sum p ln p with 0 ln 0 = 0"""
    return fsum(entr(as_probs(p)))


def centroid(features: FeatureSet) -> FeatureDistribution:
    """Elementwise mean of the class features"""
    return FeatureDistribution(_as_matrix(features).mean(axis = 0))


def class_jsd(features: FeatureSet) -> float:
    """Entropy of the uniform mixture minus the mean entropy of the members"""
    mat = _as_matrix(features)
    mixture = mat.mean(axis = 0)
    mean_entropy = fsum([fsum(entr(row)) for row in mat]) / mat.shape[0]
    return max(0.0, fsum(entr(mixture)) - mean_entropy)


def forward_kl(p: FeatureLike, m: FeatureLike) -> float:
    """
    D_KL(p || m) = sum p ln(p / m).\n
    :raise UnsupportedAtom: if m is zero on an atom where p is positive
    """
    p, m = as_probs(p), as_probs(m)
    if p.shape != m.shape:
        raise DimensionMismatch(p.size, m.size, 'forward_kl')
    if np.any((p > 0) & (m <= 0)):
        raise UnsupportedAtom('reference distribution is zero on an atom of p')
    return max(0.0, fsum(rel_entr(p, m)))


@dataclass(frozen = True)
class CohesionReport:
    site_id: str
    n_images: int
    jsd: float
    kept: bool


@dataclass(frozen = True)
class DenoiseReport:
    image_id: str
    site_id: str
    kl: float
    kept: bool


@dataclass(frozen = True, eq = False)
class PurifiedDataset:
    dataset: FeatureDataset
    cohesion: tuple[CohesionReport, ...] = ()
    denoise: tuple[DenoiseReport, ...] = ()
    stats: dict = field(default_factory = dict)

    @property
    def removed_sites(self) -> list[str]:
        return [r.site_id for r in self.cohesion if not r.kept]

    def __repr__(self) -> str:
        return (f'PurifiedDataset[{len(self.dataset)} images, '
                f'classes removed {self.stats.get("classes_removed_fraction", 0):.1%}, '
                f'images removed {self.stats.get("images_removed_fraction", 0):.1%}]')


def _score_class(dataset: FeatureDataset, site_id: str, indices: list[int]) -> tuple[float, list[float]]:
    mat = dataset.matrix[indices]
    center = mat.mean(axis = 0)
    return class_jsd(mat), [forward_kl(row, center) for row in mat]


def purify_dataset(dataset: FeatureDataset, config: PurifyConfig = PurifyConfig(),
                   max_workers: int = 1) -> PurifiedDataset:
    """
    Two-stage purification. Reports cover every class and every image, dropped ones included.\n
    The centroid of a class is computed once, before any of its images is removed.\n
    :param max_workers: size of the thread pool scoring classes (1 scores inline). Results do not depend on it
    """
    groups = dataset.by_site
    sites = sorted(groups)
    if max_workers > 1:
        with futures.ThreadPoolExecutor(max_workers = max_workers, thread_name_prefix = 'Purify') as pool:
            scores = list(pool.map(lambda s: _score_class(dataset, s, groups[s]), sites))
    else:
        scores = [_score_class(dataset, s, groups[s]) for s in sites]

    cohesion, denoise, keep = [], [], set()
    for site_id, (jsd, kls) in zip(sites, scores):
        indices = groups[site_id]
        cohesive = jsd <= config.jsd_threshold
        survivors = [i for i, kl in zip(indices, kls) if cohesive and kl <= config.kld_threshold]
        kept_class = cohesive and len(survivors) >= config.min_images_after and len(survivors) > 0
        if not cohesive:
            logging.warning(f'Dropping chaotic class {site_id}: JSD {jsd:.3f} > {config.jsd_threshold}')
        elif not kept_class:
            logging.warning(f'Dropping class {site_id}: {len(survivors)} images left after de-noising')
        cohesion.append(CohesionReport(site_id, len(indices), jsd, kept_class))
        survivors = set(survivors) if kept_class else set()
        keep |= survivors
        for i, kl in zip(indices, kls):
            denoise.append(DenoiseReport(dataset.images[i].image_id, site_id, kl, i in survivors))

    purified = dataset.subset(sorted(keep))
    n_classes, n_images = len(sites), len(dataset)
    removed_classes = sum(1 for r in cohesion if not r.kept)
    stats = {
        'classes_total': n_classes,
        'classes_removed': removed_classes,
        'classes_removed_fraction': removed_classes / n_classes if n_classes else 0.0,
        'images_total': n_images,
        'images_removed': n_images - len(purified),
        'images_removed_fraction': (n_images - len(purified)) / n_images if n_images else 0.0,
    }
    result = PurifiedDataset(purified, tuple(cohesion), tuple(denoise), stats)
    logging.info(f'Purified {dataset!r} -> {result!r}')
    return result


def purify_to_fixpoint(dataset: FeatureDataset, config: PurifyConfig = PurifyConfig(),
                       max_rounds: int = 100) -> tuple[PurifiedDataset, int]:
    """
    Re-run purification on its own output until no image is removed.\n
    Each round either removes an image or stops, so this terminates. Returns the last result and the round count
    """
    result = purify_dataset(dataset, config)
    rounds = 1
    while rounds < max_rounds and result.stats['images_removed'] > 0 and len(result.dataset) > 0:
        result = purify_dataset(result.dataset, config)
        rounds += 1
    return result, rounds


def write_cohesion_csv(reports: Sequence[CohesionReport], path: PathLike):
    write_csv(path, ('site_id', 'n_images', 'jsd', 'kept'),
              ((r.site_id, r.n_images, r.jsd, r.kept) for r in reports))


def write_denoise_csv(reports: Sequence[DenoiseReport], path: PathLike):
    write_csv(path, ('image_id', 'site_id', 'kl', 'kept'),
              ((r.image_id, r.site_id, r.kl, r.kept) for r in reports))


__all__ = ['shannon_entropy', 'centroid', 'class_jsd', 'forward_kl', 'CohesionReport', 'DenoiseReport',
           'PurifiedDataset', 'purify_dataset', 'purify_to_fixpoint', 'write_cohesion_csv', 'write_denoise_csv']
