"""
Experiment protocols: Monte-Carlo cross validation, the images-per-class and area-size sweeps, the category
confusion matrix, the source comparison and the mobile-context wild simulation.\n
Random streams are derived as default_rng([seed, stream, index]), so a run depends only on its own index and the
results of parallel runs are merged in run order.
"""
import dataclasses
import itertools
import logging
import math
from concurrent import futures
from dataclasses import dataclass, field
from typing import Callable, Literal, Mapping, Optional, Sequence, TypeVar

import numpy as np
from scipy.stats import spearmanr

from .catalog import sites_in_region
from .classifier import train_region_model, evaluate_top1, predict_batch, top1_indices
from .config import TrainConfig, PurifyConfig, ProtocolConfig, ContextConfig, WildConfig
from .context import contextual_classify
from .errors import (ClassTooSmall, InvalidConfig, EmptyTestSet, EmptyTrainingSet, UnknownSiteId,
                     NoCandidateInContext, OutOfCoverage)
from .geo import haversine_distance, initial_bearing, destination_point, offset_point, tile_area, region_for_point
from .purify import purify_dataset
from .structs import FeatureDataset, SiteCatalog, RegionModel, Tiling, MobileContext, GeoPoint
from .synth import GroundTruth

SPLIT_STREAM = 0
SUBSAMPLE_STREAM = 1
AREA_STREAM = 2
WILD_STREAM = 3

T = TypeVar('T')


def _rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, stream, index])


def _run_all(func: Callable[[int], T], n: int, max_workers: int = 1) -> list[T]:
    """func(0) ... func(n - 1), on a thread pool when max_workers > 1. Results keep the run order"""
    if max_workers > 1 and n > 1:
        with futures.ThreadPoolExecutor(max_workers = max_workers, thread_name_prefix = 'Run') as pool:
            return list(pool.map(func, range(n)))
    return [func(i) for i in range(n)]


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    if not values:
        return 0.0, 0.0
    mean = math.fsum(values) / len(values)
    return mean, math.sqrt(math.fsum((v - mean) ** 2 for v in values) / len(values))


# Monte-Carlo cross validation
def _test_count(n: int, test_fraction: float) -> int:
    return min(n - 1, max(1, int(round(test_fraction * n))))


def stratified_split(dataset: FeatureDataset, test_fraction: float,
                     rng: np.random.Generator) -> tuple[list[int], list[int]]:
    """
    Split every class on its own, so each class keeps at least one training and one test image.\n
    :return: sorted train indices, sorted test indices
    """
    train, test = [], []
    for site_id in dataset.classes:
        indices = dataset.by_site[site_id]
        n = len(indices)
        if n < 2:
            raise ClassTooSmall(site_id, n)
        n_test = _test_count(n, test_fraction)
        shuffled = rng.permutation(indices)
        test.extend(int(i) for i in shuffled[:n_test])
        train.extend(int(i) for i in shuffled[n_test:])
    return sorted(train), sorted(test)


@dataclass(frozen = True)
class CVRun:
    accuracy: float
    train_size: int
    test_size: int
    excluded_test_images: int = 0
    removal: dict = field(default_factory = dict)


@dataclass(frozen = True)
class CVResult:
    runs: tuple[CVRun, ...]
    purify: bool

    @property
    def accuracies(self) -> list[float]:
        return [r.accuracy for r in self.runs]

    @property
    def mean(self) -> float:
        return _mean_std(self.accuracies)[0]

    @property
    def std(self) -> float:
        return _mean_std(self.accuracies)[1]

    def mean_removal(self, key: str) -> float:
        return _mean_std([r.removal.get(key, 0.0) for r in self.runs])[0]

    def to_dict(self) -> dict:
        return {'purify': self.purify, 'mean_accuracy': self.mean, 'std_accuracy': self.std,
                'runs': [dataclasses.asdict(r) for r in self.runs]}


def _score(train: FeatureDataset, test: FeatureDataset, config: TrainConfig, region_id: str) -> float:
    if len(train) == 0:
        raise EmptyTrainingSet(f'no training images left for {region_id}')
    if len(test) == 0:
        raise EmptyTestSet(f'no test images left for {region_id}')
    if len(train.classes) == 1:
        return 1.0  # a single candidate is always right
    return evaluate_top1(train_region_model(train, config, region_id), test)


def monte_carlo_cv(dataset: FeatureDataset, protocol: ProtocolConfig = ProtocolConfig(),
                   train: TrainConfig = TrainConfig(), purify_config: PurifyConfig = PurifyConfig(),
                   purify: bool = None, seed: int = None, region_id: str = 'all') -> CVResult:
    """
    Repeated stratified train/test splits. Purification, if on, is fitted on the training split only and the test
    images of sites it removes are not scored in that run.\n
    :param purify: overrides protocol.purify
    :param seed: overrides protocol.seed
    :raise ClassTooSmall: if a class has fewer than 2 images
    """
    purify = protocol.purify if purify is None else purify
    seed = protocol.seed if seed is None else seed
    for site_id in dataset.classes:
        if len(dataset.by_site[site_id]) < 2:
            raise ClassTooSmall(site_id, len(dataset.by_site[site_id]))

    def run(i: int) -> CVRun:
        rng = _rng(seed, SPLIT_STREAM, i)
        train_idx, test_idx = stratified_split(dataset, protocol.test_fraction, rng)
        train_set, test_set = dataset.subset(train_idx), dataset.subset(test_idx)
        removal, excluded = {}, 0
        if purify:
            purified = purify_dataset(train_set, purify_config)
            removal = dict(purified.stats)
            train_set = purified.dataset
            kept = test_set.restrict(train_set.classes)
            excluded = len(test_set) - len(kept)
            test_set = kept
        config = dataclasses.replace(train, seed = int(rng.integers(2 ** 31)))
        accuracy = _score(train_set, test_set, config, region_id)
        return CVRun(accuracy, len(train_set), len(test_set), excluded, removal)

    result = CVResult(tuple(_run_all(run, protocol.k_iterations, protocol.max_workers)), purify)
    logging.info(f'MC-CV on {dataset!r} (purify {purify}, k {protocol.k_iterations}): '
                 f'{result.mean:.4f} +- {result.std:.4f}')
    return result


# images per class
def subsample_per_class(dataset: FeatureDataset, m: int, rng: np.random.Generator) -> FeatureDataset:
    """Keep at most m images per class, drawn without replacement. Smaller classes are kept whole"""
    if m < 1:
        raise InvalidConfig(f'images per class must be at least 1, got {m}')
    keep = []
    for site_id in dataset.classes:
        indices = dataset.by_site[site_id]
        if len(indices) <= m:
            keep.extend(indices)
        else:
            keep.extend(int(i) for i in rng.choice(indices, size = m, replace = False))
    return dataset.subset(sorted(keep))


def spearman(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """Spearman rank correlation, None when it is undefined (constant input or fewer than 3 points)"""
    if len(x) < 3:
        return None
    rho, _ = spearmanr(x, y)
    return None if rho is None or not np.isfinite(rho) else float(rho)


@dataclass(frozen = True)
class ImagesSweep:
    points: tuple[tuple[int, CVResult], ...]

    @property
    def trend(self) -> Optional[float]:
        return spearman([m for m, _ in self.points], [r.mean for _, r in self.points])

    def to_dict(self) -> dict:
        return {'points': [{'m': m, **r.to_dict()} for m, r in self.points], 'spearman': self.trend}


def sweep_images_per_class(dataset: FeatureDataset, m_values: Sequence[int] = None,
                           protocol: ProtocolConfig = ProtocolConfig(), train: TrainConfig = TrainConfig(),
                           purify_config: PurifyConfig = PurifyConfig()) -> ImagesSweep:
    """
    One monte_carlo_cv per m over the dataset subsampled to min(m, class size) images per class.\n
    With protocol.purify each training split is purified as in monte_carlo_cv. An m whose smallest training split
    is below PurifyConfig.min_images_after runs without purification, since it would drop every class.
    """
    m_values = tuple(protocol.m_values if m_values is None else m_values)
    for m in m_values:
        if m < 1:
            raise InvalidConfig(f'images per class must be at least 1, got {m}')
    points = []
    for m in m_values:
        subset = subsample_per_class(dataset, m, _rng(protocol.seed, SUBSAMPLE_STREAM, m))
        purify = protocol.purify
        if purify and subset.classes:
            smallest = min(len(idx) - _test_count(len(idx), protocol.test_fraction)
                           for idx in subset.by_site.values())
            if smallest < purify_config.min_images_after:
                logging.warning(f'Images sweep m={m}: training splits of {smallest} images per class are below '
                                f'{purify_config.min_images_after}, running without purification')
                purify = False
        points.append((m, monte_carlo_cv(subset, protocol, train, purify_config, purify = purify)))
    sweep = ImagesSweep(tuple(points))
    logging.info(f'Images sweep over m={list(m_values)}: spearman {sweep.trend}')
    return sweep


# area size
@dataclass(frozen = True)
class AreaPoint:
    size_m: float
    region_accuracies: dict
    region_sites: dict
    skipped: dict

    @property
    def mean_accuracy(self) -> Optional[float]:
        values = [self.region_accuracies[k] for k in sorted(self.region_accuracies)]
        return _mean_std(values)[0] if values else None

    @property
    def mean_sites(self) -> float:
        values = [self.region_sites[k] for k in sorted(self.region_sites)]
        return _mean_std(values)[0]

    def to_dict(self) -> dict:
        return {'size_m': self.size_m, 'mean_accuracy': self.mean_accuracy, 'mean_sites': self.mean_sites,
                'region_accuracies': dict(sorted(self.region_accuracies.items())),
                'region_sites': dict(sorted(self.region_sites.items())),
                'skipped': dict(sorted(self.skipped.items()))}


@dataclass(frozen = True)
class AreaSweep:
    kind: Literal['grid', 'radius']
    points: tuple[AreaPoint, ...]

    def to_dict(self) -> dict:
        return {'kind': self.kind, 'points': [p.to_dict() for p in self.points]}


def _evaluate_areas(areas: Mapping[str, Sequence[str]], dataset: FeatureDataset, protocol: ProtocolConfig,
                    train: TrainConfig, purify_config: PurifyConfig, size_m: float) -> AreaPoint:
    accuracies, sites, skipped = {}, {}, {}
    for area_id in sorted(areas):
        members = [s for s in areas[area_id] if s in dataset.by_site]
        if not members:
            skipped[area_id] = 'no sites'
            continue
        sites[area_id] = len(members)
        if len(members) == 1:
            accuracies[area_id] = 1.0
            continue
        try:
            accuracies[area_id] = monte_carlo_cv(dataset.restrict(members), protocol, train, purify_config,
                                                 region_id = area_id).mean
        except (EmptyTrainingSet, EmptyTestSet) as e:
            logging.warning(f'Skipping area {area_id} at {size_m} m: {e}')
            skipped[area_id] = type(e).__name__
            del sites[area_id]
    return AreaPoint(size_m, accuracies, sites, skipped)


def sweep_area_size(catalog: SiteCatalog, dataset: FeatureDataset, sizes: Sequence[float] = None,
                    protocol: ProtocolConfig = ProtocolConfig(), train: TrainConfig = TrainConfig(),
                    purify_config: PurifyConfig = PurifyConfig()) -> AreaSweep:
    """
    Tile the catalog extent with each region size and average the per-region MC-CV accuracy.\n
    Regions without sites are skipped and listed, a region with a single site scores 1.0.
    """
    sizes = tuple(protocol.area_sizes_m if sizes is None else sizes)
    points = []
    for size in sizes:
        tiling = tile_area(catalog.bbox(), size, protocol.overlap_m)
        areas = {r.region_id: sites_in_region(catalog, r).site_ids for r in tiling}
        point = _evaluate_areas(areas, dataset, protocol, train, purify_config, size)
        logging.info(f'Area {size} m: {len(point.region_accuracies)} regions, '
                     f'{point.mean_sites:.2f} sites each, accuracy {point.mean_accuracy}')
        points.append(point)
    return AreaSweep('grid', tuple(points))


def sweep_area_radius(catalog: SiteCatalog, dataset: FeatureDataset, radii: Sequence[float],
                      n_centers: int = 8, protocol: ProtocolConfig = ProtocolConfig(),
                      train: TrainConfig = TrainConfig(), purify_config: PurifyConfig = PurifyConfig()) -> AreaSweep:
    """Concentric circles of growing radius around seeded site locations. Each circle is one area"""
    if not radii or min(radii) <= 0:
        raise InvalidConfig('radii must be positive')
    candidates = [r for r in catalog if r.site_id in dataset.by_site]
    if not candidates:
        raise InvalidConfig('no catalog site has images')
    rng = _rng(protocol.seed, AREA_STREAM)
    picks = sorted(rng.choice(len(candidates), size = min(n_centers, len(candidates)), replace = False))
    centers = [candidates[i] for i in picks]
    points = []
    for radius in radii:
        areas = {c.site_id: [r.site_id for r in catalog if haversine_distance(c.location, r.location) <= radius]
                 for c in centers}
        points.append(_evaluate_areas(areas, dataset, protocol, train, purify_config, float(radius)))
    return AreaSweep('radius', tuple(points))


# sources
def compare_sources(datasets: Mapping[str, FeatureDataset], protocol: ProtocolConfig = ProtocolConfig(),
                    train: TrainConfig = TrainConfig(),
                    purify_config: PurifyConfig = PurifyConfig()) -> dict[str, CVResult]:
    """MC-CV of each image source on its own"""
    results = {}
    for source in sorted(datasets):
        results[source] = monte_carlo_cv(datasets[source], protocol, train, purify_config)
    return results


def split_by_source(dataset: FeatureDataset) -> dict[str, FeatureDataset]:
    return {s: dataset.with_source(s) for s in sorted({img.source for img in dataset})}


# confusion by category
@dataclass(frozen = True)
class CategoryConfusion:
    """
    rows[input][output]: probability that an image of an `input` site is given an `output` site.\n
    same_category_correct[input]: probability that the prediction is the right site when its category is right
    """
    categories: tuple[str, ...]
    rows: dict
    counts: dict
    same_category_correct: dict
    mode: str = 'top1'

    def top(self, category: str, k: int = 3) -> list[tuple[str, float]]:
        row = self.rows[category]
        return sorted(row.items(), key = lambda kv: (-kv[1], kv[0]))[:k]

    def to_dict(self) -> dict:
        return {'mode': self.mode, 'categories': list(self.categories), 'rows': self.rows, 'counts': self.counts,
                'same_category_correct': self.same_category_correct}


def confusion_by_category(model: RegionModel, test: FeatureDataset, catalog: SiteCatalog,
                          mode: Literal['top1', 'mass'] = 'top1') -> CategoryConfusion:
    """
    Category confusion of a model on a test set.\n
    :param mode: 'top1' counts the category of the top-1 site, 'mass' sums the predicted probability per category
    :raise EmptyTestSet: on an empty test set
    """
    if len(test) == 0:
        raise EmptyTestSet('cannot build a confusion matrix from an empty test set')
    lookup = {}
    for site_id in set(model.site_ids) | set(test.classes):
        record = catalog.get(site_id)
        if record is None:
            raise UnknownSiteId(site_id, 'confusion matrix')
        lookup[site_id] = record.category
    categories = tuple(sorted(set(lookup.values())))
    col = {c: i for i, c in enumerate(categories)}
    site_cols = np.array([col[lookup[s]] for s in model.site_ids], dtype = np.int64)

    probs = predict_batch(model, test.matrix)
    top1 = top1_indices(model, probs)
    sums = {c: np.zeros(len(categories)) for c in categories}
    counts = {c: 0 for c in categories}
    same, correct = {c: 0 for c in categories}, {c: 0 for c in categories}
    for row, label, pick in zip(probs, test.labels, top1):
        category = lookup[label]
        counts[category] += 1
        if mode == 'mass':
            sums[category] += np.bincount(site_cols, weights = row, minlength = len(categories))
        else:
            sums[category][site_cols[pick]] += 1.0
        if lookup[model.site_ids[pick]] == category:
            same[category] += 1
            correct[category] += model.site_ids[pick] == label

    rows, p_correct = {}, {}
    for category in categories:
        if counts[category] == 0:
            continue
        total = math.fsum(sums[category])
        rows[category] = {c: float(sums[category][i] / total) for i, c in enumerate(categories)}
        p_correct[category] = correct[category] / same[category] if same[category] else None
    return CategoryConfusion(categories, rows, {c: n for c, n in counts.items() if n}, p_correct, mode)


# wild simulation
@dataclass(frozen = True)
class WildQuery:
    site_id: str
    true_location: GeoPoint
    reported_location: GeoPoint
    bearing: float
    feature: np.ndarray
    attention: np.ndarray


@dataclass(frozen = True)
class WildCell:
    location: bool
    orientation: bool
    attention: bool
    hits: int
    n_queries: int
    no_candidate: int
    no_model: int

    @property
    def accuracy(self) -> Optional[float]:
        """Top-1 accuracy over all queries. None (n/a) when every modelled query was left without candidates"""
        classified = self.n_queries - self.no_model - self.no_candidate
        if self.n_queries == 0 or (classified == 0 and self.no_candidate > 0):
            return None
        return self.hits / self.n_queries

    def to_dict(self) -> dict:
        return {**dataclasses.asdict(self), 'accuracy': self.accuracy}


@dataclass(frozen = True)
class WildReport:
    cells: tuple[WildCell, ...]

    def cell(self, location: bool, orientation: bool, attention: bool) -> WildCell:
        return next(c for c in self.cells if (c.location, c.orientation, c.attention) == (location, orientation,
                                                                                          attention))

    def to_dict(self) -> dict:
        return {'cells': [c.to_dict() for c in self.cells]}


ABLATION_GRID = tuple(itertools.product((False, True), repeat = 3))


def draw_wild_queries(catalog: SiteCatalog, site_ids: Sequence[str], truth: GroundTruth,
                      wild: WildConfig = WildConfig()) -> list[WildQuery]:
    """
    Users stand min..max distance away from a random site and face it. Reported position and compass heading
    carry Gaussian sensor noise, the photo is a strongly degraded draw and the attention crop a milder one.
    """
    if not site_ids:
        raise InvalidConfig('the wild simulation needs at least one modelled site')
    rng = _rng(wild.seed, WILD_STREAM)
    queries = []
    for _ in range(wild.n_queries):
        site = catalog.get(site_ids[int(rng.integers(len(site_ids)))])
        approach = float(rng.uniform(0.0, 360.0))
        distance = float(rng.uniform(wild.min_distance_m, wild.max_distance_m))
        user = destination_point(site.location, approach, distance)
        facing = initial_bearing(user, site.location) if user != site.location else approach
        compass = (facing + float(rng.normal(0.0, wild.compass_sigma_deg))) % 360.0
        reported = offset_point(user, float(rng.normal(0.0, wild.gps_sigma_m)),
                                float(rng.normal(0.0, wild.gps_sigma_m)))
        feature = truth.sample_feature(site.site_id, wild.query_noise, rng).probs
        attention = truth.sample_feature(site.site_id, wild.attention_noise, rng).probs
        queries.append(WildQuery(site.site_id, user, reported, compass, feature, attention))
    return queries


def simulate_wild(catalog: SiteCatalog, models: Mapping[str, RegionModel], tiling: Tiling, truth: GroundTruth,
                  wild: WildConfig = WildConfig(), context: ContextConfig = ContextConfig()) -> WildReport:
    """
    Run every query through contextual_classify for each of the 8 filter combinations.\n
    The model is the one of the region resolved from the reported position. Queries without a model and queries
    left without candidates count as misses and are reported separately.
    """
    if not models:
        raise InvalidConfig('the wild simulation needs at least one region model')
    modelled = sorted(set(itertools.chain.from_iterable(m.site_ids for m in models.values())) & set(catalog.index))
    queries = draw_wild_queries(catalog, modelled, truth, wild)

    chosen = []
    for q in queries:
        try:
            region = region_for_point(tiling, q.reported_location)
        except OutOfCoverage:
            chosen.append(None)
            continue
        chosen.append(models.get(region.region_id))

    cells = []
    for location, orientation, attention in ABLATION_GRID:
        cfg = dataclasses.replace(context, enable_location = location, enable_orientation = orientation,
                                  enable_attention = attention)
        hits = no_candidate = no_model = 0
        for q, model in zip(queries, chosen):
            if model is None:
                no_model += 1
                continue
            ctx = MobileContext(q.reported_location, q.bearing, q.attention)
            try:
                prediction = contextual_classify(model, q.feature, ctx, catalog, cfg)
            except NoCandidateInContext:
                no_candidate += 1
                continue
            hits += prediction.top1 == q.site_id
        cells.append(WildCell(location, orientation, attention, hits, len(queries), no_candidate, no_model))
        logging.info(f'Wild cell location={location} orientation={orientation} attention={attention}: '
                     f'{hits}/{len(queries)} hits, {no_candidate} without candidates, {no_model} without model')
    return WildReport(tuple(cells))


__all__ = ['stratified_split', 'CVRun', 'CVResult', 'monte_carlo_cv', 'subsample_per_class', 'spearman',
           'ImagesSweep', 'sweep_images_per_class', 'AreaPoint', 'AreaSweep', 'sweep_area_size', 'sweep_area_radius',
           'compare_sources', 'split_by_source', 'CategoryConfusion', 'confusion_by_category', 'WildQuery',
           'WildCell', 'WildReport', 'ABLATION_GRID', 'draw_wild_queries', 'simulate_wild']
