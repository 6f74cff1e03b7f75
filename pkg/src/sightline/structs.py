import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Iterator, Sequence, Union

import numpy as np

from .errors import CoordinateOutOfRange, DuplicateSiteId, DimensionMismatch, NotNormalized, GeoError

EARTH_RADIUS_M = 6_371_000.0
METERS_PER_DEGREE = EARTH_RADIUS_M * math.pi / 180
NORMALIZATION_TOLERANCE = 1e-6
SOURCES = ('flickr', 'google', 'synthetic', 'user')


@dataclass(frozen = True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0 and -180.0 <= self.lon <= 180.0):
            raise CoordinateOutOfRange(self.lat, self.lon)

    def __repr__(self) -> str:
        return f'GeoPoint[{self.lat:.6f}, {self.lon:.6f}]'


@dataclass(frozen = True)
class BoundingBox:
    """Closed lat/lon rectangle"""
    south: float
    west: float
    north: float
    east: float

    def __post_init__(self):
        if self.south > self.north or self.west > self.east:
            raise GeoError(f'{self} is inverted')

    def contains(self, p: GeoPoint, eps: float = 1e-12) -> bool:
        # eps absorbs float rounding of edges derived from centers, ~0.1 micrometer
        return (self.south - eps <= p.lat <= self.north + eps) and (self.west - eps <= p.lon <= self.east + eps)

    @property
    def mean_lat(self) -> float:
        return (self.south + self.north) / 2

    @property
    def center(self) -> GeoPoint:
        return GeoPoint(self.mean_lat, (self.west + self.east) / 2)

    @staticmethod
    def around(points: Sequence[GeoPoint]) -> 'BoundingBox':
        """Smallest box containing every point"""
        if not points:
            raise GeoError('cannot bound an empty point set')
        lats = [p.lat for p in points]
        lons = [p.lon for p in points]
        return BoundingBox(min(lats), min(lons), max(lats), max(lons))

    def to_dict(self) -> dict:
        return {'south': self.south, 'west': self.west, 'north': self.north, 'east': self.east}


@dataclass(frozen = True)
class SiteRecord:
    site_id: str
    title: str
    location: GeoPoint
    category: str
    pageviews: int = 0

    def __post_init__(self):
        if not self.site_id:
            raise ValueError('site_id must not be empty')
        if not self.category:
            raise ValueError(f'site "{self.site_id}" has an empty category')
        if self.pageviews < 0:
            raise ValueError(f'site "{self.site_id}" has negative pageviews')


@dataclass(frozen = True)
class SiteCatalog:
    records: tuple[SiteRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'records', tuple(self.records))
        seen = set()
        for record in self.records:
            if record.site_id in seen:
                raise DuplicateSiteId(record.site_id)
            seen.add(record.site_id)

    @cached_property
    def index(self) -> dict[str, SiteRecord]:
        return {r.site_id: r for r in self.records}

    @property
    def site_ids(self) -> tuple[str, ...]:
        return tuple(r.site_id for r in self.records)

    def get(self, site_id: str) -> Optional[SiteRecord]:
        return self.index.get(site_id)

    def bbox(self) -> BoundingBox:
        return BoundingBox.around([r.location for r in self.records])

    def subset(self, site_ids) -> 'SiteCatalog':
        """Keep records whose id is in site_ids, catalog order preserved"""
        wanted = set(site_ids)
        return SiteCatalog(tuple(r for r in self.records if r.site_id in wanted))

    def __contains__(self, site_id: str) -> bool:
        return site_id in self.index

    def __iter__(self) -> Iterator[SiteRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __repr__(self) -> str:
        return f'SiteCatalog[{len(self)} sites]'


@dataclass(frozen = True, eq = False)
class FeatureDistribution:
    """A categorical probability vector, the softmax output of a fixed backbone for one image"""
    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype = np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise DimensionMismatch(-1, probs.size, 'feature must be a non-empty vector')
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise NotNormalized('feature has negative or non-finite entries')
        total = math.fsum(probs)
        if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
            raise NotNormalized(f'feature sums to {total!r}')
        probs.setflags(write = False)
        object.__setattr__(self, 'probs', probs)

    @property
    def dimension(self) -> int:
        return self.probs.size

    def __len__(self) -> int:
        return self.probs.size

    def __eq__(self, other) -> bool:
        return isinstance(other, FeatureDistribution) and np.array_equal(self.probs, other.probs)

    def __repr__(self) -> str:
        return f'FeatureDistribution[D={self.dimension}]'


FeatureLike = Union[FeatureDistribution, np.ndarray, Sequence[float]]


def as_probs(feature: FeatureLike) -> np.ndarray:
    """Return the probability vector behind a feature-like value"""
    if isinstance(feature, FeatureDistribution):
        return feature.probs
    return np.asarray(feature, dtype = np.float64)


@dataclass(frozen = True)
class ImageFeatureRecord:
    image_id: str
    site_id: str
    source: str
    feature: FeatureDistribution

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f'unknown image source "{self.source}"')


@dataclass(frozen = True, eq = False)
class FeatureDataset:
    images: tuple[ImageFeatureRecord, ...] = ()
    dimension: int = 1000

    def __post_init__(self):
        object.__setattr__(self, 'images', tuple(self.images))
        for image in self.images:
            if image.feature.dimension != self.dimension:
                raise DimensionMismatch(self.dimension, image.feature.dimension, image.image_id)

    @cached_property
    def matrix(self) -> np.ndarray:
        """(n_images, D) matrix of features"""
        if not self.images:
            return np.zeros((0, self.dimension))
        mat = np.vstack([img.feature.probs for img in self.images])
        mat.setflags(write = False)
        return mat

    @cached_property
    def labels(self) -> tuple[str, ...]:
        return tuple(img.site_id for img in self.images)

    @cached_property
    def classes(self) -> tuple[str, ...]:
        """Sorted distinct site ids"""
        return tuple(sorted(set(self.labels)))

    @cached_property
    def by_site(self) -> dict[str, list[int]]:
        """Image indices per site, in dataset order"""
        groups: dict[str, list[int]] = {}
        for i, site_id in enumerate(self.labels):
            groups.setdefault(site_id, []).append(i)
        return groups

    def subset(self, indices) -> 'FeatureDataset':
        return FeatureDataset(tuple(self.images[i] for i in indices), self.dimension)

    def restrict(self, site_ids) -> 'FeatureDataset':
        """Keep images whose site is in site_ids"""
        wanted = set(site_ids)
        return FeatureDataset(tuple(img for img in self.images if img.site_id in wanted), self.dimension)

    def with_source(self, source: str) -> 'FeatureDataset':
        return FeatureDataset(tuple(img for img in self.images if img.source == source), self.dimension)

    def __iter__(self) -> Iterator[ImageFeatureRecord]:
        return iter(self.images)

    def __len__(self) -> int:
        return len(self.images)

    def __repr__(self) -> str:
        return f'FeatureDataset[{len(self)} images, {len(self.classes)} sites, D={self.dimension}]'


@dataclass(frozen = True)
class Region:
    """Square tile of half-width half_extent_m. Its bbox uses the equirectangular scale at ref_lat"""
    region_id: str
    center: GeoPoint
    half_extent_m: float
    ref_lat: Optional[float] = None

    def __post_init__(self):
        if not self.half_extent_m > 0:
            raise GeoError(f'region {self.region_id} has non-positive half extent')
        if self.ref_lat is None:
            object.__setattr__(self, 'ref_lat', self.center.lat)

    @cached_property
    def bbox(self) -> BoundingBox:
        dlat = self.half_extent_m / METERS_PER_DEGREE
        dlon = self.half_extent_m / (METERS_PER_DEGREE * math.cos(math.radians(self.ref_lat)))
        return BoundingBox(max(-90.0, self.center.lat - dlat), max(-180.0, self.center.lon - dlon),
                           min(90.0, self.center.lat + dlat), min(180.0, self.center.lon + dlon))

    def contains(self, p: GeoPoint) -> bool:
        return self.bbox.contains(p)

    def to_dict(self) -> dict:
        return {'region_id': self.region_id, 'center_lat': self.center.lat, 'center_lon': self.center.lon,
                'half_extent_m': self.half_extent_m}


@dataclass(frozen = True)
class Tiling:
    regions: tuple[Region, ...]
    overlap_m: float = 200.0

    def __post_init__(self):
        object.__setattr__(self, 'regions', tuple(self.regions))

    @cached_property
    def index(self) -> dict[str, Region]:
        return {r.region_id: r for r in self.regions}

    def get(self, region_id: str) -> Optional[Region]:
        return self.index.get(region_id)

    def __contains__(self, region_id: str) -> bool:
        return region_id in self.index

    def __iter__(self) -> Iterator[Region]:
        return iter(self.regions)

    def __len__(self) -> int:
        return len(self.regions)

    def to_dict(self) -> dict:
        ref_lat = self.regions[0].ref_lat if self.regions else None
        return {'overlap_m': self.overlap_m, 'ref_lat': ref_lat, 'regions': [r.to_dict() for r in self.regions]}

    @staticmethod
    def from_dict(data: dict) -> 'Tiling':
        ref_lat = data.get('ref_lat')
        if ref_lat is None and data['regions']:
            # tile_area centers its rows on the reference latitude
            lats = [r['center_lat'] for r in data['regions']]
            ref_lat = (min(lats) + max(lats)) / 2
        regions = tuple(Region(r['region_id'], GeoPoint(r['center_lat'], r['center_lon']),
                               float(r['half_extent_m']), ref_lat) for r in data['regions'])
        return Tiling(regions, float(data.get('overlap_m', 0.0)))


def argmax_lexicographic(values: np.ndarray, ids: Sequence[str]) -> int:
    """Index of the largest value; ties go to the lexicographically smallest id"""
    best = np.max(values)
    return min(np.flatnonzero(values == best), key = lambda i: ids[i])


@dataclass(frozen = True, eq = False)
class Prediction:
    site_ids: tuple[str, ...]
    distribution: np.ndarray
    top1: str = ''

    def __post_init__(self):
        dist = np.array(self.distribution, dtype = np.float64)
        if dist.shape != (len(self.site_ids),):
            raise DimensionMismatch(len(self.site_ids), dist.size, 'prediction')
        dist.setflags(write = False)
        object.__setattr__(self, 'site_ids', tuple(self.site_ids))
        object.__setattr__(self, 'distribution', dist)
        object.__setattr__(self, 'top1', self.site_ids[argmax_lexicographic(dist, self.site_ids)])

    def prob(self, site_id: str) -> float:
        return float(self.distribution[self.site_ids.index(site_id)])

    def as_dict(self) -> dict[str, float]:
        return {s: float(p) for s, p in zip(self.site_ids, self.distribution)}

    def ranked(self) -> list[str]:
        """Site ids by decreasing probability, ties by id"""
        return sorted(self.site_ids, key = lambda s: (-self.distribution[self.site_ids.index(s)], s))

    def __repr__(self) -> str:
        return f'Prediction[{self.top1} of {len(self.site_ids)}]'


@dataclass(frozen = True, eq = False)
class RegionModel:
    """Softmax-regression head over the sites of one region"""
    region_id: str
    site_ids: tuple[str, ...]
    weights: np.ndarray
    biases: np.ndarray
    version: int = 1
    training_meta: dict = field(default_factory = dict)

    def __post_init__(self):
        weights = np.array(self.weights, dtype = np.float32)
        biases = np.array(self.biases, dtype = np.float32)
        object.__setattr__(self, 'site_ids', tuple(self.site_ids))
        if weights.ndim != 2 or weights.shape[0] != len(self.site_ids) or biases.shape != (len(self.site_ids),):
            raise DimensionMismatch(len(self.site_ids), weights.shape[0] if weights.ndim == 2 else -1,
                                    f'model {self.region_id}')
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(biases))):
            raise ValueError(f'model {self.region_id} has non-finite parameters')
        weights.setflags(write = False)
        biases.setflags(write = False)
        object.__setattr__(self, 'weights', weights)
        object.__setattr__(self, 'biases', biases)

    @property
    def dimension(self) -> int:
        return self.weights.shape[1]

    @property
    def num_sites(self) -> int:
        return len(self.site_ids)

    def __repr__(self) -> str:
        return f'RegionModel[{self.region_id} v{self.version}, {self.num_sites} sites, D={self.dimension}]'


@dataclass(frozen = True)
class MobileContext:
    location: GeoPoint
    bearing: float
    attention_feature: Optional[FeatureDistribution] = None

    def __post_init__(self):
        object.__setattr__(self, 'bearing', float(self.bearing) % 360.0)


@dataclass(frozen = True)
class ContextualPrediction:
    masked_distribution: Prediction
    candidates: frozenset
    applied_filters: dict

    @property
    def top1(self) -> str:
        return self.masked_distribution.top1

    def to_dict(self) -> dict:
        return {'distribution': self.masked_distribution.as_dict(),
                'top1': self.top1,
                'candidates': sorted(self.candidates),
                'applied_filters': dict(self.applied_filters)}


@dataclass(frozen = True)
class ModelManifest:
    region_id: str
    version: int
    content_hash: str
    byte_size: int

    def to_dict(self) -> dict:
        return {'region_id': self.region_id, 'version': self.version,
                'content_hash': self.content_hash, 'byte_size': self.byte_size}

    @staticmethod
    def from_dict(data: dict) -> 'ModelManifest':
        return ModelManifest(str(data['region_id']), int(data['version']), str(data['content_hash']),
                             int(data['byte_size']))


__all__ = ['EARTH_RADIUS_M', 'METERS_PER_DEGREE', 'NORMALIZATION_TOLERANCE', 'SOURCES', 'GeoPoint', 'BoundingBox',
           'SiteRecord', 'SiteCatalog', 'FeatureDistribution', 'FeatureLike', 'as_probs', 'ImageFeatureRecord',
           'FeatureDataset', 'Region', 'Tiling', 'argmax_lexicographic', 'Prediction', 'RegionModel',
           'MobileContext', 'ContextualPrediction', 'ModelManifest']
