import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Optional

from .errors import InvalidConfig
from .utility import PathLike, parse_address

CATEGORIES = ('building', 'statue', 'church', 'museum', 'hotel', 'skyscraper')

# noise settings of the named generator presets. "curated" stands for a low-noise image source, "mixed" for a
# high-noise one
SYNTH_PRESETS = {
    'standard': {},
    'curated': {'inlier_noise': 0.05, 'outlier_fraction': 0.05, 'chaotic_class_fraction': 0.02},
    'mixed': {'inlier_noise': 0.35, 'outlier_fraction': 0.35, 'chaotic_class_fraction': 0.1},
    'noisy': {'inlier_noise': 0.6, 'outlier_fraction': 0.1, 'chaotic_class_fraction': 0.0},
}


class _Config:
    """Mixin giving config dataclasses dict loading with strict key checking"""

    @classmethod
    def from_dict(cls, data: Optional[dict]):
        data = dict(data or {})
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise InvalidConfig(f'unknown {cls.__name__} keys: {sorted(unknown)}')
        for f in dataclasses.fields(cls):
            if f.name in data and isinstance(data[f.name], list):
                data[f.name] = tuple(data[f.name])
        try:
            return cls(**data)
        except TypeError as e:
            raise InvalidConfig(str(e)) from e

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes):
        """Return a copy with changes applied. None values are ignored so CLI defaults don't override files"""
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})


@dataclass(frozen = True)
class PurifyConfig(_Config):
    """
    :param jsd_threshold: classes with multivariate JSD above it are dropped (nats)
    :param kld_threshold: images with forward KL to their class centroid above it are dropped (nats)
    :param min_images_after: classes left with fewer images are dropped
    """
    jsd_threshold: float = 2.0
    kld_threshold: float = 2.0
    min_images_after: int = 5

    def __post_init__(self):
        if not (self.jsd_threshold > 0 and self.kld_threshold > 0):
            raise InvalidConfig('purification thresholds must be positive')
        if self.min_images_after < 0:
            raise InvalidConfig('min_images_after must not be negative')


@dataclass(frozen = True)
class TrainConfig(_Config):
    """
    :param lr: SGD learning rate
    :param epochs: passes over the training set. 100 is a calibration choice, not a published value
    :param batch_size: mini-batch size. 32 is a calibration choice as well
    :param seed: seed of the PCG64 generator that shuffles each epoch
    :param shuffle: shuffle the training set before every epoch
    :param standardize: train on per-dimension standardized features, folded back into the stored parameters
    """
    lr: float = 0.001
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    shuffle: bool = True
    standardize: bool = True

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidConfig('lr must be positive')
        if self.epochs < 1:
            raise InvalidConfig('epochs must be at least 1')
        if self.batch_size < 1:
            raise InvalidConfig('batch_size must be at least 1')


@dataclass(frozen = True)
class ContextConfig(_Config):
    radius_m: float = 200.0
    half_angle_deg: float = 60.0
    enable_location: bool = True
    enable_orientation: bool = True
    enable_attention: bool = True

    def __post_init__(self):
        if not self.radius_m > 0:
            raise InvalidConfig('radius_m must be positive')
        if not 0 < self.half_angle_deg <= 180:
            raise InvalidConfig('half_angle_deg must be in (0, 180]')


@dataclass(frozen = True)
class SynthConfig(_Config):
    """
    :param prototype_concentration: symmetric Dirichlet concentration of site prototypes
    :param global_concentration: concentration of global draws (noise components, planted outliers)
    :param inlier_noise: mixing weight of the noise draw in inlier images
    :param outlier_fraction: fraction of each regular site's images replaced by global draws
    :param chaotic_class_fraction: fraction of sites whose images are all global draws
    :param geo_bbox: (south, west, north, east) where sites are placed
    """
    num_sites: int = 100
    images_per_site: int = 80
    dimension: int = 100
    prototype_concentration: float = 0.3
    global_concentration: float = 0.01
    inlier_noise: float = 0.1
    outlier_fraction: float = 0.2
    chaotic_class_fraction: float = 0.1
    geo_bbox: tuple = (40.7400, -74.0000, 40.7580, -73.9763)
    source: str = 'synthetic'
    seed: int = 0

    def __post_init__(self):
        if self.num_sites < 1 or self.images_per_site < 1 or self.dimension < 2:
            raise InvalidConfig('num_sites and images_per_site must be >= 1, dimension >= 2')
        for name in ('inlier_noise', 'outlier_fraction', 'chaotic_class_fraction'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidConfig(f'{name} must be in [0, 1]')
        if not (self.prototype_concentration > 0 and self.global_concentration > 0):
            raise InvalidConfig('concentrations must be positive')
        if len(self.geo_bbox) != 4:
            raise InvalidConfig('geo_bbox must be (south, west, north, east)')
        object.__setattr__(self, 'geo_bbox', tuple(float(v) for v in self.geo_bbox))

    @classmethod
    def preset(cls, name: str, **overrides) -> 'SynthConfig':
        """Build a config from one of SYNTH_PRESETS. Keyword overrides win over the preset"""
        if name not in SYNTH_PRESETS:
            raise InvalidConfig(f'unknown synthetic preset "{name}"')
        return cls(**{**SYNTH_PRESETS[name], **overrides})

    def with_preset(self, name: str, **overrides) -> 'SynthConfig':
        """Apply the noise settings of a preset to this config"""
        if name not in SYNTH_PRESETS:
            raise InvalidConfig(f'unknown synthetic preset "{name}"')
        return dataclasses.replace(self, **{**SYNTH_PRESETS[name], **overrides})


@dataclass(frozen = True)
class ProtocolConfig(_Config):
    """
    :param k_iterations: Monte-Carlo cross validation iterations
    :param test_fraction: share of each class held out per iteration
    :param purify: purify training splits
    :param region_size_m: region size used when a protocol tiles an area
    :param overlap_m: region overlap of the area sweeps (0 keeps the evaluated areas disjoint)
    :param max_workers: thread pool size for independent runs (1 runs inline)
    """
    k_iterations: int = 10
    test_fraction: float = 0.2
    purify: bool = True
    region_size_m: float = 1000.0
    overlap_m: float = 0.0
    area_sizes_m: tuple = (250.0, 354.0, 500.0, 707.0, 1000.0)
    m_values: tuple = (5, 10, 20, 40, 70, 80)
    max_workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.k_iterations < 1:
            raise InvalidConfig('k_iterations must be at least 1')
        if not 0.0 < self.test_fraction < 1.0:
            raise InvalidConfig('test_fraction must be in (0, 1)')
        if self.max_workers < 1:
            raise InvalidConfig('max_workers must be at least 1')


@dataclass(frozen = True)
class WildConfig(_Config):
    """
    :param gps_sigma_m: std of the additive GPS noise per axis
    :param compass_sigma_deg: std of the additive compass noise
    :param query_noise: mixing weight of the noise draw in query images (degraded photos)
    :param attention_noise: mixing weight for the user-focused attention images
    :param min_distance_m: users stand at least this far from the photographed site
    :param max_distance_m: and at most this far
    """
    n_queries: int = 400
    gps_sigma_m: float = 10.0
    compass_sigma_deg: float = 10.0
    query_noise: float = 0.7
    attention_noise: float = 0.35
    min_distance_m: float = 50.0
    max_distance_m: float = 150.0
    seed: int = 0

    def __post_init__(self):
        if self.n_queries < 1:
            raise InvalidConfig('n_queries must be at least 1')
        if self.gps_sigma_m < 0 or self.compass_sigma_deg < 0:
            raise InvalidConfig('sensor noise must not be negative')
        if not (0.0 <= self.attention_noise <= 1.0 and 0.0 <= self.query_noise <= 1.0):
            raise InvalidConfig('noise weights must be in [0, 1]')
        if not 0 <= self.min_distance_m <= self.max_distance_m:
            raise InvalidConfig('distance range is inverted')


@dataclass(frozen = True)
class RegistryConfig(_Config):
    listen: str = '127.0.0.1:7070'
    data_dir: Optional[str] = None
    tiling_path: Optional[str] = None
    retention: int = 3
    max_worker: Optional[int] = None
    keep_alive_timeout: int = 75

    def __post_init__(self):
        if self.retention < 1:
            raise InvalidConfig('retention must keep at least one version')

    @property
    def address(self) -> tuple[str, int]:
        return parse_address(self.listen)

    @classmethod
    def from_env(cls, base: 'RegistryConfig' = None) -> 'RegistryConfig':
        base = base or cls()
        env = {
            'listen': os.environ.get('SIGHTLINE_LISTEN'),
            'data_dir': os.environ.get('SIGHTLINE_DATA_DIR'),
            'tiling_path': os.environ.get('SIGHTLINE_TILING'),
            'retention': int(os.environ['SIGHTLINE_RETENTION']) if os.environ.get('SIGHTLINE_RETENTION') else None,
        }
        return base.replace(**env)


@dataclass(frozen = True)
class Settings:
    """All sections of a JSON config file"""
    purify: PurifyConfig = field(default_factory = PurifyConfig)
    train: TrainConfig = field(default_factory = TrainConfig)
    context: ContextConfig = field(default_factory = ContextConfig)
    synth: SynthConfig = field(default_factory = SynthConfig)
    wild: WildConfig = field(default_factory = WildConfig)
    protocol: ProtocolConfig = field(default_factory = ProtocolConfig)
    registry: RegistryConfig = field(default_factory = RegistryConfig)

    @staticmethod
    def from_dict(data: dict) -> 'Settings':
        sections = {f.name: f.type for f in dataclasses.fields(Settings)}
        unknown = set(data) - set(sections)
        if unknown:
            raise InvalidConfig(f'unknown config sections: {sorted(unknown)}')
        kwargs = {}
        for f in dataclasses.fields(Settings):
            if f.name in data:
                kwargs[f.name] = f.default_factory().from_dict(data[f.name])
        return Settings(**kwargs)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path: Optional[PathLike] = None) -> Settings:
    """Load settings from a JSON file. No path gives the defaults"""
    if path is None:
        return Settings()
    try:
        with open(path, encoding = 'utf-8') as fp:
            data = json.load(fp)
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidConfig(f'cannot read config {path}: {e}') from e
    if not isinstance(data, dict):
        raise InvalidConfig(f'config {path} must be a JSON object')
    logging.info(f'Loaded config sections {sorted(data)} from {path}')
    return Settings.from_dict(data)


__all__ = ['CATEGORIES', 'SYNTH_PRESETS', 'PurifyConfig', 'TrainConfig', 'ContextConfig', 'SynthConfig',
           'ProtocolConfig', 'WildConfig', 'RegistryConfig', 'Settings', 'load_config']
