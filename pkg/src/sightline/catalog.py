"""Ingestion boundary: site catalogs and per-image feature datasets"""
import csv
import io
import json
import logging
import struct
from typing import IO, Literal, Optional, Union

import numpy as np

from .errors import (MalformedRow, CoordinateOutOfRange, DuplicateSiteId, DimensionMismatch, NotNormalized,
                     UnknownSiteId, CatalogError)
from .structs import (GeoPoint, SiteRecord, SiteCatalog, FeatureDistribution, ImageFeatureRecord, FeatureDataset,
                      Region, SOURCES)

CATALOG_COLUMNS = ('site_id', 'title', 'lat', 'lon', 'category', 'pageviews')
FEATURE_MAGIC = b'GFD1'
_FEATURE_HEADER = struct.Struct('<4sIQ')
_ID_LENGTH = struct.Struct('<H')

CatalogFormat = Literal['csv', 'jsonl']
FeatureFormat = Literal['jsonl', 'binary']


def _integral(value) -> int:
    """int() that refuses to truncate, so 3.7 or true are not read as counts"""
    if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
        raise ValueError(f'{value!r} is not an integer')
    return int(value)


def _build_record(line: int, site_id, title, lat, lon, category, pageviews) -> SiteRecord:
    try:
        lat, lon, pageviews = float(lat), float(lon), _integral(pageviews)
    except (TypeError, ValueError) as e:
        raise MalformedRow(line, f'bad numeric field ({e})') from None
    try:
        location = GeoPoint(lat, lon)
    except CoordinateOutOfRange:
        raise CoordinateOutOfRange(lat, lon, line) from None
    try:
        return SiteRecord(str(site_id), str(title), location, str(category), pageviews)
    except ValueError as e:
        raise MalformedRow(line, str(e)) from None


def _check_unique(records: list[SiteRecord], record: SiteRecord, seen: set, line: int):
    if record.site_id in seen:
        raise DuplicateSiteId(record.site_id, line)
    seen.add(record.site_id)
    records.append(record)


def parse_catalog(stream: IO[str], format: CatalogFormat = 'csv') -> SiteCatalog:
    """
    Parse a site catalog. CSV needs the header row site_id,title,lat,lon,category,pageviews in this order.\n
    :raise MalformedRow: with the 1-based line number of the offending row
    """
    records: list[SiteRecord] = []
    seen: set[str] = set()
    if format == 'csv':
        reader = csv.reader(stream)
        header = next(reader, None)
        if header is None:
            return SiteCatalog()
        if tuple(h.strip() for h in header) != CATALOG_COLUMNS:
            raise MalformedRow(1, f'header must be {",".join(CATALOG_COLUMNS)}')
        for row in reader:
            if not row:
                continue
            if len(row) != len(CATALOG_COLUMNS):
                raise MalformedRow(reader.line_num, f'expected {len(CATALOG_COLUMNS)} fields, got {len(row)}')
            _check_unique(records, _build_record(reader.line_num, *row), seen, reader.line_num)
    elif format == 'jsonl':
        for line, text in enumerate(stream, start = 1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
                fields = [obj[c] for c in CATALOG_COLUMNS]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise MalformedRow(line, f'bad JSON record ({e!r})') from None
            _check_unique(records, _build_record(line, *fields), seen, line)
    else:
        raise ValueError(f'unknown catalog format "{format}"')
    logging.info(f'Parsed {len(records)} sites from {format} catalog')
    return SiteCatalog(tuple(records))


def serialize_catalog(catalog: SiteCatalog, stream: IO[str], format: CatalogFormat = 'csv'):
    rows = [(r.site_id, r.title, repr(r.location.lat), repr(r.location.lon), r.category, r.pageviews)
            for r in catalog]
    if format == 'csv':
        writer = csv.writer(stream, lineterminator = '\n')
        writer.writerow(CATALOG_COLUMNS)
        writer.writerows(rows)
    elif format == 'jsonl':
        for r in catalog:
            stream.write(json.dumps({'site_id': r.site_id, 'title': r.title, 'lat': r.location.lat,
                                     'lon': r.location.lon, 'category': r.category, 'pageviews': r.pageviews},
                                    ensure_ascii = False) + '\n')
    else:
        raise ValueError(f'unknown catalog format "{format}"')


def filter_popular(catalog: SiteCatalog, min_pageviews: int) -> SiteCatalog:
    """Drop low-popularity records, which tend to be abstract entities with no visible site"""
    kept = SiteCatalog(tuple(r for r in catalog if r.pageviews >= min_pageviews))
    if len(kept) < len(catalog):
        logging.info(f'Dropped {len(catalog) - len(kept)} sites under {min_pageviews} pageviews')
    return kept


def sites_in_region(catalog: SiteCatalog, region: Region) -> SiteCatalog:
    """Records inside the region bbox, edges included"""
    return SiteCatalog(tuple(r for r in catalog if region.contains(r.location)))


class _FeatureCollector:
    """Validates records one by one and applies the cross checks shared by both feature formats"""

    def __init__(self, dimension: int, catalog: Optional[SiteCatalog], max_images_per_site: Optional[int]):
        self.dimension = dimension
        self.catalog = catalog
        self.max_images = max_images_per_site
        self.per_site: dict[str, int] = {}
        self.seen: set[str] = set()
        self.images: list[ImageFeatureRecord] = []
        self.truncated = 0

    def add(self, where: str, image_id: str, site_id: str, source: str, probs):
        try:
            probs = np.asarray(probs, dtype = np.float64)
        except (TypeError, ValueError) as e:
            raise CatalogError(f'{where}: probs are not numeric ({e})') from None
        if probs.shape != (self.dimension,):
            raise DimensionMismatch(self.dimension, probs.size, where)
        if self.catalog is not None and site_id not in self.catalog:
            raise UnknownSiteId(site_id, where)
        if image_id in self.seen:
            raise CatalogError(f'{where}: duplicate image_id "{image_id}"')
        if source not in SOURCES:
            raise CatalogError(f'{where}: unknown source "{source}"')
        try:
            feature = FeatureDistribution(probs)
        except NotNormalized as e:
            raise NotNormalized(f'{where}: {e}') from None
        self.seen.add(image_id)
        count = self.per_site.get(site_id, 0)
        if self.max_images is not None and count >= self.max_images:
            self.truncated += 1
            return
        self.per_site[site_id] = count + 1
        self.images.append(ImageFeatureRecord(image_id, site_id, source, feature))

    def build(self) -> FeatureDataset:
        if self.truncated:
            logging.info(f'Skipped {self.truncated} images over the cap of {self.max_images} per site')
        return FeatureDataset(tuple(self.images), self.dimension)


def _read_id(buf: memoryview, offset: int, record: int) -> tuple[str, int]:
    (length,) = _ID_LENGTH.unpack_from(buf, offset)
    offset += _ID_LENGTH.size
    if offset + length > len(buf):
        raise CatalogError(f'truncated feature record {record}')
    try:
        text = bytes(buf[offset:offset + length]).decode('utf-8')
    except UnicodeDecodeError:
        raise CatalogError(f'record {record}: id at byte {offset} is not valid UTF-8') from None
    return text, offset + length


def _probs(value) -> np.ndarray:
    if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise ValueError('probs must be a list of numbers')
    return np.asarray(value, dtype = np.float64)


def parse_features(stream: Union[IO[str], IO[bytes]], format: FeatureFormat = 'jsonl',
                   catalog: SiteCatalog = None, max_images_per_site: int = None) -> FeatureDataset:
    """
    Parse a feature dataset whose first line (jsonl) or header (binary) declares the dimension.\n
    :param catalog: when given, every site_id must resolve in it
    :param max_images_per_site: keep only the first N images of each site (None keeps everything)
    """
    if format == 'jsonl':
        lines = iter(enumerate(stream, start = 1))
        header = None
        for line, text in lines:
            if text.strip():
                try:
                    header = json.loads(text)
                    dimension = int(header['dimension'])
                except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                    raise MalformedRow(line, 'first line must be a header like {"dimension": D}') from None
                break
        if header is None:
            raise MalformedRow(1, 'missing dimension header')
        collector = _FeatureCollector(dimension, catalog, max_images_per_site)
        for line, text in lines:
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
                args = (str(obj['image_id']), str(obj['site_id']), str(obj['source']), _probs(obj['probs']))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise MalformedRow(line, f'bad feature record ({e!r})') from None
            collector.add(f'line {line}', *args)
        return collector.build()
    elif format == 'binary':
        data = stream.read()
        if isinstance(data, str):
            raise CatalogError('packed-binary features need a byte stream')
        buf = memoryview(data)
        if len(buf) < _FEATURE_HEADER.size:
            raise CatalogError('truncated feature header')
        magic, dimension, count = _FEATURE_HEADER.unpack_from(buf, 0)
        if magic != FEATURE_MAGIC:
            raise CatalogError(f'bad magic {magic!r}')
        collector = _FeatureCollector(dimension, catalog, max_images_per_site)
        offset = _FEATURE_HEADER.size
        width = 4 * dimension
        for i in range(count):
            try:
                image_id, offset = _read_id(buf, offset, i)
                site_id, offset = _read_id(buf, offset, i)
                source, offset = _read_id(buf, offset, i)
            except struct.error:
                raise CatalogError(f'truncated feature record {i}') from None
            if offset + width > len(buf):
                raise CatalogError(f'truncated feature record {i}')
            probs = np.frombuffer(buf, dtype = '<f4', count = dimension, offset = offset)
            offset += width
            collector.add(f'record {i}', image_id, site_id, source, probs)
        if offset != len(buf):
            raise CatalogError(f'{len(buf) - offset} trailing bytes after {count} records')
        return collector.build()
    raise ValueError(f'unknown feature format "{format}"')


def serialize_features(dataset: FeatureDataset, stream: Union[IO[str], IO[bytes]], format: FeatureFormat = 'jsonl'):
    """Write a dataset in a format parse_features reads back. Binary stores float32"""
    if format == 'jsonl':
        stream.write(json.dumps({'dimension': dataset.dimension}) + '\n')
        for img in dataset:
            stream.write(json.dumps({'image_id': img.image_id, 'site_id': img.site_id, 'source': img.source,
                                     'probs': img.feature.probs.tolist()}) + '\n')
    elif format == 'binary':
        stream.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, dataset.dimension, len(dataset)))
        for img in dataset:
            for text in (img.image_id, img.site_id, img.source):
                raw = text.encode('utf-8')
                stream.write(_ID_LENGTH.pack(len(raw)) + raw)
            stream.write(img.feature.probs.astype('<f4').tobytes())
    else:
        raise ValueError(f'unknown feature format "{format}"')


def load_catalog(path, format: CatalogFormat = None) -> SiteCatalog:
    format = format or ('jsonl' if str(path).endswith('.jsonl') else 'csv')
    with open(path, encoding = 'utf-8', newline = '') as fp:
        return parse_catalog(fp, format)


def load_features(path, catalog: SiteCatalog = None, max_images_per_site: int = None) -> FeatureDataset:
    if str(path).endswith('.jsonl'):
        with open(path, encoding = 'utf-8') as fp:
            return parse_features(fp, 'jsonl', catalog, max_images_per_site)
    with open(path, 'rb') as fp:
        return parse_features(fp, 'binary', catalog, max_images_per_site)


def dump_catalog(catalog: SiteCatalog, format: CatalogFormat = 'csv') -> str:
    buf = io.StringIO()
    serialize_catalog(catalog, buf, format)
    return buf.getvalue()


def dump_features(dataset: FeatureDataset, format: FeatureFormat = 'jsonl') -> Union[str, bytes]:
    buf = io.StringIO() if format == 'jsonl' else io.BytesIO()
    serialize_features(dataset, buf, format)
    return buf.getvalue()


__all__ = ['CATALOG_COLUMNS', 'FEATURE_MAGIC', 'parse_catalog', 'serialize_catalog', 'filter_popular',
           'sites_in_region', 'parse_features', 'serialize_features', 'load_catalog', 'load_features',
           'dump_catalog', 'dump_features']
