"""Spherical geodesy and the overlapping region tiling"""
import json
import logging
import math
from typing import Optional

from .errors import UndefinedBearing, InvalidTilingParams, OutOfCoverage
from .structs import EARTH_RADIUS_M, METERS_PER_DEGREE, GeoPoint, BoundingBox, Region, Tiling
from .utility import PathLike, atomic_write


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters"""
    lat1, lon1, lat2, lon2 = map(math.radians, (a.lat, a.lon, b.lat, b.lon))
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def initial_bearing(origin: GeoPoint, to: GeoPoint) -> float:
    """Initial great-circle bearing in [0, 360), 0 is north, clockwise"""
    if origin == to:
        raise UndefinedBearing(f'bearing from {origin} to itself is undefined')
    lat1, lon1, lat2, lon2 = map(math.radians, (origin.lat, origin.lon, to.lat, to.lon))
    dlon = lon2 - lon1
    x = math.sin(dlon) * math.cos(lat2)
    y = math.cos(lat1) * math.sin(lat2) - math.sin(lat1) * math.cos(lat2) * math.cos(dlon)
    bearing = math.degrees(math.atan2(x, y)) % 360.0
    return 0.0 if bearing >= 360.0 else bearing  # -tiny % 360 rounds up to 360.0


def angular_difference(b1: float, b2: float) -> float:
    """Smallest absolute circular difference between two bearings, in [0, 180]"""
    d = abs(b1 - b2) % 360.0
    return 360.0 - d if d > 180.0 else d


def destination_point(origin: GeoPoint, bearing: float, distance_m: float) -> GeoPoint:
    """Point reached by travelling distance_m along a great circle starting at `bearing`"""
    delta = distance_m / EARTH_RADIUS_M
    theta = math.radians(bearing)
    lat1, lon1 = math.radians(origin.lat), math.radians(origin.lon)
    lat2 = math.asin(math.sin(lat1) * math.cos(delta) + math.cos(lat1) * math.sin(delta) * math.cos(theta))
    lon2 = lon1 + math.atan2(math.sin(theta) * math.sin(delta) * math.cos(lat1),
                             math.cos(delta) - math.sin(lat1) * math.sin(lat2))
    lon = (math.degrees(lon2) + 540.0) % 360.0 - 180.0
    return GeoPoint(max(-90.0, min(90.0, math.degrees(lat2))), lon)


def offset_point(p: GeoPoint, north_m: float, east_m: float) -> GeoPoint:
    """Shift a point by local metric offsets (equirectangular)"""
    lat = p.lat + north_m / METERS_PER_DEGREE
    lon = p.lon + east_m / (METERS_PER_DEGREE * math.cos(math.radians(p.lat)))
    return GeoPoint(max(-90.0, min(90.0, lat)), (lon + 540.0) % 360.0 - 180.0)


def _grid_count(extent_m: float, size_m: float, stride_m: float) -> int:
    if extent_m <= size_m + 1e-6:
        return 1
    # the epsilon keeps exact multiples of the stride from gaining a spurious column
    return 1 + math.ceil((extent_m - size_m) / stride_m - 1e-9)


def tile_area(bbox: BoundingBox, region_size_m: float, overlap_m: float = 200.0) -> Tiling:
    """
    Cover bbox with square regions of side region_size_m whose neighbours overlap by overlap_m.\n
    The grid is centered on the bbox; meters are converted with the equirectangular scale at the bbox mean latitude.
    Region ids are "r<row>c<col>" with zero-padded indices, rows counted from the south.
    """
    if not (region_size_m > overlap_m >= 0):
        raise InvalidTilingParams(f'need region_size_m > overlap_m >= 0, got {region_size_m} and {overlap_m}')
    ref_lat = bbox.mean_lat
    lon_scale = METERS_PER_DEGREE * math.cos(math.radians(ref_lat))
    if lon_scale <= 0:
        raise InvalidTilingParams('cannot tile an area at the poles')
    stride = region_size_m - overlap_m
    width_m = (bbox.east - bbox.west) * lon_scale
    height_m = (bbox.north - bbox.south) * METERS_PER_DEGREE
    n_cols = _grid_count(width_m, region_size_m, stride)
    n_rows = _grid_count(height_m, region_size_m, stride)

    # shift so that the covered span is centered on the bbox
    west_m = -(region_size_m + (n_cols - 1) * stride - width_m) / 2
    south_m = -(region_size_m + (n_rows - 1) * stride - height_m) / 2
    half = region_size_m / 2
    regions = []
    for row in range(n_rows):
        lat = bbox.south + (south_m + half + row * stride) / METERS_PER_DEGREE
        for col in range(n_cols):
            lon = bbox.west + (west_m + half + col * stride) / lon_scale
            regions.append(Region(f'r{row:03d}c{col:03d}', GeoPoint(lat, lon), half, ref_lat))
    logging.info(f'Tiled {width_m:.0f}x{height_m:.0f} m into {n_rows}x{n_cols} regions '
                 f'of {region_size_m:.0f} m (overlap {overlap_m:.0f} m)')
    return Tiling(tuple(regions), overlap_m)


def region_for_point(tiling: Tiling, p: GeoPoint, current: Optional[str] = None) -> Region:
    """
    Resolve the region serving point p.\n
    :param current: the region the client currently uses. It is kept as long as p stays inside it
    """
    if current is not None:
        region = tiling.get(current)
        if region is not None and region.contains(p):
            return region
    containing = [r for r in tiling if r.contains(p)]
    if not containing:
        raise OutOfCoverage(f'{p} is outside the tiled area')
    return min(containing, key = lambda r: (haversine_distance(r.center, p), r.region_id))


def save_tiling(tiling: Tiling, path: PathLike):
    atomic_write(path, json.dumps(tiling.to_dict(), indent = 2, sort_keys = True) + '\n')


def load_tiling(path: PathLike) -> Tiling:
    with open(path, encoding = 'utf-8') as fp:
        return Tiling.from_dict(json.load(fp))


__all__ = ['haversine_distance', 'initial_bearing', 'angular_difference', 'destination_point', 'offset_point',
           'tile_area', 'region_for_point', 'save_tiling', 'load_tiling']
