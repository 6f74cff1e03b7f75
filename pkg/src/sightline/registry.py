"""
Versioned region-model registry.\n
Published blobs are immutable. Each region keeps a tuple of (manifest, blob) entries that is replaced as a
whole on publish, so readers take a snapshot without locking. Writers are serialized per region.
"""
import json
import logging
import pathlib
import threading
from dataclasses import dataclass
from typing import Optional, Union

from .classifier import deserialize_model
from .errors import (RegionUnknown, RegionMismatch, VersionUnknown, NoModelPublished, CorruptModel, OutOfCoverage,
                     CoordinateOutOfRange)
from .geo import region_for_point
from .structs import GeoPoint, ModelManifest, Tiling
from .utility import PathLike, atomic_write, hex_digest


class _NotModified:
    """Outcome of a conditional fetch whose hash matches the stored blob"""

    def __bool__(self) -> bool:
        return False

    def __repr__(self) -> str:
        return 'NotModified'


NotModified = _NotModified()


@dataclass(frozen = True)
class _Entry:
    manifest: ModelManifest
    blob: bytes


class RegistryStore:
    """Holds the tiling and the retained model versions of every region"""

    def __init__(self, tiling: Tiling, data_dir: Optional[PathLike] = None, retention: int = 3):
        """
        :param tiling: regions clients resolve their location against
        :param data_dir: directory for blobs and index.json. None keeps everything in memory
        :param retention: number of most recent versions kept per region
        """
        self.tiling = tiling
        self.retention = retention
        self.data_dir = pathlib.Path(data_dir) if data_dir is not None else None
        self._entries: dict[str, tuple[_Entry, ...]] = {}
        self._counters: dict[str, int] = {}
        self._locks = {region.region_id: threading.Lock() for region in tiling}
        self._index_lock = threading.Lock()
        if self.data_dir is not None:
            self._load()

    def _require_region(self, region_id: str):
        if region_id not in self.tiling:
            raise RegionUnknown(f'region "{region_id}" is not part of the tiling')

    def publish_model(self, region_id: str, blob: bytes) -> ModelManifest:
        """
        Store a model blob as the next version of its region.\n
        :raise CorruptModel: if the blob does not deserialize
        :raise RegionMismatch: if the model inside belongs to another region
        """
        self._require_region(region_id)
        blob = bytes(blob)
        model = deserialize_model(blob)
        if model.region_id != region_id:
            raise RegionMismatch(f'blob holds a model of region "{model.region_id}", not "{region_id}"')
        with self._locks[region_id]:
            version = self._counters.get(region_id, 0) + 1
            manifest = ModelManifest(region_id, version, hex_digest(blob), len(blob))
            entries = self._entries.get(region_id, ()) + (_Entry(manifest, blob),)
            dropped, entries = entries[:-self.retention], entries[-self.retention:]
            if self.data_dir is not None:
                atomic_write(self._blob_path(region_id, version), blob)
            self._entries[region_id] = entries  # single reference swap, readers see old or new tuple
            self._counters[region_id] = version
            for old in dropped:
                self._forget(old.manifest)
            self._write_index()
        logging.info(f'Published {region_id} v{version} ({len(blob)} bytes, {manifest.content_hash[:12]})')
        return manifest

    def latest(self, region_id: str) -> ModelManifest:
        self._require_region(region_id)
        entries = self._entries.get(region_id)
        if not entries:
            raise NoModelPublished(f'no model published for region "{region_id}"')
        return entries[-1].manifest

    def lookup_region(self, lat: float, lon: float, current_region: str = None) -> ModelManifest:
        """
        Resolve the region of a location (with hysteresis) and return its latest manifest.\n
        :raise OutOfCoverage: if no region covers the point, including coordinates off the globe
        """
        try:
            point = GeoPoint(lat, lon)
        except CoordinateOutOfRange:
            raise OutOfCoverage(f'({lat}, {lon}) is not a valid coordinate') from None
        region = region_for_point(self.tiling, point, current_region)
        return self.latest(region.region_id)

    def fetch_model(self, region_id: str, version: int = None,
                    if_hash: str = None) -> tuple[ModelManifest, Union[bytes, _NotModified]]:
        """
        Return the manifest and blob of the latest (or the requested) version.\n
        :param if_hash: hex digest the client already holds. A match returns NotModified instead of the blob
        """
        self._require_region(region_id)
        entries = self._entries.get(region_id, ())
        if version is None:
            if not entries:
                raise NoModelPublished(f'no model published for region "{region_id}"')
            entry = entries[-1]
        else:
            entry = next((e for e in entries if e.manifest.version == version), None)
            if entry is None:
                raise VersionUnknown(f'region "{region_id}" has no retained version {version}')
        if if_hash is not None and if_hash.lower() == entry.manifest.content_hash:
            logging.debug(f'{region_id} v{entry.manifest.version} not modified')
            return entry.manifest, NotModified
        return entry.manifest, entry.blob

    def manifests(self, region_id: str) -> list[ModelManifest]:
        """Retained manifests of a region, oldest first"""
        self._require_region(region_id)
        return [e.manifest for e in self._entries.get(region_id, ())]

    def index(self) -> dict:
        """Retained manifests of all regions, as written to index.json"""
        entries, counters = dict(self._entries), dict(self._counters)  # snapshots, other regions may publish
        return {'regions': {rid: [e.manifest.to_dict() for e in items] for rid, items in sorted(entries.items())},
                'latest_versions': dict(sorted(counters.items()))}

    # persistence
    def _blob_path(self, region_id: str, version: int) -> pathlib.Path:
        return self.data_dir / 'blobs' / region_id / f'{version:06d}.grm'

    def _forget(self, manifest: ModelManifest):
        if self.data_dir is not None:
            path = self._blob_path(manifest.region_id, manifest.version)
            path.unlink(missing_ok = True)
        logging.debug(f'Retired {manifest.region_id} v{manifest.version}')

    def _write_index(self):
        if self.data_dir is None:
            return
        with self._index_lock:
            atomic_write(self.data_dir / 'index.json', json.dumps(self.index(), indent = 2, sort_keys = True) + '\n')

    def _load(self):
        index_path = self.data_dir / 'index.json'
        if not index_path.exists():
            return
        with open(index_path, encoding = 'utf-8') as fp:
            data = json.load(fp)
        for region_id, manifests in data.get('regions', {}).items():
            if region_id not in self.tiling:
                logging.warning(f'Ignoring stored models of region {region_id}, it is not in the tiling')
                continue
            entries = []
            for item in manifests:
                manifest = ModelManifest.from_dict(item)
                path = self._blob_path(region_id, manifest.version)
                try:
                    blob = path.read_bytes()
                except FileNotFoundError:
                    logging.warning(f'Missing blob {path}, dropping {region_id} v{manifest.version}')
                    continue
                if hex_digest(blob) != manifest.content_hash:
                    logging.warning(f'Hash mismatch for {path}, dropping {region_id} v{manifest.version}')
                    continue
                try:
                    deserialize_model(blob)
                except CorruptModel as e:
                    logging.warning(f'Corrupt model in {path} ({e}), dropping {region_id} v{manifest.version}')
                    continue
                entries.append(_Entry(manifest, blob))
            self._entries[region_id] = tuple(entries)
        for region_id, version in data.get('latest_versions', {}).items():
            if region_id in self.tiling:
                self._counters[region_id] = int(version)
        logging.info(f'Loaded {sum(len(e) for e in self._entries.values())} stored models from {self.data_dir}')

    def __repr__(self) -> str:
        return f'RegistryStore[{len(self.tiling)} regions, {len(self._entries)} published]'


__all__ = ['NotModified', 'RegistryStore']
