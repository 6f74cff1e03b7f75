"""
Per-region site classifier: a softmax-regression head over frozen backbone features, trained with mini-batch SGD
on the mean cross-entropy. Shuffling uses numpy's PCG64 generator seeded from TrainConfig.seed.
"""
import json
import logging
import math
import struct
from concurrent import futures
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.special import softmax, log_softmax

from .catalog import sites_in_region
from .config import TrainConfig
from .errors import (IndexOutOfRange, TooFewClasses, EmptyTrainingSet, EmptyTestSet, CorruptModel,
                     DimensionMismatch, UnknownSiteId)
from .structs import FeatureDataset, FeatureLike, Prediction, RegionModel, SiteCatalog, Tiling, as_probs
from .utility import canonical_json, digest

MODEL_MAGIC = b'GRM1'
DIGEST_SIZE = 32
PROB_FLOOR = 1e-12
_U32 = struct.Struct('<I')
_U16 = struct.Struct('<H')


def cross_entropy(true_class: int, q: Sequence[float]) -> float:
    """-ln q[true_class], with q clamped at 1e-12"""
    q = np.asarray(q.distribution if isinstance(q, Prediction) else q, dtype = np.float64)
    if not 0 <= true_class < q.size:
        raise IndexOutOfRange(f'class index {true_class} outside [0, {q.size})')
    return -math.log(max(float(q[true_class]), PROB_FLOOR))


def predict(model: RegionModel, feature: FeatureLike) -> Prediction:
    """softmax(W x + b) over the model's sites"""
    x = as_probs(feature)
    if x.shape != (model.dimension,):
        raise DimensionMismatch(model.dimension, x.size, f'predict with {model!r}')
    logits = model.weights.astype(np.float64) @ x + model.biases.astype(np.float64)
    return Prediction(model.site_ids, softmax(logits))


def predict_batch(model: RegionModel, features: np.ndarray) -> np.ndarray:
    """Probability rows for a (n, D) feature matrix"""
    if features.ndim != 2 or features.shape[1] != model.dimension:
        raise DimensionMismatch(model.dimension, features.shape[-1], f'predict with {model!r}')
    logits = features @ model.weights.astype(np.float64).T + model.biases.astype(np.float64)
    return softmax(logits, axis = 1)


def top1_indices(model: RegionModel, probs: np.ndarray) -> np.ndarray:
    """Row-wise argmax with the lexicographic site-id tie-break"""
    # columns ordered by site id make np.argmax's first-index rule the lexicographic rule
    order = np.array(sorted(range(model.num_sites), key = lambda i: model.site_ids[i]), dtype = np.int64)
    return order[np.argmax(probs[:, order], axis = 1)]


def softmax_loss_and_grad(weights: np.ndarray, biases: np.ndarray, x: np.ndarray,
                          y: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """
    Mean cross-entropy of a batch and its gradient.\n
    :param weights: (k, D)
    :param biases: (k,)
    :param x: (n, D) features
    :param y: (n,) class indices
    :return: loss, dL/dW (k, D), dL/db (k,)
    """
    n = x.shape[0]
    logits = x @ weights.T + biases
    log_q = log_softmax(logits, axis = 1)
    loss = -float(np.mean(log_q[np.arange(n), y]))
    dscores = np.exp(log_q)
    dscores[np.arange(n), y] -= 1.0
    dscores /= n
    return loss, dscores.T @ x, dscores.sum(axis = 0)


def _mean_loss(weights, biases, x, y) -> float:
    log_q = log_softmax(x @ weights.T + biases, axis = 1)
    return -float(np.mean(np.maximum(log_q[np.arange(x.shape[0]), y], math.log(PROB_FLOOR))))


def _standardizer(x: np.ndarray, enabled: bool) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and scale. The scale is floored at 1/D, the mean mass of an atom"""
    if not enabled:
        return np.zeros(x.shape[1]), np.ones(x.shape[1])
    return x.mean(axis = 0), np.maximum(x.std(axis = 0), 1.0 / x.shape[1])


def train_region_model(train: FeatureDataset, config: TrainConfig = TrainConfig(), region_id: str = 'region',
                       site_ids: Sequence[str] = None, version: int = 1) -> RegionModel:
    """
    Fit a softmax-regression head with zero-initialized parameters.\n
    With config.standardize the head is fitted on (x - mean) / scale and the transform is folded into W and b
    afterwards, so the stored model is applied to raw features like any other.\n
    :param site_ids: class order of the model, defaults to the sorted sites present in train
    """
    if len(train) == 0:
        raise EmptyTrainingSet(f'no training images for region {region_id}')
    site_ids = tuple(site_ids) if site_ids is not None else train.classes
    if len(site_ids) < 2:
        raise TooFewClasses(f'region {region_id} has {len(site_ids)} site(s), at least 2 are required')
    index = {s: i for i, s in enumerate(site_ids)}
    try:
        y = np.array([index[s] for s in train.labels], dtype = np.int64)
    except KeyError as e:
        raise UnknownSiteId(e.args[0], f'training set of region {region_id}') from None

    x = np.asarray(train.matrix, dtype = np.float64)
    mean, scale = _standardizer(x, config.standardize)
    z = (x - mean) / scale
    n, k = x.shape[0], len(site_ids)
    weights = np.zeros((k, train.dimension))
    biases = np.zeros(k)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    initial_loss = _mean_loss(weights, biases, z, y)

    order = np.arange(n)
    for epoch in range(config.epochs):
        if config.shuffle:
            order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            _, grad_w, grad_b = softmax_loss_and_grad(weights, biases, z[batch], y[batch])
            weights -= config.lr * grad_w
            biases -= config.lr * grad_b

    weights = weights / scale
    biases = biases - weights @ mean
    # parameters are stored as float32 so the serialized model reproduces them exactly
    weights, biases = weights.astype(np.float32), biases.astype(np.float32)
    final_loss = _mean_loss(weights.astype(np.float64), biases.astype(np.float64), x, y)
    meta = {'seed': config.seed, 'epochs': config.epochs, 'lr': config.lr, 'batch_size': config.batch_size,
            'standardize': config.standardize, 'train_size': n, 'initial_loss': initial_loss,
            'final_loss': final_loss}
    logging.info(f'Trained region {region_id}: {k} sites, {n} images, loss {initial_loss:.4f} -> {final_loss:.4f}')
    return RegionModel(region_id, site_ids, weights, biases, version, meta)


def evaluate_top1(model: RegionModel, test: FeatureDataset) -> float:
    """Fraction of test images whose top-1 site is their true site"""
    if len(test) == 0:
        raise EmptyTestSet(f'cannot evaluate {model!r} on an empty test set')
    predicted = top1_indices(model, predict_batch(model, test.matrix))
    hits = sum(1 for i, label in zip(predicted, test.labels) if model.site_ids[i] == label)
    return hits / len(test)


def train_region_models(tiling: Tiling, catalog: SiteCatalog, dataset: FeatureDataset,
                        config: TrainConfig = TrainConfig(), max_workers: int = 1) -> dict[str, RegionModel]:
    """Train one model per region holding at least two sites with images. Other regions are skipped"""
    jobs = {}
    for region in tiling:
        sites = [s for s in sites_in_region(catalog, region).site_ids if s in dataset.by_site]
        if len(sites) < 2:
            logging.warning(f'Skipping region {region.region_id}: {len(sites)} site(s) with images')
            continue
        jobs[region.region_id] = dataset.restrict(sites)

    def fit(region_id):
        return train_region_model(jobs[region_id], config, region_id)

    if max_workers > 1:
        with futures.ThreadPoolExecutor(max_workers = max_workers, thread_name_prefix = 'Train') as pool:
            models = dict(zip(jobs, pool.map(fit, jobs)))
    else:
        models = {region_id: fit(region_id) for region_id in jobs}
    return models


def serialize_model(model: RegionModel) -> bytes:
    """
    GRM1 layout (little-endian): magic | u32 version | u16 len + region_id | u32 num_sites | u32 D |
    num_sites x (u16 len + site_id) | u32 len + training_meta JSON | float32 weights | float32 biases |
    32-byte SHA-256 of everything before it
    """
    parts = [MODEL_MAGIC, _U32.pack(model.version)]
    region = model.region_id.encode('utf-8')
    parts += [_U16.pack(len(region)), region, _U32.pack(model.num_sites), _U32.pack(model.dimension)]
    for site_id in model.site_ids:
        raw = site_id.encode('utf-8')
        parts += [_U16.pack(len(raw)), raw]
    meta = canonical_json(model.training_meta).encode('utf-8')
    parts += [_U32.pack(len(meta)), meta]
    parts += [model.weights.astype('<f4').tobytes(), model.biases.astype('<f4').tobytes()]
    payload = b''.join(parts)
    return payload + digest(payload)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise CorruptModel('model blob is truncated')
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: struct.Struct) -> int:
        return fmt.unpack(self.take(fmt.size))[0]

    def text(self) -> str:
        try:
            return self.take(self.unpack(_U16)).decode('utf-8')
        except UnicodeDecodeError as e:
            raise CorruptModel(f'bad identifier encoding: {e}') from None


def deserialize_model(blob: bytes) -> RegionModel:
    """Inverse of serialize_model. Any damage raises CorruptModel"""
    blob = bytes(blob)
    if len(blob) < len(MODEL_MAGIC) + DIGEST_SIZE or blob[:4] != MODEL_MAGIC:
        raise CorruptModel('bad magic or blob too short')
    payload, stored = blob[:-DIGEST_SIZE], blob[-DIGEST_SIZE:]
    if digest(payload) != stored:
        raise CorruptModel('content hash mismatch')
    reader = _Reader(payload)
    reader.take(4)
    version = reader.unpack(_U32)
    region_id = reader.text()
    num_sites, dimension = reader.unpack(_U32), reader.unpack(_U32)
    site_ids = tuple(reader.text() for _ in range(num_sites))
    try:
        meta = json.loads(reader.take(reader.unpack(_U32)).decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptModel(f'bad training metadata: {e}') from None
    weights = np.frombuffer(reader.take(4 * num_sites * dimension), dtype = '<f4').reshape(num_sites, dimension)
    biases = np.frombuffer(reader.take(4 * num_sites), dtype = '<f4')
    if reader.offset != len(payload):
        raise CorruptModel(f'{len(payload) - reader.offset} unexpected trailing bytes')
    try:
        return RegionModel(region_id, site_ids, weights, biases, version, meta)
    except (ValueError, DimensionMismatch) as e:
        raise CorruptModel(str(e)) from None


__all__ = ['MODEL_MAGIC', 'cross_entropy', 'predict', 'predict_batch', 'top1_indices', 'softmax_loss_and_grad',
           'train_region_model', 'evaluate_top1', 'train_region_models', 'serialize_model', 'deserialize_model']
