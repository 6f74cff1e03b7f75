"""Mobile-context candidate masking: location radius, orientation sector and attention re-query"""
import json
from typing import Iterable

import numpy as np

from .classifier import predict
from .config import ContextConfig
from .errors import NoCandidateInContext, UnknownSiteId
from .geo import haversine_distance, initial_bearing, angular_difference
from .structs import (SiteCatalog, MobileContext, Prediction, ContextualPrediction, RegionModel, FeatureLike)
from .utility import fsum


def candidate_sites(sites: SiteCatalog, ctx: MobileContext, cfg: ContextConfig = ContextConfig()) -> frozenset:
    """Ids of sites within radius_m of the user and within half_angle_deg of the user's bearing"""
    candidates = set()
    for site in sites:
        if cfg.enable_location and haversine_distance(ctx.location, site.location) > cfg.radius_m:
            continue
        if cfg.enable_orientation and site.location != ctx.location:
            offset = angular_difference(ctx.bearing, initial_bearing(ctx.location, site.location))
            if offset > cfg.half_angle_deg:
                continue
        candidates.add(site.site_id)
    return frozenset(candidates)


def masked_predict(raw: Prediction, candidates: Iterable[str], applied_filters: dict = None) -> ContextualPrediction:
    """
    Zero every non-candidate probability and renormalize the rest.\n
    :raise NoCandidateInContext: if no candidate is left or all candidates have probability 0
    """
    candidates = frozenset(candidates)
    unknown = candidates.difference(raw.site_ids)
    if unknown:
        raise UnknownSiteId(min(unknown), 'candidate not predicted by the model')
    mask = np.array([s in candidates for s in raw.site_ids], dtype = bool)
    masked = np.where(mask, raw.distribution, 0.0)
    total = fsum(masked)
    if not candidates or total <= 0.0:
        raise NoCandidateInContext(f'none of {len(candidates)} candidate(s) has probability mass')
    return ContextualPrediction(Prediction(raw.site_ids, masked / total), candidates, dict(applied_filters or {}))


def contextual_classify(model: RegionModel, feature: FeatureLike, ctx: MobileContext, sites: SiteCatalog,
                        cfg: ContextConfig = ContextConfig()) -> ContextualPrediction:
    """
    Classify a query with the enabled context filters.\n
    With attention enabled and an attention feature present, the user-focused feature replaces the original one.
    Catalog sites the model does not know are not candidates.
    """
    use_attention = cfg.enable_attention and ctx.attention_feature is not None
    raw = predict(model, ctx.attention_feature if use_attention else feature)
    known = sites.subset(model.site_ids)
    candidates = candidate_sites(known, ctx, cfg)
    applied = {'location': cfg.enable_location, 'orientation': cfg.enable_orientation, 'attention': use_attention}
    return masked_predict(raw, candidates, applied)


def dump_contextual_prediction(prediction: ContextualPrediction) -> str:
    return json.dumps(prediction.to_dict(), sort_keys = True)


__all__ = ['candidate_sites', 'masked_predict', 'contextual_classify', 'dump_contextual_prediction']
