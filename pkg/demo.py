import logging

import numpy as np

from src.sightline import (SynthConfig, ContextConfig, MobileContext, generate_synthetic, purify_dataset, tile_area,
                           train_region_models, region_for_point, contextual_classify, serve_registry,
                           RegistryClient, serialize_model, destination_point, initial_bearing)

logging.basicConfig(level = 'INFO', format = '[%(levelname)s](%(funcName)s) %(message)s')

catalog, dataset, truth = generate_synthetic(SynthConfig(num_sites = 40, images_per_site = 40))
purified = purify_dataset(dataset)  # chaotic classes and outlier images are dropped here
tiling = tile_area(catalog.bbox(), 1000.0, 200.0)
models = train_region_models(tiling, catalog, purified.dataset)

server = serve_registry(tiling, ('127.0.0.1', 0))
server.run(block = False, quiet = True)
print(f'You can reach the registry at {server.addr}')
with RegistryClient(server.addr) as client:
    for region_id, model in sorted(models.items()):
        client.publish(region_id, serialize_model(model))

    # a user 80 m south of a site, looking at it
    site = next(s for s in catalog if s.site_id in purified.dataset.by_site)
    user = destination_point(site.location, 180.0, 80.0)
    region = region_for_point(tiling, user)
    manifest = client.lookup(user.lat, user.lon)
    print(f'{region.region_id} serves the user, latest model is v{manifest.version}')

rng = np.random.default_rng(0)
ctx = MobileContext(user, initial_bearing(user, site.location), truth.sample_feature(site.site_id, 0.3, rng))
photo = truth.sample_feature(site.site_id, 0.7, rng)
for cfg in (ContextConfig(enable_location = False, enable_orientation = False, enable_attention = False),
            ContextConfig()):
    answer = contextual_classify(models[region.region_id], photo, ctx, catalog, cfg)
    print(f'{answer.applied_filters}: {answer.top1} (truth {site.site_id})')

server.terminate()
