import argparse
import dataclasses
import json
import logging
import pathlib
import sys

import numpy as np

from .catalog import load_catalog, load_features, filter_popular, dump_catalog, dump_features
from .classifier import train_region_model, train_region_models, serialize_model, deserialize_model
from .config import Settings, RegistryConfig, load_config, SYNTH_PRESETS
from .errors import SightlineError, InvalidConfig
from .geo import tile_area, save_tiling, load_tiling
from .harness import (monte_carlo_cv, sweep_images_per_class, sweep_area_size, sweep_area_radius, compare_sources,
                      split_by_source, stratified_split, confusion_by_category, simulate_wild)
from .purify import purify_dataset, purify_to_fixpoint, write_cohesion_csv, write_denoise_csv
from .reports import (filter_report, sources_report, images_report, area_report, confusion_report, context_report)
from .server import RegistryServer, RegistryClient
from .registry import RegistryStore
from .structs import BoundingBox
from .synth import generate_synthetic
from .utility import atomic_write, parse_address

common = argparse.ArgumentParser(add_help = False)
common.add_argument('--seed', type = int, help = 'seed for every random stream (overrides the config file)')
common.add_argument('--config', help = 'JSON config file')
common.add_argument('--out', default = 'out', help = 'output directory')
common.add_argument('-v', '--verbose', action = 'store_true', help = 'print INFO messages')
common.add_argument('--debug', action = 'store_true', help = 'print DEBUG messages')

data = argparse.ArgumentParser(add_help = False)
data.add_argument('--catalog', help = 'site catalog (.csv or .jsonl). Synthetic data is generated if omitted')
data.add_argument('--features', help = 'feature dataset (.jsonl or binary)')
data.add_argument('--max-images', type = int, help = 'keep at most this many images per site')
data.add_argument('--preset', choices = sorted(SYNTH_PRESETS), help = 'noise preset of generated data')

parser = argparse.ArgumentParser(prog = 'sightline', description = 'feature-space site recognition toolkit')
commands = parser.add_subparsers(dest = 'command', required = True)

p = commands.add_parser('ingest', parents = [common], help = 'validate and normalize a catalog and its features')
p.add_argument('--catalog', required = True)
p.add_argument('--features')
p.add_argument('--min-pageviews', type = int, default = 0)
p.add_argument('--max-images', type = int)
p.add_argument('--format', choices = ('jsonl', 'binary'), default = 'jsonl', help = 'output feature format')

p = commands.add_parser('generate', parents = [common], help = 'generate a synthetic benchmark')
p.add_argument('--preset', choices = sorted(SYNTH_PRESETS))
p.add_argument('--num-sites', type = int)
p.add_argument('--images-per-site', type = int)
p.add_argument('--dimension', type = int)
p.add_argument('--format', choices = ('jsonl', 'binary'), default = 'jsonl')

p = commands.add_parser('tile', parents = [common], help = 'tile an area into overlapping regions')
p.add_argument('--catalog', help = 'tile the extent of this catalog')
p.add_argument('--bbox', type = float, nargs = 4, metavar = ('SOUTH', 'WEST', 'NORTH', 'EAST'))
p.add_argument('--region-size', type = float, default = 1000.0)
p.add_argument('--overlap', type = float, default = 200.0)

p = commands.add_parser('purify', parents = [common, data], help = 'two-stage dataset purification')
p.add_argument('--fixpoint', action = 'store_true', help = 'repeat until no image is removed')

p = commands.add_parser('train', parents = [common, data], help = 'train one model per region')
p.add_argument('--tiling', help = 'tiling JSON. The catalog extent is tiled if omitted')
p.add_argument('--region-size', type = float)
p.add_argument('--overlap', type = float, default = 200.0)
p.add_argument('--purify', action = 'store_true', help = 'purify before training')

commands.add_parser('eval', parents = [common, data], help = 'MC-CV with purification off and on')

p = commands.add_parser('sweep-area', parents = [common, data], help = 'accuracy against area size')
p.add_argument('--sizes', type = float, nargs = '+', help = 'region sizes (or radii) in meters')
p.add_argument('--radius', action = 'store_true', help = 'concentric circles instead of grid tiles')
p.add_argument('--centers', type = int, default = 8, help = 'circle centers for --radius')

p = commands.add_parser('sweep-images', parents = [common, data], help = 'accuracy against images per site')
p.add_argument('--m', type = int, nargs = '+')

p = commands.add_parser('confusion', parents = [common, data], help = 'category confusion matrix')
p.add_argument('--mode', choices = ('top1', 'mass'), default = 'top1')

p = commands.add_parser('wild', parents = [common], help = 'mobile-context ablation on simulated field queries')
p.add_argument('--preset', choices = sorted(SYNTH_PRESETS))
p.add_argument('--region-size', type = float)
p.add_argument('--overlap', type = float, default = 200.0)
p.add_argument('--queries', type = int)
p.add_argument('--radius', type = float, help = 'candidate radius in meters')

commands.add_parser('sources', parents = [common, data], help = 'accuracy per image source')

p = commands.add_parser('serve', parents = [common], help = 'run the model registry')
p.add_argument('--tiling', help = 'tiling JSON (or SIGHTLINE_TILING)')
p.add_argument('--listen', help = 'host:port (or SIGHTLINE_LISTEN)')
p.add_argument('--data-dir', help = 'blob directory (or SIGHTLINE_DATA_DIR)')
p.add_argument('--retention', type = int)
p.add_argument('--backend', choices = ('single', 'thread'), default = 'thread')

p = commands.add_parser('publish', parents = [common], help = 'publish a model file')
p.add_argument('model')
p.add_argument('--server', default = '127.0.0.1:7070')
p.add_argument('--region', help = 'defaults to the region stored in the model')

p = commands.add_parser('fetch', parents = [common], help = 'fetch a model from the registry')
p.add_argument('--server', default = '127.0.0.1:7070')
p.add_argument('--region')
p.add_argument('--lat', type = float)
p.add_argument('--lon', type = float)
p.add_argument('--version', type = int)
p.add_argument('--if-hash')


def resolve_settings(args) -> Settings:
    settings = load_config(args.config)
    if args.seed is not None:
        seeded = {name: getattr(settings, name).replace(seed = args.seed)
                  for name in ('synth', 'train', 'protocol', 'wild')}
        settings = dataclasses.replace(settings, **seeded)
    preset = getattr(args, 'preset', None)
    if preset:
        settings = dataclasses.replace(settings, synth = settings.synth.with_preset(preset))
    return settings


def load_data(args, settings: Settings):
    """Catalog, dataset and ground truth (None for files) of a data-consuming command"""
    if args.features:
        catalog = load_catalog(args.catalog) if args.catalog else None
        return catalog, load_features(args.features, catalog, args.max_images), None
    if args.catalog:
        raise InvalidConfig('--catalog needs --features')
    catalog, dataset, truth = generate_synthetic(settings.synth)
    if args.max_images:
        keep = [i for idx in dataset.by_site.values() for i in idx[:args.max_images]]
        dataset = dataset.subset(sorted(keep))
    return catalog, dataset, truth


def echo(args, settings: Settings) -> dict:
    """Config echo of a report: resolved settings plus the data inputs"""
    inputs = {k: getattr(args, k, None) for k in ('catalog', 'features', 'max_images', 'preset')}
    return {'settings': settings.to_dict(), 'inputs': {k: v for k, v in inputs.items() if v is not None}}


def write_features(dataset, out: pathlib.Path, fmt: str) -> pathlib.Path:
    path = out / ('features.jsonl' if fmt == 'jsonl' else 'features.bin')
    atomic_write(path, dump_features(dataset, fmt))
    return path


def cmd_ingest(args, settings, out):
    catalog = load_catalog(args.catalog)
    if args.min_pageviews:
        catalog = filter_popular(catalog, args.min_pageviews)
    atomic_write(out / 'catalog.csv', dump_catalog(catalog))
    summary = {'sites': len(catalog)}
    if args.features:
        dataset = load_features(args.features, catalog, args.max_images)
        write_features(dataset, out, args.format)
        summary.update(images = len(dataset), dimension = dataset.dimension, classes = len(dataset.classes))
    atomic_write(out / 'ingest.json', json.dumps(summary, indent = 2, sort_keys = True) + '\n')
    print(json.dumps(summary, sort_keys = True))


def cmd_generate(args, settings, out):
    synth = settings.synth.replace(num_sites = args.num_sites, images_per_site = args.images_per_site,
                                   dimension = args.dimension)
    catalog, dataset, truth = generate_synthetic(synth)
    atomic_write(out / 'catalog.csv', dump_catalog(catalog))
    write_features(dataset, out, args.format)
    atomic_write(out / 'ground_truth.json', json.dumps(truth.to_dict(), indent = 2, sort_keys = True) + '\n')
    print(f'{len(catalog)} sites, {len(dataset)} images written to {out}')


def cmd_tile(args, settings, out):
    if args.bbox:
        bbox = BoundingBox(*args.bbox)
    elif args.catalog:
        bbox = load_catalog(args.catalog).bbox()
    else:
        bbox = BoundingBox(*settings.synth.geo_bbox)
    tiling = tile_area(bbox, args.region_size, args.overlap)
    save_tiling(tiling, out / 'tiling.json')
    print(f'{len(tiling)} regions written to {out / "tiling.json"}')


def cmd_purify(args, settings, out):
    _, dataset, _ = load_data(args, settings)
    if args.fixpoint:
        result, rounds = purify_to_fixpoint(dataset, settings.purify)
    else:
        result, rounds = purify_dataset(dataset, settings.purify, settings.protocol.max_workers), 1
    write_cohesion_csv(result.cohesion, out / 'cohesion.csv')
    write_denoise_csv(result.denoise, out / 'denoise.csv')
    atomic_write(out / 'purified.jsonl', dump_features(result.dataset))
    summary = {'config': echo(args, settings), 'stats': result.stats, 'rounds': rounds,
               'removed_sites': result.removed_sites}
    atomic_write(out / 'purify.json', json.dumps(summary, indent = 2, sort_keys = True) + '\n')
    print(repr(result))


def cmd_train(args, settings, out):
    catalog, dataset, _ = load_data(args, settings)
    if catalog is None:
        raise InvalidConfig('training per region needs --catalog')
    if args.tiling:
        tiling = load_tiling(args.tiling)
    else:
        tiling = tile_area(catalog.bbox(), args.region_size or settings.protocol.region_size_m, args.overlap)
        save_tiling(tiling, out / 'tiling.json')
    if args.purify:
        dataset = purify_dataset(dataset, settings.purify, settings.protocol.max_workers).dataset
    models = train_region_models(tiling, catalog, dataset, settings.train, settings.protocol.max_workers)
    listing = {}
    for region_id, model in sorted(models.items()):
        blob = serialize_model(model)
        atomic_write(out / 'models' / f'{region_id}.grm', blob)
        listing[region_id] = {'sites': list(model.site_ids), 'bytes': len(blob), **model.training_meta}
    atomic_write(out / 'models.json', json.dumps(listing, indent = 2, sort_keys = True) + '\n')
    print(f'{len(models)} models written to {out / "models"}')


def cmd_eval(args, settings, out):
    _, dataset, _ = load_data(args, settings)
    results = [monte_carlo_cv(dataset, settings.protocol, settings.train, settings.purify, purify = flag)
               for flag in (False, True)]
    return filter_report(results, echo(args, settings))


def cmd_sweep_area(args, settings, out):
    catalog, dataset, _ = load_data(args, settings)
    if catalog is None:
        raise InvalidConfig('the area sweep needs --catalog')
    if args.radius:
        radii = args.sizes or [s / 2 for s in settings.protocol.area_sizes_m]
        sweep = sweep_area_radius(catalog, dataset, radii, args.centers, settings.protocol, settings.train,
                                  settings.purify)
    else:
        sweep = sweep_area_size(catalog, dataset, args.sizes, settings.protocol, settings.train, settings.purify)
    return area_report(sweep, echo(args, settings))


def cmd_sweep_images(args, settings, out):
    _, dataset, _ = load_data(args, settings)
    sweep = sweep_images_per_class(dataset, args.m, settings.protocol, settings.train, settings.purify)
    return images_report(sweep, echo(args, settings))


def cmd_confusion(args, settings, out):
    catalog, dataset, _ = load_data(args, settings)
    if catalog is None:
        raise InvalidConfig('the confusion matrix needs --catalog')
    rng = np.random.default_rng([settings.protocol.seed, 0, 0])
    train_idx, test_idx = stratified_split(dataset, settings.protocol.test_fraction, rng)
    train_set, test_set = dataset.subset(train_idx), dataset.subset(test_idx)
    if settings.protocol.purify:
        train_set = purify_dataset(train_set, settings.purify).dataset
        test_set = test_set.restrict(train_set.classes)
    model = train_region_model(train_set, settings.train, 'all')
    confusion = confusion_by_category(model, test_set, catalog, args.mode)
    return confusion_report(confusion, echo(args, settings), {'test_images': len(test_set)})


def cmd_wild(args, settings, out):
    context = settings.context.replace(radius_m = args.radius)
    wild = settings.wild.replace(n_queries = args.queries)
    catalog, dataset, truth = generate_synthetic(settings.synth)
    tiling = tile_area(catalog.bbox(), args.region_size or settings.protocol.region_size_m, args.overlap)
    if settings.protocol.purify:
        dataset = purify_dataset(dataset, settings.purify, settings.protocol.max_workers).dataset
    models = train_region_models(tiling, catalog, dataset, settings.train, settings.protocol.max_workers)
    report = simulate_wild(catalog, models, tiling, truth, wild, context)
    resolved = dataclasses.replace(settings, context = context, wild = wild)
    return context_report(report, {**echo(args, resolved), 'regions': len(tiling), 'models': len(models)})


def cmd_sources(args, settings, out):
    if args.features:
        _, dataset, _ = load_data(args, settings)
        datasets = split_by_source(dataset)
    else:
        datasets = {}
        for source, preset in (('flickr', 'curated'), ('google', 'mixed')):
            _, datasets[source], _ = generate_synthetic(settings.synth.with_preset(preset, source = source))
    results = compare_sources(datasets, settings.protocol, settings.train, settings.purify)
    sizes = {s: (len(d.classes), len(d)) for s, d in datasets.items()}
    return sources_report(results, sizes, echo(args, settings))


def cmd_serve(args, settings, out):
    registry = RegistryConfig.from_env(settings.registry).replace(
        listen = args.listen, data_dir = args.data_dir, tiling_path = args.tiling, retention = args.retention)
    if not registry.tiling_path:
        raise InvalidConfig('serve needs --tiling or SIGHTLINE_TILING')
    store = RegistryStore(load_tiling(registry.tiling_path), registry.data_dir, registry.retention)
    server = RegistryServer(store, registry.address, backend_flag = args.backend, max_worker = registry.max_worker,
                            keep_alive_timeout = registry.keep_alive_timeout)
    server.run()


def cmd_publish(args, settings, out):
    blob = pathlib.Path(args.model).read_bytes()
    region = args.region or deserialize_model(blob).region_id
    with RegistryClient(parse_address(args.server)) as client:
        manifest = client.publish(region, blob)
    print(json.dumps(manifest.to_dict(), sort_keys = True))


def cmd_fetch(args, settings, out):
    with RegistryClient(parse_address(args.server)) as client:
        region = args.region
        if region is None:
            if args.lat is None or args.lon is None:
                raise InvalidConfig('fetch needs --region or --lat and --lon')
            region = client.lookup(args.lat, args.lon).region_id
        manifest, blob = client.fetch(region, args.version, args.if_hash)
    if blob is not None:
        atomic_write(out / f'{manifest.region_id}-v{manifest.version}.grm', blob)
    print(json.dumps({**manifest.to_dict(), 'not_modified': blob is None}, sort_keys = True))


COMMANDS = {
    'ingest': cmd_ingest, 'generate': cmd_generate, 'tile': cmd_tile, 'purify': cmd_purify, 'train': cmd_train,
    'eval': cmd_eval, 'sweep-area': cmd_sweep_area, 'sweep-images': cmd_sweep_images, 'confusion': cmd_confusion,
    'wild': cmd_wild, 'sources': cmd_sources, 'serve': cmd_serve, 'publish': cmd_publish, 'fetch': cmd_fetch,
}


def main(argv = None) -> int:
    args = parser.parse_args(argv)
    if args.debug:
        logging.basicConfig(level = 'DEBUG')
    elif args.verbose:
        logging.basicConfig(level = 'INFO')
        logging.info('Verbose enabled')

    out = pathlib.Path(args.out)
    try:
        settings = resolve_settings(args)
        report = COMMANDS[args.command](args, settings, out)
        if report is not None:
            report.write(out)
            print(f'{report.protocol} report written to {out}')
    except (SightlineError, OSError) as e:
        print(f'sightline {args.command}: {type(e).__name__}: {e}', file = sys.stderr)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
