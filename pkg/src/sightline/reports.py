"""JSON reports and one CSV table per experiment protocol. Output carries no timestamps"""
import json
import logging
import pathlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .harness import CVResult, ImagesSweep, AreaSweep, CategoryConfusion, WildReport
from .utility import PathLike, atomic_write, write_csv

SOURCES_CSV = 'fig5_sources.csv'
FILTER_CSV = 'fig6_filter.csv'
IMAGES_CSV = 'fig7_images.csv'
AREA_CSV = 'fig8_area.csv'
CONFUSION_CSV = 'table1_confusion.csv'
CONTEXT_CSV = 'fig10_context.csv'


@dataclass
class Table:
    header: tuple[str, ...]
    rows: list[tuple] = field(default_factory = list)


@dataclass
class ExperimentReport:
    """
    Result of one protocol run.\n
    :param config: echo of every setting the run used, enough to reproduce it
    :param tables: CSV file name to table
    """
    protocol: str
    config: dict
    metrics: dict
    tables: dict[str, Table] = field(default_factory = dict)

    def to_dict(self) -> dict:
        return {'protocol': self.protocol, 'config': self.config, 'metrics': self.metrics}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent = 2, sort_keys = True, allow_nan = False) + '\n'

    def write(self, out_dir: PathLike) -> list[pathlib.Path]:
        """Write <protocol>.json and every table into out_dir. Returns the written paths"""
        out_dir = pathlib.Path(out_dir)
        out_dir.mkdir(parents = True, exist_ok = True)
        paths = [out_dir / f'{self.protocol}.json']
        atomic_write(paths[0], self.to_json())
        for name, table in sorted(self.tables.items()):
            write_csv(out_dir / name, table.header, table.rows)
            paths.append(out_dir / name)
        logging.info(f'Wrote {self.protocol} report to {out_dir} ({", ".join(p.name for p in paths)})')
        return paths


def filter_report(results: Sequence[CVResult], config: dict) -> ExperimentReport:
    """Purification off/on comparison"""
    table = Table(('purify', 'mean_accuracy', 'std_accuracy', 'classes_removed_fraction',
                   'images_removed_fraction', 'excluded_test_images'))
    for r in results:
        table.rows.append((r.purify, r.mean, r.std, r.mean_removal('classes_removed_fraction'),
                           r.mean_removal('images_removed_fraction'),
                           sum(run.excluded_test_images for run in r.runs)))
    metrics = {'on' if r.purify else 'off': r.to_dict() for r in results}
    return ExperimentReport('eval', config, metrics, {FILTER_CSV: table})


def sources_report(results: Mapping[str, CVResult], sizes: Mapping[str, tuple[int, int]],
                   config: dict) -> ExperimentReport:
    """:param sizes: source to (sites, images)"""
    table = Table(('source', 'n_sites', 'n_images', 'mean_accuracy', 'std_accuracy'))
    for source in sorted(results):
        table.rows.append((source, *sizes[source], results[source].mean, results[source].std))
    metrics = {source: r.to_dict() for source, r in sorted(results.items())}
    return ExperimentReport('sources', config, metrics, {SOURCES_CSV: table})


def images_report(sweep: ImagesSweep, config: dict) -> ExperimentReport:
    table = Table(('m', 'mean_accuracy', 'std_accuracy'))
    table.rows.extend((m, r.mean, r.std) for m, r in sweep.points)
    return ExperimentReport('sweep_images', config, sweep.to_dict(), {IMAGES_CSV: table})


def area_report(sweep: AreaSweep, config: dict) -> ExperimentReport:
    table = Table((('radius_m' if sweep.kind == 'radius' else 'region_size_m'), 'regions_evaluated',
                   'regions_skipped', 'mean_sites_per_region', 'mean_accuracy'))
    for p in sweep.points:
        table.rows.append((p.size_m, len(p.region_accuracies), len(p.skipped), p.mean_sites, p.mean_accuracy))
    return ExperimentReport(f'sweep_area_{sweep.kind}', config, sweep.to_dict(), {AREA_CSV: table})


def confusion_report(confusion: CategoryConfusion, config: dict, extra: dict = None) -> ExperimentReport:
    table = Table(('input_category', 'n_images', *confusion.categories, 'p_correct_same_category'))
    for category in sorted(confusion.rows):
        row = confusion.rows[category]
        table.rows.append((category, confusion.counts[category], *(row[c] for c in confusion.categories),
                           confusion.same_category_correct[category]))
    metrics = {**confusion.to_dict(), 'top3': {c: confusion.top(c) for c in sorted(confusion.rows)}, **(extra or {})}
    return ExperimentReport('confusion', config, metrics, {CONFUSION_CSV: table})


def context_report(report: WildReport, config: dict) -> ExperimentReport:
    table = Table(('location', 'orientation', 'attention', 'accuracy', 'hits', 'n_queries', 'no_candidate',
                   'no_model'))
    for c in report.cells:
        table.rows.append((c.location, c.orientation, c.attention, c.accuracy, c.hits, c.n_queries,
                           c.no_candidate, c.no_model))
    return ExperimentReport('wild', config, report.to_dict(), {CONTEXT_CSV: table})


__all__ = ['SOURCES_CSV', 'FILTER_CSV', 'IMAGES_CSV', 'AREA_CSV', 'CONFUSION_CSV', 'CONTEXT_CSV', 'Table',
           'ExperimentReport', 'filter_report', 'sources_report', 'images_report', 'area_report',
           'confusion_report', 'context_report']
