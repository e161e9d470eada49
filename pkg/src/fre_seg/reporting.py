"""Run summaries and the cross-run report: comparison tables and plot-ready CSVs."""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from fre_seg.errors import MissingArtifactsError
from fre_seg.exporters.csv_export import CSVExporter, read_stats, write_table
from fre_seg.exporters.json_export import read_json
from fre_seg.metrics import SegMetrics, format_table
from fre_seg.models import DEFAULT_FIXED_CHANNELS, ActivationStat, FREMode, ModelVariant, TrialRecord
from fre_seg.search import read_history

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.json"
SUMMARY_FILE = "summary.json"
METRICS_FILE = "metrics.csv"
STATS_FILE = "activation_stats.csv"
TRIALS_FILE = "trials.jsonl"
BEST_CONFIG_FILE = "best_config.json"
SCATTER_FILE = "tpe_scatter.csv"

COMPARISON_FILE = "comparison.csv"
COMPARISON_XLSX = "comparison.xlsx"
MEANS_FILE = "activation_means.csv"
CHANNEL_SUMS_FILE = "channel_sums.csv"

MEANS_FIELDS = ("run", "epoch", "site", "mean")
CHANNEL_SUM_FIELDS = ("run", "epoch", "series", "value")
CHANNEL_SERIES = ("no_module", "enhanced", "non_enhanced")


def metrics_to_dict(metrics: Optional[SegMetrics]) -> Optional[Dict[str, Any]]:
    if metrics is None:
        return None
    return {
        "per_class_iou": list(metrics.per_class_iou),
        "mean_iou": metrics.mean_iou,
        "pixel_accuracy": metrics.pixel_accuracy,
    }


def metrics_from_dict(data: Dict[str, Any]) -> SegMetrics:
    return SegMetrics(tuple(data["per_class_iou"]), data["mean_iou"], data.get("pixel_accuracy", 0.0))


def run_summary(
    cfg,
    result,
    class_names: Sequence[str],
    test_metrics: Optional[SegMetrics],
    num_parameters: int,
) -> Dict[str, Any]:
    """summary.json content for one training run."""
    model = cfg.model
    return {
        "variant": model.variant.value,
        "label": model.variant.display_name,
        "class_names": list(class_names),
        "fre": model.fre.to_dict(),
        "dropout_rate": model.dropout_rate,
        "supervision": model.supervision.to_dict() if model.supervision else None,
        "epochs": result.epochs_run,
        "best_epoch": result.best_epoch,
        "best_val_miou": result.best_val_miou,
        "val": metrics_to_dict(result.best_val_metrics),
        "test": metrics_to_dict(test_metrics),
        "num_parameters": num_parameters,
    }


@dataclass
class RunArtifacts:
    """What one run directory contributes to a report."""

    path: Path
    summary: Optional[Dict[str, Any]] = None
    stats: List[ActivationStat] = field(default_factory=list)
    trials: List[TrialRecord] = field(default_factory=list)

    @property
    def name(self) -> str:
        return self.path.name

    @property
    def is_search(self) -> bool:
        return self.summary is None

    @property
    def variant(self) -> Optional[ModelVariant]:
        return ModelVariant(self.summary["variant"]) if self.summary else None

    @property
    def enhanced_channels(self) -> Optional[Tuple[int, ...]]:
        """Fixed FRE channels of a fixed-list run, else None."""
        if not self.summary or self.summary["fre"].get("mode") != FREMode.FIXED.value:
            return None
        fixed = self.summary["fre"].get("fixed_channels")
        return tuple(fixed) if fixed is not None else DEFAULT_FIXED_CHANNELS


def collect_runs(directories: Sequence[Union[str, Path]]) -> List[RunArtifacts]:
    """
    Read every run directory without modifying it.

    Training runs need summary.json and activation_stats.csv, search runs need
    trials.jsonl; every absent file across all directories is reported at once.
    """
    missing: List[str] = []
    runs: List[RunArtifacts] = []
    for directory in map(Path, directories):
        if not directory.is_dir():
            missing.append(str(directory))
            continue
        if (directory / TRIALS_FILE).exists():
            runs.append(RunArtifacts(directory, trials=read_history(directory / TRIALS_FILE)))
            continue
        absent = [str(directory / name) for name in (SUMMARY_FILE, STATS_FILE) if not (directory / name).exists()]
        if absent:
            missing.extend(absent)
            continue
        runs.append(RunArtifacts(directory, summary=read_json(directory / SUMMARY_FILE),
                                 stats=read_stats(directory / STATS_FILE)))
    if missing:
        raise MissingArtifactsError(missing)
    return runs


def _variant_order(run: RunArtifacts) -> int:
    return list(ModelVariant).index(run.variant)


def comparison_table(runs: Sequence[RunArtifacts]) -> List[List[str]]:
    """Class IoU [%] and mIoU [%] per run, test split when available, rows in variant order."""
    training = sorted((r for r in runs if not r.is_search), key=_variant_order)
    if not training:
        return []
    class_names = training[0].summary["class_names"]
    labels = [r.summary["label"] for r in training]
    rows = []
    for run, label in zip(training, labels):
        if labels.count(label) > 1:
            label = f"{label} ({run.name})"
        metrics = run.summary.get("test") or run.summary["val"]
        rows.append((label, metrics_from_dict(metrics)))
    return format_table(rows, class_names)


def activation_means(runs: Sequence[RunArtifacts]) -> List[Dict[str, Any]]:
    """Bottleneck and skip mean activation, one row per run, epoch and site."""
    rows = []
    for run in runs:
        for stat in run.stats:
            if stat.statistic == "mean":
                rows.append({"run": run.name, "epoch": stat.epoch, "site": stat.site, "mean": repr(stat.value)})
    return rows


def _mean_channel_sum(stats: Sequence[ActivationStat], channels) -> Dict[int, float]:
    per_epoch: Dict[int, List[float]] = defaultdict(list)
    wanted = set(channels)
    for stat in stats:
        if stat.statistic == "sum" and stat.channel is not None and stat.channel in wanted:
            per_epoch[stat.epoch].append(stat.value)
    return {epoch: float(np.mean(values)) for epoch, values in sorted(per_epoch.items())}


def channel_sums(runs: Sequence[RunArtifacts]) -> List[Dict[str, Any]]:
    """
    Per-channel feature-map sums averaged over channel groups, per epoch.

    A fixed-list FRE run yields the "enhanced" series (its fixed channels) and
    the "non_enhanced" series (the other recorded channels). Every run without
    FRE yields "no_module" over the same fixed channels.
    """
    fixed_runs = [r for r in runs if r.enhanced_channels is not None]
    reference = fixed_runs[0].enhanced_channels if fixed_runs else DEFAULT_FIXED_CHANNELS
    rows = []
    for run in runs:
        if run.is_search:
            continue
        enhanced = run.enhanced_channels
        if enhanced is not None:
            recorded = {s.channel for s in run.stats if s.channel is not None}
            groups = {"enhanced": enhanced, "non_enhanced": sorted(recorded - set(enhanced))}
        elif run.variant is not ModelVariant.FRE and run.variant is not ModelVariant.NO_DEEP_LAYERS:
            groups = {"no_module": reference}
        else:
            continue
        for series, channels in groups.items():
            for epoch, value in _mean_channel_sum(run.stats, channels).items():
                rows.append({"run": run.name, "epoch": epoch, "series": series, "value": repr(value)})
    if fixed_runs and not any(row["series"] == "no_module" for row in rows):
        logger.warning("no run without FRE in the report; the no_module series is empty")
    return rows


def scatter_rows(runs: Sequence[RunArtifacts]) -> Tuple[List[str], List[Dict[str, Any]]]:
    """TPE scatter: run, trial, searched values, miou for every completed trial."""
    names: List[str] = []
    rows = []
    for run in runs:
        for trial in run.trials:
            if not trial.done:
                continue
            for name in trial.params:
                if name not in names:
                    names.append(name)
            row = {"run": run.name, "trial": trial.index, "miou": repr(float(trial.objective))}
            row.update({name: repr(float(value)) for name, value in trial.params.items()})
            rows.append(row)
    return ["run", "trial"] + names + ["miou"], rows


def write_scatter(path: Union[str, Path], runs: Sequence[RunArtifacts]) -> Path:
    """Write the TPE scatter of `runs`; the header is written even when no trial completed."""
    fields, rows = scatter_rows(runs)
    return CSVExporter(path).export(rows, fields)


@dataclass
class Report:
    comparison: List[List[str]]
    written: List[Path] = field(default_factory=list)


def build_report(directories: Sequence[Union[str, Path]], out_dir: Union[str, Path], xlsx: bool = False) -> Report:
    """Write comparison.csv, activation_means.csv, channel_sums.csv and tpe_scatter.csv into `out_dir`."""
    runs = collect_runs(directories)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = Report(comparison=comparison_table(runs))

    if report.comparison:
        report.written.append(write_table(out / COMPARISON_FILE, report.comparison))
        if xlsx:
            from fre_seg.exporters import get_xlsx_exporter

            XLSXExporter = get_xlsx_exporter()
            report.written.append(XLSXExporter(out / COMPARISON_XLSX).export([report.comparison], ["Comparison"]))
    report.written.append(CSVExporter(out / MEANS_FILE).export(activation_means(runs), MEANS_FIELDS))
    report.written.append(CSVExporter(out / CHANNEL_SUMS_FILE).export(channel_sums(runs), CHANNEL_SUM_FIELDS))

    if any(run.trials for run in runs):
        report.written.append(write_scatter(out / SCATTER_FILE, runs))
    logger.info("report over %d runs written to %s", len(runs), out)
    return report
