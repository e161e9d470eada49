"""Command-line interface: generate, train, search, eval and report."""

import logging
from dataclasses import replace
from pathlib import Path
from typing import Optional, Tuple

import click
from rich.console import Console
from rich.logging import RichHandler

from fre_seg.config import RunConfig, load_config
from fre_seg.errors import ConfigError, FreSegError
from fre_seg.exporters import get_csv_exporter, get_json_exporter, get_terminal_exporter
from fre_seg.exporters.csv_export import write_table
from fre_seg.metrics import format_table
from fre_seg.models import ModelVariant
from fre_seg.network import build, load_checkpoint
from fre_seg.reporting import (
    BEST_CONFIG_FILE,
    CONFIG_FILE,
    METRICS_FILE,
    SCATTER_FILE,
    STATS_FILE,
    SUMMARY_FILE,
    TRIALS_FILE,
    RunArtifacts,
    build_report,
    metrics_to_dict,
    run_summary,
    write_scatter,
)
from fre_seg.training import evaluate, load_best, train

logger = logging.getLogger("fre_seg")

SEARCH_VARIANTS = {"fre": ModelVariant.FRE, "supervision": ModelVariant.SUPERVISION}


def setup_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logger.setLevel(level)
    if not any(isinstance(h, RichHandler) for h in logger.handlers):
        logger.addHandler(RichHandler(console=Console(stderr=True), show_path=False))


def _load(config: Optional[str], overrides: Tuple[str, ...], out: Optional[str]) -> Tuple[RunConfig, Path]:
    cfg = load_config(config, overrides)
    if out is not None:
        cfg = replace(cfg, output_dir=out)
    return cfg, Path(cfg.output_dir)


def _write_config(cfg: RunConfig, out: Path, resume: bool = False) -> None:
    """Echo the resolved config; a resumed run must use the config it started with."""
    path = out / CONFIG_FILE
    if resume and path.exists():
        previous = load_config(path)
        if previous.to_dict() != cfg.to_dict():
            raise ConfigError("config", f"resolved config differs from {path}; refusing to resume")
    JSONExporter = get_json_exporter()
    JSONExporter(path).export(cfg.to_dict())


config_option = click.option(
    "-c", "--config",
    type=click.Path(exists=True, dir_okay=False),
    help="JSON run configuration file.",
)
set_option = click.option(
    "-s", "--set", "overrides",
    multiple=True,
    metavar="KEY=VALUE",
    help="Override a config value, e.g. --set fre.B=162 --set train.epochs=200.",
)
out_option = click.option(
    "-o", "--out",
    type=click.Path(file_okay=False),
    help="Output directory (defaults to output_dir from the config).",
)


@click.group()
@click.option("-v", "--verbose", is_flag=True, default=False, help="Log per-batch detail.")
@click.option("-q", "--quiet", is_flag=True, default=False, help="Only log warnings and errors.")
@click.version_option(package_name="fre-seg")
def main(verbose: bool, quiet: bool):
    """
    Train and compare U-Nets with Feature Random Enhancement.

    Examples:

    \b
    # Materialize the synthetic dataset
    fre-seg generate -c run.json -o data/synthetic

    \b
    # Train the FRE variant with B=162, X=632
    fre-seg train -c run.json --set model.variant=fre --set fre.B=162 --set fre.X=632

    \b
    # Search B and X with TPE, 50 trials
    fre-seg search -c run.json --set model.variant=fre --set search.n_trials=50

    \b
    # Compare the five variants
    fre-seg report runs/baseline runs/no_deep runs/supervision runs/dropout runs/fre -o report
    """
    setup_logging(verbose, quiet)


@main.command()
@config_option
@set_option
@out_option
def generate(config: Optional[str], overrides: Tuple[str, ...], out: Optional[str]):
    """Write the configured synthetic dataset as a PNG dataset directory."""
    from fre_seg.sources import SyntheticSource, save_dataset

    try:
        cfg = load_config(config, overrides)
        if cfg.data.path is not None:
            raise ConfigError("data.path", "generate needs a synthetic data section, not a dataset path")
        target = Path(out) if out else Path(cfg.output_dir) / "data"
        splits = SyntheticSource(cfg.data.synthetic, cfg.data.n).load()
        save_dataset(splits, target)
        sizes = splits.sizes()
        click.echo(f"Wrote {sum(sizes.values())} images to {target} ({sizes})", err=True)
    except (FreSegError, OSError) as e:
        raise click.ClickException(str(e))


@main.command(name="train")
@config_option
@set_option
@out_option
@click.option("--resume", is_flag=True, default=False, help="Continue from last.npz in the output directory.")
def train_command(config: Optional[str], overrides: Tuple[str, ...], out: Optional[str], resume: bool):
    """Train one network and write checkpoints, metric CSVs and a summary."""
    try:
        cfg, out_dir = _load(config, overrides, out)
        splits = cfg.data.load(cfg.model.classes)
        click.echo(f"Training {cfg.model.variant.display_name} on {splits.sizes()}", err=True)

        net = build(cfg.model)
        _write_config(cfg, out_dir, resume)
        result = train(net, splits, cfg.train, out_dir=out_dir, resume=resume)
        load_best(net, result)
        test_metrics = evaluate(net, splits.test, cfg.train.batch_size) if splits.test else None

        class_names = cfg.class_names
        CSVExporter = get_csv_exporter()
        CSVExporter(out_dir / METRICS_FILE).export_history(result.history, class_names)
        CSVExporter(out_dir / STATS_FILE).export_stats(result.stats)
        JSONExporter = get_json_exporter()
        summary = run_summary(cfg, result, class_names, test_metrics, net.num_parameters())
        JSONExporter(out_dir / SUMMARY_FILE).export(summary)

        shown = test_metrics or result.best_val_metrics
        TerminalExporter = get_terminal_exporter()
        terminal = TerminalExporter()
        terminal.export(
            format_table([(cfg.model.variant.display_name, shown)], class_names),
            title="Test split" if test_metrics else "Validation split",
        )
        items = [("Best epoch", str(result.best_epoch)), ("Best val mIoU", f"{result.best_val_miou:.4f}")]
        if cfg.model.fre.active:
            items.append(("FRE", f"B={cfg.model.fre.B}, X={cfg.model.fre.X:g}, mode={cfg.model.fre.mode.value}"))
        if cfg.model.dropout_rate is not None:
            items.append(("Dropout rate", f"{cfg.model.dropout_rate:.4f}"))
        if cfg.model.supervision is not None:
            items.append(("Lambda", f"{cfg.model.supervision.lam:g}"))
        terminal.summary(items)
        click.echo(f"Wrote run to {out_dir}", err=True)
    except (FreSegError, OSError) as e:
        raise click.ClickException(str(e))


@main.command()
@config_option
@set_option
@out_option
@click.option("-n", "--trials", type=int, help="Total number of trials (overrides search.n_trials).")
def search(config: Optional[str], overrides: Tuple[str, ...], out: Optional[str], trials: Optional[int]):
    """Search FRE (B, X) or the supervision lambda with TPE; resumes from trials.jsonl."""
    from fre_seg.search import run_search

    try:
        cfg, out_dir = _load(config, overrides, out)
        if trials is not None:
            cfg = replace(cfg, search=replace(cfg.search, n_trials=trials))
            cfg.search.validate(cfg.model)
        wanted = SEARCH_VARIANTS[cfg.search.target]
        if cfg.model.variant is not wanted:
            raise ConfigError(
                "search.target", f"searching {cfg.search.target} needs model.variant={wanted.value}"
            )
        space = cfg.search.resolved_space(cfg.model)
        splits = cfg.data.load(cfg.model.classes)
        epochs = cfg.search.epochs or cfg.train.epochs

        def objective(params, seed: int) -> float:
            trial = cfg.with_params(params, seed)
            trial.model.validate()
            net = build(trial.model)
            tc = replace(trial.train, epochs=epochs, stat_hooks=())
            return train(net, splits, tc).best_val_miou

        _write_config(cfg, out_dir)
        result = run_search(space, objective, cfg.search.n_trials, seed=cfg.search.seed,
                            history_path=out_dir / TRIALS_FILE, cfg=cfg.search.tpe)
        if result.best is None:
            raise click.ClickException("every trial failed; see the log for details")

        write_scatter(out_dir / SCATTER_FILE, [RunArtifacts(out_dir, trials=result.history)])
        best_cfg = cfg.with_params(result.best.params, result.best.seed)
        best_cfg = replace(best_cfg, output_dir=str(out_dir / "best_run"))
        JSONExporter = get_json_exporter()
        JSONExporter(out_dir / BEST_CONFIG_FILE).export(best_cfg.to_dict())

        ranked = sorted((t for t in result.history if t.done), key=lambda t: (-t.objective, t.index))[:10]
        table = [["Trial"] + space.names + ["mIoU[%]"]]
        for t in ranked:
            table.append([str(t.index)] + [f"{t.params[n]:g}" for n in space.names] + [f"{100 * t.objective:.2f}"])
        TerminalExporter = get_terminal_exporter()
        TerminalExporter().export(table, title=f"TPE search ({len(result.history)} trials)")
        click.echo(f"Best trial {result.best.index}: {result.best.params}; config in {out_dir / BEST_CONFIG_FILE}",
                   err=True)
    except (FreSegError, OSError) as e:
        raise click.ClickException(str(e))


@main.command(name="eval")
@click.option("-k", "--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Checkpoint (.npz) to evaluate.")
@click.option("-d", "--data", type=click.Path(exists=True, file_okay=False), help="PNG dataset directory.")
@config_option
@set_option
@click.option("--split", type=click.Choice(["train", "val", "test"]), default="test", show_default=True)
@click.option("-b", "--batch-size", type=int, help="Evaluation batch size (defaults to the training batch size).")
@out_option
def eval_command(checkpoint: str, data: Optional[str], config: Optional[str], overrides: Tuple[str, ...],
                 split: str, batch_size: Optional[int], out: Optional[str]):
    """Evaluate a checkpoint with the eval-phase forward and write the IoU table."""
    from fre_seg.sources import load_dataset

    try:
        ckpt = load_checkpoint(checkpoint)
        net = ckpt.network
        classes = net.cfg.classes
        if data:
            splits = load_dataset(data, classes)
            class_names = tuple(f"class{c}" for c in range(classes))
        else:
            cfg = load_config(config, overrides)
            if cfg.model.classes != classes:
                raise ConfigError(
                    "model.classes", f"checkpoint has {classes} classes, dataset config has {cfg.model.classes}"
                )
            splits = cfg.data.load(classes)
            class_names = cfg.class_names

        samples = splits.get(split)
        if not samples:
            raise ConfigError("split", f"the {split} split is empty")
        metrics = evaluate(net, samples, batch_size or ckpt.meta.get("batch_size", 4))

        table = format_table([(net.cfg.variant.display_name, metrics)], class_names)
        out_dir = Path(out) if out else Path(checkpoint).parent
        write_table(out_dir / f"eval_{split}.csv", table)
        JSONExporter = get_json_exporter()
        JSONExporter(out_dir / f"eval_{split}.json").export(
            {"checkpoint": str(checkpoint), "split": split, "class_names": list(class_names),
             "metrics": metrics_to_dict(metrics)}
        )
        TerminalExporter = get_terminal_exporter()
        TerminalExporter().export(table, title=f"{split} split")
        click.echo(f"mIoU {metrics.mean_iou!r}", err=True)
    except (FreSegError, OSError) as e:
        raise click.ClickException(str(e))


@main.command()
@click.argument("runs", nargs=-1, required=True, type=click.Path())
@click.option("-o", "--out", type=click.Path(file_okay=False), default="report", show_default=True,
              help="Directory for the report files.")
@click.option("--xlsx", is_flag=True, default=False, help="Also write comparison.xlsx.")
def report(runs: Tuple[str, ...], out: str, xlsx: bool):
    """Compare finished runs and emit plot-ready CSVs; run directories are only read."""
    try:
        result = build_report(runs, out, xlsx=xlsx)
        if result.comparison:
            TerminalExporter = get_terminal_exporter()
            TerminalExporter().export(result.comparison, title="Comparison")
        for path in result.written:
            click.echo(f"Wrote {path}", err=True)
    except (FreSegError, OSError) as e:
        raise click.ClickException(str(e))


if __name__ == "__main__":
    main()
