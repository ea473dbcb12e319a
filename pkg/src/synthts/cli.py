"""Command-line interface.

Exit codes: 0 ok, 2 configuration error, 3 stage failure, 4 remote-backend
failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .backends import BackendError
from .core import DataError, load_dataset
from .metrics import ALL_METRICS, compute_report, normalize_and_rank
from .pipeline import (
    ConfigError,
    RunConfig,
    StageError,
    read_instances,
    run_pipeline,
    stage_decode,
    stage_embed,
    stage_encode,
    stage_evaluate,
    stage_finetune,
    stage_generate,
    stage_segment,
)

EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_REMOTE = 4


def _run(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ConfigError,) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except BackendError as exc:
        click.echo(f"remote backend error: {exc}", err=True)
        sys.exit(EXIT_REMOTE)
    except (StageError, DataError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_STAGE)


def _config(ctx_params: dict) -> RunConfig:
    cfg_path = ctx_params.pop("config", None)
    overrides = {k: v for k, v in ctx_params.items() if v is not None}
    if "metrics" in overrides:
        overrides["metrics"] = tuple(overrides["metrics"].split(","))
    try:
        if cfg_path:
            return RunConfig.from_json(cfg_path, **overrides)
        return RunConfig(**overrides)
    except (ConfigError, TypeError, DataError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)


def _common_options(fn):
    fn = click.option("--config", type=click.Path(exists=True), default=None,
                      help="JSON run config; flags override its fields.")(fn)
    fn = click.option("--input", "input_path", type=click.Path(), default=None)(fn)
    fn = click.option("--out", "out_dir", type=click.Path(), default=None)(fn)
    fn = click.option("--mode", type=click.Choice(["multisample", "univariate", "multivariate"]),
                      default=None)(fn)
    fn = click.option("--seed", type=int, default=None)(fn)
    return fn


@click.group()
def main():
    """Synthetic time-series generation pipeline."""


@main.command()
@_common_options
@click.option("--length", type=int, default=None, help="Window length L.")
@click.option("--instances", type=int, default=None, help="Window count I.")
@click.option("--period", default=None,
              help="'auto', an explicit integer, or 'none' to skip alignment.")
def segment(**params):
    """Estimate periodicity and extract windows."""
    period = params.get("period")
    if period is not None and period != "auto":
        params["period"] = None if period.lower() == "none" else int(period)
    cfg = _config(params)
    summary = _run(stage_segment, cfg)
    click.echo(json.dumps(summary))


@main.command()
@_common_options
@click.option("--method", type=click.Choice(["fpc", "fica"]), default=None)
@click.option("--k", type=int, default=None)
@click.option("--variance-target", type=float, default=None)
@click.option("--conditional/--no-conditional", default=None)
def embed(**params):
    """Fit the basis system and project windows to coefficients."""
    use_target = params.get("variance_target") is not None and params.get("k") is None
    cfg = _config(params)
    if use_target:
        cfg.k = None
    summary = _run(stage_embed, cfg)
    click.echo(json.dumps(summary))


@main.command()
@_common_options
@click.option("--precision", type=int, default=None)
def encode(**params):
    """Serialize the embedding table to fine-tune prompts."""
    cfg = _config(params)
    summary = _run(stage_encode, cfg)
    click.echo(json.dumps(summary))


@main.command()
@_common_options
@click.option("--backend", type=click.Choice(["reference", "remote"]), default=None)
@click.option("--remote-url", default=None)
def finetune(**params):
    """Fit the generation backend on the prompt corpus."""
    cfg = _config(params)
    summary = _run(stage_finetune, cfg)
    click.echo(json.dumps(summary))


@main.command()
@_common_options
@click.option("--backend", type=click.Choice(["reference", "remote"]), default=None)
@click.option("--remote-url", default=None)
@click.option("--count", "target_count", type=int, default=None)
@click.option("--temperature", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
def generate(**params):
    """Sample, filter, and persist generated embedding rows."""
    cfg = _config(params)
    summary = _run(stage_generate, cfg)
    click.echo(json.dumps(summary))


@main.command()
@_common_options
@click.option("--conditional/--no-conditional", default=None)
def decode(**params):
    """Reconstruct synthetic series from generated embeddings."""
    cfg = _config(params)
    summary = _run(stage_decode, cfg)
    click.echo(json.dumps(summary))


@main.command()
@click.option("--original", type=click.Path(exists=True), required=True,
              help="Directory of original instance CSVs.")
@click.option("--generated", type=click.Path(exists=True), required=True,
              help="Directory of generated instance CSVs.")
@click.option("--metrics", default=",".join(ALL_METRICS))
@click.option("--bins", type=int, default=None)
@click.option("--max-lag", type=int, default=None)
@click.option("--band", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(), default="report.json")
def evaluate(original, generated, metrics, bins, max_lag, band, out_path):
    """Score a generated set against the original set."""
    def go():
        orig = read_instances(original)
        gen = read_instances(generated)
        report = compute_report(
            orig, gen, tuple(metrics.split(",")),
            bins=bins, max_lag=max_lag, band=band,
        )
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2)
        return report.scores
    click.echo(json.dumps(_run(go)))


@main.command()
@click.option("--reports", type=click.Path(exists=True), multiple=True, required=True,
              help="model=report.json pairs are not needed; pass JSON files named "
                   "after their models.")
@click.option("--out", "out_path", type=click.Path(), default="comparison.csv")
def compare(reports, out_path):
    """Min-max normalize and rank multiple models' metric reports."""
    def go():
        raw = {}
        for path in reports:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
            raw[Path(path).stem] = doc["scores"]
        table = normalize_and_rank(raw)
        table.to_csv(out_path)
        return {"models": list(table.models), "average_rank": table.average_rank.tolist()}
    click.echo(json.dumps(_run(go)))


@main.command()
@_common_options
@click.option("--method", type=click.Choice(["fpc", "fica"]), default=None)
@click.option("--k", type=int, default=None)
@click.option("--backend", type=click.Choice(["reference", "remote"]), default=None)
@click.option("--remote-url", default=None)
@click.option("--count", "target_count", type=int, default=None)
@click.option("--length", type=int, default=None)
@click.option("--instances", type=int, default=None)
@click.option("--conditional/--no-conditional", default=None)
def run(**params):
    """Run the full pipeline and write a manifest."""
    cfg = _config(params)
    manifest = _run(run_pipeline, cfg)
    click.echo(json.dumps({name: s["summary"] for name, s in manifest["stages"].items()}))


if __name__ == "__main__":
    main()
