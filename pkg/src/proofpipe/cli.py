"""Operator entry points: formalize, filter, prove, iterate, eval, stats.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error. All commands
are resumable; partial progress is persisted per record. A store accepts one
command at a time (advisory lock file).
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path
from typing import Optional

import click

from .config import ConfigError, PipelineConfig
from .core import PipelineError
from .evaluate import (
    AttemptLedger,
    load_suite,
    report,
    run_benchmark,
    write_csv,
)
from .gateway import ProofSampler
from .pipeline import Pipeline, build_gateway, build_verifier, store_lock, _params
from .store import load_corpus

logger = logging.getLogger(__name__)


class _JsonFormatter(logging.Formatter):
    """One structured record per event for the log file."""

    def format(self, record: logging.LogRecord) -> str:
        return json.dumps(
            {
                "ts": record.created,
                "level": record.levelname,
                "logger": record.name,
                "msg": record.getMessage(),
            },
            sort_keys=True,
        )


def _setup_logging(config: PipelineConfig) -> None:
    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    log_path = config.path("run", "log_path")
    if log_path:
        log_path.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_path)
        file_handler.setFormatter(_JsonFormatter())
        handlers.append(file_handler)
    logging.basicConfig(level=logging.INFO, handlers=handlers, force=True)


def _load_config(
    config_path: Optional[str],
    corpus: Optional[str],
    store: Optional[str],
    backend: Optional[str],
    mock_script: Optional[str],
) -> PipelineConfig:
    try:
        cfg = PipelineConfig.from_file(config_path) if config_path else PipelineConfig({})
        overrides: dict = {}
        if corpus:
            overrides["iteration.corpus"] = str(Path(corpus).resolve())
        if store:
            overrides["store.dir"] = str(Path(store).resolve())
        if backend:
            overrides["backend.endpoint"] = backend
            overrides["backend.kind"] = "http"
        if mock_script:
            overrides["backend.mock_script"] = str(Path(mock_script).resolve())
            overrides["backend.kind"] = "mock"
        cfg = cfg.override(overrides)
        _setup_logging(cfg)
        return cfg
    except ConfigError as exc:
        raise click.UsageError(str(exc)) from exc


def _require_corpus(config: PipelineConfig) -> list:
    corpus_path = config.path("iteration", "corpus")
    if corpus_path is None or not corpus_path.exists():
        raise click.UsageError(f"corpus file not found: {corpus_path}")
    try:
        return load_corpus(corpus_path)
    except PipelineError as exc:
        raise click.UsageError(str(exc)) from exc


def _check_resume(pipeline: Pipeline, iteration: int, resume: bool) -> None:
    if pipeline._iteration_records(iteration) and not resume:
        raise click.ClickException(
            f"store already holds records for iteration {iteration}; "
            "pass --resume to continue it"
        )


def _print_counts(counts: dict) -> None:
    for key, value in counts.items():
        click.echo(f"{key:>26}: {value}")


def _dry_run_plan(config: PipelineConfig, stages: list[str]) -> None:
    corpus_path = config.path("iteration", "corpus")
    count = len(load_corpus(corpus_path)) if corpus_path and corpus_path.exists() else 0
    click.echo("dry run; no side effects")
    click.echo(f"backend: {config['backend']['kind']} {config['backend']['endpoint']}")
    click.echo(f"store: {config.path('store', 'dir')}")
    click.echo(f"corpus: {corpus_path} ({count} problems)")
    click.echo(f"stages: {' -> '.join(stages)}")


def _run_stages(config: PipelineConfig, stages: list[str], resume: bool) -> None:
    corpus = _require_corpus(config)
    try:
        with store_lock(config.path("store", "dir")):
            with Pipeline(config) as pipeline:
                iteration = len(pipeline.manifests.all())
                _check_resume(pipeline, iteration, resume)
                if "formalize" in stages:
                    pipeline._stage_formalize(corpus, iteration)
                if "score" in stages:
                    pipeline._stage_score(iteration)
                if "filter" in stages:
                    pipeline._stage_filter(iteration)
                if "prove" in stages:
                    pipeline._stage_prove(iteration)
                _print_counts(pipeline.stage_counts(iteration, len(corpus)))
    except click.ClickException:
        raise
    except PipelineError as exc:
        raise click.ClickException(str(exc)) from exc


def _common_options(fn):
    for option in reversed(
        [
            click.option("--config", "config_path", type=click.Path(), default=None,
                         help="Path to the JSON config file."),
            click.option("--corpus", type=click.Path(), default=None,
                         help="Informal problem corpus (JSONL)."),
            click.option("--store", type=click.Path(), default=None,
                         help="Store directory (records, pairs, manifests)."),
            click.option("--backend", default=None,
                         help="HTTP completion endpoint (sets backend.kind=http)."),
            click.option("--mock-script", type=click.Path(), default=None,
                         help="Scripted mock backend (sets backend.kind=mock)."),
            click.option("--dry-run", is_flag=True,
                         help="Print the execution plan without side effects."),
            click.option("--resume", is_flag=True,
                         help="Continue an interrupted run against the same store."),
        ]
    ):
        fn = option(fn)
    return fn


@click.group()
@click.version_option(package_name="proofpipe")
def main() -> None:
    """Synthetic theorem-proving data pipeline."""


@main.command()
@_common_options
def formalize(config_path, corpus, store, backend, mock_script, dry_run, resume):
    """Autoformalize the corpus into statement records."""
    config = _load_config(config_path, corpus, store, backend, mock_script)
    if dry_run:
        _dry_run_plan(config, ["formalize"])
        return
    _run_stages(config, ["formalize"], resume)


@main.command("filter")
@_common_options
@click.option("--false-budget", type=click.IntRange(min=0), default=None,
              help="Proof attempts for the False-conclusion probe (0 disables).")
def filter_cmd(config_path, corpus, store, backend, mock_script, dry_run, resume,
               false_budget):
    """Score statements, apply the quality gate and hypothesis rejection."""
    config = _load_config(config_path, corpus, store, backend, mock_script)
    if false_budget is not None:
        config = config.override({"filter.false_proof_budget": false_budget})
    if dry_run:
        _dry_run_plan(config, ["score", "filter"])
        return
    _run_stages(config, ["score", "filter"], resume)


@main.command()
@_common_options
@click.option("-k", "--budget", type=click.IntRange(min=1), default=None,
              help="Per-stream attempt budget for the dual search.")
def prove(config_path, corpus, store, backend, mock_script, dry_run, resume, budget):
    """Run the dual statement/negation proof search over queued records."""
    config = _load_config(config_path, corpus, store, backend, mock_script)
    if budget is not None:
        config = config.override({"search.k": budget})
    if dry_run:
        _dry_run_plan(config, ["prove"])
        return
    _run_stages(config, ["prove"], resume)


@main.command()
@_common_options
@click.option("--iterations", type=click.IntRange(min=1), default=None,
              help="Total number of iterations to reach (default from config).")
def iterate(config_path, corpus, store, backend, mock_script, dry_run, resume,
            iterations):
    """Run full iterations (formalize, filter, prove, manifest, export)."""
    config = _load_config(config_path, corpus, store, backend, mock_script)
    if iterations is not None:
        config = config.override({"iteration.max_iterations": iterations})
    if dry_run:
        _dry_run_plan(config, ["formalize", "score", "filter", "prove", "manifest"])
        return
    corpus_data = _require_corpus(config)
    max_iterations = config["iteration"]["max_iterations"]
    try:
        with store_lock(config.path("store", "dir")):
            with Pipeline(config) as pipeline:
                _check_resume(pipeline, len(pipeline.manifests.all()), resume)
                while len(pipeline.manifests.all()) < max_iterations:
                    from .store import should_stop

                    done = pipeline.manifests.all()
                    if should_stop(
                        done,
                        config["iteration"]["epsilon_score"],
                        config["iteration"]["epsilon_data"],
                    ):
                        click.echo("stopping rule fired; no further iterations")
                        break
                    iteration = len(done)
                    manifest = pipeline.run_iteration(iteration, corpus=corpus_data)
                    exports = pipeline.store_dir / "exports"
                    exports.mkdir(exist_ok=True)
                    count = pipeline.export(
                        iteration, exports / f"train_iter{iteration}.jsonl"
                    )
                    click.echo(f"iteration {iteration}: {count} pairs exported")
                    _print_counts(manifest.stage_counts)
                    click.echo(f"{'new_pairs':>26}: {manifest.new_pairs}")
                    click.echo(f"{'cumulative_pairs':>26}: {manifest.cumulative_pairs}")
    except click.ClickException:
        raise
    except PipelineError as exc:
        raise click.ClickException(str(exc)) from exc


@main.command()
@_common_options
@click.option("--suite", type=click.Path(), required=True,
              help="Suite manifest (JSONL of {id, statement|path, split}).")
@click.option("--split", default=None, help="Evaluate only this split.")
@click.option("-n", "--samples", type=click.IntRange(min=1), default=1,
              help="Proof samples per problem.")
@click.option("--k", "k_list", default="1",
              help="Comma-separated k values for pass@k rows.")
@click.option("--ledger", "ledger_path", type=click.Path(), default=None,
              help="Attempt ledger to create or resume.")
@click.option("--run-id", default="run0", help="Run tag inside the ledger.")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Directory for report.txt / report.csv.")
def eval(config_path, corpus, store, backend, mock_script, dry_run, resume,
         suite, split, samples, k_list, ledger_path, run_id, out_dir):
    """Run a benchmark suite and report pass@k / cumulative rates."""
    config = _load_config(config_path, corpus, store, backend, mock_script)
    try:
        ks = sorted({int(k.strip()) for k in k_list.split(",") if k.strip()})
    except ValueError as exc:
        raise click.UsageError(f"bad --k list: {k_list!r}") from exc
    if not ks or any(k < 1 for k in ks):
        raise click.UsageError(f"--k values must be >= 1: {k_list!r}")
    suite_path = Path(suite)
    if not suite_path.exists():
        raise click.UsageError(f"suite manifest not found: {suite_path}")
    try:
        problems = load_suite(suite_path)
    except (PipelineError, OSError, json.JSONDecodeError) as exc:
        raise click.UsageError(f"cannot load suite: {exc}") from exc
    if split:
        problems = [p for p in problems if p.split == split]
    if dry_run:
        click.echo("dry run; no side effects")
        click.echo(f"suite: {suite_path} ({len(problems)} problems), ks={ks}")
        return
    try:
        gateway = build_gateway(config)
        prover = ProofSampler(gateway, _params(config["sampling"]["prove"]))
        ledger = None
        if ledger_path and Path(ledger_path).exists() and resume:
            ledger = AttemptLedger.load(ledger_path)
        with build_verifier(config) as verifier:
            ledger = run_benchmark(
                problems,
                samples,
                prover,
                verifier,
                ledger=ledger,
                run_id=run_id,
                workers=config["run"]["workers"],
                per_attempt_timeout=config["search"]["per_attempt_timeout_s"],
            )
        if ledger_path:
            ledger.save(ledger_path)
        table, rows = report([ledger], ks)
        click.echo(table, nl=False)
        if out_dir:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            (out / "report.txt").write_text(table, encoding="utf-8")
            write_csv(rows, ks, out / "report.csv")
    except click.ClickException:
        raise
    except PipelineError as exc:
        raise click.ClickException(str(exc)) from exc


@main.command()
@_common_options
def stats(config_path, corpus, store, backend, mock_script, dry_run, resume):
    """Print manifest funnels and verifier cache statistics."""
    config = _load_config(config_path, corpus, store, backend, mock_script)
    store_dir = config.path("store", "dir")
    manifests_path = store_dir / "manifests.jsonl" if store_dir else None
    if not manifests_path or not manifests_path.exists():
        click.echo("no manifests recorded")
        return
    with open(manifests_path, encoding="utf-8") as fh:
        header = fh.readline()
        for line in fh:
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            click.echo(f"iteration {entry['iteration']}:")
            _print_counts(entry["stage_counts"])
            click.echo(f"{'new_pairs':>26}: {entry['new_pairs']}")
            click.echo(f"{'cumulative_pairs':>26}: {entry['cumulative_pairs']}")
    cache_path = config.path("verifier", "cache_path")
    if cache_path and cache_path.exists():
        verdicts: dict[str, int] = {}
        with open(cache_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                verdicts[json.loads(line)["verdict"]] = (
                    verdicts.get(json.loads(line)["verdict"], 0) + 1
                )
        click.echo("verifier cache:")
        _print_counts(verdicts)


if __name__ == "__main__":
    main()
