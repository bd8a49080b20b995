"""End-to-end iteration driver: formalize, filter, prove, account.

One iteration runs the whole funnel over the corpus against the backend
route configured for that iteration (retraining between iterations is
represented by a route swap). Every record is persisted as soon as its stage
completes, so an interrupted run resumes by skipping records already in
terminal states and reprocessing the rest; with a scripted backend the
resumed run is byte-identical to an uninterrupted one.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Optional

from .autoformalize import formalize
from .config import PipelineConfig
from .core import (
    InformalProblem,
    PipelineError,
    RecordState,
    StatementRecord,
    SYSTEM_CLOCK,
)
from .gateway import (
    BackendUnavailable,
    HttpBackend,
    MockBackend,
    ModelGateway,
    ProofSampler,
    RetryPolicy,
    SamplingParams,
)
from .quality import apply_score_gate, hypothesis_rejection, score
from .search import DualSearchConfig, dual_search, finalize
from .store import (
    IterationManifest,
    ManifestLog,
    PairStore,
    RecordStore,
    STAGE_COUNT_KEYS,
    export_training_file,
    load_corpus,
    should_stop,
)
from .verifier import ScriptedRunner, VerifierConfig, VerifierPool

logger = logging.getLogger(__name__)

ProgressHook = Callable[[str, Optional[StatementRecord]], None]


class LockHeld(PipelineError):
    """Another process holds the store's advisory lock."""


@contextmanager
def store_lock(store_dir: str | Path):
    """Advisory lock file; a second invocation against the store fails fast."""
    path = Path(store_dir) / ".lock"
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as exc:
        raise LockHeld(f"store locked by another run: {path}") from exc
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        try:
            os.unlink(path)
        except OSError:
            pass


def _params(section: dict) -> SamplingParams:
    return SamplingParams(
        temperature=section["temperature"],
        max_tokens=section["max_tokens"],
        n_samples=section["n_samples"],
        stop_sequences=tuple(section["stop"]),
    )


def build_gateway(config: PipelineConfig) -> ModelGateway:
    backend_cfg = config["backend"]
    if backend_cfg["kind"] == "mock":
        script = config.path("backend", "mock_script")
        backend = MockBackend.from_file(script) if script else MockBackend()
    else:
        backend = HttpBackend(
            endpoint=backend_cfg["endpoint"], token_env=backend_cfg["token_env"]
        )
    return ModelGateway(
        backend,
        retry=RetryPolicy(
            max_retries=backend_cfg["max_retries"],
            initial_delay=backend_cfg["initial_backoff_s"],
            multiplier=backend_cfg["backoff_multiplier"],
            jitter=backend_cfg["backoff_jitter"],
        ),
        max_in_flight=backend_cfg["max_in_flight"],
        max_requests=backend_cfg["max_requests"],
    )


def build_verifier(config: PipelineConfig) -> VerifierPool:
    vcfg = config["verifier"]
    cache_path = config.path("verifier", "cache_path")
    runner = None
    mock_script = config.path("verifier", "mock_script")
    if mock_script:
        runner = ScriptedRunner.from_file(mock_script)
    return VerifierPool(
        VerifierConfig(
            checker_command=tuple(vcfg["checker_command"]),
            pool_size=vcfg["pool_size"],
            timeout_s=vcfg["timeout_s"],
            toolchain_tag=vcfg["toolchain_tag"],
            mathlib_commit=vcfg["mathlib_commit"],
            cache_path=str(cache_path) if cache_path else None,
            env_passthrough=tuple(vcfg["env_passthrough"]),
        ),
        runner=runner,
    )


class Pipeline:
    """Wires config, stores and backends into runnable iterations."""

    def __init__(
        self,
        config: PipelineConfig,
        gateway: Optional[ModelGateway] = None,
        verifier: Optional[VerifierPool] = None,
        progress: Optional[ProgressHook] = None,
    ):
        self.config = config
        self.gateway = gateway or build_gateway(config)
        self.verifier = verifier or build_verifier(config)
        self.progress = progress
        self.deterministic = bool(config["run"]["deterministic"])
        # Deterministic runs are sequential so stores and audits are
        # reproducible byte for byte.
        self.workers = 1 if self.deterministic else max(1, config["run"]["workers"])
        self.clock = None if self.deterministic else SYSTEM_CLOCK

        store_dir = config.path("store", "dir")
        assert store_dir is not None
        store_dir.mkdir(parents=True, exist_ok=True)
        self.store_dir = store_dir
        self.records = RecordStore(store_dir / "records.jsonl").open()
        self.pairs = PairStore(store_dir / "pairs.jsonl").open()
        self.manifests = ManifestLog(store_dir / "manifests.jsonl").open()

    def close(self) -> None:
        self.records.close()
        self.pairs.close()
        self.manifests.close()
        self.verifier.stop()

    def __enter__(self) -> "Pipeline":
        self.verifier.start()
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    # -- helpers -----------------------------------------------------------

    def _route(self, iteration: int) -> str:
        routes = self.config["backend"]["routes"] or {}
        return routes.get(str(iteration), self.config["backend"]["endpoint"])

    def _notify(self, stage: str, rec: Optional[StatementRecord]) -> None:
        if self.progress is not None:
            self.progress(stage, rec)

    def _map(self, fn, items):
        if self.workers <= 1:
            for item in items:
                yield fn(item)
        else:
            with ThreadPoolExecutor(max_workers=self.workers) as executor:
                yield from executor.map(fn, items)

    def _iteration_records(self, iteration: int) -> list[StatementRecord]:
        return [r for r in self.records.records() if r.iteration == iteration]

    # -- stages ------------------------------------------------------------

    def _stage_formalize(self, corpus: list[InformalProblem], iteration: int) -> None:
        done = {
            r.origin_id for r in self._iteration_records(iteration)
        }
        pending = [p for p in corpus if p.id not in done]
        params = _params(self.config["sampling"]["formalize"])
        route = self._route(iteration)

        def process(problem: InformalProblem) -> list[StatementRecord]:
            recs = formalize(
                problem,
                params,
                self.gateway,
                iteration=iteration,
                route=route,
                clock=self.clock,
            )
            for rec in recs:
                rec.record_id = f"it{iteration}/{rec.record_id}"
            return recs

        for recs in self._map(process, pending):
            for rec in recs:
                self.records.save(rec)
                self._notify("formalize", rec)

    def _stage_score(self, iteration: int) -> None:
        pending = [
            r
            for r in self._iteration_records(iteration)
            if r.state is RecordState.FORMALIZED
        ]
        params = _params(self.config["sampling"]["score"])
        route = self._route(iteration)

        def process(rec: StatementRecord) -> StatementRecord:
            return score(rec, params, self.gateway, route=route, clock=self.clock)

        for rec in self._map(process, pending):
            self.records.save(rec)
            self._notify("score", rec)

    def _stage_filter(self, iteration: int) -> None:
        pending = [
            r
            for r in self._iteration_records(iteration)
            if r.state is RecordState.SCORED
        ]
        budget = self.config["filter"]["false_proof_budget"]
        prover = ProofSampler(
            self.gateway,
            _params(self.config["sampling"]["prove"]),
            route=self._route(iteration),
        )

        def process(rec: StatementRecord) -> StatementRecord:
            rec = apply_score_gate(rec, clock=self.clock)
            if rec.state is RecordState.SCORED:
                rec = hypothesis_rejection(
                    rec, budget, prover, self.verifier, clock=self.clock
                )
            return rec

        for rec in self._map(process, pending):
            self.records.save(rec)
            self._notify("filter", rec)

    def _stage_prove(self, iteration: int) -> None:
        pending = [
            r
            for r in self._iteration_records(iteration)
            if r.state is RecordState.QUEUED
        ]
        scfg = self.config["search"]
        cfg = DualSearchConfig(
            k=scfg["k"],
            per_attempt_timeout=scfg["per_attempt_timeout_s"],
            stream_parallelism=scfg["stream_parallelism"],
        )
        prover = ProofSampler(
            self.gateway,
            _params(self.config["sampling"]["prove"]),
            route=self._route(iteration),
        )

        def process(rec: StatementRecord):
            outcome = dual_search(rec, cfg, prover, self.verifier)
            return finalize(rec, outcome, iteration=iteration, clock=self.clock)

        for rec, pair in self._map(process, pending):
            # Pair before record: replaying a crash between the two writes
            # regenerates the pair, and the dedup makes the upsert a no-op.
            if pair is not None:
                self.pairs.upsert(pair)
            self.records.save(rec)
            self._notify("prove", rec)

    # -- accounting --------------------------------------------------------

    def stage_counts(self, iteration: int, problem_count: int) -> dict[str, int]:
        counts = {key: 0 for key in STAGE_COUNT_KEYS}
        counts["problems"] = problem_count
        for rec in self._iteration_records(iteration):
            history = set(rec.state_history())
            if RecordState.REJECTED_PARSE.value in history:
                counts["rejected_parse"] += 1
                continue
            counts["formalized"] += 1
            if RecordState.SCORED.value in history:
                counts["scored"] += 1
            if RecordState.QUEUED.value in history:
                counts["queued"] += 1
            if rec.terminal:
                counts[rec.state.value] += 1
        return counts

    # -- the iteration -----------------------------------------------------

    def run_iteration(
        self,
        iteration: int,
        corpus: Optional[list[InformalProblem]] = None,
        benchmark_scores: Optional[dict[str, float]] = None,
    ) -> IterationManifest:
        """Run the funnel for one iteration and append its manifest.

        Resumable: records already past a stage are not reprocessed. A
        backend outage aborts at the stage boundary with partial progress
        persisted and the failing records still retryable.
        """
        if corpus is None:
            corpus_path = self.config.path("iteration", "corpus")
            corpus = load_corpus(corpus_path)
        started = 0.0 if self.deterministic else time.time()
        try:
            self._stage_formalize(corpus, iteration)
            self._stage_score(iteration)
            self._stage_filter(iteration)
            self._stage_prove(iteration)
        except BackendUnavailable:
            logger.error(
                "backend outage during iteration %d; partial progress persisted",
                iteration,
            )
            raise
        manifest = IterationManifest(
            iteration=iteration,
            config_digest=self.config.digest(),
            config_text=self.config.canonical_text(),
            stage_counts=self.stage_counts(iteration, len(corpus)),
            new_pairs=self.pairs.count_for_iteration(iteration),
            cumulative_pairs=len(self.pairs),
            benchmark_scores=benchmark_scores,
            started=started,
            finished=0.0 if self.deterministic else time.time(),
        )
        self.manifests.append(manifest)
        return manifest

    def run_loop(self, max_iterations: int) -> list[IterationManifest]:
        """Run iterations until the stopping rule fires or the cap is hit."""
        eps_score = self.config["iteration"]["epsilon_score"]
        eps_data = self.config["iteration"]["epsilon_data"]
        while len(self.manifests.all()) < max_iterations:
            done = self.manifests.all()
            if should_stop(done, eps_score, eps_data):
                logger.info("stopping rule fired after %d iterations", len(done))
                break
            self.run_iteration(len(done))
        return self.manifests.all()

    def export(self, iteration: int, path: str | Path) -> int:
        return export_training_file(self.pairs, iteration, path)
