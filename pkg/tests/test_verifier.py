"""Prefix fidelity, verdict classification, cache, pool behaviour."""

import hashlib
import json
import sys
import threading

import pytest

from proofpipe.core import Verdict
from proofpipe.verifier import (
    MATHLIB_COMMIT,
    PREFIX_SHA256,
    PoolUnavailable,
    PrefixMismatch,
    RawRunResult,
    ScriptedRunner,
    SubprocessRunner,
    TOOLCHAIN_TAG,
    VERIFICATION_PREFIX,
    VerificationJob,
    VerifierConfig,
    VerifierPool,
    assemble_source,
    classify,
    parse_diagnostics,
    prefix_digest,
)


class TestPrefix:
    def test_digest_matches_frozen_constant(self):
        assert prefix_digest() == PREFIX_SHA256
        assert (
            hashlib.sha256(VERIFICATION_PREFIX.encode()).hexdigest() == PREFIX_SHA256
        )

    def test_first_line(self):
        assert VERIFICATION_PREFIX.splitlines()[0] == "import Mathlib.Algebra.Algebra.Basic"

    def test_heartbeats_disabled(self):
        assert "set_option maxHeartbeats 0" in VERIFICATION_PREFIX

    def test_trace_options_and_open(self):
        lines = VERIFICATION_PREFIX.splitlines()
        assert "set_option trace.aesop true" in lines
        assert "set_option trace.aesop.proof true" in lines
        assert lines[-1] == "open Nat Real Rat BigOperators"

    def test_import_count_and_shape(self):
        imports = [l for l in VERIFICATION_PREFIX.splitlines() if l.startswith("import ")]
        assert len(imports) == 61
        assert imports[-1] == "import Aesop"

    def test_assemble_source_layout(self):
        source = assemble_source("example : True := by trivial")
        assert source.startswith("import Mathlib.Algebra.Algebra.Basic")
        assert source.endswith(
            "open Nat Real Rat BigOperators\n\nexample : True := by trivial"
        )

    def test_pinned_toolchain_identity(self):
        assert TOOLCHAIN_TAG == "leanprover/lean4:v4.7.0-rc2"
        assert MATHLIB_COMMIT == "64528268b3c2cf578639bc479828882a9ecd3a82"


class TestDiagnostics:
    def test_error_line(self):
        diags = parse_diagnostics("f.lean:3:7: error: unknown identifier 'foo'")
        assert len(diags) == 1
        assert diags[0].severity == "error"
        assert diags[0].line == 3 and diags[0].col == 7
        assert "unknown identifier" in diags[0].text

    def test_warning_is_not_error(self):
        diags = parse_diagnostics("f.lean:1:1: warning: unused variable")
        assert diags[0].severity == "warning"

    def test_non_matching_lines_ignored(self):
        assert parse_diagnostics("compiling...\nall good\n") == ()


class TestClassify:
    def test_clean_exit_proved(self):
        assert classify(RawRunResult(exit_code=0)).verdict is Verdict.PROVED

    def test_error_diagnostics_failed(self):
        raw = RawRunResult(exit_code=1, stdout="f.lean:1:1: error: nope")
        assert classify(raw).verdict is Verdict.FAILED

    def test_error_diagnostics_failed_even_with_zero_exit(self):
        raw = RawRunResult(exit_code=0, stdout="f.lean:1:1: error: nope")
        assert classify(raw).verdict is Verdict.FAILED

    def test_timeout(self):
        assert classify(RawRunResult(exit_code=-1, timed_out=True)).verdict is Verdict.TIMEOUT

    def test_signal_death_is_crash(self):
        assert classify(RawRunResult(exit_code=-9)).verdict is Verdict.VERIFIER_CRASH

    def test_nonzero_exit_without_error_diagnostics_is_crash(self):
        assert classify(RawRunResult(exit_code=2, stdout="segv")).verdict is Verdict.VERIFIER_CRASH


def make_pool(rules=None, default="failed", cache_path=None, pool_size=2, latency=0.0):
    runner = ScriptedRunner(rules or [], default=default, latency=latency)
    pool = VerifierPool(
        VerifierConfig(pool_size=pool_size, timeout_s=5.0, cache_path=cache_path),
        runner=runner,
    )
    return pool, runner


class TestPool:
    def test_requires_start(self):
        pool, _ = make_pool()
        with pytest.raises(PoolUnavailable):
            pool.verify(VerificationJob.for_source("x"))

    def test_prefix_mismatch_aborts_start(self, monkeypatch):
        import proofpipe.verifier as vmod

        pool, _ = make_pool()
        monkeypatch.setattr(vmod, "PREFIX_SHA256", "0" * 64)
        with pytest.raises(PrefixMismatch):
            pool.start()

    def test_trivial_source_proved(self):
        pool, _ = make_pool(rules=[("trivial", "proved")])
        with pool:
            job = VerificationJob.for_source(assemble_source("example : True := by trivial"))
            outcome = pool.verify(job)
        assert outcome.verdict is Verdict.PROVED
        assert not outcome.from_cache

    def test_cache_hit_skips_process(self):
        pool, runner = make_pool(rules=[("trivial", "proved")])
        with pool:
            job = VerificationJob.for_source("example : True := by trivial")
            first = pool.verify(job)
            second = pool.verify(job)
        assert not first.from_cache
        assert second.from_cache
        assert second.verdict is Verdict.PROVED
        assert runner.calls == 1  # zero additional process launches
        assert pool.pool_stats().cache_hits == 1

    def test_cached_outcome_equals_fresh_outcome(self):
        """Cache soundness under a deterministic checker."""
        rules = [("good", "proved"), ("bad", "failed")]
        pool_a, _ = make_pool(rules=rules)
        pool_b, _ = make_pool(rules=rules)
        sources = [f"thm good {i}" for i in range(5)] + [f"thm bad {i}" for i in range(5)]
        with pool_a, pool_b:
            for source in sources:
                job = VerificationJob.for_source(source)
                cached_twice = pool_a.verify(job)
                cached = pool_a.verify(job)
                fresh = pool_b.verify(job)
                assert cached.verdict == fresh.verdict
                assert cached.diagnostics == fresh.diagnostics

    def test_timeouts_and_crashes_not_cached(self):
        pool, runner = make_pool(rules=[("slow", "timeout"), ("boom", "crash")])
        with pool:
            for source, verdict in (("slow x", Verdict.TIMEOUT), ("boom y", Verdict.VERIFIER_CRASH)):
                job = VerificationJob.for_source(source)
                assert pool.verify(job).verdict is verdict
                again = pool.verify(job)
                assert again.verdict is verdict
                assert not again.from_cache
        assert runner.calls == 4  # every call hit the runner

    def test_cache_persistence_reload(self, tmp_path):
        cache = tmp_path / "cache.jsonl"
        pool, runner = make_pool(rules=[("t", "proved")], cache_path=str(cache))
        with pool:
            pool.verify(VerificationJob.for_source("t 1"))
        # Fresh pool, same cache file: no new process launch.
        pool2, runner2 = make_pool(rules=[("t", "proved")], cache_path=str(cache))
        with pool2:
            outcome = pool2.verify(VerificationJob.for_source("t 1"))
        assert outcome.from_cache
        assert runner2.calls == 0
        entries = [json.loads(l) for l in cache.read_text().splitlines() if l.strip()]
        assert entries and set(entries[0]) == {"content_key", "verdict", "wall_time"}

    def test_bounded_concurrency_under_oversubscription(self):
        pool, runner = make_pool(pool_size=3, latency=0.005)
        errors = []

        def hammer(i):
            try:
                pool.verify(VerificationJob.for_source(f"job {i}"))
            except Exception as exc:  # noqa: BLE001
                errors.append(exc)

        with pool:
            threads = [threading.Thread(target=hammer, args=(i,)) for i in range(30)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        assert not errors
        assert runner.max_active <= 3
        assert runner.calls == 30

    def test_crash_isolation_and_respawn(self):
        """A crashing job yields verifier_crash; the worker keeps serving."""
        pool, _ = make_pool(rules=[("die", "crash"), ("ok", "proved")], pool_size=1)
        with pool:
            crash = pool.verify(VerificationJob.for_source("die now"))
            assert crash.verdict is Verdict.VERIFIER_CRASH
            ok = pool.verify(VerificationJob.for_source("ok fine"))
            assert ok.verdict is Verdict.PROVED

    def test_worker_survives_runner_exception(self):
        class ExplodingRunner:
            def __init__(self):
                self.calls = 0

            def __call__(self, source, timeout):
                self.calls += 1
                if self.calls == 1:
                    raise RuntimeError("runner bug")
                return RawRunResult(exit_code=0)

        pool = VerifierPool(
            VerifierConfig(pool_size=1, timeout_s=5.0), runner=ExplodingRunner()
        )
        with pool:
            first = pool.verify(VerificationJob.for_source("a"))
            second = pool.verify(VerificationJob.for_source("b"))
        assert first.verdict is Verdict.VERIFIER_CRASH
        assert second.verdict is Verdict.PROVED

    def test_pool_stats_fresh_and_accounting(self):
        pool, _ = make_pool(rules=[("p", "proved"), ("f", "failed"), ("t", "timeout")])
        stats = pool.pool_stats()
        assert (stats.jobs, stats.proved, stats.failed, stats.timeouts, stats.crashes) == (
            0, 0, 0, 0, 0,
        )
        with pool:
            for source in ("p 1", "f 1", "t 1", "p 2", "p 1"):
                pool.verify(VerificationJob.for_source(source))
            stats = pool.pool_stats()
        assert stats.jobs == 5
        assert stats.proved == 3  # includes the cache hit
        assert stats.failed == 1
        assert stats.timeouts == 1
        assert stats.cache_hits == 1
        assert stats.in_flight == 0
        assert stats.proved + stats.failed + stats.timeouts + stats.crashes == (
            stats.jobs - stats.in_flight
        )

    def test_stats_identity_under_parallel_load(self):
        pool, _ = make_pool(
            rules=[("p", "proved"), ("f", "failed"), ("c", "crash")],
            pool_size=4,
            latency=0.001,
        )
        import random

        rng = random.Random(1)
        sources = [rng.choice(["p", "f", "c"]) + f" {i}" for i in range(60)]

        with pool:
            threads = [
                threading.Thread(
                    target=pool.verify, args=(VerificationJob.for_source(s),)
                )
                for s in sources
            ]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            stats = pool.pool_stats()
        assert stats.jobs == 60
        assert stats.proved + stats.failed + stats.timeouts + stats.crashes == (
            stats.jobs - stats.in_flight
        )
        assert stats.in_flight == 0


class TestScriptedRunnerFile:
    def test_from_file(self, tmp_path):
        path = tmp_path / "rules.jsonl"
        path.write_text(
            json.dumps({"contains": "win", "verdict": "proved"})
            + "\n"
            + json.dumps({"default": "failed"})
            + "\n"
        )
        runner = ScriptedRunner.from_file(path)
        assert classify(runner("win here", 1.0)).verdict is Verdict.PROVED
        assert classify(runner("lose here", 1.0)).verdict is Verdict.FAILED


FAKE_CHECKER = '''
import sys, time
src = open(sys.argv[1], encoding="utf-8").read()
if "SLEEP" in src:
    time.sleep(10)
if "FAILME" in src:
    print(f"{sys.argv[1]}:2:4: error: tactic failed")
    sys.exit(1)
print("checked OK")
'''


class TestSubprocessRunner:
    """Drive the real subprocess path with a stand-in checker executable."""

    @pytest.fixture
    def checker(self, tmp_path):
        script = tmp_path / "fake_checker.py"
        script.write_text(FAKE_CHECKER)
        return (sys.executable, str(script), "{src}")

    def test_proved_path(self, checker):
        runner = SubprocessRunner(checker)
        outcome = classify(runner("example : True := by trivial", 10.0))
        assert outcome.verdict is Verdict.PROVED

    def test_failed_path_with_diagnostics(self, checker):
        runner = SubprocessRunner(checker)
        outcome = classify(runner("FAILME", 10.0))
        assert outcome.verdict is Verdict.FAILED
        assert outcome.diagnostics[0].severity == "error"
        assert outcome.diagnostics[0].line == 2

    def test_timeout_kills_process(self, checker):
        runner = SubprocessRunner(checker)
        outcome = classify(runner("SLEEP", 0.5))
        assert outcome.verdict is Verdict.TIMEOUT

    def test_missing_binary_is_crash(self):
        runner = SubprocessRunner(("/nonexistent/checker",))
        outcome = classify(runner("x", 1.0))
        assert outcome.verdict is Verdict.VERIFIER_CRASH

    def test_src_appended_when_no_placeholder(self, tmp_path):
        script = tmp_path / "fake.py"
        script.write_text(FAKE_CHECKER)
        runner = SubprocessRunner((sys.executable, str(script)))
        outcome = classify(runner("fine", 10.0))
        assert outcome.verdict is Verdict.PROVED

    def test_pool_end_to_end_with_subprocess(self, checker):
        pool = VerifierPool(
            VerifierConfig(checker_command=checker, pool_size=2, timeout_s=10.0)
        )
        with pool:
            ok = pool.verify(VerificationJob.for_source(assemble_source("example : True := by trivial")))
            bad = pool.verify(VerificationJob.for_source(assemble_source("FAILME")))
        assert ok.verdict is Verdict.PROVED
        assert bad.verdict is Verdict.FAILED
