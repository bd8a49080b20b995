"""Backends, retry accounting, admission limiting, template stability."""

import threading
import time

import pytest

from proofpipe.core import InformalProblem
from proofpipe.gateway import (
    BackendUnavailable,
    BudgetExceeded,
    CompletionRequest,
    CompletionResponse,
    HttpBackend,
    MalformedResponse,
    MockBackend,
    ModelGateway,
    ProofSampler,
    RetryPolicy,
    SamplingParams,
    ScriptMiss,
    TransportError,
    prompt_digest,
)
from proofpipe.prompts import (
    render_formalization_prompt,
    render_proof_prompt,
    render_scoring_prompt,
)
from proofpipe.statements import parse_statement

from conftest import DATA_DIR, GOLDEN_DIR


def no_sleep(_):
    pass


def make_gateway(backend, **kwargs):
    kwargs.setdefault("sleeper", no_sleep)
    return ModelGateway(backend, **kwargs)


class TestSamplingParams:
    def test_greedy_is_single_shot(self):
        with pytest.raises(ValueError):
            SamplingParams(temperature=0, n_samples=2)
        SamplingParams(temperature=0, n_samples=1)

    @pytest.mark.parametrize(
        "kwargs", [{"temperature": -1}, {"max_tokens": 0}, {"n_samples": 0}]
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            SamplingParams(**kwargs)


class TestMockBackend:
    def test_scripted_table_order(self):
        mock = MockBackend()
        mock.script("hello", ["proof A", "proof B"])
        gw = make_gateway(mock)
        resp = gw.complete(
            CompletionRequest("hello", SamplingParams(n_samples=2))
        )
        assert resp.completions == ("proof A", "proof B")

    def test_greedy_repeat_identical(self):
        mock = MockBackend()
        mock.script("p", ["first", "second"])
        gw = make_gateway(mock)
        params = SamplingParams(temperature=0, n_samples=1)
        first = gw.complete(CompletionRequest("p", params))
        second = gw.complete(CompletionRequest("p", params))
        assert first.completions == second.completions == ("first",)

    def test_sampled_consumes_in_order_and_cycles(self):
        mock = MockBackend()
        mock.script("p", ["a", "b"])
        gw = make_gateway(mock)
        params = SamplingParams(n_samples=1)
        picks = [
            gw.complete(CompletionRequest("p", params)).completions[0]
            for _ in range(5)
        ]
        assert picks == ["a", "b", "a", "b", "a"]

    def test_unscripted_prompt_raises(self):
        gw = make_gateway(MockBackend())
        with pytest.raises(ScriptMiss):
            gw.complete(CompletionRequest("nothing", SamplingParams()))

    def test_default_completions(self):
        gw = make_gateway(MockBackend(default=["fallback"]))
        resp = gw.complete(CompletionRequest("anything", SamplingParams()))
        assert resp.completions == ("fallback",)

    def test_from_file_round_trip(self, tmp_path):
        import json

        path = tmp_path / "script.jsonl"
        digest = prompt_digest("query")
        with open(path, "w") as fh:
            fh.write(json.dumps({"prompt_sha256": digest, "completions": ["z"]}) + "\n")
            fh.write(json.dumps({"default": ["d"]}) + "\n")
        gw = make_gateway(MockBackend.from_file(path))
        assert gw.complete(CompletionRequest("query", SamplingParams())).completions == ("z",)
        assert gw.complete(CompletionRequest("other", SamplingParams())).completions == ("d",)


class FlakyBackend:
    """Fails with TransportError n times, then succeeds."""

    def __init__(self, failures, completion="ok"):
        self.failures = failures
        self.completion = completion
        self.calls = 0

    def send(self, request):
        self.calls += 1
        if self.calls <= self.failures:
            raise TransportError("down")
        return CompletionResponse(completions=(self.completion,) * request.params.n_samples)


class TestRetry:
    def test_no_retries_on_success(self):
        backend = FlakyBackend(0)
        gw = make_gateway(backend)
        gw.complete(CompletionRequest("p", SamplingParams()))
        assert backend.calls == 1
        assert gw.stats().retries == 0

    def test_exhausted_retries_raise_backend_unavailable(self):
        backend = FlakyBackend(10)
        gw = make_gateway(backend, retry=RetryPolicy(max_retries=3))
        with pytest.raises(BackendUnavailable):
            gw.complete(CompletionRequest("p", SamplingParams()))
        # 1 initial call + exactly 3 retries.
        assert backend.calls == 4
        assert gw.stats().retries == 3

    def test_transport_calls_equal_one_plus_retries(self):
        backend = FlakyBackend(2)
        gw = make_gateway(backend, retry=RetryPolicy(max_retries=5))
        gw.complete(CompletionRequest("p", SamplingParams()))
        stats = gw.stats()
        assert backend.calls == 3
        assert stats.transport_calls == 1 + stats.retries == 3

    def test_backoff_delays_grow_and_jitter_bounded(self):
        policy = RetryPolicy(max_retries=5, initial_delay=1.0, multiplier=2.0, jitter=0.2)
        import random

        rng = random.Random(0)
        for attempt in range(4):
            delay = policy.delay(attempt, rng)
            base = 2.0**attempt
            assert base * 0.8 <= delay <= base * 1.2


class TestQuotas:
    def test_request_budget(self):
        mock = MockBackend(default=["x"])
        gw = make_gateway(mock, max_requests=2)
        req = CompletionRequest("p", SamplingParams())
        gw.complete(req)
        gw.complete(req)
        with pytest.raises(BudgetExceeded):
            gw.complete(req)


class TestResponseValidation:
    def test_wrong_completion_count_is_malformed(self):
        class ShortBackend:
            def send(self, request):
                return CompletionResponse(completions=("only one",))

        gw = make_gateway(ShortBackend())
        with pytest.raises(MalformedResponse):
            gw.complete(CompletionRequest("p", SamplingParams(n_samples=3)))


class TestAdmissionLimiter:
    def test_in_flight_bounded(self):
        active = {"now": 0, "max": 0}
        lock = threading.Lock()

        class SlowBackend:
            def send(self, request):
                with lock:
                    active["now"] += 1
                    active["max"] = max(active["max"], active["now"])
                time.sleep(0.01)
                with lock:
                    active["now"] -= 1
                return CompletionResponse(completions=("x",))

        gw = make_gateway(SlowBackend(), max_in_flight=2)
        threads = [
            threading.Thread(
                target=lambda: gw.complete(CompletionRequest("p", SamplingParams()))
            )
            for _ in range(8)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert active["max"] <= 2


class TestHttpBackend:
    def test_maps_connection_error_to_transport(self):
        import requests

        def post(*args, **kwargs):
            raise requests.ConnectionError("refused")

        backend = HttpBackend("http://example.invalid/v1", post=post)
        with pytest.raises(TransportError):
            backend.send(CompletionRequest("p", SamplingParams()))

    def test_request_body_fields(self):
        captured = {}

        class Resp:
            status_code = 200

            def json(self):
                return {"completions": ["done"], "usage": {"completion_tokens": 3}}

        def post(url, json=None, headers=None, timeout=None):
            captured.update(json)
            return Resp()

        backend = HttpBackend("http://host/v1", post=post)
        params = SamplingParams(temperature=0.5, max_tokens=64, n_samples=1,
                                stop_sequences=("```",))
        resp = backend.send(CompletionRequest("the prompt", params))
        assert captured == {
            "prompt": "the prompt",
            "temperature": 0.5,
            "max_tokens": 64,
            "n": 1,
            "stop": ["```"],
        }
        assert resp.completions == ("done",)
        assert resp.completion_tokens == 3

    def test_retryable_status_raises_transport(self):
        class Resp:
            status_code = 503
            text = "unavailable"

        backend = HttpBackend("http://host/v1", post=lambda *a, **k: Resp())
        with pytest.raises(TransportError):
            backend.send(CompletionRequest("p", SamplingParams()))

    def test_openai_style_choices_accepted(self):
        class Resp:
            status_code = 200

            def json(self):
                return {"choices": [{"text": "a"}, {"text": "b"}]}

        backend = HttpBackend("http://host/v1", post=lambda *a, **k: Resp())
        resp = backend.send(CompletionRequest("p", SamplingParams(n_samples=2)))
        assert resp.completions == ("a", "b")


class TestPromptGoldens:
    """Rendered prompts are byte-identical to the frozen golden files."""

    def _problems(self):
        import json

        with open(DATA_DIR / "problems_5.jsonl", encoding="utf-8") as fh:
            for line in fh:
                entry = json.loads(line)
                yield InformalProblem(
                    id=entry["id"],
                    text=entry["text"],
                    answer=entry.get("answer"),
                    source_tag=entry.get("source_tag", ""),
                )

    def test_formalization_prompts(self):
        for problem in self._problems():
            golden = (GOLDEN_DIR / f"prompt_formalize_{problem.id}.txt").read_text(
                encoding="utf-8"
            )
            assert render_formalization_prompt(problem) == golden

    def test_formalization_prompt_shape(self):
        problem = InformalProblem(id="x", text="Prove 1+1=2.")
        prompt = render_formalization_prompt(problem)
        assert prompt.endswith("```lean4")
        assert "Prove 1+1=2." in prompt
        assert prompt.startswith("Mathematical Problem in Natural Language:\n")
        # no answer: single newline between the text and the instruction line
        assert "Prove 1+1=2.\nTranslate the problem to Lean 4" in prompt

    def test_scoring_prompt_golden(self):
        stmt = parse_statement("example (a : ℝ) : a ^ 2 ≥ 0")
        golden = (GOLDEN_DIR / "prompt_scoring.txt").read_text(encoding="utf-8")
        assert render_scoring_prompt(stmt) == golden

    def test_scoring_prompt_criteria_in_order(self):
        stmt = parse_statement("example : True")
        prompt = render_scoring_prompt(stmt)
        headings = [
            "1. Relevance to Current Research:",
            "2. Complexity and Depth:",
            "3. Interdisciplinary Potential:",
            "4. Community Needs and Gaps:",
            "5. Innovativeness:",
        ]
        positions = [prompt.find(h) for h in headings]
        assert all(p >= 0 for p in positions)
        assert positions == sorted(positions)
        for stanza in (
            "Translate the code to natural language:",
            "Analysis:",
            "Assessment:",
        ):
            assert stanza in prompt

    def test_proof_prompt_goldens(self):
        stmt = parse_statement("example (a : ℝ) : a ^ 2 ≥ 0")
        assert render_proof_prompt(stmt) == (GOLDEN_DIR / "prompt_proof.txt").read_text(
            encoding="utf-8"
        )
        assert render_proof_prompt(stmt, include_header=False) == (
            GOLDEN_DIR / "prompt_proof_bare.txt"
        ).read_text(encoding="utf-8")

    def test_proof_prompt_ends_with_by(self):
        stmt = parse_statement("example : True")
        assert render_proof_prompt(stmt, include_header=False) == "example : True := by\n"

    def test_proof_prompt_contains_statement_once(self):
        stmt = parse_statement("example (a : ℝ) : a ^ 2 ≥ 0")
        prompt = render_proof_prompt(stmt)
        assert prompt.count(stmt.raw) == 1


class TestProofSampler:
    def test_samples_against_proof_prompt(self):
        stmt = parse_statement("example : True")
        mock = MockBackend()
        mock.script(render_proof_prompt(stmt), ["  trivial"])
        sampler = ProofSampler(make_gateway(mock), SamplingParams())
        assert sampler.sample(stmt, 1) == ["  trivial"]
