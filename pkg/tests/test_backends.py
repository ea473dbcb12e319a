import numpy as np
import pytest

from synthts import (
    BackendError,
    DataError,
    FaultModes,
    ReferenceBackend,
    RemoteBackend,
    SamplingParams,
    TrainingParams,
    encode_finetune,
    make_inference_prompt,
    parse_generation,
    sample_permutation,
)
from synthts.backends import GaussianCopulaModel


def make_corpus(n=60, k=3, seed=0, condition=None):
    rng = np.random.default_rng(seed)
    cov = np.array([[1.0, 0.7, 0.0], [0.7, 1.0, 0.0], [0.0, 0.0, 0.25]])[:k, :k]
    rows = rng.multivariate_normal(np.zeros(k), cov, size=n)
    from synthts import PromptTemplate

    template = PromptTemplate(condition=condition)
    prompts = [
        encode_finetune(row, sample_permutation(k, rng), template) for row in rows
    ]
    return rows, prompts, template


class TestParams:
    def test_training_defaults(self):
        p = TrainingParams()
        assert p.learning_rate == pytest.approx(8e-5)
        assert p.batch_size == 32
        assert p.max_epochs == 200
        assert p.patience == 5
        assert p.val_fraction == pytest.approx(0.2)
        assert p.eval_every == 5

    def test_validation(self):
        with pytest.raises(DataError):
            TrainingParams(learning_rate=0.0)
        with pytest.raises(DataError):
            TrainingParams(val_fraction=1.0)
        with pytest.raises(DataError):
            SamplingParams(temperature=0.0)


class TestCopula:
    def fit(self, seed=0, n=500):
        rng = np.random.default_rng(seed)
        cov = [[1.0, 0.8], [0.8, 1.0]]
        vals = rng.multivariate_normal([0, 0], cov, size=n)
        return GaussianCopulaModel(vals), vals

    def test_no_extrapolation(self):
        model, vals = self.fit()
        out = model.sample(2000, 1.0, np.random.default_rng(1))
        for j in range(2):
            assert out[:, j].min() >= vals[:, j].min()
            assert out[:, j].max() <= vals[:, j].max()

    def test_samples_are_training_values(self):
        model, vals = self.fit(n=50)
        out = model.sample(200, 1.0, np.random.default_rng(2))
        pool = {round(v, 10) for v in vals.ravel()}
        assert all(round(v, 10) in pool for v in out.ravel())

    def test_correlation_preserved(self):
        model, vals = self.fit(n=2000)
        out = model.sample(4000, 1.0, np.random.default_rng(3))
        r = np.corrcoef(out, rowvar=False)[0, 1]
        assert r == pytest.approx(0.8, abs=0.08)

    def test_low_temperature_collapses_to_median(self):
        model, vals = self.fit(n=501)
        out = model.sample(50, 1e-12, np.random.default_rng(4))
        # z ~ 0 puts every normal score at the median order statistic
        assert len({tuple(np.round(r, 4)) for r in out}) <= 2

    def test_constant_column(self):
        vals = np.column_stack([np.full(20, 7.0), np.arange(20.0)])
        model = GaussianCopulaModel(vals)
        out = model.sample(30, 1.0, np.random.default_rng(0))
        assert np.all(out[:, 0] == 7.0)

    def test_too_few_rows(self):
        with pytest.raises(DataError):
            GaussianCopulaModel(np.zeros((4, 2)))

    def test_serialization_round_trip(self):
        model, _ = self.fit(n=50)
        back = GaussianCopulaModel.from_dict(model.to_dict())
        a = model.sample(20, 1.0, np.random.default_rng(9))
        b = back.sample(20, 1.0, np.random.default_rng(9))
        assert np.array_equal(a, b)


class TestReferenceBackend:
    def test_fine_tune_then_generate(self):
        rows, prompts, template = make_corpus()
        be = ReferenceBackend(template)
        be.fine_tune(prompts)
        assert be.fitted and be.k == 3
        rng = np.random.default_rng(5)
        queries = [make_inference_prompt(3, sample_permutation(3, rng), template)
                   for _ in range(10)]
        comps = be.generate(queries, SamplingParams(seed=11))
        assert len(comps) == 10
        for q, c in zip(queries, comps):
            assert c.startswith(q)
            parsed = parse_generation(c, 3, template)
            assert parsed.is_complete

    def test_generate_respects_prompt_permutation(self):
        rows, prompts, template = make_corpus()
        be = ReferenceBackend(template)
        be.fine_tune(prompts)
        q = make_inference_prompt(3, (3, 1, 2), template)
        comp = be.generate([q], SamplingParams(seed=0))[0]
        parsed = parse_generation(comp, 3, template)
        assert parsed.permutation == (3, 1, 2)

    def test_seed_determinism(self):
        _, prompts, template = make_corpus()
        be = ReferenceBackend(template)
        be.fine_tune(prompts)
        q = [make_inference_prompt(3, (1, 2, 3), template)] * 4
        assert be.generate(q, SamplingParams(seed=3)) == be.generate(
            q, SamplingParams(seed=3)
        )

    def test_unfitted_generate_raises(self):
        with pytest.raises(BackendError):
            ReferenceBackend().generate(["x"])

    def test_too_few_parseable_prompts(self):
        with pytest.raises(DataError):
            ReferenceBackend().fine_tune(["Input: value_1 is [blank] [sep] Target:"] * 3)

    def test_missing_fault_emits_nan_token(self):
        _, prompts, template = make_corpus()
        be = ReferenceBackend(template, FaultModes(missing_rate=1.0))
        be.fine_tune(prompts)
        comps = be.generate(
            [make_inference_prompt(3, (1, 2, 3), template)] * 8,
            SamplingParams(seed=0),
        )
        for c in comps:
            parsed = parse_generation(c, 3, template)
            assert not parsed.is_complete

    def test_collapse_norms_fault(self):
        _, prompts, template = make_corpus()
        be = ReferenceBackend(template, FaultModes(collapse_norms=True))
        be.fine_tune(prompts)
        comps = be.generate(
            [make_inference_prompt(3, (1, 2, 3), template)] * 6,
            SamplingParams(seed=0),
        )
        for c in comps:
            v = parse_generation(c, 3, template).values
            assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-3)


class FakeResponse:
    def __init__(self, status_code=200, payload=None, text=""):
        self.status_code = status_code
        self._payload = payload
        self.text = text

    def json(self):
        if self._payload is None:
            raise ValueError("no json")
        return self._payload


class FakeSession:
    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = []

    def post(self, url, json=None, timeout=None):
        self.calls.append((url, json))
        r = self.responses.pop(0)
        if isinstance(r, Exception):
            raise r
        return r

    def get(self, url, timeout=None):
        return FakeResponse(200, {"status": "ok"})


class TestRemoteBackend:
    def test_finetune_and_generate_wire_format(self):
        session = FakeSession([
            FakeResponse(200, {"model_id": "m-1"}),
            FakeResponse(200, {"completions": ["a", "b"]}),
        ])
        be = RemoteBackend("http://svc:8000/", session=session)
        be.fine_tune(["p1", "p2"], TrainingParams())
        assert be.model_id == "m-1"
        out = be.generate(
            ["Input: value_1 is [blank] [sep] Target:"] * 2,
            SamplingParams(temperature=0.7, seed=5),
        )
        assert out == ["a", "b"]
        url, body = session.calls[0]
        assert url == "http://svc:8000/v1/finetune"
        assert body["hyperparams"]["learning_rate"] == pytest.approx(8e-5)
        url, body = session.calls[1]
        assert url == "http://svc:8000/v1/generate"
        assert body["model_id"] == "m-1"
        assert body["temperature"] == pytest.approx(0.7)
        assert body["seed"] == 5
        assert body["max_new_tokens"] == 16  # 16 per feature slot

    def test_client_error_not_retryable(self):
        session = FakeSession([FakeResponse(404, {"error": "unknown model"})])
        be = RemoteBackend("http://svc", session=session)
        be.model_id = "m-x"
        with pytest.raises(BackendError) as ei:
            be.generate(["p"])
        assert not ei.value.retryable
        assert "404" in str(ei.value)

    def test_server_error_retryable(self):
        session = FakeSession([FakeResponse(500, {"error": "boom"})])
        be = RemoteBackend("http://svc", session=session)
        with pytest.raises(BackendError) as ei:
            be.fine_tune(["p"])
        assert ei.value.retryable

    def test_connection_failures_retried(self):
        import requests

        session = FakeSession([
            requests.ConnectionError("refused"),
            requests.ConnectionError("refused"),
            FakeResponse(200, {"model_id": "m-2"}),
        ])
        be = RemoteBackend("http://svc", retries=3, session=session)
        be.fine_tune(["p"])
        assert be.model_id == "m-2"
        assert len(session.calls) == 3

    def test_exhausted_retries(self):
        import requests

        session = FakeSession([requests.ConnectionError("refused")] * 2)
        be = RemoteBackend("http://svc", retries=2, session=session)
        with pytest.raises(BackendError) as ei:
            be.fine_tune(["p"])
        assert ei.value.retryable and ei.value.attempts == 2

    def test_malformed_reply(self):
        session = FakeSession([FakeResponse(200, {"model_id": "m"}),
                               FakeResponse(200, {"completions": ["only-one"]})])
        be = RemoteBackend("http://svc", session=session)
        be.fine_tune(["p"])
        with pytest.raises(BackendError, match="malformed"):
            be.generate(["a", "b"])

    def test_health(self):
        be = RemoteBackend("http://svc", session=FakeSession([]))
        assert be.health() is True
