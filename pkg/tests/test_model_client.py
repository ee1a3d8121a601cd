import json

import httpx
import pytest

from culrag.model_client import (
    ENDPOINT_ENV,
    EmbeddingDimensionError,
    GenerationRequest,
    ModelConfigError,
    ModelTimeoutError,
    ModelTransportError,
    OllamaClient,
    embed_text,
    generate,
    resolve_endpoint,
)


def client(handler, **kw):
    kw.setdefault("sleep", lambda s: None)
    return OllamaClient(endpoint="http://model.test", transport=httpx.MockTransport(handler), **kw)


def test_generate_wire_format():
    seen = {}

    def handler(request):
        seen["path"] = request.url.path
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"response": " OK\n"})

    result = client(handler).generate(GenerationRequest("mistral:7b", "hi"))
    assert result.text == " OK\n"  # verbatim, no trimming
    assert result.model_id == "mistral:7b" and result.latency_ms >= 0
    assert seen["path"] == "/api/generate"
    assert seen["body"] == {
        "model": "mistral:7b",
        "prompt": "hi",
        "stream": False,
        "options": {"temperature": 0.0, "num_predict": 64, "stop": ["\n\n"]},
    }


def test_404_is_config_error_without_retry():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(404, json={"error": "model 'x' not found"})

    with pytest.raises(ModelConfigError):
        client(handler).generate(GenerationRequest("x", "hi"))
    assert len(calls) == 1


def test_retries_then_succeeds():
    responses = iter([httpx.Response(503), httpx.Response(500), httpx.Response(200, json={"response": "ok"})])
    delays = []
    c = client(lambda r: next(responses), retries=3, backoff=0.5, sleep=delays.append)
    assert c.generate(GenerationRequest("m", "p")).text == "ok"
    assert len(c.retry_log) == 2
    assert delays == [0.5, 1.0]


def test_connection_errors_retry_then_fail():
    def handler(request):
        raise httpx.ConnectError("refused", request=request)

    c = client(handler, retries=2)
    with pytest.raises(ModelTransportError, match="after 2 retries"):
        c.generate(GenerationRequest("m", "p"))
    assert len(c.retry_log) == 2


def test_client_error_not_retried():
    c = client(lambda r: httpx.Response(400, text="bad"))
    with pytest.raises(ModelTransportError):
        c.generate(GenerationRequest("m", "p"))
    assert c.retry_log == []


def test_timeout_carries_elapsed():
    def handler(request):
        raise httpx.ReadTimeout("slow", request=request)

    with pytest.raises(ModelTimeoutError) as info:
        client(handler).generate(GenerationRequest("m", "p"))
    assert info.value.elapsed >= 0


def test_malformed_response():
    with pytest.raises(ModelTransportError):
        client(lambda r: httpx.Response(200, json={"nope": 1})).generate(GenerationRequest("m", "p"))


def test_request_validation():
    with pytest.raises(ValueError):
        GenerationRequest("m", "")
    with pytest.raises(ValueError):
        GenerationRequest("m", "p", temperature=-1)
    with pytest.raises(ValueError):
        GenerationRequest("m", "p", max_tokens=0)


class TestEmbed:
    def test_length_mock(self):
        def handler(request):
            body = json.loads(request.content)
            assert request.url.path == "/api/embeddings" and body["model"] == "e"
            return httpx.Response(200, json={"embedding": [len(body["prompt"]), 0, 0]})

        assert embed_text(client(handler), "e", "abc") == [3.0, 0.0, 0.0]

    def test_empty_text_no_io(self):
        def handler(request):
            raise AssertionError("network touched")

        with pytest.raises(ValueError):
            embed_text(client(handler), "e", "")

    def test_dimension_drift(self):
        sizes = iter([768, 512])
        c = client(lambda r: httpx.Response(200, json={"embedding": [0.1] * next(sizes)}))
        assert len(c.embed("e", "a")) == 768
        with pytest.raises(EmbeddingDimensionError):
            c.embed("e", "b")

    def test_dimension_tracked_per_model(self):
        sizes = iter([4, 8])
        c = client(lambda r: httpx.Response(200, json={"embedding": [0.1] * next(sizes)}))
        c.embed("a", "x")
        assert len(c.embed("b", "x")) == 8


def test_endpoint_resolution(monkeypatch):
    monkeypatch.delenv(ENDPOINT_ENV, raising=False)
    assert resolve_endpoint() == "http://localhost:11434"
    monkeypatch.setenv(ENDPOINT_ENV, "http://gpu:1")
    assert resolve_endpoint() == "http://gpu:1"
    assert resolve_endpoint("http://explicit") == "http://explicit"


def test_module_generate_uses_transport():
    transport = httpx.MockTransport(lambda r: httpx.Response(200, json={"response": "OK"}))
    assert generate(GenerationRequest("m", "p"), "http://x", transport=transport).text == "OK"


def test_deterministic_mock_is_referentially_transparent():
    c = client(lambda r: httpx.Response(200, json={"response": json.loads(r.content)["prompt"][::-1]}))
    req = GenerationRequest("m", "abc")
    assert c.generate(req).text == c.generate(req).text == "cba"
