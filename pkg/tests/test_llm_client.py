import hashlib
import json

import numpy as np
import pytest

from conftest import write_chat_fixture, write_embed_fixture
from promosim.errors import ConfigError, ProtocolError, ReplayMissError, TransportError
from promosim.llm_client import (
    ChatMessage,
    ChatRequest,
    Transport,
    canonical_hash,
    chat_complete,
    embed_remote,
    user_chat,
)
from promosim.llmstub import StubLLMServer


def test_chat_request_validation():
    with pytest.raises(ConfigError):
        ChatMessage("narrator", "hi")
    with pytest.raises(ConfigError):
        ChatMessage("user", "")
    with pytest.raises(ConfigError):
        ChatRequest("m", messages=())
    with pytest.raises(ConfigError):
        ChatRequest("m", messages=(ChatMessage("user", "x"),), temperature=-1)


def test_canonical_hash_matches_independent_rendering():
    req = ChatRequest(
        "gpt-test",
        (ChatMessage("system", "be brief"), ChatMessage("user", "hello")),
        temperature=0.25,
        max_tokens=64,
    )
    # independent oracle: sorted-keys compact JSON hashed with sha256
    expected = hashlib.sha256(
        json.dumps(req.payload(), sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode()
    ).hexdigest()
    assert canonical_hash(req.payload()) == expected
    assert canonical_hash(req.payload()) == canonical_hash(req.payload())


def test_transport_validation(tmp_path):
    with pytest.raises(ConfigError):
        Transport(mode="psychic")
    with pytest.raises(ConfigError):
        Transport(mode="live")  # no base_url
    with pytest.raises(ConfigError):
        Transport(mode="replay")  # no fixture_dir
    Transport(mode="replay", fixture_dir=tmp_path)


def test_replay_returns_canned_reply(tmp_path):
    transport = Transport(mode="replay", fixture_dir=tmp_path)
    write_chat_fixture(tmp_path, "m", "ping", "canned reply")
    assert chat_complete(user_chat("m", "ping"), transport) == "canned reply"


def test_replay_miss_names_hash_and_dir(tmp_path):
    transport = Transport(mode="replay", fixture_dir=tmp_path)
    req = user_chat("m", "never recorded")
    digest = canonical_hash(req.payload())
    with pytest.raises(ReplayMissError) as err:
        chat_complete(req, transport)
    assert digest in str(err.value)
    assert str(tmp_path) in str(err.value)


def test_record_then_replay_round_trip(tmp_path):
    with StubLLMServer() as stub:
        rec = Transport(
            mode="record", base_url=stub.base_url, fixture_dir=tmp_path, retry_base_delay=0.01
        )
        req = user_chat("m", "Describe a teapot.")
        live_reply = chat_complete(req, rec)
    offline = Transport(mode="replay", fixture_dir=tmp_path)
    assert chat_complete(req, offline) == live_reply
    # the fixture file is content-addressed and audit-friendly
    path = tmp_path / f"{canonical_hash(req.payload())}.json"
    doc = json.loads(path.read_text())
    assert doc["request"]["messages"][0]["content"] == "Describe a teapot."


def test_live_retries_on_500_then_succeeds(tmp_path):
    with StubLLMServer(fail_statuses=[500, 500]) as stub:
        transport = Transport(
            mode="live", base_url=stub.base_url, max_retries=3, retry_base_delay=0.01
        )
        reply = chat_complete(user_chat("m", "Describe a kettle."), transport)
        assert reply
        assert stub.request_count == 3  # two failures + one success


def test_live_gives_up_after_max_retries(tmp_path):
    with StubLLMServer(fail_statuses=[500] * 10) as stub:
        transport = Transport(
            mode="live", base_url=stub.base_url, max_retries=2, retry_base_delay=0.01
        )
        with pytest.raises(TransportError, match="500"):
            chat_complete(user_chat("m", "x"), transport)
        assert stub.request_count == 3  # initial try + 2 retries


def test_live_does_not_retry_client_errors():
    with StubLLMServer(fail_statuses=[404]) as stub:
        transport = Transport(
            mode="live", base_url=stub.base_url, max_retries=3, retry_base_delay=0.01
        )
        with pytest.raises(TransportError, match="404"):
            chat_complete(user_chat("m", "x"), transport)
        assert stub.request_count == 1


def test_embed_remote_empty_list(tmp_path):
    transport = Transport(mode="replay", fixture_dir=tmp_path)
    assert embed_remote([], transport) == []


def test_embed_remote_normalizes_and_preserves_order(tmp_path):
    transport = Transport(mode="replay", fixture_dir=tmp_path)
    write_embed_fixture(tmp_path, "embedding", "first", [3.0, 0.0, 4.0])
    write_embed_fixture(tmp_path, "embedding", "second", [0.0, 2.0, 0.0])
    vecs = embed_remote(["first", "second"], transport)
    np.testing.assert_allclose(vecs[0], [0.6, 0.0, 0.8], atol=1e-12)  # (3,0,4)/5
    np.testing.assert_allclose(vecs[1], [0.0, 1.0, 0.0], atol=1e-12)


def test_embed_remote_rejects_mixed_dimensions(tmp_path):
    transport = Transport(mode="replay", fixture_dir=tmp_path)
    write_embed_fixture(tmp_path, "embedding", "a", [1.0, 0.0])
    write_embed_fixture(tmp_path, "embedding", "b", [1.0, 0.0, 0.0])
    with pytest.raises(ProtocolError, match="dimension"):
        embed_remote(["a", "b"], transport)


def test_embed_remote_respects_max_inflight():
    with StubLLMServer(delay=0.05) as stub:
        transport = Transport(
            mode="live",
            base_url=stub.base_url,
            max_inflight=2,
            retry_base_delay=0.01,
        )
        texts = [f"text {i}" for i in range(5)]
        vecs = embed_remote(texts, transport)
        assert len(vecs) == 5
        assert stub.request_count == 5
        assert stub.max_inflight_seen <= 2
        # order preserved: replies are text-dependent
        again = embed_remote(texts, transport)
        for v, w in zip(vecs, again):
            np.testing.assert_allclose(v, w)


def test_replay_mode_never_touches_network(tmp_path):
    # no base_url configured at all; a fixture hit must be enough
    transport = Transport(mode="replay", fixture_dir=tmp_path)
    write_chat_fixture(tmp_path, "m", "offline", "ok")
    assert chat_complete(user_chat("m", "offline"), transport) == "ok"
