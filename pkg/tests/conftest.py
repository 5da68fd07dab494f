import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from coct.backend import BackendHandle, ChatMessage, MockScript

DATA_DIR = Path(__file__).parent / "data"


def msgs(*pairs: str) -> list[ChatMessage]:
    """Shorthand: msgs("user:hi", "assistant:hello") -> ChatMessage list."""
    out = []
    for p in pairs:
        role, _, content = p.partition(":")
        out.append(ChatMessage(role, content))
    return out


def scripted_backend(exchanges, fallback="fail", fallback_text="", **kwargs) -> BackendHandle:
    script = MockScript.from_exchanges(exchanges, fallback=fallback, fallback_text=fallback_text)
    return BackendHandle.mock(script, **kwargs)


def echo_backend(**kwargs) -> BackendHandle:
    return BackendHandle.mock(MockScript(fallback="echo-last-user"), **kwargs)


def fixed_backend(text: str, **kwargs) -> BackendHandle:
    return BackendHandle.mock(MockScript(fallback="fixed", fallback_text=text), **kwargs)


@pytest.fixture
def tmp_corpus(tmp_path):
    """Three-dialogue fixture. Supporter turns repeat the preceding seeker
    turn verbatim so an echo backend reproduces every reference exactly."""
    dialogues = [
        {
            "id": "d1",
            "topic": "cooking",
            "turns": [
                {"speaker": "seeker", "text": "I've started learning how to cook."},
                {"speaker": "supporter", "text": "I've started learning how to cook."},
                {"speaker": "seeker", "text": "I tried making pizza last week."},
                {"speaker": "supporter", "text": "I tried making pizza last week."},
            ],
        },
        {
            "id": "d2",
            "turns": [
                {"speaker": "seeker", "text": "My job interview went badly today."},
                {"speaker": "supporter", "text": "My job interview went badly today."},
            ],
        },
        {
            "id": "d3",
            "turns": [
                {"speaker": "seeker", "text": "The weather has been lovely lately."},
                {"speaker": "supporter", "text": "The weather has been lovely lately."},
            ],
        },
    ]
    path = tmp_path / "corpus.jsonl"
    path.write_text("".join(json.dumps(d) + "\n" for d in dialogues), encoding="utf-8")
    return path


def write_mock(tmp_path, script: MockScript, name="mock.json") -> Path:
    path = tmp_path / name
    script.to_file(path)
    return path
