"""Deterministic stand-ins for the chat and embedding endpoints.

Hosts the same wire protocols the real clients speak — POST
/chat/completions and POST /embeddings — backed by the scripted rule
table and the hash embedder, so demos and integration tests can run a
"remote" stack with zero nondeterminism and zero credentials.
"""

from __future__ import annotations

from typing import Optional, Sequence

from fastapi import FastAPI
from pydantic import BaseModel

from ..embedder import hash_embed


class ChatRequest(BaseModel):
    model: str
    messages: list[dict]
    temperature: float = 0.0
    max_tokens: Optional[int] = None


class EmbeddingsRequest(BaseModel):
    input: list[str]
    model: str = "hash-bigram-v1"


def create_mock_app(
    rules: Sequence[tuple[str, str]] = (),
    default_response: Optional[str] = None,
    embed_dim: int = 64,
) -> FastAPI:
    """Build the mock endpoint app.

    Chat answers come from the first rule whose pattern is a substring
    of the last user message; with no match, ``default_response`` if
    set, else a deterministic echo of the request. Embeddings are
    bigram hash vectors of dimension ``embed_dim``.
    """
    app = FastAPI(title="arrkit-mock-models", version="0.1.0")
    app.state.chat_calls = []
    rule_list = list(rules)

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.post("/chat/completions")
    def chat_completions(body: ChatRequest) -> dict:
        app.state.chat_calls.append(body.model_dump())
        last_user = ""
        for message in reversed(body.messages):
            if message.get("role") == "user":
                last_user = str(message.get("content", ""))
                break
        content = None
        for pattern, response in rule_list:
            if pattern in last_user:
                content = response
                break
        if content is None:
            content = (
                default_response
                if default_response is not None
                else f"[{body.model}] {last_user[:120]}"
            )
        return {
            "id": "mock-completion",
            "model": body.model,
            "choices": [
                {"index": 0, "message": {"role": "assistant", "content": content}}
            ],
        }

    @app.post("/embeddings")
    def embeddings(body: EmbeddingsRequest) -> dict:
        return {
            "model": body.model,
            "data": [
                {"index": i, "embedding": hash_embed(text, embed_dim).tolist()}
                for i, text in enumerate(body.input)
            ],
        }

    return app
