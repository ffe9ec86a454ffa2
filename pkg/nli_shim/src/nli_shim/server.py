"""FastAPI app exposing /entail, /entail/batch, and /health."""

from __future__ import annotations

import json

from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse

from .model import EntailmentModel


class BadRequest(Exception):
    def __init__(self, message: str):
        self.message = message


def _parse_pair(item) -> tuple[str, str]:
    if not isinstance(item, dict):
        raise BadRequest("each query must be a JSON object")
    for key in ("premise", "hypothesis"):
        value = item.get(key)
        if not isinstance(value, str):
            raise BadRequest(f"{key!r} must be a string")
        if not value:
            raise BadRequest(f"{key!r} must be non-empty")
    return item["premise"], item["hypothesis"]


async def _body(request: Request):
    try:
        return json.loads(await request.body())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise BadRequest(f"body must be JSON: {exc}") from exc


def create_app(model: EntailmentModel) -> FastAPI:
    app = FastAPI(title="entailment shim")

    @app.exception_handler(BadRequest)
    async def bad_request(_request, exc: BadRequest):
        return JSONResponse(status_code=400, content={"error": exc.message})

    @app.get("/health")
    def health():
        return {"status": "ready", "model": model.model_id}

    @app.post("/entail")
    async def entail(request: Request):
        pair = _parse_pair(await _body(request))
        verdict = await run_in_threadpool(model.classify, *pair)
        return verdict.as_payload()

    @app.post("/entail/batch")
    async def entail_batch(request: Request):
        payload = await _body(request)
        if not isinstance(payload, list):
            raise BadRequest("batch body must be a JSON array")
        pairs = [_parse_pair(item) for item in payload]
        verdicts = await run_in_threadpool(model.classify_batch, pairs)
        return [verdict.as_payload() for verdict in verdicts]

    return app
