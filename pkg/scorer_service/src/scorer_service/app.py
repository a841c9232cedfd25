"""HTTP surface: POST /entail, POST /embed, GET /health.

Schema violations answer 400, oversized request bodies 413, and requests
arriving before the backends finish loading 503. An optional shared
bearer token (SCORER_API_TOKEN) gates all endpoints.
"""
from __future__ import annotations

import os
from contextlib import asynccontextmanager

from fastapi import FastAPI, Request
from fastapi.encoders import jsonable_encoder
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field, model_validator

from .backends import EmbedBackend, EntailBackend, build_backends

DEFAULT_MAX_BODY_BYTES = 1_000_000


class EntailPair(BaseModel):
    premise: str
    hypothesis: str


class EntailRequest(BaseModel):
    premise: str | None = None
    hypothesis: str | None = None
    pairs: list[EntailPair] | None = Field(default=None, max_length=4096)

    @model_validator(mode="after")
    def _single_xor_batch(self):
        single = self.premise is not None and self.hypothesis is not None
        if single == (self.pairs is not None):
            raise ValueError("provide either premise+hypothesis or pairs")
        return self


class EmbedRequest(BaseModel):
    texts: list[str] = Field(min_length=1, max_length=4096)


def create_app(
    entail: EntailBackend | None = None,
    embed: EmbedBackend | None = None,
    max_body_bytes: int | None = None,
    api_token: str | None = None,
) -> FastAPI:
    @asynccontextmanager
    async def _lifespan(app: FastAPI):
        if app.state.entail is None or app.state.embed is None:
            built_entail, built_embed = build_backends()
            app.state.entail = app.state.entail or built_entail
            app.state.embed = app.state.embed or built_embed
        app.state.ready = True
        yield

    app = FastAPI(title="scorer-service", lifespan=_lifespan)
    app.state.ready = False
    app.state.max_body_bytes = max_body_bytes or int(
        os.environ.get("SCORER_MAX_BODY_BYTES", DEFAULT_MAX_BODY_BYTES)
    )
    app.state.api_token = api_token or os.environ.get("SCORER_API_TOKEN")
    app.state.entail = entail
    app.state.embed = embed

    @app.exception_handler(RequestValidationError)
    def _schema_violation(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={"detail": jsonable_encoder(exc.errors())},
        )

    @app.middleware("http")
    async def _gate(request: Request, call_next):
        length = request.headers.get("content-length")
        if length and int(length) > app.state.max_body_bytes:
            return JSONResponse(
                status_code=413, content={"detail": "request body too large"}
            )
        if app.state.api_token:
            expected = f"Bearer {app.state.api_token}"
            if request.headers.get("authorization") != expected:
                return JSONResponse(
                    status_code=401, content={"detail": "missing or bad token"}
                )
        if not app.state.ready:
            return JSONResponse(
                status_code=503, content={"detail": "models are loading"}
            )
        return await call_next(request)

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "entail_model": app.state.entail.name,
            "embed_model": app.state.embed.name,
            "embed_dim": app.state.embed.dim,
        }

    @app.post("/entail")
    def entail_endpoint(req: EntailRequest):
        if req.pairs is not None:
            pairs = [(p.premise, p.hypothesis) for p in req.pairs]
            return {"scores": app.state.entail.score_pairs(pairs)}
        score = app.state.entail.score_pairs([(req.premise, req.hypothesis)])[0]
        return {"score": score}

    @app.post("/embed")
    def embed_endpoint(req: EmbedRequest):
        vectors = app.state.embed.embed(req.texts)
        return {"vectors": vectors.tolist(), "dim": app.state.embed.dim}

    return app
