"""FastAPI application exposing the wire contract."""

from __future__ import annotations

from contextlib import asynccontextmanager
from typing import Literal, Union

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .config import ServiceConfig, load_restricted_vocab
from .scoring import CausalScorer, MaskedScorer, UnknownWordError


class NextLogprobsRequest(BaseModel):
    context: list[str]
    candidates: Union[list[str], Literal["all"]] = "all"


class MaskedRequest(BaseModel):
    tokens: list[str]
    target_index: int
    candidate: str


class SpanTokensRequest(BaseModel):
    span: str


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    state = {"causal": None, "masked": None, "config": config}

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        cfg = state["config"] or ServiceConfig.from_env()
        state["config"] = cfg
        vocab = load_restricted_vocab(cfg.vocab_file)
        state["causal"] = CausalScorer(cfg.causal_model, vocab, cfg.max_batch)
        state["masked"] = MaskedScorer(cfg.masked_model, cfg.max_batch)
        yield

    app = FastAPI(title="lm-service", lifespan=lifespan)

    def causal() -> CausalScorer:
        if state["causal"] is None:
            raise HTTPException(status_code=503, detail="models not loaded")
        return state["causal"]

    def masked() -> MaskedScorer:
        if state["masked"] is None:
            raise HTTPException(status_code=503, detail="models not loaded")
        return state["masked"]

    @app.get("/health")
    def health():
        c, m = causal(), masked()
        return {
            "status": "ok",
            "models": {
                "causal": {"name": c.name, "fingerprint": c.fingerprint},
                "masked": {"name": m.name, "fingerprint": m.fingerprint},
            },
            "vocab_size": len(c.vocab),
        }

    @app.post("/v1/next_logprobs")
    def next_logprobs(req: NextLogprobsRequest):
        scorer = causal()
        try:
            vec = scorer.restricted_logprobs([w.lower() for w in req.context])
        except UnknownWordError as exc:
            raise HTTPException(
                status_code=404,
                detail=f"word {exc.word!r} not in restricted vocabulary",
            )
        if req.candidates == "all":
            return {"logprobs": [float(x) for x in vec],
                    "words": scorer.vocab}
        out = []
        for w in req.candidates:
            lw = w.lower()
            if lw not in scorer.vocab_index:
                raise HTTPException(
                    status_code=404,
                    detail=f"word {lw!r} not in restricted vocabulary",
                )
            out.append(float(vec[scorer.vocab_index[lw]]))
        return {"logprobs": out}

    @app.post("/v1/masked")
    def masked_fill(req: MaskedRequest):
        try:
            prob = masked().masked_prob(req.tokens, req.target_index,
                                        req.candidate)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        if prob is None:
            return {"multi_token": True}
        return {"prob": prob}

    @app.post("/v1/span_tokens")
    def span_tokens(req: SpanTokensRequest):
        if not req.span.strip():
            raise HTTPException(status_code=422, detail="empty span")
        return {"k": masked().span_token_count(req.span)}

    return app
