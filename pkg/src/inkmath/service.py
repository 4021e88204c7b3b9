"""HTTP inference service for the stroke recognizer.

POST /recognize takes raw device-coordinate strokes, normalizes them
server-side, greedy-decodes, scores postfix validity and evaluates when
possible. GET /model exposes config and vocabulary; GET /healthz is a
liveness probe. The checkpoint is immutable and shared across requests.
"""

from __future__ import annotations

import time
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import autograd as ag
from . import grammar, model, strokes, vocab


class RecognizeRequest(BaseModel):
    strokes: list[list[tuple[float, float, float]]]
    model_id: Optional[str] = None


class BadStrokes(ValueError):
    pass


def normalize_device_strokes(raw: list[list]) -> list[np.ndarray]:
    """Device pixels -> unit square, shared scale so aspect is preserved.

    Raises BadStrokes for an empty stroke list, strokes with fewer than two
    points, or non-finite coordinates.
    """
    if not raw:
        raise BadStrokes("strokes: need at least one stroke")
    arrays = []
    for i, stroke in enumerate(raw):
        arr = np.asarray(stroke, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise BadStrokes(f"strokes[{i}]: points must be [x, y, t]")
        if len(arr) < 2:
            raise BadStrokes(f"strokes[{i}]: need at least 2 points")
        if not np.isfinite(arr).all():
            raise BadStrokes(f"strokes[{i}]: non-finite coordinate")
        arrays.append(arr)
    allpts = np.concatenate(arrays)
    lo = allpts[:, :2].min(axis=0)
    extent = float(max((allpts[:, :2].max(axis=0) - lo).max(), 1e-9))
    return [np.column_stack([(a[:, :2] - lo) / extent, a[:, 2]])
            for a in arrays]


def recognize_strokes(params: dict, config: model.ModelConfig,
                      raw_strokes: list[list], label_kind: str = "rpn") -> dict:
    """Shared recognition pipeline behind /recognize and the CLI."""
    started = time.perf_counter()
    normalized = normalize_device_strokes(raw_strokes)
    tok = strokes.tokenize_strokes([a[:, :2] for a in normalized], config.n)
    x, mask = model.stack_inputs([tok])
    with ag.no_grad():
        z, _ = model.encode(params, config, x, mask)
    ids, cross = model.greedy_decode(params, config, z, mask)
    tokens = vocab.decode(ids)
    stripped = vocab.strip_specials(tokens)
    violations = grammar.count_violations(stripped)
    value = None
    if violations == 0:
        try:
            value = grammar.to_decimal(grammar.evaluate_rpn(stripped))
        except (ValueError, ZeroDivisionError):
            try:
                value = grammar.to_decimal(
                    grammar.evaluate(grammar.parse_infix(stripped)))
            except (ValueError, ZeroDivisionError):
                value = None
    if label_kind == "ascii":
        ascii_text = "".join(stripped)
    else:
        ascii_text = " ".join("eon" if t == vocab.EON else t
                              for t in stripped)
    report = {
        "tokens_in": [vocab.BOS] + [f"s{i}" for i in range(len(normalized))]
                     + [vocab.EOS]
                     + [vocab.PAD] * (config.n - len(normalized) - 2),
        "tokens_out": tokens[1:],
        "layers": [[head.tolist() for head in layer] for layer in cross],
    }
    return {
        "tokens": tokens,
        "ascii": ascii_text,
        "violations": violations,
        "value": value,
        "attention": report,
        "ms": (time.perf_counter() - started) * 1000.0,
    }


def create_app(checkpoint_path: str) -> FastAPI:
    bundle = model.load_checkpoint(checkpoint_path)
    params, config = bundle["params"], bundle["config"]
    label_kind = bundle["meta"].get("label_kind", "rpn")
    app = FastAPI(title="inkmath", version="0.1.0")
    # the browser client is served from another origin
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        detail = [{"field": ".".join(str(p) for p in e["loc"]),
                   "message": e["msg"]} for e in exc.errors()]
        return JSONResponse(status_code=400, content={"detail": detail})

    @app.exception_handler(BadStrokes)
    async def bad_strokes(request: Request, exc: BadStrokes):
        field, _, message = str(exc).partition(": ")
        return JSONResponse(status_code=400,
                            content={"detail": [{"field": field,
                                                 "message": message}]})

    @app.exception_handler(strokes.StrokeBudgetError)
    async def budget_overflow(request: Request,
                              exc: strokes.StrokeBudgetError):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok"}

    @app.get("/model")
    async def model_info():
        return {"config": config.to_dict(),
                "vocab": list(vocab.TOKENS),
                "label_kind": label_kind,
                "params": model.count_params(config)}

    @app.post("/recognize")
    async def recognize(body: RecognizeRequest):
        return recognize_strokes(params, config, body.strokes, label_kind)

    return app


def serve(checkpoint_path: str, host: str = "127.0.0.1", port: int = 8000):
    import uvicorn

    uvicorn.run(create_app(checkpoint_path), host=host, port=port)
