"""FastAPI microservice scoring subdomains with a trained checkpoint."""
from __future__ import annotations

import json
import logging
from functools import cached_property
from typing import List, Optional

from fastapi import FastAPI, HTTPException

from . import __version__
from .config import ExfilBertSettings, get_settings
from .data.corpus import normalize_text
from .evaluation.scores import score_texts
from .model.checkpoint import Checkpoint, load_checkpoint
from .schemas import OperatingPoint, ScoreItem, ScoreRequest, ScoreResponse, is_valid_subdomain


logger = logging.getLogger(__name__)


class Scorer:
    """Loads the configured checkpoint and operating point on first use."""

    def __init__(self, settings: ExfilBertSettings) -> None:
        self.settings = settings

    @cached_property
    def checkpoint(self) -> Checkpoint:
        if self.settings.service_checkpoint is None:
            raise HTTPException(status_code=503, detail="no checkpoint configured (EXFIL_BERT_SERVICE_CHECKPOINT)")
        logger.info("loading checkpoint %s", self.settings.service_checkpoint)
        return load_checkpoint(self.settings.service_checkpoint)

    @cached_property
    def operating_point(self) -> Optional[OperatingPoint]:
        path = self.settings.service_operating_point
        if path is None:
            return None
        return OperatingPoint.model_validate(json.loads(path.read_text(encoding="utf-8")))

    def __call__(self, request: ScoreRequest) -> ScoreResponse:
        items: List[ScoreItem] = []
        for raw in request.subdomains:
            text = normalize_text(raw) if request.normalize else raw
            if text is None or not is_valid_subdomain(text):
                items.append(ScoreItem(subdomain=raw, error="invalid subdomain"))
            else:
                items.append(ScoreItem(subdomain=raw, text=text))
        valid = [item for item in items if item.text is not None]
        op = self.operating_point
        if valid:
            checkpoint = self.checkpoint
            scores = score_texts(
                checkpoint.params, [item.text for item in valid], self.settings.score_batch_size, checkpoint.vocab
            )
            for item, score in zip(valid, scores):
                item.score = float(score)
                if op is not None:
                    item.alert = bool(score >= op.tau)
        return ScoreResponse(
            results=items,
            alpha=None if op is None else op.alpha,
            tau=None if op is None or op.is_sentinel else op.tau,
        )


def create_app(settings: ExfilBertSettings | None = None) -> FastAPI:
    scorer = Scorer(settings or get_settings())
    app = FastAPI(title="exfil-bert scoring service", version=__version__)

    @app.get("/health")
    def health() -> dict[str, str]:
        return {"status": "ok"}

    @app.get("/")
    def root() -> dict[str, str]:
        return {"message": "exfil-bert is ready. POST /score with a list of subdomains."}

    @app.post("/score")
    def score(request: ScoreRequest) -> dict:
        return scorer(request).to_json()

    return app


app = create_app()
