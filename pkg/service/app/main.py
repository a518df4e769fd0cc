"""
FastAPI приложение для OOD-скоринга текстов обученной VI-OOD моделью.

Модель загружается один раз при старте (lifespan) и дальше только читается,
поэтому запросы /score можно обслуживать параллельно.
"""

import logging
import os
import time
from contextlib import asynccontextmanager
from typing import Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import PlainTextResponse
from prometheus_client import CONTENT_TYPE_LATEST, generate_latest

from app.core import ModelStore, OODPredictor, ServiceConfig
from app.core.errors import VIOODError
from app.core.metrics import REQUEST_COUNT, REQUEST_LATENCY
from app.models import HealthResponse, ModelInfoResponse, ScoreRequest, ScoreResponse

logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s")
logger = logging.getLogger(__name__)

UNTRACKED_PATHS = {"/metrics"}

_store: Optional[ModelStore] = None
_predictor: Optional[OODPredictor] = None


def _loaded_store() -> ModelStore:
    """Хранилище с загруженной моделью, иначе 503."""
    if _store is None or not _store.is_loaded():
        raise HTTPException(status_code=503, detail="Модель не загружена")
    return _store


def _service_config() -> ServiceConfig:
    return ServiceConfig(
        model_path=os.getenv("MODEL_PATH", "/app/models/model.ckpt"),
        max_batch=int(os.getenv("MAX_BATCH", "256")),
    )


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Загрузка чекпоинта при старте; без него сервис работает и отвечает 503."""
    global _store, _predictor

    try:
        config = _service_config()
    except ValueError as e:
        logger.error(f"Некорректная конфигурация сервиса: {e}")
        raise

    _store, _predictor = ModelStore(), None
    try:
        _store.load_model(config.model_path)
    except (FileNotFoundError, VIOODError) as e:
        logger.error(f"Чекпоинт {config.model_path} не загружен: {e}")
    else:
        _predictor = OODPredictor(store=_store, config=config)
        logger.info(
            f"Сервис готов: objective={_store.objective}, K={_store.n_classes}, "
            f"max_batch={config.max_batch}"
        )

    yield
    logger.info("Сервис остановлен")


app = FastAPI(
    title="VI-OOD Scorer",
    description="Микросервис OOD-скоринга текстов (msp, maha, energy, cosine)",
    version="1.0.0",
    lifespan=lifespan,
)


@app.middleware("http")
async def track_requests(request: Request, call_next):
    """Счётчик и гистограмма длительности по (метод, путь, код ответа)."""
    path = request.url.path
    if path in UNTRACKED_PATHS:
        return await call_next(request)

    started = time.perf_counter()
    response = await call_next(request)
    elapsed = time.perf_counter() - started

    REQUEST_COUNT.labels(method=request.method, endpoint=path,
                         status_code=str(response.status_code)).inc()
    REQUEST_LATENCY.labels(method=request.method, endpoint=path).observe(elapsed)
    return response


# ============================================================================
# Эндпоинты
# ============================================================================

@app.get("/metrics", include_in_schema=False)
def metrics():
    return PlainTextResponse(content=generate_latest(), media_type=CONTENT_TYPE_LATEST)


@app.get("/health", response_model=HealthResponse)
def health():
    store = _loaded_store()
    return HealthResponse(status="healthy", model_loaded=True, **store.get_stats())


@app.get("/model/info", response_model=ModelInfoResponse)
def model_info():
    """Объектив, метки, размерность латента, hash словаря и веса s (для joint)."""
    store = _loaded_store()
    weights = store.model.combination_weights()
    return ModelInfoResponse(
        objective=store.objective,
        labels=store.label_names,
        n_layers=store.n_layers,
        latent_dim=store.model.latent_dim,
        vocab_hash=store.checkpoint.vocab_hash,
        score_functions=list(store.checkpoint.config.score_functions),
        combination_weights=None if weights is None else [float(w) for w in weights],
    )


@app.post("/score", response_model=ScoreResponse)
def score(request: ScoreRequest):
    """
    OOD-скоры для списка текстов.

    - **texts**: Тексты (не пустой список, не больше max_batch)
    - **score_functions**: Подмножество msp/maha/energy/cosine

    Для каждого текста: предсказанный класс, вероятности классов и скоры
    уверенности (больше => более ID-подобный).
    """
    _loaded_store()
    try:
        result = _predictor.predict(request.texts, request.score_functions)
    except VIOODError as e:
        logger.error(f"Ошибка скоринга: {e}")
        raise HTTPException(status_code=422, detail=str(e))
    return ScoreResponse(**result)
