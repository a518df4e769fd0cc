"""
Pydantic модели для API и отчётов.
"""

from app.models.schemas import (
    ScoreRequest,
    TextScore,
    ScoreResponse,
    HealthResponse,
    ModelInfoResponse,
    MetricCell,
    EvalReport,
)

__all__ = [
    "ScoreRequest",
    "TextScore",
    "ScoreResponse",
    "HealthResponse",
    "ModelInfoResponse",
    "MetricCell",
    "EvalReport",
]
