"""
Ядро VI-OOD: автодифференцирование, энкодер, голова, скоринг, обучение и оценка.
"""

from app.core.config import RunConfig, ServiceConfig
from app.core.store import ModelStore
from app.core.predictor import OODPredictor
from app.core import metrics

__all__ = [
    "RunConfig",
    "ServiceConfig",
    "ModelStore",
    "OODPredictor",
    "metrics",
]
