"""
Pydantic модели для API сервиса скоринга и отчётов оценки.
"""

from typing import Optional

from pydantic import BaseModel, Field


# ============================================================================
# API
# ============================================================================

class ScoreRequest(BaseModel):
    """Тексты для OOD-скоринга."""

    texts: list[str] = Field(..., min_length=1, description="Тексты для скоринга")
    score_functions: Optional[list[str]] = Field(
        None, description="Подмножество msp/maha/energy/cosine; по умолчанию из конфига модели"
    )


class TextScore(BaseModel):
    """Скоры одного текста (больше => более ID-подобный)."""

    text: str = Field(..., description="Исходный текст")
    predicted_label: str = Field(..., description="Предсказанный ID-класс")
    probabilities: dict[str, float] = Field(..., description="Вероятности ID-классов")
    scores: dict[str, float] = Field(..., description="Функция уверенности -> скор")
    n_unknown_tokens: int = Field(..., ge=0, description="Количество токенов вне словаря")


class ScoreResponse(BaseModel):
    """Ответ со скорами для каждого текста."""

    results: list[TextScore] = Field(..., description="Скоры в порядке запроса")
    objective: str = Field(..., description="Объектив модели: joint или discriminative")


class HealthResponse(BaseModel):
    """Ответ проверки здоровья сервиса."""

    status: str = Field(..., description="Статус сервиса")
    model_loaded: bool = Field(..., description="Загружена ли модель")
    n_layers: int = Field(..., ge=0, description="Количество слоёв L")
    n_classes: int = Field(..., ge=0, description="Количество ID-классов")
    vocab_size: int = Field(..., ge=0, description="Размер словаря")


class ModelInfoResponse(BaseModel):
    """Информация о модели."""

    objective: str = Field(..., description="joint или discriminative")
    labels: list[str] = Field(..., description="Имена ID-классов")
    n_layers: int = Field(..., ge=2, description="Количество слоёв L")
    latent_dim: int = Field(..., ge=1, description="Размерность латента для скоринга")
    vocab_hash: str = Field(..., description="SHA-256 словаря")
    score_functions: list[str] = Field(..., description="Включённые функции уверенности")
    combination_weights: Optional[list[float]] = Field(
        None, description="Веса s по слоям (только joint)"
    )


# ============================================================================
# Отчёты оценки
# ============================================================================

class MetricCell(BaseModel):
    """Метрики одной пары (OOD-набор, функция) в процентах."""

    ood_set: str
    score_function: str
    auroc: float = Field(..., ge=0.0, le=100.0)
    far95: float = Field(..., ge=0.0, le=100.0)
    aupr: float = Field(..., ge=0.0, le=100.0)


class EvalReport(BaseModel):
    """
    Результат evaluate.

    averages: среднее по OOD-наборам для каждой функции (ood_set="average").
    wall_clock_seconds не участвует в сравнении воспроизводимости.
    """

    objective: str
    seed: int
    inference_seed: int
    deterministic_inference: bool
    id_accuracy: float = Field(..., ge=0.0, le=100.0, description="Точность на id_test, %")
    cells: list[MetricCell]
    averages: list[MetricCell]
    combination_weights: Optional[list[float]] = None
    wall_clock_seconds: float = 0.0

    def cell(self, ood_set: str, score_function: str) -> MetricCell:
        for cell in self.cells + self.averages:
            if cell.ood_set == ood_set and cell.score_function == score_function:
                return cell
        raise KeyError((ood_set, score_function))

    def without_timing(self) -> dict:
        return self.model_dump(exclude={"wall_clock_seconds"})
