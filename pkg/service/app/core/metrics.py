"""
Prometheus-метрики VI-OOD.

Все метрики регистрируются в глобальном реестре prometheus_client.
Сервис отдаёт их через GET /metrics, обучение через
start_http_server при запуске CLI с --metrics-port.

Группы метрик:
- Технические: latency, throughput, error rate
- Обучение: шаги, компоненты loss, веса комбинации s
- ML: распределение OOD-скоров и предсказанных классов
"""

from prometheus_client import Counter, Gauge, Histogram, Info

# ============================================================================
# Технические метрики
# ============================================================================

REQUEST_COUNT = Counter(
    "http_requests_total",
    "Общее количество HTTP-запросов",
    ["method", "endpoint", "status_code"],
)

REQUEST_LATENCY = Histogram(
    "http_request_duration_seconds",
    "Время обработки HTTP-запроса (секунды)",
    ["method", "endpoint"],
    buckets=[0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0, 2.5, 5.0],
)

SCORING_LATENCY = Histogram(
    "scoring_duration_seconds",
    "Время скоринга батча текстов (секунды), без учёта HTTP overhead",
    buckets=[0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0, 2.5],
)

SCORING_ERRORS = Counter(
    "scoring_errors_total",
    "Количество ошибок скоринга",
)

MODEL_LOAD_TIME = Gauge(
    "model_load_time_seconds",
    "Время загрузки чекпоинта (секунды)",
)

MODEL_INFO = Info(
    "model",
    "Информация о загруженной модели",
)

# ============================================================================
# Обучение
# ============================================================================

TRAIN_STEPS = Counter(
    "train_steps_total",
    "Количество шагов оптимизатора",
    ["objective"],
)

TRAIN_LOSS = Gauge(
    "train_loss",
    "Средние компоненты loss за последнюю эпоху",
    ["objective", "component"],
)

COMBINATION_WEIGHT = Gauge(
    "combination_weight",
    "Веса s по слоям после последней эпохи",
    ["layer"],
)

EPOCH_DURATION = Histogram(
    "train_epoch_duration_seconds",
    "Длительность эпохи обучения (секунды)",
    buckets=[1, 2.5, 5, 10, 30, 60, 120, 300],
)

# ============================================================================
# ML-метрики
# ============================================================================

MSP_SCORE = Histogram(
    "msp_score",
    "Распределение MSP по запросам скоринга",
    buckets=[0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 0.999, 1.0],
)

COSINE_SCORE = Histogram(
    "cosine_score",
    "Распределение cosine-скора (max cos к валидационному банку)",
    buckets=[-0.5, 0.0, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99, 1.0],
)

PREDICTED_CLASS = Counter(
    "predicted_class_total",
    "Количество предсказаний по ID-классам",
    ["label"],
)

TEXTS_PER_REQUEST = Histogram(
    "texts_per_request",
    "Количество текстов в одном запросе /score",
    buckets=[1, 2, 5, 10, 25, 50, 100, 256],
)
