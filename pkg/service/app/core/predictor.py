"""
Оценка обученной модели и скоринг текстов.

- evaluate: таблица AUROC / FAR@95 / AUPR по (OOD-набор, функция) и точность ID
- probe_layers: дистанционные скоры по [CLS] каждого слоя по отдельности
- export_combination: веса s обученной joint-модели
- OODPredictor: скоринг текстов для сервиса
"""

import logging
import time
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.special import softmax
from sklearn.linear_model import LogisticRegression

from app.core.autodiff import default_dtype
from app.core.config import ServiceConfig
from app.core.data import Corpora
from app.core.encoder import tokenize_batch
from app.core.errors import CompatError, ContractError
from app.core.eval_metrics import id_accuracy, ood_metrics
from app.core.metrics import (
    COSINE_SCORE,
    MSP_SCORE,
    PREDICTED_CLASS,
    SCORING_ERRORS,
    SCORING_LATENCY,
    TEXTS_PER_REQUEST,
)
from app.core.model import OODClassifier, Representations
from app.core.scoring import (
    build_validation_bank,
    compute_scores,
    fit_gaussian_bank,
)
from app.core.store import Checkpoint, ModelStore
from app.models.schemas import EvalReport, MetricCell

logger = logging.getLogger(__name__)

AVERAGE = "average"
COMBINATION_PARAM = "head.combination.logits"
PROBE_FUNCTIONS = ("maha", "cosine")


def check_compatibility(ckpt: Checkpoint, corpora: Corpora) -> None:
    """
    Raises:
        CompatError: словарь или метки корпусов не совпадают с чекпоинтом.
    """
    if corpora.vocab.hash != ckpt.vocab_hash:
        raise CompatError(
            f"Hash словаря данных {corpora.vocab.hash[:12]} != {ckpt.vocab_hash[:12]} в чекпоинте"
        )
    if list(corpora.label_names) != list(ckpt.label_names):
        raise CompatError(f"Метки данных {corpora.label_names} != {ckpt.label_names} в чекпоинте")


def represent_texts(model: OODClassifier, ckpt: Checkpoint, texts: Iterable[str]) -> Representations:
    config = ckpt.config
    ids = tokenize_batch(list(texts), ckpt.vocab, config.encoder.max_len)
    return model.represent(ids, config.effective_inference_seed, config.deterministic_inference)


def _percent_metrics(ood_set: str, function: str, id_scores: np.ndarray,
                     ood_scores: np.ndarray) -> MetricCell:
    values = ood_metrics(id_scores, ood_scores)
    return MetricCell(
        ood_set=ood_set,
        score_function=function,
        auroc=100.0 * values["auroc"],
        far95=100.0 * values["far95"],
        aupr=100.0 * values["aupr"],
    )


def average_cells(cells: Sequence[MetricCell], functions: Sequence[str]) -> list:
    """Среднее по OOD-наборам для каждой функции."""
    averages = []
    for function in functions:
        group = [c for c in cells if c.score_function == function]
        averages.append(MetricCell(
            ood_set=AVERAGE,
            score_function=function,
            auroc=float(np.mean([c.auroc for c in group])),
            far95=float(np.mean([c.far95 for c in group])),
            aupr=float(np.mean([c.aupr for c in group])),
        ))
    return averages


def combination_weights(ckpt: Checkpoint) -> Optional[np.ndarray]:
    if ckpt.config.objective != "joint":
        return None
    return softmax(np.asarray(ckpt.params[COMBINATION_PARAM], dtype=np.float64))


def evaluate(ckpt: Checkpoint, corpora: Corpora, model: Optional[OODClassifier] = None,
             n_jobs: int = 1) -> EvalReport:
    """
    Оценить чекпоинт на id_test и всех OOD-наборах.

    Args:
        ckpt: Чекпоинт с банками.
        corpora: Корпуса с тем же словарём.
        model: Уже восстановленная модель; по умолчанию строится из ckpt.
        n_jobs: Потоки joblib для подсчёта метрик по ячейкам.

    Raises:
        CompatError: несовместимые словарь или метки.
    """
    check_compatibility(ckpt, corpora)
    config = ckpt.config
    start = time.perf_counter()

    with default_dtype(config.precision):
        if model is None:
            model = ckpt.build_model()
        test_reps = represent_texts(model, ckpt, corpora.test["text"])
        ood_reps = {name: represent_texts(model, ckpt, frame["text"]) for name, frame in corpora.ood.items()}

    functions = list(config.score_functions)
    id_record = compute_scores(test_reps.latents, test_reps.logits,
                               ckpt.gaussian_bank, ckpt.validation_bank, functions)
    ood_records = {
        name: compute_scores(reps.latents, reps.logits, ckpt.gaussian_bank, ckpt.validation_bank, functions)
        for name, reps in ood_reps.items()
    }

    cells = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_percent_metrics)(name, function, id_record[function], record[function])
        for name, record in ood_records.items()
        for function in functions
    )
    accuracy = 100.0 * id_accuracy(test_reps.logits, corpora.test["y"].to_numpy())
    weights = combination_weights(ckpt)

    report = EvalReport(
        objective=config.objective,
        seed=config.seed,
        inference_seed=config.effective_inference_seed,
        deterministic_inference=config.deterministic_inference,
        id_accuracy=accuracy,
        cells=list(cells),
        averages=average_cells(cells, functions),
        combination_weights=None if weights is None else [float(w) for w in weights],
        wall_clock_seconds=time.perf_counter() - start,
    )
    summary = ", ".join(f"{c.score_function}={c.auroc:.2f}" for c in report.averages)
    logger.info(f"Оценка: acc={accuracy:.2f}%, средний AUROC: {summary}")
    return report


# ============================================================================
# Послойный зонд
# ============================================================================

def parse_layer_range(text: str, n_layers: int) -> tuple:
    """'a-b' или 'a' -> (a, b) включительно."""
    parts = text.split("-")
    try:
        bounds = [int(p) for p in parts]
    except ValueError:
        raise ContractError(f"Некорректный диапазон слоёв: {text!r}") from None
    if len(bounds) == 1:
        bounds = bounds * 2
    if len(bounds) != 2 or not 0 <= bounds[0] <= bounds[1] < n_layers:
        raise ContractError(f"Диапазон {text!r} вне [0, {n_layers - 1}]")
    return bounds[0], bounds[1]


def _logit_head(train_features: np.ndarray, train_y: np.ndarray):
    """Свежая однослойная логистическая голова на признаках слоя."""
    head = LogisticRegression(max_iter=1000)
    head.fit(train_features, train_y)

    def logits(features: np.ndarray) -> np.ndarray:
        values = head.decision_function(features)
        if values.ndim == 1:
            values = np.column_stack([np.zeros_like(values), values])
        return values

    return logits


def _probe_row(features: dict, train_y: np.ndarray, ood_names: list, functions: Sequence[str],
               seed: int, val_cap: int, logit_scores: bool) -> dict:
    """AUROC (%) для признаков одного слоя или диапазона слоёв."""
    gaussian_bank = fit_gaussian_bank(features["train"], train_y)
    validation_bank = build_validation_bank(features["val"], cap=val_cap, seed=seed)
    all_functions = list(functions)
    logits = {name: np.zeros((values.shape[0], 1)) for name, values in features.items()}
    if logit_scores:
        head = _logit_head(features["train"], train_y)
        logits = {name: head(values) for name, values in features.items()}
        all_functions += ["msp", "energy"]

    id_record = compute_scores(features["test"], logits["test"], gaussian_bank,
                               validation_bank, all_functions)
    row = {}
    for function in all_functions:
        aurocs = []
        for name in ood_names:
            ood_record = compute_scores(features[name], logits[name], gaussian_bank,
                                        validation_bank, [function])
            value = 100.0 * ood_metrics(id_record[function], ood_record[function])["auroc"]
            row[f"{function}_{name}"] = value
            aurocs.append(value)
        row[f"{function}_{AVERAGE}"] = float(np.mean(aurocs))
    return row


def probe_layers(ckpt: Checkpoint, corpora: Corpora, layer_ranges: Sequence[str] = (),
                 functions: Sequence[str] = PROBE_FUNCTIONS, logit_scores: bool = False,
                 model: Optional[OODClassifier] = None, n_jobs: int = 1) -> tuple:
    """
    AUROC дистанционных скоров по [CLS] каждого слоя l в [0, L-1].

    Банки строятся заново по h^l (train для maha, val для cosine).
    Для discriminative-модели строка L-1 совпадает с evaluate.

    Args:
        layer_ranges: Диапазоны 'a-b'; признак диапазона есть среднее [CLS] по его слоям.
        logit_scores: Добавить msp/energy от свежей логистической головы на слое.

    Returns:
        (таблица по слоям с ровно L строками, таблица по диапазонам или None).
    """
    check_compatibility(ckpt, corpora)
    config = ckpt.config
    with default_dtype(config.precision):
        if model is None:
            model = ckpt.build_model()
        reps = {
            "train": represent_texts(model, ckpt, corpora.train["text"]),
            "val": represent_texts(model, ckpt, corpora.val["text"]),
            "test": represent_texts(model, ckpt, corpora.test["text"]),
        }
        for name, frame in corpora.ood.items():
            reps[name] = represent_texts(model, ckpt, frame["text"])

    stacks = {name: np.asarray(r.stacks, dtype=np.float64) for name, r in reps.items()}
    train_y = corpora.train["y"].to_numpy()
    ood_names = list(corpora.ood)
    n_layers = config.encoder.n_layers

    def run(selector) -> dict:
        features = {name: selector(stack) for name, stack in stacks.items()}
        return _probe_row(features, train_y, ood_names, functions, config.seed,
                          config.val_bank_cap, logit_scores)

    rows = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(run)(lambda stack, layer=layer: stack[:, layer, :]) for layer in range(n_layers)
    )
    table = pd.DataFrame(rows, index=pd.RangeIndex(n_layers, name="layer"))
    logger.info(
        "Зонд по слоям: "
        + ", ".join(f"{fn}: лучший слой {int(table[f'{fn}_{AVERAGE}'].idxmax())}" for fn in functions)
    )

    range_table = None
    if layer_ranges:
        bounds = [parse_layer_range(text, n_layers) for text in layer_ranges]
        range_rows = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(run)(lambda stack, a=a, b=b: stack[:, a:b + 1, :].mean(axis=1)) for a, b in bounds
        )
        range_table = pd.DataFrame(range_rows, index=pd.Index([f"{a}-{b}" for a, b in bounds], name="range"))
    return table, range_table


def export_combination(ckpt: Checkpoint) -> pd.DataFrame:
    """
    Веса s по слоям (колонки layer, weight).

    Raises:
        ContractError: чекпоинт discriminative, вектора s нет.
    """
    weights = combination_weights(ckpt)
    if weights is None:
        raise ContractError("У discriminative-модели нет вектора комбинации s")
    return pd.DataFrame({"layer": np.arange(weights.size), "weight": weights})


# ============================================================================
# Сервис
# ============================================================================

class OODPredictor:
    """
    Скоринг текстов загруженной моделью.

    Шум eps задают inference_seed чекпоинта и токены текста, поэтому скоры
    текста не зависят от запроса и позиции в нём.

    Attributes:
        store: Хранилище модели с банками.
        config: Конфигурация сервиса.
    """

    def __init__(self, store: ModelStore, config: ServiceConfig):
        self._store = store
        self._config = config

    def predict(self, texts: Sequence[str], score_functions: Optional[Sequence[str]] = None) -> dict:
        """
        Returns:
            dict с ключами:
            - results: list[dict] с полями text, predicted_label, probabilities, scores, n_unknown_tokens
            - objective: str
        """
        start = time.perf_counter()
        try:
            if len(texts) > self._config.max_batch:
                raise ContractError(f"Не более {self._config.max_batch} текстов в запросе, получено {len(texts)}")
            ckpt = self._store.checkpoint
            functions = list(score_functions or ckpt.config.score_functions)

            with default_dtype(ckpt.config.precision):
                reps = represent_texts(self._store.model, ckpt, texts)
            record = compute_scores(reps.latents, reps.logits, ckpt.gaussian_bank,
                                    ckpt.validation_bank, functions)
            probabilities = softmax(np.asarray(reps.logits, dtype=np.float64), axis=1)
            predicted = np.argmax(reps.logits, axis=1)
            labels = self._store.label_names

            results = []
            for i, text in enumerate(texts):
                label = labels[int(predicted[i])]
                results.append({
                    "text": text,
                    "predicted_label": label,
                    "probabilities": {name: float(p) for name, p in zip(labels, probabilities[i])},
                    "scores": {fn: float(record[fn][i]) for fn in functions},
                    "n_unknown_tokens": sum(1 for token in text.split() if token not in ckpt.vocab),
                })
                PREDICTED_CLASS.labels(label=label).inc()

            # --- Метрики ---
            SCORING_LATENCY.observe(time.perf_counter() - start)
            TEXTS_PER_REQUEST.observe(len(texts))
            if "msp" in record.scores:
                for value in record["msp"]:
                    MSP_SCORE.observe(float(value))
            if "cosine" in record.scores:
                for value in record["cosine"]:
                    COSINE_SCORE.observe(float(value))

            return {"results": results, "objective": ckpt.config.objective}

        except Exception:
            SCORING_ERRORS.inc()
            raise
