"""
Цикл обучения с фиксированными seed'ами.

Случайность разделена на независимые потоки одного SeedSequence:
инициализация параметров, порядок батчей и шум репараметризации. Поэтому
переключение объектива joint <-> discriminative не меняет порядок батчей
(проверяется по дайджесту перестановки каждой эпохи).
"""

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from app.core.autodiff import AdamW, Tape, backward, default_dtype
from app.core.config import RunConfig
from app.core.data import Corpora
from app.core.encoder import tokenize_batch
from app.core.errors import NumericError
from app.core.metrics import COMBINATION_WEIGHT, EPOCH_DURATION, TRAIN_LOSS, TRAIN_STEPS
from app.core.model import OODClassifier, build_model
from app.core.scoring import build_validation_bank, fit_gaussian_bank
from app.core.store import Checkpoint

logger = logging.getLogger(__name__)


@dataclass
class EpochLog:
    """Средние компоненты loss за эпоху, веса s и дайджест порядка батчей."""

    epoch: int
    total: float
    ce: float
    recon: float
    kl: float
    beta: float
    learning_rate: float
    batch_order_digest: str
    combination_weights: Optional[list] = None
    duration_seconds: float = 0.0


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    model: OODClassifier
    history: list = field(default_factory=list)

    @property
    def batch_order_digests(self) -> list:
        return [log.batch_order_digest for log in self.history]


def seed_streams(seed: int) -> dict:
    """Независимые генераторы: init, order, noise."""
    init_seq, order_seq, noise_seq = np.random.SeedSequence(seed).spawn(3)
    return {
        "init": np.random.default_rng(init_seq),
        "order": np.random.default_rng(order_seq),
        "noise": np.random.default_rng(noise_seq),
    }


def resolve_config(config: RunConfig, corpora: Corpora) -> RunConfig:
    """Согласовать K конфига с числом меток данных."""
    if config.head.n_classes == corpora.n_classes:
        return config
    logger.info(f"K берётся из данных: {config.head.n_classes} -> {corpora.n_classes}")
    head = config.head.model_copy(update={"n_classes": corpora.n_classes})
    return config.model_copy(update={"head": head})


def _dump_batch(out_dir: Optional[Path], texts: list, ids: np.ndarray, labels: np.ndarray,
                step: int, error: Exception) -> None:
    logger.error(f"Нечисловой loss на шаге {step}: {error}")
    if out_dir is None:
        return
    out_dir.mkdir(parents=True, exist_ok=True)
    dump = {
        "step": step,
        "error": str(error),
        "texts": texts,
        "ids": ids.tolist(),
        "labels": labels.tolist(),
    }
    path = out_dir / "nonfinite_batch.json"
    path.write_text(json.dumps(dump, ensure_ascii=False, indent=2), encoding="utf-8")
    logger.error(f"Батч сохранён в {path}")


def decay_exempt(model: OODClassifier) -> list:
    """Смещения, параметры LayerNorm и логиты s (все одномерные) без weight decay."""
    return [p for p in model.parameters() if p.ndim < 2]


def fit_banks(model: OODClassifier, config: RunConfig, train_ids: np.ndarray,
              train_y: np.ndarray, val_ids: np.ndarray):
    """GaussianBank по train латентам и ValidationBank по val латентам."""
    seed = config.effective_inference_seed
    deterministic = config.deterministic_inference
    train_reps = model.represent(train_ids, seed, deterministic)
    val_reps = model.represent(val_ids, seed, deterministic)
    gaussian_bank = fit_gaussian_bank(train_reps.latents, train_y, config.head.n_classes)
    validation_bank = build_validation_bank(val_reps.latents, cap=config.val_bank_cap, seed=config.seed)
    return gaussian_bank, validation_bank


def train(config: RunConfig, corpora: Corpora, out_dir=None) -> TrainResult:
    """
    Обучить модель и построить банки.

    Args:
        config: RunConfig (K берётся из данных).
        corpora: Результат load_dataset.
        out_dir: Каталог для history.json и дампа нечислового батча.

    Raises:
        NumericError: нечисловой loss или градиент (после дампа батча).
    """
    config = resolve_config(config, corpora)
    out_dir = Path(out_dir) if out_dir is not None else None
    with default_dtype(config.precision):
        return _train(config, corpora, out_dir)


def _train(config: RunConfig, corpora: Corpora, out_dir: Optional[Path]) -> TrainResult:
    streams = seed_streams(config.seed)
    max_len = config.encoder.max_len
    train_ids = tokenize_batch(list(corpora.train["text"]), corpora.vocab, max_len)
    train_y = corpora.train["y"].to_numpy()
    val_ids = tokenize_batch(list(corpora.val["text"]), corpora.vocab, max_len)

    model = build_model(config, len(corpora.vocab), streams["init"])
    optimizer = AdamW(model.parameters(), lr=config.learning_rate,
                      weight_decay=config.weight_decay, no_decay=decay_exempt(model))

    n = train_ids.shape[0]
    batch_size = config.batch_size
    steps_per_epoch = -(-n // batch_size)
    total_steps = config.epochs * steps_per_epoch
    logger.info(
        f"Обучение: objective={config.objective}, seed={config.seed}, epochs={config.epochs}, "
        f"steps={total_steps}, precision={config.precision}, vocab_hash={corpora.vocab.hash[:12]}"
    )

    history = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        epoch_start = time.perf_counter()
        order = streams["order"].permutation(n)
        digest = hashlib.sha256(order.astype("<i8").tobytes()).hexdigest()[:16]
        sums = {"total": 0.0, "ce": 0.0, "recon": 0.0, "kl": 0.0}
        beta = 0.0

        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            optimizer.lr = config.learning_rate * (1.0 - step / total_steps)
            try:
                with Tape():
                    total, breakdown = model.loss(
                        train_ids[idx], train_y[idx], step, total_steps, rng=streams["noise"]
                    )
                    if not np.isfinite(breakdown.total):
                        raise NumericError(f"loss={breakdown.total}")
                    backward(total)
            except NumericError as e:
                _dump_batch(out_dir, [corpora.train["text"].iloc[i] for i in idx],
                            train_ids[idx], train_y[idx], step, e)
                raise
            optimizer.step()
            optimizer.zero_grad()

            for key in sums:
                sums[key] += getattr(breakdown, key) * len(idx)
            beta = breakdown.beta
            step += 1
            TRAIN_STEPS.labels(objective=config.objective).inc()

        means = {key: value / n for key, value in sums.items()}
        weights = model.combination_weights()
        log = EpochLog(
            epoch=epoch,
            beta=beta,
            learning_rate=optimizer.lr,
            batch_order_digest=digest,
            combination_weights=None if weights is None else [float(w) for w in weights],
            duration_seconds=time.perf_counter() - epoch_start,
            **means,
        )
        history.append(log)

        EPOCH_DURATION.observe(log.duration_seconds)
        for key, value in means.items():
            TRAIN_LOSS.labels(objective=config.objective, component=key).set(value)
        weights_msg = ""
        if weights is not None:
            for layer, w in enumerate(weights):
                COMBINATION_WEIGHT.labels(layer=str(layer)).set(float(w))
            weights_msg = f", s=[{', '.join(f'{w:.3f}' for w in weights)}]"
        logger.info(
            f"Эпоха {epoch}/{config.epochs}: total={means['total']:.4f}, ce={means['ce']:.4f}, "
            f"recon={means['recon']:.4f}, kl={means['kl']:.4f}, beta={beta:.3f}, "
            f"order={digest}{weights_msg}"
        )

    gaussian_bank, validation_bank = fit_banks(model, config, train_ids, train_y, val_ids)
    checkpoint = Checkpoint(
        config=config,
        vocab=corpora.vocab,
        label_names=list(corpora.label_names),
        params=model.state_dict(),
        gaussian_bank=gaussian_bank,
        validation_bank=validation_bank,
    )

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "history.json").write_text(
            json.dumps([asdict(log) for log in history], indent=2), encoding="utf-8"
        )
    return TrainResult(checkpoint=checkpoint, model=model, history=history)
