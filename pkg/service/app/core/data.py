"""
Загрузка корпусов и синтетический набор данных.

Формат: JSON Lines в UTF-8, по записи на строку с полями text и label
(для OOD-файлов label не обязателен и игнорируется).
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.preprocessing import LabelEncoder

from app.core.config import DatasetSpec
from app.core.encoder import Vocabulary
from app.core.errors import ContractError, IngestError, LabelError

logger = logging.getLogger(__name__)


@dataclass
class Corpora:
    """
    Корпуса в памяти.

    Attributes:
        train, val, test: DataFrame с колонками text, label (str), y (индекс класса).
        ood: Имя OOD-набора -> DataFrame с колонкой text.
        vocab: Словарь, построенный только по id_train.
        label_names: Отсортированные строки меток; индекс = класс.
    """

    train: pd.DataFrame
    val: pd.DataFrame
    test: pd.DataFrame
    ood: dict
    vocab: Vocabulary
    label_names: list = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return len(self.label_names)


def read_records(path: Path, require_label: bool) -> pd.DataFrame:
    """
    Прочитать JSON Lines файл.

    Raises:
        IngestError: файл пуст, строка не UTF-8 или не JSON-объект, нет text/label.
    """
    path = Path(path)
    rows = []
    with open(path, "rb") as fh:
        for line_no, raw in enumerate(fh, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as e:
                raise IngestError(f"{path}:{line_no}: строка не в UTF-8 ({e.reason})") from None
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise IngestError(f"{path}:{line_no}: некорректный JSON ({e.msg})") from None
            if not isinstance(record, dict) or not isinstance(record.get("text"), str):
                raise IngestError(f"{path}:{line_no}: ожидался объект с текстовым полем text")
            row = {"text": record["text"]}
            if require_label:
                if "label" not in record or record["label"] is None:
                    raise IngestError(f"{path}:{line_no}: отсутствует поле label")
                row["label"] = str(record["label"])
            rows.append(row)
    if not rows:
        raise IngestError(f"{path}: файл пуст")
    columns = ["text", "label"] if require_label else ["text"]
    return pd.DataFrame(rows, columns=columns)


def load_dataset(spec: DatasetSpec) -> Corpora:
    """
    Загрузить ID/OOD корпуса и построить словарь по id_train.

    Метки отображаются в индексы в лексикографическом порядке строк.

    Raises:
        IngestError: некорректная запись (с номером строки).
        LabelError: метка val/test отсутствует в id_train.
    """
    train = read_records(spec.resolve(spec.id_train), require_label=True)
    val = read_records(spec.resolve(spec.id_val), require_label=True)
    test = read_records(spec.resolve(spec.id_test), require_label=True)

    encoder = LabelEncoder()
    encoder.fit(train["label"])
    label_names = [str(c) for c in encoder.classes_]
    if len(label_names) < 2:
        raise LabelError(f"id_train: нужно не меньше 2 классов, найдено {label_names}")
    for name, frame in (("id_val", val), ("id_test", test)):
        unknown = sorted(set(frame["label"]) - set(label_names))
        if unknown:
            raise LabelError(f"{name}: метки {unknown} отсутствуют в id_train")
    for frame in (train, val, test):
        frame["y"] = encoder.transform(frame["label"]).astype(np.int64)

    ood = {}
    for path in spec.ood_test:
        stem = name = Path(path).stem
        suffix = 1
        while name in ood:
            name = f"{stem}_{suffix}"
            suffix += 1
        ood[name] = read_records(spec.resolve(path), require_label=False)

    vocab = Vocabulary.build(train["text"])
    ood_sizes = {k: len(v) for k, v in ood.items()}
    logger.info(
        f"Данные загружены: train={len(train)}, val={len(val)}, test={len(test)}, "
        f"K={len(label_names)}, OOD={ood_sizes}"
    )
    return Corpora(train=train, val=val, test=test, ood=ood, vocab=vocab, label_names=label_names)


# ============================================================================
# Синтетический набор
# ============================================================================

CLASS_KEYWORDS = {
    "alpha": ["sunny", "bright", "warm", "clear", "golden", "calm"],
    "beta": ["stormy", "dark", "cold", "cloudy", "grey", "windy"],
}
FILLER_WORDS = [
    "the", "a", "day", "was", "very", "and", "sky", "today", "it", "is",
    "over", "city", "morning", "evening", "quite", "feels", "looks", "this",
]


def _id_text(rng: np.random.Generator, keywords: list) -> str:
    length = int(rng.integers(6, 13))
    words = list(rng.choice(FILLER_WORDS, size=length))
    n_keywords = int(rng.integers(1, 3))
    for _ in range(n_keywords):
        words[int(rng.integers(0, length))] = str(rng.choice(keywords))
    return " ".join(words)


def _ood_text(rng: np.random.Generator, ood_vocab: list) -> str:
    length = int(rng.integers(6, 13))
    return " ".join(str(w) for w in rng.choice(ood_vocab, size=length))


def _write_jsonl(path: Path, records: list) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def make_synthetic(out_dir, seed: int = 7, n_train: int = 2000, n_val: int = 500,
                   n_test: int = 500, n_ood: int = 500) -> Path:
    """
    Сгенерировать задачу с двумя классами по ключевым словам и OOD-набор
    с непересекающимся словарём.

    Returns:
        Путь к dataset.json (DatasetSpec).
    """
    if seed < 0:
        raise ContractError(f"seed должен быть >= 0, получено {seed}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    labels = sorted(CLASS_KEYWORDS)

    def id_split(n: int) -> list:
        records = []
        for _ in range(n):
            label = labels[int(rng.integers(0, len(labels)))]
            records.append({"text": _id_text(rng, CLASS_KEYWORDS[label]), "label": label})
        return records

    ood_vocab = [f"ood{i:03d}" for i in range(200)]
    _write_jsonl(out / "id_train.jsonl", id_split(n_train))
    _write_jsonl(out / "id_val.jsonl", id_split(n_val))
    _write_jsonl(out / "id_test.jsonl", id_split(n_test))
    _write_jsonl(out / "ood_disjoint.jsonl", [{"text": _ood_text(rng, ood_vocab)} for _ in range(n_ood)])

    spec = DatasetSpec(
        id_train="id_train.jsonl",
        id_val="id_val.jsonl",
        id_test="id_test.jsonl",
        ood_test=["ood_disjoint.jsonl"],
    )
    spec_path = out / "dataset.json"
    spec_path.write_text(spec.model_dump_json(indent=2, exclude_none=True), encoding="utf-8")
    logger.info(
        f"Синтетический набор записан в {out}: train={n_train}, val={n_val}, "
        f"test={n_test}, ood={n_ood}, seed={seed}"
    )
    return spec_path
