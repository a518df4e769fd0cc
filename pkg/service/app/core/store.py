"""
Хранилище модели: сохранение, загрузка и валидация чекпоинта.

Формат файла (little-endian):
    8 байт   magic b"VIOODCK1"
    8 байт   uint64 длина заголовка
    N байт   заголовок JSON (версия, конфиг, словарь и его hash, метки, манифест)
    ...      блоб: подряд идущие блоки параметров и банков

Манифест: name, shape, dtype, offset, nbytes; смещения от начала блоба и
покрывают его целиком без пропусков.
"""

import json
import logging
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from app.core.autodiff import default_dtype
from app.core.config import RunConfig
from app.core.encoder import Vocabulary
from app.core.errors import CompatError
from app.core.metrics import MODEL_INFO, MODEL_LOAD_TIME
from app.core.model import OODClassifier, build_model
from app.core.scoring import GaussianBank, ValidationBank

logger = logging.getLogger(__name__)

MAGIC = b"VIOODCK1"
FORMAT_VERSION = 1

# Ожидаемые ключи заголовка
EXPECTED_KEYS = {"format_version", "config", "vocabulary", "vocab_hash", "labels",
                 "seed", "manifest", "shrinkage"}

_PARAM_PREFIX = "param/"
_BANK_BLOCKS = ("bank/means", "bank/covariance", "bank/precision")
_VALBANK_BLOCK = "valbank/latents"


@dataclass
class Checkpoint:
    """
    Обученная модель с банками для дистанционных скоров.

    Attributes:
        config: RunConfig запуска (без путей к данным).
        vocab: Словарь id_train.
        label_names: Имена классов по индексу.
        params: Имя параметра -> массив.
        gaussian_bank: Банк для maha (по train латентам).
        validation_bank: Банк для cosine (по val латентам).
    """

    config: RunConfig
    vocab: Vocabulary
    label_names: list
    params: dict
    gaussian_bank: Optional[GaussianBank] = None
    validation_bank: Optional[ValidationBank] = None

    @property
    def vocab_hash(self) -> str:
        return self.vocab.hash

    @property
    def n_classes(self) -> int:
        return len(self.label_names)

    def build_model(self) -> OODClassifier:
        """Восстановить модель с параметрами чекпоинта в его точности."""
        with default_dtype(self.config.precision):
            model = build_model(self.config, len(self.vocab), np.random.default_rng(0))
            model.load_state_dict(self.params)
        return model


def _param_dtype(config: RunConfig) -> str:
    return "<f4" if config.precision == "float32" else "<f8"


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """Записать чекпоинт; повторная запись тех же данных даёт идентичные байты."""
    blocks = []
    param_dtype = _param_dtype(ckpt.config)
    for name, value in ckpt.params.items():
        blocks.append((_PARAM_PREFIX + name, np.asarray(value), param_dtype))
    if ckpt.gaussian_bank is not None:
        bank = ckpt.gaussian_bank
        for name, value in zip(_BANK_BLOCKS, (bank.means, bank.covariance, bank.precision)):
            blocks.append((name, value, "<f8"))
    if ckpt.validation_bank is not None:
        blocks.append((_VALBANK_BLOCK, ckpt.validation_bank.latents, "<f8"))

    manifest, chunks, offset = [], [], 0
    for name, value, dtype in blocks:
        raw = np.ascontiguousarray(value, dtype=dtype).tobytes()
        manifest.append({
            "name": name,
            "shape": list(np.shape(value)),
            "dtype": dtype,
            "offset": offset,
            "nbytes": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)

    header = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config.model_dump(mode="json", exclude={"dataset"}),
        "vocabulary": ckpt.vocab.tokens,
        "vocab_hash": ckpt.vocab_hash,
        "labels": list(ckpt.label_names),
        "seed": ckpt.config.seed,
        "manifest": manifest,
        "shrinkage": None if ckpt.gaussian_bank is None else ckpt.gaussian_bank.shrinkage,
    }
    header_bytes = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for chunk in chunks:
            fh.write(chunk)
    logger.info(f"Чекпоинт сохранён: {path} ({len(manifest)} блоков, {offset} байт данных)")
    return path


def _validate_manifest(manifest: list, blob_size: int) -> None:
    errors = []
    expected_offset = 0
    for entry in sorted(manifest, key=lambda e: e["offset"]):
        itemsize = np.dtype(entry["dtype"]).itemsize
        if entry["offset"] != expected_offset:
            errors.append(f"{entry['name']}: смещение {entry['offset']}, ожидалось {expected_offset}")
        if entry["nbytes"] != int(np.prod(entry["shape"], dtype=np.int64)) * itemsize:
            errors.append(f"{entry['name']}: размер {entry['nbytes']} не согласован с формой")
        expected_offset = entry["offset"] + entry["nbytes"]
    if expected_offset != blob_size:
        errors.append(f"Блоки покрывают {expected_offset} байт из {blob_size}")
    if errors:
        raise CompatError(f"Ошибка валидации чекпоинта: {'; '.join(errors)}")


def load_checkpoint(path) -> Checkpoint:
    """
    Прочитать и проверить чекпоинт.

    Raises:
        FileNotFoundError: файл не найден.
        CompatError: неверный magic/версия или манифест не покрывает блоб.
    """
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise CompatError(f"{path}: не чекпоинт VI-OOD")
    (header_len,) = struct.unpack("<Q", raw[len(MAGIC):len(MAGIC) + 8])
    header_start = len(MAGIC) + 8
    header = json.loads(raw[header_start:header_start + header_len].decode("utf-8"))
    missing = EXPECTED_KEYS - set(header)
    if missing:
        raise CompatError(f"В заголовке отсутствуют ключи: {sorted(missing)}")
    if header["format_version"] != FORMAT_VERSION:
        raise CompatError(f"Версия формата {header['format_version']} не поддерживается")

    blob = raw[header_start + header_len:]
    _validate_manifest(header["manifest"], len(blob))

    arrays = {}
    for entry in header["manifest"]:
        chunk = blob[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=entry["dtype"]).reshape(entry["shape"]).copy()

    vocab = Vocabulary(header["vocabulary"])
    if vocab.hash != header["vocab_hash"]:
        raise CompatError("Hash словаря не совпадает с заголовком")

    config = RunConfig.model_validate(header["config"])
    native = np.float32 if config.precision == "float32" else np.float64
    params = {
        name[len(_PARAM_PREFIX):]: value.astype(native)
        for name, value in arrays.items()
        if name.startswith(_PARAM_PREFIX)
    }
    gaussian_bank = None
    if all(name in arrays for name in _BANK_BLOCKS):
        means, covariance, precision = (arrays[name] for name in _BANK_BLOCKS)
        gaussian_bank = GaussianBank(means=means, covariance=covariance,
                                     precision=precision, shrinkage=header["shrinkage"])
    validation_bank = None
    if _VALBANK_BLOCK in arrays:
        validation_bank = ValidationBank(latents=arrays[_VALBANK_BLOCK])

    return Checkpoint(
        config=config,
        vocab=vocab,
        label_names=header["labels"],
        params=params,
        gaussian_bank=gaussian_bank,
        validation_bank=validation_bank,
    )


class ModelStore:
    """
    Хранилище модели: загрузка, валидация и доступ к чекпоинту.

    Держит чекпоинт и восстановленную (замороженную) модель для сервиса.
    """

    def __init__(self):
        self._checkpoint: Optional[Checkpoint] = None
        self._model: Optional[OODClassifier] = None
        self._loaded = False

    def load_model(self, model_path: str) -> None:
        """
        Загрузка и валидация чекпоинта из файла.

        Raises:
            FileNotFoundError: Если файл не найден
            CompatError: Если структура чекпоинта некорректна
        """
        logger.info(f"Загрузка модели из {model_path}")
        start = time.perf_counter()
        self._checkpoint = load_checkpoint(model_path)
        self._validate()
        self._model = self._checkpoint.build_model()
        self._loaded = True
        load_time = time.perf_counter() - start

        MODEL_LOAD_TIME.set(load_time)
        MODEL_INFO.info({
            "objective": self.objective,
            "n_layers": str(self.n_layers),
            "n_classes": str(self.n_classes),
            "vocab_size": str(self.vocab_size),
            "path": model_path,
        })

        logger.info(
            f"Модель загружена за {load_time:.2f}с: objective={self.objective}, "
            f"L={self.n_layers}, K={self.n_classes}, V={self.vocab_size}"
        )

    def _validate(self) -> None:
        """Проверка согласованности чекпоинта с конфигом."""
        errors = []
        ckpt = self._checkpoint
        if ckpt.n_classes != ckpt.config.head.n_classes:
            errors.append(
                f"Число меток {ckpt.n_classes} != K={ckpt.config.head.n_classes} в конфиге"
            )
        if ckpt.gaussian_bank is None and "maha" in ckpt.config.score_functions:
            errors.append("Нет GaussianBank при включённом maha")
        if ckpt.validation_bank is None and "cosine" in ckpt.config.score_functions:
            errors.append("Нет ValidationBank при включённом cosine")
        if errors:
            raise CompatError(f"Ошибка валидации модели: {'; '.join(errors)}")

    def is_loaded(self) -> bool:
        """Загружена ли модель."""
        return self._loaded

    def get_stats(self) -> dict:
        """Статистика по загруженной модели."""
        if not self._loaded:
            return {"n_layers": 0, "n_classes": 0, "vocab_size": 0}
        return {
            "n_layers": self.n_layers,
            "n_classes": self.n_classes,
            "vocab_size": self.vocab_size,
        }

    # --- Свойства для удобного доступа ---

    @property
    def checkpoint(self) -> Checkpoint:
        return self._checkpoint

    @property
    def model(self) -> OODClassifier:
        return self._model

    @property
    def objective(self) -> str:
        return self._checkpoint.config.objective

    @property
    def label_names(self) -> list:
        return self._checkpoint.label_names

    @property
    def n_layers(self) -> int:
        return self._checkpoint.config.encoder.n_layers

    @property
    def n_classes(self) -> int:
        return self._checkpoint.n_classes

    @property
    def vocab_size(self) -> int:
        return len(self._checkpoint.vocab)
