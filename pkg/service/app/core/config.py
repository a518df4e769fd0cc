"""
Конфигурация VI-OOD с pydantic валидацией.

Модели конфигурации:
- EncoderConfig: размеры трансформера
- VIHeadConfig: вариационная голова и отжиг
- DatasetSpec: пути к корпусам
- RunConfig: полный запуск обучения/оценки
- ServiceConfig: сервис скоринга
"""

from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, Field, model_validator

SCORE_FUNCTIONS = ("msp", "maha", "energy", "cosine")


class EncoderConfig(BaseModel):
    """
    Конфигурация трансформерного энкодера.

    Attributes:
        n_layers: L, число строк HiddenStack (эмбеддинги + L-1 блоков).
        d_model: Размерность скрытого состояния.
        n_heads: Число голов внимания.
        ffn_dim: Ширина FFN.
        max_len: Максимальная длина последовательности вместе с [CLS].
    """

    n_layers: int = Field(default=6, ge=2, description="L, число слоёв")
    d_model: int = Field(default=64, ge=1, description="Размерность модели")
    n_heads: int = Field(default=4, ge=1, description="Число голов внимания")
    ffn_dim: int = Field(default=256, ge=1, description="Ширина FFN")
    max_len: int = Field(default=64, ge=2, description="Максимальная длина")
    positional: Literal["learned"] = Field(default="learned")

    model_config = {"extra": "forbid"}

    @model_validator(mode="after")
    def _check_heads(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model={self.d_model} не делится на n_heads={self.n_heads}"
            )
        return self


class VIHeadConfig(BaseModel):
    """Конфигурация вариационной головы: латент, декодер, классы, отжиг."""

    d_z: int = Field(default=32, ge=1, description="Размерность латента z")
    decoder_hidden: int = Field(default=128, ge=1, description="Ширина декодера")
    n_classes: int = Field(default=2, ge=2, description="K, число ID-классов")
    anneal_fraction: float = Field(
        default=0.5, gt=0.0, le=1.0, description="Доля шагов линейного отжига"
    )

    model_config = {"extra": "forbid"}


class DatasetSpec(BaseModel):
    """
    Пути к корпусам в формате JSON Lines (поля text, label).

    Относительные пути разрешаются от base_dir (каталог файла спецификации).
    """

    id_train: str = Field(..., min_length=1)
    id_val: str = Field(..., min_length=1)
    id_test: str = Field(..., min_length=1)
    ood_test: list[str] = Field(..., min_length=1)
    base_dir: Optional[str] = Field(default=None)

    model_config = {"extra": "forbid"}

    def resolve(self, path: str) -> Path:
        p = Path(path)
        if not p.is_absolute() and self.base_dir:
            p = Path(self.base_dir) / p
        return p

    @classmethod
    def from_file(cls, path: str) -> "DatasetSpec":
        spec = cls.model_validate_json(Path(path).read_text(encoding="utf-8"))
        if spec.base_dir is None:
            spec.base_dir = str(Path(path).resolve().parent)
        return spec


class RunConfig(BaseModel):
    """
    Конфигурация запуска: модель, цель обучения, оптимизация, инференс.

    Attributes:
        objective: joint для ELBO по p(x, y), discriminative для кросс-энтропии p(y|x).
        precision: float32 для обучения, float64 для проверок градиентов и детерминизма.
        deterministic_inference: z = mu вместо одного сэмпла (отклонение, только для тестов).
    """

    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    head: VIHeadConfig = Field(default_factory=VIHeadConfig)
    objective: Literal["joint", "discriminative"] = "joint"
    epochs: int = Field(default=20, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    weight_decay: float = Field(default=0.01, ge=0.0)
    batch_size: int = Field(default=32, ge=1)
    seed: int = Field(default=7, ge=0)
    inference_seed: Optional[int] = Field(default=None, ge=0)
    precision: Literal["float32", "float64"] = "float32"
    score_functions: list[Literal["msp", "maha", "energy", "cosine"]] = Field(
        default_factory=lambda: list(SCORE_FUNCTIONS), min_length=1
    )
    deterministic_inference: bool = False
    val_bank_cap: int = Field(default=5000, ge=1)
    dataset: Optional[DatasetSpec] = None

    model_config = {"extra": "forbid"}

    @property
    def effective_inference_seed(self) -> int:
        return self.seed if self.inference_seed is None else self.inference_seed

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        config = cls.model_validate_json(Path(path).read_text(encoding="utf-8"))
        if config.dataset is not None and config.dataset.base_dir is None:
            config.dataset.base_dir = str(Path(path).resolve().parent)
        return config


class ServiceConfig(BaseModel):
    """
    Конфигурация сервиса скоринга.

    Attributes:
        model_path: Путь к чекпоинту.
        max_batch: Максимальное число текстов в одном запросе.
    """

    model_path: str = Field(
        default="/app/models/model.ckpt",
        min_length=1,
        description="Путь к файлу чекпоинта",
    )
    max_batch: int = Field(
        default=256,
        ge=1,
        le=4096,
        description="Максимум текстов в запросе /score",
    )

    model_config = {
        "frozen": False,
        "extra": "forbid",
    }
