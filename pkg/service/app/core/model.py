"""
Классификатор целиком: энкодер + голова выбранного объектива.
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.core.autodiff import Module, select
from app.core.config import RunConfig
from app.core.encoder import TransformerEncoder
from app.core.vi_head import DiscriminativeHead, VIHead

logger = logging.getLogger(__name__)


@dataclass
class Representations:
    """
    Представления набора примеров для скоринга.

    Attributes:
        latents: N x d, z для joint, h_CLS^{L-1} для discriminative.
        logits: N x K.
        stacks: N x L x d_model, [CLS] состояния всех слоёв.
    """

    latents: np.ndarray
    logits: np.ndarray
    stacks: np.ndarray


def example_noise(ids: np.ndarray, inference_seed: int, dim: int) -> np.ndarray:
    """
    eps формы N x dim: у каждого примера свой поток SeedSequence из inference_seed
    и sha256 его токенов.

    Одинаковые входы получают одинаковый eps в любом наборе, батче и позиции,
    разные наборы не делят строки шума.
    """
    noise = np.empty((ids.shape[0], dim))
    for i, row in enumerate(ids):
        digest = hashlib.sha256(np.ascontiguousarray(row, dtype="<i8").tobytes()).digest()
        key = np.frombuffer(digest[:16], dtype="<u4").tolist()
        noise[i] = np.random.default_rng(np.random.SeedSequence([inference_seed, *key])).standard_normal(dim)
    return noise


class OODClassifier(Module):
    """
    Энкодер и голова (VIHead или DiscriminativeHead).

    Переключение объектива меняет только состав функции потерь и подключение
    головы; токенизация, разбиение и генераторы случайных чисел общие.
    """

    def __init__(self, config: RunConfig, vocab_size: int, rng: np.random.Generator):
        self.objective = config.objective
        self.encoder = TransformerEncoder(config.encoder, vocab_size, rng)
        if config.objective == "joint":
            self.head = VIHead(config.head, config.encoder.n_layers, config.encoder.d_model, rng)
        else:
            self.head = DiscriminativeHead(config.head.n_classes, config.encoder.d_model, rng)

    @property
    def is_joint(self) -> bool:
        return self.objective == "joint"

    def loss(self, ids: np.ndarray, labels: np.ndarray, step: int, total_steps: int,
             rng: Optional[np.random.Generator] = None, noise: Optional[np.ndarray] = None):
        stack = self.encoder.encode(ids)
        return self.head.loss(stack, labels, step, total_steps, noise=noise, rng=rng)

    def forward_scores(self, ids: np.ndarray, noise: Optional[np.ndarray]) -> tuple:
        """
        Инференс одного батча.

        Args:
            noise: eps для z (B x d_z); нули дают детерминированный режим z = mu.
                Для discriminative игнорируется.

        Returns:
            (latents, logits, stack) как np.ndarray.
        """
        stack = self.encoder.encode(ids)
        if self.is_joint:
            post = self.head.infer(stack, noise)
            latent = post.z
            logits = self.head.classify(latent)
        else:
            latent = select(stack, stack.shape[1] - 1, axis=1)
            logits = self.head.classify(latent)
        return latent.data, logits.data, stack.data

    @property
    def latent_dim(self) -> int:
        if self.is_joint:
            return self.head.config.d_z
        return self.encoder.config.d_model

    def represent(self, ids: np.ndarray, inference_seed: int, deterministic: bool = False,
                  batch_size: int = 128) -> Representations:
        """
        Представления набора целиком.

        eps берётся из example_noise, поэтому результат примера не зависит
        от размера батча и от соседей по набору.
        """
        n = ids.shape[0]
        noise = None
        if self.is_joint:
            if deterministic:
                noise = np.zeros((n, self.latent_dim))
            else:
                noise = example_noise(ids, inference_seed, self.latent_dim)

        latents, logits, stacks = [], [], []
        for start in range(0, n, batch_size):
            batch_noise = None if noise is None else noise[start:start + batch_size]
            lat, log, st = self.forward_scores(ids[start:start + batch_size], batch_noise)
            latents.append(lat)
            logits.append(log)
            stacks.append(st)

        if not latents:
            layers, d_model = len(self.encoder.blocks) + 1, self.encoder.config.d_model
            return Representations(
                latents=np.zeros((0, self.latent_dim)),
                logits=np.zeros((0, self.head.n_classes)),
                stacks=np.zeros((0, layers, d_model)),
            )
        return Representations(
            latents=np.concatenate(latents),
            logits=np.concatenate(logits),
            stacks=np.concatenate(stacks),
        )

    def combination_weights(self) -> Optional[np.ndarray]:
        if not self.is_joint:
            return None
        return self.head.combination.weights_numpy()


def build_model(config: RunConfig, vocab_size: int, rng: np.random.Generator) -> OODClassifier:
    model = OODClassifier(config, vocab_size, rng)
    n_params = sum(p.size for p in model.parameters())
    logger.info(f"Модель построена: objective={config.objective}, параметров={n_params}")
    return model
