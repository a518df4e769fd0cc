"""
Исключения VI-OOD.

Все ошибки наследуются от VIOODError. Ошибки, по смыслу являющиеся
некорректными значениями, дополнительно наследуют ValueError, чтобы код,
ловящий ValueError (загрузка модели, lifespan сервиса), продолжал работать.
"""


class VIOODError(Exception):
    """Базовая ошибка пакета."""


class ShapeError(VIOODError, ValueError):
    """Несовместимые формы тензоров."""


class NumericError(VIOODError, ArithmeticError):
    """NaN/Inf во входах, градиентах или функции потерь."""


class ContractError(VIOODError, ValueError):
    """Нарушено предусловие операции."""


class VocabError(ContractError):
    """Идентификатор токена вне словаря."""


class FitError(VIOODError, ValueError):
    """Не удалось оценить банк гауссиан или валидационный банк."""


class ScoreError(VIOODError, ValueError):
    """Скоринг невозможен для данного входа."""


class MetricError(VIOODError, ValueError):
    """Некорректный набор скоров для метрики."""


class IngestError(VIOODError, ValueError):
    """Некорректная запись во входном файле."""


class LabelError(VIOODError, ValueError):
    """Метка валидации/теста отсутствует в обучающей выборке."""


class CompatError(VIOODError, ValueError):
    """Чекпоинт несовместим с данными."""
