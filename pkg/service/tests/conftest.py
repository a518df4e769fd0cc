import numpy as np
import pytest

from app.core.autodiff import default_dtype


@pytest.fixture
def float64():
    """Тензоры и параметры создаются в float64 (режим проверки градиентов)."""
    with default_dtype(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(0)
