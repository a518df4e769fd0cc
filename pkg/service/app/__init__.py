"""
Пакет VI-OOD: ядро обучения и оценки и сервис скоринга.
"""

from app.main import app

__all__ = ["app"]
