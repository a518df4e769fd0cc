"""
Тесты VI-OOD: автодифф, энкодер, голова, скоринг, метрики, полный цикл и сервис.
"""
