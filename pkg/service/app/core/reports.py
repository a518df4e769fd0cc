"""
Запись результатов: JSON, выровненные текстовые таблицы, CSV и графики.
"""

import logging
from pathlib import Path
from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402
import seaborn as sns  # noqa: E402

from app.models.schemas import EvalReport  # noqa: E402

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["auroc", "far95", "aupr"]


def report_frame(report: EvalReport) -> pd.DataFrame:
    """Ячейки и средние в одной таблице (ood_set, score_function, метрики в %)."""
    rows = [cell.model_dump() for cell in report.cells + report.averages]
    return pd.DataFrame(rows, columns=["ood_set", "score_function"] + METRIC_COLUMNS)


def format_report(report: EvalReport) -> str:
    lines = [
        f"objective: {report.objective}",
        f"seed: {report.seed}  inference_seed: {report.inference_seed}  "
        f"deterministic: {report.deterministic_inference}",
        f"id_accuracy: {report.id_accuracy:.2f}",
    ]
    if report.combination_weights is not None:
        lines.append("s: " + " ".join(f"{w:.4f}" for w in report.combination_weights))
    lines.append("")
    lines.append(report_frame(report).to_string(index=False, float_format=lambda v: f"{v:.2f}"))
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, out_dir, stem: str = "report") -> Path:
    """<stem>.json и <stem>.txt в out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / f"{stem}.json"
    json_path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
    (out / f"{stem}.txt").write_text(format_report(report), encoding="utf-8")
    logger.info(f"Отчёт записан: {json_path}")
    return json_path


def write_table(table: pd.DataFrame, out_dir, stem: str) -> Path:
    """Таблица в CSV и выровненный текст."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{stem}.csv"
    table.to_csv(csv_path, float_format="%.6f")
    (out / f"{stem}.txt").write_text(
        table.to_string(float_format=lambda v: f"{v:.2f}") + "\n", encoding="utf-8"
    )
    return csv_path


def write_combination(weights: pd.DataFrame, path) -> Path:
    """Двухколоночный CSV layer,weight."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    weights.to_csv(path, index=False, float_format="%.8f")
    logger.info(f"Веса s записаны: {path}")
    return path


def comparison_frame(reports: Sequence[EvalReport]) -> pd.DataFrame:
    """
    Сравнение объективов: по строке на (seed, objective) со средними
    метриками каждой функции и точностью ID.
    """
    rows = []
    for report in reports:
        row = {"seed": report.seed, "objective": report.objective, "id_accuracy": report.id_accuracy}
        for cell in report.averages:
            for metric in METRIC_COLUMNS:
                row[f"{cell.score_function}_{metric}"] = getattr(cell, metric)
        rows.append(row)
    return pd.DataFrame(rows).set_index(["seed", "objective"])


def plot_probe(table: pd.DataFrame, path, functions: Optional[Sequence[str]] = None) -> Path:
    """Средний AUROC по слоям: линия на каждую функцию."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = [c for c in table.columns if c.endswith("_average")]
    if functions is not None:
        columns = [f"{fn}_average" for fn in functions]

    fig, ax = plt.subplots(figsize=(7, 4))
    for column in columns:
        ax.plot(table.index, table[column], marker="o", label=column.removesuffix("_average"))
    ax.set_xlabel("layer")
    ax.set_ylabel("AUROC, %")
    ax.set_xticks(list(table.index))
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_combination_heatmap(weights: Mapping[str, Sequence[float]], path) -> Path:
    """Тепловая карта s: слои по вертикали, задачи/чекпоинты по горизонтали."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({name: list(values) for name, values in weights.items()})
    frame.index.name = "layer"

    fig, ax = plt.subplots(figsize=(1.5 + 1.2 * frame.shape[1], 1.0 + 0.5 * frame.shape[0]))
    sns.heatmap(frame, annot=True, fmt=".2f", cmap="viridis", cbar=True, ax=ax)
    ax.invert_yaxis()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
