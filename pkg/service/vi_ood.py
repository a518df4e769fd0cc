"""
Точка входа VI-OOD: обучение, оценка, послойный зонд, экспорт весов s,
сравнение объективов, генерация синтетики и запуск сервиса скоринга.

Запуск:
    python vi_ood.py make-synthetic --out data/synth
    python vi_ood.py train --config config.json --data data/synth/dataset.json --out runs/joint
    python vi_ood.py eval --checkpoint runs/joint/model.ckpt --data data/synth/dataset.json --out runs/joint
    python vi_ood.py serve --checkpoint runs/joint/model.ckpt

Сервис можно запустить и через uvicorn:
    MODEL_PATH=runs/joint/model.ckpt uvicorn app.main:app --host 0.0.0.0 --port 8000
"""

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from prometheus_client import start_http_server
from pydantic import ValidationError

from app.core.config import DatasetSpec, RunConfig
from app.core.data import load_dataset, make_synthetic
from app.core.errors import VIOODError
from app.core.predictor import evaluate, export_combination, probe_layers
from app.core.reports import (
    comparison_frame,
    plot_combination_heatmap,
    plot_probe,
    write_combination,
    write_report,
    write_table,
)
from app.core.store import load_checkpoint, save_checkpoint
from app.core.trainer import train

logger = logging.getLogger("vi_ood")

CHECKPOINT_NAME = "model.ckpt"
VOCAB_NAME = "vocab.txt"
OBJECTIVES = {"joint": "joint", "disc": "discriminative", "discriminative": "discriminative"}


def setup_logging(out_dir=None, verbose: bool = False) -> None:
    """Лог в stdout и, если задан каталог, в <out>/run.log."""
    handlers = [logging.StreamHandler(sys.stdout)]
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(Path(out_dir) / "run.log", mode="a", encoding="utf-8"))
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s - %(levelname)s - %(message)s",
        handlers=handlers,
        force=True,
    )


def load_run_config(args) -> RunConfig:
    """Конфиг из файла с переопределениями из аргументов."""
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "objective", None):
        updates["objective"] = OBJECTIVES[args.objective]
    if getattr(args, "deterministic_inference", False):
        updates["deterministic_inference"] = True
    if getattr(args, "data", None):
        updates["dataset"] = DatasetSpec.from_file(args.data)
    return RunConfig.model_validate({**config.model_dump(), **updates})


def with_inference_overrides(ckpt, args):
    """--seed и --deterministic-inference при оценке меняют только шум инференса, банки те же."""
    updates = {}
    if args.seed is not None:
        updates["inference_seed"] = args.seed
    if args.deterministic_inference:
        updates["deterministic_inference"] = True
    if not updates:
        return ckpt
    logger.info(f"Параметры инференса переопределены: {updates}")
    config = RunConfig.model_validate({**ckpt.config.model_dump(), **updates})
    return dataclasses.replace(ckpt, config=config)


def dataset_spec(args, config: RunConfig = None) -> DatasetSpec:
    if getattr(args, "data", None):
        return DatasetSpec.from_file(args.data)
    if config is not None and config.dataset is not None:
        return config.dataset
    raise VIOODError("Не задан набор данных: --data или dataset в конфиге")


# ============================================================================
# Команды
# ============================================================================

def cmd_make_synthetic(args) -> None:
    spec_path = make_synthetic(args.out, seed=args.seed if args.seed is not None else 7)
    logger.info(f"Спецификация набора: {spec_path}")


def cmd_train(args) -> None:
    config = load_run_config(args)
    corpora = load_dataset(dataset_spec(args, config))
    result = train(config, corpora, out_dir=args.out)
    corpora.vocab.save(Path(args.out) / VOCAB_NAME)
    path = save_checkpoint(result.checkpoint, Path(args.out) / CHECKPOINT_NAME)
    logger.info(f"Готово: {path}")


def cmd_eval(args) -> None:
    ckpt = with_inference_overrides(load_checkpoint(args.checkpoint), args)
    corpora = load_dataset(dataset_spec(args, ckpt.config))
    report = evaluate(ckpt, corpora, n_jobs=args.n_jobs)
    write_report(report, args.out)
    if ckpt.config.objective == "joint":
        write_combination(export_combination(ckpt), Path(args.out) / "s.csv")


def cmd_probe_layers(args) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    corpora = load_dataset(dataset_spec(args, ckpt.config))
    table, range_table = probe_layers(
        ckpt, corpora, layer_ranges=args.ranges or (), logit_scores=args.logit_heads, n_jobs=args.n_jobs
    )
    write_table(table, args.out, "probe_layers")
    plot_probe(table, Path(args.out) / "probe_layers.png")
    if range_table is not None:
        write_table(range_table, args.out, "probe_ranges")


def cmd_export_s(args) -> None:
    weights = {}
    for path in args.checkpoint:
        ckpt = load_checkpoint(path)
        frame = export_combination(ckpt)
        name = Path(path).parent.name or Path(path).stem
        write_combination(frame, Path(args.out) / f"s_{name}.csv")
        weights[name] = frame["weight"].tolist()
    plot_combination_heatmap(weights, Path(args.out) / "s_heatmap.png")


def cmd_compare_objectives(args) -> None:
    base = load_run_config(args)
    corpora = load_dataset(dataset_spec(args, base))
    seeds = args.seeds or [base.seed]
    reports = []
    for seed in seeds:
        for objective in ("joint", "discriminative"):
            config = RunConfig.model_validate(
                {**base.model_dump(), "seed": seed, "objective": objective}
            )
            run_dir = Path(args.out) / f"seed{seed}_{objective}"
            result = train(config, corpora, out_dir=run_dir)
            save_checkpoint(result.checkpoint, run_dir / CHECKPOINT_NAME)
            report = evaluate(result.checkpoint, corpora, model=result.model, n_jobs=args.n_jobs)
            write_report(report, run_dir)
            reports.append(report)
    table = comparison_frame(reports)
    write_table(table, args.out, "comparison")
    logger.info("Сравнение объективов:\n" + table.to_string(float_format=lambda v: f"{v:.2f}"))


def cmd_serve(args) -> None:
    import uvicorn

    os.environ["MODEL_PATH"] = args.checkpoint
    host = args.host or os.getenv("SERVICE_HOST", "0.0.0.0")
    port = args.port or int(os.getenv("SERVICE_PORT", "8000"))

    from app.main import app

    uvicorn.run(app, host=host, port=port)


# ============================================================================
# Аргументы
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vi_ood", description="VI-OOD: обучение и оценка OOD-детекции")
    parser.add_argument("--verbose", action="store_true", help="DEBUG-логирование")
    parser.add_argument("--metrics-port", type=int, default=None, help="Порт Prometheus для обучения")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_args(p, with_objective: bool = True):
        p.add_argument("--config", help="RunConfig в JSON")
        p.add_argument("--data", help="DatasetSpec в JSON")
        p.add_argument("--seed", type=int, default=None)
        if with_objective:
            p.add_argument("--objective", choices=sorted(OBJECTIVES), default=None)
        p.add_argument("--deterministic-inference", action="store_true",
                       help="z = mu вместо сэмпла (только для тестов)")
        p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="Обучить модель и построить банки")
    run_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Таблица AUROC / FAR@95 / AUPR")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="inference_seed для шума z")
    p.add_argument("--deterministic-inference", action="store_true",
                   help="z = mu вместо сэмпла (только для тестов)")
    p.add_argument("--n-jobs", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("probe-layers", help="Послойный зонд дистанционных скоров")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--ranges", nargs="*", help="Диапазоны слоёв a-b")
    p.add_argument("--logit-heads", action="store_true", help="msp/energy от свежей головы на слое")
    p.add_argument("--n-jobs", type=int, default=1)
    p.set_defaults(func=cmd_probe_layers)

    p = sub.add_parser("export-s", help="Веса s одной или нескольких joint-моделей")
    p.add_argument("--checkpoint", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_s)

    p = sub.add_parser("compare-objectives", help="joint против discriminative при равных seed")
    run_args(p, with_objective=False)
    p.add_argument("--seeds", type=int, nargs="*")
    p.add_argument("--n-jobs", type=int, default=1)
    p.set_defaults(func=cmd_compare_objectives)

    p = sub.add_parser("make-synthetic", help="Синтетическая задача с OOD-набором")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser("serve", help="Запуск сервиса скоринга")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(getattr(args, "out", None), verbose=args.verbose)
    if args.metrics_port:
        start_http_server(args.metrics_port)
        logger.info(f"Prometheus-метрики на порту {args.metrics_port}")
    try:
        args.func(args)
    except (VIOODError, ValidationError, FileNotFoundError) as e:
        logger.error(f"{args.command}: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
