"""
main.py -- CLI steerkit: auditorias, entrenamiento, evaluacion y exportaciones.

Verbos:
    audit-equiv   Equivarianza de cada tipo de capa (y opcionalmente del modelo).
    audit-grad    Gradiente analitico contra diferencias centrales.
    train         Entrena y escribe metrics.csv, last.stck y final.stck.
    eval          Precision plana, rotada y con TTA de un checkpoint.
    attnmap       Mapas max_j alpha_ij por cabeza (STFL + CSV).
    gen-data      Escribe el dataset sintetico como archivos IDX.

Codigos de salida: 0 = exito, 1 = auditoria fallida, 2 = uso, configuracion u otro error.

Ejecucion:
    python main.py audit-equiv --config config/settings.yaml --out runs/audit
"""
import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np
from dotenv import load_dotenv
from loguru import logger

from core.config import DEFAULT_CONFIG_PATH, ExperimentConfig, load_config
from core.errors import ConfigError, InvalidArgumentError, SteerkitError
from core.logging_setup import configure_logging

EXIT_OK = 0
EXIT_AUDIT_FAILED = 1
EXIT_ERROR = 2


# ---------------------------------------------------------------------------
# Argumentos
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=str(DEFAULT_CONFIG_PATH), help="Documento YAML del experimento")
    common.add_argument("--seed", type=int, default=None, help="Sobrescribe la semilla de la configuracion")
    common.add_argument("--out", default="runs", help="Directorio de salida")
    common.add_argument("--log-level", default=None, help="Nivel de loguru (por defecto STEERKIT_LOG_LEVEL o INFO)")

    parser = argparse.ArgumentParser(prog="steerkit", description="Transformers steerables SE(2)/SE(3)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("audit-equiv", parents=[common], help="Auditoria de equivarianza")
    p.add_argument("--dim", type=int, choices=(2, 3), default=None)
    p.add_argument("--cutoff", type=int, default=None)
    p.add_argument("--layer", action="append", default=None, help="Tipo de capa (repetible); por defecto todas")
    p.add_argument("--model", action="store_true", help="Audita tambien el modelo completo (grid-exact)")

    p = sub.add_parser("audit-grad", parents=[common], help="Auditoria de gradientes")
    p.add_argument("--coordinates", type=int, default=None, help="Subconjunto sembrado de coordenadas")

    p = sub.add_parser("train", parents=[common], help="Entrenamiento")
    p.add_argument("--resume", action="store_true", help="Continua desde <out>/last.stck")

    p = sub.add_parser("eval", parents=[common], help="Evaluacion de un checkpoint")
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("attnmap", parents=[common], help="Exporta mapas de atencion")
    p.add_argument("--checkpoint", default=None, help="Si falta se usan parametros iniciales sembrados")
    p.add_argument("--heads", type=int, nargs="+", default=None)
    p.add_argument("--layer", default=None, help="Nombre de la capa de atencion")
    p.add_argument("--rotate", type=int, default=0, help="Indice de rotacion de la rejilla aplicada a la entrada")

    sub.add_parser("gen-data", parents=[common], help="Genera el dataset sintetico en IDX")
    return parser


def _load(args) -> ExperimentConfig:
    config = load_config(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    return config


def _write_json(path: Path, payload) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return path


def _healthcheck(config: ExperimentConfig, out_dir: Path) -> bool:
    from core.healthcheck import run_healthcheck
    from harness.report import print_healthcheck

    issues = run_healthcheck(config, out_dir)
    if issues["critical"] or issues["warnings"]:
        print_healthcheck(issues)
    if issues["critical"]:
        logger.error("[CLI] Healthcheck fallido. Corrige los errores criticos antes de continuar.")
        return False
    return True


# ---------------------------------------------------------------------------
# Verbos
# ---------------------------------------------------------------------------

def cmd_audit_equiv(args, config: ExperimentConfig, out_dir: Path) -> int:
    from harness.audit import MODE_GRID, audit_equivariance, model_target
    from harness.bindings import audit_all_layers
    from harness.report import print_audit
    from training.model import build_model

    dim = args.dim or config.dimension
    cutoff = args.cutoff if args.cutoff is not None else config.model.cutoff
    reports = audit_all_layers(dim, cutoff, config.audit.num_group_samples, config.audit.tolerance,
                               config.seed, args.layer)
    if args.model:
        model_config = config.replace(dimension=dim, **{"model.cutoff": cutoff})
        model = build_model(model_config)
        params = model.init_params(config.seed)
        reports.append(audit_equivariance(model_target(model, params), config.audit.num_group_samples,
                                          config.audit.model_tolerance, MODE_GRID, config.seed))
    print_audit(reports)
    _write_json(out_dir / "audit_equiv.json", [r.to_dict() for r in reports])
    return EXIT_OK if all(r.passed for r in reports) else EXIT_AUDIT_FAILED


def cmd_audit_grad(args, config: ExperimentConfig, out_dir: Path) -> int:
    from harness.audit import audit_gradients
    from harness.report import print_gradient_report
    from training.data import make_synthetic_rotated_shapes
    from training.model import build_model

    model = build_model(config)
    params = model.init_params(config.seed)
    ds = config.dataset
    batch = make_synthetic_rotated_shapes(config.optimizer.batch_size, ds.size, ds.num_classes,
                                          np.random.default_rng(config.seed), cutoff=config.model.cutoff,
                                          dim=config.dimension)
    coordinates = args.coordinates if args.coordinates is not None else config.audit.grad_coordinates
    report = audit_gradients(model, params, batch, config.audit.fd_step, config.audit.grad_tolerance,
                             coordinates, config.seed)
    print_gradient_report(report)
    report.write_json(out_dir / "audit_grad.json")
    return EXIT_OK if report.passed else EXIT_AUDIT_FAILED


def cmd_train(args, config: ExperimentConfig, out_dir: Path) -> int:
    from harness.report import print_training
    from harness.runner import run_training

    if not _healthcheck(config, out_dir):
        return EXIT_ERROR
    result = run_training(config, out_dir, resume=args.resume)
    print_training(result.history, result.checkpoint)
    return EXIT_OK


def cmd_eval(args, config: ExperimentConfig, out_dir: Path) -> int:
    from harness.report import print_eval
    from harness.runner import run_eval

    if not _healthcheck(config, out_dir):
        return EXIT_ERROR
    result = run_eval(config, args.checkpoint)
    print_eval(result)
    _write_json(out_dir / "eval.json", result.to_dict())
    return EXIT_OK


def cmd_attnmap(args, config: ExperimentConfig, out_dir: Path) -> int:
    from core.field import INTERP_EXACT, act_group
    from core.group_math import lattice_rotations
    from harness.attention_maps import export_attention_maps
    from training.data import make_synthetic_rotated_shapes
    from training.model import build_model

    model = build_model(config)
    params = model.init_params(config.seed)
    if args.checkpoint is not None:
        params.restore(args.checkpoint)
    ds = config.dataset
    sample = make_synthetic_rotated_shapes(1, ds.size, ds.num_classes, np.random.default_rng(config.seed),
                                           cutoff=config.model.cutoff, dim=config.dimension).fields.field(0)
    rotations = lattice_rotations(config.dimension)
    if not 0 <= args.rotate < len(rotations):
        raise InvalidArgumentError(f"--rotate fuera de rango [0, {len(rotations)})")
    sample = act_group(sample, rotations[args.rotate], INTERP_EXACT)
    written = export_attention_maps(model, params, sample, args.heads, out_dir, args.layer)
    for path in written:
        logger.info(f"[CLI] Escrito {path}")
    return EXIT_OK


def cmd_gen_data(args, config: ExperimentConfig, out_dir: Path) -> int:
    from harness.runner import run_gen_data

    for name, path in run_gen_data(config, out_dir).items():
        logger.info(f"[CLI] dataset.{name}: {path}")
    return EXIT_OK


COMMANDS = {
    "audit-equiv": cmd_audit_equiv,
    "audit-grad": cmd_audit_grad,
    "train": cmd_train,
    "eval": cmd_eval,
    "attnmap": cmd_attnmap,
    "gen-data": cmd_gen_data,
}


# ---------------------------------------------------------------------------
# Entrada principal
# ---------------------------------------------------------------------------

def main(argv: Optional[list[str]] = None) -> int:
    """
    Orden: .env, argumentos, logging, configuracion y verbo.

    Los errores de configuracion o argumentos terminan con codigo 2; una
    auditoria reprobada con codigo 1.
    """
    load_dotenv()
    args = build_parser().parse_args(argv)
    out_dir = Path(args.out)
    try:
        config = _load(args)
        level = args.log_level or os.getenv("STEERKIT_LOG_LEVEL") or config.logging.level
        configure_logging(level, config.logging.log_dir)
        logger.info(f"[CLI] {args.command} con {args.config} (semilla {config.seed})")
        return COMMANDS[args.command](args, config, out_dir)
    except (ConfigError, InvalidArgumentError) as e:
        logger.error(f"[CLI] {type(e).__name__}: {e}")
        return EXIT_ERROR
    except SteerkitError as e:
        logger.exception(f"[CLI] {type(e).__name__}: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
