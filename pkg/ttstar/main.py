import argparse
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field, ValidationError

from ttstar.config import LoopConfig, settings
from ttstar.errors import DomainError, TtStarError
from ttstar.factorization import IwasawaFactors, iwasawa_su11, model_iwasawa
from ttstar.loops import TruncatedLoop
from ttstar.qc_frames import FramePoint, model_E
from ttstar.services.export_service import ExportService
from ttstar.services.geometry import MeshGrid, SurfaceMesh, SurfaceService
from ttstar.services.painleve3 import CLASSIFIER_RESOLUTION, PainleveService, painleve_residual, pointwise_residual

# Initialize services
export_service = ExportService()


def configure_logging() -> None:
    """stderr sink at LOG_LEVEL (stdout carries the report) plus an optional rotating file."""
    logger.remove()
    logger.add(sys.stderr, level=settings.LOG_LEVEL)
    if settings.LOG_FILE:
        logger.add(
            settings.LOG_FILE,
            rotation=settings.LOG_ROTATION,
            level=settings.LOG_LEVEL,
            format="{time} {level} {message}"
        )


# Report models
class RunReport(BaseModel):
    success: bool = True
    command: str
    parameters: Dict[str, Any] = Field(default_factory=dict)
    outputs: List[str] = Field(default_factory=list)
    diagnostics: Dict[str, Any] = Field(default_factory=dict)
    wall_time: float = 0.0


class ErrorReport(BaseModel):
    success: bool = False
    command: Optional[str] = None
    error: str
    message: str


class UsageError(Exception):
    pass


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting, so run() owns exit codes."""

    def error(self, message: str):
        raise UsageError(message)


def _parse_reals(text: str) -> List[Tuple[str, float]]:
    items = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            items.append((token, float(token)))
        except ValueError:
            raise UsageError(f"not a real number: {token!r}")
    if not items:
        raise UsageError("empty list")
    return items


def _loop_config(degree: int) -> LoopConfig:
    base = LoopConfig()
    return base if degree == base.degree else base.with_degree(degree)


def _loop_terms(loop: TruncatedLoop, floor: float = 1e-12) -> Dict[str, list]:
    """Nonnegligible coefficients as {power: [[[re, im], ...], ...]}."""
    terms = {}
    for power, matrix in zip(loop.powers, loop.coeffs):
        if np.abs(matrix).max() > floor:
            terms[str(int(power))] = [[[float(c.real), float(c.imag)] for c in row] for row in matrix]
    return terms


def _describe(factors: IwasawaFactors) -> Dict[str, Any]:
    return {
        "orbit": factors.orbit.value,
        "k": factors.k,
        "residual": factors.residual,
        "B": _loop_terms(factors.B),
    }


def handle_surface(args: argparse.Namespace) -> RunReport:
    """Sample the surface on a polar grid and export it."""
    if not args.a > 0:
        raise DomainError(f"dressing parameter must be positive, got {args.a}")
    grid = MeshGrid(r_min=args.rmin, r_max=args.rmax, nr=args.nr, ntheta=args.ntheta,
                    slit_margin=args.slit_margin)
    service = SurfaceService(_loop_config(args.degree), workers=args.workers)
    mesh: SurfaceMesh = service.build_mesh(args.a, grid)

    outputs = []
    if args.out:
        outputs.append(export_service.write_obj(mesh, args.out))
    if args.annotations:
        outputs.append(export_service.write_annotations(mesh, args.annotations))
    return RunReport(
        command="surface",
        parameters={"a": args.a, "grid": grid.model_dump(), "degree": args.degree},
        outputs=outputs,
        diagnostics={
            "vertices": len(mesh.vertices),
            "singular_vertices": mesh.singular_count,
            "flagged_vertices": mesh.flagged_count,
            "flags": mesh.flag_counts(),
            "faces": len(mesh.faces),
            "dropped_faces": mesh.dropped_faces,
            "max_residual": mesh.max_residual(),
            "reflection_defect": mesh.reflection_defect(),
        },
    )


def handle_piii(args: argparse.Namespace) -> RunReport:
    """Integrate one radial trace."""
    service = PainleveService(tol=args.tol, x0=args.x0)
    trace = service.trace(args.a, args.xmax)
    outputs = []
    if args.out:
        outputs.append(export_service.write_trace_csv(trace, args.out))
    diagnostics = {
        "status": trace.status.model_dump(mode="json"),
        "nodes": int(trace.nodes.shape[0]),
        "min_y": float(trace.y.min()),
    }
    if not trace.status.singular:
        diagnostics["painleve_residual"] = painleve_residual(trace)
        diagnostics["pointwise_residual"] = pointwise_residual(trace)
    return RunReport(
        command="piii",
        parameters={"a": args.a, "x0": args.x0, "xmax": args.xmax, "tol": args.tol},
        outputs=outputs,
        diagnostics=diagnostics,
    )


def handle_scan(args: argparse.Namespace) -> RunReport:
    """Classify each dressing parameter as smooth or singular up to xmax."""
    values = _parse_reals(args.a_list)
    service = PainleveService(tol=args.tol, x0=args.x0)

    def classify(item):
        return service.classify(item[1], args.xmax)

    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            statuses = list(pool.map(classify, values))
    else:
        statuses = [classify(item) for item in values]

    classification = {token: status.label for (token, _), status in zip(values, statuses)}
    logger.info(f"Scan result: {classification}")
    return RunReport(
        command="scan",
        parameters={"a_list": [token for token, _ in values], "xmax": args.xmax, "x0": args.x0, "tol": args.tol},
        diagnostics={
            "classification": classification,
            "resolution": CLASSIFIER_RESOLUTION,
            "details": {token: status.model_dump(mode="json") for (token, _), status in zip(values, statuses)},
        },
    )


def handle_crosscheck(args: argparse.Namespace) -> RunReport:
    """Compare the factorization and ODE routes on a list of radii."""
    radii = [value for _, value in _parse_reals(args.r_list)]
    service = PainleveService(tol=args.tol)
    report = service.crosscheck(args.a, radii, _loop_config(args.degree))
    return RunReport(
        command="crosscheck",
        parameters={"a": args.a, "r_list": radii, "tol": args.tol, "degree": args.degree},
        diagnostics=report.model_dump(mode="json"),
    )


def handle_modelcase(args: argparse.Namespace) -> RunReport:
    """Closed-form model factorization against the numeric one at a single point."""
    config = _loop_config(args.degree)
    point = FramePoint.from_z(args.z, args.a)
    oracle = model_iwasawa(args.a, point.t, config)
    numeric = iwasawa_su11(model_E(args.a, point.t, config), config)
    agreement = {
        "orbit": oracle.orbit == numeric.orbit,
        "k_rel_error": abs(numeric.k - oracle.k) / oracle.k,
        "B_max_error": float(np.abs((numeric.B - oracle.B).coeffs).max()),
    }
    logger.info(f"Model case a={args.a}, z={args.z}: oracle {oracle.orbit.value} k={oracle.k:.12g}, "
                f"numeric {numeric.orbit.value} k={numeric.k:.12g}")
    return RunReport(
        command="modelcase",
        parameters={"a": args.a, "z": [args.z.real, args.z.imag], "degree": args.degree},
        diagnostics={"oracle": _describe(oracle), "numeric": _describe(numeric), "agreement": agreement},
    )


HANDLERS: Dict[str, Callable[[argparse.Namespace], RunReport]] = {
    "surface": handle_surface,
    "piii": handle_piii,
    "scan": handle_scan,
    "crosscheck": handle_crosscheck,
    "modelcase": handle_modelcase,
}


def build_parser() -> CliParser:
    parser = CliParser(prog="ttstar", description="tt* surfaces of the quantum cohomology of CP^1")
    parser.add_argument("--report", help="write the JSON report here instead of stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    surface = sub.add_parser("surface", help="polar-grid mesh of the surface (OBJ)")
    surface.add_argument("--a", type=float, required=True)
    surface.add_argument("--rmin", type=float, default=0.01)
    surface.add_argument("--rmax", type=float, default=0.5)
    surface.add_argument("--nr", type=int, default=100)
    surface.add_argument("--ntheta", type=int, default=64)
    surface.add_argument("--slit-margin", type=float, default=1e-3)
    surface.add_argument("--degree", type=int, default=16)
    surface.add_argument("--workers", type=int, default=1)
    surface.add_argument("--out")
    surface.add_argument("--annotations")

    piii = sub.add_parser("piii", help="integrate the radial sinh-Gordon trace (CSV)")
    piii.add_argument("--a", type=float, required=True)
    piii.add_argument("--x0", type=float, default=1e-4)
    piii.add_argument("--xmax", type=float, default=20.0)
    piii.add_argument("--tol", type=float, default=1e-10)
    piii.add_argument("--out")

    scan = sub.add_parser("scan", help="smooth/singular classification over a list of a")
    scan.add_argument("--a-list", required=True)
    scan.add_argument("--xmax", type=float, default=20.0)
    scan.add_argument("--x0", type=float, default=1e-4)
    scan.add_argument("--tol", type=float, default=1e-10)
    scan.add_argument("--workers", type=int, default=1)

    cross = sub.add_parser("crosscheck", help="factorization versus ODE on a list of radii")
    cross.add_argument("--a", type=float, required=True)
    cross.add_argument("--r-list", required=True)
    cross.add_argument("--tol", type=float, default=1e-10)
    cross.add_argument("--degree", type=int, default=16)

    model = sub.add_parser("modelcase", help="closed-form model factorization against the numeric one")
    model.add_argument("--a", type=float, required=True)
    model.add_argument("--z", type=complex, required=True)
    model.add_argument("--degree", type=int, default=16)
    return parser


def _emit(report: BaseModel, path: Optional[str]) -> None:
    if path:
        export_service.write_json(report.model_dump(mode="json"), path)
    else:
        print(report.model_dump_json(indent=2))


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Execute one subcommand.

    Returns:
        0 on success (mesh gaps included), 1 on usage errors, 2 on numerical failure
    """
    configure_logging()
    parser = build_parser()
    start = time.time()
    command, report_path = None, None
    try:
        args = parser.parse_args(argv)
        command, report_path = args.command, args.report
        logger.info(f"Running {command}")
        report = HANDLERS[command](args)
        report.wall_time = time.time() - start
        _emit(report, report_path)
        return 0
    except SystemExit as e:
        return int(e.code or 0)
    except UsageError as e:
        logger.error(f"Usage error: {str(e)}")
        parser.print_usage(sys.stderr)
        _emit(ErrorReport(command=command, error="usage_error", message=str(e)), report_path)
        return 1
    except ValidationError as e:
        logger.error(f"Invalid parameters: {str(e)}")
        _emit(ErrorReport(command=command, error="usage_error", message=str(e)), report_path)
        return 1
    except DomainError as e:
        logger.error(f"Domain error: {str(e)}")
        _emit(ErrorReport(command=command, error=e.code, message=str(e)), report_path)
        return 1
    except TtStarError as e:
        logger.error(f"Numerical failure in {command}: {str(e)}")
        _emit(ErrorReport(command=command, error=e.code, message=str(e)), report_path)
        return 2
    except Exception as e:
        logger.error(f"Unexpected error in {command}: {str(e)}")
        report = ErrorReport(command=command, error="internal_error", message=str(e))
        try:
            _emit(report, report_path)
        except OSError:
            # the report path itself may be what failed
            _emit(report, None)
        return 2
