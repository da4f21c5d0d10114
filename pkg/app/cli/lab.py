"""
Front de línea de comandos del laboratorio.

    python -m app.cli.lab resonances --config config/square_barrier.ini --out out/barrera
    python -m app.cli.lab trace      --config config/gaussian.ini
    python -m app.cli.lab invariants --config config/gaussian.ini
    python -m app.cli.lab pipeline   --config config/translated_gaussian.ini --threads 4
    python -m app.cli.lab certify    --config config/asymmetric.ini

Códigos de salida: 0 bien (incluido el veredicto NON-RADIAL), 1 config inválida o error
de cálculo, 2 búsqueda de resonancias truncada (la salida parcial se escribe igual).
Cada comando deja un `run.json` con la config ya validada.
"""

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from app.core.config import settings
from app.core.errors import ConfigError, LabError
from app.enums.trace_source import MomentSource
from app.enums.verdict import Verdict
from app.schemas.run_config import RunConfig
from app.services.config_loader import build_config_pair, build_field, load_config
from app.services.inversion import (
    CERTIFICATE_BAND,
    coarea_densities,
    cs_certificate,
    distribution_to_profile,
    estimate_peak,
    level_grid,
    moments_to_distribution,
    oracle_densities,
    reconstruct_field_1d,
)
from app.services.moments import MomentTable, direct_evaluators, direct_moments, extract_moments
from app.services.potentials import PotentialField, make_gaussian_profile
from app.services.resonances import Window, default_window, find_resonances, make_problem
from app.services.serialization import write_csv, write_json
from app.services.testfns import momentum_routes
from app.services.trace import direct_leading, direct_subleading, trace_report

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_TRUNCATED = 2


def _one_dimensional(field_: PotentialField, command: str) -> None:
    if field_.dimension != 1:
        raise ConfigError(f"potential.dimension: '{command}' solo trabaja en dimensión 1")


# ==== RESONANCIAS ====

def cmd_resonances(config: RunConfig, out: Path, threads: Optional[int]) -> int:
    field_ = build_field(config.potential)
    _one_dimensional(field_, "resonances")
    pair = build_config_pair(config)
    h = config.resonances.h
    corners = config.resonances.window
    try:
        window = Window(*corners) if corners else default_window(pair, h)
    except ValueError as e:
        raise ConfigError(f"resonances: {e}") from e

    found = find_resonances(make_problem(field_, h), window, config.resonances.max_count, threads=threads)
    write_csv(out / "resonances.csv", ["re", "im", "multiplicity", "residual"], found.rows())
    write_json(out / "resonances.json", {
        "h": h,
        "window": [found.window.re_min, found.window.re_max, found.window.im_min, found.window.im_max],
        "count": found.count,
        "winding": found.winding,
        "truncated": found.truncated,
        "mirror_defect": found.mirror_defect(),
        "resonances": [
            {"re": r.lam.real, "im": r.lam.imag, "multiplicity": r.multiplicity, "residual": r.residual}
            for r in found.resonances
        ],
    })
    if found.truncated:
        print(f"❌ Búsqueda truncada en {found.count} resonancias (salida parcial en {out})")
        return EXIT_TRUNCATED
    print(f"✅ {found.count} resonancias en {found.window}")
    return EXIT_OK


# ==== TRAZA ====

def _ratio(value: float, reference: float) -> Optional[float]:
    return value / reference if reference != 0 else None


def cmd_trace(config: RunConfig, out: Path, threads: Optional[int]) -> int:
    field_ = build_field(config.potential)
    _one_dimensional(field_, "trace")
    pair = build_config_pair(config)
    report = trace_report(
        field_, pair, config.trace.h_list, threads=threads, resonance_min_h=config.trace.resonance_min_h
    )
    n = report.dimension
    write_csv(
        out / "trace_sweep.csv",
        ["h", "value", "scaled", "source", "spectral_shift", "resonance", "resonance_bound",
         "threshold", "resonance_count"],
        [
            (r.h, r.value, r.scaled(n), r.source.value, r.spectral_shift,
             "" if r.resonance is None else r.resonance,
             "" if r.resonance_bound is None else r.resonance_bound,
             "" if r.threshold is None else r.threshold,
             "" if r.resonance_count is None else r.resonance_count)
            for r in report.rows
        ],
    )
    fit = report.fit
    payload = {
        "direct_leading": report.direct_leading,
        "direct_subleading": report.direct_subleading,
        "expected_c2": report.expected_c2,
        "fit": None,
    }
    if fit is not None:
        payload["fit"] = {
            "c0": fit.c0,
            "c2": fit.c2,
            "c4": fit.c4,
            "condition": fit.condition,
            "stability": fit.stability,
            "residuals": list(fit.residuals),
            "c0_over_leading": _ratio(fit.c0, report.direct_leading),
            "c2_over_expected": _ratio(fit.c2, report.expected_c2),
        }
    write_json(out / "fit.json", payload)
    if fit is None:
        print(f"✅ Traza en {len(report.rows)} valores de h (sin ajuste: hacen falta al menos 4)")
    else:
        print(f"✅ c₀={fit.c0:.8g} (I₁={report.direct_leading:.8g}), c₂={fit.c2:.8g} (I₂/12={report.expected_c2:.8g})")
    return EXIT_OK


# ==== INVARIANTES ====

def cmd_invariants(config: RunConfig, out: Path, threads: Optional[int]) -> int:
    field_ = build_field(config.potential)
    n = field_.dimension
    K = config.moments.K or n + 12
    pair = build_config_pair(config, k_max=K)
    routes = [momentum_routes(pair, k, n) for k in range(n, K + 1)]
    write_csv(
        out / "momentum.csv",
        ["k", "n", "radial", "fourier", "kernel", "relative_gap"],
        [(r.k, r.n, r.radial, r.fourier, r.kernel, r.relative_gap) for r in routes],
    )
    worst = max(r.relative_gap for r in routes)
    write_json(out / "invariants.json", {
        "dimension": n,
        "first": direct_leading(field_, pair),
        "second": direct_subleading(field_, pair),
        "route_gap": worst,
        "route_tolerance": settings.ROUTE_AGREEMENT_TOL,
    })
    mark = "✅" if worst <= settings.ROUTE_AGREEMENT_TOL else "❌"
    print(f"{mark} C_k,{n} para k∈[{n},{K}]: brecha máxima entre rutas {worst:.2e}")
    return EXIT_OK


# ==== PIPELINE ====

def _inversion_table(config: RunConfig, field_: PotentialField, threads: Optional[int]):
    """
    (tabla para invertir, filas de moments.csv).

    La extracción en λ solo resuelve algunos k; los que quedan fuera de `reliable()` se
    completan con el oráculo directo, con residuo 0, y cada fila dice de dónde salió.
    """
    n = field_.dimension
    K = config.moments.K or n + 12
    count = max(config.moments.direct_count, K - n + 1)
    direct = direct_moments(field_, range(n, n + count))
    if config.moments.source == "direct":
        rows = [(k, m, nk, m, nk, 0.0, 0.0, MomentSource.DIRECT_ORACLE.value, False)
                for k, m, nk in zip(direct.ks, direct.M, direct.N)]
        return direct, rows

    pair = build_config_pair(config, k_max=K + 3)
    fitted = extract_moments(direct_evaluators(field_), pair, n, K, config.moments.lambdas, threads=threads)
    kept = fitted.reliable()
    M, N, m_res, n_res, rows = [], [], [], [], []
    for i, k in enumerate(direct.ks):
        if k in kept.ks:
            j = kept.ks.index(k)
            M.append(kept.M[j])
            N.append(kept.N[j])
            m_res.append(kept.m_residuals[j])
            n_res.append(kept.n_residuals[j])
        else:
            M.append(direct.M[i])
            N.append(direct.N[i])
            m_res.append(0.0)
            n_res.append(0.0)
        if k in fitted.ks:
            j = fitted.ks.index(k)
            source = MomentSource.FITTED.value if k in kept.ks else MomentSource.DIRECT_ORACLE.value
            rows.append((k, fitted.M[j], fitted.N[j], direct.M[i], direct.N[i],
                         fitted.m_residuals[j], fitted.n_residuals[j], source, k in kept.ks))
        else:
            rows.append((k, "", "", direct.M[i], direct.N[i], "", "",
                         MomentSource.DIRECT_ORACLE.value, False))
    if fitted.leading_exponent is not None:
        logger.info(f"Exponente principal ajustado {fitted.leading_exponent:.6g} (esperado {n / 2 - n:g})")
    logger.info(f"Momentos ajustados usados: k={list(kept.ks)}")
    table = MomentTable(
        n, direct.ks, tuple(M), tuple(N), MomentSource.FITTED,
        m_residuals=tuple(m_res), n_residuals=tuple(n_res),
    )
    return table, rows


def cmd_pipeline(config: RunConfig, out: Path, threads: Optional[int]) -> int:
    field_ = build_field(config.potential)
    if field_.max_value == 0:
        raise ConfigError("potential.kind: el pipeline necesita max V > 0")
    n = field_.dimension
    inv = config.inversion

    table, rows = _inversion_table(config, field_, threads)
    write_csv(
        out / "moments.csv",
        ["k", "M", "N", "M_direct", "N_direct", "M_residual", "N_residual", "source", "fitted"],
        rows,
    )

    peak = estimate_peak(table)
    levels = level_grid(peak, inv.nodes)
    distribution = moments_to_distribution(table, levels, peak=peak, tikhonov=inv.tikhonov)
    densities = coarea_densities(distribution, table)
    b_at = np.interp(distribution.levels, densities.levels, densities.b, left=np.nan, right=np.nan)
    write_csv(
        out / "distribution.csv",
        ["s", "mu", "a", "b"],
        [
            (s, mu, a if math.isfinite(a) else "", "" if np.isnan(b) else b)
            for (s, mu, a), b in zip(distribution.rows(), b_at)
        ],
    )
    write_csv(out / "densities.csv", ["s", "a", "b", "perimeter", "reference"], densities.rows())

    certificate = cs_certificate(densities, tolerance=inv.cs_tolerance)
    write_json(out / "certificate.json", {
        **certificate.as_dict(),
        "peak": peak,
        "ill_posed": distribution.ill_posed,
        "moment_residuals": distribution.residuals.tolist(),
    })

    report: Dict[str, object] = {"verdict": certificate.verdict.value, "dimension": n}
    if certificate.verdict != Verdict.RADIAL_CONSISTENT:
        report["skipped"] = "veredicto NON-RADIAL: no hay perfil radial que reconstruir"
    elif n != 1:
        report["skipped"] = "la reconstrucción por líneas de flujo solo está hecha para n = 1"
    else:
        recovered = reconstruct_field_1d(distribution_to_profile(distribution, n), field_)
        report["recovered"] = recovered.as_dict()
        write_csv(
            out / "reconstruction.csv",
            ["x", "reconstructed", "target"],
            zip(recovered.grid, recovered.values, field_.evaluate(recovered.grid)),
        )
        if inv.reference_amplitude is not None:
            reference = make_gaussian_profile(inv.reference_amplitude, inv.reference_width or 1.0)
            report["reference"] = reconstruct_field_1d(reference, field_).as_dict()
    write_json(out / "reconstruction.json", report)

    if certificate.verdict == Verdict.RADIAL_CONSISTENT:
        print(f"✅ {certificate.verdict.value} (sup defecto {certificate.sup_defect:.2e})")
    else:
        print(f"❌ {certificate.verdict.value} (sup defecto {certificate.sup_defect:.2e})")
    return EXIT_OK


# ==== CERTIFICADO CON EL ORÁCULO ====

def cmd_certify(config: RunConfig, out: Path, threads: Optional[int]) -> int:
    field_ = build_field(config.potential)
    if field_.max_value == 0:
        raise ConfigError("potential.kind: el certificado necesita max V > 0")
    low, high = CERTIFICATE_BAND
    levels = field_.max_value * np.linspace(low, high, config.inversion.levels)
    densities = oracle_densities(field_, levels, threads=threads)
    certificate = cs_certificate(densities, tolerance=config.inversion.cs_tolerance)
    write_csv(out / "densities.csv", ["s", "a", "b", "perimeter", "reference"], densities.rows())
    write_json(out / "certificate.json", certificate.as_dict())
    mark = "✅" if certificate.verdict == Verdict.RADIAL_CONSISTENT else "❌"
    print(f"{mark} {certificate.verdict.value} (sup defecto {certificate.sup_defect:.2e})")
    return EXIT_OK


COMMANDS: Dict[str, Callable[[RunConfig, Path, Optional[int]], int]] = {
    "resonances": cmd_resonances,
    "trace": cmd_trace,
    "invariants": cmd_invariants,
    "pipeline": cmd_pipeline,
    "certify": cmd_certify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="python -m app.cli.lab", description=settings.APP_NAME)
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.APP_VERSION}")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="archivo INI de la corrida")
    parser.add_argument("--out", default=None, help="carpeta de salida (por defecto OUTPUT_DIR)")
    parser.add_argument("--threads", type=int, default=None, help="hilos (por defecto LAB_THREADS)")
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=settings.LOG_LEVEL, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        threads = args.threads if args.threads is not None else config.run.threads
        if threads is not None and threads < 1:
            raise ConfigError("--threads debe ser >= 1")
        out = Path(args.out or config.run.output_dir or settings.OUTPUT_DIR)
        write_json(out / "run.json", {"command": args.command, "config": config.model_dump(mode="json")})
        return COMMANDS[args.command](config, out, threads)
    except ConfigError as e:
        print(f"❌ Config inválida: {e.message}")
        return EXIT_ERROR
    except LabError as e:
        print(f"❌ {e.code}: {e.message}")
        return EXIT_ERROR


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
