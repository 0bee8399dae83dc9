"""Command-line study runner for the DPG Poisson solver.

Studies
-------
``solve``          one series over the refinement levels at the given order.
``h_p_table``      refinement levels times trial orders 1..P.
``reduced_order``  test order r = p and r = p + 1 on triangle meshes.
``contrast``       random two-valued coefficient, kappa0 from 1e-6 to 1e4.
``verify_suite``   every verification oracle on the configured mesh family.

Exit status is 0 when every solve converged (and every check passed),
2 otherwise and 1 for configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .amg import AmgError
from .fem import assemble_dpg, assemble_hdiv_gram, assemble_curl, assemble_pi, build_space
from .fem.spaces import LAGRANGE, RT
from .linalg import pcg, write_matrix, write_vector
from .mesh import QUAD, TRI, MeshError, build_cartesian_mesh, load_mesh, refine, sample_mesh
from .precond import NONE, PRACTICAL, VARIANTS, PrecondError, build_dpg_precond, flux_schur, primal_gram
from .report import RunReport, write_outputs

log = logging.getLogger(__name__)

STUDIES = ("solve", "h_p_table", "reduced_order", "contrast", "verify_suite")
CONTRAST_VALUES = (1e-6, 1e-4, 1e-2, 1.0, 1e2, 1e4)
MAX_ORDER = 4


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class RunConfig:
    mesh: str = "cartesian:2,2,quad"
    refine: int = 3
    order: int = 1
    test_order: int | None = None
    contrast: float | None = None
    seed: int | None = None
    rtol: float = 1e-6
    maxit: int = 500
    precond: str = PRACTICAL
    study: str = "solve"
    source: float = 1.0
    out_json: str | None = None
    export_matrices: str | None = None
    figures: str | None = None

    def validate(self) -> None:
        if self.study not in STUDIES:
            raise ConfigError(f"unknown study {self.study!r}; choose from {', '.join(STUDIES)}")
        if self.precond not in VARIANTS:
            raise ConfigError(f"unknown preconditioner {self.precond!r}")
        if self.refine < 0:
            raise ConfigError("--refine must be >= 0")
        if not 1 <= self.order <= MAX_ORDER:
            raise ConfigError(f"--order must lie in 1..{MAX_ORDER}")
        if self.test_order is not None and not self.order <= self.test_order <= MAX_ORDER + 1:
            raise ConfigError(f"--test-order must satisfy order <= r <= {MAX_ORDER + 1}")
        if not 0.0 < self.rtol < 1.0:
            raise ConfigError("--rtol must lie in (0, 1)")
        if self.maxit < 1:
            raise ConfigError("--maxit must be positive")
        if self.contrast is not None:
            if not self.contrast > 0.0:
                raise ConfigError("--contrast must be positive")
            if self.seed is None:
                raise ConfigError("--contrast needs --seed")
        if self.study == "contrast" and self.seed is None:
            raise ConfigError("the contrast study needs --seed")
        if self.study == "reduced_order" and mesh_kind(self.mesh) != TRI:
            raise ConfigError("the reduced_order study runs on triangle meshes only")

    @property
    def r(self) -> int:
        return self.order + 1 if self.test_order is None else self.test_order

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# configuration helpers


def parse_mesh_spec(spec: str):
    """``cartesian:NX,NY,tri|quad``, ``file:PATH`` or ``sample:tri|quad``."""
    src, _, arg = spec.partition(":")
    if src == "cartesian":
        parts = arg.split(",")
        if len(parts) != 3:
            raise ConfigError("cartesian mesh spec is cartesian:NX,NY,tri|quad")
        try:
            nx, ny = int(parts[0]), int(parts[1])
        except ValueError:
            raise ConfigError("cartesian NX and NY must be integers") from None
        if parts[2] not in (TRI, QUAD):
            raise ConfigError("cartesian element kind must be tri or quad")
        try:
            return build_cartesian_mesh(nx, ny, parts[2])
        except MeshError as exc:
            raise ConfigError(str(exc)) from exc
    if src == "file":
        if not Path(arg).is_file():
            raise ConfigError(f"mesh file {arg!r} not found")
        try:
            return load_mesh(arg)
        except MeshError as exc:
            raise ConfigError(str(exc)) from exc
    if src == "sample":
        try:
            return sample_mesh(arg)
        except MeshError as exc:
            raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown mesh source {src!r}; use cartesian:, file: or sample:")


def mesh_kind(spec: str) -> str:
    src, _, arg = spec.partition(":")
    if src == "cartesian":
        return arg.split(",")[-1]
    if src == "sample":
        return arg
    return parse_mesh_spec(spec).kind


def contrast_kappa(nelems: int, kappa0: float, seed: int) -> np.ndarray:
    """Per-element coefficient: 1 or ``kappa0`` with probability 1/2 each.

    The draw for element ``e`` is the ``e``-th output of a Philox stream keyed
    by ``seed``, so it does not depend on how many elements the mesh has.
    """
    u = np.random.Generator(np.random.Philox(key=seed)).random(nelems)
    return np.where(u < 0.5, 1.0, float(kappa0))


def mesh_levels(cfg: RunConfig):
    m = parse_mesh_spec(cfg.mesh)
    out = [m]
    for _ in range(cfg.refine):
        out.append(refine(out[-1], 1))
    return out


# ---------------------------------------------------------------------------
# solves


def _series_name(p, r, kappa0=None) -> str:
    name = f"p{p}_r{r}"
    return name if kappa0 is None else f"{name}_k{kappa0:g}"


def solve_row(cfg: RunConfig, mesh, level: int, p: int, r: int, kappa, kappa0, study: str, extras: dict) -> dict:
    """Assemble, precondition and solve one DPG system; never raises on solver trouble."""
    row = {
        "study": study,
        "series": _series_name(p, r, kappa0 if study == "contrast" else None),
        "level": level,
        "p": p,
        "r": r,
        "kappa0": kappa0,
        "elements": mesh.nelems,
        "dofs": None,
        "iterations": None,
        "avg_reduction": None,
        "status": "error",
        "assembly_seconds": 0.0,
        "setup_seconds": 0.0,
        "solve_seconds": 0.0,
    }
    tag = f"{row['series']}_L{level}"
    t0 = time.perf_counter()
    system = assemble_dpg(mesh, p, r, kappa=kappa, f=cfg.source)
    row["assembly_seconds"] = time.perf_counter() - t0
    row["dofs"] = system.n
    try:
        t0 = time.perf_counter()
        B = build_dpg_precond(system, cfg.precond)
        row["setup_seconds"] = time.perf_counter() - t0
        _, rep = pcg(system.A, None if cfg.precond == NONE else B.aslinearoperator(), system.g, cfg.rtol, cfg.maxit)
    except (AmgError, PrecondError, np.linalg.LinAlgError) as exc:
        log.warning("%s: %s", tag, exc)
        extras.setdefault("errors", {})[tag] = str(exc)
        return row
    row.update(
        iterations=rep.iterations,
        avg_reduction=rep.avg_reduction,
        status=rep.status,
        solve_seconds=rep.wall_time,
    )
    extras.setdefault("preconditioner", {})[tag] = B.describe()
    if cfg.export_matrices:
        export_system(Path(cfg.export_matrices) / f"{study}_{tag}", system)
    log.info("%s: %d elements, %d dofs, %d iterations (%s)", tag, mesh.nelems, system.n, rep.iterations, rep.status)
    return row


def export_system(directory: Path, system) -> None:
    """Write every assembled matrix in MatrixMarket form plus the RT partition sidecar."""
    directory.mkdir(parents=True, exist_ok=True)
    k = system.Q.degree
    rt = build_space(system.mesh, RT, k)
    lag = build_space(system.mesh, LAGRANGE, k + 1)
    schur = flux_schur(system.mesh, k)
    nE, nloc = system.M_blocks.shape[:2]
    rows = np.repeat(system.Y.elem_dofs, nloc, axis=1).ravel()
    cols = np.tile(system.Y.elem_dofs, (1, nloc)).ravel()
    M = sp.coo_matrix((system.M_blocks.ravel(), (rows, cols)), shape=(system.Y.ndofs,) * 2)
    mats = {
        "A": system.A,
        "A0": system.A0,
        "A1": system.A1,
        "B0": system.B0,
        "B1": system.B1,
        "M": M,
        "G": primal_gram(system),
        "D": assemble_hdiv_gram(rt),
        "S": schur.S,
        "Pi": assemble_pi(lag, rt),
        "C": assemble_curl(lag, rt),
    }
    for name, mat in mats.items():
        write_matrix(directory / f"{name}.mtx", mat)
    write_vector(directory / "g.txt", system.g)
    (directory / "rt_partition.txt").write_text("\n".join(rt.partition.tolist()) + "\n")


# ---------------------------------------------------------------------------
# studies


def _sweep(cfg, study, combos, kappa_for=None):
    report = RunReport(cfg.to_dict())
    levels = mesh_levels(cfg)
    for p, r, kappa0 in combos:
        for level, mesh in enumerate(levels):
            kappa = 1.0 if kappa0 is None else contrast_kappa(mesh.nelems, kappa0, cfg.seed)
            report.rows.append(solve_row(cfg, mesh, level, p, r, kappa, kappa0, study, report.extras))
    return report


def study_solve(cfg):
    return _sweep(cfg, "solve", [(cfg.order, cfg.r, cfg.contrast)])


def study_h_p_table(cfg):
    offset = cfg.r - cfg.order
    combos = [(p, p + offset, cfg.contrast) for p in range(1, cfg.order + 1)]
    return _sweep(cfg, "h_p_table", combos)


def study_reduced_order(cfg):
    combos = [(p, r, cfg.contrast) for p in range(1, cfg.order + 1) for r in (p, p + 1)]
    report = _sweep(cfg, "reduced_order", combos)
    report.extras["note"] = "parity effects across p are recorded, not asserted"
    return report


def study_contrast(cfg):
    return _sweep(cfg, "contrast", [(cfg.order, cfg.r, k0) for k0 in CONTRAST_VALUES])


def run(cfg: RunConfig) -> RunReport:
    """Validate ``cfg`` and execute its study."""
    cfg.validate()
    if cfg.study == "verify_suite":
        from .suite import run_verify_suite

        report = run_verify_suite(cfg)
    else:
        report = {
            "solve": study_solve,
            "h_p_table": study_h_p_table,
            "reduced_order": study_reduced_order,
            "contrast": study_contrast,
        }[cfg.study](cfg)
    return report


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dpgamg", description="Primal DPG Poisson solver with an algebraic block preconditioner.")
    ap.add_argument("--mesh", default=RunConfig.mesh, help="cartesian:NX,NY,tri|quad, file:PATH or sample:tri|quad")
    ap.add_argument("--refine", type=int, default=RunConfig.refine, help="number of uniform refinements")
    ap.add_argument("--order", type=int, default=RunConfig.order, help="trial order p")
    ap.add_argument("--test-order", type=int, default=None, help="test order r (default p + 1)")
    ap.add_argument("--contrast", type=float, default=None, help="random two-valued coefficient {1, K0}")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--rtol", type=float, default=RunConfig.rtol)
    ap.add_argument("--maxit", type=int, default=RunConfig.maxit)
    ap.add_argument("--precond", default=RunConfig.precond, choices=VARIANTS)
    ap.add_argument("--study", default=RunConfig.study, choices=STUDIES)
    ap.add_argument("--source", type=float, default=RunConfig.source, help="constant right-hand side f")
    ap.add_argument("--out-json", default=None, help="JSON report; text, CSV and figures are written next to it")
    ap.add_argument("--figures", default=None, help="directory for figures (default: next to --out-json)")
    ap.add_argument("--export-matrices", default=None, help="directory for MatrixMarket exports")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    opts = vars(args)
    opts.pop("verbose")
    cfg = RunConfig(**opts)
    try:
        report = run(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(report.to_text())
    if cfg.out_json:
        for path in write_outputs(report, cfg.out_json, cfg.figures):
            log.info("wrote %s", path)
    elif cfg.figures:
        from .report import render_figures

        render_figures(report, cfg.figures, f"dpgamg_{cfg.study}")
    return report.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
