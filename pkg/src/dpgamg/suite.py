"""The ``verify_suite`` study: every verification oracle on one mesh family.

Each check becomes a record ``(study, check, level, p, value, limit,
passed)``.  ``passed`` is ``None`` for values that are only recorded (for
example the measured inf-sup constant with an under-enriched test space).
"""

from __future__ import annotations

import logging

import numpy as np

from .cli import contrast_kappa, mesh_levels, solve_row
from .fem import assemble_dpg, assemble_hdiv_gram, build_space
from .fem.reference import ref_edges
from .fem.spaces import RT
from .linalg import DENSE_LIMIT, preconditioned_spectrum
from .precond import NONE, build_dpg_precond, primal_gram, schur_complement
from .report import RunReport
from .verify import (
    c3_surrogate,
    constrained_minimum,
    energy_identity_defect,
    enriched_qnorm_matrix,
    estimate_infsup,
    exact_volumetric_decomposer,
    extension_ratios,
    interface_decomposition,
    reference_extension_G,
    structural_zero_blocks,
)

log = logging.getLogger(__name__)

DENSE_DOFS = 2000  # dense eigenvalue oracles on the full system
SCHUR_ORACLE_DOFS = 1500  # saddle-point oracle on the H(div) Gram
NPROBES = 20

IDENTITY_TOL = 1e-12
SCHUR_TOL = 1e-10
BRACKET_TOL = 1e-12
TRANSFER_TOL = 1e-10
G_TOL = 1e-14
C3_VARIATION = 0.15
COND_VARIATION = 0.25
C1_VARIATION = 0.25
EXTENSION_VARIATION = 0.10


def relative_variation(values) -> float:
    """max / min - 1 over a sequence of positive measurements."""
    v = np.asarray(values, dtype=float)
    return float(v.max() / v.min() - 1.0)


def _record(study, check, level, p, value, limit=None, passed=None) -> dict:
    if passed is None and limit is not None:
        passed = bool(value <= limit)
    return {
        "study": study,
        "check": check,
        "level": level,
        "p": p,
        "value": float(value),
        "limit": limit,
        "passed": passed,
    }


def reference_checks(p: int, seed: int) -> list[dict]:
    """Constant-trace extension on both reference shapes, plus its H(div) bound."""
    rng = np.random.default_rng(seed)
    out = []
    for kind in ("tri", "quad"):
        edges = ref_edges(kind)
        perimeter = sum(e[3] for e in edges)
        area = 0.5 if kind == "tri" else 1.0
        trace_err = div_err = 0.0
        for sigma in np.concatenate([[0.0, 1.0], rng.standard_normal(8)]):
            G = reference_extension_G(sigma, kind)
            trace_err = max(trace_err, float(np.abs(G.normal_traces() - sigma).max()))
            # divergence theorem: the constant divergence times the area is the boundary flux
            div_err = max(div_err, abs(G.divergence - sigma * perimeter / area))
        out.append(_record("verify_suite", f"G_trace_{kind}", None, p, trace_err, G_TOL))
        out.append(_record("verify_suite", f"G_divergence_{kind}", None, p, div_err, G_TOL))
        a = extension_ratios(kind, max(p - 1, 1), 200, seed).max()
        b = extension_ratios(kind, max(p - 1, 1), 200, seed + 1).max()
        out.append(_record("verify_suite", f"G_constant_{kind}", None, p, max(a, b)))
        out.append(
            _record("verify_suite", f"G_constant_variation_{kind}", None, p, abs(a - b) / min(a, b), EXTENSION_VARIATION)
        )
    return out


def random_spd(rng, n):
    X = rng.standard_normal((n, n))
    return X @ X.T + 0.1 * np.eye(n)


def transfer_check(p: int, seed: int, ninstances: int = 100) -> dict:
    """Worst interface-minus-volumetric constant over random (D, H1, H2, u_f)."""
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(ninstances):
        n = int(rng.integers(8, 31))
        nf = int(rng.integers(2, n - 1))
        D = random_spd(rng, n)
        part = np.zeros(n, dtype=bool)
        part[rng.choice(n, nf, replace=False)] = True
        H = [rng.standard_normal((n, int(rng.integers(1, 6)))) for _ in range(2)]
        w = interface_decomposition(D, H, part, rng.standard_normal(nf), exact_volumetric_decomposer(D, H))
        worst = max(worst, w.constant - w.volumetric_constant)
    return _record("verify_suite", "decomposition_transfer", None, p, worst, TRANSFER_TOL)


def level_checks(cfg, mesh, level: int, kappa, rng) -> tuple[list[dict], dict]:
    """All per-level oracles; returns the records and the raw measurements."""
    p, r = cfg.order, cfg.r
    k = p - 1
    out, raw = [], {}
    sys = assemble_dpg(mesh, p, r, kappa=kappa, f=cfg.source)
    worst = max(energy_identity_defect(sys, rng.standard_normal(sys.n)) for _ in range(NPROBES))
    out.append(_record("verify_suite", "energy_identity", level, p, worst, IDENTITY_TOL))

    rt = build_space(mesh, RT, k)
    D = assemble_hdiv_gram(rt)
    schur = schur_complement(D, rt.interface)
    if rt.ndofs <= SCHUR_ORACLE_DOFS:
        err = 0.0
        for _ in range(NPROBES):
            q = rng.standard_normal(schur.nf)
            ref = constrained_minimum(D, rt.interface, q)
            err = max(err, abs(schur.qh_norm(q) - ref) / ref)
        out.append(_record("verify_suite", "schur_minimum", level, p, err, SCHUR_TOL))

    zeros = structural_zero_blocks(mesh, k)
    out.append(_record("verify_suite", "structural_zeros", level, p, max(zeros["pi"], zeros["curl"]), 0.0))

    if schur.nf <= DENSE_LIMIT:
        S_enr = enriched_qnorm_matrix(mesh, k, (1, 1))
        gap = -np.inf
        for _ in range(NPROBES):
            q = rng.standard_normal(schur.nf)
            base = schur.qh_norm(q)
            gap = max(gap, (float(q @ (S_enr @ q)) - base) / base)
        out.append(_record("verify_suite", "enriched_bracket", level, p, gap, BRACKET_TOL))
        c3 = c3_surrogate(mesh, k, (2, 2), schur)
        raw["c3"] = c3["c3"]
        out.append(_record("verify_suite", "c3", level, p, c3["c3"]))
        # lambda_min approaches 1 under refinement, closer than the dense
        # eigensolver resolves, so it is recorded and the per-vector bracket decides
        out.append(_record("verify_suite", "c3_lambda_min", level, p, c3["lambda_min"]))

    if sys.n <= DENSE_DOFS:
        c1, c2 = estimate_infsup(sys, primal_gram(sys), schur)
        raw["c1"] = c1
        out.append(_record("verify_suite", "c1", level, p, c1))
        out.append(_record("verify_suite", "c2", level, p, c2, passed=bool(c1 <= c2)))
        if cfg.precond != NONE:
            B = build_dpg_precond(sys, cfg.precond)
            lam = preconditioned_spectrum(sys.A, B.aslinearoperator())
            raw["cond"] = float(lam[-1] / lam[0])
            out.append(_record("verify_suite", "preconditioned_condition", level, p, raw["cond"]))
    return out, raw


def run_verify_suite(cfg) -> RunReport:
    seed = 0 if cfg.seed is None else cfg.seed
    rng = np.random.default_rng(seed)
    report = RunReport(cfg.to_dict())
    report.constants += reference_checks(cfg.order, seed)
    report.constants.append(transfer_check(cfg.order, seed))
    measured: dict[str, list[float]] = {"c3": [], "c1": [], "cond": []}
    for level, mesh in enumerate(mesh_levels(cfg)):
        kappa = 1.0 if cfg.contrast is None else contrast_kappa(mesh.nelems, cfg.contrast, cfg.seed)
        recs, raw = level_checks(cfg, mesh, level, kappa, rng)
        report.constants += recs
        for key, val in raw.items():
            measured[key].append(val)
        report.rows.append(solve_row(cfg, mesh, level, cfg.order, cfg.r, kappa, cfg.contrast, "verify_suite", report.extras))
        log.info("verify level %d done", level)
    stable_test = cfg.r >= cfg.order + 1
    for key, limit in (("c3", C3_VARIATION), ("cond", COND_VARIATION), ("c1", C1_VARIATION)):
        vals = measured[key]
        if len(vals) < 2:
            continue
        if key == "c1" and (not stable_test or min(vals) <= 0.0):
            # an under-enriched test space may lose stability: record the smallest value only
            report.constants.append(_record("verify_suite", "c1_min", None, cfg.order, min(vals)))
            continue
        report.constants.append(_record("verify_suite", f"{key}_variation", None, cfg.order, relative_variation(vals), limit))
    return report
