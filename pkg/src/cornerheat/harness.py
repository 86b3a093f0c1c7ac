"""Batch studies: convergence tables, weight search, advection QoI, CFL probe.

Every study consumes a StudyConfig and returns plain data objects; CSV and
JSON writing happens only when an output path is set. The CSV column layout
is shared by all table studies:

    level,h,dofs,dt,err_l2,rate_l2,err_weighted,rate_weighted,err_post,
    rate_post,k1h,wall_seconds

with unused cells left empty. dofs counts the interior (unknown) vertices.
Two studies reuse columns for quantities without a slot of their own, as
noted in their docstrings. Identical configs reproduce CSV output byte for
byte except for the wall_seconds column.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .correction import (CorrectionConfig, GammaSearchReport,
                         extract_k1_parabolic, find_gamma, modified_ritz,
                         post_process)
from .fem import error_norm
from .mesh import (TriMesh, build_fan_sector, build_l_shape,
                   build_notched_rectangle, graded_refine, uniform_refine)
from .singular import CutoffEta, SingularFunction, manufactured_solution
from .solver import max_generalized_eigenvalue
from .timestepping import (InstabilityError, ParabolicProblem, SchemeConfig,
                           TimeGrid, build_operators, run)

CSV_HEADER = ("level,h,dofs,dt,err_l2,rate_l2,err_weighted,rate_weighted,"
              "err_post,rate_post,k1h,wall_seconds")

STUDIES = ("table1", "elliptic_pollution", "gamma", "advection_qoi",
           "cfl_probe")

_DEFAULT_LEVELS = {"table1": 6, "elliptic_pollution": 6, "gamma": 5,
                   "advection_qoi": 5, "cfl_probe": 3}
_DEFAULT_DT0 = {"table1": 0.1, "advection_qoi": 0.02}


@dataclass
class StudyConfig:
    """Knobs shared by all studies; unset fields take per-study defaults."""

    study: str
    levels: Optional[int] = None
    dt0: Optional[float] = None
    t_end: float = 1.0
    alpha: Optional[float] = None
    gamma: object = "auto"
    out: Optional[str] = None
    seed: int = 0
    check: bool = False

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ValueError(f"unknown study {self.study!r}; "
                             f"pick one of {STUDIES}")
        if self.levels is None:
            self.levels = _DEFAULT_LEVELS[self.study]
        self.levels = int(self.levels)
        floor = 1 if self.study == "cfl_probe" else 3
        if self.levels < floor:
            raise ValueError(f"{self.study} needs at least {floor} levels")
        if self.dt0 is None:
            self.dt0 = _DEFAULT_DT0.get(self.study)
        if self.gamma != "auto":
            try:
                self.gamma = float(self.gamma)
            except (TypeError, ValueError):
                raise ValueError("gamma must be 'auto' or a number") from None
            if not 0.0 <= self.gamma < 0.5:
                raise ValueError("gamma outside [0, 1/2)")
        if self.alpha is not None and not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha outside [0, 1)")


@dataclass
class LevelRow:
    level: int
    h: float
    dofs: int
    dt: Optional[float] = None
    err_l2: Optional[float] = None
    rate_l2: Optional[float] = None
    err_weighted: Optional[float] = None
    rate_weighted: Optional[float] = None
    err_post: Optional[float] = None
    rate_post: Optional[float] = None
    k1h: Optional[float] = None
    wall_seconds: Optional[float] = None


_CSV_COLUMNS = CSV_HEADER.split(",")


def _csv_cell(name: str, value) -> str:
    if value is None:
        return ""
    if name in ("level", "dofs"):
        return str(int(value))
    if name.startswith("rate_"):
        return f"{value:.6f}"
    if name == "wall_seconds":
        return f"{value:.3f}"
    return f"{value:.12e}"


@dataclass
class ConvergenceRecord:
    """Per-level rows of one scheme; rates are filled from adjacent errors."""

    label: str
    rows: list = field(default_factory=list)

    def column(self, name: str) -> list:
        return [getattr(row, name) for row in self.rows]

    def fill_rates(self) -> None:
        pairs = (("err_l2", "rate_l2"), ("err_weighted", "rate_weighted"),
                 ("err_post", "rate_post"))
        for err_name, rate_name in pairs:
            errs = self.column(err_name)
            if len(errs) < 2 or any(e is None for e in errs):
                continue
            for row, rate in zip(self.rows[1:], compute_eoc(errs)):
                setattr(row, rate_name, rate)

    def to_csv(self, path=None) -> str:
        lines = [CSV_HEADER]
        for row in self.rows:
            lines.append(",".join(_csv_cell(c, getattr(row, c))
                                  for c in _CSV_COLUMNS))
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def compute_eoc(errors) -> list:
    """log2 ratios of successive errors under mesh halving."""
    errs = [float(e) for e in errors]
    if any(e <= 0.0 for e in errs):
        raise ValueError("EOC needs positive errors")
    return [math.log2(a / b) for a, b in zip(errs, errs[1:])]


def _record_paths(out: str) -> tuple:
    stem, dot, ext = out.rpartition(".")
    if not dot:
        stem, ext = out, "csv"
    return (f"{stem}_standard.{ext}", f"{stem}_corrected.{ext}")


def _write_pair(cfg: StudyConfig, records: dict) -> None:
    if cfg.out is None:
        return
    std_path, corr_path = _record_paths(cfg.out)
    records["standard"].to_csv(std_path)
    records["corrected"].to_csv(corr_path)


# -- mesh hierarchies ----------------------------------------------------------


def refine_hierarchy(base: TriMesh, levels: int) -> list:
    meshes = [base]
    while len(meshes) < levels:
        meshes.append(uniform_refine(meshes[-1]))
    return meshes


def lshape_hierarchy(levels: int) -> list:
    return refine_hierarchy(build_l_shape(), levels)


def sector_hierarchy(theta: float, levels: int) -> list:
    """Fan-sector stand-in hierarchy; the unrefined fan has no interior
    vertex, so level 1 is its first refinement."""
    return refine_hierarchy(uniform_refine(build_fan_sector(theta)), levels)


def _resolve_gamma(cfg: StudyConfig, hierarchy: list):
    """Weight for corner 0 of the hierarchy: searched or taken verbatim."""
    if cfg.gamma == "auto":
        report = find_gamma(hierarchy)
        return report.gamma, report
    return float(cfg.gamma), None


def _free_count(mesh: TriMesh) -> int:
    return int(np.count_nonzero(~mesh.boundary_vertex))


# -- table 1 -------------------------------------------------------------------


def run_table1(cfg: StudyConfig) -> dict:
    """Parabolic convergence study on the L-shape manufactured solution.

    Explicit Euler with lumped mass, time step min(dt0/4^(level-1),
    cfl_safety * dt_max) so the CFL precondition always holds, errors taken
    at t_end. The corrected record also carries the extracted leading
    coefficient (k1h) and the post-processed error. wall_seconds times the
    stepping loop only.
    """
    problem = manufactured_solution("table1")
    hierarchy = lshape_hierarchy(cfg.levels)
    theta = hierarchy[0].corners[0].theta
    alpha = cfg.alpha if cfg.alpha is not None else 1.0 - math.pi / theta
    gamma, gamma_report = _resolve_gamma(cfg, hierarchy)
    corr = CorrectionConfig(corner=0, gammas=(gamma,))
    scheme = SchemeConfig("explicit_euler", mass="lumped")
    records = {"standard": ConvergenceRecord("standard"),
               "corrected": ConvergenceRecord("corrected")}

    for level, mesh in enumerate(hierarchy, start=1):
        dt_target = cfg.dt0 / 4.0 ** (level - 1)
        dual = SingularFunction.at_corner(mesh, corner=0, n=-1,
                                          eta=CutoffEta())
        exact_end = lambda pts: problem.u(cfg.t_end, pts)
        for label in ("standard", "corrected"):
            corrected = label == "corrected"
            prob = ParabolicProblem(mesh, f=problem.f, g=problem.u, u0=None,
                                    correction=corr if corrected else None)
            ops = build_operators(prob, scheme)
            dt = min(dt_target, scheme.cfl_safety * ops.cfl_max_dt())
            grid = TimeGrid.from_dt(cfg.t_end, dt)
            penultimate = {}

            def hold(n, t, state, last=grid.n_steps - 1):
                if n == last:
                    penultimate["state"] = state.copy()

            start = time.perf_counter()
            final = run(prob, scheme, grid, observers=[hold], operators=ops)
            wall = time.perf_counter() - start

            row = LevelRow(level=level, h=mesh.h, dofs=_free_count(mesh),
                           dt=grid.dt, wall_seconds=wall)
            row.err_l2 = error_norm(mesh, final, exact_end, kind="l2")
            row.err_weighted = error_norm(mesh, final, exact_end,
                                          kind="weighted_l2", alpha=alpha)
            if corrected:
                k1h = extract_k1_parabolic(mesh, final, penultimate["state"],
                                           grid.dt, problem.f, dual,
                                           t=cfg.t_end)
                processed = post_process(mesh, corr, final, k1h)
                tail = processed.tail
                away = lambda pts: exact_end(pts) - k1h * tail(pts)
                row.err_post = error_norm(mesh, processed.nodal, away,
                                          kind="l2")
                row.k1h = k1h
            records[label].rows.append(row)

    for record in records.values():
        record.fill_rates()
    _write_pair(cfg, records)
    return {"records": records, "gamma": gamma,
            "gamma_report": gamma_report, "alpha": alpha}


# -- elliptic pollution --------------------------------------------------------


def run_elliptic_pollution(cfg: StudyConfig) -> dict:
    """Ritz projections of the leading corner mode across L-shape levels.

    The standard record shows the pollution-limited rates; the corrected one
    uses the searched (or given) weight. err_post holds the plain L2 error
    restricted to the far field |x| > 0.25 (no dedicated column exists).
    wall_seconds times the linear solve.
    """
    hierarchy = lshape_hierarchy(cfg.levels)
    theta = hierarchy[0].corners[0].theta
    alpha = cfg.alpha if cfg.alpha is not None else 1.0 - math.pi / theta
    gamma, gamma_report = _resolve_gamma(cfg, hierarchy)
    corr = CorrectionConfig(corner=0, gammas=(gamma,))
    records = {"standard": ConvergenceRecord("standard"),
               "corrected": ConvergenceRecord("corrected")}

    for level, mesh in enumerate(hierarchy, start=1):
        mode = SingularFunction.at_corner(mesh, corner=0, n=1)
        center = mesh.corner_position(0)
        far = lambda pts: np.linalg.norm(pts - center, axis=1) > 0.25
        for label, conf in (("standard", None), ("corrected", corr)):
            start = time.perf_counter()
            u_h = modified_ritz(mesh, conf, mode)
            wall = time.perf_counter() - start
            row = LevelRow(level=level, h=mesh.h, dofs=_free_count(mesh),
                           wall_seconds=wall)
            row.err_l2 = error_norm(mesh, u_h, mode, kind="l2")
            row.err_weighted = error_norm(mesh, u_h, mode,
                                          kind="weighted_l2", alpha=alpha)
            row.err_post = error_norm(mesh, u_h, mode, kind="l2", region=far)
            records[label].rows.append(row)

    for record in records.values():
        record.fill_rates()
    _write_pair(cfg, records)
    return {"records": records, "gamma": gamma,
            "gamma_report": gamma_report, "alpha": alpha}


# -- gamma search --------------------------------------------------------------


def run_gamma(cfg: StudyConfig) -> GammaSearchReport:
    """Defect-root search on the L-shape hierarchy, serialized as JSON."""
    report = find_gamma(lshape_hierarchy(cfg.levels))
    if cfg.out is not None:
        report.to_json(cfg.out)
    return report


# -- advection QoI -------------------------------------------------------------


def _aitken_limit(values) -> tuple:
    """(limit, order) from the three entries by Richardson extrapolation,
    fitting one dominant error term C * 2**(-p*level)."""
    q1, q2, q3 = (float(v) for v in values[-3:])
    d1, d2 = q2 - q1, q3 - q2
    if d2 == 0.0 or d1 == d2:
        raise ValueError("QoI differences do not contract; cannot extrapolate")
    if d1 / d2 <= 0.0:
        raise ValueError("QoI differences alternate; cannot extrapolate")
    limit = q3 - d2 * d2 / (d2 - d1)
    order = math.log2(d1 / d2)
    return limit, order


def run_advection_qoi(cfg: StudyConfig) -> dict:
    """Advection-diffusion QoI study on the notched rectangle.

    Explicit Euler, constant wind, homogeneous walls, forcing singular just
    inside the notch. The QoI is the maximum nodal magnitude at t_end; its
    value is stored in the k1h column (both are scalar functionals, and the
    schema has no dedicated slot). err_l2 holds |QoI_limit - QoI| against
    the Richardson limit of the corrected sequence, per-corner weights come
    from stand-in searches: the criss-cross notch corner shares the L-shape
    root and the two fan corners share one fan-sector root.
    """
    problem = manufactured_solution("advection_qoi")
    hierarchy = refine_hierarchy(build_notched_rectangle(), cfg.levels)
    scheme = SchemeConfig("explicit_euler", mass="lumped")

    reports = {}
    if cfg.gamma == "auto":
        cross_report = find_gamma(lshape_hierarchy(cfg.levels))
        theta_fan = hierarchy[0].corners[1].theta
        fan_report = find_gamma(sector_hierarchy(theta_fan, cfg.levels))
        weights = {0: cross_report.gamma, 1: fan_report.gamma,
                   2: fan_report.gamma}
        reports = {"criss_cross": cross_report, "fan": fan_report}
    else:
        weights = {i: float(cfg.gamma) for i in range(3)}
    corrections = tuple(CorrectionConfig(corner=i, gammas=(g,))
                        for i, g in sorted(weights.items()))

    records = {"standard": ConvergenceRecord("standard"),
               "corrected": ConvergenceRecord("corrected")}
    for level, mesh in enumerate(hierarchy, start=1):
        dt_target = cfg.dt0 / 4.0 ** (level - 1)
        for label in ("standard", "corrected"):
            corrected = label == "corrected"
            prob = ParabolicProblem(mesh, f=problem.f, g=0.0, u0=None,
                                    b=problem.b,
                                    correction=corrections if corrected
                                    else None)
            ops = build_operators(prob, scheme)
            dt = min(dt_target, scheme.cfl_safety * ops.cfl_max_dt())
            grid = TimeGrid.from_dt(cfg.t_end, dt)
            start = time.perf_counter()
            final = run(prob, scheme, grid, operators=ops)
            wall = time.perf_counter() - start
            records[label].rows.append(
                LevelRow(level=level, h=mesh.h, dofs=_free_count(mesh),
                         dt=grid.dt, k1h=float(np.max(np.abs(final))),
                         wall_seconds=wall))

    limit, order = _aitken_limit(records["corrected"].column("k1h"))
    for record in records.values():
        for row in record.rows:
            row.err_l2 = abs(limit - row.k1h)
        record.fill_rates()
    _write_pair(cfg, records)

    # Endpoint slope across every level: the two finest |limit - q| values
    # sit on the fitted extrapolation model by construction, so a tail-only
    # slope would echo the fit instead of the data.
    span = cfg.levels - 1
    eoc = {label: math.log2(rec.column("err_l2")[0]
                            / rec.column("err_l2")[-1]) / span
           for label, rec in records.items()}
    return {"records": records, "qoi_limit": limit, "qoi_order": order,
            "eoc": eoc, "weights": weights, "gamma_reports": reports}


# -- CFL probe -----------------------------------------------------------------


def run_cfl_probe(cfg: StudyConfig, n_steps: int = 400) -> dict:
    """Stability-boundary probe on uniformly refined L-shapes.

    Starts one refinement above the coarse mesh (its first ratio is still
    pre-asymptotic). Per level: dt_max from the power iteration, a run just
    above the boundary seeded with the critical eigenmode (must abort), a
    homogeneous run just below (monitor norm must not grow), a constantly
    forced run just below (norm must stay within the accumulated forcing
    bound), and the equal-level graded mesh's dt_max for comparison.
    """
    base = uniform_refine(build_l_shape())
    meshes = refine_hierarchy(base, cfg.levels)
    graded = [graded_refine(m, corner=0, mu=0.6)
              for m in refine_hierarchy(build_l_shape(), cfg.levels)]
    scheme = SchemeConfig("explicit_euler", mass="lumped")
    rows = []
    for level, mesh in enumerate(meshes, start=1):
        prob = ParabolicProblem(mesh)
        ops = build_operators(prob, scheme)
        free_S = ops.stiffness[ops.free][:, ops.free].tocsr()
        lam, vec = max_generalized_eigenvalue(free_S, ops.m_lumped[ops.free],
                                              tol=1e-8, max_iter=2000,
                                              return_vector=True)
        dt_max = 2.0 / lam
        seed = np.zeros(mesh.n_vertices)
        seed[ops.free] = vec / np.max(np.abs(vec))

        above = ParabolicProblem(mesh, u0=seed)
        try:
            run(above, scheme, TimeGrid(1.05 * dt_max * n_steps, n_steps),
                operators=build_operators(above, scheme))
            aborted, abort_step = False, None
        except InstabilityError as err:
            aborted, abort_step = True, err.step

        below = build_operators(above, scheme)
        norms = []
        run(above, scheme, TimeGrid(0.9 * dt_max * n_steps, n_steps),
            operators=below,
            observers=[lambda n, t, s: norms.append(below.monitor_norm(s))])
        free_decay = all(b <= a * (1.0 + 1e-12)
                         for a, b in zip(norms, norms[1:]))

        forced_prob = ParabolicProblem(mesh, f=1.0)
        forced_ops = build_operators(forced_prob, scheme)
        dt = 0.9 * dt_max
        forcing = forced_ops.load_at(0.0)
        gain = dt * forced_ops.monitor_norm(forcing / forced_ops.m_lumped)
        margins = []

        def check_bound(n, t, state):
            bound = n * gain
            margins.append(forced_ops.monitor_norm(state) - bound)

        run(forced_prob, scheme, TimeGrid(dt * n_steps, n_steps),
            operators=forced_ops, observers=[check_bound])
        forced_bounded = max(margins) <= 1e-12 * n_steps * gain

        graded_ops = build_operators(ParabolicProblem(graded[level - 1]),
                                     scheme)
        rows.append({"level": level, "h": mesh.h,
                     "dofs": _free_count(mesh), "dt_max": dt_max,
                     "unstable_aborted": aborted, "abort_step": abort_step,
                     "free_run_nonincreasing": free_decay,
                     "forced_run_bounded": forced_bounded,
                     "graded_dt_max": graded_ops.cfl_max_dt()})

    ratios = [b["dt_max"] / a["dt_max"] for a, b in zip(rows, rows[1:])]
    report = {"levels": rows, "ratios": ratios, "mu": 0.6,
              "n_steps": n_steps}
    if cfg.out is not None:
        with open(cfg.out, "w") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
    return report


# -- acceptance bands ----------------------------------------------------------


def check_table1(result: dict) -> list:
    """Rate bands at the two finest levels of a 6-level run."""
    violations = []
    std = result["records"]["standard"]
    corr = result["records"]["corrected"]
    for record, name, targets, slack in (
            (std, "standard rate_l2", (1.38, 1.36), 0.15),
            (std, "standard rate_weighted", (1.42, 1.38), 0.15),
            (corr, "corrected rate_weighted", (2.04, 2.02), 0.15),
            (corr, "corrected rate_post", (2.12, 2.12), 0.20)):
        column = "rate_" + name.split("rate_")[1]
        got = record.column(column)[-2:]
        for value, target in zip(got, targets):
            if abs(value - target) > slack:
                violations.append(f"{name} {value:.3f} not within "
                                  f"{slack} of {target}")
    k1 = corr.column("k1h")
    k1_errors = [abs(math.sin(1.0) - v) for v in k1[2:]]
    for rate in compute_eoc(k1_errors):
        if not 1.8 <= rate <= 2.2:
            violations.append(f"k1 extraction rate {rate:.3f} outside "
                              f"[1.8, 2.2]")
    return violations


def check_elliptic(result: dict) -> list:
    violations = []
    std = result["records"]["standard"].column("rate_weighted")[-1]
    if not std <= 1.5:
        violations.append(f"standard weighted rate {std:.3f} above 1.5")
    corr = result["records"]["corrected"]
    weighted = corr.column("rate_weighted")[-1]
    if not 1.9 <= weighted <= 2.1:
        violations.append(f"corrected weighted rate {weighted:.3f} outside "
                          f"[1.9, 2.1]")
    far = corr.column("rate_post")[-1]
    if not 1.85 <= far <= 2.15:
        violations.append(f"corrected far-field rate {far:.3f} outside "
                          f"[1.85, 2.15]")
    return violations


def check_gamma(report: GammaSearchReport) -> list:
    violations = []
    if not report.converged:
        violations.append("search did not converge")
    if not 0.0 < report.gamma < 0.5:
        violations.append(f"gamma {report.gamma} outside (0, 1/2)")
    values = [lvl.gamma for lvl in report.levels]
    increments = [abs(b - a) for a, b in zip(values, values[1:])]
    tail = increments[-3:]
    if len(tail) < 3 or not all(b < a for a, b in zip(tail, tail[1:])):
        violations.append(f"increments {tail} not strictly decreasing")
    return violations


def check_advection(result: dict) -> list:
    violations = []
    corrected, standard = result["eoc"]["corrected"], result["eoc"]["standard"]
    if not corrected > standard:
        violations.append(f"corrected EOC {corrected:.3f} does not exceed "
                          f"standard {standard:.3f}")
    if not 1.5 <= corrected <= 2.2:
        violations.append(f"corrected EOC {corrected:.3f} outside [1.5, 2.2]")
    return violations


def check_cfl(report: dict) -> list:
    violations = []
    for ratio in report["ratios"]:
        if not 0.22 <= ratio <= 0.28:
            violations.append(f"dt_max ratio {ratio:.4f} outside "
                              f"[0.22, 0.28]")
    for row in report["levels"]:
        if not row["unstable_aborted"]:
            violations.append(f"level {row['level']}: 1.05*dt_max run "
                              f"did not abort")
        if not row["free_run_nonincreasing"]:
            violations.append(f"level {row['level']}: free run norm grew")
        if not row["forced_run_bounded"]:
            violations.append(f"level {row['level']}: forced run broke "
                              f"the forcing bound")
        if not row["graded_dt_max"] < row["dt_max"]:
            violations.append(f"level {row['level']}: graded dt_max not "
                              f"smaller")
    return violations


_RUNNERS = {"table1": run_table1,
            "elliptic_pollution": run_elliptic_pollution,
            "gamma": run_gamma,
            "advection_qoi": run_advection_qoi,
            "cfl_probe": run_cfl_probe}

_CHECKERS = {"table1": check_table1,
             "elliptic_pollution": check_elliptic,
             "gamma": check_gamma,
             "advection_qoi": check_advection,
             "cfl_probe": check_cfl}


def run_study(cfg: StudyConfig):
    """Dispatch a config to its runner; returns (result, violations)."""
    result = _RUNNERS[cfg.study](cfg)
    violations = _CHECKERS[cfg.study](result) if cfg.check else []
    return result, violations
