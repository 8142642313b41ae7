"""Mass-spring control benchmarks and the measurement harness.

A chain of unit masses joined to each other and to the walls by unit
springs; states are the relative positions then the velocities, controls
are forces on the first few masses. Several constraint configurations on
top of the same dynamics:

    QP_0         hard control bound per stage, soft terminal state box
    QCQP_1       hard control bound per stage, soft terminal state ball
    QCQP_N       hard control quadratic per stage, soft terminal ball
    QCQP_energy  hard control bound per stage, soft per-stage cap on the
                 second mass energy 1/2 (p2^2 + v2^2)
    QP_4/6/8     the energy cap replaced by an inscribed square /
                 hexagon / octagon in the (p2, v2) plane

The harness builds a problem per configuration, runs a preprocessing
pipeline, solves, expands back, and verifies residuals and the objective
on the original problem. Reports are deterministic for a fixed seed
except for the wall-time fields.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm

from .condensing import Pipeline
from .ipm import IpmSettings, compute_residuals, dense_parts, ocp_parts, solve
from .layout import layout_of
from .model import (HARD, DenseQcqp, Dynamics, OcpDims, OcpQcqp, OcpStage,
                    StageCost, StageIneq, StageQuad, StageSlack)

CONFIGS = ("QP_0", "QCQP_1", "QCQP_N", "QCQP_energy",
           "QP_4", "QP_6", "QP_8")


@dataclass
class MassSpringSpec:
    n_masses: int = 2
    n_forces: int = 1
    N: int = 15
    ts: float = 0.5
    config: str = "QP_0"
    u_bound: float = 0.5
    x_bound: float = 0.1          # terminal box half-width / ball radius
    state_weight: float = 1.0
    control_weight: float = 1.0
    soft_quad: float = 1e2        # quadratic slack penalty
    soft_lin: float = 1e1         # linear slack penalty
    energy_frac: float = 0.25     # cap as a fraction of the initial energy


def mass_spring_matrices(n_masses: int, n_forces: int, ts: float) -> tuple:
    """Zero-order-hold discretization of the mass-spring chain."""
    m = n_masses
    if m < 1:
        raise ValueError("need at least one mass")
    if not 1 <= n_forces <= m:
        raise ValueError("forces must act on between 1 and n_masses masses")
    stiff = -2.0 * np.eye(m)
    stiff += np.diag(np.ones(m - 1), 1) + np.diag(np.ones(m - 1), -1)
    a_c = np.zeros((2 * m, 2 * m))
    a_c[:m, m:] = np.eye(m)
    a_c[m:, :m] = stiff
    b_c = np.zeros((2 * m, n_forces))
    b_c[m + np.arange(n_forces), np.arange(n_forces)] = 1.0
    # exp of the augmented block matrix yields A_d and the input integral
    aug = np.zeros((2 * m + n_forces, 2 * m + n_forces))
    aug[:2 * m, :2 * m] = a_c
    aug[:2 * m, 2 * m:] = b_c
    big = expm(aug * ts)
    return big[:2 * m, :2 * m], big[:2 * m, 2 * m:]


def second_mass_energy(x: np.ndarray, n_masses: int) -> float:
    """1/2 (p2^2 + v2^2): the energy tracked by the table-2 problems."""
    if n_masses < 2:
        raise ValueError("second-mass energy needs at least two masses")
    return 0.5 * (float(x[1]) ** 2 + float(x[n_masses + 1]) ** 2)


def _stage(nu, nx, R, Q, idxbu=(), ub_u=(), lb_u=(), idxbx=(), lb_x=(),
           ub_x=(), x_soft=(), x_eq=(), gen=None, gen_lb=(), gen_ub=(),
           gen_soft=(), quads=(), quad_soft=(), Zq=1e3, zq=1e2) -> OcpStage:
    """Assemble one stage; rows ordered control box, state box, general."""
    nbu, nbx = len(idxbu), len(idxbx)
    ng = 0 if gen is None else gen.shape[0]
    nqd = len(quads)
    soft = ([HARD] * nbu + list(x_soft) + list(gen_soft) + list(quad_soft))
    ns = 0
    for s in soft:
        if s != HARD:
            ns = max(ns, s + 1)
    lb = np.asarray(list(lb_u) + list(lb_x) + list(gen_lb), dtype=float)
    ub = np.asarray(list(ub_u) + list(ub_x) + list(gen_ub), dtype=float)
    eq = np.asarray([False] * nbu + list(x_eq) + [False] * ng, dtype=bool)
    return OcpStage(
        cost=StageCost(R=R, S=np.zeros((nu, nx)), Q=Q,
                       r=np.zeros(nu), q=np.zeros(nx)),
        ineq=StageIneq(
            idxbu=np.asarray(idxbu, dtype=np.intp),
            idxbx=np.asarray(idxbx, dtype=np.intp),
            D=np.zeros((ng, nu)),
            C=gen if gen is not None else np.zeros((0, nx)),
            lb=lb, ub=ub,
            soft_map=np.asarray(soft, dtype=np.intp),
            mask_lo=np.ones(nbu + nbx + ng + nqd, dtype=bool),
            mask_up=np.ones(nbu + nbx + ng + nqd, dtype=bool),
            eq_mark=eq),
        quads=list(quads),
        slack=StageSlack(
            Zl=np.full(ns, Zq), Zu=np.full(ns, Zq),
            zl=np.full(ns, zq), zu=np.full(ns, zq),
            sl_min=np.zeros(ns), su_min=np.zeros(ns)))


def mass_spring_ocp(spec: MassSpringSpec, x0) -> OcpQcqp:
    """Build the configured problem with stage-0 rows pinning x0."""
    if spec.config not in CONFIGS:
        raise ValueError(f"unknown configuration {spec.config!r}, expected "
                         f"one of {CONFIGS}")
    if spec.config in ("QP_4", "QP_6", "QP_8"):
        base = replace(spec, config="QCQP_energy")
        return polygon_approximation(mass_spring_ocp(base, x0),
                                     int(spec.config.split("_")[1]))

    m = spec.n_masses
    nxv = 2 * m
    nf = spec.n_forces
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != nxv:
        raise ValueError(f"dimension mismatch: x0 has {x0.size} entries, "
                         f"the chain has {nxv} states")
    A, B = mass_spring_matrices(m, nf, spec.ts)
    N = spec.N
    cfg = spec.config
    table2 = cfg == "QCQP_energy"
    qw = 0.0 if table2 else spec.state_weight

    ctrl_quad = cfg == "QCQP_N"
    level = (spec.energy_frac * second_mass_energy(x0, m)
             if table2 else np.nan)

    stages = []
    for n in range(N + 1):
        nu = nf if n < N else 0
        R = spec.control_weight * np.eye(nu)
        Q = qw * np.eye(nxv)
        kw = dict(nu=nu, nx=nxv, R=R, Q=Q,
                  Zq=spec.soft_quad, zq=spec.soft_lin)
        if n < N and not ctrl_quad:
            kw.update(idxbu=np.arange(nf), lb_u=[-spec.u_bound] * nf,
                      ub_u=[spec.u_bound] * nf)
        if n < N and ctrl_quad:
            kw.update(quads=[StageQuad(
                R=np.eye(nf), S=np.zeros((nf, nxv)),
                Q=np.zeros((nxv, nxv)), r=np.zeros(nf), q=np.zeros(nxv),
                ub=0.5 * spec.u_bound ** 2)], quad_soft=[HARD])
        if n == 0:
            # hard two-sided equality rows fixing the initial state
            kw.update(idxbx=np.arange(nxv), lb_x=x0.copy(), ub_x=x0.copy(),
                      x_soft=[HARD] * nxv, x_eq=[True] * nxv)
        elif table2:
            hq = np.zeros((nxv, nxv))
            hq[1, 1] = hq[m + 1, m + 1] = 1.0
            kw.update(quads=[StageQuad(
                R=np.zeros((nu, nu)), S=np.zeros((nu, nxv)), Q=hq,
                r=np.zeros(nu), q=np.zeros(nxv), ub=level)],
                quad_soft=[0])
        elif n == N:
            if cfg == "QP_0":
                kw.update(idxbx=np.arange(nxv),
                          lb_x=[-spec.x_bound] * nxv,
                          ub_x=[spec.x_bound] * nxv,
                          x_soft=list(range(nxv)), x_eq=[False] * nxv)
            else:  # QCQP_1 and QCQP_N share the terminal ball
                kw.update(quads=[StageQuad(
                    R=np.zeros((0, 0)), S=np.zeros((0, nxv)),
                    Q=np.eye(nxv), r=np.zeros(0), q=np.zeros(nxv),
                    ub=0.5 * spec.x_bound ** 2)], quad_soft=[0])
        stages.append(_stage(**kw))

    d = OcpDims(
        N=N,
        nx=np.full(N + 1, nxv), nu=np.asarray([nf] * N + [0]),
        nbu=np.asarray([len(s.ineq.idxbu) for s in stages]),
        nbx=np.asarray([len(s.ineq.idxbx) for s in stages]),
        ng=np.asarray([s.ineq.D.shape[0] for s in stages]),
        nq=np.asarray([len(s.quads) for s in stages]),
        ns=np.asarray([s.slack.Zl.size for s in stages]))
    p = OcpQcqp(dims=d,
                dyn=[Dynamics(A=A.copy(), B=B.copy(), b=np.zeros(nxv))
                     for _ in range(N)],
                stages=stages, x0=x0.copy(), x0_mode="fixed")
    return p.freeze()


# -- polygon approximation of planar disks ----------------------------------------

def _disk_geometry(qc: StageQuad) -> tuple:
    """Coordinates (i, j) and radius of a two-coordinate state disk."""
    if np.any(qc.R) or np.any(qc.S) or np.any(qc.r) or np.any(qc.q):
        raise ValueError("quadratic constraint is not a pure state disk")
    diag = np.diag(qc.Q)
    if np.any(qc.Q - np.diag(diag)):
        raise ValueError("quadratic constraint is not diagonal")
    nz = np.flatnonzero(diag)
    if nz.size != 2 or diag[nz[0]] != diag[nz[1]] or diag[nz[0]] <= 0:
        raise ValueError("quadratic constraint is not a two-coordinate disk")
    h = float(diag[nz[0]])
    if qc.ub <= 0:
        raise ValueError("disk level must be positive")
    return int(nz[0]), int(nz[1]), math.sqrt(2.0 * qc.ub / h)


def polygon_approximation(p: OcpQcqp, sides: int) -> OcpQcqp:
    """Replace every two-coordinate state disk with an inscribed polygon.

    sides = 4 uses two-sided state box rows on the disk coordinates;
    6 and 8 use general rows with normals spaced 60 or 45 degrees apart
    (the octagon rotated half a facet). Vertices sit on the disk
    boundary, so the polygon is contained in the disk and a hard
    polygon problem can only have a larger optimum. Soft disks hand
    each row its own slack pair with the disk's penalties.
    """
    if sides not in (4, 6, 8):
        raise ValueError(f"sides must be 4, 6 or 8, got {sides}")
    d = p.dims
    nd = d.copy()
    stages = []
    for n in range(d.N + 1):
        st = p.stages[n]
        if not st.quads:
            stages.append(st)
            continue
        iq = st.ineq
        nbu, nbx, ng = d.nbu[n], d.nbx[n], d.ng[n]
        nx = d.nx[n]

        # slacks referenced by surviving (non-quad) rows keep their pairs
        keep = sorted({int(s) for s in iq.soft_map[:nbu + nbx + ng]
                       if s != HARD})
        remap = {old: new for new, old in enumerate(keep)}
        sk = st.slack
        Zl = [sk.Zl[i] for i in keep]; Zu = [sk.Zu[i] for i in keep]
        zl = [sk.zl[i] for i in keep]; zu = [sk.zu[i] for i in keep]
        smin_l = [sk.sl_min[i] for i in keep]
        smin_u = [sk.su_min[i] for i in keep]

        idxbx = list(iq.idxbx)
        lb_x = list(iq.lb[nbu:nbu + nbx]); ub_x = list(iq.ub[nbu:nbu + nbx])
        meta_x = [(remap.get(int(iq.soft_map[nbu + i]), HARD)
                   if iq.soft_map[nbu + i] != HARD else HARD,
                   iq.mask_lo[nbu + i], iq.mask_up[nbu + i],
                   iq.eq_mark[nbu + i]) for i in range(nbx)]
        rows_g = [iq.C[i].copy() for i in range(ng)]
        lb_g = list(iq.lb[nbu + nbx:]); ub_g = list(iq.ub[nbu + nbx:])
        meta_g = [(remap.get(int(iq.soft_map[nbu + nbx + i]), HARD)
                   if iq.soft_map[nbu + nbx + i] != HARD else HARD,
                   iq.mask_lo[nbu + nbx + i], iq.mask_up[nbu + nbx + i],
                   iq.eq_mark[nbu + nbx + i]) for i in range(ng)]

        for k, qc in enumerate(st.quads):
            ci, cj, radius = _disk_geometry(qc)
            soft_old = iq.soft_map[nbu + nbx + ng + k]
            apothem = radius * math.cos(math.pi / sides)
            if sides == 4:
                coords = (ci, cj)
                for c in coords:
                    smap = HARD
                    if soft_old != HARD:
                        smap = len(Zl)
                        Zl.append(sk.Zl[soft_old]); Zu.append(sk.Zu[soft_old])
                        zl.append(sk.zl[soft_old]); zu.append(sk.zu[soft_old])
                        smin_l.append(sk.sl_min[soft_old])
                        smin_u.append(sk.su_min[soft_old])
                    idxbx.append(c)
                    lb_x.append(-apothem); ub_x.append(apothem)
                    meta_x.append((smap, True, True, False))
            else:
                n_rows = sides // 2
                start = 0.0 if sides == 6 else math.pi / sides
                for krow in range(n_rows):
                    theta = start + krow * (2.0 * math.pi / sides)
                    row = np.zeros(nx)
                    row[ci] = math.cos(theta)
                    row[cj] = math.sin(theta)
                    smap = HARD
                    if soft_old != HARD:
                        smap = len(Zl)
                        Zl.append(sk.Zl[soft_old]); Zu.append(sk.Zu[soft_old])
                        zl.append(sk.zl[soft_old]); zu.append(sk.zu[soft_old])
                        smin_l.append(sk.sl_min[soft_old])
                        smin_u.append(sk.su_min[soft_old])
                    rows_g.append(row)
                    lb_g.append(-apothem); ub_g.append(apothem)
                    meta_g.append((smap, True, True, False))

        nbx2, ng2 = len(idxbx), len(rows_g)
        lb = np.asarray(list(iq.lb[:nbu]) + lb_x + lb_g, dtype=float)
        ub = np.asarray(list(iq.ub[:nbu]) + ub_x + ub_g, dtype=float)
        soft = ([remap.get(int(s), HARD) if s != HARD else HARD
                 for s in iq.soft_map[:nbu]]
                + [mx[0] for mx in meta_x] + [mg[0] for mg in meta_g])
        mlo = (list(iq.mask_lo[:nbu]) + [mx[1] for mx in meta_x]
               + [mg[1] for mg in meta_g])
        mup = (list(iq.mask_up[:nbu]) + [mx[2] for mx in meta_x]
               + [mg[2] for mg in meta_g])
        eqm = (list(iq.eq_mark[:nbu]) + [mx[3] for mx in meta_x]
               + [mg[3] for mg in meta_g])
        stages.append(OcpStage(
            cost=st.cost,
            ineq=StageIneq(
                idxbu=iq.idxbu.copy(),
                idxbx=np.asarray(idxbx, dtype=np.intp),
                D=np.zeros((ng2, d.nu[n])),
                C=np.vstack(rows_g) if ng2 else np.zeros((0, nx)),
                lb=lb, ub=ub,
                soft_map=np.asarray(soft, dtype=np.intp),
                mask_lo=np.asarray(mlo, dtype=bool),
                mask_up=np.asarray(mup, dtype=bool),
                eq_mark=np.asarray(eqm, dtype=bool)),
            quads=[],
            slack=StageSlack(
                Zl=np.asarray(Zl, dtype=float), Zu=np.asarray(Zu, dtype=float),
                zl=np.asarray(zl, dtype=float), zu=np.asarray(zu, dtype=float),
                sl_min=np.asarray(smin_l, dtype=float),
                su_min=np.asarray(smin_u, dtype=float))))
        nd.nbx[n] = nbx2
        nd.ng[n] = ng2
        nd.nq[n] = 0
        nd.ns[n] = len(Zl)

    out = OcpQcqp(dims=nd, dyn=p.dyn, stages=stages, x0=p.x0,
                  x0_mode=p.x0_mode, obj_offset=p.obj_offset)
    return out.freeze()


# -- suites ------------------------------------------------------------------------

def table1_problems(x0) -> list:
    base = MassSpringSpec(n_masses=2, n_forces=1, N=15, ts=0.5)
    return [(name, mass_spring_ocp(replace(base, config=name), x0))
            for name in ("QP_0", "QCQP_1", "QCQP_N")]


def table2_problems(x0) -> list:
    base = MassSpringSpec(n_masses=2, n_forces=1, N=6, ts=0.5,
                          config="QCQP_energy")
    energy = mass_spring_ocp(base, x0)
    out = [("QCQP_inf", energy)]
    for sides in (4, 6, 8):
        out.append((f"QP_{sides}", polygon_approximation(energy, sides)))
    return out


_SUITES = {
    "table1": (table1_problems, ("none", "x0", "full", "partial"), 4),
    "table2": (table2_problems, ("x0",), 4),
}


# -- harness ------------------------------------------------------------------------

CSV_COLUMNS = ("problem", "pipeline", "mode", "iters", "wall_s",
               "stat_res", "eq_res", "ineq_res", "comp_res",
               "objective", "status")


@dataclass
class BenchRecord:
    problem: str
    pipeline: str
    mode: str
    iters: int
    wall_s: float
    stat_res: float
    eq_res: float
    ineq_res: float
    comp_res: float
    objective: float
    status: str

    def row(self) -> list:
        return [self.problem, self.pipeline, self.mode, str(self.iters),
                repr(self.wall_s), repr(self.stat_res), repr(self.eq_res),
                repr(self.ineq_res), repr(self.comp_res),
                repr(self.objective), self.status]


@dataclass
class BenchReport:
    records: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def all_converged(self) -> bool:
        return all(r.status == "converged" for r in self.records)

    def all_completed(self) -> bool:
        return all(r.status in ("converged", "max_iter")
                   for r in self.records)


def _build_pipeline(problem, kind: str, block_size: int) -> Pipeline:
    if isinstance(problem, DenseQcqp):
        if kind != "none":
            raise ValueError("dense problems only support the baseline "
                             "pipeline")
        return Pipeline("baseline", problem, lambda it: it)
    return Pipeline.build(problem, kind, block_size)


def _objective_of(problem, it) -> float:
    if isinstance(problem, DenseQcqp):
        parts = dense_parts(problem, it.y)
        return problem.objective_value(parts["v"], parts["sl"], parts["su"])
    parts = ocp_parts(problem, it.y)
    return problem.objective_value(parts["us"], parts["xs"],
                                   parts["sls"], parts["sus"])


def run_one(name: str, problem, kind: str, settings: IpmSettings,
            block_size: int = 3, repeats: int = 1) -> BenchRecord:
    """Time pipeline build + solve + expansion, verify on the original."""
    best = np.inf
    expanded = stats = None
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        pipe = _build_pipeline(problem, kind, block_size)
        sol, stats = solve(pipe.problem, settings)
        expanded = pipe.expand(sol.iterate())
        best = min(best, time.perf_counter() - t0)
    res = compute_residuals(problem, expanded, 0.0, layout_of(problem))
    sn, en, dn, mn = res.norms()
    return BenchRecord(
        problem=name, pipeline=pipe.name, mode=settings.mode,
        iters=stats.iterations, wall_s=best,
        stat_res=sn, eq_res=en, ineq_res=dn, comp_res=mn,
        objective=_objective_of(problem, expanded),
        status=stats.status)


def run_benchmark(suite: str = "table1", mode: str = "balance",
                  iters="auto", condense=None, block_size: int = 3,
                  seed: int = 0, repeats: int = 1,
                  problems=None) -> BenchReport:
    """Run a suite (or explicit [(name, problem)] list) through the
    solver and collect one record per problem and pipeline."""
    settings = IpmSettings.for_mode(mode)
    if iters != "auto":
        settings.max_iter = int(iters)
        settings.exit_on_converged = False

    if problems is None:
        if suite not in _SUITES:
            raise ValueError(f"unknown suite {suite!r}; pass problems= "
                             f"for a custom run")
        build, pipelines, nx0 = _SUITES[suite]
        rng = np.random.default_rng(seed)
        x0 = rng.uniform(-1.0, 1.0, nx0)
        problems = build(x0)
    else:
        pipelines = ("none",)
    if condense is not None:
        pipelines = (condense,)

    report = BenchReport(meta=dict(
        suite=suite, mode=mode, iters=str(iters), seed=int(seed),
        repeats=int(repeats), block_size=int(block_size),
        pipelines=list(pipelines)))
    for name, problem in problems:
        for kind in pipelines:
            report.records.append(run_one(name, problem, kind, settings,
                                          block_size, repeats))
    return report


# -- report output -------------------------------------------------------------------

def report_to_csv(report: BenchReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in report.records:
        writer.writerow(rec.row())
    return buf.getvalue()


def report_to_json(report: BenchReport) -> str:
    tree = {"meta": report.meta,
            "records": [dict(zip(CSV_COLUMNS, rec.row()))
                        for rec in report.records]}
    return json.dumps(tree, indent=2, sort_keys=True) + "\n"


def save_report(report: BenchReport, path, fmt: str = "csv") -> None:
    text = report_to_csv(report) if fmt == "csv" else report_to_json(report)
    with open(path, "w") as fh:
        fh.write(text)
