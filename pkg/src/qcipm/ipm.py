"""Primal-dual interior-point iteration, delta form.

Residual conventions used everywhere in this package:

    r_g = grad f(y) - G' pi - C(y)' lam      (stationarity)
    r_b = -g(y)                              (equalities,   g(y) = 0)
    r_d = -h(y) + t                          (inequalities, h(y) >= 0)
    r_m = lam * t - mu_target                (complementarity)

h is evaluated exactly, quadratic terms included. A KKT solve always
returns a direction d with K d = -r, so residuals are passed as-is.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .layout import ProblemLayout, layout_of
from .linalg import IndefiniteError
from .model import DenseQcqp, OcpQcqp

CONVERGED = "converged"
MAX_ITER = "max_iter"
MIN_STEP = "min_step"
NAN_DETECTED = "nan_detected"

_MODE_TABLE = {
    # tol, max_iter, tau_min, kappa, reg_eps, refine_steps, refine_tol, split
    "speed":   (1e-6, 50, 0.99,  1.1, 1e-12, 1, 1e-8,  True),
    "balance": (1e-6, 50, 0.995, 1.1, 1e-10, 2, 1e-10, True),
    "robust":  (1e-8, 100, 0.995, 1.0, 1e-8, 4, 1e-12, False),
}


@dataclass
class IpmSettings:
    tol_stat: float = 1e-6
    tol_eq: float = 1e-6
    tol_ineq: float = 1e-6
    tol_comp: float = 1e-6
    max_iter: int = 50
    tau_min: float = 0.995
    kappa: float = 1.1          # corrector acceptance slack factor
    reg_eps: float = 1e-10
    refine_steps: int = 2
    refine_tol: float = 1e-10
    split_step: bool = True     # separate primal / dual step lengths
    exit_on_converged: bool = True
    min_step_tol: float = 1e-12
    eq_method: str = "schur"    # "schur" | "nullspace" (dense backend)
    mode: str = "balance"

    @classmethod
    def for_mode(cls, mode: str) -> "IpmSettings":
        if mode not in _MODE_TABLE:
            raise ValueError(f"unknown mode {mode!r}, expected one of "
                             f"{sorted(_MODE_TABLE)}")
        tol, mi, tau, kap, reg, rs, rt, split = _MODE_TABLE[mode]
        return cls(tol_stat=tol, tol_eq=tol, tol_ineq=tol, tol_comp=tol,
                   max_iter=mi, tau_min=tau, kappa=kap,
                   reg_eps=reg, refine_steps=rs, refine_tol=rt,
                   split_step=split, mode=mode)

    def converged(self, stat: float, eq: float, ineq: float,
                  comp: float) -> bool:
        return (stat <= self.tol_stat and eq <= self.tol_eq
                and ineq <= self.tol_ineq and comp <= self.tol_comp)


@dataclass
class IpmIterate:
    y: np.ndarray
    pi: np.ndarray
    lam: np.ndarray
    t: np.ndarray

    def copy(self) -> "IpmIterate":
        return IpmIterate(self.y.copy(), self.pi.copy(),
                          self.lam.copy(), self.t.copy())

    def mu(self) -> float:
        if self.lam.size == 0:
            return 0.0
        return float(self.lam @ self.t) / self.lam.size

    def finite(self) -> bool:
        return all(np.all(np.isfinite(a))
                   for a in (self.y, self.pi, self.lam, self.t))


@dataclass
class Residuals:
    r_g: np.ndarray
    r_b: np.ndarray
    r_d: np.ndarray
    r_m: np.ndarray

    def copy(self) -> "Residuals":
        return Residuals(self.r_g.copy(), self.r_b.copy(),
                         self.r_d.copy(), self.r_m.copy())

    def norms(self) -> tuple:
        def nrm(a):
            return float(np.max(np.abs(a))) if a.size else 0.0
        return nrm(self.r_g), nrm(self.r_b), nrm(self.r_d), nrm(self.r_m)

    def max_norm(self) -> float:
        return max(self.norms())

    def plus_scaled(self, other: "Residuals", c: float = 1.0) -> "Residuals":
        return Residuals(self.r_g + c * other.r_g, self.r_b + c * other.r_b,
                         self.r_d + c * other.r_d, self.r_m + c * other.r_m)

    def finite(self) -> bool:
        return all(np.all(np.isfinite(a))
                   for a in (self.r_g, self.r_b, self.r_d, self.r_m))


@dataclass
class Direction:
    y: np.ndarray
    pi: np.ndarray
    lam: np.ndarray
    t: np.ndarray

    def copy(self) -> "Direction":
        return Direction(self.y.copy(), self.pi.copy(),
                         self.lam.copy(), self.t.copy())

    def plus(self, other: "Direction") -> "Direction":
        return Direction(self.y + other.y, self.pi + other.pi,
                         self.lam + other.lam, self.t + other.t)


@dataclass
class Solution:
    """Final primal-dual point plus the numbers a caller usually wants."""
    y: np.ndarray
    pi: np.ndarray
    lam: np.ndarray
    t: np.ndarray
    objective: float = np.nan
    stat_res: float = np.inf
    eq_res: float = np.inf
    ineq_res: float = np.inf
    comp_res: float = np.inf

    def iterate(self) -> IpmIterate:
        return IpmIterate(self.y, self.pi, self.lam, self.t)


@dataclass
class IpmStats:
    status: str = MAX_ITER
    iterations: int = 0
    stat_res: float = np.inf
    eq_res: float = np.inf
    ineq_res: float = np.inf
    comp_res: float = np.inf
    wall_s: float = 0.0
    message: str = ""
    history: list = field(default_factory=list)

    @property
    def max_res(self) -> float:
        return max(self.stat_res, self.eq_res, self.ineq_res, self.comp_res)


# -- residual evaluation -------------------------------------------------------

def compute_residuals(problem, it: IpmIterate, mu_target: float = 0.0,
                      layout: Optional[ProblemLayout] = None) -> Residuals:
    """Exact KKT residuals at the iterate (see module docstring)."""
    lay = layout if layout is not None else layout_of(problem)
    r_g = np.zeros(lay.ny)
    r_d = np.zeros(lay.ni)
    for i, blk in enumerate(lay.blocks):
        w = lay.w_of(it.y, i)
        z = lay.z_of(it.y, i)
        lam_i = lay.ineq_of(it.lam, i)
        t_i = lay.ineq_of(it.t, i)
        cj = blk.jac_rows(w)
        gw = blk.hess0 @ w + blk.grad0 - cj.T @ lam_i
        gz = blk.Zdiag * z + blk.zlin - blk.scatter_slack(lam_i)
        o = lay.y_off[i]
        r_g[o:o + blk.nw] = gw
        r_g[o + blk.nw:o + blk.nw + blk.nz] = gz
        lay.ineq_of(r_d, i)[:] = -blk.ineq_values(w, z) + t_i

    if lay.kind == "dense":
        p: DenseQcqp = problem
        v = it.y[:p.nv]
        if p.ne:
            r_b = p.eq_rhs - p.eq_mat @ v
            r_g[:p.nv] -= p.eq_mat.T @ it.pi
        else:
            r_b = np.zeros(0)
    else:
        p: OcpQcqp = problem
        d = p.dims
        r_b = np.zeros(lay.ne)
        for n in range(d.N):
            dyn = p.dyn[n]
            nu = d.nu[n]
            w_n = lay.w_of(it.y, n)
            x_next = lay.w_of(it.y, n + 1)[d.nu[n + 1]:]
            pi_n = lay.eq_of(it.pi, n, d.nx[n + 1])
            u_n, x_n = w_n[:nu], w_n[nu:]
            lay.eq_of(r_b, n, d.nx[n + 1])[:] = (
                dyn.A @ x_n + dyn.B @ u_n + dyn.b - x_next)
            # r_g = grad f - G' pi: dynamics rows carry -B on u_n, -A on x_n,
            # +I on x_{n+1}
            o = lay.y_off[n]
            r_g[o:o + nu] += dyn.B.T @ pi_n
            r_g[o + nu:o + nu + d.nx[n]] += dyn.A.T @ pi_n
            o1 = lay.y_off[n + 1] + d.nu[n + 1]
            r_g[o1:o1 + d.nx[n + 1]] -= pi_n

    r_m = it.lam * it.t - mu_target
    return Residuals(r_g, r_b, r_d, r_m)


# -- linearization -------------------------------------------------------------

@dataclass
class LinearizedData:
    """Per-block Lagrangian Hessians and inequality Jacobians at an iterate."""
    lag_hess: list
    ineq_jac: list


def update_linearization(problem, it: IpmIterate,
                         layout: Optional[ProblemLayout] = None
                         ) -> LinearizedData:
    """Hessian of the Lagrangian and exact constraint Jacobian per block.

    Quadratic constraint rows contribute -(H_k w + g_k) to the Jacobian
    and lam_k H_k to the Hessian; affine rows are constant.
    """
    lay = layout if layout is not None else layout_of(problem)
    hs, js = [], []
    for i, blk in enumerate(lay.blocks):
        w = lay.w_of(it.y, i)
        lam_q = lay.ineq_of(it.lam, i)[blk.s_q]
        hs.append(blk.lag_hess(lam_q))
        js.append(blk.jac_rows(w))
    return LinearizedData(lag_hess=hs, ineq_jac=js)


def kkt_apply(problem, it: IpmIterate, d: Direction,
              layout: Optional[ProblemLayout] = None) -> Residuals:
    """Product K d of the exact (unregularized) KKT matrix at the iterate.

    Returned in a Residuals container: components line up row-for-row
    with the residual vector the KKT solve negates.
    """
    lay = layout if layout is not None else layout_of(problem)
    out_g = np.zeros(lay.ny)
    out_d = np.zeros(lay.ni)
    for i, blk in enumerate(lay.blocks):
        w = lay.w_of(it.y, i)
        dw = lay.w_of(d.y, i)
        dz = lay.z_of(d.y, i)
        lam_i = lay.ineq_of(it.lam, i)
        dlam_i = lay.ineq_of(d.lam, i)
        cj = blk.jac_rows(w)
        lam_q = lam_i[blk.s_q]
        gw = blk.lag_hess(lam_q) @ dw - cj.T @ dlam_i
        gz = blk.Zdiag * dz - blk.scatter_slack(dlam_i)
        o = lay.y_off[i]
        out_g[o:o + blk.nw] = gw
        out_g[o + blk.nw:o + blk.nw + blk.nz] = gz
        row = cj @ dw
        sel = blk.zcol >= 0
        if np.any(sel):
            row[sel] += dz[blk.zcol[sel]]
        lay.ineq_of(out_d, i)[:] = -row + lay.ineq_of(d.t, i)

    if lay.kind == "dense":
        p: DenseQcqp = problem
        if p.ne:
            dv = d.y[:p.nv]
            out_b = -(p.eq_mat @ dv)
            out_g[:p.nv] -= p.eq_mat.T @ d.pi
        else:
            out_b = np.zeros(0)
    else:
        p: OcpQcqp = problem
        dd = p.dims
        out_b = np.zeros(lay.ne)
        for n in range(dd.N):
            dyn = p.dyn[n]
            nu = dd.nu[n]
            dw_n = lay.w_of(d.y, n)
            dx_next = lay.w_of(d.y, n + 1)[dd.nu[n + 1]:]
            dpi_n = lay.eq_of(d.pi, n, dd.nx[n + 1])
            du, dx = dw_n[:nu], dw_n[nu:]
            lay.eq_of(out_b, n, dd.nx[n + 1])[:] = (
                dyn.A @ dx + dyn.B @ du - dx_next)
            o = lay.y_off[n]
            out_g[o:o + nu] += dyn.B.T @ dpi_n
            out_g[o + nu:o + nu + dd.nx[n]] += dyn.A.T @ dpi_n
            o1 = lay.y_off[n + 1] + dd.nu[n + 1]
            out_g[o1:o1 + dd.nx[n + 1]] -= dpi_n

    out_m = it.t * d.lam + it.lam * d.t
    return Residuals(out_g, out_b, out_d, out_m)


# -- iterative refinement ------------------------------------------------------

def refine_direction(solve_fn: Callable, apply_fn: Callable,
                     res: Residuals, d: Direction,
                     steps: int, tol: float) -> tuple:
    """Improve a direction so K d = -res holds closer in the exact matrix.

    solve_fn(r) must return dd with K_approx dd = -r; apply_fn(d) is the
    exact product K d. Keeps the best direction seen. steps == 0 returns
    the input unchanged. Returns (direction, correction solves applied).
    """
    if steps <= 0:
        return d, 0

    def lin_res(cand: Direction) -> Residuals:
        return res.plus_scaled(apply_fn(cand))

    best, cur = d, d
    rho = lin_res(cur)
    best_norm = cur_norm = rho.max_norm()
    taken = 0
    for _ in range(steps):
        if cur_norm <= tol or not np.isfinite(cur_norm):
            break
        cur = cur.plus(solve_fn(rho))
        taken += 1
        rho = lin_res(cur)
        cur_norm = rho.max_norm()
        if cur_norm < best_norm:
            best, best_norm = cur, cur_norm
    return best, taken


def iterative_refinement(backend, res: Residuals, d: Direction,
                         steps: int, tol: float) -> tuple:
    """Refinement against the exact KKT matrix at the backend's iterate."""
    def apply_fn(cand):
        return kkt_apply(backend.problem, backend.iterate, cand,
                         backend.layout)
    return refine_direction(backend.solve, apply_fn, res, d, steps, tol)


# -- step selection ------------------------------------------------------------

def max_step(vec: np.ndarray, dvec: np.ndarray) -> float:
    """Largest alpha with vec + alpha * dvec >= 0; inf if nothing blocks."""
    neg = dvec < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-vec[neg] / dvec[neg]))


def boundary_frac(tau_min: float, mu: float) -> float:
    """Fraction-to-boundary parameter max(tau_min, 1 - mu), capped below 1.

    Once mu drops under machine epsilon 1 - mu rounds to exactly 1.0 and a
    blocked component would land on the boundary; the cap keeps every
    iterate strictly interior no matter how small mu gets.
    """
    return min(max(tau_min, 1.0 - mu), 1.0 - 1e-10)


def step_lengths(it: IpmIterate, d: Direction, tau: float) -> tuple:
    """Fraction-to-boundary step lengths (primal on t, dual on lam).

    alpha = min(1, tau * ratio): the boundary ratio is scaled first, then
    capped, so an unblocked component still steps the full unit length.
    """
    ap = min(1.0, tau * max_step(it.t, d.t))
    ad = min(1.0, tau * max_step(it.lam, d.lam))
    return ap, ad


def _trial_mu(it: IpmIterate, d: Direction, scale: float) -> float:
    ap, ad = step_lengths(it, d, scale)
    lam = it.lam + ad * d.lam
    t = it.t + ap * d.t
    if lam.size == 0:
        return 0.0
    return float(lam @ t) / lam.size


def mehrotra_sigma(mu: float, mu_aff: float) -> float:
    """Centering weight (mu_aff / mu)^3 clipped to [0, 1]."""
    if mu <= 0.0:
        raise ValueError("mu must be positive to form a centering weight")
    return min(1.0, max(0.0, (mu_aff / mu) ** 3))


# -- direction computation -----------------------------------------------------

def affine_direction(backend, res: Residuals,
                     settings: IpmSettings) -> tuple:
    """Refined solve of K d = -res at the backend's current factorization.

    Returns (direction, refinement solves applied). Factorization issues
    surface as the backend's error.
    """
    d0 = backend.solve(res)
    return iterative_refinement(backend, res, d0,
                                settings.refine_steps, settings.refine_tol)


def conditional_corrector(backend, it: IpmIterate, res: Residuals,
                          d_aff: Direction,
                          settings: IpmSettings) -> tuple:
    """Mehrotra corrector, kept only when it does not degrade the step.

    Builds the corrected complementarity residual, solves and refines,
    then accepts the corrected direction if its fraction-to-boundary
    trial mu is within the kappa guard of the affine one. A failed
    corrector solve falls back to the affine direction.

    Returns (direction, residuals used, info dict).
    """
    info = dict(sigma=0.0, used_corrector=False, refine_steps=0)
    mu = it.mu()
    if it.lam.size == 0 or mu <= 0.0:
        return d_aff, res, info
    mu_aff = _trial_mu(it, d_aff, 1.0)
    sigma = mehrotra_sigma(mu, mu_aff)
    info["sigma"] = sigma
    r_m = it.lam * it.t + d_aff.lam * d_aff.t - sigma * mu
    res_c = Residuals(res.r_g, res.r_b, res.r_d, r_m)
    try:
        d0 = backend.solve(res_c)
    except IndefiniteError:
        return d_aff, res, info
    d_c, taken = iterative_refinement(backend, res_c, d0,
                                      settings.refine_steps,
                                      settings.refine_tol)
    info["refine_steps"] = taken
    tau = boundary_frac(settings.tau_min, mu)
    if _trial_mu(it, d_c, tau) <= settings.kappa * _trial_mu(it, d_aff, tau):
        info["used_corrector"] = True
        return d_c, res_c, info
    return d_aff, res, info


# -- initialization ------------------------------------------------------------

def initial_iterate(problem, layout: Optional[ProblemLayout] = None,
                    margin: float = 0.1) -> IpmIterate:
    """Zero primal projected strictly inside box bounds, unit duals."""
    lay = layout if layout is not None else layout_of(problem)
    y = np.zeros(lay.ny)
    from .layout import KIND_LO_BOX, KIND_UP_BOX, KIND_SL, KIND_SU
    for i, blk in enumerate(lay.blocks):
        w = lay.w_of(y, i)
        lo = np.full(blk.nw, -np.inf)
        up = np.full(blk.nw, np.inf)
        for code, dst in ((KIND_LO_BOX, lo), (KIND_UP_BOX, up)):
            s = blk.sections[code]
            for pos in range(s.start, s.stop):
                var = int(np.argmax(np.abs(blk.affine_jac[pos])))
                dst[var] = blk.bound[pos]
        for j in range(blk.nw):
            a, b = lo[j], up[j]
            if np.isfinite(a) and np.isfinite(b):
                w[j] = 0.5 * (a + b) if a + margin > b - margin \
                    else min(max(w[j], a + margin), b - margin)
            elif np.isfinite(a):
                w[j] = max(w[j], a + margin)
            elif np.isfinite(b):
                w[j] = min(w[j], b - margin)
        # slacks: sit margin above any finite floor, never below zero
        z = lay.z_of(y, i)
        for code in (KIND_SL, KIND_SU):
            s = blk.sections[code]
            for pos in range(s.start, s.stop):
                z[blk.zcol[pos]] = max(0.0, blk.bound[pos] + margin)
    return IpmIterate(
        y=y,
        pi=np.zeros(lay.ne),
        lam=np.ones(lay.ni),
        t=np.ones(lay.ni),
    )


# -- main loop -----------------------------------------------------------------

def _make_backend(problem, layout, settings):
    if layout.kind == "dense":
        from .kkt_dense import DenseKkt
        return DenseKkt(problem, layout, settings)
    from .kkt_ocp import RiccatiKkt
    return RiccatiKkt(problem, layout, settings)


def _objective(problem, lay: ProblemLayout, y: np.ndarray) -> float:
    if lay.kind == "dense":
        parts = dense_parts(problem, y)
        return problem.objective_value(parts["v"], parts["sl"], parts["su"])
    parts = ocp_parts(problem, y)
    return problem.objective_value(parts["us"], parts["xs"],
                                   parts["sls"], parts["sus"])


def solve(problem, settings: Optional[IpmSettings] = None, *,
          observer: Optional[Callable] = None,
          backend=None) -> tuple:
    """Run the interior-point iteration. Returns (Solution, IpmStats)."""
    lay = layout_of(problem)
    cfg = settings if settings is not None else IpmSettings()
    kkt = backend if backend is not None else _make_backend(problem, lay, cfg)
    it = initial_iterate(problem, lay)
    stats = IpmStats()
    t0 = time.perf_counter()
    tiny_steps = 0
    status = MAX_ITER

    def emit(name, **payload):
        if observer is not None:
            observer(name, payload)

    try:
        for k in range(cfg.max_iter):
            res = compute_residuals(problem, it, 0.0, lay)
            if not res.finite() or not it.finite():
                status = NAN_DETECTED
                stats.message = "non-finite iterate or residual"
                break
            sn, en, dn, mn = res.norms()
            mu = it.mu()
            stats.stat_res, stats.eq_res = sn, en
            stats.ineq_res, stats.comp_res = dn, mn
            if cfg.exit_on_converged and cfg.converged(sn, en, dn, mn):
                status = CONVERGED
                break

            kkt.update(it)
            d_aff, ref_aff = affine_direction(kkt, res, cfg)
            emit("affine", iteration=k, iterate=it.copy(),
                 residuals=res.copy(), direction=d_aff.copy())

            use, res_used, corr = conditional_corrector(kkt, it, res,
                                                        d_aff, cfg)
            sigma = corr["sigma"]

            tau = boundary_frac(cfg.tau_min, mu)
            ap, ad = step_lengths(it, use, tau)
            if not cfg.split_step:
                ap = ad = min(ap, ad)

            emit("accepted", iteration=k, iterate=it.copy(),
                 residuals=res_used.copy(), direction=use.copy(),
                 alpha_p=ap, alpha_d=ad, sigma=sigma)

            it.y += ap * use.y
            it.t += ap * use.t
            it.lam += ad * use.lam
            it.pi += ad * use.pi
            stats.iterations = k + 1
            stats.history.append(dict(mu=mu, alpha_p=ap, alpha_d=ad,
                                      sigma=sigma, stat=sn, eq=en,
                                      ineq=dn, comp=mn,
                                      refine_affine=ref_aff,
                                      refine_corrector=corr["refine_steps"],
                                      used_corrector=corr["used_corrector"]))

            if min(ap, ad) < cfg.min_step_tol:
                tiny_steps += 1
                if tiny_steps >= 2:
                    status = MIN_STEP
                    break
            else:
                tiny_steps = 0
        else:
            status = MAX_ITER
    except IndefiniteError as err:
        status = NAN_DETECTED
        stats.message = str(err)

    if status != NAN_DETECTED:
        res = compute_residuals(problem, it, 0.0, lay)
        if res.finite():
            (stats.stat_res, stats.eq_res,
             stats.ineq_res, stats.comp_res) = res.norms()
            if cfg.converged(*res.norms()):
                status = CONVERGED
        else:
            status = NAN_DETECTED
            stats.message = "non-finite iterate or residual"

    stats.status = status
    stats.wall_s = time.perf_counter() - t0
    sol = Solution(y=it.y, pi=it.pi, lam=it.lam, t=it.t,
                   stat_res=stats.stat_res, eq_res=stats.eq_res,
                   ineq_res=stats.ineq_res, comp_res=stats.comp_res)
    if it.finite():
        sol.objective = _objective(problem, lay, it.y)
    return sol, stats


# -- structured views ----------------------------------------------------------

def dense_parts(problem: DenseQcqp, y: np.ndarray) -> dict:
    nv, ns = problem.nv, problem.ns
    return dict(v=y[:nv], sl=y[nv:nv + ns], su=y[nv + ns:nv + 2 * ns])


def ocp_parts(problem: OcpQcqp, y: np.ndarray) -> dict:
    lay = layout_of(problem)
    d = problem.dims
    us, xs, sls, sus = [], [], [], []
    for n in range(d.N + 1):
        w = lay.w_of(y, n)
        z = lay.z_of(y, n)
        us.append(w[:d.nu[n]].copy())
        xs.append(w[d.nu[n]:].copy())
        sls.append(z[:d.ns[n]].copy())
        sus.append(z[d.ns[n]:].copy())
    return dict(us=us, xs=xs, sls=sls, sus=sus)
