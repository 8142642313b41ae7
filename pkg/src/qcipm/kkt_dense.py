"""Dense KKT backend.

Eliminates inequality multipliers and slacks, then the slack-penalty
columns, leaving a saddle system over (w, pi):

    [[Hred, -A'], [-A, 0]] [dw, dpi] = [rhs, -r_b]

Equalities are absorbed either through a Schur complement on A or a
null-space basis, selected by settings.eq_method.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import flops
from .ipm import Direction, Residuals
from .layout import Block, ProblemLayout
from .linalg import Cholesky, IndefiniteError, chol_or_raise, symmetrize


# -- per-block elimination kernel (also used stage-wise by the OCP backend) ----

@dataclass
class BlockElim:
    blk: Block
    cjac: np.ndarray    # (m, nw) constraint Jacobian at the iterate
    W: np.ndarray       # (m,) lam / t
    lam: np.ndarray
    t: np.ndarray
    D: np.ndarray       # (nz,) slack-column pivots
    B: np.ndarray       # (nw, nz) cross coupling
    Hred: np.ndarray    # (nw, nw) reduced primal Hessian


def eliminate_block(blk: Block, w: np.ndarray, z: np.ndarray,
                    lam: np.ndarray, t: np.ndarray, reg: float,
                    full_reg: bool) -> BlockElim:
    """Condense inequality rows and slack columns of one block.

    full_reg adds reg to every pivot; otherwise regularization is left
    to the caller (the Riccati recursion protects its own pivots).
    """
    cjac = blk.jac_rows(w)
    if blk.m and np.min(t) <= 0.0:
        j = int(np.argmin(t))
        raise IndefiniteError(f"inequality row {j} has nonpositive slack "
                              f"{t[j]:.3e}")
    W = lam / t
    Hw = blk.lag_hess(lam[blk.s_q])
    if blk.m:
        Hw = Hw + cjac.T @ (W[:, None] * cjac)
    D = blk.Zdiag.astype(float).copy()
    linked = blk.zcol >= 0
    n_linked = int(np.count_nonzero(linked))
    if n_linked:
        np.add.at(D, blk.zcol[linked], W[linked])
    B = np.zeros((blk.nw, blk.nz))
    if n_linked and blk.nw:
        np.add.at(B.T, blk.zcol[linked], (W[:, None] * cjac)[linked])
    if full_reg and reg > 0:
        Hw = Hw + reg * np.eye(blk.nw)
        D = D + reg
    if np.any(D <= 0) and blk.nz:
        j = int(np.argmin(D))
        raise IndefiniteError(f"slack column {j} has nonpositive pivot "
                              f"{D[j]:.3e}")
    Hred = Hw
    if blk.nz:
        Hred = Hw - (B / D) @ B.T
    flops.record("slack_elim",
                 blk.nz * (2 * blk.nw * blk.nw + blk.nw + 3)
                 + n_linked * (2 * blk.nw + 1))
    return BlockElim(blk=blk, cjac=cjac, W=W, lam=lam.copy(), t=t.copy(),
                     D=D, B=B, Hred=symmetrize(Hred))


def block_rhs(el: BlockElim, r_g_w: np.ndarray, r_g_z: np.ndarray,
              r_d: np.ndarray, r_m: np.ndarray) -> tuple:
    """Reduced right-hand side over w, plus the slack rhs for recovery.

    aug_rhs = -r_g + C' T^{-1} (Lam r_d - r_m), then the z rows are
    folded into the w rows through the D pivots.
    """
    blk = el.blk
    tmp = el.W * r_d - r_m / el.t if blk.m else np.zeros(0)
    rhs_w = -r_g_w + (el.cjac.T @ tmp if blk.m else 0.0)
    rhs_z = -r_g_z + blk.scatter_slack(tmp)
    rhs_w_red = rhs_w - el.B @ (rhs_z / el.D) if blk.nz else rhs_w
    return rhs_w_red, rhs_z


def recover_z(el: BlockElim, dw: np.ndarray,
              rhs_z: np.ndarray) -> np.ndarray:
    if el.blk.nz == 0:
        return np.zeros(0)
    return (rhs_z - el.B.T @ dw) / el.D


def recover_ineq(el: BlockElim, dw: np.ndarray, dz: np.ndarray,
                 r_d: np.ndarray, r_m: np.ndarray) -> tuple:
    """Back out (dlam, dt) from the primal direction of one block."""
    blk = el.blk
    dt = el.cjac @ dw - r_d
    sel = blk.zcol >= 0
    if np.any(sel):
        dt[sel] += dz[blk.zcol[sel]]
    dlam = -(r_m + el.lam * dt) / el.t
    return dlam, dt


# -- whole-problem operations ----------------------------------------------------

def eliminate_ineq(problem, it, res: Residuals, reg: float = 0.0,
                   layout: Optional[ProblemLayout] = None) -> tuple:
    """Reduced primal system of a dense problem at an iterate.

    Returns (aug_hess, aug_rhs) over the v variables after folding the
    inequality rows (weights lam/t) and the slack columns into them.
    With no inequalities this is just H + reg * I and -r_g.
    """
    from .layout import layout_of
    lay = layout if layout is not None else layout_of(problem)
    blk = lay.blocks[0]
    el = eliminate_block(blk, lay.w_of(it.y, 0), lay.z_of(it.y, 0),
                         it.lam, it.t, reg, full_reg=True)
    rhs_w, _ = block_rhs(el, res.r_g[:blk.nw],
                         res.r_g[blk.nw:blk.nw + blk.nz],
                         res.r_d, res.r_m)
    return el.Hred, rhs_w


@dataclass
class DenseFactor:
    hred: Cholesky
    eq_mat: Optional[np.ndarray] = None
    schur: Optional[Cholesky] = None


def factorize_dense(aug_hess: np.ndarray, reg: float,
                    eq_mat: Optional[np.ndarray] = None) -> DenseFactor:
    """Cholesky of the reduced Hessian, plus the equality Schur complement."""
    hred = chol_or_raise(aug_hess, reg, "reduced primal system")
    if eq_mat is None or eq_mat.shape[0] == 0:
        return DenseFactor(hred=hred)
    HiAt = hred.solve(eq_mat.T)
    schur = chol_or_raise(symmetrize(eq_mat @ HiAt), reg,
                          "equality Schur complement")
    return DenseFactor(hred=hred, eq_mat=eq_mat, schur=schur)


def solve_dense(fact: DenseFactor, aug_rhs: np.ndarray,
                r_b: np.ndarray) -> tuple:
    """Solve the saddle system [[Hred, -A'], [-A, 0]] d = [aug_rhs, -r_b]."""
    if fact.schur is None:
        return fact.hred.solve(aug_rhs), np.zeros(0)
    u = fact.hred.solve(aug_rhs)
    dpi = fact.schur.solve(r_b - fact.eq_mat @ u)
    dw = u + fact.hred.solve(fact.eq_mat.T @ dpi)
    return dw, dpi


# -- dense backend --------------------------------------------------------------

class DenseKkt:
    """Factorize-and-solve object for dense problems."""

    def __init__(self, problem, layout: ProblemLayout, settings):
        self.problem = problem
        self.layout = layout
        self.cfg = settings
        self.iterate = None
        self.elim: Optional[BlockElim] = None
        self.fact: Optional[DenseFactor] = None
        self.null_fac: Optional[Cholesky] = None
        A = problem.eq_mat
        self._svd = None
        if problem.ne and settings.eq_method == "nullspace":
            U, s, Vt = np.linalg.svd(A, full_matrices=True)
            rank = int(np.sum(s > max(A.shape) * np.finfo(float).eps
                              * (s[0] if s.size else 1.0)))
            self._svd = (U[:, :rank], s[:rank], Vt[:rank],
                         Vt[rank:].T)  # null basis as columns

    def update(self, it) -> None:
        lay = self.layout
        blk = lay.blocks[0]
        w = lay.w_of(it.y, 0)
        z = lay.z_of(it.y, 0)
        el = eliminate_block(blk, w, z, it.lam, it.t,
                             self.cfg.reg_eps, full_reg=True)
        self.elim = el
        self.iterate = it.copy()
        p = self.problem
        if p.ne and self._svd is not None:
            Zb = self._svd[3]
            Hn = symmetrize(Zb.T @ el.Hred @ Zb)
            self.null_fac = chol_or_raise(Hn, self.cfg.reg_eps,
                                          "null-space reduced system")
            self.fact = None
        else:
            self.fact = factorize_dense(el.Hred, self.cfg.reg_eps,
                                        p.eq_mat if p.ne else None)

    def solve(self, res: Residuals) -> Direction:
        el = self.elim
        if el is None:
            raise RuntimeError("solve before update")
        p, lay = self.problem, self.layout
        blk = lay.blocks[0]
        r_g_w = res.r_g[:blk.nw]
        r_g_z = res.r_g[blk.nw:blk.nw + blk.nz]
        rhs_w, rhs_z = block_rhs(el, r_g_w, r_g_z, res.r_d, res.r_m)

        if self._svd is not None and p.ne:
            U, s, Vt, Zb = self._svd
            w_p = Vt.T @ ((U.T @ res.r_b) / s)
            q = self.null_fac.solve(Zb.T @ (rhs_w - el.Hred @ w_p))
            dw = w_p + Zb @ q
            # -A' dpi = rhs - Hred dw, solved in the least-squares sense
            dpi = U @ ((Vt @ (el.Hred @ dw - rhs_w)) / s)
        else:
            dw, dpi = solve_dense(self.fact, rhs_w, res.r_b)

        dz = recover_z(el, dw, rhs_z)
        dlam, dt = recover_ineq(el, dw, dz, res.r_d, res.r_m)
        dy = np.concatenate([dw, dz])
        return Direction(y=dy, pi=dpi, lam=dlam, t=dt)
