"""Stage-structured KKT backend.

Each stage is condensed with the shared block kernel, then the dynamics
multipliers are eliminated by a backward Riccati recursion. Cost per
iteration is linear in the horizon length.

Sign conventions (w_n = (u_n, x_n), equality rows
x_{n+1} - A_n x_n - B_n u_n - b_n = 0, r_b = -g):

    dpi_{n-1} = P_n dx_n + p_n
    Rbar = Rt + B' P+ B,  Sbar = St + B' P+ A,  Qbar = Qt + A' P+ A
    hu^  = hu - B' P+ r_b - B' p+
    K = -Rbar^{-1} Sbar,  k = Rbar^{-1} hu^
    P = Qbar - Sbar' Rbar^{-1} Sbar
    p = Sbar' Rbar^{-1} hu^ + A' P+ r_b + A' p+ - hx

The terminal stage uses the same formulas with the P+ terms absent.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from . import flops
from .flops import chol_cost, gemm_cost
from .ipm import Direction, Residuals
from .kkt_dense import (BlockElim, block_rhs, eliminate_block, recover_ineq,
                        recover_z)
from .layout import ProblemLayout
from .linalg import Cholesky, chol_or_raise, symmetrize


class RiccatiKkt:
    """Factorize-and-solve object for optimal-control problems."""

    def __init__(self, problem, layout: ProblemLayout, settings):
        self.problem = problem
        self.layout = layout
        self.cfg = settings
        self.iterate = None
        self.elims: Optional[list] = None
        self.P: Optional[list] = None
        self.K: Optional[list] = None
        self.r_fac: Optional[list] = None
        self.p0_fac: Optional[Cholesky] = None

    def update(self, it) -> None:
        p, lay, cfg = self.problem, self.layout, self.cfg
        self.iterate = it.copy()
        d = p.dims
        N = d.N
        reg = cfg.reg_eps
        elims = []
        for n in range(N + 1):
            blk = lay.blocks[n]
            elims.append(eliminate_block(
                blk, lay.w_of(it.y, n), lay.z_of(it.y, n),
                lay.ineq_of(it.lam, n), lay.ineq_of(it.t, n),
                reg, full_reg=False))
        P = [None] * (N + 1)
        K = [None] * (N + 1)
        r_fac = [None] * (N + 1)
        count = 0
        for n in range(N, -1, -1):
            nu, nx = d.nu[n], d.nx[n]
            H = elims[n].Hred
            Rt, St, Qt = H[:nu, :nu], H[:nu, nu:], H[nu:, nu:]
            if n == N:
                Rbar, Sbar, Qbar = Rt, St, Qt
            else:
                A, B = p.dyn[n].A, p.dyn[n].B
                nxp = d.nx[n + 1]
                PB = P[n + 1] @ B
                PA = P[n + 1] @ A
                Rbar = Rt + B.T @ PB
                Sbar = St + B.T @ PA
                Qbar = Qt + A.T @ PA
                count += (gemm_cost(nxp, nxp, nu) + gemm_cost(nxp, nxp, nx)
                          + gemm_cost(nu, nxp, nu) + gemm_cost(nu, nxp, nx)
                          + gemm_cost(nx, nxp, nx))
            if reg > 0 and nu:
                Rbar = Rbar + reg * np.eye(nu)
            r_fac[n] = chol_or_raise(symmetrize(Rbar), reg,
                                     f"stage {n} control pivot")
            K[n] = -r_fac[n].solve(Sbar) if nu else np.zeros((0, nx))
            P[n] = symmetrize(Qbar + Sbar.T @ K[n]) if nu else \
                symmetrize(np.asarray(Qbar))
            count += chol_cost(nu) + gemm_cost(nu, nu, nx) \
                + gemm_cost(nx, nu, nx)
        if d.nx[0]:
            self.p0_fac = chol_or_raise(P[0], reg, "initial-state pivot")
            count += chol_cost(d.nx[0])
        else:
            self.p0_fac = None
        flops.record("riccati_factorize", count)
        self.elims, self.P, self.K, self.r_fac = elims, P, K, r_fac

    def solve(self, res: Residuals) -> Direction:
        if self.elims is None:
            raise RuntimeError("solve before update")
        p, lay = self.problem, self.layout
        d = p.dims
        N = d.N

        hu, hx, rhs_z = [], [], []
        for n in range(N + 1):
            blk = lay.blocks[n]
            o = lay.y_off[n]
            r_g_w = res.r_g[o:o + blk.nw]
            r_g_z = res.r_g[o + blk.nw:o + blk.nw + blk.nz]
            rw, rz = block_rhs(self.elims[n], r_g_w, r_g_z,
                               lay.ineq_of(res.r_d, n),
                               lay.ineq_of(res.r_m, n))
            hu.append(rw[:d.nu[n]])
            hx.append(rw[d.nu[n]:])
            rhs_z.append(rz)

        # backward sweep for the vector terms
        pvec = [None] * (N + 1)
        kvec = [None] * (N + 1)
        for n in range(N, -1, -1):
            if n == N:
                hu_hat = hu[n]
                tail = -hx[n]
            else:
                A, B = p.dyn[n].A, p.dyn[n].B
                rb_n = lay.eq_of(res.r_b, n, d.nx[n + 1])
                Pr = self.P[n + 1] @ rb_n + pvec[n + 1]
                hu_hat = hu[n] - B.T @ Pr
                tail = A.T @ Pr - hx[n]
            kvec[n] = self.r_fac[n].solve(hu_hat) if d.nu[n] else np.zeros(0)
            pvec[n] = -self.K[n].T @ hu_hat + tail

        # forward rollout
        dy = np.zeros(lay.ny)
        dpi = np.zeros(lay.ne)
        dlam = np.zeros(lay.ni)
        dt = np.zeros(lay.ni)
        dx = -self.p0_fac.solve(pvec[0]) if d.nx[0] else np.zeros(0)
        for n in range(N + 1):
            du = self.K[n] @ dx + kvec[n]
            dw = np.concatenate([du, dx])
            dz = recover_z(self.elims[n], dw, rhs_z[n])
            o = lay.y_off[n]
            blk = lay.blocks[n]
            dy[o:o + blk.nw] = dw
            dy[o + blk.nw:o + blk.nw + blk.nz] = dz
            dl, dtt = recover_ineq(self.elims[n], dw, dz,
                                   lay.ineq_of(res.r_d, n),
                                   lay.ineq_of(res.r_m, n))
            lay.ineq_of(dlam, n)[:] = dl
            lay.ineq_of(dt, n)[:] = dtt
            if n < N:
                A, B = p.dyn[n].A, p.dyn[n].B
                rb_n = lay.eq_of(res.r_b, n, d.nx[n + 1])
                dx = A @ dx + B @ du + rb_n
                lay.eq_of(dpi, n, d.nx[n + 1])[:] = (
                    self.P[n + 1] @ dx + pvec[n + 1])
        return Direction(y=dy, pi=dpi, lam=dlam, t=dt)
