"""State elimination by forward substitution.

Three preprocessing transforms, each returning (new_problem, map) where
the map reconstructs a full solution of the original problem:

  remove_x0         consume equality-marked stage-0 state fixing rows
  full_condense     eliminate every state, leaving a dense problem over
                    (x0 if still free, u_0, ..., u_N)
  partial_condense  group stages into blocks, keeping one state vector
                    per block boundary

State box rows whose state is eliminated turn into general rows.
Inequality entries map one-to-one, so multipliers transfer by a
permutation; dynamics multipliers are rebuilt from stationarity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import flops
from .ipm import IpmIterate, compute_residuals, ocp_parts
from .layout import (KIND_LO_BOX, KIND_LO_GEN, KIND_QUAD, KIND_SL, KIND_SU,
                     KIND_UP_BOX, KIND_UP_GEN, layout_of)
from .model import (HARD, DenseDims, DenseQcqp, Dynamics, OcpDims, OcpQcqp,
                    OcpStage, QuadConstraint, StageCost, StageIneq,
                    StageQuad, StageSlack)


# -- quadratic constraint kernel -------------------------------------------------

def condense_quadratic_constraint(huu, hux, hxx, gu, gx, ub,
                                  iu_cols, Gamma, gamma, cols):
    """Rewrite 1/2 [u;x]' H [u;x] + g'[u;x] <= ub under u = E z,
    x = Gamma z + gamma. Returns (hess, grad, ub) over z.

    Flop accounting covers the state-map products. Zero and diagonal
    state Hessians are detected, and columns where the state map is
    identically zero (controls later than the stage) are skipped, so
    the count grows with the stage index rather than the horizon.
    """
    nu = len(gu)
    nx = len(gx)
    hess = np.zeros((cols, cols))
    grad = np.zeros(cols)
    new_ub = float(ub)
    count = 0

    if nu:
        hess[np.ix_(iu_cols, iu_cols)] += huu
        grad[iu_cols] += gu

    hxx_kind = "zero"
    if nx and np.any(hxx):
        offdiag = hxx - np.diag(np.diag(hxx))
        hxx_kind = "diag" if not np.any(offdiag) else "dense"

    if nx:
        nzc = np.flatnonzero(np.any(Gamma != 0.0, axis=0))
        ce = len(nzc)
        G = Gamma[:, nzc]
        if np.any(hux):
            cross = hux @ G
            hess[np.ix_(iu_cols, nzc)] += cross
            hess[np.ix_(nzc, iu_cols)] += cross.T
            grad[iu_cols] += hux @ gamma
            count += flops.gemm_cost(nu, nx, ce) + 2 * nu * nx
        if hxx_kind != "zero":
            if hxx_kind == "diag":
                t1 = np.diag(hxx)[:, None] * G
                hg = np.diag(hxx) * gamma
                count += ce * nx + nx
            else:
                t1 = hxx @ G
                hg = hxx @ gamma
                count += 2 * ce * nx * nx + 2 * nx * nx
            hess[np.ix_(nzc, nzc)] += G.T @ t1
            count += ce * ce * nx
            grad[nzc] += G.T @ (gx + hg)
            new_ub -= 0.5 * float(gamma @ hg)
            count += 2 * ce * nx + 2 * nx
        else:
            grad[nzc] += G.T @ gx
            count += 2 * ce * nx
        new_ub -= float(gx @ gamma)
        count += 2 * nx

    flops.record("condense_qc", count)
    return 0.5 * (hess + hess.T), grad, new_ub


def estimate_condensing_flops(n: int, nx: int, nu: int,
                              x0_is_variable: bool) -> int:
    """Closed-form cost of condensing one state quadratic at stage n:
    the Q Gamma product plus the symmetric Gamma' (Q Gamma), where the
    state map at stage n spans the first n controls (plus x0 if it is
    still a variable)."""
    cols = n * nu + (nx if x0_is_variable else 0)
    return 2 * cols * nx * nx + cols * cols * nx


# -- stage-0 state elimination ---------------------------------------------------

@dataclass
class X0Map:
    xhat: np.ndarray
    problem: OcpQcqp          # original
    reduced: OcpQcqp
    perm: np.ndarray          # original entry -> reduced entry, -1 if fixed row
    fixed_vars: np.ndarray    # state coordinates that had fixing rows
    fixed_lo: np.ndarray      # original flat positions of the fixing lo rows,
    fixed_up: np.ndarray      # aligned with fixed_vars
    kept_rows0: np.ndarray    # stage-0 row index -> reduced row index or -1


def remove_x0(p: OcpQcqp, x0_hat=None) -> tuple:
    """Substitute the stage-0 state and drop it from the problem.

    The value comes from hard two-sided equality rows marked in
    eq_mark (all coordinates must be pinned), or from x0_hat, in which
    case any marked rows are checked against it and consumed.
    """
    d = p.dims
    nu0, nx0 = d.nu[0], d.nx[0]
    if nx0 == 0:
        raise ValueError("stage 0 has no state variables to eliminate")
    st0 = p.stages[0]
    iq = st0.ineq
    nbu0, nbx0, ng0 = d.nbu[0], d.nbx[0], d.ng[0]

    if x0_hat is not None:
        x0_hat = np.asarray(x0_hat, dtype=float).ravel()
        if x0_hat.size != nx0:
            raise ValueError(f"dimension mismatch: x0_hat has "
                             f"{x0_hat.size} entries, stage 0 has "
                             f"{nx0} states")

    xhat = np.full(nx0, np.nan)
    fixed_ix = []
    seen = set()
    for ix in range(nbx0):
        row = nbu0 + ix
        if not iq.eq_mark[row]:
            continue
        var = iq.idxbx[ix]
        lo, up = iq.lb[row], iq.ub[row]
        if not (np.isfinite(lo) and lo == up and iq.mask_lo[row]
                and iq.mask_up[row] and iq.soft_map[row] == HARD):
            raise ValueError(f"stage 0 row {row} is marked as a fixing row "
                             f"but is not a hard two-sided equality")
        if var in seen:
            raise ValueError("duplicate fixing rows at stage 0")
        if x0_hat is not None and lo != x0_hat[var]:
            raise ValueError(f"stage 0 fixing row {row} pins state {var} "
                             f"to {lo!r}, disagreeing with x0_hat")
        seen.add(var)
        xhat[var] = lo
        fixed_ix.append(ix)
    if x0_hat is not None:
        xhat = x0_hat.copy()
    elif np.any(np.isnan(xhat)):
        missing = int(np.argmax(np.isnan(xhat)))
        raise ValueError(f"state coordinate {missing} has no fixing row "
                         f"at stage 0")
    leftover = [ix for ix in range(nbx0) if ix not in fixed_ix]
    if leftover:
        raise ValueError("stage 0 has state box rows besides the fixing "
                         "rows; cannot eliminate the state")

    c0 = st0.cost
    new_cost = StageCost(
        R=c0.R.copy(), S=np.zeros((nu0, 0)), Q=np.zeros((0, 0)),
        r=c0.r + c0.S @ xhat, q=np.zeros(0))
    extra_offset = 0.5 * float(xhat @ (c0.Q @ xhat)) + float(c0.q @ xhat)

    keep_rows = list(range(nbu0)) + [nbu0 + nbx0 + i for i in range(ng0)]
    kept_rows0 = np.full(nbu0 + nbx0 + ng0, -1, dtype=np.intp)
    for new_i, old_i in enumerate(keep_rows):
        kept_rows0[old_i] = new_i
    shift = iq.C @ xhat if ng0 else np.zeros(0)
    new_lb = np.concatenate([iq.lb[:nbu0], iq.lb[nbu0 + nbx0:] - shift])
    new_ub = np.concatenate([iq.ub[:nbu0], iq.ub[nbu0 + nbx0:] - shift])
    sel = np.asarray(keep_rows + [nbu0 + nbx0 + ng0 + k
                                  for k in range(d.nq[0])], dtype=np.intp)
    new_ineq = StageIneq(
        idxbu=iq.idxbu.copy(), idxbx=np.zeros(0, dtype=np.intp),
        D=iq.D.copy(), C=np.zeros((ng0, 0)),
        lb=new_lb, ub=new_ub,
        soft_map=iq.soft_map[sel].copy(),
        mask_lo=iq.mask_lo[sel].copy(), mask_up=iq.mask_up[sel].copy(),
        eq_mark=np.concatenate([iq.eq_mark[:nbu0],
                                iq.eq_mark[nbu0 + nbx0:]]).copy())

    new_quads = []
    for qc in st0.quads:
        huu, hux = qc.R, qc.S
        hxx, gu, gx = qc.Q, qc.r, qc.q
        new_quads.append(StageQuad(
            R=huu + 0.0, S=np.zeros((nu0, 0)), Q=np.zeros((0, 0)),
            r=gu + hux @ xhat, q=np.zeros(0),
            ub=qc.ub - 0.5 * float(xhat @ (hxx @ xhat)) - float(gx @ xhat)))

    dyn0 = p.dyn[0]
    new_dyn = [Dynamics(A=np.zeros((d.nx[1], 0)), B=dyn0.B.copy(),
                        b=dyn0.b + dyn0.A @ xhat)]
    new_dyn += [Dynamics(A=dd.A.copy(), B=dd.B.copy(), b=dd.b.copy())
                for dd in p.dyn[1:]]

    nd = d.copy()
    nd.nx = nd.nx.copy(); nd.nx[0] = 0
    nd.nbx = nd.nbx.copy(); nd.nbx[0] = 0
    stages = [OcpStage(cost=new_cost, ineq=new_ineq, quads=new_quads,
                       slack=st0.slack)]
    stages += p.stages[1:]
    reduced = OcpQcqp(dims=nd, dyn=new_dyn, stages=stages,
                      x0=None, obj_offset=p.obj_offset + extra_offset)
    reduced.freeze()

    lay_o = layout_of(p)
    lay_r = layout_of(reduced)
    fixed_rows = {nbu0 + ix for ix in fixed_ix}

    def translate(bi, kind, ref):
        if bi > 0:
            return (bi, kind, ref)
        if kind in (KIND_LO_BOX, KIND_UP_BOX):
            if ref in fixed_rows:
                return None
            return (0, kind, int(kept_rows0[ref]))
        if kind in (KIND_LO_GEN, KIND_UP_GEN, KIND_QUAD, KIND_SL, KIND_SU):
            return (0, kind, ref)
        return (bi, kind, ref)

    perm = _entry_perm(lay_o, lay_r, translate)

    fixed_vars = np.asarray(sorted(iq.idxbx[ix] for ix in fixed_ix),
                            dtype=np.intp)
    pos_of = {iq.idxbx[ix]: nbu0 + ix for ix in fixed_ix}
    by_var_lo = np.asarray([lay_o.flat_position(0, KIND_LO_BOX, pos_of[v])
                            for v in fixed_vars], dtype=np.intp)
    by_var_up = np.asarray([lay_o.flat_position(0, KIND_UP_BOX, pos_of[v])
                            for v in fixed_vars], dtype=np.intp)

    return reduced, X0Map(xhat=xhat, problem=p, reduced=reduced, perm=perm,
                          fixed_vars=fixed_vars,
                          fixed_lo=by_var_lo, fixed_up=by_var_up,
                          kept_rows0=kept_rows0)


def expand_x0(m: X0Map, it: IpmIterate) -> IpmIterate:
    """Lift a reduced-problem iterate back to the original problem."""
    p, red = m.problem, m.reduced
    lay_o = layout_of(p)
    lay_r = layout_of(red)
    d = p.dims
    nu0, nx0 = d.nu[0], d.nx[0]

    y = np.zeros(lay_o.ny)
    # stage 0: insert xhat between u0 and the slacks
    w_r = lay_r.w_of(it.y, 0)
    z_r = lay_r.z_of(it.y, 0)
    o = lay_o.y_off[0]
    y[o:o + nu0] = w_r[:nu0]
    y[o + nu0:o + nu0 + nx0] = m.xhat
    y[o + nu0 + nx0:o + nu0 + nx0 + 2 * d.ns[0]] = z_r
    for n in range(1, d.N + 1):
        o = lay_o.y_off[n]
        blk = lay_o.blocks[n]
        orun = lay_r.y_off[n]
        y[o:o + blk.nw + blk.nz] = it.y[orun:orun + blk.nw + blk.nz]

    lam = np.zeros(lay_o.ni)
    t = np.zeros(lay_o.ni)
    keep = m.perm >= 0
    lam[keep] = it.lam[m.perm[keep]]
    t[keep] = it.t[m.perm[keep]]

    out = IpmIterate(y=y, pi=it.pi.copy(), lam=lam, t=t)
    # fixing-row multipliers from stage-0 state stationarity
    if m.fixed_vars.size:
        res = compute_residuals(p, out)
        o = lay_o.y_off[0]
        c = res.r_g[o + nu0:o + nu0 + nx0][m.fixed_vars]
        out.lam[m.fixed_lo] = np.maximum(c, 0.0)
        out.lam[m.fixed_up] = np.maximum(-c, 0.0)
    return out


# -- shared helpers --------------------------------------------------------------

def _entry_perm(lay_o, lay_c, translate: Callable) -> np.ndarray:
    perm = np.full(lay_o.ni, -1, dtype=np.intp)
    for bi, blk in enumerate(lay_o.blocks):
        for pos in range(blk.m):
            out = translate(bi, int(blk.kind[pos]), int(blk.ref[pos]))
            if out is None:
                continue
            bj, k2, r2 = out
            perm[lay_o.ineq_off[bi] + pos] = lay_c.flat_position(bj, k2, r2)
    return perm


def _pi_from_stationarity(p: OcpQcqp, it: IpmIterate) -> np.ndarray:
    """Rebuild dynamics multipliers so every state stationarity row
    (stage 1 onward) is exactly zero."""
    lay = layout_of(p)
    d = p.dims
    zero_pi = IpmIterate(y=it.y, pi=np.zeros(lay.ne), lam=it.lam, t=it.t)
    res = compute_residuals(p, zero_pi)
    pi = np.zeros(lay.ne)
    nxt = None  # pi_n of the stage above
    for n in range(d.N, 0, -1):
        o = lay.y_off[n]
        cn = res.r_g[o + d.nu[n]:o + d.nu[n] + d.nx[n]].copy()
        if n < d.N:
            cn += p.dyn[n].A.T @ nxt
        # r_g(x_n) = c_n + A' pi_n - pi_{n-1} = 0
        nxt = cn
        lay.eq_of(pi, n - 1, d.nx[n])[:] = cn
    return pi


def _stage_w_maps(p: OcpQcqp, iu_cols, Gam, gam, cols, n):
    """Affine map of stage n's (u, x) onto the condensed variables:
    w_n = M z + m."""
    d = p.dims
    nu, nx = d.nu[n], d.nx[n]
    M = np.zeros((nu + nx, cols))
    for i, cidx in enumerate(iu_cols[n]):
        M[i, cidx] = 1.0
    M[nu:] = Gam[n]
    mvec = np.concatenate([np.zeros(nu), gam[n]])
    return M, mvec


# -- full condensing -------------------------------------------------------------

@dataclass
class FullMap:
    problem: OcpQcqp
    dense: DenseQcqp
    cols: int
    x0_variable: bool
    iu_cols: list            # per stage, z columns of u_n
    Gam: list                # per stage, x_n = Gam z + gam
    gam: list
    ns_off: np.ndarray       # slack offsets per stage
    perm: np.ndarray         # original entry -> dense entry


def full_condense(p: OcpQcqp) -> tuple:
    d = p.dims
    N = d.N
    x0_variable = d.nx[0] > 0
    nx0v = d.nx[0] if x0_variable else 0
    off_u = np.zeros(N + 2, dtype=int)
    for n in range(N + 1):
        off_u[n + 1] = off_u[n] + d.nu[n]
    cols = nx0v + off_u[N + 1]
    iu_cols = [np.arange(nx0v + off_u[n], nx0v + off_u[n] + d.nu[n])
               for n in range(N + 1)]

    Gam = [np.zeros((d.nx[0], cols))]
    if x0_variable:
        Gam[0][:, :nx0v] = np.eye(nx0v)
    gam = [np.zeros(d.nx[0])]
    for n in range(N):
        dyn = p.dyn[n]
        E = np.zeros((d.nu[n], cols))
        for i, cidx in enumerate(iu_cols[n]):
            E[i, cidx] = 1.0
        Gam.append(dyn.A @ Gam[n] + dyn.B @ E)
        gam.append(dyn.A @ gam[n] + dyn.b)

    hess = np.zeros((cols, cols))
    grad = np.zeros(cols)
    offset = p.obj_offset
    for n in range(N + 1):
        c = p.stages[n].cost
        H0 = np.block([[c.R, c.S], [c.S.T, c.Q]])
        g0 = np.concatenate([c.r, c.q])
        M, mvec = _stage_w_maps(p, iu_cols, Gam, gam, cols, n)
        hess += M.T @ H0 @ M
        grad += M.T @ (H0 @ mvec + g0)
        offset += 0.5 * float(mvec @ (H0 @ mvec)) + float(g0 @ mvec)
    hess = 0.5 * (hess + hess.T)

    box_idx, box_lb, box_ub = [], [], []
    box_soft, box_mlo, box_mup, box_eq = [], [], [], []
    gen_rows, gen_lb, gen_ub = [], [], []
    gen_soft, gen_mlo, gen_mup, gen_eq = [], [], [], []
    quads, quad_soft, quad_mup = [], [], []
    ns_off = np.zeros(N + 2, dtype=int)
    ubox_map, xbox_map, gen_map, quad_map = [], [], [], []

    for n in range(N + 1):
        iq = p.stages[n].ineq
        nbu, nbx, ng = d.nbu[n], d.nbx[n], d.ng[n]
        so = ns_off[n]
        umap = np.zeros(nbu, dtype=np.intp)
        for i in range(nbu):
            umap[i] = len(box_idx)
            box_idx.append(iu_cols[n][iq.idxbu[i]])
            box_lb.append(iq.lb[i]); box_ub.append(iq.ub[i])
            box_soft.append(iq.soft_map[i] + so if iq.soft_map[i] != HARD
                            else HARD)
            box_mlo.append(iq.mask_lo[i]); box_mup.append(iq.mask_up[i])
            box_eq.append(iq.eq_mark[i])
        xmap = np.zeros(nbx, dtype=np.intp)
        for i in range(nbx):
            row = nbu + i
            var = iq.idxbx[i]
            if n == 0 and x0_variable:
                xmap[i] = len(box_idx)
                box_idx.append(var)
                box_lb.append(iq.lb[row]); box_ub.append(iq.ub[row])
                box_soft.append(iq.soft_map[row] + so
                                if iq.soft_map[row] != HARD else HARD)
                box_mlo.append(iq.mask_lo[row]); box_mup.append(iq.mask_up[row])
                box_eq.append(iq.eq_mark[row])
            else:
                xmap[i] = len(gen_rows)
                gen_rows.append(Gam[n][var].copy())
                gen_lb.append(iq.lb[row] - gam[n][var])
                gen_ub.append(iq.ub[row] - gam[n][var])
                gen_soft.append(iq.soft_map[row] + so
                                if iq.soft_map[row] != HARD else HARD)
                gen_mlo.append(iq.mask_lo[row]); gen_mup.append(iq.mask_up[row])
                gen_eq.append(iq.eq_mark[row])
        gmap = np.zeros(ng, dtype=np.intp)
        for i in range(ng):
            row = nbu + nbx + i
            rowvec = np.zeros(cols)
            rowvec[iu_cols[n]] = iq.D[i]
            rowvec += iq.C[i] @ Gam[n]
            shift = float(iq.C[i] @ gam[n])
            gmap[i] = len(gen_rows)
            gen_rows.append(rowvec)
            gen_lb.append(iq.lb[row] - shift)
            gen_ub.append(iq.ub[row] - shift)
            gen_soft.append(iq.soft_map[row] + so
                            if iq.soft_map[row] != HARD else HARD)
            gen_mlo.append(iq.mask_lo[row]); gen_mup.append(iq.mask_up[row])
            gen_eq.append(iq.eq_mark[row])
        qmap = np.zeros(d.nq[n], dtype=np.intp)
        for k, qc in enumerate(p.stages[n].quads):
            row = nbu + nbx + ng + k
            qh, qg, qub = condense_quadratic_constraint(
                qc.R, qc.S, qc.Q, qc.r, qc.q, qc.ub,
                iu_cols[n], Gam[n], gam[n], cols)
            qmap[k] = len(quads)
            quads.append(QuadConstraint(hess=qh, grad=qg, ub=qub))
            quad_soft.append(iq.soft_map[row] + so
                             if iq.soft_map[row] != HARD else HARD)
            quad_mup.append(iq.mask_up[row])
        ubox_map.append(umap); xbox_map.append(xmap)
        gen_map.append(gmap); quad_map.append(qmap)
        ns_off[n + 1] = so + d.ns[n]

    nb, ng_c, nq_c = len(box_idx), len(gen_rows), len(quads)
    ns_c = int(ns_off[N + 1])
    sk = [p.stages[n].slack for n in range(N + 1)]
    dense = DenseQcqp(
        dims=DenseDims(nv=cols, ne=0, nb=nb, ng=ng_c, nq=nq_c, ns=ns_c),
        hess=hess, grad=grad,
        eq_mat=np.zeros((0, cols)), eq_rhs=np.zeros(0),
        box_idx=np.asarray(box_idx, dtype=np.intp),
        gen_mat=(np.vstack(gen_rows) if ng_c else np.zeros((0, cols))),
        lb=np.asarray(box_lb + gen_lb, dtype=float),
        ub=np.asarray(box_ub + gen_ub, dtype=float),
        quads=quads,
        Zl=np.concatenate([s.Zl for s in sk]) if ns_c else np.zeros(0),
        Zu=np.concatenate([s.Zu for s in sk]) if ns_c else np.zeros(0),
        zl=np.concatenate([s.zl for s in sk]) if ns_c else np.zeros(0),
        zu=np.concatenate([s.zu for s in sk]) if ns_c else np.zeros(0),
        sl_min=np.concatenate([s.sl_min for s in sk]) if ns_c else np.zeros(0),
        su_min=np.concatenate([s.su_min for s in sk]) if ns_c else np.zeros(0),
        soft_map=np.asarray(box_soft + gen_soft + quad_soft, dtype=np.intp),
        mask_lo=np.asarray(box_mlo + gen_mlo + [False] * nq_c, dtype=bool),
        mask_up=np.asarray(box_mup + gen_mup + quad_mup, dtype=bool),
        eq_mark=np.asarray(box_eq + gen_eq, dtype=bool),
        obj_offset=offset)
    dense.freeze()

    lay_o = layout_of(p)
    lay_c = layout_of(dense)

    def translate(bi, kind, ref):
        nbu = d.nbu[bi]
        if kind in (KIND_LO_BOX, KIND_UP_BOX):
            if ref < nbu:
                return (0, kind, int(ubox_map[bi][ref]))
            ix = ref - nbu
            if bi == 0 and x0_variable:
                return (0, kind, int(xbox_map[bi][ix]))
            gk = KIND_LO_GEN if kind == KIND_LO_BOX else KIND_UP_GEN
            return (0, gk, int(xbox_map[bi][ix]))
        if kind in (KIND_LO_GEN, KIND_UP_GEN):
            return (0, kind, int(gen_map[bi][ref]))
        if kind == KIND_QUAD:
            return (0, kind, int(quad_map[bi][ref]))
        # slack bound entries
        return (0, kind, int(ns_off[bi] + ref))

    perm = _entry_perm(lay_o, lay_c, translate)
    if np.any(perm < 0) or lay_c.ni != lay_o.ni:
        raise AssertionError("condensed entry enumeration is not a "
                             "bijection of the original")

    return dense, FullMap(problem=p, dense=dense, cols=cols,
                          x0_variable=x0_variable, iu_cols=iu_cols,
                          Gam=Gam, gam=gam, ns_off=ns_off, perm=perm)


def expand_full(m: FullMap, it: IpmIterate) -> IpmIterate:
    p = m.problem
    d = p.dims
    lay_o = layout_of(p)
    z = it.y[:m.cols]

    y = np.zeros(lay_o.ny)
    ns_c = m.dense.ns
    sl_c = it.y[m.cols:m.cols + ns_c]
    su_c = it.y[m.cols + ns_c:m.cols + 2 * ns_c]
    x = m.Gam[0] @ z + m.gam[0]
    for n in range(d.N + 1):
        u = z[m.iu_cols[n]]
        o = lay_o.y_off[n]
        nu, nx, ns = d.nu[n], d.nx[n], d.ns[n]
        y[o:o + nu] = u
        y[o + nu:o + nu + nx] = x
        so = m.ns_off[n]
        y[o + nu + nx:o + nu + nx + ns] = sl_c[so:so + ns]
        y[o + nu + nx + ns:o + nu + nx + 2 * ns] = su_c[so:so + ns]
        if n < d.N:
            dyn = p.dyn[n]
            x = dyn.A @ x + dyn.B @ u + dyn.b

    lam = it.lam[m.perm]
    t = it.t[m.perm]
    out = IpmIterate(y=y, pi=np.zeros(lay_o.ne), lam=lam, t=t)
    out.pi = _pi_from_stationarity(p, out)
    return out


# -- partial condensing ----------------------------------------------------------

@dataclass
class PartialMap:
    problem: OcpQcqp
    condensed: OcpQcqp
    bounds: np.ndarray       # block boundaries, bounds[j]..bounds[j+1]-1
    iu_loc: list             # per original stage, local columns of u_n
    Gu: list                 # per original stage, x_n over (u block, x block)
    Gx: list
    gam: list
    ns_loc: list             # per original stage, slack offset inside block
    blk_of: np.ndarray       # original stage -> condensed stage
    perm: np.ndarray


def partial_condense(p: OcpQcqp, n_blocks: int) -> tuple:
    d = p.dims
    N = d.N
    if not 1 <= n_blocks <= N:
        raise ValueError(f"block count must be in [1, {N}], got {n_blocks}")
    base, rem = divmod(N, n_blocks)
    sizes = [base + 1 if j < rem else base for j in range(n_blocks)]
    bounds = np.zeros(n_blocks + 1, dtype=int)
    for j, s in enumerate(sizes):
        bounds[j + 1] = bounds[j] + s

    blk_of = np.zeros(N + 1, dtype=np.intp)
    for j in range(n_blocks):
        blk_of[bounds[j]:bounds[j + 1]] = j
    blk_of[N] = n_blocks

    # local maps within each block: x_n = Gu[n] ubar + Gx[n] xbar + gam[n]
    iu_loc = [None] * (N + 1)
    Gu = [None] * (N + 1)
    Gx = [None] * (N + 1)
    gam = [None] * (N + 1)
    nu_blk = [0] * (n_blocks + 1)
    new_dyn = []
    for j in range(n_blocks):
        m0, m1 = bounds[j], bounds[j + 1]
        nuj = int(sum(d.nu[n] for n in range(m0, m1)))
        nu_blk[j] = nuj
        nxb = d.nx[m0]
        off = 0
        gu_cur = np.zeros((nxb, nuj))
        gx_cur = np.eye(nxb)
        ga_cur = np.zeros(nxb)
        for n in range(m0, m1):
            iu_loc[n] = np.arange(off, off + d.nu[n])
            Gu[n], Gx[n], gam[n] = gu_cur, gx_cur, ga_cur
            dyn = p.dyn[n]
            E = np.zeros((d.nu[n], nuj))
            E[:, off:off + d.nu[n]] = np.eye(d.nu[n])
            gu_cur = dyn.A @ gu_cur + dyn.B @ E
            gx_cur = dyn.A @ gx_cur
            ga_cur = dyn.A @ ga_cur + dyn.b
            off += d.nu[n]
        # composed one-step dynamics of the whole block
        new_dyn.append(Dynamics(A=gx_cur, B=gu_cur, b=ga_cur))
    nu_blk[n_blocks] = d.nu[N]
    iu_loc[N] = np.arange(d.nu[N])
    Gu[N] = np.zeros((d.nx[N], d.nu[N]))
    Gx[N] = np.eye(d.nx[N])
    gam[N] = np.zeros(d.nx[N])

    ns_loc = [0] * (N + 1)
    stages_c = []
    maps_box_u, maps_box_x, maps_gen, maps_quad = {}, {}, {}, {}
    nx_c = [int(d.nx[bounds[j]]) for j in range(n_blocks)] + [int(d.nx[N])]
    nu_c, nbu_c, nbx_c, ng_c, nq_c, ns_c = [], [], [], [], [], []
    total_offset = 0.0

    for j in range(n_blocks + 1):
        block = ([N] if j == n_blocks
                 else list(range(bounds[j], bounds[j + 1])))
        nuj = nu_blk[j]
        nxj = nx_c[j]
        colsj = nuj + nxj

        R = np.zeros((nuj, nuj)); S = np.zeros((nuj, nxj))
        Q = np.zeros((nxj, nxj))
        rvec = np.zeros(nuj); qvec = np.zeros(nxj)
        offset_add = 0.0
        idxbu, idxbx = [], []
        lbs_box_u, ubs_box_u = [], []
        rows_gen, lbs_gen, ubs_gen = [], [], []
        meta_box_u, meta_box_x, meta_gen, meta_quad = [], [], [], []
        lbs_box_x, ubs_box_x = [], []
        quads_c = []
        so = 0
        for n in block:
            ns_loc[n] = so
            nu, nx = d.nu[n], d.nx[n]
            iq = p.stages[n].ineq
            cst = p.stages[n].cost
            Mu = np.zeros((nu, colsj))
            Mu[:, iu_loc[n]] = np.eye(nu)
            Mx = np.zeros((nx, colsj))
            Mx[:, :nuj] = Gu[n]
            Mx[:, nuj:] = Gx[n]
            M = np.vstack([Mu, Mx])
            mvec = np.concatenate([np.zeros(nu), gam[n]])
            H0 = np.block([[cst.R, cst.S], [cst.S.T, cst.Q]])
            g0 = np.concatenate([cst.r, cst.q])
            Hc = M.T @ H0 @ M
            gc = M.T @ (H0 @ mvec + g0)
            R += Hc[:nuj, :nuj]; S += Hc[:nuj, nuj:]; Q += Hc[nuj:, nuj:]
            rvec += gc[:nuj]; qvec += gc[nuj:]
            offset_add += 0.5 * float(mvec @ (H0 @ mvec)) + float(g0 @ mvec)

            nbu, nbx, ng = d.nbu[n], d.nbx[n], d.ng[n]
            for i in range(nbu):
                maps_box_u[(n, i)] = (j, len(idxbu))
                idxbu.append(iu_loc[n][iq.idxbu[i]])
                lbs_box_u.append(iq.lb[i]); ubs_box_u.append(iq.ub[i])
                meta_box_u.append((iq.soft_map[i], iq.mask_lo[i],
                                   iq.mask_up[i], iq.eq_mark[i], so))
            first = (n == block[0])
            for i in range(nbx):
                row = nbu + i
                var = iq.idxbx[i]
                if first:
                    maps_box_x[(n, i)] = (j, "box", len(idxbx))
                    idxbx.append(var)
                    lbs_box_x.append(iq.lb[row]); ubs_box_x.append(iq.ub[row])
                    meta_box_x.append((iq.soft_map[row], iq.mask_lo[row],
                                       iq.mask_up[row], iq.eq_mark[row], so))
                else:
                    maps_box_x[(n, i)] = (j, "gen", len(rows_gen))
                    rows_gen.append(np.concatenate([Gu[n][var], Gx[n][var]]))
                    lbs_gen.append(iq.lb[row] - gam[n][var])
                    ubs_gen.append(iq.ub[row] - gam[n][var])
                    meta_gen.append((iq.soft_map[row], iq.mask_lo[row],
                                     iq.mask_up[row], iq.eq_mark[row], so))
            for i in range(ng):
                row = nbu + nbx + i
                rowvec = np.zeros(colsj)
                rowvec[iu_loc[n]] = iq.D[i]
                rowvec[:nuj] += iq.C[i] @ Gu[n]
                rowvec[nuj:] += iq.C[i] @ Gx[n]
                shift = float(iq.C[i] @ gam[n])
                maps_gen[(n, i)] = (j, len(rows_gen))
                rows_gen.append(rowvec)
                lbs_gen.append(iq.lb[row] - shift)
                ubs_gen.append(iq.ub[row] - shift)
                meta_gen.append((iq.soft_map[row], iq.mask_lo[row],
                                 iq.mask_up[row], iq.eq_mark[row], so))
            for k, qc in enumerate(p.stages[n].quads):
                row = nbu + nbx + ng + k
                GamFull = np.hstack([Gu[n], Gx[n]])
                qh, qg, qub = condense_quadratic_constraint(
                    qc.R, qc.S, qc.Q, qc.r, qc.q, qc.ub,
                    iu_loc[n], GamFull, gam[n], colsj)
                maps_quad[(n, k)] = (j, len(quads_c))
                quads_c.append(StageQuad(
                    R=qh[:nuj, :nuj], S=qh[:nuj, nuj:], Q=qh[nuj:, nuj:],
                    r=qg[:nuj], q=qg[nuj:], ub=qub))
                meta_quad.append((iq.soft_map[row], iq.mask_up[row], so))
            so += d.ns[n]

        nbu_j = len(idxbu); nbx_j = len(idxbx); ng_j = len(rows_gen)
        soft, mlo, mup, eqm = [], [], [], []
        for sm, lo_m, up_m, eq_m, s_off in meta_box_u + meta_box_x + meta_gen:
            soft.append(sm + s_off if sm != HARD else HARD)
            mlo.append(lo_m); mup.append(up_m); eqm.append(eq_m)
        qsoft, qmup = [], []
        for sm, up_m, s_off in meta_quad:
            qsoft.append(sm + s_off if sm != HARD else HARD)
            qmup.append(up_m)

        sk = [p.stages[n].slack for n in block]
        stage_c = OcpStage(
            cost=StageCost(R=0.5 * (R + R.T), S=S, Q=0.5 * (Q + Q.T),
                           r=rvec, q=qvec),
            ineq=StageIneq(
                idxbu=np.asarray(idxbu, dtype=np.intp),
                idxbx=np.asarray(idxbx, dtype=np.intp),
                D=(np.vstack(rows_gen)[:, :nuj] if ng_j
                   else np.zeros((0, nuj))),
                C=(np.vstack(rows_gen)[:, nuj:] if ng_j
                   else np.zeros((0, nxj))),
                lb=np.asarray(lbs_box_u + lbs_box_x + lbs_gen, dtype=float),
                ub=np.asarray(ubs_box_u + ubs_box_x + ubs_gen, dtype=float),
                soft_map=np.asarray(soft + qsoft, dtype=np.intp),
                mask_lo=np.asarray(mlo + [False] * len(qsoft), dtype=bool),
                mask_up=np.asarray(mup + qmup, dtype=bool),
                eq_mark=np.asarray(eqm, dtype=bool)),
            quads=quads_c,
            slack=StageSlack(
                Zl=np.concatenate([s.Zl for s in sk]),
                Zu=np.concatenate([s.Zu for s in sk]),
                zl=np.concatenate([s.zl for s in sk]),
                zu=np.concatenate([s.zu for s in sk]),
                sl_min=np.concatenate([s.sl_min for s in sk]),
                su_min=np.concatenate([s.su_min for s in sk])))
        stages_c.append(stage_c)
        nu_c.append(nuj); nbu_c.append(nbu_j); nbx_c.append(nbx_j)
        ng_c.append(ng_j); nq_c.append(len(quads_c))
        ns_c.append(int(sum(d.ns[n] for n in block)))
        total_offset += offset_add

    dims_c = OcpDims(N=n_blocks,
                     nx=np.asarray(nx_c), nu=np.asarray(nu_c),
                     nbu=np.asarray(nbu_c), nbx=np.asarray(nbx_c),
                     ng=np.asarray(ng_c), nq=np.asarray(nq_c),
                     ns=np.asarray(ns_c))
    cond = OcpQcqp(dims=dims_c, dyn=new_dyn, stages=stages_c,
                   x0=p.x0, obj_offset=p.obj_offset + total_offset)
    cond.freeze()

    lay_o = layout_of(p)
    lay_c = layout_of(cond)

    def translate(bi, kind, ref):
        nbu = d.nbu[bi]
        if kind in (KIND_LO_BOX, KIND_UP_BOX):
            if ref < nbu:
                j, r2 = maps_box_u[(bi, ref)]
                return (j, kind, int(r2))
            ix = ref - nbu
            j, where, r2 = maps_box_x[(bi, ix)]
            if where == "box":
                return (j, kind, int(dims_c.nbu[j] + r2))
            gk = KIND_LO_GEN if kind == KIND_LO_BOX else KIND_UP_GEN
            return (j, gk, int(r2))
        if kind in (KIND_LO_GEN, KIND_UP_GEN):
            j, r2 = maps_gen[(bi, ref)]
            return (j, kind, int(r2))
        if kind == KIND_QUAD:
            j, r2 = maps_quad[(bi, ref)]
            return (j, kind, int(r2))
        return (int(blk_of[bi]), kind, int(ns_loc[bi] + ref))

    perm = _entry_perm(lay_o, lay_c, translate)
    if np.any(perm < 0) or lay_c.ni != lay_o.ni:
        raise AssertionError("condensed entry enumeration is not a "
                             "bijection of the original")

    return cond, PartialMap(problem=p, condensed=cond, bounds=bounds,
                            iu_loc=iu_loc, Gu=Gu, Gx=Gx, gam=gam,
                            ns_loc=ns_loc, blk_of=blk_of, perm=perm)


def expand_partial(m: PartialMap, it: IpmIterate) -> IpmIterate:
    p = m.problem
    d = p.dims
    lay_o = layout_of(p)
    lay_c = layout_of(m.condensed)
    dc = m.condensed.dims

    y = np.zeros(lay_o.ny)
    for n in range(d.N + 1):
        j = int(m.blk_of[n])
        wj = lay_c.w_of(it.y, j)
        zj = lay_c.z_of(it.y, j)
        ubar = wj[:dc.nu[j]]
        xbar = wj[dc.nu[j]:]
        u = ubar[m.iu_loc[n]]
        x = m.Gu[n] @ ubar + m.Gx[n] @ xbar + m.gam[n]
        o = lay_o.y_off[n]
        nu, nx, ns = d.nu[n], d.nx[n], d.ns[n]
        y[o:o + nu] = u
        y[o + nu:o + nu + nx] = x
        so = m.ns_loc[n]
        y[o + nu + nx:o + nu + nx + ns] = zj[so:so + ns]
        y[o + nu + nx + ns:o + nu + nx + 2 * ns] = \
            zj[dc.ns[j] + so:dc.ns[j] + so + ns]

    lam = it.lam[m.perm]
    t = it.t[m.perm]
    out = IpmIterate(y=y, pi=np.zeros(lay_o.ne), lam=lam, t=t)
    out.pi = _pi_from_stationarity(p, out)
    return out


# -- dense lift (no state elimination) -------------------------------------------

@dataclass
class LiftMap:
    problem: OcpQcqp
    dense: DenseQcqp
    w_off: np.ndarray        # offset of (u_n, x_n) inside v
    ns_off: np.ndarray


def ocp_to_dense(p: OcpQcqp) -> tuple:
    """Flatten the stage structure into one dense problem with the
    dynamics as plain equality rows. Mostly useful for cross-checking
    the structured backend against the dense one."""
    d = p.dims
    N = d.N
    w_off = np.zeros(N + 2, dtype=int)
    for n in range(N + 1):
        w_off[n + 1] = w_off[n] + d.nu[n] + d.nx[n]
    nv = int(w_off[N + 1])
    ne = int(sum(d.nx[n + 1] for n in range(N)))

    hess = np.zeros((nv, nv))
    grad = np.zeros(nv)
    A = np.zeros((ne, nv))
    rhs = np.zeros(ne)
    eo = 0
    for n in range(N + 1):
        c = p.stages[n].cost
        o = w_off[n]
        nu, nx = d.nu[n], d.nx[n]
        hess[o:o + nu, o:o + nu] = c.R
        hess[o:o + nu, o + nu:o + nu + nx] = c.S
        hess[o + nu:o + nu + nx, o:o + nu] = c.S.T
        hess[o + nu:o + nu + nx, o + nu:o + nu + nx] = c.Q
        grad[o:o + nu] = c.r
        grad[o + nu:o + nu + nx] = c.q
        if n < N:
            dyn = p.dyn[n]
            nxp = d.nx[n + 1]
            A[eo:eo + nxp, o:o + nu] = -dyn.B
            A[eo:eo + nxp, o + nu:o + nu + nx] = -dyn.A
            o1 = w_off[n + 1]
            A[eo:eo + nxp, o1 + d.nu[n + 1]:o1 + d.nu[n + 1] + nxp] = \
                np.eye(nxp)
            rhs[eo:eo + nxp] = dyn.b
            eo += nxp

    box_idx, lb_box, ub_box = [], [], []
    gen_rows, lb_gen, ub_gen = [], [], []
    soft_box, soft_gen, soft_q = [], [], []
    mlo_box, mup_box, mlo_gen, mup_gen, mup_q = [], [], [], [], []
    eq_box, eq_gen = [], []
    quads = []
    ns_off = np.zeros(N + 2, dtype=int)
    for n in range(N + 1):
        iq = p.stages[n].ineq
        o = w_off[n]
        nbu, nbx, ng = d.nbu[n], d.nbx[n], d.ng[n]
        so = ns_off[n]
        for i in range(nbu):
            box_idx.append(o + iq.idxbu[i])
            lb_box.append(iq.lb[i]); ub_box.append(iq.ub[i])
            soft_box.append(iq.soft_map[i] + so if iq.soft_map[i] != HARD
                            else HARD)
            mlo_box.append(iq.mask_lo[i]); mup_box.append(iq.mask_up[i])
            eq_box.append(iq.eq_mark[i])
        for i in range(nbx):
            row = nbu + i
            box_idx.append(o + d.nu[n] + iq.idxbx[i])
            lb_box.append(iq.lb[row]); ub_box.append(iq.ub[row])
            soft_box.append(iq.soft_map[row] + so
                            if iq.soft_map[row] != HARD else HARD)
            mlo_box.append(iq.mask_lo[row]); mup_box.append(iq.mask_up[row])
            eq_box.append(iq.eq_mark[row])
        for i in range(ng):
            row = nbu + nbx + i
            rowvec = np.zeros(nv)
            rowvec[o:o + d.nu[n]] = iq.D[i]
            rowvec[o + d.nu[n]:o + d.nu[n] + d.nx[n]] = iq.C[i]
            gen_rows.append(rowvec)
            lb_gen.append(iq.lb[row]); ub_gen.append(iq.ub[row])
            soft_gen.append(iq.soft_map[row] + so
                            if iq.soft_map[row] != HARD else HARD)
            mlo_gen.append(iq.mask_lo[row]); mup_gen.append(iq.mask_up[row])
            eq_gen.append(iq.eq_mark[row])
        for k, qc in enumerate(p.stages[n].quads):
            row = nbu + nbx + ng + k
            qh = np.zeros((nv, nv))
            qg = np.zeros(nv)
            sl_w = slice(o, o + d.nu[n] + d.nx[n])
            qh[sl_w, sl_w], qg[sl_w], qub = qc.stacked()
            quads.append(QuadConstraint(hess=qh, grad=qg, ub=float(qub)))
            soft_q.append(iq.soft_map[row] + so
                          if iq.soft_map[row] != HARD else HARD)
            mup_q.append(iq.mask_up[row])
        ns_off[n + 1] = so + d.ns[n]

    ns_c = int(ns_off[N + 1])
    sk = [p.stages[n].slack for n in range(N + 1)]
    dense = DenseQcqp(
        dims=DenseDims(nv=nv, ne=ne, nb=len(box_idx), ng=len(gen_rows),
                       nq=len(quads), ns=ns_c),
        hess=hess, grad=grad, eq_mat=A, eq_rhs=rhs,
        box_idx=np.asarray(box_idx, dtype=np.intp),
        gen_mat=(np.vstack(gen_rows) if gen_rows else np.zeros((0, nv))),
        lb=np.asarray(lb_box + lb_gen, dtype=float),
        ub=np.asarray(ub_box + ub_gen, dtype=float),
        quads=quads,
        Zl=np.concatenate([s.Zl for s in sk]) if ns_c else np.zeros(0),
        Zu=np.concatenate([s.Zu for s in sk]) if ns_c else np.zeros(0),
        zl=np.concatenate([s.zl for s in sk]) if ns_c else np.zeros(0),
        zu=np.concatenate([s.zu for s in sk]) if ns_c else np.zeros(0),
        sl_min=np.concatenate([s.sl_min for s in sk]) if ns_c else np.zeros(0),
        su_min=np.concatenate([s.su_min for s in sk]) if ns_c else np.zeros(0),
        soft_map=np.asarray(soft_box + soft_gen + soft_q, dtype=np.intp),
        mask_lo=np.asarray(mlo_box + mlo_gen + [False] * len(quads),
                           dtype=bool),
        mask_up=np.asarray(mup_box + mup_gen + mup_q, dtype=bool),
        eq_mark=np.asarray(eq_box + eq_gen, dtype=bool),
        obj_offset=p.obj_offset)
    dense.freeze()
    return dense, LiftMap(problem=p, dense=dense, w_off=w_off, ns_off=ns_off)


# -- pipeline convenience ---------------------------------------------------------

@dataclass
class Pipeline:
    """A preprocessing chain: solve `problem`, then map the solution
    back through `expand`."""

    name: str
    problem: object
    expand: Callable

    @staticmethod
    def build(p: OcpQcqp, kind: str, block_size: int = 3) -> "Pipeline":
        if kind == "none":
            return Pipeline("baseline", p, lambda it: it)
        red, m0 = remove_x0(p)
        if kind == "x0":
            return Pipeline("x0", red, lambda it: expand_x0(m0, it))
        if kind == "full":
            dense, mf = full_condense(red)
            return Pipeline(
                "full", dense,
                lambda it: expand_x0(m0, expand_full(mf, it)))
        if kind == "partial":
            n_blocks = max(1, math.ceil(red.dims.N / block_size))
            cond, mp = partial_condense(red, n_blocks)
            return Pipeline(
                "partial", cond,
                lambda it: expand_x0(m0, expand_partial(mp, it)))
        raise ValueError(f"unknown pipeline kind {kind!r}")
