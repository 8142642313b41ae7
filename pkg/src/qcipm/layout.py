"""Canonical enumeration of one-sided inequality constraints.

A problem is viewed as a list of blocks: the whole variable vector for the
dense form, one stage for the optimal-control form. Each block owns a local
primal part w (v, or (u_n, x_n)), a local slack vector z = [s^l, s^u], and a
run of entries in the flat multiplier ordering. Entries appear section-major
per block: box-lower, general-lower, box-upper, general-upper, quadratic,
s^l bounds, s^u bounds. Masked or infinite sides are never enumerated.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import DenseQcqp, OcpQcqp, HARD

KIND_LO_BOX = 0
KIND_LO_GEN = 1
KIND_UP_BOX = 2
KIND_UP_GEN = 3
KIND_QUAD = 4
KIND_SL = 5
KIND_SU = 6


@dataclass
class Block:
    """One block's constraint data in normalized h(y) >= 0 form."""

    nw: int
    nsl: int
    hess0: np.ndarray       # (nw, nw) cost Hessian block
    grad0: np.ndarray       # (nw,)
    Zdiag: np.ndarray       # (2*nsl,) slack cost diagonal [Zl, Zu]
    zlin: np.ndarray        # (2*nsl,) linear slack cost [zl, zu]
    m: int                  # enumerated one-sided entries
    kind: np.ndarray        # (m,) entry kind codes
    ref: np.ndarray         # (m,) row / constraint / slack id per kind
    bound: np.ndarray       # (m,) limit constant
    bsign: np.ndarray       # (m,) +1 where the limit enters positively
    zcol: np.ndarray        # (m,) local slack column or -1
    affine_jac: np.ndarray  # (m, nw) constant rows; quad rows stay zero
    s_q: slice              # quadratic section
    qhess: np.ndarray       # (kq, nw, nw)
    qgrad: np.ndarray       # (kq, nw)
    sections: dict          # kind code -> slice

    @property
    def nz(self) -> int:
        return 2 * self.nsl

    # -- geometry -------------------------------------------------------------
    def quad_values(self, w: np.ndarray) -> np.ndarray:
        if self.qhess.shape[0] == 0:
            return np.zeros(0)
        hw = np.einsum("kij,j->ki", self.qhess, w)
        return 0.5 * hw @ w + self.qgrad @ w

    def quad_grad_rows(self, w: np.ndarray) -> np.ndarray:
        """Jacobian rows of the quadratic entries: -(Hq w + gq)."""
        if self.qhess.shape[0] == 0:
            return np.zeros((0, self.nw))
        return -(np.einsum("kij,j->ki", self.qhess, w) + self.qgrad)

    def ineq_values(self, w: np.ndarray, z: np.ndarray) -> np.ndarray:
        """h(y) for every enumerated entry."""
        h = self.bsign * self.bound + self.affine_jac @ w
        if self.zcol.size:
            sel = self.zcol >= 0
            h[sel] += z[self.zcol[sel]]
        if self.s_q.stop > self.s_q.start:
            h[self.s_q] -= self.quad_values(w)
        return h

    def jac_rows(self, w: np.ndarray) -> np.ndarray:
        """Full constraint Jacobian over w at the point w (copy)."""
        cj = self.affine_jac.copy()
        if self.s_q.stop > self.s_q.start:
            cj[self.s_q] = self.quad_grad_rows(w)
        return cj

    def lag_hess(self, lam_quad: np.ndarray) -> np.ndarray:
        """Cost Hessian plus multiplier-weighted quadratic Hessians."""
        out = self.hess0.copy()
        if lam_quad.size:
            out += np.einsum("k,kij->ij", lam_quad, self.qhess)
        return out

    def scatter_slack(self, vals: np.ndarray) -> np.ndarray:
        """Sum entry values into their slack columns (length 2*nsl)."""
        out = np.zeros(self.nz)
        sel = self.zcol >= 0
        if np.any(sel):
            np.add.at(out, self.zcol[sel], vals[sel])
        return out

    def positions(self) -> dict:
        """(kind, ref) -> local entry position."""
        return {(int(k), int(r)): i
                for i, (k, r) in enumerate(zip(self.kind, self.ref))}


def _build_block(nw, nsl, hess0, grad0, box_var, gen, lb, ub,
                 mask_lo, mask_up, soft_map, quads_stacked,
                 Zl, Zu, zl, zu, sl_min, su_min) -> Block:
    nb = len(box_var)
    ng = gen.shape[0]
    nrow = nb + ng

    kinds, refs, bounds, bsigns, zcols, jrows = [], [], [], [], [], []

    def soft_col(row, upper):
        j = soft_map[row]
        if j == HARD:
            return -1
        return int(j) + (nsl if upper else 0)

    # lower sides
    lob, log = [], []
    for i in range(nb):
        if mask_lo[i] and np.isfinite(lb[i]):
            lob.append(i)
    for i in range(ng):
        if mask_lo[nb + i] and np.isfinite(lb[nb + i]):
            log.append(i)
    for i in lob:
        kinds.append(KIND_LO_BOX); refs.append(i); bounds.append(lb[i])
        bsigns.append(-1.0); zcols.append(soft_col(i, False))
        row = np.zeros(nw); row[box_var[i]] = 1.0; jrows.append(row)
    for i in log:
        kinds.append(KIND_LO_GEN); refs.append(i); bounds.append(lb[nb + i])
        bsigns.append(-1.0); zcols.append(soft_col(nb + i, False))
        jrows.append(gen[i].copy())
    n_lob, n_log = len(lob), len(log)

    # upper sides
    upb, upg = [], []
    for i in range(nb):
        if mask_up[i] and np.isfinite(ub[i]):
            upb.append(i)
    for i in range(ng):
        if mask_up[nb + i] and np.isfinite(ub[nb + i]):
            upg.append(i)
    for i in upb:
        kinds.append(KIND_UP_BOX); refs.append(i); bounds.append(ub[i])
        bsigns.append(1.0); zcols.append(soft_col(i, True))
        row = np.zeros(nw); row[box_var[i]] = -1.0; jrows.append(row)
    for i in upg:
        kinds.append(KIND_UP_GEN); refs.append(i); bounds.append(ub[nb + i])
        bsigns.append(1.0); zcols.append(soft_col(nb + i, True))
        jrows.append(-gen[i])
    n_upb, n_upg = len(upb), len(upg)

    # quadratic (upper only)
    qkeep = []
    for k, (qh, qg, qub) in enumerate(quads_stacked):
        if mask_up[nrow + k] and np.isfinite(qub):
            qkeep.append(k)
            kinds.append(KIND_QUAD); refs.append(k); bounds.append(qub)
            bsigns.append(1.0); zcols.append(soft_col(nrow + k, True))
            jrows.append(np.zeros(nw))
    kq = len(qkeep)

    # slack bounds
    nbl = nbu_cnt = 0
    for j in range(nsl):
        if np.isfinite(sl_min[j]):
            kinds.append(KIND_SL); refs.append(j); bounds.append(sl_min[j])
            bsigns.append(-1.0); zcols.append(j)
            jrows.append(np.zeros(nw)); nbl += 1
    for j in range(nsl):
        if np.isfinite(su_min[j]):
            kinds.append(KIND_SU); refs.append(j); bounds.append(su_min[j])
            bsigns.append(-1.0); zcols.append(nsl + j)
            jrows.append(np.zeros(nw)); nbu_cnt += 1

    m = len(kinds)
    o0 = 0
    sections = {}
    for code, cnt in ((KIND_LO_BOX, n_lob), (KIND_LO_GEN, n_log),
                      (KIND_UP_BOX, n_upb), (KIND_UP_GEN, n_upg),
                      (KIND_QUAD, kq), (KIND_SL, nbl), (KIND_SU, nbu_cnt)):
        sections[code] = slice(o0, o0 + cnt)
        o0 += cnt

    if kq:
        qh = np.stack([quads_stacked[k][0] for k in qkeep])
        qg = np.stack([quads_stacked[k][1] for k in qkeep])
    else:
        qh = np.zeros((0, nw, nw))
        qg = np.zeros((0, nw))

    return Block(
        nw=nw, nsl=nsl, hess0=hess0, grad0=grad0,
        Zdiag=np.concatenate([Zl, Zu]), zlin=np.concatenate([zl, zu]),
        m=m,
        kind=np.asarray(kinds, dtype=np.int8),
        ref=np.asarray(refs, dtype=np.intp),
        bound=np.asarray(bounds, dtype=np.float64),
        bsign=np.asarray(bsigns, dtype=np.float64),
        zcol=np.asarray(zcols, dtype=np.intp),
        affine_jac=(np.vstack(jrows) if m else np.zeros((0, nw))),
        s_q=sections[KIND_QUAD],
        qhess=qh, qgrad=qg, sections=sections,
    )


def _dense_block(p: DenseQcqp) -> Block:
    quads = [(qc.hess, qc.grad, qc.ub) for qc in p.quads]
    return _build_block(
        p.nv, p.ns, p.hess, p.grad, p.box_idx, p.gen_mat, p.lb, p.ub,
        p.mask_lo, p.mask_up, p.soft_map, quads,
        p.Zl, p.Zu, p.zl, p.zu, p.sl_min, p.su_min)


def _stage_block(p: OcpQcqp, n: int) -> Block:
    d = p.dims
    nu, nx = d.nu[n], d.nx[n]
    nw = nu + nx
    st = p.stages[n]
    c = st.cost
    hess0 = np.zeros((nw, nw))
    hess0[:nu, :nu] = c.R
    hess0[:nu, nu:] = c.S
    hess0[nu:, :nu] = c.S.T
    hess0[nu:, nu:] = c.Q
    grad0 = np.concatenate([c.r, c.q])
    iq = st.ineq
    box_var = np.concatenate([iq.idxbu, nu + iq.idxbx]).astype(np.intp)
    gen = np.hstack([iq.D, iq.C]) if d.ng[n] else np.zeros((0, nw))
    quads = [qc.stacked() for qc in st.quads]
    sk = st.slack
    return _build_block(
        nw, d.ns[n], hess0, grad0, box_var, gen, iq.lb, iq.ub,
        iq.mask_lo, iq.mask_up, iq.soft_map, quads,
        sk.Zl, sk.Zu, sk.zl, sk.zu, sk.sl_min, sk.su_min)


@dataclass
class ProblemLayout:
    """Flat-vector geometry of a problem: block offsets into the primal,
    multiplier, and equality vectors."""

    kind: str               # "dense" | "ocp"
    blocks: list
    y_off: np.ndarray       # (nblk,) start of each block's [w | z] run
    ineq_off: np.ndarray    # (nblk,) start of each block's entries
    eq_off: np.ndarray      # dense: [0]; ocp: (N,) start of each dynamics row
    ny: int
    ni: int
    ne: int

    def w_of(self, y: np.ndarray, i: int) -> np.ndarray:
        b = self.blocks[i]
        o = self.y_off[i]
        return y[o:o + b.nw]

    def z_of(self, y: np.ndarray, i: int) -> np.ndarray:
        b = self.blocks[i]
        o = self.y_off[i] + b.nw
        return y[o:o + b.nz]

    def ineq_of(self, vec: np.ndarray, i: int) -> np.ndarray:
        o = self.ineq_off[i]
        return vec[o:o + self.blocks[i].m]

    def eq_of(self, vec: np.ndarray, n: int, height: int) -> np.ndarray:
        o = self.eq_off[n]
        return vec[o:o + height]

    def flat_position(self, block: int, kind: int, ref: int) -> int:
        pos = self.blocks[block].positions().get((kind, ref))
        if pos is None:
            raise KeyError(f"no enumerated entry ({kind}, {ref}) "
                           f"in block {block}")
        return int(self.ineq_off[block] + pos)


def layout_of(problem) -> ProblemLayout:
    """Build (and cache on the problem) its flat layout."""
    cached = getattr(problem, "_layout_cache", None)
    if cached is not None:
        return cached
    if isinstance(problem, DenseQcqp):
        blk = _dense_block(problem)
        lay = ProblemLayout(
            kind="dense", blocks=[blk],
            y_off=np.array([0], dtype=np.intp),
            ineq_off=np.array([0], dtype=np.intp),
            eq_off=np.array([0], dtype=np.intp),
            ny=blk.nw + blk.nz, ni=blk.m, ne=problem.ne)
    elif isinstance(problem, OcpQcqp):
        d = problem.dims
        blocks = [_stage_block(problem, n) for n in range(d.N + 1)]
        y_off, ineq_off = [], []
        oy = oi = 0
        for b in blocks:
            y_off.append(oy); ineq_off.append(oi)
            oy += b.nw + b.nz; oi += b.m
        eq_off, oe = [], 0
        for n in range(d.N):
            eq_off.append(oe); oe += d.nx[n + 1]
        lay = ProblemLayout(
            kind="ocp", blocks=blocks,
            y_off=np.asarray(y_off, dtype=np.intp),
            ineq_off=np.asarray(ineq_off, dtype=np.intp),
            eq_off=np.asarray(eq_off, dtype=np.intp),
            ny=oy, ni=oi, ne=oe)
    else:
        raise TypeError(f"not a problem object: {type(problem)!r}")
    if getattr(problem, "frozen", False):
        problem._layout_cache = lay
    return lay
