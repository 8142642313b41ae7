"""Reference computations the tests compare the package against.

Everything here is rebuilt straight from the problem dataclasses: flat KKT
systems, residuals, Newton directions, matrix exponentials, rollouts. The
module deliberately avoids importing the package's layout and elimination
code, so agreement between the two implementations is evidence rather than
tautology.

Flat conventions (matching the solver's documented ones):

    y   = dense: [v, sl, su]; ocp: per stage [u_n, x_n, sl_n, su_n]
    h_i(y) = const_i + aff_i'y - (0.5 y'Qh_i y + qg_i'y)   >= 0
    r_g = F y + f1 - G'pi - C(y)'lam
    r_b = grhs - G y
    r_d = -h(y) + t
    r_m = lam * t - mu

    K = [[H(lam), -G', -C', 0 ],
         [-G,      0,   0,  0 ],
         [-C,      0,   0,  I ],
         [0,       0,   T,  L ]]      with K d = -res.

Inequality rows are enumerated per block as [lower box, lower general,
upper box, upper general, quadratic, sl floors, su floors], box rows with
control coordinates ahead of state coordinates, masked or infinite sides
skipped entirely.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from qcipm.model import (DenseDims, DenseQcqp, Dynamics, OcpDims, OcpQcqp,
                         QuadConstraint, StageQuad, new_dense_qcqp,
                         new_ocp_qcqp, validate)

HARD = -1


# -- flat system ----------------------------------------------------------------


@dataclass
class FlatSystem:
    ny: int
    F: np.ndarray
    f1: np.ndarray
    G: np.ndarray
    grhs: np.ndarray
    aff: np.ndarray           # (ni, ny) affine jacobian part per row
    const: np.ndarray         # (ni,)
    qh: list = field(default_factory=list)   # per row: (ny, ny) or None
    qg: list = field(default_factory=list)   # per row: (ny,) or None

    @property
    def ni(self) -> int:
        return self.aff.shape[0]

    @property
    def ne(self) -> int:
        return self.G.shape[0]

    def h(self, y: np.ndarray) -> np.ndarray:
        out = self.const + self.aff @ y
        for i, (qh, qg) in enumerate(zip(self.qh, self.qg)):
            if qh is not None:
                out[i] -= 0.5 * y @ qh @ y + qg @ y
        return out

    def ineq_jac(self, y: np.ndarray) -> np.ndarray:
        C = self.aff.copy()
        for i, (qh, qg) in enumerate(zip(self.qh, self.qg)):
            if qh is not None:
                C[i] -= qh @ y + qg
        return C

    def hess_lag(self, lam: np.ndarray) -> np.ndarray:
        H = self.F.copy()
        for i, qh in enumerate(self.qh):
            if qh is not None:
                H += lam[i] * qh
        return H

    def residuals(self, y, pi, lam, t, mu: float = 0.0):
        C = self.ineq_jac(y)
        r_g = self.F @ y + self.f1 - self.G.T @ pi - C.T @ lam
        r_b = self.grhs - self.G @ y
        r_d = -self.h(y) + t
        r_m = lam * t - mu
        return r_g, r_b, r_d, r_m

    def kkt(self, y, lam, t) -> np.ndarray:
        ny, ne, ni = self.ny, self.ne, self.ni
        C = self.ineq_jac(y)
        n = ny + ne + 2 * ni
        K = np.zeros((n, n))
        K[:ny, :ny] = self.hess_lag(lam)
        K[:ny, ny:ny + ne] = -self.G.T
        K[:ny, ny + ne:ny + ne + ni] = -C.T
        K[ny:ny + ne, :ny] = -self.G
        K[ny + ne:ny + ne + ni, :ny] = -C
        K[ny + ne:ny + ne + ni, ny + ne + ni:] = np.eye(ni)
        K[ny + ne + ni:, ny + ne:ny + ne + ni] = np.diag(t)
        K[ny + ne + ni:, ny + ne + ni:] = np.diag(lam)
        return K

    def newton(self, y, lam, t, res_vec: np.ndarray,
               refine: int = 2) -> np.ndarray:
        K = self.kkt(y, lam, t)
        d = np.linalg.solve(K, -res_vec)
        for _ in range(refine):
            r = K @ d + res_vec
            d = d - np.linalg.solve(K, r)
        return d


def stack_res(res) -> np.ndarray:
    return np.concatenate([res.r_g, res.r_b, res.r_d, res.r_m])


def stack_dir(d) -> np.ndarray:
    return np.concatenate([d.y, d.pi, d.lam, d.t])


def rel_err(got: np.ndarray, want: np.ndarray) -> float:
    scale = max(1.0, float(np.max(np.abs(want))) if want.size else 0.0)
    diff = float(np.max(np.abs(got - want))) if want.size else 0.0
    return diff / scale


# -- flattening -----------------------------------------------------------------


class _Rows:
    """Accumulates inequality rows of one flat system."""

    def __init__(self, ny: int):
        self.ny = ny
        self.aff, self.const, self.qh, self.qg = [], [], [], []

    def add(self, aff, const, qh=None, qg=None):
        self.aff.append(aff)
        self.const.append(float(const))
        self.qh.append(qh)
        self.qg.append(qg)

    def affine_row(self, cols, vals, const, slack_col=None):
        a = np.zeros(self.ny)
        a[cols] = vals
        if slack_col is not None:
            a[slack_col] = 1.0
        self.add(a, const)


def _block_rows(rows: _Rows, off: int, nw: int, ns: int, box_var, w_jac,
                lb, ub, mask_lo, mask_up, soft_map, quads, quad_soft,
                quad_mask, sl_min, su_min):
    """One block's rows in solver order. box_var maps box row -> w coord;
    w_jac holds the general rows' jacobian over the block's w part."""
    nbox = len(box_var)
    ngen = w_jac.shape[0]
    sl0, su0 = off + nw, off + nw + ns

    def slack(side, row):
        s = soft_map[row]
        if s == HARD:
            return None
        return (sl0 if side == "lo" else su0) + int(s)

    # lower box, lower general
    for k in range(nbox):
        if mask_lo[k] and np.isfinite(lb[k]):
            rows.affine_row([off + box_var[k]], [1.0], -lb[k], slack("lo", k))
    for k in range(ngen):
        r = nbox + k
        if mask_lo[r] and np.isfinite(lb[r]):
            a = np.zeros(rows.ny)
            a[off:off + nw] = w_jac[k]
            sc = slack("lo", r)
            if sc is not None:
                a[sc] = 1.0
            rows.add(a, -lb[r])
    # upper box, upper general
    for k in range(nbox):
        if mask_up[k] and np.isfinite(ub[k]):
            rows.affine_row([off + box_var[k]], [-1.0], ub[k], slack("up", k))
    for k in range(ngen):
        r = nbox + k
        if mask_up[r] and np.isfinite(ub[r]):
            a = np.zeros(rows.ny)
            a[off:off + nw] = -w_jac[k]
            sc = slack("up", r)
            if sc is not None:
                a[sc] = 1.0
            rows.add(a, ub[r])
    # quadratic rows (upper level only)
    for k, (hq, gq, level) in enumerate(quads):
        if not (quad_mask[k] and np.isfinite(level)):
            continue
        a = np.zeros(rows.ny)
        s = quad_soft[k]
        if s != HARD:
            a[su0 + int(s)] = 1.0
        QH = np.zeros((rows.ny, rows.ny))
        QH[off:off + nw, off:off + nw] = hq
        QG = np.zeros(rows.ny)
        QG[off:off + nw] = gq
        rows.add(a, level, QH, QG)
    # slack floors
    for j in range(ns):
        if np.isfinite(sl_min[j]):
            rows.affine_row([sl0 + j], [1.0], -sl_min[j])
    for j in range(ns):
        if np.isfinite(su_min[j]):
            rows.affine_row([su0 + j], [1.0], -su_min[j])


def flatten_dense(p: DenseQcqp) -> FlatSystem:
    nv, ns = p.nv, p.ns
    ny = nv + 2 * ns
    F = np.zeros((ny, ny))
    F[:nv, :nv] = p.hess
    F[nv:nv + ns, nv:nv + ns] = np.diag(p.Zl) if ns else 0.0
    F[nv + ns:, nv + ns:] = np.diag(p.Zu) if ns else 0.0
    f1 = np.concatenate([p.grad, p.zl, p.zu])
    G = np.zeros((p.ne, ny))
    G[:, :nv] = p.eq_mat
    rows = _Rows(ny)
    nrow = p.nb + p.ng
    quads = [(qc.hess, qc.grad, qc.ub) for qc in p.quads]
    _block_rows(rows, 0, nv, ns, np.asarray(p.box_idx, int), p.gen_mat,
                p.lb, p.ub, p.mask_lo[:nrow], p.mask_up[:nrow],
                p.soft_map[:nrow], quads, p.soft_map[nrow:],
                p.mask_up[nrow:], p.sl_min, p.su_min)
    return FlatSystem(ny=ny, F=F, f1=f1, G=G, grhs=p.eq_rhs.copy(),
                      aff=np.array(rows.aff).reshape(len(rows.aff), ny),
                      const=np.array(rows.const), qh=rows.qh, qg=rows.qg)


def ocp_offsets(p: OcpQcqp):
    """Per-stage offsets of [u, x, sl, su] blocks in the flat y vector."""
    d = p.dims
    off, total = [], 0
    for n in range(d.N + 1):
        off.append(total)
        total += d.nu[n] + d.nx[n] + 2 * d.ns[n]
    return off, total


def flatten_ocp(p: OcpQcqp) -> FlatSystem:
    d = p.dims
    off, ny = ocp_offsets(p)
    F = np.zeros((ny, ny))
    f1 = np.zeros(ny)
    ne = sum(d.nx[n + 1] for n in range(d.N))
    G = np.zeros((ne, ny))
    grhs = np.zeros(ne)
    rows = _Rows(ny)
    for n in range(d.N + 1):
        st = p.stages[n]
        nu, nx, ns = d.nu[n], d.nx[n], d.ns[n]
        nw = nu + nx
        o = off[n]
        cost = np.zeros((nw, nw))
        cost[:nu, :nu] = st.cost.R
        cost[:nu, nu:] = st.cost.S
        cost[nu:, :nu] = st.cost.S.T
        cost[nu:, nu:] = st.cost.Q
        F[o:o + nw, o:o + nw] = cost
        F[o + nw:o + nw + ns, o + nw:o + nw + ns] = \
            np.diag(st.slack.Zl) if ns else 0.0
        F[o + nw + ns:o + nw + 2 * ns, o + nw + ns:o + nw + 2 * ns] = \
            np.diag(st.slack.Zu) if ns else 0.0
        f1[o:o + nu] = st.cost.r
        f1[o + nu:o + nw] = st.cost.q
        f1[o + nw:o + nw + ns] = st.slack.zl
        f1[o + nw + ns:o + nw + 2 * ns] = st.slack.zu

        box_var = np.concatenate([np.asarray(st.ineq.idxbu, int),
                                  nu + np.asarray(st.ineq.idxbx, int)]
                                 ).astype(int)
        w_jac = np.hstack([st.ineq.D, st.ineq.C]) if st.ineq.D.shape[0] \
            else np.zeros((0, nw))
        nrow = len(box_var) + w_jac.shape[0]
        quads = []
        for sq in st.quads:
            hq, gq, level = sq.stacked()
            quads.append((hq, gq, level))
        _block_rows(rows, o, nw, ns, box_var, w_jac, st.ineq.lb, st.ineq.ub,
                    st.ineq.mask_lo[:nrow], st.ineq.mask_up[:nrow],
                    st.ineq.soft_map[:nrow], quads,
                    st.ineq.soft_map[nrow:], st.ineq.mask_up[nrow:],
                    st.slack.sl_min, st.slack.su_min)

    e = 0
    for n in range(d.N):
        dyn = p.dyn[n]
        m = d.nx[n + 1]
        o, o1 = off[n], off[n + 1]
        G[e:e + m, o:o + d.nu[n]] = -dyn.B
        G[e:e + m, o + d.nu[n]:o + d.nu[n] + d.nx[n]] = -dyn.A
        for i in range(m):
            G[e + i, o1 + d.nu[n + 1] + i] = 1.0
        grhs[e:e + m] = dyn.b
        e += m
    ni = len(rows.aff)
    return FlatSystem(ny=ny, F=F, f1=f1, G=G, grhs=grhs,
                      aff=np.array(rows.aff).reshape(ni, ny),
                      const=np.array(rows.const), qh=rows.qh, qg=rows.qg)


def flatten(problem) -> FlatSystem:
    if isinstance(problem, DenseQcqp):
        return flatten_dense(problem)
    return flatten_ocp(problem)


# -- capture and comparison ------------------------------------------------------


def run_with_capture(problem, settings):
    """Solve while recording every emitted event."""
    from qcipm.ipm import solve
    events = []

    def obs(name, payload):
        events.append((name, payload))

    sol, stats = solve(problem, settings, observer=obs)
    return sol, stats, events


def direction_errors(problem, events, refine: int = 2):
    """Relative error of each captured direction against the flat solve.

    Also cross-checks the emitted residual arrays (r_m only where the
    target is exact complementarity). Returns a list of floats, one per
    direction-carrying event.
    """
    fs = flatten(problem)
    errs = []
    for name, payload in events:
        if name not in ("affine", "accepted"):
            continue
        it = payload["iterate"]
        res = payload["residuals"]
        want_g, want_b, want_d, want_m = fs.residuals(it.y, it.pi,
                                                      it.lam, it.t, 0.0)
        assert rel_err(res.r_g, want_g) < 1e-9
        assert rel_err(res.r_b, want_b) < 1e-9
        assert rel_err(res.r_d, want_d) < 1e-9
        if name == "affine":
            assert rel_err(res.r_m, want_m) < 1e-9
        d_ref = fs.newton(it.y, it.lam, it.t, stack_res(res), refine=refine)
        errs.append(rel_err(stack_dir(payload["direction"]), d_ref))
    return errs


# -- random problem generators ---------------------------------------------------


def _side_state(rng):
    """One bound side: active, masked off, or pushed to infinity."""
    u = rng.uniform()
    if u < 0.70:
        return "on"
    return "mask" if u < 0.85 else "inf"


def _soft_assign(rng, n_rows, p_soft=0.35, p_reuse=0.3):
    """soft_map plus the number of slack pairs, occasionally sharing one."""
    soft = np.full(n_rows, HARD, dtype=int)
    pairs = 0
    for r in range(n_rows):
        if rng.uniform() < p_soft:
            if pairs and rng.uniform() < p_reuse:
                soft[r] = int(rng.integers(0, pairs))
            else:
                soft[r] = pairs
                pairs += 1
    return soft, pairs


def _psd(rng, n, scale=1.0, min_rank=1):
    if n == 0:
        return np.zeros((0, 0))
    k = int(rng.integers(min_rank, n + 1))
    L = rng.normal(size=(n, k)) * scale
    return L @ L.T


def _slack_arrays(rng, ns):
    Z = rng.uniform(0.5, 5.0, size=ns)
    z = rng.uniform(0.1, 1.0, size=ns)
    smin = np.zeros(ns)
    for j in range(ns):
        u = rng.uniform()
        if u < 0.1:
            smin[j] = -np.inf
        elif u < 0.25:
            smin[j] = 0.05
    return Z, z, smin


def _bounds(rng, vals, mask_lo, mask_up, lb, ub, start):
    """Anchored two-sided bounds with margin >= 0.3; sides drop out by
    masking or by an infinite limit, both of which must behave alike."""
    for k, v in enumerate(vals):
        r = start + k
        lo, up = _side_state(rng), _side_state(rng)
        lb[r] = v - 0.3 - rng.uniform(0.0, 0.7)
        ub[r] = v + 0.3 + rng.uniform(0.0, 0.7)
        if lo == "mask":
            mask_lo[r] = False
        elif lo == "inf":
            lb[r] = -np.inf
        if up == "mask":
            mask_up[r] = False
        elif up == "inf":
            ub[r] = np.inf


def random_dense(rng) -> DenseQcqp:
    """Random strictly convex dense problem with a known interior point."""
    nv = int(rng.integers(1, 11))
    ne = int(rng.integers(0, min(3, nv - 1) + 1)) if nv > 1 else 0
    nb = int(rng.integers(0, nv + 1))
    ng = int(rng.integers(0, 4))
    nq = int(rng.integers(0, 4))
    v0 = rng.uniform(-1.0, 1.0, size=nv)

    n_rows = nb + ng + nq
    soft, ns = _soft_assign(rng, n_rows)
    dims = DenseDims(nv=nv, ne=ne, nb=nb, ng=ng, nq=nq, ns=ns)
    p = new_dense_qcqp(dims)
    p.hess = _psd(rng, nv, scale=0.6) + np.diag(rng.uniform(0.5, 1.5, nv))
    p.grad = rng.normal(size=nv)
    if ne:
        p.eq_mat = rng.normal(size=(ne, nv))
        p.eq_rhs = p.eq_mat @ v0
    p.box_idx = rng.choice(nv, size=nb, replace=False).astype(int)
    p.gen_mat = rng.normal(size=(ng, nv))
    _bounds(rng, v0[p.box_idx], p.mask_lo, p.mask_up, p.lb, p.ub, 0)
    _bounds(rng, p.gen_mat @ v0, p.mask_lo, p.mask_up, p.lb, p.ub, nb)
    p.quads = []
    for k in range(nq):
        hq = np.zeros((nv, nv)) if rng.uniform() < 0.05 else \
            _psd(rng, nv, scale=0.5)
        gq = rng.normal(size=nv) * 0.5
        val = 0.5 * v0 @ hq @ v0 + gq @ v0
        level = val + rng.uniform(0.5, 2.0)
        state = _side_state(rng)
        if state == "mask":
            p.mask_up[nb + ng + k] = False
        elif state == "inf":
            level = np.inf
        p.quads.append(QuadConstraint(hess=hq, grad=gq, ub=level))
    p.soft_map = soft
    p.Zl, p.zl, p.sl_min = _slack_arrays(rng, ns)
    p.Zu, p.zu, p.su_min = _slack_arrays(rng, ns)
    rep = validate(p)
    assert rep.ok, rep.findings
    return p.freeze()


def random_ocp(rng) -> OcpQcqp:
    """Random convex control problem with a known interior trajectory."""
    N = int(rng.integers(1, 6))
    nx = [int(rng.integers(1, 5)) for _ in range(N + 1)]
    nu = [int(rng.integers(0, 3)) for _ in range(N)] + [0]
    nbu = [int(rng.integers(0, nu[n] + 1)) for n in range(N + 1)]
    nbx = [int(rng.integers(0, nx[n] + 1)) for n in range(N + 1)]
    ng = [int(rng.integers(0, 3)) for _ in range(N + 1)]
    nq = [int(rng.integers(0, 3)) for _ in range(N + 1)]

    dyn, anchors_u = [], []
    x = rng.uniform(-0.6, 0.6, size=nx[0])
    anchors_x = [x]
    for n in range(N):
        A = rng.normal(size=(nx[n + 1], nx[n]))
        s = np.linalg.norm(A, 2)
        if s > 0.8:
            A = A * (0.8 / s)
        B = rng.normal(size=(nx[n + 1], nu[n])) * 0.7
        b = rng.normal(size=nx[n + 1]) * 0.1
        dyn.append((A, B, b))
        u = rng.uniform(-0.6, 0.6, size=nu[n])
        anchors_u.append(u)
        x = A @ x + B @ u + b
        anchors_x.append(x)
    anchors_u.append(np.zeros(0))

    soft_maps, ns = [], []
    for n in range(N + 1):
        sm, k = _soft_assign(rng, nbu[n] + nbx[n] + ng[n] + nq[n])
        soft_maps.append(sm)
        ns.append(k)

    dims = OcpDims(N=N, nx=nx, nu=nu, nbu=nbu, nbx=nbx, ng=ng, nq=nq, ns=ns)
    p = new_ocp_qcqp(dims)
    for n in range(N):
        A, B, b = dyn[n]
        p.dyn[n].A, p.dyn[n].B, p.dyn[n].b = A, B, b
    for n in range(N + 1):
        st = p.stages[n]
        nun, nxn, nw = nu[n], nx[n], nu[n] + nx[n]
        M = _psd(rng, nw, scale=0.4) + 0.2 * np.eye(nw)
        st.cost.R = M[:nun, :nun]
        st.cost.S = M[:nun, nun:]
        st.cost.Q = M[nun:, nun:]
        st.cost.r = rng.normal(size=nun) * 0.3
        st.cost.q = rng.normal(size=nxn) * 0.3
        st.ineq.idxbu = rng.choice(nun, size=nbu[n], replace=False).astype(int)
        st.ineq.idxbx = rng.choice(nxn, size=nbx[n], replace=False).astype(int)
        st.ineq.D = rng.normal(size=(ng[n], nun))
        st.ineq.C = rng.normal(size=(ng[n], nxn))
        wa = np.concatenate([anchors_u[n], anchors_x[n]])
        box_vals = np.concatenate([anchors_u[n][st.ineq.idxbu],
                                   anchors_x[n][st.ineq.idxbx]])
        gen_vals = st.ineq.D @ anchors_u[n] + st.ineq.C @ anchors_x[n]
        _bounds(rng, box_vals, st.ineq.mask_lo, st.ineq.mask_up,
                st.ineq.lb, st.ineq.ub, 0)
        _bounds(rng, gen_vals, st.ineq.mask_lo, st.ineq.mask_up,
                st.ineq.lb, st.ineq.ub, nbu[n] + nbx[n])
        st.quads = []
        for k in range(nq[n]):
            H = _psd(rng, nw, scale=0.4)
            g = rng.normal(size=nw) * 0.3
            val = 0.5 * wa @ H @ wa + g @ wa
            level = val + rng.uniform(0.5, 2.0)
            if _side_state(rng) == "mask":
                st.ineq.mask_up[nbu[n] + nbx[n] + ng[n] + k] = False
            st.quads.append(StageQuad(
                R=H[:nun, :nun], S=H[:nun, nun:], Q=H[nun:, nun:],
                r=g[:nun], q=g[nun:], ub=level))
        st.ineq.soft_map = soft_maps[n]
        st.slack.Zl, st.slack.zl, st.slack.sl_min = _slack_arrays(rng, ns[n])
        st.slack.Zu, st.slack.zu, st.slack.su_min = _slack_arrays(rng, ns[n])
    rep = validate(p)
    assert rep.ok, rep.findings
    return p.freeze()


# -- dynamics helpers ------------------------------------------------------------


def expm_series(M: np.ndarray, order: int = 40) -> np.ndarray:
    """Plain Taylor series for the matrix exponential."""
    out = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, order + 1):
        term = term @ M / k
        out = out + term
    return out


def rollout(dyn, x0: np.ndarray, us) -> list:
    """States produced by x_{n+1} = A x_n + B u_n + b."""
    xs = [np.asarray(x0, dtype=float)]
    for d, u in zip(dyn, us):
        xs.append(d.A @ xs[-1] + d.B @ np.asarray(u, dtype=float) + d.b)
    return xs


def stage_quad_value(sq: StageQuad, u: np.ndarray, x: np.ndarray) -> float:
    return float(0.5 * u @ sq.R @ u + u @ sq.S @ x + 0.5 * x @ sq.Q @ x
                 + sq.r @ u + sq.q @ x)


def dense_quad_value(qc: QuadConstraint, z: np.ndarray) -> float:
    return float(0.5 * z @ qc.hess @ z + qc.grad @ z)
