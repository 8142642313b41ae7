"""Problem containers for convex QCQPs.

Two forms are supported: a one-shot dense form over a single variable vector,
and a stage-structured optimal-control form with linear dynamics. Both carry
two-sided box/general affine constraints, one-sided (upper) scalar quadratic
constraints, and optional L2/L1 slack softening per constraint row.

Internally every one-sided inequality is normalized to h(y) >= 0:

    lower row:   h = c'v + s_l - lb
    upper row:   h = ub - c'v + s_u
    quadratic:   h = d - (0.5 v'Hq v + gq'v) + s_u
    slack bound: h = s - s_min

Masked or infinite sides are simply never enumerated.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .linalg import is_psd

HARD = -1  # soft_map entry for rows without a slack pair

_PSD_PIVOT_TOL = 1e-12
_SYM_TOL = 1e-12


def _f(shape) -> np.ndarray:
    return np.zeros(shape, dtype=np.float64)


def _idx(n: int, fill: int = 0) -> np.ndarray:
    return np.full(n, fill, dtype=np.intp)


def _mask(n: int, fill: bool = True) -> np.ndarray:
    return np.full(n, fill, dtype=bool)


# ---------------------------------------------------------------------------
# dimensions


@dataclass
class DenseDims:
    """Sizes of a dense problem: variables, equalities, box/general rows,
    quadratic constraints, slack pairs."""

    nv: int
    ne: int = 0
    nb: int = 0
    ng: int = 0
    nq: int = 0
    ns: int = 0

    def __post_init__(self):
        for name in ("nv", "ne", "nb", "ng", "nq", "ns"):
            if getattr(self, name) < 0:
                raise ValueError(f"negative dimension {name}")
        if self.nb > self.nv:
            raise ValueError("more box rows than variables")


@dataclass
class OcpDims:
    """Per-stage sizes of an optimal-control problem over stages 0..N.

    All arrays must have length N+1; dynamics connect consecutive stages so
    there are N equality blocks of height nx[n+1].
    """

    N: int
    nx: list
    nu: list
    nbu: list
    nbx: list
    ng: list
    nq: list
    ns: list

    def __post_init__(self):
        if self.N < 0:
            raise ValueError("negative horizon")
        for name in ("nx", "nu", "nbu", "nbx", "ng", "nq", "ns"):
            arr = list(getattr(self, name))
            setattr(self, name, arr)
            if len(arr) != self.N + 1:
                raise ValueError(
                    f"length mismatch between dims array {name} and N")
            if any(v < 0 for v in arr):
                raise ValueError(f"negative entry in dims array {name}")
        for n in range(self.N + 1):
            if self.nbu[n] > self.nu[n] or self.nbx[n] > self.nx[n]:
                raise ValueError(f"stage {n}: more box rows than variables")

    def copy(self) -> "OcpDims":
        return OcpDims(self.N, list(self.nx), list(self.nu), list(self.nbu),
                       list(self.nbx), list(self.ng), list(self.nq),
                       list(self.ns))


# ---------------------------------------------------------------------------
# dense problem


@dataclass
class QuadConstraint:
    """One scalar upper quadratic constraint 0.5 v'hess v + grad'v <= ub."""

    hess: np.ndarray
    grad: np.ndarray
    ub: float


@dataclass
class DenseQcqp:
    dims: DenseDims
    hess: np.ndarray          # (nv, nv) cost Hessian
    grad: np.ndarray          # (nv,) cost gradient
    eq_mat: np.ndarray        # (ne, nv)
    eq_rhs: np.ndarray        # (ne,)
    box_idx: np.ndarray       # (nb,) variable index per box row
    gen_mat: np.ndarray       # (ng, nv)
    lb: np.ndarray            # (nb+ng,) lower limits, box rows first
    ub: np.ndarray            # (nb+ng,)
    quads: list               # nq QuadConstraint entries
    Zl: np.ndarray            # (ns,) quadratic slack penalties, lower side
    Zu: np.ndarray
    zl: np.ndarray            # (ns,) linear slack penalties
    zu: np.ndarray
    sl_min: np.ndarray        # (ns,) slack lower bounds
    su_min: np.ndarray
    soft_map: np.ndarray      # (nb+ng+nq,) HARD or slack pair index
    mask_lo: np.ndarray       # (nb+ng+nq,) lower sides on/off (quad rows unused)
    mask_up: np.ndarray       # (nb+ng+nq,)
    eq_mark: np.ndarray       # (nb+ng,) row intended as equality (lb == ub)
    obj_offset: float = 0.0
    frozen: bool = field(default=False, compare=False)

    # -- dimension shorthands -------------------------------------------------
    @property
    def nv(self): return self.dims.nv
    @property
    def ne(self): return self.dims.ne
    @property
    def nb(self): return self.dims.nb
    @property
    def ng(self): return self.dims.ng
    @property
    def nq(self): return self.dims.nq
    @property
    def ns(self): return self.dims.ns

    def freeze(self) -> "DenseQcqp":
        """Lock all payload arrays; frozen problems may be shared freely."""
        if not self.frozen:
            for arr in self._arrays():
                arr.setflags(write=False)
            self.frozen = True
        return self

    def _arrays(self):
        out = [self.hess, self.grad, self.eq_mat, self.eq_rhs, self.box_idx,
               self.gen_mat, self.lb, self.ub, self.Zl, self.Zu, self.zl,
               self.zu, self.sl_min, self.su_min, self.soft_map,
               self.mask_lo, self.mask_up, self.eq_mark]
        for qc in self.quads:
            out += [qc.hess, qc.grad]
        return out

    def objective_value(self, v: np.ndarray, sl: Optional[np.ndarray] = None,
                        su: Optional[np.ndarray] = None) -> float:
        obj = 0.5 * float(v @ self.hess @ v) + float(self.grad @ v)
        if self.ns:
            sl = np.zeros(self.ns) if sl is None else sl
            su = np.zeros(self.ns) if su is None else su
            obj += 0.5 * float(sl @ (self.Zl * sl)) + float(self.zl @ sl)
            obj += 0.5 * float(su @ (self.Zu * su)) + float(self.zu @ su)
        return obj + self.obj_offset


def new_dense_qcqp(dims: DenseDims) -> DenseQcqp:
    """Zero-initialized dense problem of the given sizes, masks all on."""
    nrow = dims.nb + dims.ng
    return DenseQcqp(
        dims=dims,
        hess=_f((dims.nv, dims.nv)),
        grad=_f(dims.nv),
        eq_mat=_f((dims.ne, dims.nv)),
        eq_rhs=_f(dims.ne),
        box_idx=_idx(dims.nb),
        gen_mat=_f((dims.ng, dims.nv)),
        lb=_f(nrow),
        ub=_f(nrow),
        quads=[QuadConstraint(_f((dims.nv, dims.nv)), _f(dims.nv), 0.0)
               for _ in range(dims.nq)],
        Zl=_f(dims.ns), Zu=_f(dims.ns), zl=_f(dims.ns), zu=_f(dims.ns),
        sl_min=_f(dims.ns), su_min=_f(dims.ns),
        soft_map=_idx(nrow + dims.nq, HARD),
        mask_lo=_mask(nrow + dims.nq),
        mask_up=_mask(nrow + dims.nq),
        eq_mark=_mask(nrow, False),
    )


# ---------------------------------------------------------------------------
# optimal-control problem


@dataclass
class Dynamics:
    """x_{n+1} = A x_n + B u_n + b."""

    A: np.ndarray
    B: np.ndarray
    b: np.ndarray


@dataclass
class StageCost:
    R: np.ndarray   # (nu, nu)
    S: np.ndarray   # (nu, nx)
    Q: np.ndarray   # (nx, nx)
    r: np.ndarray   # (nu,)
    q: np.ndarray   # (nx,)


@dataclass
class StageQuad:
    """Scalar stage constraint
    0.5 u'R u + u'S x + 0.5 x'Q x + r'u + q'x <= ub."""

    R: np.ndarray
    S: np.ndarray
    Q: np.ndarray
    r: np.ndarray
    q: np.ndarray
    ub: float

    def stacked(self):
        nu, nx = self.S.shape
        hess = np.zeros((nu + nx, nu + nx))
        hess[:nu, :nu] = self.R
        hess[:nu, nu:] = self.S
        hess[nu:, :nu] = self.S.T
        hess[nu:, nu:] = self.Q
        return hess, np.concatenate([self.r, self.q]), self.ub


@dataclass
class StageIneq:
    idxbu: np.ndarray     # (nbu,) control coordinates with box rows
    idxbx: np.ndarray     # (nbx,) state coordinates with box rows
    D: np.ndarray         # (ng, nu)
    C: np.ndarray         # (ng, nx)
    lb: np.ndarray        # (nbu+nbx+ng,) u-box, x-box, then general
    ub: np.ndarray
    soft_map: np.ndarray  # (nbu+nbx+ng+nq,)
    mask_lo: np.ndarray
    mask_up: np.ndarray
    eq_mark: np.ndarray   # (nbu+nbx+ng,)


@dataclass
class StageSlack:
    Zl: np.ndarray
    Zu: np.ndarray
    zl: np.ndarray
    zu: np.ndarray
    sl_min: np.ndarray
    su_min: np.ndarray


@dataclass
class OcpStage:
    cost: StageCost
    ineq: StageIneq
    quads: list           # StageQuad entries
    slack: StageSlack


@dataclass
class OcpQcqp:
    dims: OcpDims
    dyn: list             # N Dynamics entries
    stages: list          # N+1 OcpStage entries
    x0: Optional[np.ndarray] = None   # designated initial state, if any
    x0_mode: str = "variable"         # "variable" | "fixed"
    obj_offset: float = 0.0
    frozen: bool = field(default=False, compare=False)

    @property
    def N(self): return self.dims.N

    def freeze(self) -> "OcpQcqp":
        if not self.frozen:
            for arr in self._arrays():
                arr.setflags(write=False)
            self.frozen = True
        return self

    def _arrays(self):
        out = []
        for d in self.dyn:
            out += [d.A, d.B, d.b]
        for st in self.stages:
            c, iq, sk = st.cost, st.ineq, st.slack
            out += [c.R, c.S, c.Q, c.r, c.q,
                    iq.idxbu, iq.idxbx, iq.D, iq.C, iq.lb, iq.ub,
                    iq.soft_map, iq.mask_lo, iq.mask_up, iq.eq_mark,
                    sk.Zl, sk.Zu, sk.zl, sk.zu, sk.sl_min, sk.su_min]
            for qc in st.quads:
                out += [qc.R, qc.S, qc.Q, qc.r, qc.q]
        if self.x0 is not None:
            out.append(self.x0)
        return out

    def objective_value(self, us, xs, sls=None, sus=None) -> float:
        obj = self.obj_offset
        for n in range(self.N + 1):
            c = self.stages[n].cost
            u, x = us[n], xs[n]
            obj += 0.5 * float(u @ c.R @ u) + float(u @ c.S @ x)
            obj += 0.5 * float(x @ c.Q @ x)
            obj += float(c.r @ u) + float(c.q @ x)
            sk = self.stages[n].slack
            if len(sk.Zl):
                sl = sls[n] if sls is not None else np.zeros(len(sk.Zl))
                su = sus[n] if sus is not None else np.zeros(len(sk.Zu))
                obj += 0.5 * float(sl @ (sk.Zl * sl)) + float(sk.zl @ sl)
                obj += 0.5 * float(su @ (sk.Zu * su)) + float(sk.zu @ su)
        return obj


def new_ocp_qcqp(dims: OcpDims) -> OcpQcqp:
    """Zero-initialized stage-structured problem, masks all on."""
    dyn = [Dynamics(A=_f((dims.nx[n + 1], dims.nx[n])),
                    B=_f((dims.nx[n + 1], dims.nu[n])),
                    b=_f(dims.nx[n + 1]))
           for n in range(dims.N)]
    stages = []
    for n in range(dims.N + 1):
        nx, nu = dims.nx[n], dims.nu[n]
        nrow = dims.nbu[n] + dims.nbx[n] + dims.ng[n]
        stages.append(OcpStage(
            cost=StageCost(R=_f((nu, nu)), S=_f((nu, nx)), Q=_f((nx, nx)),
                           r=_f(nu), q=_f(nx)),
            ineq=StageIneq(
                idxbu=_idx(dims.nbu[n]), idxbx=_idx(dims.nbx[n]),
                D=_f((dims.ng[n], nu)), C=_f((dims.ng[n], nx)),
                lb=_f(nrow), ub=_f(nrow),
                soft_map=_idx(nrow + dims.nq[n], HARD),
                mask_lo=_mask(nrow + dims.nq[n]),
                mask_up=_mask(nrow + dims.nq[n]),
                eq_mark=_mask(nrow, False)),
            quads=[StageQuad(R=_f((nu, nu)), S=_f((nu, nx)), Q=_f((nx, nx)),
                             r=_f(nu), q=_f(nx), ub=0.0)
                   for _ in range(dims.nq[n])],
            slack=StageSlack(Zl=_f(dims.ns[n]), Zu=_f(dims.ns[n]),
                             zl=_f(dims.ns[n]), zu=_f(dims.ns[n]),
                             sl_min=_f(dims.ns[n]), su_min=_f(dims.ns[n])),
        ))
    return OcpQcqp(dims=dims, dyn=dyn, stages=stages)


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    findings: list

    @property
    def ok(self) -> bool:
        return not self.findings


def _check_sym(mat: np.ndarray, label: str, findings: list):
    if mat.shape[0] and mat.shape[0] == mat.shape[1]:
        scale = max(1.0, float(np.max(np.abs(mat))))
        if np.max(np.abs(mat - mat.T)) > _SYM_TOL * scale:
            findings.append(f"{label} not symmetric")


def _check_rows(lb, ub, mask_lo, mask_up, soft_map, ns, label, findings):
    nrow = len(lb)
    for r in range(nrow):
        if (mask_lo[r] and mask_up[r]
                and np.isfinite(lb[r]) and np.isfinite(ub[r])
                and lb[r] > ub[r]):
            findings.append(f"{label} row {r}: lower bound exceeds upper")
    for r in range(len(soft_map)):
        if soft_map[r] != HARD and not (0 <= soft_map[r] < ns):
            findings.append(f"{label} row {r}: soft map index out of range")


def _check_slack(slk_diag, name, label, findings):
    if len(slk_diag) and np.min(slk_diag) < 0:
        findings.append(f"{label}: negative slack penalty diagonal {name}")


def validate(problem) -> ValidationReport:
    """Inspect a problem for structural defects.

    Returns a report listing findings such as asymmetric Hessians, quadratic
    constraints that are not PSD, out-of-range indices, crossed bounds, and
    negative slack penalties. An empty report means the data is usable.
    """
    findings: list = []
    if isinstance(problem, DenseQcqp):
        p = problem
        _check_sym(p.hess, "cost hessian", findings)
        for k, qc in enumerate(p.quads):
            _check_sym(qc.hess, f"quadratic constraint {k} hessian", findings)
            if not is_psd(qc.hess, _PSD_PIVOT_TOL):
                findings.append(f"quadratic constraint {k} not PSD")
        seen = set()
        for i, bi in enumerate(p.box_idx):
            if not (0 <= bi < p.nv):
                findings.append(f"box row {i}: variable index out of range")
            elif bi in seen:
                findings.append(f"box row {i}: duplicate variable index")
            seen.add(int(bi))
        _check_rows(p.lb, p.ub, p.mask_lo, p.mask_up, p.soft_map, p.ns,
                    "constraint", findings)
        _check_slack(p.Zl, "Zl", "slack", findings)
        _check_slack(p.Zu, "Zu", "slack", findings)
        return ValidationReport(findings)

    if isinstance(problem, OcpQcqp):
        p = problem
        d = p.dims
        for n in range(d.N):
            dyn = p.dyn[n]
            want = ((d.nx[n + 1], d.nx[n]), (d.nx[n + 1], d.nu[n]),
                    (d.nx[n + 1],))
            got = (dyn.A.shape, dyn.B.shape, dyn.b.shape)
            if got != want:
                findings.append(f"dynamics {n}: shape mismatch {got} != {want}")
        for n, st in enumerate(p.stages):
            _check_sym(st.cost.Q, f"stage {n} state cost", findings)
            _check_sym(st.cost.R, f"stage {n} control cost", findings)
            for k, qc in enumerate(st.quads):
                hess, _, _ = qc.stacked()
                _check_sym(hess, f"stage {n} quadratic constraint {k} hessian",
                           findings)
                if not is_psd(hess, _PSD_PIVOT_TOL):
                    findings.append(f"stage {n} quadratic constraint {k} not PSD")
            iq = st.ineq
            for i, bi in enumerate(iq.idxbu):
                if not (0 <= bi < d.nu[n]):
                    findings.append(
                        f"stage {n} control box row {i}: index out of range")
            for i, bi in enumerate(iq.idxbx):
                if not (0 <= bi < d.nx[n]):
                    findings.append(
                        f"stage {n} state box row {i}: index out of range")
            _check_rows(iq.lb, iq.ub, iq.mask_lo, iq.mask_up, iq.soft_map,
                        d.ns[n], f"stage {n} constraint", findings)
            _check_slack(st.slack.Zl, "Zl", f"stage {n} slack", findings)
            _check_slack(st.slack.Zu, "Zu", f"stage {n} slack", findings)
        if p.x0 is not None and len(p.x0) != d.nx[0]:
            findings.append("initial state length mismatch")
        return ValidationReport(findings)

    raise TypeError(f"not a problem object: {type(problem)!r}")
