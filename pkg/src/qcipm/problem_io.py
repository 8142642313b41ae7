"""Problem serialization.

Plain YAML trees, one problem per file. The top-level key `kind` selects
dense or ocp. Matrices are stored row-major as {rows, cols, data};
infinite bounds are spelled inf / -inf. Equality marks are not stored:
the loader re-derives them from rows with finite lb == ub.

Dense field names map onto the model as Q -> hess, q -> grad,
A -> eq_mat, b -> eq_rhs, idxbx -> box_idx, C -> gen_mat and
(Hq, gq, dq) -> quadratic constraints. The ocp kind uses the same
names per stage, with (Hq, gq, dq) holding the stacked (u, x) form.
"""
from __future__ import annotations

import numpy as np
import yaml

from .model import (DenseDims, DenseQcqp, Dynamics, OcpDims, OcpQcqp,
                    OcpStage, QuadConstraint, StageCost, StageIneq,
                    StageQuad, StageSlack, validate)


# -- scalar / array encoding -----------------------------------------------------

def _num(x) -> object:
    x = float(x)
    if np.isposinf(x):
        return "inf"
    if np.isneginf(x):
        return "-inf"
    return x


def _tonum(v, where: str) -> float:
    if isinstance(v, str):
        s = v.strip().lower()
        if s == "inf":
            return np.inf
        if s == "-inf":
            return -np.inf
        raise ValueError(f"{where}: cannot read {v!r} as a number")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"{where}: cannot read {v!r} as a number")
    return float(v)


def _vec(a) -> list:
    return [_num(x) for x in np.asarray(a, dtype=float).ravel()]


def _unvec(node, where: str) -> np.ndarray:
    if not isinstance(node, list):
        raise ValueError(f"{where}: expected a list")
    return np.asarray([_tonum(v, where) for v in node], dtype=float)


def _ints(a) -> list:
    return [int(x) for x in np.asarray(a).ravel()]


def _unints(node, where: str) -> np.ndarray:
    if not isinstance(node, list) or any(
            isinstance(v, bool) or not isinstance(v, int) for v in node):
        raise ValueError(f"{where}: expected a list of integers")
    return np.asarray(node, dtype=np.intp)


def _bools(a) -> list:
    return [bool(x) for x in np.asarray(a).ravel()]


def _unbools(node, where: str) -> np.ndarray:
    if not isinstance(node, list) or any(
            not isinstance(v, bool) for v in node):
        raise ValueError(f"{where}: expected a list of booleans")
    return np.asarray(node, dtype=bool)


def _mat(a) -> dict:
    a = np.asarray(a, dtype=float)
    return {"rows": int(a.shape[0]), "cols": int(a.shape[1]),
            "data": _vec(a)}


def _unmat(node, where: str) -> np.ndarray:
    if (not isinstance(node, dict)
            or set(node) != {"rows", "cols", "data"}):
        raise ValueError(f"{where}: expected {{rows, cols, data}}")
    rows, cols = node["rows"], node["cols"]
    data = _unvec(node["data"], f"{where}.data")
    if data.size != rows * cols:
        raise ValueError(f"{where}: {rows}x{cols} needs {rows * cols} "
                         f"entries, got {data.size}")
    return data.reshape(rows, cols)


def _eq_marks(lb: np.ndarray, ub: np.ndarray) -> np.ndarray:
    return np.isfinite(lb) & (lb == ub)


# -- dense kind ------------------------------------------------------------------

def _dense_tree(p: DenseQcqp) -> dict:
    return {
        "kind": "dense",
        "Q": _mat(p.hess), "q": _vec(p.grad),
        "A": _mat(p.eq_mat), "b": _vec(p.eq_rhs),
        "idxbx": _ints(p.box_idx),
        "C": _mat(p.gen_mat),
        "lb": _vec(p.lb), "ub": _vec(p.ub),
        "Hq": [_mat(qc.hess) for qc in p.quads],
        "gq": [_vec(qc.grad) for qc in p.quads],
        "dq": [_num(qc.ub) for qc in p.quads],
        "Zl": _vec(p.Zl), "Zu": _vec(p.Zu),
        "zl": _vec(p.zl), "zu": _vec(p.zu),
        "sl_min": _vec(p.sl_min), "su_min": _vec(p.su_min),
        "soft_map": _ints(p.soft_map),
        "mask_lo": _bools(p.mask_lo), "mask_up": _bools(p.mask_up),
    }


def _dense_from_tree(t: dict) -> DenseQcqp:
    hess = _unmat(t["Q"], "Q")
    grad = _unvec(t["q"], "q")
    eq_mat = _unmat(t["A"], "A")
    eq_rhs = _unvec(t["b"], "b")
    box_idx = _unints(t["idxbx"], "idxbx")
    gen_mat = _unmat(t["C"], "C")
    lb = _unvec(t["lb"], "lb")
    ub = _unvec(t["ub"], "ub")
    hqs = t.get("Hq", [])
    quads = [QuadConstraint(hess=_unmat(h, f"Hq[{k}]"),
                            grad=_unvec(t["gq"][k], f"gq[{k}]"),
                            ub=_tonum(t["dq"][k], f"dq[{k}]"))
             for k, h in enumerate(hqs)]
    zl = _unvec(t["zl"], "zl")
    dims = DenseDims(nv=grad.size, ne=eq_mat.shape[0], nb=box_idx.size,
                     ng=gen_mat.shape[0], nq=len(quads), ns=zl.size)
    nrow = dims.nb + dims.ng
    if lb.size != nrow:
        raise ValueError(f"lb: expected {nrow} rows, got {lb.size}")
    p = DenseQcqp(
        dims=dims, hess=hess, grad=grad, eq_mat=eq_mat, eq_rhs=eq_rhs,
        box_idx=box_idx, gen_mat=gen_mat, lb=lb, ub=ub, quads=quads,
        Zl=_unvec(t["Zl"], "Zl"), Zu=_unvec(t["Zu"], "Zu"),
        zl=zl, zu=_unvec(t["zu"], "zu"),
        sl_min=_unvec(t["sl_min"], "sl_min"),
        su_min=_unvec(t["su_min"], "su_min"),
        soft_map=_unints(t["soft_map"], "soft_map"),
        mask_lo=_unbools(t["mask_lo"], "mask_lo"),
        mask_up=_unbools(t["mask_up"], "mask_up"),
        eq_mark=_eq_marks(lb, ub))
    return p


# -- ocp kind --------------------------------------------------------------------

def _ocp_tree(p: OcpQcqp) -> dict:
    d = p.dims
    N = d.N
    tree = {
        "kind": "ocp",
        "N": int(N),
        "nx": _ints(d.nx), "nu": _ints(d.nu),
        "A": [_mat(dyn.A) for dyn in p.dyn],
        "B": [_mat(dyn.B) for dyn in p.dyn],
        "b": [_vec(dyn.b) for dyn in p.dyn],
        "Q": [_mat(st.cost.Q) for st in p.stages],
        "S": [_mat(st.cost.S) for st in p.stages],
        "R": [_mat(st.cost.R) for st in p.stages],
        "q": [_vec(st.cost.q) for st in p.stages],
        "r": [_vec(st.cost.r) for st in p.stages],
        "idxbu": [_ints(st.ineq.idxbu) for st in p.stages],
        "idxbx": [_ints(st.ineq.idxbx) for st in p.stages],
        "D": [_mat(st.ineq.D) for st in p.stages],
        "C": [_mat(st.ineq.C) for st in p.stages],
        "lb": [_vec(st.ineq.lb) for st in p.stages],
        "ub": [_vec(st.ineq.ub) for st in p.stages],
        "Hq": [[_mat(qc.stacked()[0]) for qc in st.quads]
               for st in p.stages],
        "gq": [[_vec(qc.stacked()[1]) for qc in st.quads]
               for st in p.stages],
        "dq": [[_num(qc.ub) for qc in st.quads] for st in p.stages],
        "Zl": [_vec(st.slack.Zl) for st in p.stages],
        "Zu": [_vec(st.slack.Zu) for st in p.stages],
        "zl": [_vec(st.slack.zl) for st in p.stages],
        "zu": [_vec(st.slack.zu) for st in p.stages],
        "sl_min": [_vec(st.slack.sl_min) for st in p.stages],
        "su_min": [_vec(st.slack.su_min) for st in p.stages],
        "soft_map": [_ints(st.ineq.soft_map) for st in p.stages],
        "mask_lo": [_bools(st.ineq.mask_lo) for st in p.stages],
        "mask_up": [_bools(st.ineq.mask_up) for st in p.stages],
    }
    if p.x0 is not None:
        tree["x0"] = _vec(p.x0)
    return tree


def _stage_list(t: dict, key: str, N: int) -> list:
    node = t[key]
    if not isinstance(node, list) or len(node) != N + 1:
        raise ValueError(f"{key}: expected a list with one entry per stage "
                         f"({N + 1})")
    return node


def _ocp_from_tree(t: dict) -> OcpQcqp:
    N = t["N"]
    if not isinstance(N, int) or N < 0:
        raise ValueError("N: expected a nonnegative integer")
    nx = _unints(t["nx"], "nx")
    nu = _unints(t["nu"], "nu")
    if nx.size != N + 1 or nu.size != N + 1:
        raise ValueError("nx, nu: expected one entry per stage")

    for key in ("A", "B", "b"):
        if not isinstance(t[key], list) or len(t[key]) != N:
            raise ValueError(f"{key}: expected {N} entries")
    dyn = [Dynamics(A=_unmat(t["A"][n], f"A[{n}]"),
                    B=_unmat(t["B"][n], f"B[{n}]"),
                    b=_unvec(t["b"][n], f"b[{n}]"))
           for n in range(N)]

    per = {key: _stage_list(t, key, N)
           for key in ("Q", "S", "R", "q", "r", "idxbu", "idxbx", "D", "C",
                       "lb", "ub", "Hq", "gq", "dq", "Zl", "Zu", "zl", "zu",
                       "sl_min", "su_min", "soft_map", "mask_lo", "mask_up")}

    stages = []
    nbu, nbx, ng, nq, ns = [], [], [], [], []
    for n in range(N + 1):
        cost = StageCost(R=_unmat(per["R"][n], f"R[{n}]"),
                         S=_unmat(per["S"][n], f"S[{n}]"),
                         Q=_unmat(per["Q"][n], f"Q[{n}]"),
                         r=_unvec(per["r"][n], f"r[{n}]"),
                         q=_unvec(per["q"][n], f"q[{n}]"))
        lb = _unvec(per["lb"][n], f"lb[{n}]")
        ub = _unvec(per["ub"][n], f"ub[{n}]")
        idxbu_n = _unints(per["idxbu"][n], f"idxbu[{n}]")
        idxbx_n = _unints(per["idxbx"][n], f"idxbx[{n}]")
        D_n = _unmat(per["D"][n], f"D[{n}]")
        n_rows = idxbu_n.size + idxbx_n.size + D_n.shape[0]
        if lb.size != n_rows:
            raise ValueError(f"lb[{n}]: expected {n_rows} rows, "
                             f"got {lb.size}")
        ineq = StageIneq(
            idxbu=idxbu_n, idxbx=idxbx_n,
            D=D_n,
            C=_unmat(per["C"][n], f"C[{n}]"),
            lb=lb, ub=ub,
            soft_map=_unints(per["soft_map"][n], f"soft_map[{n}]"),
            mask_lo=_unbools(per["mask_lo"][n], f"mask_lo[{n}]"),
            mask_up=_unbools(per["mask_up"][n], f"mask_up[{n}]"),
            eq_mark=_eq_marks(lb, ub))
        quads = []
        for k, hnode in enumerate(per["Hq"][n]):
            H = _unmat(hnode, f"Hq[{n}][{k}]")
            g = _unvec(per["gq"][n][k], f"gq[{n}][{k}]")
            m = int(nu[n])
            quads.append(StageQuad(
                R=H[:m, :m], S=H[:m, m:], Q=H[m:, m:],
                r=g[:m], q=g[m:],
                ub=_tonum(per["dq"][n][k], f"dq[{n}][{k}]")))
        slack = StageSlack(
            Zl=_unvec(per["Zl"][n], f"Zl[{n}]"),
            Zu=_unvec(per["Zu"][n], f"Zu[{n}]"),
            zl=_unvec(per["zl"][n], f"zl[{n}]"),
            zu=_unvec(per["zu"][n], f"zu[{n}]"),
            sl_min=_unvec(per["sl_min"][n], f"sl_min[{n}]"),
            su_min=_unvec(per["su_min"][n], f"su_min[{n}]"))
        stages.append(OcpStage(cost=cost, ineq=ineq, quads=quads,
                               slack=slack))
        nbu.append(ineq.idxbu.size)
        nbx.append(ineq.idxbx.size)
        ng.append(ineq.D.shape[0])
        nq.append(len(quads))
        ns.append(slack.Zl.size)

    dims = OcpDims(N=N, nx=nx, nu=nu,
                   nbu=np.asarray(nbu), nbx=np.asarray(nbx),
                   ng=np.asarray(ng), nq=np.asarray(nq),
                   ns=np.asarray(ns))
    x0 = _unvec(t["x0"], "x0") if "x0" in t else None
    return OcpQcqp(dims=dims, dyn=dyn, stages=stages, x0=x0)


# -- public API ------------------------------------------------------------------

def problem_to_tree(problem) -> dict:
    if isinstance(problem, DenseQcqp):
        return _dense_tree(problem)
    if isinstance(problem, OcpQcqp):
        return _ocp_tree(problem)
    raise TypeError(f"not a problem object: {type(problem)!r}")


def problem_from_tree(tree: dict):
    if not isinstance(tree, dict) or "kind" not in tree:
        raise ValueError("problem file must be a mapping with a `kind` key")
    kind = tree["kind"]
    if kind == "dense":
        p = _dense_from_tree(tree)
    elif kind == "ocp":
        p = _ocp_from_tree(tree)
    else:
        raise ValueError(f"unknown problem kind {kind!r}")
    report = validate(p)
    if not report.ok:
        raise ValueError("problem file failed validation:\n  "
                         + "\n  ".join(report.findings))
    return p.freeze()


def save_problem(problem, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(problem_to_tree(problem), fh, sort_keys=False)


def load_problem(path):
    with open(path) as fh:
        tree = yaml.safe_load(fh)
    return problem_from_tree(tree)
