"""Standard-form conic programs and the solver wrapper.

A :class:`ConicProblem` is

    minimize    c^T x
    subject to  s = b - A x,   s in K_1 x K_2 x ...

with cones of kind ``nonneg``, ``soc`` (``s_0 >= ||s_1:||``), ``rsoc``
(``s_0 * s_1 >= ||s_2:||^2``, ``s_0, s_1 >= 0``) and ``zero`` (equalities).
Problems are assembled with :class:`ConeBuilder`, where every cone block is
written as an affine expression ``G x + h`` that must lie in the cone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import contextlib

import clarabel
import numpy as np
import scipy.sparse as sp

CONE_KINDS = ("zero", "nonneg", "soc", "rsoc")

_recorders = []


@contextlib.contextmanager
def recording():
    """Collect ``(status, residuals)`` of every solve made inside the block."""
    log = []
    _recorders.append(log)
    try:
        yield log
    finally:
        # by identity: nested logs hold equal contents
        _recorders[:] = [r for r in _recorders if r is not log]


class InvalidProblemError(ValueError):
    pass


@dataclass
class Cone:
    kind: str
    dim: int


@dataclass
class ConicProblem:
    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cones: list
    names: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.c)

    def validate(self):
        if self.n < 1:
            raise InvalidProblemError("problem has no variables")
        m = sum(cn.dim for cn in self.cones)
        if self.A.shape != (m, self.n) or self.b.shape != (m,):
            raise InvalidProblemError(
                f"A is {self.A.shape}, b is {self.b.shape}, cones need {m} rows, n={self.n}")
        for cn in self.cones:
            if cn.kind not in CONE_KINDS:
                raise InvalidProblemError(f"unknown cone kind {cn.kind!r}")
            if cn.dim < 1 or (cn.kind == "soc" and cn.dim < 1) or (cn.kind == "rsoc" and cn.dim < 2):
                raise InvalidProblemError(f"bad dimension {cn.dim} for {cn.kind} cone")

    def dump(self, path):
        """Write the problem in a plain-text standard form.

        Layout: a header line ``n m``, the objective ``c`` on one line, the
        cone list as ``kind dim`` lines, then one line per row holding ``b_i``
        followed by ``j:a_ij`` pairs for the nonzeros of that row.
        """
        A = sp.csr_matrix(self.A)
        with open(path, "w") as fh:
            fh.write(f"# minimize c'x  s.t.  b - A x in K\n{self.n} {A.shape[0]}\n")
            fh.write("c " + " ".join(f"{v:.17g}" for v in self.c) + "\n")
            fh.write(f"cones {len(self.cones)}\n")
            for cn in self.cones:
                fh.write(f"{cn.kind} {cn.dim}\n")
            for i in range(A.shape[0]):
                lo, hi = A.indptr[i], A.indptr[i + 1]
                nz = " ".join(f"{j}:{v:.17g}" for j, v in zip(A.indices[lo:hi], A.data[lo:hi]))
                fh.write(f"{self.b[i]:.17g} {nz}".rstrip() + "\n")


def load_dump(path) -> ConicProblem:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    n, m = map(int, lines[0].split())
    c = np.array([float(v) for v in lines[1].split()[1:]])
    ncones = int(lines[2].split()[1])
    cones = []
    for ln in lines[3:3 + ncones]:
        kind, dim = ln.split()
        cones.append(Cone(kind, int(dim)))
    rows, cols, vals, b = [], [], [], np.zeros(m)
    for i, ln in enumerate(lines[3 + ncones:3 + ncones + m]):
        parts = ln.split()
        b[i] = float(parts[0])
        for tok in parts[1:]:
            j, v = tok.split(":")
            rows.append(i)
            cols.append(int(j))
            vals.append(float(v))
    A = sp.csc_matrix((vals, (rows, cols)), shape=(m, n))
    return ConicProblem(c, A, b, cones)


@dataclass
class ConicSolution:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    objective: float
    status: str  # optimal | infeasible | unbounded | max_iter | inaccurate
    residuals: dict
    iterations: int = 0
    solve_time: float = 0.0

    @property
    def ok(self):
        return self.status == "optimal"


# ------------------------------------------------------------ builder ----

class ConeBuilder:
    """Incremental assembly of a :class:`ConicProblem`.

    Variables are allocated with :meth:`var`; a constraint block is passed as
    a dense ``G`` (rows x current n) and offset ``h`` meaning ``G x + h in K``.
    Blocks are zero-padded to the final variable count on :meth:`build`.
    """

    def __init__(self):
        self.n = 0
        self.names = {}
        self._blocks = []
        self.c = {}

    def var(self, size=1, name=None):
        idx = np.arange(self.n, self.n + size)
        self.n += size
        if name is not None:
            self.names[name] = idx
        return idx

    def row(self, terms=(), const=0.0):
        """Dense affine row from ``[(index_or_indices, coef_or_coefs), ...]``."""
        g = np.zeros(self.n)
        for idx, coef in terms:
            np.add.at(g, np.atleast_1d(idx), coef)
        return g, float(const)

    def add(self, kind, G, h):
        G = np.atleast_2d(np.asarray(G, float))
        h = np.atleast_1d(np.asarray(h, float))
        if G.shape[0] != h.shape[0]:
            raise InvalidProblemError("G and h row counts differ")
        if kind not in CONE_KINDS:
            raise InvalidProblemError(f"unknown cone kind {kind!r}")
        self._blocks.append((kind, G, h))

    def nonneg(self, G, h):
        self.add("nonneg", G, h)

    def geq(self, lhs, rhs=(np.zeros(0), 0.0)):
        """Scalar affine ``lhs >= rhs`` with rows given as (g, const) pairs."""
        g1, c1 = lhs
        g2, c2 = rhs
        g = _pad(g1, self.n) - _pad(g2, self.n)
        self.add("nonneg", g[None, :], [c1 - c2])

    def eq(self, lhs, rhs=(np.zeros(0), 0.0)):
        g1, c1 = lhs
        g2, c2 = rhs
        g = _pad(g1, self.n) - _pad(g2, self.n)
        self.add("zero", g[None, :], [c1 - c2])

    def objective(self, idx, coef):
        for i, v in zip(np.atleast_1d(idx), np.broadcast_to(coef, np.shape(np.atleast_1d(idx)))):
            self.c[int(i)] = self.c.get(int(i), 0.0) + float(v)

    def build(self) -> ConicProblem:
        n = self.n
        c = np.zeros(n)
        for i, v in self.c.items():
            c[i] = v
        Gs, hs, cones = [], [], []
        for kind, G, h in self._blocks:
            if G.shape[1] < n:
                G = np.hstack([G, np.zeros((G.shape[0], n - G.shape[1]))])
            Gs.append(G)
            hs.append(h)
            cones.append(Cone(kind, G.shape[0]))
        if Gs:
            G = np.vstack(Gs)
            h = np.concatenate(hs)
        else:
            G, h = np.zeros((0, n)), np.zeros(0)
        # s = G x + h  <=>  s = b - A x with A = -G, b = h
        prob = ConicProblem(c, sp.csc_matrix(-G), h, cones, dict(self.names))
        prob.validate()
        return prob


def _pad(g, n):
    g = np.asarray(g, float)
    if g.shape[0] < n:
        g = np.concatenate([g, np.zeros(n - g.shape[0])])
    return g


def encode_hyperbolic(builder: ConeBuilder, u, v, w):
    """Add ``u * v >= w^2`` (``u, v >= 0``) as a rotated second-order cone.

    ``u`` and ``v`` are affine rows ``(g, const)``; ``w`` is an affine row or a
    list of rows (then ``u v >= ||w||^2``).
    """
    ws = [w] if isinstance(w, tuple) else list(w)
    rows = [u, v] + ws
    G = np.vstack([_pad(g, builder.n) for g, _ in rows])
    h = np.array([c for _, c in rows])
    builder.add("rsoc", G, h)


def encode_cube_bound(builder: ConeBuilder, f, s):
    """Add ``f^3 <= s`` for affine ``f >= 0`` via ``f^2 <= y`` and ``y^2 <= s f``.

    Returns the index of the auxiliary variable ``y``.
    """
    y = builder.var(1)
    one = (np.zeros(builder.n), 1.0)
    encode_hyperbolic(builder, builder.row([(y, 1.0)]), one, f)
    encode_hyperbolic(builder, s, f, builder.row([(y, 1.0)]))
    return y[0]


# ------------------------------------------------------------- solver ----

def _to_clarabel(p: ConicProblem):
    """Map rsoc blocks to soc blocks through the linear map (u+v, u-v, 2w)."""
    A = sp.csr_matrix(p.A)
    blocks_A, blocks_b, cones, T_blocks, Tinv_blocks = [], [], [], [], []
    r = 0
    for cn in p.cones:
        sl = slice(r, r + cn.dim)
        Ab, bb = A[sl], p.b[sl]
        if cn.kind == "rsoc":
            T = sp.lil_matrix((cn.dim, cn.dim))
            T[0, 0], T[0, 1], T[1, 0], T[1, 1] = 1.0, 1.0, 1.0, -1.0
            for i in range(2, cn.dim):
                T[i, i] = 2.0
            T = T.tocsr()
            Ab, bb = T @ Ab, T @ bb
            T_blocks.append(T)
            Ti = sp.lil_matrix((cn.dim, cn.dim))
            Ti[0, 0], Ti[0, 1], Ti[1, 0], Ti[1, 1] = 0.5, 0.5, 0.5, -0.5
            for i in range(2, cn.dim):
                Ti[i, i] = 0.5
            Tinv_blocks.append(Ti.tocsr())
            cones.append(clarabel.SecondOrderConeT(cn.dim))
        else:
            T_blocks.append(sp.identity(cn.dim, format="csr"))
            Tinv_blocks.append(T_blocks[-1])
            if cn.kind == "nonneg":
                cones.append(clarabel.NonnegativeConeT(cn.dim))
            elif cn.kind == "soc":
                cones.append(clarabel.SecondOrderConeT(cn.dim))
            else:
                cones.append(clarabel.ZeroConeT(cn.dim))
        blocks_A.append(Ab)
        blocks_b.append(bb)
        r += cn.dim
    A2 = sp.vstack(blocks_A, format="csc") if blocks_A else sp.csc_matrix((0, p.n))
    b2 = np.concatenate(blocks_b) if blocks_b else np.zeros(0)
    T = sp.block_diag(T_blocks, format="csr") if T_blocks else sp.csr_matrix((0, 0))
    Tinv = sp.block_diag(Tinv_blocks, format="csr") if Tinv_blocks else sp.csr_matrix((0, 0))
    return A2, b2, cones, T, Tinv


def cone_violation(cones, v, dual=False):
    """Largest violation of ``v`` against the cones (dual cones if ``dual``)."""
    worst, r = 0.0, 0
    for cn in cones:
        blk = v[r:r + cn.dim]
        r += cn.dim
        if cn.kind == "zero":
            if not dual:
                worst = max(worst, float(np.max(np.abs(blk))))
        elif cn.kind == "nonneg":
            worst = max(worst, float(-np.min(blk, initial=0.0)))
        elif cn.kind == "soc":
            worst = max(worst, float(np.linalg.norm(blk[1:]) - blk[0]))
        else:
            # the rotated cone u v >= ||w||^2 is self-dual up to the factor 1/2 on w
            scale = 0.5 if dual else 1.0
            u, w_ = blk[0], blk[1]
            rest = scale * np.linalg.norm(blk[2:]) if dual else np.linalg.norm(blk[2:])
            worst = max(worst, float(-min(u, w_)), float(np.hypot(u - w_, 2 * rest) - (u + w_)) / 2)
    return worst


def kkt_residuals(p: ConicProblem, x, y, s):
    """Relative primal, dual and gap residuals of a primal-dual pair.

    Cone-membership violations of ``s`` and ``y`` are folded into the primal
    and dual residuals respectively.
    """
    Ax = p.A @ x
    scale_p = 1.0 + max(np.linalg.norm(p.b, np.inf), np.linalg.norm(Ax, np.inf))
    rp = max(np.linalg.norm(Ax + s - p.b, np.inf), cone_violation(p.cones, s)) / scale_p
    Aty = p.A.T @ y
    scale_d = 1.0 + max(np.linalg.norm(p.c, np.inf), np.linalg.norm(Aty, np.inf))
    rd = max(np.linalg.norm(Aty + p.c, np.inf), cone_violation(p.cones, y, dual=True)) / scale_d
    pobj, dobj = float(p.c @ x), float(-p.b @ y)
    gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    return {"primal": float(rp), "dual": float(rd), "gap": float(gap)}


_STATUS = {
    "Solved": "optimal",
    "AlmostSolved": "inaccurate",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
    "AlmostDualInfeasible": "unbounded",
    "MaxIterations": "max_iter",
    "MaxTime": "max_iter",
}


# settings tried in turn when a solve misses the residual threshold
_RETRY = (
    {},
    {"equilibrate_enable": False, "iterative_refinement_reltol": 1e-15,
     "iterative_refinement_abstol": 1e-15, "iterative_refinement_max_iter": 50},
    {"static_regularization_constant": 1e-10},
)


def _clarabel_once(p, A2, b2, cones, T, Tinv, tol, max_iter, extra):
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.tol_ktratio = 1e-7
    settings.presolve_enable = False
    for key, val in extra.items():
        setattr(settings, key, val)
    P = sp.csc_matrix((p.n, p.n))
    sol = clarabel.DefaultSolver(P, np.asarray(p.c, float), A2, b2, cones, settings).solve()
    x = np.asarray(sol.x)
    status = _STATUS.get(str(sol.status).split(".")[-1], "max_iter")
    # back to the original cone coordinates: s2 = T s, y = T^T z2
    z2, s2 = np.asarray(sol.z), np.asarray(sol.s)
    y = T.T @ z2 if T.shape[0] else z2
    s = Tinv @ s2 if T.shape[0] else s2
    res = kkt_residuals(p, x, y, s)
    # the slack implied by x is exact in the equality; keep it if it is a better certificate
    s_x = p.b - p.A @ x
    res_x = kkt_residuals(p, x, y, s_x)
    if max(res_x.values()) < max(res.values()):
        s, res = s_x, res_x
    if status in ("optimal", "inaccurate"):
        status = "optimal" if max(res.values()) < max(tol, 1e-7) else "inaccurate"
    return ConicSolution(x=x, y=y, s=s, objective=float(p.c @ x), status=status,
                         residuals=res, iterations=int(sol.iterations),
                         solve_time=float(sol.solve_time))


def _rank(sol):
    order = {"optimal": 0, "inaccurate": 1, "infeasible": 2, "unbounded": 2}
    return order.get(sol.status, 3), max(sol.residuals.values())


def solve(p: ConicProblem, tol=1e-8, max_iter=200) -> ConicSolution:
    """Solve ``p`` with a primal-dual interior-point method (Clarabel).

    The returned status is ``optimal`` only when the independently computed
    KKT residuals are all below ``max(tol, 1e-7)``. Solves that miss this
    are repeated with stricter linear-algebra settings and the pair with the
    smallest residual is kept.
    """
    p.validate()
    A2, b2, cones, T, Tinv = _to_clarabel(p)
    best = None
    for extra in _RETRY:
        sol = _clarabel_once(p, A2, b2, cones, T, Tinv, tol, max_iter, extra)
        if best is None or _rank(sol) < _rank(best):
            best = sol
        if best.status in ("optimal", "infeasible", "unbounded"):
            break
    for rec in _recorders:
        rec.append((best.status, best.residuals))
    return best
