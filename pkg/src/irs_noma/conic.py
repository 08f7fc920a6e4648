"""Complex Hermitian conic problems lowered to a real interior-point solver.

Upstream modules describe their programs with :class:`Affine` expressions,
which are complex arrays depending affinely on real decision variables.
:class:`ConicProblem` collects a linear objective, equalities,
inequalities, second-order cones and Hermitian LMIs, realifies the LMIs
with the standard ``[[Re, -Im], [Im, Re]]`` embedding and hands the result
to Clarabel or, for large LMIs, to CVXOPT with a Schur-complement KKT solver.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import clarabel
import cvxopt
import cvxopt.solvers
import numpy as np
import scipy.linalg
import scipy.sparse as sp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical_failure"

# real LMI size from which "auto" prefers the Schur-complement backend
AUTO_CVXOPT_DIM = 30
# CVXOPT iterates that stop short of the full tolerances are accepted at
# these looser levels, mirroring Clarabel's "AlmostSolved"
_CVXOPT_REDUCED = {"primal infeasibility": 1e-4, "dual infeasibility": 1e-4, "relative gap": 5e-5}
# under "auto", CVXOPT gets this many iterations before Clarabel takes over
AUTO_CVXOPT_ITERS = 50
_CLARABEL_RETRIES = ({}, {"equilibrate_enable": False}, {"static_regularization_constant": 1e-7})

_STATUS_MAP = {
    "Solved": OPTIMAL,
    "AlmostSolved": OPTIMAL,
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
}


class Affine:
    """Array-valued affine function of real decision variables.

    ``const`` has the expression shape ``S``; ``terms`` maps a variable name
    to a coefficient array of shape ``(n_var,) + S`` so that the value is
    ``const + sum_k x[k] * terms[name][k]``.
    """

    __array_priority__ = 1000

    def __init__(self, const, terms=None):
        self.const = np.asarray(const, dtype=complex)
        self.terms = {} if terms is None else terms

    @property
    def shape(self):
        return self.const.shape

    @property
    def ndim(self):
        return self.const.ndim

    def __repr__(self):
        return f"Affine(shape={self.shape}, vars={sorted(self.terms)})"

    def _map(self, fn):
        return Affine(fn(self.const, False),
                      {k: fn(c, True) for k, c in self.terms.items()})

    def __neg__(self):
        return self._map(lambda a, _: -a)

    def __add__(self, other):
        if isinstance(other, Affine):
            shape = np.broadcast_shapes(self.shape, other.shape)
            terms = {k: _bcast(c, shape) for k, c in self.terms.items()}
            for k, c in other.terms.items():
                c = _bcast(c, shape)
                terms[k] = terms[k] + c if k in terms else c
            return Affine(self.const + other.const, terms)
        other = np.asarray(other, dtype=complex)
        shape = np.broadcast_shapes(self.shape, other.shape)
        return Affine(self.const + other,
                      {k: _bcast(c, shape) for k, c in self.terms.items()})

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Affine):
            raise TypeError("product of two affine expressions is not affine")
        other = np.asarray(other)
        shape = np.broadcast_shapes(self.shape, other.shape)
        return Affine(self.const * other,
                      {k: _bcast(c, shape) * other for k, c in self.terms.items()})

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * (1.0 / np.asarray(other))

    def __matmul__(self, other):
        if isinstance(other, Affine):
            raise TypeError("product of two affine expressions is not affine")
        other = np.asarray(other)
        return self._map(lambda a, _: a @ other)

    def __rmatmul__(self, other):
        other = np.asarray(other)

        def left(a, has_var_axis):
            if has_var_axis and a.ndim == 2:
                return (other @ a.T).T
            return other @ a

        return self._map(left)

    def __getitem__(self, key):
        if not isinstance(key, tuple):
            key = (key,)
        return Affine(self.const[key],
                      {k: c[(slice(None),) + key] for k, c in self.terms.items()})

    @property
    def T(self):
        return self._map(lambda a, v: np.swapaxes(a, -1, -2))

    def conj(self):
        return self._map(lambda a, _: a.conj())

    @property
    def H(self):
        return self.T.conj()

    @property
    def real(self):
        return self._map(lambda a, _: a.real.astype(complex))

    def trace(self):
        return self._map(lambda a, _: np.trace(a, axis1=-2, axis2=-1))

    def sum(self):
        return self._map(lambda a, v: a.reshape(a.shape[0], -1).sum(axis=1) if v else a.sum())

    def value(self, values):
        """Evaluate at ``values``: a mapping from variable name to its real vector."""
        out = self.const.copy()
        for k, c in self.terms.items():
            out = out + np.tensordot(np.asarray(values[k], dtype=float), c, axes=1)
        return out

    def is_hermitian(self, tol=1e-12):
        if self.ndim != 2 or self.shape[0] != self.shape[1]:
            return False
        scale = max(1.0, np.abs(self.const).max(initial=0.0))
        if np.abs(self.const - self.const.conj().T).max(initial=0.0) > tol * scale:
            return False
        for c in self.terms.values():
            scale = max(1.0, np.abs(c).max(initial=0.0))
            if np.abs(c - np.conj(np.swapaxes(c, 1, 2))).max(initial=0.0) > tol * scale:
                return False
        return True


def _bcast(coef, shape):
    return np.broadcast_to(coef, coef.shape[:1] + tuple(shape)) if coef.shape[1:] != tuple(shape) \
        else coef


def as_affine(x):
    return x if isinstance(x, Affine) else Affine(x)


def bmat(blocks):
    """Block matrix of :class:`Affine` expressions and constant arrays."""
    blocks = [[_as_block(b) for b in row] for row in blocks]
    names = sorted({k for row in blocks for b in row for k in b.terms})
    sizes = {}
    for row in blocks:
        for b in row:
            for k, c in b.terms.items():
                sizes[k] = c.shape[0]
    const = np.block([[b.const for b in row] for row in blocks])
    terms = {}
    for k in names:
        n = sizes[k]
        terms[k] = np.concatenate([
            np.concatenate([b.terms[k] if k in b.terms
                            else np.zeros((n,) + b.shape, dtype=complex) for b in row], axis=2)
            for row in blocks], axis=1)
    return Affine(const, terms)


def _as_block(x):
    x = as_affine(x)
    if x.ndim == 0:
        return Affine(x.const.reshape(1, 1), {k: c.reshape(-1, 1, 1) for k, c in x.terms.items()})
    return x


def stack(items):
    """1-D expression from a sequence of scalar expressions or numbers."""
    items = [as_affine(e) for e in items]
    const = np.array([e.const for e in items], dtype=complex).reshape(len(items))
    sizes = {k: c.shape[0] for e in items for k, c in e.terms.items()}
    terms = {}
    for k, n in sizes.items():
        terms[k] = np.stack([e.terms[k].reshape(n) if k in e.terms else np.zeros(n, dtype=complex)
                             for e in items], axis=1)
    return Affine(const, terms)


def realify(H):
    """Real symmetric embedding ``[[Re H, -Im H], [Im H, Re H]]``.

    Accepts a Hermitian constant matrix or a Hermitian :class:`Affine`;
    the embedding is PSD exactly when ``H`` is.
    """
    if isinstance(H, Affine):
        if not H.is_hermitian(1e-9):
            raise ValueError("LMI expression is not Hermitian")
        return H._map(lambda a, v: _realify_array(a))
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1] or not np.allclose(H, H.conj().T, atol=1e-12):
        raise ValueError("realify expects a Hermitian matrix")
    return _realify_array(H).real


def _realify_array(a):
    re, im = a.real, a.imag
    top = np.concatenate([re, -im], axis=-1)
    bottom = np.concatenate([im, re], axis=-1)
    return np.concatenate([top, bottom], axis=-2).astype(complex)


def unrealify(R):
    """Inverse of :func:`realify` on a real symmetric 2n x 2n matrix."""
    n = R.shape[0] // 2
    return R[:n, :n] + 1j * R[n:, :n]


def _svec_index(n):
    cols, rows = [], []
    for j in range(n):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
    rows, cols = np.array(rows), np.array(cols)
    scale = np.where(rows == cols, 1.0, np.sqrt(2.0))
    return rows, cols, scale


@dataclass
class _Var:
    name: str
    kind: str  # "herm" or "real"
    shape: tuple
    offset: int
    size: int


@dataclass
class ConicSolution:
    status: str
    values: dict = field(default_factory=dict)
    objective: float = float("nan")
    residual: float = float("nan")
    raw_status: str = ""
    iterations: int = 0
    solve_time: float = 0.0
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def ok(self):
        return self.status == OPTIMAL

    def __getitem__(self, name):
        return self.values[name]


class ConicProblem:
    """Linear objective over Hermitian and real variables with conic constraints.

    Examples
    --------
    >>> prob = ConicProblem()
    >>> W = prob.hermitian("W", 2)
    >>> prob.add_psd(W)
    >>> prob.add_nonneg(W.trace() - 1)
    >>> prob.minimize(W.trace())
    >>> round(prob.solve().objective, 6)
    1.0
    """

    def __init__(self):
        self._vars = {}
        self._n = 0
        self._eq = []
        self._ineq = []
        self._soc = []
        self._lmi = []
        self._objective = Affine(0.0)

    # variables ------------------------------------------------------------
    def hermitian(self, name, n):
        """Declare an n x n Hermitian variable, parameterized by n**2 reals."""
        basis = np.zeros((n * n, n, n), dtype=complex)
        k = 0
        for m in range(n):
            basis[k, m, m] = 1.0
            k += 1
        for m in range(n):
            for l in range(m + 1, n):
                basis[k, m, l] = basis[k, l, m] = 1.0
                basis[k + 1, m, l] = 1j
                basis[k + 1, l, m] = -1j
                k += 2
        self._declare(name, "herm", (n, n), n * n)
        return Affine(np.zeros((n, n)), {name: basis})

    def real(self, name, shape=()):
        shape = tuple(np.atleast_1d(shape)) if shape != () else ()
        size = int(np.prod(shape)) if shape else 1
        basis = np.eye(size, dtype=complex).reshape((size,) + shape)
        self._declare(name, "real", shape, size)
        return Affine(np.zeros(shape), {name: basis})

    def _declare(self, name, kind, shape, size):
        if name in self._vars:
            raise ValueError(f"variable {name!r} declared twice")
        self._vars[name] = _Var(name, kind, shape, self._n, size)
        self._n += size

    # constraints ----------------------------------------------------------
    def add_eq(self, expr):
        self._eq.append(_real_rows(expr))

    def add_nonneg(self, expr):
        self._ineq.append(_real_rows(expr))

    def add_soc(self, t, x):
        """Second-order cone ``||x||_2 <= t`` with real affine ``t`` and vector ``x``."""
        t = _real_rows(t)
        x = _real_rows(x)
        self._soc.append(_vstack_rows([t, x]))

    def add_psd(self, H):
        """Hermitian LMI ``H >= 0``."""
        H = as_affine(H)
        if H.shape == (1, 1):
            self.add_nonneg(H[0, 0].real)
            return
        R = realify(H)
        n = R.shape[0]
        rows, cols, scale = _svec_index(n)
        const = R.const.real[rows, cols] * scale
        terms = {k: c.real[:, rows, cols] * scale for k, c in R.terms.items()}
        self._lmi.append((n, (const, terms), H))

    def minimize(self, expr):
        expr = as_affine(expr)
        if expr.shape != ():
            raise ValueError("objective must be scalar")
        self._objective = expr

    def maximize(self, expr):
        self.minimize(-as_affine(expr))

    # lowering -------------------------------------------------------------
    def _matrix(self, blocks):
        consts, mats = [], []
        for const, terms in blocks:
            m = const.shape[0]
            A = np.zeros((m, self._n))
            for k, c in terms.items():
                v = self._vars[k]
                A[:, v.offset:v.offset + v.size] = c.T
            consts.append(const)
            mats.append(A)
        return consts, mats

    def lower(self):
        """Return ``(q, A, b, cones, offset)`` in Clarabel's ``Ax + s = b`` form."""
        groups = []
        cones = []
        if self._eq:
            rows = _vstack_rows(self._eq)
            groups.append(rows)
            cones.append(clarabel.ZeroConeT(rows[0].shape[0]))
        if self._ineq:
            rows = _vstack_rows(self._ineq)
            groups.append(rows)
            cones.append(clarabel.NonnegativeConeT(rows[0].shape[0]))
        for rows in self._soc:
            groups.append(rows)
            cones.append(clarabel.SecondOrderConeT(rows[0].shape[0]))
        for n, rows, _ in self._lmi:
            groups.append(rows)
            cones.append(clarabel.PSDTriangleConeT(n))
        consts, mats = self._matrix(groups)
        b = np.concatenate(consts) if consts else np.zeros(0)
        A = -np.vstack(mats) if mats else np.zeros((0, self._n))
        q = np.zeros(self._n)
        obj = self._objective
        for k, c in obj.terms.items():
            v = self._vars[k]
            q[v.offset:v.offset + v.size] = c.real
        return q, A, b, cones, float(obj.const.real)

    def solve(self, tol=1e-8, max_iter=200, verbose=False, backend="auto"):
        """Solve and return a :class:`ConicSolution`.

        ``backend`` is ``"clarabel"``, ``"cvxopt"`` or ``"auto"``. Clarabel
        factors the full KKT system, which fills in for large dense LMIs;
        CVXOPT reduces to a Schur complement in the decision variables and
        wins there. ``"auto"`` routes problems whose largest real LMI has at
        least ``AUTO_CVXOPT_DIM`` rows to CVXOPT and falls back to Clarabel
        when CVXOPT stalls.
        """
        if backend not in ("auto", "clarabel", "cvxopt"):
            raise ValueError(f"unknown backend {backend!r}")
        if backend == "auto":
            big = max((2 * H.shape[0] for _, _, H in self._lmi), default=0)
            backend = "cvxopt" if big >= AUTO_CVXOPT_DIM else "clarabel"
            if backend == "cvxopt":
                sol = self._solve_cvxopt(tol, min(max_iter, AUTO_CVXOPT_ITERS), verbose)
                if sol.status != NUMERICAL_FAILURE:
                    return sol
                backend = "clarabel"
        if backend == "cvxopt":
            return self._solve_cvxopt(tol, max_iter, verbose)
        return self._solve_clarabel(tol, max_iter, verbose)

    def _finish(self, sol, x, tol):
        sol.values = self._unpack(x)
        sol.raw = self.raw_values(x)
        q = self.lower_objective()
        sol.objective = float(q[0] @ x + q[1])
        sol.residual = self.residual(x)
        scale = max([1.0] + [np.abs(r[0]).max(initial=0.0) for r in self._ineq + self._eq])
        # an "optimal" point far outside the cones is a solver failure, not an answer
        if sol.residual < -1e3 * tol * scale or self.eq_residual(x) > 1e3 * tol * scale:
            sol.status = NUMERICAL_FAILURE
        return sol

    def lower_objective(self):
        q = np.zeros(self._n)
        for k, c in self._objective.terms.items():
            v = self._vars[k]
            q[v.offset:v.offset + v.size] = c.real
        return q, float(self._objective.const.real)

    def _solve_clarabel(self, tol, max_iter, verbose):
        q, A, b, cones, offset = self.lower()
        A = sp.csc_matrix(A)
        P = sp.csc_matrix((self._n, self._n))
        t0 = time.perf_counter()
        # badly scaled instances occasionally break the first factorization;
        # retry without equilibration, then with stronger regularization
        for retry in _CLARABEL_RETRIES:
            settings = clarabel.DefaultSettings()
            settings.verbose = verbose
            settings.tol_feas = tol
            settings.tol_gap_abs = tol
            settings.tol_gap_rel = tol
            settings.max_iter = max_iter
            # the LMIs here are small and dense; splitting them only adds cones
            settings.chordal_decomposition_enable = False
            settings.iterative_refinement_enable = False
            for k, v in retry.items():
                setattr(settings, k, v)
            raw = clarabel.DefaultSolver(P, q, A, b, cones, settings).solve()
            name = str(raw.status).split(".")[-1]
            status = _STATUS_MAP.get(name, NUMERICAL_FAILURE)
            sol = ConicSolution(status=status, raw_status=name, iterations=int(raw.iterations),
                                solve_time=time.perf_counter() - t0)
            if status == OPTIMAL:
                sol = self._finish(sol, np.asarray(raw.x), tol)
            if sol.status != NUMERICAL_FAILURE:
                return sol
        return sol

    def _rows_matrix(self, rows):
        const, terms = rows
        G = np.zeros((const.shape[0], self._n))
        for k, c in terms.items():
            v = self._vars[k]
            G[:, v.offset:v.offset + v.size] = c.T
        return const, G

    def lower_cvxopt(self):
        """``(c, G, h, dims, A, b)`` for ``cvxopt.solvers.conelp``.

        Rows without variables are checked here and dropped; a violated one
        makes the problem infeasible and ``None`` is returned.
        """
        n = self._n
        hs, Gs = [], []
        dims = {"l": 0, "q": [], "s": []}

        def keep(const, G, eq):
            live = np.abs(G).max(axis=1, initial=0.0) > 0
            dead = const[~live]
            bad = np.abs(dead) > 1e-9 if eq else dead < -1e-9
            return live, bool(bad.any())

        if self._ineq:
            const, G = self._rows_matrix(_vstack_rows(self._ineq))
            live, bad = keep(const, G, False)
            if bad:
                return None
            hs.append(const[live])
            Gs.append(-G[live])
            dims["l"] = int(live.sum())
        for rows in self._soc:
            const, G = self._rows_matrix(rows)
            hs.append(const)
            Gs.append(-G)
            dims["q"].append(const.shape[0])
        for _, _, H in self._lmi:
            R = realify(H)
            m = R.shape[0]
            G = np.zeros((m * m, n))
            for k, c in R.terms.items():
                v = self._vars[k]
                # column-major vec of each coefficient matrix
                G[:, v.offset:v.offset + v.size] = np.swapaxes(c.real, 1, 2).reshape(v.size, -1).T
            hs.append(R.const.real.T.reshape(-1))
            Gs.append(-G)
            dims["s"].append(m)
        A = b = None
        if self._eq:
            const, G = self._rows_matrix(_vstack_rows(self._eq))
            live, bad = keep(const, G, True)
            if bad:
                return None
            if live.any():
                A, b = G[live], -const[live]
        c, _ = self.lower_objective()
        G = np.vstack(Gs) if Gs else np.zeros((0, n))
        h = np.concatenate(hs) if hs else np.zeros(0)
        return c, G, h, dims, A, b

    def _solve_cvxopt(self, tol, max_iter, verbose):
        t0 = time.perf_counter()
        lowered = self.lower_cvxopt()
        if lowered is None:
            return ConicSolution(status=INFEASIBLE, raw_status="constant row violated")
        c, G, h, dims, A, b = lowered
        opts = {"show_progress": verbose, "abstol": tol, "reltol": tol, "feastol": tol,
                "maxiters": max_iter}
        dense_G = G
        args = [cvxopt.matrix(c), cvxopt.matrix(G), cvxopt.matrix(h), dims]
        if A is not None:
            args += [cvxopt.matrix(A), cvxopt.matrix(b)]
        try:
            raw = cvxopt.solvers.conelp(*args, options=opts,
                                        kktsolver=_dense_kktsolver(dense_G, A, dims))
        except (ValueError, ArithmeticError) as exc:
            return ConicSolution(status=NUMERICAL_FAILURE, raw_status=str(exc),
                                 solve_time=time.perf_counter() - t0)
        elapsed = time.perf_counter() - t0
        name = raw["status"]
        status = {"optimal": OPTIMAL, "primal infeasible": INFEASIBLE}.get(name, NUMERICAL_FAILURE)
        if name == "unknown" and raw["x"] is not None and all(
                raw[k] is not None and raw[k] <= v for k, v in _CVXOPT_REDUCED.items()):
            # stalled on dual accuracy with a usable primal point
            status, name = OPTIMAL, "unknown (reduced tolerances met)"
        sol = ConicSolution(status=status, raw_status=name, iterations=int(raw["iterations"]),
                            solve_time=elapsed)
        if status != OPTIMAL:
            return sol
        return self._finish(sol, np.asarray(raw["x"]).reshape(-1), tol)

    def _unpack(self, x):
        out = {}
        for v in self._vars.values():
            seg = x[v.offset:v.offset + v.size]
            if v.kind == "herm":
                n = v.shape[0]
                out[v.name] = self._herm_from_vec(seg, n)
            else:
                out[v.name] = seg.reshape(v.shape) if v.shape else float(seg[0])
        return out

    @staticmethod
    def _herm_from_vec(seg, n):
        W = np.zeros((n, n), dtype=complex)
        W[np.diag_indices(n)] = seg[:n]
        k = n
        for m in range(n):
            for l in range(m + 1, n):
                W[m, l] = seg[k] + 1j * seg[k + 1]
                W[l, m] = seg[k] - 1j * seg[k + 1]
                k += 2
        return W

    def raw_values(self, x):
        return {v.name: x[v.offset:v.offset + v.size] for v in self._vars.values()}

    def eq_residual(self, x):
        """Largest absolute violation of the equality constraints at ``x``."""
        vals = self.raw_values(x)
        return max((float(np.abs(_eval_rows(r, vals)).max(initial=0.0)) for r in self._eq),
                   default=0.0)

    def residual(self, x):
        """Most negative cone slack at ``x`` (LMI eigenvalues, inequalities, SOCs)."""
        vals = self.raw_values(x)
        worst = np.inf
        for rows in self._ineq:
            worst = min(worst, _eval_rows(rows, vals).min(initial=np.inf))
        for rows in self._soc:
            s = _eval_rows(rows, vals)
            worst = min(worst, s[0] - np.linalg.norm(s[1:]))
        for _, _, H in self._lmi:
            M = H.value(vals)
            worst = min(worst, np.linalg.eigvalsh(0.5 * (M + M.conj().T))[0])
        return float(worst)

    def dump(self, path):
        """Write the lowered problem as a plain-text coordinate listing.

        Layout: a ``%`` header, ``n m`` sizes, one ``cone <kind> <dim>`` line
        per cone block, then ``c``, ``b`` and ``A`` sections holding
        ``index value`` (vectors) or ``row col value`` (matrix) entries,
        1-based.
        """
        q, A, b, cones, offset = self.lower()
        A = sp.coo_matrix(A)
        with open(path, "w") as fh:
            fh.write("%%irs_noma conic problem: minimize c'x s.t. Ax + s = b, s in K\n")
            fh.write(f"{A.shape[1]} {A.shape[0]}\n")
            fh.write(f"offset {offset!r}\n")
            for cone in cones:
                kind = type(cone).__name__.replace("ConeT", "")
                fh.write(f"cone {kind} {cone.dim if hasattr(cone, 'dim') else ''}\n")
            fh.write("c\n")
            for i, v in enumerate(q):
                if v != 0:
                    fh.write(f"{i + 1} {v!r}\n")
            fh.write("b\n")
            for i, v in enumerate(b):
                if v != 0:
                    fh.write(f"{i + 1} {v!r}\n")
            fh.write("A\n")
            for r, c, v in zip(A.row, A.col, A.data):
                fh.write(f"{r + 1} {c + 1} {v!r}\n")


def _scale_inv_t(W, dims, X, symmetric=False):
    """Apply ``W^{-T}`` of a CVXOPT scaling to the columns of ``X`` (rows = cone entries).

    PSD blocks are column-major ``m x m`` matrices. CVXOPT only maintains
    their lower triangles, so they are symmetrized first unless
    ``symmetric`` says the input is already full.
    """
    out = np.empty_like(X)
    ncol = X.shape[1]
    k = dims["l"]
    out[:k] = np.asarray(W["di"]).reshape(-1)[:, None] * X[:k]
    for v, beta, m in zip(W["v"], W["beta"], dims["q"]):
        Jv = np.asarray(v).reshape(-1).copy()
        Jv[1:] *= -1
        blk = X[k:k + m]
        JX = blk.copy()
        JX[1:] *= -1
        out[k:k + m] = (2 * np.outer(Jv, Jv @ blk) - JX) / beta
        k += m
    for rti, m in zip(W["rti"], dims["s"]):
        R = np.asarray(rti)
        mats = X[k:k + m * m].T.reshape(ncol, m, m)
        if not symmetric:
            # entry (i, j) of the stored column-major block sits at mats[:, j, i]
            low = np.tril(np.swapaxes(mats, 1, 2))
            mats = low + np.swapaxes(np.tril(low, -1), 1, 2)
        # R^T X_c R for every column c as two plain matrix products
        Y = R.T @ mats.transpose(1, 0, 2).reshape(m, ncol * m)
        Z = Y.reshape(m, ncol, m).transpose(1, 0, 2).reshape(ncol * m, m) @ R
        out[k:k + m * m] = Z.reshape(ncol, m * m).T
        k += m * m
    return out


def _dense_kktsolver(G, A, dims):
    """KKT solver for ``conelp`` that scales ``G`` with batched dense products.

    Eliminates ``uz`` and solves the reduced saddle system
    ``[[G~^T G~, A^T], [A, 0]]`` with ``G~ = W^{-T} G`` by LU.
    """
    n = G.shape[1]
    p = 0 if A is None else A.shape[0]

    def factor(W):
        Gt = _scale_inv_t(W, dims, G, symmetric=True)
        K = np.zeros((n + p, n + p))
        K[:n, :n] = Gt.T @ Gt
        if p:
            K[:n, n:] = A.T
            K[n:, :n] = A
        lu = scipy.linalg.lu_factor(K, check_finite=False)

        def solve(x, y, z):
            zt = _scale_inv_t(W, dims, np.asarray(z))[:, 0]
            rhs = np.concatenate([np.asarray(x)[:, 0] + Gt.T @ zt, np.asarray(y)[:, 0]])
            sol = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
            ux = sol[:n]
            x[:] = cvxopt.matrix(ux)
            if p:
                y[:] = cvxopt.matrix(sol[n:])
            z[:] = cvxopt.matrix(Gt @ ux - zt)

        return solve

    return factor


def _real_rows(expr):
    """Flatten a real-valued expression into ``(const, {name: coef})`` rows."""
    expr = as_affine(expr)
    const = np.atleast_1d(expr.const).reshape(-1)
    if np.abs(const.imag).max(initial=0.0) > 1e-9 * max(1.0, np.abs(const).max(initial=0.0)):
        raise ValueError("constraint expression has a nonzero imaginary part")
    terms = {}
    for k, c in expr.terms.items():
        c = c.reshape(c.shape[0], -1)
        if np.abs(c.imag).max(initial=0.0) > 1e-9 * max(1.0, np.abs(c).max(initial=0.0)):
            raise ValueError("constraint expression has a nonzero imaginary part")
        terms[k] = c.real
    return const.real, terms


def _vstack_rows(blocks):
    const = np.concatenate([b[0] for b in blocks])
    names = {k: b[1][k].shape[0] for b in blocks for k in b[1]}
    terms = {}
    for k, n in names.items():
        terms[k] = np.concatenate([b[1][k] if k in b[1] else np.zeros((n, b[0].shape[0]))
                                   for b in blocks], axis=1)
    return const, terms


def _eval_rows(rows, vals):
    const, terms = rows
    out = const.copy()
    for k, c in terms.items():
        out = out + vals[k] @ c
    return out
