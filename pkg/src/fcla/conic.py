"""Small dense primal-dual interior-point solver for mixed cone programs.

Problems are posed in the inequality form

    minimize    c^T x
    subject to  G x + s = h,   A x = b,   s in K

where ``K`` is a product of a nonnegative orthant, second-order cones and
positive semidefinite cones of real symmetric matrices.  Hermitian PSD
constraints enter through the real embedding ``[[Re H, -Im H], [Im H, Re H]]``
built by :func:`complex_to_real_embedding` / :func:`hermitian_basis`.

The iteration is a homogeneous self-dual embedding with Nesterov-Todd scaling
and a Mehrotra predictor-corrector, so primal or dual infeasibility is
reported with a certificate instead of stalling.  Symmetric-matrix blocks are
stored as ``svec`` (lower triangle, off-diagonals scaled by sqrt(2)) so the
Euclidean inner product of two slacks equals the trace inner product.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

SQRT2 = np.sqrt(2.0)

OPTIMAL = "optimal"
PRIMAL_INFEASIBLE = "primal_infeasible"
DUAL_INFEASIBLE = "dual_infeasible"
MAX_ITERATIONS = "max_iterations"
STALLED = "stalled"
STALL_WINDOW = 20


# ---------------------------------------------------------------------------
# Hermitian helpers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HermitianMatrix:
    """Hermitian matrix stored as its packed upper triangle (row-major)."""

    n: int
    packed: np.ndarray

    @classmethod
    def from_dense(cls, H) -> "HermitianMatrix":
        H = np.asarray(H, dtype=complex)
        n = H.shape[0]
        if H.shape != (n, n):
            raise ValueError("expected a square matrix")
        H = 0.5 * (H + H.conj().T)
        iu = np.triu_indices(n)
        return cls(n, H[iu].copy())

    def to_dense(self) -> np.ndarray:
        iu = np.triu_indices(self.n)
        H = np.zeros((self.n, self.n), dtype=complex)
        H[iu] = self.packed
        H = H + np.triu(H, 1).conj().T
        H[np.diag_indices(self.n)] = H.diagonal().real
        return H


def _dense(H) -> np.ndarray:
    if isinstance(H, HermitianMatrix):
        return H.to_dense()
    return np.asarray(H)


def min_eig(H) -> float:
    """Smallest eigenvalue of a Hermitian (or real symmetric) matrix."""
    H = _dense(H)
    H = 0.5 * (H + H.conj().T)
    return float(np.linalg.eigvalsh(H)[0])


def complex_to_real_embedding(H) -> np.ndarray:
    """Return ``[[Re H, -Im H], [Im H, Re H]]`` (size 2n, real symmetric)."""
    H = _dense(H)
    re, im = H.real, H.imag
    return np.block([[re, -im], [im, re]])


def real_embedding_to_complex(S: np.ndarray) -> np.ndarray:
    """Hermitian matrix nearest (in Frobenius norm) to a real 2n embedding.

    Averaging the two diagonal and the two off-diagonal blocks is the
    orthogonal projection onto embeddings, and it maps PSD matrices to PSD
    matrices.
    """
    n = S.shape[0] // 2
    a, b = S[:n, :n], S[:n, n:]
    c, d = S[n:, :n], S[n:, n:]
    re = 0.5 * (a + d)
    im = 0.5 * (c - b)
    H = re + 1j * im
    return 0.5 * (H + H.conj().T)


def hermitian_basis(n: int) -> np.ndarray:
    """Real basis of n x n Hermitian matrices, shape ``(n*n, n, n)``.

    Order: diagonal entries, then real parts of the strict upper triangle,
    then imaginary parts (``B[i,j] = 1j``, ``B[j,i] = -1j``).
    """
    basis = np.zeros((n * n, n, n), dtype=complex)
    k = 0
    for i in range(n):
        basis[k, i, i] = 1.0
        k += 1
    iu = list(zip(*np.triu_indices(n, 1)))
    for i, j in iu:
        basis[k, i, j] = basis[k, j, i] = 1.0
        k += 1
    for i, j in iu:
        basis[k, i, j] = 1j
        basis[k, j, i] = -1j
        k += 1
    return basis


def hermitian_from_params(params: np.ndarray, n: int) -> np.ndarray:
    """Inverse of :func:`hermitian_params` (coordinates in :func:`hermitian_basis`)."""
    params = np.asarray(params, dtype=float)
    H = np.zeros((n, n), dtype=complex)
    H[np.diag_indices(n)] = params[:n]
    iu = np.triu_indices(n, 1)
    m = len(iu[0])
    H[iu] = params[n:n + m] + 1j * params[n + m:n + 2 * m]
    H[(iu[1], iu[0])] = np.conj(H[iu])
    return H


def hermitian_params(H: np.ndarray) -> np.ndarray:
    n = H.shape[0]
    iu = np.triu_indices(n, 1)
    return np.concatenate([H.diagonal().real, H[iu].real, H[iu].imag])


# ---------------------------------------------------------------------------
# svec / smat
# ---------------------------------------------------------------------------

_SVEC_CACHE: dict[int, tuple] = {}


def _svec_index(n: int):
    if n not in _SVEC_CACHE:
        rows, cols = np.tril_indices(n)
        scale = np.where(rows == cols, 1.0, SQRT2)
        _SVEC_CACHE[n] = (rows, cols, scale)
    return _SVEC_CACHE[n]


def svec(S: np.ndarray) -> np.ndarray:
    """Pack symmetric matrices (last two axes) into svec vectors."""
    n = S.shape[-1]
    rows, cols, scale = _svec_index(n)
    return S[..., rows, cols] * scale


def smat(v: np.ndarray, n: int) -> np.ndarray:
    """Unpack svec vectors (last axis) into symmetric matrices."""
    rows, cols, scale = _svec_index(n)
    v = np.asarray(v)
    out = np.zeros(v.shape[:-1] + (n, n))
    vals = v / scale
    out[..., rows, cols] = vals
    out[..., cols, rows] = vals
    return out


def svec_dim(n: int) -> int:
    return n * (n + 1) // 2


# ---------------------------------------------------------------------------
# Problem / solution containers
# ---------------------------------------------------------------------------

@dataclass
class ConeDims:
    """Cone list: ``l`` orthant entries, SOC sizes ``q``, PSD orders ``s``."""

    l: int = 0
    q: list = field(default_factory=list)
    s: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.l + sum(self.q) + sum(svec_dim(n) for n in self.s)

    @property
    def degree(self) -> int:
        return self.l + len(self.q) + sum(self.s)

    def blocks(self):
        """Yield ``(kind, start, stop, order)`` for every cone block."""
        off = 0
        if self.l:
            yield "l", off, off + self.l, self.l
            off += self.l
        for m in self.q:
            yield "q", off, off + m, m
            off += m
        for n in self.s:
            d = svec_dim(n)
            yield "s", off, off + d, n
            off += d


@dataclass
class ConicProblem:
    c: np.ndarray
    G: np.ndarray
    h: np.ndarray
    dims: ConeDims
    A: np.ndarray | None = None
    b: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
        self.h = np.asarray(self.h, dtype=float).ravel()
        n = self.c.size
        if self.A is None:
            self.A = np.zeros((0, n))
            self.b = np.zeros(0)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).ravel()
        if self.G.shape != (self.dims.size, n):
            raise ValueError(f"G has shape {self.G.shape}, expected {(self.dims.size, n)}")
        if self.h.size != self.dims.size:
            raise ValueError("h does not match the cone dimensions")
        if self.A.shape[0] != self.b.size:
            raise ValueError("A and b disagree")

    @property
    def n_vars(self) -> int:
        return self.c.size


@dataclass
class ConicSolution:
    status: str
    x: np.ndarray
    s: np.ndarray
    y: np.ndarray
    z: np.ndarray
    primal_objective: float
    dual_objective: float
    gap: float
    relative_gap: float
    primal_residual: float
    dual_residual: float
    iterations: int

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


# ---------------------------------------------------------------------------
# Cone algebra
# ---------------------------------------------------------------------------

def _soc_det(u):
    # factored form avoids cancellation near the cone boundary
    r = np.sqrt(u[1:] @ u[1:])
    return (u[0] - r) * (u[0] + r)


def _max_step_soc(u, d):
    a = d[0] * d[0] - d[1:] @ d[1:]
    b = 2.0 * (u[0] * d[0] - u[1:] @ d[1:])
    c = _soc_det(u)
    roots = []
    if abs(a) < 1e-300:
        if b < 0:
            roots.append(-c / b)
    else:
        disc = b * b - 4.0 * a * c
        if disc >= 0:
            q = -0.5 * (b + np.copysign(np.sqrt(disc), b))
            if q != 0:
                roots.extend([q / a, c / q])
            else:
                roots.append(0.0)
    pos = [r for r in roots if r > 0]
    step = min(pos) if pos else np.inf
    if d[0] < 0:
        step = min(step, -u[0] / d[0])
    return step


class _Scaling:
    """Nesterov-Todd scaling ``W`` at a strictly feasible pair ``(s, z)``."""

    def __init__(self, dims: ConeDims, s: np.ndarray, z: np.ndarray):
        self.dims = dims
        self.blocks = list(dims.blocks())
        self.data = []
        lam = np.empty_like(s)
        for kind, a, b, n in self.blocks:
            sb, zb = s[a:b], z[a:b]
            if kind == "l":
                d = np.sqrt(sb / zb)
                self.data.append(d)
                lam[a:b] = np.sqrt(sb * zb)
            elif kind == "q":
                sn = np.sqrt(_soc_det(sb))
                zn = np.sqrt(_soc_det(zb))
                sbar, zbar = sb / sn, zb / zn
                # sbar . zbar >= 1 for unit-determinant interior points; rounding can break it
                gamma = np.sqrt(0.5 * (1.0 + max(sbar @ zbar, 1.0)))
                jz = zbar.copy()
                jz[1:] *= -1.0
                wbar = (sbar + jz) / (2.0 * gamma)
                # W = eta (2 v v^T - J) with the hyperbolic Householder vector v
                v = wbar.copy()
                v[0] += 1.0
                v /= np.sqrt(2.0 * (wbar[0] + 1.0))
                eta = np.sqrt(sn / zn)
                self.data.append((eta, v))
                lam[a:b] = self._soc_apply(eta, v, zb)
            else:
                S, Z = smat(sb, n), smat(zb, n)
                Ls = _psd_factor(S)
                Lz = _psd_factor(Z)
                U, sv, Vt = np.linalg.svd(Lz.T @ Ls)
                R = Ls @ Vt.T / np.sqrt(sv)
                Ls_inv = sla.solve_triangular(Ls, np.eye(n), lower=True, check_finite=False)
                Rinv = (np.sqrt(sv)[:, None] * Vt) @ Ls_inv
                self.data.append((R, Rinv, sv))
                lam[a:b] = svec(np.diag(sv))
        self.lam = lam

    @staticmethod
    def _soc_apply(eta, wbar, v):
        # W v = eta (2 w w^T - J) v
        jv = v.copy()
        jv[1:] *= -1.0
        return eta * (2.0 * wbar * (wbar @ v) - jv)

    @staticmethod
    def _soc_apply_inv(eta, wbar, v):
        # W^{-1} v = (2 J w w^T J - J) v / eta
        jw = wbar.copy()
        jw[1:] *= -1.0
        jv = v.copy()
        jv[1:] *= -1.0
        return (2.0 * jw * (jw @ v) - jv) / eta

    def _apply(self, v, mode):
        """Apply W ('W'), W^T ('WT'), W^{-1} ('Winv') or W^{-T} ('WinvT').

        ``v`` may be a vector or a matrix whose columns are cone vectors.
        """
        out = np.empty_like(v)
        mat = v.ndim == 2
        for (kind, a, b, n), dat in zip(self.blocks, self.data):
            vb = v[a:b]
            if kind == "l":
                d = dat if mode in ("W", "WT") else 1.0 / dat
                out[a:b] = d[:, None] * vb if mat else d * vb
            elif kind == "q":
                eta, wbar = dat
                f = self._soc_apply if mode in ("W", "WT") else self._soc_apply_inv
                if mat:
                    jv = vb.copy()
                    jv[1:] *= -1.0
                    if mode in ("W", "WT"):
                        out[a:b] = eta * (2.0 * np.outer(wbar, wbar @ vb) - jv)
                    else:
                        jw = wbar.copy()
                        jw[1:] *= -1.0
                        out[a:b] = (2.0 * np.outer(jw, jw @ vb) - jv) / eta
                else:
                    out[a:b] = f(eta, wbar, vb)
            else:
                R, Rinv, _ = dat
                M = smat(vb.T if mat else vb, n)
                if mode == "W":        # R^T V R
                    T = R.T @ M @ R
                elif mode == "WT":     # R V R^T
                    T = R @ M @ R.T
                elif mode == "Winv":   # R^{-T} V R^{-1}
                    T = Rinv.T @ M @ Rinv
                else:                  # R^{-1} V R^{-T}
                    T = Rinv @ M @ Rinv.T
                out[a:b] = svec(T).T if mat else svec(T)
        return out

    def sprod(self, u, v):
        """Jordan product u o v."""
        out = np.empty_like(u)
        for kind, a, b, n in self.blocks:
            if kind == "l":
                out[a:b] = u[a:b] * v[a:b]
            elif kind == "q":
                ub, vb = u[a:b], v[a:b]
                out[a] = ub @ vb
                out[a + 1:b] = ub[0] * vb[1:] + vb[0] * ub[1:]
            else:
                U, V = smat(u[a:b], n), smat(v[a:b], n)
                P = U @ V
                out[a:b] = svec(0.5 * (P + P.T))
        return out

    def lam_div(self, v):
        """Solve ``lam o u = v`` for u."""
        lam = self.lam
        out = np.empty_like(v)
        for (kind, a, b, n), dat in zip(self.blocks, self.data):
            if kind == "l":
                out[a:b] = v[a:b] / lam[a:b]
            elif kind == "q":
                l0, l1 = lam[a], lam[a + 1:b]
                v0, v1 = v[a], v[a + 1:b]
                u0 = (l0 * v0 - l1 @ v1) / _soc_det(lam[a:b])
                out[a] = u0
                out[a + 1:b] = (v1 - u0 * l1) / l0
            else:
                sv = dat[2]
                V = smat(v[a:b], n)
                out[a:b] = svec(2.0 * V / (sv[:, None] + sv[None, :]))
        return out

    def identity(self):
        return _identity(self.dims)

    def max_step(self, d):
        """Largest t with lam + t d in the cone (in the scaled space)."""
        lam = self.lam
        step = np.inf
        for (kind, a, b, n), dat in zip(self.blocks, self.data):
            if kind == "l":
                db = d[a:b]
                neg = db < 0
                if neg.any():
                    step = min(step, np.min(-lam[a:b][neg] / db[neg]))
            elif kind == "q":
                step = min(step, _max_step_soc(lam[a:b], d[a:b]))
            else:
                sv = dat[2]
                D = smat(d[a:b], n)
                isq = 1.0 / np.sqrt(sv)
                M = isq[:, None] * D * isq[None, :]
                ev = np.linalg.eigvalsh(M)[0]
                if ev < 0:
                    step = min(step, -1.0 / ev)
        return step


def _psd_factor(S):
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (S + S.T))
        w = np.maximum(w, 1e-300 + 1e-15 * max(w[-1], 1e-300))
        # any factor with L L^T = S works; make it lower triangular via QR
        F = V * np.sqrt(w)
        q, r = np.linalg.qr(F.T)
        L = r.T
        sign = np.sign(np.diag(L))
        sign[sign == 0] = 1.0
        return L * sign


def _identity(dims: ConeDims) -> np.ndarray:
    e = np.zeros(dims.size)
    for kind, a, b, n in dims.blocks():
        if kind == "l":
            e[a:b] = 1.0
        elif kind == "q":
            e[a] = 1.0
        else:
            e[a:b] = svec(np.eye(n))
    return e


def _shift_to_interior(dims: ConeDims, v: np.ndarray) -> np.ndarray:
    """Return ``v + (1 + t) e`` where t is the smallest shift making v interior."""
    worst = -np.inf
    for kind, a, b, n in dims.blocks():
        vb = v[a:b]
        if kind == "l":
            worst = max(worst, np.max(-vb))
        elif kind == "q":
            worst = max(worst, np.linalg.norm(vb[1:]) - vb[0])
        else:
            worst = max(worst, -np.linalg.eigvalsh(smat(vb, n))[0])
    if worst < 0:
        return v.copy()
    return v + (1.0 + worst) * _identity(dims)


def cone_inner(dims: ConeDims, u, v) -> float:
    return float(u @ v)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def _presolve_equalities(A, b, tol=1e-10):
    """Drop linearly dependent rows of ``A x = b`` (pivoted QR on A^T)."""
    if A.shape[0] == 0:
        return A, b, True
    Q, R, piv = sla.qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0:
        return A[:0], b[:0], bool(np.allclose(b, 0))
    rank = int(np.sum(diag > tol * diag[0]))
    keep = np.sort(piv[:rank])
    A2, b2 = A[keep], b[keep]
    # consistency of dropped rows
    x_ls = np.linalg.lstsq(A2, b2, rcond=None)[0]
    consistent = np.linalg.norm(A @ x_ls - b) <= 1e-8 * max(1.0, np.linalg.norm(b))
    return A2, b2, consistent


class _KKT:
    """Factorization of the scaled KKT system

        A^T dy + Gt^T dz = bx,   A dx = by,   Gt dx - dz = bz
    """

    def __init__(self, Gt, A):
        self.Gt, self.A = Gt, A
        H = Gt.T @ Gt
        if A.shape[0]:
            H = H + A.T @ A
        H = 0.5 * (H + H.T)
        n = H.shape[0]
        reg = 0.0
        scale = max(1.0, np.max(np.abs(np.diag(H)))) if n else 1.0
        while True:
            try:
                self.Hc = sla.cho_factor(H + reg * np.eye(n), lower=True, check_finite=False)
                break
            except np.linalg.LinAlgError:
                reg = 1e-14 * scale if reg == 0.0 else reg * 100.0
                if reg > 1e-2 * scale:
                    raise
        if A.shape[0]:
            HiAT = sla.cho_solve(self.Hc, A.T, check_finite=False)
            S = A @ HiAT
            S = 0.5 * (S + S.T)
            self.Sc = sla.cho_factor(S + 1e-14 * np.max(np.abs(np.diag(S))) * np.eye(S.shape[0]),
                                     lower=True, check_finite=False)
            self.HiAT = HiAT

    def _solve_once(self, bx, by, bz):
        Gt, A = self.Gt, self.A
        rhs = bx + Gt.T @ bz
        if A.shape[0]:
            rhs = rhs + A.T @ by
            Hr = sla.cho_solve(self.Hc, rhs, check_finite=False)
            dy = sla.cho_solve(self.Sc, A @ Hr - by, check_finite=False)
            dx = Hr - self.HiAT @ dy
        else:
            dx = sla.cho_solve(self.Hc, rhs, check_finite=False)
            dy = np.zeros(0)
        dz = Gt @ dx - bz
        return dx, dy, dz

    def solve(self, bx, by, bz, refine=2):
        dx, dy, dz = self._solve_once(bx, by, bz)
        Gt, A = self.Gt, self.A
        for _ in range(refine):
            rx = bx - (A.T @ dy + Gt.T @ dz)
            ry = by - A @ dx
            rz = bz - (Gt @ dx - dz)
            ex, ey, ez = self._solve_once(rx, ry, rz)
            dx, dy, dz = dx + ex, dy + ey, dz + ez
        return dx, dy, dz


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------

def solve(problem: ConicProblem, tol: float = 1e-8, max_iters: int = 200,
          step_fraction: float = 0.99) -> ConicSolution:
    """Solve a :class:`ConicProblem` by a homogeneous primal-dual method.

    Parameters
    ----------
    problem : ConicProblem
    tol : float
        Target for the relative residuals and the relative duality gap.
    max_iters : int
        Iteration cap; on exhaustion the best iterate is returned with status
        ``"max_iterations"``.  If the best merit (largest of the relative
        residuals and gap) fails to drop by 10% over ``STALL_WINDOW``
        iterations, the best iterate is returned early with status
        ``"stalled"``.

    Returns
    -------
    ConicSolution
        ``x, s, y, z`` are the rescaled primal/dual iterates; for
        infeasibility statuses ``(y, z)`` or ``(x, s)`` hold the certificate.
    """
    if not (0.0 < tol <= 1e-2):
        raise ValueError("tol must lie in (0, 1e-2]")
    dims = problem.dims
    c, G, h = problem.c, problem.G, problem.h
    A, b, consistent = _presolve_equalities(problem.A, problem.b)
    n = c.size
    m = dims.size
    degree = dims.degree
    e = _identity(dims)

    def _result(status, x, s, y, z, tau, it, pres, dres, gap, relgap):
        scale = tau if status in (OPTIMAL, MAX_ITERATIONS, STALLED) else 1.0
        y_full = _expand_dual(problem.A, A, y)
        return ConicSolution(status, x / scale, s / scale, y_full / scale, z / scale,
                             float(c @ x / scale),
                             float(-(h @ z + b @ y) / scale),
                             gap, relgap, pres, dres, it)

    if not consistent:
        zeros = np.zeros
        return ConicSolution(PRIMAL_INFEASIBLE, zeros(n), zeros(m), zeros(problem.A.shape[0]),
                             zeros(m), np.nan, np.nan, np.inf, np.inf, np.inf, np.inf, 0)

    resx0 = max(1.0, np.linalg.norm(c))
    resy0 = max(1.0, np.linalg.norm(np.concatenate([b, h])))

    # starting point
    kkt = _KKT(G, A)
    x, _, zz = kkt.solve(np.zeros(n), b, h)
    s = _shift_to_interior(dims, -zz)
    _, y, z = kkt.solve(-c, np.zeros(A.shape[0]), np.zeros(m))
    z = _shift_to_interior(dims, z)
    tau, kappa = 1.0, 1.0

    best = None
    pres = dres = gap = relgap = np.inf
    for it in range(max_iters + 1):
        rx = A.T @ y + G.T @ z + c * tau
        ry = A @ x - b * tau
        rz = s + G @ x - h * tau
        rt = kappa + c @ x + b @ y + h @ z
        sz = s @ z
        mu = (sz + tau * kappa) / (degree + 1)

        pobj = c @ x / tau
        dobj = -(b @ y + h @ z) / tau
        gap = sz / tau ** 2
        pres = np.sqrt(ry @ ry + rz @ rz) / tau / resy0
        dres = np.linalg.norm(rx) / tau / resx0
        relgap = gap / max(1.0, abs(pobj), abs(dobj))
        merit = max(pres, dres, relgap)
        if best is None or merit < best[0]:
            if best is None or merit < 0.9 * best[0]:
                best_it = it
            best = (merit, x.copy(), s.copy(), y.copy(), z.copy(), tau,
                    pres, dres, gap, relgap)

        if pres <= tol and dres <= tol and relgap <= tol:
            return _result(OPTIMAL, x, s, y, z, tau, it, pres, dres, gap, relgap)

        hz_by = h @ z + b @ y
        if hz_by < 0:
            pinf = np.linalg.norm(A.T @ y + G.T @ z) / resx0 / (-hz_by)
            if pinf <= tol:
                k = -hz_by
                return _result(PRIMAL_INFEASIBLE, x, s, y / k, z / k, tau, it,
                               pres, dres, gap, relgap)
        cx = c @ x
        if cx < 0:
            dinf = np.sqrt(np.sum((A @ x) ** 2) + np.sum((G @ x + s) ** 2)) / resy0 / (-cx)
            if dinf <= tol:
                return _result(DUAL_INFEASIBLE, x / -cx, s / -cx, y, z, tau, it,
                               pres, dres, gap, relgap)
        if it == max_iters:
            break
        if it - best_it >= STALL_WINDOW:
            _, x, s, y, z, tau, pres, dres, gap, relgap = best
            return _result(STALLED, x, s, y, z, tau, it, pres, dres, gap, relgap)

        try:
            W = _Scaling(dims, s, z)
        except (np.linalg.LinAlgError, FloatingPointError, ValueError):
            break
        lam = W.lam
        Gt = W._apply(G, "WinvT")
        ht = W._apply(h, "WinvT")
        try:
            kkt = _KKT(Gt, A)
        except np.linalg.LinAlgError:
            break
        x2, y2, z2 = kkt.solve(-c, b, ht)
        wrz = W._apply(rz, "WinvT")
        denom_base = c @ x2 + b @ y2 + ht @ z2 - kappa / tau

        lamlam = W.sprod(lam, lam)
        dsa = dza = None
        dtaua = dkapa = 0.0
        for phase in (0, 1):
            if phase == 0:
                sigma = 0.0
                rcs = -lamlam
                rct = -tau * kappa
            else:
                rcs = -lamlam + sigma * mu * e - W.sprod(dsa, dza)
                rct = -tau * kappa + sigma * mu - dtaua * dkapa
            f = 1.0 - sigma
            ldiv = W.lam_div(rcs)
            bx = -f * rx
            by = -f * ry
            bz = -f * wrz - ldiv
            x1, y1, z1 = kkt.solve(bx, by, bz)
            num = -f * rt - rct / tau - (c @ x1 + b @ y1 + ht @ z1)
            dtau = num / denom_base
            dx = x1 + dtau * x2
            dy = y1 + dtau * y2
            dzt = z1 + dtau * z2
            dst = ldiv - dzt
            dkap = (rct - kappa * dtau) / tau

            try:
                step = min(W.max_step(dst), W.max_step(dzt))
            except np.linalg.LinAlgError:
                step = np.nan
            if not np.isfinite(dtau) or np.isnan(step):
                break
            if dtau < 0:
                step = min(step, -tau / dtau)
            if dkap < 0:
                step = min(step, -kappa / dkap)
            if phase == 0:
                dsa, dza, dtaua, dkapa = dst, dzt, dtau, dkap
                alpha_aff = min(1.0, step)
                sigma = (1.0 - alpha_aff) ** 3
            else:
                alpha = min(1.0, step_fraction * step)
        else:
            phase = None
        if phase is not None:
            break

        ds_full = W._apply(dst, "WT")
        dz_full = W._apply(dzt, "Winv")
        for _ in range(30):
            s_new = _nudge_interior(dims, s + alpha * ds_full)
            z_new = _nudge_interior(dims, z + alpha * dz_full)
            if _interior(dims, s_new) and _interior(dims, z_new):
                break
            alpha *= 0.5
        else:
            break
        x = x + alpha * dx
        y = y + alpha * dy
        s, z = s_new, z_new
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkap

    _, x, s, y, z, tau, pres, dres, gap, relgap = best
    return _result(MAX_ITERATIONS, x, s, y, z, tau, max_iters, pres, dres, gap, relgap)


def _interior(dims, v) -> bool:
    """Strict cone membership, tested the way the scaling will use it."""
    if not np.all(np.isfinite(v)):
        return False
    for kind, a, b, n in dims.blocks():
        u = v[a:b]
        if kind == "q":
            if u[0] <= 0 or _soc_det(u) <= 0:
                return False
        elif kind == "s":
            try:
                np.linalg.cholesky(smat(u, n))
            except np.linalg.LinAlgError:
                return False
    return True


def _nudge_interior(dims, v):
    for kind, a, b, n in dims.blocks():
        if kind == "l":
            v[a:b] = np.maximum(v[a:b], 1e-300)
    return v


def _expand_dual(A_full, A_kept, y):
    """Map multipliers of the presolved equalities back to the original rows."""
    if A_full.shape[0] == A_kept.shape[0]:
        return y
    y_full = np.zeros(A_full.shape[0])
    # rows of A_kept are a subset of A_full rows, matched by content
    used = np.zeros(A_full.shape[0], dtype=bool)
    for i, row in enumerate(A_kept):
        idx = np.where(~used & np.all(A_full == row, axis=1))[0]
        if idx.size:
            y_full[idx[0]] = y[i]
            used[idx[0]] = True
    return y_full


# ---------------------------------------------------------------------------
# Text dump (sparse triplets)
# ---------------------------------------------------------------------------

def dump_problem(problem: ConicProblem, path) -> None:
    """Write a problem as sparse triplets.

    Format (one record per line, ``#`` starts a comment)::

        dims l <int>
        dims q <int> <int> ...
        dims s <int> <int> ...
        size <n_vars> <n_cone_rows> <n_eq_rows>
        c <j> <value>
        G <i> <j> <value>
        h <i> <value>
        A <i> <j> <value>
        b <i> <value>

    Indices are zero-based; omitted entries are zero; values use ``repr``.
    """
    p = problem
    lines = ["# conic problem, sparse triplets",
             f"dims l {p.dims.l}",
             "dims q " + " ".join(str(v) for v in p.dims.q),
             "dims s " + " ".join(str(v) for v in p.dims.s),
             f"size {p.n_vars} {p.dims.size} {p.A.shape[0]}"]
    for j in np.flatnonzero(p.c):
        lines.append(f"c {j} {float(p.c[j])!r}")
    for i, j in zip(*np.nonzero(p.G)):
        lines.append(f"G {i} {j} {float(p.G[i, j])!r}")
    for i in np.flatnonzero(p.h):
        lines.append(f"h {i} {float(p.h[i])!r}")
    for i, j in zip(*np.nonzero(p.A)):
        lines.append(f"A {i} {j} {float(p.A[i, j])!r}")
    for i in np.flatnonzero(p.b):
        lines.append(f"b {i} {float(p.b[i])!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_problem(path) -> ConicProblem:
    dims = ConeDims()
    size = None
    entries = []
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            if tok[0] == "dims":
                vals = [int(t) for t in tok[2:]]
                if tok[1] == "l":
                    dims.l = vals[0] if vals else 0
                elif tok[1] == "q":
                    dims.q = vals
                elif tok[1] == "s":
                    dims.s = vals
                else:
                    raise ValueError(f"unknown cone kind {tok[1]!r}")
            elif tok[0] == "size":
                size = tuple(int(t) for t in tok[1:4])
            else:
                entries.append(tok)
    if size is None:
        raise ValueError("missing size record")
    n, m, p = size
    c, G, h = np.zeros(n), np.zeros((m, n)), np.zeros(m)
    A, b = np.zeros((p, n)), np.zeros(p)
    for tok in entries:
        key = tok[0]
        if key == "c":
            c[int(tok[1])] = float(tok[2])
        elif key == "h":
            h[int(tok[1])] = float(tok[2])
        elif key == "b":
            b[int(tok[1])] = float(tok[2])
        elif key == "G":
            G[int(tok[1]), int(tok[2])] = float(tok[3])
        elif key == "A":
            A[int(tok[1]), int(tok[2])] = float(tok[3])
        else:
            raise ValueError(f"unknown record {key!r}")
    return ConicProblem(c, G, h, dims, A, b)
