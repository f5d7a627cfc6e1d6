"""Inner loops over cosine term lists, with numba and pure-numpy back ends.

A quadratic expansion is a list of terms ``mu * cos(k0 + psi[i, l] - psi[j, p])``
and a linear expansion a list of ``mu * cos(k0 + psi[i, l])``, where
``psi[i, l]`` is the phase of path ``l`` at antenna ``i``.  ``var[i]`` maps an
antenna to the optimization variable that moves it (itself for angles, its
ring for heights); ``d1``/``d2`` are the first/second derivatives of ``psi``
with respect to that variable and ``D1``/``D2`` global bounds on their
magnitudes.

Set the environment variable ``FCLA_DISABLE_NUMBA=1`` before import to force
the numpy implementation.  Both back ends accumulate in the same term order.
"""

from __future__ import annotations

import functools
import os

import numpy as np

try:  # pragma: no cover - exercised implicitly
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and os.environ.get("FCLA_DISABLE_NUMBA", "").lower() not in ("1", "true", "yes")


# ---------------------------------------------------------------------------
# loop implementations (compiled when numba is available)
# ---------------------------------------------------------------------------

def _quad_eval_loop(ti, tl, tj, tp, mu, k0, psi):
    acc = 0.0
    for t in range(mu.size):
        acc += mu[t] * np.cos(k0[t] + psi[ti[t], tl[t]] - psi[tj[t], tp[t]])
    return acc


def _quad_grad_loop(ti, tl, tj, tp, mu, k0, psi, d1, var, nvar):
    g = np.zeros(nvar)
    for t in range(mu.size):
        i, l, j, p = ti[t], tl[t], tj[t], tp[t]
        s = mu[t] * np.sin(k0[t] + psi[i, l] - psi[j, p])
        g[var[i]] -= s * d1[i, l]
        g[var[j]] += s * d1[j, p]
    return g


def _quad_hess_loop(ti, tl, tj, tp, mu, k0, psi, d1, d2, var, nvar):
    H = np.zeros((nvar, nvar))
    for t in range(mu.size):
        i, l, j, p = ti[t], tl[t], tj[t], tp[t]
        kap = k0[t] + psi[i, l] - psi[j, p]
        c = mu[t] * np.cos(kap)
        s = mu[t] * np.sin(kap)
        a, b = var[i], var[j]
        da, db = d1[i, l], -d1[j, p]
        # -mu cos(kappa) grad kappa grad kappa^T - mu sin(kappa) hess kappa
        H[a, a] -= c * da * da + s * d2[i, l]
        H[b, b] -= c * db * db - s * d2[j, p]
        H[a, b] -= c * da * db
        H[b, a] -= c * da * db
    return H


def _quad_bound_loop(ti, tl, tj, tp, mu, D1, D2, var, nvar):
    B = np.zeros((nvar, nvar))
    for t in range(mu.size):
        i, l, j, p = ti[t], tl[t], tj[t], tp[t]
        a, b = var[i], var[j]
        ea, eb = D1[i, l], D1[j, p]
        m = mu[t]
        B[a, a] += m * (ea * ea + D2[i, l])
        B[b, b] += m * (eb * eb + D2[j, p])
        B[a, b] += m * ea * eb
        B[b, a] += m * ea * eb
    return B


def _lin_eval_loop(ti, tl, mu, k0, psi):
    acc = 0.0
    for t in range(mu.size):
        acc += mu[t] * np.cos(k0[t] + psi[ti[t], tl[t]])
    return acc


def _lin_grad_loop(ti, tl, mu, k0, psi, d1, var, nvar):
    g = np.zeros(nvar)
    for t in range(mu.size):
        i, l = ti[t], tl[t]
        g[var[i]] -= mu[t] * np.sin(k0[t] + psi[i, l]) * d1[i, l]
    return g


def _lin_hess_loop(ti, tl, mu, k0, psi, d1, d2, var, nvar):
    H = np.zeros((nvar, nvar))
    for t in range(mu.size):
        i, l = ti[t], tl[t]
        kap = k0[t] + psi[i, l]
        a = var[i]
        H[a, a] -= mu[t] * (np.cos(kap) * d1[i, l] ** 2 + np.sin(kap) * d2[i, l])
    return H


def _lin_bound_loop(ti, tl, mu, D1, D2, var, nvar):
    B = np.zeros((nvar, nvar))
    for t in range(mu.size):
        i, l = ti[t], tl[t]
        a = var[i]
        B[a, a] += mu[t] * (D1[i, l] ** 2 + D2[i, l])
    return B


def _pava_loop(y):
    """Least-squares nondecreasing fit (pool adjacent violators)."""
    n = y.size
    val = np.empty(n)
    wt = np.empty(n)
    cnt = np.empty(n, dtype=np.int64)
    k = 0
    for i in range(n):
        val[k] = y[i]
        wt[k] = 1.0
        cnt[k] = 1
        while k > 0 and val[k - 1] > val[k]:
            w = wt[k - 1] + wt[k]
            val[k - 1] = (wt[k - 1] * val[k - 1] + wt[k] * val[k]) / w
            wt[k - 1] = w
            cnt[k - 1] += cnt[k]
            k -= 1
        k += 1
    out = np.empty(n)
    pos = 0
    for b in range(k):
        for _ in range(cnt[b]):
            out[pos] = val[b]
            pos += 1
    return out


def _chain_proj_loop(y0, ylo, yhi):
    y = _pava_loop(y0)
    for i in range(y.size):
        if y[i] < ylo:
            y[i] = ylo
        elif y[i] > yhi:
            y[i] = yhi
    return y


def _project_chains_loop(x, length, gap, lo, hi, span, use_span):
    """Project consecutive chains of ``length`` entries (see ``placement.project_chain``)."""
    n = length
    out = np.empty_like(x)
    ylo = lo
    yhi = max(hi - gap * (n - 1), ylo)
    yspan = span - gap * (n - 1)
    y0 = np.empty(n)
    for c in range(x.size // n):
        for k in range(n):
            y0[k] = x[c * n + k] - gap * k
        y = _chain_proj_loop(y0, ylo, yhi)
        if use_span and n > 1 and y[n - 1] - y[0] > yspan + 1e-13:
            lo_w = 0.0
            hi_w = max(1.0, y[n - 1] - y[0])
            while True:
                y1 = y0.copy()
                y1[0] += hi_w
                y1[n - 1] -= hi_w
                yt = _chain_proj_loop(y1, ylo, yhi)
                if yt[n - 1] - yt[0] <= yspan + 1e-13:
                    break
                hi_w *= 2.0
            for _ in range(200):
                mid = 0.5 * (lo_w + hi_w)
                y1 = y0.copy()
                y1[0] += mid
                y1[n - 1] -= mid
                yt = _chain_proj_loop(y1, ylo, yhi)
                if yt[n - 1] - yt[0] <= yspan + 1e-13:
                    hi_w = mid
                else:
                    lo_w = mid
                if hi_w - lo_w <= 1e-15 * max(1.0, hi_w):
                    break
            y1 = y0.copy()
            y1[0] += hi_w
            y1[n - 1] -= hi_w
            y = _chain_proj_loop(y1, ylo, yhi)
        for k in range(n):
            out[c * n + k] = y[k] + gap * k
    return out


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _quad_eval_np(ti, tl, tj, tp, mu, k0, psi):
    return float(np.sum(mu * np.cos(k0 + psi[ti, tl] - psi[tj, tp])))


def _quad_grad_np(ti, tl, tj, tp, mu, k0, psi, d1, var, nvar):
    s = mu * np.sin(k0 + psi[ti, tl] - psi[tj, tp])
    g = np.zeros(nvar)
    np.add.at(g, var[ti], -s * d1[ti, tl])
    np.add.at(g, var[tj], s * d1[tj, tp])
    return g


def _quad_hess_np(ti, tl, tj, tp, mu, k0, psi, d1, d2, var, nvar):
    kap = k0 + psi[ti, tl] - psi[tj, tp]
    c, s = mu * np.cos(kap), mu * np.sin(kap)
    a, b = var[ti], var[tj]
    da, db = d1[ti, tl], -d1[tj, tp]
    H = np.zeros((nvar, nvar))
    np.add.at(H, (a, a), -(c * da * da + s * d2[ti, tl]))
    np.add.at(H, (b, b), -(c * db * db - s * d2[tj, tp]))
    np.add.at(H, (a, b), -c * da * db)
    np.add.at(H, (b, a), -c * da * db)
    return H


def _quad_bound_np(ti, tl, tj, tp, mu, D1, D2, var, nvar):
    a, b = var[ti], var[tj]
    ea, eb = D1[ti, tl], D1[tj, tp]
    B = np.zeros((nvar, nvar))
    np.add.at(B, (a, a), mu * (ea * ea + D2[ti, tl]))
    np.add.at(B, (b, b), mu * (eb * eb + D2[tj, tp]))
    np.add.at(B, (a, b), mu * ea * eb)
    np.add.at(B, (b, a), mu * ea * eb)
    return B


def _lin_eval_np(ti, tl, mu, k0, psi):
    return float(np.sum(mu * np.cos(k0 + psi[ti, tl])))


def _lin_grad_np(ti, tl, mu, k0, psi, d1, var, nvar):
    g = np.zeros(nvar)
    np.add.at(g, var[ti], -mu * np.sin(k0 + psi[ti, tl]) * d1[ti, tl])
    return g


def _lin_hess_np(ti, tl, mu, k0, psi, d1, d2, var, nvar):
    kap = k0 + psi[ti, tl]
    H = np.zeros((nvar, nvar))
    a = var[ti]
    np.add.at(H, (a, a), -mu * (np.cos(kap) * d1[ti, tl] ** 2 + np.sin(kap) * d2[ti, tl]))
    return H


def _lin_bound_np(ti, tl, mu, D1, D2, var, nvar):
    B = np.zeros((nvar, nvar))
    a = var[ti]
    np.add.at(B, (a, a), mu * (D1[ti, tl] ** 2 + D2[ti, tl]))
    return B


def _pava_np(y):
    # block merging with python lists; only used without numba
    vals, wts, cnts = [], [], []
    for v in y:
        vals.append(float(v))
        wts.append(1.0)
        cnts.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            w = wts[-2] + wts[-1]
            v2 = (wts[-2] * vals[-2] + wts[-1] * vals[-1]) / w
            c2 = cnts[-2] + cnts[-1]
            del vals[-1], wts[-1], cnts[-1]
            vals[-1], wts[-1], cnts[-1] = v2, w, c2
    return np.repeat(np.array(vals), cnts)


_NUMPY = {
    "quad_eval": _quad_eval_np, "quad_grad": _quad_grad_np,
    "quad_hess": _quad_hess_np, "quad_bound": _quad_bound_np,
    "lin_eval": _lin_eval_np, "lin_grad": _lin_grad_np,
    "lin_hess": _lin_hess_np, "lin_bound": _lin_bound_np,
    "pava": _pava_np,
    "project_chains": _project_chains_loop,
}

_LOOPS = {
    "quad_eval": _quad_eval_loop, "quad_grad": _quad_grad_loop,
    "quad_hess": _quad_hess_loop, "quad_bound": _quad_bound_loop,
    "lin_eval": _lin_eval_loop, "lin_grad": _lin_grad_loop,
    "lin_hess": _lin_hess_loop, "lin_bound": _lin_bound_loop,
    "pava": _pava_loop,
    "project_chains": _project_chains_loop,
}

if USE_NUMBA:
    _chain_proj_loop = numba.njit(cache=True)(_chain_proj_loop)
    _pava_loop = numba.njit(cache=True)(_pava_loop)
    _ACTIVE = {name: numba.njit(cache=True, nogil=True)(fn) for name, fn in _LOOPS.items()
               if name != "pava"}
    _ACTIVE["pava"] = _pava_loop
    BACKEND = "numba"
else:
    _ACTIVE = dict(_NUMPY)
    BACKEND = "numpy"


@functools.lru_cache(maxsize=None)
def implementation(name: str, backend: str | None = None):
    """Return the kernel ``name`` for ``backend`` ('numba', 'numpy' or the active one)."""
    if backend is None:
        return _ACTIVE[name]
    if backend == "numpy":
        return _NUMPY[name]
    if backend == "numba":
        if numba is None:
            raise RuntimeError("numba is not installed")
        fn = _LOOPS[name]
        return numba.njit(cache=True)(getattr(fn, "py_func", fn))
    raise ValueError(f"unknown backend {backend!r}")


def quad_eval(ti, tl, tj, tp, mu, k0, psi):
    return float(_ACTIVE["quad_eval"](ti, tl, tj, tp, mu, k0, psi))


def quad_grad(ti, tl, tj, tp, mu, k0, psi, d1, var, nvar):
    return _ACTIVE["quad_grad"](ti, tl, tj, tp, mu, k0, psi, d1, var, nvar)


def quad_hess(ti, tl, tj, tp, mu, k0, psi, d1, d2, var, nvar):
    return _ACTIVE["quad_hess"](ti, tl, tj, tp, mu, k0, psi, d1, d2, var, nvar)


def quad_bound(ti, tl, tj, tp, mu, D1, D2, var, nvar):
    return _ACTIVE["quad_bound"](ti, tl, tj, tp, mu, D1, D2, var, nvar)


def lin_eval(ti, tl, mu, k0, psi):
    return float(_ACTIVE["lin_eval"](ti, tl, mu, k0, psi))


def lin_grad(ti, tl, mu, k0, psi, d1, var, nvar):
    return _ACTIVE["lin_grad"](ti, tl, mu, k0, psi, d1, var, nvar)


def lin_hess(ti, tl, mu, k0, psi, d1, d2, var, nvar):
    return _ACTIVE["lin_hess"](ti, tl, mu, k0, psi, d1, d2, var, nvar)


def lin_bound(ti, tl, mu, D1, D2, var, nvar):
    return _ACTIVE["lin_bound"](ti, tl, mu, D1, D2, var, nvar)


def pava(y) -> np.ndarray:
    return _ACTIVE["pava"](np.ascontiguousarray(y, dtype=float))


def project_chains(x, length, gap, lo, hi, span=np.inf):
    """Project every chain of ``length`` consecutive entries of ``x``."""
    x = np.ascontiguousarray(x, dtype=float)
    use_span = bool(np.isfinite(span))
    return _ACTIVE["project_chains"](x, int(length), float(gap), float(lo), float(hi),
                                     float(span if use_span else 0.0), use_span)
