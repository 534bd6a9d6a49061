"""Epsilon-insensitive support vector regression trained by SMO.

The dual is solved in the stacked form over ``beta = [alpha, alpha*]``::

    min  1/2 beta' Q beta + p' beta
    s.t. z' beta = 0,  0 <= beta <= C

with ``z = [+1, -1]``, ``Q_ts = z_t z_s K(t, s)`` and
``p = [eps - y, eps + y]``. Each iteration picks the pair with the largest
KKT violation for the first index and the largest second-order objective
decrease for the second, updates the two coefficients analytically, and
refreshes the gradient. Kernel rows are computed on demand and kept in a
bounded LRU cache.
"""

from __future__ import annotations

import json
import warnings
from collections import OrderedDict
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import DataError

TAU = 1e-12


def rbf_kernel(A, B, gamma):
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


def linear_kernel(A, B, gamma=None):
    return A @ B.T


KERNELS = {"rbf": rbf_kernel, "linear": linear_kernel}


class _KernelRows:
    """Kernel rows ``K(x_i, X)`` with an LRU cache bounded in megabytes."""

    def __init__(self, X, kernel, gamma, cache_mb):
        self.X = X
        self.kernel = kernel
        self.gamma = gamma
        self.capacity = max(2, int(cache_mb * 2**20 // (8 * max(len(X), 1))))
        self.rows = OrderedDict()
        if kernel == "rbf":
            self.sqnorm = (X * X).sum(1)
            self.diag = np.ones(len(X))
        else:
            self.diag = (X * X).sum(1)

    def __getitem__(self, i):
        row = self.rows.get(i)
        if row is not None:
            self.rows.move_to_end(i)
            return row
        dots = self.X @ self.X[i]
        if self.kernel == "rbf":
            row = np.exp(-self.gamma * np.maximum(self.sqnorm + self.sqnorm[i] - 2.0 * dots, 0.0))
        else:
            row = dots
        self.rows[i] = row
        if len(self.rows) > self.capacity:
            self.rows.popitem(last=False)
        return row


def solve_dual(rows, y, C, epsilon, tol, max_iter):
    """SMO on the stacked epsilon-SVR dual.

    Returns ``(coef, bias, n_iter, gap, objective)`` where ``coef`` is
    ``alpha - alpha*`` and ``gap`` the final maximal KKT violation.
    """
    n = y.size
    z = np.concatenate((np.ones(n), -np.ones(n)))
    beta = np.zeros(2 * n)
    p = np.concatenate((epsilon - y, epsilon + y))
    grad = p.copy()
    qd = np.tile(rows.diag, 2)
    upper = np.float64(C)

    n_iter = 0
    gap = np.inf
    while n_iter < max_iter:
        at_lo = beta <= 0.0
        at_hi = beta >= upper
        pos = z > 0
        up = np.where(pos, ~at_hi, ~at_lo)
        low = np.where(pos, ~at_lo, ~at_hi)
        score = -z * grad

        if not up.any() or not low.any():
            gap = 0.0
            break
        i = int(np.argmax(np.where(up, score, -np.inf)))
        g_max = score[i]
        g_min = np.min(np.where(low, score, np.inf))
        gap = g_max - g_min
        if gap < tol:
            break

        k_i = rows[i % n]
        k_it = np.concatenate((k_i, k_i))
        diff = g_max - score
        cand = low & (diff > 0)
        quad = qd[i] + qd - 2.0 * k_it
        quad = np.where(quad > 0, quad, TAU)
        gain = np.where(cand, -(diff * diff) / quad, np.inf)
        j = int(np.argmin(gain))
        k_j = rows[j % n]

        old_i, old_j = beta[i], beta[j]
        a_i, a_j = old_i, old_j
        k_ij = k_i[j % n]
        q = qd[i] + qd[j] - 2.0 * k_ij
        if q <= 0:
            q = TAU
        if z[i] != z[j]:
            delta = (-grad[i] - grad[j]) / q
            d = a_i - a_j
            a_i += delta
            a_j += delta
            if d > 0:
                if a_j < 0:
                    a_j, a_i = 0.0, d
            elif a_i < 0:
                a_i, a_j = 0.0, -d
            if d > 0:
                if a_i > upper:
                    a_i, a_j = upper, upper - d
            elif a_j > upper:
                a_j, a_i = upper, upper + d
        else:
            delta = (grad[i] - grad[j]) / q
            s = a_i + a_j
            a_i -= delta
            a_j += delta
            if s > upper:
                if a_i > upper:
                    a_i, a_j = upper, s - upper
            elif a_j < 0:
                a_j, a_i = 0.0, s
            if s > upper:
                if a_j > upper:
                    a_j, a_i = upper, s - upper
            elif a_i < 0:
                a_i, a_j = 0.0, s

        beta[i], beta[j] = a_i, a_j
        # G_t += sum_s z_t z_s K(t, s) dbeta_s over s in {i, j}
        v = (z[i] * (a_i - old_i)) * k_i + (z[j] * (a_j - old_j)) * k_j
        grad[:n] += v
        grad[n:] -= v
        n_iter += 1

    coef = beta[:n] - beta[n:]
    bias = -_rho(beta, grad, z, upper)
    objective = 0.5 * float(beta @ (grad + p))
    return coef, bias, n_iter, float(gap), objective


def _rho(beta, grad, z, upper):
    zg = z * grad
    at_hi = beta >= upper
    at_lo = beta <= 0.0
    free = ~at_hi & ~at_lo
    if free.any():
        return float(zg[free].mean())
    # bounded-only: midpoint of the feasible interval for rho
    ub_set = (at_hi & (z < 0)) | (at_lo & (z > 0))
    lb_set = (at_hi & (z > 0)) | (at_lo & (z < 0))
    ub = zg[ub_set].min() if ub_set.any() else np.inf
    lb = zg[lb_set].max() if lb_set.any() else -np.inf
    return float((ub + lb) / 2)


class EpsilonSVR(RegressorMixin, BaseEstimator):
    """Epsilon-SVR with an SMO solver.

    Parameters
    ----------
    C : float
        Penalty on points outside the epsilon tube.
    epsilon : float
        Half-width of the insensitive tube, in target units.
    kernel : {"rbf", "linear"}
    gamma : float or "auto"
        RBF width. ``"auto"`` uses ``1 / (n_features * X.var())``.
    tol : float
        Stop once the maximal KKT violation drops below this.
    max_iter : int or None
        Cap on SMO iterations; ``None`` means ``max(10**7, 100 n)``.
        Hitting the cap sets ``converged_ = False`` and warns.
    cache_size : float
        Kernel row cache in megabytes.
    """

    def __init__(self, C=1.0, epsilon=0.05, kernel="rbf", gamma="auto", tol=1e-3,
                 max_iter=None, cache_size=1024):
        self.C = C
        self.epsilon = epsilon
        self.kernel = kernel
        self.gamma = gamma
        self.tol = tol
        self.max_iter = max_iter
        self.cache_size = cache_size

    def _check_params(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be non-negative")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.kernel not in KERNELS:
            raise ValueError(f"kernel must be one of {sorted(KERNELS)}")

    def fit(self, X, y):
        self._check_params()
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if X.shape[0] < 2:
            raise ValueError("need at least 2 training samples")
        n, d = X.shape
        if self.gamma == "auto":
            var = X.var()
            self.gamma_ = 1.0 / (d * var) if var > 0 else 1.0
        else:
            self.gamma_ = float(self.gamma)

        rows = _KernelRows(X, self.kernel, self.gamma_, self.cache_size)
        max_iter = self.max_iter if self.max_iter is not None else max(10**7, 100 * n)
        coef, bias, n_iter, gap, obj = solve_dual(rows, y, float(self.C), float(self.epsilon),
                                                  float(self.tol), max_iter)
        sv = np.flatnonzero(coef != 0.0)
        self.support_ = sv
        self.support_vectors_ = X[sv].copy()
        self.dual_coef_ = coef[sv]
        self.intercept_ = bias
        self.n_iter_ = n_iter
        self.kkt_gap_ = gap
        self.objective_ = obj
        self.converged_ = gap < self.tol
        self.n_features_in_ = d
        if not self.converged_:
            warnings.warn(f"SMO stopped after {n_iter} iterations with KKT gap {gap:.3g}",
                          ConvergenceWarning, stacklevel=2)
        return self

    def decision_function(self, X, chunk=4096):
        check_is_fitted(self, "dual_coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, model expects {self.n_features_in_}")
        out = np.full(X.shape[0], self.intercept_)
        if self.dual_coef_.size == 0:
            return out
        kern = KERNELS[self.kernel]
        for start in range(0, X.shape[0], chunk):
            block = X[start:start + chunk]
            out[start:start + chunk] += kern(block, self.support_vectors_, self.gamma_) @ self.dual_coef_
        return out

    def predict(self, X):
        return self.decision_function(X)


def kkt_residuals(model, X, y):
    """Per-sample violation of the epsilon-SVR optimality conditions.

    Evaluated from the fitted model alone: each sample's coefficient decides
    whether its residual ``y - f(x)`` must lie inside the tube, on its edge,
    or beyond it.
    """
    X = np.asarray(X, dtype=np.float64)
    r = np.asarray(y, dtype=np.float64) - model.predict(X)
    coef = np.zeros(X.shape[0])
    coef[model.support_] = model.dual_coef_
    C, eps = model.C, model.epsilon
    bound = 1e-12 * max(1.0, C)
    res = np.maximum(0.0, np.abs(r) - eps)
    up = coef > 0
    res[up & (coef < C - bound)] = np.abs(r - eps)[up & (coef < C - bound)]
    res[coef >= C - bound] = np.maximum(0.0, eps - r)[coef >= C - bound]
    dn = coef < 0
    res[dn & (coef > -C + bound)] = np.abs(r + eps)[dn & (coef > -C + bound)]
    res[coef <= -C + bound] = np.maximum(0.0, eps + r)[coef <= -C + bound]
    return res


def grid_search(X, y, c_grid, eps_grid, folds=5, **svr_params):
    """Exhaustive (C, epsilon) search by cross-validated mean squared error.

    ``folds`` is either a fold count (contiguous, unshuffled blocks) or an
    explicit list of ``(train_idx, test_idx)`` pairs. Ties go to the larger
    epsilon, then the smaller C. Returns ``(c_best, eps_best, table)`` where
    ``table`` maps ``(C, epsilon)`` to the mean fold MSE.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not len(c_grid) or not len(eps_grid):
        raise ValueError("grids must be non-empty")
    if isinstance(folds, (int, np.integer)):
        if folds < 2 or folds > len(y):
            raise ValueError(f"cannot make {folds} folds from {len(y)} samples")
        blocks = np.array_split(np.arange(len(y)), folds)
        folds = [(np.setdiff1d(np.arange(len(y)), b), b) for b in blocks]
    if len(folds) < 2 or any(len(tr) < 2 or len(te) == 0 for tr, te in folds):
        raise ValueError("degenerate folds")

    table = {}
    for c in c_grid:
        for eps in eps_grid:
            errs = []
            for tr, te in folds:
                m = EpsilonSVR(C=c, epsilon=eps, **svr_params).fit(X[tr], y[tr])
                errs.append(np.mean((m.predict(X[te]) - y[te]) ** 2))
            table[(float(c), float(eps))] = float(np.mean(errs))
    best = min(table, key=lambda key: (table[key], -key[1], key[0]))
    return best[0], best[1], table


# -- persistence ---------------------------------------------------------------


def save_model(model, path, extra=None):
    """Write ``<path>.json`` (header) and ``<path>.bin`` (float64 LE blocks)."""
    check_is_fitted(model, "dual_coef_")
    path = Path(path)
    head = {
        "format": "vcount-svr/1",
        "params": model.get_params(),
        "gamma": model.gamma_,
        "bias": model.intercept_,
        "n_features": model.n_features_in_,
        "n_support": int(model.dual_coef_.size),
        "n_iter": model.n_iter_,
        "kkt_gap": model.kkt_gap_,
        "converged": bool(model.converged_),
        "blocks": ["support_vectors", "dual_coef"],
        "dtype": "float64-le",
    }
    if extra:
        head["extra"] = extra
    blob = (np.ascontiguousarray(model.support_vectors_, dtype="<f8").tobytes()
            + np.ascontiguousarray(model.dual_coef_, dtype="<f8").tobytes())
    path.with_name(path.name + ".bin").write_bytes(blob)
    path.with_name(path.name + ".json").write_text(json.dumps(head, indent=1, sort_keys=True) + "\n")


def load_model(path):
    """Inverse of :func:`save_model`; returns ``(model, extra)``."""
    path = Path(path)
    try:
        head = json.loads(path.with_name(path.name + ".json").read_text())
        blob = path.with_name(path.name + ".bin").read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model {path}: {exc}") from exc
    if head.get("format") != "vcount-svr/1":
        raise DataError(f"{path}: not a vcount SVR model")
    n_sv, d = head["n_support"], head["n_features"]
    arr = np.frombuffer(blob, dtype="<f8")
    if arr.size != n_sv * d + n_sv:
        raise DataError(f"{path}: model blocks truncated")
    model = EpsilonSVR(**head["params"])
    model.support_vectors_ = arr[:n_sv * d].reshape(n_sv, d).copy()
    model.dual_coef_ = arr[n_sv * d:].copy()
    model.support_ = np.arange(n_sv)
    model.intercept_ = head["bias"]
    model.gamma_ = head["gamma"]
    model.n_features_in_ = d
    model.n_iter_ = head["n_iter"]
    model.kkt_gap_ = head["kkt_gap"]
    model.converged_ = head["converged"]
    return model, head.get("extra", {})
