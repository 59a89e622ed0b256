"""Soft-margin RBF support vector machine trained by SMO.

The dual problem solved is

    min_a  1/2 a'Qa - e'a    s.t.  0 <= a_i <= C,  y'a = 0,
    Q_ij = y_i y_j exp(-gamma |x_i - x_j|^2)

Working pairs are chosen by the maximal-violating-pair rule for the first
index and the second-order (curvature-aware) gain for the second, as in
Fan, Chen and Lin (2005).  Training stops once the KKT gap
``max_{I_up} -y G - min_{I_low} -y G`` drops below ``tol``.

Labels are +1 (cloud) and -1 (clear); a decision value of exactly 0 is
reported as cloud.
"""

import dataclasses
import itertools
import logging
import warnings
from collections import OrderedDict

import numpy as np
from scipy.spatial.distance import cdist

from .errors import (CorruptBundle, DimensionMismatch, NonConvergence, SingleClassInput,
                     TooFewSamples, VersionMismatch)
from .features import MinMaxScaler

LOG = logging.getLogger(__name__)

TAU = 1e-12
DEFAULT_TOL = 1e-3
DEFAULT_CACHE_MB = 200
DEFAULT_C_GRID = (0.1, 1.0, 10.0, 100.0, 1000.0)
DEFAULT_GAMMA_GRID = tuple(2.0 ** k for k in range(-6, 4))
MODEL_VERSION = 1


def default_grid():
    return [(c, g) for c in DEFAULT_C_GRID for g in DEFAULT_GAMMA_GRID]


def rbf_kernel(x, z, gamma):
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise DimensionMismatch(f"kernel arguments differ in shape: {x.shape} vs {z.shape}")
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    d = x - z
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_matrix(A, B, gamma):
    """Kernel matrix between the rows of A and B."""
    return np.exp(-gamma * cdist(np.atleast_2d(A), np.atleast_2d(B), "sqeuclidean"))


@dataclasses.dataclass(eq=False)
class SvmModel:
    support_vectors: np.ndarray
    dual_coef: np.ndarray   # alpha_i * y_i
    bias: float
    gamma: float
    C: float
    scaler: MinMaxScaler = None
    regime: str = "day"
    # Training diagnostics; not serialised.
    support: np.ndarray = dataclasses.field(default=None, repr=False)
    n_iter: int = dataclasses.field(default=0, repr=False)
    converged: bool = dataclasses.field(default=True, repr=False)
    objective: float = dataclasses.field(default=float("nan"), repr=False)

    @property
    def n_sv(self):
        return self.dual_coef.shape[0]

    @property
    def n_features(self):
        return self.support_vectors.shape[1]

    def decision_function(self, X, chunk=4096):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        out = np.empty(X.shape[0])
        for start in range(0, X.shape[0], chunk):
            block = rbf_matrix(X[start:start + chunk], self.support_vectors, self.gamma)
            out[start:start + chunk] = block @ self.dual_coef + self.bias
        return out

    def predict(self, X):
        """+1 (cloud) where the decision value is >= 0, else -1."""
        return np.where(self.decision_function(X) >= 0, 1, -1).astype(np.int8)

    def same_as(self, other):
        return (isinstance(other, SvmModel) and self.regime == other.regime
                and self.C == other.C and self.gamma == other.gamma and self.bias == other.bias
                and np.array_equal(self.support_vectors, other.support_vectors)
                and np.array_equal(self.dual_coef, other.dual_coef)
                and (self.scaler is None) == (other.scaler is None)
                and (self.scaler is None or (np.array_equal(self.scaler.min, other.scaler.min)
                                             and np.array_equal(self.scaler.max, other.scaler.max))))


def decision(model, x):
    """Decision value f(x) = sum_i a_i y_i k(s_i, x) + b for one scaled vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.n_features:
        raise DimensionMismatch(f"expected a vector of {model.n_features} features")
    return float(model.decision_function(x[None, :])[0])


class _KernelRows:
    """LRU cache of kernel rows K[i, :] over the training set."""

    def __init__(self, X, gamma, cache_mb, matrix=None):
        self.X = X
        self.gamma = gamma
        self.matrix = matrix
        n = X.shape[0]
        self.capacity = max(2, int(cache_mb * 2 ** 20 // (8 * max(n, 1))))
        self.rows = OrderedDict()

    def __call__(self, i):
        if self.matrix is not None:
            return self.matrix[i]
        row = self.rows.get(i)
        if row is not None:
            self.rows.move_to_end(i)
            return row
        d = self.X - self.X[i]
        row = np.exp(-self.gamma * np.einsum("ij,ij->i", d, d))
        self.rows[i] = row
        if len(self.rows) > self.capacity:
            self.rows.popitem(last=False)
        return row


def _select_pair(alpha, grad, y, C, kdiag, rows):
    """Return (i, j, gap); j is None when no improving pair exists."""
    v = -y * grad
    up = np.where(y > 0, alpha < C, alpha > 0)
    low = np.where(y > 0, alpha > 0, alpha < C)
    if not up.any() or not low.any():
        return None, None, 0.0
    v_up = np.where(up, v, -np.inf)
    i = int(np.argmax(v_up))
    gmax = v_up[i]
    gmin = np.min(np.where(low, v, np.inf))
    gap = gmax - gmin
    k_i = rows(i)
    b = gmax - v
    cand = low & (b > 0)
    if not cand.any():
        return i, None, gap
    a = kdiag[i] + kdiag - 2.0 * k_i
    a = np.where(a > 0, a, TAU)
    gain = np.where(cand, -(b * b) / a, np.inf)
    j = int(np.argmin(gain))
    return i, j, gap


def _update_pair(i, j, alpha, grad, y, C, kii, kjj, kij):
    """Analytic two-variable step; returns the new (alpha_i, alpha_j)."""
    ai, aj = alpha[i], alpha[j]
    if y[i] != y[j]:
        quad = kii + kjj - 2.0 * kij
        quad = quad if quad > 0 else TAU
        delta = (-grad[i] - grad[j]) / quad
        diff = ai - aj
        ai += delta
        aj += delta
        if diff > 0:
            if aj < 0:
                aj, ai = 0.0, diff
        elif ai < 0:
            ai, aj = 0.0, -diff
        if diff > 0:
            if ai > C:
                ai, aj = C, C - diff
        elif aj > C:
            aj, ai = C, C + diff
    else:
        quad = kii + kjj - 2.0 * kij
        quad = quad if quad > 0 else TAU
        delta = (grad[i] - grad[j]) / quad
        total = ai + aj
        ai -= delta
        aj += delta
        if total > C:
            if ai > C:
                ai, aj = C, total - C
        elif aj < 0:
            aj, ai = 0.0, total
        if total > C:
            if aj > C:
                aj, ai = C, total - C
        elif ai < 0:
            ai, aj = 0.0, total
    return ai, aj


def _bias(alpha, grad, y, C):
    yg = y * grad
    at_upper = alpha >= C
    at_lower = alpha <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        rho = float(np.mean(yg[free]))
    else:
        ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
        lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
        ub = np.min(yg[ub_mask]) if ub_mask.any() else np.inf
        lb = np.max(yg[lb_mask]) if lb_mask.any() else -np.inf
        rho = float((ub + lb) / 2)
    return -rho


def dual_objective(alpha, y, K):
    """Dual objective sum(a) - 1/2 sum_ij a_i a_j y_i y_j K_ij (to be maximised)."""
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def smo_train(X, y, C, gamma, tol=DEFAULT_TOL, max_iter=None, cache_mb=DEFAULT_CACHE_MB,
              kernel_matrix=None, debug=False):
    """Train a soft-margin RBF SVM on pre-scaled features.

    ``kernel_matrix`` may pass a precomputed training kernel (used by the
    grid search, which shares one matrix across folds and C values).  With
    ``debug=True`` the dual objective is checked for monotonic increase at
    every step.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n = y.shape[0]
    if X.shape[0] != n:
        raise DimensionMismatch("X and y lengths differ")
    if n < 2 or not (np.any(y > 0) and np.any(y < 0)):
        raise SingleClassInput("SMO needs at least one sample of each class")
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise ValueError("labels must be +1 / -1")
    if max_iter is None:
        max_iter = 100 * n

    rows = _KernelRows(X, gamma, cache_mb, kernel_matrix)
    kdiag = np.ones(n)
    alpha = np.zeros(n)
    grad = -np.ones(n)
    last_obj = 0.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        i, j, gap = _select_pair(alpha, grad, y, C, kdiag, rows)
        if i is None or j is None or gap < tol:
            converged = True
            it -= 1
            break
        k_i, k_j = rows(i), rows(j)
        old_i, old_j = alpha[i], alpha[j]
        alpha[i], alpha[j] = _update_pair(i, j, alpha, grad, y, C, kdiag[i], kdiag[j], k_i[j])
        d_i, d_j = alpha[i] - old_i, alpha[j] - old_j
        grad += y * (y[i] * d_i * k_i + y[j] * d_j * k_j)
        if debug:
            obj = -0.5 * float(alpha @ (grad - 1.0))
            assert obj >= last_obj - 1e-9 * max(1.0, abs(last_obj)), (
                f"dual objective decreased at iteration {it}: {last_obj} -> {obj}")
            last_obj = obj
    if not converged:
        warnings.warn(f"SMO stopped at the iteration cap ({max_iter}) before reaching tol={tol}",
                      NonConvergence, stacklevel=2)

    sv = np.flatnonzero(alpha > 0)
    model = SvmModel(support_vectors=X[sv].copy(), dual_coef=(alpha * y)[sv], bias=_bias(alpha, grad, y, C),
                     gamma=float(gamma), C=float(C), support=sv, n_iter=it, converged=converged,
                     objective=-0.5 * float(alpha @ (grad - 1.0)))
    return model


def kkt_residuals(model, X, y):
    """Per-sample KKT violation of a trained model on its training data."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    alpha = np.zeros(y.shape[0])
    alpha[model.support] = np.abs(model.dual_coef)
    margin = y * model.decision_function(X)
    res = np.zeros_like(margin)
    lower = alpha <= 0
    upper = alpha >= model.C
    free = ~(lower | upper)
    res[lower] = np.maximum(0.0, 1.0 - margin[lower])
    res[upper] = np.maximum(0.0, margin[upper] - 1.0)
    res[free] = np.abs(margin[free] - 1.0)
    return res


# -- cross-validated grid search ----------------------------------------------

@dataclasses.dataclass
class GridSearchReport:
    pairs: list             # [(C, gamma)]
    fold_accuracy: list     # per pair, list of per-fold accuracies
    mean_accuracy: list
    chosen: tuple
    folds: int
    note: str = "ties broken by smallest C, then smallest gamma"

    def rows(self):
        for (c, g), accs, mean in zip(self.pairs, self.fold_accuracy, self.mean_accuracy):
            yield c, g, mean, accs


def stratified_folds(y, v, seed):
    """Fold index per sample; each class is shuffled and dealt round-robin."""
    rng = np.random.Generator(np.random.PCG64(seed))
    folds = np.empty(len(y), dtype=np.int64)
    for cls in (1, -1):
        idx = np.flatnonzero(np.asarray(y) == cls)
        idx = idx[rng.permutation(idx.size)]
        folds[idx] = np.arange(idx.size) % v
    return folds


def cv_grid_search(X, y, grid, v=10, seed=0, tol=DEFAULT_TOL, cache_mb=DEFAULT_CACHE_MB):
    """v-fold CV over (C, gamma) pairs; the winner is retrained on all data."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).ravel()
    if v < 2:
        raise TooFewSamples("need at least 2 folds")
    counts = [int(np.sum(y == c)) for c in (1, -1)]
    if min(counts) < v:
        raise TooFewSamples(f"need >= {v} samples per class, got {counts}")
    pairs = [(float(c), float(g)) for c, g in grid]
    if not pairs:
        raise ValueError("empty parameter grid")
    folds = stratified_folds(y, v, seed)
    n = y.shape[0]
    share_kernel = 8 * n * n <= cache_mb * 2 ** 20

    results = {}
    for gamma, group in itertools.groupby(sorted(pairs, key=lambda p: (p[1], p[0])), key=lambda p: p[1]):
        K = rbf_matrix(X, X, gamma) if share_kernel else None
        for c, _ in group:
            accs = []
            for f in range(v):
                tr, te = folds != f, folds == f
                Ktr = K[np.ix_(tr, tr)] if K is not None else None
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", NonConvergence)
                    m = smo_train(X[tr], y[tr], c, gamma, tol=tol, cache_mb=cache_mb, kernel_matrix=Ktr)
                pred = m.predict(X[te])
                accs.append(float(np.mean(pred == y[te])))
            results[(c, gamma)] = accs
    fold_acc = [results[p] for p in pairs]
    means = [float(np.mean(a)) for a in fold_acc]
    best = min(range(len(pairs)), key=lambda k: (-means[k], pairs[k][0], pairs[k][1]))
    c, gamma = pairs[best]
    LOG.debug("grid search picked C=%g gamma=%g (cv acc %.4f)", c, gamma, means[best])
    K = rbf_matrix(X, X, gamma) if share_kernel else None
    model = smo_train(X, y, c, gamma, tol=tol, cache_mb=cache_mb, kernel_matrix=K)
    report = GridSearchReport(pairs=pairs, fold_accuracy=fold_acc, mean_accuracy=means,
                              chosen=(c, gamma), folds=v)
    return model, report


# -- text serialisation -------------------------------------------------------

def _fmt(x):
    return format(float(x), ".17g")


def _vec(values):
    return " ".join(_fmt(v) for v in values)


def format_model(model):
    lines = [f"version = {MODEL_VERSION}",
             f"regime = {model.regime}",
             f"C = {_fmt(model.C)}",
             f"gamma = {_fmt(model.gamma)}",
             f"bias = {_fmt(model.bias)}",
             f"n_features = {model.n_features}",
             f"n_sv = {model.n_sv}"]
    if model.scaler is not None:
        lines += [f"scaler.min = {_vec(model.scaler.min)}", f"scaler.max = {_vec(model.scaler.max)}"]
    lines.append(f"dual_coef = {_vec(model.dual_coef)}")
    lines += [f"sv[{k}] = {_vec(row)}" for k, row in enumerate(model.support_vectors)]
    return "\n".join(lines) + "\n"


def parse_model(text, source="<model>"):
    fields = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise CorruptBundle(f"{source}: malformed line {line!r}")
        fields[key.strip()] = val.strip()
    try:
        version = int(fields["version"])
    except (KeyError, ValueError):
        raise CorruptBundle(f"{source}: missing version") from None
    if version != MODEL_VERSION:
        raise VersionMismatch(f"{source}: model version {version}, expected {MODEL_VERSION}")

    def vec(key, n):
        try:
            out = np.array([float(t) for t in fields[key].split()], dtype=np.float64)
        except (KeyError, ValueError):
            raise CorruptBundle(f"{source}: missing or bad field {key}") from None
        if out.shape[0] != n:
            raise CorruptBundle(f"{source}: {key} has {out.shape[0]} values, expected {n}")
        return out

    try:
        n_sv = int(fields["n_sv"])
        d = int(fields["n_features"])
        C, gamma, bias = float(fields["C"]), float(fields["gamma"]), float(fields["bias"])
        regime = fields["regime"]
    except (KeyError, ValueError) as exc:
        raise CorruptBundle(f"{source}: bad header field ({exc})") from None
    sv_keys = [k for k in fields if k.startswith("sv[")]
    if len(sv_keys) != n_sv:
        raise CorruptBundle(f"{source}: {len(sv_keys)} support vectors, header says {n_sv}")
    svs = np.vstack([vec(f"sv[{k}]", d) for k in range(n_sv)]) if n_sv else np.empty((0, d))
    scaler = None
    if "scaler.min" in fields:
        scaler = MinMaxScaler(vec("scaler.min", d), vec("scaler.max", d))
    return SvmModel(support_vectors=svs, dual_coef=vec("dual_coef", n_sv), bias=bias, gamma=gamma,
                    C=C, scaler=scaler, regime=regime)


def save_model(model, path):
    with open(path, "w") as fh:
        fh.write(format_model(model))


def load_model(path):
    with open(path) as fh:
        return parse_model(fh.read(), str(path))
