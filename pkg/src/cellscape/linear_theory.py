"""Linear widest/narrowest cell models and numerical checks of their
block-wise smoothness and gradient-variance bounds.

Both models share n weight matrices W(1..n) of size d x d.  The widest cell
computes node i as W(i) x; the narrowest chains them, node i = W(i)...W(1) x.
The objective is the block quadratic 0.5 * sum_i ||node_i - t_i||^2, which
makes the widest cell's block smoothness constant exactly ||x||^2 and gives
the bounds a computable reference.  The verifiers estimate the narrowest
cell's block constants empirically and report whether they stay under the
scaled widest-cell bounds; violations are surfaced, never suppressed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegeneratePair,
    DimensionMismatch,
    InsufficientSamples,
    NoConvergence,
)

SPECTRAL_TOL = 1e-10
SPECTRAL_MAX_ITERS = 10_000


@dataclass
class LinearCellModel:
    """n stacked d x d weight matrices plus per-node quadratic targets."""

    weights: list  # of (d, d) arrays
    targets: list  # of (d,) arrays
    topology: str  # "widest" | "narrowest"

    def __post_init__(self):
        d = self.weights[0].shape[0]
        for w in self.weights:
            if w.shape != (d, d):
                raise DimensionMismatch(f"weight shape {w.shape}, expected ({d}, {d})")
        for t in self.targets:
            if t.shape != (d,):
                raise DimensionMismatch(f"target shape {t.shape}, expected ({d},)")
        if len(self.targets) != len(self.weights):
            raise DimensionMismatch("need one target per weight matrix")
        if self.topology not in ("widest", "narrowest"):
            raise ValueError(f"topology must be widest|narrowest, got {self.topology!r}")

    @property
    def n(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.weights[0].shape[0]

    def with_block(self, i, w):
        """Copy of the model with block i (1-based) replaced."""
        weights = [w.copy() for w in self.weights]
        weights[i - 1] = np.array(w, dtype=np.float64)
        return LinearCellModel(weights, [t.copy() for t in self.targets], self.topology)


def random_model(n, dim, topology, rng, scale=1.0):
    weights = [scale * rng.standard_normal((dim, dim)) / np.sqrt(dim) for _ in range(n)]
    targets = [rng.standard_normal(dim) for _ in range(n)]
    return LinearCellModel(weights, targets, topology)


def _check_input(m, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (m.dim,):
        raise DimensionMismatch(f"input shape {x.shape}, expected ({m.dim},)")
    return x


def forward_widest(x, m: LinearCellModel):
    """Concatenation of W(i) x for i = 1..n."""
    x = _check_input(m, x)
    return np.concatenate([w @ x for w in m.weights])


def forward_narrowest(x, m: LinearCellModel):
    """Concatenation of the prefix products W(i)...W(1) x."""
    x = _check_input(m, x)
    parts = []
    y = x
    for w in m.weights:
        y = w @ y
        parts.append(y)
    return np.concatenate(parts)


def node_values(x, m: LinearCellModel):
    z = forward_widest(x, m) if m.topology == "widest" else forward_narrowest(x, m)
    return np.split(z, m.n)


def loss(x, m: LinearCellModel):
    """0.5 * sum_i ||node_i - t_i||^2 for the model's own topology."""
    return 0.5 * sum(
        float(np.sum((y - t) ** 2)) for y, t in zip(node_values(x, m), m.targets)
    )


def grad_widest(m: LinearCellModel, x):
    """d(loss)/dW(i) = (W(i) x - t_i) x^T for each block."""
    x = _check_input(m, x)
    return [np.outer(w @ x - t, x) for w, t in zip(m.weights, m.targets)]


def _prefix_products(weights, dim):
    """prefix[i] = W(i)...W(1), with prefix[0] = I."""
    prods = [np.eye(dim)]
    for w in weights:
        prods.append(w @ prods[-1])
    return prods


def grad_narrowest(m: LinearCellModel, x):
    """Closed-form block gradients of the chained model.

    d(loss)/dW(i) = sum_{k>=i} (W(k)...W(i+1))^T (yhat_k - t_k) x^T (W(i-1)...W(1))^T
    with empty products equal to the identity.
    """
    x = _check_input(m, x)
    n, d = m.n, m.dim
    prefix = _prefix_products(m.weights, d)  # prefix[i] = W(i)...W(1)
    residuals = [prefix[k + 1] @ x - m.targets[k] for k in range(n)]
    grads = []
    for i in range(1, n + 1):
        # v = sum_{k>=i} (W(k)...W(i+1))^T residual_k, accumulated right-to-left
        v = residuals[n - 1]
        for k in range(n - 1, i - 1, -1):
            v = m.weights[k].T @ v + residuals[k - 1]
        grads.append(np.outer(v, prefix[i - 1] @ x))
    return grads


def grad_narrowest_batch(m: LinearCellModel, xs):
    """Block-i gradients for a batch of inputs, as arrays of shape (S, d, d)."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != m.dim:
        raise DimensionMismatch(f"batch shape {xs.shape}, expected (S, {m.dim})")
    n, d = m.n, m.dim
    prefix = _prefix_products(m.weights, d)
    # residuals[k] has shape (S, d)
    residuals = [xs @ prefix[k + 1].T - m.targets[k] for k in range(n)]
    out = []
    for i in range(1, n + 1):
        v = residuals[n - 1]
        for k in range(n - 1, i - 1, -1):
            v = v @ m.weights[k] + residuals[k - 1]
        left = xs @ prefix[i - 1].T  # (S, d)
        out.append(np.einsum("si,sj->sij", v, left))
    return out


def grad_widest_batch(m: LinearCellModel, xs):
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != m.dim:
        raise DimensionMismatch(f"batch shape {xs.shape}, expected (S, {m.dim})")
    out = []
    for w, t in zip(m.weights, m.targets):
        r = xs @ w.T - t
        out.append(np.einsum("si,sj->sij", r, xs))
    return out


def spectral_norm(w):
    """Largest singular value via power iteration on W^T W.

    Deterministic start vector; relative tolerance 1e-10, at most 10^4
    iterations.  Raises NoConvergence with the last iterate and residual.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise DimensionMismatch(f"expected a matrix, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise DimensionMismatch("matrix has non-finite entries")
    gram_vec = lambda v: w.T @ (w @ v)
    d = w.shape[1]
    v = np.ones(d) / np.sqrt(d)
    # deterministic tie-breaker in case the ones vector is in the null space
    v[0] += 0.5
    v /= np.linalg.norm(v)
    last = 0.0
    for _ in range(SPECTRAL_MAX_ITERS):
        u = gram_vec(v)
        norm = np.linalg.norm(u)
        if norm == 0.0:
            return 0.0
        v = u / norm
        est = np.sqrt(norm)
        if abs(est - last) <= SPECTRAL_TOL * max(est, 1.0):
            return float(est)
        last = est
    raise NoConvergence(
        f"power iteration did not converge in {SPECTRAL_MAX_ITERS} iterations",
        last_estimate=float(last),
        residual=float(abs(est - last)),
    )


@dataclass
class TheoremReport:
    """Outcome of one block-wise bound check."""

    theorem: str
    block: int
    lambdas: list
    empirical: float
    bound: float
    violated: bool
    slack: float
    trials: int
    details: dict = field(default_factory=dict)

    @property
    def margin(self):
        return self.bound - self.empirical

    def to_dict(self):
        return {
            "theorem": self.theorem,
            "block": self.block,
            "lambdas": [float(v) for v in self.lambdas],
            "empirical": self.empirical,
            "bound": self.bound,
            "margin": self.margin,
            "violated": self.violated,
            "slack": self.slack,
            "trials": self.trials,
            **self.details,
        }


def _ball_perturbation(rng, shape, radius):
    """Uniform draw from the Frobenius ball of the given radius."""
    g = rng.standard_normal(shape)
    norm = np.linalg.norm(g)
    if norm == 0.0:
        g.flat[0] = 1.0
        norm = 1.0
    u = rng.uniform() ** (1.0 / g.size)
    return g * (radius * u / norm)


def verify_block_smoothness(m: LinearCellModel, x, i, rng, trials=200, radius=None,
                            slack=1e-9):
    """Empirical block-i Lipschitz constant of the chained model vs the bound
    (prod_{j<i} lambda_j) * ||x||^2 inherited from the widest quadratic."""
    if m.topology != "narrowest":
        raise ValueError("smoothness check is defined on the narrowest model")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    x = _check_input(m, x)
    if radius is None:
        radius = 0.1 * np.linalg.norm(m.weights[i - 1])
        if radius == 0.0:
            radius = 0.1
    lambdas = [spectral_norm(w) for w in m.weights]
    l_widest = float(x @ x)
    bound = float(np.prod(lambdas[: i - 1])) * l_widest
    empirical = 0.0
    for _ in range(trials):
        for _attempt in range(10):
            w1 = m.weights[i - 1] + _ball_perturbation(rng, (m.dim, m.dim), radius)
            w2 = m.weights[i - 1] + _ball_perturbation(rng, (m.dim, m.dim), radius)
            denom = np.linalg.norm(w1 - w2, ord=2)
            if denom > 0.0:
                break
        else:
            raise DegeneratePair("could not sample a distinct perturbation pair")
        g1 = grad_narrowest(m.with_block(i, w1), x)[i - 1]
        g2 = grad_narrowest(m.with_block(i, w2), x)[i - 1]
        ratio = np.linalg.norm(g1 - g2, ord=2) / denom
        empirical = max(empirical, float(ratio))
    return TheoremReport(
        theorem="block_smoothness",
        block=i,
        lambdas=lambdas,
        empirical=empirical,
        bound=bound,
        violated=empirical > bound + slack,
        slack=slack,
        trials=trials,
        details={"radius": float(radius), "input_norm_sq": l_widest},
    )


def verify_gradient_variance(m: LinearCellModel, i, rng, samples=2000,
                             input_distribution=None, se_factor=3.0):
    """Empirical block-i gradient variance of the chained model vs the bound
    n * sum_{k>=i} (sigma_k * prod_{j<=k, j!=i} lambda_j)^2, with sigma_k
    estimated on the widest model from the same input draws."""
    if m.topology != "narrowest":
        raise ValueError("variance check is defined on the narrowest model")
    if samples < 2:
        raise InsufficientSamples(f"need >= 2 samples, got {samples}")
    if input_distribution is None:
        input_distribution = lambda rng, size, dim: rng.standard_normal((size, dim))
    xs = np.asarray(input_distribution(rng, samples, m.dim), dtype=np.float64)

    lambdas = [spectral_norm(w) for w in m.weights]
    widest = LinearCellModel(
        [w.copy() for w in m.weights], [t.copy() for t in m.targets], "widest"
    )

    def total_variance(grads_sdd):
        mean = grads_sdd.mean(axis=0)
        sq = np.sum((grads_sdd - mean) ** 2, axis=(1, 2))
        return float(sq.mean()), float(sq.std(ddof=1) / np.sqrt(len(sq)))

    narrow_grads = grad_narrowest_batch(m, xs)
    empirical, emp_se = total_variance(narrow_grads[i - 1])

    widest_grads = grad_widest_batch(widest, xs)
    sigmas_sq = [total_variance(g)[0] for g in widest_grads]

    bound = 0.0
    for k in range(i, m.n + 1):
        prod = 1.0
        for j in range(1, k + 1):
            if j != i:
                prod *= lambdas[j - 1]
        bound += sigmas_sq[k - 1] * prod * prod
    bound *= m.n

    return TheoremReport(
        theorem="gradient_variance",
        block=i,
        lambdas=lambdas,
        empirical=empirical,
        bound=bound,
        violated=empirical > bound + se_factor * emp_se,
        slack=se_factor * emp_se,
        trials=samples,
        details={"standard_error": emp_se, "sigmas_sq": sigmas_sq},
    )
