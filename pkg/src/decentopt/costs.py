"""Per-agent cost functions with gradients, curvature constants, and
centralized ground-truth solvers.

Every model exposes the aggregate weights q (defaults to all-ones).  The
weighted problem is min_w sum_k q_k J_k(w); the uniform problem replaces
q with ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


class ConvergenceError(RuntimeError):
    """Centralized solver failed to reach its tolerance."""


@dataclass(frozen=True)
class GroundTruth:
    """Minimizers of the weighted (w_star) and uniform (w_o) aggregate
    problems, plus the worst gradient norm at the reported solutions."""

    w_star: np.ndarray
    w_o: np.ndarray
    solver_residual: float


class CostModel:
    """Base class: N agents, M-dimensional variable, positive weights q."""

    kind = "base"

    def __init__(self, n_agents: int, dim: int, q=None):
        self.n_agents = int(n_agents)
        self.dim = int(dim)
        if self.n_agents < 1 or self.dim < 1:
            raise ValueError("n_agents and dim must be positive")
        self.q = np.ones(self.n_agents) if q is None else np.asarray(q, dtype=float)
        if self.q.shape != (self.n_agents,) or self.q.min() <= 0:
            raise ValueError("q must be a positive length-N vector")

    def grad(self, w: np.ndarray) -> np.ndarray:
        """Per-agent gradients at per-agent points; w and result are (N, M)."""
        raise NotImplementedError

    def grad_at(self, x: np.ndarray) -> np.ndarray:
        """All agents' gradients at the common point x; result is (N, M)."""
        raise NotImplementedError

    def value_at(self, x: np.ndarray) -> np.ndarray:
        """Per-agent costs J_k(x); result is (N,)."""
        raise NotImplementedError

    def weighted_grad(self, x: np.ndarray) -> np.ndarray:
        """Gradient of sum_k q_k J_k at x."""
        return self.q @ self.grad_at(x)

    def to_config(self) -> dict:
        raise NotImplementedError


class QuadraticModel(CostModel):
    """J_k(w) = 0.5 w^T H_k w - b_k^T w + c_k with constant Hessians."""

    kind = "quadratic"

    def __init__(self, h: np.ndarray, b: np.ndarray, const=None, q=None):
        h = np.asarray(h, dtype=float)
        b = np.asarray(b, dtype=float)
        n, m = b.shape
        if h.shape != (n, m, m):
            raise ValueError(f"Hessian stack shape {h.shape} does not match {(n, m, m)}")
        super().__init__(n, m, q=q)
        self.h = h
        self.b = b
        self.const = np.zeros(n) if const is None else np.asarray(const, dtype=float)

    def grad(self, w):
        return (self.h @ w[:, :, np.newaxis])[:, :, 0] - self.b

    def grad_at(self, x):
        return self.h @ x - self.b

    def value_at(self, x):
        return 0.5 * (x @ self.h @ x) - self.b @ x + self.const

    def hessians(self) -> np.ndarray:
        """Constant per-agent Hessians, shape (N, M, M)."""
        return self.h


class LeastSquaresModel(QuadraticModel):
    """J_k(w) = 0.5 ||U_k w - d_k||^2 over per-agent data (U_k, d_k)."""

    kind = "least_squares"

    def __init__(self, u: np.ndarray, d: np.ndarray, q=None, seed=None,
                 samples_per_agent=None):
        u = np.asarray(u, dtype=float)
        d = np.asarray(d, dtype=float)
        h = np.einsum("ksi,ksj->kij", u, u)
        b = np.einsum("ksi,ks->ki", u, d)
        const = 0.5 * np.einsum("ks,ks->k", d, d)
        super().__init__(h, b, const=const, q=q)
        self.u = u
        self.d = d
        self.seed = seed
        self.samples_per_agent = u.shape[1] if samples_per_agent is None else samples_per_agent

    def to_config(self):
        return {
            "kind": "least_squares",
            "seed": self.seed,
            "n_agents": self.n_agents,
            "dim": self.dim,
            "samples_per_agent": self.samples_per_agent,
            "q": self.q.tolist(),
        }


class MSEQuadraticModel(QuadraticModel):
    """J_k(w) = 0.5 (w^T R_k w - 2 r_k^T w) with given covariance data."""

    kind = "mse_quadratic"

    def __init__(self, covariances, cross_vectors, q=None):
        r_cov = np.asarray(covariances, dtype=float)
        r_vec = np.asarray(cross_vectors, dtype=float)
        for k, rk in enumerate(r_cov):
            if np.abs(rk - rk.T).max() > 1e-10:
                raise ValueError(f"covariance R_{k} is not symmetric")
        super().__init__(r_cov, r_vec, q=q)
        self.r_cov = r_cov
        self.r_vec = r_vec

    def to_config(self):
        return {
            "kind": "mse_quadratic",
            "n_agents": self.n_agents,
            "dim": self.dim,
            "covariances": self.r_cov.tolist(),
            "cross_vectors": self.r_vec.tolist(),
            "q": self.q.tolist(),
        }


class LogisticModel(CostModel):
    """Regularized logistic regression:
    J_k(w) = (1/L) sum_l ln(1 + exp(-gamma_{kl} h_{kl}^T w)) + (rho/2)||w||^2.
    """

    kind = "logistic"

    def __init__(self, features: np.ndarray, labels: np.ndarray, ridge: float,
                 q=None, seed=None):
        features = np.asarray(features, dtype=float)  # (N, L, M)
        labels = np.asarray(labels, dtype=float)      # (N, L) in {-1, +1}
        n, n_samples, m = features.shape
        if labels.shape != (n, n_samples):
            raise ValueError("labels shape does not match features")
        if ridge <= 0:
            raise ValueError("ridge must be positive")
        super().__init__(n, m, q=q)
        self.features = features
        self.labels = labels
        self.ridge = float(ridge)
        self.n_samples = n_samples
        self.seed = seed

    def _margins_at(self, x):
        return self.labels * (self.features @ x)

    def grad(self, w):
        z = self.labels * np.einsum("klm,km->kl", self.features, w)
        s = expit(-z)  # sigmoid(-gamma h^T w)
        data = -np.einsum("klm,kl->km", self.features, self.labels * s) / self.n_samples
        return data + self.ridge * w

    def grad_at(self, x):
        s = expit(-self._margins_at(x))
        data = -np.einsum("klm,kl->km", self.features, self.labels * s) / self.n_samples
        return data + self.ridge * x

    def value_at(self, x):
        losses = np.logaddexp(0.0, -self._margins_at(x)).mean(axis=1)
        return losses + 0.5 * self.ridge * float(x @ x)

    def to_config(self):
        return {
            "kind": "logistic",
            "seed": self.seed,
            "n_agents": self.n_agents,
            "dim": self.dim,
            "samples_per_agent": self.n_samples,
            "ridge": self.ridge,
            "q": self.q.tolist(),
        }


def least_squares_model(seed: int, n_agents: int, dim: int,
                        samples_per_agent: int, q=None) -> LeastSquaresModel:
    """Seeded synthetic least-squares data: standard-normal U_k and d_k."""
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((n_agents, samples_per_agent, dim))
    d = rng.standard_normal((n_agents, samples_per_agent))
    return LeastSquaresModel(u, d, q=q, seed=seed, samples_per_agent=samples_per_agent)


def logistic_model(seed: int, n_agents: int, dim: int, samples_per_agent: int,
                   ridge: float, q=None) -> LogisticModel:
    """Seeded synthetic classification data: normal features, labels from a
    planted weight vector with additive label noise."""
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((n_agents, samples_per_agent, dim))
    w_plant = rng.standard_normal(dim)
    noise = 0.5 * rng.standard_normal((n_agents, samples_per_agent))
    labels = np.where(features @ w_plant + noise >= 0, 1.0, -1.0)
    return LogisticModel(features, labels, ridge, q=q, seed=seed)


def mse_quadratic_model(n_agents: int, dim: int, covariances, cross_vectors,
                        q=None) -> MSEQuadraticModel:
    return MSEQuadraticModel(covariances, cross_vectors, q=q)


def model_from_config(cfg: dict) -> CostModel:
    """Rebuild a model from its JSON-friendly config dict."""
    kind = cfg.get("kind")
    q = cfg.get("q")
    if kind == "least_squares":
        return least_squares_model(cfg["seed"], cfg["n_agents"], cfg["dim"],
                                   cfg["samples_per_agent"], q=q)
    if kind == "logistic":
        return logistic_model(cfg["seed"], cfg["n_agents"], cfg["dim"],
                              cfg["samples_per_agent"], cfg["ridge"], q=q)
    if kind == "mse_quadratic":
        return mse_quadratic_model(cfg["n_agents"], cfg["dim"],
                                   cfg["covariances"], cfg["cross_vectors"], q=q)
    raise ValueError(f"unknown model kind {kind!r}")


def _solve_quadratic(model: QuadraticModel, weights: np.ndarray) -> np.ndarray:
    h_sum = np.einsum("k,kij->ij", weights, model.h)
    b_sum = weights @ model.b
    return np.linalg.solve(h_sum, b_sum)


def _solve_logistic_gd(model: LogisticModel, weights: np.ndarray,
                       tol: float = 1e-12, max_iter: int = 200_000):
    """Gradient descent with Armijo backtracking on the weighted aggregate."""

    def f(x):
        return float(weights @ model.value_at(x))

    def g(x):
        return weights @ model.grad_at(x)

    x = np.zeros(model.dim)
    fx = f(x)
    t = 1.0
    for _ in range(max_iter):
        gx = g(x)
        gnorm2 = float(gx @ gx)
        if np.sqrt(gnorm2) <= tol:
            return x, np.sqrt(gnorm2)
        t = min(t * 2.0, 1e6)
        while True:
            x_new = x - t * gx
            fx_new = f(x_new)
            if fx_new <= fx - 1e-4 * t * gnorm2:
                break
            t *= 0.5
            if t < 1e-18:
                raise ConvergenceError("line search collapsed")
        x, fx = x_new, fx_new
    residual = float(np.linalg.norm(g(x)))
    if residual > 1e-8:
        raise ConvergenceError(
            f"logistic solver stopped at gradient norm {residual:.3e}"
        )
    return x, residual


def solve_centralized(model: CostModel) -> GroundTruth:
    """Ground truth for the weighted and uniform aggregate problems.

    Quadratics are solved directly; logistic models run gradient descent
    with backtracking down to gradient norm 1e-12 (hard failure above
    1e-8).
    """
    ones = np.ones(model.n_agents)
    if isinstance(model, QuadraticModel):
        w_star = _solve_quadratic(model, model.q)
        w_o = _solve_quadratic(model, ones)
        residual = max(
            float(np.linalg.norm(model.weighted_grad(w_star))),
            float(np.linalg.norm(ones @ model.grad_at(w_o))),
        )
        if residual > 1e-10:
            raise ConvergenceError(f"direct solve residual {residual:.3e}")
        return GroundTruth(w_star=w_star, w_o=w_o, solver_residual=residual)
    if isinstance(model, LogisticModel):
        w_star, r1 = _solve_logistic_gd(model, model.q)
        if np.array_equal(model.q, ones):
            w_o, r2 = w_star.copy(), r1
        else:
            w_o, r2 = _solve_logistic_gd(model, ones)
        return GroundTruth(w_star=w_star, w_o=w_o, solver_residual=max(r1, r2))
    raise TypeError(f"no centralized solver for model kind {model.kind!r}")


def hessian_bounds(model: CostModel):
    """Curvature constants (nu, delta, k_o).

    delta bounds every agent's Hessian from above; nu is the best
    per-agent lower curvature bound, attained at agent k_o (ties broken
    by smallest index).  Raises ValueError when no agent is strongly
    convex.
    """
    if isinstance(model, QuadraticModel):
        eigs = np.linalg.eigvalsh(model.h)  # (N, M), ascending per agent
        lam_min = eigs[:, 0]
        lam_max = eigs[:, -1]
        delta = float(lam_max.max())
        k_o = int(np.argmax(lam_min))
        nu = float(lam_min[k_o])
        if nu <= 0:
            raise ValueError("no agent has a strongly convex cost (nu <= 0)")
        return nu, delta, k_o
    if isinstance(model, LogisticModel):
        # data-term curvature is at most s_max(H_k)^2 / (4 L)
        smax = np.linalg.svd(model.features, compute_uv=False)[:, 0]
        delta = model.ridge + float((smax ** 2).max()) / (4.0 * model.n_samples)
        return model.ridge, delta, 0
    raise TypeError(f"no curvature bounds for model kind {model.kind!r}")
