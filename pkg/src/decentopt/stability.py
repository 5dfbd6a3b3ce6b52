"""Error dynamics, eigenstructure, and step-size stability ranges.

For a balanced combination matrix A with Perron vector p and dual factor
V (so that null(V) = span{1}), the distance-to-solution recursion of the
correction-term engine is driven by

    B   = [[Abar^T, -P^{-1} V], [V Abar^T, I - V P^{-1} V]]
    T_d = [[Abar^T, 0], [V Abar^T, 0]]          (gradient enters combined)
    T_e = [[I, 0], [V, 0]]                      (gradient enters raw)

with Abar = (I + A)/2 and P = diag(p).  For quadratic costs the exact
one-step error map is B - T diag(mu_k H_k, 0) lifted agent-wise, which
this module builds, decomposes, and turns into closed-form step-size
bounds.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .algorithms import (
    _STEP_FUNCTIONS,
    _EngineContext,
    StepSizes,
    WEIGHTED_ENGINES,
    init_state,
    run,
)
from .costs import CostModel, QuadraticModel, solve_centralized
from .graphs import CombinationMatrix, PerronData, SpectralError, matrix_from_array, perron_vector
from .spectral import VMatrix, compute_v, general_eig

UNIT_EIG_TOL = 1e-8
CANONICAL_ROW_TOL = 1e-10


@dataclass
class ErrorDynamics:
    """Network-level (dimension-free) blocks of the error recursion,
    optionally carrying per-agent Hessians and step sizes."""

    matrix: CombinationMatrix
    perron: PerronData
    vmat: VMatrix
    b: np.ndarray
    t_d: np.ndarray
    t_e: np.ndarray
    h: np.ndarray | None = None
    mu: np.ndarray | None = None

    @property
    def a(self) -> np.ndarray:
        return self.matrix.a

    @property
    def abar(self) -> np.ndarray:
        return (np.eye(self.matrix.n) + self.matrix.a) / 2.0

    @property
    def p(self) -> np.ndarray:
        return self.perron.p

    @property
    def v(self) -> np.ndarray:
        return self.vmat.v


def build_error_dynamics(matrix, perron: PerronData = None, vmat: VMatrix = None,
                         model: CostModel = None, steps: StepSizes = None) -> ErrorDynamics:
    """Assemble B, T_d, T_e for a balanced combination matrix.

    model/steps are optional; they are only needed later by
    one_step_matrix, which requires constant Hessians (quadratic costs).
    """
    if not isinstance(matrix, CombinationMatrix):
        matrix = matrix_from_array(np.asarray(matrix, dtype=float))
    if perron is None:
        perron = perron_vector(matrix)
    if vmat is None:
        vmat = compute_v(matrix, perron)
    n = matrix.n
    p = perron.p
    abar_t = ((np.eye(n) + matrix.a) / 2.0).T
    v = vmat.v
    pinv_v = v / p[:, np.newaxis]
    eye = np.eye(n)
    b = np.block([[abar_t, -pinv_v], [v @ abar_t, eye - v @ pinv_v]])
    t_d = np.block([[abar_t, np.zeros((n, n))], [v @ abar_t, np.zeros((n, n))]])
    t_e = np.block([[eye, np.zeros((n, n))], [v, np.zeros((n, n))]])
    h = None
    if model is not None:
        if not isinstance(model, QuadraticModel):
            raise TypeError("error dynamics need constant Hessians (quadratic costs)")
        if model.n_agents != n:
            raise ValueError("model size does not match the combination matrix")
        h = model.hessians()
    mu = None if steps is None else steps.mu
    return ErrorDynamics(matrix=matrix, perron=perron, vmat=vmat, b=b,
                         t_d=t_d, t_e=t_e, h=h, mu=mu)


def one_step_matrix(dyn: ErrorDynamics, engine: str = "exact_diffusion",
                    mu=None) -> np.ndarray:
    """Exact one-step error map for quadratic costs, lifted to
    (2 N M, 2 N M) with agent-major flattening: B - T diag(mu_k H_k, 0).
    """
    if dyn.h is None:
        raise ValueError("one_step_matrix needs Hessians; build with a quadratic model")
    if mu is None:
        mu = dyn.mu
    if mu is None:
        raise ValueError("one_step_matrix needs step sizes")
    n = dyn.matrix.n
    mu = np.broadcast_to(np.atleast_1d(np.asarray(mu, dtype=float)), (n,))
    if engine in WEIGHTED_ENGINES:
        t = dyn.t_d
    elif engine == "extra":
        t = dyn.t_e
    else:
        raise ValueError(f"no analytic error map for engine {engine!r}")
    m = dyn.h.shape[-1]
    mh = scipy.linalg.block_diag(*(mu[k] * dyn.h[k] for k in range(n)))
    big = np.kron(dyn.b, np.eye(m))
    big[:, : n * m] -= np.kron(t, np.eye(m))[:, : n * m] @ mh
    return big


def simulate_error_recursion(dyn: ErrorDynamics, model: QuadraticModel,
                             steps: StepSizes, w0: np.ndarray, iters: int,
                             engine: str = "exact_diffusion_pd") -> np.ndarray:
    """Run the actual engine and return its stacked errors
    [W_i - W*; Y_i - Y*], shape (iters + 1, 2N, M) with row 0 the seed.

    Cross-check target: errors[i] must equal the one-step matrix applied
    i times to errors[0] when the costs are quadratic.
    """
    if engine not in ("exact_diffusion_pd", "extra"):
        raise ValueError("error recursion is defined for exact_diffusion_pd and extra")
    n, m = model.n_agents, model.dim
    gt = solve_centralized(model)
    g = model.grad_at(gt.w_star if engine == "exact_diffusion_pd" else gt.w_o)
    pinv_v = np.linalg.pinv(dyn.v)
    if engine == "exact_diffusion_pd":
        w_ref = gt.w_star
        y_ref = -pinv_v @ (dyn.p[:, np.newaxis] * (dyn.abar.T @ (steps.mu[:, np.newaxis] * g)))
    else:
        w_ref = gt.w_o
        y_ref = -(steps.mu[0] / n) * (pinv_v @ g)

    ctx = _EngineContext(engine=engine, model=model, a=dyn.a, abar=dyn.abar,
                         p=dyn.p, steps=steps, v=dyn.v,
                         pinv_v=dyn.v / dyn.p[:, np.newaxis])
    state = init_state(engine, model, dyn.matrix, steps, np.asarray(w0, dtype=float))
    step = _STEP_FUNCTIONS[engine]
    errors = np.empty((iters + 1, 2 * n, m))
    errors[0] = np.vstack([state.w - w_ref, state.y - y_ref])
    for i in range(1, iters + 1):
        step(state, ctx)
        errors[i] = np.vstack([state.w - w_ref, state.y - y_ref])
    return errors


@dataclass
class SpectralPair:
    """Eigendecomposition of B with the unit pair pinned to canonical
    vectors: right columns [1; 0], [0; 1] and inverse rows [p^T, 0],
    [0, 1^T/N].  d[0] = d[1] = 1 exactly; the rest come in conjugate
    pairs with |d| = sqrt(lambda_k(Abar)) < 1."""

    d: np.ndarray
    x: np.ndarray
    x_inv: np.ndarray

    @property
    def x_r(self) -> np.ndarray:
        """Right eigenvector columns away from the unit pair."""
        return self.x[:, 2:]

    @property
    def x_l(self) -> np.ndarray:
        """Inverse rows away from the unit pair."""
        return self.x_inv[2:, :]

    @property
    def norm_r(self) -> float:
        return float(np.linalg.norm(self.x_r, 2)) if self.x_r.size else 0.0

    @property
    def norm_l(self) -> float:
        return float(np.linalg.norm(self.x_l, 2)) if self.x_l.size else 0.0


def decompose_b(dyn: ErrorDynamics, perron: PerronData = None, c: float = None) -> SpectralPair:
    """Diagonalize B = X D X^{-1} with the unit eigenvalue pair pinned.

    The two eigenvalues at 1 are replaced by the canonical right vectors
    and the inverse is verified to reproduce the canonical left rows
    (they are unique once the right block is pinned).  The remaining
    columns are rescaled so each column/inverse-row pair has equal norm,
    which keeps ||X_R|| ||X_L|| small without affecting invariants.

    c, when given, additionally scales X_R by 1/c and X_L by c; products
    such as ||X_L|| ||T|| ||X_R|| are invariant to it.
    """
    if perron is None:
        perron = dyn.perron
    n = dyn.matrix.n
    vals, x, _ = general_eig(dyn.b)
    unit = np.abs(vals - 1.0) <= UNIT_EIG_TOL
    if int(unit.sum()) != 2 or not (unit[0] and unit[1]):
        raise SpectralError(
            f"expected exactly two leading unit eigenvalues, found {int(unit.sum())}"
        )
    d = vals.copy()
    d[0] = 1.0
    d[1] = 1.0
    x = x.astype(complex)
    x[:, 0] = np.concatenate([np.ones(n), np.zeros(n)])
    x[:, 1] = np.concatenate([np.zeros(n), np.ones(n)])
    x_inv = np.linalg.inv(x)
    l1 = np.concatenate([perron.p, np.zeros(n)])
    l2 = np.concatenate([np.zeros(n), np.ones(n) / n])
    row_err = max(np.abs(x_inv[0] - l1).max(), np.abs(x_inv[1] - l2).max())
    if row_err > CANONICAL_ROW_TOL:
        raise SpectralError(f"canonical left rows not recovered (residual {row_err:.3e})")
    x_inv[0] = l1
    x_inv[1] = l2
    # per-pair balancing: ||x[:, j]|| == ||x_inv[j, :]|| for every j >= 2
    for j in range(2, 2 * n):
        cn = np.linalg.norm(x[:, j])
        rn = np.linalg.norm(x_inv[j, :])
        s = np.sqrt(rn / cn)
        x[:, j] *= s
        x_inv[j, :] /= s
    if c is not None:
        if c <= 0:
            raise ValueError("c must be positive")
        x[:, 2:] /= c
        x_inv[2:, :] *= c
    return SpectralPair(d=d, x=x, x_inv=x_inv)


def predicted_b_spectrum(matrix: CombinationMatrix) -> np.ndarray:
    """Closed-form eigenvalues of B: {1, 1} plus, for every non-Perron
    eigenvalue lam of Abar, the roots of d^2 - 2 lam d + lam = 0 (a
    conjugate pair of modulus sqrt(lam))."""
    if not isinstance(matrix, CombinationMatrix):
        matrix = matrix_from_array(np.asarray(matrix, dtype=float))
    n = matrix.n
    lams = np.linalg.eigvals((np.eye(n) + matrix.a) / 2.0)
    drop = int(np.argmin(np.abs(lams - 1.0)))
    out = [1.0 + 0.0j, 1.0 + 0.0j]
    for k, lam in enumerate(lams):
        if k == drop:
            continue
        root = np.sqrt(complex(lam * lam - lam))
        out.extend([lam + root, lam - root])
    return np.sort_complex(np.asarray(out))


def b_spectrum_residual(dyn: ErrorDynamics) -> float:
    """Largest gap between the computed spectrum of B and the closed-form
    prediction, under greedy multiset matching.  Sorting both lists is not
    enough: repeated eigenvalues (for example Abar spectra like
    {1, 1/2, 1/2}) interleave their conjugate pairs differently once
    float fuzz enters the real parts."""
    actual = list(np.linalg.eigvals(dyn.b))
    predicted = predicted_b_spectrum(dyn.matrix)
    worst = 0.0
    for value in predicted:
        gaps = [abs(value - other) for other in actual]
        k = int(np.argmin(gaps))
        worst = max(worst, gaps[k])
        actual.pop(k)
    return float(worst)


@dataclass(frozen=True)
class StabilityBound:
    """Closed-form step-size range: the engine is linearly convergent for
    max_k mu_k below mu_bound, with contraction factor rho_at(mu)."""

    engine: str
    mu_bound: float
    lam: float
    alpha: float
    sigma11: float
    sigma12: float
    sigma21: float
    sigma22: float
    nu: float
    delta: float
    p_max: float
    norm_r: float
    norm_l: float
    t_norm: float
    c_opt: float

    def rho_at(self, mu: float) -> float:
        """Contraction factor of the two-branch recursion at step size mu
        (the largest per-agent step for heterogeneous tunings)."""
        gap = 1.0 - self.lam
        branch1 = 1.0 - self.sigma11 * mu + 2.0 * self.sigma21 ** 2 * mu ** 2 / gap
        branch2 = (self.lam + (self.sigma12 ** 2 / self.sigma11) * mu
                   + 2.0 * self.sigma22 ** 2 * mu ** 2 / gap)
        return max(branch1, branch2)


def _assemble_bound(engine: str, sigma11: float, p_max: float, lam: float,
                    nu: float, delta: float, dec: SpectralPair,
                    t_norm: float) -> StabilityBound:
    norm_r, norm_l = dec.norm_r, dec.norm_l
    alpha = norm_l * t_norm * norm_r
    # at the optimal c the two cross couplings coincide:
    # sigma12^2 = sigma21^2 = sqrt(p_max) * alpha * delta^2
    cross_sq = np.sqrt(p_max) * alpha * delta ** 2
    sigma_cross = float(np.sqrt(cross_sq))
    sigma22 = alpha * delta
    mu_bound = sigma11 * (1.0 - lam) / (2.0 * cross_sq)
    c_opt = float(np.sqrt(np.sqrt(p_max) * norm_r / (norm_l * t_norm)))
    return StabilityBound(engine=engine, mu_bound=float(mu_bound), lam=float(lam),
                          alpha=float(alpha), sigma11=float(sigma11),
                          sigma12=sigma_cross, sigma21=sigma_cross,
                          sigma22=float(sigma22), nu=float(nu), delta=float(delta),
                          p_max=float(p_max), norm_r=norm_r, norm_l=norm_l,
                          t_norm=float(t_norm), c_opt=c_opt)


def diffusion_step_bound(matrix, perron: PerronData = None, tau=None,
                         nu: float = 1.0, delta: float = 1.0,
                         k_o: int = 0) -> StabilityBound:
    """Step-size stability bound for the correction-term engine.

    Args:
        matrix: balanced combination matrix.
        perron: its Perron data (computed when omitted).
        tau: per-agent step ratios mu_k / max_j mu_j (all ones when
            omitted); normalized internally so max(tau) = 1.
        nu: lower curvature bound at the strongly convex agent k_o.
        delta: global upper curvature bound.
        k_o: index of the agent realizing nu.

    Returns:
        StabilityBound on mu_max = max_k mu_k with
        mu_bound = sigma11 (1 - lam) / (2 sigma21^2) at the optimal
        eigenvector scaling.
    """
    if not isinstance(matrix, CombinationMatrix):
        matrix = matrix_from_array(np.asarray(matrix, dtype=float))
    if matrix.n < 2:
        raise ValueError("stability bounds need at least two agents")
    if perron is None:
        perron = perron_vector(matrix)
    n = matrix.n
    tau = np.ones(n) if tau is None else np.asarray(tau, dtype=float)
    if tau.shape != (n,) or tau.min() <= 0:
        raise ValueError("tau must be a positive length-N vector")
    tau = tau / tau.max()
    if nu <= 0 or delta < nu:
        raise ValueError("need 0 < nu <= delta")
    if not 0 <= k_o < n:
        raise ValueError("k_o out of range")
    dyn = build_error_dynamics(matrix, perron)
    dec = decompose_b(dyn, perron)
    lam = float(np.sqrt((1.0 + perron.lambda2) / 2.0))
    sigma11 = float(perron.p[k_o] * tau[k_o] * nu)
    t_norm = float(np.linalg.norm(dyn.t_d, 2))
    return _assemble_bound("exact_diffusion", sigma11, float(perron.p.max()),
                           lam, nu, delta, dec, t_norm)


def extra_step_bound(matrix, nu: float = 1.0, delta: float = 1.0) -> StabilityBound:
    """Step-size stability bound for the symmetric doubly stochastic
    variant whose gradient enters outside the combine (T_e route).

    sigma11 = nu / N here, and the bound reads
    mu_bound = nu (1 - lam) / (2 sqrt(N) alpha_e delta^2).
    """
    if not isinstance(matrix, CombinationMatrix):
        matrix = matrix_from_array(np.asarray(matrix, dtype=float))
    if matrix.n < 2:
        raise ValueError("stability bounds need at least two agents")
    a = matrix.a
    if np.abs(a - a.T).max() > 1e-10 or np.abs(a.sum(axis=1) - 1.0).max() > 1e-10:
        raise ValueError("this bound needs a symmetric doubly stochastic matrix")
    perron = perron_vector(matrix)
    dyn = build_error_dynamics(matrix, perron)
    dec = decompose_b(dyn, perron)
    lam = float(np.sqrt((1.0 + perron.lambda2) / 2.0))
    sigma11 = nu / matrix.n
    if nu <= 0 or delta < nu:
        raise ValueError("need 0 < nu <= delta")
    t_norm = float(np.linalg.norm(dyn.t_e, 2))
    return _assemble_bound("extra", float(sigma11), float(perron.p.max()),
                           lam, nu, delta, dec, t_norm)


def norm_comparison(matrix) -> tuple:
    """Spectral norms (||T_d||, ||T_e||, ratio) over the same symmetric
    doubly stochastic matrix.  The combined route is never louder:
    ||T_d|| < ||T_e|| strictly for N >= 2 (equality only in the trivial
    single-agent case, which returns (1.0, 1.0, 1.0))."""
    if not isinstance(matrix, CombinationMatrix):
        matrix = matrix_from_array(np.asarray(matrix, dtype=float))
    if matrix.n == 1:
        return (1.0, 1.0, 1.0)
    a = matrix.a
    if np.abs(a - a.T).max() > 1e-10 or np.abs(a.sum(axis=1) - 1.0).max() > 1e-10:
        raise ValueError("norm comparison needs a symmetric doubly stochastic matrix")
    dyn = build_error_dynamics(matrix)
    t_d = float(np.linalg.norm(dyn.t_d, 2))
    t_e = float(np.linalg.norm(dyn.t_e, 2))
    return (t_d, t_e, t_d / t_e)


@dataclass(frozen=True)
class TwoAgentCase:
    """Closed-form two-agent quadratic case over A = [[a, 1-a], [1-a, a]]
    with identical scalar Hessians sigma2.

    e_d / e_e are the reduced 3x3 error maps (the trivial unit eigenvalue
    removed); q_d / q_e are the full 4x4 maps from the generic builder,
    whose spectra must equal {1} plus the reduced ones."""

    a: float
    sigma2: float
    mu_d: float
    mu_e: float
    e_d: np.ndarray
    e_e: np.ndarray
    q_d: np.ndarray
    q_e: np.ndarray
    roots_d: np.ndarray
    roots_e: np.ndarray
    specrad_d: float
    specrad_e: float
    stable_d: bool
    stable_e: bool


def two_agent_case(a: float, sigma2: float, mu_d: float, mu_e: float = None) -> TwoAgentCase:
    """Build both engines' closed-form error maps for two agents.

    The reduced maps are

        E_d = [[1 - m, 0, 0],
               [0, (1 - m) a,            -sqrt(2 - 2a)],
               [0, (1 - m) a sqrt((1-a)/2),  a]]         m = mu_d sigma2

        E_e = [[1 - me, 0, 0],
               [0, a - me,               -sqrt(2 - 2a)],
               [0, (a - me) sqrt((1-a)/2),   a]]         me = mu_e sigma2

    with characteristic pairs
        theta^2 - (2 - m) a theta + (1 - m) a = 0
        theta^2 - (2a - me) theta + (a - me) = 0.
    """
    if not 0.0 < a < 1.0:
        raise ValueError("self-weight a must lie in (0, 1)")
    if sigma2 <= 0 or mu_d <= 0:
        raise ValueError("sigma2 and mu_d must be positive")
    if mu_e is None:
        mu_e = mu_d
    if mu_e <= 0:
        raise ValueError("mu_e must be positive")
    m = mu_d * sigma2
    me = mu_e * sigma2
    s = np.sqrt(2.0 - 2.0 * a)
    t = np.sqrt((1.0 - a) / 2.0)
    e_d = np.array([
        [1.0 - m, 0.0, 0.0],
        [0.0, (1.0 - m) * a, -s],
        [0.0, (1.0 - m) * a * t, a],
    ])
    e_e = np.array([
        [1.0 - me, 0.0, 0.0],
        [0.0, a - me, -s],
        [0.0, (a - me) * t, a],
    ])
    matrix = matrix_from_array(np.array([[a, 1.0 - a], [1.0 - a, a]]))
    dyn = build_error_dynamics(matrix, model=QuadraticModel(
        h=np.full((2, 1, 1), sigma2), b=np.zeros((2, 1))))
    q_d = one_step_matrix(dyn, "exact_diffusion", mu=mu_d)
    q_e = one_step_matrix(dyn, "extra", mu=mu_e)
    roots_d = np.linalg.eigvals(e_d[1:, 1:])
    roots_e = np.linalg.eigvals(e_e[1:, 1:])
    specrad_d = float(np.abs(np.linalg.eigvals(e_d)).max())
    specrad_e = float(np.abs(np.linalg.eigvals(e_e)).max())
    return TwoAgentCase(a=a, sigma2=sigma2, mu_d=float(mu_d), mu_e=float(mu_e),
                        e_d=e_d, e_e=e_e, q_d=q_d, q_e=q_e,
                        roots_d=roots_d, roots_e=roots_e,
                        specrad_d=specrad_d, specrad_e=specrad_e,
                        stable_d=specrad_d < 1.0, stable_e=specrad_e < 1.0)


def two_agent_onset(a: float, sigma2: float, algorithm: str = "extra",
                    hi: float = None, tol: float = 1e-6) -> float:
    """Smallest step size at which the chosen two-agent map stops being a
    contraction (spectral radius reaches 1), located by grid scan plus
    bisection on the closed-form matrices."""
    if algorithm not in ("extra", "exact_diffusion"):
        raise ValueError("algorithm must be 'extra' or 'exact_diffusion'")
    if hi is None:
        hi = (2.5 + 2.0 * a) / sigma2

    def unstable(mu):
        case = two_agent_case(a, sigma2, mu, mu)
        rad = case.specrad_e if algorithm == "extra" else case.specrad_d
        return rad >= 1.0

    grid = np.linspace(hi / 400.0, hi, 400)
    lo = None
    first_bad = None
    for mu in grid:
        if unstable(mu):
            first_bad = mu
            break
        lo = mu
    if first_bad is None:
        raise ValueError(f"no instability found below {hi:.3g}; raise hi")
    if lo is None:
        lo = hi / 4000.0
        if unstable(lo):
            raise ValueError("unstable already at the smallest probed step")
    hi = first_bad
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if unstable(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def mismatch_decay_check(history, p, rho_a: float, slack: float = 0.02):
    """Verify the adaptive tuner's Perron estimates against the geometric
    envelope |z_i[k] - p_k| <= sqrt(N) rho_a^{i+1}, floored at 1e-12 to
    absorb the floating-point error floor once the signal underflows it.

    Args:
        history: per-iteration diagonal estimates, shape (T, N) (row i
            holds the estimates after i + 1 combine steps).
        p: true Perron vector.
        rho_a: second-largest eigenvalue magnitude of the matrix.

    Returns:
        (ok, fitted_rate): ok requires the envelope to hold everywhere
        and the rate fitted on the pre-floor prefix to be at most
        rho_a + slack.
    """
    hist = np.atleast_2d(np.asarray(history, dtype=float))
    p = np.asarray(p, dtype=float)
    n = p.size
    errs = np.abs(hist - p[np.newaxis, :]).max(axis=1)
    steps = np.arange(1, errs.size + 1)
    envelope = np.maximum(np.sqrt(n) * rho_a ** steps * (1.0 + 1e-6), 1e-12)
    ok_env = bool(np.all(errs <= envelope))
    above = errs > 1e-12
    cut = int(np.argmin(above)) if not above.all() else errs.size
    fitted = 0.0
    if cut >= 2:
        slope = np.polyfit(np.arange(cut), np.log(errs[:cut]), 1)[0]
        fitted = float(np.exp(slope))
    return ok_env and fitted <= rho_a + slack, fitted


def classify_run(result, max_iters: int) -> str:
    """Map a run outcome to stable/unstable.  Budget-exhausted runs count
    as stable only when the error did not grow over the last tenth of the
    budget."""
    if result.status == "diverged":
        return "unstable"
    if result.status == "converged":
        return "stable"
    rels = [r.rel_error for r in result.records]
    k = max(1, max_iters // 10)
    return "stable" if rels[-1] <= rels[max(0, len(rels) - 1 - k)] else "unstable"


@dataclass
class ScanResult:
    """Grid classification plus the refined stable/unstable bracket
    (None on either side when the grid never crosses)."""

    engine: str
    mus: list
    classifications: list
    mu_stable: float | None = None
    mu_unstable: float | None = None
    refined: bool = False


def _steps_for(engine: str, model: CostModel, perron: PerronData, mu: float) -> StepSizes:
    # The scan axis is the largest per-agent step size, for every engine.
    # Heterogeneous engines keep their q/p profile but are rescaled so the
    # biggest entry equals mu; uniform engines just use mu everywhere.
    # That keeps measured ranges comparable across engines.
    if engine in WEIGHTED_ENGINES:
        ratio = np.asarray(model.q, dtype=float) / perron.p
        return StepSizes.from_weights(model.q, perron.p, float(mu) / float(ratio.max()))
    return StepSizes.uniform(mu, model.n_agents)


def stability_scan(engine: str, model: CostModel, matrix, mu_grid,
                   max_iters: int = 4000, stop: float = 1e-8,
                   ground_truth=None, jobs: int = 1, refine: bool = True,
                   rel_tol: float = 1e-3) -> ScanResult:
    """Classify each step size on a grid, then bisect the first
    stable-to-unstable transition down to a relative width of rel_tol.

    Each grid value is the largest per-agent step size (see _steps_for),
    so measured ranges are comparable across engines. Grid points run
    with a shared precomputed ground truth; with jobs > 1 they are
    classified in parallel threads.
    """
    if not isinstance(matrix, CombinationMatrix):
        matrix = matrix_from_array(np.asarray(matrix, dtype=float))
    perron = perron_vector(matrix)
    if ground_truth is None:
        ground_truth = solve_centralized(model)
    mus = sorted(float(mu) for mu in mu_grid)
    if len(mus) < 2:
        raise ValueError("mu_grid needs at least two step sizes to bracket a transition")
    if mus[0] <= 0 or not all(np.isfinite(mu) for mu in mus):
        raise ValueError("mu_grid entries must be positive and finite")

    def classify(mu: float) -> str:
        res = run(engine, model, matrix, _steps_for(engine, model, perron, mu),
                  max_iters=max_iters, stop=stop, ground_truth=ground_truth)
        return classify_run(res, max_iters)

    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            classifications = list(pool.map(classify, mus))
    else:
        classifications = [classify(mu) for mu in mus]

    result = ScanResult(engine=engine, mus=mus, classifications=classifications)
    transition = next(
        (i for i in range(len(mus) - 1)
         if classifications[i] == "stable" and classifications[i + 1] == "unstable"),
        None,
    )
    if transition is None:
        if classifications and classifications[0] == "unstable":
            result.mu_unstable = mus[0]
        elif classifications and classifications[-1] == "stable":
            result.mu_stable = mus[-1]
        return result

    lo, hi = mus[transition], mus[transition + 1]
    if refine:
        while hi - lo > rel_tol * hi:
            mid = 0.5 * (lo + hi)
            if classify(mid) == "stable":
                lo = mid
            else:
                hi = mid
        result.refined = True
    result.mu_stable = lo
    result.mu_unstable = hi
    return result
