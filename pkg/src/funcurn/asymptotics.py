"""Limit theory of the functional urn design, in computable form.

For a given design this module produces the mean replacement matrix H(t) and
its Perron allocation target v(t), the drift matrix A and noise covariance
Gamma of the joint (urn, allocation, estimator) fluctuations, and the
asymptotic covariance Sigma through the continuous Lyapunov equation
(A - I/2) Sigma + Sigma (A - I/2)^T = Gamma, plus the spectral diagnostics
the theory requires.  Expectations over the response are closed-form for
two-point and unit-power families and quadrature-based otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .estimators import (
    EstimatorSpec,
    increment_covariance,
    statistic_truth,
    statistic_value,
)
from .models import (
    BernoulliCell,
    CovariateSpace,
    EmpiricalCell,
    GaussianCell,
    PowerLawCell,
    ResponseFamily,
    quantile,
)
from .rules import (
    GaussianTest,
    IdentityOnUnit,
    PlayTheWinner,
    ReplacementRule,
    ZhangRosenberger,
    rule_column,
    sqrt_mean_ratio,
)
from .urn import interval_overlap, replacement_matrix

__all__ = [
    "AsymptoticsError",
    "SpectralError",
    "AsymptoticReport",
    "limiting_H",
    "target_allocation",
    "lambda_star",
    "g_vector",
    "g_matrix",
    "gamma_zz",
    "build_strata_blocks",
    "build_adjusted_blocks",
    "solve_sigma",
    "compute_report",
    "check_assumptions",
    "expected_outcome",
    "solve_x0",
]


class AsymptoticsError(RuntimeError):
    """Limit computation failed (reducible design, bad inputs, ...)."""


class SpectralError(AsymptoticsError):
    """A spectral precondition of the limit theory is violated."""


# ---------------------------------------------------------------------------
# quadrature over the uniform level
# ---------------------------------------------------------------------------


def _unit_quadrature(per_panel: int = 48) -> tuple[np.ndarray, np.ndarray]:
    """Panelled Gauss-Legendre nodes on (0,1).

    Panels shrink geometrically toward both endpoints so that algebraic or
    logarithmic endpoint behaviour (fractional powers, log levels) still
    integrates to ~1e-13.
    """
    left = [10.0**e for e in range(-12, -1)] + [0.5]
    breaks = [0.0] + left + [1.0 - b for b in reversed(left[:-1])] + [1.0]
    x, w = np.polynomial.legendre.leggauss(per_panel)
    nodes, weights = [], []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        nodes.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        weights.append(0.5 * (hi - lo) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def _hermite_quadrature(n_nodes: int = 201) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights for E[f(Z)], Z standard normal."""
    z, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    return z, w / math.sqrt(2.0 * math.pi)


def _response_scenarios(cell, per_panel: int = 48, gh_nodes: int = 201):
    """(weights, responses) whose weighted sum is the response expectation."""
    if isinstance(cell, BernoulliCell):
        p = cell.success
        return np.array([1.0 - p, p]), np.array([0.0, 1.0])
    if isinstance(cell, EmpiricalCell):
        if not cell.values:
            raise AsymptoticsError("empirical cell has no data to integrate over")
        ys = np.asarray(cell.values)
        return np.full(ys.size, 1.0 / ys.size), ys
    if isinstance(cell, GaussianCell):
        z, w = _hermite_quadrature(gh_nodes)
        return w, cell.mean + cell.sd * z
    if isinstance(cell, PowerLawCell):
        vs, ws = _unit_quadrature(per_panel)
        return ws, vs**cell.exponent
    raise AsymptoticsError(f"no scenarios for {type(cell).__name__}")


# ---------------------------------------------------------------------------
# H and its Perron target
# ---------------------------------------------------------------------------


def limiting_H(
    family: ResponseFamily,
    rule: ReplacementRule,
    t: int,
    method: str = "auto",
) -> np.ndarray:
    """Mean replacement matrix H(t) = E[u(Q_t(V))] under the true family.

    Closed forms cover the built-in pairings; ``method="quadrature"`` forces
    the numeric path (useful as a cross-check).
    """
    d = family.n_treatments
    if method == "auto":
        closed = _limiting_H_closed(family, rule, t)
        if closed is not None:
            return closed
    H = np.empty((d, d))
    for j in range(d):
        ws, ys = _response_scenarios(family.cell(j, t))
        col = np.zeros(d)
        for w, y in zip(ws, ys):
            col += w * rule_column(rule, j, t, float(y), family)
        H[:, j] = col
    return H


def _limiting_H_closed(family, rule, t):
    d = family.n_treatments
    kind = family.kind()
    if kind == "bernoulli":
        H = np.empty((d, d))
        for j in range(d):
            p = family.cell(j, t).success
            H[:, j] = p * rule_column(rule, j, t, 1.0, family) + (1.0 - p) * rule_column(
                rule, j, t, 0.0, family
            )
        return H
    if kind == "powerlaw" and isinstance(rule, (IdentityOnUnit, PlayTheWinner)):
        H = np.empty((d, d))
        for j in range(d):
            m = 1.0 / (1.0 + family.cell(j, t).exponent)
            col = np.full(d, (1.0 - m) / (d - 1))
            col[j] = m
            H[:, j] = col
        return H
    if kind == "gaussian" and isinstance(rule, ZhangRosenberger):
        c1, c2 = family.cell(0, t), family.cell(1, t)
        w = sqrt_mean_ratio(c1.mean, c2.mean, c1.sd, c2.sd, rule.mean_floor)
        return np.array([[w, w], [1.0 - w, 1.0 - w]])
    if kind == "gaussian" and isinstance(rule, GaussianTest):
        H = np.empty((2, 2))
        for j in range(2):
            cell = family.cell(j, t)
            # E[Phi((g_j + s_j Z - ref)/s_ref)] = Phi((g_j - ref)/hypot(s_ref, s_j))
            diag = float(
                ndtr((cell.mean - rule.reference_mean[t]) / math.hypot(rule.sd, cell.sd))
            )
            H[j, j] = diag
            H[1 - j, j] = 1.0 - diag
        return H
    return None


def target_allocation(H: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Simplex-normalised right eigenvector of H at eigenvalue 1.

    Solved through the bordered system [[H-I, 1], [1^T, 0]] so the unit
    eigenvalue is pinned deterministically instead of fished out of a general
    eigendecomposition.
    """
    d = H.shape[0]
    M = np.zeros((d + 1, d + 1))
    M[:d, :d] = H - np.eye(d)
    M[:d, d] = 1.0
    M[d, :d] = 1.0
    rhs = np.zeros(d + 1)
    rhs[d] = 1.0
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise AsymptoticsError(f"no simple unit eigenvalue: {exc}") from exc
    v = sol[:d]
    resid = float(np.max(np.abs(H @ v - v)))
    if resid > tol or np.any(v <= 0.0):
        raise AsymptoticsError(
            f"allocation target invalid (residual {resid:.2e}, min component {v.min():.2e});"
            " H may be reducible or defective"
        )
    return v


def lambda_star(H: np.ndarray, v: np.ndarray | None = None) -> float:
    """Largest real part over the spectrum of H with the unit eigenvalue removed."""
    if v is None:
        v = target_allocation(H)
    deflated = H - np.outer(v, np.ones(H.shape[0]))
    eigs = np.linalg.eigvals(deflated)
    drop = int(np.argmin(np.abs(eigs)))  # the deflated Perron root sits at 0
    rest = np.delete(eigs, drop)
    if rest.size == 0:
        return -math.inf
    return float(np.max(rest.real))


# ---------------------------------------------------------------------------
# the overlap vector g
# ---------------------------------------------------------------------------


def g_vector(v1: np.ndarray, v2: np.ndarray, j: int) -> np.ndarray:
    """Limit of the cross-stratum weighting vector: overlap of the colour-j
    slot of v2's partition of (0,1] with the slots of v1's partition."""
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    if np.any(v1 <= 0.0) or np.any(v2 <= 0.0):
        raise AsymptoticsError("g-vector needs strictly positive allocations")
    cum1 = np.concatenate(([0.0], np.cumsum(v1)))
    cum2 = np.concatenate(([0.0], np.cumsum(v2)))
    return interval_overlap(cum1, cum2, j)


def g_matrix(v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
    """Columns g(v1, v2, e_j), j = 1..d."""
    d = len(v1)
    G = np.empty((d, d))
    for j in range(d):
        G[:, j] = g_vector(v1, v2, j)
    return G


# ---------------------------------------------------------------------------
# shared limit context
# ---------------------------------------------------------------------------


@dataclass
class _Mix:
    """Response scenarios for one (stratum, arm): weights, responses, and the
    full replacement blocks they induce (m, K, d, d)."""

    weights: np.ndarray
    ys: np.ndarray
    D: np.ndarray


class _LimitContext:
    def __init__(self, family: ResponseFamily, rule: ReplacementRule, mu: np.ndarray):
        self.family = family
        self.rule = rule
        self.mu = np.asarray(mu, dtype=float)
        self.d = family.n_treatments
        self.K = family.n_strata
        self.H = np.stack([limiting_H(family, rule, t) for t in range(self.K)])
        self.v = np.stack([target_allocation(self.H[t]) for t in range(self.K)])
        self.G = np.stack(
            [
                np.stack([g_matrix(self.v[t1], self.v[t2]) for t2 in range(self.K)])
                for t1 in range(self.K)
            ]
        )
        self._mixes: dict[tuple[int, int], _Mix] = {}
        self.power_exponents = _uniform_power_identity(family, rule)

    def mix(self, s: int, k: int) -> _Mix:
        key = (s, k)
        if key not in self._mixes:
            ws, ys = _response_scenarios(self.family.cell(k, s))
            D = np.stack(
                [replacement_matrix(self.family, self.rule, s, k, float(y)) for y in ys]
            )
            self._mixes[key] = _Mix(weights=ws, ys=ys, D=D)
        return self._mixes[key]


def _uniform_power_identity(family, rule):
    """Per-stratum exponents when the design is the symmetric two-arm
    unit-power one (for which the noise blocks have rational closed forms)."""
    if family.kind() != "powerlaw" or family.n_treatments != 2:
        return None
    if not isinstance(rule, (IdentityOnUnit, PlayTheWinner)):
        return None
    exps = []
    for t in range(family.n_strata):
        a0 = family.cell(0, t).exponent
        if abs(family.cell(1, t).exponent - a0) > 0.0:
            return None
        exps.append(a0)
    return exps


_J2 = np.array([[1.0, -1.0], [-1.0, 1.0]])


def _power_gamma_zz_coeff(a: float, b: float) -> float:
    return 0.25 + 1.0 / (a + b + 1.0) - 0.5 * (1.0 / (a + 1.0) + 1.0 / (b + 1.0))


# ---------------------------------------------------------------------------
# noise blocks
# ---------------------------------------------------------------------------


def _gamma_zz_block(ctx: _LimitContext, t1: int, t2: int) -> np.ndarray:
    if ctx.power_exponents is not None:
        coeff = _power_gamma_zz_coeff(ctx.power_exponents[t1], ctx.power_exponents[t2])
        return coeff * _J2
    acc = np.zeros((ctx.d, ctx.d))
    for s in range(ctx.K):
        for k in range(ctx.d):
            mix = ctx.mix(s, k)
            g1 = ctx.G[t1, s][:, k]
            g2 = ctx.G[t2, s][:, k]
            a = mix.D[:, t1] @ g1          # (m, d)
            b = mix.D[:, t2] @ g2
            acc += ctx.mu[s] * ctx.v[s, k] * np.einsum("m,mi,mj->ij", mix.weights, a, b)
    return acc - np.outer(ctx.v[t1], ctx.v[t2])


def gamma_zz(
    family: ResponseFamily,
    rule: ReplacementRule,
    mu: np.ndarray,
    t1: int,
    t2: int,
) -> np.ndarray:
    """Covariance block of the urn-update noise between strata t1 and t2."""
    ctx = _LimitContext(family, rule, mu)
    return _gamma_zz_block(ctx, t1, t2)


def _gamma_zn_block(ctx: _LimitContext, t1: int, t2: int) -> np.ndarray:
    return ctx.H[t1] @ ctx.G[t1, t2] @ np.diag(ctx.v[t2]) - np.outer(ctx.v[t1], ctx.v[t2])


def _gamma_z_theta_column(
    ctx: _LimitContext, spec: EstimatorSpec, t1: int, t2: int, j: int | None
) -> np.ndarray:
    """Covariance of the stratum-t1 urn noise with one estimator increment."""
    if j is not None:  # per-(stratum, arm) estimator
        truth = statistic_truth(spec, ctx.family, t2, j)
        mix = ctx.mix(t2, j)
        g = ctx.G[t1, t2][:, j]
        a = mix.D[:, t1] @ g
        dm = np.array([statistic_value(spec, y) for y in mix.ys]) - truth
        return np.einsum("m,mi,m->i", mix.weights, a, dm)
    # stratum-shared estimator: average over the assigned arm
    if ctx.power_exponents is not None:
        # symmetric two-arm unit-power design: the arm-averaged replacement
        # column is constant, so the centred increment integrates to zero
        return np.zeros(ctx.d)
    truth = statistic_truth(spec, ctx.family, t2, None)
    acc = np.zeros(ctx.d)
    for k in range(ctx.d):
        mix = ctx.mix(t2, k)
        g = ctx.G[t1, t2][:, k]
        a = mix.D[:, t1] @ g
        dm = np.array([statistic_value(spec, y) for y in mix.ys]) - truth
        acc += ctx.v[t2, k] * np.einsum("m,mi,m->i", mix.weights, a, dm)
    return acc


def _gamma_z_beta_column(
    ctx: _LimitContext, spec: EstimatorSpec, t1: int, j: int | None
) -> np.ndarray:
    """Covariance of the stratum-t1 urn noise with an arm-pooled estimator."""
    if j is not None:
        truth = statistic_truth(spec, ctx.family, None, j)
        wts = ctx.mu * ctx.v[:, j]
        wts = wts / wts.sum()
        acc = np.zeros(ctx.d)
        for s in range(ctx.K):
            mix = ctx.mix(s, j)
            g = ctx.G[t1, s][:, j]
            a = mix.D[:, t1] @ g
            dm = np.array([statistic_value(spec, y) for y in mix.ys]) - truth
            acc += wts[s] * np.einsum("m,mi,m->i", mix.weights, a, dm)
        return acc
    truth = statistic_truth(spec, ctx.family, None, None)
    acc = np.zeros(ctx.d)
    for s in range(ctx.K):
        for k in range(ctx.d):
            mix = ctx.mix(s, k)
            g = ctx.G[t1, s][:, k]
            a = mix.D[:, t1] @ g
            dm = np.array([statistic_value(spec, y) for y in mix.ys]) - truth
            acc += ctx.mu[s] * ctx.v[s, k] * np.einsum("m,mi,m->i", mix.weights, a, dm)
    return acc


# ---------------------------------------------------------------------------
# block assembly
# ---------------------------------------------------------------------------


@dataclass
class BlockSystem:
    A: np.ndarray
    Gamma: np.ndarray
    W: np.ndarray
    labels: list[str]
    v: np.ndarray
    H: np.ndarray
    mu: np.ndarray
    x0: np.ndarray | None = None


def _theta_blocks(specs, d, K, mode):
    """Estimator block layout: (spec, t, j, dim, label) rows."""
    blocks = []
    for spec in specs:
        if mode == "strata":
            if spec.mode == "stratified":
                for t in range(K):
                    for j in range(d):
                        blocks.append((spec, t, j, spec.dim, f"theta({spec.statistic})[t={t + 1},arm={j + 1}]"))
            elif spec.mode == "stratified-shared":
                for t in range(K):
                    blocks.append((spec, t, None, spec.dim, f"theta({spec.statistic})[t={t + 1}]"))
            else:
                raise AsymptoticsError(f"{spec.mode} estimator in stratified blocks")
        else:
            if spec.mode == "adjusted":
                for j in range(d):
                    blocks.append((spec, None, j, spec.dim, f"beta({spec.statistic})[arm={j + 1}]"))
            elif spec.mode == "adjusted-shared":
                blocks.append((spec, None, None, spec.dim, f"beta({spec.statistic})"))
            else:
                raise AsymptoticsError(f"{spec.mode} estimator in adjusted blocks")
    return blocks


def build_strata_blocks(
    family: ResponseFamily,
    rule: ReplacementRule,
    mu: np.ndarray,
    estimator_specs: tuple[EstimatorSpec, ...] = (),
) -> BlockSystem:
    """Drift matrix A and noise covariance Gamma for the per-stratum joint
    fluctuations (urn proportions, allocation proportions, estimators)."""
    ctx = _LimitContext(family, rule, np.asarray(mu, dtype=float))
    d, K = ctx.d, ctx.K
    blocks = _theta_blocks(estimator_specs, d, K, "strata")
    q = sum(b[3] for b in blocks)
    m = 2 * d * K + q
    A = np.zeros((m, m))
    Gamma = np.zeros((m, m))
    W = np.zeros(m)
    labels: list[str] = []

    def zi(t):
        return slice(d * t, d * (t + 1))

    def ni(t):
        return slice(d * K + d * t, d * K + d * (t + 1))

    for t in range(K):
        A[zi(t), zi(t)] = np.eye(d) - ctx.H[t] + np.outer(ctx.v[t], np.ones(d))
        A[ni(t), zi(t)] = -np.eye(d)
        A[ni(t), ni(t)] = np.eye(d)
        W[zi(t)] = ctx.v[t]
        W[ni(t)] = ctx.v[t]
        Gamma[ni(t), ni(t)] = (np.diag(ctx.v[t]) - np.outer(ctx.v[t], ctx.v[t])) / ctx.mu[t]
    for t in range(K):
        labels.extend(f"Z[t={t + 1},arm={j + 1}]" for j in range(d))
    for t in range(K):
        labels.extend(f"Nprop[t={t + 1},arm={j + 1}]" for j in range(d))
    for t1 in range(K):
        for t2 in range(K):
            Gamma[zi(t1), zi(t2)] = _gamma_zz_block(ctx, t1, t2)
            gzn = _gamma_zn_block(ctx, t1, t2)
            Gamma[zi(t1), ni(t2)] = gzn
            Gamma[ni(t2), zi(t1)] = gzn.T

    off = 2 * d * K
    for spec, t, j, dim, label in blocks:
        sl = slice(off, off + dim)
        A[sl, sl] = spec.drift_jacobian()
        W[sl] = statistic_truth(spec, family, t, j)
        labels.append(label)
        inc = increment_covariance(spec, family, t, j, v=ctx.v, mu=ctx.mu)
        if j is not None:
            Gamma[sl, sl] = inc / (ctx.v[t, j] * ctx.mu[t])
        else:
            Gamma[sl, sl] = inc / ctx.mu[t]
        for t1 in range(K):
            col = _gamma_z_theta_column(ctx, spec, t1, t, j)
            Gamma[zi(t1), sl] = col[:, None]
            Gamma[sl, zi(t1)] = col[None, :]
        off += dim

    return BlockSystem(A=A, Gamma=Gamma, W=W, labels=labels, v=ctx.v, H=ctx.H, mu=ctx.mu)


def build_adjusted_blocks(
    family: ResponseFamily,
    rule: ReplacementRule,
    mu: np.ndarray,
    estimator_specs: tuple[EstimatorSpec, ...] = (),
    dn_f: np.ndarray | None = None,
    dbeta_f: np.ndarray | None = None,
    x0: np.ndarray | None = None,
) -> BlockSystem:
    """Drift and noise blocks for the trial-level joint fluctuations (urn
    proportions, overall allocation, arm-pooled estimators).

    ``dn_f`` (K, d) and ``dbeta_f`` (K, q) are the per-stratum gradients of an
    adaptive covariate rule with respect to the overall allocation and the
    estimator vector, taken at the limit; omit them for i.i.d. covariates
    (they vanish there, giving A_NN = I and zero estimator coupling).
    """
    ctx = _LimitContext(family, rule, np.asarray(mu, dtype=float))
    d, K = ctx.d, ctx.K
    blocks = _theta_blocks(estimator_specs, d, K, "adjusted")
    q = sum(b[3] for b in blocks)
    m = d * K + d + q
    A = np.zeros((m, m))
    Gamma = np.zeros((m, m))
    W = np.zeros(m)
    labels: list[str] = []

    if x0 is None:
        x0 = np.einsum("t,tj->j", ctx.mu, ctx.v)

    def zi(t):
        return slice(d * t, d * (t + 1))

    nsl = slice(d * K, d * K + d)
    for t in range(K):
        A[zi(t), zi(t)] = np.eye(d) - ctx.H[t] + np.outer(ctx.v[t], np.ones(d))
        A[nsl, zi(t)] = -ctx.mu[t] * np.eye(d)
        W[zi(t)] = ctx.v[t]
        labels.extend(f"Z[t={t + 1},arm={j + 1}]" for j in range(d))
    A_nn = np.eye(d)
    if dn_f is not None:
        for s in range(K):
            A_nn -= np.outer(ctx.v[s], dn_f[s])
    A[nsl, nsl] = A_nn
    W[nsl] = x0
    labels.extend(f"Nprop[arm={j + 1}]" for j in range(d))

    Gamma[nsl, nsl] = np.diag(x0) - np.outer(x0, x0)
    for t1 in range(K):
        for t2 in range(K):
            Gamma[zi(t1), zi(t2)] = _gamma_zz_block(ctx, t1, t2)
        gzn = sum(ctx.mu[s] * _gamma_zn_block(ctx, t1, s) for s in range(K))
        Gamma[zi(t1), nsl] = gzn
        Gamma[nsl, zi(t1)] = gzn.T

    if q and dbeta_f is not None:
        A[nsl, d * K + d :] = -sum(np.outer(ctx.v[s], dbeta_f[s]) for s in range(K))

    off = d * K + d
    for spec, t, j, dim, label in blocks:
        sl = slice(off, off + dim)
        A[sl, sl] = spec.drift_jacobian()
        W[sl] = statistic_truth(spec, family, t, j)
        labels.append(label)
        inc = increment_covariance(spec, family, t, j, v=ctx.v, mu=ctx.mu)
        if j is not None:
            Gamma[sl, sl] = inc / float(ctx.mu @ ctx.v[:, j])
        else:
            Gamma[sl, sl] = inc
        for t1 in range(K):
            col = _gamma_z_beta_column(ctx, spec, t1, j)
            Gamma[zi(t1), sl] = col[:, None]
            Gamma[sl, zi(t1)] = col[None, :]
        off += dim

    return BlockSystem(
        A=A, Gamma=Gamma, W=W, labels=labels, v=ctx.v, H=ctx.H, mu=ctx.mu, x0=x0
    )


# ---------------------------------------------------------------------------
# Lyapunov solve
# ---------------------------------------------------------------------------


def solve_sigma(A: np.ndarray, Gamma: np.ndarray) -> np.ndarray:
    """Solve (A - I/2) Sigma + Sigma (A - I/2)^T = Gamma by the vectorised
    Kronecker system; requires every eigenvalue of A to exceed 1/2 in real
    part (the regime where the defining integral converges)."""
    A = np.asarray(A, dtype=float)
    Gamma = np.asarray(Gamma, dtype=float)
    m = A.shape[0]
    eigs = np.linalg.eigvals(A)
    worst = eigs[np.argmin(eigs.real)]
    if worst.real <= 0.5:
        raise SpectralError(
            f"drift eigenvalue {worst:.6f} has real part <= 1/2; the asymptotic"
            " covariance integral diverges"
        )
    B = A - 0.5 * np.eye(m)
    M = np.kron(np.eye(m), B) + np.kron(B, np.eye(m))
    vec = np.linalg.solve(M, Gamma.flatten(order="F"))
    Sigma = vec.reshape((m, m), order="F")
    return 0.5 * (Sigma + Sigma.T)


def lyapunov_residual(A: np.ndarray, Gamma: np.ndarray, Sigma: np.ndarray) -> float:
    B = A - 0.5 * np.eye(A.shape[0])
    return float(np.max(np.abs(B @ Sigma + Sigma @ B.T - Gamma)))


# ---------------------------------------------------------------------------
# adaptive covariate limits
# ---------------------------------------------------------------------------


def solve_x0(
    covariates: CovariateSpace,
    v: np.ndarray,
    features: np.ndarray | None,
    damping: float = 0.5,
    tol: float = 1e-14,
    max_iter: int = 10_000,
) -> tuple[np.ndarray, np.ndarray]:
    """Fixed point x0 = sum_s f_s(x0, features) v(s) of an adaptive covariate
    rule, by damped iteration; returns (x0, limiting mu)."""
    K, d = v.shape
    if covariates.adaptive_rule is None:
        mu = covariates.weights
        return np.einsum("t,tj->j", mu, v), mu
    x = np.einsum("t,tj->j", covariates.weights, v)
    for _ in range(max_iter):
        alloc = np.concatenate([v.T, x[:, None]], axis=1)  # (d, K+1)
        mu = covariates.distribution(features, alloc)
        x_new = (1.0 - damping) * x + damping * np.einsum("t,tj->j", mu, v)
        if np.max(np.abs(x_new - x)) < tol:
            return x_new, mu
        x = x_new
    raise AsymptoticsError("fixed point of the adaptive covariate rule did not converge")


def _covariate_jacobians(covariates, v, x0, features, eps=1e-6):
    """Numeric d f_{mu,s}/d(overall allocation) at the limit, shape (K, d)."""
    if covariates.adaptive_rule is None:
        return None
    K, d = v.shape

    def mu_of(x):
        alloc = np.concatenate([v.T, x[:, None]], axis=1)
        return covariates.distribution(features, alloc)

    jac = np.zeros((K, d))
    for i in range(d):
        dx = np.zeros(d)
        dx[i] = eps
        jac[:, i] = (mu_of(x0 + dx) - mu_of(x0 - dx)) / (2.0 * eps)
    return jac


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class AsymptoticReport:
    mode: str
    labels: list[str]
    W: np.ndarray
    A: np.ndarray
    Gamma: np.ndarray
    Sigma: np.ndarray
    v: np.ndarray
    H: np.ndarray
    mu: np.ndarray
    x0: np.ndarray | None
    diagnostics: dict
    valid: bool

    def sigma_entry(self, row_label: str, col_label: str) -> float:
        return float(
            self.Sigma[self.labels.index(row_label), self.labels.index(col_label)]
        )

    def to_json_dict(self) -> dict:
        def mat(x):
            x = np.atleast_2d(np.asarray(x, dtype=float))
            return {"rows": x.shape[0], "cols": x.shape[1], "data": x.tolist()}

        return {
            "mode": self.mode,
            "labels": self.labels,
            "W": list(map(float, self.W)),
            "A": mat(self.A),
            "Gamma": mat(self.Gamma),
            "Sigma": mat(self.Sigma),
            "v": mat(self.v),
            "H": {"strata": [mat(self.H[t]) for t in range(self.H.shape[0])]},
            "mu": list(map(float, self.mu)),
            "x0": None if self.x0 is None else list(map(float, self.x0)),
            "diagnostics": self.diagnostics,
            "valid": self.valid,
        }


def compute_report(
    family: ResponseFamily,
    rule: ReplacementRule,
    covariates: CovariateSpace | np.ndarray,
    mode: str = "strata",
    estimator_specs: tuple[EstimatorSpec, ...] | None = None,
) -> AsymptoticReport:
    """Full asymptotic report: blocks, Lyapunov solve, and diagnostics."""
    if mode not in ("strata", "adjusted"):
        raise AsymptoticsError(f"unknown theorem mode {mode!r}")
    if not isinstance(covariates, CovariateSpace):
        covariates = CovariateSpace(np.asarray(covariates, dtype=float))
    if estimator_specs is None:
        kind = family.kind()
        from .estimators import default_estimator_specs

        estimator_specs = default_estimator_specs(kind, mode) if kind else ()

    ctx_v = np.stack(
        [target_allocation(limiting_H(family, rule, t)) for t in range(family.n_strata)]
    )
    x0 = None
    if mode == "strata":
        mu = covariates.weights if covariates.adaptive_rule is None else None
        if mu is None:
            # limit of the per-stratum rule at (truth, target allocation)
            alloc = np.concatenate([ctx_v.T, np.zeros((family.n_treatments, 1))], axis=1)
            alloc[:, -1] = np.einsum("t,tj->j", covariates.weights, ctx_v)
            mu = covariates.distribution(None, alloc)
        system = build_strata_blocks(family, rule, mu, estimator_specs)
    else:
        x0, mu = solve_x0(covariates, ctx_v, None)
        dn = _covariate_jacobians(covariates, ctx_v, x0, None)
        system = build_adjusted_blocks(
            family, rule, mu, estimator_specs, dn_f=dn, x0=x0
        )

    diagnostics = check_assumptions(
        family, rule, covariates, estimator_specs=estimator_specs, mode=mode
    )
    try:
        Sigma = solve_sigma(system.A, system.Gamma)
        diagnostics["lyapunov_residual"] = lyapunov_residual(
            system.A, system.Gamma, Sigma
        )
        solvable = True
    except SpectralError as exc:
        Sigma = np.full_like(system.Gamma, np.nan)
        diagnostics["lyapunov_residual"] = math.nan
        diagnostics["spectral_failure"] = str(exc)
        solvable = False
    gamma_eigs = np.linalg.eigvalsh(0.5 * (system.Gamma + system.Gamma.T))
    diagnostics["gamma_min_eigenvalue"] = float(gamma_eigs.min())
    valid = bool(
        solvable
        and diagnostics["assumptions_pass"]
        and diagnostics["lyapunov_residual"] < 1e-10
        and gamma_eigs.min() > -1e-10
    )
    return AsymptoticReport(
        mode=mode,
        labels=system.labels,
        W=system.W,
        A=system.A,
        Gamma=system.Gamma,
        Sigma=Sigma,
        v=system.v,
        H=system.H,
        mu=system.mu,
        x0=system.x0 if mode == "adjusted" else None,
        diagnostics=diagnostics,
        valid=valid,
    )


# ---------------------------------------------------------------------------
# assumption diagnostics
# ---------------------------------------------------------------------------


def _support_grid(cell) -> list[float]:
    if isinstance(cell, BernoulliCell):
        return [0.0, 1.0]
    if isinstance(cell, GaussianCell):
        return [cell.mean + k * cell.sd for k in (-3.0, -1.0, 0.0, 1.0, 3.0)]
    if isinstance(cell, PowerLawCell):
        return [0.01, 0.25, 0.5, 0.75, 0.99]
    return list(cell.values[:16]) or [0.5]


def check_assumptions(
    family: ResponseFamily,
    rule: ReplacementRule,
    covariates: CovariateSpace | np.ndarray,
    estimator_specs: tuple[EstimatorSpec, ...] = (),
    mode: str = "strata",
) -> dict:
    """Spectral and structural conditions behind the limit theorems.

    Returns one entry per condition with the measured quantity, its
    threshold, and a pass flag, plus an overall ``assumptions_pass``.
    """
    if not isinstance(covariates, CovariateSpace):
        covariates = CovariateSpace(np.asarray(covariates, dtype=float))
    d, K = family.n_treatments, family.n_strata
    out: dict = {}

    # constant balance + nonnegativity of the reinforcement columns
    worst_balance = 0.0
    min_entry = math.inf
    for t in range(K):
        for j in range(d):
            for y in _support_grid(family.cell(j, t)):
                col = rule_column(rule, j, t, float(y), family)
                worst_balance = max(worst_balance, abs(float(col.sum()) - 1.0))
                min_entry = min(min_entry, float(col.min()))
    out["balance"] = {
        "max_column_sum_deviation": worst_balance,
        "min_reinforcement": min_entry,
        "passed": worst_balance < 1e-12 and min_entry >= 0.0,
        "strictly_positive": min_entry > 0.0,
    }

    # generating matrix structure
    Hs = [limiting_H(family, rule, t) for t in range(K)]
    irreducible = True
    diagonalizable = True
    for H in Hs:
        reach = (np.eye(d) + (H > 1e-15)).astype(bool)
        closure = np.linalg.matrix_power(reach.astype(int), d) > 0
        irreducible &= bool(closure.all())
        _, vecs = np.linalg.eig(H)
        diagonalizable &= bool(np.linalg.matrix_rank(vecs, tol=1e-10) == d)
    out["generating_matrix"] = {
        "irreducible": irreducible,
        "diagonalizable": diagonalizable,
        "estimation_rate": "not verified (nonparametric plug-in)",
        "passed": irreducible and diagonalizable,
    }

    # second eigenvalue gap of H
    vs = [target_allocation(H) for H in Hs]
    lstars = [lambda_star(H, v) for H, v in zip(Hs, vs)]
    worst = max(lstars)
    out["allocation_spectrum"] = {
        "per_stratum": lstars,
        "max_real_part": worst,
        "threshold": 0.5,
        "passed": worst < 0.5,
    }

    # estimator drift spectra
    drift_mins = []
    for spec in estimator_specs:
        drift_mins.append(float(np.min(np.linalg.eigvals(spec.drift_jacobian()).real)))
    out["estimator_spectrum"] = {
        "min_real_part": min(drift_mins) if drift_mins else math.inf,
        "threshold": 0.5,
        "passed": (min(drift_mins) > 0.5) if drift_mins else True,
    }

    # covariate rule
    if covariates.adaptive_rule is None:
        out["covariate_rule"] = {
            "adaptive": False,
            "max_real_part": 0.0,
            "threshold": 0.5,
            "passed": True,
        }
    else:
        v = np.stack(vs)
        x0, _mu = solve_x0(covariates, v, None)
        jac = _covariate_jacobians(covariates, v, x0, None)  # (K, d)
        coupling = sum(np.outer(v[s], jac[s]) for s in range(K))
        lam = float(np.max(np.linalg.eigvals(coupling).real))
        alloc = np.concatenate([v.T, x0[:, None]], axis=1)
        mu_limit = covariates.distribution(None, alloc)
        out["covariate_rule"] = {
            "adaptive": True,
            "max_real_part": lam,
            "threshold": 0.5,
            "min_weight": float(mu_limit.min()),
            "floor": covariates.floor,
            "passed": lam < 0.5
            and (mode == "adjusted" or mu_limit.min() >= max(covariates.floor, 1e-12)),
        }

    out["assumptions_pass"] = all(
        section["passed"]
        for key, section in out.items()
        if isinstance(section, dict) and "passed" in section
    )
    return out


# ---------------------------------------------------------------------------
# design summaries
# ---------------------------------------------------------------------------


def expected_outcome(
    v: np.ndarray,
    mu: np.ndarray,
    rates: np.ndarray,
    n_patients: int,
) -> dict:
    """Expected total adverse outcomes for n patients at the limit allocation.

    ``v`` is (K, d) per-stratum allocation, ``rates`` is (d, K) expected
    adverse outcome per patient on arm j in stratum t (failure probability
    for binary responses, mean otherwise).
    """
    v = np.asarray(v, dtype=float)
    mu = np.asarray(mu, dtype=float)
    rates = np.asarray(rates, dtype=float)
    per_stratum = [
        float(n_patients * mu[t] * float(v[t] @ rates[:, t])) for t in range(v.shape[0])
    ]
    total = float(sum(per_stratum))
    return {
        "total": total,
        "per_stratum": per_stratum,
        "per_patient": total / n_patients if n_patients else 0.0,
    }
