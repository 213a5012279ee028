"""Complete-data log-likelihood, inner Newton mode finding, and the
Laplace-approximated observed-data log-likelihood.

The random effects are ``u = (eta', xi_o')'`` where ``xi_o`` holds the
fine-scale effects of the cells touched by data; the remaining
fine-scale entries do not enter the data likelihood, so integrating them
out is exact and they are dropped from the inner problem.  Writing
``B = [S_o  I]`` for the combined design, the latent values at observed
cells are ``y = T_o alpha + B u``, the prior precision of ``u`` is block
diagonal ``P_u = blkdiag(P_eta, D_xi)``, and the negated Hessian of the
complete log-likelihood is

    negH = P_u - B' W B,

with ``W`` the curvature of the data term in ``y``.  The inner Newton
solver iterates ``u += step * solve(negH, grad)`` with a step-halving
line search on the objective value; the factorisation of ``negH`` at the
mode supplies the Laplace log-determinant and the posterior Gaussian
used for prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .covpar import build_prior_matrix
from .family import (
    log_density,
    log_density_d1,
    log_density_d2,
    mean_derivs,
    mean_domain_ok,
)
from .linalg import BlockSPDFactor, NotPositiveDefiniteError, SPDFactor
from .model import ModelState, ModelStructures, ObservationSet, fs_variance_diag

__all__ = [
    "InnerConvergenceError",
    "LaplaceNumericalError",
    "RandomEffects",
    "LaplaceResult",
    "complete_loglik",
    "inner_mode",
    "laplace_objective",
]

INNER_TOL = 1e-8
INNER_MAX_ITER = 100
_LOG2PI = np.log(2.0 * np.pi)


class InnerConvergenceError(RuntimeError):
    def __init__(self, msg, grad_norm=np.nan):
        super().__init__(msg)
        self.grad_norm = grad_norm


class LaplaceNumericalError(RuntimeError):
    """Indefinite curvature at the mode; the parameter point is unusable."""


@dataclass
class RandomEffects:
    """Stacked random effects: basis coefficients plus observed-cell
    fine-scale values."""

    eta: np.ndarray
    xi: np.ndarray

    @property
    def u(self) -> np.ndarray:
        return np.concatenate([self.eta, self.xi])

    @classmethod
    def from_u(cls, u: np.ndarray, r: int) -> "RandomEffects":
        u = np.asarray(u, dtype=float)
        return cls(eta=u[:r], xi=u[r:])

    @property
    def p(self) -> int:
        return self.eta.size + self.xi.size


@dataclass
class LaplaceResult:
    """Mode, curvature factor, and approximate log-likelihood at one
    parameter point."""

    u_hat: RandomEffects
    hess_factor: SPDFactor
    loglik: float
    n_iter: int
    grad_norm: float
    prior_is_precision: bool


class _Workspace:
    """Per-parameter-point state for the inner problem.

    Holds the combined design ``B`` (fixed per fit structure), the prior
    precision of ``u`` with its normalising constant, and the offset
    ``T_o alpha``.  The covariance parameterisation stores the dense
    inverse of the coefficient covariance; precision variants stay
    sparse throughout.
    """

    def __init__(self, state: ModelState, structures: ModelStructures):
        self.state = state
        self.structures = structures
        self.include_fs = state.include_fs
        self.r = structures.r
        self.n_xi = structures.n_obs_baus if self.include_fs else 0
        self.p = self.r + self.n_xi
        self.offset = structures.T_o @ state.alpha

        blocks = []
        if self.r:
            blocks.append(structures.S_o)
        if self.n_xi:
            blocks.append(sparse.eye(structures.n_obs_baus, format="csr"))
        if blocks:
            self.B = sparse.hstack(blocks, format="csr")
            self.BT = self.B.T.tocsr()
        else:
            self.B = sparse.csr_matrix((structures.n_obs_baus, 0))
            self.BT = self.B.T.tocsr()

        # prior precision of u and the Gaussian normalising constant
        logdet_cov = 0.0
        self.is_precision = True
        self.P_eta = None
        if self.r:
            mat, is_prec = build_prior_matrix(structures.basis, state.prior)
            self.is_precision = is_prec
            if is_prec:
                self.P_eta = mat.tocsr()
                logdet_cov += -SPDFactor(mat).logdet()
            else:
                fac = SPDFactor(mat)
                logdet_cov += fac.logdet()
                self.P_eta = fac.solve(np.eye(self.r))
        if self.n_xi:
            self.v = fs_variance_diag(state, structures.grid)[structures.obs_baus]
            logdet_cov += float(np.sum(np.log(self.v)))
        else:
            self.v = None

        if self.p == 0:
            self.P_u = sparse.csc_matrix((0, 0))
        elif self.is_precision:
            parts = []
            if self.r:
                parts.append(self.P_eta)
            if self.n_xi:
                parts.append(sparse.diags(1.0 / self.v))
            self.P_u = sparse.block_diag(parts, format="csr")
        else:
            self.P_u = np.zeros((self.p, self.p))
            if self.r:
                self.P_u[: self.r, : self.r] = self.P_eta
            if self.n_xi:
                idx = np.arange(self.r, self.p)
                self.P_u[idx, idx] = 1.0 / self.v
        self.prior_const = -0.5 * (self.p * _LOG2PI + logdet_cov)
        # per-iteration caches for fixed sparsity patterns
        C = structures.C_o
        self._c_rows = np.repeat(np.arange(C.shape[0]), np.diff(C.indptr))
        self._w_rows = None

    def latent(self, u: RandomEffects) -> np.ndarray:
        if self.p == 0:
            return self.offset
        return self.offset + self.B @ u.u

    def prior_logpdf(self, u: RandomEffects) -> float:
        if self.p == 0:
            return 0.0
        uu = u.u
        return float(self.prior_const - 0.5 * (uu @ (self.P_u @ uu)))

    def data_terms(self, y_obs: np.ndarray, obs: ObservationSet, order: int):
        """Data log-likelihood and derivatives in the observed-cell latents."""
        st = self.structures
        spec = st.spec
        state = self.state
        mu_o, dmu, d2mu = mean_derivs(y_obs, spec.link, spec.family, st.k_obs)
        if not np.all(np.isfinite(mu_o)):
            return -np.inf, None, None
        mu_Z = st.C_o @ mu_o
        if not mean_domain_ok(spec.family, mu_Z, st.k_Z):
            return -np.inf, None, None
        ll_vec = log_density(spec.family, obs.z, mu_Z, state.psi, st.k_Z)
        ll = float(np.sum(ll_vec))
        if not np.isfinite(ll) or order == 0:
            return (ll if np.isfinite(ll) else -np.inf), None, None
        s = log_density_d1(spec.family, obs.z, mu_Z, state.psi, st.k_Z)
        cts = st.C_oT @ s
        grad_y = dmu * cts
        if order == 1:
            return ll, grad_y, None
        h = log_density_d2(spec.family, obs.z, mu_Z, state.psi, st.k_Z)
        # W = Dmu C' diag(h) C Dmu + diag(cts * d2mu)
        Ch = st.C_o.copy()
        Ch.data = Ch.data * h[self._c_rows]
        W = (st.C_oT @ Ch).tocsr()
        w_rows = self._w_rows
        if w_rows is None or w_rows.size != W.nnz:
            w_rows = np.repeat(np.arange(W.shape[0]), np.diff(W.indptr))
            self._w_rows = w_rows
        W.data = W.data * (dmu[w_rows] * dmu[W.indices])
        W = W + sparse.diags(cts * d2mu)
        return ll, grad_y, W

    def value(self, u: RandomEffects, obs: ObservationSet) -> float:
        ll, _, _ = self.data_terms(self.latent(u), obs, order=0)
        if not np.isfinite(ll):
            return -np.inf
        return ll + self.prior_logpdf(u)

    def grad_neghess(self, u: RandomEffects, obs: ObservationSet):
        """Objective value, gradient, and negated Hessian parts at ``u``.

        The negated Hessian is returned in a block form suited to its
        factorisation: ("blocks", A, Bt, D) when both coefficient and
        fine-scale effects are present under a precision prior, else
        ("whole", matrix).
        """
        ll, grad_y, W = self.data_terms(self.latent(u), obs, order=2)
        if not np.isfinite(ll):
            return -np.inf, None, None
        value = ll + self.prior_logpdf(u)
        grad = self.BT @ grad_y - self.P_u @ u.u
        r, n_xi = self.r, self.n_xi
        if r and n_xi and self.is_precision:
            StW = (self.structures.S_oT @ W).tocsr()
            A = (self.P_eta - StW @ self.structures.S_o).tocsr()
            D = (sparse.diags(1.0 / self.v) - W).tocsc()
            parts = ("blocks", A, -StW, D)
        elif self.is_precision:
            parts = ("whole", (self.P_u - self.BT @ W @ self.B).tocsc())
        else:
            negH = self.P_u - (self.BT @ W @ self.B).toarray()
            parts = ("whole", negH)
        return value, grad, parts


def complete_loglik(state: ModelState, u: RandomEffects, obs: ObservationSet,
                    structures: ModelStructures) -> float:
    """Joint log-likelihood of the data and the random effects.

    Sum of the exponential-family data term at the aggregated means, the
    Gaussian prior of the basis coefficients, and the Gaussian prior of
    the observed-cell fine-scale effects.  Returns ``-inf`` outside the
    family's mean domain.
    """
    return _Workspace(state, structures).value(u, obs)


def _factor_parts(parts, ridge: float = 0.0):
    """Factorise the negated Hessian from its block or whole form."""
    if parts[0] == "blocks":
        _, A, Bt, D = parts
        if ridge:
            A = A + ridge * sparse.eye(A.shape[0], format="csr")
            D = D + ridge * sparse.eye(D.shape[0], format="csc")
        return BlockSPDFactor(A, Bt, D)
    M = parts[1]
    if ridge:
        if sparse.issparse(M):
            M = M + ridge * sparse.eye(M.shape[0], format="csc")
        else:
            M = M + ridge * np.eye(M.shape[0])
    return SPDFactor(M)


def parts_matrix(parts):
    """Assemble the negated Hessian as one matrix (diagnostics only)."""
    if parts[0] == "blocks":
        _, A, Bt, D = parts
        return sparse.bmat([[A, Bt], [Bt.T, D]], format="csc")
    return parts[1]


def _parts_scale(parts) -> float:
    M = parts[1] if parts[0] == "whole" else parts[3]
    return float(np.mean(M.diagonal())) if M.shape[0] else 1.0


def _solve_with_ridge(parts, grad):
    """Newton direction, adding a ridge when the curvature is indefinite."""
    scale = _parts_scale(parts)
    ridge = 0.0
    for _ in range(12):
        try:
            return _factor_parts(parts, ridge).solve(grad)
        except NotPositiveDefiniteError:
            ridge = max(ridge * 10.0, 1e-8 * max(abs(scale), 1.0))
    raise LaplaceNumericalError("could not stabilise the inner Newton system")


def inner_mode(state: ModelState, obs: ObservationSet,
               structures: ModelStructures, u0: RandomEffects | None = None,
               workspace: _Workspace | None = None):
    """Newton ascent to the mode of the complete log-likelihood in ``u``.

    Step-halving line search; converged when the gradient sup-norm drops
    below ``INNER_TOL``.  Raises ``InnerConvergenceError`` after
    ``INNER_MAX_ITER`` iterations.

    Returns ``(u_hat, neg_hessian_parts, loglik, n_iter, grad_norm)``
    with the negated Hessian (in factorisable block form) and complete
    log-likelihood evaluated at the mode.
    """
    ws = workspace if workspace is not None else _Workspace(state, structures)
    r = ws.r
    if u0 is None or u0.p != ws.p:
        u = RandomEffects(eta=np.zeros(r), xi=np.zeros(ws.n_xi))
    else:
        u = RandomEffects(eta=u0.eta.copy(), xi=u0.xi.copy())

    if ws.p == 0:
        ll = ws.value(u, obs)
        if not np.isfinite(ll):
            raise LaplaceNumericalError("data term not finite with no random effects")
        return u, ("whole", sparse.csc_matrix((0, 0))), float(ll), 0, 0.0

    ll, grad, parts = ws.grad_neghess(u, obs)
    if not np.isfinite(ll) and u0 is not None:
        # stale warm start; retry from the prior mode
        u = RandomEffects(eta=np.zeros(r), xi=np.zeros(ws.n_xi))
        ll, grad, parts = ws.grad_neghess(u, obs)
    if not np.isfinite(ll):
        raise LaplaceNumericalError("complete log-likelihood not finite at start")

    for it in range(1, INNER_MAX_ITER + 1):
        gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
        if gnorm < INNER_TOL:
            return u, parts, float(ll), it - 1, gnorm
        step_dir = _solve_with_ridge(parts, grad)
        step = 1.0
        accepted = False
        for _ in range(40):
            cand = RandomEffects.from_u(u.u + step * step_dir, r)
            ll_new = ws.value(cand, obs)
            if np.isfinite(ll_new) and ll_new > ll:
                u = cand
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # no ascent direction left: numerical stationarity
            if gnorm < 1e-4:
                return u, parts, float(ll), it, gnorm
            raise InnerConvergenceError(
                f"inner Newton stalled at gradient sup-norm {gnorm:.3e}",
                grad_norm=gnorm,
            )
        ll, grad, parts = ws.grad_neghess(u, obs)
    gnorm = float(np.max(np.abs(grad)))
    raise InnerConvergenceError(
        f"inner Newton did not converge in {INNER_MAX_ITER} iterations "
        f"(gradient sup-norm {gnorm:.3e})",
        grad_norm=gnorm,
    )


def laplace_objective(state: ModelState, obs: ObservationSet,
                      structures: ModelStructures,
                      u0: RandomEffects | None = None) -> LaplaceResult:
    """Laplace approximation of the observed-data log-likelihood.

    ``l*(theta) = l(theta; Z, u_hat) + (p/2) log(2 pi) - log|negH|/2``
    where ``negH`` is the negated Hessian of the complete log-likelihood
    at the mode.  Raises ``LaplaceNumericalError`` when that matrix is
    not positive definite.
    """
    ws = _Workspace(state, structures)
    u_hat, parts, ll_mode, n_iter, gnorm = inner_mode(state, obs, structures,
                                                      u0, workspace=ws)
    try:
        factor = _factor_parts(parts)
    except NotPositiveDefiniteError as exc:
        raise LaplaceNumericalError(
            f"indefinite curvature at the inner mode: {exc}"
        ) from exc
    p = u_hat.p
    loglik = ll_mode + 0.5 * p * _LOG2PI - 0.5 * factor.logdet()
    return LaplaceResult(
        u_hat=u_hat,
        hess_factor=factor,
        loglik=float(loglik),
        n_iter=n_iter,
        grad_norm=gnorm,
        prior_is_precision=ws.is_precision,
    )
