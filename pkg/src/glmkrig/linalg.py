"""Symmetric positive-definite factorisations with a sparse fast path.

The inner Newton solver, the Laplace log-determinant, and posterior
Gaussian sampling all need the same three operations on a symmetric
positive-definite matrix A: solve A x = b, log|A|, and draws from
N(0, A^-1).  Sparse inputs go through SuperLU in symmetric mode, which
for an SPD matrix reduces to a permuted L D L' factorisation; when the
factorisation cannot certify definiteness we fall back to a dense
Cholesky, which raises on an indefinite matrix.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.sparse.linalg import splu, spsolve_triangular

__all__ = ["NotPositiveDefiniteError", "SPDFactor", "BlockSPDFactor"]


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


class SPDFactor:
    """Factorisation of a symmetric positive-definite matrix.

    Provides ``solve``, ``logdet`` and ``sample_zero_mean``; raises
    ``NotPositiveDefiniteError`` at construction when the matrix is not
    positive definite.
    """

    def __init__(self, A):
        self.n = A.shape[0]
        self.matrix = A.tocsc() if sparse.issparse(A) else np.asarray(A, dtype=float)
        self._sparse = None
        self._dense = None
        if self.n == 0:
            return
        if sparse.issparse(A):
            try:
                self._init_sparse(self.matrix)
                return
            except NotPositiveDefiniteError:
                raise
            except Exception:
                A = np.asarray(A.todense())
        self._init_dense(np.asarray(A, dtype=float))

    # SuperLU handles cannot be pickled; rebuild from the stored matrix
    def __getstate__(self):
        return {"matrix": self.matrix}

    def __setstate__(self, state):
        self.__init__(state["matrix"])

    def _init_sparse(self, A_csc):
        lu = splu(
            A_csc,
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
        if not np.array_equal(lu.perm_r, lu.perm_c):
            # row pivoting kicked in; the LDL' reading is invalid
            raise RuntimeError("asymmetric pivoting")
        d = lu.U.diagonal()
        if np.any(d <= 0) or not np.all(np.isfinite(d)):
            raise NotPositiveDefiniteError("matrix is not positive definite")
        self._sparse = lu
        self._diag_u = np.asarray(d)

    def _init_dense(self, A):
        if not np.all(np.isfinite(A)):
            raise NotPositiveDefiniteError("matrix has non-finite entries")
        try:
            self._dense = cho_factor(A, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError(str(exc)) from exc

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.n == 0:
            return np.zeros_like(np.asarray(b, dtype=float))
        if self._sparse is not None:
            return self._sparse.solve(np.asarray(b, dtype=float))
        return cho_solve(self._dense, np.asarray(b, dtype=float), check_finite=False)

    def logdet(self) -> float:
        if self.n == 0:
            return 0.0
        if self._sparse is not None:
            return float(np.sum(np.log(self._diag_u)))
        c = self._dense[0]
        return float(2.0 * np.sum(np.log(np.diag(c))))

    def sample_zero_mean(self, rng: np.random.Generator, ncols: int) -> np.ndarray:
        """Draws with covariance A^-1, one column per sample.

        With A = C C' (Cholesky), x = C'^-T z has covariance A^-1; the
        sparse path applies the same identity to the permuted L D L'
        factors and undoes the permutation.
        """
        if self.n == 0:
            return np.zeros((0, ncols))
        z = rng.standard_normal((self.n, ncols))
        if self._sparse is not None:
            lu = self._sparse
            # A[perm, :][:, perm] = L U with U = D L'; Chol factor L sqrt(D)
            y = z / np.sqrt(self._diag_u)[:, None]
            x_perm = spsolve_triangular(lu.L.T.tocsr(), y, lower=False)
            return x_perm[lu.perm_c, :]
        c, lower = self._dense
        # lower Cholesky: solve L' x = z
        return solve_triangular(c, z, lower=lower, trans="T", check_finite=False)


class BlockSPDFactor:
    """Two-block factorisation of [[A, B'], [B, D]] with D eliminated.

    Built for precision matrices whose trailing block D is (near-)
    diagonal: D is factorised sparsely, the leading block is reduced to
    its dense Schur complement A - B' D^-1 B, and all three operations
    (solve, logdet, zero-mean sampling) run on the pair.  Positive
    definiteness of the whole matrix is certified by D and the Schur
    complement both factorising.
    """

    def __init__(self, A, Bt, D):
        self.r = A.shape[0]
        self.n = self.r + D.shape[0]
        self._A = A
        self._Bt = Bt.tocsr() if sparse.issparse(Bt) else np.asarray(Bt)
        self._D = D
        self._D_factor = SPDFactor(D)
        B_dense = np.asarray(self._Bt.todense()).T if sparse.issparse(self._Bt) \
            else self._Bt.T.copy()
        self._DinvB = self._D_factor.solve(B_dense)          # (n_xi, r)
        A_dense = np.asarray(A.todense()) if sparse.issparse(A) else np.asarray(A)
        schur = A_dense - self._Bt @ self._DinvB
        try:
            self._schur_chol = cho_factor(np.asarray(schur), lower=True,
                                          check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError(str(exc)) from exc

    # SuperLU handles cannot be pickled; rebuild from the stored blocks
    def __getstate__(self):
        return {"A": self._A, "Bt": self._Bt, "D": self._D}

    def __setstate__(self, state):
        self.__init__(state["A"], state["Bt"], state["D"])

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        a_part, d_part = b[: self.r], b[self.r:]
        rhs = a_part - self._Bt @ self._D_factor.solve(d_part)
        x = cho_solve(self._schur_chol, rhs, check_finite=False)
        y = self._D_factor.solve(d_part) - self._DinvB @ x
        return np.concatenate([x, y], axis=0)

    def logdet(self) -> float:
        c = self._schur_chol[0]
        return float(self._D_factor.logdet()
                     + 2.0 * np.sum(np.log(np.diag(c))))

    def sample_zero_mean(self, rng: np.random.Generator, ncols: int) -> np.ndarray:
        """Draws with covariance M^-1 via the block UDL factorisation.

        With M = U diag(S, D) U' and U = [[I, B' D^-1], [0, I]], a draw is
        x = U^-T w where w has independent blocks N(0, S^-1), N(0, D^-1).
        """
        c, lower = self._schur_chol
        z = rng.standard_normal((self.r, ncols))
        w_a = solve_triangular(c, z, lower=lower, trans="T", check_finite=False)
        w_d = self._D_factor.sample_zero_mean(rng, ncols)
        return np.concatenate([w_a, w_d - self._DinvB @ w_a], axis=0)
