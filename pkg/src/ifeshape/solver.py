"""Direct sparse solves for forward states and adjoints."""
import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import InvalidArgument, SolverError


class FactoredOperator:
    """Sparse LU factorization of a square matrix, reused for many right-hand sides.

    SuperLU is used for both the SPD (mixed) and the indefinite saddle-point
    (Neumann with multiplier) systems.
    """

    def __init__(self, A, check=True):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise InvalidArgument("matrix must be square")
        self.A = A
        self.n = A.shape[0]
        self.check = check
        # symmetric-mode pivoting first; partial pivoting for saddle systems
        # whose zero diagonal defeats it
        for opts in ({"diag_pivot_thresh": 0.0, "options": {"SymmetricMode": True}}, {}):
            try:
                self.lu = splu(A, permc_spec="MMD_AT_PLUS_A", **opts)
            except RuntimeError as err:
                raise SolverError(f"factorization failed: {err}") from err
            piv = np.abs(self.lu.U.diagonal())
            self.min_pivot = float(piv.min()) if len(piv) else 0.0
            if not len(piv) or self.min_pivot > 1e-14 * piv.max():
                break
        else:
            raise SolverError(f"numerically singular matrix (pivot ratio {self.min_pivot / piv.max():.2e})")

    def _solve(self, b, trans):
        b = np.asarray(b, float)
        if b.shape[0] != self.n:
            raise InvalidArgument(f"rhs length {b.shape[0]} does not match matrix size {self.n}")
        x = self.lu.solve(b, trans=trans)
        if self.check:
            M = self.A if trans == "N" else self.A.T
            r = np.linalg.norm(M @ x - b)
            nb = np.linalg.norm(b)
            if nb > 0 and r > 1e-10 * nb:
                # one step of iterative refinement before giving up
                x = x + self.lu.solve(b - M @ x, trans=trans)
                r = np.linalg.norm(M @ x - b)
                if r > 1e-10 * nb:
                    raise SolverError(f"relative residual {r / nb:.2e} exceeds 1e-10")
        return x


def factor(A, check=True):
    return FactoredOperator(A, check)


def solve(op, b):
    return op._solve(b, "N")


def solve_adjoint(op, g):
    """Solve A^T Y = g with the same factorization."""
    return op._solve(g, "T")
