"""
Brute-force dense ground truth for small grids.

Operators are assembled column by column from unit-vector probes, so the
result is exact for any linear field map. Grids are capped at ``J <= 4``
(225 unknowns).
"""
from dataclasses import dataclass

import numpy as np

from . import fields
from .loss import LossConfig, loss
from .network import apply_error_propagation, apply_level_operator, build_model

MAX_J = 4
MAX_N = (2 ** MAX_J - 1) ** 2


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class DenseOperator:
    """Matrix of a linear map between grid fields (row-major flattening)."""
    entries: np.ndarray
    shape: tuple  # input field shape
    out_shape: tuple = None  # defaults to ``shape``

    def __post_init__(self):
        if self.out_shape is None:
            object.__setattr__(self, "out_shape", tuple(self.shape))

    @property
    def n(self):
        return self.entries.shape[1]

    def __matmul__(self, other):
        if isinstance(other, DenseOperator):
            return DenseOperator(self.entries @ other.entries, other.shape, self.out_shape)
        return self.entries @ other

    @property
    def T(self):
        return DenseOperator(self.entries.T.copy(), self.out_shape, self.shape)

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        return (self.entries @ x.reshape(-1)).reshape(self.out_shape)


def _check_cap(n):
    if n > MAX_N:
        raise OracleError(f"dense oracle limited to {MAX_N} unknowns, got {n}")


def assemble(apply, shape, out_shape=None):
    """Matrix of the linear map ``apply`` with column ``j = apply(e_j)``.

    All unit vectors are pushed through ``apply`` as one batch.
    """
    shape = tuple(shape)
    n = int(np.prod(shape))
    _check_cap(n)
    unit = np.eye(n).reshape((n,) + shape)
    cols = np.asarray(apply(unit), dtype=float)
    out_shape = cols.shape[1:] if out_shape is None else tuple(out_shape)
    _check_cap(int(np.prod(out_shape)))
    return DenseOperator(cols.reshape(n, -1).T.copy(), shape, out_shape)


def exact_spectral_radius(B):
    """Largest eigenvalue modulus of a (possibly nonsymmetric) dense operator."""
    M = B.entries if isinstance(B, DenseOperator) else np.asarray(B, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise OracleError(f"square matrix required, got {M.shape}")
    _check_cap(M.shape[0])
    try:
        ev = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise OracleError(f"eigenvalue iteration did not converge: {exc}") from None
    return float(np.max(np.abs(ev)))


def exact_solve(A, b):
    """Solve ``A x = b`` by LU with partial pivoting; ``b`` is a grid field."""
    M = A.entries if isinstance(A, DenseOperator) else np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    try:
        x = np.linalg.solve(M, b.reshape(-1))
    except np.linalg.LinAlgError as exc:
        raise OracleError(f"singular operator: {exc}") from None
    res = np.linalg.norm(M @ x - b.reshape(-1))
    if res > 1e-10 * max(1.0, np.linalg.norm(b)):
        raise OracleError(f"solve residual {res:.3e} too large; operator near-singular")
    return x.reshape(b.shape)


# ---------------------------------------------------------------------------
# cross-checks of the matrix-free machinery
# ---------------------------------------------------------------------------

def error_propagation_matrix(net):
    return assemble(lambda z: apply_error_propagation(net, z), net.shape)


def spectral_check(kind, problem, J, kernels=None, cfg=LossConfig()):
    """``(rho_exact, rho1)`` for a network small enough to assemble."""
    net = build_model(kind, J, problem, kernels)
    return exact_spectral_radius(error_propagation_matrix(net)), loss(net, cfg)


def galerkin_check(net, level=2):
    """Max abs difference between the matrix-free ``A_level`` and the explicit
    product ``P A_{level-1} P^T`` of assembled factors."""
    if level < 2:
        raise ValueError("level must be >= 2")
    lp = net.levels[level - 2]
    fine = net.level_shape(level - 1)
    A_prev = assemble(lambda x: apply_level_operator(net, level - 1, x), fine)
    P = assemble(lambda x: fields.conv_down(x, net.kernels[lp.restriction], lp.stride),
                 fine)
    A = assemble(lambda x: apply_level_operator(net, level, x), net.level_shape(level))
    return float(np.max(np.abs(A.entries - (P @ A_prev @ P.T).entries)))
