"""Controllability Gramians of the block system and the steering cost.

For a block ``A`` and horizon ``tau`` the Gramian is
``W(tau) = int_0^tau e^{-sA} e^{-sA^T} ds``.  Its entries grow like
``e^{2 beta tau}`` and its condition number explodes with the spread of
the spectrum, so inverses are applied through the congruent reachability
Gramian

    R(tau) = e^{tau A} W(tau) e^{tau A^T} = int_0^tau e^{rA} e^{rA^T} dr,

which stays bounded as ``tau`` grows.  Then
``W^{-1} x = e^{tau A^T} R^{-1} e^{tau A} x``.
"""

from __future__ import annotations

import numpy as np

from l2game import kernels
from l2game.blockcore import BlockMatrix, SPDMatrix, _as_array, expm, spd_factor
from l2game.errors import InvalidHorizon, NotPositiveDefinite, ValidationError
from l2game.system import DEFAULT_QUADRATURE, BlockSystem, BlockVector, QuadratureSpec


def _check_tau(tau):
    tau = float(tau)
    if not (tau > 0.0 and np.isfinite(tau)):
        raise InvalidHorizon(f"horizon must be positive and finite, got {tau}")
    return tau


def _quadrature_stack(stack, tau, q, sign):
    panels = q.panels_for(tau)
    xi, wq = q.rule
    return kernels.gramian_stack(stack, tau / panels, panels, xi, wq, sign)


def gramian_block(a, tau: float, q: QuadratureSpec = DEFAULT_QUADRATURE) -> SPDMatrix:
    """``int_0^tau e^{-sA} e^{-sA^T} ds`` by composite Gauss-Legendre, factorized.

    Raises
    ------
    InvalidHorizon
        If ``tau <= 0``.
    NotPositiveDefinite
        If the result cannot be factorized (``tau`` below numeric resolution,
        or so large that the spectral spread swamps double precision).
    """
    tau = _check_tau(tau)
    w = _quadrature_stack(_as_array(a)[None], tau, q, -1.0)[0]
    return spd_factor(w)


def reachability_gramian_block(a, tau: float, q: QuadratureSpec = DEFAULT_QUADRATURE) -> SPDMatrix:
    """``int_0^tau e^{rA} e^{rA^T} dr``, factorized."""
    tau = _check_tau(tau)
    w = _quadrature_stack(_as_array(a)[None], tau, q, 1.0)[0]
    return spd_factor(w)


def van_loan_gramian(a, tau: float, reachability: bool = False) -> np.ndarray:
    """Gramian from one exponential of the augmented matrix ``[[-A, I], [0, A^T]]``.

    With ``E = exp(tau * M)`` the blocks are ``E11 = e^{-tau A}`` and
    ``E12 = W(tau) e^{tau A^T}``, hence ``W = E12 E11^T``.  The
    reachability variant uses ``[[A, I], [0, -A^T]]``.
    """
    a = _as_array(a)
    tau = _check_tau(tau)
    d = a.shape[0]
    sgn = 1.0 if reachability else -1.0
    m = np.zeros((2 * d, 2 * d))
    m[:d, :d] = sgn * a
    m[:d, d:] = np.eye(d)
    m[d:, d:] = -sgn * a.T
    e = expm(m, tau)
    w = e[:d, d:] @ e[:d, :d].T
    return 0.5 * (w + w.T)


class BlockGramian:
    """Per-block Gramians of a system at a fixed horizon.

    Only the reachability Gramians and the transitions ``e^{tau A_i}``
    are assembled; the defining Gramians ``W_i(tau)`` are built on request
    by :meth:`matrix`.
    """

    def __init__(self, system: BlockSystem, tau: float, q: QuadratureSpec = DEFAULT_QUADRATURE):
        self.system = system
        self.tau = _check_tau(tau)
        self.q = q
        self._reach = []
        self._factor = []
        self._transition = []
        for g in system.groups:
            r = _quadrature_stack(g.stack, self.tau, q, 1.0)
            if not np.all(np.isfinite(r)):
                raise NotPositiveDefinite(f"Gramian at tau={self.tau} is not finite", block=int(g.index[0]))
            lower, (bad, piv) = kernels.cholesky_stack(r)
            if bad >= 0:
                raise NotPositiveDefinite(
                    f"block {int(g.index[bad])}: Gramian at tau={self.tau:g} not positive definite (pivot {piv})",
                    block=int(g.index[bad]), pivot=piv)
            self._reach.append(r)
            self._factor.append(lower)
            self._transition.append(kernels.expm_stack(g.stack, np.full(len(g.index), self.tau)))

    def _locate(self, i):
        d = self.system.dims[i]
        for k, g in enumerate(self.system.groups):
            if g.dim == d:
                return k, int(np.searchsorted(g.index, i))
        raise IndexError(i)

    def reachability(self, i: int) -> SPDMatrix:
        k, j = self._locate(i)
        return SPDMatrix(self._reach[k][j], self._factor[k][j])

    def transition(self, i: int) -> np.ndarray:
        k, j = self._locate(i)
        return self._transition[k][j]

    def matrix(self, i: int) -> np.ndarray:
        """The defining Gramian ``W_i(tau)`` by direct quadrature."""
        a = self.system.blocks[i].entries
        return _quadrature_stack(a[None], self.tau, self.q, -1.0)[0]

    @property
    def blocks(self) -> list[SPDMatrix]:
        """Factorized ``W_i(tau)`` for every block (may raise at large ``tau``)."""
        return [spd_factor(self.matrix(i)) for i in range(len(self.system))]

    def steering_weights(self, x0: BlockVector) -> BlockVector:
        """``eta = R^{-1}(tau) e^{tau A} x0`` blockwise."""
        self.system.check_vector(x0)
        eta = np.empty(self.system.size)
        for g, lower, phi in zip(self.system.groups, self._factor, self._transition):
            z = np.einsum("nab,nb->na", phi, x0.flat[g.cols])
            eta[g.cols] = kernels.cho_solve_stack(lower, z)
        return BlockVector.from_flat(self.system.dims, eta)

    def solve(self, x0: BlockVector) -> BlockVector:
        """``W^{-1}(tau) x0`` blockwise, never forming an inverse."""
        eta = self.steering_weights(x0)
        y = np.empty(self.system.size)
        for g, phi in zip(self.system.groups, self._transition):
            y[g.cols] = np.einsum("nba,nb->na", phi, eta.flat[g.cols])
        return BlockVector.from_flat(self.system.dims, y)

    def block_costs(self, x0: BlockVector) -> np.ndarray:
        """Per-block ``<x_i, W_i^{-1}(tau) x_i>`` in block order."""
        self.system.check_vector(x0)
        out = np.empty(len(self.system))
        for g, lower, phi in zip(self.system.groups, self._factor, self._transition):
            z = np.einsum("nab,nb->na", phi, x0.flat[g.cols])
            eta = kernels.cho_solve_stack(lower, z)
            out[g.index] = np.einsum("na,na->n", z, eta)
        return out

    def cost(self, x0: BlockVector) -> float:
        # sequential sum in ascending block order
        return float(sum(self.block_costs(x0).tolist()))

    def inverse_norms(self) -> np.ndarray:
        """``||W_i^{-1}(tau)|| = ||L_i^{-1} e^{tau A_i}||^2`` for every block."""
        out = np.empty(len(self.system))
        for g, lower, phi in zip(self.system.groups, self._factor, self._transition):
            m = np.linalg.solve(lower, phi)
            out[g.index] = np.linalg.norm(m, 2, axis=(1, 2)) ** 2
        return out


def assemble_gramian(system: BlockSystem, tau: float, q: QuadratureSpec = DEFAULT_QUADRATURE) -> BlockGramian:
    return BlockGramian(system, tau, q)


def gramian_cost(g: BlockGramian, x0: BlockVector) -> float:
    """Minimum steering energy ``<x0, W^{-1}(tau) x0>`` over the retained blocks.

    The tail bound of ``x0`` is ignored: no Gramian data exist for the
    discarded blocks.
    """
    return g.cost(x0)


def normalizing_condition(block: BlockMatrix) -> float:
    """Condition number of the eigenvector matrix, a stand-in for the normalizing constant."""
    _, v = np.linalg.eig(block.entries)
    c = np.linalg.cond(v)
    return float(c) if np.isfinite(c) else np.inf


def w_inv_bound_report(g: BlockGramian, beta=None, c=None) -> list[dict]:
    """Compare ``||W_i^{-1}(tau)||`` with ``2 C_i^2 beta_i / (e^{2 beta_i tau} - 1)``.

    ``beta`` defaults to each block's slowest decay rate ``-abscissa``;
    ``c`` defaults to the measured eigenvector condition number.  Scalars
    apply to every block.
    """
    blocks = g.system.blocks
    n = len(blocks)
    betas = np.array([b.decay_rate for b in blocks]) if beta is None else np.broadcast_to(beta, (n,)).astype(float)
    if np.any(betas <= 0):
        raise ValidationError("decay rates must be positive")
    cs = np.array([normalizing_condition(b) for b in blocks]) if c is None else np.broadcast_to(c, (n,)).astype(float)
    measured = g.inverse_norms()
    bound = 2.0 * cs ** 2 * betas / np.expm1(2.0 * betas * g.tau)
    return [
        {"block": i, "measured": float(measured[i]), "bound": float(bound[i]), "beta": float(betas[i]),
         "C": float(cs[i]), "ok": bool(measured[i] <= bound[i] * (1.0 + 1e-9))}
        for i in range(n)
    ]


def w_inv_bound_check(g: BlockGramian, beta=None, c=None) -> bool:
    """True when every block satisfies the inverse-Gramian decay bound (diagnostic)."""
    return all(r["ok"] for r in w_inv_bound_report(g, beta, c))
