"""Minimum-energy null control, optimal translation time and its certificate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from l2game import kernels
from l2game.errors import InvalidHorizon, InvalidTestHorizon, NonConvergence, ValidationError
from l2game.gramian import BlockGramian, assemble_gramian
from l2game.system import (
    DEFAULT_QUADRATURE,
    BlockSystem,
    BlockVector,
    ControlSignal,
    PanelGrid,
    QuadratureSpec,
    ZeroControl,
    l2_energy,
)

TAU0 = 1e-3
TAU_MAX = 1e6
TAU_MIN = 1e-12


class NullControl(ControlSignal):
    """``u(t) = -e^{-tA^T} W^{-1}(tau) x0``, steering ``x0`` to the origin at ``tau``.

    Evaluated as ``-e^{(tau-t)A^T} eta`` with ``eta = R^{-1}(tau) e^{tau A} x0``
    so that only decaying exponentials appear.
    """

    def __init__(self, system: BlockSystem, x0: BlockVector, gramian: BlockGramian):
        self.system = system
        self.x0 = x0
        self.gramian = gramian
        self.tau = gramian.tau
        self.horizon = gramian.tau
        self.size = system.size
        self.eta = gramian.steering_weights(x0)
        self._transposed = [np.ascontiguousarray(np.swapaxes(g.stack, 1, 2)) for g in system.groups]

    @property
    def y(self) -> BlockVector:
        """``W^{-1}(tau) x0``; ``u(0) = -y``."""
        return self.gramian.solve(self.x0)

    @property
    def cost(self) -> float:
        return self.gramian.cost(self.x0)

    def sample(self, ts):
        ts = np.asarray(ts, dtype=np.float64).ravel()
        out = np.empty((ts.size, self.size))
        back = self.tau - ts
        for g, at in zip(self.system.groups, self._transposed):
            n = len(g.index)
            stack = np.broadcast_to(at, (ts.size, n) + at.shape[1:]).reshape(-1, g.dim, g.dim)
            e = kernels.expm_stack(stack, np.repeat(back, n)).reshape(ts.size, n, g.dim, g.dim)
            out[:, g.cols] = -np.einsum("tnab,nb->tna", e, self.eta.flat[g.cols])
        return out

    def sample_grid(self, grid: PanelGrid):
        if grid.start < -1e-12 or grid.end > self.tau * (1 + 1e-12) + 1e-15:
            return super().sample_grid(grid)
        m = grid.xi.size
        out = np.empty((grid.panels, m, self.size))
        lead = max(self.tau - grid.end, 0.0)
        for g, at in zip(self.system.groups, self._transposed):
            eta = self.eta.flat[g.cols]
            if lead > 0.0:
                e = kernels.expm_stack(at, np.full(len(g.index), lead))
                eta = np.einsum("nab,nb->na", e, eta)
            # nodes are symmetric, so reversing both axes maps tau - t onto the grid
            vals = kernels.exp_action_stack(at, eta, grid.h, grid.panels, grid.xi)
            out[:, :, g.cols] = -np.transpose(vals[:, ::-1, ::-1, :], (1, 2, 0, 3))
        return out

    def energy(self, q: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
        return l2_energy(self, q)


def null_control(system: BlockSystem, x0: BlockVector, tau: float,
                 q: QuadratureSpec = DEFAULT_QUADRATURE) -> NullControl:
    """Minimum-energy control steering ``x0`` to zero at time ``tau``."""
    system.check_vector(x0)
    tau = float(tau)
    if not (tau > 0 and math.isfinite(tau)):
        raise InvalidHorizon(f"horizon must be positive and finite, got {tau}")
    return NullControl(system, x0, assemble_gramian(system, tau, q))


@dataclass
class OptimalTimeResult:
    vartheta: float
    cost: float
    target: float
    bracket: tuple[float, float] | None
    bracket_costs: tuple[float, float] | None
    evaluations: int
    history: list[tuple[float, float]] = field(default_factory=list, repr=False)


def solve_optimal_time(system: BlockSystem, x0: BlockVector, theta: float,
                       q: QuadratureSpec = DEFAULT_QUADRATURE, tol: float = 1e-10,
                       tau0: float = TAU0, tau_max: float = TAU_MAX,
                       max_iter: int = 200) -> OptimalTimeResult:
    """Solve ``<x0, W^{-1}(tau) x0> = theta^2`` for the unique horizon.

    The cost is strictly decreasing in ``tau``; a bracket is grown
    geometrically from ``tau0`` and then shrunk by Illinois-modified
    secant steps on ``(log tau, log cost)``, falling back to bisection
    whenever a step leaves the bracket.  Returns
    ``vartheta = 0`` when the retained part of ``x0`` vanishes.

    Raises
    ------
    NonConvergence
        If no bracket exists in ``[TAU_MIN, tau_max]`` or the iteration
        budget is exhausted; ``exc.bracket`` holds the last state.
    """
    system.check_vector(x0)
    theta = float(theta)
    if not (theta > 0 and math.isfinite(theta)):
        raise ValidationError("theta must be positive and finite")
    target = theta * theta
    if x0.is_zero():
        return OptimalTimeResult(0.0, 0.0, target, None, None, 0)

    history = []

    def cost(tau):
        c = assemble_gramian(system, tau, q).cost(x0)
        history.append((tau, c))
        return c

    def done(c):
        return abs(c - target) <= tol * target

    lo = hi = float(tau0)
    c_lo = c_hi = cost(lo)
    if done(c_lo):
        return OptimalTimeResult(lo, c_lo, target, None, None, len(history), history)
    if c_lo > target:
        while True:
            hi = 2.0 * lo
            if hi > tau_max:
                raise NonConvergence(f"cost stays above theta^2 up to tau={lo:g}", bracket=(lo, c_lo))
            c_hi = cost(hi)
            if done(c_hi):
                return OptimalTimeResult(hi, c_hi, target, None, None, len(history), history)
            if c_hi < target:
                break
            lo, c_lo = hi, c_hi
    else:
        while True:
            lo = 0.5 * hi
            if lo < TAU_MIN:
                raise NonConvergence(f"cost stays below theta^2 down to tau={hi:g}", bracket=(hi, c_hi))
            c_lo = cost(lo)
            if done(c_lo):
                return OptimalTimeResult(lo, c_lo, target, None, None, len(history), history)
            if c_lo > target:
                break
            hi, c_hi = lo, c_lo
    bracket0 = (lo, hi)
    bracket_costs0 = (c_lo, c_hi)

    # Illinois regula falsi on f(x) = log cost(e^x) - log theta^2
    log_t = math.log(target)
    x1, f1 = math.log(lo), math.log(c_lo) - log_t
    x2, f2 = math.log(hi), math.log(c_hi) - log_t
    side = 0
    for _ in range(max_iter):
        x = x2 - f2 * (x2 - x1) / (f2 - f1)
        if not x1 < x < x2:
            x = 0.5 * (x1 + x2)
        tau = math.exp(x)
        if not lo < tau < hi:
            break
        c = cost(tau)
        if done(c):
            return OptimalTimeResult(tau, c, target, bracket0, bracket_costs0, len(history), history)
        fx = math.log(c) - log_t
        if fx > 0:
            lo, c_lo, x1, f1 = tau, c, x, fx
            if side == 1:
                f2 *= 0.5
            side = 1
        else:
            hi, c_hi, x2, f2 = tau, c, x, fx
            if side == -1:
                f1 *= 0.5
            side = -1
        if hi - lo <= 4 * np.finfo(float).eps * hi:
            break
    best = min(((lo, c_lo), (hi, c_hi)), key=lambda p: abs(p[1] - target))
    if hi - lo <= 4 * np.finfo(float).eps * hi:
        # bracket at floating-point resolution: nothing better is representable
        return OptimalTimeResult(best[0], best[1], target, bracket0, bracket_costs0, len(history), history)
    raise NonConvergence(
        f"optimal time did not converge: bracket [{lo!r}, {hi!r}] costs [{c_lo!r}, {c_hi!r}] target {target!r}",
        bracket=(lo, hi, c_lo, c_hi))


def optimal_time(system: BlockSystem, x0: BlockVector, theta: float,
                 q: QuadratureSpec = DEFAULT_QUADRATURE, tol: float = 1e-10) -> float:
    """Optimal horizon ``vartheta`` of translation to the origin with budget ``theta``."""
    return solve_optimal_time(system, x0, theta, q, tol).vartheta


def time_optimal_control(system: BlockSystem, x0: BlockVector, theta: float,
                         q: QuadratureSpec = DEFAULT_QUADRATURE, tol: float = 1e-10):
    """``(vartheta, control)``; the control is identically zero when ``x0`` is."""
    vartheta = optimal_time(system, x0, theta, q, tol)
    if vartheta == 0.0:
        return 0.0, ZeroControl(system.size, 0.0)
    return vartheta, null_control(system, x0, vartheta, q)


@dataclass(frozen=True)
class OptimalityReport:
    tau_test: float
    vartheta: float
    j_min: float
    theta_sq: float

    @property
    def margin(self) -> float:
        return self.j_min - self.theta_sq

    @property
    def inadmissible(self) -> bool:
        """Every control steering to zero by ``tau_test`` exceeds the budget."""
        return self.j_min > self.theta_sq

    def as_dict(self):
        return {"tau_test": self.tau_test, "vartheta": self.vartheta, "j_min": self.j_min,
                "theta_sq": self.theta_sq, "margin": self.margin, "inadmissible": self.inadmissible}


def certify_optimality(system: BlockSystem, x0: BlockVector, theta: float, tau_test: float,
                       q: QuadratureSpec = DEFAULT_QUADRATURE, tol: float = 1e-10,
                       vartheta: float | None = None) -> OptimalityReport:
    """Show no admissible control reaches the origin by ``tau_test < vartheta``.

    The minimum energy among controls steering to zero by ``tau_test`` is
    ``<x0, W^{-1}(tau_test) x0>``; exceeding ``theta^2`` rules them all out.
    """
    if vartheta is None:
        vartheta = optimal_time(system, x0, theta, q, tol)
    tau_test = float(tau_test)
    if not 0.0 < tau_test < vartheta:
        raise InvalidTestHorizon(f"tau_test={tau_test} must lie in (0, vartheta={vartheta})")
    j_min = assemble_gramian(system, tau_test, q).cost(x0)
    return OptimalityReport(tau_test, vartheta, j_min, theta * theta)
