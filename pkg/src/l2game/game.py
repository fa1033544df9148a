"""Guaranteed pursuit: the pursuer strategy, an evader library and a match runner.

The pursuer plays ``u(t, v) = v(t) + omega(t)`` where ``omega`` is the
minimum-energy null control with budget ``rho - sigma``; the evader term
cancels in ``dx/dt = Ax + u - v`` so the state follows the same path
whatever the evader does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from l2game.control import null_control, optimal_time
from l2game.errors import InvalidHorizon, PursuitNotGuaranteed, ValidationError
from l2game.system import (
    ADMISSIBILITY_SLACK,
    DEFAULT_QUADRATURE,
    BlockSystem,
    BlockVector,
    ClosedFormControl,
    ControlSignal,
    PiecewiseConstantControl,
    QuadratureSpec,
    ZeroControl,
    l2_energy,
    propagate,
    trajectory,
)

EVADER_KINDS = ("zero", "constant", "sinusoid", "greedy", "random", "aligned")


@dataclass(frozen=True)
class GameConfig:
    system: BlockSystem
    x0: BlockVector
    rho: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.rho) and self.rho > 0):
            raise ValidationError("rho must be positive and finite")
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ValidationError("sigma must be non-negative and finite")
        if not self.rho > self.sigma:
            raise PursuitNotGuaranteed(f"pursuit needs rho > sigma, got rho={self.rho}, sigma={self.sigma}")
        self.system.check_vector(self.x0)

    @property
    def margin(self) -> float:
        return self.rho - self.sigma


def pursuit_time(config: GameConfig, q: QuadratureSpec = DEFAULT_QUADRATURE, tol: float = 1e-10) -> float:
    """Guaranteed capture time: the optimal time for budget ``rho - sigma``."""
    if not config.rho > config.sigma:
        raise PursuitNotGuaranteed("pursuit needs rho > sigma")
    return optimal_time(config.system, config.x0, config.margin, q, tol)


class PursuitStrategy:
    """``u(t, v) = v + omega(t)`` with ``omega`` steering ``x0`` to zero at ``vartheta1``."""

    def __init__(self, config: GameConfig, vartheta1: float | None = None,
                 q: QuadratureSpec = DEFAULT_QUADRATURE, tol: float = 1e-10):
        self.config = config
        self.q = q
        self.vartheta1 = pursuit_time(config, q, tol) if vartheta1 is None else float(vartheta1)
        if self.vartheta1 < 0 or not math.isfinite(self.vartheta1):
            raise InvalidHorizon("vartheta1 must be finite and non-negative")
        if self.vartheta1 == 0.0:
            self.omega = ZeroControl(config.system.size, 0.0)
        else:
            self.omega = null_control(config.system, config.x0, self.vartheta1, q)

    def feedforward(self, t: float) -> np.ndarray:
        self._check(t)
        return self.omega(t)

    def _check(self, t):
        if not 0.0 <= t <= self.vartheta1 * (1 + 1e-12):
            raise InvalidHorizon(f"t={t} outside [0, {self.vartheta1}]")

    def __call__(self, t: float, v_t) -> np.ndarray:
        v_t = np.asarray(v_t, dtype=np.float64)
        if v_t.shape != (self.config.system.size,):
            raise ValidationError(f"evader value has shape {v_t.shape}")
        return v_t + self.feedforward(t)

    def control(self, evader: ControlSignal) -> "PursuerControl":
        return PursuerControl(evader, self.omega)


def pursuer_strategy(config: GameConfig, vartheta1: float, t: float, v_t,
                     q: QuadratureSpec = DEFAULT_QUADRATURE) -> np.ndarray:
    """Evaluate the pursuer strategy once; ``v_t`` is the evader's flat control value."""
    return PursuitStrategy(config, vartheta1, q)(t, v_t)


class PursuerControl(ControlSignal):
    """The realised pursuer control ``v(t) + omega(t)`` against a given evader."""

    def __init__(self, evader: ControlSignal, omega: ControlSignal):
        self.evader = evader
        self.omega = omega
        self.size = omega.size
        self.horizon = min(evader.horizon, omega.horizon)
        self.breakpoints = tuple(evader.breakpoints)

    def sample(self, ts):
        return self.evader.sample(ts) + self.omega.sample(ts)

    def sample_grid(self, grid):
        return self.evader.sample_grid(grid) + self.omega.sample_grid(grid)


@dataclass(frozen=True)
class EvaderStrategy:
    """Open-loop or sampled-feedback evader, rescaled to ``amplitude * sigma^2`` energy.

    ``amplitude`` is the fraction of the energy budget spent, in ``[0, 1]``.
    """

    kind: str = "zero"
    amplitude: float = 1.0
    direction: tuple | None = None
    frequency: float = 1.0
    phase: float = 0.0
    gain: float = 1.0
    seed: int = 0
    pieces: int = 16

    def __post_init__(self):
        if self.kind not in EVADER_KINDS:
            raise ValidationError(f"unknown evader kind {self.kind!r}; choose from {EVADER_KINDS}")
        if not 0.0 <= self.amplitude <= 1.0:
            raise ValidationError("amplitude is a budget fraction in [0, 1]")
        if self.pieces < 1:
            raise ValidationError("pieces must be positive")

    def build(self, strategy: PursuitStrategy) -> ControlSignal:
        cfg = strategy.config
        n, horizon, q = cfg.system.size, strategy.vartheta1, strategy.q
        budget = self.amplitude * cfg.sigma ** 2
        if horizon == 0.0 or budget == 0.0 or self.kind == "zero":
            return ZeroControl(n, horizon)
        if self.kind == "aligned":
            return _rescale(strategy.omega, budget, q)
        if self.kind in ("constant", "sinusoid"):
            d = self._direction(cfg)
            if self.kind == "constant":
                return ClosedFormControl("constant", d * math.sqrt(budget / horizon), horizon)
            raw = ClosedFormControl("sinusoid", d, horizon, frequency=self.frequency, phase=self.phase)
            e = l2_energy(raw, q)
            if e == 0.0:
                return ZeroControl(n, horizon)
            return ClosedFormControl("sinusoid", d * math.sqrt(budget / e), horizon,
                                     frequency=self.frequency, phase=self.phase)
        times = np.linspace(0.0, horizon, self.pieces + 1)
        if self.kind == "random":
            rng = np.random.default_rng(self.seed)
            values = rng.standard_normal((self.pieces, n))
        else:
            # greedy: push away from the origin along the (evader-independent) path
            mids = 0.5 * (times[:-1] + times[1:])
            states = trajectory(cfg.system, cfg.x0, strategy.omega, mids, q)
            values = np.array([-self.gain * x.flat for x in states])
        raw = PiecewiseConstantControl(times, values)
        e = raw.exact_energy()
        if e == 0.0:
            return ZeroControl(n, horizon)
        return PiecewiseConstantControl(times, values * math.sqrt(budget / e))

    def _direction(self, cfg: GameConfig) -> np.ndarray:
        if self.direction is not None:
            d = np.asarray(self.direction, dtype=np.float64)
            if d.shape != (cfg.system.size,):
                raise ValidationError(f"direction must have {cfg.system.size} entries")
        elif not cfg.x0.is_zero():
            d = np.array(cfg.x0.flat)
        else:
            d = np.zeros(cfg.system.size)
            d[0] = 1.0
        norm = np.linalg.norm(d)
        if norm == 0.0:
            raise ValidationError("direction must be non-zero")
        return d / norm


def _rescale(signal: ControlSignal, budget: float, q: QuadratureSpec) -> ControlSignal:
    e = l2_energy(signal, q)
    if e == 0.0:
        return ZeroControl(signal.size, signal.horizon)
    return math.sqrt(budget / e) * signal


@dataclass
class GameResult:
    vartheta1: float
    capture_norm: float
    x0_norm: float
    pursuer_energy: float
    evader_energy: float
    feedforward_energy: float
    pursuer_admissible: bool
    evader_admissible: bool
    triangle_ok: bool
    trajectory: list[tuple[float, float]] = field(repr=False)
    states: list[BlockVector] = field(default_factory=list, repr=False)

    @property
    def captured(self) -> bool:
        return self.capture_norm <= 1e-6 * max(self.x0_norm, np.finfo(float).tiny)

    def as_dict(self) -> dict:
        return {
            "vartheta1": self.vartheta1,
            "capture_norm": self.capture_norm,
            "x0_norm": self.x0_norm,
            "pursuer_energy": self.pursuer_energy,
            "evader_energy": self.evader_energy,
            "feedforward_energy": self.feedforward_energy,
            "pursuer_admissible": self.pursuer_admissible,
            "evader_admissible": self.evader_admissible,
            "triangle_ok": self.triangle_ok,
        }


def _within(energy: float, bound: float) -> bool:
    return energy <= bound * bound + ADMISSIBILITY_SLACK


def play_game(config: GameConfig, evader: EvaderStrategy, q: QuadratureSpec = DEFAULT_QUADRATURE,
              tol: float = 1e-10, samples: int = 65, strategy: PursuitStrategy | None = None) -> GameResult:
    """Play one match on ``[0, vartheta1]`` and account for both energy budgets.

    The state is driven by ``u - v`` evaluated numerically, so cancellation
    of the evader is checked rather than assumed.
    """
    strategy = strategy or PursuitStrategy(config, q=q, tol=tol)
    sys, x0 = config.system, config.x0
    horizon = strategy.vartheta1
    if horizon == 0.0:
        return GameResult(0.0, x0.retained_norm, x0.retained_norm, 0.0, 0.0, 0.0, True, True, True,
                          [(0.0, x0.norm)], [x0])
    v = evader.build(strategy)
    u = strategy.control(v)
    drive = u - v
    x_end = propagate(sys, x0, drive, horizon, q)
    times = np.linspace(0.0, horizon, max(int(samples), 2))
    states = trajectory(sys, x0, drive, times, q)
    e_u = l2_energy(u, q)
    e_v = l2_energy(v, q)
    e_w = l2_energy(strategy.omega, q)
    triangle = math.sqrt(e_u) <= math.sqrt(e_v) + math.sqrt(e_w) + 1e-12 * (1 + math.sqrt(e_u))
    return GameResult(
        vartheta1=horizon,
        capture_norm=x_end.retained_norm,
        x0_norm=x0.retained_norm,
        pursuer_energy=e_u,
        evader_energy=e_v,
        feedforward_energy=e_w,
        pursuer_admissible=_within(e_u, config.rho),
        evader_admissible=_within(e_v, config.sigma),
        triangle_ok=triangle,
        trajectory=[(float(t), x.norm) for t, x in zip(times, states)],
        states=states,
    )
