"""Truncated block-diagonal systems, trajectories and the L2 energy functional.

The state lives in a flat array obtained by concatenating the blocks; the
kernels work on stacks of equally sized blocks, so a :class:`BlockSystem`
precomputes one group per distinct block dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from l2game import kernels
from l2game.blockcore import BlockMatrix
from l2game.errors import InvalidHorizon, ValidationError

ADMISSIBILITY_SLACK = 1e-9
MIN_NODES_TOTAL = 8
D_MAX = 8


@lru_cache(maxsize=None)
def gauss_legendre(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    xi, wq = np.polynomial.legendre.leggauss(nodes)
    xi.setflags(write=False)
    wq.setflags(write=False)
    return xi, wq


@dataclass(frozen=True)
class PanelGrid:
    """Uniform panels ``[start + p*h, start + (p+1)*h]`` with Gauss nodes."""

    start: float
    h: float
    panels: int
    xi: np.ndarray
    wq: np.ndarray

    @property
    def end(self) -> float:
        return self.start + self.panels * self.h

    def times(self) -> np.ndarray:
        """Node times, shape ``(panels, nodes)``."""
        local = 0.5 * self.h * (1.0 + self.xi)
        return self.start + np.arange(self.panels)[:, None] * self.h + local[None, :]

    def weights(self) -> np.ndarray:
        return np.broadcast_to(0.5 * self.h * self.wq, (self.panels, self.xi.size))


@dataclass(frozen=True)
class QuadratureSpec:
    """Composite Gauss-Legendre settings: panels per unit time and nodes per panel."""

    panels_per_unit_time: int = 32
    nodes: int = 8

    def __post_init__(self):
        if int(self.panels_per_unit_time) != self.panels_per_unit_time or self.panels_per_unit_time < 1:
            raise ValidationError("panels_per_unit_time must be a positive integer")
        if int(self.nodes) != self.nodes or not 1 <= self.nodes <= 32:
            raise ValidationError("nodes must be an integer in [1, 32]")

    @property
    def rule(self) -> tuple[np.ndarray, np.ndarray]:
        return gauss_legendre(self.nodes)

    def panels_for(self, length: float) -> int:
        raw = math.ceil(self.panels_per_unit_time * length * (1.0 - 1e-12))
        return max(1, raw, math.ceil(MIN_NODES_TOTAL / self.nodes))

    def grid(self, start: float, end: float) -> PanelGrid:
        length = end - start
        if not length > 0.0:
            raise InvalidHorizon(f"empty interval [{start}, {end}]")
        panels = self.panels_for(length)
        xi, wq = self.rule
        return PanelGrid(start, length / panels, panels, xi, wq)

    def doubled(self) -> "QuadratureSpec":
        return QuadratureSpec(2 * self.panels_per_unit_time, self.nodes)


DEFAULT_QUADRATURE = QuadratureSpec()


class BlockSystem:
    """The first ``N`` blocks of ``A = diag(A_1, A_2, ...)``.

    Parameters
    ----------
    blocks : sequence of BlockMatrix or array_like
        Square blocks, in order.
    d_max : int
        Upper bound on block dimensions.
    allow_dim1 : bool
        Admit 1x1 blocks (oracle mode); the default enforces ``2 <= d_i``.
    require_stable : bool
        Reject blocks whose spectral abscissa is not strictly negative.
    """

    def __init__(self, blocks: Sequence, d_max: int = D_MAX, allow_dim1: bool = False,
                 require_stable: bool = True):
        blocks = tuple(b if isinstance(b, BlockMatrix) else BlockMatrix(b) for b in blocks)
        if not blocks:
            raise ValidationError("a system needs at least one block")
        self.blocks = blocks
        self.d_max = int(d_max)
        self.allow_dim1 = bool(allow_dim1)
        errors = validate_blocks(blocks, self.d_max, self.allow_dim1, require_stable)
        if errors:
            raise ValidationError("; ".join(errors))
        self.dims = tuple(b.dim for b in blocks)
        self.offsets = tuple(np.concatenate([[0], np.cumsum(self.dims)]).tolist())
        self.size = self.offsets[-1]
        self.groups = self._build_groups()

    def _build_groups(self):
        groups = []
        for d in sorted(set(self.dims)):
            idx = np.array([i for i, di in enumerate(self.dims) if di == d])
            cols = np.array([np.arange(self.offsets[i], self.offsets[i] + d) for i in idx])
            stack = np.stack([self.blocks[i].entries for i in idx])
            stack.setflags(write=False)
            groups.append(BlockGroup(d, idx, cols, stack))
        return tuple(groups)

    def __len__(self):
        return len(self.blocks)

    @property
    def abscissae(self) -> np.ndarray:
        return np.array([b.spectral_abscissa for b in self.blocks])

    @property
    def alpha_min(self) -> float:
        """Slowest decay rate over the retained blocks."""
        return float(-np.max(self.abscissae))

    def zero_vector(self) -> "BlockVector":
        return BlockVector.from_flat(self.dims, np.zeros(self.size))

    def check_vector(self, x: "BlockVector"):
        if tuple(x.dims) != self.dims:
            raise ValidationError(f"vector block dims {tuple(x.dims)} do not match system dims {self.dims}")


@dataclass(frozen=True)
class BlockGroup:
    dim: int
    index: np.ndarray   # block indices
    cols: np.ndarray    # (n_g, d) flat-state columns
    stack: np.ndarray   # (n_g, d, d)


def validate_blocks(blocks, d_max=D_MAX, allow_dim1=False, require_stable=True) -> list[str]:
    """All admission errors for a list of blocks (empty when valid)."""
    errors = []
    lo = 1 if allow_dim1 else 2
    for i, b in enumerate(blocks):
        if not lo <= b.dim <= d_max:
            errors.append(f"block {i}: dimension {b.dim} outside [{lo}, {d_max}]")
            continue
        if require_stable and not b.spectral_abscissa < 0.0:
            errors.append(f"block {i}: spectral abscissa {b.spectral_abscissa:g} >= 0")
    return errors


class BlockVector:
    """Retained blocks of an element of l2 plus a bound on the discarded tail."""

    __slots__ = ("dims", "flat", "tail_bound")

    def __init__(self, parts, tail_bound: float = 0.0):
        parts = [np.atleast_1d(np.asarray(p, dtype=np.float64)) for p in parts]
        for p in parts:
            if p.ndim != 1:
                raise ValidationError("each block of a vector must be one-dimensional")
        flat = np.concatenate(parts) if parts else np.zeros(0)
        self._init(tuple(p.size for p in parts), flat, tail_bound)

    def _init(self, dims, flat, tail_bound):
        if not np.all(np.isfinite(flat)):
            raise ValidationError("vector entries must be finite")
        tail_bound = float(tail_bound)
        if not (tail_bound >= 0.0 and math.isfinite(tail_bound)):
            raise ValidationError("tail_bound must be a finite non-negative number")
        flat = np.array(flat, dtype=np.float64)
        flat.setflags(write=False)
        self.dims = dims
        self.flat = flat
        self.tail_bound = tail_bound

    @classmethod
    def from_flat(cls, dims, flat, tail_bound: float = 0.0) -> "BlockVector":
        if isinstance(dims, BlockSystem):
            dims = dims.dims
        dims = tuple(int(d) for d in dims)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (sum(dims),):
            raise ValidationError(f"flat vector has shape {flat.shape}, expected ({sum(dims)},)")
        obj = cls.__new__(cls)
        obj._init(dims, flat, tail_bound)
        return obj

    @property
    def parts(self) -> list[np.ndarray]:
        out, k = [], 0
        for d in self.dims:
            out.append(self.flat[k:k + d])
            k += d
        return out

    def block_norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(p) for p in self.parts])

    @property
    def retained_norm_sq(self) -> float:
        return float(np.dot(self.flat, self.flat))

    @property
    def retained_norm(self) -> float:
        return math.sqrt(self.retained_norm_sq)

    @property
    def norm(self) -> float:
        """Total norm ``sqrt(retained^2 + tail^2)``."""
        return math.sqrt(self.retained_norm_sq + self.tail_bound ** 2)

    def is_zero(self) -> bool:
        return not np.any(self.flat)

    def with_tail(self, tail_bound: float) -> "BlockVector":
        return BlockVector.from_flat(self.dims, self.flat, tail_bound)

    def _check(self, other):
        if not isinstance(other, BlockVector) or other.dims != self.dims:
            raise ValidationError("block vectors have different layouts")

    def __add__(self, other):
        self._check(other)
        return BlockVector.from_flat(self.dims, self.flat + other.flat, self.tail_bound + other.tail_bound)

    def __sub__(self, other):
        self._check(other)
        return BlockVector.from_flat(self.dims, self.flat - other.flat, self.tail_bound + other.tail_bound)

    def __mul__(self, a):
        a = float(a)
        return BlockVector.from_flat(self.dims, a * self.flat, abs(a) * self.tail_bound)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __repr__(self):
        return f"BlockVector(dims={self.dims}, flat={self.flat.tolist()}, tail_bound={self.tail_bound})"


# ---------------------------------------------------------------------------
# control signals

class ControlSignal:
    """Block-valued control on ``[0, horizon]``, evaluated as flat arrays.

    Subclasses implement :meth:`sample`; ``breakpoints`` lists interior
    times where the signal may be non-smooth so that quadrature never
    straddles a jump.
    """

    size: int
    horizon: float
    breakpoints: tuple = ()

    def sample(self, ts) -> np.ndarray:
        raise NotImplementedError

    def sample_grid(self, grid: PanelGrid) -> np.ndarray:
        """Values at the grid nodes, shape ``(panels, nodes, size)``."""
        t = grid.times()
        return self.sample(t.ravel()).reshape(t.shape + (self.size,))

    def __call__(self, t: float) -> np.ndarray:
        return self.sample(np.array([float(t)]))[0]

    def __add__(self, other):
        return LinearCombination([(1.0, self), (1.0, other)])

    def __sub__(self, other):
        return LinearCombination([(1.0, self), (-1.0, other)])

    def __mul__(self, a):
        return LinearCombination([(float(a), self)])

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


class ZeroControl(ControlSignal):
    def __init__(self, size: int, horizon: float = math.inf):
        self.size = int(size)
        self.horizon = float(horizon)

    def sample(self, ts):
        return np.zeros((np.size(ts), self.size))


class PiecewiseConstantControl(ControlSignal):
    """Value ``values[k]`` on ``[times[k], times[k+1])``; ``times[0]`` must be 0."""

    def __init__(self, times, values):
        times = np.asarray(times, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if times.ndim != 1 or times.size < 2 or times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise ValidationError("piecewise grid must start at 0 and increase strictly")
        if values.ndim != 2 or values.shape[0] != times.size - 1:
            raise ValidationError("need one value row per grid interval")
        if not np.all(np.isfinite(values)):
            raise ValidationError("control values must be finite")
        self.times = times
        self.values = values
        self.size = values.shape[1]
        self.horizon = float(times[-1])
        self.breakpoints = tuple(times[1:-1].tolist())

    def sample(self, ts):
        ts = np.asarray(ts, dtype=np.float64)
        k = np.clip(np.searchsorted(self.times, ts, side="right") - 1, 0, self.values.shape[0] - 1)
        return self.values[k]

    def exact_energy(self) -> float:
        return float(np.sum(np.diff(self.times) * np.einsum("ki,ki->k", self.values, self.values)))


CLOSED_FORMS = ("constant", "exponential", "sinusoid")


class ClosedFormControl(ControlSignal):
    """``value * f(t)`` for a named scalar profile ``f``.

    ``constant``: ``f = 1``; ``exponential``: ``f = exp(rate*t)``;
    ``sinusoid``: ``f = sin(2*pi*frequency*t + phase)``.
    """

    def __init__(self, expression: str, value, horizon: float, **params):
        if expression not in CLOSED_FORMS:
            raise ValidationError(f"unknown closed-form expression {expression!r}")
        value = np.asarray(value, dtype=np.float64)
        if value.ndim != 1 or not np.all(np.isfinite(value)):
            raise ValidationError("closed-form value must be a finite flat vector")
        self.expression = expression
        self.value = value
        self.params = {k: float(v) for k, v in params.items()}
        self.size = value.size
        self.horizon = float(horizon)

    def profile(self, ts):
        ts = np.asarray(ts, dtype=np.float64)
        if self.expression == "constant":
            return np.ones_like(ts)
        if self.expression == "exponential":
            return np.exp(self.params.get("rate", 0.0) * ts)
        f = self.params.get("frequency", 1.0)
        return np.sin(2.0 * math.pi * f * ts + self.params.get("phase", 0.0))

    def sample(self, ts):
        return self.profile(ts)[:, None] * self.value[None, :]


class FunctionControl(ControlSignal):
    """Wrap ``fn(ts) -> (len(ts), size)``."""

    def __init__(self, fn, size: int, horizon: float, breakpoints=()):
        self.fn = fn
        self.size = int(size)
        self.horizon = float(horizon)
        self.breakpoints = tuple(breakpoints)

    def sample(self, ts):
        return np.asarray(self.fn(np.asarray(ts, dtype=np.float64)), dtype=np.float64).reshape(np.size(ts), self.size)


class LinearCombination(ControlSignal):
    def __init__(self, terms):
        flat = []
        for c, s in terms:
            if isinstance(s, LinearCombination):
                flat.extend((c * c2, s2) for c2, s2 in s.terms)
            else:
                flat.append((float(c), s))
        sizes = {s.size for _, s in flat}
        if len(sizes) != 1:
            raise ValidationError("cannot combine signals of different sizes")
        self.terms = flat
        self.size = sizes.pop()
        self.horizon = min(s.horizon for _, s in flat)
        self.breakpoints = tuple(sorted({b for _, s in flat for b in s.breakpoints}))

    def sample(self, ts):
        out = np.zeros((np.size(ts), self.size))
        for c, s in self.terms:
            out += c * s.sample(ts)
        return out

    def sample_grid(self, grid):
        out = np.zeros((grid.panels, grid.xi.size, self.size))
        for c, s in self.terms:
            out += c * s.sample_grid(grid)
        return out


def _segments(start: float, end: float, breakpoints) -> list[tuple[float, float]]:
    knots = [start] + [b for b in breakpoints if start < b < end] + [end]
    return list(zip(knots[:-1], knots[1:]))


def _check_time(w: ControlSignal, t_start: float, t: float):
    slack = 1e-12 * max(1.0, abs(t))
    if not (math.isfinite(t) and math.isfinite(t_start)):
        raise InvalidHorizon("times must be finite")
    if t < t_start or t_start < -slack or t > w.horizon + slack:
        raise InvalidHorizon(f"time {t} outside [{t_start}, {w.horizon}]")


# ---------------------------------------------------------------------------
# trajectories

def propagate(sys: BlockSystem, x0: BlockVector, w: ControlSignal | None, t: float,
              q: QuadratureSpec = DEFAULT_QUADRATURE, *, t_start: float = 0.0,
              tail_decay: float = 0.0) -> BlockVector:
    """State at time ``t`` by the variation-of-constants formula.

    ``x0`` is the state at ``t_start`` (default 0).  Each block is advanced
    as ``e^{(t-t0)A_i} x_i + int e^{(t-s)A_i} w_i(s) ds`` with composite
    Gauss-Legendre quadrature, split at the signal's breakpoints.  The tail
    bound decays as ``exp(-tail_decay * (t - t0))``.
    """
    sys.check_vector(x0)
    t, t_start = float(t), float(t_start)
    if w is None:
        w = ZeroControl(sys.size)
    if w.size != sys.size:
        raise ValidationError(f"control size {w.size} does not match state size {sys.size}")
    _check_time(w, t_start, t)
    tail = x0.tail_bound * math.exp(-tail_decay * (t - t_start))
    if t == t_start:
        return x0.with_tail(tail)
    if isinstance(w, ZeroControl):
        return BlockVector.from_flat(sys.dims, _free_flow(sys, x0.flat, t - t_start), tail)
    x = np.array(x0.flat)
    for a, b in _segments(t_start, t, w.breakpoints):
        grid = q.grid(a, b)
        wv = w.sample_grid(grid)
        new = np.empty_like(x)
        for g in sys.groups:
            forcing = np.ascontiguousarray(np.transpose(wv[:, :, g.cols], (2, 0, 1, 3)))
            new[g.cols] = kernels.propagate_stack(g.stack, x[g.cols], forcing, grid.h, grid.xi, grid.wq)
        x = new
    return BlockVector.from_flat(sys.dims, x, tail)


def _free_flow(sys: BlockSystem, flat: np.ndarray, dt: float) -> np.ndarray:
    out = np.empty_like(flat)
    for g in sys.groups:
        e = kernels.expm_stack(g.stack, np.full(len(g.index), dt))
        out[g.cols] = np.einsum("nab,nb->na", e, flat[g.cols])
    return out


def trajectory(sys: BlockSystem, x0: BlockVector, w: ControlSignal | None, times,
               q: QuadratureSpec = DEFAULT_QUADRATURE, tail_decay: float = 0.0) -> list[BlockVector]:
    """States at increasing ``times`` (first entry may be 0), advanced step by step."""
    times = [float(t) for t in times]
    if any(b < a for a, b in zip(times, times[1:])) or (times and times[0] < 0):
        raise InvalidHorizon("sample times must be non-negative and non-decreasing")
    out, x, t_prev = [], x0, 0.0
    for t in times:
        x = propagate(sys, x, w, t, q, t_start=t_prev, tail_decay=tail_decay)
        out.append(x)
        t_prev = t
    return out


def free_decay(sys: BlockSystem, x0: BlockVector, t_grid) -> list[tuple[float, float]]:
    """Total norm of the uncontrolled solution on ``t_grid``."""
    sys.check_vector(x0)
    out = []
    for t in t_grid:
        x = _free_flow(sys, x0.flat, float(t))
        out.append((float(t), math.sqrt(float(np.dot(x, x)) + x0.tail_bound ** 2)))
    return out


# ---------------------------------------------------------------------------
# energy

def l2_energy(w: ControlSignal, q: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """``sum_i int_0^T ||w_i(s)||^2 ds`` over the signal's horizon."""
    if isinstance(w, ZeroControl):
        return 0.0
    if isinstance(w, PiecewiseConstantControl):
        return w.exact_energy()
    if not math.isfinite(w.horizon):
        raise InvalidHorizon("energy needs a finite horizon")
    if w.horizon == 0.0:
        return 0.0
    total = 0.0
    for a, b in _segments(0.0, w.horizon, w.breakpoints):
        grid = q.grid(a, b)
        vals = w.sample_grid(grid)
        total += float(np.einsum("pj,pjn,pjn->", grid.weights(), vals, vals))
    return total


def is_admissible(w: ControlSignal, bound: float, q: QuadratureSpec = DEFAULT_QUADRATURE) -> bool:
    """Membership of ``w`` in the energy ball of radius ``bound``."""
    if not bound > 0:
        raise ValidationError("bound must be positive")
    return l2_energy(w, q) <= bound * bound + ADMISSIBILITY_SLACK
