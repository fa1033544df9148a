"""Scenario files: JSON schema, validation and deterministic generation."""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import jsonschema
import numpy as np

from l2game.blockcore import BlockMatrix
from l2game.errors import DivergentTail, ValidationError
from l2game.system import D_MAX, BlockSystem, BlockVector, QuadratureSpec, validate_blocks

SCENARIO_VERSION = 1

_number = {"type": "number"}
SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["version", "blocks", "x0", "constraint"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": SCENARIO_VERSION},
        "blocks": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["dim", "rows"],
                "additionalProperties": False,
                "properties": {
                    "dim": {"type": "integer", "minimum": 1},
                    "rows": {"type": "array", "items": {"type": "array", "items": _number}},
                },
            },
        },
        "x0": {"type": "array", "items": {"type": "array", "items": _number}},
        "tail_bound": {"type": "number", "minimum": 0},
        "tail_decay": {"type": "number", "minimum": 0},
        "constraint": {
            "oneOf": [
                {"type": "object", "required": ["theta"], "additionalProperties": False,
                 "properties": {"theta": {"type": "number", "exclusiveMinimum": 0}}},
                {"type": "object", "required": ["rho", "sigma"], "additionalProperties": False,
                 "properties": {"rho": {"type": "number", "exclusiveMinimum": 0},
                                "sigma": {"type": "number", "minimum": 0}}},
            ]
        },
        "quadrature": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "panels_per_unit_time": {"type": "integer", "minimum": 1},
                "nodes": {"type": "integer", "minimum": 1, "maximum": 32},
            },
        },
        "seed": {"type": ["integer", "null"]},
    },
}


class ScenarioError(ValidationError):
    """Invalid scenario; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class Scenario:
    blocks: list[np.ndarray]
    x0: list[np.ndarray]
    theta: float | None = None
    rho: float | None = None
    sigma: float | None = None
    tail_bound: float = 0.0
    tail_decay: float = 0.0
    quadrature: QuadratureSpec = field(default_factory=QuadratureSpec)
    seed: int | None = None
    allow_dim1: bool = False
    version: int = SCENARIO_VERSION

    @property
    def kind(self) -> str:
        return "theta" if self.theta is not None else "game"

    @cached_property
    def system(self) -> BlockSystem:
        return BlockSystem(self.blocks, allow_dim1=self.allow_dim1)

    @cached_property
    def initial_state(self) -> BlockVector:
        return BlockVector(self.x0, self.tail_bound)

    def game_config(self):
        from l2game.game import GameConfig

        if self.rho is None:
            raise ValidationError("scenario has a theta constraint; pursuit needs rho and sigma")
        return GameConfig(self.system, self.initial_state, self.rho, self.sigma)

    def to_dict(self) -> dict:
        constraint = {"theta": self.theta} if self.theta is not None else {"rho": self.rho, "sigma": self.sigma}
        return {
            "version": self.version,
            "blocks": [{"dim": int(b.shape[0]), "rows": b.tolist()} for b in self.blocks],
            "x0": [np.asarray(p).tolist() for p in self.x0],
            "tail_bound": self.tail_bound,
            "tail_decay": self.tail_decay,
            "constraint": constraint,
            "quadrature": {"panels_per_unit_time": self.quadrature.panels_per_unit_time,
                           "nodes": self.quadrature.nodes},
            "seed": self.seed,
        }

    def to_json(self) -> str:
        # json emits shortest round-trip reprs, so parsing is lossless
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def write(self, path):
        atomic_write(path, self.to_json())


def atomic_write(path, text: str):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def scenario_from_dict(data, allow_dim1: bool = False, d_max: int = D_MAX) -> Scenario:
    """Validate a decoded JSON document, collecting every error before raising."""
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    errors = []
    for err in sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path)):
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        errors.append(f"{where}: {err.message}")
    if errors:
        raise ScenarioError(errors)

    blocks = []
    for i, b in enumerate(data["blocks"]):
        rows, d = b["rows"], b["dim"]
        if len(rows) != d or any(len(r) != d for r in rows):
            errors.append(f"block {i}: rows do not form a {d}x{d} matrix")
            blocks.append(None)
            continue
        a = np.array(rows, dtype=np.float64)
        if not np.all(np.isfinite(a)):
            errors.append(f"block {i}: entries must be finite")
            blocks.append(None)
            continue
        blocks.append(a)
    valid = [(i, BlockMatrix(a)) for i, a in enumerate(blocks) if a is not None]
    for i, bm in valid:
        for msg in validate_blocks([bm], d_max, allow_dim1):
            errors.append(msg.replace("block 0", f"block {i}", 1))
    x0 = data["x0"]
    if len(x0) != len(blocks):
        errors.append(f"x0 has {len(x0)} blocks but the system has {len(blocks)}")
    else:
        for i, (p, b) in enumerate(zip(x0, data["blocks"])):
            if len(p) != b["dim"]:
                errors.append(f"x0 block {i}: length {len(p)} does not match dim {b['dim']}")
    c = data["constraint"]
    if "rho" in c and not c["rho"] > c["sigma"]:
        errors.append(f"constraint: rho={c['rho']} must exceed sigma={c['sigma']}")
    if errors:
        raise ScenarioError(errors)
    quad = data.get("quadrature", {})
    return Scenario(
        blocks=blocks,
        x0=[np.array(p, dtype=np.float64) for p in x0],
        theta=c.get("theta"),
        rho=c.get("rho"),
        sigma=c.get("sigma"),
        tail_bound=float(data.get("tail_bound", 0.0)),
        tail_decay=float(data.get("tail_decay", 0.0)),
        quadrature=QuadratureSpec(quad.get("panels_per_unit_time", 32), quad.get("nodes", 8)),
        seed=data.get("seed"),
        allow_dim1=allow_dim1,
    )


def parse_scenario(path, allow_dim1: bool = False, d_max: int = D_MAX) -> Scenario:
    """Read and validate a scenario file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError([f"cannot read {path}: {exc}"]) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"malformed JSON: {exc}"]) from exc
    return scenario_from_dict(data, allow_dim1, d_max)


def _random_block(rng, d, lo, hi):
    """Block with all eigenvalue real parts in ``[lo, hi]``, similarity condition <= 4."""
    core = np.zeros((d, d))
    k = 0
    while k < d:
        re = rng.uniform(lo, hi)
        if k + 1 < d and rng.random() < 0.5:
            im = rng.uniform(0.1, 2.0)
            core[k:k + 2, k:k + 2] = [[re, im], [-im, re]]
            k += 2
        else:
            core[k, k] = re
            k += 1
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    scales = rng.uniform(0.5, 2.0, size=d)
    p = q * scales
    return p @ core @ np.linalg.inv(p)


def tail_bound_for(n_blocks: int, p: float) -> float:
    """``(sum_{i>N} i^{-2p})^{1/2} <= (N^{1-2p} / (2p-1))^{1/2}``."""
    return math.sqrt(n_blocks ** (1.0 - 2.0 * p) / (2.0 * p - 1.0))


def generate_scenario(n_blocks: int, dim_range=(2, 4), abscissa_range=(-3.0, -0.3),
                      decay_exponent: float = 1.0, seed: int = 0, constraint: str = "theta",
                      theta_factor: float = 0.5, rho_factor: float = 1.0, sigma_factor: float = 0.5,
                      quadrature: QuadratureSpec | None = None) -> Scenario:
    """Deterministic random scenario with ``||x_{i0}|| = i^{-p}``.

    Budgets are multiples of the retained initial norm: ``theta =
    theta_factor * ||x0||`` or ``rho = rho_factor * ||x0||``,
    ``sigma = sigma_factor * rho``.
    """
    p = float(decay_exponent)
    if not p > 0.5:
        raise DivergentTail(f"decay exponent {p} <= 1/2 gives a divergent tail")
    lo, hi = map(float, abscissa_range)
    if not lo <= hi < 0.0:
        raise ValidationError("abscissa range must lie in (-inf, 0)")
    dlo, dhi = map(int, dim_range)
    if not 1 <= dlo <= dhi <= D_MAX:
        raise ValidationError(f"dimension range must lie in [1, {D_MAX}]")
    if n_blocks < 1:
        raise ValidationError("need at least one block")
    rng = np.random.default_rng(seed)
    blocks, x0 = [], []
    for i in range(1, n_blocks + 1):
        d = int(rng.integers(dlo, dhi + 1))
        blocks.append(_random_block(rng, d, lo, hi))
        v = rng.standard_normal(d)
        x0.append(v / np.linalg.norm(v) * i ** (-p))
    norm = math.sqrt(sum(float(np.dot(v, v)) for v in x0))
    kw = {}
    if constraint == "theta":
        kw["theta"] = theta_factor * norm
    elif constraint == "game":
        kw["rho"] = rho_factor * norm
        kw["sigma"] = sigma_factor * kw["rho"]
    else:
        raise ValidationError("constraint must be 'theta' or 'game'")
    return Scenario(blocks=blocks, x0=x0, tail_bound=tail_bound_for(n_blocks, p),
                    quadrature=quadrature or QuadratureSpec(), seed=seed,
                    allow_dim1=dlo == 1, **kw)
