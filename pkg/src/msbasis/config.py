"""Experiment configuration: key=value text files and forcing expressions.

The format is UTF-8 lines of ``key=value`` with optional ``[coefficient]``,
``[forcing]`` and ``[inclusions]`` sections; ``#`` starts a comment and
blank lines are ignored.  Unknown keys are rejected.  Forcing expressions
use a small arithmetic grammar: ``+ - * /``, ``sin``, ``cos``, ``exp``,
numeric constants and the variables ``x`` and ``y``.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field

import numpy as np

from .coefficient import (
    CoefficientField,
    Inclusion,
    constant_field,
    high_contrast_field,
    multiscale_field,
    random_field,
)
from .mesh import TwoLevelMesh


class ConfigError(ValueError):
    """Malformed configuration; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class CoefficientSpec:
    kind: str = "constant"
    c: float = 1.0
    grid_n: int = 128
    seed: int = 0
    inclusions: list[Inclusion] | None = None


@dataclass
class ExperimentConfig:
    config_id: str = "config"
    Nc: int = 4
    Nf: int = 32
    epsilon: float | str = "H"
    interp_kind: str = "optimal"
    include_edge_basis: bool = True
    threads: int = 1
    out: str = "."
    solver_tol: float = 1e-10
    coefficient: CoefficientSpec = field(default_factory=CoefficientSpec)
    forcing: str = "one"

    def resolve_epsilon(self) -> float:
        return 1.0 / self.Nc if self.epsilon == "H" else float(self.epsilon)


_TOP_KEYS = {"Nc", "Nf", "epsilon", "interp_kind", "include_edge_basis",
             "threads", "out", "solver_tol"}
_COEFF_KEYS = {"kind", "c", "grid_n", "seed"}
_COEFF_KINDS = {"constant", "multiscale", "random", "high_contrast"}
_FORCING_KEYS = {"expr"}


def _parse_bool(value: str, line: int) -> bool:
    low = value.strip().lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}", line)


def parse_config(text: str, config_id: str = "config") -> ExperimentConfig:
    cfg = ExperimentConfig(config_id=config_id)
    inclusions: list[Inclusion] = []
    saw_inclusions = False
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in ("coefficient", "forcing", "inclusions"):
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if section == "inclusions":
            parts = line.split(",")
            if len(parts) != 5:
                raise ConfigError("inclusion rows need x0,y0,x1,y1,value", lineno)
            try:
                x0, y0, x1, y1, value = (float(p) for p in parts)
            except ValueError as exc:
                raise ConfigError(f"bad inclusion row: {exc}", lineno) from None
            if value <= 0:
                raise ConfigError("inclusion value must be positive", lineno)
            inclusions.append(Inclusion(x0, y0, x1, y1, value))
            saw_inclusions = True
            continue
        if "=" not in line:
            raise ConfigError("expected key=value", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            if section is None:
                if key not in _TOP_KEYS:
                    raise ConfigError(f"unknown key {key!r}", lineno)
                if key in ("Nc", "Nf", "threads"):
                    setattr(cfg, key, int(value))
                elif key == "epsilon":
                    cfg.epsilon = "H" if value == "H" else float(value)
                elif key == "interp_kind":
                    if value not in ("linear", "optimal"):
                        raise ConfigError(f"interp_kind must be linear or optimal, got {value!r}", lineno)
                    cfg.interp_kind = value
                elif key == "include_edge_basis":
                    cfg.include_edge_basis = _parse_bool(value, lineno)
                elif key == "out":
                    cfg.out = value
                elif key == "solver_tol":
                    cfg.solver_tol = float(value)
            elif section == "coefficient":
                if key not in _COEFF_KEYS:
                    raise ConfigError(f"unknown coefficient key {key!r}", lineno)
                if key == "kind":
                    if value not in _COEFF_KINDS:
                        raise ConfigError(f"unknown coefficient kind {value!r}", lineno)
                    cfg.coefficient.kind = value
                elif key == "c":
                    cfg.coefficient.c = float(value)
                elif key == "grid_n":
                    cfg.coefficient.grid_n = int(value)
                elif key == "seed":
                    cfg.coefficient.seed = int(value)
            elif section == "forcing":
                if key not in _FORCING_KEYS:
                    raise ConfigError(f"unknown forcing key {key!r}", lineno)
                compile_forcing(value)  # validate now, with a line number
                cfg.forcing = value
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno) from None

    if saw_inclusions:
        cfg.coefficient.inclusions = inclusions
    if cfg.Nc < 1:
        raise ConfigError("Nc must be >= 1")
    if cfg.Nf % cfg.Nc != 0:
        raise ConfigError(f"divisibility violated: Nf={cfg.Nf} is not a multiple of Nc={cfg.Nc}")
    if cfg.Nf // cfg.Nc < 2:
        raise ConfigError(f"too coarse: need Nf/Nc >= 2, got {cfg.Nf}/{cfg.Nc}")
    if cfg.epsilon != "H" and cfg.epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    if cfg.solver_tol <= 0:
        raise ConfigError("solver_tol must be positive")
    return cfg


def load_config(path) -> ExperimentConfig:
    from pathlib import Path

    p = Path(path)
    return parse_config(p.read_text(), config_id=p.stem)


# ---------------------------------------------------------------------- #
# forcing expressions
# ---------------------------------------------------------------------- #

_ALLOWED_CALLS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}


def _validate_expr(node: ast.AST):
    if isinstance(node, ast.Expression):
        return _validate_expr(node.body)
    if isinstance(node, ast.BinOp) and isinstance(node.op, (ast.Add, ast.Sub, ast.Mult, ast.Div)):
        _validate_expr(node.left)
        _validate_expr(node.right)
        return
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
        _validate_expr(node.operand)
        return
    if isinstance(node, ast.Call):
        if not (isinstance(node.func, ast.Name) and node.func.id in _ALLOWED_CALLS
                and not node.keywords and len(node.args) == 1):
            raise ConfigError(f"only {sorted(_ALLOWED_CALLS)} calls with one argument are allowed")
        _validate_expr(node.args[0])
        return
    if isinstance(node, ast.Name) and node.id in ("x", "y"):
        return
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return
    raise ConfigError(f"forbidden element {ast.dump(node)} in forcing expression")


def compile_forcing(expr: str):
    """Callable (x, y) -> values for a forcing expression or the token 'one'."""
    expr = expr.strip()
    if expr == "one":
        return lambda x, y: np.ones_like(np.asarray(x, dtype=float))
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse forcing expression: {exc.msg}") from None
    _validate_expr(tree)
    code = compile(tree, "<forcing>", "eval")

    def fn(x, y):
        scope = {"x": np.asarray(x, dtype=float), "y": np.asarray(y, dtype=float), **_ALLOWED_CALLS}
        out = eval(code, {"__builtins__": {}}, scope)
        return np.broadcast_to(np.asarray(out, dtype=float), np.asarray(x).shape).copy()

    return fn


def forcing_callable(spec: str):
    return compile_forcing(spec)


# ---------------------------------------------------------------------- #
# coefficient construction
# ---------------------------------------------------------------------- #

def build_coefficient(spec: CoefficientSpec, mesh: TwoLevelMesh,
                      seed_override: int | None = None) -> CoefficientField:
    if spec.kind == "constant":
        return constant_field(mesh, spec.c)
    if spec.kind == "multiscale":
        return multiscale_field(mesh)
    if spec.kind == "random":
        seed = spec.seed if seed_override is None else seed_override
        return random_field(mesh, spec.grid_n, seed)
    if spec.kind == "high_contrast":
        return high_contrast_field(mesh, spec.inclusions)
    raise ConfigError(f"unknown coefficient kind {spec.kind!r}")
