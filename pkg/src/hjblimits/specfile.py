"""Problem and certificate spec files.

A spec is YAML (or JSON, which YAML parses) naming either a built-in problem::

    builtin: lqr-1d
    params: {Q: 1.0, R: 1.0}

or a custom one whose dynamics and Lagrangian are closed-form expressions in
``x1..xn``, ``a1..am`` and ``pi`` using ``+ - * /``, ``abs``, ``min``,
``max``, ``sin``, ``cos`` and ``pow``::

    dimension: 1
    control_set: {kind: compact-box, bounds: [[-1, 1]]}
    growth: {p: 1, q: 1, M: 1}
    dynamics: ["a1"]
    lagrangian: "x1*x1"
    target_set: {kind: point, center: [0]}

Errors are collected as ``(location, message)`` diagnostics where location
is ``line N, field a.b[0]``.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, replace

import jsonschema
import numpy as np
import yaml

from .certificates import Certificate
from .errors import SpecError
from .problem import (BUILTIN_NAMES, ControlProblem, ControlSetDescriptor, GrowthData, TargetSet,
                      builtin)

_FUNCS = {
    "abs": (1, 1, np.abs),
    "sin": (1, 1, np.sin),
    "cos": (1, 1, np.cos),
    "pow": (2, 2, np.power),
    "min": (2, None, np.minimum),
    "max": (2, None, np.maximum),
}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide}

_NUM = {"type": "number"}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}
_EXPR = {"type": ["string", "number"]}

PROBLEM_SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "builtin": {"enum": list(BUILTIN_NAMES)},
        "params": {"type": "object"},
        "dimension": {"type": "integer", "minimum": 1},
        "control_set": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["compact-box", "compact-finite", "cone"]},
                "dimension": {"type": "integer", "minimum": 1},
                "bounds": {"type": "array", "items": {"type": "array", "items": _NUM,
                                                      "minItems": 2, "maxItems": 2}},
                "points": {"type": "array", "items": {"type": ["array", "number"]}},
                "cone": {"enum": ["full", "nonnegative"]},
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
        "growth": {
            "type": "object",
            "properties": {"p": {"type": "integer", "minimum": 1}, "q": {"type": "integer", "minimum": 1},
                           "M": {"type": "number", "exclusiveMinimum": 0}, "C1": {"type": "number", "minimum": 0},
                           "C2": {"type": "number", "minimum": 0}, "modulus": {"type": "string"}},
            "additionalProperties": False,
        },
        "dynamics": {"type": "array", "items": _EXPR, "minItems": 1},
        "lagrangian": _EXPR,
        "recessions": {
            "type": "object",
            "properties": {"dynamics": {"type": "array", "items": _EXPR}, "lagrangian": _EXPR},
            "additionalProperties": False,
        },
        "target_set": {
            "type": "object",
            "properties": {"kind": {"enum": ["point", "ball", "box"]}, "center": _VEC,
                           "radius": {"type": "number", "minimum": 0}, "lo": _VEC, "hi": _VEC},
            "required": ["kind"],
            "additionalProperties": False,
        },
        "periods": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "controllability": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "grid": {
            "type": "object",
            "properties": {"lo": _VEC, "hi": _VEC, "counts": {"type": "array", "items": {"type": "integer",
                                                                                         "minimum": 2}}},
            "required": ["lo", "hi", "counts"],
            "additionalProperties": False,
        },
    },
    "oneOf": [
        {"required": ["builtin"]},
        {"required": ["dimension", "control_set", "dynamics", "lagrangian"]},
    ],
    "additionalProperties": False,
}

CERTIFICATE_SCHEMA = {
    "type": "object",
    "properties": {
        "check": {"enum": ["mrf", "sc1", "sc2"]},
        "U": _EXPR,
        "gradient": {"type": "array", "items": _EXPR, "minItems": 1},
        "k": {"type": "number", "minimum": 0},
        "m": _EXPR,
        "c1": _EXPR,
        "radius_map": _EXPR,
        "region": {"type": "object", "properties": {"lo": _VEC, "hi": _VEC}, "required": ["lo", "hi"],
                   "additionalProperties": False},
        "samples": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "target_set": PROBLEM_SCHEMA["properties"]["target_set"],
    },
    "required": ["check", "region"],
    "allOf": [
        {"if": {"properties": {"check": {"enum": ["mrf", "sc1"]}}},
         "then": {"required": ["U", "gradient"]}},
        {"if": {"properties": {"check": {"const": "mrf"}}}, "then": {"required": ["k"]}},
        {"if": {"properties": {"check": {"const": "sc1"}}}, "then": {"required": ["m"]}},
        {"if": {"properties": {"check": {"const": "sc2"}}}, "then": {"required": ["c1"]}},
    ],
    "additionalProperties": False,
}


# --- expressions ------------------------------------------------------------


class Expression:
    """Compiled arithmetic expression, evaluated elementwise with numpy."""

    def __init__(self, text, variables):
        self.text = str(text)
        self.variables = tuple(variables)
        try:
            tree = ast.parse(self.text, mode="eval")
        except SyntaxError as exc:
            raise ValueError(f"cannot parse {self.text!r}: {exc.msg}") from None
        self._check(tree.body)
        self.tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ValueError(f"operator {type(node.op).__name__} not allowed (use pow for powers)")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise ValueError(f"unary {type(node.op).__name__} not allowed")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords:
                raise ValueError(f"unknown function in {ast.unparse(node)!r}; allowed: {sorted(_FUNCS)}")
            lo, hi, _ = _FUNCS[node.func.id]
            if len(node.args) < lo or (hi is not None and len(node.args) > hi):
                raise ValueError(f"{node.func.id} takes {lo}{'' if hi == lo else '+'} arguments")
            for a in node.args:
                self._check(a)
        elif isinstance(node, ast.Name):
            if node.id != "pi" and node.id not in self.variables:
                raise ValueError(f"unknown name {node.id!r}; allowed: {list(self.variables) + ['pi']}")
        elif isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ValueError(f"constant {node.value!r} is not a number")
        else:
            raise ValueError(f"syntax {type(node).__name__} not allowed")

    def _eval(self, node, env):
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Call):
            fn = _FUNCS[node.func.id][2]
            args = [self._eval(a, env) for a in node.args]
            out = args[0]
            if node.func.id in ("min", "max"):
                for a in args[1:]:
                    out = fn(out, a)
                return out
            return fn(*args)
        if isinstance(node, ast.Name):
            return math.pi if node.id == "pi" else env[node.id]
        return float(node.value)

    def __call__(self, **env):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.asarray(self._eval(self.tree, env), dtype=float)


def parse_number(text):
    """A constant expression such as ``2*pi``."""
    return float(Expression(text, ())())


def _env(x, a, n, m):
    x = np.asarray(x, dtype=float)
    env = {f"x{i + 1}": x[..., i] for i in range(n)}
    if a is not None:
        a = np.asarray(a, dtype=float)
        env.update({f"a{j + 1}": a[..., j] for j in range(m)})
    return env


def _shape(x, a):
    return np.broadcast_shapes(np.shape(x)[:-1], np.shape(a)[:-1])


def vector_evaluator(exprs, n, m):
    def f(x, a):
        shape = _shape(x, a)
        env = _env(x, a, n, m)
        return np.stack([np.broadcast_to(e(**env), shape) for e in exprs], axis=-1)
    return f


def scalar_evaluator(expr, n, m):
    def l(x, a):
        return np.broadcast_to(expr(**_env(x, a, n, m)), _shape(x, a)).copy()
    return l


def state_evaluator(expr, n):
    def g(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(expr(**_env(x, None, n, 0)), np.shape(x)[:-1]).copy()
    return g


# --- loading ----------------------------------------------------------------


@dataclass
class ProblemSpec:
    problem: ControlProblem
    raw: dict
    grid: dict | None
    source: str


def _line_index(text):
    """Map field paths to 1-based YAML line numbers."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    index = {}

    def walk(node, path):
        index[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                walk(v, path + (k.value,))
                index.setdefault(path + (k.value,), k.start_mark.line + 1)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    if root is not None:
        walk(root, ())
    return index


def _fmt_path(path):
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def _where(index, path):
    path = tuple(path)
    while path and path not in index:
        path = path[:-1]
    line = index.get(path)
    field = _fmt_path(path)
    return f"line {line}, field {field}" if line else f"field {field}"


def _load(text, schema, what):
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f"line {mark.line + 1}" if mark else "<document>"
        raise SpecError(f"malformed {what}", [(loc, str(getattr(exc, "problem", exc)))]) from None
    if not isinstance(raw, dict):
        raise SpecError(f"malformed {what}", [("<document>", "top level must be a mapping")])
    index = _line_index(text)
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        diags = [(_where(index, e.absolute_path), e.message) for e in errors]
        raise SpecError(f"{what} does not match the schema", diags)
    return raw, index


def _target(spec, n):
    kind = spec["kind"]
    if kind == "point":
        return TargetSet.point(spec.get("center", [0.0] * n))
    if kind == "ball":
        return TargetSet.ball(spec.get("center", [0.0] * n), spec.get("radius", 0.0))
    return TargetSet.box(spec["lo"], spec["hi"])


def load_problem_spec(text: str, source="<string>") -> ProblemSpec:
    raw, index = _load(text, PROBLEM_SCHEMA, "problem spec")
    diags = []
    if "builtin" in raw:
        try:
            problem = builtin(raw["builtin"], **raw.get("params", {}))
        except (TypeError, ValueError) as exc:
            raise SpecError("bad built-in parameters", [(_where(index, ("params",)), str(exc))]) from None
        if "target_set" in raw:
            problem = replace(problem, target=_target(raw["target_set"], problem.n))
        return ProblemSpec(problem, raw, raw.get("grid"), source)

    n = raw["dimension"]
    cs_raw = raw["control_set"]
    try:
        if cs_raw["kind"] == "compact-box":
            cs = ControlSetDescriptor.box(cs_raw["bounds"])
        elif cs_raw["kind"] == "compact-finite":
            cs = ControlSetDescriptor.finite(cs_raw["points"])
        else:
            cs = ControlSetDescriptor.conic(cs_raw.get("dimension", 1), cs_raw.get("cone", "full"))
    except (KeyError, ValueError) as exc:
        raise SpecError("bad control set", [(_where(index, ("control_set",)), str(exc))]) from None
    m = cs.dimension
    names = [f"x{i + 1}" for i in range(n)] + [f"a{j + 1}" for j in range(m)]

    def compile_(expr, path):
        try:
            return Expression(expr, names)
        except ValueError as exc:
            diags.append((_where(index, path), str(exc)))
            return None

    dyn = [compile_(e, ("dynamics", i)) for i, e in enumerate(raw["dynamics"])]
    if len(raw["dynamics"]) != n:
        diags.append((_where(index, ("dynamics",)), f"need {n} components, got {len(raw['dynamics'])}"))
    lag = compile_(raw["lagrangian"], ("lagrangian",))
    rec = raw.get("recessions", {})
    f_rec = [compile_(e, ("recessions", "dynamics", i)) for i, e in enumerate(rec.get("dynamics", []))]
    l_rec = compile_(rec["lagrangian"], ("recessions", "lagrangian")) if "lagrangian" in rec else None
    if rec.get("dynamics") is not None and len(rec["dynamics"]) != n:
        diags.append((_where(index, ("recessions", "dynamics")), f"need {n} components"))
    if "periods" in raw and len(raw["periods"]) != n:
        diags.append((_where(index, ("periods",)), f"need {n} periods"))
    if diags:
        raise SpecError("invalid problem spec", diags)
    try:
        growth = GrowthData(**raw.get("growth", {}))
        problem = ControlProblem(
            n=n, f=vector_evaluator(dyn, n, m), l=scalar_evaluator(lag, n, m), control_set=cs, growth=growth,
            f_recession=vector_evaluator(f_rec, n, m) if f_rec else None,
            l_recession=scalar_evaluator(l_rec, n, m) if l_rec else None,
            target=_target(raw["target_set"], n) if "target_set" in raw else None,
            periods=tuple(raw["periods"]) if "periods" in raw else None,
            controllability=tuple(raw["controllability"]) if "controllability" in raw else None,
            name=raw.get("name", "custom"),
        )
    except ValueError as exc:
        raise SpecError("invalid problem spec", [(_where(index, ("growth",)), str(exc))]) from None
    return ProblemSpec(problem, raw, raw.get("grid"), source)


def load_problem_file(path) -> ProblemSpec:
    with open(path, encoding="utf-8") as fh:
        return load_problem_spec(fh.read(), str(path))


@dataclass
class CertificateSpec:
    check: str
    raw: dict
    certificate: object
    rate: object
    radius_map: object
    target: TargetSet | None


def load_certificate_spec(text: str, n: int) -> CertificateSpec:
    raw, index = _load(text, CERTIFICATE_SCHEMA, "certificate spec")
    names = [f"x{i + 1}" for i in range(n)]
    diags = []

    def compile_(expr, path, variables):
        try:
            return Expression(expr, variables)
        except ValueError as exc:
            diags.append((_where(index, path), str(exc)))
            return None

    U = grad = rate = rmap = None
    if "U" in raw:
        U = compile_(raw["U"], ("U",), names)
    if "gradient" in raw:
        if len(raw["gradient"]) != n:
            diags.append((_where(index, ("gradient",)), f"need {n} components"))
        grad = [compile_(e, ("gradient", i), names) for i, e in enumerate(raw["gradient"])]
    for key in ("m", "c1"):
        if key in raw:
            rate = compile_(raw[key], (key,), ["r"])
    if "radius_map" in raw:
        rmap = compile_(raw["radius_map"], ("radius_map",), ["u"])
    for key in ("lo", "hi"):
        if len(raw["region"][key]) != n:
            diags.append((_where(index, ("region", key)), f"need {n} components"))
    if diags:
        raise SpecError("invalid certificate spec", diags)
    cert = None
    if U is not None and grad is not None:
        cert = Certificate(state_evaluator(U, n),
                           lambda x: np.stack([state_evaluator(g, n)(x) for g in grad], axis=-1))
    rate_fn = (lambda r: np.broadcast_to(rate(r=np.asarray(r, dtype=float)), np.shape(r))) if rate else None
    rmap_fn = (lambda u: np.broadcast_to(rmap(u=np.asarray(u, dtype=float)), np.shape(u))) if rmap else None
    target = _target(raw["target_set"], n) if "target_set" in raw else None
    return CertificateSpec(raw["check"], raw, cert, rate_fn, rmap_fn, target)
