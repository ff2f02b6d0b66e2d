"""Hyper-parameter configuration spaces.

Candidate algorithms declare their tunable parameters as a restricted Python
dictionary literal: string keys mapping either to a two-tuple of numbers (a
range) or to a list of strings (categorical choices).  A range whose literals
carry a decimal point or exponent is a float range, otherwise an integer
range.  The exact grammar is documented in docs/configspace_grammar.ebnf.
"""

from __future__ import annotations

import ast
import json
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Tuple, Union

import numpy as np

log = logging.getLogger(__name__)

ConfigValue = Union[float, int, str]
ConfigAssignment = Dict[str, ConfigValue]


class SpaceSyntaxError(ValueError):
    """Raised when a configuration-space literal does not fit the grammar."""

    def __init__(self, position: Tuple[int, int], reason: str):
        self.position = position
        self.reason = reason
        super().__init__(f"line {position[0]}, col {position[1]}: {reason}")


@dataclass(frozen=True)
class FloatRange:
    lo: float
    hi: float


@dataclass(frozen=True)
class IntRange:
    lo: int
    hi: int


@dataclass(frozen=True)
class Categorical:
    choices: Tuple[str, ...]


ParamKind = Union[FloatRange, IntRange, Categorical]


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: ParamKind


@dataclass(frozen=True)
class ConfigSpace:
    """Ordered parameter declarations; order is preserved from the source
    text and fixes the serialization order of assignments."""

    params: Tuple[ParamSpec, ...] = ()

    def __post_init__(self):
        seen = set()
        for spec in self.params:
            if spec.name in seen:
                raise ValueError(f"duplicate parameter name: {spec.name!r}")
            seen.add(spec.name)
            kind = spec.kind
            if isinstance(kind, (FloatRange, IntRange)) and kind.lo > kind.hi:
                raise ValueError(f"empty range for {spec.name!r}: {kind}")
            if isinstance(kind, Categorical) and len(kind.choices) < 1:
                raise ValueError(f"no choices for {spec.name!r}")

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(p.name for p in self.params)

    @property
    def is_empty(self) -> bool:
        return not self.params

    def __len__(self) -> int:
        return len(self.params)

    def __iter__(self) -> Iterator[ParamSpec]:
        return iter(self.params)

    def __getitem__(self, name: str) -> ParamSpec:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)


def _pos(node: ast.AST) -> Tuple[int, int]:
    return (getattr(node, "lineno", 1), getattr(node, "col_offset", 0))


def _numeric_literal(node: ast.expr) -> Union[int, float]:
    """A bare or sign-prefixed int/float literal; anything else is rejected."""
    sign = 1
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        sign = -1 if isinstance(node.op, ast.USub) else 1
        node = node.operand
    if not isinstance(node, ast.Constant) or type(node.value) not in (int, float):
        raise SpaceSyntaxError(_pos(node), "expected a numeric literal")
    return sign * node.value


def parse_space(text: str) -> ConfigSpace:
    """Parse a configuration-space dictionary literal.

    Tolerates surrounding whitespace, newlines, trailing commas and ``#``
    comments.  ``{}`` is legal (a parameterless candidate) and yields an
    empty space with a warning.
    """
    if not text.strip():
        raise SpaceSyntaxError((1, 0), "empty configuration-space text")
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise SpaceSyntaxError((exc.lineno or 1, exc.offset or 0), exc.msg or "invalid syntax") from None
    root = tree.body
    if not isinstance(root, ast.Dict):
        raise SpaceSyntaxError(_pos(root), "configuration space must be a dictionary literal")

    specs: List[ParamSpec] = []
    names = set()
    for key_node, value_node in zip(root.keys, root.values):
        if key_node is None:
            raise SpaceSyntaxError(_pos(value_node), "dictionary unpacking is not allowed")
        if not isinstance(key_node, ast.Constant) or not isinstance(key_node.value, str):
            raise SpaceSyntaxError(_pos(key_node), "parameter names must be string literals")
        name = key_node.value
        if name in names:
            raise SpaceSyntaxError(_pos(key_node), f"duplicate parameter name: {name!r}")
        names.add(name)

        if isinstance(value_node, ast.Tuple):
            if len(value_node.elts) != 2:
                raise SpaceSyntaxError(
                    _pos(value_node),
                    f"a range must be a 2-tuple, got {len(value_node.elts)} elements",
                )
            lo = _numeric_literal(value_node.elts[0])
            hi = _numeric_literal(value_node.elts[1])
            if isinstance(lo, float) or isinstance(hi, float):
                kind: ParamKind = FloatRange(float(lo), float(hi))
            else:
                kind = IntRange(lo, hi)
            if kind.lo > kind.hi:
                raise SpaceSyntaxError(_pos(value_node), f"range lower bound exceeds upper bound for {name!r}")
        elif isinstance(value_node, ast.List):
            if not value_node.elts:
                raise SpaceSyntaxError(_pos(value_node), f"categorical {name!r} needs at least one choice")
            choices = []
            for elt in value_node.elts:
                if not isinstance(elt, ast.Constant) or not isinstance(elt.value, str):
                    raise SpaceSyntaxError(_pos(elt), "categorical choices must be string literals")
                choices.append(elt.value)
            kind = Categorical(tuple(choices))
        else:
            raise SpaceSyntaxError(
                _pos(value_node),
                "parameter values must be a 2-tuple of numbers or a list of strings",
            )
        specs.append(ParamSpec(name, kind))

    if not specs:
        log.warning("configuration space is empty (parameterless candidate)")
    return ConfigSpace(tuple(specs))


def sample(space: ConfigSpace, rng: np.random.Generator) -> ConfigAssignment:
    """Draw one uniform assignment; deterministic for a seeded generator."""
    values: ConfigAssignment = {}
    for spec in space.params:
        kind = spec.kind
        if isinstance(kind, FloatRange):
            values[spec.name] = float(rng.uniform(kind.lo, kind.hi))
        elif isinstance(kind, IntRange):
            values[spec.name] = int(rng.integers(kind.lo, kind.hi + 1))
        else:
            values[spec.name] = str(kind.choices[int(rng.integers(0, len(kind.choices)))])
    return values


def validate(assignment: ConfigAssignment, space: ConfigSpace) -> List[str]:
    """Return a list of violations; empty means the assignment is valid."""
    violations = []
    for spec in space.params:
        if spec.name not in assignment:
            violations.append(f"missing parameter: {spec.name!r}")
            continue
        value = assignment[spec.name]
        kind = spec.kind
        if isinstance(kind, FloatRange):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                violations.append(f"{spec.name!r}: expected a number, got {type(value).__name__}")
            elif not kind.lo <= float(value) <= kind.hi:
                violations.append(f"{spec.name!r}: {value!r} outside [{kind.lo!r}, {kind.hi!r}]")
        elif isinstance(kind, IntRange):
            if isinstance(value, bool) or not isinstance(value, int):
                violations.append(f"{spec.name!r}: expected an integer, got {type(value).__name__}")
            elif not kind.lo <= value <= kind.hi:
                violations.append(f"{spec.name!r}: {value!r} outside [{kind.lo!r}, {kind.hi!r}]")
        else:
            if value not in kind.choices:
                violations.append(f"{spec.name!r}: {value!r} not among choices {list(kind.choices)}")
    for name in assignment:
        if name not in space.names:
            violations.append(f"unknown parameter: {name!r}")
    return violations


def check_reserved(space: ConfigSpace, reserved: Iterable[str]) -> List[str]:
    """Reject parameter names that collide with constructor arguments the
    harness injects itself (e.g. ``budget``/``dim`` for the continuous
    benchmark)."""
    reserved = set(reserved)
    return [
        f"reserved parameter name: {spec.name!r}"
        for spec in space.params
        if spec.name in reserved
    ]


def _render_value(value: ConfigValue) -> str:
    if isinstance(value, bool):
        raise TypeError("boolean values are not part of the grammar")
    if isinstance(value, (int, float)):
        return repr(value)
    return json.dumps(value)


def serialize_assignment(assignment: ConfigAssignment, space: ConfigSpace) -> str:
    """Render an assignment as a dictionary literal in the space's parameter
    order.  Floats use repr so the text round-trips exactly; the output is
    simultaneously a valid Python literal and valid JSON."""
    parts = [f"{json.dumps(spec.name)}: {_render_value(assignment[spec.name])}" for spec in space.params]
    return "{" + ", ".join(parts) + "}"


def parse_assignment(text: str) -> ConfigAssignment:
    """Read back a serialized assignment (value-literal reader)."""
    if not text.strip():
        return {}
    value = ast.literal_eval(text.strip())
    if not isinstance(value, dict):
        raise ValueError("assignment text must be a dictionary literal")
    out: ConfigAssignment = {}
    for k, v in value.items():
        if not isinstance(k, str):
            raise ValueError("assignment keys must be strings")
        if isinstance(v, bool) or not isinstance(v, (int, float, str)):
            raise ValueError(f"unsupported value for {k!r}: {v!r}")
        out[k] = v
    return out


def serialize_space(space: ConfigSpace) -> str:
    """Render a space back to its dictionary-literal form."""
    parts = []
    for spec in space.params:
        kind = spec.kind
        if isinstance(kind, (FloatRange, IntRange)):
            rendered = f"({kind.lo!r}, {kind.hi!r})"
        else:
            rendered = "[" + ", ".join(json.dumps(c) for c in kind.choices) + "]"
        parts.append(f"{json.dumps(spec.name)}: {rendered}")
    return "{" + ", ".join(parts) + "}"
