"""Swarm command grammar, parsing, canonical rendering and text similarity.

Grammar (case-insensitive keywords, free whitespace)::

    command     := action ("," modifier)*
    action      := "move" "to" ["position"] point "at" speed
                 | "hold" ["position"]
                 | "return" ["to"] "home" ["at" speed]
                 | "scan" ["area"] point ["at" speed]
                 | "follow" "uav" NUMBER ["at" speed]
    point       := "(" NUMBER "," NUMBER "," NUMBER ")"
    speed       := NUMBER "m/s"
    modifier    := "maintain" "formation" ["spacing"]
                 | "avoid" ("obstacle" | "obstacles")
                 | "low" "power" ["mode"]

Negative z is altitude above ground, as in "(10, 10, -25)".
"""

import logging
import math
import re
from collections import Counter
from functools import lru_cache
from typing import Dict, Optional

from lark import Lark, Transformer, UnexpectedInput
from pydantic import ValidationError as PydanticValidationError

from ..core.errors import ParseError, ValidationError
from ..core.types import CommandAst, Modifier, SensorReport, Verb

logger = logging.getLogger(__name__)

DEFAULT_V_MAX = 15.0

COMMAND_GRAMMAR = r"""
    start: action ("," modifier)*

    ?action: move | hold | return_home | scan | follow
    move: "move"i "to"i ("position"i)? point "at"i speed
    hold: "hold"i ("position"i)?
    return_home: "return"i ("to"i)? "home"i ("at"i speed)?
    scan: "scan"i ("area"i)? point ("at"i speed)?
    follow: "follow"i "uav"i NUMBER ("at"i speed)?

    point: "(" NUMBER "," NUMBER "," NUMBER ")"
    speed: NUMBER "m/s"i

    ?modifier: maintain | avoid | low_power
    maintain: "maintain"i "formation"i ("spacing"i)?
    avoid: "avoid"i ("obstacles"i | "obstacle"i)
    low_power: "low"i "power"i ("mode"i)?

    NUMBER: /[+-]?\d+(\.\d+)?([eE][+-]?\d+)?/

    %import common.WS
    %ignore WS
"""

MODIFIER_TEXT: Dict[Modifier, str] = {
    Modifier.MAINTAIN_FORMATION: "maintain formation spacing",
    Modifier.AVOID_OBSTACLE: "avoid obstacles",
    Modifier.LOW_POWER: "low power",
}
MODIFIER_ORDER = list(MODIFIER_TEXT)


@lru_cache(maxsize=1)
def command_parser() -> Lark:
    return Lark(COMMAND_GRAMMAR, parser="lalr", maybe_placeholders=False)


class _AstFields(Transformer):
    """Parse tree to plain keyword fields; validation happens afterwards."""

    def NUMBER(self, token):
        return float(token)

    def point(self, items):
        return tuple(items)

    def speed(self, items):
        return ("speed", items[0])

    def _fields(self, verb: Verb, items) -> dict:
        out = {"verb": verb}
        for item in items:
            if isinstance(item, tuple) and len(item) == 2 and item[0] == "speed":
                out["speed"] = item[1]
            elif isinstance(item, tuple):
                out["position"] = item
            else:
                out["target"] = item
        return out

    def move(self, items):
        return self._fields(Verb.MOVE_TO, items)

    def hold(self, items):
        return self._fields(Verb.HOLD, items)

    def return_home(self, items):
        return self._fields(Verb.RETURN_HOME, items)

    def scan(self, items):
        return self._fields(Verb.SCAN, items)

    def follow(self, items):
        return self._fields(Verb.FOLLOW, items)

    def maintain(self, _):
        return Modifier.MAINTAIN_FORMATION

    def avoid(self, _):
        return Modifier.AVOID_OBSTACLE

    def low_power(self, _):
        return Modifier.LOW_POWER

    def start(self, items):
        fields = dict(items[0])
        fields["modifiers"] = frozenset(items[1:])
        return fields


def _byte_offset(text: str, exc: UnexpectedInput) -> int:
    pos = getattr(exc, "pos_in_stream", None)
    if pos is None or pos < 0:
        pos = len(text)
    return len(text[:pos].encode("utf-8"))


def parse_command(text: str, v_max: float = DEFAULT_V_MAX) -> CommandAst:
    """Parse one command.

    Raises ParseError (with the byte offset of the first bad input) for text
    outside the grammar and ValidationError for a speed above ``v_max`` or a
    non-integer UAV id.
    """
    try:
        tree = command_parser().parse(text)
    except UnexpectedInput as exc:
        offset = _byte_offset(text, exc)
        raise ParseError(f"not a swarm command: {text!r}", offset=offset, text=text) from exc
    fields = _AstFields().transform(tree)

    target = fields.get("target")
    if target is not None:
        if not float(target).is_integer() or target < 0:
            raise ValidationError(f"UAV id must be a non-negative integer, got {target}")
        fields["target"] = int(target)
    speed = fields.get("speed", 0.0)
    if not math.isfinite(speed) or speed < 0 or speed > v_max:
        raise ValidationError(f"speed {speed} m/s is outside [0, {v_max}]")
    try:
        return CommandAst(**fields)
    except PydanticValidationError as exc:
        raise ValidationError(f"invalid command {text!r}: {exc.errors()[0]['msg']}") from exc


def format_number(value: float) -> str:
    """Shortest text that parses back to exactly ``value``."""
    value = float(value)
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _point(p) -> str:
    return "(" + ", ".join(format_number(c) for c in p) + ")"


def render_command(ast: CommandAst) -> str:
    """Canonical text of a command; ``parse_command(render_command(a)) == a``."""
    at = f" at {format_number(ast.speed)} m/s"
    if ast.verb is Verb.MOVE_TO:
        text = f"move to position {_point(ast.position)}{at}"
    elif ast.verb is Verb.HOLD:
        text = "hold"
    elif ast.verb is Verb.RETURN_HOME:
        text = "return home" + (at if ast.speed else "")
    elif ast.verb is Verb.SCAN:
        text = f"scan area {_point(ast.position)}" + (at if ast.speed else "")
    else:
        text = f"follow uav {ast.target}" + (at if ast.speed else "")
    for modifier in MODIFIER_ORDER:
        if modifier in ast.modifiers:
            text += ", " + MODIFIER_TEXT[modifier]
    return text


_SIMILARITY_TOKEN = re.compile(r"[a-z0-9]+(?:\.[0-9]+)?")


def similarity_tokens(text: str) -> Counter:
    return Counter(_SIMILARITY_TOKEN.findall(text.lower()))


def token_cosine_similarity(a: str, b: str) -> float:
    """Cosine of term-frequency vectors; 0.0 when either side has no tokens."""
    ta, tb = similarity_tokens(a), similarity_tokens(b)
    if not ta or not tb:
        return 0.0
    dot = sum(ta[t] * tb[t] for t in ta.keys() & tb.keys())
    norm = math.sqrt(sum(v * v for v in ta.values())) * math.sqrt(sum(v * v for v in tb.values()))
    return min(1.0, dot / norm)


_NUM = r"[+-]?\d+(?:\.\d+)?"
_COORDS = re.compile(rf"\(\s*({_NUM})\s*,\s*({_NUM})\s*(?:,\s*{_NUM}\s*)?\)")
_VISIBILITY = re.compile(rf"visibility\s*(?:of\s*|:\s*)?({_NUM})\s*%", re.IGNORECASE)
_BATTERY = re.compile(rf"battery(?:\s+level)?\s*(?:of\s*|:\s*|at\s*)?({_NUM})\s*%", re.IGNORECASE)


def parse_sensor_report(text: str) -> SensorReport:
    """Recover coordinates, visibility and battery from free sensor text.

    >>> parse_sensor_report("movement detected at coordinates (10, 10), visibility 85%").visibility
    85.0
    """
    fields: dict = {"text": text}
    match = _COORDS.search(text)
    if match:
        fields["coordinates"] = (float(match.group(1)), float(match.group(2)))
    match = _VISIBILITY.search(text)
    if match:
        fields["visibility"] = float(match.group(1))
    match = _BATTERY.search(text)
    if match:
        fields["battery"] = float(match.group(1))
    try:
        return SensorReport(**fields)
    except PydanticValidationError as exc:
        raise ValidationError(f"sensor report out of range: {exc.errors()[0]['msg']}") from exc
