"""The 64-token command vocabulary, a whitespace tokenizer and constrained decoding.

Prompts are sensor text followed by ``<cmd>``; the model then emits command
tokens up to ``<eos>``. ``CommandConstraint`` masks every token that cannot
continue a canonical command, so greedy decoding always yields parseable text.
"""

import logging
import re
from functools import cached_property
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from ..core.errors import ValidationError

logger = logging.getLogger(__name__)

PAD, UNK, CMD, EOS = "<pad>", "<unk>", "<cmd>", "<eos>"
SPECIALS = [PAD, UNK, CMD, EOS]
PUNCTUATION = ["(", ")", ",", "%", "m/s"]
COMMAND_WORDS = [
    "move", "to", "position", "at", "hold", "return", "home", "scan", "area", "follow", "uav",
    "maintain", "formation", "spacing", "avoid", "obstacles", "low", "power",
]
SENSOR_WORDS = [
    "movement", "detected", "coordinates", "visibility", "battery", "level",
    "obstacle", "ahead", "no", "target", "person", "vehicle",
]
NUMERALS = [-30, -25, -20, -15, -10, -5, 0, 1, 2, 3, 4, 5, 6, 8, 10, 15, 20, 25, 30, 40, 50, 60, 72, 85, 100]

VOCABULARY: List[str] = SPECIALS + PUNCTUATION + COMMAND_WORDS + SENSOR_WORDS + [str(n) for n in NUMERALS]

DISALLOWED = -64.0

_WORD = re.compile(r"<[a-z]+>|m/s|[(),%]|[+-]?\d+(?:\.\d+)?|[a-z]+")


class Vocabulary:
    """Token ids for the fixed command vocabulary."""

    def __init__(self, tokens: Sequence[str] = VOCABULARY):
        self.tokens = list(tokens)
        self.ids: Dict[str, int] = {t: i for i, t in enumerate(self.tokens)}
        if len(self.ids) != len(self.tokens):
            raise ValidationError("vocabulary tokens must be unique")

    def __len__(self) -> int:
        return len(self.tokens)

    def __getitem__(self, token: str) -> int:
        return self.ids[token]

    @property
    def pad(self) -> int:
        return self.ids[PAD]

    @property
    def eos(self) -> int:
        return self.ids[EOS]

    @property
    def cmd(self) -> int:
        return self.ids[CMD]

    def split(self, text: str) -> List[str]:
        return _WORD.findall(text.lower())

    def _normalize(self, word: str) -> str:
        # numerals compare by value so "5.0" and "+5" hit the token "5"
        if word in self.ids:
            return word
        try:
            value = float(word)
        except ValueError:
            return UNK
        if value.is_integer() and str(int(value)) in self.ids:
            return str(int(value))
        return UNK

    def encode(self, text: str) -> List[int]:
        return [self.ids[self._normalize(w)] for w in self.split(text)]

    def decode(self, ids: Sequence[int], stop_at_eos: bool = True) -> str:
        """Join tokens back into text with command-style punctuation spacing."""
        out = ""
        for i in ids:
            token = self.tokens[int(i)]
            if token == EOS and stop_at_eos:
                break
            if token in (PAD, CMD):
                continue
            if not out or out.endswith("(") or token in (")", ",", "%"):
                out += token
            else:
                out += " " + token
        return out

    def prompt(self, sensor_text: str) -> List[int]:
        return self.encode(sensor_text) + [self.cmd]


# command templates over token classes; SPEED and UAV_ID are numeral subsets
NUM, SPEED, UAV_ID = "<num>", "<speed>", "<uav>"
SPEED_NUMERALS = [n for n in NUMERALS if 0 <= n <= 15]
UAV_NUMERALS = [n for n in NUMERALS if 0 <= n <= 8]

_POINT = ["(", NUM, ",", NUM, ",", NUM, ")"]
_AT = ["at", SPEED, "m/s"]
ACTION_TEMPLATES: List[List[str]] = [
    ["move", "to", "position", *_POINT, *_AT],
    ["hold"],
    ["return", "home"],
    ["return", "home", *_AT],
    ["scan", "area", *_POINT],
    ["scan", "area", *_POINT, *_AT],
    ["follow", "uav", UAV_ID],
    ["follow", "uav", UAV_ID, *_AT],
]
MODIFIER_TEMPLATES: List[List[str]] = [
    [",", "maintain", "formation", "spacing"],
    [",", "avoid", "obstacles"],
    [",", "low", "power"],
]


def command_templates() -> List[List[str]]:
    """Every canonical command shape: an action, an ordered subset of modifiers, then <eos>."""
    shapes = []
    for action in ACTION_TEMPLATES:
        for r in range(len(MODIFIER_TEMPLATES) + 1):
            for subset in combinations(MODIFIER_TEMPLATES, r):
                shapes.append(action + [t for m in subset for t in m] + [EOS])
    return shapes


class CommandConstraint:
    """Public next-token mask that keeps greedy decoding inside the command grammar."""

    def __init__(self, vocabulary: Optional[Vocabulary] = None, v_max: float = 15.0):
        self.vocabulary = vocabulary or Vocabulary()
        self.classes: Dict[str, Set[int]] = {
            NUM: {self.vocabulary[str(n)] for n in NUMERALS},
            SPEED: {self.vocabulary[str(n)] for n in SPEED_NUMERALS if n <= v_max},
            UAV_ID: {self.vocabulary[str(n)] for n in UAV_NUMERALS},
        }
        self.templates = [[self._ids(t) for t in shape] for shape in command_templates()]

    def _ids(self, symbol: str) -> Set[int]:
        return self.classes.get(symbol) or {self.vocabulary[symbol]}

    @cached_property
    def max_length(self) -> int:
        return max(len(t) for t in self.templates)

    def allowed(self, history: Sequence[int]) -> Set[int]:
        n = len(history)
        if history and history[-1] in (self.vocabulary.eos, self.vocabulary.pad):
            return {self.vocabulary.pad}
        nxt: Set[int] = set()
        for template in self.templates:
            if len(template) > n and all(h in slot for h, slot in zip(history, template)):
                nxt |= template[n]
        return nxt or {self.vocabulary.eos}

    def logit_bias(self, history: Sequence[int]) -> np.ndarray:
        bias = np.full(len(self.vocabulary), DISALLOWED)
        bias[sorted(self.allowed(history))] = 0.0
        return bias


def split_command(tokens: Sequence[int], vocabulary: Vocabulary) -> Tuple[List[int], bool]:
    """Tokens up to (excluding) <eos> and whether <eos> was reached."""
    out = []
    for t in tokens:
        if int(t) == vocabulary.eos:
            return out, True
        out.append(int(t))
    return out, False
