"""Tests for the command grammar, canonical rendering, sensor parsing and the token vocabulary."""

import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

# Add the project root to the Python path
sys.path.insert(0, str(Path(__file__).parent.parent))

from app.core.errors import ParseError, ValidationError
from app.core.types import CommandAst, Modifier, Verb
from app.swarm.commands import (
    format_number, parse_command, parse_sensor_report, render_command, token_cosine_similarity,
)
from app.swarm.vocabulary import (
    DISALLOWED, NUMERALS, CommandConstraint, Vocabulary, command_templates, split_command,
)

coordinate = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)
speed = st.floats(min_value=0.0, max_value=15.0, allow_nan=False)
modifiers = st.frozensets(st.sampled_from(list(Modifier)))


@st.composite
def commands(draw):
    """Commands as the parser produces them."""
    verb = draw(st.sampled_from(list(Verb)))
    mods = draw(modifiers)
    if verb is Verb.HOLD:
        return CommandAst(verb=verb, modifiers=mods)
    if verb is Verb.MOVE_TO:
        point = (draw(coordinate), draw(coordinate), draw(coordinate))
        return CommandAst(verb=verb, position=point, speed=draw(speed), modifiers=mods)
    if verb is Verb.SCAN:
        point = (draw(coordinate), draw(coordinate), draw(coordinate))
        return CommandAst(verb=verb, position=point, speed=draw(speed), modifiers=mods)
    if verb is Verb.FOLLOW:
        target = draw(st.integers(min_value=0, max_value=64))
        return CommandAst(verb=verb, target=target, speed=draw(speed), modifiers=mods)
    return CommandAst(verb=verb, speed=draw(speed), modifiers=mods)


class TestGrammar:
    """Parsing command text."""

    def test_move_with_modifier(self):
        """The worked example from mission logs."""
        ast = parse_command("Move to position (10, 10, -25) at 5 m/s, maintain formation spacing")
        assert ast.verb is Verb.MOVE_TO
        assert ast.position == (10.0, 10.0, -25.0)
        assert ast.speed == 5.0
        assert ast.modifiers == frozenset({Modifier.MAINTAIN_FORMATION})

    @pytest.mark.parametrize("text,verb", [
        ("hold", Verb.HOLD),
        ("hold position, avoid obstacle", Verb.HOLD),
        ("return to home", Verb.RETURN_HOME),
        ("return home at 3 m/s", Verb.RETURN_HOME),
        ("scan (0, 0, -20)", Verb.SCAN),
        ("scan area (1.5, -2, -20) at 4 m/s", Verb.SCAN),
        ("follow uav 3 at 4 m/s, low power mode", Verb.FOLLOW),
        ("MOVE TO (1e2, 0, 0) AT 15 M/S", Verb.MOVE_TO),
    ])
    def test_accepted_forms(self, text, verb):
        """Optional keywords, case and number formats are accepted."""
        assert parse_command(text).verb is verb

    def test_defaults(self):
        """Omitted speeds are zero and targets are integers."""
        assert parse_command("return home").speed == 0.0
        ast = parse_command("follow uav 2, avoid obstacles, low power")
        assert ast.target == 2
        assert ast.modifiers == frozenset({Modifier.AVOID_OBSTACLE, Modifier.LOW_POWER})

    def test_parse_error_offset(self):
        """The error points at the first byte the grammar cannot accept."""
        text = "move to (1, 2, 3) at fast"
        with pytest.raises(ParseError) as info:
            parse_command(text)
        assert info.value.offset == text.index("fast")
        with pytest.raises(ParseError) as info:
            parse_command("hold hold")
        assert info.value.offset == 5

    @pytest.mark.parametrize("text", ["", "fly away", "move to (1, 2) at 3 m/s", "hold, maintain"])
    def test_rejected_text(self, text):
        """Text outside the grammar is a parse error."""
        with pytest.raises(ParseError):
            parse_command(text)

    def test_speed_limit(self):
        """Speeds above v_max are rejected after parsing."""
        with pytest.raises(ValidationError):
            parse_command("move to (0, 0, -10) at 20 m/s")
        assert parse_command("move to (0, 0, -10) at 20 m/s", v_max=25).speed == 20.0

    def test_fractional_uav_id(self):
        """UAV ids must be whole numbers."""
        with pytest.raises(ValidationError):
            parse_command("follow uav 2.5")


class TestRendering:
    """Canonical text."""

    def test_canonical_text(self):
        """Keywords are spelled out and modifiers follow a fixed order."""
        ast = CommandAst(verb=Verb.MOVE_TO, position=(10, 10, -25), speed=5,
                         modifiers=frozenset({Modifier.LOW_POWER, Modifier.MAINTAIN_FORMATION}))
        assert render_command(ast) == "move to position (10, 10, -25) at 5 m/s, maintain formation spacing, low power"
        assert render_command(CommandAst(verb=Verb.RETURN_HOME)) == "return home"
        assert render_command(CommandAst(verb=Verb.FOLLOW, target=4, speed=2.5)) == "follow uav 4 at 2.5 m/s"

    def test_format_number(self):
        """Integers print bare, everything else round-trips exactly."""
        assert format_number(5.0) == "5"
        assert format_number(-0.1) == "-0.1"
        assert float(format_number(1 / 3)) == 1 / 3

    @settings(max_examples=200, deadline=None)
    @given(ast=commands())
    def test_render_parse_round_trip(self, ast):
        """parse(render(ast)) == ast for every command."""
        assert parse_command(render_command(ast)) == ast


class TestSimilarity:
    """Token cosine similarity."""

    def test_identical_and_disjoint(self):
        """Identical text scores 1, disjoint text 0."""
        text = "move to position (10, 10, -25) at 5 m/s"
        assert token_cosine_similarity(text, text) == pytest.approx(1.0)
        assert token_cosine_similarity("hold", "return home") == 0.0

    def test_symmetric_and_bounded(self):
        """The score is symmetric and lies in [0, 1]."""
        a, b = "move to position (10, 10, -25) at 5 m/s", "move to position (10, 5, -25) at 3 m/s"
        score = token_cosine_similarity(a, b)
        assert score == token_cosine_similarity(b, a)
        assert 0.0 < score < 1.0

    def test_empty(self):
        """Empty text has no similarity to anything."""
        assert token_cosine_similarity("", "hold") == 0.0
        assert token_cosine_similarity("(,)", "(,)") == 0.0


class TestSensorReport:
    """Structured fields recovered from free text."""

    def test_fields(self):
        """Coordinates, visibility and battery are extracted."""
        report = parse_sensor_report("Movement detected at coordinates (10, 10), visibility 85%, battery level 72%")
        assert report.coordinates == (10.0, 10.0)
        assert report.visibility == 85.0
        assert report.battery == 72.0

    def test_missing_fields(self):
        """Absent fields stay empty."""
        report = parse_sensor_report("no target ahead")
        assert report.coordinates is None and report.visibility is None and report.battery is None

    def test_out_of_range(self):
        """Percentages above 100 are rejected."""
        with pytest.raises(ValidationError):
            parse_sensor_report("visibility 150%")


class TestVocabulary:
    """Tokenizer and constrained decoding."""

    @pytest.fixture
    def vocab(self):
        return Vocabulary()

    def test_size(self, vocab):
        """64 unique tokens with the specials first."""
        assert len(vocab) == 64
        assert (vocab.pad, vocab.cmd, vocab.eos) == (0, 2, 3)

    def test_encode_decode(self, vocab):
        """Canonical commands survive tokenization."""
        text = "move to position (10, 10, -25) at 5 m/s, maintain formation spacing"
        ids = vocab.encode(text)
        assert vocab.decode(ids) == text
        assert vocab.decode(ids + [vocab.eos, vocab["hold"]]) == text

    def test_numerals_normalize(self, vocab):
        """Numerals match by value; unknown words map to <unk>."""
        assert vocab.encode("5.0 +5") == [vocab["5"], vocab["5"]]
        assert vocab.encode("zeppelin 7") == [vocab["<unk>"], vocab["<unk>"]]

    def test_prompt(self, vocab):
        """Prompts end with the command marker."""
        assert vocab.prompt("obstacle ahead")[-1] == vocab.cmd

    def test_constraint_shapes(self, vocab):
        """The longest canonical command fits in 24 tokens."""
        constraint = CommandConstraint(vocab)
        assert constraint.max_length == 24
        assert len(command_templates()) == 8 * 8

    def test_allowed_tokens(self, vocab):
        """Each prefix admits only grammatical continuations."""
        constraint = CommandConstraint(vocab)
        starts = {vocab[w] for w in ("move", "hold", "return", "scan", "follow")}
        assert constraint.allowed([]) == starts
        assert constraint.allowed([vocab["hold"]]) == {vocab[","], vocab.eos}
        point = [vocab[w] for w in ("move", "to", "position", "(")]
        assert constraint.allowed(point) == {vocab[str(n)] for n in NUMERALS}
        assert constraint.allowed([vocab["hold"], vocab.eos]) == {vocab.pad}

    def test_speed_bound(self, vocab):
        """Speed slots only offer numerals within v_max."""
        constraint = CommandConstraint(vocab, v_max=5)
        prefix = vocab.encode("return home at")
        assert constraint.allowed(prefix) == {vocab[str(n)] for n in (0, 1, 2, 3, 4, 5)}

    def test_logit_bias(self, vocab):
        """Disallowed tokens get the mask value, allowed ones zero."""
        bias = CommandConstraint(vocab).logit_bias([vocab["hold"]])
        assert bias.shape == (64,)
        assert set(np.flatnonzero(bias == 0.0)) == {vocab[","], vocab.eos}
        assert np.all(bias[bias != 0.0] == DISALLOWED)

    def test_constrained_walks_parse(self, vocab):
        """Any path through the allowed sets decodes to a valid command."""
        constraint = CommandConstraint(vocab)
        rng = np.random.default_rng(8)
        for _ in range(200):
            history = []
            while not history or history[-1] != vocab.eos:
                history.append(int(rng.choice(sorted(constraint.allowed(history)))))
            assert len(history) <= constraint.max_length
            tokens, finished = split_command(history, vocab)
            assert finished
            parse_command(vocab.decode(tokens))

    def test_split_command(self, vocab):
        """Generation without <eos> is unfinished."""
        assert split_command([vocab["hold"]], vocab) == ([vocab["hold"]], False)
        assert split_command([vocab["hold"], vocab.eos, 5], vocab) == ([vocab["hold"]], True)
