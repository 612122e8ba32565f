"""Command agent: sensor report text in, swarm command text out.

The agent owns the model weights and one execution backend. In ``encrypted``
mode it runs inside a three-party session (the UAV node inputs the prompt, the
operator station optionally inputs the weights, tokens are revealed one at a
time under the command-grammar mask). In ``plaintext`` mode the same schedule
runs on the fixed-point oracle, which is what the encrypted path must match.
"""

import logging
import time
from dataclasses import dataclass, field
from datetime import datetime
from typing import List, Optional

import numpy as np

from ..core.errors import ParseError, ValidationError
from ..core.types import CommandAst, CommReport, FixedPointConfig, SessionConfig
from ..mpc.network import Session, establish_session
from ..mpc.nn import UAV_NODE, ModelWeights, secure_generate, share_weights
from ..mpc.protocols import SecureOps
from ..reference.engine import FixedOps
from ..swarm.commands import parse_command
from ..swarm.vocabulary import CommandConstraint, Vocabulary, split_command

logger = logging.getLogger(__name__)

MODES = ("encrypted", "plaintext")


@dataclass
class CommandGeneration:
    """One generated command and what it cost."""
    sensor: str
    text: str
    tokens: List[int]
    finished: bool
    latency_ms: float
    mul_elements: int
    comm: Optional[CommReport] = None
    started_at: datetime = field(default_factory=datetime.utcnow)

    def parse(self, v_max: float = 15.0) -> CommandAst:
        """The command AST; an unfinished generation is reported as a ParseError."""
        if not self.finished:
            raise ParseError(f"generation stopped before <eos>: '{self.text}'", len(self.text.encode()), self.text)
        return parse_command(self.text, v_max)


class CommandAgent:
    """Greedy, grammar-constrained command generation over a toy transformer."""

    def __init__(self, weights: ModelWeights, mode: str = "encrypted",
                 session_config: Optional[SessionConfig] = None,
                 vocabulary: Optional[Vocabulary] = None, v_max: float = 15.0,
                 max_new_tokens: Optional[int] = None, shared_weights: bool = False,
                 reveal_to: Optional[int] = None):
        if mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got '{mode}'")
        self.weights = weights
        self.mode = mode
        self.session_config = session_config or SessionConfig()
        self.vocabulary = vocabulary or Vocabulary()
        if len(self.vocabulary) != weights.config.vocab_size:
            raise ValidationError(
                f"model vocabulary {weights.config.vocab_size} does not match tokenizer size {len(self.vocabulary)}")
        self.v_max = v_max
        self.constraint = CommandConstraint(self.vocabulary, v_max)
        self.max_new_tokens = max_new_tokens or self.constraint.max_length
        self.shared_weights = shared_weights
        self.reveal_to = reveal_to

        self.session: Optional[Session] = None
        self.ops = None
        self._model: Optional[ModelWeights] = None

    @property
    def fixed_point(self) -> FixedPointConfig:
        return self.session_config.fixed_point

    def initialize(self) -> None:
        """Open the session (encrypted) or the oracle backend (plaintext)."""
        if self.ops is not None:
            return
        if self.mode == "encrypted":
            config = self.session_config.model_copy(update={"model_digest": self.weights.digest()})
            self.session = establish_session(config)
            self.ops = SecureOps(self.session)
            self._model = share_weights(self.ops, self.weights) if self.shared_weights else self.weights
        else:
            self.ops = FixedOps(self.fixed_point)
            self._model = self.weights
        logger.info(f"Command agent ready ({self.mode}, f={self.fixed_point.fractional_bits})")

    def close(self) -> None:
        if self.session is not None:
            self.session.close()
        self.session = None
        self.ops = None
        self._model = None

    def __enter__(self) -> "CommandAgent":
        self.initialize()
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def prompt(self, sensor_text: str) -> np.ndarray:
        """Sensor tokens plus <cmd>, keeping the most recent tokens that leave room to generate."""
        ids = self.vocabulary.prompt(sensor_text)
        room = self.weights.config.max_seq - self._steps()
        if room < 1:
            raise ValidationError(f"max_seq={self.weights.config.max_seq} leaves no room for a prompt")
        return np.asarray(ids[-room:], dtype=np.int64)

    def _steps(self) -> int:
        return min(self.max_new_tokens, self.weights.config.max_seq - 1)

    def generate(self, sensor_text: str) -> CommandGeneration:
        self.initialize()
        prompt = self.prompt(sensor_text)
        if self.session is not None:
            self.session.reset_accounting()
        before = self.ops.mul_elements
        start = time.perf_counter()
        result = secure_generate(
            self.ops, prompt, self._model, self._steps(), cache=True, reveal_tokens=True,
            constraint=self.constraint, stop_token=self.vocabulary.eos, owner=UAV_NODE,
            reveal_to=self.reveal_to,
        )
        latency_ms = (time.perf_counter() - start) * 1000.0
        command, finished = split_command(result.tokens[0], self.vocabulary)
        text = self.vocabulary.decode(command)
        comm = self.session.report() if self.session is not None else None
        logger.info(f"[{self.mode}] '{sensor_text[:40]}' -> '{text}' in {latency_ms:.1f} ms")
        return CommandGeneration(
            sensor=sensor_text, text=text, tokens=command, finished=finished, latency_ms=latency_ms,
            mul_elements=self.ops.mul_elements - before, comm=comm,
        )

    def run(self, sensor_texts: List[str]) -> List[CommandGeneration]:
        """Generate a command for every report, closing the backend afterwards."""
        try:
            return [self.generate(text) for text in sensor_texts]
        except Exception as e:
            logger.error(f"Command generation failed: {e}")
            raise
        finally:
            self.close()
