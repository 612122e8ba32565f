"""Three-party execution harness: sessions, wire frames and traffic accounting.

The session drives all three parties from one coordinator. Every interaction
between parties goes through :meth:`Session.exchange`, which frames payloads,
hands them to a transport, waits for every frame of the round (barrier) and
records exact byte counts per (sender, receiver, phase).

Wire frame: u32 payload length | u8 phase | u8 sender | u8 receiver |
u8 opcode | u64 sequence number | payload of little-endian u64 ring words.
Party ids on the wire are 1..3.
"""

import hashlib
import logging
import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple
from uuid import uuid4

import numpy as np

from ..adapters.transport import FRAME_HEADER, InProcessTransport, TcpTransport, Transport
from ..core.errors import FrameError, HandshakeError, ProtocolDesyncError
from ..core.hashing import derive_seed, hash_content
from ..core.ring import RING_DTYPE
from ..core.types import CommReport, Opcode, PairTraffic, Phase, SessionConfig, TransportKind

logger = logging.getLogger(__name__)

WIRE_DTYPE = np.dtype("<u8")
HEADER_BYTES = FRAME_HEADER.size

Pair = Tuple[int, int]


@dataclass
class Message:
    """One party's outbound payload for a round."""
    sender: int
    receiver: int
    payload: np.ndarray
    declared: Optional[int] = None


@dataclass(frozen=True)
class FrameHeader:
    length: int
    phase: Phase
    sender: int
    receiver: int
    opcode: Opcode
    seq: int


def encode_frame(header: FrameHeader, payload: np.ndarray) -> bytes:
    body = np.ascontiguousarray(payload, dtype=RING_DTYPE).astype(WIRE_DTYPE, copy=False).tobytes()
    if len(body) != header.length:
        raise FrameError(f"declared {header.length} payload bytes, have {len(body)}")
    return FRAME_HEADER.pack(header.length, int(header.phase), header.sender + 1,
                             header.receiver + 1, int(header.opcode), header.seq) + body


def decode_frame(frame: bytes) -> Tuple[FrameHeader, np.ndarray]:
    if len(frame) < HEADER_BYTES:
        raise FrameError(f"frame of {len(frame)} bytes is shorter than the header")
    length, phase, sender, receiver, opcode, seq = FRAME_HEADER.unpack_from(frame)
    if len(frame) - HEADER_BYTES != length:
        raise FrameError(f"header declares {length} payload bytes, frame carries {len(frame) - HEADER_BYTES}")
    try:
        header = FrameHeader(length, Phase(phase), sender - 1, receiver - 1, Opcode(opcode), seq)
    except ValueError as exc:
        raise FrameError(f"unknown tag in frame header: {exc}") from exc
    payload = np.frombuffer(frame, dtype=WIRE_DTYPE, offset=HEADER_BYTES).astype(RING_DTYPE)
    return header, payload


@dataclass
class CommStats:
    """Traffic counters; keys are (sender, receiver, phase label)."""
    bytes_sent: Dict[Tuple[int, int, str], int] = field(default_factory=lambda: defaultdict(int))
    bytes_received: Dict[Tuple[int, int, str], int] = field(default_factory=lambda: defaultdict(int))
    messages: Dict[Tuple[int, int, str], int] = field(default_factory=lambda: defaultdict(int))
    pair_rounds: Dict[Tuple[int, int, str], int] = field(default_factory=lambda: defaultdict(int))
    kernel_bytes: Dict[str, int] = field(default_factory=lambda: defaultdict(int))
    phase_rounds: Dict[str, int] = field(default_factory=lambda: defaultdict(int))
    phase_ms: Dict[str, float] = field(default_factory=lambda: defaultdict(float))
    rounds: int = 0
    mul_elements: int = 0

    @property
    def total_bytes(self) -> int:
        return sum(self.bytes_sent.values())

    @property
    def total_received(self) -> int:
        return sum(self.bytes_received.values())

    @property
    def total_messages(self) -> int:
        return sum(self.messages.values())

    def pair_bytes(self, sender: int, receiver: int) -> int:
        return sum(v for (s, r, _), v in self.bytes_sent.items() if (s, r) == (sender, receiver))


def _kb(n: int) -> float:
    return round(n / 1024.0, 1)


class Session:
    """Execution context shared by the three parties."""

    def __init__(self, config: SessionConfig, transport: Transport):
        self.id = str(uuid4())
        self.config = config
        self.parties = config.parties
        self.fixed_point = config.fixed_point
        self.transport = transport
        self.stats = CommStats()
        self.reveal_count = 0
        self._phases: List[Phase] = []
        self._send_seq: Dict[Pair, int] = defaultdict(int)
        self._recv_seq: Dict[Pair, int] = defaultdict(int)
        self._transcript = hashlib.sha256()
        self.pair_rngs: List[np.random.Generator] = []
        self.dealer_rng: Optional[np.random.Generator] = None
        self.triples = None
        self.closed = False

    # -------------------- phases --------------------
    @property
    def current_phase(self) -> Phase:
        return self._phases[-1] if self._phases else Phase.IDLE

    @property
    def kernel_phase(self) -> Phase:
        return self._phases[0] if self._phases else Phase.IDLE

    @contextmanager
    def phase(self, phase: Phase) -> Iterator[None]:
        """Attribute traffic and wall time inside the block to ``phase``."""
        self._phases.append(phase)
        start = time.perf_counter()
        try:
            yield
        finally:
            self.stats.phase_ms[phase.label] += (time.perf_counter() - start) * 1000.0
            self._phases.pop()

    # -------------------- randomness --------------------
    def seed_pairs(self, seeds: Sequence[int]) -> None:
        """Install the PRGs; seed j is known to parties j and j+1."""
        self.pair_rngs = [np.random.Generator(np.random.PCG64(s)) for s in seeds]
        self.dealer_rng = np.random.Generator(np.random.PCG64(derive_seed(self.config.seed, "dealer")))

    def pair_random(self, pair: int, shape: Tuple[int, ...]) -> np.ndarray:
        """Uniform ring words drawn from the PRG shared by parties ``pair`` and ``pair + 1``."""
        n = int(np.prod(shape, dtype=np.int64))
        return self.pair_rngs[pair].bit_generator.random_raw(n).astype(RING_DTYPE).reshape(shape)

    def zero_sharing(self, shape: Tuple[int, ...], boolean: bool = False) -> List[np.ndarray]:
        """Correlated randomness alpha_i with alpha_1 + alpha_2 + alpha_3 = 0 (or XOR = 0).

        Party i computes alpha_i = r_i - r_{i-1} from the two seeds it knows.
        """
        r = [self.pair_random(j, shape) for j in range(3)]
        if boolean:
            return [r[i] ^ r[(i - 1) % 3] for i in range(3)]
        return [r[i] - r[(i - 1) % 3] for i in range(3)]

    # -------------------- rounds --------------------
    def exchange(self, messages: Sequence[Message], opcode: Opcode = Opcode.DATA,
                 expect: Optional[Iterable[Pair]] = None) -> Dict[Pair, np.ndarray]:
        """Run one synchronous round and return payloads keyed by (sender, receiver)."""
        pairs = [(m.sender, m.receiver) for m in messages]
        if len(set(pairs)) != len(pairs):
            raise ProtocolDesyncError(f"more than one message per channel in a round: {pairs}")
        for sender, receiver in pairs:
            if sender == receiver or not (0 <= sender < 3 and 0 <= receiver < 3):
                raise FrameError(f"invalid channel P{sender + 1}->P{receiver + 1}")
        if expect is not None:
            missing = set(expect) - set(pairs)
            if missing:
                names = ", ".join(f"P{s + 1}->P{r + 1}" for s, r in sorted(missing))
                raise ProtocolDesyncError(f"round is missing counterpart messages: {names}")

        phase = self.current_phase
        label = phase.label
        shapes: Dict[Pair, Tuple[int, ...]] = {}
        for msg in messages:
            payload = np.asarray(msg.payload, dtype=RING_DTYPE)
            if msg.declared is not None and msg.declared != payload.size:
                raise FrameError(f"payload has {payload.size} words, declared {msg.declared}")
            length = payload.size * 8
            if length + HEADER_BYTES > self.config.max_frame_bytes:
                raise FrameError(f"frame of {length + HEADER_BYTES} bytes exceeds {self.config.max_frame_bytes}")
            pair = (msg.sender, msg.receiver)
            header = FrameHeader(length, phase, msg.sender, msg.receiver, opcode, self._send_seq[pair])
            self._send_seq[pair] += 1
            frame = encode_frame(header, payload.reshape(-1))
            shapes[pair] = payload.shape
            key = (msg.sender, msg.receiver, label)
            self.stats.bytes_sent[key] += len(frame)
            self.stats.messages[key] += 1
            self.stats.pair_rounds[key] += 1
            self.stats.kernel_bytes[self.kernel_phase.label] += len(frame)
            self._transcript.update(frame)
            self.transport.send(msg.sender, msg.receiver, frame)

        delivered: Dict[Pair, np.ndarray] = {}
        for pair in pairs:
            frame = self.transport.recv(*pair)
            if frame is None:
                raise ProtocolDesyncError(f"no frame arrived on P{pair[0] + 1}->P{pair[1] + 1}")
            header, payload = decode_frame(frame)
            if (header.sender, header.receiver) != pair:
                raise ProtocolDesyncError(f"frame for {header.sender}->{header.receiver} arrived on {pair}")
            if header.seq != self._recv_seq[pair] or header.opcode != opcode:
                raise ProtocolDesyncError(
                    f"expected seq {self._recv_seq[pair]} op {opcode.name}, got seq {header.seq} op {header.opcode.name}")
            self._recv_seq[pair] += 1
            self.stats.bytes_received[(pair[0], pair[1], label)] += len(frame)
            delivered[pair] = payload.reshape(shapes[pair])
        self.transport.flush()

        self.stats.rounds += 1
        self.stats.phase_rounds[label] += 1
        if self.config.latency_ms:
            time.sleep(self.config.latency_ms / 1000.0)
        logger.debug(f"round {self.stats.rounds} [{label}/{opcode.name}] {len(messages)} frames")
        return delivered

    def reset_accounting(self) -> None:
        self.stats = CommStats()

    @property
    def transcript_digest(self) -> str:
        return self._transcript.copy().hexdigest()

    def report(self) -> CommReport:
        return comm_report(self)

    def close(self) -> None:
        if not self.closed:
            self.transport.close()
            self.closed = True

    def __enter__(self) -> "Session":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _config_fingerprint(config: SessionConfig) -> str:
    return hash_content(
        f"{config.fixed_point.fractional_bits}|{config.model_digest}|{config.mul_backend.value}|"
        f"{config.adder.value}|{config.transport.value}"
    )


def build_transport(config: SessionConfig, connect_host: Optional[str] = None) -> Transport:
    if config.transport is TransportKind.TCP:
        return TcpTransport(host=config.host, base_port=config.base_port,
                            connect_host=connect_host or config.connect_host)
    return InProcessTransport()


def establish_session(config: SessionConfig, party_views: Optional[Sequence[SessionConfig]] = None,
                      transport: Optional[Transport] = None) -> Session:
    """Bring three parties into an agreed session.

    ``party_views`` lets each party bring its own copy of the configuration;
    any disagreement on fixed point, model identity or backends is a
    HandshakeError. Traffic of the setup round is not counted afterwards.
    """
    roles = list(config.parties)
    if len(roles) != 3:
        raise HandshakeError(f"a session needs exactly three parties, got {len(roles)}")
    if sorted(r.index for r in roles) != [0, 1, 2]:
        raise HandshakeError("party ids must be P1, P2 and P3")
    views = list(party_views) if party_views is not None else [config] * 3
    if len(views) != 3:
        raise HandshakeError(f"expected three party views, got {len(views)}")

    transport = transport or build_transport(config)
    transport.open()
    session = Session(config, transport)
    logger.info(f"Establishing {transport.kind} session {session.id} (f={config.fixed_point.fractional_bits})")

    fingerprints = [int(_config_fingerprint(v)[:16], 16) for v in views]
    pair_seeds = [derive_seed(config.seed, f"pair:{j}") for j in range(3)]
    try:
        with session.phase(Phase.SETUP):
            # every party announces its fingerprint to both neighbours
            announce = [Message(s, r, np.array([fingerprints[s]], dtype=RING_DTYPE))
                        for s in range(3) for r in range(3) if s != r]
            got = session.exchange(announce)
            for (s, r), payload in got.items():
                if int(payload[0]) != fingerprints[r]:
                    raise HandshakeError(f"P{s + 1} and P{r + 1} disagree on session parameters")
            # party j hands the seed of pair (j, j+1) to party j+1
            seeds = session.exchange([Message(j, (j + 1) % 3, np.array([pair_seeds[j]], dtype=RING_DTYPE))
                                      for j in range(3)])
            session.seed_pairs([int(seeds[(j, (j + 1) % 3)][0]) for j in range(3)])
    except Exception:
        session.close()
        raise
    session.reset_accounting()
    return session


def exchange(session: Session, round_messages: Sequence[Message], opcode: Opcode = Opcode.DATA,
             expect: Optional[Iterable[Pair]] = None) -> Dict[Pair, np.ndarray]:
    """Module-level form of :meth:`Session.exchange`."""
    return session.exchange(round_messages, opcode=opcode, expect=expect)


def comm_report(session: Session) -> CommReport:
    """Snapshot of the session's accounting, with KB rounded to one decimal."""
    stats = session.stats
    traffic = [
        PairTraffic(sender=s + 1, receiver=r + 1, phase=label, bytes_sent=n,
                    messages=stats.messages[(s, r, label)], rounds=stats.pair_rounds[(s, r, label)])
        for (s, r, label), n in sorted(stats.bytes_sent.items())
    ]
    phase_bytes: Dict[str, int] = defaultdict(int)
    pair_bytes: Dict[str, int] = defaultdict(int)
    for (s, r, label), n in stats.bytes_sent.items():
        phase_bytes[label] += n
        pair_bytes[f"P{min(s, r) + 1}-P{max(s, r) + 1}"] += n
    return CommReport(
        session_id=session.id,
        traffic=traffic,
        phase_kb={k: _kb(v) for k, v in sorted(phase_bytes.items())},
        kernel_kb={k: _kb(v) for k, v in sorted(stats.kernel_bytes.items())},
        pair_kb={k: _kb(v) for k, v in sorted(pair_bytes.items())},
        phase_ms={k: round(v, 3) for k, v in sorted(stats.phase_ms.items())},
        phase_rounds=dict(sorted(stats.phase_rounds.items())),
        total_bytes=stats.total_bytes,
        total_kb=_kb(stats.total_bytes),
        rounds=stats.rounds,
        messages=stats.total_messages,
        mul_elements=stats.mul_elements,
        reveals=session.reveal_count,
        transcript_digest=session.transcript_digest,
    )
