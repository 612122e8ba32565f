"""Core value types and Pydantic models for the secure swarm-command engine.

The models here are the shared vocabulary between modules:
- fixed-point and model hyperparameters used by the MPC engine
- party roles, protocol phases and wire opcodes used by the network harness
- command ASTs, sensor reports and swarm snapshots used by the swarm tools
- report rows emitted by the workflows
"""

import math
from datetime import datetime
from enum import Enum, IntEnum
from typing import Dict, FrozenSet, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Vec3 = Tuple[float, float, float]

RING_BITS = 64


# -------------------- Engine --------------------
class FixedPointConfig(BaseModel):
    """Fractional-bit encoding rule over the 64-bit ring."""
    model_config = ConfigDict(frozen=True)

    fractional_bits: int = Field(default=16, ge=8, le=32)

    @property
    def total_bits(self) -> int:
        return RING_BITS

    @property
    def resolution(self) -> float:
        return 2.0 ** -self.fractional_bits

    @property
    def bound(self) -> float:
        """Exclusive magnitude bound of representable reals."""
        return 2.0 ** (RING_BITS - 1 - self.fractional_bits)


class GeluMode(str, Enum):
    """Which GELU the forward pass evaluates."""
    PIECEWISE = "piecewise"
    EXACT_REFERENCE = "exact_reference"


class ModelConfig(BaseModel):
    """Transformer hyperparameters."""
    model_config = ConfigDict(frozen=True)

    n_layers: int = Field(default=2, ge=0)
    d_model: int = Field(default=32, ge=1)
    n_heads: int = Field(default=2, ge=1)
    vocab_size: int = Field(default=64, ge=1)
    max_seq: int = Field(default=48, ge=1)
    d_ff: Optional[int] = Field(default=None, ge=1)
    temperature: float = Field(default=1.0, gt=0)
    gelu_mode: GeluMode = GeluMode.PIECEWISE
    layernorm_eps: float = Field(default=1e-5, gt=0)

    @model_validator(mode="after")
    def _heads_divide_width(self) -> "ModelConfig":
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        return self

    @property
    def ffn_width(self) -> int:
        return self.d_ff or 4 * self.d_model

    @property
    def head_width(self) -> int:
        return self.d_model // self.n_heads


# -------------------- Parties and wire --------------------
class PartyKind(str, Enum):
    """Descriptive role of a compute party."""
    UAV_NODE = "uav_node"
    OPERATOR_STATION = "operator_station"
    COMPUTATION_SERVER = "computation_server"


class PartyRole(BaseModel):
    """One of the three parties of a session; index 0..2 maps to P1..P3."""
    model_config = ConfigDict(frozen=True)

    index: int = Field(ge=0, le=2)
    kind: PartyKind

    @property
    def name(self) -> str:
        return f"P{self.index + 1}"


DEFAULT_PARTIES = (
    PartyRole(index=0, kind=PartyKind.UAV_NODE),
    PartyRole(index=1, kind=PartyKind.OPERATOR_STATION),
    PartyRole(index=2, kind=PartyKind.COMPUTATION_SERVER),
)


class TransportKind(str, Enum):
    """Transport carrying the frames between parties."""
    IN_PROCESS = "in_process"
    TCP = "tcp"


class MulBackend(str, Enum):
    """Multiplication backend."""
    REPLICATED = "replicated"
    TRIPLES = "triples"


class AdderKind(str, Enum):
    """Carry propagation used by secure comparison."""
    RIPPLE = "ripple"
    KOGGE_STONE = "kogge_stone"


class Phase(IntEnum):
    """Accounting phase; the integer value is the wire tag."""
    SETUP = 0
    SHARE_INPUT = 1
    LINEAR = 2
    MUL = 3
    TRUNC = 4
    COMPARE = 5
    SOFTMAX = 6
    GELU = 7
    OUTPUT = 8
    LAYERNORM = 9
    ATTENTION = 10
    ARGMAX = 11
    IDLE = 12

    @property
    def label(self) -> str:
        return self.name.lower()


class Opcode(IntEnum):
    """Protocol opcode carried in every frame header."""
    DATA = 0
    MUL = 1
    TRUNC = 2
    AND = 3
    INPUT = 4
    REVEAL = 5
    MATMUL = 6
    B2A = 7
    TRIPLE_OPEN = 8


class SessionConfig(BaseModel):
    """Everything the parties must agree on before the first protocol step."""
    model_config = ConfigDict(frozen=True)

    parties: Tuple[PartyRole, ...] = DEFAULT_PARTIES
    transport: TransportKind = TransportKind.IN_PROCESS
    seed: int = 7
    fixed_point: FixedPointConfig = FixedPointConfig()
    model_digest: str = ""
    mul_backend: MulBackend = MulBackend.REPLICATED
    adder: AdderKind = AdderKind.RIPPLE
    latency_ms: float = Field(default=0.0, ge=0)
    max_frame_bytes: int = Field(default=256 * 1024 * 1024, ge=16)
    host: str = "127.0.0.1"
    connect_host: Optional[str] = None
    base_port: int = Field(default=47000, ge=1, le=65530)


class PairTraffic(BaseModel):
    """Traffic between one ordered pair of parties in one phase."""
    sender: int
    receiver: int
    phase: str
    bytes_sent: int = 0
    messages: int = 0
    rounds: int = 0


class CommReport(BaseModel):
    """Read-only snapshot of a session's communication accounting."""
    session_id: str
    traffic: List[PairTraffic] = Field(default_factory=list)
    phase_kb: Dict[str, float] = Field(default_factory=dict)
    kernel_kb: Dict[str, float] = Field(default_factory=dict)
    pair_kb: Dict[str, float] = Field(default_factory=dict)
    phase_ms: Dict[str, float] = Field(default_factory=dict)
    phase_rounds: Dict[str, int] = Field(default_factory=dict)
    total_bytes: int = 0
    total_kb: float = 0.0
    rounds: int = 0
    messages: int = 0
    mul_elements: int = 0
    reveals: int = 0
    transcript_digest: str = ""


# -------------------- Commands and swarm --------------------
class Verb(str, Enum):
    """Command verbs."""
    MOVE_TO = "move_to"
    HOLD = "hold"
    RETURN_HOME = "return_home"
    SCAN = "scan"
    FOLLOW = "follow"


class Modifier(str, Enum):
    """Optional command modifiers, in canonical render order."""
    MAINTAIN_FORMATION = "maintain_formation"
    AVOID_OBSTACLE = "avoid_obstacle"
    LOW_POWER = "low_power"


class CommandAst(BaseModel):
    """A parsed swarm command."""
    model_config = ConfigDict(frozen=True)

    verb: Verb
    position: Optional[Vec3] = None
    speed: float = Field(default=0.0, ge=0)
    modifiers: FrozenSet[Modifier] = frozenset()
    target: Optional[int] = Field(default=None, ge=0)

    @field_validator("position")
    @classmethod
    def _finite_position(cls, value: Optional[Vec3]) -> Optional[Vec3]:
        if value is not None and not all(math.isfinite(c) for c in value):
            raise ValueError("position must be finite")
        return value


class SensorReport(BaseModel):
    """Free-text sensor input with whatever structured fields could be recovered."""
    text: str
    coordinates: Optional[Tuple[float, float]] = None
    visibility: Optional[float] = Field(default=None, ge=0, le=100)
    battery: Optional[float] = Field(default=None, ge=0, le=100)


class Box(BaseModel):
    """Axis-aligned box."""
    model_config = ConfigDict(frozen=True)

    min: Vec3
    max: Vec3

    @model_validator(mode="after")
    def _ordered(self) -> "Box":
        if any(lo > hi for lo, hi in zip(self.min, self.max)):
            raise ValueError("box min must not exceed max")
        return self

    def contains(self, point: Vec3) -> bool:
        return all(lo <= p <= hi for p, lo, hi in zip(point, self.min, self.max))


class FormationSpec(BaseModel):
    """Line formation with a fixed spacing between neighbouring slots."""
    model_config = ConfigDict(frozen=True)

    spacing: float = Field(default=5.0, gt=0)


class UavState(BaseModel):
    """Kinematic state of one UAV."""
    id: int = Field(ge=0)
    position: Vec3
    velocity: Vec3 = (0.0, 0.0, 0.0)
    battery: float = Field(default=100.0, ge=0, le=100)
    home: Optional[Vec3] = None
    measured: Optional[Vec3] = None
    blocked: bool = False

    @field_validator("position", "velocity")
    @classmethod
    def _finite(cls, value: Vec3) -> Vec3:
        if not all(math.isfinite(c) for c in value):
            raise ValueError("coordinates must be finite")
        return value

    @property
    def observed(self) -> Vec3:
        return self.measured if self.measured is not None else self.position


class SwarmState(BaseModel):
    """Snapshot of the whole swarm plus cumulative event counters."""
    uavs: List[UavState]
    formation: FormationSpec = FormationSpec()
    obstacles: List[Box] = Field(default_factory=list)
    nofly: List[Box] = Field(default_factory=list)
    time: float = 0.0
    v_max: float = Field(default=15.0, gt=0)
    noise_sigma: float = Field(default=0.0, ge=0)
    drain_per_meter: float = Field(default=0.05, ge=0)
    avoidance_events: int = 0
    collisions: int = 0
    nofly_violations: int = 0
    energy_used: float = 0.0


class RewardWeights(BaseModel):
    """Weights of the navigation, safety, efficiency and formation terms."""
    model_config = ConfigDict(frozen=True)

    navigation: float = Field(default=0.25, ge=0)
    safety: float = Field(default=0.25, ge=0)
    efficiency: float = Field(default=0.25, ge=0)
    formation: float = Field(default=0.25, ge=0)


class RewardNormalizers(BaseModel):
    """Scales that map raw metrics into [0, 1] reward components."""
    model_config = ConfigDict(frozen=True)

    trajectory_error_m: float = Field(default=5.0, gt=0)
    formation_rms_m: float = Field(default=2.0, gt=0)
    energy_budget: float = Field(default=100.0, gt=0)


class FormationReport(BaseModel):
    """Trajectory and formation quality over a trace."""
    trajectory_error: float
    formation_rms: float
    avoidance_success: float
    avoidance_events: int
    collisions: int
    nofly_violations: int
    energy_used: float
    steps: int


class BenchRow(BaseModel):
    """One measured row of the swarm-size benchmark."""
    swarm_size: int = Field(ge=1)
    computation_ms: float
    comm_kb_total: float
    comm_kb_per_pair: Dict[str, float]
    rounds: int
    seed: int
    comm_bytes: int = 0


class ScenarioReport(BaseModel):
    """Outcome of one scenario run."""
    scenario: str
    mode: str
    commands: List[str]
    scripted: List[str]
    similarity: float
    formation: FormationReport
    reward: float
    comm_kb: float = 0.0
    created_at: datetime = Field(default_factory=datetime.utcnow)


class ErrorProfile(BaseModel):
    """Tabulated divergence between an exact function and its approximation."""
    grid: List[float]
    exact: List[float]
    approx: List[float]
    abs_error: List[float]
    rel_error: List[float]
    max_error: float
    mean_error: float
    argmax: float
    max_rel_error: float
