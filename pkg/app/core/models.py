"""SQLAlchemy 2.x typed ORM models for the run ledger.

Every benchmark row and every scenario report can be recorded so that runs
with different seeds, transports or fixed-point settings stay comparable.
"""

from __future__ import annotations
from datetime import datetime
from typing import Optional
from uuid import uuid4

from sqlalchemy import CheckConstraint, DateTime, Float, Index, Integer, String
from sqlalchemy import JSON
from sqlalchemy.orm import DeclarativeBase, Mapped, mapped_column


class Base(DeclarativeBase):
    """Base class for all ORM models."""
    pass


class BenchRun(Base):
    """One measured swarm-size row of a benchmark run."""
    __tablename__ = "bench_runs"

    id: Mapped[str] = mapped_column(String(36), primary_key=True, default=lambda: str(uuid4()))
    batch_id: Mapped[str] = mapped_column(String(36), nullable=False)
    swarm_size: Mapped[int] = mapped_column(Integer, nullable=False)
    computation_ms: Mapped[float] = mapped_column(Float, nullable=False)
    comm_kb_total: Mapped[float] = mapped_column(Float, nullable=False)
    comm_bytes: Mapped[int] = mapped_column(Integer, nullable=False, default=0)
    rounds: Mapped[int] = mapped_column(Integer, nullable=False)
    seed: Mapped[int] = mapped_column(Integer, nullable=False)
    transport: Mapped[str] = mapped_column(String(20), nullable=False, default="in_process")
    fractional_bits: Mapped[int] = mapped_column(Integer, nullable=False, default=16)
    meta_json: Mapped[dict] = mapped_column(JSON, default=dict, nullable=False)
    created_at: Mapped[datetime] = mapped_column(DateTime(timezone=True), default=datetime.utcnow, nullable=False)

    __table_args__ = (
        CheckConstraint("swarm_size >= 1", name="ck_bench_swarm_size"),
        Index("ix_bench_batch", "batch_id"),
    )


class ScenarioRun(Base):
    """Outcome of one scenario execution."""
    __tablename__ = "scenario_runs"

    id: Mapped[str] = mapped_column(String(36), primary_key=True, default=lambda: str(uuid4()))
    scenario: Mapped[str] = mapped_column(String(200), nullable=False)
    mode: Mapped[str] = mapped_column(String(20), nullable=False)
    seed: Mapped[int] = mapped_column(Integer, nullable=False, default=0)
    similarity: Mapped[float] = mapped_column(Float, nullable=False)
    reward: Mapped[float] = mapped_column(Float, nullable=False)
    trajectory_error: Mapped[float] = mapped_column(Float, nullable=False)
    formation_rms: Mapped[float] = mapped_column(Float, nullable=False)
    avoidance_success: Mapped[float] = mapped_column(Float, nullable=False)
    comm_kb: Mapped[Optional[float]] = mapped_column(Float)
    meta_json: Mapped[dict] = mapped_column(JSON, default=dict, nullable=False)
    created_at: Mapped[datetime] = mapped_column(DateTime(timezone=True), default=datetime.utcnow, nullable=False)

    __table_args__ = (
        CheckConstraint("mode IN ('encrypted', 'plaintext', 'scripted')", name="ck_scenario_mode"),
        Index("ix_scenario_name", "scenario"),
    )
