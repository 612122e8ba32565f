"""Database store for the run ledger.

Benchmark rows and scenario reports go in through ``record_*``; listings come
back as ORM rows detached from their session.
"""

import logging
import os
from typing import Any, Dict, List, Optional, Sequence
from uuid import uuid4

from sqlalchemy import create_engine, select
from sqlalchemy.orm import sessionmaker

from .database import resolve_database_url
from .models import Base, BenchRun, ScenarioRun
from .types import BenchRow, ScenarioReport

logger = logging.getLogger(__name__)


class Store:
    """Run ledger on SQLAlchemy."""

    def __init__(self, db_url: Optional[str] = None):
        """Initialize the store with a database URL."""
        self.db_url = resolve_database_url(db_url)
        self.engine = create_engine(self.db_url)
        self.SessionLocal = sessionmaker(autocommit=False, autoflush=False, expire_on_commit=False,
                                         bind=self.engine)
        logger.debug(f"Run ledger at {self.engine.url}")

    @classmethod
    def from_env(cls) -> "Store":
        """Create a store from SWARM_DB_URL (or the default local file)."""
        return cls(os.getenv("SWARM_DB_URL"))

    def create_all(self):
        """Create all database tables."""
        Base.metadata.create_all(bind=self.engine)

    def get_session(self):
        """Get a database session."""
        return self.SessionLocal()

    # -------------------- Benchmarks --------------------
    def record_bench_rows(self, rows: Sequence[BenchRow], transport: str = "in_process",
                          fractional_bits: int = 16, meta: Optional[Dict[str, Any]] = None) -> List[BenchRun]:
        """Store one BenchRun per row under a shared batch id."""
        batch_id = str(uuid4())
        with self.get_session() as session:
            runs = [
                BenchRun(
                    batch_id=batch_id,
                    swarm_size=row.swarm_size,
                    computation_ms=row.computation_ms,
                    comm_kb_total=row.comm_kb_total,
                    comm_bytes=row.comm_bytes,
                    rounds=row.rounds,
                    seed=row.seed,
                    transport=transport,
                    fractional_bits=fractional_bits,
                    meta_json={"comm_kb_per_pair": row.comm_kb_per_pair, **(meta or {})},
                )
                for row in rows
            ]
            session.add_all(runs)
            session.commit()
        logger.info(f"Recorded {len(runs)} benchmark rows (batch {batch_id})")
        return runs

    def list_bench_runs(self, batch_id: Optional[str] = None) -> List[BenchRun]:
        with self.get_session() as session:
            query = select(BenchRun).order_by(BenchRun.created_at, BenchRun.swarm_size)
            if batch_id:
                query = query.where(BenchRun.batch_id == batch_id)
            return list(session.scalars(query))

    # -------------------- Scenarios --------------------
    def record_scenario(self, report: ScenarioReport, seed: int = 0) -> ScenarioRun:
        with self.get_session() as session:
            run = ScenarioRun(
                scenario=report.scenario,
                mode=report.mode,
                seed=seed,
                similarity=report.similarity,
                reward=report.reward,
                trajectory_error=report.formation.trajectory_error,
                formation_rms=report.formation.formation_rms,
                avoidance_success=report.formation.avoidance_success,
                comm_kb=report.comm_kb,
                meta_json={"commands": report.commands, "scripted": report.scripted,
                           "formation": report.formation.model_dump()},
                created_at=report.created_at,
            )
            session.add(run)
            session.commit()
        logger.info(f"Recorded scenario run '{report.scenario}' ({report.mode})")
        return run

    def list_scenario_runs(self, scenario: Optional[str] = None) -> List[ScenarioRun]:
        with self.get_session() as session:
            query = select(ScenarioRun).order_by(ScenarioRun.created_at)
            if scenario:
                query = query.where(ScenarioRun.scenario == scenario)
            return list(session.scalars(query))
