"""
Database location for the run ledger.
Relative SQLite paths resolve against the project root so the CLI and the
workflows write to the same file regardless of the working directory.
"""

import logging
import os
from pathlib import Path
from typing import Optional

logger = logging.getLogger(__name__)

PROJECT_ROOT = Path(__file__).parent.parent.parent.resolve()
DEFAULT_DB_PATH = PROJECT_ROOT / "local.db"
SQLITE_PREFIX = "sqlite:///"


def get_database_url(db_path: Optional[str] = None) -> str:
    """SQLite URL for ``db_path`` (default: local.db in the project root), always absolute."""
    if db_path is None:
        db_path = str(DEFAULT_DB_PATH)
    elif not os.path.isabs(db_path):
        db_path = str(PROJECT_ROOT / db_path)
    return f"{SQLITE_PREFIX}{db_path}"


def resolve_database_url(db_url: Optional[str] = None) -> str:
    """Normalize a configured URL; non-SQLite and in-memory URLs pass through unchanged."""
    if not db_url:
        return get_database_url()
    if not db_url.startswith(SQLITE_PREFIX):
        return db_url
    path = db_url[len(SQLITE_PREFIX):]
    if not path or path == ":memory:":
        return db_url
    url = get_database_url(path)
    parent = Path(url[len(SQLITE_PREFIX):]).parent
    if not parent.exists():
        logger.warning(f"Database directory {parent} does not exist; creating it")
        parent.mkdir(parents=True, exist_ok=True)
    return url
