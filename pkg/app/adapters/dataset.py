"""Sensor/command pair datasets: one UTF-8 line per record, sensor text TAB command text."""

import logging
from pathlib import Path
from typing import List, Tuple, Union

from ..core.errors import FormatError

logger = logging.getLogger(__name__)

Record = Tuple[str, str]


def load_dataset(path: Union[str, Path]) -> List[Record]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise FormatError(f"cannot read dataset {path}: {exc}", field="path") from exc
    records = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError(f"{path}:{number}: expected 'sensor<TAB>command', got {len(parts)} fields",
                              field=f"line {number}")
        records.append((parts[0].strip(), parts[1].strip()))
    logger.info(f"Loaded {len(records)} records from {path}")
    return records


def save_dataset(records: List[Record], path: Union[str, Path]) -> Path:
    path = Path(path)
    for sensor, command in records:
        if "\t" in sensor or "\n" in sensor or "\t" in command or "\n" in command:
            raise FormatError("record fields may not contain tabs or newlines", field="record")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{s}\t{c}\n" for s, c in records), encoding="utf-8")
    return path
