"""
Equal Recourse - Report Writer
Asynchronous persistence of experiment reports (JSON summary + raw CSV records)
"""

import asyncio
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import aiofiles
import pandas as pd

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


async def write_json(path: PathLike, payload: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    async with aiofiles.open(path, 'w') as f:
        await f.write(json.dumps(payload, indent=2, sort_keys=False))
    return path


async def write_records_csv(path: PathLike, records: List[Dict[str, Any]], columns: List[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame.from_records(records, columns=columns)
    async with aiofiles.open(path, 'w') as f:
        await f.write(frame.to_csv(index=False, float_format="%.17g"))
    return path


async def save_report(
    payload: Dict[str, Any], records: List[Dict[str, Any]], columns: List[str], json_path: PathLike, csv_path: PathLike
) -> Tuple[Path, Path]:
    """Write both report files concurrently"""
    results = await asyncio.gather(
        write_json(json_path, payload),
        write_records_csv(csv_path, records, columns),
        return_exceptions=True,
    )
    for result in results:
        if isinstance(result, Exception):
            logger.error(f"❌ Failed to write report file: {result}")
            raise result
    logger.info(f"💾 Report written to {results[0]} and {results[1]}")
    return results[0], results[1]


def csv_path_for(json_path: PathLike) -> Path:
    """records CSV sits next to the JSON report: report.json -> report.records.csv"""
    json_path = Path(json_path)
    return json_path.with_name(f"{json_path.stem}.records.csv")
