import hashlib
import logging
from pathlib import Path
from typing import Iterable, Optional, Union
import numpy as np
from pydantic import BaseModel

logger = logging.getLogger("reports")

def determinism_hash(arrays: Iterable[np.ndarray]) -> str:
    """sha256 over the shapes and little-endian float64 bytes of every array, in order."""
    digest = hashlib.sha256()
    for arr in arrays:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        digest.update(str(arr.shape).encode("ascii"))
        digest.update(arr.tobytes())
    return digest.hexdigest()

def write_report(report: BaseModel, path: Optional[Union[str, Path]]) -> Optional[Path]:
    """Write a report model as indented JSON; no-op when path is None."""
    if path is None:
        return None
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"Report written to {path}")
    return path
