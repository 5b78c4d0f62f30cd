"""
Flat tensor layout shared by parameter bundles and pyramid replays.

A document is JSON:
    {"format": "como-tensors", "version": 1,
     "tensors": [{"name": "...", "shape": [..], "values": [..row-major..]}, ...]}
"""

import logging
from pathlib import Path
from typing import Dict, List, Literal, Union
import numpy as np
from pydantic import BaseModel, ValidationError, model_validator

from services.errors import ConfigError, DimensionError
from services.fusion import PyramidSet

logger = logging.getLogger("serialization")

class TensorRecord(BaseModel):
    name: str
    shape: List[int]
    values: List[float]

    @model_validator(mode="after")
    def size_matches(self):
        if any(d < 0 for d in self.shape):
            raise ValueError(f"{self.name}: negative dimension in shape {self.shape}")
        if int(np.prod(self.shape, dtype=np.int64)) != len(self.values):
            raise ValueError(f"{self.name}: {len(self.values)} values do not fill shape {self.shape}")
        return self

    def to_array(self) -> np.ndarray:
        return np.array(self.values, dtype=np.float64).reshape(self.shape)

class TensorBundle(BaseModel):
    format: Literal["como-tensors"] = "como-tensors"
    version: Literal[1] = 1
    tensors: List[TensorRecord]

def to_bundle(tensors: Dict[str, np.ndarray]) -> TensorBundle:
    records = []
    for name, value in tensors.items():
        arr = np.asarray(value, dtype=np.float64)
        records.append(TensorRecord(name=name, shape=list(arr.shape), values=arr.ravel().tolist()))
    return TensorBundle(tensors=records)

def from_bundle(bundle: TensorBundle) -> Dict[str, np.ndarray]:
    out = {}
    for record in bundle.tensors:
        if record.name in out:
            raise DimensionError(f"duplicate tensor name {record.name}")
        out[record.name] = record.to_array()
    return out

def save_tensors(path: Union[str, Path], tensors: Dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_bundle(tensors).model_dump_json(), encoding="utf-8")
    logger.info(f"Wrote {len(tensors)} tensors to {path}")
    return path

def load_tensors(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read tensor file {path}: {e.strerror}") from e
    try:
        bundle = TensorBundle.model_validate_json(text)
    except ValidationError as e:
        error = e.errors()[0]
        field = ".".join(str(p) for p in error["loc"])
        raise ConfigError(error["msg"], field) from e
    return from_bundle(bundle)

def save_pyramid(path: Union[str, Path], pyramid: PyramidSet) -> Path:
    return save_tensors(path, pyramid.maps())

def load_pyramid(path: Union[str, Path]) -> PyramidSet:
    tensors = load_tensors(path)
    missing = [f"{s}_{m}" for s in ("s3", "s4", "s5") for m in ("rgb", "ir") if f"{s}_{m}" not in tensors]
    if missing:
        raise ConfigError(f"pyramid file lacks {', '.join(missing)}", "tensors")
    known = {k: v for k, v in tensors.items() if k in PyramidSet.model_fields}
    return PyramidSet(**known)
