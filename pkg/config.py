import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union
from dotenv import load_dotenv
from pydantic import Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from models import RunConfig
from services.errors import ConfigError

# Load environment variables
load_dotenv(dotenv_path=".env", override=False)

logger = logging.getLogger("config")

class Settings(BaseSettings):
    """Process-level settings. Only the report directory comes from the environment."""
    model_config = SettingsConfigDict(env_prefix="COMO_", env_file=".env", env_file_encoding="utf-8",
                                      extra="ignore")

    OUTPUT_DIR: Path = Field(default=Path("./reports"))

    @field_validator("OUTPUT_DIR", mode="before")
    def ensure_output_dir_exists(cls, v: Union[str, Path]) -> Path:
        Path(v).mkdir(parents=True, exist_ok=True)
        return Path(v)

def get_settings() -> Settings:
    return Settings()

def _field_path(loc) -> str:
    return ".".join(str(p) for p in loc)

def load_run_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Build a RunConfig from an optional JSON file plus command-line overrides.
    Every failure becomes a ConfigError naming the offending field.
    """
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as e:
            logger.error(f"Cannot read config file {path}: {e}")
            raise ConfigError(f"cannot read {path}: {e.strerror}", "config") from e
        except json.JSONDecodeError as e:
            logger.error(f"Config file {path} is not valid JSON: {e}")
            raise ConfigError(f"invalid JSON at line {e.lineno}: {e.msg}", "config") from e
        if not isinstance(data, dict):
            raise ConfigError("top level must be a JSON object", "config")
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as e:
        error = e.errors()[0]
        field = _field_path(error["loc"])
        logger.error(f"Invalid configuration at {field or '<root>'}: {error['msg']}")
        raise ConfigError(error["msg"], field) from e
    logger.debug(f"Loaded configuration (seed {cfg.seed}, image {cfg.image_size})")
    return cfg
