from pydantic_settings import BaseSettings, SettingsConfigDict
from dotenv import dotenv_values
from typing import Any, Dict, List, Optional
import os


class Settings(BaseSettings):
    # App Configuration
    app_name: str = "Discharge Summary Toolkit"
    app_version: str = "1.0.0"
    debug: bool = False
    log_level: str = "INFO"
    allowed_origins: List[str] = ["*"]

    # Note structure
    header_lexicon_path: Optional[str] = None
    context_separator: str = "\n\n"

    # Token budgets
    budget_percentile: float = 0.85
    budget_multiple: int = 256
    context_truncation: str = "left"
    target_truncation: str = "right"
    tokenizer_path: Optional[str] = None

    # Decoding
    max_new_tokens: int = 256
    beam_width: int = 4
    nucleus_p: float = 0.9
    contrastive_k: int = 6
    contrastive_alpha: float = 0.6
    length_penalty: float = 1.0
    seed: int = 0

    # Adapter merging
    lora_rank: int = 64
    lora_alpha: int = 16
    ties_density: float = 0.5
    ties_lambda: float = 1.0

    # External scorer / provider processes
    scorer_cmd: str = os.getenv("DISCHARGEKIT_SCORER_CMD", "")
    provider_cmd: str = os.getenv("DISCHARGEKIT_PROVIDER_CMD", "")

    provider_timeout: float = 5.0

    # Runtime
    jobs: int = 1

    model_config = SettingsConfigDict(
        env_prefix="DISCHARGEKIT_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    def with_overrides(self, overrides: Dict[str, Any]) -> "Settings":
        """Return a copy with the given (already validated) field values"""
        known = {k.lower(): v for k, v in overrides.items() if v is not None}
        known = {k: v for k, v in known.items() if k in type(self).model_fields}
        return self.model_validate({**self.model_dump(), **known})

    def update_from(self, other: "Settings") -> None:
        """Copy every field of other onto this instance in place"""
        for name in type(self).model_fields:
            setattr(self, name, getattr(other, name))


def read_config_file(path: str) -> Dict[str, str]:
    """Read a KEY=VALUE config file; keys are Settings field names"""
    values = dotenv_values(path)
    return {k.lower(): v for k, v in values.items() if v is not None}


def load_settings(config_path: Optional[str] = None, **overrides: Any) -> Settings:
    """Settings from environment, then config file, then explicit overrides"""
    base = Settings()
    file_values = read_config_file(config_path) if config_path else {}
    return base.with_overrides({**file_values, **overrides})


# Create settings instance
settings = Settings()
