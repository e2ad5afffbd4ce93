from functools import lru_cache

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process settings loaded from environment variables with LEVYPERRON_ prefix."""

    # Logging
    log_level: str = "INFO"
    log_json: bool = False
    # Workers for parallel evaluation (annuli, probes, Jacobi chunks)
    threads: int = 1
    # Outputs
    output_dir: str = "out"

    model_config = SettingsConfigDict(env_prefix="LEVYPERRON_", env_file=".env")


@lru_cache
def get_settings() -> Settings:
    """Return cached settings instance."""
    return Settings()
