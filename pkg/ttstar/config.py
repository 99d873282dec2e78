import os
from typing import Optional

from pydantic import BaseModel, ConfigDict, field_validator
from pydantic_settings import BaseSettings
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


class Settings(BaseSettings):
    """
    Runtime settings loaded from environment variables.

    Only log routing is configurable here. Numerical parameters are passed
    explicitly so results never depend on the environment.
    """
    # Logging
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    LOG_FILE: Optional[str] = os.getenv("LOG_FILE", "logs/ttstar.log")
    LOG_ROTATION: str = os.getenv("LOG_ROTATION", "500 MB")

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"


# Create a global settings object
settings = Settings()


class LoopConfig(BaseModel):
    """
    Truncation and tolerance parameters shared by the loop arithmetic.

    Attributes:
        sample_count: Number of equispaced circle samples (power of two)
        degree: Truncation half-width of the Laurent window
        tol_det: Smallest admissible |det| at a sample
        tol_residual: Absolute residual tolerance on max matrix norms
    """
    model_config = ConfigDict(frozen=True)

    sample_count: int = 256
    degree: int = 16
    tol_det: float = 1e-10
    tol_residual: float = 1e-10

    @field_validator("sample_count")
    @classmethod
    def _power_of_two(cls, value: int) -> int:
        if value < 2 or value & (value - 1):
            raise ValueError(f"sample_count must be a power of two, got {value}")
        return value

    @field_validator("degree")
    @classmethod
    def _positive_degree(cls, value: int) -> int:
        if value < 1:
            raise ValueError(f"degree must be at least 1, got {value}")
        return value

    @field_validator("tol_det", "tol_residual")
    @classmethod
    def _positive_tolerance(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("tolerances must be positive")
        return value

    def with_degree(self, degree: int) -> "LoopConfig":
        """Copy with a new degree and a sample count large enough to carry it."""
        samples = self.sample_count
        while samples < 8 * degree:
            samples *= 2
        return LoopConfig(
            sample_count=samples,
            degree=degree,
            tol_det=self.tol_det,
            tol_residual=self.tol_residual,
        )


DEFAULT_LOOP_CONFIG = LoopConfig()
