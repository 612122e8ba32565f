"""Configuration management using Pydantic Settings."""

from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

from .core.types import (
    AdderKind, FixedPointConfig, GeluMode, ModelConfig, MulBackend, SessionConfig, TransportKind,
)

TRANSPORTS = {"local": TransportKind.IN_PROCESS, "tcp": TransportKind.TCP}
GELU_MODES = {"paper": GeluMode.PIECEWISE, "piecewise": GeluMode.PIECEWISE, "exact": GeluMode.EXACT_REFERENCE}


def parse_endpoint(endpoint: str) -> tuple:
    """'host:port' -> (host, port)."""
    host, _, port = endpoint.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected host:port, got '{endpoint}'")
    return host, int(port)


class Settings(BaseSettings):
    """Application settings."""
    model_config = SettingsConfigDict(env_prefix="SWARM_", env_file=".env", env_file_encoding="utf-8",
                                      extra="ignore")

    # Database
    db_url: str = "sqlite:///./local.db"

    # Fixed point and model
    fractional_bits: int = Field(default=16, ge=8, le=32)
    temperature: float = Field(default=1.0, gt=0)
    gelu: str = Field(default="paper", pattern="^(paper|piecewise|exact)$")
    model_path: Optional[str] = None

    # Session
    transport: str = Field(default="local", pattern="^(local|tcp)$")
    listen: str = "127.0.0.1:47000"
    connect: Optional[str] = None
    seed: int = 7
    latency_ms: float = Field(default=0.0, ge=0)
    max_frame_bytes: int = Field(default=256 * 1024 * 1024, ge=16)
    mul_backend: MulBackend = MulBackend.REPLICATED
    adder: AdderKind = AdderKind.RIPPLE

    # Swarm
    v_max: float = Field(default=15.0, gt=0)

    # Logging
    log_level: str = "INFO"

    def model_settings(self) -> ModelConfig:
        return ModelConfig(temperature=self.temperature, gelu_mode=GELU_MODES[self.gelu])

    def session_config(self, seed: Optional[int] = None) -> SessionConfig:
        host, port = parse_endpoint(self.listen)
        connect_host = parse_endpoint(self.connect)[0] if self.connect else None
        return SessionConfig(
            transport=TRANSPORTS[self.transport],
            seed=self.seed if seed is None else seed,
            fixed_point=FixedPointConfig(fractional_bits=self.fractional_bits),
            mul_backend=self.mul_backend,
            adder=self.adder,
            latency_ms=self.latency_ms,
            max_frame_bytes=self.max_frame_bytes,
            host=host,
            connect_host=connect_host,
            base_port=port,
        )


# Global settings instance
settings = Settings()
