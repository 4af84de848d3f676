# src/ingest/trace_schema.py

from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationInfo, field_validator


class TraceLine(BaseModel):
    """
    Одна строка trace-файла (line-delimited JSON, один пакет на строку).

    Поле src - отправитель пакета. dir - пометка точки съёма, направление
    внутри потока всё равно пересчитывается от инициатора (см. group_flows).
    fid - необязательный идентификатор потока: разводит потоки с одинаковым
    five-tuple в одном файле (например, аугментированные копии).
    """
    model_config = ConfigDict(extra="ignore")

    ts: float = Field(..., description="Секунды от начала трассы")
    src: str
    dst: str
    sp: int = Field(..., ge=0, le=65535)
    dp: int = Field(..., ge=0, le=65535)
    proto: Literal["tcp", "udp"]
    dir: Literal["up", "down"]
    plen: int
    syn: bool = False
    ack: bool = False
    label: Optional[str] = None
    fid: Optional[Union[int, str]] = None

    @field_validator("ts")
    @classmethod
    def _ts_non_negative(cls, v: float) -> float:
        if v < 0:
            raise ValueError("timestamp must be ≥ 0")
        return v

    @field_validator("plen")
    @classmethod
    def _plen_in_range(cls, v: int, info: ValidationInfo) -> int:
        if v < 0:
            raise ValueError("payload_len must be ≥ 0")
        mtu = (info.context or {}).get("mtu")
        if mtu is not None and v > mtu:
            raise ValueError(f"payload_len must be ≤ MTU ({mtu})")
        return v
