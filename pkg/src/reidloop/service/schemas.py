"""Pydantic request/response models for the annotation service API."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class CreateSessionRequest(BaseModel):
    manifest: str = Field(description="Path to the dataset manifest JSON")
    config: dict = Field(default_factory=dict, description="AdaptationConfig overrides")
    session_id: Optional[str] = Field(default=None,
                                      description="Reopen an existing session by id")


class CreateSessionResponse(BaseModel):
    session_id: str
    status: str
    resumed: bool = False


class SessionSummary(BaseModel):
    session_id: str
    status: str
    dataset: str
    batches_consumed: int
    num_batches: int


class ServiceInfo(BaseModel):
    service: str
    version: str
    sessions: list[SessionSummary]


class TaskModel(BaseModel):
    task_id: str
    batch: int
    probe_id: str
    gallery_id: str
    state: Literal["pending", "labeled", "skipped"]
    label: Optional[int] = None
    probe_image_url: Optional[str] = None
    gallery_image_url: Optional[str] = None
    probe_feature: Optional[list[float]] = None
    gallery_feature: Optional[list[float]] = None


class LabelRequest(BaseModel):
    label: Optional[Literal[-1, 1]] = None
    skip: bool = False
    source: Literal["human", "simulated-noisy"] = "human"


class LabelResponse(BaseModel):
    task: TaskModel
    batch_pending: int


class BatchProgress(BaseModel):
    batch: int
    total: int
    labeled: int
    skipped: int
    pending: int


class EffortModel(BaseModel):
    labeled_pairs: int
    total_pairs: int
    percent: float


class CheckpointModel(BaseModel):
    batch: int
    labeled_percent: float
    rank1: float
    map: float


class StatusResponse(BaseModel):
    session_id: str
    phase: Literal["ready", "updating"]
    dataset: str
    num_batches: int
    batches_consumed: int
    current_batch: Optional[int]
    batch_progress: Optional[BatchProgress]
    effort: EffortModel
    checkpoints: list[CheckpointModel]


class ReportRow(BaseModel):
    checkpoint: int
    labeled_pairs: int
    labeled_percent: float
    cmc: list[float]
    map: float
    excluded_probes: int = 0


class ReportResponse(BaseModel):
    session_id: str
    rows: list[ReportRow]
