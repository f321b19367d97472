"""Request and response models for the HTTP service.

Requests carry the same flat dotted keys as config files (as a string
-> string mapping), optionally on top of a named preset, so the
service, CLI and file formats share one scenario vocabulary.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class ScenarioRequest(BaseModel):
    """A scenario reference: optional preset plus config overrides."""

    preset: str | None = None
    config: dict[str, str] = Field(default_factory=dict)
    seed: int | None = None
    paths: int | None = None


class KKTModel(BaseModel):
    stationarity: float
    equality: float
    bound_violation: float
    complementarity: float


class CostBreakdownModel(BaseModel):
    spread_bps: float
    instantaneous_bps: float
    transient_bps: float
    permanent_bps: float
    total_bps: float


class SolveResponse(BaseModel):
    status: str
    iterations: int
    objective_dollar: float
    expected_is_bps: float
    stdev_is_bps: float
    variance_is_dollar: float
    components: CostBreakdownModel
    kkt: KKTModel
    minute: list[float]
    d_n: list[float]
    h_n: list[float]
    shares: list[float]
    x_cum: list[float]
    max_pov: float
    v1_shares: float
    required_pov: float
    execution_centroid_min: float
    front_loading_index: float
    mc_clipped_eigenvalues: int
    mc_clipped_mass: float


class OrderRow(BaseModel):
    trade_id: str
    x1: float
    side: int
    p0: float
    is_bps: float


class FillRow(BaseModel):
    trade_id: str
    minute: float
    d_n: float
    h_n: float


class CalibrateRequest(BaseModel):
    orders: list[OrderRow]
    fills: list[FillRow]
    config: dict[str, str] = Field(default_factory=dict)


class CoefficientEstimate(BaseModel):
    coefficient: str
    estimate: float
    std_error: float


class ExcludedTrade(BaseModel):
    trade_id: str
    reason: str


class CalibrateResponse(BaseModel):
    coefficients: list[CoefficientEstimate]
    n_trades_used: int
    r_squared: float
    excluded: list[ExcludedTrade]


class EstimateKernelResponse(BaseModel):
    model: str
    paths: int
    substeps: int
    seed: int
    intervals: int
    values: list[list[float]]
    clipped_eigenvalues: int
    clipped_mass: float
    min_eigenvalue: float
    max_eigenvalue: float


class CheckRequest(BaseModel):
    """Check a scenario (preset/config) or a raw kernel matrix."""

    preset: str | None = None
    config: dict[str, str] = Field(default_factory=dict)
    kernel: list[list[float]] | None = None
    tol: float = 1e-8
    seed: int | None = None
    paths: int | None = None


class CheckItem(BaseModel):
    name: str
    passed: bool
    detail: str


class CheckResponse(BaseModel):
    passed: bool
    infeasible: bool
    checks: list[CheckItem]


class PresetsResponse(BaseModel):
    presets: dict[str, dict[str, str]]


class HealthResponse(BaseModel):
    status: str
    version: str
