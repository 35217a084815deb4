import hashlib
import json
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from . import config

SCHEMA_VERSION = 1

ROUTING_METHODS = (
    "OPT",
    "RR-tree",
    "RR-bitwise",
    "RR+",
    "DeRR-bitwise",
    "DeRR-tree",
    "DeRR+",
    "independent",
)

COVERAGE_METHODS = (
    "LP",
    "LP-once",
    "best-of-k",
    "derand",
    "gradient",
    "greedy",
    "bound",
    "fixed",
    "hybrid",
)


def canonical_json(model: BaseModel) -> str:
    """Key-sorted, whitespace-free JSON of a model; stable input for hashing."""
    return json.dumps(model.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def content_hash(model: BaseModel) -> str:
    return hashlib.sha256(canonical_json(model).encode("utf-8")).hexdigest()


class InstanceDocument(BaseModel):
    """Canonical max-coverage instance file."""

    kind: Literal["coverage"] = "coverage"
    name: str = ""
    m: int = Field(ge=0)
    n: int = Field(ge=0)
    budget: float = Field(gt=0)
    costs: List[float]
    weights: List[float]
    sets: List[List[int]]
    points: Optional[List[Tuple[float, float]]] = None

    @model_validator(mode="after")
    def check_shapes(self):
        if len(self.costs) != self.n or len(self.sets) != self.n:
            raise ValueError("costs and sets must have n entries")
        if len(self.weights) != self.m:
            raise ValueError("weights must have m entries")
        if any(c <= 0 for c in self.costs):
            raise ValueError("costs must be positive")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be non-negative")
        for j, s in enumerate(self.sets):
            if any(i < 0 or i >= self.m for i in s):
                raise ValueError(f"set {j} references an element out of range")
        if self.points is not None and len(self.points) != self.m:
            raise ValueError("points must have m entries")
        return self


class RequestModel(BaseModel):
    source: Tuple[int, int]
    target: Tuple[int, int]
    demand: int = Field(ge=1)

    @model_validator(mode="after")
    def check_endpoints(self):
        if self.source == self.target:
            raise ValueError("source and target must differ")
        return self


class RoutingReplay(BaseModel):
    """Everything needed to rebuild one routing run."""

    kind: Literal["routing"] = "routing"
    width: int = Field(ge=1)
    height: int = Field(ge=1)
    demand_mode: Literal["fixed3", "uniform1to5"]
    seed: int
    requests: List[RequestModel]

    @model_validator(mode="after")
    def check_inside(self):
        for r in self.requests:
            for row, col in (r.source, r.target):
                if not (0 <= row < self.height and 0 <= col < self.width):
                    raise ValueError(f"endpoint {(row, col)} outside the grid")
        return self


class BenchConfig(BaseModel):
    """Experiment settings: env defaults, then an optional TOML file, then CLI flags."""

    seeds: int = Field(default=config.SEEDS, ge=1)
    grids: List[Tuple[int, int]] = [(5, 5)]
    ks: List[int] = [10]
    demands: Literal["fixed3", "uniform1to5"] = "fixed3"
    delta: float = Field(default=config.SLACK_DELTA, ge=0)
    budgets: List[float] = []
    rho_grid: List[float] = []
    methods: Optional[List[str]] = None
    ilp: Literal["internal", "external", "off"] = config.ILP_MODE
    out: str = config.OUT_DIR
    seed_base: int = config.SEED_BASE
    workers: int = Field(default=config.WORKERS, ge=1)
    instance: Optional[str] = None
    d: Optional[float] = None
    ells: List[int] = [3, 5]
    best_of_k: int = Field(default=config.BEST_OF_K, ge=1)
    time_limit: float = Field(default=config.ILP_TIME_LIMIT, gt=0)
    gap_limit: float = Field(default=config.ILP_GAP_LIMIT, ge=0)

    @field_validator("demands", mode="before")
    @classmethod
    def normalize_demands(cls, v):
        return {"u1-5": "uniform1to5", "3": "fixed3"}.get(v, v)

    @field_validator("grids", mode="before")
    @classmethod
    def parse_grids(cls, v):
        if isinstance(v, str):
            v = [v]
        parsed = []
        for g in v:
            if isinstance(g, str):
                w, _, h = g.lower().partition("x")
                g = (int(w), int(h or w))
            parsed.append(tuple(g))
        return parsed

    @field_validator("methods")
    @classmethod
    def non_empty_methods(cls, v):
        if v is not None and len(v) == 0:
            raise ValueError("method list must not be empty")
        return v

    @field_validator("rho_grid")
    @classmethod
    def rho_in_range(cls, v):
        if any(not 0.0 <= r < 1.0 for r in v):
            raise ValueError("rho values must lie in [0, 1)")
        return v
