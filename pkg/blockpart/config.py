"""
SUITE CONFIGURATION
JSON configuration file validated with pydantic, with environment overrides for paths.
"""

import json
import logging
import os
from pathlib import Path
from typing import List, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator

from .errors import InputError
from .model import ModelConfig
from .pretrain import CalibrationTarget, TrainHyper
from .refine import OOT_SECONDS, RefinerConfig
from .sbmgen import ParamRanges

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path("config") / "blockpart_config.json"
PATH_ENV = {
    "data_dir": "BLOCKPART_DATA_DIR",
    "checkpoint": "BLOCKPART_CHECKPOINT",
    "report_dir": "BLOCKPART_REPORT_DIR",
}


class GeneratorSection(BaseModel):
    corpus_size: int = Field(100, ge=1)
    n_range: List[int] = [200, 5000]
    ratio_range: List[float] = [1.5, 5.0]
    heterogeneity_range: List[float] = [1.0, 4.0]
    avg_degree_range: List[float] = [8.0, 96.0]
    degree_exponent_range: List[float] = [1.8, 3.0]
    max_degree_ratio_range: List[float] = [10.0, 30.0]
    density_cap: float = Field(0.05, gt=0)

    @field_validator("n_range", "ratio_range", "heterogeneity_range", "avg_degree_range",
                     "degree_exponent_range", "max_degree_ratio_range")
    @classmethod
    def _interval(cls, value):
        if len(value) != 2 or value[0] > value[1]:
            raise ValueError(f"expected [lo, hi] with lo <= hi, got {value}")
        return value

    def to_ranges(self) -> ParamRanges:
        return ParamRanges(
            n=tuple(self.n_range),
            within_between_ratio=tuple(self.ratio_range),
            size_heterogeneity=tuple(self.heterogeneity_range),
            avg_degree=tuple(self.avg_degree_range),
            degree_exponent=tuple(self.degree_exponent_range),
            max_degree_ratio=tuple(self.max_degree_ratio_range),
            density_cap=self.density_cap,
        )


class ModelSection(BaseModel):
    k: int = Field(32, ge=1)
    feature_layers: int = Field(2, ge=1)
    propagation_depth: int = Field(2, ge=1)
    classifier_layers: int = Field(4, ge=1)
    activation: str = "relu"
    precision: str = "float64"

    def to_config(self, projection_seed: int) -> ModelConfig:
        return ModelConfig(k=self.k, feature_layers=self.feature_layers,
                           propagation_depth=self.propagation_depth,
                           classifier_layers=self.classifier_layers,
                           projection_seed=projection_seed, activation=self.activation)


class TrainSection(BaseModel):
    epochs: int = Field(50, ge=1)
    learning_rate: float = Field(1e-3, ge=0)
    neg_ratio: float = Field(1.0, ge=0)
    lambda_mod: float = Field(1.0, ge=0)
    max_edges_per_graph: int = Field(20000, ge=1)
    hard_neg_weight: float = Field(4.0, gt=0)
    jobs: int = Field(1, ge=1)
    # 0 calibrates on the training corpus instead of fresh hardest-setting graphs
    calibration_graphs: int = Field(3, ge=0)
    calibration_n: int = Field(2000, ge=2)
    calibration_avg_degree: float = Field(82.0, gt=0)
    calibration_node_ratio: float = Field(0.7, gt=0, le=1)
    calibration_purity: float = Field(0.995, gt=0, le=1)

    def to_hyper(self, seed: int) -> TrainHyper:
        return TrainHyper(epochs=self.epochs, learning_rate=self.learning_rate, neg_ratio=self.neg_ratio,
                          lambda_mod=self.lambda_mod, seed=seed, max_edges_per_graph=self.max_edges_per_graph,
                          hard_neg_weight=self.hard_neg_weight)

    def to_target(self, threshold: float) -> CalibrationTarget:
        return CalibrationTarget(node_ratio=self.calibration_node_ratio, purity=self.calibration_purity,
                                 threshold=threshold)


class RefinerSection(BaseModel):
    kind: str = "builtin"
    max_sweeps: int = Field(50, ge=1)
    min_gain: float = Field(1e-7, ge=0)
    external_cmd_template: Optional[str] = None
    timeout_s: float = Field(OOT_SECONDS, gt=0)

    def to_config(self, seed: int) -> RefinerConfig:
        return RefinerConfig(kind=self.kind, max_sweeps=self.max_sweeps, min_gain=self.min_gain, seed=seed,
                             external_cmd_template=self.external_cmd_template, timeout_s=self.timeout_s)


class BenchSection(BaseModel):
    scales: List[int] = [10000, 50000]
    trials: int = Field(5, ge=1)
    stream_n: int = Field(10000, ge=1)
    stream_steps: int = Field(10, ge=1)
    avg_degree: float = Field(82.0, gt=0)
    threshold: float = Field(0.5, gt=0, lt=1)
    jobs: int = Field(1, ge=1)
    oot_s: float = Field(OOT_SECONDS, gt=0)


class PathsSection(BaseModel):
    data_dir: str = "data"
    checkpoint: str = "checkpoints/blockpart.ckpt"
    report_dir: str = "reports"


class SuiteConfig(BaseModel):
    run_seed: int = 0
    generator: GeneratorSection = Field(default_factory=GeneratorSection)
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)
    refiner: RefinerSection = Field(default_factory=RefinerSection)
    bench: BenchSection = Field(default_factory=BenchSection)
    paths: PathsSection = Field(default_factory=PathsSection)


def apply_env_overrides(config: SuiteConfig) -> SuiteConfig:
    """Replace path settings with ``BLOCKPART_*`` environment variables when set (after loading .env)."""
    load_dotenv()
    overrides = {field: os.environ[var] for field, var in PATH_ENV.items() if os.environ.get(var)}
    if not overrides:
        return config
    logger.debug(f"Path overrides from environment: {sorted(overrides)}")
    paths = config.paths.model_copy(update=overrides)
    return config.model_copy(update={"paths": paths})


def load_config(path: Optional[Union[str, Path]] = None) -> SuiteConfig:
    """Load the suite configuration; a missing file falls back to defaults with a warning."""
    path = Path(path) if path is not None else DEFAULT_CONFIG_PATH
    if not path.exists():
        logger.warning(f"Configuration file not found at {path}. Using default configuration.")
        return apply_env_overrides(SuiteConfig())
    try:
        with open(path, "r") as f:
            raw = json.load(f)
        config = SuiteConfig.model_validate(raw)
    except json.JSONDecodeError as e:
        raise InputError(f"error decoding JSON from {path}: {e}") from e
    except ValidationError as e:
        raise InputError(f"invalid configuration in {path}: {e}") from e
    return apply_env_overrides(config)


def save_config(config: SuiteConfig, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(config.model_dump(), f, indent=2)
