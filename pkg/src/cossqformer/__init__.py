"""Cos-square re-weighted linear attention and a small air-quality forecaster."""

from .attention import (
    AttentionConfig,
    AttentionOutput,
    DomainError,
    Variant,
    cos_square_attention_linear,
    cos_square_weight,
    cos_weight,
    reweighted_attention_direct,
    softmax_attention,
)
from .data import DataError, SampleRecord, SeriesWindow, haversine_km, power_plant_feature, prepare_windows
from .evaluation import MetricReport, ablate_seq_len, bench_attention, mape, persistence_baseline, rmse
from .losses import LossConfig, hybrid_loss, mse, soft_dtw
from .model import ForecastModel, ModelConfig, build_model, extract_attention, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "AttentionConfig",
    "AttentionOutput",
    "DataError",
    "DomainError",
    "ForecastModel",
    "LossConfig",
    "MetricReport",
    "ModelConfig",
    "SampleRecord",
    "SeriesWindow",
    "Variant",
    "ablate_seq_len",
    "bench_attention",
    "build_model",
    "cos_square_attention_linear",
    "cos_square_weight",
    "cos_weight",
    "extract_attention",
    "haversine_km",
    "hybrid_loss",
    "load_checkpoint",
    "mape",
    "mse",
    "persistence_baseline",
    "power_plant_feature",
    "prepare_windows",
    "reweighted_attention_direct",
    "rmse",
    "save_checkpoint",
    "soft_dtw",
    "softmax_attention",
    "train",
]
