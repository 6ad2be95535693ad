"""Multi-layer feature fusion for pre-trained audio models."""

from ._layerfuse import (
    ConfigError,
    DataError,
    IncompleteError,
    PoolGeometry,
    check_manifest,
    compose,
    concat_features,
    evaluate,
    flatten_cf,
    load_manifest,
    load_tensor,
    maxpool_time,
    mean_plus_max_time,
    plan_pool,
    select_layers,
    time_align,
    write_tensor,
)

__all__ = [
    "ConfigError",
    "DataError",
    "IncompleteError",
    "PoolGeometry",
    "check_manifest",
    "compose",
    "concat_features",
    "evaluate",
    "flatten_cf",
    "load_manifest",
    "load_tensor",
    "maxpool_time",
    "mean_plus_max_time",
    "plan_pool",
    "select_layers",
    "time_align",
    "write_tensor",
]
