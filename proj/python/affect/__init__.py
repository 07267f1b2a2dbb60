"""Multimodal affect recognition: metrics, post-processing, ensembles and the experiment harness."""

from ._affect import (
    ConfigError,
    Corpus,
    DegenerateInput,
    FeatureBundle,
    FormatError,
    LabelTrack,
    MetricReport,
    PredictionTrack,
    Track,
    ccc,
    class_count,
    class_names,
    evaluate,
    evaluate_many,
    format_real,
    fuse,
    gaussian_smooth,
    parse_track,
    partition_backgrounds,
    pearson,
    read_bundle,
    read_corpus,
    read_labels,
    read_predictions,
    replace_missing_faces,
    resolved_config,
    run_experiment,
    smooth_track,
    split_folds,
    synthetic_corpus,
    track_name,
    vote,
    write_bundle,
    write_corpus,
    write_labels,
    write_predictions,
)

__all__ = [name for name in dir() if not name.startswith("_")]
