from .container import SpatialTemporalSeries, load_container, meta_path_for, save_container, save_csv
from .metrics import horizon_metrics, metrics, write_metrics_csv
from .pipeline import (
    DATASET_SPLITS,
    Scaler,
    WindowedSamples,
    format_increment,
    inject_gaussian_noise,
    make_windows,
    relative_increment,
    split,
    split_bounds,
)
from .synthetic import AdjacencySchedule, synthesize
