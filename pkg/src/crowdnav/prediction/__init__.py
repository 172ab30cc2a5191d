from .features import (
    FEATURE_NAMES,
    HORIZON,
    N_FEATURES,
    N_TARGETS,
    build_samples,
    extract_features,
    extract_features_batch,
    split_by_trajectory,
    trajectory_windows,
)
from .forecast import (
    BaselinePredictor,
    ExternalPredictor,
    ForestPredictor,
    OccupancyForecast,
    PerfectPredictor,
    PersistencePredictor,
    Predictor,
    baseline_forecast,
    load_external_forecast,
    merge_forecasts,
    save_external_forecast,
    targets_to_forecast,
)
from .forest import ForestParams, RegressionForest, RegressionTree, fit_forest, forest_predict
from .metrics import nmse
from .volume import (
    DisplacementVolume,
    decode_displacements,
    displacement_vector,
    encode_displacement_volume,
    encode_scene,
)
