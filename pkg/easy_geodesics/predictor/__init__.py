"""
Fast predictive registration: a patch-wise network predicting the initial
momentum of an image pair, and an optional correction network predicting
the residual momentum from the source and the warped-back target.
"""
from easy_geodesics.predictor.network import (  # NOQA
    NetConfig, PredictorModel, forward, load_model, save_model)
from easy_geodesics.predictor.patches import (  # NOQA
    PatchDataset, assemble, extract_patches)
from easy_geodesics.predictor.training import (  # NOQA
    TrainConfig, make_correction_dataset, predict_momentum,
    predict_with_correction, train)
