from easy_geodesics.conf import Settings


class PredictorSettings(Settings):
    GEODESICS_CHECKPOINT_EXTENSION = 'ckpt'
    """
    File extension of saved predictor and correction models.
    """

    GEODESICS_PREDICT_BATCH = 64
    """
    How many patches are pushed through a model at once when assembling a
    predicted momentum field. Only memory use depends on it.
    """


settings = PredictorSettings()
