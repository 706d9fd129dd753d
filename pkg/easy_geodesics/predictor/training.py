import logging
import time
from dataclasses import asdict, dataclass

import numpy as np

from easy_geodesics import signals
from easy_geodesics.exceptions import (
    DivergenceError, EmptyDatasetError, InvalidFieldError,
    InvalidParameterError)
from easy_geodesics.field import VectorField, check_grids, sample
from easy_geodesics.kernel import KernelParams
from easy_geodesics.predictor.conf import settings
from easy_geodesics.predictor.network import PredictorModel
from easy_geodesics.predictor.patches import (
    PatchDataset, assemble, extract_patches)
from easy_geodesics.shooting import ShootConfig, integrate

logger = logging.getLogger('easy_geodesics.predictor')


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidParameterError("epochs must be at least 1")
        if self.learning_rate <= 0:
            raise InvalidParameterError("learning_rate must be positive")
        if self.batch_size < 1:
            raise InvalidParameterError("batch_size must be at least 1")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise InvalidParameterError("Adam betas must lie in [0, 1)")

    @classmethod
    def from_dict(cls, values=None, **overrides):
        merged = dict(settings.GEODESICS_TRAIN)
        merged.update(values or {})
        merged.update(overrides)
        return cls(
            epochs=int(merged['epochs']),
            learning_rate=float(merged['learning_rate']),
            adam_beta1=float(merged['adam_beta1']),
            adam_beta2=float(merged['adam_beta2']),
            adam_eps=float(merged['adam_eps']),
            batch_size=int(merged['batch_size']),
            seed=int(merged['seed']))

    def as_dict(self):
        return asdict(self)


class Adam:
    """
    The Adam update rule over a model's parameters, updated in place.
    """

    def __init__(self, model, cfg):
        self.model = model
        self.cfg = cfg
        self.step_count = 0
        self.moments = {
            name: (np.zeros_like(array), np.zeros_like(array))
            for name, array in model.parameters()}

    def step(self):
        cfg = self.cfg
        self.step_count += 1
        correction1 = 1 - cfg.adam_beta1 ** self.step_count
        correction2 = 1 - cfg.adam_beta2 ** self.step_count
        grads = dict(self.model.gradients())
        for name, array in self.model.parameters():
            first, second = self.moments[name]
            grad = grads[name]
            first *= cfg.adam_beta1
            first += (1 - cfg.adam_beta1) * grad
            second *= cfg.adam_beta2
            second += (1 - cfg.adam_beta2) * grad ** 2
            array -= cfg.learning_rate * (first / correction1) / (
                np.sqrt(second / correction2) + cfg.adam_eps)


def mse_loss(prediction, label):
    """
    Mean squared error and its gradient with respect to ``prediction``.
    """
    difference = prediction - label
    return float(np.mean(difference ** 2)), 2.0 * difference / difference.size


def train(dataset, net_cfg, train_cfg, model=None):
    """
    Fit a model to a labelled patch dataset by minimising the mean squared
    error with Adam. The per-epoch mean batch losses are kept in
    ``model.fingerprint.losses``.
    """
    if not len(dataset) or not dataset.labelled:
        raise EmptyDatasetError("Training needs a non-empty labelled dataset")
    if model is None:
        model = PredictorModel(net_cfg, seed=train_cfg.seed)
    optimizer = Adam(model, train_cfg)
    rng = np.random.default_rng(train_cfg.seed)
    model.fingerprint.seed = train_cfg.seed
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(len(dataset))
        losses, weights = [], []
        for start in range(0, len(order), train_cfg.batch_size):
            batch = order[start:start + train_cfg.batch_size]
            prediction = model.forward_batch(
                dataset.sources[batch], dataset.targets[batch])
            loss, grad = mse_loss(prediction, dataset.labels[batch])
            if not np.isfinite(loss):
                raise DivergenceError(
                    "Training loss became non-finite in epoch {0}".format(
                        epoch), epoch=epoch)
            model.backward_batch(grad)
            optimizer.step()
            losses.append(loss)
            weights.append(len(batch))
        epoch_loss = float(np.average(losses, weights=weights))
        model.fingerprint.epochs += 1
        model.fingerprint.losses.append(epoch_loss)
        signals.epoch_finished.send(
            sender=model, epoch=epoch, loss=epoch_loss)
    return model


def predict_patches(model, dataset):
    """
    Model output for every patch pair of a dataset.
    """
    batch_size = settings.GEODESICS_PREDICT_BATCH
    outputs = [
        model.forward_batch(
            dataset.sources[start:start + batch_size],
            dataset.targets[start:start + batch_size])
        for start in range(0, len(dataset), batch_size)]
    if not outputs:
        return np.zeros((0, model.net_config.dim) + model.net_config.patch_shape)
    return np.concatenate(outputs)


def _check_model(model, grid):
    if model.net_config.dim != grid.ndim:
        raise InvalidFieldError(
            "A {0}D model cannot predict {1}D momentum".format(
                model.net_config.dim, grid.ndim))


def predict_momentum(model, source, target, mask=None, cfg=None):
    """
    Predict the initial momentum registering ``source`` to ``target`` patch
    by patch; overlapping predictions are averaged and voxels outside every
    kept patch are zero.
    """
    grid = check_grids(source, target, mask)
    _check_model(model, grid)
    cfg = cfg or model.net_config
    dataset = extract_patches(source, target, mask=mask, cfg=cfg)
    predictions = predict_patches(model, dataset)
    return VectorField(grid, assemble(
        predictions, dataset.origins, grid.dims, cfg.patch_size))


def warp_back(target, momentum, shoot_cfg=None, kernel=None):
    """
    The target pulled back toward the source through the forward map of the
    geodesic with initial ``momentum``.
    """
    shoot_cfg = shoot_cfg or ShootConfig.from_dict()
    kernel = kernel or KernelParams.from_dict()
    _, _, phi = integrate(
        momentum.data, momentum.grid, 1.0, shoot_cfg, kernel,
        forward_map=True)
    return type(target)(target.grid, sample(target.data, phi))


def predict_with_correction(pred, corr, source, target, mask=None, cfg=None,
                            shoot_cfg=None, kernel=None):
    """
    Predicted momentum plus the correction predicted from the source and the
    warped-back target.
    """
    if pred.net_config.dim != corr.net_config.dim or (
            pred.net_config.patch_size != corr.net_config.patch_size):
        raise InvalidParameterError(
            "Prediction and correction models differ in geometry")
    predicted = predict_momentum(pred, source, target, mask, cfg)
    warped = warp_back(target, predicted, shoot_cfg, kernel)
    correction = predict_momentum(corr, source, warped, mask, cfg)
    return VectorField(source.grid, predicted.data + correction.data)


def make_correction_dataset(pred, pairs, cfg=None, shoot_cfg=None,
                            kernel=None):
    """
    Patches teaching a correction network the residual of ``pred``.

    ``pairs`` yields ``(source, target, momentum, mask)`` with ground truth
    momentum; inputs are the source and the target warped back by the
    predicted momentum, labels the ground truth minus the prediction.
    """
    cfg = cfg or pred.net_config
    datasets = []
    started = time.perf_counter()
    for source, target, momentum, mask in pairs:
        predicted = predict_momentum(pred, source, target, mask, cfg)
        warped = warp_back(target, predicted, shoot_cfg, kernel)
        residual = VectorField(momentum.grid, momentum.data - predicted.data)
        datasets.append(extract_patches(
            source, warped, residual, mask, cfg))
    logger.debug(
        "Built correction patches for %d pairs in %.2fs",
        len(datasets), time.perf_counter() - started)
    return PatchDataset.concatenate(datasets)
