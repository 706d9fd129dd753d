"""
The patch-wise encoder-decoder predicting initial momentum from a pair of
image patches.

Two weight-independent encoders read the source and the target patch; their
features are concatenated and fed to one decoder per momentum component.
"""
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from easy_geodesics.exceptions import InvalidFieldError, InvalidParameterError
from easy_geodesics.predictor.conf import settings
from easy_geodesics.predictor.layers import Conv, Down, PReLU, Up

ROLES = ('prediction', 'correction')


@dataclass(frozen=True)
class NetConfig:
    patch_size: int = 15
    stride: int = 14
    base_features: int = 64
    dim: int = 2
    role: str = 'prediction'

    def __post_init__(self):
        if self.patch_size < 3 or self.patch_size % 2 == 0:
            raise InvalidParameterError(
                "patch_size must be odd and at least 3")
        if not 1 <= self.stride <= self.patch_size:
            raise InvalidParameterError(
                "stride must lie between 1 and patch_size")
        if self.base_features < 1:
            raise InvalidParameterError("base_features must be positive")
        if self.dim not in (2, 3):
            raise InvalidParameterError("dim must be 2 or 3")
        if self.role not in ROLES:
            raise InvalidParameterError(
                "Unknown network role {0!r}".format(self.role))

    @classmethod
    def from_dict(cls, values=None, **overrides):
        merged = dict(settings.GEODESICS_NET)
        merged.update(values or {})
        merged.update(overrides)
        return cls(**{k: merged[k] for k in (
            'patch_size', 'stride', 'base_features', 'dim', 'role')
            if k in merged})

    def as_dict(self):
        return asdict(self)

    @property
    def patch_shape(self):
        return (self.patch_size,) * self.dim


class Encoder:
    """
    Two blocks of three 3-wide convolutions, each block closed by a strided
    down-sampling convolution; every convolution is followed by a PReLU.
    """

    def __init__(self, ndim, features, rng):
        wide = 2 * features
        self.layers = [
            Conv(ndim, 1, features, rng=rng), PReLU(features),
            Conv(ndim, features, features, rng=rng), PReLU(features),
            Conv(ndim, features, features, rng=rng), PReLU(features),
            Down(ndim, features, features, rng=rng), PReLU(features),
            Conv(ndim, features, wide, rng=rng), PReLU(wide),
            Conv(ndim, wide, wide, rng=rng), PReLU(wide),
            Conv(ndim, wide, wide, rng=rng), PReLU(wide),
            Down(ndim, wide, wide, rng=rng), PReLU(wide),
        ]

    def forward(self, x):
        self.sizes = []
        for layer in self.layers:
            if isinstance(layer, Down):
                self.sizes.append(x.shape[2:])
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


class Decoder:
    """
    The mirror of :class:`Encoder` for one momentum component, ending in a
    linear 3-wide convolution.
    """

    def __init__(self, ndim, features, rng, zero_output=False):
        wide = 2 * features
        output = Conv(ndim, features, 1, rng=None if zero_output else rng)
        self.layers = [
            Up(ndim, 2 * wide, wide, rng=rng), PReLU(wide),
            Conv(ndim, wide, wide, rng=rng), PReLU(wide),
            Conv(ndim, wide, wide, rng=rng), PReLU(wide),
            Conv(ndim, wide, features, rng=rng), PReLU(features),
            Up(ndim, features, features, rng=rng), PReLU(features),
            Conv(ndim, features, features, rng=rng), PReLU(features),
            Conv(ndim, features, features, rng=rng), PReLU(features),
            output,
        ]

    def forward(self, x, sizes):
        sizes = list(reversed(sizes))
        for layer in self.layers:
            if isinstance(layer, Up):
                x = layer.forward(x, sizes.pop(0))
            else:
                x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


@dataclass
class Fingerprint:
    seed: int = 0
    epochs: int = 0
    losses: list = field(default_factory=list)


class PredictorModel:
    """
    The layered weights of a prediction or correction network.

    Correction networks start with a zero output layer, so an untrained
    corrector leaves predictions untouched.
    """

    def __init__(self, net_config, seed=0):
        self.net_config = net_config
        self.fingerprint = Fingerprint(seed=seed)
        rng = np.random.default_rng(seed)
        ndim, features = net_config.dim, net_config.base_features
        zero_output = net_config.role == 'correction'
        self.encoders = [Encoder(ndim, features, rng) for _ in range(2)]
        self.decoders = [
            Decoder(ndim, features, rng, zero_output=zero_output)
            for _ in range(ndim)]

    @property
    def layers(self):
        for part in self.encoders + self.decoders:
            yield from part.layers

    def parameters(self):
        """
        ``(name, array)`` pairs of every parameter in declaration order.
        """
        for index, layer in enumerate(self.layers):
            for name in layer.param_names:
                yield '{0}.{1}'.format(index, name), getattr(layer, name)

    def gradients(self):
        for index, layer in enumerate(self.layers):
            for name in layer.param_names:
                yield '{0}.{1}'.format(index, name), layer.grads[name]

    def zero_(self):
        for _, array in self.parameters():
            array[...] = 0.0
        return self

    def _check(self, patch):
        shape = patch.shape[-self.net_config.dim:]
        if patch.ndim != self.net_config.dim + 1 or (
                shape != self.net_config.patch_shape):
            raise InvalidFieldError(
                "Expected patches of shape {0}, got {1}".format(
                    self.net_config.patch_shape, patch.shape))

    def forward_batch(self, sources, targets):
        """
        Momentum for a batch of patch pairs, shaped
        ``(batch, d) + patch_shape``.
        """
        self._check(sources)
        self._check(targets)
        source_features = self.encoders[0].forward(sources[:, np.newaxis])
        target_features = self.encoders[1].forward(targets[:, np.newaxis])
        self._split = source_features.shape[1]
        features = np.concatenate([source_features, target_features], axis=1)
        outputs = [decoder.forward(features, self.encoders[0].sizes)
                   for decoder in self.decoders]
        return np.concatenate(outputs, axis=1)

    def backward_batch(self, grad):
        """
        Back-propagate the gradient of a loss with respect to the output of
        the last :meth:`forward_batch`, filling every layer's ``grads``.
        """
        features_grad = sum(
            decoder.backward(grad[:, [index]])
            for index, decoder in enumerate(self.decoders))
        self.encoders[0].backward(features_grad[:, :self._split])
        self.encoders[1].backward(features_grad[:, self._split:])


def forward(model, source_patch, target_patch):
    """
    Predicted momentum patch (``(d,) + patch_shape``) of one patch pair.
    """
    source = np.asarray(source_patch, dtype=np.float64)[np.newaxis]
    target = np.asarray(target_patch, dtype=np.float64)[np.newaxis]
    return model.forward_batch(source, target)[0]


def save_model(model, destination):
    """
    Write a checkpoint: a length-prefixed JSON header followed by every
    parameter as little-endian float32, in declaration order.
    """
    params = list(model.parameters())
    header = json.dumps({
        'net_config': model.net_config.as_dict(),
        'fingerprint': asdict(model.fingerprint),
        'parameters': [[name, list(array.shape)] for name, array in params],
    }, sort_keys=True).encode('utf-8')
    destination.write(struct.pack('<I', len(header)))
    destination.write(header)
    for _, array in params:
        destination.write(np.asarray(array, dtype='<f4').tobytes())


def load_model(source):
    content = source.read()
    (length,) = struct.unpack_from('<I', content)
    header = json.loads(content[4:4 + length].decode('utf-8'))
    fingerprint = Fingerprint(**header['fingerprint'])
    model = PredictorModel(
        NetConfig(**header['net_config']), seed=fingerprint.seed)
    model.fingerprint = fingerprint
    offset = 4 + length
    declared = dict((name, tuple(shape))
                    for name, shape in header['parameters'])
    for name, array in model.parameters():
        if declared.get(name) != array.shape:
            raise InvalidFieldError(
                "Checkpoint parameter {0} does not match the model".format(
                    name))
        values = np.frombuffer(content, '<f4', array.size, offset)
        array[...] = values.reshape(array.shape)
        offset += 4 * array.size
    return model
