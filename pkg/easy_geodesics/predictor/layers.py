"""
Differentiable building blocks of the momentum predictor.

Activations are shaped ``(batch, channels) + spatial``. Every layer keeps
what it needs from its last :meth:`forward` to run :meth:`backward`, which
returns the gradient with respect to the input and stores parameter
gradients in ``grads``.
"""
import itertools

import numpy as np


def _contract(x, weight):
    """
    Mix the channel axis of ``x`` (axis 1) with a ``(in, out)`` matrix.
    """
    return np.moveaxis(np.tensordot(x, weight, axes=([1], [0])), -1, 1)


def _spatial_axes(x):
    return (0,) + tuple(range(2, x.ndim))


class Layer:
    """
    Base class: named parameter arrays and their gradients.
    """
    param_names = ()

    def __init__(self):
        self.grads = {}

    @property
    def params(self):
        return {name: getattr(self, name) for name in self.param_names}

    def zero_grads(self):
        self.grads = {name: np.zeros_like(getattr(self, name))
                      for name in self.param_names}


class Conv(Layer):
    """
    Stride-1 convolution with a ``k``-wide kernel and zero padding keeping the
    spatial size.
    """
    param_names = ('weight', 'bias')

    def __init__(self, ndim, in_channels, out_channels, kernel_size=3,
                 rng=None):
        super().__init__()
        self.ndim = ndim
        self.kernel_size = kernel_size
        shape = (out_channels, in_channels) + (kernel_size,) * ndim
        fan_in = in_channels * kernel_size ** ndim
        if rng is None:
            self.weight = np.zeros(shape)
        else:
            self.weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
        self.bias = np.zeros(out_channels)

    def _offsets(self):
        return itertools.product(range(self.kernel_size), repeat=self.ndim)

    def _window(self, array, offset, size):
        return array[(slice(None), slice(None)) + tuple(
            slice(o, o + n) for o, n in zip(offset, size))]

    def forward(self, x):
        pad = self.kernel_size // 2
        size = x.shape[2:]
        padded = np.pad(x, [(0, 0), (0, 0)] + [(pad, pad)] * self.ndim)
        out = np.zeros((x.shape[0], self.weight.shape[0]) + size)
        for offset in self._offsets():
            kernel = self.weight[(slice(None), slice(None)) + offset]
            out += _contract(self._window(padded, offset, size), kernel.T)
        out += self.bias.reshape((1, -1) + (1,) * self.ndim)
        self._padded = padded
        self._size = size
        return out

    def backward(self, grad):
        padded, size = self._padded, self._size
        pad = self.kernel_size // 2
        axes = _spatial_axes(grad)
        weight_grad = np.zeros_like(self.weight)
        padded_grad = np.zeros_like(padded)
        for offset in self._offsets():
            index = (slice(None), slice(None)) + offset
            window = self._window(padded, offset, size)
            weight_grad[index] = np.tensordot(
                grad, window, axes=(axes, axes))
            self._window(padded_grad, offset, size)[...] += _contract(
                grad, self.weight[index])
        self.grads = {'weight': weight_grad, 'bias': grad.sum(axis=axes)}
        inner = tuple(slice(pad, pad + n) for n in size)
        return padded_grad[(slice(None), slice(None)) + inner]


class Down(Layer):
    """
    Kernel 2, stride 2 convolution. Odd sizes are zero padded at the end,
    so ``n`` voxels become ``ceil(n / 2)``.
    """
    param_names = ('weight', 'bias')

    def __init__(self, ndim, in_channels, out_channels, rng=None):
        super().__init__()
        self.ndim = ndim
        shape = (out_channels, in_channels) + (2,) * ndim
        fan_in = in_channels * 2 ** ndim
        if rng is None:
            self.weight = np.zeros(shape)
        else:
            self.weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
        self.bias = np.zeros(out_channels)

    def _offsets(self):
        return itertools.product((0, 1), repeat=self.ndim)

    @staticmethod
    def _strided(array, offset):
        return array[(slice(None), slice(None)) + tuple(
            slice(o, None, 2) for o in offset)]

    def forward(self, x):
        size = x.shape[2:]
        padded = np.pad(
            x, [(0, 0), (0, 0)] + [(0, n % 2) for n in size])
        out_size = tuple((n + 1) // 2 for n in size)
        out = np.zeros((x.shape[0], self.weight.shape[0]) + out_size)
        for offset in self._offsets():
            kernel = self.weight[(slice(None), slice(None)) + offset]
            out += _contract(self._strided(padded, offset), kernel.T)
        out += self.bias.reshape((1, -1) + (1,) * self.ndim)
        self._padded = padded
        self._size = size
        return out

    def backward(self, grad):
        padded = self._padded
        axes = _spatial_axes(grad)
        weight_grad = np.zeros_like(self.weight)
        padded_grad = np.zeros_like(padded)
        for offset in self._offsets():
            index = (slice(None), slice(None)) + offset
            weight_grad[index] = np.tensordot(
                grad, self._strided(padded, offset), axes=(axes, axes))
            self._strided(padded_grad, offset)[...] += _contract(
                grad, self.weight[index])
        self.grads = {'weight': weight_grad, 'bias': grad.sum(axis=axes)}
        return padded_grad[(slice(None), slice(None)) + tuple(
            slice(0, n) for n in self._size)]


class Up(Layer):
    """
    Kernel 2, stride 2 transposed convolution, the adjoint of :class:`Down`.
    The output is cropped to a pinned ``size`` so odd sizes are restored.
    """
    param_names = ('weight', 'bias')

    def __init__(self, ndim, in_channels, out_channels, rng=None):
        super().__init__()
        self.ndim = ndim
        shape = (in_channels, out_channels) + (2,) * ndim
        fan_in = in_channels
        if rng is None:
            self.weight = np.zeros(shape)
        else:
            self.weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
        self.bias = np.zeros(out_channels)

    def forward(self, x, size):
        full = tuple(2 * n for n in x.shape[2:])
        if any(n > f or f - n > 1 for n, f in zip(size, full)):
            raise ValueError(
                "Cannot restore size {0} from {1}".format(size, x.shape[2:]))
        out = np.zeros((x.shape[0], self.weight.shape[1]) + full)
        for offset in Down._offsets(self):
            kernel = self.weight[(slice(None), slice(None)) + offset]
            Down._strided(out, offset)[...] += _contract(x, kernel)
        self._input = x
        self._full = full
        out = out[(slice(None), slice(None)) + tuple(
            slice(0, n) for n in size)]
        return out + self.bias.reshape((1, -1) + (1,) * self.ndim)

    def backward(self, grad):
        x = self._input
        size = grad.shape[2:]
        padded = np.pad(grad, [(0, 0), (0, 0)] + [
            (0, f - n) for n, f in zip(size, self._full)])
        axes = _spatial_axes(x)
        weight_grad = np.zeros_like(self.weight)
        x_grad = np.zeros_like(x)
        for offset in Down._offsets(self):
            index = (slice(None), slice(None)) + offset
            strided = Down._strided(padded, offset)
            weight_grad[index] = np.tensordot(x, strided, axes=(axes, axes))
            x_grad += _contract(strided, self.weight[index].T)
        self.grads = {'weight': weight_grad,
                      'bias': grad.sum(axis=_spatial_axes(grad))}
        return x_grad


class PReLU(Layer):
    """
    Parametric ReLU with one learned negative slope per channel.
    """
    param_names = ('alpha',)

    def __init__(self, channels, init=0.25):
        super().__init__()
        self.alpha = np.full(channels, init)

    def forward(self, x):
        self._input = x
        alpha = self.alpha.reshape((1, -1) + (1,) * (x.ndim - 2))
        return np.where(x > 0, x, alpha * x)

    def backward(self, grad):
        x = self._input
        alpha = self.alpha.reshape((1, -1) + (1,) * (x.ndim - 2))
        negative = x <= 0
        axes = _spatial_axes(x)
        self.grads = {'alpha': np.sum(grad * x * negative, axis=axes)}
        return np.where(negative, alpha * grad, grad)
