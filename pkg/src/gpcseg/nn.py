"""Neural layer vocabulary for volumetric networks.

3D convolutions, transposed convolutions, max pooling, batch normalization,
activations, channel softmax, planar convolutions, the global planar
convolution (GPC) module and residual blocks.  All ops accept a single
volume ``(C, D, H, W)`` or a batch ``(N, C, D, H, W)`` and are recorded on
the gradient tape from :mod:`gpcseg.tensor`.

Convolution is cross-correlation (no kernel flip), evaluated by unrolling
windows into a matrix and multiplying against the reshaped kernel (im2col +
GEMM).  The unrolled buffer is chunked along the output depth axis so large
volumes never materialize more than ``_COL_BLOCK_ELEMS`` elements at once.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, ShapeError
from .tensor import Tensor, record_op

_COL_BLOCK_ELEMS = 1 << 25  # ~128 MiB of float32 im2col buffer

# which spatial dimension of (D, H, W) has size 1 for each planar orientation
ORIENTATIONS = {"axial": 0, "coronal": 1, "sagittal": 2}


def _triple(v) -> tuple:
    if isinstance(v, (tuple, list)):
        t = tuple(int(x) for x in v)
        if len(t) != 3:
            raise ShapeError(f"expected 3 values, got {v!r}")
        return t
    return (int(v),) * 3


def _as5d(arr: np.ndarray):
    if arr.ndim == 4:
        return arr[None], False
    if arr.ndim == 5:
        return arr, True
    raise ShapeError(f"expected a (C,D,H,W) or (N,C,D,H,W) array, got shape {arr.shape}")


def _channel_axis(ndim: int) -> int:
    return 1 if ndim == 5 else 0


def _same_pads(n: int, k: int, s: int):
    """TF-style SAME padding: output ceil(n/s), extra voxel on the high side."""
    out = -(-n // s)
    total = max((out - 1) * s + k - n, 0)
    lo = total // 2
    return lo, total - lo


def _resolve_pads(spatial, kshape, stride, padding):
    if padding == "same":
        return tuple(_same_pads(n, k, s) for n, k, s in zip(spatial, kshape, stride))
    if padding == "valid":
        for n, k in zip(spatial, kshape):
            if n < k:
                raise ShapeError(
                    f"input spatial dims {tuple(spatial)} smaller than kernel {tuple(kshape)} under valid padding")
        return ((0, 0),) * 3
    raise ConfigurationError(f"padding must be 'same' or 'valid', got {padding!r}")


# ---------------------------------------------------------------------------
# raw numpy convolution kernels


def _pad5(x, pads):
    if any(lo or hi for lo, hi in pads):
        return np.pad(x, ((0, 0), (0, 0)) + tuple(pads))
    return x


def _conv_forward(x, w, b, stride, pads):
    """Cross-correlate x (N,C,D,H,W) with w (F,C,kd,kh,kw); add bias (F,)."""
    N = x.shape[0]
    F = w.shape[0]
    kd, kh, kw = w.shape[2:]
    sd, sh, sw = stride
    xp = _pad5(x, pads)
    od = (xp.shape[2] - kd) // sd + 1
    oh = (xp.shape[3] - kh) // sh + 1
    ow = (xp.shape[4] - kw) // sw + 1
    if od < 1 or oh < 1 or ow < 1:
        raise ShapeError(f"kernel {w.shape[2:]} does not fit input spatial dims {x.shape[2:]}")
    win = sliding_window_view(xp, (kd, kh, kw), axis=(2, 3, 4))[:, :, ::sd, ::sh, ::sw]
    wmat = w.reshape(F, -1).T
    ksize = wmat.shape[0]
    out = np.empty((N, F, od, oh, ow), dtype=np.result_type(x, w))
    bd = max(1, _COL_BLOCK_ELEMS // max(1, N * oh * ow * ksize))
    for d0 in range(0, od, bd):
        d1 = min(od, d0 + bd)
        blk = win[:, :, d0:d1]  # (N,C,dd,oh,ow,kd,kh,kw) strided view
        cols = blk.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(N * (d1 - d0) * oh * ow, ksize)
        res = cols @ wmat
        out[:, :, d0:d1] = res.reshape(N, d1 - d0, oh, ow, F).transpose(0, 4, 1, 2, 3)
    if b is not None:
        out += b.reshape(1, F, 1, 1, 1)
    return out


def _conv_grad_w(x, gy, kshape, stride, pads):
    """Gradients of a cross-correlation w.r.t. kernel weights and bias."""
    N = x.shape[0]
    C = x.shape[1]
    F = gy.shape[1]
    kd, kh, kw = kshape
    sd, sh, sw = stride
    xp = _pad5(x, pads)
    od, oh, ow = gy.shape[2:]
    win = sliding_window_view(xp, (kd, kh, kw), axis=(2, 3, 4))[:, :, ::sd, ::sh, ::sw]
    ksize = C * kd * kh * kw
    gw_mat = np.zeros((F, ksize), dtype=np.result_type(x, gy))
    bd = max(1, _COL_BLOCK_ELEMS // max(1, N * oh * ow * ksize))
    for d0 in range(0, od, bd):
        d1 = min(od, d0 + bd)
        blk = win[:, :, d0:d1]
        cols = blk.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(N * (d1 - d0) * oh * ow, ksize)
        gyb = gy[:, :, d0:d1].transpose(0, 2, 3, 4, 1).reshape(N * (d1 - d0) * oh * ow, F)
        gw_mat += gyb.T @ cols
    gw = gw_mat.reshape(F, C, kd, kh, kw)
    gb = gy.sum(axis=(0, 2, 3, 4))
    return gw, gb


def _conv_grad_x(gy, w, x_spatial, stride, pads):
    """Gradient of a cross-correlation w.r.t. its input.

    Implemented as a stride-1 valid cross-correlation of the zero-dilated
    output gradient against the spatially flipped, channel-transposed
    kernel.  This routine is also the forward pass of the transposed
    convolution (adjoint of the matching strided same-padded conv).
    """
    N, F = gy.shape[:2]
    kd, kh, kw = w.shape[2:]
    sd, sh, sw = stride
    od, oh, ow = gy.shape[2:]
    if (sd, sh, sw) == (1, 1, 1):
        gyd = gy
    else:
        gyd = np.zeros((N, F, (od - 1) * sd + 1, (oh - 1) * sh + 1, (ow - 1) * sw + 1), dtype=gy.dtype)
        gyd[:, :, ::sd, ::sh, ::sw] = gy
    pads2 = []
    for n, k, (lo, _hi), ds in zip(x_spatial, (kd, kh, kw), pads, gyd.shape[2:]):
        lo2 = k - 1 - lo
        hi2 = n + lo - ds
        if lo2 < 0 or hi2 < 0:
            raise ShapeError("inconsistent convolution geometry for input gradient")
        pads2.append((lo2, hi2))
    wt = w.transpose(1, 0, 2, 3, 4)[:, :, ::-1, ::-1, ::-1]
    return _conv_forward(gyd, wt, None, (1, 1, 1), tuple(pads2))


# ---------------------------------------------------------------------------
# kernel containers


class ConvKernel:
    """Dense 3D convolution kernel: weights (C_out, C_in, kd, kh, kw), bias (C_out,)."""

    def __init__(self, weights: Tensor, bias: Tensor, stride=1, padding: str = "same"):
        if weights.data.ndim != 5:
            raise ShapeError(f"conv weights must be 5D, got shape {weights.shape}")
        if any(d < 1 for d in weights.shape):
            raise ShapeError(f"conv kernel dims must be >= 1, got {weights.shape}")
        if bias.data.shape != (weights.shape[0],):
            raise ShapeError(f"bias shape {bias.shape} does not match C_out {weights.shape[0]}")
        stride = _triple(stride)
        if any(s < 1 for s in stride):
            raise ShapeError(f"stride must be positive, got {stride}")
        if padding not in ("same", "valid"):
            raise ConfigurationError(f"padding must be 'same' or 'valid', got {padding!r}")
        self.weights = weights
        self.bias = bias
        self.stride = stride
        self.padding = padding

    @property
    def c_out(self) -> int:
        return self.weights.shape[0]

    @property
    def c_in(self) -> int:
        return self.weights.shape[1]

    @property
    def kshape(self) -> tuple:
        return self.weights.shape[2:]

    def named_parameters(self, prefix: str = ""):
        yield prefix + "weight", self.weights
        yield prefix + "bias", self.bias


def make_conv_kernel(c_in, c_out, k, rng, stride=1, padding="same") -> ConvKernel:
    """He-normal initialized kernel (variance 2 / fan_in, fan_in = C_in * prod(k))."""
    kshape = _triple(k)
    fan_in = c_in * kshape[0] * kshape[1] * kshape[2]
    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in) + kshape).astype(np.float32)
    return ConvKernel(Tensor(w, requires_grad=True),
                      Tensor(np.zeros(c_out, dtype=np.float32), requires_grad=True),
                      stride=stride, padding=padding)


class PlanarKernel:
    """Planar convolution kernel: one spatial dim of size 1, the other two of size k.

    ``orientation`` names the size-1 spatial axis of (D, H, W): axial -> D,
    coronal -> H, sagittal -> W.
    """

    def __init__(self, orientation: str, weights: Tensor, bias: Tensor):
        if orientation not in ORIENTATIONS:
            raise ConfigurationError(f"unknown orientation {orientation!r}")
        if weights.data.ndim != 5:
            raise ShapeError(f"planar weights must be 5D, got shape {weights.shape}")
        kdims = weights.shape[2:]
        axis = ORIENTATIONS[orientation]
        others = [kdims[i] for i in range(3) if i != axis]
        if kdims[axis] != 1 or others[0] != others[1] or others[0] < 1:
            raise ShapeError(
                f"orientation {orientation} requires spatial kernel dims with size 1 on axis "
                f"{axis} and equal size elsewhere, got {kdims}")
        if bias.data.shape != (weights.shape[0],):
            raise ShapeError(f"bias shape {bias.shape} does not match C_out {weights.shape[0]}")
        self.orientation = orientation
        self.weights = weights
        self.bias = bias
        self.k = others[0]

    @property
    def c_out(self) -> int:
        return self.weights.shape[0]

    @property
    def c_in(self) -> int:
        return self.weights.shape[1]

    def named_parameters(self, prefix: str = ""):
        yield prefix + "weight", self.weights
        yield prefix + "bias", self.bias


def make_planar_kernel(orientation, c_in, c_out, k, rng) -> PlanarKernel:
    axis = ORIENTATIONS[orientation]
    kshape = tuple(1 if i == axis else int(k) for i in range(3))
    fan_in = c_in * k * k
    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in) + kshape).astype(np.float32)
    return PlanarKernel(orientation, Tensor(w, requires_grad=True),
                        Tensor(np.zeros(c_out, dtype=np.float32), requires_grad=True))


class GpcModule:
    """Three orientation-distinct planar kernels whose outputs are summed."""

    def __init__(self, kernels):
        kernels = list(kernels)
        if len(kernels) != 3 or len({pk.orientation for pk in kernels}) != 3:
            raise ConfigurationError("GPC needs exactly one planar kernel per orientation")
        by_orient = {pk.orientation: pk for pk in kernels}
        self.axial = by_orient["axial"]
        self.coronal = by_orient["coronal"]
        self.sagittal = by_orient["sagittal"]
        ref = self.axial
        for pk in (self.coronal, self.sagittal):
            if (pk.c_in, pk.c_out, pk.k) != (ref.c_in, ref.c_out, ref.k):
                raise ConfigurationError("GPC branches must share C_in, C_out and k")

    @property
    def branches(self):
        return (self.axial, self.coronal, self.sagittal)

    @property
    def c_in(self) -> int:
        return self.axial.c_in

    @property
    def c_out(self) -> int:
        return self.axial.c_out

    @property
    def k(self) -> int:
        return self.axial.k

    def named_parameters(self, prefix: str = ""):
        for name, pk in (("axial", self.axial), ("coronal", self.coronal), ("sagittal", self.sagittal)):
            yield from pk.named_parameters(f"{prefix}{name}.")


def make_gpc(c_in, c_out, k, rng) -> GpcModule:
    return GpcModule([make_planar_kernel(o, c_in, c_out, k, rng) for o in ORIENTATIONS])


class BatchNormState:
    """Per-channel batch normalization state.

    Train mode normalizes with batch moments over (N, D, H, W) and updates
    the running statistics with an exponential moving average
    ``running = (1 - momentum) * running + momentum * batch``; eval mode
    uses only the running statistics.
    """

    def __init__(self, channels: int, epsilon: float = 1e-5, momentum: float = 0.1):
        self.gamma = Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)
        self.epsilon = float(epsilon)
        self.momentum = float(momentum)
        self.mode = "train"

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def named_parameters(self, prefix: str = ""):
        yield prefix + "gamma", self.gamma
        yield prefix + "beta", self.beta

    def named_buffers(self, prefix: str = ""):
        yield prefix + "running_mean", self.running_mean
        yield prefix + "running_var", self.running_var


class ResidualBlock:
    """conv -> BN -> ReLU -> conv -> BN, identity added, optional final ReLU.

    When the channel count changes the identity path goes through a 1x1x1
    projection convolution.
    """

    def __init__(self, conv1, bn1, conv2, bn2, projection=None, final_activation=True):
        if conv2.c_in != conv1.c_out or conv2.c_out != conv1.c_out:
            raise ConfigurationError("second conv must preserve the block's output channels")
        if projection is None and conv1.c_in != conv1.c_out:
            raise ConfigurationError("identity path requires equal channels or a projection conv")
        self.conv1 = conv1
        self.bn1 = bn1
        self.conv2 = conv2
        self.bn2 = bn2
        self.projection = projection
        self.final_activation = bool(final_activation)

    @property
    def c_in(self) -> int:
        return self.conv1.c_in

    @property
    def c_out(self) -> int:
        return self.conv1.c_out

    def named_parameters(self, prefix: str = ""):
        yield from self.conv1.named_parameters(prefix + "conv1.")
        yield from self.bn1.named_parameters(prefix + "bn1.")
        yield from self.conv2.named_parameters(prefix + "conv2.")
        yield from self.bn2.named_parameters(prefix + "bn2.")
        if self.projection is not None:
            yield from self.projection.named_parameters(prefix + "proj.")

    def named_buffers(self, prefix: str = ""):
        yield from self.bn1.named_buffers(prefix + "bn1.")
        yield from self.bn2.named_buffers(prefix + "bn2.")

    def set_mode(self, mode: str):
        self.bn1.mode = mode
        self.bn2.mode = mode


def make_residual_block(c_in, c_out, rng, final_activation=True) -> ResidualBlock:
    proj = make_conv_kernel(c_in, c_out, 1, rng) if c_in != c_out else None
    return ResidualBlock(make_conv_kernel(c_in, c_out, 3, rng), BatchNormState(c_out),
                         make_conv_kernel(c_out, c_out, 3, rng), BatchNormState(c_out),
                         projection=proj, final_activation=final_activation)


# ---------------------------------------------------------------------------
# taped operations


def _conv_op(x: Tensor, weights: Tensor, bias: Tensor, stride, padding) -> Tensor:
    xd, batched = _as5d(x.data)
    if xd.shape[1] != weights.shape[1]:
        raise ShapeError(f"input has {xd.shape[1]} channels, kernel expects {weights.shape[1]}")
    kshape = weights.shape[2:]
    pads = _resolve_pads(xd.shape[2:], kshape, stride, padding)
    y = _conv_forward(xd, weights.data, bias.data, stride, pads)
    out = Tensor(y if batched else y[0])
    x_spatial = xd.shape[2:]

    def pullback(g):
        g5 = g if batched else g[None]
        gx = gw = gb = None
        if x.requires_grad:
            gx = _conv_grad_x(g5, weights.data, x_spatial, stride, pads)
            if not batched:
                gx = gx[0]
        if weights.requires_grad or bias.requires_grad:
            gw, gb = _conv_grad_w(xd, g5, kshape, stride, pads)
        return gx, gw, gb

    return record_op(out, (x, weights, bias), pullback)


def conv3d(x: Tensor, kernel: ConvKernel) -> Tensor:
    """Cross-correlation plus bias with the kernel's stride and padding."""
    return _conv_op(x, kernel.weights, kernel.bias, kernel.stride, kernel.padding)


def planar_conv(x: Tensor, pk: PlanarKernel) -> Tensor:
    """Stride-1 same-padded convolution with a planar (one dim = 1) kernel."""
    return _conv_op(x, pk.weights, pk.bias, (1, 1, 1), "same")


def transposed_conv3d(x: Tensor, kernel: ConvKernel, stride=2) -> Tensor:
    """Stride-s upsampling convolution; output spatial dims = input * stride.

    This is the exact adjoint of ``conv3d`` with "same" padding at the same
    stride: for a conv kernel K mapping C->F, a transposed kernel holding
    ``K.weights.transpose(1, 0, ...)`` maps F->C and satisfies
    <conv(x), y> == <x, transposed_conv(y)> (biases zero).
    """
    stride = _triple(stride)
    if any(s < 1 for s in stride):
        raise ShapeError(f"stride must be positive, got {stride}")
    xd, batched = _as5d(x.data)
    if xd.shape[1] != kernel.c_in:
        raise ShapeError(f"input has {xd.shape[1]} channels, kernel expects {kernel.c_in}")
    w_fwd = kernel.weights.data.transpose(1, 0, 2, 3, 4)  # forward-conv orientation (c_in, c_out, k)
    kshape = w_fwd.shape[2:]
    out_spatial = tuple(m * s for m, s in zip(xd.shape[2:], stride))
    pads = tuple(_same_pads(n, k, s) for n, k, s in zip(out_spatial, kshape, stride))
    y = _conv_grad_x(xd, w_fwd, out_spatial, stride, pads)
    y += kernel.bias.data.reshape(1, -1, 1, 1, 1)
    out = Tensor(y if batched else y[0])
    weights, bias = kernel.weights, kernel.bias

    def pullback(g):
        g5 = g if batched else g[None]
        gx = gw = gb = None
        if x.requires_grad:
            gx = _conv_forward(g5, w_fwd, None, stride, pads)
            if not batched:
                gx = gx[0]
        if weights.requires_grad or bias.requires_grad:
            gw_fwd, _ = _conv_grad_w(g5, xd, kshape, stride, pads)
            gw = gw_fwd.transpose(1, 0, 2, 3, 4)
        if bias.requires_grad:
            gb = g5.sum(axis=(0, 2, 3, 4))
        return gx, gw, gb

    return record_op(out, (x, weights, bias), pullback)


def maxpool3d(x: Tensor, window: int = 2, stride: int = 2) -> Tensor:
    """Non-overlapping window maximum; gradient routes to the first argmax."""
    if window != stride:
        raise ConfigurationError("maxpool3d supports window == stride only")
    s = int(stride)
    xd, batched = _as5d(x.data)
    N, C, D, H, W = xd.shape
    if D % s or H % s or W % s:
        raise ShapeError(f"spatial dims {(D, H, W)} not divisible by pooling stride {s}")
    od, oh, ow = D // s, H // s, W // s
    xr = (xd.reshape(N, C, od, s, oh, s, ow, s)
            .transpose(0, 1, 2, 4, 6, 3, 5, 7)
            .reshape(N, C, od, oh, ow, s ** 3))
    idx = xr.argmax(axis=-1)  # first occurrence wins ties, window scanned row-major
    y = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
    out = Tensor(y if batched else y[0])

    def pullback(g):
        g5 = g if batched else g[None]
        gz = np.zeros_like(xr)
        np.put_along_axis(gz, idx[..., None], g5[..., None], axis=-1)
        gx = (gz.reshape(N, C, od, oh, ow, s, s, s)
                .transpose(0, 1, 2, 5, 3, 6, 4, 7)
                .reshape(N, C, D, H, W))
        return (gx if batched else gx[0],)

    return record_op(out, (x,), pullback)


def batchnorm3d(x: Tensor, state: BatchNormState) -> Tensor:
    """Per-channel normalization; see :class:`BatchNormState` for mode semantics."""
    xd, batched = _as5d(x.data)
    C = xd.shape[1]
    if C != state.channels:
        raise ShapeError(f"input has {C} channels, batch norm expects {state.channels}")
    axes = (0, 2, 3, 4)
    cshape = (1, C, 1, 1, 1)
    gamma, beta = state.gamma, state.beta
    if state.mode == "train":
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        m = state.momentum
        state.running_mean = ((1.0 - m) * state.running_mean + m * mu).astype(np.float32)
        state.running_var = ((1.0 - m) * state.running_var + m * var).astype(np.float32)
    else:
        mu = state.running_mean.astype(xd.dtype)
        var = state.running_var.astype(xd.dtype)
    inv = 1.0 / np.sqrt(var + state.epsilon)
    xhat = (xd - mu.reshape(cshape)) * inv.reshape(cshape)
    y = gamma.data.reshape(cshape) * xhat + beta.data.reshape(cshape)
    out = Tensor(y if batched else y[0])
    train = state.mode == "train"

    def pullback(g):
        g5 = g if batched else g[None]
        ggamma = (g5 * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g5.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gi = gamma.data.reshape(cshape) * inv.reshape(cshape)
            if train:
                n = xd.size // C
                gsum = g5.sum(axis=axes).reshape(cshape)
                gxsum = (g5 * xhat).sum(axis=axes).reshape(cshape)
                gx = gi * (g5 - gsum / n - xhat * gxsum / n)
            else:
                gx = gi * g5
            if not batched:
                gx = gx[0]
        return gx, ggamma, gbeta

    return record_op(out, (x, gamma, beta), pullback)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        y = np.maximum(x.data, 0)
        out = Tensor(y)
        return record_op(out, (x,), lambda g: (g * (x.data > 0),))
    if kind == "elu":
        y = np.where(x.data > 0, x.data, np.expm1(np.minimum(x.data, 0)))
        out = Tensor(y)
        return record_op(out, (x,), lambda g: (g * np.where(x.data > 0, 1.0, y + 1.0),))
    raise ConfigurationError(f"unknown activation {kind!r}")


def relu(x: Tensor) -> Tensor:
    return activation(x, "relu")


def elu(x: Tensor) -> Tensor:
    return activation(x, "elu")


def softmax_channels(x: Tensor) -> Tensor:
    """Per-voxel softmax over the channel axis, stabilized by max subtraction."""
    ax = _channel_axis(x.data.ndim)
    z = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=ax, keepdims=True)
    out = Tensor(s)

    def pullback(g):
        dot = (g * s).sum(axis=ax, keepdims=True)
        return (s * (g - dot),)

    return record_op(out, (x,), pullback)


def gpc_forward(x: Tensor, m: GpcModule) -> Tensor:
    """Sum of the three orthogonal planar convolutions of x."""
    from .tensor import add
    a = planar_conv(x, m.axial)
    b = planar_conv(x, m.coronal)
    c = planar_conv(x, m.sagittal)
    return add(add(a, b), c)


def residual_block_forward(x: Tensor, rb: ResidualBlock) -> Tensor:
    from .tensor import add
    h = relu(batchnorm3d(conv3d(x, rb.conv1), rb.bn1))
    h = batchnorm3d(conv3d(h, rb.conv2), rb.bn2)
    identity = x if rb.projection is None else conv3d(x, rb.projection)
    y = add(h, identity)
    return relu(y) if rb.final_activation else y


def concat_channels(parts) -> Tensor:
    """Concatenate tensors along the channel axis (taped)."""
    parts = list(parts)
    ax = _channel_axis(parts[0].data.ndim)
    for p in parts[1:]:
        if p.data.ndim != parts[0].data.ndim:
            raise ShapeError("concat requires equal ranks")
    y = np.concatenate([p.data for p in parts], axis=ax)
    out = Tensor(y)
    sizes = [p.data.shape[ax] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def pullback(g):
        sl = [slice(None)] * g.ndim
        gs = []
        for i in range(len(parts)):
            sl[ax] = slice(int(offsets[i]), int(offsets[i + 1]))
            gs.append(g[tuple(sl)])
        return tuple(gs)

    return record_op(out, tuple(parts), pullback)
