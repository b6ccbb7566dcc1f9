from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError, SpecError
from ..tensor import SpatiotemporalTensor
from . import layers as L

APP, MOT = "app", "mot"
APP_CHANNELS, MOT_CHANNELS = 3, 2
KINDS = ("conv2d", "relu", "maxpool2d", "concat_fusion", "sum_fusion", "fully_connected")
FUSION_KINDS = ("concat_fusion", "sum_fusion")


@dataclass
class LayerSpec:
    name: str
    kind: str
    inputs: tuple[str, ...]
    in_channels: int | None = None
    out_channels: int | None = None
    kernel: tuple[int, int] = (1, 1)
    stride: int = 1
    padding: int = 0
    window: int = 2
    weight: np.ndarray | None = field(default=None, repr=False)
    bias: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.inputs = tuple(self.inputs)
        self.kernel = tuple(int(k) for k in self.kernel)


@dataclass(frozen=True, order=True)
class UnitRef:
    layer: str
    channel: int

    @classmethod
    def parse(cls, s: str) -> "UnitRef":
        layer, sep, ch = s.rpartition(":")
        if not sep:
            layer, sep, ch = s.rpartition("/")
        if not sep or not layer:
            raise ValueError(f"unit must look like layer:channel, got {s!r}")
        return cls(layer, int(ch))

    def __str__(self):
        return f"{self.layer}:{self.channel}"


@dataclass
class NetworkSpec:
    """Architecture without weights: input size plus ordered layers."""

    height: int
    width: int
    frames: int
    layers: list[LayerSpec]

    def infer(self):
        return _infer(self)


@dataclass
class _Info:
    shape: tuple[int, int, int]
    rf: int
    jump: int
    is_global: bool
    streams: frozenset


def _infer(spec: NetworkSpec) -> dict[str, _Info]:
    """Validate the structure and return per-node shape/receptive-field info."""
    if spec.height < 1 or spec.width < 1 or spec.frames < 1:
        raise SpecError(f"input size must be positive, got {spec.height}x{spec.width}x{spec.frames}")
    if not spec.layers:
        raise SpecError("network has no layers, so there are no units to address")
    info = {
        APP: _Info((spec.height, spec.width, APP_CHANNELS), 1, 1, False, frozenset([APP])),
        MOT: _Info((spec.height, spec.width, MOT_CHANNELS * spec.frames), 1, 1, False, frozenset([MOT])),
    }
    joins = []
    for ls in spec.layers:
        name = ls.name
        if name in info:
            raise SpecError("duplicate or reserved layer name", name)
        if ls.kind not in KINDS:
            raise SpecError(f"unknown kind {ls.kind!r}", name)
        for p in ls.inputs:
            if p not in info:
                raise SpecError(f"predecessor {p!r} is not defined earlier", name)
        preds = [info[p] for p in ls.inputs]
        fusion = ls.kind in FUSION_KINDS
        if fusion and len(preds) < 2:
            raise SpecError("fusion layers need at least two predecessors", name)
        if not fusion and len(preds) != 1:
            raise SpecError("exactly one predecessor required", name)
        streams = frozenset().union(*(p.streams for p in preds))
        is_global = any(p.is_global for p in preds)
        rf = max(p.rf for p in preds)
        jump = max(p.jump for p in preds)
        H, W, C = preds[0].shape

        if ls.kind == "conv2d":
            kh, kw = ls.kernel
            if ls.stride < 1 or ls.padding < 0 or kh < 1 or kw < 1:
                raise SpecError("need stride >= 1, padding >= 0, kernel >= 1", name)
            if ls.in_channels != C:
                raise SpecError(f"in_channels={ls.in_channels} but predecessor has {C} channels", name)
            if not ls.out_channels or ls.out_channels < 1:
                raise SpecError("out_channels must be positive", name)
            Ho = L.conv_output_size(H, kh, ls.stride, ls.padding)
            Wo = L.conv_output_size(W, kw, ls.stride, ls.padding)
            shape = (Ho, Wo, ls.out_channels)
            if not is_global:
                rf, jump = rf + (kh - 1) * jump, jump * ls.stride
        elif ls.kind == "maxpool2d":
            if ls.window < 1 or ls.stride < 1:
                raise SpecError("window and stride must be >= 1", name)
            Ho = (H - ls.window) // ls.stride + 1
            Wo = (W - ls.window) // ls.stride + 1
            shape = (Ho, Wo, C)
            if not is_global:
                rf, jump = rf + (ls.window - 1) * jump, jump * ls.stride
        elif ls.kind == "relu":
            shape = (H, W, C)
        elif ls.kind == "concat_fusion":
            if any(p.shape[:2] != (H, W) for p in preds):
                raise SpecError(f"concat inputs differ spatially: {[p.shape for p in preds]}", name)
            shape = (H, W, sum(p.shape[2] for p in preds))
        elif ls.kind == "sum_fusion":
            if any(p.shape != (H, W, C) for p in preds):
                raise SpecError(f"sum inputs differ in shape: {[p.shape for p in preds]}", name)
            shape = (H, W, C)
        else:  # fully_connected
            if ls.in_channels is not None and ls.in_channels != H * W * C:
                raise SpecError(f"in_channels={ls.in_channels} but flattened input has {H * W * C}", name)
            if not ls.out_channels or ls.out_channels < 1:
                raise SpecError("out_channels must be positive", name)
            shape = (1, 1, ls.out_channels)
            is_global = True
        if shape[0] < 1 or shape[1] < 1:
            raise SpecError(f"output would be empty ({shape})", name)
        if is_global:
            rf = jump = spec.height
        if fusion and len(streams) == 2 and not any(len(p.streams) == 2 for p in preds):
            joins.append(name)
        info[name] = _Info(shape, rf, jump, is_global, streams)
    if len(joins) > 1:
        raise SpecError(f"more than one fusion node joins the streams: {joins}")
    return info


class NetworkGraph:
    """Frozen-weight two-stream DAG.

    Appearance input is H x W x 1 x 3; motion input is H x W x T x 2 and is
    fed to the first motion layer as 2T stacked channels (u0, v0, u1, v1, ...).
    """

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.height, self.width, self.frames = spec.height, spec.width, spec.frames
        self.layers = list(spec.layers)
        self._info = _infer(spec)
        self._by_name = {ls.name: ls for ls in self.layers}
        for ls in self.layers:
            self._check_params(ls)
            if ls.weight is not None:
                ls.weight.flags.writeable = False
                ls.bias.flags.writeable = False

    def _check_params(self, ls):
        if ls.kind == "conv2d":
            want = (ls.out_channels, ls.in_channels) + ls.kernel
        elif ls.kind == "fully_connected":
            H, W, C = self._info[ls.inputs[0]].shape
            want = (ls.out_channels, H * W * C)
        else:
            return
        if ls.weight is None or ls.bias is None:
            raise SpecError("missing weights", ls.name)
        if ls.weight.shape != want:
            raise SpecError(f"weight shape {ls.weight.shape}, expected {want}", ls.name)
        if ls.bias.shape != (ls.out_channels,):
            raise SpecError(f"bias length {ls.bias.shape}, expected ({ls.out_channels},)", ls.name)
        if not (np.isfinite(ls.weight).all() and np.isfinite(ls.bias).all()):
            raise SpecError("non-finite parameters", ls.name)

    # -- queries ---------------------------------------------------------
    @property
    def app_shape(self):
        return (self.height, self.width, 1, APP_CHANNELS)

    @property
    def mot_shape(self):
        return (self.height, self.width, self.frames, MOT_CHANNELS)

    @property
    def layer_names(self):
        return [ls.name for ls in self.layers]

    def layer(self, name) -> LayerSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"unknown layer {name!r}") from None

    def output_shape(self, name) -> tuple[int, int, int]:
        self.layer(name)
        return self._info[name].shape

    def channels(self, name) -> int:
        return self.output_shape(name)[2]

    def streams(self, name) -> frozenset:
        self.layer(name)
        return self._info[name].streams

    def units(self):
        return [UnitRef(n, c) for n in self.layer_names for c in range(self.channels(n))]

    def check_unit(self, unit: UnitRef):
        C = self.channels(unit.layer)
        if not 0 <= unit.channel < C:
            raise KeyError(f"unit {unit}: channel out of range for {C} channels")

    def receptive_field(self, name) -> int:
        """Side length (pixels, along the height axis) of one output's input region."""
        self.layer(name)
        return self._info[name].rf

    def layer_stride(self, name) -> int:
        self.layer(name)
        return self._info[name].jump

    # -- evaluation ------------------------------------------------------
    def _needed(self, targets):
        need = {targets} if isinstance(targets, str) else set(targets)
        for ls in reversed(self.layers):
            if ls.name in need:
                need.update(ls.inputs)
        return need

    def _batch_inputs(self, app, mot):
        app = np.asarray(app, dtype=np.float64)
        mot = np.asarray(mot, dtype=np.float64)
        if app.shape[1:] != self.app_shape:
            raise ShapeError(f"appearance input {app.shape[1:]}, expected {self.app_shape}")
        if mot.shape[1:] != self.mot_shape:
            raise ShapeError(f"motion input {mot.shape[1:]}, expected {self.mot_shape}")
        Na, Nm = app.shape[0], mot.shape[0]
        if Na != Nm and 1 not in (Na, Nm):
            raise ShapeError(f"appearance and motion batch sizes {Na} and {Nm} do not broadcast")
        H, W = self.height, self.width
        return app.reshape(Na, H, W, APP_CHANNELS), mot.reshape(Nm, H, W, MOT_CHANNELS * self.frames)

    def run_batch(self, app, mot, target=None):
        """Forward a batch (N, H, W, T, C) of inputs; returns activations and caches.

        A stream given with batch size 1 is evaluated once and broadcast where
        the streams meet. With ``target`` (a layer name or several) only the
        needed ancestors are evaluated.
        """
        a, m = self._batch_inputs(app, mot)
        acts = {APP: a, MOT: m}
        caches = {}
        need = self._needed(target) if target is not None else None
        for ls in self.layers:
            if need is not None and ls.name not in need:
                continue
            xs = [acts[p] for p in ls.inputs]
            if len(xs) > 1:
                n = max(x.shape[0] for x in xs)
                xs = [np.broadcast_to(x, (n,) + x.shape[1:]) for x in xs]
            x = xs[0]
            if ls.kind == "conv2d":
                y = L.conv2d_forward(x, ls.weight, ls.bias, ls.stride, ls.padding)
            elif ls.kind == "relu":
                y = np.maximum(x, 0.0)
            elif ls.kind == "maxpool2d":
                y, caches[ls.name] = L.maxpool_forward(x, ls.window, ls.stride)
            elif ls.kind == "concat_fusion":
                y = np.concatenate(xs, axis=3)
            elif ls.kind == "sum_fusion":
                y = xs[0].copy()
                for other in xs[1:]:
                    y += other
            else:
                y = L.fc_forward(x, ls.weight, ls.bias)
            acts[ls.name] = y
        return acts, caches

    def forward(self, x_app, x_mot) -> dict[str, SpatiotemporalTensor]:
        """All layer activations for one input pair, each as an H' x W' x 1 x C' tensor."""
        acts, _ = self.run_batch(np.asarray(x_app)[None], np.asarray(x_mot)[None])
        return {
            ls.name: SpatiotemporalTensor(acts[ls.name][0][:, :, None, :]) for ls in self.layers
        }

    def unit_values(self, unit: UnitRef, app, mot):
        """channel_sum of ``unit`` for each element of a batch of inputs."""
        self.check_unit(unit)
        acts, _ = self.run_batch(app, mot, target=unit.layer)
        return acts[unit.layer][..., unit.channel].sum(axis=(1, 2))

    def channel_sums(self, units, app, mot) -> np.ndarray:
        """(N, len(units)) channel sums for a batch, from a single forward pass."""
        units = list(units)
        for u in units:
            self.check_unit(u)
        acts, _ = self.run_batch(app, mot, target=[u.layer for u in units])
        N = max(np.shape(app)[0], np.shape(mot)[0])
        cols = [np.broadcast_to(acts[u.layer][..., u.channel].sum(axis=(1, 2)), (N,)) for u in units]
        return np.stack(cols, axis=1)

    def _backward(self, acts, caches, layer, seed):
        grads = {layer: seed}
        need = self._needed(layer)
        for ls in reversed(self.layers):
            if ls.name not in need or ls.name not in grads:
                continue
            g = grads.pop(ls.name)
            xs = [acts[p] for p in ls.inputs]
            if ls.kind == "conv2d":
                gin = [L.conv2d_backward(g, ls.weight, xs[0].shape, ls.stride, ls.padding)]
            elif ls.kind == "relu":
                gin = [g * (xs[0] > 0)]  # subgradient 0 at exactly 0
            elif ls.kind == "maxpool2d":
                gin = [L.maxpool_backward(g, caches[ls.name], xs[0].shape, ls.window, ls.stride)]
            elif ls.kind == "concat_fusion":
                splits = np.cumsum([x.shape[3] for x in xs])[:-1]
                gin = np.split(g, splits, axis=3)
            elif ls.kind == "sum_fusion":
                gin = [g] * len(xs)
            else:
                gin = [L.fc_backward(g, ls.weight, xs[0].shape)]
            for p, gp in zip(ls.inputs, gin):
                grads[p] = grads[p] + gp if p in grads else gp
        g_app = grads.get(APP, np.zeros((1, self.height, self.width, APP_CHANNELS)))
        g_mot = grads.get(MOT, np.zeros((1, self.height, self.width, MOT_CHANNELS * self.frames)))
        return g_app.reshape(self.app_shape), g_mot.reshape(self.mot_shape)

    def vjp(self, layer, seed, x_app, x_mot):
        """Gradient of <activation(layer), seed> with respect to both inputs.

        ``seed`` has the layer's output shape (H', W', C').
        """
        self.layer(layer)
        acts, caches = self.run_batch(np.asarray(x_app)[None], np.asarray(x_mot)[None], target=layer)
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != acts[layer].shape[1:]:
            raise ShapeError(f"seed shape {seed.shape}, expected {acts[layer].shape[1:]}")
        ga, gm = self._backward(acts, caches, layer, seed[None])
        return SpatiotemporalTensor(ga), SpatiotemporalTensor(gm)

    def value_and_gradient(self, unit: UnitRef, x_app, x_mot):
        """(channel_sum, d/d x_app, d/d x_mot) as plain arrays for a single input pair."""
        self.check_unit(unit)
        acts, caches = self.run_batch(np.asarray(x_app)[None], np.asarray(x_mot)[None], target=unit.layer)
        out = acts[unit.layer]
        seed = np.zeros_like(out)
        seed[..., unit.channel] = 1.0
        ga, gm = self._backward(acts, caches, unit.layer, seed)
        return float(out[..., unit.channel].sum()), ga, gm

    def input_gradient(self, unit: UnitRef, x_app, x_mot):
        _, ga, gm = self.value_and_gradient(unit, x_app, x_mot)
        return SpatiotemporalTensor(ga), SpatiotemporalTensor(gm)
