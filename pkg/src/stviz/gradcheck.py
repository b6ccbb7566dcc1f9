"""Finite-difference checks of the analytic input gradients.

The network is piecewise linear, so central differences are exact up to
round-off unless a probe crosses a ReLU kink or flips a max-pool winner.
``safe_inputs`` draws random inputs that keep every such decision at least
a provable distance away from its switching point for the chosen step.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .network import NetworkGraph, UnitRef
from .network.layers import corrupted_conv_backward
from .regularizers import RegularizerConfig, r_b_gradient, r_b_value, r_tv_gradient, r_tv_value
from .tensor import SpatiotemporalTensor, finite_difference_gradient, finite_difference_jacobian

NETWORK_TOL = 1e-5
REGULARIZER_TOL = 1e-6


def relative_error(analytic, numeric) -> float:
    a, n = np.asarray(analytic), np.asarray(numeric)
    denom = max(np.abs(a).max(), np.abs(n).max())
    if denom == 0:
        return 0.0
    return float(np.abs(a - n).max() / denom)


def _sensitivity(net: NetworkGraph, h: float) -> dict[str, float]:
    """Upper bound on how far any activation moves when one input coordinate moves by h."""
    s = {"app": h, "mot": h}
    for ls in net.layers:
        if ls.kind in ("conv2d", "fully_connected"):
            if ls.inputs[0] in ("app", "mot"):
                # a single input coordinate meets each output through one weight
                gain = np.abs(ls.weight).max()
            else:
                gain = np.abs(ls.weight).reshape(ls.weight.shape[0], -1).sum(axis=1).max()
            s[ls.name] = s[ls.inputs[0]] * gain
        elif ls.kind == "sum_fusion":
            s[ls.name] = sum(s[p] for p in ls.inputs)
        else:
            s[ls.name] = max(s[p] for p in ls.inputs)
    return s


def _pool_gaps(x, window, stride, from_relu):
    from numpy.lib.stride_tricks import sliding_window_view

    win = sliding_window_view(x, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    flat = np.sort(win.reshape(win.shape[:4] + (-1,)), axis=-1)
    if flat.shape[-1] < 2:
        return np.inf
    top, second = flat[..., -1], flat[..., -2]
    gap = top - second
    if from_relu:
        # two exact zeros out of a ReLU are both dead; their tie carries no gradient
        gap = np.where((top == 0) & (second == 0), np.inf, gap)
    return gap.min()


def kink_margin_ok(net: NetworkGraph, x_app, x_mot, h: float, safety: float = 4.0) -> bool:
    sens = _sensitivity(net, h)
    acts, _ = net.run_batch(np.asarray(x_app)[None], np.asarray(x_mot)[None])
    kinds = {ls.name: ls.kind for ls in net.layers}
    for ls in net.layers:
        src = ls.inputs[0] if ls.inputs else None
        margin = safety * sens.get(src, h)
        if ls.kind == "relu":
            if np.abs(acts[src]).min() < margin:
                return False
        elif ls.kind == "maxpool2d":
            if _pool_gaps(acts[src], ls.window, ls.stride, kinds.get(src) == "relu") < 2 * margin:
                return False
    return True


def safe_inputs(net: NetworkGraph, seed: int = 0, h: float = 1e-5, scale: float = 10.0, max_tries: int = 500):
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        xa = rng.standard_normal(net.app_shape) * scale
        xm = rng.standard_normal(net.mot_shape) * scale
        if kink_margin_ok(net, xa, xm, h):
            return xa, xm
    raise RuntimeError(f"no kink-free input found in {max_tries} draws; lower h")


def check_units(net: NetworkGraph, units, x_app, x_mot, h: float = 1e-5, chunk: int = 64) -> dict:
    """Max relative error between analytic and central-difference input gradients, per unit.

    Each stream is probed once for all units; the other stream is held fixed.
    """
    units = list(units)
    analytic = {u: net.input_gradient(u, x_app, x_mot) for u in units}
    xa_b = np.asarray(x_app)[None]
    xm_b = np.asarray(x_mot)[None]
    errs = {u: 0.0 for u in units}
    for s, x in ((0, x_app), (1, x_mot)):
        name = ("app", "mot")[s]
        live = [u for u in units if name in net.streams(u.layer)]
        for u in units:
            if u not in live and np.any(analytic[u][s].data != 0):
                errs[u] = np.inf
        if not live:
            continue
        if s == 0:
            f = lambda batch: net.channel_sums(live, batch, xm_b)  # noqa: E731
        else:
            f = lambda batch: net.channel_sums(live, xa_b, batch)  # noqa: E731
        jac = finite_difference_jacobian(f, SpatiotemporalTensor(x), h, chunk=chunk)
        for u, num in zip(live, jac):
            errs[u] = max(errs[u], relative_error(analytic[u][s].data, num))
    return errs


def check_network(net: NetworkGraph, seed: int = 0, h: float = 1e-5, layers=None, channel: int = 0,
                  corrupt: bool = False) -> dict[str, float]:
    """Max relative gradient error of channel ``channel`` (clipped to range) at every layer."""
    xa, xm = safe_inputs(net, seed, h)
    units = [UnitRef(n, min(channel, net.channels(n) - 1)) for n in (layers or net.layer_names)]
    ctx = corrupted_conv_backward() if corrupt else contextlib.nullcontext()
    with ctx:
        errs = check_units(net, units, xa, xm, h)
    return {u.layer: e for u, e in errs.items()}


def check_regularizers(count: int = 20, shape=(6, 6, 4, 2), seed: int = 0, h: float = 1e-5,
                       alpha: float = 3.0, kappa: float = 1.0, chi: float = 5.0) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    cfg = RegularizerConfig(B=160.0, alpha=alpha)
    worst = {"r_b": 0.0, "r_tv": 0.0}
    for _ in range(count):
        x = SpatiotemporalTensor(rng.standard_normal(shape))
        num_b = finite_difference_gradient(lambda t: r_b_value(t, cfg), x, h)
        num_tv = finite_difference_gradient(lambda t: r_tv_value(t, kappa, chi), x, h)
        worst["r_b"] = max(worst["r_b"], relative_error(r_b_gradient(x, cfg).data, num_b.data))
        worst["r_tv"] = max(worst["r_tv"], relative_error(r_tv_gradient(x, kappa, chi).data, num_tv.data))
    return worst
