"""Network spec files, weight directories and seeded initialization.

A spec (and a weight manifest, which is a spec plus file references) is a
key=value file::

    input.height=32
    input.width=32
    input.frames=4
    layers=app_conv1,app_relu1,...
    app_conv1.kind=conv2d
    app_conv1.inputs=app
    app_conv1.in_channels=3
    app_conv1.out_channels=8
    app_conv1.kernel=3
    app_conv1.stride=1
    app_conv1.padding=1
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .. import tensor as stt
from ..errors import FormatError, SpecError
from ..kvfile import KV, dump_kv, read_kv
from .graph import APP, MOT, KINDS, LayerSpec, NetworkGraph, NetworkSpec

MANIFEST = "manifest.kv"


def _int(kv: KV, key, default=None):
    if key not in kv:
        if default is None:
            raise FormatError(f"missing key {key!r}", path=kv.path)
        return default
    try:
        return int(kv[key])
    except ValueError:
        kv.fail(key, f"not an integer: {kv[key]!r}")


def _kernel(kv: KV, key):
    raw = kv.require(key)
    try:
        parts = [int(p) for p in raw.lower().replace("x", ",").split(",")]
    except ValueError:
        kv.fail(key, f"bad kernel size {raw!r}")
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        kv.fail(key, f"bad kernel size {raw!r}")
    return tuple(parts)


def spec_from_kv(kv: KV) -> NetworkSpec:
    H = _int(kv, "input.height")
    W = _int(kv, "input.width")
    T = _int(kv, "input.frames")
    names = [n.strip() for n in kv.require("layers").split(",") if n.strip()]
    layers = []
    prev = None
    for name in names:
        kind = kv.require(f"{name}.kind")
        if kind not in KINDS:
            kv.fail(f"{name}.kind", f"unknown layer kind {kind!r}")
        if f"{name}.inputs" in kv:
            inputs = tuple(p.strip() for p in kv[f"{name}.inputs"].split(",") if p.strip())
        elif prev is not None:
            inputs = (prev,)
        else:
            raise FormatError(f"{name}.inputs: first layer must name its input", path=kv.path)
        ls = LayerSpec(name, kind, inputs)
        if kind == "conv2d":
            ls.in_channels = _int(kv, f"{name}.in_channels")
            ls.out_channels = _int(kv, f"{name}.out_channels")
            ls.kernel = _kernel(kv, f"{name}.kernel")
            ls.stride = _int(kv, f"{name}.stride", 1)
            ls.padding = _int(kv, f"{name}.padding", 0)
        elif kind == "maxpool2d":
            ls.window = _int(kv, f"{name}.window")
            ls.stride = _int(kv, f"{name}.stride", ls.window)
        elif kind == "fully_connected":
            ls.out_channels = _int(kv, f"{name}.out_channels")
            if f"{name}.in_channels" in kv:
                ls.in_channels = _int(kv, f"{name}.in_channels")
        layers.append(ls)
        prev = name
    spec = NetworkSpec(H, W, T, layers)
    spec.infer()
    return spec


def spec_to_items(spec: NetworkSpec) -> dict:
    items = {
        "input.height": spec.height,
        "input.width": spec.width,
        "input.frames": spec.frames,
        "layers": [ls.name for ls in spec.layers],
    }
    for ls in spec.layers:
        n = ls.name
        items[f"{n}.kind"] = ls.kind
        items[f"{n}.inputs"] = list(ls.inputs)
        if ls.kind == "conv2d":
            items[f"{n}.in_channels"] = ls.in_channels
            items[f"{n}.out_channels"] = ls.out_channels
            items[f"{n}.kernel"] = f"{ls.kernel[0]}x{ls.kernel[1]}"
            items[f"{n}.stride"] = ls.stride
            items[f"{n}.padding"] = ls.padding
        elif ls.kind == "maxpool2d":
            items[f"{n}.window"] = ls.window
            items[f"{n}.stride"] = ls.stride
        elif ls.kind == "fully_connected":
            items[f"{n}.out_channels"] = ls.out_channels
    return items


def read_spec(path) -> NetworkSpec:
    return spec_from_kv(read_kv(path))


def write_spec(spec: NetworkSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_kv(spec_to_items(spec)))


def _param_shapes(spec: NetworkSpec, ls: LayerSpec, info):
    if ls.kind == "conv2d":
        return (ls.out_channels, ls.in_channels) + ls.kernel, ls.in_channels * ls.kernel[0] * ls.kernel[1]
    H, W, C = info[ls.inputs[0]].shape
    return (ls.out_channels, H * W * C), H * W * C


def seeded_init(spec: NetworkSpec, seed: int) -> NetworkGraph:
    """He-normal weights (std sqrt(2 / fan_in)), zero biases, drawn in layer order."""
    info = spec.infer()
    rng = np.random.default_rng(seed)
    layers = []
    for ls in spec.layers:
        ls = LayerSpec(**{**ls.__dict__, "weight": None, "bias": None})
        if ls.kind in ("conv2d", "fully_connected"):
            shape, fan_in = _param_shapes(spec, ls, info)
            ls.weight = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
            ls.bias = np.zeros(ls.out_channels)
        layers.append(ls)
    return NetworkGraph(NetworkSpec(spec.height, spec.width, spec.frames, layers))


def _param_to_tensor(a):
    a = np.asarray(a)
    return stt.SpatiotemporalTensor(a.reshape(a.shape + (1,) * (4 - a.ndim)))


def save_weights(net: NetworkGraph, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    items = spec_to_items(net.spec)
    for ls in net.layers:
        if ls.weight is None:
            continue
        wfile, bfile = f"{ls.name}.weight.stt", f"{ls.name}.bias.stt"
        stt.save(_param_to_tensor(ls.weight), d / wfile)
        stt.save(stt.SpatiotemporalTensor(ls.bias.reshape(1, 1, 1, -1)), d / bfile)
        items[f"{ls.name}.weight"] = wfile
        items[f"{ls.name}.bias"] = bfile
    with open(d / MANIFEST, "w", encoding="utf-8") as fh:
        fh.write(dump_kv(items))


def load_weights(directory) -> NetworkGraph:
    d = Path(directory)
    kv = read_kv(d / MANIFEST)
    spec = spec_from_kv(kv)
    info = spec.infer()
    for ls in spec.layers:
        if ls.kind not in ("conv2d", "fully_connected"):
            continue
        shape, _ = _param_shapes(spec, ls, info)
        w = stt.load(d / kv.require(f"{ls.name}.weight")).data
        b = stt.load(d / kv.require(f"{ls.name}.bias")).data
        if w.size != int(np.prod(shape)):
            raise SpecError(f"weight file holds {w.size} values, expected shape {shape}", ls.name)
        if b.size != ls.out_channels:
            raise SpecError(f"bias file holds {b.size} values, expected {ls.out_channels}", ls.name)
        ls.weight = w.reshape(shape).copy()
        ls.bias = b.reshape(-1).copy()
    return NetworkGraph(spec)


def load_network(path, seed: int = 0) -> NetworkGraph:
    """Weight directory (has a manifest) -> loaded net; spec file -> seeded net."""
    p = Path(path)
    if p.is_dir():
        return load_weights(p)
    return seeded_init(read_spec(p), seed)


def toy_two_stream_spec(height=32, width=32, frames=4, width_app=8, width_mot=8, classes=10) -> NetworkSpec:
    """Two conv+relu+pool blocks per stream, concat fusion, one fc layer."""
    layers = []
    for stream, cin, c1 in ((APP, 3, width_app), (MOT, 2 * frames, width_mot)):
        prev = stream
        for b, (i, o) in enumerate(((cin, c1), (c1, 2 * c1)), start=1):
            layers += [
                LayerSpec(f"{stream}_conv{b}", "conv2d", (prev,), in_channels=i, out_channels=o,
                          kernel=(3, 3), stride=1, padding=1),
                LayerSpec(f"{stream}_relu{b}", "relu", (f"{stream}_conv{b}",)),
                LayerSpec(f"{stream}_pool{b}", "maxpool2d", (f"{stream}_relu{b}",), window=2, stride=2),
            ]
            prev = f"{stream}_pool{b}"
    layers.append(LayerSpec("fusion", "concat_fusion", (f"{APP}_pool2", f"{MOT}_pool2")))
    layers.append(LayerSpec("fc", "fully_connected", ("fusion",), out_channels=classes))
    return NetworkSpec(height, width, frames, layers)


def toy_two_stream(seed=0, **kw) -> NetworkGraph:
    return seeded_init(toy_two_stream_spec(**kw), seed)

