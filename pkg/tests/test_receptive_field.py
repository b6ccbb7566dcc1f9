import numpy as np
import pytest

from nets import build, conv, probed_rf_and_stride, random_graph
from stviz.network import LayerSpec, toy_two_stream


def test_single_conv():
    net = build(10, 10, 1, [conv("c", "app", np.ones((1, 3, 3, 3)))])
    assert net.receptive_field("c") == 3
    assert net.layer_stride("c") == 1


def test_conv_pool_conv():
    net = build(16, 16, 1, [
        conv("c1", "app", np.ones((2, 3, 3, 3))),
        LayerSpec("p", "maxpool2d", ("c1",), window=2, stride=2),
        conv("c2", "p", np.ones((1, 2, 3, 3))),
    ])
    assert [net.receptive_field(n) for n in net.layer_names] == [3, 4, 8]
    assert [net.layer_stride(n) for n in net.layer_names] == [1, 2, 2]
    assert probed_rf_and_stride(net, "c2") == (8, 2)


def test_global_layers_see_everything(toy):
    assert toy.receptive_field("fc") == 32
    assert toy.receptive_field("fusion") == 10
    assert toy.layer_stride("fusion") == 4
    assert toy_two_stream(0, height=24, width=24).receptive_field("fc") == 24


def test_fusion_takes_widest_branch():
    net = build(16, 16, 1, [
        conv("a", "app", np.ones((2, 3, 5, 5)), padding=2),
        conv("m", "mot", np.ones((2, 2, 3, 3)), padding=1),
        LayerSpec("f", "sum_fusion", ("a", "m")),
    ])
    assert net.receptive_field("f") == 5


def test_probe_agrees_on_random_graphs():
    rng = np.random.default_rng(99)
    for _ in range(20):
        net = random_graph(rng)
        last = net.layer_names[-1]
        assert probed_rf_and_stride(net, last) == (net.receptive_field(last), net.layer_stride(last))


@pytest.mark.parametrize("k, s", [(1, 1), (2, 2), (4, 1), (3, 3)])
def test_rf_recurrence_two_layers(k, s):
    net = build(24, 24, 1, [conv("c1", "app", np.ones((1, 3, k, k)), stride=s),
                            conv("c2", "c1", np.ones((1, 1, 3, 3)))])
    assert net.receptive_field("c2") == k + 2 * s
    assert net.layer_stride("c2") == s
