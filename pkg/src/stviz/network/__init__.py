from .calibration import CalibrationTable, calibrate, noise_inputs
from .graph import LayerSpec, NetworkGraph, NetworkSpec, UnitRef
from .io import (
    load_network,
    load_weights,
    read_spec,
    save_weights,
    seeded_init,
    toy_two_stream,
    toy_two_stream_spec,
    write_spec,
)
