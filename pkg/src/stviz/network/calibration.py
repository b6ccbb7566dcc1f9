from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import FormatError
from ..kvfile import parse_kv
from .graph import NetworkGraph, UnitRef

DEAD_FALLBACK = 1.0


@dataclass
class CalibrationTable:
    """Per-unit maximum activation used to normalize the activation term.

    Units whose recorded maximum was <= 0 hold ``DEAD_FALLBACK`` and are
    listed in ``dead``.
    """

    values: dict[UnitRef, float]
    dead: set[UnitRef] = field(default_factory=set)
    note: str = ""

    def __post_init__(self):
        for u, v in self.values.items():
            if not v > 0:
                raise ValueError(f"calibration value for {u} must be > 0, got {v}")

    def __getitem__(self, unit: UnitRef) -> float:
        try:
            return self.values[unit]
        except KeyError:
            raise KeyError(f"no calibration entry for unit {unit}") from None

    def __contains__(self, unit):
        return unit in self.values

    def __len__(self):
        return len(self.values)

    def is_dead(self, unit: UnitRef) -> bool:
        return unit in self.dead

    def to_text(self) -> str:
        lines = []
        if self.note:
            lines.append(f"# note: {self.note}")
        for u in sorted(self.dead):
            lines.append(f"# dead: {u.layer}/{u.channel}")
        for u, v in self.values.items():
            lines.append(f"{u.layer}/{u.channel}={v!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, path=None) -> "CalibrationTable":
        kv = parse_kv(text, path=path)
        values = {}
        for key, raw in kv.items():
            layer, sep, ch = key.rpartition("/")
            try:
                if not sep:
                    raise ValueError
                unit = UnitRef(layer, int(ch))
                values[unit] = float(raw)
            except ValueError:
                kv.fail(key, f"expected layer/channel=value, got {key}={raw}")
            if not values[unit] > 0 or not np.isfinite(values[unit]):
                kv.fail(key, "calibration values must be finite and > 0")
        dead, note = set(), ""
        for line in text.splitlines():
            s = line.strip()
            if s.startswith("# dead:"):
                dead.add(UnitRef.parse(s[len("# dead:"):].strip()))
            elif s.startswith("# note:"):
                note = s[len("# note:"):].strip()
        missing = dead - values.keys()
        if missing:
            raise FormatError(f"dead units without values: {sorted(map(str, missing))}", path=path)
        return cls(values, dead, note)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "CalibrationTable":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read(), path=str(path))


def calibrate(net: NetworkGraph, inputs, note: str = "") -> CalibrationTable:
    """Record the maximum activation of every channel of every layer over ``inputs``.

    ``inputs`` is a non-empty sequence of (x_app, x_mot) pairs.
    """
    inputs = list(inputs)
    if not inputs:
        raise ValueError("calibration needs at least one input pair")
    app = np.stack([np.asarray(a) for a, _ in inputs])
    mot = np.stack([np.asarray(m) for _, m in inputs])
    acts, _ = net.run_batch(app, mot)
    values, dead = {}, set()
    for name in net.layer_names:
        peak = acts[name].max(axis=(0, 1, 2))
        for c, v in enumerate(peak):
            u = UnitRef(name, c)
            if v > 0:
                values[u] = float(v)
            else:
                values[u] = DEAD_FALLBACK
                dead.add(u)
    if not note:
        note = f"{len(inputs)} input pairs"
    return CalibrationTable(values, dead, note)


def noise_inputs(net: NetworkGraph, count: int, seed: int, amplitude: float = 80.0):
    """Seeded uniform noise pairs in [-amplitude, amplitude]."""
    rng = np.random.default_rng(seed)
    return [
        (rng.uniform(-amplitude, amplitude, net.app_shape), rng.uniform(-amplitude, amplitude, net.mot_shape))
        for _ in range(count)
    ]
