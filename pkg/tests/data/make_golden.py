"""Regenerate the golden flow files with a plain-Python reference encoder.

Deliberately shares no code with the package: the tensor file is written
with struct and each byte is computed with scalar float arithmetic.

    python tests/data/make_golden.py
"""

import math
import random
import struct
from pathlib import Path

HERE = Path(__file__).parent
H, W, T = 4, 4, 2
SEED = 1729


def main():
    rng = random.Random(SEED)
    # flow[i][j][k] = (u, v)
    flow = [[[(rng.gauss(0.0, 1.0), rng.gauss(0.0, 1.0)) for _ in range(T)] for _ in range(W)] for _ in range(H)]

    with open(HERE / "golden_flow.stt", "wb") as fh:
        fh.write(b"STT1\n")
        fh.write(f"{H} {W} {T} 2\n".encode("ascii"))
        for i in range(H):
            for j in range(W):
                for k in range(T):
                    u, v = flow[i][j][k]
                    fh.write(struct.pack("<dd", u, v))

    lo, hi = math.inf, -math.inf
    for i in range(H):
        for j in range(W):
            for k in range(T):
                u, v = flow[i][j][k]
                m = math.sqrt(u * u + v * v)
                lo = min(lo, u, v, m)
                hi = max(hi, u, v, m)

    out = HERE / "golden_flow"
    out.mkdir(exist_ok=True)
    for k in range(T):
        data = bytearray()
        for i in range(H):
            for j in range(W):
                u, v = flow[i][j][k]
                for val in (u, v, math.sqrt(u * u + v * v)):
                    data.append(int(math.floor((val - lo) / (hi - lo) * 255.0 + 0.5)))
        header = b"P6\n" + f"{W} {H}\n".encode("ascii") + b"255\n"
        (out / f"frame{k:04d}.ppm").write_bytes(header + bytes(data))


if __name__ == "__main__":
    main()
