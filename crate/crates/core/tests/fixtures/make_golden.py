"""Writes the golden forward-render fixtures with numpy only.

Run from this directory: python3 make_golden.py
"""

import struct

import numpy as np

H, W = 4, 6
GAINS = np.array([2.0, 1.0, 1.6])
CCM = np.array([
    [1.6, -0.45, -0.15],
    [-0.25, 1.5, -0.25],
    [0.05, -0.55, 1.5],
])
GAMMA = 2.2
EPS = 1e-8

KINDS = {"linear": 1, "srgb": 2}


def write_container(path, img, kind):
    h, w, c = img.shape
    with open(path, "wb") as f:
        f.write(b"ISPIMG01")
        f.write(struct.pack("<5I", h, w, c, KINDS[kind], 0))
        planar = np.ascontiguousarray(img.transpose(2, 0, 1)).astype("<f4")
        f.write(planar.tobytes())


def forward(l):
    u = np.clip(l * GAINS, 0.0, 1.0)
    v = u @ CCM.T
    g = np.maximum(v, EPS) ** (1.0 / GAMMA)
    s = 3.0 * g**2 - 2.0 * g**3
    return np.clip(s, 0.0, 1.0)


def main():
    rng = np.random.default_rng(20240611)
    lin = rng.uniform(0.02, 0.45, size=(H, W, 3))
    lin[0, 0] = [0.0, 0.0, 0.0]
    lin[0, 1] = [1.0, 1.0, 1.0]
    lin[0, 2] = [0.9, 0.2, 0.1]    # red clipped by white balance
    lin[0, 3] = [0.001, 0.6, 0.001]  # negative colour-corrected red and blue
    lin[0, 4] = [0.5, 0.5, 0.5]
    lin[0, 5] = [0.25, 0.5, 0.3125]
    # the container stores f32; render what a reader will see
    lin = lin.astype(np.float32).astype(np.float64)
    write_container("golden_linear.ispimg", lin, "linear")
    write_container("golden_srgb.ispimg", forward(lin), "srgb")
    with open("golden_params.toml", "w") as f:
        f.write("wb_gains = [%r, %r, %r]\n" % tuple(map(float, GAINS)))
        f.write("ccm = [\n")
        for row in CCM:
            f.write("    [%r, %r, %r],\n" % tuple(map(float, row)))
        f.write("]\n")
        f.write("gamma = %r\nepsilon = %r\n" % (GAMMA, EPS))


if __name__ == "__main__":
    main()
