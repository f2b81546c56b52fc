"""Binary PLY in the layout common Gaussian-splatting viewers expect."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .cloud import SplatCloud

SH_C0 = 0.28209479177387814
_PROPS = (["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity"]
          + [f"scale_{i}" for i in range(3)] + [f"rot_{i}" for i in range(4)])


class PlyError(ValueError):
    pass


def _logit(p):
    p = np.clip(p, 1e-7, 1 - 1e-7)
    return np.log(p) - np.log1p(-p)


def export_ply(cloud: SplatCloud, path) -> None:
    c = cloud.numpy()
    n = len(c)
    data = np.zeros((n, len(_PROPS)), dtype="<f4")
    data[:, 0:3] = c.positions
    data[:, 6:9] = (c.colors - 0.5) / SH_C0
    data[:, 9] = _logit(c.opacities)
    data[:, 10:13] = np.log(c.scales)
    data[:, 13:17] = c.rotations
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {p}" for p in _PROPS]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(data.tobytes())


def import_ply(path) -> SplatCloud:
    raw = Path(path).read_bytes()
    marker = b"end_header\n"
    end = raw.find(marker)
    if not raw.startswith(b"ply") or end < 0:
        raise PlyError(f"{path}: not a PLY file")
    lines = raw[:end].decode("ascii", errors="replace").splitlines()
    if "format binary_little_endian 1.0" not in lines:
        raise PlyError(f"{path}: only binary little-endian PLY is supported")
    n = None
    props = []
    for line in lines:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        elif parts[:1] == ["property"]:
            if parts[1] != "float":
                raise PlyError(f"{path}: unsupported property type {parts[1]}")
            props.append(parts[2])
    if n is None:
        raise PlyError(f"{path}: missing vertex element")
    body = raw[end + len(marker):]
    if len(body) != n * len(props) * 4:
        raise PlyError(f"{path}: truncated vertex data")
    data = np.frombuffer(body, dtype="<f4").reshape(n, len(props)).astype(np.float64)
    col = {p: i for i, p in enumerate(props)}
    try:
        get = lambda names: data[:, [col[k] for k in names]]  # noqa: E731
        positions = get(["x", "y", "z"])
        colors = get(["f_dc_0", "f_dc_1", "f_dc_2"]) * SH_C0 + 0.5
        opacities = 1.0 / (1.0 + np.exp(-data[:, col["opacity"]]))
        scales = np.exp(get([f"scale_{i}" for i in range(3)]))
        rotations = get([f"rot_{i}" for i in range(4)])
    except KeyError as exc:
        raise PlyError(f"{path}: missing property {exc}") from None
    rotations = rotations / np.linalg.norm(rotations, axis=1, keepdims=True)
    return SplatCloud(positions, scales, rotations, opacities, np.clip(colors, 0.0, 1.0))
