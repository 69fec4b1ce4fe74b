"""Output files: hash-tagged CSV, the FDNS binary ensemble pack, and run manifests.

FDNS layout (all little-endian)::

    offset  type          field
    0       4s            magic b"FDNS"
    4       u4            version (1)
    8       u4            n_modes
    12      f8            dt
    20      u4            stride
    24      u4            n_traj
    28      u4            n_times
    32      u4            n_obs
    36      32s           sha256 digest of the resolved config
    68      n_obs * 16s   observable names, NUL padded
    ...     f8[n_times]   sample times
    ...     f8[n_obs, n_traj, n_times]  observable values, C order
"""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
import struct

import numpy as np

MAGIC = b"FDNS"
VERSION = 1
_HEADER = struct.Struct("<4sIIdIIII32s")
_NAME_BYTES = 16


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def write_csv(path, header, rows, config_hash):
    """CSV with a leading ``# config_hash=...`` comment; floats in shortest round-trip form."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return path


def read_csv(path):
    """(config_hash, header, rows as float arrays where possible)."""
    with Path(path).open() as fh:
        first = fh.readline().strip()
        tag = first.split("=", 1)[1] if first.startswith("# config_hash=") else None
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    return tag, header, rows


def write_fdns(path, times, observables, n_modes, dt, stride, config_hash):
    """Write an ensemble of observable series, ``observables[name]`` of shape (n_traj, n_times)."""
    names = list(observables)
    data = np.stack([np.asarray(observables[k], dtype="<f8") for k in names])
    n_obs, n_traj, n_times = data.shape
    for k in names:
        if len(k.encode()) > _NAME_BYTES:
            raise ValueError(f"observable name {k!r} longer than {_NAME_BYTES} bytes")
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n_modes, float(dt), stride, n_traj, n_times, n_obs,
                              bytes.fromhex(config_hash)))
        for k in names:
            fh.write(k.encode().ljust(_NAME_BYTES, b"\0"))
        fh.write(np.asarray(times, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(data).tobytes())
    return Path(path)


def read_fdns(path):
    """Inverse of :func:`write_fdns`; returns a dict with header fields, times and observables."""
    raw = Path(path).read_bytes()
    magic, version, n_modes, dt, stride, n_traj, n_times, n_obs, digest = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"not an FDNS file: magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported FDNS version {version}")
    off = _HEADER.size
    names = []
    for _ in range(n_obs):
        names.append(raw[off:off + _NAME_BYTES].rstrip(b"\0").decode())
        off += _NAME_BYTES
    times = np.frombuffer(raw, "<f8", n_times, off)
    off += 8 * n_times
    data = np.frombuffer(raw, "<f8", n_obs * n_traj * n_times, off).reshape(n_obs, n_traj, n_times)
    return dict(version=version, n_modes=n_modes, dt=dt, stride=stride, config_hash=digest.hex(),
                times=times, observables={k: data[i] for i, k in enumerate(names)})


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, *, command, config_text, config_hash, version, seed, wall_time, files):
    """JSON manifest; ``files`` are paths relative to the manifest's directory."""
    path = Path(path)
    root = path.parent
    manifest = dict(
        command=command,
        version=version,
        config_hash=config_hash,
        seed=seed,
        wall_time=wall_time,
        files={str(f): sha256_file(root / f) for f in sorted(map(str, files))},
        config=config_text,
    )
    path.write_text(json.dumps(manifest, indent=2, ensure_ascii=False) + "\n")
    return manifest


def read_manifest(path):
    return json.loads(Path(path).read_text())
