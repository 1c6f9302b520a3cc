"""CSV ingestion and the binary model file.

Model file layout (all little-endian)::

    header  64 bytes, see HEADER
    arrays  float64 / int64 blocks in a fixed per-method order
    crc32   u32 over every preceding byte

The README carries the full byte table. Floats are written verbatim, so a
loaded model predicts bit-identically to the one that was saved.
"""

import csv
import math
import os
import struct
import zlib

import numpy as np

from .baseline import BaselineModel
from .errors import DataError, ModelFormatError
from .fast import FastModel
from .kernels import KernelConfig, KernelKind

MAGIC = b"MRVRMODL"
FORMAT_VERSION = 1
# magic, version, method, kernel kind, flags, 3 pad, width, N, U, V, M, iterations, pad, seed, log-marginal
HEADER = struct.Struct("<8sHBBB3xdIIIIIIqd")
assert HEADER.size == 64
CRC = struct.Struct("<I")

METHOD_CODES = {"existing": 0, "proposed": 1}
KERNEL_CODES = {KernelKind.GAUSSIAN: 0}
FLAG_BIAS, FLAG_CONVERGED, FLAG_SEED = 1, 2, 4


def load_table(path, role="inputs+targets"):
    """Read a CSV with header ``x1..xU[,t1..tV]``.

    ``role`` is ``"inputs+targets"`` (targets required) or ``"inputs"``
    (targets optional). Returns ``(X, T)`` with ``T`` None when absent.
    """
    if role not in ("inputs+targets", "inputs"):
        raise ValueError(f"unknown role {role!r}")
    if not os.path.isfile(path):
        raise DataError(f"{path}: no such file")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    U = _count_prefix(header, "x")
    V = _count_prefix(header[U:], "t")
    if U == 0 or U + V != len(header):
        raise DataError(f"{path}: header must be x1..xU followed by t1..tV, got {','.join(header)}")
    if role == "inputs+targets" and V == 0:
        raise DataError(f"{path}: no target columns t1..tV")
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")
    data = np.empty((len(body), len(header)))
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {r}, column {header[c]}: not a number ({cell.strip()!r})") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {r}, column {header[c]}: non-finite value {cell.strip()!r}")
            data[r - 2, c] = v
    X = data[:, :U].copy()
    T = data[:, U:].copy() if V else None
    return X, T


def _count_prefix(names, prefix):
    k = 0
    while k < len(names) and names[k] == f"{prefix}{k + 1}":
        k += 1
    return k


def write_table(path, columns, names):
    """Write equal-length columns as CSV with full float precision."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*columns):
            w.writerow([repr(float(v)) for v in row])


def _arrays(model):
    common = [model.active.astype("<i8"), model.alpha, model.rv_inputs]
    if model.method_tag == "proposed":
        return common + [model.weight_mean, model.sigma, model.omega_mp]
    return common + [model.mu_j, model.sigma_j, model.sigma2_mp]


def _shapes(method, M, Mk, U, V):
    common = [((M,), "<i8"), ((M,), "<f8"), ((Mk, U), "<f8")]
    if method == "proposed":
        return common + [((M, V), "<f8"), ((M, M), "<f8"), ((V, V), "<f8")]
    return common + [((V, M), "<f8"), ((V, M, M), "<f8"), ((V,), "<f8")]


def dumps_model(model):
    method = model.method_tag
    M = model.n_relevance
    V = model.n_outputs
    U = model.rv_inputs.shape[1]
    flags = (FLAG_BIAS if model.has_bias else 0) | (FLAG_CONVERGED if model.converged else 0)
    seed = 0
    if model.seed is not None:
        flags |= FLAG_SEED
        seed = int(model.seed)
    head = HEADER.pack(MAGIC, FORMAT_VERSION, METHOD_CODES[method], KERNEL_CODES[model.kernel.kind], flags,
                       float(model.kernel.width), model.n_train, U, V, M, model.iterations, 0, seed,
                       float(model.log_marginal))
    parts = [head]
    for arr, (shape, dt) in zip(_arrays(model), _shapes(method, M, M - int(model.has_bias), U, V)):
        a = np.asarray(arr)
        if a.shape != shape:
            raise ValueError(f"model array has shape {a.shape}, expected {shape}")
        parts.append(np.ascontiguousarray(a, dtype=dt).tobytes())
    body = b"".join(parts)
    return body + CRC.pack(zlib.crc32(body))


def loads_model(buf):
    buf = bytes(buf)
    if len(buf) < HEADER.size + CRC.size:
        raise ModelFormatError(f"truncated model file ({len(buf)} bytes)")
    (magic, version, mcode, kcode, flags, width, N, U, V, M, iters, _, seed, log_ml) = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version} (expected {FORMAT_VERSION})")
    methods = {v: k for k, v in METHOD_CODES.items()}
    kinds = {v: k for k, v in KERNEL_CODES.items()}
    if mcode not in methods or kcode not in kinds:
        raise ModelFormatError("unknown method or kernel code")
    method = methods[mcode]
    has_bias = bool(flags & FLAG_BIAS)
    Mk = M - int(has_bias)
    if Mk < 0:
        raise ModelFormatError("inconsistent relevance-vector count")
    shapes = _shapes(method, M, Mk, U, V)
    need = HEADER.size + sum(8 * int(np.prod(s)) for s, _ in shapes) + CRC.size
    if len(buf) != need:
        raise ModelFormatError(f"truncated or oversized model file ({len(buf)} bytes, expected {need})")
    (crc,) = CRC.unpack_from(buf, need - CRC.size)
    if crc != zlib.crc32(buf[: need - CRC.size]):
        raise ModelFormatError("checksum mismatch")
    arrays = []
    off = HEADER.size
    for shape, dt in shapes:
        n = int(np.prod(shape))
        arrays.append(np.frombuffer(buf, dtype=dt, count=n, offset=off).reshape(shape).astype(dt[1:]))
        off += 8 * n
    try:
        kernel = KernelConfig(width, kinds[kcode])
    except ValueError as err:
        raise ModelFormatError(str(err)) from err
    meta = dict(kernel=kernel, active=arrays[0].astype(np.intp), has_bias=has_bias, rv_inputs=arrays[2],
                alpha=arrays[1], iterations=iters, log_marginal=log_ml, converged=bool(flags & FLAG_CONVERGED),
                n_train=N, seed=seed if flags & FLAG_SEED else None)
    if method == "proposed":
        return FastModel(weight_mean=arrays[3], sigma=arrays[4], omega_mp=arrays[5], **meta)
    return BaselineModel(mu_j=arrays[3], sigma_j=arrays[4], sigma2_mp=arrays[5], **meta)


def save_model(model, path):
    data = dumps_model(model)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_model(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as err:
        raise ModelFormatError(f"{path}: {err.strerror}") from err
    return loads_model(data)
