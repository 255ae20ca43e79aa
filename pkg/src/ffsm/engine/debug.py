"""CSV tensor dumps for debugging: a ``shape=...`` header, then row-major rows."""
import numpy as np

from ..errors import FormatError
from .tensor import Tensor


def dump_csv(tensor, path):
    data = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
    shape = data.shape if data.ndim else (1,)
    rows = data.reshape(-1, shape[-1])
    with open(path, "w") as fh:
        fh.write("shape=" + ",".join(str(d) for d in shape) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_csv(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("shape="):
            raise FormatError(f"{path}: missing shape header")
        shape = tuple(int(d) for d in header[6:].split(","))
        values = [float(v) for line in fh if line.strip() for v in line.split(",")]
    if len(values) != int(np.prod(shape)):
        raise FormatError(f"{path}: {len(values)} values for shape {shape}")
    return Tensor(np.array(values).reshape(shape))
