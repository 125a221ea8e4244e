import io
import os
import tempfile

import numpy as np


def atomic_write_bytes(path, payload):
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def format_rows(header, columns, fmt="%.9g"):
    """CSV text: ``header`` line then one row per index of the column arrays."""
    buf = io.StringIO()
    table = np.column_stack([np.asarray(c, dtype=np.float64) for c in columns])
    np.savetxt(buf, table, fmt=fmt, delimiter=",", header=header, comments="")
    return buf.getvalue()
