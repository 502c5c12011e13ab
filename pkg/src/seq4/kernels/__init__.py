"""Hot recurrent kernels with a compiled core and a numpy fallback.

The compiled module is used when it imports; set ``SEQ4_KERNELS=numpy`` to
force the fallback.  Both backends expose the same functions, and
:func:`get_backend` returns either one explicitly for tests and benchmarks.
"""
import os

from . import _numpy

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_FUNCS = (
    "sigmoid",
    "lstm_cell_forward",
    "lstm_cell_backward",
    "lstm_seq_forward",
    "lstm_seq_backward",
    "attention_forward",
    "attention_backward",
)


def available_backends():
    return ["numpy"] + (["cython"] if _ckernels is not None else [])


def get_backend(name=None):
    if name is None:
        name = os.environ.get("SEQ4_KERNELS", "cython" if _ckernels else "numpy")
    if name == "numpy":
        return _numpy
    if name == "cython":
        if _ckernels is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


_active = get_backend()
BACKEND = _active.BACKEND
globals().update({f: getattr(_active, f) for f in _FUNCS})


def use_backend(name):
    """Switch the module-level kernels (process wide)."""
    global _active, BACKEND
    _active = get_backend(name)
    BACKEND = _active.BACKEND
    globals().update({f: getattr(_active, f) for f in _FUNCS})
