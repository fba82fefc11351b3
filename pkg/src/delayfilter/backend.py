"""Backend selection and model-function compilation.

The default kernel namespace is :mod:`delayfilter.kernels`, whose backend is
fixed when it is first imported (from the ``DELAYFILTER_BACKEND`` environment
variable). :func:`get_kernels` can additionally load a second, independent
instance of the kernel module under the other backend, so both can coexist in
one process for equivalence testing and benchmarking.
"""

import importlib.util
import os
import sys

from . import kernels as _default_kernels

ENV_VAR = _default_kernels.ENV_VAR

_MODULES = {_default_kernels.BACKEND: _default_kernels}
_COMPILED = {}


def active_backend():
    """Name of the backend the default kernel namespace runs on."""
    return _default_kernels.BACKEND


def available_backends():
    """Backends loadable on this installation."""
    return ("numba", "numpy") if _default_kernels.HAVE_NUMBA else ("numpy",)


def get_kernels(backend=None):
    """Return a kernel namespace for ``backend``.

    ``None`` means the default namespace. Requesting the non-default backend
    re-executes the kernel module under that flag (compiled variants are
    cached per process).
    """
    if backend is None:
        return _default_kernels
    backend = str(backend).strip().lower()
    if backend == "auto":
        return _default_kernels
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not _default_kernels.HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    mod = _MODULES.get(backend)
    if mod is None:
        mod = _load_kernel_module(backend)
        _MODULES[backend] = mod
    return mod


def _load_kernel_module(backend):
    modname = f"delayfilter._kernels_{backend}"
    if modname in sys.modules:
        return sys.modules[modname]
    spec = importlib.util.spec_from_file_location(modname, _default_kernels.__file__)
    mod = importlib.util.module_from_spec(spec)
    old = os.environ.get(ENV_VAR)
    os.environ[ENV_VAR] = backend
    try:
        sys.modules[modname] = mod
        spec.loader.exec_module(mod)
    finally:
        if old is None:
            os.environ.pop(ENV_VAR, None)
        else:
            os.environ[ENV_VAR] = old
    return mod


def compiled(fn, kernels):
    """Compile a batch model callable for the given kernel namespace.

    Plain passthrough on the numpy backend. Dispatchers are cached per
    function object so repeated model construction with identical parameters
    does not trigger recompilation.
    """
    if not kernels.USE_NUMBA:
        return fn
    key = (id(fn), kernels.BACKEND)
    hit = _COMPILED.get(key)
    if hit is not None and hit[0] is fn:
        return hit[1]
    import numba

    disp = numba.njit(cache=False, fastmath=False)(fn)
    _COMPILED[key] = (fn, disp)
    return disp
