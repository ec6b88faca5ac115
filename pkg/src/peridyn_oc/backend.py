"""Selection of the pairwise-assembly backend.

Two interchangeable implementations exist: the compiled extension
``_accel`` (preferred) and the pure-Python ``_ref`` module.  Selection
order:

1. the explicit ``name`` argument, if given;
2. the ``PERIDYN_OC_BACKEND`` environment variable
   (``auto`` | ``compiled`` | ``python``);
3. ``auto``: compiled if importable, else the Python fallback.

Both backends implement the same function set with identical semantics
(see ``_ref``); results agree to floating-point reassociation noise.
"""

import os

from . import _ref
from .errors import ConfigurationError

try:
    from . import _accel
except ImportError:
    _accel = None

_warned = False


def available_backends():
    names = ["python"]
    if _accel is not None:
        names.insert(0, "compiled")
    return names


def get_backend(name=None):
    """Return the backend module and its name as (module, name)."""
    global _warned
    if name is None:
        name = os.environ.get("PERIDYN_OC_BACKEND", "auto")
    if name == "auto":
        if _accel is not None:
            return _accel, "compiled"
        if not _warned:
            import warnings
            warnings.warn("compiled assembly extension not available; "
                          "falling back to the pure-Python backend "
                          "(slower, same results)", RuntimeWarning)
            _warned = True
        return _ref, "python"
    if name == "compiled":
        if _accel is None:
            raise ConfigurationError(
                "backend 'compiled' requested but the extension is not "
                "built; reinstall the package or use PERIDYN_OC_BACKEND=python")
        return _accel, "compiled"
    if name == "python":
        return _ref, "python"
    raise ConfigurationError(
        "unknown backend %r (choose auto, compiled, or python)" % (name,))
