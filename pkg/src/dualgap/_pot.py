"""Import POT with only its numpy backend (the others pull in heavy frameworks)."""

import os

for _name in ("TENSORFLOW", "JAX", "PYTORCH", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_name}", "1")

import ot  # noqa: E402

emd = ot.emd

__all__ = ["ot", "emd"]
