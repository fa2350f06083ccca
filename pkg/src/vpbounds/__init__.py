"""Vlasov-Poisson perturbation solver with bound-verification diagnostics."""
import os

# the TBB layer shipped with some numba builds is too old; the workqueue layer is always available
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

WORKERS_ENV = "VPBOUNDS_WORKERS"


def configure_workers() -> int:
    """Apply the worker-count environment variable to numba; returns the thread count used."""
    import numba

    requested = os.environ.get(WORKERS_ENV)
    if requested:
        numba.set_num_threads(max(1, min(int(requested), numba.config.NUMBA_NUM_THREADS)))
    return numba.get_num_threads()
