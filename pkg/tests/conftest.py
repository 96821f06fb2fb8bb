import gc

import jax
import pytest
from hypothesis import HealthCheck, settings

jax.config.update("jax_enable_x64", True)

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def af_params():
    from pannplast.potentials import load_default_params
    return load_default_params("AF")[0]


@pytest.fixture(autouse=True, scope="module")
def _release_executables():
    # every compiled program keeps thousands of memory mappings alive; a full
    # session would otherwise run into the kernel's per-process map limit
    yield
    jax.clear_caches()
    gc.collect()
