import sys
from functools import lru_cache
from pathlib import Path
from types import SimpleNamespace

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from compsys import certify, netmodel  # noqa: E402

BUILDERS = {"lv16": netmodel.build_lotka_volterra, "vdp9": netmodel.build_vdp_network}
SIZES = {"lv16": 16, "vdp9": 9}


@lru_cache(maxsize=None)
def _model_and_lfs(name, seed):
    model = BUILDERS[name](SIZES[name], seed)
    return model, certify.lyapunov_functions(model)


@lru_cache(maxsize=None)
def _certified(name, seed, gamma):
    model, lfs = _model_and_lfs(name, seed)
    cm = certify.comparison_matrix(model, lfs, gamma)
    flows = certify.flow_bounds(model, lfs, gamma)
    return SimpleNamespace(model=model, lfs=lfs, cm=cm, flows=flows, gamma=gamma)


@pytest.fixture(scope="session")
def certified():
    """certified(name, seed, gamma): model and certificates, computed once per session."""
    return _certified
