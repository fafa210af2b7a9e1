import numpy as np
import pytest

from memax import (
    DrudeLorentzParams,
    ModDLParams,
    PiecewiseMaterial,
    YeeGrid,
    build_curl_pair,
    dl_law,
    helmholtz_projections,
    mod_dl_law,
)


@pytest.fixture(scope="session")
def bundle4():
    return build_curl_pair(YeeGrid((1.0, 1.0, 1.0), (4, 4, 4), 3, 2))


@pytest.fixture(scope="session")
def basis4(bundle4):
    return helmholtz_projections(bundle4)


@pytest.fixture(scope="session")
def dl_params():
    return DrudeLorentzParams(1.0, [(1.0, 1.0, 2.0)])


@pytest.fixture(scope="session")
def dl_params_b():
    return DrudeLorentzParams(1.0, [(0.5, 1.2, 2.5)])


@pytest.fixture(scope="session")
def mod_params(dl_params):
    return ModDLParams(dl_params, 4.0)


@pytest.fixture(scope="session")
def material_dl(dl_params, dl_params_b):
    return PiecewiseMaterial(dl_law(dl_params), dl_law(dl_params_b), 1.0, 1.0)


@pytest.fixture(scope="session")
def material_mod(mod_params):
    law = mod_dl_law(mod_params)
    return PiecewiseMaterial(law, law, 1.0, 1.0)


@pytest.fixture()
def rng():
    return np.random.default_rng(20260808)
