from __future__ import annotations

import pytest

from v2xcorridor import synth
from v2xcorridor.scenario import encode_scenario


@pytest.fixture(scope="session")
def short_session():
    """Two noiseless trips over the Park Street preset."""
    return synth.generate(duration_s=400.0, seed=7)


@pytest.fixture(scope="session")
def short_scenario(short_session):
    out = short_session
    return encode_scenario([*out.maps, *out.spat, *out.bsm], list(out.truth.spec.ids))
