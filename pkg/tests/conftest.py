import pytest

from goalc import bundled
from goalc.cgm import parse_model


@pytest.fixture(scope="session")
def bsn():
    """The bundled body-sensor-network model."""
    return parse_model(bundled.data_text("bsn.json"))
