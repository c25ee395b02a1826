import pytest

from frosthpo.microtrainer import available_backends


@pytest.fixture(params=sorted(available_backends()))
def backend(request):
    """Runs a test once per step backend (numpy fallback + compiled kernel)."""
    return available_backends()[request.param]
