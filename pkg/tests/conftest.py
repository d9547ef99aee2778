import pytest

from canevo.model import Message, validate_message_set


def make_set(*rows):
    """Rows are (id, priority, c, t, d[, j])."""
    return validate_message_set(Message(*row) for row in rows)


@pytest.fixture
def micro():
    # m1 high priority, m2 low; the worked two-message example
    return make_set(("m1", 1, 1, 4, 4, 0), ("m2", 2, 2, 10, 10, 0))
