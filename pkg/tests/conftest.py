import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("osdlab", deadline=None)
settings.load_profile("osdlab")


def int_rank(rows: list[int]) -> int:
    """GF(2) rank of rows given as Python ints (xor-basis insertion)."""
    basis: dict[int, int] = {}
    for v in rows:
        while v:
            top = v.bit_length() - 1
            if top not in basis:
                basis[top] = v
                break
            v ^= basis[top]
    return len(basis)


def rows_as_ints(a) -> list[int]:
    return [int("".join(str(int(b)) for b in row) or "0", 2) for row in np.asarray(a)]


def same_row_space(a, b) -> bool:
    ra, rb = rows_as_ints(a), rows_as_ints(b)
    r = int_rank(ra)
    return r == int_rank(rb) == int_rank(ra + rb)


def all_codewords(g) -> np.ndarray:
    g = np.asarray(g, dtype=np.int64)
    k = g.shape[0]
    msgs = (np.arange(2**k)[:, None] >> np.arange(k)[::-1]) & 1
    return (msgs @ g) % 2


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
