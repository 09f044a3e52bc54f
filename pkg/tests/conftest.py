import numpy as np
import pytest

from affinelab import stats as st


@pytest.fixture
def rng():
    return st.stream(20260809, 0)


def rerepresentations(L, rng, n):
    """Random alternative representatives of an affine lattice class."""
    out = []
    for _ in range(n):
        # random SL2(Z) element as a short word in the standard generators
        g = np.eye(2, dtype=np.int64)
        for _ in range(rng.integers(1, 5)):
            k = int(rng.integers(-3, 4))
            if rng.random() < 0.5:
                g = g @ np.array([[1, k], [0, 1]], dtype=np.int64)
            else:
                g = g @ np.array([[1, 0], [k, 1]], dtype=np.int64)
        m = rng.integers(-5, 6, size=2)
        out.append(L.rerepresent(g.astype(float), m.astype(float)))
    return out
