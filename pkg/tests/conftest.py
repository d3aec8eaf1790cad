import numpy as np
import pytest


def random_survival_instance(rng, n=None, max_n=500, tie_times=True,
                             tie_risks=True):
    """Random censored instance with deliberate time and risk ties."""
    if n is None:
        n = int(rng.integers(5, max_n + 1))
    if tie_times:
        time = rng.integers(1, max(2, n // 3) + 1, size=n).astype(float)
    else:
        time = rng.exponential(1.0, size=n)
    event = (rng.random(n) < 0.7).astype(int)
    if tie_risks:
        risk = rng.integers(0, max(2, n // 4) + 1, size=n).astype(float)
    else:
        risk = rng.standard_normal(n)
    return time, event, risk


def harrell_oracle(time, event, risk):
    """Naive pairwise concordance enumeration (independent of the library).

    Returns (concordant, tied, comparable) as plain counts.
    """
    t = [float(v) for v in time]
    e = [int(v) for v in event]
    r = [float(v) for v in risk]
    n = len(t)
    concordant = tied = comparable = 0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if t[i] < t[j]:
                if e[i] != 1:
                    continue
            elif t[i] == t[j]:
                if not (e[i] == 1 and e[j] == 0):
                    continue
            else:
                continue
            comparable += 1
            if r[i] > r[j]:
                concordant += 1
            elif r[i] == r[j]:
                tied += 1
    return concordant, tied, comparable


@pytest.fixture(scope="session")
def rng_factory():
    return lambda seed: np.random.default_rng(seed)
