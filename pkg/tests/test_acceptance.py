"""The thirteen acceptance criteria at their stated tolerances.

Each test prints one ``[PASS]``/``[FAIL]`` line; the lines are repeated in
the terminal summary so they show up without ``-s``.  Run the file directly
(``python3 tests/test_acceptance.py``) for the report alone.
"""
import pytest

from ringabo.reproduce import Suite

RESULTS = []


@pytest.fixture(scope="module")
def suite():
    return Suite()


@pytest.mark.slow
@pytest.mark.parametrize("number", range(1, 14))
def test_criterion(suite, number):
    r = getattr(suite, f"c{number}")()
    line = r.line()
    RESULTS.append(line)
    print(line)
    assert r.passed, line


if __name__ == "__main__":
    s = Suite()
    results = s.all()
    for r in results:
        print(r.line())
    raise SystemExit(0 if all(r.passed for r in results) else 1)
