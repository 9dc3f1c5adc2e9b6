"""Full-scale acceptance criteria, one test per criterion.

Each test prints a single ``criterion N [name] PASS/FAIL`` line; the lines
are repeated in the terminal summary.  Run only these with
``pytest -m acceptance`` or skip them with ``-m "not acceptance"``.
"""

import pytest

from multitype_cp import verify

CRITERIA = [
    (1, "engines"),
    (2, "coupling"),
    (3, "zeta"),
    (4, "good-arrow"),
    (5, "duality"),
    (6, "interface"),
    (7, "bounds"),
    (8, "lambda-c"),
    (9, "figures"),
    (10, "meanfield"),
]


@pytest.mark.acceptance
@pytest.mark.parametrize("number,suite", CRITERIA, ids=[f"c{n:02d}-{s}" for n, s in CRITERIA])
def test_criterion(number, suite, acceptance_lines):
    res = verify.run_suite(suite)
    assert res.number == number
    line = res.line()
    acceptance_lines.append(line)
    print(line)
    assert res.passed, line
