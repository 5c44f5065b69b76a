"""Every acceptance criterion at its stated tolerance, one pass/fail line each.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines live; they
are also printed by ``lab accept``.
"""
import pytest

from superlab.lab.acceptance import CRITERIA, run_criterion


@pytest.mark.parametrize("cid", sorted(CRITERIA))
def test_criterion(cid, store_dir, capsys):
    res = run_criterion(cid)
    with capsys.disabled():
        print("\n" + res.line())
    assert res.passed, res.line()
