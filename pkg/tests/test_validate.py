import numpy as np

from memdarcy.validate import kernel_checks, read_report, run_suite, write_report


def test_suite_passes_and_round_trips(tmp_path, coarse_table):
    checks = run_suite(0, coarse_table)
    assert all(c.passed for c in checks), [c.line() for c in checks if not c.passed]
    names = [c.name for c in checks]
    assert len(set(names)) == len(names)
    write_report(checks, tmp_path / "v.csv")
    back = read_report(tmp_path / "v.csv")
    assert [(c.name, c.defect, c.passed) for c in back] == [(c.name, c.defect, c.passed) for c in checks]


def test_deterministic_checks_independent_of_seed(coarse_table):
    a = {c.name: c.defect for c in run_suite(0, coarse_table) if c.deterministic}
    b = {c.name: c.defect for c in run_suite(9, coarse_table) if c.deterministic}
    assert a == b


def test_injected_asymmetry_fails_only_symmetry(coarse_table):
    bad = coarse_table.copy()
    # antisymmetric perturbation leaves the symmetric part and its eigenvalues unchanged
    bad.K1[:, 0, 1] += 1e-3
    bad.K1[:, 1, 0] -= 1e-3
    failed = [c.name for c in kernel_checks(bad) if not c.passed]
    assert failed == ["kernel_symmetry"]
    assert all(c.passed for c in kernel_checks(coarse_table))
