"""The nine acceptance criteria at the default desk-scale configuration.

Each criterion prints one ``PASS``/``FAIL`` line (with its runtime) to the
terminal, then asserts.  Tolerances are pinned below so that a loosened
threshold in the package shows up as a failure here.
"""

import pytest

from fracbdsde.acceptance import BUDGET_MINUTES, CRITERIA, SUBCOMMAND_CRITERIA, TOLERANCES, run_criterion
from fracbdsde.config import RunConfig

PINNED = {
    "law_z": 4.0,                    # 1: covariance within 4 MC standard errors
    "kernel_variance": 1e-4,         # 1: kernel-quadrature variance identity
    "inversion_order": 0.4,          # 2: inversion error order, 256 -> 1024 cells
    "power_rule": 1e-10,             # 2: power-rule identities
    "transfer_rel": 1e-3,            # 3: adjointness and isometry at 1024 cells
    "girsanov_z": 4.0,               # 4: expectation identities
    "shift_algebra_rel": 1e-10,      # 4: epsilon and J algebra per path
    "duality_z": 4.0,                # 5: deterministic and residual duality
    "sde_closed_form_rel": 1e-8,     # 6: closed-form anticipating cases
    "heun_order": (1.7, 2.3),        # 6: order "approximately 2"
    "bdsde_closed_form_rel": 0.01,   # 7: linear example at 5 nodes
    "round_trip_rel": 0.02,          # 7: representation error of the round trip
    "comparison_se": 2.0,            # 7: ordering of means
    "self_convergence_order": 0.5,   # 7: 32 -> 128 steps
    "heat_rel": 0.01,                # 8: u = eps * heat per frozen path
    "fd_rel": 0.02,                  # 8: FD vs MC, relative part
    "fd_se": 4.0,                    # 8: FD vs MC, standard-error part
    "growth_exponent": 1.2,          # 8: growth bound fit
    "apriori_exponent": 2.2,         # 9: a-priori estimate fit
    "z_rms": 0.05,                   # 9: variational vs regression Z
}


def test_tolerances_are_pinned():
    assert TOLERANCES == PINNED


def test_budgets_are_pinned():
    assert BUDGET_MINUTES == {1: 1, 2: 1, 3: 1, 4: 2, 5: 5, 6: 2, 7: 10, 8: 10, 9: 5}


def test_each_criterion_reachable_through_one_subcommand():
    owners = {n: [s for s, ns in SUBCOMMAND_CRITERIA.items() if s != "all" and n in ns] for n in CRITERIA}
    assert all(len(v) == 1 for v in owners.values())
    assert sorted(SUBCOMMAND_CRITERIA["all"]) == sorted(CRITERIA)


def test_default_configuration():
    cfg = RunConfig()
    assert (cfg.hurst, cfg.horizon, cfg.steps, cfg.paths) == (0.3, 1.0, 64, 100_000)


@pytest.mark.acceptance
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    rep = run_criterion(number, RunConfig())
    failed = [c for c in rep.checks if not c.informational and not c.passed]
    status = "PASS" if rep.passed else "FAIL"
    with capsys.disabled():
        print(f"\n{status} criterion {number} ({rep.title}): {len(rep.checks)} checks, {rep.seconds:.1f} s")
        for c in failed:
            print(f"    FAIL {c.name}: {c.detail}")
        if rep.error:
            print(f"    error: {rep.error}")
    assert rep.passed, "; ".join(f"{c.name}: {c.detail}" for c in failed) or rep.error
