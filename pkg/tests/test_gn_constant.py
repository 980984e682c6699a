import math

import pytest

from discretize import MeshParams, build_mesh
from functionals import gn_constant, gn_quotient
from models import ParameterError
from tests.conftest import random_function
from utils import C6_R, C6_R_PLUS, MU_R, MU_R_PLUS

pytestmark = pytest.mark.slow

MESH = MeshParams(h=0.02, L=30.0)


def test_gn_constant_line(line):
    report = gn_constant(build_mesh(line, MESH), q=6.0)
    assert report.C_q_estimate == pytest.approx(C6_R, rel=0.02)
    assert report.mu_G_estimate == pytest.approx(MU_R, rel=0.02)
    assert report.maximizer is not None


def test_gn_constant_half_line(half_line):
    report = gn_constant(build_mesh(half_line, MESH), q=6.0)
    assert report.C_q_estimate == pytest.approx(C6_R_PLUS, rel=0.02)
    assert report.mu_G_estimate == pytest.approx(MU_R_PLUS, rel=0.02)


def test_gn_constant_star_between_line_and_half_line(star3):
    report = gn_constant(build_mesh(star3, MESH), q=6.0)
    assert 0.98 * C6_R <= report.C_q_estimate <= 1.02 * C6_R_PLUS


def test_estimate_dominates_sampled_quotients(line, rng):
    dg = build_mesh(line, MeshParams(h=0.05, L=15.0))
    report = gn_constant(dg, q=4.0)
    assert report.mu_G_estimate is None
    for _ in range(10):
        u = random_function(dg, rng, decay=float(rng.uniform(0.2, 2.0)))
        assert gn_quotient(u, 4.0) <= report.C_q_estimate + 1e-6


def test_gn_constant_rejects_small_exponent(line):
    with pytest.raises(ParameterError):
        gn_constant(build_mesh(line, MeshParams(h=0.1, L=10.0)), q=2.0)


def test_mu_g_from_c6():
    assert math.sqrt(3.0 / C6_R) == pytest.approx(MU_R)


def test_iteration_cap_is_reported(star3, caplog):
    report = gn_constant(build_mesh(star3, MeshParams(h=0.05, L=15.0)), q=6.0, maxit=1)
    assert report.converged is False
    assert report.unconverged
    assert set(report.unconverged) <= set(report.iterations)
    assert all(report.iterations[label] == 1 for label in report.unconverged)
    assert "hit maxit=1" in caplog.text


def test_gn_constant_rejects_zero_iterations(line):
    with pytest.raises(ParameterError):
        gn_constant(build_mesh(line, MeshParams(h=0.1, L=10.0)), maxit=0)
