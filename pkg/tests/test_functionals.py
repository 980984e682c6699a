import math

import numpy as np
import pytest

from discretize import MeshParams, build_mesh, project_mass
from functionals import (
    Rearrangement,
    differential,
    dilate,
    dilation,
    dilation_closed_form,
    dilation_energy,
    dilation_first_derivative,
    dilation_second_derivative,
    energy,
    energy_gradient,
    energy_lower_bound,
    gn_quotient,
    inner,
    kinetic,
    lp_integral,
    mass,
    multiplier,
    pohozaev_residual,
    rearrange,
    scale_to_pohozaev,
    stationary_residual,
)
from graph import load_graph
from models import ParameterError, PreconditionError, ProblemParams, UnsupportedGeometryError
from tests.conftest import graph_file, random_function
from utils import C6_R, C6_R_PLUS, MU_R, MU_R_PLUS, SOLITON_L4, soliton_profile

CRITICAL = ProblemParams(p=4.0, alpha=0.0, mu=MU_R)
FOCUSING = ProblemParams(p=4.0, alpha=1.0, mu=MU_R)


def sampled_soliton(dg, lam=1.0):
    return dg.sample(lambda edge_id, x: soliton_profile(x, lam))


def test_zero_function(line_mesh):
    u = line_mesh.zeros()
    assert mass(u) == 0.0
    assert energy(u, FOCUSING) == 0.0
    assert not energy_gradient(u, FOCUSING).dofs.any()


def test_soliton_mass(line_mesh, half_line_mesh):
    assert mass(sampled_soliton(line_mesh)) == pytest.approx(MU_R, abs=1e-4)
    assert mass(sampled_soliton(half_line_mesh)) == pytest.approx(MU_R_PLUS, abs=1e-4)


def test_soliton_critical_energy_vanishes(line_mesh, half_line_mesh):
    assert abs(energy(sampled_soliton(line_mesh), CRITICAL)) < 2e-4
    assert abs(energy(sampled_soliton(half_line_mesh), CRITICAL)) < 2e-4


def test_soliton_focusing_energy(line_mesh):
    u = sampled_soliton(line_mesh)
    assert lp_integral(u, 4.0) == pytest.approx(SOLITON_L4, rel=1e-5)
    assert energy(u, FOCUSING) == pytest.approx(-math.sqrt(3.0) / 4.0, abs=1e-3)


@pytest.mark.parametrize("seed, name", list(enumerate(["line", "star3", "tadpole", "signpost"])))
@pytest.mark.parametrize("p", [3.0, 4.5])
def test_gradient_matches_central_difference(seed, name, p):
    rng = np.random.default_rng([seed, int(10 * p)])
    dg = build_mesh(load_graph(graph_file(name)), MeshParams(h=0.05, L=10.0))
    params = ProblemParams(p=p, alpha=float(rng.uniform(-2.0, 2.0)), mu=1.0)
    eps = 1e-5
    for _ in range(3):
        u = random_function(dg, rng, scale=float(rng.uniform(0.3, 1.0)))
        v_dofs = rng.standard_normal(dg.n_dofs)
        v_dofs[~dg.free] = 0.0
        v = u.with_dofs(v_dofs)
        g = energy_gradient(u, params)
        analytic = inner(g, v)
        numeric = (energy(u.with_dofs(u.dofs + eps * v_dofs), params)
                   - energy(u.with_dofs(u.dofs - eps * v_dofs), params)) / (2.0 * eps)
        assert analytic == pytest.approx(numeric, rel=1e-5, abs=1e-9)
        assert analytic == pytest.approx(float(differential(u, params) @ v_dofs), rel=1e-12, abs=1e-12)


def test_soliton_is_critical_with_multiplier_one_third(line):
    # long enough that the pinned far ends see no tail
    u = sampled_soliton(build_mesh(line, MeshParams(h=1e-3, L=30.0)))
    assert multiplier(u, CRITICAL) == pytest.approx(1.0 / 3.0, abs=1e-5)
    assert stationary_residual(u, CRITICAL, lam=1.0 / 3.0) < 1e-5
    # lam defaults to the multiplier and is the third positional argument
    lam = multiplier(u, CRITICAL)
    assert stationary_residual(u, CRITICAL) == stationary_residual(u, CRITICAL, lam)
    assert stationary_residual(u, CRITICAL, 1.0) > 1e-2


def test_gn_quotient_scaling_invariance(star3, rng):
    dg = build_mesh(star3, MeshParams(h=0.05, L=10.0))
    u = random_function(dg, rng)
    q = gn_quotient(u, 6.0)
    assert gn_quotient(u.with_dofs(3.7 * u.dofs), 6.0) == pytest.approx(q, rel=1e-12)
    assert gn_quotient(u, 4.0) > 0.0


def test_gn_quotient_soliton_values(line_mesh, half_line_mesh):
    assert gn_quotient(sampled_soliton(line_mesh), 6.0) == pytest.approx(C6_R, rel=1e-2)
    assert gn_quotient(sampled_soliton(half_line_mesh), 6.0) == pytest.approx(C6_R_PLUS, rel=1e-2)


def test_gn_quotient_needs_derivative(line_mesh):
    with pytest.raises(ParameterError):
        gn_quotient(line_mesh.zeros(), 6.0)


def test_pohozaev_residual(line_mesh, tadpole):
    assert pohozaev_residual(sampled_soliton(line_mesh), CRITICAL) < 1e-3
    assert pohozaev_residual(line_mesh.zeros(), CRITICAL) == 0.0
    dg = build_mesh(tadpole, MeshParams(h=0.1, L=10.0))
    with pytest.raises(UnsupportedGeometryError):
        pohozaev_residual(sampled_soliton(dg), CRITICAL)


def test_dilate_identity_and_mass(line):
    dg = build_mesh(line, MeshParams(h=1e-3, L=40.0))
    u = sampled_soliton(dg)
    assert np.array_equal(dilate(u, 1.0).dofs, u.dofs)
    assert mass(dilate(u, 2.0)) == pytest.approx(mass(u), rel=1e-8)
    assert mass(dilate(u, 2.0, renormalize=False)) == pytest.approx(mass(u), rel=1e-4)


def test_dilation_reports_renormalization_factor(line):
    dg = build_mesh(line, MeshParams(h=1e-3, L=40.0))
    u = sampled_soliton(dg)
    raw, one = dilation(u, 2.0, renormalize=False)
    assert one == 1.0
    out, factor = dilation(u, 2.0)
    assert factor == pytest.approx(1.0, abs=1e-4)
    assert factor ** 2 * mass(raw) == pytest.approx(mass(u), rel=1e-12)
    assert np.allclose(out.dofs, factor * raw.dofs, rtol=0.0, atol=1e-15)


@pytest.mark.parametrize("lam", [0.5, 2.0])
def test_dilation_energy_law(line, lam):
    dg = build_mesh(line, MeshParams(h=1e-3, L=40.0))
    u = sampled_soliton(dg)
    params = ProblemParams(p=4.0, alpha=1.0, mu=MU_R)
    assert energy(dilate(u, lam), params) == pytest.approx(dilation_energy(u, params, lam), rel=1e-3)


def test_dilation_first_derivative_is_pohozaev_combination(star3, rng):
    dg = build_mesh(star3, MeshParams(h=0.05, L=10.0))
    u = random_function(dg, rng)
    params = ProblemParams(p=3.5, alpha=-0.7, mu=1.0)
    h = 1e-5
    numeric = (dilation_energy(u, params, 1.0 + h) - dilation_energy(u, params, 1.0 - h)) / (2.0 * h)
    assert dilation_first_derivative(u, params) == pytest.approx(numeric, rel=1e-8)


def test_dilation_closed_form_soliton(line_mesh):
    params = ProblemParams(p=4.0, alpha=-1.0, mu=MU_R)
    value = dilation_closed_form(sampled_soliton(line_mesh), params)
    assert value == pytest.approx(-math.sqrt(3.0) / 4.0, rel=1e-4)
    assert dilation_closed_form(sampled_soliton(line_mesh), CRITICAL) == 0.0


@pytest.mark.parametrize("p", [3.0, 4.0, 5.0])
def test_star_rigidity_second_derivative_negative(star3, p):
    rng = np.random.default_rng(int(p * 10))
    dg = build_mesh(star3, MeshParams(h=0.02, L=15.0))
    params = ProblemParams(p=p, alpha=-1.0, mu=1.0)
    for _ in range(5):
        u = scale_to_pohozaev(random_function(dg, rng, decay=float(rng.uniform(0.3, 1.0))), params)
        assert pohozaev_residual(u, params) < 1e-10
        second = dilation_second_derivative(u, params)
        assert second < 0.0
        assert second == pytest.approx(dilation_closed_form(u, params), rel=1e-8)


def test_second_derivative_needs_pohozaev(line_mesh):
    params = ProblemParams(p=4.0, alpha=-1.0, mu=MU_R)
    with pytest.raises(PreconditionError) as err:
        dilation_second_derivative(sampled_soliton(line_mesh), params)
    assert err.value.residual > 1e-6


def test_second_derivative_vanishes_at_alpha_zero(line_mesh):
    u = sampled_soliton(line_mesh)
    assert dilation_second_derivative(u, CRITICAL, tol=1e-3) == pytest.approx(0.0, abs=1e-3)


def test_rearrange_preserves_norms(star3, rng):
    dg = build_mesh(star3, MeshParams(h=0.01, L=10.0))
    u = random_function(dg, rng)
    for target in Rearrangement:
        r = rearrange(u, target)
        assert math.sqrt(mass(r)) == pytest.approx(math.sqrt(mass(u)), rel=1e-6)
        assert lp_integral(r, 6.0) == pytest.approx(lp_integral(u, 6.0), rel=5e-3)


def test_symmetric_rearrangement_lowers_energy(star3):
    dg = build_mesh(star3, MeshParams(h=0.01, L=10.0))
    # bumps away from the vertex: every level has at least two preimages
    u = dg.sample(lambda edge_id, x: soliton_profile(x - 4.0) - soliton_profile(4.0) * np.exp(-x))
    u = u.with_dofs(np.clip(u.dofs, 0.0, None))
    params = ProblemParams(p=4.0, alpha=0.0, mu=mass(u))
    r = rearrange(u, Rearrangement.LINE_SYMMETRIC)
    assert energy(r, params) <= energy(u, params) + 1e-3
    assert kinetic(r) <= kinetic(u) + 1e-3


def test_rearrange_symmetric_fixed_point(line):
    dg = build_mesh(line, MeshParams(h=0.01, L=20.0))
    u = sampled_soliton(dg)
    r = rearrange(u, Rearrangement.LINE_SYMMETRIC)
    for x in (0.0, 0.5, 1.0, 3.0):
        assert r.value_at("h0", x) == pytest.approx(u.value_at("e0", x), abs=1e-3)


def test_rearrange_rejects_negative(line_mesh):
    u = sampled_soliton(line_mesh)
    with pytest.raises(ParameterError):
        rearrange(u.with_dofs(-u.dofs), Rearrangement.HALF_LINE_DECREASING)


def test_energy_lower_bound_defocusing(line, rng):
    dg = build_mesh(line, MeshParams(h=0.05, L=10.0))
    params = ProblemParams(p=4.0, alpha=-1.0, mu=2.0)
    for _ in range(10):
        u = project_mass(random_function(dg, rng, decay=float(rng.uniform(0.2, 2.0))), params.mu)
        assert energy(u, params) >= energy_lower_bound(u, params, MU_R) - 1e-10


def test_energy_lower_bound_needs_cp(line_mesh):
    with pytest.raises(ParameterError):
        energy_lower_bound(sampled_soliton(line_mesh), FOCUSING, MU_R)
