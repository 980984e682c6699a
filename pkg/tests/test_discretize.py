import math

import numpy as np
import pytest

import discretize
from discretize import (
    DIRICHLET,
    NEUMANN,
    GraphFunction,
    MeshParams,
    build_mesh,
    graph_distance,
    project_mass,
    resample,
    truncation_suspect,
)
from functionals import kinetic, mass
from graph import parse_graph
from models import MeshSizeError, ParameterError
from tests.conftest import random_function
from utils import MU_R, soliton_profile


def test_mesh_params_validation():
    with pytest.raises(ParameterError):
        MeshParams(h=0.0)
    with pytest.raises(ParameterError):
        MeshParams(h=1.0, L=5.0)
    with pytest.raises(ParameterError):
        MeshParams(h=0.1, far_bc="robin")
    with pytest.raises(ParameterError):
        MeshParams(h=0.1, edge_h={"e0": -1.0})


def test_line_dof_count(line):
    dg = build_mesh(line, MeshParams(h=0.01, L=20.0))
    assert dg.n_dofs == 4001
    assert (~dg.free).sum() == 2
    left, right = dg.edges
    assert np.array_equal(left.x, right.x)


def test_neumann_leaves_far_nodes_free(line):
    dg = build_mesh(line, MeshParams(h=0.01, L=20.0, far_bc=NEUMANN))
    assert dg.free.all()


def test_tadpole_loop_shares_vertex(tadpole):
    dg = build_mesh(tadpole, MeshParams(h=0.01, L=20.0))
    loop = dg.edge_mesh("e0")
    half = dg.edge_mesh("e1")
    assert len(loop.x) - 1 == 200
    assert loop.dofs[0] == loop.dofs[-1] == half.dofs[0] == dg.vertex_dof["v0"]


def test_cells_round_up():
    g = parse_graph("edge a b 1.0; halfline a")
    dg = build_mesh(g, MeshParams(h=0.3, L=10.0))
    em = dg.edge_mesh("e0")
    assert len(em.x) - 1 == 4
    assert em.h == pytest.approx(0.25)


def test_edge_width_override(example_a):
    dg = build_mesh(example_a, MeshParams(h=0.1, L=10.0, edge_h={"e0": 0.01}))
    assert len(dg.edge_mesh("e0").x) - 1 == 100
    assert len(dg.edge_mesh("e1").x) - 1 == 100


def test_mesh_size_guard(line, monkeypatch):
    monkeypatch.setattr(discretize, "MAX_DOFS", 100)
    with pytest.raises(MeshSizeError):
        build_mesh(line, MeshParams(h=0.01, L=20.0))


def test_matrices_symmetric_and_definite(signpost):
    dg = build_mesh(signpost, MeshParams(h=0.1, L=10.0))
    assert abs(dg.M - dg.M.T).max() < 1e-15
    assert abs(dg.K - dg.K.T).max() < 1e-15
    assert np.linalg.eigvalsh(dg.M.toarray()).min() > 0.0
    assert np.linalg.eigvalsh(dg.K.toarray()).min() > -1e-10
    # constants are in the kernel of the stiffness
    ones = np.ones(dg.n_dofs)
    assert np.abs(dg.K @ ones).max() < 1e-12


def test_vertex_value_same_from_every_edge(signpost, rng):
    dg = build_mesh(signpost, MeshParams(h=0.1, L=10.0))
    u = random_function(dg, rng)
    for v, k in dg.vertex_dof.items():
        for edge_id, end in signpost.incident(v):
            em = dg.edge_mesh(edge_id)
            x = em.length if end == "b" else 0.0
            assert u.value_at(edge_id, x) == u.dofs[k]


def test_quadratic_forms_converge_second_order(line):
    errors = []
    for h in (0.04, 0.02, 0.01):
        dg = build_mesh(line, MeshParams(h=h, L=20.0))
        u = dg.sample(lambda edge_id, x: soliton_profile(x))
        errors.append(abs(mass(u) - MU_R))
    assert errors[0] / errors[1] == pytest.approx(4.0, rel=0.1)
    assert errors[1] / errors[2] == pytest.approx(4.0, rel=0.1)


def test_kinetic_converges_second_order(half_line):
    exact = math.pi * math.sqrt(3.0) / 24.0
    errors = []
    for h in (0.04, 0.02, 0.01):
        dg = build_mesh(half_line, MeshParams(h=h, L=20.0))
        errors.append(abs(kinetic(dg.sample(lambda edge_id, x: soliton_profile(x))) - exact))
    assert errors[0] / errors[1] == pytest.approx(4.0, rel=0.15)
    assert errors[1] / errors[2] == pytest.approx(4.0, rel=0.15)


def test_project_mass(line_mesh):
    u = line_mesh.sample(lambda edge_id, x: soliton_profile(x))
    four = project_mass(u, 4.0)
    assert mass(four) == pytest.approx(4.0, rel=1e-14)
    halved = project_mass(four, 1.0)
    assert np.allclose(halved.dofs, four.dofs / 2.0, rtol=1e-14)
    assert np.allclose(project_mass(u, mass(u)).dofs, u.dofs, rtol=1e-15)


def test_project_soliton_to_half_mass(line_mesh):
    u = line_mesh.sample(lambda edge_id, x: soliton_profile(x))
    v = project_mass(u, MU_R / 2.0)
    scale = math.sqrt(MU_R / 2.0 / mass(u))
    assert scale == pytest.approx(1.0 / math.sqrt(2.0), rel=1e-4)
    assert np.allclose(v.dofs, scale * u.dofs, rtol=1e-14)


def test_project_zero_mass_fails(line_mesh):
    with pytest.raises(ParameterError):
        project_mass(line_mesh.zeros(), 1.0)


def test_graph_function_validation(line_mesh):
    with pytest.raises(ParameterError):
        GraphFunction(line_mesh, np.zeros(3))
    bad = np.zeros(line_mesh.n_dofs)
    bad[5] = np.nan
    with pytest.raises(ParameterError):
        GraphFunction(line_mesh, bad)


def test_resample_between_meshes(line):
    coarse = build_mesh(line, MeshParams(h=0.02, L=20.0))
    fine = build_mesh(line, MeshParams(h=0.01, L=20.0))
    u = coarse.sample(lambda edge_id, x: soliton_profile(x))
    v = resample(u, fine)
    # every coarse node is a fine node
    assert np.allclose(v.dofs[fine.edge_mesh("e0").dofs][::2], u.dofs[coarse.edge_mesh("e0").dofs])
    assert mass(v) == pytest.approx(mass(u), rel=1e-3)


def test_graph_distance(tadpole):
    dg = build_mesh(tadpole, MeshParams(h=0.1, L=10.0))
    d = graph_distance(dg, "e0", 1.0)
    # the far point of the loop is 1 from the vertex both ways
    assert d[dg.vertex_dof["v0"]] == pytest.approx(1.0)
    half = dg.edge_mesh("e1")
    assert np.allclose(d[half.dofs], 1.0 + half.x)


def test_truncation_suspect(line):
    dg = build_mesh(line, MeshParams(h=0.05, L=20.0, far_bc=DIRICHLET))
    centered = dg.sample(lambda edge_id, x: soliton_profile(x))
    assert not truncation_suspect(centered)
    far = dg.sample(lambda edge_id, x: soliton_profile(x - 19.0) if edge_id == "e0" else 0.0 * x)
    assert truncation_suspect(far)
