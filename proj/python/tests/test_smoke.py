import numpy as np
import pytest

import eitpp


@pytest.fixture(scope="module")
def setup():
    geom = eitpp.TankGeometry()
    mesh = eitpp.build_mesh(geom, eitpp.RefinementSpec(1.0, 30.0))
    pattern = eitpp.StimPattern.adjacent(geom)
    schedule = eitpp.MeasurementSchedule.adjacent(geom, pattern)
    return geom, mesh, pattern, schedule


def test_mesh(setup):
    geom, mesh, _, _ = setup
    assert mesh.nodes.shape == (mesh.node_count, 3)
    assert mesh.tets.shape == (mesh.element_count, 4)
    assert len(mesh.electrode_face_counts) == geom.electrode_count == 32
    ok, _ = mesh.validate()
    assert ok
    assert eitpp.mesh_from_json(mesh.to_json()).id == mesh.id


def test_forward_scaling(setup):
    _, mesh, pattern, schedule = setup
    sigma = np.full(mesh.element_count, 0.15)
    v1 = eitpp.solve_forward(mesh, sigma, pattern, schedule)
    v2 = eitpp.solve_forward(mesh, 2 * sigma, pattern, schedule, contact_impedance=0.005)
    assert v1.values.shape == (928,)
    assert schedule.retained_count == 928
    np.testing.assert_allclose(v1.values, 2 * v2.values, rtol=1e-9)


def test_gn_localizes_target(setup):
    _, mesh, pattern, schedule = setup
    jac = eitpp.compute_jacobian(mesh, 0.15, pattern, schedule)
    r = eitpp.build_reconstruction_matrix(jac, mesh)
    target = eitpp.place_target(np.eye(3), 0.0, 0.0, 1.0)
    assert eitpp.probe_distance(target) == pytest.approx(1.0, abs=1e-9)
    ref = eitpp.solve_forward(mesh, np.full(mesh.element_count, 0.15), pattern, schedule)
    meas = eitpp.solve_forward(mesh, eitpp.rasterize_target(mesh, target), pattern, schedule)
    img = eitpp.reconstruct_gn(r, eitpp.frame_difference(meas, ref), mesh)
    peak = mesh.nodes[np.argmax(img.values)]
    assert peak[0] > 0  # target sits at azimuth 0
    rep = eitpp.evaluate(mesh, img, target, 1.0, grid_n=32)
    assert np.isfinite(rep.nade) and 0 <= rep.sd <= 100


def test_pdipm_zero_data(setup):
    _, mesh, pattern, schedule = setup
    jac = eitpp.compute_jacobian(mesh, 0.15, pattern, schedule)
    solver = eitpp.PdipmSolver(mesh, jac)
    elements, image, trace = solver.solve(eitpp.VoltageFrame(np.zeros(928), schedule.id))
    assert not elements.any() and not image.values.any()


def test_rbf_memorizes():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(40, 3))
    t = np.sin(x)
    cfg = eitpp.TrainConfig()
    cfg.hidden_count = 36
    cfg.centers_from_inputs = True
    cfg.ridge = 1e-10
    cfg.ridge_steps = 1
    cfg.max_rounds = 0
    cfg.spread = 1.0
    model, rounds, best = eitpp.train(x, t, eitpp.RbfMode.PostProc, cfg)
    assert model.hidden_count == 36
    assert rounds[best][2] < 1e-6


def test_errors(setup):
    _, _, _, schedule = setup
    with pytest.raises(eitpp.Error):
        eitpp.frame_difference(eitpp.VoltageFrame(np.zeros(928), schedule.id), eitpp.VoltageFrame(np.zeros(928), 1))
    geom = eitpp.TankGeometry()
    geom.electrode_arc = -1
    with pytest.raises(eitpp.GeometryError):
        geom.check()
