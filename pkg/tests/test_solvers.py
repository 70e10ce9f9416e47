import numpy as np
import pytest
import scipy.sparse as sps

from common.errors import ConfigError, DimensionError, DivergenceError, NodeFailure, exit_code_for
from common.models.geometry import ImageGrid, Sinogram
from common.models.node_state import NodeState
from common.models.projector import SparseProjector
from common.models.specs import AdmmConfig, CtrConfig, QuantizerSpec
from services.comm import InProcessTransport, partition_angles, partition_image
from services.metrics import rmse
from services.projector import estimate_operator_norm, forward_project
from services.solvers import (
    auto_step,
    build_nodes,
    ctr_solve,
    dadmm_run,
    dual_update,
    local_u_update,
    local_x_segment_update,
)


def _rel_rmse(x: ImageGrid, truth: ImageGrid) -> float:
    return rmse(x, truth) / float(np.sqrt(np.mean(truth.pixels**2)))


def _dadmm(P, d, M, cfg, **kwargs):
    angles = partition_angles(len(P.angle_indices), M)
    segments = partition_image(P.n_cols, P.image_side, M)
    nodes = build_nodes(P, d, angles, segments, cfg)
    transport = kwargs.pop("transport", None) or InProcessTransport(M, timeout=60)
    x, trace = dadmm_run(nodes, cfg, transport, **kwargs)
    return x, trace, transport


# ---------------------------------------------------------------------------
# CTR
# ---------------------------------------------------------------------------


def test_ctr_zero_data_stops_immediately(small_projector):
    d = Sinogram(36, 12, np.zeros(36 * 12))
    steps = []
    out = ctr_solve(small_projector, d, CtrConfig(iterations=50), on_iteration=lambda e, u, rel: steps.append(rel))
    assert np.all(out.pixels == 0)
    assert steps == [0.0]


def test_ctr_matches_least_squares(small_projector, random_image):
    d = forward_project(small_projector, random_image)
    out = ctr_solve(small_projector, d, CtrConfig(iterations=20000, stop_tol=0.0))
    dense = small_projector.matrix.toarray()
    lsq = np.linalg.lstsq(dense, d.flat, rcond=None)[0]
    assert np.linalg.norm(out.pixels - lsq) <= 1e-3 * np.linalg.norm(lsq)
    assert (out.width, out.height) == (8, 8)


def test_ctr_runs_exactly_e_steps_without_tolerance(small_projector, random_image):
    d = forward_project(small_projector, random_image)
    seen = []
    ctr_solve(small_projector, d, CtrConfig(iterations=25, stop_tol=0.0), on_iteration=lambda e, u, rel: seen.append(e))
    assert seen == list(range(25))


def test_ctr_fixed_learning_rate_single_step(small_projector, random_image):
    d = forward_project(small_projector, random_image)
    out = ctr_solve(small_projector, d, CtrConfig(learning_rate=1e-3, iterations=1, stop_tol=0.0))
    expected = 1e-3 * (small_projector.matrix.T @ d.flat)
    np.testing.assert_allclose(out.pixels, expected, rtol=1e-12)


def test_ctr_large_step_diverges(small_projector, random_image):
    d = forward_project(small_projector, random_image)
    with pytest.raises(DivergenceError) as info:
        ctr_solve(small_projector, d, CtrConfig(learning_rate=10.0, iterations=200))
    assert exit_code_for(info.value) == 2


def test_ctr_five_thousand_steps_never_increase_residual_or_error(small_projector, random_image):
    d = forward_project(small_projector, random_image)
    dense = small_projector.matrix.toarray()
    lsq = np.linalg.lstsq(dense, d.flat, rcond=None)[0]
    residuals, errors = [], []

    def _record(e, u, rel):
        if e % 500 == 499:
            residuals.append(float(np.linalg.norm(dense @ u - d.flat)))
            errors.append(float(np.linalg.norm(u - lsq)))

    out = ctr_solve(small_projector, d, CtrConfig(iterations=5000, stop_tol=0.0), on_iteration=_record)
    assert len(residuals) == 10
    assert all(b <= a * (1 + 1e-12) for a, b in zip(residuals, residuals[1:]))
    assert all(b <= a * (1 + 1e-12) for a, b in zip(errors, errors[1:]))
    assert errors[-1] < errors[0]
    assert _rel_rmse(out, random_image) < _rel_rmse(ImageGrid.zeros(8, 8), random_image)


def test_ctr_rejects_bad_input(small_projector):
    with pytest.raises(DimensionError):
        ctr_solve(small_projector, Sinogram(1, 12, np.zeros(12)), CtrConfig())
    with pytest.raises(ConfigError):
        ctr_solve(small_projector, Sinogram(36, 12, np.zeros(432)), CtrConfig(iterations=0))


def test_auto_step_is_below_inverse_lipschitz(small_projector):
    L = float(np.linalg.norm(small_projector.matrix.toarray(), 2) ** 2)
    eta = auto_step(small_projector)
    assert 0.9 / L < eta < 1.0 / L
    assert auto_step(small_projector, shift=2.0) < eta
    assert estimate_operator_norm(small_projector) == pytest.approx(L, rel=0.05)


# ---------------------------------------------------------------------------
# dADMM update rules
# ---------------------------------------------------------------------------


def _node(projector, rng, *, segment=(0, 64), eta1=1e-3):
    return NodeState(
        node_id=0,
        projector=projector,
        data=rng.standard_normal(projector.n_rows),
        u=rng.standard_normal(64),
        lam=rng.standard_normal(64),
        x_local=rng.standard_normal(64),
        segment=segment,
        shape=(8, 8),
        eta1=eta1,
    )


def test_local_u_update_gradient_steps(small_projector):
    rng = np.random.default_rng(11)
    node = _node(small_projector, rng)
    cfg = AdmmConfig(rho=0.5, inner_iters_u=3)
    P = small_projector.matrix
    u = node.u.copy()
    target = node.x_local - node.lam / cfg.rho
    for _ in range(3):
        u = u - node.eta1 * (P.T @ (P @ u - node.data) + cfg.rho * (u - target))
    out = local_u_update(node, cfg)
    np.testing.assert_allclose(out, u, rtol=1e-12, atol=1e-12)
    assert node.u is out


def test_local_u_update_converges_to_closed_form(small_projector):
    rng = np.random.default_rng(21)
    node = _node(small_projector, rng, eta1=auto_step(small_projector, shift=1.0))
    cfg = AdmmConfig(rho=1.0, inner_iters_u=20000)
    P = small_projector.matrix.toarray()
    target = node.x_local - node.lam / cfg.rho
    exact = np.linalg.solve(P.T @ P + cfg.rho * np.eye(64), P.T @ node.data + cfg.rho * target)
    out = local_u_update(node, cfg)
    np.testing.assert_allclose(out, exact, rtol=1e-8, atol=1e-8)


def test_local_u_update_with_all_zero_rows_moves_to_consensus_target():
    rng = np.random.default_rng(22)
    blind = SparseProjector(sps.csr_matrix((12, 64)), 12, (0,), 8)
    node = _node(blind, rng, eta1=0.5)
    target = node.x_local - node.lam / 1.0
    out = local_u_update(node, AdmmConfig(rho=1.0, inner_iters_u=60))
    np.testing.assert_allclose(out, target, rtol=0, atol=1e-12)


def test_kkt_point_is_a_fixed_point_of_one_round(small_projector):
    # λ 在自己的區段上為零，且 P_mᵀ(P_m x − d_m) + λ = 0
    rng = np.random.default_rng(23)
    lo, hi = 16, 48
    P = small_projector.matrix.toarray()
    x = rng.uniform(0.0, 1.0, 64)
    A = P[:, lo:hi]
    z = rng.standard_normal(P.shape[0])
    r = z - A @ np.linalg.lstsq(A, z, rcond=None)[0]
    lam = -P.T @ r
    assert np.abs(lam[lo:hi]).max() < 1e-9
    assert np.abs(lam).max() > 1e-3
    node = NodeState(
        node_id=0,
        projector=small_projector,
        data=P @ x - r,
        u=x.copy(),
        lam=lam.copy(),
        x_local=x.copy(),
        segment=(lo, hi),
        shape=(8, 8),
        eta1=auto_step(small_projector, shift=2.0),
    )
    cfg = AdmmConfig(rho=2.0, eta2=0.2, inner_iters_u=10, inner_iters_x=10)
    u = local_u_update(node, cfg)
    np.testing.assert_allclose(u, x, rtol=0, atol=1e-9)
    seg = local_x_segment_update(node, cfg)
    np.testing.assert_allclose(seg, x[lo:hi], rtol=0, atol=1e-9)
    dual_update(node, x, cfg.rho)
    np.testing.assert_allclose(node.lam, lam, rtol=0, atol=1e-8)


def test_local_x_segment_update_contracts_to_target(small_projector):
    rng = np.random.default_rng(12)
    node = _node(small_projector, rng, segment=(16, 40))
    target = node.u[16:40] + node.lam[16:40] / 2.0
    exact = local_x_segment_update(node, AdmmConfig(rho=2.0, eta2=0.5, inner_iters_x=1))
    np.testing.assert_allclose(exact, target, rtol=1e-12)

    x0 = node.x_local[16:40]
    out = local_x_segment_update(node, AdmmConfig(rho=1.0, eta2=0.2, inner_iters_x=10))
    target = node.u[16:40] + node.lam[16:40]
    np.testing.assert_allclose(out, target + 0.8**10 * (x0 - target), rtol=1e-10)
    assert out.shape == (24,)


def test_dual_update_accepts_image_or_vector(small_projector):
    rng = np.random.default_rng(13)
    node = _node(small_projector, rng)
    lam0 = node.lam.copy()
    x = rng.standard_normal(64)
    dual_update(node, ImageGrid(8, 8, x), 2.0)
    np.testing.assert_allclose(node.lam, lam0 + 2.0 * (node.u - x))
    with pytest.raises(DimensionError):
        dual_update(node, np.zeros(10), 1.0)


def test_admm_config_validation():
    with pytest.raises(ConfigError, match="admm.rho"):
        AdmmConfig(rho=0).validate()
    with pytest.raises(ConfigError, match="admm.eta2"):
        AdmmConfig(rho=4.0, eta2=0.5).validate()
    with pytest.raises(ConfigError, match="quantizer.k"):
        AdmmConfig(quantizer=QuantizerSpec(kind="kmeans", k=0)).validate()
    AdmmConfig(eta1=None).validate()


def test_build_nodes_slices_angles_and_segments(small_projector, random_image):
    d = forward_project(small_projector, random_image)
    angles = partition_angles(36, 3)
    segments = partition_image(64, 8, 3)
    nodes = build_nodes(small_projector, d, angles, segments, AdmmConfig(eta1=None))
    assert [n.projector.angle_indices for n in nodes] == [tuple(a) for a in angles.assignment]
    assert [n.segment for n in nodes] == segments.ranges
    for node, idx in zip(nodes, angles.assignment):
        np.testing.assert_array_equal(node.data, d.values[idx].reshape(-1))
        assert node.eta1 == pytest.approx(auto_step(node.projector, shift=1.0, seed=node.node_id))
        assert not node.u.any() and not node.lam.any() and not node.x_local.any()
    with pytest.raises(DimensionError):
        build_nodes(small_projector, d, partition_angles(36, 2), segments, AdmmConfig())


# ---------------------------------------------------------------------------
# dADMM runs
# ---------------------------------------------------------------------------


def test_dadmm_single_node_matches_centralized(small_projector, random_image):
    d = forward_project(small_projector, random_image)
    cfg = AdmmConfig(eta1=None, outer_iters=4000, stop_tol=0.0)
    x, trace, _ = _dadmm(small_projector, d, 1, cfg, truth=random_image)
    ctr = ctr_solve(small_projector, d, CtrConfig(iterations=20000, stop_tol=0.0))
    assert _rel_rmse(x, random_image) <= 0.01
    assert _rel_rmse(ctr, random_image) <= 0.01
    assert len(trace) == 4000
    assert trace.entries[-1].bytes_sent == 0


def test_dadmm_zero_data_converges_at_first_iteration(small_projector):
    d = Sinogram(36, 12, np.zeros(432))
    cfg = AdmmConfig(eta1=None, outer_iters=50, quantizer=QuantizerSpec(kind="kmeans", k=3))
    x, trace, _ = _dadmm(small_projector, d, 2, cfg)
    assert np.all(x.pixels == 0)
    assert len(trace) == 1 and trace.converged


def test_dadmm_identity_bytes_per_iteration(small_projector, random_image):
    d = forward_project(small_projector, random_image)
    M = 4
    cfg = AdmmConfig(eta1=None, outer_iters=5, stop_tol=0.0)
    sink = []
    _, trace, transport = _dadmm(small_projector, d, M, cfg, trace_sink=sink.append)
    X = 4 * 64
    assert sink == trace.entries
    for entry in trace.entries:
        assert entry.bytes_sent == X * (M - 1)
        assert entry.bytes_received == X * (M - 1)
        assert entry.header_bytes == 16 * (M - 1) * 2 * M
        assert entry.rmse_vs_truth is None
    assert transport.stats.total_sent == 5 * X * (M - 1)


def test_dadmm_is_deterministic_with_kmeans(small_projector, random_image):
    d = forward_project(small_projector, random_image)
    cfg = AdmmConfig(eta1=None, outer_iters=30, stop_tol=0.0, quantizer=QuantizerSpec(kind="kmeans", k=4, seed=3))
    a, trace_a, _ = _dadmm(small_projector, d, 3, cfg, truth=random_image)
    b, trace_b, _ = _dadmm(small_projector, d, 3, cfg, truth=random_image)
    np.testing.assert_array_equal(a.pixels, b.pixels)
    assert trace_a.rmse_series() == trace_b.rmse_series()
    assert [e.bytes_sent for e in trace_a.entries] == [e.bytes_sent for e in trace_b.entries]


def test_dadmm_node_failure_is_reported_with_node_and_iteration(small_projector, random_image):
    class FlakyTransport(InProcessTransport):
        def allgather(self, node_id, iteration, message):
            if node_id == 1 and iteration == 3:
                raise RuntimeError("link down")
            return super().allgather(node_id, iteration, message)

    d = forward_project(small_projector, random_image)
    cfg = AdmmConfig(eta1=None, outer_iters=10, stop_tol=0.0)
    with pytest.raises(NodeFailure) as info:
        _dadmm(small_projector, d, 3, cfg, transport=FlakyTransport(3, timeout=30))
    assert info.value.node_id == 1
    assert info.value.iteration == 3
    assert isinstance(info.value.cause, RuntimeError)


def test_dadmm_divergence_is_reported(small_projector, random_image):
    d = forward_project(small_projector, random_image)
    cfg = AdmmConfig(eta1=10.0, outer_iters=10)
    with pytest.raises(DivergenceError) as info:
        _dadmm(small_projector, d, 2, cfg)
    assert info.value.node_id in (0, 1)
    assert info.value.iteration == 0
    assert exit_code_for(info.value) == 2


def test_dadmm_rejects_mismatched_transport(small_projector, random_image):
    d = forward_project(small_projector, random_image)
    cfg = AdmmConfig(eta1=None, outer_iters=2)
    with pytest.raises(DimensionError):
        _dadmm(small_projector, d, 2, cfg, transport=InProcessTransport(3, timeout=1))


def _nodes(P, d, M, cfg):
    angles = partition_angles(len(P.angle_indices), M)
    segments = partition_image(P.n_cols, P.image_side, M)
    return build_nodes(P, d, angles, segments, cfg)


def test_dadmm_consensus_copies_agree_on_every_node(small_projector, random_image):
    d = forward_project(small_projector, random_image)
    cfg = AdmmConfig(eta1=None, outer_iters=15, stop_tol=0.0, quantizer=QuantizerSpec(kind="kmeans", k=3))
    nodes = _nodes(small_projector, d, 3, cfg)
    x, _ = dadmm_run(nodes, cfg, InProcessTransport(3, timeout=60))
    for node in nodes:
        np.testing.assert_array_equal(node.x_local, x.pixels)
    assert not np.array_equal(nodes[0].u, nodes[1].u)


def test_dadmm_starting_at_the_solution_stays_there(small_projector):
    # 非零的 1/4 倍數在 float32 中可精確表示，identity 交換不引入誤差
    rng = np.random.default_rng(24)
    truth = rng.integers(1, 9, 64) / 4.0
    d = forward_project(small_projector, ImageGrid(8, 8, truth))
    cfg = AdmmConfig(eta1=None, outer_iters=20)
    nodes = _nodes(small_projector, d, 2, cfg)
    for node in nodes:
        node.u = truth.copy()
        node.x_local = truth.copy()
    x, trace = dadmm_run(nodes, cfg, InProcessTransport(2, timeout=60))
    np.testing.assert_array_equal(x.pixels, truth)
    assert len(trace) == 1 and trace.converged
    for node in nodes:
        np.testing.assert_allclose(node.u, truth, rtol=0, atol=1e-10)
        np.testing.assert_allclose(node.lam, 0.0, rtol=0, atol=1e-9)


def test_dadmm_objective_trends_down_after_warm_up(small_projector, random_image):
    d = forward_project(small_projector, random_image)
    cfg = AdmmConfig(eta1=None, outer_iters=210, stop_tol=0.0)
    _, trace, _ = _dadmm(small_projector, d, 2, cfg)
    objective = [e.objective for e in trace.entries]
    windows = [float(np.mean(objective[k : k + 20])) for k in range(50, 210, 20)]
    assert len(windows) == 8
    assert all(b <= a * (1 + 1e-6) for a, b in zip(windows, windows[1:]))
    assert windows[-1] < windows[0]


@pytest.mark.slow
@pytest.mark.parametrize("M", [2, 4])
def test_dadmm_multi_node_reaches_truth_on_clean_data(small_projector, random_image, M):
    d = forward_project(small_projector, random_image)
    cfg = AdmmConfig(eta1=None, outer_iters=4000, stop_tol=0.0)
    x, trace, _ = _dadmm(small_projector, d, M, cfg, truth=random_image)
    assert _rel_rmse(x, random_image) <= 0.05
    assert trace.final_rmse() == pytest.approx(rmse(x, random_image))
