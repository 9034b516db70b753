import numpy as np
import pytest

from reluwalk.errors import NumericError
from reluwalk.network import (
    ActivationPattern,
    DenseLayer,
    LayerGraph,
    capture_pattern,
    he_init,
    mlp_arch,
)
from reluwalk.pathwalk import (
    LinearPath,
    PathProfile,
    continuity_residuals,
    dense_node_oracle,
    fd_gradient_oracle,
    gradient_gaps,
    make_path,
    node_gap_product,
    segment_gradient,
    walk_path,
)

from conftest import gaussian_pair, tiny_net_zoo


def one_unit_net():
    return LayerGraph((DenseLayer(np.array([[1.0]])), DenseLayer(np.array([[1.0]]))))


def segment_edges(profile):
    return np.concatenate([[0.0], profile.nodes, [1.0]])


class TestLinearPath:
    def test_direction_and_norm(self):
        p = make_path([-1.0], [1.0])
        assert p.v[0] == 2.0 and p.unit_dir[0] == 1.0 and p.v_norm == 2.0

    def test_identical_endpoints_error(self):
        with pytest.raises(ValueError):
            make_path([1.0, 2.0], [1.0, 2.0])

    def test_endpoint_identities_exact(self):
        x0, x1 = gaussian_pair(8, 1)
        p = make_path(x0, x1)
        np.testing.assert_array_equal(p.point(0.0), x0)
        np.testing.assert_array_equal(p.point(1.0), x1)

    def test_unit_direction(self):
        x0, x1 = gaussian_pair(8, 2)
        p = make_path(x0, x1)
        assert abs(np.linalg.norm(p.unit_dir) - 1.0) < 1e-12

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            make_path([1.0], [1.0, 2.0])


class TestWalkBasics:
    def test_one_unit_crossing(self):
        prof = walk_path(one_unit_net(), make_path([-1.0], [1.0]), normalize=False)
        assert prof.K == 1
        np.testing.assert_allclose(prof.nodes, [0.5], atol=1e-12)
        # u(t) = relu(2t-1): gradient 0 then 2/||v|| = 1
        np.testing.assert_allclose(prof.gradients.ravel(), [0.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(prof.gaps.ravel(), [1.0], atol=1e-12)

    def test_no_crossing_path(self):
        prof = walk_path(one_unit_net(), make_path([1.0], [2.0]), normalize=False)
        assert prof.K == 0
        assert prof.gaps.shape == (0, 1)

    def test_dim_mismatch(self):
        net = he_init(mlp_arch(d=4, m=6, L=2, c=2), seed=0)
        with pytest.raises(ValueError):
            walk_path(net, make_path([0.0], [1.0]))

    def test_node_cap(self):
        with pytest.raises(NumericError):
            walk_path(one_unit_net(), make_path([-1.0], [1.0]), node_cap=0)

    def test_nonfinite_input(self):
        with pytest.raises(NumericError):
            walk_path(one_unit_net(), make_path([np.inf], [1.0]), normalize=False)

    def test_mean_node_count_two_layer(self):
        # binomial mean m/2 for Gaussian endpoints
        counts = []
        for i in range(60):
            net = he_init(mlp_arch(d=32, m=24, L=2, c=3), seed=300 + i)
            x0, x1 = gaussian_pair(32, 700 + i)
            counts.append(walk_path(net, make_path(x0, x1), normalize=False).K)
        assert abs(np.mean(counts) - 12.0) < 3 * np.sqrt(24 / 4 / 60) + 1e-9

    def test_full_recompute_identical(self):
        net = he_init(mlp_arch(d=4, m=10, L=3, c=2), seed=9)
        path = make_path(*gaussian_pair(4, 5))
        a = walk_path(net, path, normalize=False)
        b = walk_path(net, path, normalize=False, full_recompute=True)
        np.testing.assert_array_equal(a.nodes, b.nodes)
        assert a.crossings == b.crossings
        np.testing.assert_array_equal(a.gradients, b.gradients)


class TestWalkAgainstOracles:
    def test_node_count_matches_dense_grid(self):
        for i, net in enumerate(tiny_net_zoo(6, 3, 3, 3)):
            path = make_path(*gaussian_pair(net.input_dim, 900 + i))
            prof = walk_path(net, path, normalize=False)
            assert prof.K == dense_node_oracle(net, path, grid=10**6), f"net {i}"

    def test_segment_gradients_match_fd(self):
        for i, net in enumerate(tiny_net_zoo(4, 2, 2, 2)):
            path = make_path(*gaussian_pair(net.input_dim, 950 + i))
            prof = walk_path(net, path, normalize=False)
            edges = segment_edges(prof)
            for k in range(prof.K + 1):
                if edges[k + 1] - edges[k] < 1e-9:
                    continue  # tie-artifact sliver, no probeable interior
                mid = 0.5 * (edges[k] + edges[k + 1])
                h = 0.25 * (edges[k + 1] - edges[k])
                fd = fd_gradient_oracle(net, path, mid, h)
                np.testing.assert_allclose(prof.gradients[k], fd, rtol=1e-8, atol=1e-12)

    def test_gaps_match_product_form(self):
        for i, net in enumerate(tiny_net_zoo(4, 2, 2, 2)):
            path = make_path(*gaussian_pair(net.input_dim, 970 + i))
            prof = walk_path(net, path, normalize=False)
            for k in range(prof.K):
                direct = node_gap_product(net, prof, k)
                assert np.max(np.abs(direct - prof.gaps[k])) <= 1e-10

    def test_spec_example_fd_step(self):
        # the 1e-6 x segment-length step from the op contract, on a fat segment
        prof = walk_path(one_unit_net(), make_path([-1.0], [1.0]), normalize=False)
        fd = fd_gradient_oracle(one_unit_net(), make_path([-1.0], [1.0]), 0.75, 1e-6 * 0.5)
        np.testing.assert_allclose(fd, prof.gradients[1], rtol=1e-8)

    def test_coarse_grid_undercounts(self):
        # a layer-2 unit crossing twice inside one coarse grid cell: the two
        # sign flips cancel between grid points and the scan undercounts
        w1 = np.array([[1.0, -0.5], [1.0, -0.5004], [0.0, 0.01]])
        w2 = np.array([[1.0, -2.0, -0.03]])
        w3 = np.array([[1.0]])
        net = LayerGraph((DenseLayer(w1), DenseLayer(w2), DenseLayer(w3)))
        path = make_path([0.0, 1.0], [1.0, 1.0])  # x(t) = (t, 1)
        prof = walk_path(net, path, normalize=False)
        assert prof.K == 4  # u1@0.5, L2@0.5003, u2@0.5004, L2@0.5005
        assert dense_node_oracle(net, path, grid=10**6) == 4
        assert dense_node_oracle(net, path, grid=1000) < 4


class TestProfileInvariants:
    def test_adjacent_patterns_differ_one_bit(self):
        for i, net in enumerate(tiny_net_zoo(4, 2, 2, 2)):
            path = make_path(*gaussian_pair(net.input_dim, 990 + i))
            prof = walk_path(net, path, normalize=False)
            for a, b in zip(prof.patterns, prof.patterns[1:]):
                assert int(np.sum(a.flat() != b.flat())) == 1

    def test_nodes_ordered(self):
        # strictly increasing except at genuine simultaneous crossings, which
        # are recorded as distinct nodes in ascending unit-id order
        for i, net in enumerate(tiny_net_zoo(4, 2, 2, 2)):
            path = make_path(*gaussian_pair(net.input_dim, 1010 + i))
            prof = walk_path(net, path, normalize=False)
            assert np.all(np.diff(prof.nodes) >= 0)
            assert np.all((prof.nodes > 0) & (prof.nodes < 1))
            offsets = net.slot_offsets()
            ids = [offsets[s] + u for s, u in prof.crossings]
            for k in range(prof.K - 1):
                if prof.nodes[k + 1] == prof.nodes[k]:
                    assert ids[k + 1] > ids[k]

    def test_continuity_at_nodes(self):
        for i, net in enumerate(tiny_net_zoo(4, 2, 2, 2)):
            path = make_path(*gaussian_pair(net.input_dim, 1030 + i))
            prof = walk_path(net, path, normalize=False)
            if prof.K:
                assert continuity_residuals(net, prof).max() <= 1e-9

    def test_telescoping(self):
        for i, net in enumerate(tiny_net_zoo(4, 2, 2, 2)):
            path = make_path(*gaussian_pair(net.input_dim, 1050 + i))
            prof = walk_path(net, path, normalize=False)
            lhs = prof.gradients[-1] - prof.gradients[0]
            rhs = prof.gaps.sum(axis=0)
            assert np.max(np.abs(lhs - rhs)) <= 1e-9

    def test_reversal_symmetry(self):
        for i, net in enumerate(tiny_net_zoo(3, 2, 1, 1)):
            x0, x1 = gaussian_pair(net.input_dim, 1070 + i)
            fwd = walk_path(net, make_path(x0, x1), normalize=False)
            rev = walk_path(net, make_path(x1, x0), normalize=False)
            assert fwd.K == rev.K
            np.testing.assert_allclose(fwd.nodes, np.sort(1.0 - rev.nodes), atol=1e-9)
            np.testing.assert_allclose(fwd.gradients, -rev.gradients[::-1], atol=1e-9)

    def test_pair_normalization_scales_gradients(self):
        net = he_init(mlp_arch(d=8, m=12, L=2, c=4), seed=13)
        path = make_path(*gaussian_pair(8, 21))
        raw = walk_path(net, path, normalize=False)
        from reluwalk.network import forward
        scale = 0.5 * (forward(net, path.x0).norm + forward(net, path.x1).norm)
        named = walk_path(net, path, normalize=True)
        assert named.norm_scale == pytest.approx(scale, rel=1e-15)
        np.testing.assert_allclose(named.gradients, raw.gradients / scale, rtol=1e-12)


class TestGradientGaps:
    def test_component_selection(self):
        net = he_init(mlp_arch(d=4, m=8, L=2, c=3), seed=17)
        path = make_path(*gaussian_pair(4, 31))
        prof = walk_path(net, path, normalize=False)
        y = gradient_gaps(prof, 1)
        np.testing.assert_array_equal(y, prof.gradients[1:, 1] - prof.gradients[:-1, 1])
        with pytest.raises(ValueError):
            gradient_gaps(prof, 3)

    def test_empty_when_no_nodes(self):
        prof = walk_path(one_unit_net(), make_path([1.0], [2.0]), normalize=False)
        assert gradient_gaps(prof, 0).size == 0


class TestSegmentGradient:
    def test_one_unit_segments(self):
        net = one_unit_net()
        path = make_path([-1.0], [1.0])
        off = capture_pattern(net, np.array([-1.0]))
        on = capture_pattern(net, np.array([1.0]))
        assert segment_gradient(net, path, off, component=0) == 0.0
        assert segment_gradient(net, path, on, component=0) == pytest.approx(1.0)

    def test_component_out_of_range(self):
        net = one_unit_net()
        path = make_path([-1.0], [1.0])
        with pytest.raises(ValueError):
            segment_gradient(net, path, capture_pattern(net, np.array([1.0])), component=5)


class TestFdOracle:
    def test_straddling_a_node_errors(self):
        net = one_unit_net()
        path = make_path([-1.0], [1.0])
        with pytest.raises(ValueError):
            fd_gradient_oracle(net, path, 0.5, 0.1)

    def test_step_leaving_interval_errors(self):
        net = one_unit_net()
        with pytest.raises(ValueError):
            fd_gradient_oracle(net, make_path([-1.0], [1.0]), 0.0, 0.01)

    def test_halving_h_changes_nothing_on_linear_segment(self):
        net = he_init(mlp_arch(d=4, m=6, L=2, c=2), seed=23)
        path = make_path(*gaussian_pair(4, 41))
        prof = walk_path(net, path, normalize=False)
        edges = segment_edges(prof)
        mid = 0.5 * (edges[0] + edges[1])
        h = 0.2 * (edges[1] - edges[0])
        a = fd_gradient_oracle(net, path, mid, h)
        b = fd_gradient_oracle(net, path, mid, h / 2)
        np.testing.assert_allclose(a, b, rtol=1e-9)


class TestDenseOracle:
    def test_one_unit(self):
        assert dense_node_oracle(one_unit_net(), make_path([-1.0], [1.0]), grid=10**4) == 1

    def test_grid_too_coarse_rejected(self):
        with pytest.raises(ValueError):
            dense_node_oracle(one_unit_net(), make_path([-1.0], [1.0]), grid=10)

    def test_no_hidden_units(self):
        net = LayerGraph((DenseLayer(np.array([[1.0, 0.5]])),))
        assert dense_node_oracle(net, make_path([0.0, 0.0], [1.0, 1.0]), grid=10**4) == 0


class TestDegenerateTies:
    """A full-kernel conv on a 2x2 input bottlenecks to 4 units; when all but
    one are inactive, every downstream preactivation is proportional to the
    survivor and several units cross at exactly the same t.  The walker must
    process such ties one bit per node in ascending id order."""

    def _degenerate_case(self):
        from reluwalk.network import Arch, ConvSpec, DenseSpec
        net = he_init(Arch((1, 2, 2), (ConvSpec(4, 2, 1), DenseSpec(6), DenseSpec(3))),
                      seed=106)
        path = make_path(*gaussian_pair(4, 976))
        return net, path

    def test_count_matches_oracle_through_ties(self):
        net, path = self._degenerate_case()
        prof = walk_path(net, path, normalize=False)
        assert len(np.unique(prof.nodes)) < prof.K  # genuinely tied nodes
        assert prof.K == dense_node_oracle(net, path, grid=10**6)

    def test_one_bit_per_node_through_ties(self):
        net, path = self._degenerate_case()
        prof = walk_path(net, path, normalize=False)
        for a, b in zip(prof.patterns, prof.patterns[1:]):
            assert int(np.sum(a.flat() != b.flat())) == 1

    def test_nodes_nondecreasing_and_ties_ascending(self):
        net, path = self._degenerate_case()
        prof = walk_path(net, path, normalize=False)
        assert np.all(np.diff(prof.nodes) >= 0)
        offsets = net.slot_offsets()
        flat_ids = [offsets[s] + u for s, u in prof.crossings]
        for k in range(prof.K - 1):
            if prof.nodes[k + 1] == prof.nodes[k]:
                assert flat_ids[k + 1] > flat_ids[k]


class TestProfileValidation:
    def test_crossings_must_match_nodes(self):
        path = make_path([0.0], [1.0])
        pat = ActivationPattern(())
        with pytest.raises(ValueError):
            PathProfile(path=path, nodes=np.array([0.5]), crossings=(),
                        patterns=(pat, pat), gradients=np.zeros((2, 1)), norm_scale=1.0)
