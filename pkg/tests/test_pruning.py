import itertools

import numpy as np
import pytest

from slamp import numerics
from slamp.dynamics import ConvLayer, DenseLayer, Network, NeuronConfig, network_forward
from slamp.pruning import (
    ImportanceMap,
    PruneSchedule,
    Stage,
    allocate_and_mask,
    apply_prune,
    connectivity,
    lamp_scores,
    layer_activity,
    removal_count,
    slamp_scores,
    step_fraction,
)

from conftest import dense_net


def single_layer(w):
    return Network([DenseLayer(np.asarray(w, np.float32), spiking=False)])


def imap_of(*scores):
    scores = [np.asarray(s, np.float64) for s in scores]
    return ImportanceMap(scores, [1.0] * len(scores), [None] * len(scores))


def ones_masks(imap):
    return [np.ones_like(s, dtype=np.float32) for s in imap.scores]


def term_by_term(w, spikes):
    """Sum over samples and steps of (diag(S_t) W)^2, averaged over samples, normalized."""
    steps, n, _ = spikes.shape
    raw = np.zeros(w.shape)
    for i in range(n):
        for t in range(steps):
            contrib = np.diag(spikes[t, i].astype(np.float64)) @ w.astype(np.float64)
            raw += contrib * contrib
    raw /= n
    return raw / raw.sum()


class TestScores:
    def test_four_weight_example(self):
        net = single_layer([[1, 3], [2, 4]])
        imap = slamp_scores(net, activity=[np.ones(2)])
        np.testing.assert_allclose(imap.scores[0], np.array([[1, 9], [4, 16]]) / 30, rtol=1e-12)

    def test_silent_layer_falls_back_to_magnitude(self, rng):
        net = single_layer(rng.normal(size=(4, 3)))
        assert np.array_equal(
            slamp_scores(net, activity=[np.zeros(4)]).scores[0], lamp_scores(net).scores[0]
        )

    @pytest.mark.parametrize("seed", range(5))
    def test_term_by_term_oracle(self, seed):
        rng = numerics.make_rng(seed)
        w = rng.normal(size=(7, 5)).astype(np.float32)
        spikes = numerics.rng_bernoulli(rng, 0.4, (4, 3, 7))
        net = single_layer(w)
        _, rec = network_forward(net, spikes, NeuronConfig(timesteps=4), record=True)
        got = slamp_scores(net, record=rec).scores[0]
        np.testing.assert_allclose(got, term_by_term(w, spikes), rtol=1e-5)

    def test_lamp_single_nonzero(self):
        np.testing.assert_array_equal(lamp_scores(single_layer([[0, 0], [0, 5]])).scores[0], [[0, 0], [0, 1]])

    def test_lamp_identity_bitwise(self, rng):
        net = dense_net(rng, [6, 5, 4], 2.0)
        # T=1 with every presynaptic unit active
        acts = [np.ones(layer.weights.shape[0]) for _, layer in net.prunable_layers()]
        s, l = slamp_scores(net, activity=acts), lamp_scores(net)
        for a, b in zip(s.scores, l.scores):
            assert a.tobytes() == b.tobytes()

    def test_equal_magnitudes_uniform(self):
        s = lamp_scores(single_layer(np.full((3, 4), -0.7))).scores[0]
        np.testing.assert_allclose(s, np.full((3, 4), 1 / 12), rtol=1e-12)

    def test_all_zero_weights_uniform_over_mask(self):
        net = single_layer(np.zeros((2, 2)))
        net[0].mask = np.array([[1, 0], [1, 1]], np.float32)
        np.testing.assert_allclose(lamp_scores(net).scores[0], [[1 / 3, 0], [1 / 3, 1 / 3]])

    @pytest.mark.parametrize("seed", range(5))
    def test_normalized_and_nonnegative(self, seed):
        rng = numerics.make_rng(seed)
        net = dense_net(rng, [8, 6, 5, 3], 1.5)
        x = numerics.rng_bernoulli(rng, 0.5, (3, 4, 8))
        _, rec = network_forward(net, x, NeuronConfig(timesteps=3), record=True)
        for r in slamp_scores(net, record=rec).scores:
            assert (r >= 0).all()
            assert abs(r.sum() - 1) < 1e-5

    @pytest.mark.parametrize("seed", range(5))
    def test_order_matches_magnitude_times_mass(self, seed):
        rng = numerics.make_rng(seed)
        w = rng.normal(size=(9, 4)).astype(np.float32)
        spikes = numerics.rng_bernoulli(rng, 0.5, (5, 2, 9))
        net = single_layer(w)
        _, rec = network_forward(net, spikes, NeuronConfig(timesteps=5), record=True)
        r = slamp_scores(net, record=rec).scores[0].reshape(-1)
        ref = (w.astype(np.float64) ** 2 * spikes.sum(axis=(0, 1))[:, None]).reshape(-1)
        np.testing.assert_array_equal(np.argsort(r, kind="stable"), np.argsort(ref, kind="stable"))

    def test_record_mismatch(self, rng):
        net = dense_net(rng, [3, 2, 2])
        with pytest.raises(ValueError):
            slamp_scores(net, activity=[np.ones(3)])

    def test_conv_activity_oracle(self, rng):
        layer = ConvLayer(rng.normal(size=(2, 2, 3, 3)), (2, 5, 5), stride=2, padding=1)
        x = rng.uniform(0, 1, size=(3, 2, 2, 5, 5))
        got = layer_activity(layer, x)
        padded = np.pad(x, ((0, 0), (0, 0), (0, 0), (1, 1), (1, 1)))
        ref = np.zeros((2, 3, 3))
        for c in range(2):
            for ky in range(3):
                for kx in range(3):
                    for oy in range(3):
                        for ox in range(3):
                            v = padded[:, :, c, oy * 2 + ky, ox * 2 + kx]
                            ref[c, ky, kx] += (v * v).sum()
        np.testing.assert_allclose(got, ref / 2, rtol=1e-12)


def brute_force_cut(scores, masks, fraction):
    """Reference: explicit sorted list of (score, layer, index) tuples."""
    entries = []
    for li, (s, m) in enumerate(zip(scores, masks)):
        alive = [j for j in range(s.size) if m.reshape(-1)[j]]
        if not alive:
            continue
        best = max(alive, key=lambda j: (s.reshape(-1)[j], -j))
        entries += [(s.reshape(-1)[j], li, j) for j in alive if j != best]
    unmasked = sum(int(m.sum()) for m in masks)
    k = min(removal_count(fraction, unmasked), len(entries))
    out = [m.copy() for m in masks]
    for _, li, j in sorted(entries)[:k]:
        out[li].reshape(-1)[j] = 0
    return out


class TestAllocation:
    def test_tiny_fraction_removes_nothing(self):
        imap = imap_of([0.1, 0.9], [0.3, 0.7])
        d = allocate_and_mask(imap, ones_masks(imap), 1e-9)
        assert d.removed == 0 and sum(d.removed_mass) == 0
        assert all(m.all() for m in d.masks)

    def test_two_layer_example(self):
        imap = imap_of([0.1, 0.9], [0.3, 0.7])
        d = allocate_and_mask(imap, ones_masks(imap), 0.5)
        np.testing.assert_array_equal(d.masks[0], [0, 1])
        np.testing.assert_array_equal(d.masks[1], [0, 1])
        assert d.removed_mass == [pytest.approx(0.1), pytest.approx(0.3)]
        assert d.thresholds == [0.9, 0.7]
        assert d.connectivity == 0.5

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_sort_oracle_with_ties(self, seed):
        rng = numerics.make_rng(seed)
        shapes = [(4, 5), (6,), (3, 3)]
        # few distinct values force many ties, within and across layers
        scores = [rng.integers(0, 4, size=s).astype(np.float64) / 10 for s in shapes]
        masks = [numerics.rng_bernoulli(rng, 0.8, s) for s in shapes]
        d = allocate_and_mask(imap_of(*scores), masks, 0.25)
        for got, ref in zip(d.masks, brute_force_cut(scores, masks, 0.25)):
            np.testing.assert_array_equal(got, ref)

    def test_guard_keeps_one_per_layer(self):
        imap = imap_of([0.2, 0.5, 0.3], [0.25, 0.25, 0.25, 0.25])
        d = allocate_and_mask(imap, ones_masks(imap), 1.0)
        np.testing.assert_array_equal(d.masks[0], [0, 1, 0])
        np.testing.assert_array_equal(d.masks[1], [1, 0, 0, 0])

    def test_previous_zeros_are_kept(self):
        imap = imap_of([0.1, 0.2, 0.3, 0.4])
        masks = [np.array([1, 0, 1, 1], np.float32)]
        d = allocate_and_mask(imap, masks, 0.34)
        np.testing.assert_array_equal(d.masks[0], [0, 0, 1, 1])

    @pytest.mark.parametrize("p", [0.0, -0.1, 1.5])
    def test_fraction_out_of_range(self, p):
        imap = imap_of([0.5, 0.5])
        with pytest.raises(ValueError):
            allocate_and_mask(imap, ones_masks(imap), p)

    def test_empty_map(self):
        with pytest.raises(ValueError):
            allocate_and_mask(imap_of(), [], 0.5)

    @pytest.mark.parametrize("n", [2, 5, 8, 12])
    def test_ascending_cut_minimizes_removed_mass(self, n):
        rng = numerics.make_rng(n)
        s = rng.dirichlet(np.ones(n))
        imap = imap_of(s)
        for k in range(1, n):
            d = allocate_and_mask(imap, ones_masks(imap), k / n)
            assert d.removed == k
            best = min(sum(c) for c in itertools.combinations(s, k))
            assert d.removed_mass[0] == pytest.approx(best, rel=1e-12)


class TestApply:
    def test_all_keep_is_noop(self, rng):
        net = dense_net(rng, [4, 3, 2])
        before = [w.copy() for w in net.weights()]
        imap = lamp_scores(net)
        d = allocate_and_mask(imap, net.masks(), 1e-9)
        apply_prune(net, d)
        for a, b in zip(before, net.weights()):
            np.testing.assert_array_equal(a, b)

    def test_pruned_equals_manually_zeroed(self, rng, cfg):
        net = dense_net(rng, [5, 4, 3], 1.5)
        manual = dense_net(numerics.make_rng(1234), [5, 4, 3], 1.5)
        masks = [m.copy() for m in net.masks()]
        masks[0][2, 1] = 0
        apply_prune(net, allocate_and_mask(lamp_scores(net), masks, 1e-9))
        manual[0].weights[2, 1] = 0
        x = numerics.rng_bernoulli(rng, 0.6, (3, 4, 5))
        np.testing.assert_array_equal(network_forward(net, x, cfg)[0], network_forward(manual, x, cfg)[0])
        assert net[0].weights[2, 1] == 0

    def test_sequential_masks_compose(self, rng):
        net = dense_net(rng, [6, 4, 2])
        a = allocate_and_mask(lamp_scores(net), net.masks(), 0.3)
        apply_prune(net, a)
        b = allocate_and_mask(lamp_scores(net), net.masks(), 0.3)
        apply_prune(net, b)
        for ma, mb, m in zip(a.masks, b.masks, net.masks()):
            np.testing.assert_array_equal(m, ma * mb)
            assert not (m > ma).any()

    def test_shape_mismatch(self, rng):
        net = dense_net(rng, [3, 2, 2])
        d = allocate_and_mask(imap_of([0.5, 0.5]), [np.ones(2, np.float32)], 0.5)
        with pytest.raises(ValueError):
            apply_prune(net, d)


class TestConnectivity:
    def test_fresh(self, rng):
        net = dense_net(rng, [3, 4, 2])
        assert connectivity(net) == (1.0, [1.0, 1.0], 20)

    def test_half_of_ten(self):
        net = single_layer(np.arange(1, 11).reshape(2, 5))
        apply_prune(net, allocate_and_mask(lamp_scores(net), net.masks(), 0.5))
        assert connectivity(net)[0] == 0.5 and connectivity(net)[2] == 5

    def test_repeated_cuts_track_closed_form(self, rng):
        net = dense_net(rng, [30, 25, 20, 10], 1.0)
        total = connectivity(net)[2]
        sched = PruneSchedule(1, (Stage(fraction=0.15, until=0.10),))
        targets = sched.targets()
        for k, count in enumerate(sched.counts(total), start=1):
            alive = connectivity(net)[2]
            apply_prune(net, allocate_and_mask(lamp_scores(net), net.masks(), step_fraction(alive, count)))
            kept = connectivity(net)[2]
            expected = max(0.85**k, 0.10) * total
            assert abs(kept - expected) <= 1.0 + 1e-9
            assert targets[k - 1] == pytest.approx(max(0.85**k, 0.10))


class TestSchedule:
    def test_default_targets(self):
        t = PruneSchedule().targets()
        assert t[-3:] == [0.10, 0.02, 0.004]
        n = len(t) - 2
        assert 0.85**n <= 0.10 < 0.85 ** (n - 1)
        assert all(b < a for a, b in zip(t, t[1:]))

    def test_stage_validation(self):
        with pytest.raises(ValueError):
            Stage()
        with pytest.raises(ValueError):
            Stage(fraction=0.1, target=0.5)
        with pytest.raises(ValueError):
            Stage(fraction=1.5)
        with pytest.raises(ValueError):
            PruneSchedule(1, (Stage(target=0.1), Stage(target=0.5)))

    def test_step_fraction(self):
        assert step_fraction(100, 85) == 0.15
        assert removal_count(step_fraction(1000, 850), 1000) == 150
        assert step_fraction(10, 12) == 0.0
