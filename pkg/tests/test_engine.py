"""Autodiff engine: central-difference gradient checks for every
differentiable op, optimizer convergence, and numeric invariants.

All gradient fixtures run in float64 with tolerance 1e-4.
"""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from inductive_bench.engine import (Tensor, matmul, add, sub, mul, scale, relu,
                                    leaky_relu, concat_cols, tsum, ForwardContext,
                                    Linear, BatchNorm, dropout, neighbor_mean,
                                    gcn_propagate, attention_coefficients,
                                    attention_apply, segment_sum, segment_max,
                                    compute_class_weights, weighted_masked_ce,
                                    AdamW, clip_global_norm, cosine_lr)
from inductive_bench.errors import ConfigError, NumericError
from inductive_bench.graphs import Graph

RNG = np.random.default_rng(42)
TOL = 1e-4
EPS = 1e-6


def _toy_graph(n: int = 5) -> Graph:
    pairs = np.array([[0, 1], [0, 2], [1, 2], [2, 3]])  # node 4 isolated
    return Graph.from_undirected(n, pairs, variant="test", parent_hash="")


def gradcheck(build, arrays, tol=TOL):
    """Compare reverse-mode gradients against central differences.

    ``build`` maps leaf Tensors to an output Tensor of any shape; the
    output is projected to a scalar with a fixed random matrix so every
    output element influences the check.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*tensors)
    proj = np.random.default_rng(0).normal(size=out.data.shape)
    loss = tsum(mul(out, Tensor(proj)))
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in tensors]

    def value(work):
        res = build(*[Tensor(w) for w in work]).data
        return float((res * proj).sum())

    for k in range(len(arrays)):
        work = [a.copy() for a in arrays]
        numeric = np.zeros_like(work[k])
        flat, nf = work[k].ravel(), numeric.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + EPS
            fp = value(work)
            flat[i] = orig - EPS
            fm = value(work)
            flat[i] = orig
            nf[i] = (fp - fm) / (2 * EPS)
        err = np.max(np.abs(analytic[k] - numeric))
        assert err < tol, f"input {k}: max grad error {err:.2e}"


class TestGradients:
    def test_matmul_square(self):
        gradcheck(matmul, [RNG.normal(size=(3, 3)), RNG.normal(size=(3, 3))])

    def test_matmul_rect(self):
        gradcheck(matmul, [RNG.normal(size=(4, 2)), RNG.normal(size=(2, 5))])

    def test_add_same_shape(self):
        gradcheck(add, [RNG.normal(size=(3, 4)), RNG.normal(size=(3, 4))])

    def test_add_broadcast_row(self):
        gradcheck(add, [RNG.normal(size=(3, 4)), RNG.normal(size=(4,))])

    def test_sub(self):
        gradcheck(sub, [RNG.normal(size=(2, 3)), RNG.normal(size=(2, 3))])

    def test_mul(self):
        gradcheck(mul, [RNG.normal(size=(3, 3)), RNG.normal(size=(3, 3))])

    def test_scale(self):
        gradcheck(lambda a: scale(a, -2.5), [RNG.normal(size=(3, 4))])

    def test_relu(self):
        x = RNG.normal(size=(4, 4))
        x[np.abs(x) < 0.1] += 0.2  # keep clear of the kink
        gradcheck(relu, [x])

    def test_leaky_relu(self):
        x = RNG.normal(size=(4, 4))
        x[np.abs(x) < 0.1] += 0.2
        gradcheck(lambda a: leaky_relu(a, 0.2), [x])

    def test_concat_cols(self):
        gradcheck(concat_cols, [RNG.normal(size=(3, 2)), RNG.normal(size=(3, 4))])

    def test_tsum(self):
        gradcheck(lambda a: a, [RNG.normal(size=(5,))])

    def test_linear_layer(self):
        def build(x, w, b):
            return add(matmul(x, w), b)
        gradcheck(build, [RNG.normal(size=(4, 3)), RNG.normal(size=(3, 2)),
                          RNG.normal(size=(2,))])

    def test_two_layer_chain(self):
        def build(x, w1, w2):
            h = relu(matmul(x, w1))
            return matmul(h, w2)
        x = RNG.normal(size=(5, 3)) + 0.3
        gradcheck(build, [x, RNG.normal(size=(3, 4)), RNG.normal(size=(4, 2))])

    def test_weighted_ce_two_class(self):
        labels = np.array([0, 1, 1, 0, 1])
        mask = np.array([True, True, False, True, True])
        weights = np.array([1.0, 2.0778])

        def build(z):
            return weighted_masked_ce(z, labels, weights, mask)
        gradcheck(build, [RNG.normal(size=(5, 2))])

    def test_weighted_ce_three_class_head(self):
        # Third logit never supervised, mirroring the reserved head column.
        labels = np.array([0, 1, 0, 1])
        mask = np.ones(4, dtype=bool)
        weights = np.array([0.7, 2.1, 1.0])

        def build(z):
            return weighted_masked_ce(z, labels, weights, mask)
        gradcheck(build, [RNG.normal(size=(4, 3))])

    def test_batchnorm_train_mode(self):
        def build(x, g, b):
            bn = BatchNorm(3, name="bn")
            bn.init(np.random.default_rng(0))
            bn.gamma = g
            bn.beta = b
            return bn(x, ForwardContext(mode="train"))
        gradcheck(build, [RNG.normal(size=(6, 3)), RNG.normal(size=(3,)) + 1.0,
                          RNG.normal(size=(3,))])

    def test_batchnorm_eval_mode(self):
        state_rng = np.random.default_rng(1)
        mean = state_rng.normal(size=3)
        var = state_rng.uniform(0.5, 2.0, size=3)

        def build(x, g, b):
            bn = BatchNorm(3, name="bn")
            bn.init(np.random.default_rng(0))
            bn.gamma = g
            bn.beta = b
            bn.running_mean = mean.copy()
            bn.running_var = var.copy()
            return bn(x, ForwardContext(mode="eval"))
        gradcheck(build, [RNG.normal(size=(4, 3)), RNG.normal(size=(3,)) + 1.0,
                          RNG.normal(size=(3,))])

    def test_neighbor_mean(self):
        g = _toy_graph()
        gradcheck(lambda x: neighbor_mean(x, g), [RNG.normal(size=(5, 3))])

    def test_gcn_propagate(self):
        g = _toy_graph()
        gradcheck(lambda x: gcn_propagate(x, g), [RNG.normal(size=(5, 3))])

    def test_attention_coefficients(self):
        g = _toy_graph()

        def build(proj, att):
            return attention_coefficients(proj, att, g)
        gradcheck(build, [RNG.normal(size=(5, 4)), RNG.normal(size=(2, 4))])

    def test_attention_apply(self):
        g = _toy_graph()
        n_entries = g.indices.size
        alpha0 = np.abs(RNG.normal(size=(n_entries, 2))) + 0.1

        def build(alpha, proj):
            return attention_apply(alpha, proj, g)
        gradcheck(build, [alpha0, RNG.normal(size=(5, 4))])

    def test_attention_chain(self):
        g = _toy_graph()

        def build(proj, att):
            alpha = attention_coefficients(proj, att, g)
            return attention_apply(alpha, proj, g)
        gradcheck(build, [RNG.normal(size=(5, 4)), RNG.normal(size=(2, 4))])

    def test_dropout_eval_is_identity_grad(self):
        def build(x):
            return dropout(x, 0.5, ForwardContext(mode="eval"))
        gradcheck(build, [RNG.normal(size=(4, 3))])

    def test_dropout_train_grad_matches_mask(self):
        # With a replayed rng the mask is fixed, so gradcheck applies.
        def build(x):
            return dropout(x, 0.3, ForwardContext(mode="train",
                                                  rng=np.random.default_rng(9)))
        gradcheck(build, [RNG.normal(size=(5, 4))])


def test_gradcheck_fixture_count():
    # The class above must keep at least 20 independent gradient fixtures.
    n = sum(1 for name in dir(TestGradients) if name.startswith("test_"))
    assert n >= 20


class TestNumerics:
    def test_non_finite_forward_raises(self):
        x = Tensor(np.array([[1.0, np.inf]]))
        with pytest.raises(NumericError):
            weighted_masked_ce(x, np.array([0]), np.ones(2), np.array([True]))

    def test_ce_weight_scaling_invariant(self):
        # All-equal weights w must scale the loss by exactly w.
        z = Tensor(RNG.normal(size=(6, 2)))
        labels = np.array([0, 1, 0, 1, 1, 0])
        mask = np.ones(6, dtype=bool)
        base = weighted_masked_ce(z, labels, np.ones(2), mask).data
        scaled_loss = weighted_masked_ce(z, labels, np.full(2, 3.0), mask).data
        assert np.isclose(scaled_loss, 3.0 * base, rtol=1e-12)

    def test_masked_rows_have_zero_grad(self):
        z = Tensor(RNG.normal(size=(4, 2)), requires_grad=True)
        mask = np.array([True, False, True, False])
        loss = weighted_masked_ce(z, np.array([0, 1, 1, 0]), np.ones(2), mask)
        loss.backward()
        assert np.all(z.grad[~mask] == 0.0)
        assert np.any(z.grad[mask] != 0.0)

    def test_empty_mask_rejected(self):
        z = Tensor(np.zeros((2, 2)))
        with pytest.raises(ConfigError):
            weighted_masked_ce(z, np.array([0, 1]), np.ones(2), np.zeros(2, bool))

    def test_class_weight_formula(self):
        labels = np.concatenate([np.zeros(26432, np.int64), np.ones(3462, np.int64)])
        cw = compute_class_weights(labels, np.ones_like(labels, bool), 2)
        assert np.isclose(cw.weights[1], np.sqrt(29894 / (2 * 3462)), rtol=1e-12)
        assert np.isclose(cw.weights[0], np.sqrt(29894 / (2 * 26432)), rtol=1e-12)
        # An 11.6% minority share lands near the 2.08 weight the full
        # training slice produces.
        assert abs(cw.weights[1] - 2.078) < 1e-3

    def test_class_weight_warmup_ramp(self):
        labels = np.array([0, 0, 0, 1])
        cw = compute_class_weights(labels, np.ones(4, bool), 2, warmup_epochs=20)
        assert np.allclose(cw.effective(0), 1.0)
        half = cw.effective(10)
        assert np.allclose(half, 1.0 + 0.5 * (cw.weights - 1.0))
        assert np.allclose(cw.effective(20), cw.weights)
        assert np.allclose(cw.effective(35), cw.weights)  # clamped after warmup

    def test_clip_global_norm(self):
        a = Tensor(np.zeros(3), requires_grad=True)
        b = Tensor(np.zeros(4), requires_grad=True)
        a.grad = np.full(3, 2.0)
        b.grad = np.full(4, 2.0)
        total = clip_global_norm([("a", a), ("b", b)], 1.0)
        assert np.isclose(total, np.sqrt(7 * 4.0))
        joint = np.sqrt((a.grad ** 2).sum() + (b.grad ** 2).sum())
        assert np.isclose(joint, 1.0)

    def test_clip_no_op_below_max(self):
        a = Tensor(np.zeros(2), requires_grad=True)
        a.grad = np.array([0.1, 0.1])
        clip_global_norm([("a", a)], 1.0)
        assert np.allclose(a.grad, [0.1, 0.1])

    def test_cosine_lr_endpoints(self):
        assert cosine_lr(0, 200, 1e-3) == pytest.approx(1e-3)
        assert cosine_lr(100, 200, 1e-3) == pytest.approx(5e-4)
        assert cosine_lr(200, 200, 1e-3) == pytest.approx(0.0, abs=1e-18)

    def test_adamw_quadratic_convergence(self):
        # Minimize ||x - target||^2; AdamW must reach the decay-shifted optimum.
        target = np.array([1.0, -2.0, 0.5])
        x = Tensor(np.zeros(3), requires_grad=True)
        opt = AdamW([("x", x)], lr=0.05, weight_decay=0.0)
        for _ in range(600):
            opt.zero_grad()
            diff = sub(x, Tensor(target))
            loss = tsum(mul(diff, diff))
            loss.backward()
            opt.step()
        assert np.max(np.abs(x.data - target)) < 1e-3

    def test_adamw_decoupled_decay_shrinks_params(self):
        # Zero gradient: decoupled decay must still shrink weights by lr*wd.
        x = Tensor(np.array([10.0]), requires_grad=True)
        opt = AdamW([("x", x)], lr=0.1, weight_decay=0.5)
        x.grad = np.zeros(1)
        opt.step()
        assert np.isclose(x.data[0], 10.0 * (1 - 0.1 * 0.5))

    def test_backward_accumulates_shared_input(self):
        x = Tensor(np.array([[2.0, 3.0]]), requires_grad=True)
        y = tsum(add(x, x))
        y.backward()
        assert np.allclose(x.grad, 2.0)

    def test_linear_param_names(self):
        lin = Linear(3, 2, name="head")
        lin.init(np.random.default_rng(0))
        names = [n for n, _ in lin.params()]
        assert names == ["head.weight", "head.bias"]


class TestSegmentOps:
    @given(st.lists(st.integers(0, 5), min_size=1, max_size=8))
    @settings(max_examples=50, deadline=None)
    def test_segment_sum_matches_loop(self, seg_sizes):
        indptr = np.concatenate([[0], np.cumsum(seg_sizes)]).astype(np.int64)
        values = np.random.default_rng(0).normal(size=(int(indptr[-1]), 2))
        out = segment_sum(values, indptr)
        for i, size in enumerate(seg_sizes):
            expect = values[indptr[i]:indptr[i + 1]].sum(axis=0) if size else 0.0
            assert np.allclose(out[i], expect)

    @given(st.lists(st.integers(0, 5), min_size=1, max_size=8))
    @settings(max_examples=50, deadline=None)
    def test_segment_max_matches_loop(self, seg_sizes):
        indptr = np.concatenate([[0], np.cumsum(seg_sizes)]).astype(np.int64)
        values = np.random.default_rng(1).normal(size=(int(indptr[-1]), 2))
        out = segment_max(values, indptr)
        for i, size in enumerate(seg_sizes):
            if size:
                assert np.allclose(out[i], values[indptr[i]:indptr[i + 1]].max(axis=0))
            else:
                assert np.all(out[i] == -np.inf)


class TestAttentionProperties:
    def test_rows_sum_to_one_per_head(self):
        g = _toy_graph()
        proj = Tensor(RNG.normal(size=(5, 4)))
        att = Tensor(RNG.normal(size=(2, 4)))
        alpha = attention_coefficients(proj, att, g).data
        sums = segment_sum(alpha, g.indptr)
        nonempty = g.degrees() > 0
        assert np.allclose(sums[nonempty], 1.0)

    def test_isolated_node_aggregates_zero(self):
        g = _toy_graph()
        proj = Tensor(RNG.normal(size=(5, 4)))
        att = Tensor(RNG.normal(size=(2, 4)))
        alpha = attention_coefficients(proj, att, g)
        out = attention_apply(alpha, proj, g).data
        assert np.all(out[4] == 0.0)  # node 4 has no neighbors

    def test_extreme_scores_stay_finite(self):
        g = _toy_graph()
        proj = Tensor(RNG.normal(size=(5, 4)) * 200.0)
        att = Tensor(RNG.normal(size=(2, 4)))
        alpha = attention_coefficients(proj, att, g).data
        assert np.all(np.isfinite(alpha))


class TestDropout:
    def test_expectation_preserved(self):
        x = Tensor(np.full((1, 2000), 3.0))
        rng = np.random.default_rng(0)
        out = dropout(x, 0.4, ForwardContext(mode="train", rng=rng)).data
        assert abs(out.mean() - 3.0) < 0.15
        kept = out != 0
        assert np.allclose(out[kept], 3.0 / 0.6)

    def test_eval_mode_identity(self):
        x = Tensor(RNG.normal(size=(3, 3)))
        out = dropout(x, 0.9, ForwardContext(mode="eval"))
        assert out is x

    def test_bad_rate_rejected(self):
        with pytest.raises(ConfigError):
            dropout(Tensor(np.zeros(2)), 1.0, ForwardContext(mode="train",
                                                             rng=RNG))

    def test_train_mode_requires_rng(self):
        with pytest.raises(ConfigError):
            dropout(Tensor(np.zeros((2, 2))), 0.5, ForwardContext(mode="train"))
