"""Constraint tests: spec validation, residuals against plain-numpy
oracles computed from the same weight draws, bound edge cases, descriptor
residuals, and differentiability under common random numbers."""
import numpy as np
import pytest

from benn import autodiff as ad
from benn import bayesnn as bn
from benn import constraints as cs
from benn import descriptors as dsc
from benn.autodiff import Tape, Tensor

from gradcheck import numeric_grad, rel_err


def constant_net(mean=0.2, log_noise=0.0):
    """Collapsed-posterior net whose outputs are (mean, log_noise) everywhere."""
    net = bn.BayesianMLP([1, 4, 2], seed=0)
    for p in net.variational_parameters():
        p.mu.data[...] = 0.0
        p.log_var.data[...] = bn.LOG_VAR_MIN
    net.biases[-1].mu.data[:] = [mean, log_noise]
    return net


def numpy_mean_head(net, samples, x):
    """Independent forward pass over the same draws, numpy only."""
    outs = []
    for draw in samples:
        h = np.asarray(x, dtype=float)[:, None]
        last = len(draw) - 1
        for k, (w, b) in enumerate(draw):
            h = h @ w.data + b.data
            if k < last:
                h = np.maximum(h, 0.0)
        outs.append(h)
    return np.mean([o[:, 0] for o in outs], axis=0), np.mean(
        [np.exp(o[:, 1]) for o in outs], axis=0
    )


class TestSpecValidation:
    def test_unknown_kind(self):
        with pytest.raises(cs.ConstraintError):
            cs.ConstraintSpec("curvature", 0.0, locations=[1.0])

    def test_reversed_bound(self):
        with pytest.raises(cs.ConstraintError, match="exceeds"):
            cs.ConstraintSpec("bound", (1.0, 0.5), locations=[0.0])

    def test_negative_variance_target(self):
        with pytest.raises(cs.ConstraintError):
            cs.ConstraintSpec("variance", -1.0, locations=[0.0])

    def test_derivative_needs_positive_epsilon(self):
        with pytest.raises(cs.ConstraintError):
            cs.ConstraintSpec("derivative", 0.0, locations=[0.0], epsilon=0.0)

    def test_model_kinds_need_locations(self):
        with pytest.raises(cs.ConstraintError):
            cs.ConstraintSpec("value", 1.0)

    def test_functional_kinds_take_no_locations(self):
        with pytest.raises(cs.ConstraintError):
            cs.ConstraintSpec("porosity", 0.5, locations=[1.0])

    def test_tpcf_target_must_be_a_curve(self):
        with pytest.raises(cs.ConstraintError):
            cs.ConstraintSpec("tpcf", np.array([0.5]))

    def test_interval_density(self):
        pts = cs.interval_points(-0.5, 0.5)
        assert len(pts) == 51
        assert pts[0] == -0.5 and pts[-1] == 0.5
        assert len(cs.interval_points(0.0, 2.0)) == 101


class TestModelResiduals:
    def test_value_residual_matches_numpy_oracle(self):
        net = bn.BayesianMLP([1, 6, 2], seed=3)
        rng = np.random.default_rng(1)
        samples = [net.sample(rng) for _ in range(4)]
        spec = cs.ConstraintSpec("value", 1.5, locations=[0.7])
        res = cs.eval_value(net, spec, samples)
        mean, _ = numpy_mean_head(net, samples, [0.7])
        np.testing.assert_allclose(res.item(), mean[0] - 1.5, rtol=1e-12)
        np.testing.assert_allclose(res.per_point, mean - 1.5, rtol=1e-12)

    def test_single_point_residual_is_signed(self):
        net = constant_net(mean=0.2)
        spec = cs.ConstraintSpec("value", 1.0, locations=[2.0])
        res = cs.eval_value(net, spec, [net.mean_draw()])
        np.testing.assert_allclose(res.item(), -0.8, rtol=0, atol=1e-12)

    def test_multi_point_residual_is_mean_absolute(self):
        net = bn.BayesianMLP([1, 6, 2], seed=5)
        samples = [net.mean_draw()]
        spec = cs.ConstraintSpec("value", 0.3, locations=[-1.0, 0.5, 2.0])
        res = cs.eval_value(net, spec, samples)
        np.testing.assert_allclose(res.item(), np.mean(np.abs(res.per_point)), rtol=1e-12)

    def test_location_permutation_invariance(self):
        net = bn.BayesianMLP([1, 6, 2], seed=7)
        samples = [net.mean_draw()]
        a = cs.eval_value(net, cs.ConstraintSpec("value", 0.0, locations=[0.1, 1.2, -2.0]), samples)
        b = cs.eval_value(net, cs.ConstraintSpec("value", 0.0, locations=[-2.0, 0.1, 1.2]), samples)
        np.testing.assert_allclose(a.item(), b.item(), rtol=1e-14)

    def test_derivative_residual_matches_numpy_oracle(self):
        net = bn.BayesianMLP([1, 8, 2], seed=11)
        rng = np.random.default_rng(2)
        samples = [net.sample(rng) for _ in range(3)]
        eps = 0.01
        spec = cs.ConstraintSpec("derivative", 0.25, locations=[0.4], epsilon=eps)
        res = cs.eval_derivative(net, spec, samples)
        up, _ = numpy_mean_head(net, samples, [0.4 + eps])
        dn, _ = numpy_mean_head(net, samples, [0.4 - eps])
        np.testing.assert_allclose(res.item(), (up[0] - dn[0]) / (2 * eps) - 0.25, rtol=1e-10)

    def test_variance_residual_matches_numpy_oracle(self):
        net = bn.BayesianMLP([1, 6, 2], seed=13)
        rng = np.random.default_rng(3)
        samples = [net.sample(rng) for _ in range(5)]
        spec = cs.ConstraintSpec("variance", 0.5, locations=[1.1])
        res = cs.eval_variance(net, spec, samples)
        _, noise = numpy_mean_head(net, samples, [1.1])
        np.testing.assert_allclose(res.item(), noise[0] - 0.5, rtol=1e-12)

    def test_bound_zero_inside_band(self):
        net = constant_net(mean=0.7)
        spec = cs.ConstraintSpec(
            "bound", (0.5, 1.0), locations=cs.interval_points(-0.5, 0.5), relation="inequality"
        )
        res = cs.eval_bound(net, spec, [net.mean_draw()])
        assert res.item() == 0.0
        np.testing.assert_array_equal(res.per_point, 0.0)

    def test_bound_below_band_is_positive(self):
        net = constant_net(mean=0.2)
        spec = cs.ConstraintSpec("bound", (0.5, 1.0), locations=[0.0, 0.1])
        res = cs.eval_bound(net, spec, [net.mean_draw()])
        np.testing.assert_allclose(res.item(), 0.3, rtol=1e-12)
        np.testing.assert_allclose(res.per_point, 0.3, rtol=1e-12)

    def test_bound_above_band_is_negative_per_point(self):
        net = constant_net(mean=1.4)
        spec = cs.ConstraintSpec("bound", (0.5, 1.0), locations=[0.0])
        res = cs.eval_bound(net, spec, [net.mean_draw()])
        np.testing.assert_allclose(res.item(), 0.4, rtol=1e-12)
        np.testing.assert_allclose(res.per_point, -0.4, rtol=1e-12)

    def test_dispatcher_and_empty_samples(self):
        net = constant_net()
        spec = cs.ConstraintSpec("value", 0.0, locations=[0.0])
        with pytest.raises(cs.ConstraintError):
            cs.evaluate(net, spec, [])
        fspec = cs.ConstraintSpec("porosity", 0.5)
        with pytest.raises(cs.ConstraintError):
            cs.evaluate(net, fspec, [net.mean_draw()])


class TestResidualGradients:
    @pytest.mark.parametrize("kind,target,loc", [
        ("value", 0.8, [0.5]),
        ("derivative", 0.1, [0.5]),
        ("variance", 0.2, [0.5]),
        ("bound", (0.5, 1.0), [0.2, 0.6]),
    ])
    def test_matches_finite_differences_under_crn(self, kind, target, loc):
        net = bn.BayesianMLP([1, 5, 2], seed=17)
        rng = np.random.default_rng(4)
        eps_sets = [
            [rng.standard_normal(p.shape) for p in (
                net.weights[0], net.biases[0], net.weights[1], net.biases[1]
            )]
            for _ in range(3)
        ]
        spec = cs.ConstraintSpec(kind, target, locations=loc)

        def build():
            samples = [net.sample(eps_list=e) for e in eps_sets]
            return cs.evaluate(net, spec, samples).value

        params = net.parameters()
        with Tape() as tape:
            grads = tape.backward(build())
        num = numeric_grad(lambda: build().item(), params)
        for p, n in zip(params, num):
            assert rel_err(grads.get(p, np.zeros_like(p.data)), n) < 1e-5, (kind, p.name)


class TestFunctionalResiduals:
    def test_porosity_residual_exact_on_hard_images(self):
        imgs = np.zeros((2, 8, 8))
        imgs[0, :4] = 1.0   # porosity 0.5
        imgs[1, :2] = 1.0   # porosity 0.75
        spec = cs.ConstraintSpec("porosity", 0.5)
        res = cs.eval_functional(imgs, spec)
        np.testing.assert_allclose(res.per_point, [0.0, 0.25], rtol=0, atol=1e-12)
        np.testing.assert_allclose(res.item(), 0.125, rtol=0, atol=1e-12)

    def test_tpcf_residual_near_zero_on_matching_batch(self):
        imgs = np.ones((2, 8, 8))
        target = np.ones(5)
        spec = cs.ConstraintSpec("tpcf", target)
        res = cs.eval_functional(imgs, spec)
        assert res.item() < 1e-9
        assert res.per_point.shape == (2,)

    def test_tpcf_residual_matches_fft_curve_oracle(self):
        rng = np.random.default_rng(31)
        imgs = (rng.uniform(size=(3, 16, 16)) > 0.5).astype(float)
        target = np.full(9, 0.25)
        spec = cs.ConstraintSpec("tpcf", target)
        res = cs.eval_functional(imgs, spec)
        mads = []
        for img in imgs:
            curve = dsc.tpcf(img)  # fft route, hard pixels
            mads.append(np.mean(np.abs(curve.values - target)))
        np.testing.assert_allclose(res.per_point, mads, rtol=0, atol=1e-8)

    def test_tpcf_target_length_checked(self):
        spec = cs.ConstraintSpec("tpcf", np.ones(4))
        with pytest.raises(cs.ConstraintError, match="radii"):
            cs.eval_functional(np.ones((1, 16, 16)), spec)

    def test_functional_needs_batch_shape(self):
        spec = cs.ConstraintSpec("porosity", 0.5)
        with pytest.raises(cs.ConstraintError):
            cs.eval_functional(np.ones((8, 8)), spec)

    def test_functional_gradients_match_finite_differences(self):
        rng = np.random.default_rng(43)
        imgs = Tensor(rng.uniform(size=(2, 6, 6)))
        binarize = dsc.BinarizeConfig(steepness=3.0)
        tspec = cs.ConstraintSpec("tpcf", np.full(4, 0.3))
        pspec = cs.ConstraintSpec("porosity", 0.4)

        for spec, kwargs in ((tspec, {"binarize": binarize}), (pspec, {})):
            def build():
                return cs.eval_functional(imgs, spec, **kwargs).value

            with Tape() as tape:
                grads = tape.backward(build())
            num = numeric_grad(lambda: build().item(), [imgs])
            assert rel_err(grads[imgs], num[0]) < 1e-6, spec.kind
