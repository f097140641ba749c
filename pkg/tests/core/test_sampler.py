import numpy as np
import pytest
import tensorflow as tf

from divae.core import sampler
from divae.core.exceptions import InvalidConfigException, TimestepRangeError
from divae.core.sampler import SamplerOptions
from divae.core.schedule import make_schedule
from divae.core.unet import DiffusionUNet
from tests.core.utilities import (
    StubDenoiser, randomize_output, tiny_unet_config)


def codes(batch=2, value=0.1, dtype=np.float32):
    return np.full((batch, 1, 1, 4), value, dtype)


def test_ddpm_step_without_noise_is_the_mean():
    sched = make_schedule(50)
    model = StubDenoiser()
    xt = np.random.RandomState(0).randn(2, 4, 4, 3).astype(np.float32)

    step = sampler.ddpm_step(xt, 10, codes(), np.zeros_like(xt), model, sched)
    mean, _ = sampler.ddpm_step_params(tf.constant(xt), 10, codes(), model,
                                       sched)

    np.testing.assert_allclose(step.numpy(), mean.numpy())


def test_last_ddpm_step_adds_no_noise():
    sched = make_schedule(50)
    model = StubDenoiser()
    state = np.random.RandomState(0)
    xt = state.randn(2, 4, 4, 3).astype(np.float32)

    first = sampler.ddpm_step(xt, 1, codes(), state.randn(*xt.shape), model,
                              sched)
    second = sampler.ddpm_step(xt, 1, codes(), state.randn(*xt.shape), model,
                               sched)

    np.testing.assert_array_equal(first.numpy(), second.numpy())


def test_ddpm_step_moments(float64):
    sched = make_schedule(100)
    model = StubDenoiser(v=0.3)
    n = 10000
    xt = np.full((n, 4, 4, 3), 0.2)
    noise = np.random.RandomState(0).randn(*xt.shape)

    out = sampler.ddpm_step(xt, 50, codes(n, dtype=np.float64), noise,
                            model, sched, clip_denoised=False).numpy()
    mean, log_variance = sampler.ddpm_step_params(
        tf.constant(xt[:1]), 50, codes(1, dtype=np.float64), model, sched,
        clip_denoised=False)

    std = float(np.exp(0.5 * np.asarray(log_variance).max()))
    np.testing.assert_allclose(out.mean(axis=0), mean.numpy()[0],
                               atol=4 * std / np.sqrt(n))


@pytest.mark.parametrize("t", [0, 51])
def test_ddpm_step_out_of_range(t):
    xt = np.zeros((1, 4, 4, 3), np.float32)

    with pytest.raises(TimestepRangeError):
        sampler.ddpm_step(xt, t, codes(1), xt, StubDenoiser(),
                          make_schedule(50))


def test_ddim_timesteps():
    timesteps = sampler.ddim_timesteps(1000, 25)

    assert len(timesteps) == 25
    assert timesteps[0] == 1000 and timesteps[-1] == 1
    assert timesteps == sorted(timesteps, reverse=True)
    assert sampler.ddim_timesteps(10, 10) == list(range(10, 0, -1))
    assert sampler.ddim_timesteps(10, 1) == [10]


@pytest.mark.parametrize("n_steps", [0, 11])
def test_invalid_ddim_step_count(n_steps):
    with pytest.raises(InvalidConfigException):
        sampler.ddim_timesteps(10, n_steps)


@pytest.mark.parametrize("v", [0., 0.3, 1.])
def test_stochastic_ddim_over_all_steps_matches_ddpm(float64, v):
    sched = make_schedule(20)
    model = StubDenoiser(v=v)
    xt = np.random.RandomState(0).randn(2, 4, 4, 3)
    z_q = codes(dtype=np.float64)

    for t in range(2, sched.T + 1):
        ddim_mean, ddim_variance = sampler.ddim_step_params(
            tf.constant(xt), t, t - 1, z_q, model, sched, eta=1.,
            clip_denoised=False)
        ddpm_mean, ddpm_log_variance = sampler.ddpm_step_params(
            tf.constant(xt), t, z_q, model, sched, clip_denoised=False)

        np.testing.assert_allclose(ddim_mean.numpy(), ddpm_mean.numpy(),
                                   atol=1e-5)
        np.testing.assert_allclose(ddim_variance.numpy(),
                                   np.exp(ddpm_log_variance.numpy()),
                                   rtol=1e-5)


def test_stochastic_ddim_uses_the_learned_variance_of_the_network(float64):
    sched = make_schedule(10)
    model = DiffusionUNet(tiny_unet_config())
    state = np.random.RandomState(1)
    xt = state.randn(2, 16, 16, 3)
    z_q = state.randn(2, 2, 2, 4)
    model(xt, 1, z_q)
    randomize_output(model, seed=2, scale=0.5)

    for t in (2, 6, 10):
        out = model(xt, t, z_q, training=False)
        assert np.ptp(out.v_pred.numpy()) > 0.
        ddim_mean, ddim_variance = sampler.ddim_step_params(
            tf.constant(xt), t, t - 1, z_q, model, sched, eta=1.)
        ddpm_mean, ddpm_log_variance = sampler.ddpm_step_params(
            tf.constant(xt), t, z_q, model, sched)

        np.testing.assert_allclose(ddim_mean.numpy(), ddpm_mean.numpy(),
                                   atol=1e-6)
        np.testing.assert_allclose(ddim_variance.numpy(),
                                   np.exp(ddpm_log_variance.numpy()),
                                   rtol=1e-6)


def test_ddim_variance_over_a_jump(float64):
    sched = make_schedule(20)
    xt = np.random.RandomState(0).randn(1, 4, 4, 3)
    z_q = codes(1, dtype=np.float64)
    alpha_bar, alpha_bar_prev = sched.alpha_bars[19], sched.alpha_bars[9]

    _, variance = sampler.ddim_step_params(
        tf.constant(xt), 20, 10, z_q, StubDenoiser(v=0.), sched, eta=0.5)
    _, deterministic = sampler.ddim_step_params(
        tf.constant(xt), 20, 10, z_q, StubDenoiser(v=0.), sched, eta=0.)
    _, last = sampler.ddim_step_params(
        tf.constant(xt), 5, 0, z_q, StubDenoiser(v=0.), sched, eta=1.)

    expected = (0.25 * (1 - alpha_bar_prev) / (1 - alpha_bar) *
                (1 - alpha_bar / alpha_bar_prev))
    np.testing.assert_allclose(variance.numpy(), expected, rtol=1e-6)
    assert not np.any(deterministic.numpy())
    assert not np.any(last.numpy())


def test_deterministic_ddim_is_reproducible():
    sched = make_schedule(50)
    x_T = np.random.RandomState(0).randn(2, 4, 4, 3).astype(np.float32)

    first = sampler.ddim_sample(codes(), StubDenoiser(), sched, 10, eta=0.,
                                x_T=x_T, progress=False)
    second = sampler.ddim_sample(codes(), StubDenoiser(), sched, 10, eta=0.,
                                 seed=7, x_T=x_T, progress=False)

    np.testing.assert_array_equal(first.numpy(), second.numpy())


def test_ddpm_sampling_depends_on_the_seed():
    sched = make_schedule(20)

    def run(seed):
        return sampler.ddpm_sample(codes(), StubDenoiser(), sched, seed=seed,
                                   progress=False).numpy()

    np.testing.assert_array_equal(run(3), run(3))
    assert np.abs(run(3) - run(4)).max() > 0.


def test_samples_depend_on_the_codes():
    sched = make_schedule(20)
    options = SamplerOptions("ddim", steps=5)

    first = sampler.sample(codes(value=0.), StubDenoiser(), sched, options,
                           progress=False)
    second = sampler.sample(codes(value=0.5), StubDenoiser(), sched,
                            options, progress=False)

    assert np.abs(first.numpy() - second.numpy()).max() > 0.


@pytest.mark.parametrize("options, calls", [
    (SamplerOptions("ddpm"), 20),
    (SamplerOptions("ddim", steps=5), 5),
    (SamplerOptions("ddim", steps=5, eta=1.), 5)])
def test_sample_runs_the_configured_sampler(options, calls):
    model = StubDenoiser()

    images = sampler.sample(codes(), model, make_schedule(20), options,
                            progress=False).numpy()

    assert model.calls == calls
    assert images.shape == (2, 4, 4, 3)
    assert np.all(np.isfinite(images))
    assert np.all(np.abs(images) <= 1.)


@pytest.mark.parametrize("kwargs", [{"kind": "euler"},
                                    {"eta": -1.},
                                    {"steps": 0}])
def test_invalid_sampler_options(kwargs):
    with pytest.raises(InvalidConfigException):
        SamplerOptions(**kwargs)


def test_sampling_leaves_the_network_unchanged():
    model = DiffusionUNet(tiny_unet_config())
    z_q = np.random.RandomState(0).randn(1, 2, 2, 4).astype(np.float32)
    model(np.zeros((1, 16, 16, 3), np.float32), 1, z_q)
    before = [w.copy() for w in model.get_weights()]

    images = sampler.sample(z_q, model, make_schedule(10),
                            SamplerOptions("ddim", steps=3), progress=False)

    assert images.shape == (1, 16, 16, 3)
    for old, new in zip(before, model.get_weights()):
        np.testing.assert_array_equal(old, new)
