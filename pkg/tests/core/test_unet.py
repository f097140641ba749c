import numpy as np
import pytest
import tensorflow as tf

from divae.core import layers, unet
from divae.core.exceptions import InvalidConfigException, ShapeMismatchError
from divae.core.unet import (
    DiffusionUNet, InjectionSpec, ablation_grid, resize_nearest, unet_forward)
from tests.core.utilities import randomize_output, tiny_unet_config


def random_inputs(batch=2, seed=0, dtype=np.float32):
    state = np.random.RandomState(seed)
    xt = state.randn(batch, 16, 16, 3).astype(dtype)
    z_q = state.randn(batch, 2, 2, 4).astype(dtype)
    return xt, z_q


def test_ablation_grid_has_every_combination():
    grid = ablation_grid()

    assert len(grid) == 9
    assert len(set(grid)) == 9
    assert str(InjectionSpec("add", "encoder")) == "add@encoder"


@pytest.mark.parametrize("method, position", [("film", "middle"),
                                              ("concat", "bottleneck")])
def test_invalid_injection_spec(method, position):
    with pytest.raises(InvalidConfigException):
        InjectionSpec(method, position)


def test_invalid_unet_config():
    with pytest.raises(InvalidConfigException):
        tiny_unet_config(image_resolution=17)
    with pytest.raises(InvalidConfigException):
        tiny_unet_config(out_channels=3)


@pytest.mark.parametrize("spec", ablation_grid(), ids=str)
def test_output_shapes(spec):
    model = DiffusionUNet(tiny_unet_config(spec))
    xt, z_q = random_inputs()

    out = model(xt, np.array([1, 20]), z_q)

    assert out.eps_pred.shape == (2, 16, 16, 3)
    assert out.v_pred.shape == (2, 16, 16, 3)
    v = out.v_pred.numpy()
    assert np.all((v >= 0.) & (v <= 1.))


def test_injection_sites():
    cfg = tiny_unet_config()

    assert cfg.injection_stage() == 1
    assert cfg.injection_site() == (8, 16)
    assert tiny_unet_config(
        InjectionSpec("concat", "encoder")).injection_site() == (8, 16)


def test_concat_intermediate_channels():
    layer = unet.ConcatInjection(16, projection_channels=5)

    assert layer.intermediate_channels == 21
    out = layer(tf.zeros([1, 8, 8, 16]), tf.zeros([1, 2, 2, 4]))
    assert out.shape == (1, 8, 8, 16)


def test_add_injection_needs_matching_projection():
    with pytest.raises(ShapeMismatchError):
        DiffusionUNet(tiny_unet_config(InjectionSpec("add", "middle"),
                                       cond_projection_channels=5))


def test_add_injection_with_zero_projection_is_identity():
    layer = unet.AddInjection(8)
    features = tf.random.normal([1, 4, 4, 8], seed=1)
    z_q = tf.random.normal([1, 2, 2, 4], seed=2)
    layer(features, z_q)
    for weight in layer.projection.weights:
        weight.assign(tf.zeros_like(weight))

    np.testing.assert_array_equal(layer(features, z_q).numpy(),
                                  features.numpy())


@pytest.mark.parametrize("z_q_shape", [(2, 2, 2, 3), (2, 4, 4, 4)])
def test_condition_shape_mismatch(z_q_shape):
    model = DiffusionUNet(tiny_unet_config())
    xt, _ = random_inputs()

    with pytest.raises(ShapeMismatchError):
        model(xt, 1, np.zeros(z_q_shape, np.float32))


def test_image_shape_mismatch():
    model = DiffusionUNet(tiny_unet_config())
    _, z_q = random_inputs()

    with pytest.raises(ShapeMismatchError):
        model(np.zeros((2, 8, 8, 3), np.float32), 1, z_q)


def test_resize_nearest():
    z = tf.reshape(tf.range(4, dtype=tf.float32), [1, 2, 2, 1])

    up = resize_nearest(z, 8).numpy()[0, :, :, 0]
    assert up.shape == (8, 8)
    assert up[0, 0] == 0 and up[3, 3] == 0 and up[4, 4] == 3
    assert resize_nearest(tf.zeros([1, 8, 8, 2]), 2).shape == (1, 2, 2, 2)
    with pytest.raises(ShapeMismatchError):
        resize_nearest(tf.zeros([1, 3, 3, 2]), 8)


@pytest.mark.parametrize("spec", ablation_grid(), ids=str)
def test_output_depends_on_codes(spec):
    model = DiffusionUNet(tiny_unet_config(spec))
    xt, z_q = random_inputs(batch=1)
    model(xt, 5, z_q)
    randomize_output(model)

    with_codes = unet_forward(xt, 5, z_q, model).eps_pred.numpy()
    without = unet_forward(xt, 5, np.zeros_like(z_q), model).eps_pred.numpy()

    assert np.abs(with_codes - without).max() > 0.


@pytest.mark.parametrize("spec", ablation_grid(), ids=str)
def test_gradient_reaches_codes(spec, float64):
    model = DiffusionUNet(tiny_unet_config(spec))
    xt, z_q = random_inputs(batch=1, dtype=np.float64)
    model(xt, 5, z_q)
    randomize_output(model)
    xt = tf.constant(xt)

    def loss(codes):
        out = model(xt, 5, codes)
        return (tf.reduce_sum(out.eps_pred ** 2) +
                tf.reduce_sum(out.v_pred))

    theoretical, numerical = tf.test.compute_gradient(
        loss, [tf.constant(z_q)])

    assert np.abs(theoretical[0]).max() > 0.
    scale = max(1., np.abs(theoretical[0]).max())
    assert np.abs(theoretical[0] - numerical[0]).max() < 1e-3 * scale


def test_adagn_starts_as_plain_group_norm():
    layer = layers.AdaGN(8, 16, groups=4)
    h = tf.random.normal([2, 4, 4, 8], seed=0)
    t_emb = tf.random.normal([2, 16], seed=1)
    layer(h, t_emb)
    layer.projection.kernel.assign(tf.zeros_like(layer.projection.kernel))

    np.testing.assert_allclose(layer(h, t_emb).numpy(),
                               layer.norm(h).numpy(), atol=1e-6)


def test_adagn_scale_and_shift():
    layer = layers.AdaGN(8, 16, groups=4)
    h = tf.random.normal([1, 4, 4, 8], seed=0)
    t_emb = tf.random.normal([1, 16], seed=1)
    layer(h, t_emb)
    layer.projection.kernel.assign(tf.zeros_like(layer.projection.kernel))
    layer.projection.bias.assign(tf.concat([tf.zeros([8]),
                                            tf.fill([8], 0.5)], axis=0))

    np.testing.assert_allclose(layer(h, t_emb).numpy(), 0.5, atol=1e-6)


def test_adagn_depends_on_timestep_embedding():
    layer = layers.AdaGN(8, 16, groups=4)
    h = tf.random.normal([1, 4, 4, 8], seed=0)

    first = layer(h, tf.random.normal([1, 16], seed=1)).numpy()
    second = layer(h, tf.random.normal([1, 16], seed=2)).numpy()

    assert np.abs(first - second).max() > 0.


def test_adagn_embedding_size_mismatch():
    layer = layers.AdaGN(8, 16, groups=4)

    with pytest.raises(ShapeMismatchError):
        layer(tf.zeros([1, 4, 4, 8]), tf.zeros([1, 12]))


def test_timestep_sinusoids():
    embedding = layers.timestep_sinusoids(tf.constant([1, 2, 3]), 7,
                                          tf.float32)

    assert embedding.shape == (3, 7)
    assert np.all(np.abs(embedding.numpy()) <= 1.)
