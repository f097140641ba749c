import logging
import math
from typing import Any, Tuple

import numpy as np
import tensorflow as tf

from divae.core import utils
from divae.core.exceptions import (
    InvalidConfigException, NumericError, ValidationError)
from divae.core.schedule import (
    NoiseSchedule, Timesteps, extract, posterior_params, q_mean_variance)
from divae.core.unet import DiffusionOutput

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA_VLB = 0.001


class HybridLossConfig(object):
    """Weighting of the variational bound against the noise regression.

    Args:
        lambda_vlb: Weight of the variational bound term.
        detach_mean_in_vlb: Stop gradients from the variational bound into
            the predicted mean so it only trains the variance.
    """

    def __init__(self,
                 lambda_vlb: float = DEFAULT_LAMBDA_VLB,
                 detach_mean_in_vlb: bool = True) -> None:
        if lambda_vlb < 0 or not math.isfinite(lambda_vlb):
            raise InvalidConfigException(
                "lambda_vlb has to be a finite non-negative number, got {}."
                "".format(lambda_vlb))
        self.lambda_vlb = lambda_vlb
        self.detach_mean_in_vlb = detach_mean_in_vlb


def mean_flat(x: tf.Tensor) -> tf.Tensor:
    """Mean over all but the batch axis."""

    return tf.reduce_mean(x, axis=list(range(1, len(x.shape))))


def mu_from_eps(xt: Any,
                t: Timesteps,
                eps_pred: Any,
                sched: NoiseSchedule) -> tf.Tensor:
    """Mean of the reverse step implied by a noise prediction."""

    xt = utils.float_tensor(xt)
    eps_pred = tf.cast(utils.float_tensor(eps_pred), xt.dtype)
    utils.check_same_shape(xt, eps_pred, "x_t and predicted noise")
    sched.check_timesteps(t)

    coefficient = extract(sched.betas / sched.sqrt_one_minus_alpha_bars,
                          t, xt)
    return (xt - coefficient * eps_pred) / extract(np.sqrt(sched.alphas),
                                                   t, xt)


def predict_x0_from_eps(xt: tf.Tensor,
                        t: Timesteps,
                        eps: tf.Tensor,
                        sched: NoiseSchedule) -> tf.Tensor:
    return (extract(np.sqrt(1.0 / sched.alpha_bars), t, xt) * xt -
            extract(np.sqrt(1.0 / sched.alpha_bars - 1.0), t, xt) * eps)


def _check_interpolation(v: tf.Tensor) -> None:
    if tf.executing_eagerly() and tf.size(v) > 0:
        low, high = float(tf.reduce_min(v)), float(tf.reduce_max(v))
        if low < 0. or high > 1.:
            raise ValidationError(
                "Variance interpolation values have to lie in [0, 1], got "
                "values in [{}, {}].".format(low, high))


def log_sigma_from_v(v: Any, t: Timesteps, sched: NoiseSchedule) -> tf.Tensor:
    """Log variance interpolated between the posterior variance and beta."""

    v = utils.float_tensor(v)
    _check_interpolation(v)
    sched.check_timesteps(t)
    return (v * extract(sched.log_betas, t, v) +
            (1. - v) * extract(sched.posterior_log_betas_clipped, t, v))


def sigma_from_v(v: Any, t: Timesteps, sched: NoiseSchedule) -> tf.Tensor:
    """Variance `exp(v log beta_t + (1 - v) log beta_hat_t)`."""

    return tf.exp(log_sigma_from_v(v, t, sched))


def l_simple(eps_true: Any, eps_pred: Any) -> tf.Tensor:
    """Mean squared error of the noise prediction."""

    eps_true = utils.float_tensor(eps_true)
    eps_pred = tf.cast(utils.float_tensor(eps_pred), eps_true.dtype)
    utils.check_same_shape(eps_true, eps_pred, "true and predicted noise")
    return tf.reduce_mean(tf.square(eps_true - eps_pred))


def normal_kl(mean1: tf.Tensor, logvar1: tf.Tensor,
              mean2: tf.Tensor, logvar2: tf.Tensor) -> tf.Tensor:
    """Elementwise KL divergence between two Gaussians, in nats."""

    return 0.5 * (-1.0 + logvar2 - logvar1 +
                  tf.exp(logvar1 - logvar2) +
                  tf.square(mean1 - mean2) * tf.exp(-logvar2))


def approx_standard_normal_cdf(x: tf.Tensor) -> tf.Tensor:
    return 0.5 * (1.0 + tf.tanh(math.sqrt(2.0 / math.pi) *
                                (x + 0.044715 * tf.pow(x, 3))))


def discretized_gaussian_log_likelihood(x: tf.Tensor,
                                        means: tf.Tensor,
                                        log_scales: tf.Tensor) -> tf.Tensor:
    """Log likelihood of 8-bit pixels scaled to [-1, 1], in nats.

    Every pixel value owns a bin of width 2/255, the outermost bins extend
    to infinity."""

    centered = x - means
    inv_stdv = tf.exp(-log_scales)
    cdf_plus = approx_standard_normal_cdf(inv_stdv * (centered + 1. / 255.))
    cdf_min = approx_standard_normal_cdf(inv_stdv * (centered - 1. / 255.))
    log_cdf_plus = tf.math.log(tf.maximum(cdf_plus, 1e-12))
    log_one_minus_cdf_min = tf.math.log(tf.maximum(1. - cdf_min, 1e-12))
    log_cdf_delta = tf.math.log(tf.maximum(cdf_plus - cdf_min, 1e-12))
    return tf.where(x < -0.999, log_cdf_plus,
                    tf.where(x > 0.999, log_one_minus_cdf_min,
                             log_cdf_delta))


def vlb_terms(x0: Any,
              xt: Any,
              t: Timesteps,
              model_out: DiffusionOutput,
              sched: NoiseSchedule) -> tf.Tensor:
    """Per example variational bound term in bits per dimension.

    Examples at `t > 1` get the KL divergence between the true posterior and
    the model's reverse step, examples at `t = 1` the discretized negative
    log likelihood of `x0`."""

    x0 = utils.float_tensor(x0)
    xt = tf.cast(utils.float_tensor(xt), x0.dtype)
    sched.check_timesteps(t)

    true_mean, _ = posterior_params(x0, xt, t, sched)
    true_log_var = extract(sched.posterior_log_betas_clipped, t, xt)

    eps_pred = tf.cast(model_out.eps_pred, x0.dtype)
    model_mean = mu_from_eps(xt, t, eps_pred, sched)
    model_log_var = log_sigma_from_v(tf.cast(model_out.v_pred, x0.dtype),
                                     t, sched)

    kl = normal_kl(true_mean, true_log_var, model_mean, model_log_var)
    kl = mean_flat(kl) / math.log(2.0)

    nll = -discretized_gaussian_log_likelihood(
        x0, model_mean, 0.5 * model_log_var)
    nll = mean_flat(nll) / math.log(2.0)

    t = tf.broadcast_to(tf.reshape(tf.convert_to_tensor(t, tf.int32), [-1]),
                        tf.shape(kl))
    return tf.where(tf.equal(t, 1), nll, kl)


def l_vlb_term(x0: Any,
               xt: Any,
               t: Timesteps,
               model_out: DiffusionOutput,
               sched: NoiseSchedule) -> tf.Tensor:
    """Batch mean of `vlb_terms`."""

    return tf.reduce_mean(vlb_terms(x0, xt, t, model_out, sched))


def prior_bpd(x0: Any, sched: NoiseSchedule) -> tf.Tensor:
    """KL divergence of `q(x_T | x0)` from the standard normal prior.

    Carries no parameters and is only logged as a diagnostic."""

    x0 = utils.float_tensor(x0)
    mean, variance = q_mean_variance(x0, sched.T, sched)
    log_variance = tf.math.log(variance) * tf.ones_like(mean)
    kl = normal_kl(mean, log_variance, tf.zeros_like(mean),
                   tf.zeros_like(mean))
    return tf.reduce_mean(kl) / math.log(2.0)


def hybrid_terms(x0: Any,
                 xt: Any,
                 t: Timesteps,
                 eps_true: Any,
                 model_out: DiffusionOutput,
                 sched: NoiseSchedule,
                 cfg: HybridLossConfig) -> Tuple[tf.Tensor, tf.Tensor]:
    """The noise regression and the variational bound of one batch."""

    simple = l_simple(eps_true, model_out.eps_pred)
    if cfg.detach_mean_in_vlb:
        model_out = DiffusionOutput(tf.stop_gradient(model_out.eps_pred),
                                    model_out.v_pred)
    vlb = l_vlb_term(x0, xt, t, model_out, sched)
    return simple, vlb


def l_hybrid(simple: Any, vlb: Any, cfg: HybridLossConfig) -> tf.Tensor:
    """Combines both terms as `simple + lambda_vlb * vlb`."""

    simple = utils.float_tensor(simple)
    vlb = tf.cast(utils.float_tensor(vlb), simple.dtype)
    if tf.executing_eagerly():
        for name, value in (("simple", simple), ("vlb", vlb)):
            if not utils.is_finite(value):
                raise NumericError(
                    "The {} loss term is not finite: {}."
                    "".format(name, value.numpy()))
    return simple + cfg.lambda_vlb * vlb
