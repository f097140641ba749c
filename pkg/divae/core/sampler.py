import logging
import math
from typing import Any, List, Optional, Text, Tuple

import numpy as np
import tensorflow as tf
from tqdm import tqdm

from divae.core import utils
from divae.core.exceptions import InvalidConfigException
from divae.core.losses import log_sigma_from_v, predict_x0_from_eps
from divae.core.schedule import NoiseSchedule, posterior_params
from divae.core.unet import DiffusionUNet

logger = logging.getLogger(__name__)

SAMPLER_KINDS = ("ddpm", "ddim")


class SamplerOptions(object):
    """How to run the reverse process.

    Args:
        kind: `ddpm` for ancestral sampling over all steps, `ddim` for the
            (optionally stochastic) implicit sampler on a subsequence.
        steps: Number of DDIM steps; ancestral sampling always uses `T`.
        eta: Stochasticity of DDIM, `0` is deterministic.
        seed: Seed of the noise generator.
        clip_denoised: Clamp the intermediate `x0` estimates to [-1, 1].
    """

    def __init__(self,
                 kind: Text = "ddim",
                 steps: int = 25,
                 eta: float = 0.0,
                 seed: int = 0,
                 clip_denoised: bool = True) -> None:
        if kind not in SAMPLER_KINDS:
            raise InvalidConfigException(
                "Unknown sampler '{}'. Choose one of {}."
                "".format(kind, ", ".join(SAMPLER_KINDS)))
        if eta < 0:
            raise InvalidConfigException(
                "eta has to be non-negative, got {}.".format(eta))
        if steps < 1:
            raise InvalidConfigException(
                "At least one sampling step is needed, got {}.".format(steps))
        self.kind = kind
        self.steps = steps
        self.eta = eta
        self.seed = seed
        self.clip_denoised = clip_denoised

    def __repr__(self):
        if self.kind == "ddpm":
            return "ddpm(seed={})".format(self.seed)
        return "ddim(steps={}, eta={}, seed={})".format(self.steps, self.eta,
                                                        self.seed)


def _x0_estimate(xt: tf.Tensor, t: int, eps: tf.Tensor,
                 sched: NoiseSchedule, clip_denoised: bool) -> tf.Tensor:
    x0 = predict_x0_from_eps(xt, t, eps, sched)
    if clip_denoised:
        x0 = tf.clip_by_value(x0, -1., 1.)
    return x0


def ddpm_step_params(xt: tf.Tensor,
                     t: int,
                     z_q: tf.Tensor,
                     model: DiffusionUNet,
                     sched: NoiseSchedule,
                     clip_denoised: bool = True
                     ) -> Tuple[tf.Tensor, tf.Tensor]:
    """Mean and log variance of the learned reverse step at `t`."""

    sched.check_timesteps(t)
    out = model(xt, t, z_q, training=False)
    x0 = _x0_estimate(xt, t, tf.cast(out.eps_pred, xt.dtype), sched,
                      clip_denoised)
    mean, _ = posterior_params(x0, xt, t, sched)
    log_variance = log_sigma_from_v(tf.cast(out.v_pred, xt.dtype), t, sched)
    return mean, log_variance


def ddpm_step(xt: Any,
              t: int,
              z_q: Any,
              noise: Any,
              model: DiffusionUNet,
              sched: NoiseSchedule,
              clip_denoised: bool = True) -> tf.Tensor:
    """One ancestral step; the final step at `t = 1` adds no noise."""

    xt = utils.float_tensor(xt)
    noise = tf.cast(utils.float_tensor(noise), xt.dtype)
    utils.check_same_shape(xt, noise, "x_t and noise")
    mean, log_variance = ddpm_step_params(xt, t, z_q, model, sched,
                                          clip_denoised)
    if int(t) == 1:
        return mean
    return mean + tf.exp(0.5 * log_variance) * noise


def ddim_timesteps(T: int, n_steps: int) -> List[int]:
    """Evenly spaced descending timesteps from `T` down to `1`."""

    if not 1 <= n_steps <= T:
        raise InvalidConfigException(
            "The number of sampling steps has to lie in [1, {}], got {}."
            "".format(T, n_steps))
    timesteps = np.round(np.linspace(T, 1, n_steps)).astype(int)
    return [int(t) for t in sorted(set(timesteps.tolist()), reverse=True)]


def ddim_step_params(xt: tf.Tensor,
                     t: int,
                     t_prev: int,
                     z_q: tf.Tensor,
                     model: DiffusionUNet,
                     sched: NoiseSchedule,
                     eta: float = 0.0,
                     clip_denoised: bool = True
                     ) -> Tuple[tf.Tensor, tf.Tensor]:
    """Mean and variance of a DDIM jump from `t` to `t_prev`.

    `t_prev = 0` denotes the clean image. The noise variance interpolates
    between the jump's beta and its posterior variance with the learned
    `v`, scaled by `eta ** 2`. With `eta = 1` and `t_prev = t - 1` the step
    is the ancestral step of `ddpm_step_params`."""

    sched.check_timesteps(t)
    out = model(xt, t, z_q, training=False)
    x0 = _x0_estimate(xt, t, tf.cast(out.eps_pred, xt.dtype), sched,
                      clip_denoised)
    # noise consistent with the (possibly clipped) x0 estimate
    alpha_bar = float(sched.alpha_bars[t - 1])
    alpha_bar_prev = float(sched.alpha_bars[t_prev - 1]) if t_prev > 0 else 1.
    eps = ((xt / math.sqrt(alpha_bar) - x0) /
           math.sqrt(1.0 / alpha_bar - 1.0))

    jump_beta = 1 - alpha_bar / alpha_bar_prev
    posterior_variance = (1 - alpha_bar_prev) / (1 - alpha_bar) * jump_beta
    direction = math.sqrt(
        max(1 - alpha_bar_prev - eta ** 2 * posterior_variance, 0.0))
    mean = math.sqrt(alpha_bar_prev) * x0 + direction * eps

    if eta == 0 or t_prev == 0:
        return mean, tf.zeros_like(mean)
    v = tf.cast(out.v_pred, xt.dtype)
    log_variance = (v * math.log(jump_beta) +
                    (1. - v) * math.log(posterior_variance))
    return mean, eta ** 2 * tf.exp(log_variance)


def _noise_generator(seed: Optional[int]) -> tf.random.Generator:
    if seed is None:
        return tf.random.Generator.from_non_deterministic_state()
    return tf.random.Generator.from_seed(seed)


def _initial_noise(z_q: tf.Tensor, model: DiffusionUNet,
                   generator: tf.random.Generator) -> tf.Tensor:
    resolution = model.cfg.image_resolution
    shape = [z_q.shape[0], resolution, resolution, model.cfg.in_channels]
    return generator.normal(shape, dtype=tf.keras.backend.floatx())


def ddpm_sample(z_q: Any,
                model: DiffusionUNet,
                sched: NoiseSchedule,
                seed: Optional[int] = 0,
                clip_denoised: bool = True,
                x_T: Optional[Any] = None,
                progress: bool = True) -> tf.Tensor:
    """Ancestral sampling over all `T` steps, conditioned on `z_q`."""

    z_q = utils.float_tensor(z_q)
    generator = _noise_generator(seed)
    x = (utils.float_tensor(x_T) if x_T is not None
         else _initial_noise(z_q, model, generator))

    for t in tqdm(range(sched.T, 0, -1), desc="ddpm", disable=not progress):
        noise = generator.normal(tf.shape(x), dtype=x.dtype)
        x = ddpm_step(x, t, z_q, noise, model, sched, clip_denoised)
    return tf.clip_by_value(x, -1., 1.)


def ddim_sample(z_q: Any,
                model: DiffusionUNet,
                sched: NoiseSchedule,
                n_steps: int = 25,
                eta: float = 0.0,
                seed: Optional[int] = 0,
                clip_denoised: bool = True,
                x_T: Optional[Any] = None,
                progress: bool = True) -> tf.Tensor:
    """DDIM sampling over an evenly spaced subsequence of timesteps."""

    if eta < 0:
        raise InvalidConfigException(
            "eta has to be non-negative, got {}.".format(eta))
    timesteps = ddim_timesteps(sched.T, n_steps)
    z_q = utils.float_tensor(z_q)
    generator = _noise_generator(seed)
    x = (utils.float_tensor(x_T) if x_T is not None
         else _initial_noise(z_q, model, generator))

    for i, t in enumerate(tqdm(timesteps, desc="ddim",
                               disable=not progress)):
        t_prev = timesteps[i + 1] if i + 1 < len(timesteps) else 0
        mean, variance = ddim_step_params(x, t, t_prev, z_q, model, sched,
                                          eta, clip_denoised)
        if eta > 0 and t_prev > 0:
            noise = generator.normal(tf.shape(x), dtype=x.dtype)
            x = mean + tf.sqrt(variance) * noise
        else:
            x = mean
    return tf.clip_by_value(x, -1., 1.)


def sample(z_q: Any,
           model: DiffusionUNet,
           sched: NoiseSchedule,
           options: SamplerOptions,
           progress: bool = True) -> tf.Tensor:
    """Decodes a batch of latent grids to images."""

    logger.debug("Sampling {} images with {}."
                 "".format(utils.static_shape(z_q)[0], options))
    if options.kind == "ddpm":
        return ddpm_sample(z_q, model, sched, options.seed,
                           options.clip_denoised, progress=progress)
    return ddim_sample(z_q, model, sched, options.steps, options.eta,
                       options.seed, options.clip_denoised,
                       progress=progress)
