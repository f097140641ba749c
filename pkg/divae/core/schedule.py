import logging
import math
from typing import Any, Dict, Optional, Text, Tuple, Union

import numpy as np
import tensorflow as tf

from divae.core import utils
from divae.core.exceptions import InvalidConfigException, TimestepRangeError

logger = logging.getLogger(__name__)

SCHEDULE_KINDS = ("linear", "cosine")

DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02
# offset and clipping of the cosine schedule
COSINE_OFFSET = 0.008
COSINE_MAX_BETA = 0.999

Timesteps = Union[int, np.ndarray, tf.Tensor]


class NoiseSchedule(object):
    """Discretized variance schedule of the forward diffusion process.

    All arrays are float64 numpy vectors of length `T`; entry `i` belongs to
    the 1-indexed timestep `t = i + 1`. The schedule is read-only after
    construction."""

    def __init__(self,
                 betas: Any,
                 kind: Text = "custom",
                 beta_start: Optional[float] = None,
                 beta_end: Optional[float] = None) -> None:
        betas = np.array(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.shape[0] < 1:
            raise InvalidConfigException(
                "A noise schedule needs at least one beta, got shape {}."
                "".format(betas.shape))
        if not np.all((betas > 0.) & (betas < 1.)):
            raise InvalidConfigException(
                "All betas of a noise schedule have to lie in (0, 1).")

        self.kind = kind
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.T = int(betas.shape[0])

        self.betas = betas
        self.alphas = 1.0 - betas
        self.alpha_bars = np.cumprod(self.alphas)
        # alpha_bar_0 := 1 makes the first posterior well defined
        self.alpha_bars_prev = np.append(1.0, self.alpha_bars[:-1])

        self.sqrt_alpha_bars = np.sqrt(self.alpha_bars)
        self.sqrt_one_minus_alpha_bars = np.sqrt(1.0 - self.alpha_bars)
        self.log_betas = np.log(betas)

        self.posterior_betas = (betas * (1.0 - self.alpha_bars_prev) /
                                (1.0 - self.alpha_bars))
        # log(0) at t=1 is replaced by the t=2 value
        if self.T > 1:
            self.posterior_log_betas_clipped = np.log(np.append(
                self.posterior_betas[1], self.posterior_betas[1:]))
        else:
            self.posterior_log_betas_clipped = np.log(betas)
        self.posterior_mean_coef1 = (betas * np.sqrt(self.alpha_bars_prev) /
                                     (1.0 - self.alpha_bars))
        self.posterior_mean_coef2 = ((1.0 - self.alpha_bars_prev) *
                                     np.sqrt(self.alphas) /
                                     (1.0 - self.alpha_bars))

        for value in self.__dict__.values():
            if isinstance(value, np.ndarray):
                value.setflags(write=False)

    def __len__(self) -> int:
        return self.T

    def __repr__(self) -> Text:
        return "NoiseSchedule(kind={}, T={})".format(self.kind, self.T)

    def check_timesteps(self, t: Timesteps) -> None:
        """Raises a `TimestepRangeError` unless `1 <= t <= T`.

        Symbolic tensors inside a traced function are not checked."""

        if isinstance(t, tf.Tensor) and not tf.executing_eagerly():
            return
        values = np.asarray(t)
        if not np.issubdtype(values.dtype, np.integer):
            if not np.all(np.equal(np.mod(values, 1), 0)):
                raise TimestepRangeError(
                    "Timesteps have to be integers, got {}.".format(values))
        if values.size and (values.min() < 1 or values.max() > self.T):
            raise TimestepRangeError(
                "Timesteps have to lie in [1, {}], got values in [{}, {}]."
                "".format(self.T, values.min(), values.max()))

    def as_dict(self) -> Dict[Text, Any]:
        return {"kind": self.kind,
                "T": self.T,
                "beta_start": self.beta_start,
                "beta_end": self.beta_end,
                "betas": self.betas.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[Text, Any]) -> 'NoiseSchedule':
        return cls(data["betas"],
                   kind=data.get("kind", "custom"),
                   beta_start=data.get("beta_start"),
                   beta_end=data.get("beta_end"))


def linear_betas(T: int,
                 beta_start: float = DEFAULT_BETA_START,
                 beta_end: float = DEFAULT_BETA_END) -> np.ndarray:
    return np.linspace(beta_start, beta_end, T, dtype=np.float64)


def cosine_betas(T: int,
                 offset: float = COSINE_OFFSET,
                 max_beta: float = COSINE_MAX_BETA) -> np.ndarray:
    """Betas whose cumulative product follows a squared cosine."""

    def alpha_bar(s):
        return math.cos((s + offset) / (1 + offset) * math.pi / 2) ** 2

    betas = []
    for i in range(T):
        t1 = i / T
        t2 = (i + 1) / T
        betas.append(min(1 - alpha_bar(t2) / alpha_bar(t1), max_beta))
    return np.array(betas, dtype=np.float64)


def make_schedule(T: int,
                  kind: Text = "linear",
                  beta_start: float = DEFAULT_BETA_START,
                  beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    """Creates a noise schedule with `T` diffusion steps.

    Args:
        T: Number of diffusion steps.
        kind: Either `linear` (betas from `beta_start` to `beta_end`) or
            `cosine`.
        beta_start: First beta of the linear schedule.
        beta_end: Last beta of the linear schedule.

    Returns:
        The precomputed `NoiseSchedule`.
    """

    if not isinstance(T, (int, np.integer)) or isinstance(T, bool) or T < 1:
        raise InvalidConfigException(
            "The number of diffusion steps has to be a positive integer, "
            "got '{}'.".format(T))

    if kind == "linear":
        if not 0. < beta_start <= beta_end < 1.:
            raise InvalidConfigException(
                "Linear schedules need 0 < beta_start <= beta_end < 1, got "
                "{} and {}.".format(beta_start, beta_end))
        betas = linear_betas(int(T), beta_start, beta_end)
        schedule = NoiseSchedule(betas, kind, beta_start, beta_end)
    elif kind == "cosine":
        schedule = NoiseSchedule(cosine_betas(int(T)), kind)
    else:
        raise InvalidConfigException(
            "Unknown schedule kind '{}'. Choose one of {}."
            "".format(kind, ", ".join(SCHEDULE_KINDS)))

    logger.debug("Created {} with alpha_bar_T = {:.3e}."
                 "".format(schedule, schedule.alpha_bars[-1]))
    return schedule


def extract(values: np.ndarray, t: Timesteps, x: tf.Tensor) -> tf.Tensor:
    """Gathers schedule entries for 1-indexed timesteps `t`.

    A scalar `t` yields a scalar, a vector of per-example timesteps is
    reshaped to `[batch, 1, 1, ...]` so it broadcasts against `x`."""

    t = tf.convert_to_tensor(t, dtype=tf.int32)
    coefficients = tf.gather(tf.constant(values, dtype=x.dtype), t - 1)
    if t.shape.rank == 0:
        return coefficients
    shape = tf.concat([tf.shape(t),
                       tf.ones([tf.rank(x) - 1], dtype=tf.int32)], axis=0)
    return tf.reshape(coefficients, shape)


def q_sample(x0: Any,
             t: Timesteps,
             eps: Any,
             sched: NoiseSchedule) -> tf.Tensor:
    """Diffuses `x0` to timestep `t` with the caller supplied noise `eps`.

    Computes `sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps`."""

    x0 = utils.float_tensor(x0)
    eps = tf.cast(utils.float_tensor(eps), x0.dtype)
    utils.check_same_shape(x0, eps, "x0 and noise")
    sched.check_timesteps(t)

    return (extract(sched.sqrt_alpha_bars, t, x0) * x0 +
            extract(sched.sqrt_one_minus_alpha_bars, t, x0) * eps)


def posterior_params(x0: Any,
                     xt: Any,
                     t: Timesteps,
                     sched: NoiseSchedule) -> Tuple[tf.Tensor, tf.Tensor]:
    """Mean and variance of the true posterior `q(x_{t-1} | x_t, x_0)`."""

    x0 = utils.float_tensor(x0)
    xt = tf.cast(utils.float_tensor(xt), x0.dtype)
    utils.check_same_shape(x0, xt, "x0 and x_t")
    sched.check_timesteps(t)

    mean = (extract(sched.posterior_mean_coef1, t, xt) * x0 +
            extract(sched.posterior_mean_coef2, t, xt) * xt)
    variance = extract(sched.posterior_betas, t, xt)
    return mean, variance


def q_mean_variance(x0: tf.Tensor,
                    t: Timesteps,
                    sched: NoiseSchedule) -> Tuple[tf.Tensor, tf.Tensor]:
    """Mean and variance of the marginal `q(x_t | x_0)`."""

    mean = extract(sched.sqrt_alpha_bars, t, x0) * x0
    variance = extract(1.0 - sched.alpha_bars, t, x0)
    return mean, variance
