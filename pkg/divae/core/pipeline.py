import logging
import os
import time
from typing import Any, Dict, Iterable, List, Optional, Sequence, Text, Tuple

import numpy as np
import tensorflow as tf

from divae import config as config_utils
from divae.core import sampler, utils
from divae.core.checkpoint import COMPONENTS, Checkpoint, assign_weights
from divae.core.codebook import Codebook, LatentGrid, embed, quantize
from divae.core.encoder import AuxiliaryDecoder, Encoder, encode
from divae.core.evaluate import (
    FeatureExtractor, evaluate_image_sets, mse, reference_fids)
from divae.core.exceptions import (
    CheckpointError, InvalidConfigException, ShapeMismatchError)
from divae.core.prior import LatentPrior, PromptTokenizer, prior_generate
from divae.core.schedule import NoiseSchedule
from divae.core.unet import DiffusionUNet

logger = logging.getLogger(__name__)

# components written to a checkpoint once a phase has touched them
PHASE_COMPONENTS = {
    "vq": ("encoder", "codebook", "aux_decoder"),
    "decoder": ("unet", "unet_ema"),
    "joint": ("encoder", "codebook", "unet", "unet_ema"),
    "prior": ("prior",),
}


class DiVAE(object):
    """An encoder, codebook and diffusion decoder plus the latent prior.

    Keeps track of which components carry trained weights, only those are
    persisted and only those can be used for inference."""

    def __init__(self,
                 config: Dict[Text, Any],
                 labels: Optional[Sequence[Text]] = None,
                 schedule: Optional[NoiseSchedule] = None) -> None:
        self.config = config
        self.schedule = schedule or config_utils.make_schedule(config)
        self.encoder_cfg = config_utils.encoder_config(config)
        self.unet_cfg = config_utils.unet_config(config)

        self.encoder = Encoder(self.encoder_cfg)
        self.codebook = Codebook(config["codebook_size"], config["code_dim"],
                                 seed=config["seed"])
        self.aux_decoder = AuxiliaryDecoder(self.encoder_cfg,
                                            config["aux_decoder_channels"])
        self.unet = DiffusionUNet(self.unet_cfg)
        self.unet_ema = (DiffusionUNet(self.unet_cfg, name="unet_ema")
                         if config["use_ema"] else None)

        labels = list(labels) if labels else [""]
        prior_cfg = config_utils.prior_config(config, len(labels))
        self.tokenizer = PromptTokenizer(prior_cfg, labels)
        self.prior = LatentPrior(prior_cfg)

        self.trained = set()
        self._build()

    @property
    def latent_resolution(self) -> int:
        return self.encoder_cfg.latent_resolution

    @property
    def labels(self) -> List[Text]:
        return self.tokenizer.labels

    def _build(self) -> None:
        floatx = tf.keras.backend.floatx()
        resolution = self.config["resolution"]
        images = tf.zeros([1, resolution, resolution, 3], floatx)
        codes = tf.zeros([1, self.latent_resolution, self.latent_resolution,
                          self.config["code_dim"]], floatx)
        self.encoder(images)
        self.aux_decoder(codes)
        self.unet(images, tf.ones([1], tf.int32), codes)
        if self.unet_ema is not None:
            self.unet_ema(images, tf.ones([1], tf.int32), codes)
            self.unet_ema.set_weights(self.unet.get_weights())
        self.prior(tf.zeros([1, self.prior.cfg.max_len], tf.int32))

    def component(self, name: Text) -> Any:
        return {"encoder": self.encoder,
                "codebook": self.codebook,
                "aux_decoder": self.aux_decoder,
                "unet": self.unet,
                "unet_ema": self.unet_ema,
                "prior": self.prior}[name]

    def mark_trained(self, phase: Text) -> None:
        for name in PHASE_COMPONENTS[phase]:
            if self.component(name) is not None:
                self.trained.add(name)

    def require(self, *names: Text) -> None:
        missing = [n for n in names if n not in self.trained]
        if missing:
            raise CheckpointError(
                "The model has no trained {} weights."
                "".format(", ".join(missing)))

    def update_ema(self, decay: float, step: int) -> None:
        """Moves the averaged decoder weights towards the trained ones."""

        if self.unet_ema is None:
            return
        decay = min(decay, (1. + step) / (10. + step))
        for averaged, current in zip(self.unet_ema.weights,
                                     self.unet.weights):
            averaged.assign(decay * averaged + (1. - decay) * current)

    def decoder(self) -> DiffusionUNet:
        if self.unet_ema is not None and "unet_ema" in self.trained:
            return self.unet_ema
        return self.unet

    def _batches(self, n: int) -> Iterable[slice]:
        size = self.config["batch_size"]
        for start in range(0, n, size):
            yield slice(start, start + size)

    def quantize_images(self, images: Any) -> LatentGrid:
        """Encodes and quantizes images batch by batch."""

        images = np.asarray(images, dtype=tf.keras.backend.floatx())
        indices, embedded = [], []
        for batch in self._batches(len(images)):
            grid = quantize(encode(images[batch], self.encoder),
                            self.codebook)
            indices.append(grid.indices.numpy())
            embedded.append(grid.embedded.numpy())
        return LatentGrid(np.concatenate(indices), np.concatenate(embedded))

    def decode(self,
               z_q: Any,
               options: Optional[sampler.SamplerOptions] = None,
               progress: bool = False) -> np.ndarray:
        """Samples images for a batch of embedded latent grids."""

        options = options or config_utils.sampler_options(self.config)
        z_q = np.asarray(z_q)
        images = [sampler.sample(z_q[batch], self.decoder(), self.schedule,
                                 options, progress=progress).numpy()
                  for batch in self._batches(len(z_q))]
        if not images:
            resolution = self.config["resolution"]
            return np.zeros((0, resolution, resolution, 3), np.float32)
        return np.concatenate(images)

    def reconstruct(self,
                    images: Any,
                    options: Optional[sampler.SamplerOptions] = None,
                    shuffled_control: bool = False,
                    extractor: Optional[FeatureExtractor] = None,
                    progress: bool = False
                    ) -> Tuple[np.ndarray, Dict[Text, Any]]:
        """Encodes, quantizes and decodes images.

        Returns the reconstructions and their metrics: FID-proxy (for at
        least two images), MSE, PSNR and the sampling wall time. With
        `shuffled_control` the images are also decoded from the codes of
        other images to show how much the decoder relies on them."""

        self.require("encoder", "codebook", "unet")
        options = options or config_utils.sampler_options(self.config)
        images = np.asarray(images, dtype=np.float32)
        resolution = self.config["resolution"]
        if images.ndim != 4 or images.shape[1:] != (resolution,
                                                    resolution, 3):
            raise ShapeMismatchError(
                "The model reconstructs images of shape [{0}, {0}, 3], got "
                "images of shape {1}.".format(resolution, images.shape[1:]))

        grid = self.quantize_images(images)
        start = time.time()
        reconstructions = self.decode(grid.embedded, options, progress)
        elapsed = time.time() - start

        metrics = {"n_images": len(images),
                   "sampler": repr(options),
                   "sampling_seconds": elapsed,
                   "seconds_per_image": elapsed / max(len(images), 1)}
        if len(images) >= 2:
            metrics.update(evaluate_image_sets(images, reconstructions,
                                               extractor))
            metrics["reference_fid"] = reference_fids(self.config["rate"])
        else:
            metrics["mse"] = mse(images, reconstructions)

        if shuffled_control and len(images) >= 2:
            # every image gets the codes of its neighbour
            shuffled = self.decode(np.roll(grid.embedded, 1, axis=0), options)
            metrics["shuffled_mse"] = mse(images, shuffled)
        logger.info("Reconstructed {} images with {} in {:.1f}s."
                    "".format(len(images), options, elapsed))
        return reconstructions, metrics

    def decode_tokens(self,
                      tokens: Any,
                      options: Optional[sampler.SamplerOptions] = None,
                      progress: bool = False) -> np.ndarray:
        """Decodes code index grids `[n, h, w]` or sequences `[n, h * w]`."""

        self.require("codebook", "unet")
        tokens = np.asarray(tokens)
        h = self.latent_resolution
        if tokens.ndim == 2 and tokens.shape[1] == h * h:
            tokens = tokens.reshape((-1, h, h))
        if tokens.ndim != 3 or tokens.shape[1:] != (h, h):
            raise ShapeMismatchError(
                "Expected code grids of shape [n, {0}, {0}] or sequences of "
                "length {1}, got shape {2}.".format(h, h * h, tokens.shape))
        z_q = embed(tokens.astype(np.int32), self.codebook).numpy()
        return self.decode(z_q, options, progress)

    def generate_tokens(self,
                        prompt: Text,
                        num: int = 1,
                        temperature: Optional[float] = None,
                        seed: Optional[int] = 0) -> np.ndarray:
        """Samples code sequences from the prior for a prompt."""

        if "prior" not in self.trained:
            raise InvalidConfigException(
                "The model has no trained prior. Train the 'prior' phase "
                "before sampling from prompts.")
        if temperature is None:
            temperature = self.config["temperature"]
        condition_ids = self.tokenizer.encode_batch([prompt] * num)
        return prior_generate(condition_ids, self.prior, temperature, seed)

    def random_tokens(self, num: int, seed: int = 0) -> np.ndarray:
        h = self.latent_resolution
        state = np.random.RandomState(seed)
        return state.randint(0, self.codebook.K, size=(num, h, h))

    def sample(self,
               num: int = 1,
               tokens: Optional[Any] = None,
               prompt: Optional[Text] = None,
               options: Optional[sampler.SamplerOptions] = None,
               temperature: Optional[float] = None,
               seed: int = 0) -> np.ndarray:
        """Decodes given tokens, tokens of the prior or random codes."""

        if tokens is None:
            if prompt is not None:
                tokens = self.generate_tokens(prompt, num, temperature, seed)
            else:
                tokens = self.random_tokens(num, seed)
        return self.decode_tokens(tokens, options)

    def t2i(self,
            prompt: Text,
            options: Optional[sampler.SamplerOptions] = None,
            temperature: Optional[float] = None,
            seed: int = 0) -> np.ndarray:
        """Generates one image for a prompt through prior and decoder."""

        tokens = self.generate_tokens(prompt, 1, temperature, seed)
        return self.decode_tokens(tokens, options)[0]

    def to_checkpoint(self,
                      step: int = 0,
                      phase: Optional[Text] = None,
                      rng_state: Optional[List[int]] = None,
                      completed_phases: Optional[Sequence[Text]] = None
                      ) -> Checkpoint:
        checkpoint = Checkpoint(self.config,
                                schedule=self.schedule.as_dict(),
                                step=step,
                                phase=phase,
                                rng_state=rng_state,
                                completed_phases=completed_phases,
                                labels=self.labels)
        for name in [c for c in COMPONENTS if c in self.trained]:
            checkpoint.set_component(
                name, [w.numpy() for w in self.component(name).weights])
        return checkpoint

    def load_components(self, checkpoint: Checkpoint,
                        names: Optional[Sequence[Text]] = None) -> None:
        """Assigns the checkpoint weights of the given components."""

        for name in names or checkpoint.components():
            if not checkpoint.has_component(name):
                continue
            if self.component(name) is None:
                logger.debug("Skipping '{}' weights, the component is "
                             "disabled.".format(name))
                continue
            assign_weights(self.component(name),
                           checkpoint.component_weights(name), name)
            self.trained.add(name)
        if (self.unet_ema is not None and "unet" in self.trained and
                "unet_ema" not in self.trained):
            self.unet_ema.set_weights(self.unet.get_weights())

    def persist(self, path: Text, **kwargs: Any) -> Checkpoint:
        checkpoint = self.to_checkpoint(**kwargs)
        checkpoint.persist(path)
        return checkpoint

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint) -> 'DiVAE':
        schedule = (NoiseSchedule.from_dict(checkpoint.schedule)
                    if checkpoint.schedule else None)
        model = cls(checkpoint.config, checkpoint.labels, schedule)
        model.load_components(checkpoint)
        return model

    @classmethod
    def load(cls, path: Text) -> 'DiVAE':
        """Load a persisted model from the passed path."""

        if not path or not os.path.isdir(path):
            raise CheckpointError(
                "You need to provide a valid checkpoint directory, '{}' "
                "does not exist.".format(path))
        model = cls.from_checkpoint(Checkpoint.load(path))
        logger.info("Loaded {} from '{}'."
                    "".format(", ".join(sorted(model.trained)), path))
        return model


def save_images(images: np.ndarray, out_dir: Text,
                names: Optional[Sequence[Text]] = None,
                prefix: Text = "image") -> List[Text]:
    from divae.core.data import write_images

    paths = write_images(images, out_dir, names, prefix)
    logger.info("Wrote {} images to '{}'.".format(len(paths), out_dir))
    return paths


def save_reconstruction_grid(originals: np.ndarray,
                             reconstructions: np.ndarray,
                             path: Text) -> None:
    from divae.core.data import make_grid, write_png

    write_png(path, make_grid([originals, reconstructions]))


def write_metrics(path: Text, metrics: Dict[Text, Any]) -> None:
    utils.create_dir_for_file(path)
    utils.dump_obj_as_json_to_file(path, metrics)
