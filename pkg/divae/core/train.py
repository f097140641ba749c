import logging
import math
import os
import time
from collections import OrderedDict, namedtuple
from typing import Any, Dict, Iterator, List, Optional, Sequence, Text, Tuple

import numpy as np
import tensorflow as tf
from tqdm import tqdm

from divae import config as config_utils
from divae import constants
from divae.core import checkpoint as ckpt
from divae.core import codebook as cb
from divae.core import losses, prior, utils
from divae.core.data import ImageDataset, load_dataset
from divae.core.exceptions import DiVAEException, NumericError
from divae.core.pipeline import DiVAE
from divae.core.schedule import q_sample
from divae.core.unet import INJECTION_METHODS, InjectionSpec

logger = logging.getLogger(__name__)

TrainResult = namedtuple("TrainResult", ["model", "history"])

ABLATION_POSITIONS = ("encoder", "decoder")
NAN_SNAPSHOT_DIR = "nan_snapshot"


def learning_rate(step: int, peak: float, warmup_steps: int) -> float:
    """Learning rate of the `step`-th update (counting from 1)."""

    if warmup_steps <= 0:
        return peak
    return peak * min(1.0, step / warmup_steps)


class WarmupSchedule(tf.keras.optimizers.schedules.LearningRateSchedule):
    """Linear warmup to a constant peak learning rate."""

    def __init__(self, peak: float, warmup_steps: int) -> None:
        super(WarmupSchedule, self).__init__()
        self.peak = peak
        self.warmup_steps = warmup_steps

    def __call__(self, step):
        # the optimizer passes the number of updates already applied
        step = tf.cast(step, tf.float32) + 1.
        if self.warmup_steps <= 0:
            return tf.constant(self.peak, tf.float32)
        return self.peak * tf.minimum(1., step / self.warmup_steps)

    def get_config(self):
        return {"peak": self.peak, "warmup_steps": self.warmup_steps}


def make_optimizer(config: Dict[Text, Any],
                   warmup_steps: int) -> tf.keras.optimizers.Optimizer:
    return tf.keras.optimizers.experimental.AdamW(
        learning_rate=WarmupSchedule(config["lr"], warmup_steps),
        weight_decay=config["weight_decay"])


def phase_variables(model: DiVAE, phase: Text) -> List[tf.Variable]:
    """Variables the optimizer of a phase updates."""

    codebook = ([model.codebook.entries]
                if model.config["codebook_update"] == "gradient" else [])
    if phase == "vq":
        return (model.encoder.trainable_variables + codebook +
                model.aux_decoder.trainable_variables)
    if phase == "decoder":
        return model.unet.trainable_variables
    if phase == "joint":
        return (model.encoder.trainable_variables + codebook +
                model.unet.trainable_variables)
    return model.prior.trainable_variables


def apply_gradients(tape: tf.GradientTape,
                    loss: tf.Tensor,
                    variables: Sequence[tf.Variable],
                    optimizer: tf.keras.optimizers.Optimizer,
                    grad_clip: float) -> float:
    """Clips gradients by their global norm and applies them.

    Returns the norm before clipping."""

    gradients = tape.gradient(loss, variables)
    pairs = [(g, v) for g, v in zip(gradients, variables) if g is not None]
    gradients = [g for g, _ in pairs]
    if grad_clip:
        gradients, norm = tf.clip_by_global_norm(gradients, grad_clip)
    else:
        norm = tf.linalg.global_norm(gradients)
    optimizer.apply_gradients(zip(gradients, [v for _, v in pairs]))
    return float(norm)


def _check_finite(terms: Dict[Text, Any]) -> None:
    for name, value in terms.items():
        if not utils.is_finite(value):
            raise NumericError(
                "The training term '{}' is not finite: {}.".format(name,
                                                                   value))


def _diffusion_inputs(x0: tf.Tensor, model: DiVAE,
                      generator: tf.random.Generator
                      ) -> Tuple[tf.Tensor, tf.Tensor, tf.Tensor]:
    """Uniformly drawn timesteps, the noise and the noised images."""

    t = generator.uniform([x0.shape[0]], minval=1,
                          maxval=model.schedule.T + 1, dtype=tf.int32)
    eps = generator.normal(tf.shape(x0), dtype=x0.dtype)
    return t, eps, q_sample(x0, t, eps, model.schedule)


def vq_step(model: DiVAE,
            x0: tf.Tensor,
            optimizer: tf.keras.optimizers.Optimizer,
            variables: Sequence[tf.Variable]) -> Dict[Text, float]:
    """Trains encoder and codebook through the auxiliary decoder."""

    config = model.config
    with tf.GradientTape() as tape:
        z = model.encoder(x0, training=True)
        grid = cb.quantize(z, model.codebook)
        z_q = cb.straight_through(z, grid.embedded)
        reconstruction = model.aux_decoder(z_q, training=True)
        l_rec = tf.reduce_mean(tf.square(x0 - reconstruction))
        l_vq = cb.vq_loss(z, grid.embedded, config["commitment_beta"])
        loss = l_rec + l_vq
    terms = {"loss": float(loss), "l_rec": float(l_rec), "l_vq": float(l_vq)}
    _check_finite(terms)

    terms["grad_norm"] = apply_gradients(tape, loss, variables, optimizer,
                                         config["grad_clip"])
    if config["codebook_update"] == "ema":
        cb.ema_update(model.codebook, z, grid.indices,
                      config["codebook_ema_decay"])
    terms["perplexity"] = cb.codebook_perplexity(grid.indices,
                                                 model.codebook.K)
    return terms


def decoder_step(model: DiVAE,
                 x0: tf.Tensor,
                 optimizer: tf.keras.optimizers.Optimizer,
                 variables: Sequence[tf.Variable],
                 generator: tf.random.Generator,
                 loss_cfg: losses.HybridLossConfig) -> Dict[Text, float]:
    """One hybrid loss update of the diffusion decoder on frozen codes."""

    z_q = cb.quantize(model.encoder(x0, training=False),
                      model.codebook).embedded
    t, eps, xt = _diffusion_inputs(x0, model, generator)
    with tf.GradientTape() as tape:
        out = model.unet(xt, t, z_q, training=True)
        simple, vlb = losses.hybrid_terms(x0, xt, t, eps, out,
                                          model.schedule, loss_cfg)
        loss = losses.l_hybrid(simple, vlb, loss_cfg)
    grad_norm = apply_gradients(tape, loss, variables, optimizer,
                                model.config["grad_clip"])
    return {"loss": float(loss), "l_simple": float(simple),
            "l_vlb": float(vlb), "grad_norm": grad_norm}


def joint_step(model: DiVAE,
               x0: tf.Tensor,
               optimizer: tf.keras.optimizers.Optimizer,
               variables: Sequence[tf.Variable],
               generator: tf.random.Generator,
               loss_cfg: losses.HybridLossConfig) -> Dict[Text, float]:
    """Trains encoder, codebook and decoder together.

    The diffusion loss reaches the encoder through the straight-through
    estimator and replaces the pixel reconstruction term."""

    config = model.config
    t, eps, xt = _diffusion_inputs(x0, model, generator)
    with tf.GradientTape() as tape:
        z = model.encoder(x0, training=True)
        grid = cb.quantize(z, model.codebook)
        z_q = cb.straight_through(z, grid.embedded)
        out = model.unet(xt, t, z_q, training=True)
        simple, vlb = losses.hybrid_terms(x0, xt, t, eps, out,
                                          model.schedule, loss_cfg)
        l_vq = cb.vq_loss(z, grid.embedded, config["commitment_beta"])
        loss = losses.l_hybrid(simple, vlb, loss_cfg) + l_vq
    terms = {"loss": float(loss), "l_simple": float(simple),
             "l_vlb": float(vlb), "l_vq": float(l_vq)}
    _check_finite(terms)

    terms["grad_norm"] = apply_gradients(tape, loss, variables, optimizer,
                                         config["grad_clip"])
    if config["codebook_update"] == "ema":
        cb.ema_update(model.codebook, z, grid.indices,
                      config["codebook_ema_decay"])
    terms["perplexity"] = cb.codebook_perplexity(grid.indices,
                                                 model.codebook.K)
    return terms


def condition_ids(model: DiVAE, labels: Sequence[Optional[Text]]
                  ) -> np.ndarray:
    return model.tokenizer.encode_batch([label or "" for label in labels])


def prior_step(model: DiVAE,
               x0: tf.Tensor,
               labels: Sequence[Optional[Text]],
               optimizer: tf.keras.optimizers.Optimizer) -> Dict[Text, float]:
    tokens = cb.quantize(model.encoder(x0, training=False),
                         model.codebook).indices
    tokens = tf.reshape(tokens, [x0.shape[0], -1])
    loss = prior.prior_train_step(tokens, condition_ids(model, labels),
                                  model.prior, optimizer,
                                  model.config["grad_clip"])
    terms = {"loss": loss, "l_prior": loss}
    _check_finite(terms)
    return terms


def batch_stream(dataset: ImageDataset,
                 batch_size: int,
                 seed: int,
                 start_step: int = 0,
                 flip: bool = False) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Endless batches whose order only depends on seed and position.

    Starting at `start_step` yields exactly the batches an uninterrupted run
    would have seen from that step on."""

    drop_remainder = len(dataset) >= batch_size
    per_epoch = (len(dataset) // batch_size if drop_remainder
                 else int(math.ceil(len(dataset) / batch_size)))
    if per_epoch == 0:
        raise DiVAEException("Can not train on an empty dataset.")
    epoch, skip = divmod(start_step, per_epoch)
    while True:
        batches = dataset.batches(batch_size, epoch, seed, flip,
                                  drop_remainder=drop_remainder,
                                  with_indices=True)
        for i, batch in enumerate(batches):
            if i >= skip:
                yield batch
        epoch, skip = epoch + 1, 0


def training_labels(dataset: ImageDataset) -> List[Text]:
    return sorted({label or "" for label in dataset.labels})


def validation_terms(model: DiVAE,
                     phase: Text,
                     dataset: ImageDataset,
                     seed: int = 0) -> Dict[Text, float]:
    """Losses on held out images, with fixed noise for comparability."""

    if len(dataset) == 0 or phase == "prior":
        return {}
    generator = tf.random.Generator.from_seed(seed)
    totals = {}
    floatx = tf.keras.backend.floatx()
    for batch in dataset.batches(model.config["batch_size"]):
        x0 = tf.convert_to_tensor(batch, floatx)
        grid = cb.quantize(model.encoder(x0), model.codebook)
        if phase == "vq":
            reconstruction = model.aux_decoder(grid.embedded)
            value = {"val_l_rec": tf.reduce_mean(
                tf.square(x0 - reconstruction))}
        else:
            t, eps, xt = _diffusion_inputs(x0, model, generator)
            out = model.unet(xt, t, grid.embedded)
            value = {"val_l_simple": losses.l_simple(eps, out.eps_pred)}
        for name, v in value.items():
            totals[name] = totals.get(name, 0.) + float(v) * len(batch)
    return {name: total / len(dataset) for name, total in totals.items()}


def _rng_state(generator: tf.random.Generator) -> List[int]:
    return [int(v) for v in generator.state.numpy()]


def _restore_generator(state: Optional[List[int]],
                       seed: int) -> tf.random.Generator:
    if state:
        return tf.random.Generator.from_state(
            np.asarray(state, dtype=np.int64), alg="philox")
    return tf.random.Generator.from_seed(seed)


def _persist(model: DiVAE, out_dir: Optional[Text], phase: Text,
             step: int, generator: tf.random.Generator,
             completed: Sequence[Text],
             optimizer: Optional[tf.keras.optimizers.Optimizer] = None
             ) -> None:
    if not out_dir:
        return
    model.persist(out_dir, step=step, phase=phase,
                  rng_state=_rng_state(generator),
                  completed_phases=completed)
    if optimizer is not None:
        ckpt.save_optimizer(optimizer, out_dir, phase)


def _write_nan_snapshot(model: DiVAE, out_dir: Optional[Text], phase: Text,
                        step: int, generator: tf.random.Generator,
                        completed: Sequence[Text],
                        error: NumericError) -> None:
    if not out_dir:
        return
    path = os.path.join(out_dir, NAN_SNAPSHOT_DIR)
    model.persist(path, step=step, phase=phase,
                  rng_state=_rng_state(generator),
                  completed_phases=completed)
    utils.dump_obj_as_json_to_file(
        os.path.join(path, "error.json"),
        {"phase": phase, "step": step, "message": error.message})
    logger.error("Wrote a diagnostic snapshot of step {} to '{}'."
                 "".format(step, path))


def run_phase(model: DiVAE,
              phase: Text,
              train_set: ImageDataset,
              val_set: ImageDataset,
              out_dir: Optional[Text] = None,
              start_step: int = 0,
              generator: Optional[tf.random.Generator] = None,
              completed: Sequence[Text] = (),
              progress: bool = True) -> List[Dict[Text, Any]]:
    """Runs the training loop of one phase.

    Returns the logged metric records; they are also appended to the
    metrics log of `out_dir`."""

    config = model.config
    steps = config_utils.steps_of_phase(config, phase)
    optimizer = make_optimizer(config, min(config["warmup_steps"], steps))
    variables = phase_variables(model, phase)
    generator = generator or tf.random.Generator.from_seed(config["seed"])
    loss_cfg = config_utils.loss_config(config)
    metrics_file = (os.path.join(out_dir, constants.METRICS_LOG_FILE)
                    if out_dir else None)
    floatx = tf.keras.backend.floatx()

    if start_step and out_dir:
        if ckpt.restore_optimizer(optimizer, variables, out_dir, phase):
            logger.info("Restored the optimizer state of phase '{}'."
                        "".format(phase))
    model.mark_trained(phase)
    logger.info("Starting phase '{}' at step {} of {}."
                "".format(phase, start_step, steps))

    batches = batch_stream(train_set, config["batch_size"], config["seed"],
                           start_step, config["flip"])
    history = []
    started = time.time()
    for step in tqdm(range(start_step + 1, steps + 1), desc=phase,
                     disable=not progress):
        batch, indices = next(batches)
        x0 = tf.convert_to_tensor(batch, floatx)
        try:
            if phase == "vq":
                terms = vq_step(model, x0, optimizer, variables)
            elif phase == "decoder":
                terms = decoder_step(model, x0, optimizer, variables,
                                     generator, loss_cfg)
            elif phase == "joint":
                terms = joint_step(model, x0, optimizer, variables,
                                   generator, loss_cfg)
            else:
                labels = [train_set.labels[i] for i in indices]
                terms = prior_step(model, x0, labels, optimizer)
        except NumericError as e:
            _write_nan_snapshot(model, out_dir, phase, step - 1, generator,
                                completed, e)
            raise

        if phase in ("decoder", "joint"):
            model.update_ema(config["ema_decay"], step)

        record = OrderedDict([("phase", phase), ("step", step)])
        record.update(terms)
        record["lr"] = learning_rate(step, config["lr"],
                                     min(config["warmup_steps"], steps))
        record["wall_time"] = time.time() - started
        logger.debug("{} step {}: {}".format(phase, step, terms))

        if step % config["log_every"] == 0 or step == steps:
            if phase in ("decoder", "joint"):
                record["prior_bpd"] = float(losses.prior_bpd(x0,
                                                             model.schedule))
            history.append(record)
            if metrics_file:
                utils.append_json_line(metrics_file, record)
            logger.info("{} step {}/{}: loss={:.4f} lr={:.2e}"
                        "".format(phase, step, steps, record["loss"],
                                  record["lr"]))

        if (config["checkpoint_every"] and
                step % config["checkpoint_every"] == 0 and step != steps):
            _persist(model, out_dir, phase, step, generator, completed,
                     optimizer)

    summary = validation_terms(model, phase, val_set, config["seed"])
    if summary:
        summary = OrderedDict([("phase", phase), ("step", steps)] +
                              list(summary.items()))
        history.append(summary)
        if metrics_file:
            utils.append_json_line(metrics_file, summary)
        logger.info("Finished phase '{}': {}".format(phase, dict(summary)))
    _persist(model, out_dir, phase, steps, generator,
             list(completed) + [phase], optimizer)
    return history


def train(config: Dict[Text, Any],
          out_dir: Optional[Text] = None,
          data: Optional[Tuple[ImageDataset, ImageDataset]] = None,
          resume: bool = False,
          init: Optional[ckpt.Checkpoint] = None,
          progress: bool = True) -> TrainResult:
    """Runs every configured phase in order.

    Args:
        config: A resolved configuration.
        out_dir: Checkpoint directory; owned exclusively during training.
        data: Training and validation set, loaded from the config if
            missing.
        resume: Continue the run stored in `out_dir`.
        init: Checkpoint whose components initialize the model, e.g. the
            encoder of an earlier vq phase.
        progress: Show progress bars.
    """

    lock = ckpt.CheckpointLock(out_dir) if out_dir else None
    if lock:
        lock.acquire()
    try:
        return _train(config, out_dir, data, resume, init, progress)
    finally:
        if lock:
            lock.release()


def _train(config: Dict[Text, Any],
           out_dir: Optional[Text],
           data: Optional[Tuple[ImageDataset, ImageDataset]],
           resume: bool,
           init: Optional[ckpt.Checkpoint],
           progress: bool) -> TrainResult:
    start_phase, start_step, completed, state = None, 0, [], None
    if resume:
        stored = ckpt.Checkpoint.load(out_dir)
        config = stored.config
        model = DiVAE.from_checkpoint(stored)
        start_phase, start_step = stored.phase, stored.step
        completed, state = list(stored.completed_phases), stored.rng_state
        logger.info("Resuming phase '{}' at step {} from '{}'."
                    "".format(start_phase, start_step, out_dir))

    utils.set_random_seed(config["seed"])
    train_set, val_set = data or load_dataset(
        config_utils.dataset_spec(config))

    if not resume:
        if init is None and config["init_checkpoint"]:
            init = ckpt.Checkpoint.load(config["init_checkpoint"])
        labels = (init.labels if init is not None and init.labels
                  else training_labels(train_set))
        model = DiVAE(config, labels)
        if init is not None:
            model.load_components(init)
    if out_dir:
        config_utils.write_config_file(
            os.path.join(out_dir, constants.CHECKPOINT_CONFIG_FILE), config)

    history = []
    for phase in config["phase"]:
        if phase in completed:
            continue
        step = start_step if phase == start_phase else 0
        generator = _restore_generator(
            state if phase == start_phase else None, config["seed"])
        history.extend(run_phase(model, phase, train_set, val_set, out_dir,
                                 step, generator, completed, progress))
        completed.append(phase)
    return TrainResult(model, history)


def final_loss(history: Sequence[Dict[Text, Any]],
               key: Text = "l_simple") -> Optional[float]:
    values = [r[key] for r in history if key in r]
    return values[-1] if values else None


def ablation_cells() -> List[InjectionSpec]:
    """Every method at the middle block, concat at the other positions."""

    return ([InjectionSpec(method, "middle") for method in INJECTION_METHODS] +
            [InjectionSpec("concat", position)
             for position in ABLATION_POSITIONS])


def _cell_config(config: Dict[Text, Any], spec: InjectionSpec,
                 seed: int, phases: Sequence[Text]) -> Dict[Text, Any]:
    cell = OrderedDict(config)
    cell.update(inject_method=spec.method, inject_position=spec.position,
                seed=seed, phase=tuple(phases), init_checkpoint="")
    return cell


def _evaluate_cell(model: DiVAE, eval_set: ImageDataset,
                   extractor: Any) -> Dict[Text, Any]:
    _, metrics = model.reconstruct(eval_set.images, extractor=extractor)
    return {key: metrics.get(key) for key in ("fid_proxy", "mse", "psnr")}


def ablate(config: Dict[Text, Any],
           out_dir: Text,
           budget: Optional[float] = None,
           seeds: Optional[int] = None,
           data: Optional[Tuple[ImageDataset, ImageDataset]] = None,
           progress: bool = False) -> Dict[Text, Any]:
    """Trains the injection ablation cells with equal budgets and seeds.

    Unless the config trains jointly, one encoder is trained per seed and
    shared by all cells of that seed. A failing cell records its error and
    the remaining cells still run."""

    from divae.core.evaluate import load_extractor

    budget = config["ablation_budget"] if budget is None else budget
    seeds = config["ablation_seeds"] if seeds is None else seeds
    base = config_utils.scaled(config, budget)
    joint = "joint" in base["phase"]
    train_set, val_set = data or load_dataset(
        config_utils.dataset_spec(base))
    eval_set = (val_set if len(val_set) >= 2 else train_set).take(
        base["eval_images"])
    extractor = load_extractor(base["feature_extractor"])
    logger.info("Ablating {} cells over {} seed(s) with {} steps each."
                "".format(len(ablation_cells()), seeds, base["total_steps"]))

    cells = []
    for s in range(seeds):
        seed = base["seed"] + s
        seed_dir = os.path.join(out_dir, "seed_{}".format(s))
        init = None
        if not joint:
            vq_config = _cell_config(base, InjectionSpec(), seed, ["vq"])
            vq_dir = os.path.join(seed_dir, "vq")
            train(vq_config, vq_dir, (train_set, val_set), progress=progress)
            init = ckpt.Checkpoint.load(vq_dir)

        for spec in ablation_cells():
            cell = OrderedDict([("method", spec.method),
                                ("position", spec.position),
                                ("seed", seed)])
            try:
                cell_config = _cell_config(
                    base, spec, seed, ["joint"] if joint else ["decoder"])
                result = train(cell_config,
                               os.path.join(seed_dir, str(spec)
                                            .replace("@", "_")),
                               (train_set, val_set), init=init,
                               progress=progress)
                cell["final_loss"] = final_loss(result.history)
                cell["val_l_simple"] = final_loss(result.history,
                                                  "val_l_simple")
                cell.update(_evaluate_cell(result.model, eval_set, extractor))
            except Exception as e:
                logger.error("Ablation cell {} (seed {}) failed: {}"
                             "".format(spec, seed, e))
                cell["error"] = {"error": type(e).__name__,
                                 "message": str(e)}
            cells.append(cell)

    report = {"budget": budget,
              "seeds": seeds,
              "total_steps": base["total_steps"],
              "eval_images": len(eval_set),
              "cells": cells,
              "summary": summarize_cells(cells),
              "reference_fid": {
                  "method": constants.REFERENCE_INJECTION_METHOD_FID,
                  "position": constants.REFERENCE_INJECTION_POSITION_FID}}
    utils.create_dir(out_dir)
    utils.dump_obj_as_json_to_file(os.path.join(out_dir, "ablation.json"),
                                   report)
    tables = ablation_tables(report)
    utils.dump_obj_as_str_to_file(os.path.join(out_dir, "ablation.txt"),
                                  tables)
    return report


def summarize_cells(cells: Sequence[Dict[Text, Any]]
                    ) -> List[Dict[Text, Any]]:
    """Averages the metrics of every cell over its successful seeds."""

    summary = []
    for spec in ablation_cells():
        runs = [c for c in cells
                if (c["method"], c["position"]) == tuple(spec)]
        ok = [c for c in runs if "error" not in c]
        entry = OrderedDict([("method", spec.method),
                             ("position", spec.position),
                             ("runs", len(ok)),
                             ("failed", len(runs) - len(ok))])
        for key in ("final_loss", "val_l_simple", "fid_proxy", "mse"):
            values = [c[key] for c in ok if c.get(key) is not None]
            entry[key] = float(np.mean(values)) if values else None
        summary.append(entry)
    return summary


def _fmt(value: Any) -> Text:
    if value is None:
        return "-"
    if isinstance(value, float):
        return "{:.4f}".format(value)
    return str(value)


def ablation_tables(report: Dict[Text, Any]) -> Text:
    """The method and the position table of an ablation report."""

    from terminaltables import AsciiTable

    header = ["", "final loss", "val l_simple", "FID-proxy", "MSE",
              "reference FID"]
    by_cell = {(e["method"], e["position"]): e for e in report["summary"]}

    def row(name, entry, reference):
        if entry["runs"] == 0:
            return [name, "failed", "-", "-", "-", _fmt(reference)]
        return [name, _fmt(entry["final_loss"]), _fmt(entry["val_l_simple"]),
                _fmt(entry["fid_proxy"]), _fmt(entry["mse"]),
                _fmt(reference)]

    methods = [header] + [
        row(method, by_cell[(method, "middle")],
            constants.REFERENCE_INJECTION_METHOD_FID[method])
        for method in INJECTION_METHODS]
    positions = [header] + [
        row(position, by_cell[("concat", position)],
            constants.REFERENCE_INJECTION_POSITION_FID[position])
        for position in ("encoder", "middle", "decoder")]

    return "\n".join([
        AsciiTable(methods, "Method of inputting embeddings").table,
        AsciiTable(positions, "Position of inputting embeddings").table,
        "Reference FIDs were measured on ImageNet-256 and are not "
        "reproducible at this scale."])
