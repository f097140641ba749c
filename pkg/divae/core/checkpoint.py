import logging
import os
from collections import OrderedDict
from typing import Any, Dict, List, Optional, Sequence, Text

import numpy as np

import divae
from divae import constants
from divae.core import utils
from divae.core.exceptions import CheckpointError, CheckpointLockedError

logger = logging.getLogger(__name__)

COMPONENTS = ("encoder", "codebook", "aux_decoder", "unet", "unet_ema",
              "prior")
WEIGHTS_DTYPE = np.dtype("<f4")


def array_name(component: Text, index: int) -> Text:
    return "{}/{}".format(component, index)


def _split_name(name: Text):
    component, _, index = name.rpartition("/")
    return component, int(index)


class Checkpoint(object):
    """Named float32 weight arrays plus everything needed to resume a run.

    Weights are stored as `<component>/<index>` in the order the component
    reports them."""

    def __init__(self,
                 config: Dict[Text, Any],
                 weights: Optional[Dict[Text, np.ndarray]] = None,
                 schedule: Optional[Dict[Text, Any]] = None,
                 step: int = 0,
                 phase: Optional[Text] = None,
                 rng_state: Optional[List[int]] = None,
                 completed_phases: Optional[Sequence[Text]] = None,
                 labels: Optional[Sequence[Text]] = None,
                 version: Text = constants.CHECKPOINT_FORMAT_VERSION
                 ) -> None:
        self.config = config
        self.weights = OrderedDict(weights or {})
        self.schedule = schedule
        self.step = step
        self.phase = phase
        self.rng_state = rng_state
        self.completed_phases = list(completed_phases or [])
        self.labels = list(labels) if labels is not None else None
        self.version = version

    def components(self) -> List[Text]:
        found = {_split_name(name)[0] for name in self.weights}
        return [c for c in COMPONENTS if c in found]

    def has_component(self, component: Text) -> bool:
        return component in self.components()

    def component_weights(self, component: Text) -> List[np.ndarray]:
        arrays = [(_split_name(name)[1], array)
                  for name, array in self.weights.items()
                  if _split_name(name)[0] == component]
        if not arrays:
            raise CheckpointError(
                "The checkpoint does not contain '{}' weights."
                "".format(component))
        return [array for _, array in sorted(arrays, key=lambda a: a[0])]

    def set_component(self, component: Text,
                      arrays: Sequence[np.ndarray]) -> None:
        for name in [n for n in self.weights
                     if _split_name(n)[0] == component]:
            del self.weights[name]
        for i, array in enumerate(arrays):
            self.weights[array_name(component, i)] = np.asarray(
                array, dtype=WEIGHTS_DTYPE)

    def _manifest(self) -> Dict[Text, Any]:
        arrays = []
        offset = 0
        for name, array in self.weights.items():
            arrays.append({"name": name,
                           "shape": list(array.shape),
                           "offset": offset})
            offset += array.size * WEIGHTS_DTYPE.itemsize
        return {
            "format_version": self.version,
            "divae": divae.__version__,
            "step": self.step,
            "phase": self.phase,
            "completed_phases": self.completed_phases,
            "rng_state": self.rng_state,
            "schedule": self.schedule,
            "labels": self.labels,
            "dtype": WEIGHTS_DTYPE.str,
            "arrays": arrays,
        }

    def persist(self, path: Text) -> None:
        """Writes manifest, weights and config into the directory `path`."""

        from divae import config as config_utils

        utils.create_dir(path)
        weights_file = os.path.join(path, constants.CHECKPOINT_WEIGHTS_FILE)
        try:
            tmp_file = weights_file + ".tmp"
            with open(tmp_file, "wb") as f:
                for array in self.weights.values():
                    f.write(np.ascontiguousarray(
                        array, dtype=WEIGHTS_DTYPE).tobytes())
            os.replace(tmp_file, weights_file)
            utils.dump_obj_as_json_to_file(
                os.path.join(path, constants.CHECKPOINT_MANIFEST_FILE),
                self._manifest())
            config_utils.write_config_file(
                os.path.join(path, constants.CHECKPOINT_CONFIG_FILE),
                self.config)
        except OSError as e:
            raise CheckpointError(
                "Failed to write checkpoint to '{}': {}".format(path, e))
        logger.debug("Persisted checkpoint of step {} to '{}'."
                     "".format(self.step, path))

    @staticmethod
    def ensure_compatibility(manifest_version: Text) -> None:
        from packaging import version

        stored = version.parse(manifest_version)
        current = version.parse(constants.CHECKPOINT_FORMAT_VERSION)
        if stored.major != current.major:
            raise CheckpointError(
                "The checkpoint format version {} can not be read by this "
                "divae instance, which reads version {}.x."
                "".format(manifest_version, current.major))

    @classmethod
    def load(cls, path: Text) -> 'Checkpoint':
        """Reads a checkpoint directory written by `persist`."""

        from divae import config as config_utils

        manifest_file = os.path.join(path, constants.CHECKPOINT_MANIFEST_FILE)
        weights_file = os.path.join(path, constants.CHECKPOINT_WEIGHTS_FILE)
        config_file = os.path.join(path, constants.CHECKPOINT_CONFIG_FILE)
        for required in (manifest_file, weights_file, config_file):
            if not os.path.isfile(required):
                raise CheckpointError(
                    "'{}' is not a checkpoint, '{}' is missing."
                    "".format(path, os.path.basename(required)))

        manifest = utils.read_json_file(manifest_file)
        cls.ensure_compatibility(manifest.get("format_version", "0.0"))
        raw = np.fromfile(weights_file, dtype=np.uint8)

        weights = OrderedDict()
        for entry in manifest["arrays"]:
            shape = tuple(entry["shape"])
            size = int(np.prod(shape, dtype=np.int64)) * WEIGHTS_DTYPE.itemsize
            start = entry["offset"]
            if start + size > raw.size:
                raise CheckpointError(
                    "The weights file of '{}' is truncated at array '{}'."
                    "".format(path, entry["name"]))
            weights[entry["name"]] = raw[start:start + size].view(
                WEIGHTS_DTYPE).reshape(shape).copy()

        return cls(config=config_utils.resolve(config_file),
                   weights=weights,
                   schedule=manifest.get("schedule"),
                   step=manifest.get("step", 0),
                   phase=manifest.get("phase"),
                   rng_state=manifest.get("rng_state"),
                   completed_phases=manifest.get("completed_phases"),
                   labels=manifest.get("labels"),
                   version=manifest["format_version"])


def assign_weights(model: Any, arrays: Sequence[np.ndarray],
                   component: Text) -> None:
    """Loads arrays into a built keras model or layer, checking shapes."""

    variables = model.weights
    if len(variables) != len(arrays):
        raise CheckpointError(
            "The checkpoint holds {} '{}' arrays but the model has {} "
            "weights.".format(len(arrays), component, len(variables)))
    for variable, array in zip(variables, arrays):
        if tuple(variable.shape) != tuple(array.shape):
            raise CheckpointError(
                "Shape mismatch for '{}' weight '{}': checkpoint {} vs "
                "model {}.".format(component, variable.name, array.shape,
                                   tuple(variable.shape)))
        variable.assign(array.astype(variable.dtype.as_numpy_dtype))


def optimizer_prefix(path: Text, name: Text) -> Text:
    return os.path.join(path, constants.CHECKPOINT_OPTIMIZER_DIR, name)


def save_optimizer(optimizer: Any, path: Text, name: Text) -> None:
    import tensorflow as tf

    prefix = optimizer_prefix(path, name)
    utils.create_dir_for_file(prefix)
    tf.train.Checkpoint(optimizer=optimizer).write(prefix)


def restore_optimizer(optimizer: Any, variables: Sequence[Any],
                      path: Text, name: Text) -> bool:
    """Restores slot variables, returns `False` if none were saved."""

    import tensorflow as tf

    prefix = optimizer_prefix(path, name)
    if not tf.io.gfile.exists(prefix + ".index"):
        return False
    optimizer.build(list(variables))
    tf.train.Checkpoint(optimizer=optimizer).read(prefix).expect_partial()
    return True


class CheckpointLock(object):
    """Exclusive writer lock on a checkpoint directory."""

    def __init__(self, path: Text) -> None:
        self.path = path
        self.lock_file = os.path.join(path, constants.CHECKPOINT_LOCK_FILE)
        self._fd = None

    def acquire(self) -> None:
        utils.create_dir(self.path)
        try:
            self._fd = os.open(self.lock_file,
                               os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise CheckpointLockedError(
                "'{}' is locked by another training process. Remove '{}' "
                "if that process is no longer running."
                "".format(self.path, self.lock_file))
        os.write(self._fd, str(os.getpid()).encode("utf-8"))

    def release(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
            if os.path.exists(self.lock_file):
                os.remove(self.lock_file)

    def __enter__(self) -> 'CheckpointLock':
        self.acquire()
        return self

    def __exit__(self, *exc: Any) -> None:
        self.release()
