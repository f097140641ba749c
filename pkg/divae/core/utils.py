import errno
import json
import logging
import os
import random
from typing import Any, Optional, Sequence, Text

import numpy as np
import tensorflow as tf

from divae.core.exceptions import ShapeMismatchError

logger = logging.getLogger(__name__)


def finite_or_none(obj: Any) -> Any:
    """Replaces non-finite floats, e.g. the PSNR of identical images, by
    `None` so the object serializes to standard JSON."""

    if isinstance(obj, dict):
        return {key: finite_or_none(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [finite_or_none(value) for value in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def dump_obj_as_json_to_file(filename: Text, obj: Any) -> None:
    """Dump an object as a json string to a file."""

    dump_obj_as_str_to_file(filename, json.dumps(finite_or_none(obj),
                                                 indent=2, sort_keys=True,
                                                 allow_nan=False))


def dump_obj_as_str_to_file(filename: Text, text: Text) -> None:
    """Dump a text to a file."""

    with open(filename, 'w', encoding="utf-8") as f:
        # noinspection PyTypeChecker
        f.write(str(text))


def append_json_line(filename: Text, obj: Any) -> None:
    """Append an object as a single json line to a file."""

    with open(filename, 'a', encoding="utf-8") as f:
        f.write(json.dumps(finite_or_none(obj), sort_keys=True,
                           allow_nan=False) + "\n")


def read_file(filename: Text, encoding: Text = "utf-8") -> Text:
    """Read text from a file."""
    with open(filename, encoding=encoding) as f:
        return f.read()


def read_json_file(filename: Text) -> Any:
    """Read json from a file"""
    with open(filename, encoding="utf-8") as f:
        return json.load(f)


def create_dir_for_file(file_path: Text) -> None:
    """Creates any missing parent directories of this files path."""

    create_dir(os.path.dirname(file_path))


def create_dir(dir_path: Text) -> None:
    """Creates a directory and its super paths.

    Succeeds even if the path already exists."""

    if not dir_path:
        return
    try:
        os.makedirs(dir_path)
    except OSError as e:
        # be happy if someone already created the path
        if e.errno != errno.EEXIST:
            raise


def set_random_seed(seed: Optional[int]) -> None:
    """Seeds python, numpy and tensorflow global generators."""

    if seed is None:
        return
    random.seed(seed)
    np.random.seed(seed)
    tf.random.set_seed(seed)


def static_shape(x: Any) -> Sequence[Optional[int]]:
    if isinstance(x, (tf.Tensor, tf.Variable)):
        return tuple(x.shape.as_list())
    return tuple(np.shape(x))


def check_same_shape(a: Any, b: Any, what: Text) -> None:
    """Raises a `ShapeMismatchError` if `a` and `b` differ in shape."""

    shape_a, shape_b = static_shape(a), static_shape(b)
    if shape_a != shape_b:
        raise ShapeMismatchError(
            "Shape mismatch for {}: {} vs {}.".format(what, shape_a, shape_b))


def float_tensor(x: Any) -> tf.Tensor:
    """Converts `x` to a floating point tensor.

    Keeps the dtype of floating point tensors, everything else is cast to
    the keras default float type."""

    if isinstance(x, (tf.Tensor, tf.Variable)) and x.dtype.is_floating:
        return tf.convert_to_tensor(x)
    if isinstance(x, np.ndarray) and np.issubdtype(x.dtype, np.floating):
        return tf.convert_to_tensor(x)
    return tf.convert_to_tensor(x, dtype=tf.keras.backend.floatx())


def is_finite(value: Any) -> bool:
    return bool(np.all(np.isfinite(np.asarray(value))))
