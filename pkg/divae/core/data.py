import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Iterator, List, Optional, Sequence, Text, Tuple

import numpy as np
import tensorflow as tf
from tqdm import tqdm

from divae import constants
from divae.core import utils
from divae.core.exceptions import DataIngestionError, InvalidConfigException

logger = logging.getLogger(__name__)


class DatasetSpec(object):
    """Where images come from and how they are prepared and split.

    Args:
        root: Directory searched recursively for PNG and JPEG files.
        resolution: Side length images are cropped and resized to.
        split_fraction: Fraction of images held out for validation.
        seed: Seed of the train/validation split.
        flip: Randomly mirror training images horizontally.
        num_workers: Threads used to decode images.
        labels_file: Optional tab separated `filename<TAB>label` file,
            relative to `root`.
        rate: Encoder downsampling rate the resolution has to support.
    """

    def __init__(self,
                 root: Text,
                 resolution: int = 32,
                 split_fraction: float = 0.1,
                 seed: int = 0,
                 flip: bool = False,
                 num_workers: int = 4,
                 labels_file: Optional[Text] = constants.LABELS_FILE,
                 rate: Optional[int] = None) -> None:
        if resolution < 1:
            raise InvalidConfigException(
                "The image resolution has to be positive, got {}."
                "".format(resolution))
        if rate and resolution % rate != 0:
            raise InvalidConfigException(
                "The image resolution {} is not divisible by the encoder "
                "rate {}.".format(resolution, rate))
        if not 0. <= split_fraction < 1.:
            raise InvalidConfigException(
                "The validation fraction has to lie in [0, 1), got {}."
                "".format(split_fraction))
        self.root = root
        self.resolution = resolution
        self.split_fraction = split_fraction
        self.seed = seed
        self.flip = flip
        self.num_workers = max(num_workers, 1)
        self.labels_file = labels_file


class ImageDataset(object):
    """Decoded images in [-1, 1] with their file names and labels."""

    def __init__(self,
                 images: np.ndarray,
                 files: Sequence[Text],
                 labels: Optional[Sequence[Optional[Text]]] = None) -> None:
        self.images = images
        self.files = list(files)
        self.labels = list(labels) if labels is not None else (
            [None] * len(self.files))

    def __len__(self) -> int:
        return len(self.files)

    def label_names(self) -> List[Text]:
        return sorted({label for label in self.labels if label is not None})

    def batches(self,
                batch_size: int,
                epoch: int = 0,
                seed: int = 0,
                flip: bool = False,
                drop_remainder: bool = False,
                with_indices: bool = False) -> Iterator:
        """Yields shuffled batches; the order only depends on seed and epoch.
        """

        state = np.random.RandomState([seed, epoch])
        order = state.permutation(len(self))
        flips = state.rand(len(self)) < 0.5
        for start in range(0, len(order), batch_size):
            indices = order[start:start + batch_size]
            if drop_remainder and len(indices) < batch_size:
                return
            batch = self.images[indices]
            if flip:
                batch = np.where(flips[indices, None, None, None],
                                 batch[:, :, ::-1], batch)
            yield (batch, indices) if with_indices else batch

    def take(self, n: int) -> 'ImageDataset':
        return ImageDataset(self.images[:n], self.files[:n], self.labels[:n])


def list_image_files(root: Text) -> List[Text]:
    """All PNG and JPEG files below `root`, sorted by relative path."""

    if not os.path.isdir(root):
        raise DataIngestionError(
            "Image directory '{}' does not exist.".format(root), [root])
    files = []
    for dirpath, _, filenames in os.walk(root):
        for filename in filenames:
            if filename.lower().endswith(constants.IMAGE_EXTENSIONS):
                files.append(os.path.join(dirpath, filename))
    return sorted(files, key=lambda f: os.path.relpath(f, root))


def center_crop_and_resize(image: tf.Tensor, resolution: int) -> tf.Tensor:
    height = tf.shape(image)[0]
    width = tf.shape(image)[1]
    crop = tf.minimum(height, width)
    image = tf.image.crop_to_bounding_box(image,
                                          (height - crop) // 2,
                                          (width - crop) // 2,
                                          crop, crop)
    image = tf.image.resize(tf.cast(image, tf.float32),
                            [resolution, resolution], antialias=True)
    return tf.clip_by_value(image / 127.5 - 1.0, -1.0, 1.0)


def decode_image(path: Text, resolution: int) -> np.ndarray:
    """Reads an image file into a `[resolution, resolution, 3]` array."""

    raw = tf.io.read_file(path)
    image = tf.io.decode_image(raw, channels=3, expand_animations=False)
    return center_crop_and_resize(image, resolution).numpy()


def _try_decode(path: Text, resolution: int) -> Optional[np.ndarray]:
    try:
        return decode_image(path, resolution)
    except (tf.errors.OpError, ValueError) as e:
        logger.debug("Failed to decode '{}': {}".format(path, e))
        return None


def decode_images(files: Sequence[Text],
                  resolution: int,
                  num_workers: int = 4,
                  progress: bool = True) -> np.ndarray:
    """Decodes files in parallel, keeping their order.

    Raises a `DataIngestionError` naming every file that failed."""

    with ThreadPoolExecutor(max_workers=max(num_workers, 1)) as pool:
        decoded = list(tqdm(pool.map(lambda f: _try_decode(f, resolution),
                                     files),
                            total=len(files), desc="images",
                            disable=not progress))

    offending = [f for f, image in zip(files, decoded) if image is None]
    if offending:
        raise DataIngestionError(
            "Failed to decode {} image file(s): {}."
            "".format(len(offending), ", ".join(offending)), offending)
    if not decoded:
        return np.zeros((0, resolution, resolution, 3), dtype=np.float32)
    return np.stack(decoded).astype(np.float32)


def read_labels(path: Text) -> Dict[Text, Text]:
    """Reads `filename<TAB>label` lines, skipping blanks and comments."""

    labels = {}
    for line in utils.read_file(path).splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        filename, _, label = line.rstrip("\n").partition("\t")
        if label:
            labels[filename.strip()] = label.strip()
    return labels


def split_files(files: Sequence[Text],
                fraction: float,
                seed: int) -> Tuple[List[Text], List[Text]]:
    """Disjoint train and validation lists, deterministic given the seed."""

    n_val = int(round(len(files) * fraction))
    order = np.random.RandomState(seed).permutation(len(files))
    val = set(order[:n_val].tolist())
    train_files = [f for i, f in enumerate(files) if i not in val]
    val_files = [f for i, f in enumerate(files) if i in val]
    return train_files, val_files


def load_image_folder(root: Text,
                      resolution: int,
                      num_workers: int = 4,
                      limit: Optional[int] = None) -> ImageDataset:
    """Loads every image below `root` without splitting."""

    files = list_image_files(root)
    if limit:
        files = files[:limit]
    if not files:
        raise DataIngestionError(
            "No PNG or JPEG images found in '{}'.".format(root), [root])
    images = decode_images(files, resolution, num_workers)
    logger.info("Loaded {} images from '{}'.".format(len(files), root))
    return ImageDataset(images, files)


def load_dataset(spec: DatasetSpec) -> Tuple[ImageDataset, ImageDataset]:
    """Loads, normalizes and splits an image folder.

    Returns:
        The training and the validation `ImageDataset`.
    """

    files = list_image_files(spec.root)
    if len(files) < constants.MIN_DATASET_IMAGES:
        raise DataIngestionError(
            "'{}' contains {} images, at least {} are needed."
            "".format(spec.root, len(files), constants.MIN_DATASET_IMAGES),
            files)

    images = decode_images(files, spec.resolution, spec.num_workers)

    labels = [None] * len(files)
    labels_path = (os.path.join(spec.root, spec.labels_file)
                   if spec.labels_file else None)
    if labels_path and os.path.isfile(labels_path):
        by_name = read_labels(labels_path)
        labels = [by_name.get(os.path.relpath(f, spec.root),
                              by_name.get(os.path.basename(f)))
                  for f in files]
        logger.info("Read labels for {} of {} images."
                    "".format(sum(lbl is not None for lbl in labels),
                              len(files)))

    index = {f: i for i, f in enumerate(files)}
    train_files, val_files = split_files(files, spec.split_fraction,
                                         spec.seed)

    def subset(selected):
        ids = [index[f] for f in selected]
        return ImageDataset(images[ids], selected, [labels[i] for i in ids])

    train, val = subset(train_files), subset(val_files)
    logger.info("Loaded {} images from '{}': {} train, {} validation."
                "".format(len(files), spec.root, len(train), len(val)))
    return train, val


def to_uint8(images: np.ndarray) -> np.ndarray:
    images = np.clip((np.asarray(images) + 1.0) * 127.5, 0, 255)
    return np.round(images).astype(np.uint8)


def write_png(path: Text, image: np.ndarray) -> None:
    utils.create_dir_for_file(path)
    tf.io.write_file(path, tf.io.encode_png(to_uint8(image)))


def output_stems(names: Sequence[Text]) -> List[Text]:
    """Unique file stems for `names`.

    Stems are paths relative to the deepest common folder with the
    separators replaced by `_`, so `a/x.png` and `b/x.png` become `a_x`
    and `b_x`. Remaining clashes, e.g. `x.png` and `x.jpg`, get the index
    of the name appended."""

    try:
        common = os.path.commonpath([os.path.dirname(n) for n in names])
    except ValueError:
        # empty, or absolute and relative paths mixed
        common = ""

    stems = []
    taken = set()
    for i, name in enumerate(names):
        relative = os.path.relpath(name, common) if common else name
        stem = os.path.splitext(relative)[0].replace(os.sep, "_")
        if stem in taken:
            stem = "{}_{}".format(stem, i)
        taken.add(stem)
        stems.append(stem)
    return stems


def write_images(images: np.ndarray,
                 out_dir: Text,
                 names: Optional[Sequence[Text]] = None,
                 prefix: Text = "image") -> List[Text]:
    """Writes each image as PNG, named after `names` if given.

    Every image gets its own file, also if `names` repeat a file name in
    different folders."""

    if names is not None:
        stems = output_stems(names)
    else:
        stems = ["{}_{:04d}".format(prefix, i) for i in range(len(images))]

    utils.create_dir(out_dir)
    paths = []
    for image, stem in zip(images, stems):
        path = os.path.join(out_dir, stem + ".png")
        write_png(path, image)
        paths.append(path)
    return paths


def make_grid(columns: Sequence[np.ndarray]) -> np.ndarray:
    """Places image sets side by side, one row per image index."""

    rows = [np.concatenate([column[i] for column in columns], axis=1)
            for i in range(len(columns[0]))]
    return np.concatenate(rows, axis=0)
