"""MNIST / CIFAR-10 readers, spike encoding, downloads and batch prefetching."""

from __future__ import annotations

import gzip
import io
import logging
import os
import queue
import shutil
import struct
import tarfile
import threading
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, Union

import numpy as np

from .tensor import Precision, Tensor

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
CIFAR_RECORD = 1 + 3 * 32 * 32
DATA_DIR_ENV = "SNN_DATA_DIR"

PathLike = Union[str, os.PathLike]


class DataFormatError(ValueError):
    pass


@dataclass
class LabeledBatch:
    images: Tensor
    labels: np.ndarray

    def __post_init__(self):
        if len(self.labels) != self.images.shape[0]:
            raise DataFormatError(f"{self.images.shape[0]} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class Dataset:
    """In-memory images [N, C, H, W] float32 in [0, 1] and int64 labels."""

    images: np.ndarray
    labels: np.ndarray
    classes: int = 10

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DataFormatError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def subset(self, n: Optional[int]) -> "Dataset":
        if n is None or n >= len(self):
            return self
        return Dataset(self.images[:n], self.labels[:n], self.classes)

    def batches(self, batch_size: int, shuffle: bool = False, seed: int = 0,
                drop_last: bool = False) -> Iterator[LabeledBatch]:
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        order = np.arange(len(self))
        if shuffle:
            np.random.default_rng(seed).shuffle(order)
        for start in range(0, len(self), batch_size):
            idx = order[start:start + batch_size]
            if drop_last and len(idx) < batch_size:
                break
            yield LabeledBatch(Tensor._wrap(self.images[idx], Precision.SINGLE), self.labels[idx])


def _read_bytes(path: PathLike) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def read_idx(path: PathLike, expected_magic: int) -> np.ndarray:
    """Parse a big-endian IDX file of unsigned bytes."""
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise DataFormatError(f"{path}: truncated header")
    magic, count = struct.unpack(">ii", raw[:8])
    if magic != expected_magic:
        raise DataFormatError(f"{path}: magic {magic}, expected {expected_magic}")
    dims = [count]
    header = 8
    if magic == IDX_IMAGES_MAGIC:
        if len(raw) < 16:
            raise DataFormatError(f"{path}: truncated header")
        dims += list(struct.unpack(">ii", raw[8:16]))
        header = 16
    need = int(np.prod(dims))
    if len(raw) - header < need:
        raise DataFormatError(f"{path}: truncated, {len(raw) - header} of {need} data bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=need, offset=header).reshape(dims)


def load_mnist(images_path: PathLike, labels_path: PathLike,
               limit: Optional[int] = None) -> Dataset:
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if len(images) != len(labels):
        raise DataFormatError(f"{len(images)} images vs {len(labels)} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    x = (images.astype(np.float32) / 255.0)[:, None, :, :]
    return Dataset(x, labels.astype(np.int64))


def load_cifar10(batch_paths: Union[PathLike, Sequence[PathLike]],
                 limit: Optional[int] = None) -> Dataset:
    """Read CIFAR-10 binary batches: 1 label byte + 3x1024 channel-planar pixels."""
    if isinstance(batch_paths, (str, os.PathLike)):
        batch_paths = [batch_paths]
    chunks = []
    total = 0
    for path in batch_paths:
        raw = _read_bytes(path)
        if len(raw) % CIFAR_RECORD:
            raise DataFormatError(f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD}")
        chunks.append(np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD))
        total += len(chunks[-1])
        if limit is not None and total >= limit:
            break
    records = np.concatenate(chunks) if chunks else np.zeros((0, CIFAR_RECORD), np.uint8)
    if limit is not None:
        records = records[:limit]
    labels = records[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        raise DataFormatError(f"label {labels.max()} out of range")
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return Dataset(images, labels)


def encode(images: Union[Tensor, np.ndarray], T: int, mode: str = "constant_current",
           rng_seed: int = 0) -> Tensor:
    """[B, ...] intensities in [0, 1] -> [B, ..., T] input currents or spikes."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if isinstance(images, Tensor):
        precision, x = images.precision, images.data
    else:
        precision, x = Precision.SINGLE, np.asarray(images, dtype=np.float32)
    if mode == "constant_current":
        out = np.repeat(x[..., None], T, axis=-1)
    elif mode == "bernoulli_rate":
        rng = np.random.default_rng(rng_seed)
        out = (rng.random(x.shape + (T,)) < x[..., None]).astype(precision.dtype)
    else:
        raise ValueError(f"unknown encoding mode {mode!r}")
    return Tensor._wrap(out, precision)


# ------------------------------------------------------------------- files

MNIST_FILES = {
    "train-images-idx3-ubyte": 47040016,
    "train-labels-idx1-ubyte": 60008,
    "t10k-images-idx3-ubyte": 7840016,
    "t10k-labels-idx1-ubyte": 10008,
}
CIFAR10_FILES = {f"data_batch_{i}.bin": 10000 * CIFAR_RECORD for i in range(1, 6)}
CIFAR10_FILES["test_batch.bin"] = 10000 * CIFAR_RECORD

MNIST_GZ_MIRRORS = (
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
)
# npm package that ships the four raw IDX files under package/data/
MNIST_NPM_TARBALL = "https://registry.npmjs.org/mnist-data/-/mnist-data-1.2.6.tgz"
CIFAR10_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"


def data_dir(explicit: Optional[PathLike] = None) -> Path:
    if explicit:
        return Path(explicit)
    env = os.environ.get(DATA_DIR_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "snnbptt"


def _find(root: Path, name: str) -> Optional[Path]:
    for cand in (root / name, root / (name + ".gz")):
        if cand.exists():
            return cand
    for cand in root.rglob(name):
        return cand
    return None


def _verified(path: Optional[Path], size: int) -> bool:
    if path is None:
        return False
    if path.suffix == ".gz":
        return len(_read_bytes(path)) == size
    return path.stat().st_size == size


def mnist_paths(root: Optional[PathLike] = None) -> dict[str, Path]:
    base = data_dir(root)
    for sub in (base / "mnist", base):
        found = {n: _find(sub, n) for n in MNIST_FILES}
        if all(found.values()):
            return found
    raise FileNotFoundError(f"MNIST files not found under {base} (run fetch-data)")


def cifar10_paths(root: Optional[PathLike] = None) -> dict[str, Path]:
    base = data_dir(root)
    for sub in (base / "cifar10", base):
        if not sub.exists():
            continue
        found = {n: _find(sub, n) for n in CIFAR10_FILES}
        if all(found.values()):
            return found
    raise FileNotFoundError(f"CIFAR-10 binary batches not found under {base} (run fetch-data)")


def load_dataset(name: str, split: str = "train", root: Optional[PathLike] = None,
                 limit: Optional[int] = None) -> Dataset:
    if name == "mnist":
        paths = mnist_paths(root)
        prefix = "train" if split == "train" else "t10k"
        return load_mnist(paths[f"{prefix}-images-idx3-ubyte"],
                          paths[f"{prefix}-labels-idx1-ubyte"], limit)
    if name == "cifar10":
        paths = cifar10_paths(root)
        names = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
        return load_cifar10([paths[n] for n in names], limit)
    raise ValueError(f"unknown dataset {name!r}")


def _download(url: str, timeout: float = 60.0) -> bytes:
    log.info("downloading %s", url)
    with urllib.request.urlopen(url, timeout=timeout) as resp:
        return resp.read()


def fetch_mnist(root: Optional[PathLike] = None) -> Path:
    """Ensure the four MNIST IDX files exist under <root>/mnist with correct sizes."""
    dest = data_dir(root) / "mnist"
    dest.mkdir(parents=True, exist_ok=True)
    missing = [n for n, size in MNIST_FILES.items() if not _verified(_find(dest, n), size)]
    if not missing:
        return dest
    errors = []
    for mirror in MNIST_GZ_MIRRORS:
        try:
            for name in missing:
                raw = gzip.decompress(_download(mirror + name + ".gz"))
                (dest / name).write_bytes(raw)
            break
        except OSError as exc:
            errors.append(f"{mirror}: {exc}")
    else:
        try:
            blob = _download(MNIST_NPM_TARBALL)
            with tarfile.open(fileobj=io.BytesIO(blob), mode="r:gz") as tar:
                for name in missing:
                    src = tar.extractfile(f"package/data/{name}")
                    with open(dest / name, "wb") as out:
                        shutil.copyfileobj(src, out)
        except (OSError, KeyError, tarfile.TarError) as exc:
            errors.append(f"{MNIST_NPM_TARBALL}: {exc}")
            raise OSError("could not fetch MNIST:\n  " + "\n  ".join(errors)) from exc
    bad = [n for n, size in MNIST_FILES.items() if not _verified(_find(dest, n), size)]
    if bad:
        raise DataFormatError(f"size check failed for {bad}")
    return dest


def fetch_cifar10(root: Optional[PathLike] = None) -> Path:
    dest = data_dir(root) / "cifar10"
    dest.mkdir(parents=True, exist_ok=True)
    if all(_verified(_find(dest, n), s) for n, s in CIFAR10_FILES.items()):
        return dest
    blob = _download(CIFAR10_URL, timeout=600)
    with tarfile.open(fileobj=io.BytesIO(blob), mode="r:gz") as tar:
        for member in tar.getmembers():
            name = Path(member.name).name
            if name in CIFAR10_FILES:
                with open(dest / name, "wb") as out:
                    shutil.copyfileobj(tar.extractfile(member), out)
    bad = [n for n, s in CIFAR10_FILES.items() if not _verified(_find(dest, n), s)]
    if bad:
        raise DataFormatError(f"size check failed for {bad}")
    return dest


# --------------------------------------------------------------- prefetch

_END = object()


class Prefetcher:
    """Background producer over `source` with a bounded queue.

    The producer blocks while the queue is full, iteration blocks while it is
    empty, and `close()` stops the producer and drains what is left.
    """

    def __init__(self, source: Iterable, maxsize: int = 2):
        if maxsize < 1:
            raise ValueError("maxsize must be >= 1")
        self._queue: queue.Queue = queue.Queue(maxsize=maxsize)
        self._stop = threading.Event()
        self._error: Optional[BaseException] = None
        self._thread = threading.Thread(target=self._run, args=(iter(source),), daemon=True)
        self._thread.start()

    def _put(self, item) -> bool:
        while not self._stop.is_set():
            try:
                self._queue.put(item, timeout=0.05)
                return True
            except queue.Full:
                continue
        return False

    def _run(self, it: Iterator) -> None:
        try:
            for item in it:
                if not self._put(item):
                    return
        except BaseException as exc:  # re-raised in the consumer
            self._error = exc
        finally:
            self._put(_END)

    def __iter__(self):
        while True:
            item = self._queue.get()
            if item is _END:
                if self._error is not None:
                    raise self._error
                return
            yield item

    def close(self) -> None:
        self._stop.set()
        while True:
            try:
                self._queue.get_nowait()
            except queue.Empty:
                break
        self._thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
