"""A small 1D convolutional network trained from scratch with Adam.

Layer plan for the standard 20-feature input (output length per block):

    input 1x20
    Conv 32 kernels, width 3, stride 1, no padding   -> 32x18
    Conv 32 kernels, width 2, stride 1               -> 32x17
    MaxPool size 2, stride 2 (floor)                 -> 32x8
    Conv 128 kernels, width 1                        -> 128x8
    MaxPool 2                                        -> 128x4
    Conv 256 kernels, width 1                        -> 256x4
    MaxPool 2                                        -> 256x2
    Flatten                                          -> 512
    Dense 512 -> Dense 128 -> Dense 2 (softmax)

Kernel widths 3 and 2 in the first two blocks are the only pair that maps
a 20-wide input to 18 then 17; the 17 -> 8 pooling step forces floor
semantics. Hidden activations are ReLU, the output is a softmax over
(healthy, insomnia), and initialization is seeded He-uniform, so training
is bit-reproducible for a given seed.

Everything runs on plain float64 numpy arrays with a leading batch axis;
training uses batch size 1 by contract (keeps the update order, and hence
the result, deterministic).
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateDataset, IncompatibleModel, NoData, ShapeError
from .features import FeatureVector

HEALTHY, INSOMNIA = 0, 1
CLASS_NAMES = ("healthy", "insomnia")

STANDARD_INPUT_WIDTH = 20
STANDARD_TRACE = (18, 17, 8, 8, 4, 4, 2, 512, 512, 128, 2)

#: (kind, *args) per block: conv -> (out_channels, kernel_width),
#: pool -> (size,), dense -> (units,).
LAYER_PLAN = (
    ("conv", 32, 3),
    ("conv", 32, 2),
    ("pool", 2),
    ("conv", 128, 1),
    ("pool", 2),
    ("conv", 256, 1),
    ("pool", 2),
    ("flatten",),
    ("dense", 512),
    ("dense", 128),
    ("dense", 2),
)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    weight_decay: float = 0.0
    batch_size: int = 1
    max_epochs: int = 100
    early_stop_patience: int = 10
    split: float = 0.70
    seed: int = 0
    split_by_subject: bool = True

    def validate(self) -> None:
        if not (0.0 < self.learning_rate < 1.0):
            raise ValueError(f"learning rate {self.learning_rate} out of (0, 1)")
        if not (0.0 < self.split < 1.0):
            raise ValueError(f"train split {self.split} out of (0, 1)")
        if self.batch_size != 1:
            raise ValueError("training is defined for batch size 1 only")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")


# --- blocks ------------------------------------------------------------------


class _Conv:
    """Valid 1D convolution (stride 1) followed by ReLU."""

    def __init__(self, in_ch: int, out_ch: int, width: int, rng: np.random.Generator):
        limit = np.sqrt(6.0 / (in_ch * width))
        self.W = rng.uniform(-limit, limit, size=(out_ch, in_ch, width))
        self.b = np.zeros(out_ch)
        self.width = width

    def out_size(self, size: int) -> int:
        return size - self.width + 1

    def forward(self, x: np.ndarray):
        windows = sliding_window_view(x, self.width, axis=2)
        z = np.einsum("bilk,oik->bol", windows, self.W) + self.b[None, :, None]
        return np.maximum(z, 0.0), (x, windows, z)

    def backward(self, cache, dy):
        x, windows, z = cache
        dz = dy * (z > 0.0)
        dw = np.einsum("bot,bitk->oik", dz, windows)
        db = dz.sum(axis=(0, 2))
        dx = np.zeros_like(x)
        out_len = z.shape[2]
        for j in range(self.width):
            dx[:, :, j : j + out_len] += np.einsum("bot,oi->bit", dz, self.W[:, :, j])
        return dx, {"W": dw, "b": db}

    def params(self):
        return {"W": self.W, "b": self.b}


class _MaxPool:
    """Max pooling with region = stride = size and floor semantics."""

    def __init__(self, size: int):
        self.size = size

    def out_size(self, size: int) -> int:
        return size // self.size

    def forward(self, x: np.ndarray):
        b, c, length = x.shape
        out_len = length // self.size
        regions = x[:, :, : out_len * self.size].reshape(b, c, out_len, self.size)
        idx = regions.argmax(axis=3)
        y = np.take_along_axis(regions, idx[..., None], axis=3)[..., 0]
        return y, (x.shape, idx)

    def backward(self, cache, dy):
        shape, idx = cache
        b, c, length = shape
        out_len = idx.shape[2]
        dregions = np.zeros((b, c, out_len, self.size))
        np.put_along_axis(dregions, idx[..., None], dy[..., None], axis=3)
        dx = np.zeros(shape)
        dx[:, :, : out_len * self.size] = dregions.reshape(b, c, out_len * self.size)
        return dx, None

    def params(self):
        return {}


class _Flatten:
    def out_size(self, size: int) -> int:
        return size

    def forward(self, x: np.ndarray):
        return x.reshape(x.shape[0], -1), (x.shape,)

    def backward(self, cache, dy):
        (shape,) = cache
        return dy.reshape(shape), None

    def params(self):
        return {}


class _Dense:
    def __init__(self, in_features: int, units: int, rng: np.random.Generator, relu: bool):
        limit = np.sqrt(6.0 / in_features)
        self.W = rng.uniform(-limit, limit, size=(units, in_features))
        self.b = np.zeros(units)
        self.relu = relu

    def out_size(self, size: int) -> int:
        return self.W.shape[0]

    def forward(self, x: np.ndarray):
        z = x @ self.W.T + self.b
        y = np.maximum(z, 0.0) if self.relu else z
        return y, (x, z)

    def backward(self, cache, dy):
        x, z = cache
        dz = dy * (z > 0.0) if self.relu else dy
        return dz @ self.W, {"W": dz.T @ x, "b": dz.sum(axis=0)}

    def params(self):
        return {"W": self.W, "b": self.b}


def derive_trace(input_width: int) -> tuple[int, ...]:
    """Per-block output sizes for the fixed plan applied to any input width.

    Raises ShapeError if any intermediate size collapses below 1.
    """
    channels, length = 1, int(input_width)
    trace = []
    for entry in LAYER_PLAN:
        kind = entry[0]
        if kind == "conv":
            _, out_ch, width = entry
            length = length - width + 1
            channels = out_ch
            if length < 1:
                raise ShapeError(f"input width {input_width}: convolution output empty")
        elif kind == "pool":
            length //= entry[1]
            if length < 1:
                raise ShapeError(f"input width {input_width}: pooled output empty")
        elif kind == "flatten":
            length = channels * length
            channels = 1
        else:  # dense
            length = entry[1]
        trace.append(length)
    return tuple(trace)


class CnnModel:
    """The fixed-plan classifier. Construction is strict about input width:
    the standard plan is defined for 20 inputs and refuses anything else;
    use for_width() to re-derive the plan for a different feature count
    (e.g. 40 when two channels are concatenated).
    """

    def __init__(
        self,
        input_width: int = STANDARD_INPUT_WIDTH,
        seed: int = 0,
        feature_names: tuple[str, ...] | None = None,
        _derived: bool = False,
    ):
        if input_width != STANDARD_INPUT_WIDTH and not _derived:
            raise ShapeError(
                f"standard plan requires {STANDARD_INPUT_WIDTH} inputs, got "
                f"{input_width}; use CnnModel.for_width for a derived plan"
            )
        self.input_width = int(input_width)
        self.seed = int(seed)
        self.feature_names = tuple(feature_names) if feature_names else None
        if self.feature_names and len(self.feature_names) != self.input_width:
            raise ShapeError("feature_names length must equal input_width")
        self.trace = derive_trace(self.input_width)
        if input_width == STANDARD_INPUT_WIDTH:
            assert self.trace == STANDARD_TRACE
        self.norm_mean: np.ndarray | None = None
        self.norm_std: np.ndarray | None = None

        rng = np.random.default_rng(np.random.SeedSequence(self.seed))
        self.blocks = []
        channels, length = 1, self.input_width
        for i, entry in enumerate(LAYER_PLAN):
            kind = entry[0]
            if kind == "conv":
                _, out_ch, width = entry
                self.blocks.append(_Conv(channels, out_ch, width, rng))
                channels, length = out_ch, length - width + 1
            elif kind == "pool":
                self.blocks.append(_MaxPool(entry[1]))
                length //= entry[1]
            elif kind == "flatten":
                self.blocks.append(_Flatten())
                length, channels = channels * length, 1
            else:
                last = i == len(LAYER_PLAN) - 1
                self.blocks.append(_Dense(length, entry[1], rng, relu=not last))
                length = entry[1]
        self._consolidate_parameters()

    def _consolidate_parameters(self) -> None:
        # Re-home every parameter tensor as a view into one flat buffer so
        # the optimizer can update all of them with a few vectorized ops.
        tensors = self.parameter_tensors()
        flat = np.empty(sum(arr.size for _, _, arr in tensors))
        offset = 0
        for index, name, arr in tensors:
            view = flat[offset : offset + arr.size].reshape(arr.shape)
            view[...] = arr
            setattr(self.blocks[index], name, view)
            offset += arr.size
        self.flat_parameters = flat

    @classmethod
    def for_width(
        cls,
        input_width: int,
        seed: int = 0,
        feature_names: tuple[str, ...] | None = None,
    ) -> "CnnModel":
        return cls(input_width, seed, feature_names, _derived=True)

    # --- forward passes ----------------------------------------------------

    def _check_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_width:
            raise ShapeError(
                f"expected vectors of length {self.input_width}, got shape {x.shape}"
            )
        return x

    def logits(self, x: np.ndarray) -> np.ndarray:
        batch = self._check_batch(x)
        act = batch[:, None, :]
        for block in self.blocks:
            act, _ = block.forward(act)
        return act

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Class probabilities (healthy, insomnia) for one feature vector."""
        return _softmax(self.logits(x))[0]

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        return _softmax(self.logits(x))

    def forward_trace(self, x: np.ndarray) -> tuple[int, ...]:
        """Observed per-block output sizes of an actual forward pass."""
        batch = self._check_batch(x)
        act = batch[:, None, :]
        sizes = []
        for block in self.blocks:
            act, _ = block.forward(act)
            sizes.append(act.shape[-1] if act.ndim == 3 else act.shape[1])
        return tuple(sizes)

    # --- diagnostics used by gradient verification --------------------------

    def block_inputs(self, x: np.ndarray) -> list[np.ndarray]:
        """The activation entering each block (index 0 is the 1xW input)."""
        act = self._check_batch(x)[:, None, :]
        inputs = []
        for block in self.blocks:
            inputs.append(act)
            act, _ = block.forward(act)
        return inputs

    def losses_from(self, block_index: int, acts: np.ndarray, target) -> np.ndarray:
        """Cross-entropy per batch row, running blocks[block_index:] only."""
        act = acts
        for block in self.blocks[block_index:]:
            act, _ = block.forward(act)
        return _cross_entropy(act, _target_distribution(target))

    # --- training-facing API -------------------------------------------------

    def loss(self, x: np.ndarray, target) -> float:
        return float(_cross_entropy(self.logits(x), _target_distribution(target))[0])

    def backward(self, x: np.ndarray, target):
        """Analytic gradients of the cross-entropy loss.

        Returns (per-block list of parameter-gradient dicts, gradient with
        respect to the input vector).
        """
        batch = self._check_batch(x)
        act = batch[:, None, :]
        caches = []
        for block in self.blocks:
            act, cache = block.forward(act)
            caches.append(cache)
        probs = _softmax(act)
        dact = probs - _target_distribution(target)[None, :]
        grads: list[dict | None] = [None] * len(self.blocks)
        for i in reversed(range(len(self.blocks))):
            dact, grad = self.blocks[i].backward(caches[i], dact)
            grads[i] = grad
        return grads, dact[0, 0, :]

    def parameter_tensors(self) -> list[tuple[int, str, np.ndarray]]:
        """(block index, name, array) for every parameter, declaration order."""
        out = []
        for i, block in enumerate(self.blocks):
            for name, arr in block.params().items():
                out.append((i, name, arr))
        return out

    def copy_parameters(self) -> list[np.ndarray]:
        return [arr.copy() for _, _, arr in self.parameter_tensors()]

    def set_parameters(self, tensors: list[np.ndarray]) -> None:
        own = self.parameter_tensors()
        if len(own) != len(tensors):
            raise IncompatibleModel("parameter tensor count mismatch")
        for (_, _, arr), new in zip(own, tensors):
            if arr.shape != new.shape:
                raise IncompatibleModel(
                    f"parameter shape mismatch: {arr.shape} vs {new.shape}"
                )
            arr[...] = new

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        """Probabilities for raw (un-normalized) selected feature rows."""
        batch = self._check_batch(x)
        if self.norm_mean is not None:
            batch = (batch - self.norm_mean) / self.norm_std
        return self.forward_batch(batch)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _cross_entropy(logits: np.ndarray, target_dist: np.ndarray) -> np.ndarray:
    return -(target_dist[None, :] * _log_softmax(logits)).sum(axis=-1)


def _target_distribution(target) -> np.ndarray:
    if np.isscalar(target) or getattr(target, "ndim", 1) == 0:
        dist = np.zeros(2)
        dist[int(target)] = 1.0
        return dist
    dist = np.asarray(target, dtype=np.float64)
    if dist.shape != (2,):
        raise ShapeError(f"target must be a class index or 2-vector, got {dist.shape}")
    return dist


# --- Adam --------------------------------------------------------------------


class Adam:
    def __init__(
        self,
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m: np.ndarray | None = None
        self._v: np.ndarray | None = None
        self._flat_grad: np.ndarray | None = None
        self._scratch: np.ndarray | None = None

    def step(self, model: CnnModel, grads: list[dict | None]) -> None:
        params = model.flat_parameters
        if self._m is None:
            self._m = np.zeros_like(params)
            self._v = np.zeros_like(params)
            self._flat_grad = np.empty_like(params)
            self._scratch = np.empty_like(params)
        g, m, v, scratch = self._flat_grad, self._m, self._v, self._scratch

        offset = 0
        for index, name, arr in model.parameter_tensors():
            g[offset : offset + arr.size] = grads[index][name].ravel()
            offset += arr.size
        if self.weight_decay:
            g += self.weight_decay * params

        self.step_count += 1
        t = self.step_count
        # Moment updates and the parameter step all run in place.
        m *= self.beta1
        np.multiply(g, 1.0 - self.beta1, out=scratch)
        m += scratch
        v *= self.beta2
        np.multiply(g, g, out=scratch)
        scratch *= 1.0 - self.beta2
        v += scratch
        np.divide(v, 1.0 - self.beta2**t, out=scratch)
        np.sqrt(scratch, out=scratch)
        scratch += self.eps
        np.divide(m, scratch, out=scratch)
        scratch *= self.lr / (1.0 - self.beta1**t)
        params -= scratch


# --- dataset plumbing ---------------------------------------------------------


def subject_split(
    labels_by_subject: dict[str, str], train_fraction: float, seed: int
) -> dict[str, str]:
    """Deterministic stratified subject assignment to 'train' or 'val'."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    assignment: dict[str, str] = {}
    for label in sorted(set(labels_by_subject.values())):
        subjects = sorted(s for s, l in labels_by_subject.items() if l == label)
        order = rng.permutation(len(subjects))
        n_train = int(round(train_fraction * len(subjects)))
        n_train = min(max(n_train, 1), len(subjects))
        for rank, idx in enumerate(order):
            assignment[subjects[idx]] = "train" if rank < n_train else "val"
    return assignment


def row_split_mask(n: int, train_fraction: float, seed: int) -> np.ndarray:
    """Seeded row-level 70/30 mask (the epoch-split compatibility mode)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 17]))
    order = rng.permutation(n)
    mask = np.zeros(n, dtype=bool)
    mask[order[: int(round(train_fraction * n))]] = True
    return mask


def _dataset_arrays(vectors: list[FeatureVector], feature_names: list[str]):
    ordered = sorted(vectors, key=lambda v: (v.subject_id, v.epoch_index))
    x = np.array(
        [[v.values[name] for name in feature_names] for v in ordered], dtype=np.float64
    )
    y = np.array([CLASS_NAMES.index(v.label) for v in ordered], dtype=np.int64)
    subjects = [v.subject_id for v in ordered]
    return x, y, subjects


def train(
    vectors: list[FeatureVector],
    feature_names: list[str],
    cfg: TrainConfig | None = None,
) -> tuple[CnnModel, list[dict]]:
    """Fit the classifier on labelled feature vectors.

    Subjects are split 70/30 (stratified per class, seeded); features are
    z-scored with statistics of the training split and the transform is
    stored on the model so inference takes raw feature rows. One Adam
    update per sample (batch size 1), early stopping on validation loss,
    best-epoch weights restored.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    labels = {v.label for v in vectors}
    if labels != set(CLASS_NAMES):
        raise DegenerateDataset(
            f"need every row labelled with both of {CLASS_NAMES}, got {labels}"
        )

    x, y, subjects = _dataset_arrays(vectors, feature_names)

    if cfg.split_by_subject:
        assignment = subject_split(
            {s: CLASS_NAMES[c] for s, c in zip(subjects, y)}, cfg.split, cfg.seed
        )
        in_train = np.array([assignment[s] == "train" for s in subjects])
    else:
        in_train = row_split_mask(len(x), cfg.split, cfg.seed)

    x_train, y_train = x[in_train], y[in_train]
    x_val, y_val = x[~in_train], y[~in_train]
    if len(np.unique(y_train)) < 2:
        raise DegenerateDataset("training split lost one of the classes")

    mean = x_train.mean(axis=0)
    std = x_train.std(axis=0)
    std[std == 0.0] = 1.0
    x_train = (x_train - mean) / std
    x_val = (x_val - mean) / std if len(x_val) else x_val

    width = len(feature_names)
    model = (
        CnnModel(width, seed=cfg.seed, feature_names=tuple(feature_names))
        if width == STANDARD_INPUT_WIDTH
        else CnnModel.for_width(width, seed=cfg.seed, feature_names=tuple(feature_names))
    )
    model.norm_mean = mean
    model.norm_std = std

    optimizer = Adam(cfg.learning_rate, weight_decay=cfg.weight_decay)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))

    history: list[dict] = []
    best_val = np.inf
    best_params: list[np.ndarray] | None = None
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        for i in shuffle_rng.permutation(len(x_train)):
            grads, _ = model.backward(x_train[i], int(y_train[i]))
            optimizer.step(model, grads)

        train_loss, train_acc = _evaluate(model, x_train, y_train)
        val_loss, val_acc = _evaluate(model, x_val, y_val)
        history.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "train_acc": train_acc,
                "val_loss": val_loss,
                "val_acc": val_acc,
            }
        )
        if len(x_val):
            if val_loss < best_val - 1e-12:
                best_val = val_loss
                best_params = model.copy_parameters()
                stale = 0
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    break
    if best_params is not None:
        model.set_parameters(best_params)
    return model, history


def _evaluate(model: CnnModel, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    if len(x) == 0:
        return float("nan"), float("nan")
    logits = model.logits(x)
    onehot = np.zeros((len(y), 2))
    onehot[np.arange(len(y)), y] = 1.0
    losses = -(onehot * _log_softmax(logits)).sum(axis=1)
    predicted = np.argmax(logits, axis=1)
    return float(losses.mean()), float((predicted == y).mean())


def predict_subject(
    model: CnnModel, subject_rows: np.ndarray
) -> tuple[str, float]:
    """Aggregate per-epoch probabilities of one subject into a label.

    Probabilities are averaged; the insomnia label needs a margin over
    0.5 of at least 1e-12, so an exact tie resolves to healthy.
    """
    rows = np.atleast_2d(np.asarray(subject_rows, dtype=np.float64))
    if rows.size == 0:
        raise NoData("subject has no kept epochs")
    mean = model.predict_proba(rows).mean(axis=0)
    delta = mean[INSOMNIA] - mean[HEALTHY]
    label = CLASS_NAMES[INSOMNIA] if delta >= 1e-12 else CLASS_NAMES[HEALTHY]
    return label, float(mean[INSOMNIA])


# --- model file --------------------------------------------------------------

_MAGIC = b"EEG1DCNN"
_FORMAT_VERSION = 1


def _descriptor(model: CnnModel) -> bytes:
    plan = ",".join(
        "conv%dx%d" % entry[1:] if entry[0] == "conv"
        else "pool%d" % entry[1] if entry[0] == "pool"
        else "dense%d" % entry[1] if entry[0] == "dense"
        else "flatten"
        for entry in LAYER_PLAN
    )
    names = ",".join(model.feature_names) if model.feature_names else ""
    return f"in={model.input_width};plan={plan};features={names}".encode()


def save_model(model: CnnModel, path) -> None:
    """Serialize parameters to the little-endian binary model format.

    Layout: magic, format version, length-prefixed plan descriptor with a
    CRC32 checksum (covers input width and feature names), then every
    parameter tensor in declaration order followed by the normalization
    mean/std vectors, each as ndim, dims, float64 data.
    """
    tensors = [arr for _, _, arr in model.parameter_tensors()]
    tensors.append(model.norm_mean if model.norm_mean is not None else np.empty(0))
    tensors.append(model.norm_std if model.norm_std is not None else np.empty(0))
    desc = _descriptor(model)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _FORMAT_VERSION))
        f.write(struct.pack("<I", len(desc)))
        f.write(desc)
        f.write(struct.pack("<I", zlib.crc32(desc)))
        f.write(struct.pack("<I", len(tensors)))
        for arr in tensors:
            arr = np.ascontiguousarray(arr, dtype="<f8")
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_model(path, expected_feature_names: list[str] | None = None) -> CnnModel:
    """Load a model file; any structural mismatch raises IncompatibleModel."""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise IncompatibleModel(f"cannot read model file: {exc}") from exc

    view = memoryview(data)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise IncompatibleModel("model file is truncated")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(8)) != _MAGIC:
        raise IncompatibleModel("bad magic; not a model file")
    (version,) = struct.unpack("<I", take(4))
    if version != _FORMAT_VERSION:
        raise IncompatibleModel(f"unsupported model format version {version}")
    (desc_len,) = struct.unpack("<I", take(4))
    desc = bytes(take(desc_len))
    (crc,) = struct.unpack("<I", take(4))
    if zlib.crc32(desc) != crc:
        raise IncompatibleModel("plan descriptor checksum mismatch")

    fields = dict(part.split("=", 1) for part in desc.decode().split(";"))
    input_width = int(fields["in"])
    names = tuple(n for n in fields.get("features", "").split(",") if n)
    if expected_feature_names is not None and list(names) != list(expected_feature_names):
        raise IncompatibleModel(
            f"model was trained on {len(names)} features, "
            f"caller expects {len(expected_feature_names)}"
        )

    model = CnnModel.for_width(input_width, feature_names=names or None)
    (n_tensors,) = struct.unpack("<I", take(4))
    tensors = []
    for _ in range(n_tensors):
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim)) if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        if ndim == 1 and shape[0] == 0:
            count = 0
        arr = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape)
        tensors.append(arr.astype(np.float64))
    if pos != len(view):
        raise IncompatibleModel("trailing bytes after model payload")

    expected = len(model.parameter_tensors()) + 2
    if len(tensors) != expected:
        raise IncompatibleModel(
            f"model file holds {len(tensors)} tensors, plan needs {expected}"
        )
    model.set_parameters(tensors[:-2])
    model.norm_mean = tensors[-2] if tensors[-2].size else None
    model.norm_std = tensors[-1] if tensors[-1].size else None
    return model
