"""Patient-specific implicit representation of a tracked sweep.

A sine-activated MLP with positional encoding maps normalized world
coordinates to an intensity value and per-class logits. It is trained
slice-by-slice: every batch is the (subsampled) voxel set of one frame,
with the semantic term masked out on frames the slice filter rejected.
The gradient engine is the in-repo tape in autodiff.py.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from .errors import DataError, NonFiniteError, TrainingDivergedError, UsageError
from .geometry import calibration_matrix, pixels_to_world
from .slicefilter import equivalent_radius, gate_slices, largest_connected_component

_STREAM_SUBSAMPLE = 11
_STREAM_EPOCH = 13
_STREAM_INIT = 17

CHECKPOINT_MAGIC = b"SWINRCK1"
CHECKPOINT_VERSION = 1

DEFAULT_ENCODING_LENGTH = 10
DEFAULT_HIDDEN = (256, 256, 256, 256, 256, 256)
DEFAULT_OMEGA0 = 30.0
N_CLASSES = 2

# fixed forward chunk so GEMM shapes (and therefore bitwise results) do
# not depend on how many points a caller evaluates at once
_EVAL_CHUNK = 8192


def positional_encoding(points: np.ndarray, length: int) -> np.ndarray:
    """(N,3) in [-1,1] -> (N, 6*length): sin/cos of doubling frequencies.

    Per component p the block is sin(2^l pi p), cos(2^l pi p) for
    l = 0..length-1; blocks concatenated in x, y, z order.
    """
    points = np.atleast_2d(points)
    n = points.shape[0]
    out = np.empty((n, 6 * length), dtype=points.dtype)
    col = 0
    for comp in range(3):
        p = points[:, comp]
        for level in range(length):
            arg = p * points.dtype.type(2.0**level * np.pi)
            out[:, col] = np.sin(arg)
            out[:, col + 1] = np.cos(arg)
            col += 2
    return out


def normalizer_from_bbox(lo, hi) -> np.ndarray:
    """(3,4) affine mapping the box [lo, hi] onto [-1, 1]^3."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if np.any(hi <= lo):
        raise ValueError("bounding box must have positive extent on every axis")
    half = (hi - lo) / 2.0
    center = (lo + hi) / 2.0
    m = np.zeros((3, 4))
    m[:, :3] = np.diag(1.0 / half)
    m[:, 3] = -center / half
    return m


@dataclass
class InrModel:
    encoding_length: int
    use_pe: bool
    omega0: float
    n_classes: int
    normalizer: np.ndarray
    hidden: list[tuple[ad.Tensor, ad.Tensor]]
    intensity_head: tuple[ad.Tensor, ad.Tensor]
    semantic_head: tuple[ad.Tensor, ad.Tensor]

    @property
    def input_dim(self) -> int:
        return 6 * self.encoding_length if self.use_pe else 3

    @property
    def dtype(self):
        return self.hidden[0][0].dtype

    def parameters(self) -> list[ad.Tensor]:
        params = []
        for w, b in self.hidden:
            params.extend([w, b])
        params.extend(self.intensity_head)
        params.extend(self.semantic_head)
        return params

    def normalize(self, points_mm) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points_mm, dtype=np.float64))
        return p @ self.normalizer[:, :3].T + self.normalizer[:, 3]

    def encode(self, points_mm) -> np.ndarray:
        norm = self.normalize(points_mm).astype(self.dtype)
        return positional_encoding(norm, self.encoding_length) if self.use_pe else norm


def init_model(
    seed: int,
    normalizer: np.ndarray,
    encoding_length: int = DEFAULT_ENCODING_LENGTH,
    hidden_sizes=DEFAULT_HIDDEN,
    n_classes: int = N_CLASSES,
    omega0: float = DEFAULT_OMEGA0,
    use_pe: bool = True,
    dtype=np.float64,
) -> InrModel:
    """Sine-network initialization.

    First layer uniform in [-1/n, 1/n] (scaled by omega0 in the forward
    pass); deeper layers uniform in [-sqrt(6/n), sqrt(6/n)] with the
    frequency folded in; biases uniform in [-1/sqrt(n), 1/sqrt(n)].
    """
    rng = np.random.default_rng([seed, _STREAM_INIT])
    dtype = np.dtype(dtype)
    in_dim = 6 * encoding_length if use_pe else 3

    def layer(fan_in, fan_out, first):
        bound = 1.0 / fan_in if first else np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-1.0, 1.0, size=fan_out) / np.sqrt(fan_in)
        return (
            ad.parameter(w.astype(dtype), f"w{fan_in}x{fan_out}"),
            ad.parameter(b.astype(dtype), f"b{fan_out}"),
        )

    hidden = []
    prev = in_dim
    for i, width in enumerate(hidden_sizes):
        hidden.append(layer(prev, width, first=(i == 0)))
        prev = width
    intensity_head = layer(prev, 1, first=False)
    semantic_head = layer(prev, n_classes, first=False)
    normalizer = np.asarray(normalizer, dtype=np.float64)
    if normalizer.shape != (3, 4):
        raise ValueError("normalizer must be a (3,4) affine map")
    return InrModel(
        encoding_length=encoding_length,
        use_pe=use_pe,
        omega0=float(omega0),
        n_classes=n_classes,
        normalizer=normalizer,
        hidden=hidden,
        intensity_head=intensity_head,
        semantic_head=semantic_head,
    )


def forward_tape(model: InrModel, encoded: np.ndarray) -> tuple[ad.Tensor, ad.Tensor]:
    """Differentiable forward pass: (intensity (B,1), logits (B,M))."""
    h = ad.Tensor(np.asarray(encoded, dtype=model.dtype))
    for i, (w, b) in enumerate(model.hidden):
        z = ad.add_bias(ad.matmul(h, w), b)
        if i == 0:
            z = ad.scale(z, model.omega0)
        h = ad.sin(z)
    wi, bi = model.intensity_head
    intensity = ad.sigmoid(ad.add_bias(ad.matmul(h, wi), bi))
    ws, bs = model.semantic_head
    logits = ad.add_bias(ad.matmul(h, ws), bs)
    return intensity, logits


def forward_arrays(model: InrModel, encoded: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tape-free forward pass; must stay bitwise equal to forward_tape."""
    h = np.asarray(encoded, dtype=model.dtype)
    for i, (w, b) in enumerate(model.hidden):
        z = h @ w.data + b.data
        if i == 0:
            z = z * model.dtype.type(model.omega0)
        h = np.sin(z)
    wi, bi = model.intensity_head
    intensity = expit(h @ wi.data + bi.data)
    ws, bs = model.semantic_head
    logits = h @ ws.data + bs.data
    return intensity, logits


def _nonfinite_layer_name(model: InrModel, encoded: np.ndarray) -> str:
    """Replay the forward pass and name the first non-finite output."""
    h = np.asarray(encoded, dtype=model.dtype)
    if not np.all(np.isfinite(h)):
        return "input encoding"
    for i, (w, b) in enumerate(model.hidden):
        z = h @ w.data + b.data
        if i == 0:
            z = z * model.dtype.type(model.omega0)
        h = np.sin(z)
        if not np.all(np.isfinite(h)):
            return f"hidden layer {i}"
    wi, bi = model.intensity_head
    if not np.all(np.isfinite(expit(h @ wi.data + bi.data))):
        return "intensity head"
    ws, bs = model.semantic_head
    if not np.all(np.isfinite(h @ ws.data + bs.data)):
        return "semantic head"
    return "loss reduction"


@dataclass(frozen=True)
class TrainingBatch:
    """All voxels of one slice, ready to feed the model.

    semantic_valid is per voxel; the slice filter sets it uniformly for
    the whole slice, but the loss masks row by row.
    """

    frame_index: int
    encoded: np.ndarray
    intensities: np.ndarray
    labels: np.ndarray
    semantic_valid: np.ndarray

    def __post_init__(self):
        n = self.encoded.shape[0]
        if not (len(self.intensities) == len(self.labels) == len(self.semantic_valid) == n):
            raise ValueError("batch arrays must have one row per voxel")

    def __len__(self):
        return self.encoded.shape[0]


@dataclass(frozen=True)
class TrainingSet:
    batches: tuple[TrainingBatch, ...]
    normalizer: np.ndarray
    bbox: np.ndarray
    frame_indices: tuple[int, ...]
    verdicts: tuple
    encoding_length: int = DEFAULT_ENCODING_LENGTH
    use_pe: bool = True

    def __post_init__(self):
        if not self.batches:
            raise DataError("training set has no slices")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    max_voxels_per_slice: int = 8192
    dtype: str = "float64"
    divergence_factor: float = 1e3

    def __post_init__(self):
        if self.epochs < 1 or self.learning_rate <= 0:
            raise ValueError("epochs and learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("invalid Adam hyperparameters")
        if self.max_voxels_per_slice < 1:
            raise ValueError("max_voxels_per_slice must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")


def build_training_set(
    bundle,
    config: TrainConfig,
    selected_indices=None,
    frame_stride: int = 1,
    filter_window: int = 10,
    filter_rel_tolerance: float = 0.2,
    apply_filter: bool = True,
    bbox_margin_mm: float = 15.0,
    encoding_length: int = DEFAULT_ENCODING_LENGTH,
    use_pe: bool = True,
) -> TrainingSet:
    """Turn sweep frames into per-slice training batches.

    Frames are optionally restricted to gated indices, then strided.
    Labels are cleaned to their largest component; the radius gate
    decides semantic validity per slice. Every batch carries the full
    pixel set of its slice; any max_voxels_per_slice cap is applied by
    train(), which redraws the subset each epoch.
    """
    if frame_stride < 1:
        raise ValueError("frame_stride must be >= 1")
    frames = bundle.frames
    if selected_indices is None:
        chosen = list(frames)
    else:
        chosen = [frames[int(i)] for i in selected_indices]
    chosen = chosen[::frame_stride]
    if not chosen:
        raise DataError("no frames left after gating and striding")

    g = bundle.probe
    cal = calibration_matrix(g)
    spacing = g.pixel_spacing_mm
    dtype = np.dtype(config.dtype)

    cleaned = [largest_connected_component(f.label) for f in chosen]
    radii = [equivalent_radius(lab, spacing) for lab in cleaned]
    if apply_filter:
        verdicts = gate_slices(radii, window=filter_window, rel_tolerance=filter_rel_tolerance)
    else:
        verdicts = None

    h, w = chosen[0].label.shape
    corners = np.array(
        [[0.0, 0.0], [w - 1.0, 0.0], [0.0, h - 1.0], [w - 1.0, h - 1.0]]
    )
    all_corners = np.concatenate(
        [pixels_to_world(f.pose, cal, corners) for f in chosen]
    )
    lo = all_corners.min(axis=0) - bbox_margin_mm
    hi = all_corners.max(axis=0) + bbox_margin_mm
    bbox = np.array([lo, hi])
    normalizer = normalizer_from_bbox(lo, hi)

    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    uv_all = np.stack([uu.ravel(), vv.ravel()], axis=1)

    scale = normalizer[:, :3].T
    offset = normalizer[:, 3]
    batches = []
    for pos, frame in enumerate(chosen):
        world = pixels_to_world(frame.pose, cal, uv_all)
        norm = (world @ scale + offset).astype(dtype)
        encoded = positional_encoding(norm, encoding_length) if use_pe else norm
        slice_ok = verdicts[pos].accepted if verdicts is not None else True
        batches.append(
            TrainingBatch(
                frame_index=frame.index,
                encoded=encoded,
                intensities=frame.intensity.ravel().astype(dtype),
                labels=cleaned[pos].ravel().astype(np.intp),
                semantic_valid=np.full(uv_all.shape[0], slice_ok, dtype=bool),
            )
        )
    return TrainingSet(
        batches=tuple(batches),
        normalizer=normalizer,
        bbox=bbox,
        frame_indices=tuple(f.index for f in chosen),
        verdicts=tuple(verdicts) if verdicts is not None else (),
        encoding_length=encoding_length,
        use_pe=use_pe,
    )


def subsample_batch(batch: TrainingBatch, config: TrainConfig, epoch: int) -> TrainingBatch:
    """Per-epoch uniform row subset, capped at max_voxels_per_slice.

    The draw is redrawn every epoch (seeded by config seed, frame and
    epoch) so successive passes cover different pixels; a frozen subset
    would leave most of each slice unconstrained, and the network is
    free to hallucinate structure between points it never saw.
    """
    if len(batch) <= config.max_voxels_per_slice:
        return batch
    rng = np.random.default_rng(
        [config.seed, _STREAM_SUBSAMPLE, batch.frame_index, epoch]
    )
    idx = rng.choice(len(batch), size=config.max_voxels_per_slice, replace=False)
    idx.sort()
    return TrainingBatch(
        frame_index=batch.frame_index,
        encoded=batch.encoded[idx],
        intensities=batch.intensities[idx],
        labels=batch.labels[idx],
        semantic_valid=batch.semantic_valid[idx],
    )


def batch_loss(model: InrModel, batch: TrainingBatch) -> ad.Tensor:
    """Summed intensity MSE plus masked semantic CE, over batch size.

    Both terms follow the summation form; the division by the voxel
    count only keeps step sizes comparable across batch sizes.
    """
    n = len(batch)
    if n == 0:
        raise DataError("empty training batch")
    intensity, logits = forward_tape(model, batch.encoded)
    mse = ad.sum_squared_error(intensity, batch.intensities.reshape(-1, 1))
    valid_rows = np.flatnonzero(batch.semantic_valid).astype(np.intp)
    ce = ad.masked_softmax_cross_entropy(logits, valid_rows, batch.labels[valid_rows])
    return ad.scale(ad.add(mse, ce), 1.0 / n)


def train(
    dataset: TrainingSet, config: TrainConfig, model: InrModel | None = None
) -> tuple[InrModel, np.ndarray]:
    """Adam over epochs x slices; returns the model and per-epoch mean loss."""
    if model is None:
        model = init_model(
            seed=config.seed,
            normalizer=dataset.normalizer,
            encoding_length=dataset.encoding_length,
            use_pe=dataset.use_pe,
            dtype=np.dtype(config.dtype),
        )
    opt = ad.Adam(
        model.parameters(),
        lr=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps,
    )
    curve = np.zeros(config.epochs)
    initial_loss = None
    n_slices = len(dataset.batches)
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, _STREAM_EPOCH, epoch]).permutation(n_slices)
        total = 0.0
        for slot in order:
            batch = subsample_batch(dataset.batches[slot], config, epoch)
            opt.zero_grad()
            loss = batch_loss(model, batch)
            value = float(loss.data)
            if not np.isfinite(value):
                layer = _nonfinite_layer_name(model, batch.encoded)
                raise NonFiniteError(
                    f"non-finite loss at epoch {epoch}, frame {batch.frame_index}; "
                    f"first bad output: {layer}"
                )
            if initial_loss is None:
                initial_loss = max(value, 1e-12)
            if value > config.divergence_factor * initial_loss:
                raise TrainingDivergedError(
                    f"loss {value:.3e} exceeds {config.divergence_factor:.0e} x "
                    f"initial {initial_loss:.3e} at epoch {epoch}"
                )
            ad.backward(loss)
            opt.step()
            total += value
        curve[epoch] = total / n_slices
    return model, curve


@dataclass(frozen=True)
class PredictedGrid:
    intensity: np.ndarray
    class_probs: np.ndarray
    origin: np.ndarray
    spacing_mm: float

    def world_axes(self):
        return tuple(
            self.origin[a] + self.spacing_mm * np.arange(self.intensity.shape[a])
            for a in range(3)
        )


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict_grid(
    model: InrModel,
    bbox,
    resolution_mm: float,
    max_output_mb: float = 2048.0,
) -> PredictedGrid:
    """Evaluate the model on a regular grid spanning bbox.

    Points are processed in fixed-size zero-padded chunks so the result
    is independent of grid shape: a point at the same world coordinate
    always maps to bitwise-identical output.
    """
    if resolution_mm <= 0:
        raise ValueError("resolution must be positive")
    bbox = np.asarray(bbox, dtype=np.float64)
    lo, hi = bbox[0], bbox[1]
    dims = np.floor((hi - lo) / resolution_mm + 1e-9).astype(int) + 1
    if np.any(dims < 1):
        raise ValueError("bbox must have positive extent")
    n_total = int(np.prod(dims))
    out_bytes = n_total * (1 + model.n_classes) * 8
    if out_bytes > max_output_mb * 2**20:
        raise UsageError(
            f"predicted grid needs {out_bytes / 2**20:.0f} MB, over the "
            f"{max_output_mb:.0f} MB budget; coarsen resolution_mm"
        )
    axes = [lo[a] + resolution_mm * np.arange(dims[a]) for a in range(3)]
    xx, yy, zz = np.meshgrid(*axes, indexing="ij")
    points = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)

    intensity = np.empty(n_total)
    probs = np.empty((n_total, model.n_classes))
    for start in range(0, n_total, _EVAL_CHUNK):
        chunk = points[start : start + _EVAL_CHUNK]
        pad = _EVAL_CHUNK - chunk.shape[0]
        if pad:
            chunk = np.vstack([chunk, np.zeros((pad, 3))])
        inten, logits = forward_arrays(model, model.encode(chunk))
        take = _EVAL_CHUNK - pad
        intensity[start : start + take] = inten[:take, 0].astype(np.float64)
        probs[start : start + take] = _softmax(logits[:take].astype(np.float64))
    return PredictedGrid(
        intensity=intensity.reshape(dims),
        class_probs=probs.reshape(*dims, model.n_classes),
        origin=lo.copy(),
        spacing_mm=float(resolution_mm),
    )


def save_checkpoint(model: InrModel, path) -> None:
    """Versioned binary checkpoint; weights stored row-major float64 LE."""
    hidden_sizes = [w.data.shape[1] for w, _ in model.hidden]
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(
            struct.pack(
                "<IIIII",
                CHECKPOINT_VERSION,
                model.encoding_length,
                1 if model.use_pe else 0,
                len(hidden_sizes),
                model.n_classes,
            )
        )
        fh.write(struct.pack(f"<{len(hidden_sizes)}I", *hidden_sizes))
        fh.write(struct.pack("<d", model.omega0))
        fh.write(model.normalizer.astype("<f8").tobytes())
        for w, b in [*model.hidden, model.intensity_head, model.semantic_head]:
            fh.write(np.ascontiguousarray(w.data, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b.data, dtype="<f8").tobytes())


def load_checkpoint(path, dtype=np.float64) -> InrModel:
    dtype = np.dtype(dtype)
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a model checkpoint (bad magic)")
    off = 8
    version, enc_len, use_pe, n_hidden, n_classes = struct.unpack_from("<IIIII", blob, off)
    off += 20
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    hidden_sizes = struct.unpack_from(f"<{n_hidden}I", blob, off)
    off += 4 * n_hidden
    (omega0,) = struct.unpack_from("<d", blob, off)
    off += 8
    normalizer = np.frombuffer(blob, "<f8", count=12, offset=off).reshape(3, 4).copy()
    off += 96

    def read_layer(fan_in, fan_out, name):
        nonlocal off
        need = 8 * (fan_in * fan_out + fan_out)
        if off + need > len(blob):
            raise DataError(f"{path}: truncated checkpoint")
        w = np.frombuffer(blob, "<f8", count=fan_in * fan_out, offset=off)
        b = np.frombuffer(blob, "<f8", count=fan_out, offset=off + 8 * fan_in * fan_out)
        off += need
        return (
            ad.parameter(w.reshape(fan_in, fan_out).astype(dtype), f"w_{name}"),
            ad.parameter(b.astype(dtype), f"b_{name}"),
        )

    in_dim = 6 * enc_len if use_pe else 3
    hidden = []
    prev = in_dim
    for i, width in enumerate(hidden_sizes):
        hidden.append(read_layer(prev, width, f"h{i}"))
        prev = width
    intensity_head = read_layer(prev, 1, "intensity")
    semantic_head = read_layer(prev, n_classes, "semantic")
    if off != len(blob):
        raise DataError(f"{path}: checkpoint has {len(blob) - off} trailing bytes")
    return InrModel(
        encoding_length=enc_len,
        use_pe=bool(use_pe),
        omega0=omega0,
        n_classes=n_classes,
        normalizer=normalizer,
        hidden=hidden,
        intensity_head=intensity_head,
        semantic_head=semantic_head,
    )


def save_loss_curve(path, curve) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,mean_loss\n")
        for epoch, value in enumerate(np.asarray(curve)):
            fh.write(f"{epoch},{float(value)!r}\n")


def load_loss_curve(path) -> np.ndarray:
    values = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "epoch,mean_loss":
            raise DataError(f"{path}: not a loss-curve file")
        for line in fh:
            _, v = line.strip().split(",")
            values.append(float(v))
    return np.array(values)
