"""
Exact forward and backward passes for the per-vertex MLP

Blocks of {linear -> tanh -> batchnorm} act on every vertex with shared weights,
a mean over the vertex axis pools each subject to one vector, and a
linear -> tanh -> linear head regresses the targets. All arithmetic is float64.
"""

import itertools
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np

from corticast.core.errors import ContractViolationError, FormatError, InvalidArgumentError
from corticast.core.files import write_bytes_atomic
from corticast.schemas.dataset import StandardizationStats
from corticast.schemas.model import Activation, Mode, ModelConfig

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"MLPC"
CHECKPOINT_VERSION = 1

_model_ids = itertools.count(1)


# ----------------------------------------------------------------------
# Layers


def linear_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> Tuple[np.ndarray, tuple]:
    """y = xW + b over the last axis of x"""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0] or bias.shape != (weight.shape[1],):
        raise InvalidArgumentError(
            f"linear shapes disagree: x {x.shape}, weight {weight.shape}, bias {bias.shape}"
        )
    return x @ weight + bias, (x, weight)


def linear_backward(cache: tuple, upstream: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (input grad, weight grad, bias grad)"""
    x, weight = cache
    flat_x = x.reshape(-1, x.shape[-1])
    flat_up = upstream.reshape(-1, upstream.shape[-1])
    return upstream @ weight.T, flat_x.T @ flat_up, flat_up.sum(axis=0)


def tanh_forward(x: np.ndarray) -> Tuple[np.ndarray, tuple]:
    y = np.tanh(x)
    return y, (x, y)


def tanh_backward(cache: tuple, upstream: np.ndarray) -> np.ndarray:
    _, y = cache
    return upstream * (1.0 - y * y)


def identity_forward(x: np.ndarray) -> Tuple[np.ndarray, tuple]:
    return x, (x, x)


def identity_backward(cache: tuple, upstream: np.ndarray) -> np.ndarray:
    return upstream


class BatchNormCache(NamedTuple):
    mode: Mode
    x_hat: np.ndarray
    std: np.ndarray
    gamma: np.ndarray
    count: int


def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    mode: Mode,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    epsilon: float = 1e-5,
    momentum: float = 0.1,
    update_running_stats: bool = True,
) -> Tuple[np.ndarray, BatchNormCache]:
    """Per-channel normalization over the batch and vertex axes of an N x V x C tensor

    Train mode uses the biased batch variance and, unless told otherwise, moves the
    running statistics in place. Eval mode is the affine map given by the running
    statistics and touches nothing.
    """
    channels = x.shape[-1]
    flat = x.reshape(-1, channels)
    count = flat.shape[0]
    if mode == Mode.TRAIN:
        if count < 2:
            raise InvalidArgumentError(f"train-mode batchnorm needs at least 2 values per channel, got {count}")
        mean = flat.mean(axis=0)
        var = ((flat - mean) ** 2).mean(axis=0)
        if update_running_stats:
            running_mean *= (1.0 - momentum)
            running_mean += momentum * mean
            running_var *= (1.0 - momentum)
            running_var += momentum * var
    else:
        mean, var = running_mean, running_var
    std = np.sqrt(var + epsilon)
    x_hat = (x - mean) / std
    return gamma * x_hat + beta, BatchNormCache(mode=mode, x_hat=x_hat, std=std, gamma=gamma.copy(), count=count)


def batchnorm_backward(cache: BatchNormCache, upstream: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (input grad, gamma grad, beta grad); train mode includes the batch-statistic terms"""
    channels = upstream.shape[-1]
    flat_up = upstream.reshape(-1, channels)
    flat_hat = cache.x_hat.reshape(-1, channels)
    grad_beta = flat_up.sum(axis=0)
    grad_gamma = (flat_up * flat_hat).sum(axis=0)
    if cache.mode == Mode.EVAL:
        return upstream * (cache.gamma / cache.std), grad_gamma, grad_beta
    m = cache.count
    grad_x = (cache.gamma / (m * cache.std)) * (m * upstream - grad_beta - cache.x_hat * grad_gamma)
    return grad_x, grad_gamma, grad_beta


def meanpool_forward(x: np.ndarray) -> Tuple[np.ndarray, int]:
    """Mean over the vertex axis of N x V x C"""
    n_vertices = x.shape[1]
    if n_vertices < 1:
        raise InvalidArgumentError("mean pooling needs at least one vertex")
    return x.sum(axis=1) / n_vertices, n_vertices


def meanpool_backward(cache: int, upstream: np.ndarray) -> np.ndarray:
    n_vertices = cache
    share = upstream / n_vertices
    return np.repeat(share[:, None, :], n_vertices, axis=1)


_ACTIVATIONS = {
    Activation.TANH: (tanh_forward, tanh_backward),
    Activation.IDENTITY: (identity_forward, identity_backward),
}


# ----------------------------------------------------------------------
# Model


class MlpModel:
    """Parameters, running statistics and mode of the per-vertex MLP"""

    def __init__(self, config: ModelConfig, arrays: Dict[str, np.ndarray], mode: Mode = Mode.EVAL):
        self.config = config
        self.arrays = {name: np.array(arrays[name], dtype=np.float64) for name in array_names(config)}
        self.mode = mode
        self.uid = next(_model_ids)
        self.version = 0

    def trainable(self) -> List[Tuple[str, np.ndarray]]:
        return [(name, self.arrays[name]) for name in trainable_names(self.config)]

    def copy(self) -> "MlpModel":
        return MlpModel(self.config, {k: v.copy() for k, v in self.arrays.items()}, self.mode)

    def train(self) -> "MlpModel":
        self.mode = Mode.TRAIN
        return self

    def eval(self) -> "MlpModel":
        self.mode = Mode.EVAL
        return self

    def touch(self) -> None:
        """Mark parameters as changed; caches from earlier passes become stale"""
        self.version += 1

    def __repr__(self) -> str:
        return f"MlpModel({self.config!r}, mode={self.mode.value}, params={param_count(self.config)})"


class ParamGrads:
    """Gradients for every trainable array, plus the input gradient when available"""

    def __init__(self, params: Dict[str, np.ndarray], inputs: Optional[np.ndarray] = None):
        self.params = params
        self.inputs = inputs

    @classmethod
    def zeros_like(cls, model: MlpModel) -> "ParamGrads":
        return cls({name: np.zeros_like(array) for name, array in model.trainable()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]


class ForwardCache:
    """Intermediates of one forward pass, in layer order"""

    def __init__(self, model: MlpModel, mode: Mode):
        self.model_uid = model.uid
        self.version = model.version
        self.mode = mode
        self.layers: List[Tuple[str, str, Any]] = []

    def add(self, kind: str, name: str, cache: Any) -> None:
        self.layers.append((kind, name, cache))


def block_names(index: int) -> List[str]:
    prefix = f"block{index}."
    return [prefix + part for part in ("weight", "bias", "gamma", "beta", "running_mean", "running_var")]


HEAD_NAMES = ["head.weight1", "head.bias1", "head.weight2", "head.bias2"]


def array_names(config: ModelConfig) -> List[str]:
    """Every stored array in checkpoint order"""
    names = []
    for index in range(config.n_blocks):
        names.extend(block_names(index))
    return names + HEAD_NAMES


def trainable_names(config: ModelConfig) -> List[str]:
    return [name for name in array_names(config) if not name.split(".")[1].startswith("running_")]


def array_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    h = config.hidden_units
    shapes: Dict[str, Tuple[int, ...]] = {}
    for index in range(config.n_blocks):
        fan_in = config.in_channels if index == 0 else h
        weight, bias, gamma, beta, running_mean, running_var = block_names(index)
        shapes[weight] = (fan_in, h)
        for name in (bias, gamma, beta, running_mean, running_var):
            shapes[name] = (h,)
    shapes["head.weight1"] = (h, h)
    shapes["head.bias1"] = (h,)
    shapes["head.weight2"] = (h, config.out_units)
    shapes["head.bias2"] = (config.out_units,)
    return shapes


def param_count(config: ModelConfig) -> int:
    """Trainable parameters (weights, biases, gamma, beta) in closed form"""
    i, h, b, o = config.in_channels, config.hidden_units, config.n_blocks, config.out_units
    first_block = i * h + h + 2 * h
    other_blocks = (b - 1) * (h * h + h + 2 * h)
    head = (h * h + h) + (h * o + o)
    return first_block + other_blocks + head


def enumerate_trainable(model: MlpModel) -> List[Tuple[str, np.ndarray]]:
    return model.trainable()


def init_model(config: ModelConfig, seed: int) -> MlpModel:
    """Uniform fan-in initialization; biases and beta 0, gamma 1, running stats (0, 1)"""
    rng = np.random.default_rng(seed)
    shapes = array_shapes(config)
    arrays: Dict[str, np.ndarray] = {}
    for name in array_names(config):
        kind = name.split(".")[1]
        shape = shapes[name]
        if kind.startswith("weight"):
            bound = np.sqrt(1.0 / shape[0])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        elif kind in ("gamma", "running_var"):
            arrays[name] = np.ones(shape)
        else:
            arrays[name] = np.zeros(shape)
    logger.debug(f"Initialized MLP with {param_count(config)} trainable parameters (seed {seed})")
    return MlpModel(config, arrays)


# ----------------------------------------------------------------------
# Passes


def model_forward(
    model: MlpModel,
    inputs: np.ndarray,
    mode: Optional[Mode] = None,
    update_running_stats: bool = True,
) -> Tuple[np.ndarray, ForwardCache]:
    """Predictions (N x out_units) and the cache needed by the reverse pass"""
    mode = model.mode if mode is None else Mode(mode)
    config = model.config
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != config.in_channels:
        raise InvalidArgumentError(
            f"inputs must be N x V x {config.in_channels}, got shape {x.shape}"
        )
    activate, _ = _ACTIVATIONS[config.activation]
    p = model.arrays
    cache = ForwardCache(model, mode)
    h = x
    for index in range(config.n_blocks):
        weight, bias, gamma, beta, running_mean, running_var = block_names(index)
        h, layer = linear_forward(h, p[weight], p[bias])
        cache.add("linear", f"block{index}", layer)
        h, layer = activate(h)
        cache.add("activation", f"block{index}", layer)
        h, layer = batchnorm_forward(
            h, p[gamma], p[beta], mode, p[running_mean], p[running_var],
            config.batchnorm_epsilon, config.batchnorm_momentum, update_running_stats,
        )
        cache.add("batchnorm", f"block{index}", layer)
    h, layer = meanpool_forward(h)
    cache.add("meanpool", "pool", layer)
    h, layer = linear_forward(h, p["head.weight1"], p["head.bias1"])
    cache.add("linear", "head1", layer)
    h, layer = activate(h)
    cache.add("activation", "head", layer)
    h, layer = linear_forward(h, p["head.weight2"], p["head.bias2"])
    cache.add("linear", "head2", layer)
    return h, cache


_LINEAR_PARAMS = {"head1": ("head.weight1", "head.bias1"), "head2": ("head.weight2", "head.bias2")}


def _reverse(model: MlpModel, cache: ForwardCache, upstream: np.ndarray) -> ParamGrads:
    _, deactivate = _ACTIVATIONS[model.config.activation]
    grads: Dict[str, np.ndarray] = {}
    grad = np.asarray(upstream, dtype=np.float64)
    for kind, name, layer in reversed(cache.layers):
        if kind == "linear":
            weight, bias = _LINEAR_PARAMS.get(name, (f"{name}.weight", f"{name}.bias"))
            grad, grads[weight], grads[bias] = linear_backward(layer, grad)
        elif kind == "activation":
            grad = deactivate(layer, grad)
        elif kind == "batchnorm":
            grad, grads[f"{name}.gamma"], grads[f"{name}.beta"] = batchnorm_backward(layer, grad)
        elif kind == "meanpool":
            grad = meanpool_backward(layer, grad)
    ordered = {name: grads[name] for name in trainable_names(model.config)}
    return ParamGrads(ordered, inputs=grad)


def model_backward(model: MlpModel, cache: ForwardCache, prediction_grad: np.ndarray) -> ParamGrads:
    """Exact gradients of sum(prediction_grad * predictions) for every trainable array and the input"""
    if not isinstance(cache, ForwardCache) or not cache.layers:
        raise ContractViolationError("model_backward needs the cache of a forward pass")
    if cache.model_uid != model.uid or cache.version != model.version:
        raise ContractViolationError("stale cache: the model changed since this forward pass")
    if cache.mode != Mode.TRAIN:
        raise ContractViolationError("model_backward expects a train-mode forward cache")
    return _reverse(model, cache, prediction_grad)


def input_gradient(model: MlpModel, inputs: np.ndarray, output_index: int = 0) -> np.ndarray:
    """Eval-mode d f_k / d x for every subject of the batch (subjects are independent in eval mode)"""
    predictions, cache = model_forward(model, inputs, Mode.EVAL)
    if not 0 <= output_index < predictions.shape[1]:
        raise InvalidArgumentError(f"output index {output_index} out of range for {predictions.shape[1]} outputs")
    upstream = np.zeros_like(predictions)
    upstream[:, output_index] = 1.0
    return _reverse(model, cache, upstream).inputs


def predict(model: MlpModel, inputs: np.ndarray) -> np.ndarray:
    predictions, _ = model_forward(model, inputs, Mode.EVAL)
    return predictions


# ----------------------------------------------------------------------
# Checkpoints


class LoadedCheckpoint(NamedTuple):
    model: MlpModel
    config: ModelConfig
    stats: Optional[StandardizationStats]
    channel_names: List[str]
    metadata: Dict[str, Any]


def encode_checkpoint(
    model: MlpModel,
    config: ModelConfig,
    stats: Optional[StandardizationStats],
    channel_names: Optional[List[str]] = None,
    metadata: Optional[Dict[str, Any]] = None,
) -> bytes:
    if config != model.config:
        raise InvalidArgumentError("checkpoint config does not match the model's config")
    names = array_names(config)
    header = {
        "config": config.model_dump(mode="json"),
        "channel_names": list(channel_names or []),
        "stats": stats.model_dump(mode="json") if stats is not None else None,
        "arrays": [{"name": name, "shape": list(model.arrays[name].shape)} for name in names],
        "metadata": metadata or {},
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(model.arrays[name], dtype="<f8").tobytes() for name in names)
    return CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(header_bytes)) + header_bytes + body


def decode_checkpoint(payload: bytes, source: str = "<bytes>") -> LoadedCheckpoint:
    if len(payload) < 12 or payload[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{source}: not a .mlpc checkpoint (bad magic)")
    version, header_length = struct.unpack_from("<II", payload, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {version}")
    if len(payload) < 12 + header_length:
        raise FormatError(f"{source}: truncated header")
    try:
        header = json.loads(payload[12:12 + header_length].decode("utf-8"))
        config = ModelConfig(**header["config"])
        stats = StandardizationStats(**header["stats"]) if header.get("stats") else None
        manifest = header["arrays"]
    except (ValueError, KeyError, TypeError) as e:
        raise FormatError(f"{source}: invalid checkpoint header: {e}")

    expected_shapes = array_shapes(config)
    if [entry["name"] for entry in manifest] != array_names(config):
        raise FormatError(f"{source}: array manifest does not match the model config")
    sizes = [int(np.prod(entry["shape"])) for entry in manifest]
    offset = 12 + header_length
    if len(payload) != offset + 8 * sum(sizes):
        raise FormatError(f"{source}: expected {offset + 8 * sum(sizes)} bytes, found {len(payload)} (truncated or padded)")
    arrays = {}
    for entry, size in zip(manifest, sizes):
        shape = tuple(entry["shape"])
        if shape != expected_shapes[entry["name"]]:
            raise FormatError(f"{source}: array {entry['name']} has shape {shape}, expected {expected_shapes[entry['name']]}")
        arrays[entry["name"]] = np.frombuffer(payload, dtype="<f8", count=size, offset=offset).astype(np.float64).reshape(shape)
        offset += 8 * size
    if any(np.any(arrays[name] <= 0.0) for name in array_names(config) if name.endswith("running_var")):
        raise FormatError(f"{source}: running variance must be positive")
    model = MlpModel(config, arrays, Mode.EVAL)
    return LoadedCheckpoint(model, config, stats, header.get("channel_names", []), header.get("metadata", {}))


def save_checkpoint(
    model: MlpModel,
    config: ModelConfig,
    stats: Optional[StandardizationStats],
    path: Union[str, Path],
    channel_names: Optional[List[str]] = None,
    metadata: Optional[Dict[str, Any]] = None,
) -> None:
    write_bytes_atomic(path, encode_checkpoint(model, config, stats, channel_names, metadata))
    logger.info(f"Saved checkpoint to {path}")


def load_checkpoint(path: Union[str, Path]) -> LoadedCheckpoint:
    try:
        payload = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read checkpoint {path}: {e}")
    return decode_checkpoint(payload, str(path))
