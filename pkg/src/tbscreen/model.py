"""The VGG16 extractor + two Bi-LSTM + softmax classifier.

Parameters live in a flat name -> array dict so that checkpoints, optimizers
and gradient checks can treat them uniformly. Layer objects are thin views
over those arrays.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import layers as L
from .recurrent import BiLstmParams, LstmParams, bilstm, bilstm_backward
from .tensor import ShapeError, flatten, reshape

CLASS_NAMES = ("normal", "tb")


@dataclass(frozen=True)
class Architecture:
    input_size: int = 224
    blocks: Tuple[Tuple[int, ...], ...] = ((64, 64), (128, 128), (256, 256, 256), (512, 512, 512), (512, 512, 512))
    lstm_hidden: Tuple[int, ...] = (256, 128)
    n_classes: int = 2
    name: str = "vgg16-bilstm"

    @property
    def input_shape(self):
        return (self.input_size, self.input_size, 3)

    @property
    def feature_size(self) -> int:
        return self.input_size >> len(self.blocks)

    @property
    def seq_len(self) -> int:
        return self.feature_size ** 2

    @property
    def feature_channels(self) -> int:
        return self.blocks[-1][-1]

    @property
    def flatten_dim(self) -> int:
        return self.seq_len * 2 * self.lstm_hidden[-1]

    def conv_names(self) -> List[str]:
        return [f"block{b + 1}_conv{j + 1}" for b, blk in enumerate(self.blocks) for j in range(len(blk))]

    def bilstm_names(self) -> List[str]:
        return [f"bilstm{n + 1}" for n in range(len(self.lstm_hidden))]


VGG16_BILSTM = Architecture()


def shrunken(width_divisor: int = 16, input_size: int = 64) -> Architecture:
    """Same topology as :data:`VGG16_BILSTM` at reduced width and resolution."""
    blocks = tuple(tuple(max(1, c // width_divisor) for c in blk) for blk in VGG16_BILSTM.blocks)
    hidden = tuple(max(1, h // width_divisor) for h in VGG16_BILSTM.lstm_hidden)
    return Architecture(input_size, blocks, hidden, 2, f"shrunken-{width_divisor}-{input_size}")


ARCHITECTURES = {"vgg16-bilstm": VGG16_BILSTM, "shrunken": shrunken()}


def get_architecture(name: str) -> Architecture:
    if name in ARCHITECTURES:
        return ARCHITECTURES[name]
    if name.startswith("shrunken-"):
        _, div, size = name.split("-")
        return shrunken(int(div), int(size))
    raise ValueError(f"unknown architecture {name!r}")


@dataclass
class ModelParams:
    arch: Architecture
    params: Dict[str, np.ndarray]
    freeze_extractor: bool = False

    def conv(self, name: str) -> L.ConvLayer:
        return L.ConvLayer(self.params[name + ".weights"], self.params[name + ".bias"])

    def lstm(self, name: str) -> BiLstmParams:
        p = self.params
        return BiLstmParams(
            LstmParams(p[name + ".forward.W"], p[name + ".forward.U"], p[name + ".forward.b"]),
            LstmParams(p[name + ".backward.W"], p[name + ".backward.U"], p[name + ".backward.b"]),
        )

    @property
    def dense(self) -> L.DenseLayer:
        return L.DenseLayer(self.params["dense.weights"], self.params["dense.bias"])

    def is_extractor(self, name: str) -> bool:
        return name.startswith("block")

    def trainable_names(self) -> List[str]:
        return [n for n in self.params if not (self.freeze_extractor and self.is_extractor(n))]

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, {k: v.copy() for k, v in self.params.items()}, self.freeze_extractor)

    def count(self, prefix: str = "") -> int:
        return sum(v.size for k, v in self.params.items() if k.startswith(prefix))


def _bilstm_entries(name: str, p: BiLstmParams) -> Dict[str, np.ndarray]:
    out = {}
    for direction, lp in (("forward", p.forward), ("backward", p.backward)):
        out[f"{name}.{direction}.W"] = lp.W
        out[f"{name}.{direction}.U"] = lp.U
        out[f"{name}.{direction}.b"] = lp.b
    return out


def build_model(seed: int = 0, arch: Architecture = VGG16_BILSTM, freeze_extractor: bool = False) -> ModelParams:
    """He-initialized conv/dense weights, uniform LSTM weights, zero biases (forget gate +1)."""
    rng = np.random.default_rng(seed)
    params: Dict[str, np.ndarray] = {}
    c_in = 3
    names = iter(arch.conv_names())
    for blk in arch.blocks:
        for c_out in blk:
            layer = L.he_conv(rng, c_in, c_out)
            name = next(names)
            params[name + ".weights"], params[name + ".bias"] = layer.weights, layer.bias
            c_in = c_out
    d_in = c_in
    for name, hid in zip(arch.bilstm_names(), arch.lstm_hidden):
        bp = BiLstmParams(LstmParams.init(rng, d_in, hid), LstmParams.init(rng, d_in, hid))
        params.update(_bilstm_entries(name, bp))
        d_in = 2 * hid
    dense = L.he_dense(rng, arch.flatten_dim, arch.n_classes)
    params["dense.weights"], params["dense.bias"] = dense.weights, dense.bias
    return ModelParams(arch, params, freeze_extractor)


def zero_model(arch: Architecture = VGG16_BILSTM) -> ModelParams:
    m = build_model(0, arch)
    return ModelParams(arch, {k: np.zeros_like(v) for k, v in m.params.items()})


# -- forward / backward -----------------------------------------------------

def extract_features(m: ModelParams, x: np.ndarray, keep_cache: bool = False):
    """Run the conv blocks. Returns ``(features, trace, cache)``."""
    arch = m.arch
    if x.shape != arch.input_shape:
        raise ShapeError(f"model input must be {arch.input_shape}, got {x.shape}")
    trace = [("Input", "Input layer", x.shape)]
    cache = []
    names = iter(arch.conv_names())
    for b, blk in enumerate(arch.blocks):
        for _ in blk:
            name = next(names)
            pre = L.conv2d_forward(m.conv(name), x)
            if keep_cache:
                cache.append(("conv", name, x, pre))
            x = L.relu(pre)
            trace.append((f"Block {b + 1}", "Convolution", x.shape))
        x, record = L.maxpool_forward(x)
        if keep_cache:
            cache.append(("pool", None, record, None))
        trace.append((f"Block {b + 1}", "Max Pooling", x.shape))
    return x, trace, cache


def head_forward(m: ModelParams, feats: np.ndarray, keep_cache: bool = False):
    arch = m.arch
    trace = []
    seq = reshape(feats, (arch.seq_len, arch.feature_channels))
    trace.append(("Reshape", "Reshape", seq.shape))
    caches = []
    for name in arch.bilstm_names():
        seq, c = bilstm(m.lstm(name), seq, return_cache=True)
        caches.append(c)
        trace.append(("Bi-LSTM block", "Bi-LSTM", seq.shape))
    flat = flatten(seq)
    trace.append(("Classification", "Flatten", flat.shape))
    logits = L.dense_forward(m.dense, flat)
    trace.append(("Classification", "Dense", logits.shape))
    cache = (seq.shape, caches, flat) if keep_cache else None
    return logits, trace, cache


def forward(m: ModelParams, x: np.ndarray):
    """Class probabilities and the (block, layer, output shape) trace."""
    feats, trace, _ = extract_features(m, x)
    logits, head_trace, _ = head_forward(m, feats)
    return L.softmax(logits), trace + head_trace


def logits_of(m: ModelParams, x: np.ndarray) -> np.ndarray:
    feats, _, _ = extract_features(m, x)
    return head_forward(m, feats)[0]


def head_loss_and_grads(m: ModelParams, feats: np.ndarray, label: int):
    """Loss, probs, gradients of the head parameters and d loss / d features."""
    logits, _, (seq_shape, caches, flat) = head_forward(m, feats, keep_cache=True)
    probs = L.softmax(logits)
    loss, dlogits = L.cross_entropy(probs, label)
    grads: Dict[str, np.ndarray] = {}
    dflat, grads["dense.weights"], grads["dense.bias"] = L.dense_backward(m.dense, flat, dlogits)
    dseq = reshape(dflat, seq_shape)
    for name, c in reversed(list(zip(m.arch.bilstm_names(), caches))):
        dseq, g = bilstm_backward(m.lstm(name), c, dseq)
        grads.update(_bilstm_entries(name, g))
    return loss, probs, grads, reshape(dseq, feats.shape)


def loss_and_grads(m: ModelParams, x: np.ndarray, label: int, input_grad: bool = False):
    """Cross-entropy loss for one sample plus gradients for every trainable array.

    With the extractor frozen the conv backward pass is skipped entirely.
    Returns ``(loss, probs, grads)``; ``grads["input"]`` is added when
    ``input_grad`` is set.
    """
    frozen = m.freeze_extractor and not input_grad
    feats, _, cache = extract_features(m, x, keep_cache=not frozen)
    loss, probs, grads, dx = head_loss_and_grads(m, feats, label)
    if frozen:
        return loss, probs, grads
    for kind, name, a, b in reversed(cache):
        if kind == "pool":
            dx = L.maxpool_backward(a, dx)
            continue
        dpre = L.relu_backward(b, dx)
        first = name == "block1_conv1"
        dx, gw, gb = L.conv2d_backward(m.conv(name), a, dpre, need_input_grad=input_grad or not first)
        if not m.freeze_extractor:
            grads[name + ".weights"], grads[name + ".bias"] = gw, gb
    if input_grad:
        grads["input"] = dx
    return loss, probs, grads


def branch_signature(m: ModelParams, x: np.ndarray) -> bytes:
    """Which side of every ReLU and which max-pool winner is active for ``x``."""
    parts = []
    names = iter(m.arch.conv_names())
    for blk in m.arch.blocks:
        for _ in blk:
            pre = L.conv2d_forward(m.conv(next(names)), x)
            parts.append(np.packbits(pre > 0).tobytes())
            x = L.relu(pre)
        x, record = L.maxpool_forward(x)
        parts.append(record.argmax.astype(np.uint8).tobytes())
    return b"".join(parts)


def predict(m: ModelParams, x: np.ndarray):
    """Return ``(label, tb_score)``; a 0.5/0.5 tie goes to class 0 (normal)."""
    probs, _ = forward(m, x)
    return decide(probs)


def decide(probs: np.ndarray):
    return int(probs[1] > probs[0]), float(probs[1])


# -- training ---------------------------------------------------------------

@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 10
    batch_size: int = 8
    seed: int = 0
    optimizer: str = "adam"
    freeze_extractor: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # stop as soon as every training sample is classified correctly
    stop_when_fit: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("learning rate and batch size must be positive, epochs non-negative")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


class Adam:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
        c = self.cfg
        self.t += 1
        corr1 = 1.0 - c.beta1 ** self.t
        corr2 = 1.0 - c.beta2 ** self.t
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            params[name] -= c.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + c.adam_eps)


def sgd_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], lr: float):
    for name, g in grads.items():
        params[name] -= lr * g


@dataclass
class TrainHistory:
    loss: List[float] = field(default_factory=list)
    accuracy: List[float] = field(default_factory=list)

    @property
    def epochs_run(self) -> int:
        return len(self.loss)


def train(m: ModelParams, dataset: Sequence[Tuple[np.ndarray, int]], cfg: TrainConfig):
    """Minibatch training on mean cross-entropy.

    Returns a new :class:`ModelParams` and a :class:`TrainHistory` holding the
    per-epoch mean loss and the training accuracy measured after each epoch.
    The input model is left untouched.
    """
    if len(dataset) == 0:
        raise ValueError("training set is empty")
    for _, y in dataset:
        if y not in (0, 1):
            raise ValueError(f"labels must be 0 or 1, got {y!r}")
    model = m.copy()
    model.freeze_extractor = cfg.freeze_extractor
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()
    opt = Adam(cfg) if cfg.optimizer == "adam" else None

    # a frozen extractor is a fixed function, so its outputs can be reused
    cached = None
    if model.freeze_extractor:
        cached = [extract_features(model, x)[0] for x, _ in dataset]

    def sample_grads(i):
        x, y = dataset[i]
        if cached is not None:
            loss, probs, grads, _ = head_loss_and_grads(model, cached[i], y)
            return loss, grads
        loss, _, grads = loss_and_grads(model, x, y)
        return loss, grads

    n = len(dataset)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            acc_grads: Optional[Dict[str, np.ndarray]] = None
            for i in batch:
                loss, grads = sample_grads(i)
                total += loss
                if acc_grads is None:
                    acc_grads = grads
                else:
                    for k, g in grads.items():
                        acc_grads[k] += g
            for k in acc_grads:
                acc_grads[k] /= len(batch)
            if opt is not None:
                opt.step(model.params, acc_grads)
            else:
                sgd_step(model.params, acc_grads, cfg.learning_rate)
        history.loss.append(total / n)
        history.accuracy.append(training_accuracy(model, dataset, cached))
        if cfg.stop_when_fit and history.accuracy[-1] == 1.0:
            break
    return model, history


def training_accuracy(m: ModelParams, dataset, cached_features=None) -> float:
    hits = 0
    for i, (x, y) in enumerate(dataset):
        if cached_features is not None:
            probs = L.softmax(head_forward(m, cached_features[i])[0])
        else:
            probs, _ = forward(m, x)
        hits += decide(probs)[0] == y
    return hits / len(dataset)


def with_freeze(m: ModelParams, freeze: bool) -> ModelParams:
    return replace(m, freeze_extractor=freeze)
