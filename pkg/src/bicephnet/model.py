"""Biceph head on a dense backbone: forward, combined backward, training."""
from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np

from . import evaluate as ev
from . import rng as rngmod
from .data import Cohort, SamplerConfig, sample_batch, steps_per_epoch
from .errors import ShapeError, StateError, TrainingError, ValidationError
from .nn import Activation, DenseLayer, L2NormLayer, cross_entropy
from .triplet import EmbeddingBatch, MiningConfig, mine_semihard, pairwise_distances, triplet_loss

TASKS = {
    "CNvsAD": ("CN", "AD"),
    "MCIvsAD": ("MCI", "AD"),
    "CNvsMCIvsAD": ("CN", "MCI", "AD"),
}


def task_classes(task: str) -> tuple:
    try:
        return TASKS[task]
    except KeyError:
        raise ValidationError(f"unknown task {task!r}; choose from {sorted(TASKS)}") from None


@dataclass
class BicephConfig:
    input_dim: int = 64
    backbone_dims: tuple = (128,)
    flat_dim: int = 64
    embed_dim: int = 64
    num_classes: int = 2
    concat_head_dims: tuple = (32, 16, 8)
    margin: float = 0.2
    triplet_weight: float = 1.0

    def __post_init__(self):
        self.backbone_dims = tuple(int(d) for d in self.backbone_dims)
        self.concat_head_dims = tuple(int(d) for d in self.concat_head_dims)
        self.validate()

    def validate(self):
        if self.num_classes not in (2, 3):
            raise ValidationError(f"num_classes must be 2 or 3, got {self.num_classes}")
        if self.embed_dim < 2:
            raise ValidationError("embed_dim must be >= 2")
        if len(self.concat_head_dims) != 3:
            raise ValidationError(f"concat head needs 3 hidden widths, got {self.concat_head_dims}")
        dims = (self.input_dim, *self.backbone_dims, self.flat_dim, *self.concat_head_dims)
        if any(d < 1 for d in dims):
            raise ValidationError(f"all widths must be positive: {dims}")
        if not math.isfinite(self.margin) or self.margin <= 0:
            raise ValidationError(f"margin must be positive, got {self.margin}")
        if not math.isfinite(self.triplet_weight) or self.triplet_weight < 0:
            raise ValidationError(f"triplet_weight must be >= 0, got {self.triplet_weight}")

    @property
    def binary(self) -> bool:
        return self.num_classes == 2

    @property
    def prior_out(self) -> int:
        return 1 if self.binary else 3

    @property
    def prior_activation(self) -> Activation:
        return Activation.SIGMOID if self.binary else Activation.SOFTMAX

    @property
    def output_dim(self) -> int:
        return 1 if self.binary else self.num_classes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone_dims"] = list(self.backbone_dims)
        d["concat_head_dims"] = list(self.concat_head_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BicephConfig":
        return cls(**d)


class Backbone:
    """Dense ReLU stack standing in for the convolutional feature extractor up to its flatten layer."""

    def __init__(self, input_dim: int, hidden: tuple, flat_dim: int):
        dims = (input_dim, *hidden, flat_dim)
        self.layers = [DenseLayer(i, o, Activation.RELU) for i, o in zip(dims[:-1], dims[1:])]
        self.flat_dim = flat_dim

    def forward(self, X):
        for layer in self.layers:
            X = layer.forward(X)
        return X

    def backward(self, grad_flat):
        grads = []
        g = grad_flat
        for layer in reversed(self.layers):
            gr = layer.backward(g)
            grads.append(gr.weights)
            g = gr.inputs
        return grads[::-1], g


class BicephModule:
    """Triplet branch (dense + L2 norm), prior branch (dense + sigmoid/softmax), concatenate head."""

    def __init__(self, config: BicephConfig):
        c = config
        self.config = c
        self.triplet_dense = DenseLayer(c.flat_dim, c.embed_dim, Activation.IDENTITY)
        self.l2 = L2NormLayer()
        self.prior_dense = DenseLayer(c.flat_dim, c.prior_out, c.prior_activation)
        widths = (c.embed_dim + c.prior_out, *c.concat_head_dims)
        self.head = [DenseLayer(i, o, Activation.RELU) for i, o in zip(widths[:-1], widths[1:])]
        out_act = Activation.SIGMOID if c.binary else Activation.SOFTMAX
        self.head.append(DenseLayer(widths[-1], c.output_dim, out_act))


@dataclass
class ForwardOutputs:
    embedding: np.ndarray
    prior: np.ndarray
    class_probs: np.ndarray
    logits: np.ndarray
    flat: np.ndarray


@dataclass
class BranchGradients:
    triplet: list
    prior: list
    concat: list
    grad_at_flat: np.ndarray
    grad_at_embedding: np.ndarray = None
    grad_at_prior: np.ndarray = None


def biceph_forward(module: BicephModule, backbone: Backbone, X) -> ForwardOutputs:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"input must be 2-D, got shape {X.shape}")
    flat = backbone.forward(X)
    emb = module.l2.forward(module.triplet_dense.forward(flat))
    prior = module.prior_dense.forward(flat)
    h = np.hstack([emb, prior])
    for layer in module.head:
        h = layer.forward(h)
    return ForwardOutputs(emb, prior, h, module.head[-1].preactivation, flat)


def biceph_backward(module: BicephModule, ce_grad_at_output, triplet_grad_at_embedding) -> BranchGradients:
    """Backprop through the head.

    ``ce_grad_at_output`` is dL/d(logits) of the class output (the fused
    cross-entropy gradient); ``triplet_grad_at_embedding`` is dL/d(embedding)
    from the (already weighted) triplet loss. The concat head's input
    gradient splits into its embedding and prior columns; the embedding part
    joins the triplet gradient and the two branch input gradients add up at
    the flatten layer.
    """
    if module.head[-1]._xb is None:
        raise StateError("biceph_backward called before biceph_forward")
    c = module.config
    g = np.asarray(ce_grad_at_output, dtype=np.float64)
    concat = []
    for k, layer in enumerate(reversed(module.head)):
        gr = layer.backward(g, wrt_preactivation=(k == 0))
        concat.append(gr.weights)
        g = gr.inputs
    concat.reverse()
    q_emb, q_prior = g[:, : c.embed_dim], g[:, c.embed_dim :]
    g_emb = np.asarray(triplet_grad_at_embedding, dtype=np.float64) + q_emb
    tr = module.triplet_dense.backward(module.l2.backward(g_emb))
    pr = module.prior_dense.backward(q_prior)
    return BranchGradients(
        triplet=[tr.weights],
        prior=[pr.weights],
        concat=concat,
        grad_at_flat=tr.inputs + pr.inputs,
        grad_at_embedding=g_emb,
        grad_at_prior=q_prior,
    )


class BicephNet:
    """Backbone plus Biceph head with a flat, ordered view of all parameters."""

    def __init__(self, config: BicephConfig, seed: int | None = 0):
        self.config = config
        self.backbone = Backbone(config.input_dim, config.backbone_dims, config.flat_dim)
        self.module = BicephModule(config)
        if seed is not None:
            rng = rngmod.stream(seed, "init")
            for layer in self.layers().values():
                layer.init_uniform(rng)

    def layers(self) -> dict:
        out = {f"backbone.{i}": l for i, l in enumerate(self.backbone.layers)}
        out["triplet.0"] = self.module.triplet_dense
        out["prior.0"] = self.module.prior_dense
        out.update({f"concat.{i}": l for i, l in enumerate(self.module.head)})
        return out

    def parameters(self) -> dict:
        return {k: l.weights for k, l in self.layers().items()}

    def n_params(self) -> int:
        return sum(w.size for w in self.parameters().values())

    def forward(self, X) -> ForwardOutputs:
        return biceph_forward(self.module, self.backbone, X)

    def backward(self, ce_grad, triplet_grad) -> dict:
        """Gradients of every parameter, keyed like ``parameters()``."""
        bg = biceph_backward(self.module, ce_grad, triplet_grad)
        bb, _ = self.backbone.backward(bg.grad_at_flat)
        grads = {f"backbone.{i}": g for i, g in enumerate(bb)}
        grads["triplet.0"] = bg.triplet[0]
        grads["prior.0"] = bg.prior[0]
        grads.update({f"concat.{i}": g for i, g in enumerate(bg.concat)})
        return grads

    def loss_and_grads(self, X, labels, subject_ids, triplet_weight=None, mine=True, triples=None):
        """Forward, mine, losses and full backward for one batch.

        Returns ``(ce, triplet, triples, grads)``. Passing ``triples`` skips
        mining and reuses that set (finite-difference checks need this).
        """
        lam = self.config.triplet_weight if triplet_weight is None else triplet_weight
        out = self.forward(X)
        ce, ce_grad = cross_entropy(out.class_probs, labels, logits=out.logits)
        batch = EmbeddingBatch(out.embedding, subject_ids, labels)
        trip_grad = np.zeros_like(out.embedding)
        tl = 0.0
        if triples is None and mine:
            D = pairwise_distances(batch)
            triples = mine_semihard(batch, MiningConfig(self.config.margin), distances=D)
        if triples is not None and len(triples):
            tl, tg = triplet_loss(batch, triples, self.config.margin)
            trip_grad = lam * tg
        return ce, tl, triples, self.backward(ce_grad, trip_grad)


class SGD:
    """Plain gradient descent: w -= lr * g."""

    name = "sgd"

    def apply(self, params: dict, grads: dict, lr: float) -> None:
        for k, w in params.items():
            w -= lr * grads[k]

    def state_dict(self) -> dict:
        return {"name": self.name}

    def load_state_dict(self, state: dict) -> None:
        pass


class Adam:
    """Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-7)."""

    name = "adam"

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-7):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def apply(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr = math.sqrt(1.0 - b2**self.t) / (1.0 - b1**self.t)
        for k, w in params.items():
            g = grads[k]
            m = self.m.setdefault(k, np.zeros_like(w))
            v = self.v.setdefault(k, np.zeros_like(w))
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            w -= lr * corr * m / (np.sqrt(v) + self.eps)

    def state_dict(self) -> dict:
        return {
            "name": self.name,
            "t": self.t,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = {k: np.array(v, dtype=np.float64) for k, v in state["m"].items()}
        self.v = {k: np.array(v, dtype=np.float64) for k, v in state["v"].items()}


def make_optimizer(name: str):
    if name == "sgd":
        return SGD()
    if name == "adam":
        return Adam()
    raise ValidationError(f"unknown optimizer {name!r}")


@dataclass
class StepReport:
    ce_loss: float
    triplet_loss: float
    n_triplets: int


@contextmanager
def _diverged_as_training_error(X, context: str):
    """Finite inputs that turn non-finite inside the network mean the parameters diverged."""
    try:
        yield
    except ValidationError as exc:
        if np.all(np.isfinite(X)) and "non-finite" in str(exc):
            raise TrainingError(f"network activations became non-finite ({context}): {exc}") from exc
        raise


def train_step(net: BicephNet, batch, optimizer, lr: float, use_triplet: bool = True) -> StepReport:
    """One forward/mine/backward/update. ``use_triplet=False`` gives the plain CE classifier."""
    with _diverged_as_training_error(batch.X, f"lr={lr}"):
        ce, tl, triples, grads = net.loss_and_grads(batch.X, batch.labels, batch.subject_ids, mine=use_triplet)
    total = ce + net.config.triplet_weight * tl
    if not math.isfinite(total):
        raise TrainingError(f"non-finite loss: ce={ce!r} triplet={tl!r} (lr={lr})")
    optimizer.apply(net.parameters(), grads, lr)
    for k, w in net.parameters().items():
        if not np.all(np.isfinite(w)):
            raise TrainingError(f"non-finite parameters in {k} after update (lr={lr}, ce={ce:.4g})")
    return StepReport(ce, tl, 0 if triples is None else len(triples))


class PlateauSchedule:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without val-loss improvement."""

    def __init__(self, lr: float, factor: float = 0.1, patience: int = 5, min_lr: float = 0.0):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = math.inf
        self.wait = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best:
            self.best = val_loss
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.wait = 0
        return self.lr

    def state_dict(self) -> dict:
        return {"lr": self.lr, "best": self.best, "wait": self.wait}

    def load_state_dict(self, state: dict) -> None:
        self.lr = float(state["lr"])
        self.best = float(state["best"])
        self.wait = int(state["wait"])


@dataclass
class TrainParams:
    learning_rate: float = 0.001
    lr_factor: float = 0.1
    patience: int = 5
    epochs: int = 100
    optimizer: str = "adam"
    use_triplet: bool = True

    def validate(self):
        if not (self.learning_rate > 0 and 0 < self.lr_factor <= 1):
            raise ValidationError("learning_rate must be > 0 and lr_factor in (0, 1]")
        if self.patience < 1 or self.epochs < 0:
            raise ValidationError("patience must be >= 1 and epochs >= 0")
        make_optimizer(self.optimizer)


METRIC_COLUMNS = (
    "epoch",
    "learning_rate",
    "step_ce",
    "step_triplet",
    "mined_triplets",
    "train_ce",
    "val_ce",
    "train_slice_acc",
    "val_slice_acc",
    "train_subject_acc",
    "val_subject_acc",
)


@dataclass
class TrainerState:
    epoch: int
    schedule: PlateauSchedule
    optimizer: object
    sample_rng: np.random.Generator
    best_val: float = math.inf


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)

    def column(self, name):
        return [r[name] for r in self.records]


@dataclass
class SplitEval:
    ce: float
    slice_acc: float
    subject_acc: float


def predict_slices(net: BicephNet, X, chunk: int = 4096):
    """Class probabilities, predicted classes and embeddings for every row of X."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.config.input_dim:
        raise ShapeError(f"expected rows of width {net.config.input_dim}, got shape {X.shape}")
    probs, embs, logits = [], [], []
    for s in range(0, len(X), chunk):
        out = net.forward(X[s : s + chunk])
        probs.append(out.class_probs)
        embs.append(out.embedding)
        logits.append(out.logits)
    P = np.vstack(probs)
    pred = (P[:, 0] >= 0.5).astype(np.int64) if P.shape[1] == 1 else np.argmax(P, axis=1)
    return P, pred, np.vstack(embs), np.vstack(logits)


def evaluate_split(net: BicephNet, cohort: Cohort, classes) -> SplitEval:
    X, sids, labels, _ = cohort.arrays(classes)
    P, pred, _, logits = predict_slices(net, X)
    ce, _ = cross_entropy(P, labels, logits=logits)
    verdicts = ev.subject_verdicts(sids, labels, pred, len(classes))
    return SplitEval(ce, ev.slice_accuracy(pred, labels), ev.subject_accuracy(verdicts))


def init_state(params: TrainParams, seed: int) -> TrainerState:
    return TrainerState(
        epoch=0,
        schedule=PlateauSchedule(params.learning_rate, params.lr_factor, params.patience),
        optimizer=make_optimizer(params.optimizer),
        sample_rng=rngmod.stream(seed, "sample"),
    )


def fit(
    net: BicephNet,
    train: Cohort,
    val: Cohort,
    params: TrainParams,
    sampler: SamplerConfig,
    classes,
    seed: int = 0,
    state: TrainerState | None = None,
    on_epoch_end=None,
) -> TrainingLog:
    """Epoch loop with plateau LR decay on validation cross-entropy.

    An epoch is ``ceil(train slices / batch size)`` sampled batches. Record 0
    is the untrained evaluation. ``on_epoch_end(epoch, net, state, record,
    improved)`` is called after every record, epoch 0 included. Passing a
    ``state`` (e.g. restored from a checkpoint) resumes after
    ``state.epoch``.
    """
    params.validate()
    if len(train) == 0 or len(val) == 0:
        raise ValidationError("train and validation cohorts must be non-empty")
    overlap = set(train.subject_ids) & set(val.subject_ids)
    if overlap:
        raise ValidationError(f"train and val share subjects: {sorted(overlap)[:5]}")
    sampler.validate(train)
    log = TrainingLog()
    if state is None:
        state = init_state(params, seed)
        rec = _record(net, train, val, classes, 0, state.schedule.lr, [])
        log.records.append(rec)
        if on_epoch_end:
            on_epoch_end(0, net, state, rec, False)
    n_steps = steps_per_epoch(train, sampler)
    for epoch in range(state.epoch + 1, params.epochs + 1):
        lr = state.schedule.lr
        reports = []
        for _ in range(n_steps):
            batch = sample_batch(train, sampler, state.sample_rng, classes)
            reports.append(train_step(net, batch, state.optimizer, lr, params.use_triplet))
        rec = _record(net, train, val, classes, epoch, lr, reports)
        state.schedule.step(rec["val_ce"])
        state.epoch = epoch
        improved = rec["val_ce"] < state.best_val
        if improved:
            state.best_val = rec["val_ce"]
        log.records.append(rec)
        if on_epoch_end:
            on_epoch_end(epoch, net, state, rec, improved)
    return log


def _record(net, train, val, classes, epoch, lr, reports) -> dict:
    # cohort slices are validated finite on construction
    with _diverged_as_training_error(np.zeros(1), f"evaluation at epoch {epoch}"):
        tr = evaluate_split(net, train, classes)
        va = evaluate_split(net, val, classes)
    if not math.isfinite(va.ce) or not math.isfinite(tr.ce):
        raise TrainingError(f"non-finite evaluation loss at epoch {epoch}")
    n = len(reports)
    return {
        "epoch": epoch,
        "learning_rate": lr,
        "step_ce": sum(r.ce_loss for r in reports) / n if n else 0.0,
        "step_triplet": sum(r.triplet_loss for r in reports) / n if n else 0.0,
        "mined_triplets": sum(r.n_triplets for r in reports),
        "train_ce": tr.ce,
        "val_ce": va.ce,
        "train_slice_acc": tr.slice_acc,
        "val_slice_acc": va.slice_acc,
        "train_subject_acc": tr.subject_acc,
        "val_subject_acc": va.subject_acc,
    }
