"""Mini-batch training with a plateau learning-rate schedule and best-loss checkpointing."""
import json
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .engine import Adam, SGD, Tape, Tensor, ops
from .errors import NumericError
from .metrics import evaluate_scores

log = logging.getLogger(__name__)

INFERENCE_BATCH = 32
IMPROVEMENT_EPS = 1e-6


@dataclass
class TrainConfig:
    batch_size: int = 4
    initial_lr: float = 0.001
    plateau_factor: float = 10.0
    plateau_patience: int = 10
    max_epochs: int = 200
    early_stop_patience: int = None
    min_lr: float = 1e-8
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.initial_lr <= 0 or self.max_epochs < 1:
            raise ValueError("batch_size, initial_lr and max_epochs must be positive")
        if self.plateau_factor <= 1 or self.plateau_patience < 1:
            raise ValueError("plateau_factor must exceed 1 and plateau_patience be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def field_names(cls):
        return {f.name for f in fields(cls)}


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    checkpoint: dict = field(default=None, repr=False)

    def to_dict(self):
        d = asdict(self)
        d.pop("checkpoint")
        return d

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def predict(model, X, batch_size=INFERENCE_BATCH):
    """Inference-mode probabilities for ``X`` (N, F, p, p).

    Every forward pass runs on exactly ``batch_size`` samples (the last chunk
    is zero-padded), so a sample's output does not depend on which other
    samples share its batch.
    """
    model.eval()
    X = np.asarray(X, dtype=np.float32)
    n = X.shape[0]
    out = np.empty(n, dtype=np.float64)
    buf = np.zeros((batch_size,) + X.shape[1:], dtype=np.float32)
    for start in range(0, n, batch_size):
        chunk = X[start:start + batch_size]
        buf[:len(chunk)] = chunk
        buf[len(chunk):] = 0
        probs = model(Tensor(buf)).data.reshape(-1)
        out[start:start + len(chunk)] = probs[:len(chunk)]
    return out


def bce(probs, labels, eps=ops.BCE_EPS):
    p = np.clip(np.asarray(probs, dtype=np.float64), eps, 1 - eps)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def _snapshot(model):
    return {k: np.array(v, copy=True) for k, v in model.state_dict().items()}


def _make_optimizer(model, config, lr):
    named = list(model.named_parameters())
    if config.optimizer == "sgd":
        return SGD(named, lr)
    return Adam(named, lr)


def train(model, dataset, config=None, progress=None):
    """Fit ``model`` on the dataset's train subset, selecting on validation loss.

    The learning rate is divided by ``plateau_factor`` once validation
    accuracy has failed to improve for ``plateau_patience`` epochs.  The
    parameters with the lowest validation loss are restored before returning.
    """
    config = config or TrainConfig()
    train_idx = dataset.indices("train")
    val_idx = dataset.indices("val")
    if train_idx.size == 0 or val_idx.size == 0:
        raise ValueError("training needs non-empty train and validation subsets")
    rng = np.random.default_rng(config.seed)
    lr = config.initial_lr
    opt = _make_optimizer(model, config, lr)
    X, y = dataset.X, dataset.y.astype(np.float64)
    Xv, yv = X[val_idx], dataset.y[val_idx]

    report = TrainReport()
    best_acc = -np.inf
    since_acc = 0
    since_loss = 0
    for epoch in range(config.max_epochs):
        model.train()
        order = rng.permutation(train_idx)
        total = 0.0
        for b, start in enumerate(range(0, order.size, config.batch_size)):
            idx = order[start:start + config.batch_size]
            try:
                with Tape() as tape:
                    loss = ops.bce_loss(model(Tensor(X[idx])), y[idx])
                tape.backward(loss)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} batch {b}: {exc}") from None
            opt.step()
            opt.zero_grad()
            tape.clear()
            total += float(loss.data) * idx.size

        probs = predict(model, Xv)
        val_loss = bce(probs, yv)
        val_acc = float(np.mean((probs > 0.5) == (yv == 1)))
        report.train_loss.append(total / train_idx.size)
        report.val_loss.append(val_loss)
        report.val_accuracy.append(val_acc)
        report.lr.append(lr)
        if progress is not None:
            progress(epoch, report)

        if val_loss < report.best_val_loss:
            report.best_val_loss = val_loss
            report.best_epoch = epoch
            report.checkpoint = _snapshot(model)
            since_loss = 0
        else:
            since_loss += 1

        if val_acc > best_acc + IMPROVEMENT_EPS:
            best_acc = val_acc
            since_acc = 0
        else:
            since_acc += 1
            if since_acc >= config.plateau_patience:
                lr /= config.plateau_factor
                opt.lr = lr
                since_acc = 0
                log.info("epoch %d: validation accuracy plateaued, lr -> %g", epoch, lr)

        if lr < config.min_lr:
            break
        if config.early_stop_patience and since_loss >= config.early_stop_patience:
            break

    model.load_state_dict(report.checkpoint)
    return report


def evaluate(model, dataset, subsets=("train", "val", "test"), threshold=0.5):
    """Metrics per subset plus the raw scores (kept for ROC export)."""
    out = {}
    for name in subsets:
        idx = dataset.indices(name)
        if idx.size == 0:
            continue
        scores = predict(model, dataset.X[idx])
        out[name] = evaluate_scores(scores, dataset.y[idx], threshold)
        out[name]["n"] = int(idx.size)
        out[name]["scores"] = scores
    return out
