"""Adam training loop with plateau decay, early stopping and seeded runs."""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .dct import dct2_matrix
from .errors import SpecprobeError, TrainingDivergedError, ValidationError
from .probe import evaluate, filter_embeddings, group_by_length, stacked_loss_and_grads

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (1932, 2771, 7308, 8119, 9095)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    plateau_decay: float = 0.5
    batch_size: int = 32
    max_epochs: int = 30
    early_stop_patience: int = 1
    plateau_patience: int = 1
    plateau_min_delta: float = 1e-4
    seed: int = DEFAULT_SEEDS[0]
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 < self.plateau_decay < 1:
            raise ValidationError(f"plateau_decay must be in (0, 1), got {self.plateau_decay}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ValidationError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.early_stop_patience < 0 or self.plateau_patience < 1:
            raise ValidationError("patience values must be non-negative (plateau >= 1)")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise ValidationError("invalid Adam coefficients")

    @classmethod
    def from_mapping(cls, mapping):
        known = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(mapping) - set(known))
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {}
        for key, value in mapping.items():
            caster = known[key]
            try:
                kwargs[key] = caster(value)
            except (TypeError, ValueError):
                raise ValidationError(f"config key {key!r} expects {known[key].__name__}, got {value!r}") from None
        return cls(**kwargs)

    def to_dict(self):
        return asdict(self)


def load_config(path):
    """Read a YAML (or JSON) key/value file into a :class:`TrainConfig`."""
    import yaml

    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: config must be a key/value mapping")
    return TrainConfig.from_mapping(data)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    learning_rate: float


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    final_epoch: int = 0
    stopped_early: bool = False
    duration_s: float = 0.0

    @property
    def best_val_loss(self):
        return self.epochs[self.best_epoch - 1].val_loss

    @property
    def best_val_accuracy(self):
        return self.epochs[self.best_epoch - 1].val_accuracy

    @property
    def lr_trace(self):
        return [r.learning_rate for r in self.epochs]

    def to_jsonl(self):
        """One JSON record per epoch. Wall-clock time is left out so reruns compare equal."""
        lines = []
        for rec in self.epochs:
            d = asdict(rec)
            d["best"] = rec.epoch == self.best_epoch
            lines.append(json.dumps(d, sort_keys=True))
        return "\n".join(lines) + "\n"

    def to_dict(self):
        """Serializable summary without the wall-clock duration."""
        return {
            "epochs": [asdict(r) for r in self.epochs],
            "best_epoch": self.best_epoch,
            "final_epoch": self.final_epoch,
            "stopped_early": self.stopped_early,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            epochs=[EpochRecord(**r) for r in d.get("epochs", [])],
            best_epoch=int(d.get("best_epoch", 0)),
            final_epoch=int(d.get("final_epoch", 0)),
            stopped_early=bool(d.get("stopped_early", False)),
        )


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, applied to ``params`` in place.

    ``params`` and ``grads`` are dicts of equally-shaped arrays; missing
    gradients leave the parameter (and its moments) untouched.
    """
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for name, p in params.items():
        if name not in grads:
            continue
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValidationError(
                f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}"
            )
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def _check_compatible(model, dataset, what):
    if len(dataset) == 0:
        raise ValidationError(f"{what} set is empty")
    if dataset.width != model.width:
        raise ValidationError(
            f"{what} set has embedding width {dataset.width}, model expects {model.width}"
        )
    if dataset.num_classes > model.num_classes:
        raise ValidationError(
            f"{what} set has {dataset.num_classes} classes, model has {model.num_classes}"
        )


def _snapshot(model):
    return {k: v.copy() for k, v in model.parameters().items()}


def train(model, train_set, val_set, cfg):
    """Fit ``model`` in place and return ``(model, report)``.

    After every epoch the validation loss drives two schedules: a plateau
    of ``plateau_patience`` epochs without an improvement of at least
    ``plateau_min_delta`` scales the learning rate by ``plateau_decay``,
    and ``early_stop_patience + 1`` epochs without any improvement end
    training. The parameters of the best-validation-loss epoch are restored.
    """
    _check_compatible(model, train_set, "training")
    _check_compatible(model, val_set, "validation")
    started = time.perf_counter()
    rng = np.random.default_rng([cfg.seed, 1])
    seqs = train_set.sequences
    emb = [s.values.astype(np.float64) for s in seqs]
    # Embeddings are frozen: transform (or filter) every sequence once.
    if model.mode == "auto":
        pre = {"coeffs": [dct2_matrix(e, check=False) for e in emb]}
    else:
        pre = {"features": [filter_embeddings(model, e) for e in emb]}
    ((pre_key, pre_arrays),) = pre.items()

    params = model.parameters()
    state = AdamState()
    lr = cfg.learning_rate
    report = TrainReport()
    best_loss = math.inf
    best_params = _snapshot(model)
    plateau_ref = math.inf
    plateau_bad = 0
    stale = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(seqs))
        batch_losses = []
        for bi, start in enumerate(range(0, len(order), cfg.batch_size), start=1):
            batch = order[start : start + cfg.batch_size]
            total_loss, total_count, total = 0.0, 0, None
            for n, idx in group_by_length([seqs[i] for i in batch]):
                ids = batch[idx]
                loss, grads, count = stacked_loss_and_grads(
                    model,
                    np.stack([emb[i] for i in ids]),
                    np.stack([seqs[i].labels for i in ids]),
                    np.stack([seqs[i].ignore for i in ids]),
                    **{pre_key: np.stack([pre_arrays[i] for i in ids])},
                )
                total_loss += loss
                total_count += count
                if total is None:
                    total = grads
                else:
                    for k in total:
                        total[k] = total[k] + grads[k]
            if total_count == 0:
                continue
            batch_loss = total_loss / total_count
            if not math.isfinite(batch_loss):
                raise TrainingDivergedError(epoch, bi, batch_loss)
            mean_grads = {k: g / total_count for k, g in total.items()}
            adam_step(params, mean_grads, state, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            batch_losses.append(batch_loss)

        stats = evaluate(model, val_set.sequences)
        if not math.isfinite(stats["loss"]):
            raise TrainingDivergedError(epoch, "validation", stats["loss"])
        train_loss = float(np.mean(batch_losses)) if batch_losses else float("nan")
        report.epochs.append(
            EpochRecord(epoch, train_loss, stats["loss"], stats["accuracy"], lr)
        )
        log.info(
            "epoch %d: train %.5f val %.5f acc %.4f lr %.2e",
            epoch, train_loss, stats["loss"], stats["accuracy"], lr,
        )

        val_loss = stats["loss"]
        if val_loss < best_loss:
            best_loss = val_loss
            best_params = _snapshot(model)
            report.best_epoch = epoch
            stale = 0
        else:
            stale += 1

        if val_loss < plateau_ref - cfg.plateau_min_delta:
            plateau_ref = val_loss
            plateau_bad = 0
        else:
            plateau_bad += 1
            if plateau_bad >= cfg.plateau_patience:
                lr *= cfg.plateau_decay
                plateau_bad = 0

        report.final_epoch = epoch
        if stale >= cfg.early_stop_patience + 1:
            report.stopped_early = True
            break

    for name, value in best_params.items():
        params[name][...] = value
    report.duration_s = time.perf_counter() - started
    return model, report


@dataclass
class SeedResult:
    seed: int
    accuracy: float = None
    model: object = None
    report: TrainReport = None
    error: str = None

    @property
    def ok(self):
        return self.error is None


@dataclass
class MultiSeedResult:
    runs: list

    @property
    def accuracies(self):
        return [r.accuracy for r in self.runs if r.ok]

    @property
    def mean(self):
        acc = self.accuracies
        return float(np.mean(acc)) if acc else float("nan")

    @property
    def std(self):
        """Population standard deviation over the successful runs."""
        acc = self.accuracies
        return float(np.std(acc)) if acc else float("nan")

    def summary(self):
        return {
            "per_seed": [
                {"seed": r.seed, "accuracy": r.accuracy, "error": r.error} for r in self.runs
            ],
            "mean": self.mean,
            "std": self.std,
        }


def run_multiseed(make_model, train_set, val_set, cfg, seeds=DEFAULT_SEEDS):
    """Train one model per seed; failures are recorded per seed.

    ``make_model(rng)`` must build a fresh model from the given generator.
    Accuracy is the validation accuracy of the restored best epoch.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValidationError("at least one seed is required")
    runs = []
    for seed in seeds:
        try:
            model = make_model(np.random.default_rng(seed))
            model, report = train(model, train_set, val_set, _with_seed(cfg, seed))
            runs.append(SeedResult(seed, report.best_val_accuracy, model, report))
        except SpecprobeError as exc:
            log.warning("seed %d failed: %s", seed, exc)
            runs.append(SeedResult(seed, error=str(exc)))
    return MultiSeedResult(runs)


def _with_seed(cfg, seed):
    d = cfg.to_dict()
    d["seed"] = int(seed)
    return TrainConfig(**d)
