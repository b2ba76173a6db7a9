"""Experiment orchestration: config files, the phase-switched training loop
(uniform weights and rho before the re-weighting threshold, inverse-frequency
weights and rho_drw after), per-epoch balanced-test metrics, scheduled
spectrum/CNC snapshots, checkpoints, and rho sweeps.

Everything an experiment writes is a pure function of (config, seed): random
streams are derived per purpose (data, init, batch order, optimizer noise,
per-analysis), floats are serialized with 17 significant digits, and no
timestamps enter any artifact, so reruns reproduce outputs byte-for-byte and
a checkpoint resume rejoins the uninterrupted trajectory bitwise.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__ as CODE_VERSION
from .cncverify import CncSettings, save_theorem1_report, theorem1_report
from .datagen import (
    ClassGeometry,
    ClassGroups,
    ImbalanceProfile,
    LabeledDataset,
    balanced_test_split,
    generate,
    split_head_mid_tail,
)
from .errors import (
    CheckpointError,
    ConfigError,
    ParameterError,
    RunAbortedError,
    SaddleLabError,
)
from .linalg import SeededRng
from .losses import LossSpec, ReweightSchedule, drw_weights, loss_on_logits
from .model import Batch, MlpSpec, ParamVector, forward, init_params, loss_grad, param_layout
from .optim import (
    LPFSGD,
    PGD,
    SAM,
    SGD,
    LrSchedule,
    OptimizerConfig,
    OptimizerState,
    RhoSchedule,
    lpf_sgd_step,
    lr_at,
    pgd_step,
    rho_at,
    sam_step,
    sgd_step,
)
from .spectral import SpectralSettings, classwise_spectrum_report, extreme_eigs, save_spectrum
from .spectral import HvpOracle
from .model import per_class_batch

CHECKPOINT_FORMAT_VERSION = 1
OUTPUT_DIR_ENV = "SADDLELAB_OUTPUT_DIR"


# --------------------------------------------------------------------------
# config schema
# --------------------------------------------------------------------------

def _reject_unknown(d: dict, allowed, context: str) -> None:
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {context}: {sorted(unknown)}")


@dataclass(frozen=True)
class DatasetConfig:
    kind: str
    num_classes: int
    n_max: int
    beta: float
    input_dim: int
    class_mean_radius: float = 3.0
    within_class_std: float = 1.0
    mean_placement: str = "circle"
    test_per_class: int = 200

    def __post_init__(self):
        if self.test_per_class < 1:
            raise ConfigError("test_per_class must be >= 1")

    def profile(self) -> ImbalanceProfile:
        return ImbalanceProfile(self.kind, self.num_classes, self.n_max, self.beta)

    def geometry(self) -> ClassGeometry:
        return ClassGeometry(self.input_dim, self.class_mean_radius,
                             self.within_class_std, self.mean_placement)


@dataclass(frozen=True)
class LossConfig:
    variant: str = "ce"
    ldam_max_margin: float = 0.5
    vs_gamma: float = 0.05
    vs_tau: float = 0.75

    def bind(self, counts) -> LossSpec:
        return LossSpec(variant=self.variant, class_counts=tuple(counts),
                        ldam_max_margin=self.ldam_max_margin,
                        vs_gamma=self.vs_gamma, vs_tau=self.vs_tau)


@dataclass(frozen=True)
class CncRunConfig:
    batch_size: int = 32
    num_batches: int = 100
    mode: str = "unnormalized"
    rhos: tuple | None = None  # None -> check the epoch's effective rho


@dataclass(frozen=True)
class GroupThresholds:
    hi: float | None = None
    lo: float | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig
    model: MlpSpec
    lr: LrSchedule
    epochs: int
    batch_size: int
    seed: int
    loss: LossConfig = LossConfig()
    reweight_epoch: int = 0
    optimizer: OptimizerConfig = OptimizerConfig()
    rho_schedule: RhoSchedule = RhoSchedule()
    spectrum_epochs: tuple = ()
    cnc_epochs: tuple = ()
    spectral: SpectralSettings = SpectralSettings()
    cnc: CncRunConfig = CncRunConfig()
    groups: GroupThresholds = GroupThresholds()
    output_dir: str = "runs/experiment"

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 <= self.reweight_epoch <= self.epochs:
            raise ConfigError("reweight_epoch must be within [0, epochs]")
        for name, epochs in (("spectrum_epochs", self.spectrum_epochs),
                             ("cnc_epochs", self.cnc_epochs)):
            if any(not 0 <= e <= self.epochs for e in epochs):
                raise ConfigError(f"{name} must lie within [0, epochs]")

    def effective_rho(self, epoch: int) -> float:
        """Schedule wins when present; otherwise the phase-switched constants."""
        if self.rho_schedule.steps:
            return rho_at(self.rho_schedule, epoch)
        if epoch < self.reweight_epoch:
            return self.optimizer.rho
        return self.optimizer.effective_rho_drw


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return {
        "dataset": dataclasses.asdict(cfg.dataset),
        "model": {"layer_sizes": list(cfg.model.layer_sizes),
                  "activation": cfg.model.activation, "bias": cfg.model.bias},
        "loss": dataclasses.asdict(cfg.loss),
        "reweight": {"threshold_epoch": cfg.reweight_epoch},
        "optimizer": dataclasses.asdict(cfg.optimizer),
        "lr": {"base_lr": cfg.lr.base_lr, "warmup_epochs": cfg.lr.warmup_epochs,
               "milestones": [list(m) for m in cfg.lr.milestones]},
        "rho_schedule": {"steps": [list(s) for s in cfg.rho_schedule.steps]},
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "seed": cfg.seed,
        "spectrum_epochs": sorted(cfg.spectrum_epochs),
        "cnc_epochs": sorted(cfg.cnc_epochs),
        "spectral": {
            "lanczos_iters": cfg.spectral.lanczos_iters,
            "num_probes": cfg.spectral.num_probes,
            "broadening_sigma2": cfg.spectral.broadening_sigma2,
            "residual_tol": cfg.spectral.residual_tol,
        },
        "cnc": {"batch_size": cfg.cnc.batch_size, "num_batches": cfg.cnc.num_batches,
                "mode": cfg.cnc.mode,
                "rhos": None if cfg.cnc.rhos is None else list(cfg.cnc.rhos)},
        "groups": {"hi": cfg.groups.hi, "lo": cfg.groups.lo},
        "output_dir": cfg.output_dir,
    }


def config_from_dict(d: dict) -> ExperimentConfig:
    top_allowed = {"dataset", "model", "loss", "reweight", "optimizer", "lr",
                   "rho_schedule", "epochs", "batch_size", "seed",
                   "spectrum_epochs", "cnc_epochs", "spectral", "cnc",
                   "groups", "output_dir"}
    _reject_unknown(d, top_allowed, "config")
    for key in ("dataset", "model", "lr", "epochs", "batch_size", "seed"):
        if key not in d:
            raise ConfigError(f"config is missing required key {key!r}")

    ds = dict(d["dataset"])
    _reject_unknown(ds, {f.name for f in dataclasses.fields(DatasetConfig)}, "dataset")
    mdl = dict(d["model"])
    _reject_unknown(mdl, {"layer_sizes", "activation", "bias"}, "model")
    loss = dict(d.get("loss", {}))
    _reject_unknown(loss, {f.name for f in dataclasses.fields(LossConfig)}, "loss")
    rw = dict(d.get("reweight", {"threshold_epoch": 0}))
    _reject_unknown(rw, {"threshold_epoch"}, "reweight")
    opt = dict(d.get("optimizer", {}))
    _reject_unknown(opt, {f.name for f in dataclasses.fields(OptimizerConfig)}, "optimizer")
    lr = dict(d["lr"])
    _reject_unknown(lr, {"base_lr", "warmup_epochs", "milestones"}, "lr")
    rs = dict(d.get("rho_schedule", {"steps": []}))
    _reject_unknown(rs, {"steps"}, "rho_schedule")
    spectral = dict(d.get("spectral", {}))
    _reject_unknown(spectral, {"lanczos_iters", "num_probes", "broadening_sigma2",
                               "residual_tol"}, "spectral")
    cnc = dict(d.get("cnc", {}))
    _reject_unknown(cnc, {"batch_size", "num_batches", "mode", "rhos"}, "cnc")
    groups = dict(d.get("groups", {}))
    _reject_unknown(groups, {"hi", "lo"}, "groups")

    try:
        if "rhos" in cnc and cnc["rhos"] is not None:
            cnc["rhos"] = tuple(cnc["rhos"])
        return ExperimentConfig(
            dataset=DatasetConfig(**ds),
            model=MlpSpec(layer_sizes=tuple(mdl["layer_sizes"]),
                          activation=mdl.get("activation", "tanh"),
                          bias=mdl.get("bias", True)),
            loss=LossConfig(**loss),
            reweight_epoch=rw["threshold_epoch"],
            optimizer=OptimizerConfig(**opt),
            lr=LrSchedule(base_lr=lr["base_lr"],
                          warmup_epochs=lr.get("warmup_epochs", 0),
                          milestones=tuple(tuple(m) for m in lr.get("milestones", []))),
            rho_schedule=RhoSchedule(steps=tuple(tuple(s) for s in rs.get("steps", []))),
            epochs=d["epochs"],
            batch_size=d["batch_size"],
            seed=d["seed"],
            spectrum_epochs=tuple(d.get("spectrum_epochs", [])),
            cnc_epochs=tuple(d.get("cnc_epochs", [])),
            spectral=SpectralSettings(**spectral),
            cnc=CncRunConfig(**cnc),
            groups=GroupThresholds(**groups),
            output_dir=d.get("output_dir", "runs/experiment"),
        )
    except (TypeError, ParameterError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    return config_from_dict(payload)


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class MetricsRecord:
    epoch: int
    train_loss: float
    grad_norm: float
    lr: float
    rho: float
    overall_acc: float
    head_acc: float | None
    mid_acc: float | None
    tail_acc: float | None
    per_class_acc: tuple
    per_class_loss: tuple
    config_hash: str
    code_version: str

    @staticmethod
    def csv_header(num_classes: int) -> list:
        return (["epoch", "train_loss", "grad_norm", "lr", "rho", "overall_acc",
                 "head_acc", "mid_acc", "tail_acc"]
                + [f"acc_{j}" for j in range(num_classes)]
                + [f"loss_{j}" for j in range(num_classes)]
                + ["config_hash", "code_version"])

    def csv_row(self) -> list:
        opt = lambda v: "" if v is None else _fmt(v)
        return ([str(self.epoch), _fmt(self.train_loss), _fmt(self.grad_norm),
                 _fmt(self.lr), _fmt(self.rho), _fmt(self.overall_acc),
                 opt(self.head_acc), opt(self.mid_acc), opt(self.tail_acc)]
                + [_fmt(a) for a in self.per_class_acc]
                + [_fmt(l) for l in self.per_class_loss]
                + [self.config_hash, self.code_version])


def evaluate(spec: MlpSpec, w: ParamVector, test: LabeledDataset,
             groups: ClassGroups, loss: LossSpec) -> dict:
    """Argmax-logit metrics on the balanced test set: per-class accuracy and
    loss, group means, and the overall balanced accuracy (mean of per-class)."""
    logits = forward(spec, w, test.features)
    preds = np.argmax(logits, axis=1)
    labels = test.labels
    plain = loss.with_class_weights(None)
    accs, losses = [], []
    for j in range(test.num_classes):
        sel = labels == j
        accs.append(float(np.mean(preds[sel] == j)))
        value, _ = loss_on_logits(plain, logits[sel], labels[sel])
        losses.append(value)

    def group_acc(members):
        if not members:
            return None
        return float(np.mean([accs[j] for j in members]))

    return {
        "per_class_acc": tuple(accs),
        "per_class_loss": tuple(losses),
        "overall_acc": float(np.mean(accs)),
        "head_acc": group_acc(groups.head),
        "mid_acc": group_acc(groups.mid),
        "tail_acc": group_acc(groups.tail),
    }


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

@dataclass
class Checkpoint:
    format_version: int
    config_hash: str
    config: dict
    epoch: int  # epochs completed when the snapshot was taken
    params: np.ndarray
    velocity: np.ndarray
    step_count: int
    rng_states: dict  # stream name -> SeededRng state


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    payload = {
        "format_version": ckpt.format_version,
        "config_hash": ckpt.config_hash,
        "config": ckpt.config,
        "epoch": ckpt.epoch,
        "params": [_fmt(x) for x in ckpt.params],
        "velocity": [_fmt(x) for x in ckpt.velocity],
        "step_count": ckpt.step_count,
        "rng_states": ckpt.rng_states,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt or unreadable checkpoint: {exc}") from exc
    if not isinstance(payload, dict):
        raise CheckpointError("corrupt checkpoint: not a JSON object")
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format_version {version!r} != supported {CHECKPOINT_FORMAT_VERSION}"
        )
    required = {"config_hash", "config", "epoch", "params", "velocity",
                "step_count", "rng_states"}
    missing = required - set(payload)
    if missing:
        raise CheckpointError(f"corrupt checkpoint: missing keys {sorted(missing)}")
    return Checkpoint(
        format_version=version,
        config_hash=payload["config_hash"],
        config=payload["config"],
        epoch=payload["epoch"],
        params=np.array([float(x) for x in payload["params"]]),
        velocity=np.array([float(x) for x in payload["velocity"]]),
        step_count=payload["step_count"],
        rng_states=payload["rng_states"],
    )


# --------------------------------------------------------------------------
# the training loop
# --------------------------------------------------------------------------

@dataclass
class RunResult:
    params: ParamVector
    metrics: list
    out_dir: Path
    config_hash: str
    dataset: LabeledDataset
    test: LabeledDataset
    groups: ClassGroups
    artifacts: list


def resolve_output_dir(cfg_output_dir: str, override=None) -> Path:
    """Precedence: env var > explicit override > config value."""
    env = os.environ.get(OUTPUT_DIR_ENV)
    if env:
        return Path(env)
    if override is not None:
        return Path(override)
    return Path(cfg_output_dir)


def _build_data(cfg: ExperimentConfig, root: SeededRng):
    ds = generate(cfg.dataset.profile(), cfg.dataset.geometry(), root.child("datagen"))
    _, test = balanced_test_split(ds, cfg.dataset.test_per_class, root.child("testgen"))
    groups = split_head_mid_tail(ds.class_counts, cfg.groups.hi, cfg.groups.lo)
    return ds, test, groups


def run_experiment(cfg: ExperimentConfig, out_dir=None, resume_from=None) -> RunResult:
    """Execute the configured run end to end, writing metrics.csv, snapshot
    artifacts, checkpoints, and summary.json under the output directory."""
    out = resolve_output_dir(cfg.output_dir, out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    root = SeededRng(cfg.seed)
    ds, test, groups = _build_data(cfg, root)
    base_loss = cfg.loss.bind(ds.class_counts)
    reweight = ReweightSchedule(cfg.reweight_epoch, ds.class_counts)
    layout, dim = param_layout(cfg.model)
    blocks = tuple((b.offset, int(np.prod(b.shape))) for b in layout)

    batches_rng = root.child("batches")
    noise_rng = root.child("optnoise")
    w = init_params(cfg.model, root.child("init"))
    state = OptimizerState.fresh(dim, noise_rng)
    start_epoch = 0

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt.config_hash != chash:
            raise CheckpointError(
                f"checkpoint config hash {ckpt.config_hash} != current config {chash}"
            )
        w = ParamVector(ckpt.params, layout)
        batches_rng = SeededRng.from_state(ckpt.rng_states["batches"])
        noise_rng = SeededRng.from_state(ckpt.rng_states["optnoise"])
        state = OptimizerState(velocity=ckpt.velocity.copy(), rng=noise_rng,
                               step_count=ckpt.step_count)
        start_epoch = ckpt.epoch

    n = len(ds)
    steps_per_epoch = max(1, math.ceil(n / cfg.batch_size))
    artifacts: list = []
    metrics: list = []

    metrics_path = out / "metrics.csv"
    metrics_fh = open(metrics_path, "w", newline="", encoding="utf-8")
    header = MetricsRecord.csv_header(ds.num_classes)
    metrics_fh.write(",".join(header) + "\n")
    artifacts.append("metrics.csv")

    def snapshot(epochs_done: int) -> None:
        wrote_ckpt = False
        if epochs_done in cfg.spectrum_epochs:
            entries = classwise_spectrum_report(
                cfg.model, w, ds, base_loss, range(ds.num_classes),
                cfg.spectral, root.child("spectrum", epochs_done),
            )
            meta = {
                "epoch": epochs_done,
                "seed": cfg.seed,
                "config_hash": chash,
                "code_version": CODE_VERSION,
                "generalized_hessian": cfg.model.activation == "relu",
            }
            for entry in entries:
                tag = "all" if entry.class_id is None else str(entry.class_id)
                csv_name = f"spectrum_{epochs_done}_class{tag}.csv"
                json_name = f"spectrum_{epochs_done}_class{tag}.json"
                save_spectrum(entry, out / csv_name, out / json_name, meta)
                artifacts.extend([csv_name, json_name])
            wrote_ckpt = True
        if epochs_done in cfg.cnc_epochs:
            epoch_for_rho = min(epochs_done, max(cfg.epochs - 1, 0))
            rhos = cfg.cnc.rhos or (cfg.effective_rho(epoch_for_rho),)
            cnc_settings = CncSettings(
                batch_size=cfg.cnc.batch_size, num_batches=cfg.cnc.num_batches,
                mode=cfg.cnc.mode, spectral=cfg.spectral,
            )
            weights = drw_weights(reweight, epoch_for_rho)
            rows = theorem1_report(
                cfg.model, w, ds, base_loss.with_class_weights(weights),
                rhos, cnc_settings, root.child("cnc", epochs_done),
            )
            csv_name = f"cnc_{epochs_done}.csv"
            json_name = f"cnc_{epochs_done}.json"
            save_theorem1_report(rows, out / csv_name, out / json_name, cnc_settings,
                                 meta={"epoch": epochs_done, "seed": cfg.seed,
                                       "config_hash": chash, "code_version": CODE_VERSION})
            artifacts.extend([csv_name, json_name])
            wrote_ckpt = True
        if wrote_ckpt or epochs_done == cfg.epochs:
            name = f"checkpoint_{epochs_done}.json"
            save_checkpoint(_make_checkpoint(), out / name)
            artifacts.append(name)

    def _make_checkpoint() -> Checkpoint:
        return Checkpoint(
            format_version=CHECKPOINT_FORMAT_VERSION,
            config_hash=chash,
            config=config_to_dict(cfg),
            epoch=epochs_done,
            params=w.data.copy(),
            velocity=state.velocity.copy(),
            step_count=state.step_count,
            rng_states={"batches": batches_rng.get_state(),
                        "optnoise": noise_rng.get_state()},
        )

    epochs_done = start_epoch
    opt = cfg.optimizer
    epoch = start_epoch
    step = 0
    try:
        if start_epoch == 0:
            snapshot(0)
        for epoch in range(start_epoch, cfg.epochs):
            class_w = drw_weights(reweight, epoch)
            epoch_loss = base_loss.with_class_weights(class_w)
            rho = cfg.effective_rho(epoch)
            perm = batches_rng.permutation(n)
            loss_sum = 0.0
            gnorm_sum = 0.0
            last_lr = 0.0
            for step in range(steps_per_epoch):
                idx = perm[step * cfg.batch_size : (step + 1) * cfg.batch_size]
                batch = Batch(ds.features[idx], ds.labels[idx])
                lr = lr_at(cfg.lr, epoch, step, steps_per_epoch)
                last_lr = lr

                def grad_fn(x, _batch=batch, _loss=epoch_loss):
                    return loss_grad(cfg.model, ParamVector(x, layout), _batch, _loss)

                if opt.kind == SGD:
                    value, g = grad_fn(w.data)
                    new = sgd_step(w.data, g, state, lr, opt.momentum)
                    info = {"loss": value, "grad_norm": float(np.linalg.norm(g))}
                elif opt.kind == SAM:
                    new, info = sam_step(grad_fn, w.data, state, lr, rho,
                                         opt.momentum, opt.sam_normalized)
                elif opt.kind == PGD:
                    new, info = pgd_step(grad_fn, w.data, state, lr, opt.pgd_sigma,
                                         opt.momentum)
                else:
                    new, info = lpf_sgd_step(grad_fn, w.data, state, lr,
                                             opt.lpf_mc_iters, opt.lpf_radius,
                                             blocks, opt.momentum)
                w = ParamVector(new, layout)
                loss_sum += info["loss"]
                gnorm_sum += info["grad_norm"]

            epochs_done = epoch + 1
            ev = evaluate(cfg.model, w, test, groups, base_loss)
            record = MetricsRecord(
                epoch=epochs_done,
                train_loss=loss_sum / steps_per_epoch,
                grad_norm=gnorm_sum / steps_per_epoch,
                lr=last_lr,
                rho=rho,
                overall_acc=ev["overall_acc"],
                head_acc=ev["head_acc"],
                mid_acc=ev["mid_acc"],
                tail_acc=ev["tail_acc"],
                per_class_acc=ev["per_class_acc"],
                per_class_loss=ev["per_class_loss"],
                config_hash=chash,
                code_version=CODE_VERSION,
            )
            metrics.append(record)
            metrics_fh.write(",".join(record.csv_row()) + "\n")
            metrics_fh.flush()
            snapshot(epochs_done)

        if epochs_done == cfg.epochs and f"checkpoint_{cfg.epochs}.json" not in artifacts:
            name = f"checkpoint_{cfg.epochs}.json"
            save_checkpoint(_make_checkpoint(), out / name)
            artifacts.append(name)
    except SaddleLabError as exc:
        raise RunAbortedError(
            f"run aborted at epoch {epoch}, step {step}: {exc}"
        ) from exc
    finally:
        metrics_fh.close()

    summary = {
        "config": config_to_dict(cfg),
        "config_hash": chash,
        "code_version": CODE_VERSION,
        "epochs_completed": epochs_done,
        "final": None if not metrics else {
            "overall_acc": metrics[-1].overall_acc,
            "head_acc": metrics[-1].head_acc,
            "mid_acc": metrics[-1].mid_acc,
            "tail_acc": metrics[-1].tail_acc,
            "train_loss": metrics[-1].train_loss,
        },
        "class_counts": list(ds.class_counts),
        "groups": {"head": list(groups.head), "mid": list(groups.mid),
                   "tail": list(groups.tail)},
        "artifacts": sorted(set(artifacts)),
    }
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")

    return RunResult(params=w, metrics=metrics, out_dir=out, config_hash=chash,
                     dataset=ds, test=test, groups=groups,
                     artifacts=summary["artifacts"])


# --------------------------------------------------------------------------
# rho sweep
# --------------------------------------------------------------------------

@dataclass
class SweepRow:
    rho: float
    overall_acc: float | None
    tail_acc: float | None
    tail_lambda_min: float | None
    error: str | None = None


def tail_lambda_min(cfg: ExperimentConfig, result: RunResult) -> float | None:
    """Mean minimum eigenvalue over the tail-group class Hessians at the final
    parameters (unweighted loss, matching the class-wise analysis)."""
    if not result.groups.tail:
        return None
    loss = cfg.loss.bind(result.dataset.class_counts)
    vals = []
    for cid in result.groups.tail:
        batch = per_class_batch(result.dataset, cid)
        oracle = HvpOracle.for_batch(cfg.model, result.params, batch, loss)
        ex = extreme_eigs(oracle, cfg.spectral.lanczos_iters,
                          cfg.spectral.residual_tol,
                          SeededRng(cfg.seed).child("tail-eig", cid),
                          max_refine_iters=cfg.spectral.max_refine_iters)
        vals.append(ex.lambda_min)
    return float(np.mean(vals))


def sweep_rho(base_cfg: ExperimentConfig, rho_values, out_dir=None) -> list:
    """One full run per rho (shared seed and data), collecting overall/tail
    accuracy and the final tail-class minimum eigenvalue. Per-run failures are
    recorded in the row and the sweep continues."""
    rho_values = list(rho_values)
    if not rho_values:
        raise ParameterError("rho_values must be non-empty")
    out = resolve_output_dir(str(Path(base_cfg.output_dir) / "sweep"), out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, rho in enumerate(rho_values):
        cfg = dataclasses.replace(
            base_cfg,
            optimizer=dataclasses.replace(base_cfg.optimizer, rho=rho, rho_drw=rho),
            rho_schedule=RhoSchedule(),
            output_dir=str(out / f"rho_{i}_{rho:g}"),
        )
        try:
            result = run_experiment(cfg, out_dir=out / f"rho_{i}_{rho:g}")
            last = result.metrics[-1] if result.metrics else None
            rows.append(SweepRow(
                rho=rho,
                overall_acc=None if last is None else last.overall_acc,
                tail_acc=None if last is None else last.tail_acc,
                tail_lambda_min=tail_lambda_min(cfg, result),
            ))
        except Exception as exc:  # noqa: BLE001 - sweep must survive bad cells
            rows.append(SweepRow(rho=rho, overall_acc=None, tail_acc=None,
                                 tail_lambda_min=None, error=str(exc)))
    _write_sweep_csv(rows, out / "sweep.csv")
    return rows


def _write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("rho,overall_acc,tail_acc,tail_lambda_min,error\n")
        for r in rows:
            opt = lambda v: "" if v is None else _fmt(v)
            err = "" if r.error is None else r.error.replace(",", ";").replace("\n", " ")
            fh.write(f"{_fmt(r.rho)},{opt(r.overall_acc)},{opt(r.tail_acc)},"
                     f"{opt(r.tail_lambda_min)},{err}\n")
