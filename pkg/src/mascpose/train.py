"""Training: AdamW, the deterministic end-to-end loop, and ablation runs.

The optimizer operates directly on the model's named parameter tensors in a
fixed order, so a (seed, config, data) triple reproduces the training
trajectory bit for bit. Input 2D sequences are standardized per sequence
(pixel mean/std over x and y) and 3D targets are scaled from millimetres to
metres for optimization; predictions are scaled back to millimetres for
every reported metric.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericError, ParameterError
from .losses import LossWeights, total_loss
from .metrics import MetricReport, mpjpe
from .model import ModelConfig, PoseLiftModel
from .skeleton import SkeletonTopology
from .tensor import Tensor, scale as tscale

MM_PER_METRE = 1000.0

ABLATION_VARIANTS = {
    "baseline": {"use_amtm": False, "use_sagcn": False},
    "only_amtm": {"use_amtm": True, "use_sagcn": False},
    "only_sagcn": {"use_amtm": False, "use_sagcn": True},
    "no_adaptive_agg": {"adaptive_aggregation": False},
    "no_multiscale_fusion": {"multiscale_fusion": False},
    "full": {},
}


@dataclass
class TrainConfig:
    lr: float = 5e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    epochs: int = 10
    batch_size: int = 6
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    checkpoint_every: int = 0  # epochs between intermediate checkpoints; 0 = final only

    def __post_init__(self):
        if self.lr <= 0:
            raise ParameterError(f"lr must be positive, got {self.lr}")
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ParameterError(f"betas must lie in [0, 1), got {self.betas}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")

    @staticmethod
    def from_json(text: str) -> "TrainConfig":
        obj = json.loads(text)
        if "loss_weights" in obj:
            obj["loss_weights"] = LossWeights(**obj["loss_weights"])
        if "betas" in obj:
            obj["betas"] = tuple(obj["betas"])
        known = set(TrainConfig.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ParameterError(f"unknown train config fields: {sorted(unknown)}")
        return TrainConfig(**obj)

    @staticmethod
    def load(path) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return TrainConfig.from_json(fh.read())


class AdamW:
    """Decoupled weight decay Adam over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        cfg = self.cfg
        b1, b2 = cfg.betas
        self.step_count += 1
        t = self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if np.any(np.isnan(g)):
                raise NumericError(f"NaN gradient for parameter {name!r} at step {t}")
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * (g * g)
            m_hat = self.m[name] / (1.0 - b1**t)
            v_hat = self.v[name] / (1.0 - b2**t)
            p.data = p.data - cfg.lr * cfg.weight_decay * p.data
            p.data = p.data - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


# -- data adaptation -----------------------------------------------------------


def normalize_input(x2d: np.ndarray) -> np.ndarray:
    """Standardize pixel coordinates per sequence; confidence passes through."""
    x2d = np.asarray(x2d, dtype=np.float64)
    xy = x2d[..., :2]
    mu = xy.mean(axis=(0, 1))
    sd = max(float(xy.std()), 1e-6)
    out = x2d.copy()
    out[..., :2] = (xy - mu) / sd
    return out


def targets_to_model(y_mm: np.ndarray) -> np.ndarray:
    return np.asarray(y_mm, dtype=np.float64) / MM_PER_METRE


def prediction_to_mm(pred: np.ndarray) -> np.ndarray:
    return np.asarray(pred, dtype=np.float64) * MM_PER_METRE


def prepare_dataset(pairs) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """(normalized 2D, metre-scale target, mm target) per sequence."""
    out = []
    for item in pairs:
        x2d, y3d = item[0], item[1]
        out.append((normalize_input(x2d), targets_to_model(y3d), np.asarray(y3d, dtype=np.float64)))
    return out


def predict_mm(model: PoseLiftModel, x2d: np.ndarray, collect: dict | None = None) -> np.ndarray:
    """Eval-mode forward on raw pixel input, prediction in millimetres."""
    pred = model.forward(normalize_input(x2d), training=False, collect=collect)
    return prediction_to_mm(pred.data)


def evaluate(model: PoseLiftModel, pairs) -> MetricReport:
    return MetricReport.from_pairs((predict_mm(model, x), np.asarray(y, dtype=np.float64)) for x, y, *_ in pairs)


def eval_mpjpe(model: PoseLiftModel, prepared) -> float:
    errs = [mpjpe(prediction_to_mm(model.forward(xn, training=False).data), ymm) for xn, _, ymm in prepared]
    return float(np.mean(errs))


# -- training loop ----------------------------------------------------------------


@dataclass
class TrainResult:
    steps: int
    initial_mpjpe_mm: float
    final_mpjpe_mm: float
    checkpoint_path: str | None
    log_path: str | None


def train(
    model: PoseLiftModel,
    train_cfg: TrainConfig,
    pairs,
    out_dir=None,
    step_hook=None,
) -> TrainResult:
    """Run the full loop; writes ``train_log.jsonl`` and checkpoints under out_dir.

    ``step_hook(step, model, collect)`` is called after every optimizer step
    with the gate values collected during that step's first-sequence forward.
    """
    prepared = prepare_dataset(pairs)
    opt = AdamW(model.params, train_cfg)
    rng = np.random.default_rng(train_cfg.seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    log_lines: list[str] = []

    def log(record: dict) -> None:
        log_lines.append(json.dumps(record, sort_keys=True))

    initial = eval_mpjpe(model, prepared)
    log({"step": 0, "epoch": 0, "L_m": None, "L_s": None, "L_v": None, "L_d": None,
         "total": None, "mpjpe_eval": initial})

    step = 0
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(len(prepared))
        for start in range(0, len(prepared), train_cfg.batch_size):
            batch = [prepared[i] for i in order[start : start + train_cfg.batch_size]]
            model.zero_grad()
            collect: dict = {}
            losses = []
            parts_acc = np.zeros(4)
            for bi, (xn, ym, _) in enumerate(batch):
                pred = model.forward(xn, training=True, collect=collect if bi == 0 else None)
                loss_i, parts = total_loss(pred, ym, train_cfg.loss_weights)
                losses.append(loss_i)
                parts_acc += [parts.position, parts.scale, parts.velocity, parts.drift]
            total = losses[0]
            for extra in losses[1:]:
                total = total + extra
            total = tscale(total, 1.0 / len(losses))
            parts_acc /= len(batch)
            if not np.isfinite(total.data):
                raise NumericError(
                    f"non-finite loss at step {step + 1}: "
                    f"L_m={parts_acc[0]:.6g} L_s={parts_acc[1]:.6g} "
                    f"L_v={parts_acc[2]:.6g} L_d={parts_acc[3]:.6g}"
                )
            total.backward()
            opt.step()
            step += 1
            record = {
                "step": step,
                "epoch": epoch,
                "L_m": parts_acc[0],
                "L_s": parts_acc[1],
                "L_v": parts_acc[2],
                "L_d": parts_acc[3],
                "total": float(total.data),
                "mpjpe_eval": None,
            }
            if step_hook is not None:
                step_hook(step, model, collect)
            is_epoch_end = start + train_cfg.batch_size >= len(prepared)
            if is_epoch_end and (epoch == train_cfg.epochs or
                                 (train_cfg.checkpoint_every and epoch % train_cfg.checkpoint_every == 0)):
                record["mpjpe_eval"] = eval_mpjpe(model, prepared)
            log(record)
            if out is not None and is_epoch_end and train_cfg.checkpoint_every \
                    and epoch % train_cfg.checkpoint_every == 0 and epoch != train_cfg.epochs:
                model.save(out / f"checkpoint_epoch{epoch:05d}.ckpt")

    final = eval_mpjpe(model, prepared)
    ckpt_path = None
    log_path = None
    if out is not None:
        ckpt_path = str(out / "checkpoint_final.ckpt")
        model.save(ckpt_path)
        log_path = str(out / "train_log.jsonl")
        Path(log_path).write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    return TrainResult(
        steps=step,
        initial_mpjpe_mm=initial,
        final_mpjpe_mm=final,
        checkpoint_path=ckpt_path,
        log_path=log_path,
    )


# -- ablation harness ----------------------------------------------------------------


def variant_config(base: ModelConfig, variant: str) -> ModelConfig:
    if variant not in ABLATION_VARIANTS:
        raise ParameterError(f"unknown ablation variant {variant!r}; choose from {sorted(ABLATION_VARIANTS)}")
    obj = json.loads(base.to_json())
    obj.update(ABLATION_VARIANTS[variant])
    return ModelConfig(**obj)


def ablation_run(
    variant: str,
    base_cfg: ModelConfig,
    train_cfg: TrainConfig,
    pairs,
    topo: SkeletonTopology | None = None,
    out_dir=None,
) -> dict:
    """Train and evaluate one Table-style variant with everything else fixed."""
    from .profiler import count

    cfg = variant_config(base_cfg, variant)
    model = PoseLiftModel(cfg, topo=topo, seed=train_cfg.seed)
    result = train(model, train_cfg, pairs, out_dir=out_dir)
    report = evaluate(model, pairs)
    cost = count(cfg, topo=model.topo)
    return {
        "variant": variant,
        "params": cost.params_total,
        "macs": cost.macs_total,
        "mpjpe_mm": report.mpjpe_mm,
        "p_mpjpe_mm": report.p_mpjpe_mm,
        "initial_mpjpe_mm": result.initial_mpjpe_mm,
    }


def ablation_table(rows: list[dict]) -> str:
    cols = ["variant", "params", "macs", "mpjpe_mm", "p_mpjpe_mm"]
    table = [cols] + [
        [str(r["variant"]), str(r["params"]), str(r["macs"]),
         f"{r['mpjpe_mm']:.3f}", f"{r['p_mpjpe_mm']:.3f}"]
        for r in rows
    ]
    widths = [max(len(row[i]) for row in table) for i in range(len(cols))]
    lines = []
    for i, row in enumerate(table):
        lines.append("  ".join(cell.ljust(widths[c]) for c, cell in enumerate(row)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)
