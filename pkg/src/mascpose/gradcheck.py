"""Central finite-difference verification of analytic gradients.

Two layers: a per-op suite that sweeps every differentiable primitive on
random inputs, and a whole-model check that perturbs randomly sampled
parameter entries of a toy configuration and compares the end-to-end loss
gradient. Relative error uses max(|analytic|, |numeric|, 1e-6) as the
denominator so near-zero pairs agree instead of dividing by noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .losses import total_loss
from .model import ModelConfig, PoseLiftModel
from .tensor import BatchNormState, Tensor

DEFAULT_EPS = 1e-5
OP_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3


@dataclass
class GradCheckEntry:
    name: str
    rel_err: float
    analytic: float = 0.0
    numeric: float = 0.0


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def worst(self) -> GradCheckEntry:
        return max(self.entries, key=lambda e: e.rel_err)

    def passed(self, tolerance: float) -> bool:
        return all(e.rel_err <= tolerance for e in self.entries)

    def summary(self, tolerance: float) -> str:
        status = "PASS" if self.passed(tolerance) else "FAIL"
        w = self.worst
        return (
            f"{status}: {len(self.entries)} checks, worst {w.name} "
            f"rel_err={w.rel_err:.3e} (analytic {w.analytic:.6g}, numeric {w.numeric:.6g})"
        )


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-6)


def check_inputs(build, inputs: list[Tensor], name: str, eps: float = DEFAULT_EPS) -> GradCheckReport:
    """Compare analytic input gradients of ``build(inputs)`` to central differences.

    ``build`` maps the input tensors to a scalar loss Tensor and must be a
    deterministic function of their data.
    """
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    loss = build(inputs)
    loss.backward()
    report = GradCheckReport()
    for i, t in enumerate(inputs):
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = grad.reshape(-1)
        for pos in range(flat.size):
            orig = flat[pos]
            flat[pos] = orig + eps
            up = float(build(inputs).data)
            flat[pos] = orig - eps
            down = float(build(inputs).data)
            flat[pos] = orig
            numeric = (up - down) / (2.0 * eps)
            analytic = float(gflat[pos])
            report.entries.append(
                GradCheckEntry(
                    name=f"{name}[input{i}:{pos}]",
                    rel_err=_rel_err(analytic, numeric),
                    analytic=analytic,
                    numeric=numeric,
                )
            )
    return report


def _away_from_zero(rng, shape, low: float = 0.2, high: float = 2.0) -> np.ndarray:
    return rng.uniform(low, high, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def default_op_cases(seed: int = 0) -> list[tuple[str, callable, list[Tensor]]]:
    """(name, scalar-loss builder, inputs) triples covering every primitive."""
    rng = np.random.default_rng(seed)

    def t(shape, away=False):
        data = _away_from_zero(rng, shape) if away else rng.uniform(-2.0, 2.0, size=shape)
        return Tensor(data)

    def proj(shape):
        return Tensor(rng.uniform(-1.0, 1.0, size=shape))

    cases = []

    def case(name, inputs, fn):
        cases.append((name, fn, inputs))

    a34, b34 = t((3, 4)), t((3, 4))
    c = proj((3, 4))
    case("add", [a34, b34], lambda i: T.tsum(T.mul(T.add(i[0], i[1]), c)))
    case("add_broadcast", [t((3, 4)), t((4,))], lambda i: T.tsum(T.mul(T.add(i[0], i[1]), c)))
    case("sub", [t((3, 4)), t((3, 4))], lambda i: T.tsum(T.mul(T.sub(i[0], i[1]), c)))
    case("mul", [t((3, 4)), t((3, 4))], lambda i: T.tsum(T.mul(T.mul(i[0], i[1]), c)))
    case("mul_broadcast", [t((3, 1)), t((3, 4))], lambda i: T.tsum(T.mul(T.mul(i[0], i[1]), c)))
    case("div", [t((3, 4)), t((3, 4), away=True)], lambda i: T.tsum(T.mul(T.div(i[0], i[1]), c)))
    case("scale", [t((3, 4))], lambda i: T.tsum(T.mul(T.scale(i[0], -1.7), c)))
    case("relu", [t((3, 4), away=True)], lambda i: T.tsum(T.mul(T.relu(i[0]), c)))
    case("sqrt", [Tensor(rng.uniform(0.3, 3.0, (3, 4)))], lambda i: T.tsum(T.mul(T.sqrt(i[0]), c)))
    case(
        "clamp_min",
        [Tensor(rng.uniform(0.2, 2.0, (3, 4)) + 0.3 * rng.choice([-1, 1], (3, 4)))],
        lambda i: T.tsum(T.mul(T.clamp_min(i[0], 0.9), c)),
    )
    cm25 = proj((2, 5))
    case("matmul", [t((2, 3)), t((3, 5))], lambda i: T.tsum(T.mul(T.matmul(i[0], i[1]), cm25)))
    cb = proj((4, 2, 5))
    case(
        "matmul_batched",
        [t((4, 2, 3)), t((3, 5))],
        lambda i: T.tsum(T.mul(T.matmul(i[0], i[1]), cb)),
    )
    cs = proj((3, 5))
    case("softmax", [t((3, 5))], lambda i: T.tsum(T.mul(T.softmax(i[0], axis=-1), cs)))
    c3 = proj((3,))
    case("mean_axis", [t((3, 4))], lambda i: T.tsum(T.mul(T.mean(i[0], axis=1), c3)))
    case("sum_axes", [t((2, 3, 4))], lambda i: T.tsum(T.mul(T.tsum(i[0], axis=(0, 2)), c3)))
    cr = proj((2, 6))
    case("reshape", [t((3, 4))], lambda i: T.tsum(T.mul(T.reshape(i[0], (2, 6)), cr)))
    ct = proj((4, 2, 3))
    case(
        "transpose",
        [t((2, 3, 4))],
        lambda i: T.tsum(T.mul(T.transpose(i[0], (2, 0, 1)), ct)),
    )
    cc = proj((3, 7))
    case(
        "concat",
        [t((3, 4)), t((3, 3))],
        lambda i: T.tsum(T.mul(T.concat([i[0], i[1]], axis=-1), cc)),
    )
    cg = proj((2, 3))
    case("getitem", [t((4, 5))], lambda i: T.tsum(T.mul(i[0][1:3, ::2], cg)))
    cl = proj((3, 5))
    case(
        "linear",
        [t((3, 4)), t((4, 5)), t((5,))],
        lambda i: T.tsum(T.mul(T.linear(i[0], i[1], i[2]), cl)),
    )
    cbn = proj((6, 4))

    def bn_loss(i):
        state = BatchNormState(4)
        return T.tsum(T.mul(T.batch_norm(i[0], i[1], i[2], state, training=True), cbn))

    case("batch_norm", [t((6, 4)), t((4,)), t((4,))], bn_loss)
    ccos = proj((4, 4))
    case(
        "cosine_similarity",
        [t((4, 6), away=True)],
        lambda i: T.tsum(T.mul(T.cosine_similarity_matrix(i[0]), ccos)),
    )
    rows = np.array([0, 0, 1, 2, 2, 3])
    cols = np.array([1, 2, 0, 0, 3, 2])
    vals = rng.uniform(0.3, 1.0, size=6)
    cea = proj((2, 4, 3))
    case(
        "edge_aggregate",
        [t((2, 4, 3))],
        lambda i: T.tsum(T.mul(T.edge_aggregate(i[0], rows, cols, vals, 4), cea)),
    )
    widx = rng.integers(0, 5, size=(2, 5, 2))
    wvals = rng.uniform(0.2, 0.8, size=(2, 5, 2))
    cwa = proj((2, 5, 3))
    case(
        "window_aggregate",
        [t((2, 5, 3))],
        lambda i: T.tsum(T.mul(T.window_aggregate(i[0], widx, wvals), cwa)),
    )
    return cases


def check_ops(seed: int = 0, eps: float = DEFAULT_EPS, cases=None) -> GradCheckReport:
    """Run the per-op finite-difference suite; returns the merged report."""
    report = GradCheckReport()
    for name, fn, inputs in cases if cases is not None else default_op_cases(seed):
        sub = check_inputs(fn, inputs, name, eps=eps)
        report.entries.extend(sub.entries)
    return report


def toy_config() -> ModelConfig:
    return ModelConfig(
        num_layers=2,
        dim=16,
        num_joints=17,
        seq_len=27,
        temporal_scales=[3, 9, 27],
        topk=2,
    )


def check_model(
    cfg: ModelConfig | None = None,
    num_samples: int = 20,
    eps: float = DEFAULT_EPS,
    seed: int = 0,
) -> GradCheckReport:
    """Finite-difference check of the full training loss on sampled parameters."""
    cfg = cfg or toy_config()
    rng = np.random.default_rng(seed)
    model = PoseLiftModel(cfg, seed=seed)
    # nudge the zero-initialized gate layers so their gradients are exercised
    for name, p in model.params.items():
        if np.all(p.data == 0.0):
            p.data = rng.uniform(-0.3, 0.3, size=p.data.shape)
    x2d = rng.uniform(-1.0, 1.0, size=(cfg.seq_len, cfg.num_joints, cfg.in_channels))
    gt = rng.uniform(-0.5, 0.5, size=(cfg.seq_len, cfg.num_joints, cfg.out_channels))
    saved_bn = {k: st.copy() for k, st in model.bn_states.items()}

    def loss_value() -> float:
        for key, st in model.bn_states.items():
            st.running_mean = saved_bn[key].running_mean.copy()
            st.running_var = saved_bn[key].running_var.copy()
        loss, _ = total_loss(model.forward(x2d, training=True), gt)
        return float(loss.data)

    model.zero_grad()
    loss, _ = total_loss(model.forward(x2d, training=True), gt)
    loss.backward()

    names = sorted(model.params)
    report = GradCheckReport()
    for _ in range(num_samples):
        name = names[rng.integers(0, len(names))]
        p = model.params[name]
        pos = int(rng.integers(0, p.size))
        flat = p.data.reshape(-1)
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        analytic = float(grad.reshape(-1)[pos])
        orig = flat[pos]
        flat[pos] = orig + eps
        up = loss_value()
        flat[pos] = orig - eps
        down = loss_value()
        flat[pos] = orig
        numeric = (up - down) / (2.0 * eps)
        report.entries.append(
            GradCheckEntry(
                name=f"{name}[{pos}]",
                rel_err=_rel_err(analytic, numeric),
                analytic=analytic,
                numeric=numeric,
            )
        )
    for key, st in model.bn_states.items():
        st.running_mean = saved_bn[key].running_mean.copy()
        st.running_var = saved_bn[key].running_var.copy()
    return report
