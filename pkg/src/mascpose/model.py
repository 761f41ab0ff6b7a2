"""2D-to-3D pose lifting network.

Architecture: per-joint linear embedding with a learned joint positional
encoding, followed by a stack of identical blocks and a linear regression
head. Each block runs

  1. a skeleton-constrained spatial GCN that mixes a self transform and a
     k-hop neighbour aggregation through a learned two-way softmax gate,
  2. adaptive multi-scale temporal modelling: the sequence is partitioned
     into non-overlapping windows at three scales, each scale runs a sparse
     temporal graph convolution (top-k cosine-similar timesteps), and a
     per-joint softmax selector mixes the three scale outputs,
  3. a per-position two-way softmax fusion of the temporal output with the
     block input.

Block outputs are combined by a softmax over per-layer scalars before the
regression head. All gates start uniform: gate logits and the final layers
of the gating MLPs are zero-initialized.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import FileFormatError, NumericError, ParameterError, ShapeError
from .skeleton import SkeletonTopology, adjacency_for_config, default_h36m_topology
from .tensor import (
    BatchNormState,
    Tensor,
    add,
    batch_norm,
    concat,
    cosine_similarity_matrix,
    edge_aggregate,
    linear,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    scale,
    softmax,
    sub,
    topk_mask,
    window_aggregate,
)

CHECKPOINT_MAGIC = b"MASCCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    """All architectural hyperparameters and ablation switches."""

    num_layers: int = 16
    dim: int = 128
    num_joints: int = 17
    seq_len: int = 243
    temporal_scales: list[int] = field(default_factory=lambda: [9, 27, 81])
    topk: int = 2
    hop: int = 1
    in_channels: int = 3
    out_channels: int = 3
    use_amtm: bool = True
    use_sagcn: bool = True
    adaptive_aggregation: bool = True
    multiscale_fusion: bool = True

    def __post_init__(self):
        self.temporal_scales = [int(s) for s in self.temporal_scales]
        self.validate()

    def validate(self) -> None:
        if self.num_layers < 1:
            raise ParameterError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.dim < 4:
            raise ParameterError(f"dim must be >= 4, got {self.dim}")
        if self.num_joints < 1:
            raise ParameterError(f"num_joints must be >= 1, got {self.num_joints}")
        if self.seq_len < 1:
            raise ParameterError(f"seq_len must be >= 1, got {self.seq_len}")
        if len(self.temporal_scales) != 3:
            raise ParameterError(f"expected 3 temporal scales, got {self.temporal_scales}")
        if any(b <= a for a, b in zip(self.temporal_scales, self.temporal_scales[1:])):
            raise ParameterError(f"temporal scales must be strictly increasing, got {self.temporal_scales}")
        for s in self.temporal_scales:
            if self.seq_len % s != 0:
                raise ParameterError(f"temporal scale {s} does not divide seq_len {self.seq_len}")
        if not 1 <= self.topk <= self.temporal_scales[0]:
            raise ParameterError(f"topk {self.topk} must be in [1, {self.temporal_scales[0]}]")
        if self.hop < 1:
            raise ParameterError(f"hop must be >= 1, got {self.hop}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ParameterError("channel counts must be positive")

    @property
    def selector_hidden(self) -> int:
        return max(self.dim // 4, 1)

    def branch_scales(self) -> list[int]:
        """Temporal window widths actually instantiated per block."""
        if self.multiscale_fusion:
            return list(self.temporal_scales)
        return [self.temporal_scales[1]]

    @property
    def has_selector(self) -> bool:
        return self.use_amtm and self.multiscale_fusion and self.adaptive_aggregation

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(asdict(self), indent=indent)

    @staticmethod
    def from_json(text: str) -> "ModelConfig":
        obj = json.loads(text)
        known = {f for f in ModelConfig.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ParameterError(f"unknown model config fields: {sorted(unknown)}")
        return ModelConfig(**obj)

    @staticmethod
    def load(path) -> "ModelConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return ModelConfig.from_json(fh.read())


def partition(h: Tensor, width: int) -> Tensor:
    """Reshape [T, J, D] into non-overlapping windows [T/width, width, J, D]."""
    t, j, d = h.shape
    if t % width != 0:
        raise ParameterError(f"window width {width} does not divide sequence length {t}")
    return reshape(h, (t // width, width, j, d))


def unpartition(hw: Tensor, seq_len: int) -> Tensor:
    """Inverse of :func:`partition`."""
    n, w, j, d = hw.shape
    if n * w != seq_len:
        raise ShapeError(f"cannot unpartition {hw.shape} into sequence length {seq_len}")
    return reshape(hw, (seq_len, j, d))


def build_temporal_adjacency(features: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-k cosine temporal graph for a batch of windows.

    ``features`` is [n, w, d] (one descriptor per timestep per window).
    Returns (idx, vals, dense): idx/vals are the [n, w, k] rectangular form
    of the row-normalized adjacency, dense is the same graph as [n, w, w].
    The self timestep is always selected; remaining slots take the most
    cosine-similar timesteps with ties broken toward lower index.
    """
    feats = np.asarray(features, dtype=np.float64)
    n, w, _ = feats.shape
    k = min(k, w)
    norms = np.maximum(np.linalg.norm(feats, axis=-1), 1e-8)
    normed = feats / norms[..., None]
    sim = normed @ np.swapaxes(normed, -1, -2)
    # boost the diagonal above the cosine range so self wins every tie
    boosted = sim + 2.0 * np.eye(w)
    order = np.argsort(-boosted, axis=-1, kind="stable")
    idx = order[..., :k]
    vals = np.full((n, w, k), 1.0 / k)
    dense = np.zeros((n, w, w))
    np.put_along_axis(dense, idx, 1.0 / k, axis=-1)
    return idx, vals, dense


class PoseLiftModel:
    """Parameter container plus the forward computation."""

    def __init__(self, cfg: ModelConfig, topo: SkeletonTopology | None = None, seed: int = 0):
        self.cfg = cfg
        self.topo = topo if topo is not None else default_h36m_topology()
        self.adj = adjacency_for_config(self.topo, cfg.num_joints, cfg.hop)
        self._adj_coo = self.adj.coo()
        self.params: dict[str, Tensor] = {}
        self.bn_states: dict[str, BatchNormState] = {}
        self._init_params(seed)

    # -- parameters ----------------------------------------------------------

    def _init_params(self, seed: int) -> None:
        cfg = self.cfg
        rng = np.random.default_rng(seed)

        def lin(name: str, fan_in: int, fan_out: int, zero: bool = False):
            if zero:
                w = np.zeros((fan_in, fan_out))
            else:
                bound = 1.0 / np.sqrt(fan_in)
                w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.params[f"{name}.w"] = Tensor(w, requires_grad=True)
            self.params[f"{name}.b"] = Tensor(np.zeros(fan_out), requires_grad=True)

        d = cfg.dim
        lin("embed.proj", cfg.in_channels, d)
        self.params["embed.pos"] = Tensor(
            rng.uniform(-0.02, 0.02, size=(1, cfg.num_joints, d)), requires_grad=True
        )
        for l in range(cfg.num_layers):
            pre = f"blocks.{l}"
            if cfg.use_sagcn:
                lin(f"{pre}.sagcn.self", d, d)
                lin(f"{pre}.sagcn.nei", d, d)
                self.params[f"{pre}.sagcn.gate_logits"] = Tensor(np.zeros(2), requires_grad=True)
            if cfg.use_amtm:
                for i in range(len(cfg.branch_scales())):
                    bpre = f"{pre}.amtm.branch{i}"
                    lin(f"{bpre}.self", d, d)
                    lin(f"{bpre}.nei", d, d)
                    self.params[f"{bpre}.bn.gamma"] = Tensor(np.ones(d), requires_grad=True)
                    self.params[f"{bpre}.bn.beta"] = Tensor(np.zeros(d), requires_grad=True)
                    self.bn_states[f"{bpre}.bn"] = BatchNormState(d)
                if cfg.has_selector:
                    lin(f"{pre}.amtm.selector.fc1", d, cfg.selector_hidden)
                    lin(f"{pre}.amtm.selector.fc2", cfg.selector_hidden, 3, zero=True)
            lin(f"{pre}.fusion", 2 * d, 2, zero=True)
        self.params["layer_logits"] = Tensor(np.zeros(cfg.num_layers), requires_grad=True)
        lin("head", d, cfg.out_channels)

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # -- sub-forwards ----------------------------------------------------------

    def embed(self, x2d) -> Tensor:
        """Per-joint linear projection plus the joint positional encoding."""
        x = x2d if isinstance(x2d, Tensor) else Tensor(np.asarray(x2d, dtype=np.float64))
        cfg = self.cfg
        if x.shape != (cfg.seq_len, cfg.num_joints, cfg.in_channels):
            raise ShapeError(
                f"input shape {x.shape} != expected "
                f"({cfg.seq_len}, {cfg.num_joints}, {cfg.in_channels})"
            )
        h = linear(x, self.params["embed.proj.w"], self.params["embed.proj.b"])
        return add(h, self.params["embed.pos"])

    def sagcn_forward(self, x: Tensor, layer: int, collect: dict | None = None) -> Tensor:
        """Gated mix of self transform and skeletal neighbour aggregation, per frame."""
        pre = f"blocks.{layer}.sagcn"
        gates = softmax(self.params[f"{pre}.gate_logits"], axis=0)
        rows, cols, vals = self._adj_coo
        agg = edge_aggregate(x, rows, cols, vals, self.cfg.num_joints)
        h_self = linear(x, self.params[f"{pre}.self.w"], self.params[f"{pre}.self.b"])
        h_nei = linear(agg, self.params[f"{pre}.nei.w"], self.params[f"{pre}.nei.b"])
        if collect is not None:
            collect.setdefault("sagcn_gates", {})[layer] = gates.data.copy()
        return relu(add(mul(h_self, gates[0]), mul(h_nei, gates[1])))

    def window_selector(self, h: Tensor, layer: int) -> Tensor:
        """Per-joint scale weights: temporal GAP -> small MLP -> 3-way softmax."""
        pre = f"blocks.{layer}.amtm.selector"
        pooled = mean(h, axis=0)  # [J, D]
        hidden = relu(linear(pooled, self.params[f"{pre}.fc1.w"], self.params[f"{pre}.fc1.b"]))
        logits = linear(hidden, self.params[f"{pre}.fc2.w"], self.params[f"{pre}.fc2.b"])
        return softmax(logits, axis=-1)

    def stgc(self, hw: Tensor, layer: int, branch: int, training: bool = True) -> Tensor:
        """Sparse temporal graph convolution over the timesteps of each window.

        ``hw`` is [n_windows, width, J, D]; parameters are shared across the
        windows of a scale. Timestep descriptors for the similarity graph are
        the flattened joint features of the frame.
        """
        n, w, j, d = hw.shape
        pre = f"blocks.{layer}.amtm.branch{branch}"
        flat = reshape(hw, (n, w, j * d))
        sim = cosine_similarity_matrix(flat)
        k = min(self.cfg.topk, w)
        boosted = sim.data + 2.0 * np.eye(w)
        mask = topk_mask(boosted, k)
        idx = np.argsort(-boosted, axis=-1, kind="stable")[..., :k]
        vals = np.take_along_axis(mask / mask.sum(axis=-1, keepdims=True), idx, axis=-1)
        h_nei = linear(hw, self.params[f"{pre}.nei.w"], self.params[f"{pre}.nei.b"])
        agg = window_aggregate(reshape(h_nei, (n, w, j * d)), idx, vals)
        h_self = linear(hw, self.params[f"{pre}.self.w"], self.params[f"{pre}.self.b"])
        pre_bn = add(reshape(agg, (n, w, j, d)), h_self)
        normed = batch_norm(
            pre_bn,
            self.params[f"{pre}.bn.gamma"],
            self.params[f"{pre}.bn.beta"],
            self.bn_states[f"{pre}.bn"],
            training=training,
        )
        return relu(normed)

    def amtm_forward(
        self, h: Tensor, layer: int, training: bool = True, collect: dict | None = None
    ) -> Tensor:
        """Parallel temporal branches mixed by the (per-joint) scale gate."""
        cfg = self.cfg
        t = h.shape[0]
        branches = []
        for i, width in enumerate(cfg.branch_scales()):
            hw = partition(h, width)
            branches.append(unpartition(self.stgc(hw, layer, i, training), t))
        if not cfg.multiscale_fusion:
            out = branches[0]
            weights = None
        elif cfg.adaptive_aggregation:
            sel = self.window_selector(h, layer)  # [J, 3]
            parts = [
                mul(branches[i], reshape(sel[:, i : i + 1], (1, cfg.num_joints, 1)))
                for i in range(3)
            ]
            out = add(add(parts[0], parts[1]), parts[2])
            weights = sel.data.copy()
        else:
            out = scale(add(add(branches[0], branches[1]), branches[2]), 1.0 / 3.0)
            weights = np.full((cfg.num_joints, 3), 1.0 / 3.0)
        if collect is not None:
            collect.setdefault("selector_weights", {})[layer] = weights
            collect.setdefault("branch_outputs", {})[layer] = branches
            collect.setdefault("amtm_outputs", {})[layer] = out
        return out

    def block_forward(
        self, x_st: Tensor, layer: int, training: bool = True, collect: dict | None = None
    ) -> Tensor:
        """One encoder block: spatial GCN, temporal modelling, gated fusion."""
        cfg = self.cfg
        h = self.sagcn_forward(x_st, layer, collect) if cfg.use_sagcn else x_st
        x_out = self.amtm_forward(h, layer, training, collect) if cfg.use_amtm else h
        pre = f"blocks.{layer}.fusion"
        gates = softmax(
            linear(concat([x_out, x_st], axis=-1), self.params[f"{pre}.w"], self.params[f"{pre}.b"]),
            axis=-1,
        )
        if collect is not None:
            collect.setdefault("fusion_gates", {})[layer] = gates.data.copy()
        return add(mul(x_out, gates[..., 0:1]), mul(x_st, gates[..., 1:2]))

    def forward(self, x2d, training: bool = False, collect: dict | None = None) -> Tensor:
        """Full network: embed, L blocks, progressive layer fusion, head."""
        cur = self.embed(x2d)
        outs = []
        for l in range(self.cfg.num_layers):
            cur = self.block_forward(cur, l, training, collect)
            if not np.all(np.isfinite(cur.data)):
                raise NumericError(f"non-finite features after block {l}")
            outs.append(cur)
        layer_w = softmax(self.params["layer_logits"], axis=0)
        fused = mul(outs[0], layer_w[0])
        for l in range(1, self.cfg.num_layers):
            fused = add(fused, mul(outs[l], layer_w[l]))
        if collect is not None:
            collect["layer_weights"] = layer_w.data.copy()
        pred = linear(fused, self.params["head.w"], self.params["head.b"])
        if not np.all(np.isfinite(pred.data)):
            raise NumericError("non-finite values in regression head output")
        return pred

    # -- gate summaries ----------------------------------------------------------

    def gate_values(self) -> dict[str, np.ndarray]:
        """Current input-independent gate activations (softmaxed logits)."""
        out: dict[str, np.ndarray] = {}
        for l in range(self.cfg.num_layers):
            key = f"blocks.{l}.sagcn.gate_logits"
            if key in self.params:
                logits = self.params[key].data
                e = np.exp(logits - logits.max())
                out[f"sagcn.{l}"] = e / e.sum()
        logits = self.params["layer_logits"].data
        e = np.exp(logits - logits.max())
        out["layer_weights"] = e / e.sum()
        return out

    # -- checkpoint I/O ----------------------------------------------------------

    def _named_arrays(self) -> list[tuple[str, np.ndarray]]:
        items: list[tuple[str, np.ndarray]] = [(k, v.data) for k, v in self.params.items()]
        for key, st in self.bn_states.items():
            items.append((f"{key}.running_mean", st.running_mean))
            items.append((f"{key}.running_var", st.running_var))
        return items

    def save(self, path) -> None:
        buf = io.BytesIO()
        buf.write(CHECKPOINT_MAGIC)
        buf.write(struct.pack("<I", CHECKPOINT_VERSION))
        header = json.dumps({"config": json.loads(self.cfg.to_json())}).encode("utf-8")
        buf.write(struct.pack("<I", len(header)))
        buf.write(header)
        named = self._named_arrays()
        buf.write(struct.pack("<I", len(named)))
        for name, arr in named:
            nb = name.encode("utf-8")
            buf.write(struct.pack("<I", len(nb)))
            buf.write(nb)
            buf.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                buf.write(struct.pack("<I", dim))
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())

    @staticmethod
    def load(path, topo: SkeletonTopology | None = None) -> "PoseLiftModel":
        with open(path, "rb") as fh:
            raw = fh.read()
        view = memoryview(raw)
        off = 0

        def take(n: int) -> memoryview:
            nonlocal off
            if off + n > len(raw):
                raise FileFormatError(f"truncated checkpoint at byte {off}")
            chunk = view[off : off + n]
            off += n
            return chunk

        if bytes(take(8)) != CHECKPOINT_MAGIC:
            raise FileFormatError("not a model checkpoint (bad magic)")
        (version,) = struct.unpack("<I", take(4))
        if version != CHECKPOINT_VERSION:
            raise FileFormatError(
                f"unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )
        (hlen,) = struct.unpack("<I", take(4))
        header = json.loads(bytes(take(hlen)).decode("utf-8"))
        cfg = ModelConfig(**header["config"])
        model = PoseLiftModel(cfg, topo=topo, seed=0)
        (count,) = struct.unpack("<I", take(4))
        expected = dict(model._named_arrays())
        seen = set()
        for _ in range(count):
            (nlen,) = struct.unpack("<I", take(4))
            name = bytes(take(nlen)).decode("utf-8")
            (ndim,) = struct.unpack("<I", take(4))
            shape = tuple(struct.unpack("<I", take(4))[0] for _ in range(ndim))
            size = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
            if name not in expected:
                raise FileFormatError(f"checkpoint tensor {name!r} not part of this model")
            if expected[name].shape != arr.shape:
                raise FileFormatError(
                    f"checkpoint tensor {name!r} has shape {arr.shape}, expected {expected[name].shape}"
                )
            model._assign(name, arr)
            seen.add(name)
        missing = set(expected) - seen
        if missing:
            raise FileFormatError(f"checkpoint is missing tensors: {sorted(missing)[:4]}...")
        return model

    def _assign(self, name: str, arr: np.ndarray) -> None:
        if name in self.params:
            self.params[name].data = np.ascontiguousarray(arr)
        elif name.endswith(".running_mean"):
            self.bn_states[name[: -len(".running_mean")]].running_mean = arr.copy()
        elif name.endswith(".running_var"):
            self.bn_states[name[: -len(".running_var")]].running_var = arr.copy()
        else:
            raise FileFormatError(f"cannot place checkpoint tensor {name!r}")
