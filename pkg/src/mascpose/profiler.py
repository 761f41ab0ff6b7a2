"""Closed-form parameter and multiply-accumulate counting per model config.

Counting convention: only matmul-style kernels cost MACs — dense matmuls at
in*out per token, sparse graph aggregation at nnz * feature-width, and the
cosine similarity matmul at w^2 * d per window. Activations, softmax, batch
norm, elementwise gating products and top-k selection cost 0. This matches
the instrumented counters inside the tensor engine, so the analytic count
equals an instrumented forward exactly.

``macs_per_frame`` covers the frame-proportional compute only; the window
selector runs once per sequence regardless of length and is reported
separately as ``macs_static`` (macs_total = macs_per_frame * T + macs_static).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ParameterError
from .model import ModelConfig
from .skeleton import SkeletonTopology, adjacency_for_config, default_h36m_topology


@dataclass
class CostReport:
    params_total: int
    macs_total: int
    macs_per_frame: int
    macs_static: int
    breakdown: list[tuple[str, int, int]] = field(default_factory=list)

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(
            {
                "params_total": self.params_total,
                "macs_total": self.macs_total,
                "macs_per_frame": self.macs_per_frame,
                "macs_static": self.macs_static,
                "breakdown": [
                    {"name": name, "params": p, "macs": m} for name, p, m in self.breakdown
                ],
            },
            indent=indent,
        )

    def to_table(self) -> str:
        rows = [("module", "params", "macs")]
        rows += [(name, str(p), str(m)) for name, p, m in self.breakdown]
        rows.append(("total", str(self.params_total), str(self.macs_total)))
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = []
        for i, row in enumerate(rows):
            lines.append("  ".join(cell.ljust(widths[c]) for c, cell in enumerate(row)))
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        lines.append(f"macs/frame: {self.macs_per_frame}  (+{self.macs_static} static)")
        return "\n".join(lines)


def count(cfg: ModelConfig, topo: SkeletonTopology | None = None) -> CostReport:
    """Analytic parameter and MAC counts for one forward pass of length T."""
    topo = topo if topo is not None else default_h36m_topology()
    adj = adjacency_for_config(topo, cfg.num_joints, cfg.hop)
    nnz = adj.nnz()
    t, j, d = cfg.seq_len, cfg.num_joints, cfg.dim
    cin, cout, layers = cfg.in_channels, cfg.out_channels, cfg.num_layers
    hid = cfg.selector_hidden

    def lin_params(fi: int, fo: int) -> int:
        return fi * fo + fo

    entries: list[tuple[str, int, int]] = []
    entries.append(("embed", lin_params(cin, d) + j * d, t * j * cin * d))

    if cfg.use_sagcn:
        p = 2 * lin_params(d, d) + 2
        m = t * nnz * d + 2 * t * j * d * d
        entries.append(("blocks.sagcn", layers * p, layers * m))

    macs_static = 0
    if cfg.use_amtm:
        bp = 0
        bm = 0
        for width in cfg.branch_scales():
            n_win = t // width
            k = min(cfg.topk, width)
            bp += 2 * lin_params(d, d) + 2 * d  # two linears + BN affine
            bm += n_win * width * width * (j * d)  # cosine similarity matmul
            bm += 2 * t * j * d * d  # self / neighbour transforms
            bm += n_win * width * k * (j * d)  # sparse temporal aggregation
        entries.append(("blocks.amtm.branches", layers * bp, layers * bm))
        if cfg.has_selector:
            sp = lin_params(d, hid) + lin_params(hid, 3)
            sm = j * d * hid + j * hid * 3
            entries.append(("blocks.amtm.selector", layers * sp, layers * sm))
            macs_static = layers * sm

    entries.append(("blocks.fusion", layers * (lin_params(2 * d, 2)), layers * (t * j * 2 * d * 2)))
    entries.append(("layer_fusion", layers, 0))
    entries.append(("head", lin_params(d, cout), t * j * d * cout))

    params_total = sum(p for _, p, _ in entries)
    macs_total = sum(m for _, _, m in entries)
    per_frame_macs = macs_total - macs_static
    if per_frame_macs % t != 0:
        raise ParameterError("internal error: frame-proportional MACs not divisible by T")
    return CostReport(
        params_total=params_total,
        macs_total=macs_total,
        macs_per_frame=per_frame_macs // t,
        macs_static=macs_static,
        breakdown=entries,
    )
