"""Human skeleton topology and normalized spatial adjacency matrices.

The default skeleton is the conventional 17-joint set (pelvis-rooted tree of
16 bones) with joints grouped into lower body, torso and upper body. Spatial
adjacency supports k-hop variants: reachability within <= K hops (self
excluded), symmetrically normalized as D^{-1/2} A D^{-1/2}.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeError

GROUPS = ("lower_body", "torso", "upper_body")

JOINT_NAMES_17 = [
    "root",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "spine",
    "thorax",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
]

# child -> parent for the 16 bones of the default tree
PARENTS_17 = [-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15]

GROUPS_17 = {
    "lower_body": [1, 2, 3, 4, 5, 6],
    "torso": [0, 7, 8, 9, 10],
    "upper_body": [11, 12, 13, 14, 15, 16],
}


@dataclass
class SkeletonTopology:
    """Joint count, bone edges, joint names and body-part grouping."""

    num_joints: int
    edges: list[tuple[int, int]]
    joint_names: list[str]
    groups: dict[str, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        j = self.num_joints
        if j <= 0:
            raise ParameterError(f"num_joints must be positive, got {j}")
        seen = set()
        for a, b in self.edges:
            if not (0 <= a < j and 0 <= b < j):
                raise ParameterError(f"edge ({a},{b}) references a joint outside [0,{j})")
            if a == b:
                raise ParameterError(f"self-loop edge ({a},{b}) not allowed")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise ParameterError(f"duplicate edge ({a},{b})")
            seen.add(key)
        if len(self.joint_names) != j:
            raise ParameterError(f"expected {j} joint names, got {len(self.joint_names)}")
        if self.groups:
            covered = sorted(i for members in self.groups.values() for i in members)
            if covered != list(range(j)):
                raise ParameterError("groups must partition the joint set exactly once")
        if not self._connected():
            raise ParameterError("skeleton graph must be connected")

    def _connected(self) -> bool:
        adj = [[] for _ in range(self.num_joints)]
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        seen = {0}
        stack = [0]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == self.num_joints

    def group_of(self, joint: int) -> str:
        for name, members in self.groups.items():
            if joint in members:
                return name
        raise ParameterError(f"joint {joint} has no group")

    def to_json(self) -> str:
        return json.dumps(
            {
                "num_joints": self.num_joints,
                "edges": [list(e) for e in self.edges],
                "joint_names": self.joint_names,
                "groups": self.groups,
            },
            indent=2,
        )

    @staticmethod
    def from_json(text: str) -> "SkeletonTopology":
        obj = json.loads(text)
        return SkeletonTopology(
            num_joints=int(obj["num_joints"]),
            edges=[tuple(e) for e in obj["edges"]],
            joint_names=list(obj["joint_names"]),
            groups={k: list(v) for k, v in obj.get("groups", {}).items()},
        )

    @staticmethod
    def load(path) -> "SkeletonTopology":
        with open(path, "r", encoding="utf-8") as fh:
            return SkeletonTopology.from_json(fh.read())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())


@dataclass
class SpatialAdjacency:
    """Symmetric, zero-diagonal, D^{-1/2} A D^{-1/2}-normalized adjacency."""

    matrix: np.ndarray
    hop: int

    @property
    def num_joints(self) -> int:
        return self.matrix.shape[0]

    def nnz(self) -> int:
        return int(np.count_nonzero(self.matrix))

    def coo(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rows, cols = np.nonzero(self.matrix)
        return rows, cols, self.matrix[rows, cols]


def default_h36m_topology() -> SkeletonTopology:
    edges = [(p, c) for c, p in enumerate(PARENTS_17) if p >= 0]
    return SkeletonTopology(
        num_joints=17,
        edges=edges,
        joint_names=list(JOINT_NAMES_17),
        groups={k: list(v) for k, v in GROUPS_17.items()},
    )


def k_hop_adjacency(topo: SkeletonTopology, hops: int = 1) -> SpatialAdjacency:
    """Binary reachability within <= hops (self excluded), then D^{-1/2} A D^{-1/2}."""
    if hops < 1:
        raise ParameterError(f"hop count must be >= 1, got {hops}")
    j = topo.num_joints
    a1 = np.zeros((j, j))
    for u, v in topo.edges:
        a1[u, v] = 1.0
        a1[v, u] = 1.0
    reach = np.zeros((j, j), dtype=bool)
    power = np.eye(j, dtype=bool)
    for _ in range(hops):
        power = (power @ (a1 > 0)) > 0
        reach |= power
    np.fill_diagonal(reach, False)
    a = reach.astype(np.float64)
    deg = a.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1e-300)), 0.0)
    norm = a * inv_sqrt[:, None] * inv_sqrt[None, :]
    return SpatialAdjacency(matrix=norm, hop=hops)


def adjacency_for_config(topo: SkeletonTopology, num_joints: int, hops: int) -> SpatialAdjacency:
    if topo.num_joints != num_joints:
        raise ShapeError(f"topology has {topo.num_joints} joints but config expects {num_joints}")
    return k_hop_adjacency(topo, hops)
