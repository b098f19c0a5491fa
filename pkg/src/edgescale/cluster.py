"""Cluster state: nodes, placed containers, capacity accounting."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InvalidParameter


@dataclass(frozen=True)
class Node:
    vcpu: float
    memory_mb: float

    def __post_init__(self):
        if self.vcpu <= 0 or self.memory_mb <= 0:
            raise InvalidParameter("node capacities must be > 0")


@dataclass
class ClusterState:
    """Nodes plus the containers currently placed on them.

    Placement reserves a container's standard vCPU times its current fraction
    and its full memory; deflating a container returns CPU headroom to its
    node. `capacity_vcpu` is the fair-share capacity C.
    """

    nodes: list
    containers: dict = field(default_factory=dict)  # id -> ContainerState

    @property
    def capacity_vcpu(self) -> float:
        return sum(n.vcpu for n in self.nodes)

    def node_free(self, node_id: int) -> tuple:
        node = self.nodes[node_id]
        used_cpu = 0.0
        used_mem = 0.0
        for c in self.containers.values():
            if c.node_id == node_id:
                used_cpu += c.allocated_vcpu
                used_mem += c.memory_mb
        return node.vcpu - used_cpu, node.memory_mb - used_mem

    def of_function(self, function_id: str) -> list:
        return sorted(
            (c for c in self.containers.values() if c.function_id == function_id),
            key=lambda c: c.id,
        )

    def lazy_marked(self) -> list:
        return sorted(
            (c for c in self.containers.values() if c.lazy_marked), key=lambda c: c.id
        )

    def add(self, container):
        self.containers[container.id] = container

    def remove(self, container_id: int):
        self.containers.pop(container_id, None)
