"""Shared builders for synthetic models, clusters and random instances."""

from __future__ import annotations

import numpy as np

from coinfer.cluster import ClusterSpec, DeviceSpec
from coinfer.model_ir import ModelSpec, OperatorKind, OperatorSpec, TensorShape


def conv_op(index, c_in, c_out, k=3, s=1, p=1, bias=True):
    return OperatorSpec(index, OperatorKind.CONV, c_in, c_out, k, k, s, p, bias)


def pool_op(index, c, k=2, s=2):
    return OperatorSpec(index, OperatorKind.POOL, c, c, k, k, s, 0, False)


def relu_op(index, c):
    return OperatorSpec(index, OperatorKind.ELEMENTWISE, c, c, 1, 1, 1, 0, False)


def fc_op(index, c_in, c_out, bias=True):
    return OperatorSpec(index, OperatorKind.FULLY_CONNECTED, c_in, c_out,
                        1, 1, 1, 0, bias)


def chain(input_shape: tuple[int, int, int], *ops, name="chain") -> ModelSpec:
    return ModelSpec(name, TensorShape(*input_shape), tuple(ops))


def equal_cluster(m=3, compute=2.0e8, memory=1.0e9, bandwidth=1.0e6,
                  conn_latency=2.0) -> ClusterSpec:
    return ClusterSpec.homogeneous(m, compute=compute, memory=memory,
                                   bandwidth=bandwidth, conn_latency=conn_latency)


def random_instance(rng: np.random.Generator,
                    max_partitionable: int = 8) -> tuple[ModelSpec, ClusterSpec]:
    """A random small conv chain (optionally with an FC tail) plus a random
    cluster. Memory is unbounded so plans never go infeasible."""
    n_partitionable = int(rng.integers(2, max_partitionable + 1))
    n_fc = int(rng.integers(0, min(2, n_partitionable - 1) + 1)) if n_partitionable > 2 else 0
    n_conv = n_partitionable - n_fc

    c = int(rng.integers(2, 9))
    h = int(rng.integers(8, 21))
    input_shape = (c, h, h)
    ops = []
    index = 1
    for _ in range(n_conv):
        c_out = int(rng.integers(2, 25))
        k = int(rng.choice([1, 3, 5]))
        ops.append(conv_op(index, c, c_out, k=k, s=1, p=k // 2,
                           bias=bool(rng.integers(0, 2))))
        c = c_out
        index += 1
        if rng.random() < 0.5:
            ops.append(relu_op(index, c))
            index += 1
        if h >= 4 and rng.random() < 0.35:
            ops.append(pool_op(index, c))
            h = (h - 2) // 2 + 1
            index += 1
    features = c * h * h
    for _ in range(n_fc):
        c_out = int(rng.integers(2, 33))
        ops.append(fc_op(index, features, c_out))
        features = c_out
        index += 1
        if rng.random() < 0.5:
            ops.append(relu_op(index, features))
            index += 1

    model = chain(input_shape, *ops, name="random")

    m = int(rng.integers(2, 5))
    devices = tuple(
        DeviceSpec(j, float(rng.uniform(1e5, 1e6)), 1e12) for j in range(m)
    )
    cluster = ClusterSpec(devices, float(10 ** rng.uniform(3, 6)),
                          float(rng.uniform(0.0, 4.0)))
    return model, cluster
