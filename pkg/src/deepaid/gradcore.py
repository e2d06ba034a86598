"""Dense-tensor computation graphs with reverse-mode gradients.

Everything numeric in this package (detector models, interpretation
objectives) is expressed as a :class:`DiffGraph`: an append-only list of
primitive operations over float64 numpy arrays. Graphs are built once,
optionally trained through :meth:`DiffGraph.set_parameter`, then frozen;
evaluation and gradients are pure functions of the inputs so concurrent
calls are safe.

Shapes are declared per input slot as the trailing ("core") shape; every
slot may carry the same extra leading batch dimensions, which lets one
graph serve both single-sample scoring and mini-batch training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GraphError

Array = np.ndarray

# activation / op registry is closed: each op knows its forward and its
# vector-Jacobian product, nothing is pluggable at runtime
_OPS = frozenset({
    "input", "param", "affine", "tanh", "sigmoid", "relu", "softmax",
    "log_softmax", "add", "sub", "mul", "scale", "add_scalar", "mse",
    "l2norm", "sum", "concat", "lookup",
})

_SCALAR_OPS = frozenset({"mse", "l2norm", "sum"})


@dataclass(frozen=True)
class _Node:
    idx: int
    op: str
    args: tuple
    name: str = ""      # set for input/param nodes
    const: float = 0.0  # scale / add_scalar payload


@dataclass
class GradReport:
    """Per-slot outcome of a finite-difference gradient check."""

    max_rel_error: dict = field(default_factory=dict)
    non_differentiable: list = field(default_factory=list)
    tolerance: float = 1e-4

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


class DiffGraph:
    """A small static computation graph with one designated output node.

    Build by calling the op methods, each of which returns a node id that
    later ops consume. ``input`` declares a runtime-supplied slot,
    ``parameter`` a stored array (trainable until :meth:`freeze`).
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._inputs: dict[str, tuple[int, tuple, bool]] = {}  # name -> (idx, core shape, is_int)
        self._params: dict[str, int] = {}
        self._param_values: dict[str, Array] = {}
        self._output: int | None = None
        self._frozen = False

    # ---------------------------------------------------------------- build

    def _new(self, op: str, args: tuple = (), name: str = "", const: float = 0.0) -> int:
        if self._frozen:
            raise GraphError("graph is frozen; build a new graph instead")
        for a in args:
            if not (0 <= a < len(self._nodes)):
                raise GraphError(f"unknown node id {a} for op {op!r}")
        node = _Node(len(self._nodes), op, args, name, const)
        self._nodes.append(node)
        return node.idx

    def input(self, name: str, shape: tuple, integer: bool = False) -> int:
        if name in self._inputs or name in self._params:
            raise GraphError(f"duplicate slot name {name!r}")
        idx = self._new("input", name=name)
        self._inputs[name] = (idx, tuple(shape), integer)
        return idx

    def parameter(self, name: str, value: np.ndarray) -> int:
        if name in self._inputs or name in self._params:
            raise GraphError(f"duplicate slot name {name!r}")
        arr = np.asarray(value, dtype=np.float64).copy()
        idx = self._new("param", name=name)
        self._params[name] = idx
        self._param_values[name] = arr
        return idx

    def affine(self, x: int, w: int, b: int) -> int:
        return self._new("affine", (x, w, b))

    def tanh(self, x: int) -> int:
        return self._new("tanh", (x,))

    def sigmoid(self, x: int) -> int:
        return self._new("sigmoid", (x,))

    def relu(self, x: int) -> int:
        return self._new("relu", (x,))

    def softmax(self, x: int) -> int:
        return self._new("softmax", (x,))

    def log_softmax(self, x: int) -> int:
        return self._new("log_softmax", (x,))

    def add(self, a: int, b: int) -> int:
        return self._new("add", (a, b))

    def sub(self, a: int, b: int) -> int:
        return self._new("sub", (a, b))

    def mul(self, a: int, b: int) -> int:
        return self._new("mul", (a, b))

    def scale(self, x: int, c: float) -> int:
        return self._new("scale", (x,), const=float(c))

    def add_scalar(self, x: int, c: float) -> int:
        return self._new("add_scalar", (x,), const=float(c))

    def mse(self, a: int, b: int) -> int:
        return self._new("mse", (a, b))

    def l2norm(self, x: int) -> int:
        return self._new("l2norm", (x,))

    def sum(self, x: int) -> int:
        return self._new("sum", (x,))

    def concat(self, a: int, b: int) -> int:
        return self._new("concat", (a, b))

    def lookup(self, table: int, index: int) -> int:
        """Row lookup into a parameter table; not differentiable w.r.t. the index."""
        return self._new("lookup", (table, index))

    def output(self, node: int) -> None:
        if not (0 <= node < len(self._nodes)):
            raise GraphError(f"unknown node id {node}")
        self._output = node

    def freeze(self) -> None:
        """Make the graph immutable (parameters become read-only views)."""
        self._frozen = True
        for arr in self._param_values.values():
            arr.setflags(write=False)

    # ------------------------------------------------------------ accessors

    @property
    def input_names(self) -> list[str]:
        return list(self._inputs)

    @property
    def parameter_names(self) -> list[str]:
        return list(self._params)

    def get_parameter(self, name: str) -> Array:
        return self._param_values[name]

    def set_parameter(self, name: str, value: np.ndarray, copy: bool = True) -> None:
        if self._frozen:
            raise GraphError("graph is frozen; parameters are immutable")
        old = self._param_values[name]
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != old.shape:
            raise GraphError(
                f"parameter {name!r} shape {old.shape} cannot become {arr.shape}"
            )
        self._param_values[name] = arr.copy() if copy else arr

    def is_differentiable(self, name: str) -> bool:
        """False for integer input slots (e.g. lookup indices)."""
        if name in self._params:
            return True
        if name in self._inputs:
            return not self._inputs[name][2]
        raise GraphError(f"unknown slot {name!r}")

    # -------------------------------------------------------------- forward

    def _check_inputs(self, inputs: dict) -> dict:
        vals = {}
        batch: tuple | None = None
        for name, (idx, core, is_int) in self._inputs.items():
            if name not in inputs:
                raise GraphError(f"missing input slot {name!r}")
            arr = np.asarray(inputs[name], dtype=np.int64 if is_int else np.float64)
            nd = len(core)
            if nd and (arr.ndim < nd or arr.shape[arr.ndim - nd:] != core):
                raise GraphError(
                    f"input slot {name!r} expects trailing shape {core}, got {arr.shape}"
                )
            lead = arr.shape[: arr.ndim - nd] if nd else arr.shape
            if batch is None:
                batch = lead
            elif lead != batch and lead != () and batch != ():
                raise GraphError(
                    f"input slot {name!r} batch shape {lead} conflicts with {batch}"
                )
            vals[name] = arr
        extra = set(inputs) - set(self._inputs)
        if extra:
            raise GraphError(f"unknown input slots {sorted(extra)!r}")
        return vals

    def _forward(self, inputs: dict) -> list:
        vals = self._check_inputs(inputs)
        out: list = [None] * len(self._nodes)
        for node in self._nodes:
            a = node.args
            if node.op == "input":
                v = vals[node.name]
            elif node.op == "param":
                v = self._param_values[node.name]
            elif node.op == "affine":
                x, w, b = out[a[0]], out[a[1]], out[a[2]]
                if x.shape[-1] != w.shape[1]:
                    raise GraphError(
                        f"node {node.idx}: affine input dim {x.shape[-1]} != weight cols {w.shape[1]}"
                    )
                v = x @ w.T + b
            elif node.op == "tanh":
                v = np.tanh(out[a[0]])
            elif node.op == "sigmoid":
                v = 1.0 / (1.0 + np.exp(-out[a[0]]))
            elif node.op == "relu":
                v = np.maximum(out[a[0]], 0.0)
            elif node.op == "softmax":
                x = out[a[0]]
                e = np.exp(x - np.max(x, axis=-1, keepdims=True))
                v = e / np.sum(e, axis=-1, keepdims=True)
            elif node.op == "log_softmax":
                x = out[a[0]]
                m = np.max(x, axis=-1, keepdims=True)
                z = x - m
                v = z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))
            elif node.op == "add":
                v = out[a[0]] + out[a[1]]
            elif node.op == "sub":
                v = out[a[0]] - out[a[1]]
            elif node.op == "mul":
                v = out[a[0]] * out[a[1]]
            elif node.op == "scale":
                v = out[a[0]] * node.const
            elif node.op == "add_scalar":
                v = out[a[0]] + node.const
            elif node.op == "mse":
                d = out[a[0]] - out[a[1]]
                v = np.float64(np.mean(d * d))
            elif node.op == "l2norm":
                v = np.float64(np.sqrt(np.sum(out[a[0]] ** 2)))
            elif node.op == "sum":
                v = np.float64(np.sum(out[a[0]]))
            elif node.op == "concat":
                v = np.concatenate([out[a[0]], out[a[1]]], axis=-1)
            elif node.op == "lookup":
                table, idx = out[a[0]], out[a[1]]
                v = table[np.asarray(idx, dtype=np.int64)]
            else:  # pragma: no cover - registry is closed
                raise GraphError(f"unknown op {node.op!r}")
            if node.op != "input" or not self._inputs[node.name][2]:
                if not np.all(np.isfinite(v)):
                    raise GraphError(f"non-finite value at node {node.idx} ({node.op})")
            out[node.idx] = v
        return out

    # ------------------------------------------------------------- backward

    def _backward(self, out: list, wrt_idx: set) -> dict:
        if self._output is None:
            raise GraphError("graph has no designated output node")
        root = out[self._output]
        if np.ndim(root) != 0:
            raise GraphError(
                f"gradient needs a scalar output, got shape {np.shape(root)}"
            )
        adj: dict[int, Array] = {self._output: np.float64(1.0)}

        def acc(i: int, g):
            # reduce broadcast gradients back to the producer's shape
            target = np.shape(out[i])
            g = np.asarray(g)
            while g.ndim > len(target):
                g = g.sum(axis=0)
            if i in adj:
                adj[i] = adj[i] + g
            else:
                adj[i] = g

        for node in reversed(self._nodes):
            if node.idx not in adj:
                continue
            g = adj[node.idx]
            a = node.args
            op = node.op
            if op in ("input", "param"):
                continue
            if op == "affine":
                x, w = out[a[0]], out[a[1]]
                acc(a[0], g @ w)
                gm = np.reshape(g, (-1, w.shape[0]))
                if np.ndim(x) == 1:
                    # input broadcast across the batch: sum batch first
                    acc(a[1], np.outer(gm.sum(axis=0), x))
                else:
                    xm = np.reshape(x, (-1, w.shape[1]))
                    acc(a[1], gm.T @ xm)
                acc(a[2], g)
            elif op == "tanh":
                acc(a[0], g * (1.0 - out[node.idx] ** 2))
            elif op == "sigmoid":
                y = out[node.idx]
                acc(a[0], g * y * (1.0 - y))
            elif op == "relu":
                acc(a[0], g * (out[a[0]] > 0.0))
            elif op == "softmax":
                y = out[node.idx]
                acc(a[0], y * (g - np.sum(g * y, axis=-1, keepdims=True)))
            elif op == "log_softmax":
                sm = np.exp(out[node.idx])
                acc(a[0], g - sm * np.sum(g, axis=-1, keepdims=True))
            elif op == "add":
                acc(a[0], g)
                acc(a[1], g)
            elif op == "sub":
                acc(a[0], g)
                acc(a[1], -g)
            elif op == "mul":
                acc(a[0], g * out[a[1]])
                acc(a[1], g * out[a[0]])
            elif op == "scale":
                acc(a[0], g * node.const)
            elif op == "add_scalar":
                acc(a[0], g)
            elif op == "mse":
                d = out[a[0]] - out[a[1]]
                c = g * 2.0 / d.size
                acc(a[0], c * d)
                acc(a[1], -c * d)
            elif op == "l2norm":
                n = out[node.idx]
                x = out[a[0]]
                # subgradient 0 at the origin
                acc(a[0], (g / n) * x if n > 0.0 else np.zeros_like(x))
            elif op == "sum":
                acc(a[0], np.full_like(out[a[0]], g))
            elif op == "concat":
                na = out[a[0]].shape[-1]
                acc(a[0], g[..., :na])
                acc(a[1], g[..., na:])
            elif op == "lookup":
                table = out[a[0]]
                idx = np.asarray(out[a[1]], dtype=np.int64)
                gt = np.zeros_like(table)
                np.add.at(gt, idx, g)
                acc(a[0], gt)
                # index side intentionally receives no gradient
        return {i: adj[i] for i in wrt_idx if i in adj}

    def _slot_idx(self, name: str) -> int:
        if name in self._params:
            return self._params[name]
        if name in self._inputs:
            idx, _, is_int = self._inputs[name]
            if is_int:
                raise GraphError(
                    f"slot {name!r} is an integer lookup index and is non-differentiable"
                )
            return idx
        raise GraphError(f"unknown slot {name!r}")


def evaluate(graph: DiffGraph, inputs: dict, node: int | None = None) -> Array:
    """Forward-evaluate ``graph``; returns the output node (or ``node``) value.

    Pure: identical inputs and parameters give bit-identical results.
    """
    out = graph._forward(inputs)
    target = graph._output if node is None else node
    if target is None:
        raise GraphError("graph has no designated output node")
    v = out[target]
    return np.array(v, dtype=np.float64, copy=True)


def gradient(graph: DiffGraph, inputs: dict, wrt: str) -> Array:
    """d(scalar output)/d(slot ``wrt``), same shape as the slot's tensor."""
    idx = graph._slot_idx(wrt)
    out = graph._forward(inputs)
    grads = graph._backward(out, {idx})
    if idx in grads:
        g = np.asarray(grads[idx], dtype=np.float64)
    else:
        g = np.zeros_like(np.asarray(out[idx], dtype=np.float64))
    return g.copy()


def value_and_grads(graph: DiffGraph, inputs: dict, wrt: list) -> tuple[float, dict]:
    """One forward + one backward pass shared across several slots."""
    idxs = {name: graph._slot_idx(name) for name in wrt}
    out = graph._forward(inputs)
    grads = graph._backward(out, set(idxs.values()))
    res = {}
    for name, idx in idxs.items():
        if idx in grads:
            res[name] = np.asarray(grads[idx], dtype=np.float64)
        else:
            res[name] = np.zeros_like(np.asarray(out[idx], dtype=np.float64))
    return float(out[graph._output]), res


def check_gradient(graph: DiffGraph, inputs: dict, tolerance: float = 1e-4,
                   step: float = 1e-5) -> GradReport:
    """Compare reverse-mode gradients against central finite differences.

    Report-only: never raises on disagreement; integer slots are listed as
    non-differentiable. ``tolerance`` is recorded with the report so callers
    can assert ``report.worst < tolerance``.
    """
    report = GradReport()
    out = graph._forward(inputs)
    if np.ndim(out[graph._output]) != 0:
        raise GraphError("check_gradient needs a scalar-output graph")

    def fd_over(live: Array, eval_inputs: dict) -> Array:
        g = np.zeros(live.shape, dtype=np.float64)
        for i in range(live.size):
            orig = live.flat[i]
            live.flat[i] = orig + step
            hi = float(graph._forward(eval_inputs)[graph._output])
            live.flat[i] = orig - step
            lo = float(graph._forward(eval_inputs)[graph._output])
            live.flat[i] = orig
            g.flat[i] = (hi - lo) / (2.0 * step)
        return g

    for name in list(graph._inputs) + list(graph._params):
        if not graph.is_differentiable(name):
            report.non_differentiable.append(name)
            continue
        exact = gradient(graph, inputs, name)
        if name in graph._params:
            stored = graph._param_values[name]
            live = stored.copy()
            graph._param_values[name] = live
            try:
                approx = fd_over(live, inputs)
            finally:
                graph._param_values[name] = stored
        else:
            live = np.asarray(inputs[name], dtype=np.float64).copy()
            local = dict(inputs)
            local[name] = live
            approx = fd_over(live, local)
        denom = np.maximum(np.abs(approx), 1.0)
        rel = np.max(np.abs(exact - approx) / denom) if exact.size else 0.0
        report.max_rel_error[name] = float(rel)
    report.tolerance = tolerance
    return report
