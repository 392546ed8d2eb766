"""Network layers with explicit forward/backward passes.

Every layer exposes ``forward(x) -> (y, cache)`` and
``backward(cache, upstream) -> (dx, grads)`` where ``grads`` is a dict of
per-parameter gradient arrays. Gradients are exact (reverse-mode) and
accumulate over the batch dimension. The beta network composes

    beta(z) = gamma_out( hidden_{L-1}( ... hidden_0( gamma_in(z) ) ... ) )

with hidden layers that are either spline-edge (KAN) layers, ReLU dense
layers for the conditional-autoencoder baseline, or nothing at all for the
purely linear special case beta(z) = z gamma_in' gamma_out'.
"""

from __future__ import annotations

from collections.abc import Mapping

import numpy as np

from .errors import ShapeError
from .linalg import as_matrix
from .spline import (
    SplineFunction,
    SplineGrid,
    basis_and_lower,
    deriv_from_lower,
    silu,
    silu_grad,
)

__all__ = [
    "GradientSet",
    "LinearLayer",
    "MlpLayer",
    "KanLayer",
    "BetaNetwork",
    "build_beta_network",
    "beta_to_payload",
    "beta_from_payload",
]

BETA_KINDS = ("kan", "mlp", "linear")


class GradientSet(Mapping):
    """Named gradient arrays mirroring a network's parameter shapes."""

    def __init__(self, arrays: dict[str, np.ndarray]):
        self._arrays = dict(arrays)

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "GradientSet":
        return cls({name: np.zeros_like(arr) for name, arr in params.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def add_scaled(self, other: Mapping[str, np.ndarray], scale: float = 1.0) -> None:
        """In-place self += scale * other over matching names."""
        for name, arr in other.items():
            mine = self._arrays[name]
            if mine.shape != arr.shape:
                raise ShapeError(f"gradient {name!r}: shape {arr.shape} != {mine.shape}")
            mine += scale * arr

    def scale(self, c: float) -> None:
        for arr in self._arrays.values():
            arr *= c

    def check_congruent(self, params: Mapping[str, np.ndarray]) -> None:
        if set(self._arrays) != set(params):
            raise ShapeError("gradient names do not match parameter names")
        for name, arr in params.items():
            if self._arrays[name].shape != arr.shape:
                raise ShapeError(f"gradient {name!r} has shape {self._arrays[name].shape}, "
                                 f"parameter has {arr.shape}")


def _uniform_weight(n_out: int, n_in: int, rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-bound, bound, size=(n_out, n_in))


class LinearLayer:
    """y = x @ weight', no bias. Used for the embeddings and the factor map."""

    def __init__(self, weight):
        self.weight = as_matrix(weight)

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]

    def parameters(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight}

    def forward(self, x: np.ndarray):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"expected batch x {self.n_in}, got {x.shape}")
        return x @ self.weight.T, x

    def backward(self, cache: np.ndarray, upstream: np.ndarray):
        x = cache
        if upstream.shape != (x.shape[0], self.n_out):
            raise ShapeError(f"upstream shape {upstream.shape} != {(x.shape[0], self.n_out)}")
        dx = upstream @ self.weight
        return dx, {"weight": upstream.T @ x}


class MlpLayer:
    """Dense layer with bias and an optional ReLU, for the baseline network.

    The ReLU subgradient at exactly zero is taken to be 0.
    """

    def __init__(self, weight, bias, activation: str = "relu"):
        self.weight = as_matrix(weight)
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} != ({self.weight.shape[0]},)")
        if activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]

    def parameters(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x: np.ndarray):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"expected batch x {self.n_in}, got {x.shape}")
        pre = x @ self.weight.T + self.bias
        y = np.maximum(pre, 0.0) if self.activation == "relu" else pre
        return y, (x, pre)

    def backward(self, cache, upstream: np.ndarray):
        x, pre = cache
        if upstream.shape != pre.shape:
            raise ShapeError(f"upstream shape {upstream.shape} != {pre.shape}")
        dpre = upstream * (pre > 0) if self.activation == "relu" else upstream
        dx = dpre @ self.weight
        return dx, {"weight": dpre.T @ x, "bias": dpre.sum(axis=0)}


class KanLayer:
    """A grid of n_out x n_in learnable spline edges, summed at each output node.

    y[b, i] = sum_j phi_ij(x[b, j]) with
    phi_ij(t) = base_weight[i, j] * silu(t) + coeffs[i, j] . B(clip(t)).

    Parameters are stored stacked: coeffs has shape (n_out, n_in, num_basis)
    and base_weight has shape (n_out, n_in). Every edge shares the grid.
    """

    def __init__(self, grid: SplineGrid, coeffs, base_weight):
        self.grid = grid
        self.coeffs = np.asarray(coeffs, dtype=np.float64)
        self.base_weight = np.asarray(base_weight, dtype=np.float64)
        if self.coeffs.ndim != 3 or self.coeffs.shape[2] != grid.num_basis:
            raise ShapeError(
                f"coeffs must be (n_out, n_in, {grid.num_basis}), got {self.coeffs.shape}"
            )
        if self.base_weight.shape != self.coeffs.shape[:2]:
            raise ShapeError(
                f"base_weight shape {self.base_weight.shape} != {self.coeffs.shape[:2]}"
            )
        if not (np.all(np.isfinite(self.coeffs)) and np.all(np.isfinite(self.base_weight))):
            raise ShapeError("KAN layer parameters must be finite")

    @classmethod
    def random(cls, n_in: int, n_out: int, grid: SplineGrid,
               rng: np.random.Generator, noise_scale: float = 0.1) -> "KanLayer":
        coeffs = rng.uniform(-noise_scale, noise_scale, size=(n_out, n_in, grid.num_basis))
        return cls(grid, coeffs, np.ones((n_out, n_in)))

    @property
    def n_in(self) -> int:
        return self.coeffs.shape[1]

    @property
    def n_out(self) -> int:
        return self.coeffs.shape[0]

    def edge(self, i: int, j: int) -> SplineFunction:
        """The (output i, input j) edge as a standalone spline function."""
        return SplineFunction(
            grid=self.grid,
            coeffs=self.coeffs[i, j].copy(),
            base_weight=float(self.base_weight[i, j]),
        )

    def parameters(self) -> dict[str, np.ndarray]:
        return {"coeffs": self.coeffs, "base_weight": self.base_weight}

    def forward(self, x: np.ndarray):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"expected batch x {self.n_in}, got {x.shape}")
        n = x.shape[0]
        num_basis = self.grid.num_basis
        sx = silu(x)
        flat = x.ravel()
        bases, lower = basis_and_lower(flat, self.grid)
        # y[b, i] = sum_j wb[i,j] silu(x[b,j]) + sum_jm c[i,j,m] B_m(x[b,j])
        y = sx @ self.base_weight.T + bases.reshape(n, -1) @ self.coeffs.reshape(self.n_out, -1).T
        return y, (x, sx, bases.reshape(n, self.n_in, num_basis), flat, lower)

    def backward(self, cache, upstream: np.ndarray):
        x, sx, bases, flat, lower = cache
        n = x.shape[0]
        num_basis = self.grid.num_basis
        if upstream.shape != (n, self.n_out):
            raise ShapeError(f"upstream shape {upstream.shape} != {(n, self.n_out)}")
        dbase_weight = upstream.T @ sx
        dcoeffs = (upstream.T @ bases.reshape(n, -1)).reshape(self.n_out, self.n_in, num_basis)
        dbases = deriv_from_lower(flat, lower, self.grid).reshape(n, self.n_in, num_basis)
        weighted = (upstream @ self.coeffs.reshape(self.n_out, -1)).reshape(n, self.n_in, num_basis)
        dx = silu_grad(x) * (upstream @ self.base_weight) + (weighted * dbases).sum(axis=2)
        return dx, {"coeffs": dcoeffs, "base_weight": dbase_weight}


class BetaNetwork:
    """Maps an N x P characteristic matrix to N x K factor exposures."""

    def __init__(self, kind: str, gamma_in: LinearLayer, hidden: list, gamma_out: LinearLayer):
        if kind not in BETA_KINDS:
            raise ValueError(f"kind must be one of {BETA_KINDS}, got {kind!r}")
        if kind == "linear" and hidden:
            raise ShapeError("linear kind must have no hidden layers")
        if kind == "kan" and not all(isinstance(h, KanLayer) for h in hidden):
            raise ShapeError("kan kind requires KanLayer hidden layers")
        if kind == "mlp" and not all(isinstance(h, MlpLayer) for h in hidden):
            raise ShapeError("mlp kind requires MlpLayer hidden layers")
        dims = [gamma_in.n_out] + [h.n_in for h in hidden]
        chain = [gamma_in.n_out] + [h.n_out for h in hidden]
        if any(a != b for a, b in zip(dims[1:], chain[:-1])):
            raise ShapeError(f"hidden layer dimensions do not chain: {dims[1:]} vs {chain[:-1]}")
        if gamma_out.n_in != chain[-1]:
            raise ShapeError(f"gamma_out expects {gamma_out.n_in} inputs, stack ends at {chain[-1]}")
        self.kind = kind
        self.gamma_in = gamma_in
        self.hidden = list(hidden)
        self.gamma_out = gamma_out

    @property
    def n_chars(self) -> int:
        return self.gamma_in.n_in

    @property
    def n_factors(self) -> int:
        return self.gamma_out.n_out

    def _layers(self):
        yield "gamma_in", self.gamma_in
        for idx, layer in enumerate(self.hidden):
            yield f"hidden.{idx}", layer
        yield "gamma_out", self.gamma_out

    def parameters(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for prefix, layer in self._layers():
            for pname, arr in layer.parameters().items():
                out[f"{prefix}.{pname}"] = arr
        return out

    def forward(self, z: np.ndarray):
        z = as_matrix(z, cols=self.n_chars)
        caches = []
        h = z
        for _, layer in self._layers():
            h, cache = layer.forward(h)
            caches.append(cache)
        return h, caches

    def backward(self, caches, upstream: np.ndarray):
        grads: dict[str, np.ndarray] = {}
        du = upstream
        named = list(self._layers())
        for (prefix, layer), cache in zip(reversed(named), reversed(caches)):
            du, layer_grads = layer.backward(cache, du)
            for pname, arr in layer_grads.items():
                grads[f"{prefix}.{pname}"] = arr
        ordered = {name: grads[name] for name in self.parameters()}
        return du, GradientSet(ordered)


def build_beta_network(
    kind: str,
    n_chars: int,
    n_factors: int,
    *,
    embed_dim: int = 16,
    kan_dims: tuple[int, ...] = (16,),
    mlp_dims: tuple[int, ...] = (32, 16),
    grid: SplineGrid | None = None,
    init_noise: float = 0.1,
    rng: np.random.Generator,
) -> BetaNetwork:
    """Construct a randomly initialized beta network of the given kind.

    kan:    chars -> embed_dim -> kan_dims... -> n_factors, spline hidden layers
    mlp:    chars -> mlp_dims[0] -> ReLU dense through mlp_dims -> n_factors
    linear: chars -> embed_dim -> n_factors with no hidden layers
    """
    grid = grid or SplineGrid()
    if kind == "kan":
        widths = [embed_dim, *kan_dims]
    elif kind == "mlp":
        if not mlp_dims:
            raise ValueError("mlp kind needs at least one hidden width")
        widths = list(mlp_dims)
    elif kind == "linear":
        widths = [embed_dim]
    else:
        raise ValueError(f"kind must be one of {BETA_KINDS}, got {kind!r}")

    gamma_in = LinearLayer(_uniform_weight(widths[0], n_chars, rng))
    hidden: list = []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        if kind == "kan":
            hidden.append(KanLayer.random(n_in, n_out, grid, rng, init_noise))
        else:
            hidden.append(MlpLayer(_uniform_weight(n_out, n_in, rng), np.zeros(n_out), "relu"))
    gamma_out = LinearLayer(_uniform_weight(n_factors, widths[-1], rng))
    return BetaNetwork(kind, gamma_in, hidden, gamma_out)


def _grid_payload(grid: SplineGrid) -> dict:
    return {"lo": grid.lo, "hi": grid.hi, "intervals": grid.intervals, "degree": grid.degree}


def _grid_from_payload(d: dict) -> SplineGrid:
    return SplineGrid(lo=d["lo"], hi=d["hi"], intervals=d["intervals"], degree=d["degree"])


def beta_to_payload(net: BetaNetwork) -> dict:
    """JSON-ready description of a beta network; floats survive exactly."""
    hidden = []
    for layer in net.hidden:
        if isinstance(layer, KanLayer):
            hidden.append({
                "type": "kan",
                "grid": _grid_payload(layer.grid),
                "coeffs": layer.coeffs.tolist(),
                "base_weight": layer.base_weight.tolist(),
            })
        else:
            hidden.append({
                "type": "mlp",
                "weight": layer.weight.tolist(),
                "bias": layer.bias.tolist(),
                "activation": layer.activation,
            })
    return {
        "kind": net.kind,
        "n_chars": net.n_chars,
        "n_factors": net.n_factors,
        "gamma_in": net.gamma_in.weight.tolist(),
        "hidden": hidden,
        "gamma_out": net.gamma_out.weight.tolist(),
    }


def beta_from_payload(payload: dict) -> BetaNetwork:
    hidden: list = []
    for item in payload["hidden"]:
        if item["type"] == "kan":
            hidden.append(KanLayer(
                _grid_from_payload(item["grid"]),
                np.array(item["coeffs"], dtype=np.float64),
                np.array(item["base_weight"], dtype=np.float64),
            ))
        elif item["type"] == "mlp":
            hidden.append(MlpLayer(
                np.array(item["weight"], dtype=np.float64),
                np.array(item["bias"], dtype=np.float64),
                item["activation"],
            ))
        else:
            raise ValueError(f"unknown hidden layer type {item['type']!r}")
    return BetaNetwork(
        payload["kind"],
        LinearLayer(np.array(payload["gamma_in"], dtype=np.float64)),
        hidden,
        LinearLayer(np.array(payload["gamma_out"], dtype=np.float64)),
    )
