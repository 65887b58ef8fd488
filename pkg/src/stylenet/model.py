"""Network assembly: adaptive spatial graph units with optional non-local
refinement, temporal units with an optional time-attention block, the learned
downsampler, classifier and two-stream fusion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Parameter, Tensor
from .checkpoint import CheckpointError, load_arrays, save_arrays
from .hand_graph import build_hand_graph, build_subset_adjacency

NUM_SUBSETS = 3


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs for one stream (both streams share the config)."""

    num_classes: int
    num_vertices: int = 21
    in_channels: int = 3
    channels: tuple = (64, 64, 64, 64, 128, 128, 128, 256, 256, 256)
    temporal_strides: tuple = (1, 1, 1, 1, 2, 1, 1, 2, 1, 1)
    frames: int = 32
    spatial_nonlocal_layer: int | None = 7  # 0-based; the 8th unit
    temporal_nonlocal_layer: int | None = 9  # 0-based; the 10th unit
    use_downsampler: bool = True
    downsampler_hidden: int = 64
    dropout: float = 0.3
    adjacency_sigma: float = 0.001

    def __post_init__(self):
        if len(self.channels) != len(self.temporal_strides):
            raise ValueError("channels and temporal_strides must align")
        if self.num_vertices not in (21, 42):
            raise ValueError("num_vertices must be 21 or 42")

    @property
    def out_frames(self) -> int:
        t = self.frames
        for s in self.temporal_strides:
            t = (t + 2 * 4 - 9) // s + 1
        return t


def tiny_config(num_classes: int = 3, num_vertices: int = 21, frames: int = 8) -> ModelConfig:
    """Small configuration used by tests and desk-scale experiments."""
    return ModelConfig(
        num_classes=num_classes,
        num_vertices=num_vertices,
        channels=(4, 4, 8, 8),
        temporal_strides=(1, 1, 2, 1),
        frames=frames,
        spatial_nonlocal_layer=2,
        temporal_nonlocal_layer=3,
        downsampler_hidden=16,
    )


def _he(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def embed_width(cout: int) -> int:
    """Similarity-embedding channel count for the per-sample graph."""
    return max(4, cout // 4)


def compute_C(f_in: Tensor, w1: Tensor, w2: Tensor) -> Tensor:
    """Per-sample vertex-similarity graph: embed, flatten (C_e * T) per vertex,
    dot-product similarity, row softmax. Rows sum to 1."""
    n, _, t, v = f_in.shape
    e1 = ad.conv2d(f_in, w1)  # (N, Ce, T, V)
    e2 = ad.conv2d(f_in, w2)
    ce = e1.shape[1]
    a = ad.reshape(e1, (n, ce * t, v))
    b = ad.reshape(e2, (n, ce * t, v))
    sim = ad.matmul(ad.transpose(a, (0, 2, 1)), b)  # (N, V, V)
    return ad.softmax_axis(sim, axis=-1)


def spatial_nonlocal_D(ahat: Tensor, theta: Tensor, phi: Tensor, g: Tensor, w_hat: Tensor) -> Tensor:
    """Self-attention over the effective graph's column features, residual add.

    ahat: (N, V, V); theta/phi/g: (d, V); w_hat: (V, d). Affinity scaled by 1/d.
    """
    d = theta.shape[0]
    th = ad.matmul(_expand0(theta), ahat)  # (N, d, V)
    ph = ad.matmul(_expand0(phi), ahat)
    gg = ad.matmul(_expand0(g), ahat)
    e = ad.matmul(ad.transpose(th, (0, 2, 1)), ph) * (1.0 / d)  # (N, V, V)
    y = ad.matmul(e, ad.transpose(gg, (0, 2, 1)))  # (N, V, d)
    out = ad.matmul(_expand0(w_hat), ad.transpose(y, (0, 2, 1)))  # (N, V, V)
    return ad.add(out, ahat)


def _expand0(t: Tensor) -> Tensor:
    return ad.reshape(t, (1,) + t.shape)


def graph_apply(f: Tensor, m: Tensor) -> Tensor:
    """Aggregate vertex features: out[..., i] = sum_j m[i, j] * f[..., j]."""
    n = f.shape[0]
    v = m.shape[-1]
    mt = ad.transpose(m, (0, 2, 1)) if m.data.ndim == 3 else ad.transpose(m, (1, 0))
    if mt.data.ndim == 2:
        mt = ad.reshape(mt, (1, 1, v, v))
    else:
        mt = ad.reshape(mt, (n, 1, v, v))
    return ad.matmul(f, mt)


class _Module:
    """Tiny parameter/buffer registry shared by all blocks."""

    def __init__(self, name: str):
        self.name = name
        self._params: dict[str, Parameter] = {}
        self._bn_states: dict[str, BatchNormState] = {}
        self._children: list[_Module] = []

    def _param(self, suffix: str, data, exempt: bool = False) -> Parameter:
        p = Parameter(data, name=f"{self.name}.{suffix}", weight_decay_exempt=exempt)
        self._params[p.name] = p
        return p

    def _bn_state(self, suffix: str, n: int, dtype) -> BatchNormState:
        st = BatchNormState(n, dtype=dtype)
        self._bn_states[f"{self.name}.{suffix}"] = st
        return st

    def parameters(self) -> list[Parameter]:
        out = list(self._params.values())
        for c in self._children:
            out.extend(c.parameters())
        return out

    def bn_states(self) -> dict[str, BatchNormState]:
        out = dict(self._bn_states)
        for c in self._children:
            out.update(c.bn_states())
        return out


class SpatialUnit(_Module):
    """Adaptive graph convolution over the three neighborhood subsets."""

    def __init__(self, name, cin, cout, v, a_tilde, nonlocal_block, rng, dtype):
        super().__init__(name)
        self.cin, self.cout, self.v = cin, cout, v
        self.nonlocal_block = nonlocal_block
        self.a_tilde = a_tilde.astype(dtype)  # (3, V, V) constant
        ce = embed_width(cout)
        self.d = (v + 1) // 2
        self.w = [self._param(f"w{k}.weight", _he(rng, (cout, cin, 1, 1), cin, dtype)) for k in range(NUM_SUBSETS)]
        self.b_adj = [
            self._param(f"b{k}.adj", np.zeros((v, v), dtype=dtype)) for k in range(NUM_SUBSETS)
        ]
        self.emb1 = [self._param(f"emb1_{k}.weight", _he(rng, (ce, cin, 1, 1), cin, dtype)) for k in range(NUM_SUBSETS)]
        self.emb2 = [self._param(f"emb2_{k}.weight", _he(rng, (ce, cin, 1, 1), cin, dtype)) for k in range(NUM_SUBSETS)]
        if nonlocal_block:
            self.theta = [self._param(f"theta{k}", _he(rng, (self.d, v), v, dtype)) for k in range(NUM_SUBSETS)]
            self.phi = [self._param(f"phi{k}", _he(rng, (self.d, v), v, dtype)) for k in range(NUM_SUBSETS)]
            self.g = [self._param(f"g{k}", _he(rng, (self.d, v), v, dtype)) for k in range(NUM_SUBSETS)]
            # zero re-projection: the unit starts exactly at its non-non-local behavior
            self.w_hat = [self._param(f"w_hat{k}", np.zeros((v, self.d), dtype=dtype)) for k in range(NUM_SUBSETS)]
        self.gamma = self._param("bn.gamma", np.ones(cout, dtype=dtype), exempt=True)
        self.beta = self._param("bn.beta", np.zeros(cout, dtype=dtype), exempt=True)
        self.bn = self._bn_state("bn", cout, dtype)
        if cin != cout:
            self.res_w = self._param("res.weight", _he(rng, (cout, cin, 1, 1), cin, dtype))
        else:
            self.res_w = None

    def effective_graph(self, x: Tensor, k: int) -> Tensor:
        c_k = compute_C(x, self.emb1[k], self.emb2[k])
        a_t = Tensor(self.a_tilde[k][None, :, :])
        ahat = ad.add(ad.add(a_t, _expand0(self.b_adj[k])), c_k)
        if self.nonlocal_block:
            return spatial_nonlocal_D(ahat, self.theta[k], self.phi[k], self.g[k], self.w_hat[k])
        return ahat

    def forward(self, x: Tensor, training: bool, frozen_graphs=None) -> Tensor:
        agg = None
        for k in range(NUM_SUBSETS):
            if frozen_graphs is not None:
                m = Tensor(np.asarray(frozen_graphs[k], dtype=x.dtype))
            else:
                m = self.effective_graph(x, k)
            term = graph_apply(ad.conv2d(x, self.w[k]), m)
            agg = term if agg is None else ad.add(agg, term)
        y = ad.batch_norm(agg, self.gamma, self.beta, self.bn, training)
        res = x if self.res_w is None else ad.conv2d(x, self.res_w)
        return ad.relu(ad.add(y, res))


class TemporalUnit(_Module):
    """9x1 temporal convolution, optional all-positions attention, residual."""

    def __init__(self, name, channels, stride, nonlocal_block, rng, dtype):
        super().__init__(name)
        self.channels = channels
        self.stride = stride
        self.nonlocal_block = nonlocal_block
        self.conv_w = self._param("conv.weight", _he(rng, (channels, channels, 9, 1), channels * 9, dtype))
        self.gamma = self._param("bn.gamma", np.ones(channels, dtype=dtype), exempt=True)
        self.beta = self._param("bn.beta", np.zeros(channels, dtype=dtype), exempt=True)
        self.bn = self._bn_state("bn", channels, dtype)
        if nonlocal_block:
            c2 = max(1, channels // 2)
            self.c2 = c2
            self.theta = self._param("theta.weight", _he(rng, (c2, channels, 1, 1), channels, dtype))
            self.phi = self._param("phi.weight", _he(rng, (c2, channels, 1, 1), channels, dtype))
            self.g = self._param("g.weight", _he(rng, (c2, channels, 1, 1), channels, dtype))
            self.w_out = self._param("w_out.weight", np.zeros((channels, c2, 1, 1), dtype=dtype))
        if stride != 1:
            self.res_w = self._param("res.weight", _he(rng, (channels, channels, 1, 1), channels, dtype))
        else:
            self.res_w = None

    def _attend(self, x: Tensor) -> Tensor:
        n, c, t, v = x.shape
        p = t * v
        th = ad.reshape(ad.conv2d(x, self.theta), (n, self.c2, p))
        ph = ad.reshape(ad.conv2d(x, self.phi), (n, self.c2, p))
        gg = ad.reshape(ad.conv2d(x, self.g), (n, self.c2, p))
        e = ad.matmul(ad.transpose(th, (0, 2, 1)), ph) * (1.0 / p)  # (N, P, P)
        y = ad.matmul(e, ad.transpose(gg, (0, 2, 1)))  # (N, P, C/2)
        y = ad.reshape(ad.transpose(y, (0, 2, 1)), (n, self.c2, t, v))
        return ad.add(ad.conv2d(y, self.w_out), x)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        h = ad.conv2d(x, self.conv_w, stride_t=self.stride, pad_t=4)
        h = ad.batch_norm(h, self.gamma, self.beta, self.bn, training)
        if self.nonlocal_block:
            h = self._attend(h)
        res = x if self.res_w is None else ad.conv2d(x, self.res_w, stride_t=self.stride)
        return ad.relu(ad.add(h, res))


class Downsampler(_Module):
    """Shared fc-bn-fc map squeezing each channel's (T, V) map to one scalar."""

    def __init__(self, name, t, v, hidden, rng, dtype):
        super().__init__(name)
        self.in_features = t * v
        self.hidden = hidden
        self.w1 = self._param("fc1.weight", _he(rng, (hidden, t * v), t * v, dtype))
        self.b1 = self._param("fc1.bias", np.zeros(hidden, dtype=dtype))
        self.gamma = self._param("bn.gamma", np.ones(hidden, dtype=dtype), exempt=True)
        self.beta = self._param("bn.beta", np.zeros(hidden, dtype=dtype), exempt=True)
        self.bn = self._bn_state("bn", hidden, dtype)
        # zero re-projection, like the non-local blocks: the summarizer starts
        # silent and is grown by the optimizer instead of injecting noise
        self.w2 = self._param("fc2.weight", np.zeros((1, hidden), dtype=dtype))
        self.b2 = self._param("fc2.bias", np.zeros(1, dtype=dtype))

    def forward(self, x: Tensor, training: bool) -> Tensor:
        n, c, t, v = x.shape
        if t * v != self.in_features:
            raise ValueError(f"downsampler expects T*V={self.in_features}, got {t * v}")
        flat = ad.reshape(x, (n * c, t * v))
        h = ad.fully_connected(flat, self.w1, self.b1)
        h = ad.batch_norm(h, self.gamma, self.beta, self.bn, training)
        out = ad.fully_connected(h, self.w2, self.b2)
        return ad.reshape(out, (n, c))


class Stream(_Module):
    """One full stream: input BN, stacked spatial/temporal units, downsample,
    dropout, classifier."""

    def __init__(self, name, cfg: ModelConfig, rng, dtype):
        super().__init__(name)
        self.cfg = cfg
        graph = build_hand_graph("one" if cfg.num_vertices == 21 else "two")
        adj = build_subset_adjacency(graph, sigma=cfg.adjacency_sigma)
        self.in_gamma = self._param("input_bn.gamma", np.ones(cfg.in_channels, dtype=dtype), exempt=True)
        self.in_beta = self._param("input_bn.beta", np.zeros(cfg.in_channels, dtype=dtype), exempt=True)
        self.in_bn = self._bn_state("input_bn", cfg.in_channels, dtype)
        self.layers = []
        cin = cfg.in_channels
        for i, (cout, stride) in enumerate(zip(cfg.channels, cfg.temporal_strides)):
            su = SpatialUnit(
                f"{name}.layer{i}.spatial",
                cin,
                cout,
                cfg.num_vertices,
                adj.matrices,
                nonlocal_block=(i == cfg.spatial_nonlocal_layer),
                rng=rng,
                dtype=dtype,
            )
            tu = TemporalUnit(
                f"{name}.layer{i}.temporal",
                cout,
                stride,
                nonlocal_block=(i == cfg.temporal_nonlocal_layer),
                rng=rng,
                dtype=dtype,
            )
            self.layers.append((su, tu))
            self._children.extend([su, tu])
            cin = cout
        if cfg.use_downsampler:
            self.down = Downsampler(
                f"{name}.down", cfg.out_frames, cfg.num_vertices, cfg.downsampler_hidden, rng, dtype
            )
            self._children.append(self.down)
        else:
            self.down = None
        clast = cfg.channels[-1]
        self.fc_w = self._param("classifier.weight", _he(rng, (cfg.num_classes, clast), clast, dtype))
        self.fc_b = self._param("classifier.bias", np.zeros(cfg.num_classes, dtype=dtype))

    def forward(self, x: Tensor, training: bool, rng=None) -> Tensor:
        """(N, C, T, V) input to (N, num_classes) logits."""
        h = ad.batch_norm(x, self.in_gamma, self.in_beta, self.in_bn, training)
        for su, tu in self.layers:
            h = su.forward(h, training)
            h = tu.forward(h, training)
        if self.down is not None:
            h = self.down.forward(h, training)
        else:
            h = ad.mean(h, axis=(2, 3))  # ablation baseline: global average pool
        h = ad.dropout(h, self.cfg.dropout, training, rng)
        return ad.fully_connected(h, self.fc_w, self.fc_b)


def two_stream_predict(joints_logits, bones_logits, alpha, beta):
    """Fused prediction: alpha * joints + beta * bones (works on Tensors or arrays)."""
    if isinstance(joints_logits, Tensor):
        return ad.add(ad.mul(alpha, joints_logits), ad.mul(beta, bones_logits))
    a = alpha.data if isinstance(alpha, Tensor) else alpha
    b = beta.data if isinstance(beta, Tensor) else beta
    return float(a) * joints_logits + float(b) * bones_logits


class TwoStreamModel(_Module):
    """Joints stream + bones stream with trained fusion scalars."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        super().__init__("model")
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(np.random.SeedSequence([0xA11CE, seed]))
        self.joints = Stream("joints", cfg, rng, dtype)
        self.bones = Stream("bones", cfg, rng, dtype)
        self._children.extend([self.joints, self.bones])
        self.alpha = self._param("alpha", np.asarray(1.0, dtype=dtype), exempt=True)
        self.beta = self._param("beta", np.asarray(1.0, dtype=dtype), exempt=True)

    def forward(self, xj: Tensor, xb: Tensor, training: bool = False, rng=None) -> Tensor:
        lj = self.joints.forward(xj, training, rng)
        lb = self.bones.forward(xb, training, rng)
        return two_stream_predict(lj, lb, self.alpha, self.beta)

    def predict_logits(self, xj: np.ndarray, xb: np.ndarray) -> np.ndarray:
        out = self.forward(Tensor(xj.astype(self.dtype)), Tensor(xb.astype(self.dtype)), training=False)
        return out.data

    # -- persistence ----------------------------------------------------
    def state_arrays(self) -> dict:
        arrays = {p.name: p.data for p in self.parameters()}
        for name, st in self.bn_states().items():
            arrays[f"{name}.running_mean"] = st.running_mean
            arrays[f"{name}.running_var"] = st.running_var
        return arrays

    def save(self, path: str) -> None:
        save_arrays(path, self.state_arrays())

    def load(self, path: str) -> None:
        arrays = load_arrays(path)
        own = self.state_arrays()
        missing = set(own) - set(arrays)
        extra = set(arrays) - set(own)
        if missing or extra:
            raise CheckpointError(
                f"checkpoint entry mismatch: missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]}"
            )
        for p in self.parameters():
            if arrays[p.name].shape != p.data.shape:
                raise CheckpointError(f"{p.name}: shape {arrays[p.name].shape} != {p.data.shape}")
            p.data = arrays[p.name].astype(self.dtype)
        for name, st in self.bn_states().items():
            st.running_mean = arrays[f"{name}.running_mean"].astype(st.running_mean.dtype)
            st.running_var = arrays[f"{name}.running_var"].astype(st.running_var.dtype)

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())
