"""Dense dueling Q-network with hand-written reverse mode and Adam.

All parameters live in one flat float64 vector; each layer's weight and bias
are views into it, so optimizer updates are a handful of vector operations.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np

LEAKY_ALPHA = 0.01
CHECKPOINT_VERSION = 1


class ShapeMismatch(ValueError):
    pass


class NoForwardRecorded(RuntimeError):
    pass


def leaky_relu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, z, LEAKY_ALPHA * z)


def leaky_relu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, 1.0, LEAKY_ALPHA)


@dataclass(frozen=True)
class NetSpec:
    input_dim: int
    trunk: tuple[int, ...]
    head_hidden: int
    n_actions: int
    mean_advantage: bool = False

    @classmethod
    def for_observation(cls, obs_size: int, n_actions: int, frames: int = 4, **kw) -> NetSpec:
        """The full-size network: trunk (2O, O, 896, 512), 384-unit heads."""
        return cls(
            input_dim=frames * obs_size,
            trunk=(2 * obs_size, obs_size, 896, 512),
            head_hidden=384,
            n_actions=n_actions,
            **kw,
        )

    def layer_shapes(self) -> list[tuple[str, int, int]]:
        shapes = []
        width = self.input_dim
        for i, h in enumerate(self.trunk):
            shapes.append((f"trunk{i}", width, h))
            width = h
        shapes.append(("adv_hidden", width, self.head_hidden))
        shapes.append(("adv_out", self.head_hidden, self.n_actions))
        shapes.append(("val_hidden", width, self.head_hidden))
        shapes.append(("val_out", self.head_hidden, 1))
        return shapes

    @property
    def n_params(self) -> int:
        return sum(i * o + o for _, i, o in self.layer_shapes())


class QNetwork:
    def __init__(self, spec: NetSpec, theta: np.ndarray | None = None, seed: int | None = None):
        self.spec = spec
        self.theta = np.zeros(spec.n_params)
        self.W: dict[str, np.ndarray] = {}
        self.b: dict[str, np.ndarray] = {}
        offset = 0
        for name, fan_in, fan_out in spec.layer_shapes():
            self.W[name] = self.theta[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            self.b[name] = self.theta[offset : offset + fan_out]
            offset += fan_out
        if theta is not None:
            theta = np.asarray(theta, dtype=float)
            if theta.shape != self.theta.shape:
                raise ShapeMismatch(f"expected {self.theta.shape[0]} parameters, got {theta.shape}")
            self.theta[:] = theta
        else:
            rng = np.random.default_rng(seed)
            for name, fan_in, fan_out in spec.layer_shapes():
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                self.W[name][:] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        self._cache = None

    def copy(self) -> QNetwork:
        return QNetwork(self.spec, theta=self.theta.copy())

    @property
    def trunk_names(self) -> list[str]:
        return [f"trunk{i}" for i in range(len(self.spec.trunk))]

    def forward(self, x: np.ndarray, record: bool = True) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ShapeMismatch(f"input width {x.shape[-1]} != {self.spec.input_dim}")
        cache = {"x": x}
        h = x
        for name in self.trunk_names:
            z = h @ self.W[name] + self.b[name]
            cache[name] = (h, z)
            h = leaky_relu(z)
        za = h @ self.W["adv_hidden"] + self.b["adv_hidden"]
        ha = leaky_relu(za)
        adv = ha @ self.W["adv_out"] + self.b["adv_out"]
        zv = h @ self.W["val_hidden"] + self.b["val_hidden"]
        hv = leaky_relu(zv)
        val = hv @ self.W["val_out"] + self.b["val_out"]
        if self.spec.mean_advantage:
            adv = adv - adv.mean(axis=1, keepdims=True)
        q = val + adv
        if record:
            cache.update(adv_hidden=(h, za), adv_out=(ha, None), val_hidden=(h, zv), val_out=(hv, None))
            self._cache = cache
        return q

    def backward(self, dq: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        """Gradient of sum(dq * Q) w.r.t. theta for the last recorded forward pass."""
        if self._cache is None:
            raise NoForwardRecorded("backward() called without a recorded forward pass")
        c = self._cache
        dq = np.asarray(dq, dtype=float)
        if dq.shape != (c["x"].shape[0], self.spec.n_actions):
            raise ShapeMismatch(f"output gradient shape {dq.shape} does not match the forward batch")
        grad = np.zeros_like(self.theta) if out is None else out
        gW, gb = _views(self.spec, grad)

        dadv = dq - dq.mean(axis=1, keepdims=True) if self.spec.mean_advantage else dq
        dval = dq.sum(axis=1, keepdims=True)

        ha, _ = c["adv_out"]
        np.matmul(ha.T, dadv, out=gW["adv_out"])
        gb["adv_out"][:] = dadv.sum(axis=0)
        h, za = c["adv_hidden"]
        dza = (dadv @ self.W["adv_out"].T) * leaky_relu_grad(za)
        np.matmul(h.T, dza, out=gW["adv_hidden"])
        gb["adv_hidden"][:] = dza.sum(axis=0)

        hv, _ = c["val_out"]
        np.matmul(hv.T, dval, out=gW["val_out"])
        gb["val_out"][:] = dval.sum(axis=0)
        _, zv = c["val_hidden"]
        dzv = (dval @ self.W["val_out"].T) * leaky_relu_grad(zv)
        np.matmul(h.T, dzv, out=gW["val_hidden"])
        gb["val_hidden"][:] = dzv.sum(axis=0)

        dh = dza @ self.W["adv_hidden"].T + dzv @ self.W["val_hidden"].T
        for name in reversed(self.trunk_names):
            h_in, z = c[name]
            dz = dh * leaky_relu_grad(z)
            np.matmul(h_in.T, dz, out=gW[name])
            gb[name][:] = dz.sum(axis=0)
            if name != self.trunk_names[0]:
                dh = dz @ self.W[name].T
        return grad


def _views(spec: NetSpec, flat: np.ndarray):
    W, b = {}, {}
    offset = 0
    for name, fan_in, fan_out in spec.layer_shapes():
        W[name] = flat[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b[name] = flat[offset : offset + fan_out]
        offset += fan_out
    return W, b


# --------------------------------------------------------------------------
# Adam


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    base_lr: float = 1e-4
    decay_rate: float = 0.95
    decay_steps: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    _tmp: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def for_network(cls, net: QNetwork, **kw) -> OptimizerState:
        return cls(m=np.zeros_like(net.theta), v=np.zeros_like(net.theta), **kw)

    def learning_rate(self, step: int | None = None) -> float:
        step = self.step if step is None else step
        return self.base_lr * self.decay_rate ** (step // self.decay_steps)


try:
    import numba
except ImportError:  # pragma: no cover
    numba = None


def _adam_numpy(theta, g, m, v, tmp, b1, b2, lr_hat, eps, sqrt_bc2):
    m *= b1
    np.multiply(g, 1.0 - b1, out=tmp)
    m += tmp
    v *= b2
    np.multiply(g, g, out=tmp)
    tmp *= 1.0 - b2
    v += tmp
    np.sqrt(v, out=tmp)
    tmp /= sqrt_bc2
    tmp += eps
    np.divide(m, tmp, out=tmp)
    tmp *= lr_hat
    theta -= tmp


if numba is not None:

    @numba.njit(cache=True)
    def _adam_fused(theta, g, m, v, tmp, b1, b2, lr_hat, eps, sqrt_bc2):
        # same operation order as _adam_numpy, so both paths round identically
        for i in range(theta.size):
            gi = g[i]
            mi = m[i] * b1 + gi * (1.0 - b1)
            vi = v[i] * b2 + gi * gi * (1.0 - b2)
            m[i] = mi
            v[i] = vi
            theta[i] -= mi / (np.sqrt(vi) / sqrt_bc2 + eps) * lr_hat

    _adam_kernel = _adam_fused
else:  # pragma: no cover
    _adam_kernel = _adam_numpy


def adam_step(net: QNetwork, grads: np.ndarray, opt: OptimizerState) -> tuple[QNetwork, OptimizerState]:
    """In-place Adam update with bias correction and stepped learning-rate decay.

    The learning rate applied is the one for the current step counter, which is
    then incremented.
    """
    if grads.shape != net.theta.shape or opt.m.shape != net.theta.shape:
        raise ShapeMismatch("gradient, moments and parameters must share one shape")
    lr = opt.learning_rate()
    opt.step += 1
    t = opt.step
    if opt._tmp is None or opt._tmp.shape != grads.shape:
        opt._tmp = np.empty_like(grads)
    bc1 = 1.0 - opt.beta1**t
    bc2 = 1.0 - opt.beta2**t
    _adam_kernel(
        net.theta, np.ascontiguousarray(grads, dtype=float), opt.m, opt.v, opt._tmp,
        opt.beta1, opt.beta2, lr / bc1, opt.eps, np.sqrt(bc2),
    )
    return net, opt


# --------------------------------------------------------------------------
# checkpoints

_FIXED_DATE = (1980, 1, 1, 0, 0, 0)


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def write_archive(path, meta: dict, arrays: dict[str, np.ndarray]):
    """Zip container with fixed timestamps so identical content gives identical bytes."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("meta.json", date_time=_FIXED_DATE)
        zf.writestr(info, json.dumps(meta, sort_keys=True, indent=1))
        for name in sorted(arrays):
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_FIXED_DATE)
            zf.writestr(info, _npy_bytes(arrays[name]))


def read_archive(path) -> tuple[dict, dict[str, np.ndarray]]:
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        arrays = {}
        for name in zf.namelist():
            if name.endswith(".npy"):
                arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)
    return meta, arrays


def save_network(path, net: QNetwork, opt: OptimizerState | None = None, extra: dict | None = None):
    meta = {"version": CHECKPOINT_VERSION, "net": asdict(net.spec), "extra": extra or {}}
    arrays = {"theta": net.theta}
    if opt is not None:
        meta["optimizer"] = {
            k: getattr(opt, k)
            for k in ("step", "base_lr", "decay_rate", "decay_steps", "beta1", "beta2", "eps")
        }
        arrays.update(adam_m=opt.m, adam_v=opt.v)
    write_archive(path, meta, arrays)


def net_spec_from_meta(meta: dict) -> NetSpec:
    d = dict(meta)
    d["trunk"] = tuple(d["trunk"])
    return NetSpec(**d)


def load_network(path) -> tuple[QNetwork, OptimizerState | None, dict]:
    meta, arrays = read_archive(path)
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    net = QNetwork(net_spec_from_meta(meta["net"]), theta=arrays["theta"])
    opt = None
    if "optimizer" in meta:
        opt = OptimizerState(m=arrays["adam_m"], v=arrays["adam_v"], **meta["optimizer"])
    return net, opt, meta.get("extra", {})
