"""A small transformer encoder classifier with hand-derived gradients.

The model doubles as distillation teacher and student.  Weight slots
come in three forms: dense, masked dense (pruned, zeros frozen), and
factored (a low-rank pair, optionally masked).  Factored slots run as
(x @ A) @ B.T in both passes and are never densified, so the parameter
savings are real compute savings too.

forward exposes a trace at the four supervision points (embedding
output, per-layer attention maps, per-layer hidden states, logits);
backward accepts upstream gradients injected at any subset of those
points and returns exact gradients for every parameter, with masked
positions receiving exactly zero.
"""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import erf

from .budget import transformer_shapes
from .errors import InputError, NonFiniteError, RangeError
from .tensor import DenseMatrix, ParamBundle

LN_EPS = 1e-5
INIT_STD = 0.05


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_dim: int
    num_layers: int
    num_heads: int
    ffn_dim: int
    max_seq_len: int
    num_classes: int

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "num_layers", "num_heads",
                     "ffn_dim", "max_seq_len", "num_classes"):
            if getattr(self, name) < 1:
                raise RangeError(f"{name} must be positive")
        if self.embed_dim % self.num_heads != 0:
            raise RangeError(
                f"embed_dim {self.embed_dim} not divisible by "
                f"num_heads {self.num_heads}"
            )

    @property
    def head_dim(self):
        return self.embed_dim // self.num_heads

    def shapes(self):
        return transformer_shapes(self.vocab_size, self.embed_dim,
                                  self.num_layers, self.ffn_dim,
                                  self.max_seq_len, self.num_classes)


TOY_CONFIG = ModelConfig(vocab_size=64, embed_dim=32, num_layers=2,
                         num_heads=4, ffn_dim=64, max_seq_len=16,
                         num_classes=3)

_CONFIG_KEYS = ("vocab_size", "embed_dim", "num_layers", "num_heads",
                "ffn_dim", "max_seq_len", "num_classes")


def save_config(config, path):
    lines = [f"{k}={getattr(config, k)}" for k in _CONFIG_KEYS]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_config(path):
    try:
        text = Path(path).read_text(encoding="ascii")
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot read config file {path}: {exc}") from exc
    data = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InputError(f"malformed config line {line!r}")
        key, value = line.split("=", 1)
        data[key.strip()] = value.strip()
    try:
        return ModelConfig(**{k: int(data[k]) for k in _CONFIG_KEYS})
    except KeyError as exc:
        raise InputError(f"config file {path} is missing key {exc}") from exc
    except ValueError as exc:
        raise InputError(f"config file {path} has a bad value: {exc}") from exc


@dataclass(frozen=True)
class ForwardTrace:
    """Activations at the four supervision points, batch-first."""

    embedding_out: np.ndarray          # (b, n, d)
    attention: tuple                   # per layer: (b, heads, n, n)
    hidden: tuple                      # per layer: (b, n, d)
    logits: np.ndarray                 # (b, num_classes)


@dataclass
class GradInjections:
    """Upstream gradients to feed into backward; None means zero."""

    embedding: np.ndarray = None
    attention: tuple = None            # per layer or None entries
    hidden: tuple = None
    logits: np.ndarray = None


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def gelu_grad(x):
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return cdf + x * pdf


def softmax(x):
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def _ln_forward(x, gamma, beta):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv_std
    return gamma * xhat + beta, (xhat, inv_std)


def _ln_backward(dy, gamma, cache):
    xhat, inv_std = cache
    dgamma = np.sum(dy * xhat, axis=tuple(range(dy.ndim - 1)))
    dbeta = np.sum(dy, axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * gamma
    dx = inv_std * (dxhat
                    - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgamma, dbeta


def _flat(x):
    return x.reshape(-1, x.shape[-1])


class EncoderModel:
    """Mutable parameter store plus forward/backward for one config.

    params maps array keys to float64 ndarrays: a weight slot `w` is
    either a single key "w" (dense, natural shape; vectors are 1-D) or
    the pair "w.a"/"w.b" (factored halves).  masks maps a subset of
    those keys to binary arrays; masked entries are zero and frozen.
    """

    def __init__(self, config, params, masks=None):
        self.config = config
        self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        self.masks = {k: np.array(v, dtype=np.float64)
                      for k, v in (masks or {}).items()}
        for key, mask in self.masks.items():
            if key not in self.params:
                raise InputError(f"mask for unknown parameter {key!r}")
            if mask.shape != self.params[key].shape:
                raise InputError(f"mask shape mismatch for {key!r}")
            self.params[key] = self.params[key] * mask
        for entry in config.shapes():
            self._resolve(entry.name)

    def _resolve(self, slot):
        if f"{slot}.a" in self.params:
            if f"{slot}.b" not in self.params:
                raise InputError(f"factored slot {slot!r} is missing its b half")
            return ("factored", f"{slot}.a", f"{slot}.b")
        if slot in self.params:
            if slot in self.masks:
                return ("masked", slot)
            return ("dense", slot)
        raise InputError(f"no parameters for slot {slot!r}")

    def copy(self):
        return EncoderModel(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.masks.items()},
        )

    def retained_count(self):
        """Live parameter count: mask ones where masked, sizes elsewhere."""
        total = 0
        for key, value in self.params.items():
            mask = self.masks.get(key)
            total += int(mask.sum()) if mask is not None else value.size
        return total

    def retained_by_group(self):
        """Live parameter count per bundle group."""
        counts = dict.fromkeys(("embedding", "encoder", "classifier"), 0)
        for e in self.config.shapes():
            kind = self._resolve(e.name)
            for key in kind[1:]:
                mask = self.masks.get(key)
                counts[e.group] += (int(mask.sum()) if mask is not None
                                    else self.params[key].size)
        return counts

    def effective_weight(self, slot):
        """The slot's weight as one array: A @ B.T for factored slots.

        Densifying here is fine: this is for compression and analysis
        steps, not the compute path.
        """
        kind = self._resolve(slot)
        if kind[0] == "factored":
            return self.params[kind[1]] @ self.params[kind[2]].T
        return self.params[slot]

    def zero_grads(self):
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    # ---- bundle conversion -------------------------------------------

    def to_bundle(self, include_masks=True):
        entries = []
        group_of = {e.name: e.group for e in self.config.shapes()}

        def slot_group(key):
            if key in group_of:  # checked first: "cls.b" ends with ".b" too
                return group_of[key]
            for suffix in (".a", ".b"):
                if key.endswith(suffix):
                    return group_of[key[: -len(suffix)]]
            raise KeyError(key)

        for key, value in self.params.items():
            mat = value.reshape(1, -1) if value.ndim == 1 else value
            entries.append((key, slot_group(key), DenseMatrix(mat)))
            if include_masks and key in self.masks:
                entries.append((f"{key}.mask", slot_group(key),
                                DenseMatrix(self.masks[key])))
        return ParamBundle(entries)

    @classmethod
    def from_bundle(cls, bundle, config):
        params = {}
        masks = {}
        vector_slots = {e.name for e in config.shapes() if e.is_vector}
        for name in bundle.names():
            arr = bundle.matrix(name).array
            if name.endswith(".mask"):
                masks[name[: -len(".mask")]] = arr
            elif name in vector_slots:
                params[name] = arr.reshape(-1)
            else:
                params[name] = arr
        return cls(config, params, masks)

    # ---- forward ------------------------------------------------------

    def _check_tokens(self, tokens):
        tokens = np.asarray(tokens)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        if tokens.ndim != 2:
            raise InputError(f"tokens must be 1-D or 2-D, got {tokens.ndim}-D")
        if not np.issubdtype(tokens.dtype, np.integer):
            raise InputError("tokens must be integers")
        if tokens.shape[1] < 1 or tokens.shape[1] > self.config.max_seq_len:
            raise InputError(
                f"sequence length {tokens.shape[1]} outside "
                f"[1, {self.config.max_seq_len}]"
            )
        if tokens.min() < 0 or tokens.max() >= self.config.vocab_size:
            raise InputError("token id outside the vocabulary")
        return tokens

    def _embed(self, tokens, cache):
        kind = self._resolve("tok_embed")
        if kind[0] == "factored":
            a, b = self.params[kind[1]], self.params[kind[2]]
            rows = a[tokens]                      # (b, n, r)
            tok = rows @ b.T
            cache["tok_rows"] = rows
        else:
            tok = self.params["tok_embed"][tokens]
        n = tokens.shape[1]
        kind = self._resolve("pos_embed")
        if kind[0] == "factored":
            a, b = self.params[kind[1]], self.params[kind[2]]
            pos = a[:n] @ b.T
        else:
            pos = self.params["pos_embed"][:n]
        return tok + pos[None, :, :]

    def _split_heads(self, x):
        b, n, d = x.shape
        h = self.config.num_heads
        return x.reshape(b, n, h, d // h).transpose(0, 2, 1, 3)

    def _merge_heads(self, x):
        b, h, n, dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)

    def _slot_forward(self, slot, x, cache):
        kind = self._resolve(slot)
        if kind[0] == "factored":
            hidden = x @ self.params[kind[1]]
            cache[f"{slot}.h"] = hidden
            return hidden @ self.params[kind[2]].T
        return x @ self.params[slot]

    def _slot_backward(self, slot, x, dy, cache, grads):
        kind = self._resolve(slot)
        if kind[0] == "factored":
            ka, kb = kind[1], kind[2]
            hidden = cache[f"{slot}.h"]
            dh = dy @ self.params[kb]
            gb = _flat(dy).T @ _flat(hidden)
            ga = _flat(x).T @ _flat(dh)
            if ka in self.masks:
                ga = ga * self.masks[ka]
            if kb in self.masks:
                gb = gb * self.masks[kb]
            grads[ka] += ga
            grads[kb] += gb
            return dh @ self.params[ka].T
        g = _flat(x).T @ _flat(dy)
        if kind[0] == "masked":
            g = g * self.masks[slot]
        grads[slot] += g
        return dy @ self.params[slot].T

    def forward(self, tokens, with_cache=False):
        tokens = self._check_tokens(tokens)
        cfg = self.config
        cache = {"tokens": tokens, "layers": []}
        x = self._embed(tokens, cache)
        embedding_out = x
        scale = 1.0 / math.sqrt(cfg.head_dim)

        attention = []
        hidden = []
        for i in range(cfg.num_layers):
            p = f"enc{i}"
            lc = {"x_in": x}
            q = self._slot_forward(f"{p}.attn.wq", x, lc) + self.params[f"{p}.attn.bq"]
            k = self._slot_forward(f"{p}.attn.wk", x, lc) + self.params[f"{p}.attn.bk"]
            v = self._slot_forward(f"{p}.attn.wv", x, lc) + self.params[f"{p}.attn.bv"]
            qh, kh, vh = (self._split_heads(t) for t in (q, k, v))
            scores = (qh @ kh.swapaxes(-1, -2)) * scale
            probs = softmax(scores)
            ctx = self._merge_heads(probs @ vh)
            lc.update(qh=qh, kh=kh, vh=vh, probs=probs, ctx=ctx)
            out = self._slot_forward(f"{p}.attn.wo", ctx, lc) + self.params[f"{p}.attn.bo"]
            u = x + out
            x1, ln1_cache = _ln_forward(u, self.params[f"{p}.ln1.gamma"],
                                        self.params[f"{p}.ln1.beta"])
            f_pre = self._slot_forward(f"{p}.ffn.w1", x1, lc) + self.params[f"{p}.ffn.b1"]
            f_act = gelu(f_pre)
            g = self._slot_forward(f"{p}.ffn.w2", f_act, lc) + self.params[f"{p}.ffn.b2"]
            w = x1 + g
            x, ln2_cache = _ln_forward(w, self.params[f"{p}.ln2.gamma"],
                                       self.params[f"{p}.ln2.beta"])
            lc.update(ln1=ln1_cache, ln2=ln2_cache, x1=x1,
                      f_pre=f_pre, f_act=f_act)
            cache["layers"].append(lc)
            attention.append(probs)
            hidden.append(x)

        pooled = x.mean(axis=1)
        logits = pooled @ self.params["cls.w"] + self.params["cls.b"]
        if not np.all(np.isfinite(logits)):
            raise NonFiniteError("logits are not finite")
        cache["pooled"] = pooled
        cache["embedding_out"] = embedding_out
        trace = ForwardTrace(embedding_out, tuple(attention),
                             tuple(hidden), logits)
        if with_cache:
            return trace, cache
        return trace

    # ---- backward -----------------------------------------------------

    def backward(self, cache, inj):
        """Exact parameter gradients for the injected upstream gradients."""
        cfg = self.config
        tokens = cache["tokens"]
        b, n = tokens.shape
        grads = self.zero_grads()
        scale = 1.0 / math.sqrt(cfg.head_dim)

        dlogits = inj.logits
        if dlogits is None:
            dlogits = np.zeros((b, cfg.num_classes))
        dpooled = dlogits @ self.params["cls.w"].T
        grads["cls.w"] += cache["pooled"].T @ dlogits
        grads["cls.b"] += dlogits.sum(axis=0)
        dx = np.repeat(dpooled[:, None, :], n, axis=1) / n

        for i in reversed(range(cfg.num_layers)):
            p = f"enc{i}"
            lc = cache["layers"][i]
            if inj.hidden is not None and inj.hidden[i] is not None:
                dx = dx + inj.hidden[i]
            dw, dg2, dbe2 = _ln_backward(dx, self.params[f"{p}.ln2.gamma"],
                                         lc["ln2"])
            grads[f"{p}.ln2.gamma"] += dg2
            grads[f"{p}.ln2.beta"] += dbe2
            dg = dw
            dx1 = dw.copy()
            df_act = self._slot_backward(f"{p}.ffn.w2", lc["f_act"], dg, lc, grads)
            grads[f"{p}.ffn.b2"] += dg.sum(axis=(0, 1))
            df_pre = df_act * gelu_grad(lc["f_pre"])
            dx1 += self._slot_backward(f"{p}.ffn.w1", lc["x1"], df_pre, lc, grads)
            grads[f"{p}.ffn.b1"] += df_pre.sum(axis=(0, 1))
            du, dg1, dbe1 = _ln_backward(dx1, self.params[f"{p}.ln1.gamma"],
                                         lc["ln1"])
            grads[f"{p}.ln1.gamma"] += dg1
            grads[f"{p}.ln1.beta"] += dbe1
            do = du
            dx = du.copy()
            dctx = self._slot_backward(f"{p}.attn.wo", lc["ctx"], do, lc, grads)
            grads[f"{p}.attn.bo"] += do.sum(axis=(0, 1))
            dctx_h = self._split_heads(dctx)
            probs, vh, qh, kh = lc["probs"], lc["vh"], lc["qh"], lc["kh"]
            dprobs = dctx_h @ vh.swapaxes(-1, -2)
            dvh = probs.swapaxes(-1, -2) @ dctx_h
            if inj.attention is not None and inj.attention[i] is not None:
                dprobs = dprobs + inj.attention[i]
            dscores = (dprobs - np.sum(dprobs * probs, axis=-1,
                                       keepdims=True)) * probs
            dscores *= scale
            dqh = dscores @ kh
            dkh = dscores.swapaxes(-1, -2) @ qh
            dq = self._merge_heads(dqh)
            dk = self._merge_heads(dkh)
            dv = self._merge_heads(dvh)
            x_in = lc["x_in"]
            dx += self._slot_backward(f"{p}.attn.wq", x_in, dq, lc, grads)
            dx += self._slot_backward(f"{p}.attn.wk", x_in, dk, lc, grads)
            dx += self._slot_backward(f"{p}.attn.wv", x_in, dv, lc, grads)
            grads[f"{p}.attn.bq"] += dq.sum(axis=(0, 1))
            grads[f"{p}.attn.bk"] += dk.sum(axis=(0, 1))
            grads[f"{p}.attn.bv"] += dv.sum(axis=(0, 1))

        if inj.embedding is not None:
            dx = dx + inj.embedding
        self._embed_backward(tokens, dx, cache, grads)
        return grads

    def _embed_backward(self, tokens, dx, cache, grads):
        n = tokens.shape[1]
        kind = self._resolve("tok_embed")
        if kind[0] == "factored":
            ka, kb = kind[1], kind[2]
            rows = cache["tok_rows"]
            drows = dx @ self.params[kb]
            np.add.at(grads[ka], tokens, drows)
            grads[kb] += _flat(dx).T @ _flat(rows)
        else:
            np.add.at(grads["tok_embed"], tokens, dx)
            if "tok_embed" in self.masks:
                grads["tok_embed"] *= self.masks["tok_embed"]
        dpos = dx.sum(axis=0)
        kind = self._resolve("pos_embed")
        if kind[0] == "factored":
            ka, kb = kind[1], kind[2]
            a = self.params[ka]
            grads[ka][:n] += dpos @ self.params[kb]
            grads[kb] += dpos.T @ a[:n]
        else:
            grads["pos_embed"][:n] += dpos
            if "pos_embed" in self.masks:
                grads["pos_embed"] *= self.masks["pos_embed"]


def init_model(config, seed=0):
    """Fresh dense model: normal(0, 0.05) matrices, unit norms, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for e in config.shapes():
        if e.is_vector:
            size = max(e.rows, e.cols)
            if e.name.endswith(".gamma"):
                params[e.name] = np.ones(size)
            else:
                params[e.name] = np.zeros(size)
        else:
            params[e.name] = rng.normal(0.0, INIT_STD, size=(e.rows, e.cols))
    return EncoderModel(config, params)


def save_model(model, path_base):
    """Checkpoint: <base>.bundle (params and masks) + <base>.config."""
    from .tensor import save_bundle

    base = str(path_base)
    save_bundle(model.to_bundle(include_masks=True), base + ".bundle")
    save_config(model.config, base + ".config")


def load_model(path_base):
    from .tensor import load_bundle

    base = str(path_base)
    config = load_config(base + ".config")
    bundle = load_bundle(base + ".bundle")
    return EncoderModel.from_bundle(bundle, config)


class Adam:
    """Adaptive-moment optimizer with bias correction.

    Masked entries keep gradient zero, so their moments never move; the
    explicit re-mask after each step keeps them bit-exact zeros anyway.
    """

    def __init__(self, lr=2e-5, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr < 0:
            raise RangeError(f"learning rate must be non-negative, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, model, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correction1 = 1.0 - b1 ** self.t
        correction2 = 1.0 - b2 ** self.t
        for key, g in grads.items():
            m = self.m.get(key)
            if m is None:
                m = np.zeros_like(g)
                self.m[key] = m
                self.v[key] = np.zeros_like(g)
            v = self.v[key]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            self.params_step(model, key, update)

    def params_step(self, model, key, update):
        model.params[key] -= self.lr * update
        mask = model.masks.get(key)
        if mask is not None:
            model.params[key] *= mask
