"""Paired DNA/IDEAS transformer encoder, MLM heads and TF-binding head.

Parameters live in a flat ``dict[str, np.ndarray]``.  Each forward stage
optionally records its activations on a :class:`ForwardTrace`;
:func:`backward` replays the trace in reverse to produce exact gradients for
every parameter (zeros for parameters the executed graph did not touch).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import layers as nn
from .masking import IDEAS_VOCAB

Params = dict[str, np.ndarray]


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    heads: int = 2
    hidden: int = 32
    filter_size: int = 64
    dna_vocab: int = 4**7 + 3
    ideas_vocab: int = IDEAS_VOCAB  # 0 disables the IDEAS input (DNA-only model)
    l_input: int = 150
    dropout: float = 0.1
    attention_dropout: float = 0.1
    with_aux: bool = False
    dtype: str = "float32"
    conv_channels: tuple[int, int] = (256, 128)
    conv_width: int = 3
    dense_hidden: int = 64

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError(f"hidden={self.hidden} not divisible by heads={self.heads}")
        if isinstance(self.conv_channels, list):
            object.__setattr__(self, "conv_channels", tuple(self.conv_channels))

    @classmethod
    def tiny(cls, **kw) -> "ModelConfig":
        return cls(**{**dict(layers=2, heads=2, hidden=32, filter_size=64), **kw})

    @classmethod
    def bert_base(cls, **kw) -> "ModelConfig":
        return cls(**{**dict(layers=12, heads=12, hidden=768, filter_size=3072), **kw})

    @classmethod
    def bert_large(cls, **kw) -> "ModelConfig":
        return cls(**{**dict(layers=24, heads=16, hidden=1024, filter_size=4096), **kw})

    @property
    def uses_ideas(self) -> bool:
        return self.ideas_vocab > 0

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    H, F = cfg.hidden, cfg.filter_size
    s: dict[str, tuple[int, ...]] = {"emb.dna": (cfg.dna_vocab, H)}
    if cfg.uses_ideas:
        s["emb.ideas"] = (cfg.ideas_vocab, H)
    s["emb.pos"] = (cfg.l_input, H)
    for i in range(cfg.layers):
        p = f"layer{i}."
        s[p + "ln1.gain"] = s[p + "ln1.bias"] = (H,)
        for m in "qkvo":
            s[p + f"attn.{m}.weight"] = (H, H)
            s[p + f"attn.{m}.bias"] = (H,)
        s[p + "ln2.gain"] = s[p + "ln2.bias"] = (H,)
        s[p + "ffn.in.weight"], s[p + "ffn.in.bias"] = (H, F), (F,)
        s[p + "ffn.out.weight"], s[p + "ffn.out.bias"] = (F, H), (H,)
    s["ln_f.gain"] = s["ln_f.bias"] = (H,)
    s["mlm.dna.weight"], s["mlm.dna.bias"] = (H, cfg.dna_vocab), (cfg.dna_vocab,)
    if cfg.uses_ideas:
        s["mlm.ideas.weight"], s["mlm.ideas.bias"] = (H, cfg.ideas_vocab), (cfg.ideas_vocab,)
    c1, c2 = cfg.conv_channels
    cin = H + 2 if cfg.with_aux else H
    w = cfg.conv_width
    s["tf.conv1.weight"], s["tf.conv1.bias"] = (w, cin, c1), (c1,)
    s["tf.conv2.weight"], s["tf.conv2.bias"] = (w, c1, c2), (c2,)
    s["tf.dense1.weight"], s["tf.dense1.bias"] = (c2, cfg.dense_hidden), (cfg.dense_hidden,)
    s["tf.dense2.weight"], s["tf.dense2.bias"] = (cfg.dense_hidden, 1), (1,)
    return s


def parameter_count(cfg: ModelConfig) -> int:
    return sum(math.prod(shape) for shape in param_shapes(cfg).values())


def truncated_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    z = rng.standard_normal(shape)
    bad = np.abs(z) > 2.0
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > 2.0
    return (z * std).astype(dtype)


def init_params(cfg: ModelConfig, rng: np.random.Generator, std: float = 0.02, prefix: str = "") -> Params:
    """Truncated-normal weights, zero biases, unit layer-norm gains.

    ``prefix`` restricts initialisation to names starting with it (e.g. "tf.").
    """
    out = {}
    for name, shape in param_shapes(cfg).items():
        if not name.startswith(prefix):
            continue
        if name.endswith(".gain"):
            out[name] = np.ones(shape, dtype=cfg.np_dtype)
        elif name.endswith(".bias"):
            out[name] = np.zeros(shape, dtype=cfg.np_dtype)
        else:
            out[name] = truncated_normal(rng, shape, std, cfg.np_dtype)
    return out


def zeros_like_params(cfg: ModelConfig) -> Params:
    return {n: np.zeros(s, dtype=cfg.np_dtype) for n, s in param_shapes(cfg).items()}


class ForwardTrace:
    """Activations recorded by the forward stages, consumed by :func:`backward`."""

    def __init__(self, params: Params, cfg: ModelConfig):
        self.params = params
        self.cfg = cfg
        self.stages: list[tuple[str, dict]] = []

    def record(self, stage: str, cache: dict) -> None:
        self.stages.append((stage, cache))

    def attention_probs(self) -> list[np.ndarray]:
        for stage, cache in self.stages:
            if stage == "encode":
                return [blk["attn"]["probs"] for blk in cache["blocks"]]
        return []


# --------------------------------------------------------------------------
# forward stages


def embed(dna_ids, ideas_ids, params: Params, cfg: ModelConfig, trace: ForwardTrace | None = None):
    """Sum of DNA, IDEAS and positional embeddings -> [B, L, H]."""
    dna_ids = np.atleast_2d(dna_ids)
    if dna_ids.min() < 0 or dna_ids.max() >= cfg.dna_vocab:
        raise IndexError(f"DNA id outside [0, {cfg.dna_vocab})")
    h = params["emb.dna"][dna_ids]
    if cfg.uses_ideas:
        if ideas_ids is None:
            raise ValueError("model expects IDEAS ids")
        ideas_ids = np.atleast_2d(ideas_ids)
        if ideas_ids.min() < 0 or ideas_ids.max() >= cfg.ideas_vocab:
            raise IndexError(f"IDEAS id outside [0, {cfg.ideas_vocab})")
        h = h + params["emb.ideas"][ideas_ids]
    L = dna_ids.shape[1]
    h = h + params["emb.pos"][:L]
    if trace is not None:
        trace.record("embed", dict(dna_ids=dna_ids, ideas_ids=ideas_ids if cfg.uses_ideas else None))
    return h


def _block_params(params: Params, i: int) -> dict:
    p = f"layer{i}.attn."
    return {m: (params[p + f"{m}.weight"], params[p + f"{m}.bias"]) for m in "qkvo"}


def encode(
    hidden,
    attention_mask,
    params: Params,
    cfg: ModelConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    trace: ForwardTrace | None = None,
):
    """Pre-layer-norm transformer stack followed by a final layer norm."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    if train and rng is None and (cfg.dropout > 0 or cfg.attention_dropout > 0):
        raise ValueError("train mode with dropout needs an rng")
    drop_rng = rng if train else None
    attention_mask = np.atleast_2d(attention_mask)
    bias = nn.key_mask_bias(attention_mask, hidden.dtype)

    x, emb_keep = nn.dropout_forward(hidden, cfg.dropout, drop_rng)
    blocks = []
    for i in range(cfg.layers):
        pre = f"layer{i}."
        a_in, ln1 = nn.layer_norm_forward(x, params[pre + "ln1.gain"], params[pre + "ln1.bias"])
        a_out, attn = nn.attention_forward(a_in, _block_params(params, i), cfg.heads, bias, cfg.attention_dropout, drop_rng)
        a_out, keep1 = nn.dropout_forward(a_out, cfg.dropout, drop_rng)
        x = x + a_out
        f_in, ln2 = nn.layer_norm_forward(x, params[pre + "ln2.gain"], params[pre + "ln2.bias"])
        u, ffn_in = nn.linear_forward(f_in, params[pre + "ffn.in.weight"], params[pre + "ffn.in.bias"])
        g, gelu = nn.gelu_forward(u)
        f_out, ffn_out = nn.linear_forward(g, params[pre + "ffn.out.weight"], params[pre + "ffn.out.bias"])
        f_out, keep2 = nn.dropout_forward(f_out, cfg.dropout, drop_rng)
        x = x + f_out
        if not np.isfinite(x).all():
            raise NonFiniteError(f"non-finite activations after encoder layer {i}")
        if trace is not None:
            blocks.append(dict(ln1=ln1, attn=attn, keep1=keep1, ln2=ln2, ffn_in=ffn_in, gelu=gelu, ffn_out=ffn_out, keep2=keep2))
    out, ln_f = nn.layer_norm_forward(x, params["ln_f.gain"], params["ln_f.bias"])
    if not np.isfinite(out).all():
        raise NonFiniteError("non-finite activations after final layer norm")
    if trace is not None:
        trace.record("encode", dict(emb_keep=emb_keep, blocks=blocks, ln_f=ln_f))
    return out


def mlm_forward(
    hidden,
    params: Params,
    dna_positions=None,
    ideas_positions=None,
    trace: ForwardTrace | None = None,
):
    """Linear DNA and IDEAS token heads on the shared hidden states.

    With ``*_positions`` (a tuple of index arrays into the leading axes of
    ``hidden``) logits are produced only for those rows, e.g. the masked
    targets; otherwise for every position.  IDEAS logits are None when the
    model has no IDEAS head.
    """
    h_dna = hidden if dna_positions is None else hidden[dna_positions]
    dna_logits = h_dna @ params["mlm.dna.weight"] + params["mlm.dna.bias"]
    ideas_logits = h_ideas = None
    if "mlm.ideas.weight" in params:
        h_ideas = hidden if ideas_positions is None else hidden[ideas_positions]
        ideas_logits = h_ideas @ params["mlm.ideas.weight"] + params["mlm.ideas.bias"]
    if trace is not None:
        trace.record("mlm", dict(shape=hidden.shape, h_dna=h_dna, h_ideas=h_ideas, dna_pos=dna_positions, ideas_pos=ideas_positions))
    return dna_logits, ideas_logits


def tf_head_forward(
    hidden,
    aux,
    params: Params,
    cfg: ModelConfig,
    attention_mask=None,
    trace: ForwardTrace | None = None,
):
    """Binding probability per sequence, shape [B].

    Two width-3 ReLU convolutions over the sequence, max-pool over real
    positions, then dense(64)+ReLU and dense(1)+sigmoid.  With auxiliary
    features the (dnase, mappability) columns are appended to the hidden
    states first.
    """
    if (aux is not None) != cfg.with_aux:
        raise ValueError(f"aux features {'given' if aux is not None else 'missing'} but with_aux={cfg.with_aux}")
    hidden = hidden if hidden.ndim == 3 else hidden[None]
    B, L, H = hidden.shape
    if attention_mask is None:
        attention_mask = np.ones((B, L), dtype=np.uint8)
    attention_mask = np.atleast_2d(attention_mask)
    x = hidden
    if aux is not None:
        aux = np.asarray(aux, dtype=hidden.dtype).reshape(B, L, 2)
        x = np.concatenate([hidden, aux], axis=-1)
    c1, conv1 = nn.conv1d_forward(x, params["tf.conv1.weight"], params["tf.conv1.bias"])
    r1, relu1 = nn.relu_forward(c1)
    c2, conv2 = nn.conv1d_forward(r1, params["tf.conv2.weight"], params["tf.conv2.bias"])
    r2, relu2 = nn.relu_forward(c2)
    pooled, pool = nn.masked_max_pool_forward(r2, attention_mask)
    d1, dense1 = nn.linear_forward(pooled, params["tf.dense1.weight"], params["tf.dense1.bias"])
    a1, relu3 = nn.relu_forward(d1)
    logit, dense2 = nn.linear_forward(a1, params["tf.dense2.weight"], params["tf.dense2.bias"])
    logit = logit[:, 0]
    prob = nn.sigmoid(logit)
    if trace is not None:
        trace.record("tf", dict(H=H, conv1=conv1, relu1=relu1, conv2=conv2, relu2=relu2, pool=pool,
                                dense1=dense1, relu3=relu3, dense2=dense2, logit=logit, prob=prob))
    return prob


def last_logit(trace: ForwardTrace) -> np.ndarray:
    for stage, cache in reversed(trace.stages):
        if stage == "tf":
            return cache["logit"]
    raise ValueError("trace has no binding-head stage")


# --------------------------------------------------------------------------
# reverse pass


def backward(trace: ForwardTrace | None, loss_grads: dict) -> Params:
    """Gradients of a scalar loss w.r.t. every parameter.

    ``loss_grads`` holds the loss gradient w.r.t. the head outputs that were
    executed: ``dna_logits`` / ``ideas_logits`` (same shape as returned by
    :func:`mlm_forward`) and ``tf_logit`` or ``tf_prob`` (shape [B]).
    """
    if trace is None or not trace.stages:
        raise ValueError("backward needs a trace from a forward pass")
    P, cfg = trace.params, trace.cfg
    grads = {n: np.zeros_like(v) for n, v in P.items()}
    d_hidden = None

    def add_hidden(d):
        nonlocal d_hidden
        d_hidden = d if d_hidden is None else d_hidden + d

    for stage, c in reversed(trace.stages):
        if stage == "mlm":
            dh = np.zeros(c["shape"], dtype=P["mlm.dna.weight"].dtype)
            for head, key, h, pos in (
                ("dna", "dna_logits", c["h_dna"], c["dna_pos"]),
                ("ideas", "ideas_logits", c["h_ideas"], c["ideas_pos"]),
            ):
                g = loss_grads.get(key)
                if g is None or h is None:
                    continue
                dx, dw, db = nn.linear_backward(g, h, P[f"mlm.{head}.weight"])
                grads[f"mlm.{head}.weight"] += dw
                grads[f"mlm.{head}.bias"] += db
                if pos is None:
                    dh += dx
                else:
                    np.add.at(dh, pos, dx)
            add_hidden(dh)
        elif stage == "tf":
            if "tf_logit" in loss_grads:
                dlogit = np.asarray(loss_grads["tf_logit"])
            elif "tf_prob" in loss_grads:
                p = c["prob"]
                dlogit = np.asarray(loss_grads["tf_prob"]) * p * (1 - p)
            else:
                continue
            dlogit = dlogit.reshape(-1, 1).astype(P["tf.dense2.weight"].dtype)
            da1, gw, gb = nn.linear_backward(dlogit, c["dense2"], P["tf.dense2.weight"])
            grads["tf.dense2.weight"] += gw
            grads["tf.dense2.bias"] += gb
            dd1 = nn.relu_backward(da1, c["relu3"])
            dpool, gw, gb = nn.linear_backward(dd1, c["dense1"], P["tf.dense1.weight"])
            grads["tf.dense1.weight"] += gw
            grads["tf.dense1.bias"] += gb
            dr2 = nn.masked_max_pool_backward(dpool, c["pool"])
            dc2 = nn.relu_backward(dr2, c["relu2"])
            dr1, gw, gb = nn.conv1d_backward(dc2, c["conv2"], P["tf.conv2.weight"])
            grads["tf.conv2.weight"] += gw
            grads["tf.conv2.bias"] += gb
            dc1 = nn.relu_backward(dr1, c["relu1"])
            dx, gw, gb = nn.conv1d_backward(dc1, c["conv1"], P["tf.conv1.weight"])
            grads["tf.conv1.weight"] += gw
            grads["tf.conv1.bias"] += gb
            add_hidden(dx[..., : c["H"]])
        elif stage == "encode":
            if d_hidden is None:
                continue
            dx, gg, gb = nn.layer_norm_backward(d_hidden, c["ln_f"])
            grads["ln_f.gain"] += gg
            grads["ln_f.bias"] += gb
            for i in reversed(range(cfg.layers)):
                blk = c["blocks"][i]
                pre = f"layer{i}."
                # feed-forward branch
                df = nn.dropout_backward(dx, blk["keep2"])
                dg, gw, gb = nn.linear_backward(df, blk["ffn_out"], P[pre + "ffn.out.weight"])
                grads[pre + "ffn.out.weight"] += gw
                grads[pre + "ffn.out.bias"] += gb
                du = nn.gelu_backward(dg, blk["gelu"])
                dfin, gw, gb = nn.linear_backward(du, blk["ffn_in"], P[pre + "ffn.in.weight"])
                grads[pre + "ffn.in.weight"] += gw
                grads[pre + "ffn.in.bias"] += gb
                dln2, gg, gb = nn.layer_norm_backward(dfin, blk["ln2"])
                grads[pre + "ln2.gain"] += gg
                grads[pre + "ln2.bias"] += gb
                dx = dx + dln2
                # attention branch
                da = nn.dropout_backward(dx, blk["keep1"])
                dain, ag = nn.attention_backward(da, blk["attn"], _block_params(P, i))
                for n, g in ag.items():
                    grads[pre + "attn." + n] += g
                dln1, gg, gb = nn.layer_norm_backward(dain, blk["ln1"])
                grads[pre + "ln1.gain"] += gg
                grads[pre + "ln1.bias"] += gb
                dx = dx + dln1
            d_hidden = nn.dropout_backward(dx, c["emb_keep"])
        elif stage == "embed":
            if d_hidden is None:
                continue
            H = d_hidden.shape[-1]
            L = d_hidden.shape[1]
            flat = d_hidden.reshape(-1, H)
            np.add.at(grads["emb.dna"], c["dna_ids"].ravel(), flat)
            if c["ideas_ids"] is not None:
                np.add.at(grads["emb.ideas"], c["ideas_ids"].ravel(), flat)
            grads["emb.pos"][:L] += d_hidden.sum(axis=0)
    return grads
