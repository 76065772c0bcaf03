"""Group-wise token transformer over diffusion feature vectors.

A feature vector of length L is cut into ceil(L / group_size) groups (the
last one zero-padded), each group is linearly projected to a token, a class
token is prepended and a learned positional embedding added. Encoder blocks
are pre-norm attention + MLP; with cross-layer fusion on, block i also
receives a gated copy of the output of block i - 2. The class token feeds a
two-layer MLP head.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import archive
from ._util import derive_seed

log = logging.getLogger(__name__)

CLASSIFIER_SCHEMA = "hsidiff.classifier/1"
SKIP_MODES = ("off", "cross-layer")


class ClassifierError(ValueError):
    pass


@dataclass(frozen=True)
class ClassifierConfig:
    n_classes: int
    group_size: int = 16
    embed_dim: int = 64
    depth: int = 5
    heads: int = 4
    mlp_ratio: float = 4.0
    skip_fusion: str = "cross-layer"
    dropout: float = 0.1
    pos_embed: bool = True
    standardize: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ClassifierError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.group_size < 1:
            raise ClassifierError("group_size must be >= 1")
        if self.n_classes < 2:
            raise ClassifierError("n_classes must be >= 2")
        if self.skip_fusion not in SKIP_MODES:
            raise ClassifierError(f"skip_fusion must be one of {SKIP_MODES}")

    def n_tokens(self, width: int) -> int:
        return math.ceil(width / self.group_size)


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 128
    learning_rate: float = 1e-4
    seed: int = 0


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        n, m, d = x.shape
        q, k, v = self.qkv(x).reshape(n, m, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        attn = (q @ k.transpose(-2, -1)) / math.sqrt(d // self.heads)
        attn = self.drop(attn.softmax(dim=-1))
        y = (attn @ v).transpose(1, 2).reshape(n, m, d)
        return self.drop(self.out(y))


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: float, dropout: float):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads, dropout)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Dropout(dropout), nn.Linear(hidden, dim), nn.Dropout(dropout))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class SpectralTransformer(nn.Module):
    def __init__(self, cfg: ClassifierConfig, input_width: int):
        super().__init__()
        if input_width < 1:
            raise ClassifierError("input width must be >= 1")
        self.cfg = cfg
        self.input_width = input_width
        self.n_groups = cfg.n_tokens(input_width)
        D = cfg.embed_dim
        self.proj = nn.Linear(cfg.group_size, D)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, D))
        self.pos_embed = nn.Parameter(torch.zeros(1, self.n_groups + 1, D)) if cfg.pos_embed else None
        self.drop = nn.Dropout(cfg.dropout)
        self.blocks = nn.ModuleList(Block(D, cfg.heads, cfg.mlp_ratio, cfg.dropout) for _ in range(cfg.depth))
        n_gates = max(cfg.depth - 2, 0) if cfg.skip_fusion == "cross-layer" else 0
        self.gates = nn.ParameterList(nn.Parameter(torch.zeros(D)) for _ in range(n_gates))
        self.norm = nn.LayerNorm(D)
        self.head = nn.Sequential(nn.Linear(D, D), nn.GELU(), nn.Linear(D, cfg.n_classes))
        self.register_buffer("feat_mean", torch.zeros(input_width))
        self.register_buffer("feat_std", torch.ones(input_width))
        nn.init.trunc_normal_(self.cls_token, std=0.02)
        if self.pos_embed is not None:
            nn.init.trunc_normal_(self.pos_embed, std=0.02)

    def tokenize(self, v: torch.Tensor) -> torch.Tensor:
        """[N, L] feature vectors -> [N, n_groups + 1, D] tokens (class token first)."""
        if v.dim() == 1:
            v = v[None]
        if v.shape[-1] == 0:
            raise ClassifierError("empty feature vector")
        if v.shape[-1] != self.input_width:
            raise ClassifierError(f"feature width {v.shape[-1]} != model input width {self.input_width}")
        v = v.to(self.proj.weight.dtype)
        if self.cfg.standardize:
            v = (v - self.feat_mean) / self.feat_std
        pad = self.n_groups * self.cfg.group_size - v.shape[-1]
        if pad:
            v = F.pad(v, (0, pad))
        tok = self.proj(v.reshape(v.shape[0], self.n_groups, self.cfg.group_size))
        tok = torch.cat([self.cls_token.expand(v.shape[0], -1, -1), tok], dim=1)
        if self.pos_embed is not None:
            tok = tok + self.pos_embed
        return tok

    def encode(self, tokens: torch.Tensor) -> torch.Tensor:
        """Token sequence -> logits [N, n_classes]."""
        if tokens.shape[-1] != self.cfg.embed_dim:
            raise ClassifierError(f"token width {tokens.shape[-1]} != embed_dim {self.cfg.embed_dim}")
        x = self.drop(tokens)
        outs = []
        for i, blk in enumerate(self.blocks):
            if self.gates and i >= 2:
                x = x + torch.sigmoid(self.gates[i - 2]) * outs[i - 2]
            x = blk(x)
            outs.append(x)
        return self.head(self.norm(x)[:, 0])

    def forward(self, v):
        return self.encode(self.tokenize(v))


def build_classifier(cfg: ClassifierConfig, input_width: int) -> SpectralTransformer:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(cfg.seed, "classifier-init"))
        return SpectralTransformer(cfg, input_width)


def _check_labels(labels: np.ndarray, n_classes: int):
    bad = np.nonzero((labels < 1) | (labels > n_classes))[0]
    if bad.size:
        i = int(bad[0])
        raise ClassifierError(f"sample {i} has label {int(labels[i])} outside [1, {n_classes}]")


def train_classifier(repo, cfg: ClassifierConfig, train_cfg: TrainConfig):
    """Fit on every vector of ``repo`` with Adam and cross-entropy.

    Returns ``(model, trace)`` where trace rows are ``(epoch, mean_loss,
    train_accuracy)``.
    """
    x = np.asarray(repo.vectors, dtype=np.float64)
    y = np.asarray(repo.labels, dtype=np.int64)
    _check_labels(y, cfg.n_classes)
    model = build_classifier(cfg, x.shape[1])
    if cfg.standardize and len(x):
        std = x.std(axis=0)
        model.feat_mean.copy_(torch.as_tensor(x.mean(axis=0), dtype=torch.float32))
        model.feat_std.copy_(torch.as_tensor(np.where(std > 1e-8, std, 1.0), dtype=torch.float32))
    xt = torch.as_tensor(x, dtype=torch.float32)
    yt = torch.as_tensor(y - 1)
    opt = torch.optim.Adam(model.parameters(), lr=train_cfg.learning_rate)
    rng = np.random.default_rng(derive_seed(train_cfg.seed, "shuffle"))
    trace = []
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(train_cfg.seed, "dropout"))
        for epoch in range(1, train_cfg.epochs + 1):
            model.train()
            order = rng.permutation(len(x))
            total, correct = 0.0, 0
            for start in range(0, len(order), train_cfg.batch_size):
                idx = torch.as_tensor(order[start:start + train_cfg.batch_size])
                logits = model(xt[idx])
                loss = F.cross_entropy(logits, yt[idx])
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                total += float(loss.detach()) * len(idx)
                correct += int((logits.detach().argmax(dim=1) == yt[idx]).sum())
            trace.append((epoch, total / max(len(x), 1), correct / max(len(x), 1)))
            if epoch % 50 == 0:
                log.info("epoch %d loss %.4f acc %.4f", *trace[-1])
    model.eval()
    return model, trace


@torch.no_grad()
def predict_logits(model: SpectralTransformer, vectors, batch_size: int = 1024) -> np.ndarray:
    model.eval()
    v = torch.as_tensor(np.asarray(vectors))
    if v.dim() != 2 or v.shape[1] != model.input_width:
        raise ClassifierError(f"feature width {tuple(v.shape)[-1]} != model input width {model.input_width}")
    out = [model(v[i:i + batch_size]) for i in range(0, len(v), batch_size)]
    return torch.cat(out).double().numpy() if out else np.zeros((0, model.cfg.n_classes))


def argmax_classes(logits: np.ndarray) -> np.ndarray:
    """1-based argmax; ties go to the smaller class id."""
    return np.argmax(np.asarray(logits), axis=-1) + 1


def predict(model: SpectralTransformer, repo) -> np.ndarray:
    return argmax_classes(predict_logits(model, repo.vectors))


def save_classifier(model: SpectralTransformer, path, extra: dict | None = None) -> Path:
    manifest = {
        "schema_version": CLASSIFIER_SCHEMA,
        "config": asdict(model.cfg),
        "input_width": model.input_width,
        **(extra or {}),
    }
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    return archive.write_archive(path, manifest, arrays)


def load_classifier(path) -> SpectralTransformer:
    manifest, arrays = archive.read_archive(path)
    if manifest.get("schema_version") != CLASSIFIER_SCHEMA:
        raise ClassifierError(
            f"{path}: schema_version {manifest.get('schema_version')!r} does not match {CLASSIFIER_SCHEMA!r}"
        )
    model = SpectralTransformer(ClassifierConfig(**manifest["config"]), manifest["input_width"])
    own = model.state_dict()
    missing = sorted(set(own) - set(arrays))
    if missing:
        raise ClassifierError(f"{path}: missing weights {missing}")
    model.load_state_dict({k: torch.as_tensor(arrays[k]) for k in own})
    return model.eval()
