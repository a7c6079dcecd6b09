"""Transformer VAE over encoded tabular rows.

The encoder treats each schema column as one token (its encoded block
linearly projected to the embedding width), runs a multi-head self-attention
stack, and mean-pools the tokens into a contextual embedding ``h``. Two
affine heads on ``h`` give the posterior mean and log-variance. The decoder
consumes ``z`` concatenated with ``h`` and emits one output block per column
span (logits for one-hot blocks, a raw scalar for numerical scalars).
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import asdict, dataclass

import torch
from torch import nn
import torch.nn.functional as F

from .schema import CATEGORICAL, NUMERICAL, Span

CHECKPOINT_MAGIC = "CTTVAE-CKPT-v1"
VALID_ATTENTION_SHAPES = {(64, 4), (128, 4), (128, 8), (256, 8)}


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 32
    embedding_dim: int = 64
    nhead: int = 4
    dim_feedforward: int = 512
    num_layers: int = 2
    dropout: float = 0.0

    def validate(self) -> None:
        if min(self.latent_dim, self.embedding_dim, self.nhead, self.dim_feedforward, self.num_layers) < 1:
            raise ValueError("all model dimensions must be >= 1")
        if self.embedding_dim % self.nhead != 0:
            raise ValueError("embedding_dim must be divisible by nhead")
        if (self.embedding_dim, self.nhead) not in VALID_ATTENTION_SHAPES:
            raise ValueError(
                f"(embedding_dim, nhead) = ({self.embedding_dim}, {self.nhead}) "
                f"not in {sorted(VALID_ATTENTION_SHAPES)}"
            )
        if not 0.0 <= self.dropout <= 0.3:
            raise ValueError("dropout must lie in [0, 0.3]")


@dataclass
class PosteriorParams:
    """Per-row posterior mean/log-variance and contextual embedding."""

    mu: torch.Tensor
    log_var: torch.Tensor
    h: torch.Tensor


@dataclass
class ReconParams:
    """Raw decoder outputs, one block per schema span."""

    blocks: torch.Tensor
    layout: tuple[Span, ...]


def _first_nonfinite_row(*tensors: torch.Tensor) -> int | None:
    bad = None
    for t in tensors:
        rows = ~torch.isfinite(t).all(dim=tuple(range(1, t.dim())))
        bad = rows if bad is None else bad | rows
    idx = torch.nonzero(bad)
    return int(idx[0]) if idx.numel() else None


class TabularVAE(nn.Module):
    """Encoder/decoder pair operating on an encoded-table layout."""

    def __init__(self, config: ModelConfig, layout: tuple[Span, ...]):
        super().__init__()
        config.validate()
        self.config = config
        self.layout = tuple(layout)
        self.total_width = layout[-1].start + layout[-1].width

        self.token_proj = nn.ModuleList(
            [nn.Linear(span.width, config.embedding_dim) for span in self.layout]
        )
        encoder_layer = nn.TransformerEncoderLayer(
            d_model=config.embedding_dim,
            nhead=config.nhead,
            dim_feedforward=config.dim_feedforward,
            dropout=config.dropout,
            batch_first=True,
        )
        self.attention = nn.TransformerEncoder(encoder_layer, num_layers=config.num_layers)
        self.fc_mu = nn.Linear(config.embedding_dim, config.latent_dim)
        self.fc_log_var = nn.Linear(config.embedding_dim, config.latent_dim)
        self.decoder = nn.Sequential(
            nn.Linear(config.latent_dim + config.embedding_dim, config.dim_feedforward),
            nn.ReLU(),
            nn.Linear(config.dim_feedforward, config.dim_feedforward),
            nn.ReLU(),
            nn.Linear(config.dim_feedforward, self.total_width),
        )
        self.double()

    def encode(self, batch: torch.Tensor) -> PosteriorParams:
        """Map encoded rows to posterior parameters and contextual embeddings."""
        if batch.dim() != 2 or batch.shape[1] != self.total_width:
            raise ValueError(
                f"batch width {tuple(batch.shape)} does not match layout width {self.total_width}"
            )
        tokens = torch.stack(
            [proj(batch[:, s.start : s.start + s.width]) for proj, s in zip(self.token_proj, self.layout)],
            dim=1,
        )
        h = self.attention(tokens).mean(dim=1)
        mu = self.fc_mu(h)
        log_var = self.fc_log_var(h)
        row = _first_nonfinite_row(mu, log_var, h)
        if row is not None:
            raise RuntimeError(f"non-finite encoder activations at batch row {row}")
        return PosteriorParams(mu=mu, log_var=log_var, h=h)

    def decode(self, z: torch.Tensor, h: torch.Tensor) -> ReconParams:
        """Reconstruct per-span output blocks from (z, h)."""
        if z.shape[0] != h.shape[0]:
            raise ValueError(f"z has {z.shape[0]} rows but h has {h.shape[0]}")
        return ReconParams(blocks=self.decoder(torch.cat([z, h], dim=1)), layout=self.layout)


def reparameterize(post: PosteriorParams, rng: torch.Generator) -> torch.Tensor:
    """Draw z = mu + exp(log_var / 2) * eps with eps ~ N(0, I) from ``rng``."""
    eps = torch.randn(post.mu.shape, generator=rng, dtype=post.mu.dtype)
    return post.mu + torch.exp(0.5 * post.log_var) * eps


def reconstruction_loss(recon: ReconParams, target: torch.Tensor) -> torch.Tensor:
    """Cross-entropy on one-hot blocks plus squared error on numerical scalars.

    Summed over columns and averaged over rows; exact reconstruction gives 0.
    """
    if target.shape[1] != recon.blocks.shape[1]:
        raise ValueError("target width does not match reconstruction width")
    total = recon.blocks.new_zeros(())
    for span in recon.layout:
        pred = recon.blocks[:, span.start : span.start + span.width]
        true = target[:, span.start : span.start + span.width]
        if span.kind == CATEGORICAL:
            total = total + F.cross_entropy(pred, true.argmax(dim=1), reduction="mean")
        else:
            total = total + ((pred[:, 0] - true[:, 0]) ** 2).mean()
            total = total + F.cross_entropy(pred[:, 1:], true[:, 1:].argmax(dim=1), reduction="mean")
    return total


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

def parameter_fingerprint(model: TabularVAE) -> str:
    """Content hash of the parameter tensors (sorted by name)."""
    digest = hashlib.sha256()
    state = model.state_dict()
    for name in sorted(state):
        digest.update(name.encode("utf-8"))
        digest.update(state[name].detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def save_checkpoint(
    path,
    model: TabularVAE,
    schema_json: str,
    schema_digest: str,
    training_seed: int,
) -> str:
    """Write a self-describing checkpoint; returns the parameter fingerprint."""
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "config": asdict(model.config),
        "schema_json": schema_json,
        "schema_hash": schema_digest,
        "state": model.state_dict(),
        "training_seed": training_seed,
        "param_hash": parameter_fingerprint(model),
    }
    torch.save(payload, path)
    return payload["param_hash"]


def load_checkpoint(path) -> tuple[TabularVAE, dict]:
    """Load a checkpoint; returns the rebuilt model plus its metadata dict."""
    from .schema import layout_of, schema_from_json  # local import to avoid cycle at module load

    payload = torch.load(path, weights_only=False)
    if payload.get("magic") != CHECKPOINT_MAGIC:
        raise ValueError(f"not a model checkpoint (magic {payload.get('magic')!r})")
    config = ModelConfig(**payload["config"])
    schema = schema_from_json(payload["schema_json"])
    model = TabularVAE(config, layout_of(schema))
    model.load_state_dict(payload["state"])
    model.eval()
    meta = {
        "schema": schema,
        "schema_hash": payload["schema_hash"],
        "training_seed": payload["training_seed"],
        "param_hash": payload["param_hash"],
    }
    return model, meta
