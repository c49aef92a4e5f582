"""The full proposal network: channel split, global and local branches,
fusion, boundary and completeness heads, plus the training objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gcn, heads, transformer
from .config import RunConfig
from .data import split_channels
from .labels import LabelSet, assign_labels
from .losses import completeness_loss, total_loss, weighted_bl_loss
from .tensor import ConfigError, Tensor, no_grad


@dataclass
class ModelOutput:
    start: Tensor
    end: Tensor
    actionness: Tensor
    cc_map: Tensor
    cr_map: Tensor
    valid_mask: np.ndarray
    attention_maps: list
    adjacency: Tensor | None = None
    content_adjacency: Tensor | None = None

    def score_maps(self) -> heads.ScoreMaps:
        return heads.ScoreMaps(self.start.data.copy(), self.end.data.copy(),
                               self.actionness.data.copy(), self.cc_map.data.copy(),
                               self.cr_map.data.copy(), self.valid_mask)


class ProposalModel:
    def __init__(self, cfg: RunConfig, seed: int | None = None):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        cg, cl = cfg.width_global, cfg.width_local
        self.mask = gcn.build_mask(cfg.T, cfg.delta)
        self.valid = heads.valid_mask(cfg.D, cfg.T)
        p: dict = {}
        tp = transformer.init_transformer_params(
            rng, cg, cfg.heads, cfg.transformer_layers, cfg.ffn_expansion, cfg.act_hidden or None)
        if cfg.global_branch == "none":
            tp = {k: v for k, v in tp.items() if k.startswith("tr.act.")}
        p.update(tp)
        p.update(gcn.init_gcn_params(rng, cfg.T, cl, cl, cfg.delta, cfg.local_variant))
        late = cfg.fusion == "late"
        fused_c = (cg, cl) if late else (cg + cl if cfg.fusion == "concat" else cg)
        p.update(heads.init_boundary_params(rng, fused_c, cfg.bnd_hidden, late=late))
        p.update(heads.init_completeness_params(rng, fused_c, cfg.num_samples, cfg.cmp_hidden_3d,
                                                cfg.cmp_hidden_2d, late=late))
        self.params = p

    # parameter groups, used by reports
    GROUPS = (("front block", "tr.front."), ("attention", ".attn."), ("ffn", ".ffn."),
              ("actionness head", "tr.act."), ("A_a", "gcn.A_a"), ("theta", "gcn.theta"),
              ("W", "gcn.W"), ("local branch", "gcn."), ("boundary head", "bnd."),
              ("completeness head", "cmp."))

    def group_of(self, name: str) -> str:
        for g, key in self.GROUPS:
            if key in name:
                return g
        return "other"

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def forward(self, features, training: bool = False, rng: np.random.Generator | None = None
                ) -> ModelOutput:
        cfg = self.cfg
        x = features.features if hasattr(features, "features") else features
        x = np.asarray(x)
        if x.shape != (cfg.T, cfg.C):
            raise ConfigError(f"model expects features of shape ({cfg.T}, {cfg.C}), got {x.shape}; "
                              "the learned adjacency fixes the sequence length")
        F_g, F_l = split_channels(x)
        p = self.params
        drop = cfg.dropout if training else 0.0
        if cfg.global_branch == "transformer":
            br = transformer.transformer_branch_forward(
                Tensor(F_g), p, cfg.heads, cfg.transformer_layers, cfg.front_block,
                cfg.pos_encoding, drop, rng, training)
            g_feats, act, maps = br.global_features, br.actionness, br.attention_maps
        else:
            g_feats = Tensor(F_g)
            act, maps = transformer.actionness_head(g_feats, p), []

        adj = a_d = None
        if cfg.local_variant == "adaptive":
            l_feats, adj, a_d = gcn.adaptive_gcn_forward(
                Tensor(F_l), p, self.mask, use_learned=cfg.use_learned_adjacency,
                use_content=cfg.use_content_adjacency)
        else:
            l_feats = gcn.local_variant_forward(Tensor(F_l), cfg.local_variant, p, self.mask)

        fused = heads.fuse_global_local(g_feats, l_feats, cfg.fusion)
        p_s, p_e = heads.boundary_head(fused, p)
        if isinstance(fused, tuple):
            sampled = tuple(heads.bm_sample(f, cfg.D, cfg.num_samples) for f in fused)
        else:
            sampled = heads.bm_sample(fused, cfg.D, cfg.num_samples)
        m_cc, m_cr = heads.completeness_head(sampled, p, self.valid)
        return ModelOutput(p_s, p_e, act, m_cc, m_cr, self.valid, maps, adj, a_d)

    def predict(self, features) -> heads.ScoreMaps:
        with no_grad():
            return self.forward(features, training=False).score_maps()

    def labels(self, gt) -> LabelSet:
        return assign_labels(gt, self.cfg.T, self.cfg.D)

    def loss(self, out: ModelOutput, labels: LabelSet):
        """Multi-task objective; returns (total tensor, per-term floats)."""
        cfg = self.cfg
        l_com, l_c, l_r = completeness_loss(out.cc_map, out.cr_map, labels.completeness,
                                            labels.valid, cfg.lambda_reg, cfg.cmp_pos_threshold)
        comps = {
            "completeness": l_com,
            "actionness": weighted_bl_loss(out.actionness, labels.g_action),
            "start": weighted_bl_loss(out.start, labels.g_start),
            "end": weighted_bl_loss(out.end, labels.g_end),
        }
        total, values = total_loss(comps, cfg.loss_weights)
        values["completeness_cls"] = float(l_c.data)
        values["completeness_reg"] = float(l_r.data)
        return total, values
