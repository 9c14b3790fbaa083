from .layers import (atom_embed, attn, cosine_cutoff, cross_molecule_mp, edge_update, flow_head,
                     inner_molecule_mp, make_geometry, pair_embed, rbf_expand, time_embed,
                     triangular_update)
from .model import NetConfig, TSDVNet, init_params
from . import checkpoint
