"""Per-agent action-value networks, evaluated for all agents at once.

Every parameter tensor carries a leading agent axis, so agent ``i`` owns its
own weights while the forward pass is one batched einsum per layer.
Architecture: linear -> ReLU -> GRU cell -> linear (4 action values). With
``recurrent=False`` the GRU cell is replaced by a second linear + ReLU layer
and the hidden state is ignored.
"""
from __future__ import annotations

import math
from typing import Tuple

import numpy as np
import torch
from torch import nn

from ..actions import N_ACTIONS


def _uniform(shape, fan_in: int, generator: torch.Generator) -> torch.Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return (torch.rand(shape, generator=generator) * 2 - 1) * bound


class AgentNets(nn.Module):
    def __init__(self, n_agents: int, input_dim: int, hidden: int = 128, recurrent: bool = True,
                 seed: int = 0, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.n_agents, self.input_dim, self.hidden, self.recurrent = n_agents, input_dim, hidden, recurrent
        gen = torch.Generator().manual_seed(seed)
        A, D, H = n_agents, input_dim, hidden

        def p(shape, fan_in):
            return nn.Parameter(_uniform(shape, fan_in, gen).to(dtype))

        self.w_in = p((A, D, H), D)
        self.b_in = p((A, H), D)
        if recurrent:
            self.w_ih = p((A, H, 3 * H), H)
            self.w_hh = p((A, H, 3 * H), H)
            self.b_ih = p((A, 3 * H), H)
            self.b_hh = p((A, 3 * H), H)
        else:
            self.w_mid = p((A, H, H), H)
            self.b_mid = p((A, H), H)
        self.w_out = p((A, H, N_ACTIONS), H)
        self.b_out = p((A, N_ACTIONS), H)

    def init_hidden(self, batch: int) -> torch.Tensor:
        return torch.zeros(batch, self.n_agents, self.hidden, dtype=self.w_in.dtype)

    def _gru(self, gi: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        gh = torch.einsum("bah,ahk->bak", h, self.w_hh) + self.b_hh
        i_r, i_z, i_n = gi.chunk(3, dim=-1)
        h_r, h_z, h_n = gh.chunk(3, dim=-1)
        r = torch.sigmoid(i_r + h_r)
        zg = torch.sigmoid(i_z + h_z)
        n = torch.tanh(i_n + r * h_n)
        return (1 - zg) * n + zg * h

    def forward(self, inputs: torch.Tensor, h: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """One step: inputs (B, A, D), h (B, A, H) -> q (B, A, 4), next h."""
        q, hs = self.sequence(inputs.unsqueeze(1), h)
        return q[:, 0], hs

    def sequence(self, inputs: torch.Tensor, h: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Whole sequences: inputs (B, T, A, D) -> q (B, T, A, 4), final h.

        Input-side products are computed for all steps at once; only the
        hidden-to-hidden product runs step by step.
        """
        x = torch.relu(torch.einsum("btad,adh->btah", inputs, self.w_in) + self.b_in)
        if self.recurrent:
            gi = torch.einsum("btah,ahk->btak", x, self.w_ih) + self.b_ih
            feats = []
            for gi_t in gi.unbind(1):
                h = self._gru(gi_t, h)
                feats.append(h)
            feat = torch.stack(feats, dim=1)
        else:
            feat = torch.relu(torch.einsum("btah,ahk->btak", x, self.w_mid) + self.b_mid)
        q = torch.einsum("btah,ahk->btak", feat, self.w_out) + self.b_out
        return q, h


def build_inputs(obs: torch.Tensor, prev_actions: torch.Tensor, use_prev_action: bool) -> torch.Tensor:
    """Concatenate observations with the one-hot previous action (-1 means none)."""
    if not use_prev_action:
        return obs
    onehot = torch.zeros(*prev_actions.shape, N_ACTIONS, dtype=obs.dtype)
    valid = prev_actions >= 0
    onehot[valid] = torch.nn.functional.one_hot(prev_actions[valid], N_ACTIONS).to(obs.dtype)
    return torch.cat([obs, onehot], dim=-1)


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * v))


class NumpyAgents:
    """Inference-only copy of :class:`AgentNets` for one step at a time.

    Executing agents only ever need a single forward step with no gradient;
    plain numpy batched matmuls avoid the framework dispatch overhead that
    dominates at this size.
    """

    def __init__(self, net: AgentNets):
        self.n_agents, self.input_dim, self.hidden, self.recurrent = (
            net.n_agents, net.input_dim, net.hidden, net.recurrent)
        # weight matrices are stored transposed, (A, out, in): matrix-vector
        # products against contiguous rows are faster than vector-matrix ones
        self.p = {k: np.ascontiguousarray(v.detach().cpu().numpy().swapaxes(1, 2) if v.ndim == 3 else v.numpy())
                  for k, v in net.state_dict().items()}

    def init_hidden(self) -> np.ndarray:
        return np.zeros((self.n_agents, self.hidden), dtype=self.p["w_in"].dtype)

    @staticmethod
    def _mv(w: np.ndarray, v: np.ndarray) -> np.ndarray:
        return (w @ v[:, :, None])[:, :, 0]

    def step(self, inputs: np.ndarray, h: np.ndarray):
        """inputs (A, D), h (A, H) -> q (A, 4), next h."""
        p, mv = self.p, self._mv
        inputs = np.asarray(inputs, dtype=p["w_in"].dtype)
        x = np.maximum(mv(p["w_in"], inputs) + p["b_in"], 0.0)
        if self.recurrent:
            gi = mv(p["w_ih"], x) + p["b_ih"]
            gh = mv(p["w_hh"], h) + p["b_hh"]
            H = self.hidden
            r = _sigmoid(gi[:, :H] + gh[:, :H])
            zg = _sigmoid(gi[:, H:2 * H] + gh[:, H:2 * H])
            n = np.tanh(gi[:, 2 * H:] + r * gh[:, 2 * H:])
            h = (1 - zg) * n + zg * h
            feat = h
        else:
            feat = np.maximum(mv(p["w_mid"], x) + p["b_mid"], 0.0)
        q = mv(p["w_out"], feat) + p["b_out"]
        return q, h


def numpy_inputs(obs: np.ndarray, prev_actions: np.ndarray, use_prev_action: bool) -> np.ndarray:
    if not use_prev_action:
        return obs
    onehot = np.zeros((obs.shape[0], N_ACTIONS))
    valid = prev_actions >= 0
    onehot[np.flatnonzero(valid), prev_actions[valid]] = 1.0
    return np.concatenate([obs, onehot], axis=1)
