"""Relational modelling across region branches.

Branches are treated as a top-to-bottom sequence. ``SkipBiLSTM`` runs a
convolutional LSTM in both directions; before each step every already
visited state is weighted by a scalar skipping gate computed from that
state and the current branch input, and the weighted states are summed to
form the incoming recurrent state.
"""

import torch
from torch import nn

from .errors import ConfigError, InputError

FORWARD = "fwd"
BACKWARD = "bwd"


class ConvLSTMCell(nn.Module):
    def __init__(self, input_channels, hidden_channels, kernel_size=3):
        super().__init__()
        self.hidden_channels = hidden_channels
        self.gates = nn.Conv2d(input_channels + hidden_channels, 4 * hidden_channels,
                               kernel_size, padding=kernel_size // 2)

    def zero_state(self, x):
        B, _, H, W = x.shape
        z = x.new_zeros(B, self.hidden_channels, H, W)
        return z, z

    def forward(self, x, state):
        h, c = state
        i, f, o, g = self.gates(torch.cat([x, h], dim=1)).chunk(4, dim=1)
        c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        return h, c


class SkipGate(nn.Module):
    """f_j = sigmoid(mean(W_j(h_j * v_t))) with W_j a 1x1 convolution.

    With ``shared=False`` every source position j gets its own W_j.
    """

    def __init__(self, hidden_channels, num_branches, shared=True):
        super().__init__()
        self.shared = shared
        count = 1 if shared else num_branches
        self.maps = nn.ModuleList([nn.Conv2d(hidden_channels, hidden_channels, 1)
                                   for _ in range(count)])

    def forward(self, hs, v, sources):
        """hs: (k, B, C, H, W) stored hidden states, v: (B, C, H, W).

        ``sources`` lists the branch index of each stored state. Returns (k, B).
        """
        prod = hs * v.unsqueeze(0)
        if self.shared:
            k, B = prod.shape[:2]
            z = self.maps[0](prod.flatten(0, 1)).view(k, B, -1)
        else:
            z = torch.stack([self.maps[j](p) for j, p in zip(sources, prod)])
            z = z.flatten(2)
        return torch.sigmoid(z.mean(dim=-1))


class SkipBiLSTM(nn.Module):
    """s_t = v_t + P((h_fwd_t + h_bwd_t) / 2), P a 1x1 hidden->input projection.

    cell_state_mode: "aggregate" sums cell states with the same gates as the
    hidden states; "reset" starts every step from a zero cell state.
    """

    def __init__(self, channels, hidden_channels=64, num_branches=12,
                 cell_state_mode="aggregate", gate_sharing="shared"):
        super().__init__()
        if cell_state_mode not in ("aggregate", "reset"):
            raise ConfigError(f"unknown cell_state_mode {cell_state_mode!r}")
        if gate_sharing not in ("shared", "per_index"):
            raise ConfigError(f"unknown gate_sharing {gate_sharing!r}")
        self.channels = channels
        self.cell_state_mode = cell_state_mode
        shared = gate_sharing == "shared"
        self.cells = nn.ModuleDict({
            FORWARD: ConvLSTMCell(channels, hidden_channels),
            BACKWARD: ConvLSTMCell(channels, hidden_channels)})
        self.skip_gates = nn.ModuleDict({
            FORWARD: SkipGate(hidden_channels, num_branches, shared),
            BACKWARD: SkipGate(hidden_channels, num_branches, shared)})
        # h_j * v_t needs matching channels
        self.gate_input = (nn.Identity() if channels == hidden_channels
                           else nn.Conv2d(channels, hidden_channels, 1))
        self.project = nn.Conv2d(hidden_channels, channels, 1)

    def directional_pass(self, v, direction):
        """v: (B, n, C, H, W). Returns hidden states, cell states (in branch
        order) and, per position, the (k, B) gates over its earlier sources."""
        if v.dim() != 5 or v.shape[1] == 0:
            raise InputError("expected a nonempty (B, n, C, H, W) branch sequence")
        n = v.shape[1]
        order = range(n) if direction == FORWARD else range(n - 1, -1, -1)
        cell, gate = self.cells[direction], self.skip_gates[direction]
        hs, cs = [None] * n, [None] * n
        visited, gates = [], [None] * n
        for t in order:
            x = v[:, t]
            if not visited:
                state = cell.zero_state(x)
                gates[t] = x.new_zeros(0, x.shape[0])
            else:
                H = torch.stack([hs[j] for j in visited])
                f = gate(H, self.gate_input(x), visited)
                gates[t] = f
                w = f[..., None, None, None]
                h_in = (w * H).sum(0)
                if self.cell_state_mode == "aggregate":
                    c_in = (w * torch.stack([cs[j] for j in visited])).sum(0)
                else:
                    c_in = torch.zeros_like(h_in)
                state = (h_in, c_in)
            hs[t], cs[t] = cell(x, state)
            visited.append(t)
        return hs, cs, gates

    def forward(self, v, return_gates=False):
        hf, _, gf = self.directional_pass(v, FORWARD)
        hb, _, gb = self.directional_pass(v, BACKWARD)
        h = (torch.stack(hf, 1) + torch.stack(hb, 1)) / 2
        B, n = h.shape[:2]
        s = v + self.project(h.flatten(0, 1)).view(B, n, *v.shape[2:])
        if return_gates:
            return s, {FORWARD: gf, BACKWARD: gb}
        return s


class PlainBiLSTM(nn.Module):
    """Ordinary bidirectional ConvLSTM over the branch sequence (no skipping)."""

    def __init__(self, channels, hidden_channels=64, num_branches=12):
        super().__init__()
        self.cells = nn.ModuleDict({
            FORWARD: ConvLSTMCell(channels, hidden_channels),
            BACKWARD: ConvLSTMCell(channels, hidden_channels)})
        self.project = nn.Conv2d(hidden_channels, channels, 1)

    def _run(self, v, direction):
        n = v.shape[1]
        order = range(n) if direction == FORWARD else range(n - 1, -1, -1)
        cell = self.cells[direction]
        hs = [None] * n
        state = None
        for t in order:
            x = v[:, t]
            state = cell(x, state if state is not None else cell.zero_state(x))
            hs[t] = state[0]
        return torch.stack(hs, 1)

    def forward(self, v):
        if v.dim() != 5 or v.shape[1] == 0:
            raise InputError("expected a nonempty (B, n, C, H, W) branch sequence")
        h = (self._run(v, FORWARD) + self._run(v, BACKWARD)) / 2
        B, n = h.shape[:2]
        return v + self.project(h.flatten(0, 1)).view(B, n, *v.shape[2:])


class NoRelation(nn.Module):
    def forward(self, v):
        return v
