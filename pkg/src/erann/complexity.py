"""Parameter and multiply-accumulate accounting derived from the layer layout.

Nothing here allocates tensors: counts are computed from block specs and the
output-size formula, so they can be cross-checked against a built model.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import N_MELS, STAGE_WIDTHS, ErannConfig, arb_specs
from .nn.ops import conv_output_size


@dataclass(frozen=True)
class LayerCost:
    name: str
    kind: str  # conv | bn | fc
    out_shape: tuple  # (freq, time, channels) or (features,)
    params: int
    macs: int


def layer_table(config: ErannConfig, t_seconds: int = 1) -> list:
    """Per-layer parameter and MAC counts for a ``128 x 128*t`` input."""
    config.validate()
    if t_seconds < 1:
        raise ValueError(f"t_seconds must be >= 1, got {t_seconds}")
    rows = []
    f, t = N_MELS, 128 * t_seconds
    rows.append(LayerCost("input_bn", "bn", (f, t, 1), 2 * N_MELS, 0))

    def conv(name, cin, cout, kernel, stride, pad, f, t):
        fo = conv_output_size(f, kernel[0], stride[0], pad[0])
        to = conv_output_size(t, kernel[1], stride[1], pad[1])
        params = cout * cin * kernel[0] * kernel[1]
        rows.append(LayerCost(name, "conv", (fo, to, cout), params, params * fo * to))
        return fo, to

    for spec in arb_specs(config):
        p = spec.name
        stride = (spec.stride_f, spec.stride_t)
        if spec.pre_activation:
            rows.append(LayerCost(f"{p}.bn1", "bn", (f, t, spec.in_ch), 2 * spec.in_ch, 0))
        fo, to = conv(f"{p}.conv1", spec.in_ch, spec.out_ch, spec.conv1_kernel, stride, (1, 1), f, t)
        rows.append(LayerCost(f"{p}.bn2", "bn", (fo, to, spec.out_ch), 2 * spec.out_ch, 0))
        conv(f"{p}.conv2", spec.out_ch, spec.out_ch, spec.conv2_kernel, (1, 1), spec.conv2_padding, fo, to)
        if spec.shortcut == "projection":
            conv(f"{p}.shortcut", spec.in_ch, spec.out_ch, (1, 1), stride, (0, 0), f, t)
        f, t = fo, to

    width = STAGE_WIDTHS[-1] * config.W
    rows.append(LayerCost("fc1", "fc", (width,), width * width + width, width * width))
    n = config.n_classes
    rows.append(LayerCost("fc2", "fc", (n,), width * n + n, width * n))
    return rows


def count_params(config: ErannConfig) -> int:
    return sum(r.params for r in layer_table(config, 1))


def count_macs(config: ErannConfig, t_seconds: int = 10, include_fc: bool = True) -> int:
    rows = layer_table(config, t_seconds)
    return sum(r.macs for r in rows if include_fc or r.kind != "fc")


def fc_macs(config: ErannConfig) -> int:
    width = STAGE_WIDTHS[-1] * config.W
    return width * width + width * config.n_classes


def stage_output_table(config: ErannConfig, t_seconds: int) -> list:
    """``(stage, (freq, time, channels))`` rows after each stage."""
    rows = layer_table(config, t_seconds)
    out = [("extraction", rows[0].out_shape)]
    for stage in range(len(STAGE_WIDTHS)):
        last = [r for r in rows if r.name.startswith(f"stage{stage}.block3.conv2")][0]
        out.append((f"stage{stage}", last.out_shape))
    out.append(("pool", (1, 1, STAGE_WIDTHS[-1] * config.W)))
    return out


def format_report(config: ErannConfig, t_seconds: int) -> str:
    params = count_params(config)
    macs = count_macs(config, t_seconds)
    lines = [
        f"model: {config.name} (W={config.W}, s_m={config.s_m}, N={config.n_classes}, head={config.head})",
        f"params: {params} ({params / 1e6:.1f}M)",
        f"macs: {macs} ({macs / 1e9:.2f}G) for a {t_seconds}s input",
        "stage        freq  time  channels",
    ]
    for name, (f, t, c) in stage_output_table(config, t_seconds):
        lines.append(f"{name:12s} {f:4d} {t:5d} {c:9d}")
    return "\n".join(lines)
