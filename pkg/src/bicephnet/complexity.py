"""Parameter, FLOP and on-disk size accounting for dense layer graphs.

FLOP convention (one input row): a dense layer costs ``2*in*out + out``
(one multiply and one add per weight, plus the bias add); ReLU and sigmoid
cost ``out``; softmax ``3*out``; L2 normalisation ``3*dim``; identity and
concatenation are free.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .errors import ValidationError

FLOP_CONVENTION = "2 FLOPs per multiply-add; dense=2*in*out+out; relu/sigmoid=out; softmax=3*out; l2norm=3*dim"
ACTIVATION_FLOPS = {"identity": 0, "relu": 1, "sigmoid": 1, "softmax": 3}


@dataclass
class LayerSpec:
    kind: str  # "dense" or "l2norm"
    in_dim: int
    out_dim: int
    activation: str = "identity"
    name: str = ""

    def params(self) -> int:
        if self.kind == "dense":
            return self.out_dim * (self.in_dim + 1)
        return 0

    def flops(self) -> int:
        if self.kind == "dense":
            return 2 * self.in_dim * self.out_dim + self.out_dim + ACTIVATION_FLOPS[self.activation] * self.out_dim
        return 3 * self.out_dim


@dataclass
class ModelDescription:
    """Named branches, each a chain of layers whose widths must connect.

    Concatenations between branches cost nothing and are implied by the
    consuming branch's first ``in_dim``.
    """

    branches: dict = field(default_factory=dict)

    def layers(self):
        for chain in self.branches.values():
            yield from chain

    def validate(self) -> None:
        for bname, chain in self.branches.items():
            for layer in chain:
                if layer.kind not in ("dense", "l2norm"):
                    raise ValidationError(f"{bname}: unknown layer kind {layer.kind!r}")
                if layer.in_dim < 1 or layer.out_dim < 1:
                    raise ValidationError(f"{bname}: non-positive width in {layer}")
                if layer.kind == "l2norm" and layer.in_dim != layer.out_dim:
                    raise ValidationError(f"{bname}: l2norm must preserve width")
                if layer.activation not in ACTIVATION_FLOPS:
                    raise ValidationError(f"{bname}: unknown activation {layer.activation!r}")
            for prev, nxt in zip(chain, chain[1:]):
                if prev.out_dim != nxt.in_dim:
                    raise ValidationError(
                        f"{bname}: {prev.name or prev.kind} outputs {prev.out_dim} but next layer expects {nxt.in_dim}"
                    )

    def to_dict(self) -> dict:
        return {k: [asdict(l) for l in v] for k, v in self.branches.items()}


def chain(dims, activation="relu", name="dense", last_activation=None) -> list:
    dims = list(dims)
    out = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        act = last_activation if (last_activation and i == len(dims) - 2) else activation
        out.append(LayerSpec("dense", a, b, act, f"{name}.{i}"))
    return out


def describe_biceph(config) -> ModelDescription:
    """Layer graph of a BicephNet built from ``config``."""
    c = config
    out_act = "sigmoid" if c.binary else "softmax"
    head_dims = [c.embed_dim + c.prior_out, *c.concat_head_dims, c.output_dim]
    return ModelDescription(
        {
            "backbone": chain([c.input_dim, *c.backbone_dims, c.flat_dim], "relu", "backbone"),
            "triplet": [
                LayerSpec("dense", c.flat_dim, c.embed_dim, "identity", "triplet.0"),
                LayerSpec("l2norm", c.embed_dim, c.embed_dim, "identity", "triplet.l2"),
            ],
            "prior": [LayerSpec("dense", c.flat_dim, c.prior_out, c.prior_activation.value, "prior.0")],
            "concat": chain(head_dims, "relu", "concat", last_activation=out_act),
        }
    )


def describe_triplet_baseline(config) -> ModelDescription:
    """Backbone plus the triplet branch only (the kNN-classified triplet network)."""
    full = describe_biceph(config)
    return ModelDescription({"backbone": full.branches["backbone"], "triplet": full.branches["triplet"]})


@dataclass
class CostReport:
    total_params: int
    per_layer: list
    flops_forward: int
    size_bytes: int
    bytes_per_param: int
    envelope_bytes: int
    flop_convention: str = FLOP_CONVENTION

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_text(self) -> str:
        w = max([len("layer")] + [len(r["name"]) for r in self.per_layer])
        lines = [f"{'layer':<{w}}  {'kind':<7}{'in':>6}{'out':>6}{'params':>10}{'flops':>10}"]
        for r in self.per_layer:
            lines.append(f"{r['name']:<{w}}  {r['kind']:<7}{r['in_dim']:>6}{r['out_dim']:>6}{r['params']:>10}{r['flops']:>10}")
        lines.append("")
        lines.append(f"total params   {self.total_params} ({self.total_params / 1e6:.6f} MParams)")
        lines.append(f"forward flops  {self.flops_forward} ({self.flops_forward / 1e6:.6f} MFlops, one row)")
        lines.append(f"size           {self.size_bytes} bytes ({self.bytes_per_param} B/param + {self.envelope_bytes} B envelope)")
        lines.append(f"convention     {self.flop_convention}")
        return "\n".join(lines) + "\n"


def count_params(desc: ModelDescription) -> int:
    desc.validate()
    return sum(l.params() for l in desc.layers())


def estimate_flops(desc: ModelDescription) -> int:
    desc.validate()
    return sum(l.flops() for l in desc.layers())


def estimate_size(desc: ModelDescription, bytes_per_param: float = 8, envelope_bytes: int = 0) -> int:
    """Payload ``params * bytes_per_param`` plus a measured serialization envelope."""
    return int(round(count_params(desc) * bytes_per_param)) + int(envelope_bytes)


def cost_report(desc: ModelDescription, bytes_per_param: float = 8, envelope_bytes: int = 0) -> CostReport:
    desc.validate()
    per_layer = [
        {"name": l.name, "kind": l.kind, "in_dim": l.in_dim, "out_dim": l.out_dim, "params": l.params(), "flops": l.flops()}
        for l in desc.layers()
    ]
    total = sum(r["params"] for r in per_layer)
    return CostReport(
        total_params=total,
        per_layer=per_layer,
        flops_forward=sum(r["flops"] for r in per_layer),
        size_bytes=estimate_size(desc, bytes_per_param, envelope_bytes),
        bytes_per_param=bytes_per_param,
        envelope_bytes=envelope_bytes,
    )
