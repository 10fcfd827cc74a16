"""Generate the benchmark network description files.

Run from the repository root:  python3 tools/gen_networks.py
Writes src/ntxsim/networks/<name>.json.
"""

from __future__ import annotations

import json
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "ntxsim" / "networks"


def _pair(v):
    return list(v) if isinstance(v, (tuple, list)) else [v, v]


class Builder:
    """Emits layers in order; each method returns the produced layer's name."""

    def __init__(self, name, input_shape, retained, retain_input=False, notes=""):
        self.name = name
        self.input = list(input_shape)
        self.layers = []
        self.retained = retained
        self.retain_input = retain_input
        self.notes = notes
        self.last = "input"
        self.counts = {}

    def _add(self, kind, src=None, **geom):
        k = self.counts.get(kind, 0) + 1
        self.counts[kind] = k
        name = f"{kind}{k}"
        layer = {"name": name, "kind": kind}
        src = self.last if src is None else src
        if "inputs" not in geom and src != self._prev():
            layer["from"] = src
        layer.update(geom)
        self.layers.append(layer)
        self.last = name
        return name

    def _prev(self):
        return self.layers[-1]["name"] if self.layers else "input"

    def conv(self, co, k, stride=1, pad=0, groups=1, src=None, bn=False, relu=True):
        n = self._add("conv", src, out_channels=co, kernel=_pair(k), stride=stride, pad=_pair(pad), groups=groups,
                      bias=not bn)
        if bn:
            n = self.batchnorm()
        if relu:
            n = self.relu()
        return n

    def relu(self, src=None):
        return self._add("relu", src)

    def batchnorm(self, src=None):
        return self._add("batchnorm", src)

    def lrn(self, src=None):
        return self._add("lrn", src, size=5)

    def pool(self, k, stride, pad=0, ceil=False, kind="maxpool", src=None):
        return self._add(kind, src, kernel=_pair(k), stride=stride, pad=_pair(pad), ceil_mode=ceil)

    def linear(self, out, src=None, in_features=None):
        extra = {} if in_features is None else {"in_features": in_features}
        return self._add("linear", src, out_features=out, bias=True, **extra)

    def concat(self, inputs):
        return self._add("concat", None, inputs=list(inputs))

    def add(self, main, shortcut):
        return self._add("add", None, inputs=[main, shortcut])

    def softmax(self):
        return self._add("softmax")

    def dump(self):
        doc = {"name": self.name, "input": self.input, "retained": self.retained,
               "retain_input": self.retain_input, "notes": self.notes, "layers": self.layers}
        OUT.mkdir(parents=True, exist_ok=True)
        path = OUT / f"{self.name}.json"
        head = {k: v for k, v in doc.items() if k != "layers"}
        lines = ",\n".join("  " + json.dumps(layer) for layer in self.layers)
        text = json.dumps(head, indent=1)[:-2] + ',\n "layers": [\n' + lines + "\n ]\n}\n"
        json.loads(text)
        path.write_text(text)
        return path


def alexnet():
    b = Builder("alexnet", (3, 227, 227), ["conv", "relu", "maxpool"], retain_input=True,
                notes="Two-tower grouping as in the original network; LRN after conv1 and conv2.")
    b.conv(96, 11, 4)
    b.lrn()
    b.pool(3, 2)
    b.conv(256, 5, 1, 2, groups=2)
    b.lrn()
    b.pool(3, 2)
    b.conv(384, 3, 1, 1)
    b.conv(384, 3, 1, 1, groups=2)
    b.conv(256, 3, 1, 1, groups=2)
    b.pool(3, 2)
    b.linear(4096)
    b.relu()
    b.linear(4096)
    b.relu()
    b.linear(1000)
    b.softmax()
    return b


def googlenet():
    b = Builder("googlenet", (3, 224, 224), ["conv", "batchnorm", "relu", "maxpool", "concat"],
                notes="Batch-normalised variant (BN after every convolution, no LRN); no auxiliary heads.")

    def cbr(co, k, stride=1, pad=0, src=None):
        return b.conv(co, k, stride, pad, src=src, bn=True)

    cbr(64, 7, 2, 3)
    b.pool(3, 2, ceil=True)
    cbr(64, 1)
    cbr(192, 3, 1, 1)
    b.pool(3, 2, ceil=True)

    def inception(c1, c3r, c3, c5r, c5, pp):
        x = b.last
        o1 = cbr(c1, 1, src=x)
        cbr(c3r, 1, src=x)
        o2 = cbr(c3, 3, 1, 1)
        cbr(c5r, 1, src=x)
        o3 = cbr(c5, 5, 1, 2)
        b.pool(3, 1, 1, src=x)
        o4 = cbr(pp, 1)
        return b.concat([o1, o2, o3, o4])

    inception(64, 96, 128, 16, 32, 32)
    inception(128, 128, 192, 32, 96, 64)
    b.pool(3, 2, ceil=True)
    inception(192, 96, 208, 16, 48, 64)
    inception(160, 112, 224, 24, 64, 64)
    inception(128, 128, 256, 24, 64, 64)
    inception(112, 144, 288, 32, 64, 64)
    inception(256, 160, 320, 32, 128, 128)
    b.pool(3, 2, ceil=True)
    inception(256, 160, 320, 32, 128, 128)
    inception(384, 192, 384, 48, 128, 128)
    b.pool(7, 1, kind="avgpool")
    b.linear(1000)
    b.softmax()
    return b


def inception_v3():
    b = Builder("inception_v3", (3, 299, 299), ["conv", "batchnorm", "relu"],
                notes="Batch normalisation after every convolution; no auxiliary head.")

    def cbr(co, k, stride=1, pad=0, src=None):
        return b.conv(co, k, stride, pad, src=src, bn=True)

    cbr(32, 3, 2)
    cbr(32, 3)
    cbr(64, 3, 1, 1)
    b.pool(3, 2)
    cbr(80, 1)
    cbr(192, 3)
    b.pool(3, 2)

    def block_a(pf):
        x = b.last
        o1 = cbr(64, 1, src=x)
        cbr(48, 1, src=x)
        o2 = cbr(64, 5, 1, 2)
        cbr(64, 1, src=x)
        cbr(96, 3, 1, 1)
        o3 = cbr(96, 3, 1, 1)
        b.pool(3, 1, 1, kind="avgpool", src=x)
        o4 = cbr(pf, 1)
        b.concat([o1, o2, o3, o4])

    for pf in (32, 64, 64):
        block_a(pf)
    x = b.last
    o1 = cbr(384, 3, 2, src=x)
    cbr(64, 1, src=x)
    cbr(96, 3, 1, 1)
    o2 = cbr(96, 3, 2)
    o3 = b.pool(3, 2, src=x)
    b.concat([o1, o2, o3])

    def block_c(c7):
        x = b.last
        o1 = cbr(192, 1, src=x)
        cbr(c7, 1, src=x)
        cbr(c7, (1, 7), 1, (0, 3))
        o2 = cbr(192, (7, 1), 1, (3, 0))
        cbr(c7, 1, src=x)
        cbr(c7, (7, 1), 1, (3, 0))
        cbr(c7, (1, 7), 1, (0, 3))
        cbr(c7, (7, 1), 1, (3, 0))
        o3 = cbr(192, (1, 7), 1, (0, 3))
        b.pool(3, 1, 1, kind="avgpool", src=x)
        o4 = cbr(192, 1)
        b.concat([o1, o2, o3, o4])

    for c7 in (128, 160, 160, 192):
        block_c(c7)
    x = b.last
    cbr(192, 1, src=x)
    o1 = cbr(320, 3, 2)
    cbr(192, 1, src=x)
    cbr(192, (1, 7), 1, (0, 3))
    cbr(192, (7, 1), 1, (3, 0))
    o2 = cbr(192, 3, 2)
    o3 = b.pool(3, 2, src=x)
    b.concat([o1, o2, o3])

    def block_e():
        x = b.last
        o1 = cbr(320, 1, src=x)
        y = cbr(384, 1, src=x)
        a1 = cbr(384, (1, 3), 1, (0, 1), src=y)
        a2 = cbr(384, (3, 1), 1, (1, 0), src=y)
        o2 = b.concat([a1, a2])
        cbr(448, 1, src=x)
        y = cbr(384, 3, 1, 1)
        c1 = cbr(384, (1, 3), 1, (0, 1), src=y)
        c2 = cbr(384, (3, 1), 1, (1, 0), src=y)
        o3 = b.concat([c1, c2])
        b.pool(3, 1, 1, kind="avgpool", src=x)
        o4 = cbr(192, 1)
        b.concat([o1, o2, o3, o4])

    block_e()
    block_e()
    b.pool(8, 1, kind="avgpool")
    b.linear(1000)
    b.softmax()
    return b


def resnet(name, blocks, bottleneck):
    b = Builder(name, (3, 224, 224), ["conv", "relu", "maxpool"],
                notes="Parameter-free shortcuts (strided identity, zero-padded channels); "
                      "classifier has 25088 inputs.")
    b.conv(64, 7, 2, 3)
    b.pool(3, 2, 1)
    for si, (nb, width) in enumerate(zip(blocks, (64, 128, 256, 512))):
        for k in range(nb):
            stride = 2 if (k == 0 and si > 0) else 1
            x = b.last
            if bottleneck:
                b.conv(width, 1, stride, src=x)
                b.conv(width, 3, 1, 1)
                main = b.conv(4 * width, 1, relu=False)
            else:
                b.conv(width, 3, stride, 1, src=x)
                main = b.conv(width, 3, 1, 1, relu=False)
            b.add(main, x)
            b.relu()
    # The classifier is sized for 25088 inputs (a flattened 512x7x7 map); the
    # bottleneck variants feed it the leading 25088 values of their wider map.
    b.linear(1000, in_features=25088)
    b.softmax()
    return b


def lstm512():
    b = Builder("lstm512", (512, 1, 1), ["lstm"], notes="One LSTM cell, 512 inputs, 512 hidden units, batch 32.")
    b._add("lstm", None, input_size=512, hidden_size=512, batch=32)
    return b


def main():
    nets = [alexnet(), googlenet(), inception_v3(), resnet("resnet34", (3, 4, 6, 3), False),
            resnet("resnet50", (3, 4, 6, 3), True), resnet("resnet152", (3, 8, 36, 3), True), lstm512()]
    for n in nets:
        print(n.dump())


if __name__ == "__main__":
    main()
