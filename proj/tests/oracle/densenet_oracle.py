"""Reference values from torchvision's DenseNet for the C++ tests.

Writes tests/golden/densenet_tiny.json and prints the frozen constants used
by test_densenet.cpp. Run: python3 tests/oracle/densenet_oracle.py
"""
import json
import pathlib

import torch
import torch.nn.functional as F
from torchvision.models import DenseNet, densenet121

OUT = pathlib.Path(__file__).resolve().parents[1] / "golden" / "densenet_tiny.json"


def full_size_facts():
    net = densenet121(weights=None, num_classes=25).eval()
    trainable = sum(p.numel() for p in net.parameters())
    shapes = []
    x = torch.zeros(1, 3, 224, 224)
    for name, mod in net.features.named_children():
        x = mod(x)
        if name.startswith(("pool0", "denseblock", "transition")):
            shapes.append((name, tuple(x.shape[1:])))
    convs = sum(1 for m in net.modules() if isinstance(m, torch.nn.Conv2d))
    linears = sum(1 for m in net.modules() if isinstance(m, torch.nn.Linear))
    print("densenet121/25 trainable params:", trainable)
    print("weighted layers:", convs + linears)
    for s in shapes:
        print(" ", s)


def tiny_case():
    torch.manual_seed(1234)
    net = DenseNet(growth_rate=4, block_config=(2, 2, 2, 2), num_init_features=8, bn_size=4, num_classes=25)
    # Non-trivial affine and running statistics so eval mode is exercised.
    with torch.no_grad():
        for m in net.modules():
            if isinstance(m, torch.nn.BatchNorm2d):
                m.weight.uniform_(0.5, 1.5)
                m.bias.uniform_(-0.2, 0.2)
                m.running_mean.uniform_(-0.1, 0.1)
                m.running_var.uniform_(0.5, 1.5)
            if isinstance(m, torch.nn.Linear):
                m.bias.uniform_(-0.1, 0.1)
    x = torch.randn(4, 3, 32, 32)
    labels = torch.tensor([0, 7, 13, 24])

    params = {k: v.detach().flatten().tolist() for k, v in net.state_dict().items()
              if not k.endswith("num_batches_tracked")}
    shapes = {k: list(v.shape) for k, v in net.state_dict().items() if not k.endswith("num_batches_tracked")}

    net.eval()
    with torch.no_grad():
        eval_logits = net(x)

    net.train()
    net.zero_grad()
    train_logits = net(x)
    loss = F.cross_entropy(train_logits, labels)
    loss.backward()
    grads = {k: p.grad.detach().flatten().tolist() for k, p in net.named_parameters()}
    running = {k: v.detach().flatten().tolist() for k, v in net.state_dict().items()
               if k.endswith(("running_mean", "running_var"))}

    doc = {
        "config": {"block_layer_counts": [2, 2, 2, 2], "growth_rate": 4, "initial_channels": 8,
                   "bottleneck_width": 4, "compression": 0.5, "num_classes": 25, "input_shape": [32, 32, 3]},
        "param_names": list(params.keys()),
        "shapes": shapes,
        "params": params,
        "input_shape": list(x.shape),
        "input": x.flatten().tolist(),
        "labels": labels.tolist(),
        "eval_logits": eval_logits.flatten().tolist(),
        "train_logits": train_logits.detach().flatten().tolist(),
        "train_loss": loss.item(),
        "grads": grads,
        "running_after_train_step": running,
    }
    OUT.write_text(json.dumps(doc))
    print("wrote", OUT)


if __name__ == "__main__":
    full_size_facts()
    tiny_case()
