"""Build the desk-scale digit classification fixtures.

Writes fixtures/digits-{train,test}-{images,labels}-idx{3,1}-ubyte from
scikit-learn's bundled 8x8 digits and trains a 64-300-256-10 ReLU MLP on the
training split, saved as fixtures/digits_mlp.pbm1.
"""

import argparse
import pathlib
import struct

import numpy as np
import torch
from sklearn.datasets import load_digits
from sklearn.model_selection import train_test_split


def write_idx(images: np.ndarray, labels: np.ndarray, stem: pathlib.Path) -> None:
    n = images.shape[0]
    with open(f"{stem}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 8, 8))
        f.write(images.astype(np.uint8).tobytes())
    with open(f"{stem}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.astype(np.uint8).tobytes())


def write_pbm1(layers, path: pathlib.Path) -> None:
    """layers: list of (weight [out, in], bias [out], activation code)."""
    with open(path, "wb") as f:
        f.write(b"PBM1")
        f.write(struct.pack("<I", len(layers)))
        for w, b, act in layers:
            out_dim, in_dim = w.shape
            f.write(struct.pack("<BBII", 0, act, in_dim, out_dim))
            f.write(struct.pack("<IQQ", 2, out_dim, in_dim))
            f.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            f.write(struct.pack("<IQ", 1, out_dim))
            f.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=pathlib.Path, default=pathlib.Path(__file__).resolve().parents[1] / "fixtures")
    parser.add_argument("--epochs", type=int, default=150)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    digits = load_digits()
    pixels = np.rint(digits.data * 255.0 / 16.0).astype(np.uint8)
    x_train, x_test, y_train, y_test = train_test_split(
        pixels, digits.target, test_size=500, random_state=args.seed, stratify=digits.target
    )
    write_idx(x_train, y_train, args.out / "digits-train")
    write_idx(x_test, y_test, args.out / "digits-test")

    torch.manual_seed(args.seed)
    model = torch.nn.Sequential(
        torch.nn.Linear(64, 300), torch.nn.ReLU(),
        torch.nn.Linear(300, 256), torch.nn.ReLU(),
        torch.nn.Linear(256, 10),
    )
    xt = torch.tensor(x_train, dtype=torch.float32) / 255.0
    yt = torch.tensor(y_train, dtype=torch.long)
    opt = torch.optim.Adam(model.parameters(), lr=1e-3, weight_decay=1e-4)
    loss_fn = torch.nn.CrossEntropyLoss()
    for _ in range(args.epochs):
        perm = torch.randperm(len(xt))
        for i in range(0, len(xt), 64):
            idx = perm[i:i + 64]
            opt.zero_grad()
            loss_fn(model(xt[idx]), yt[idx]).backward()
            opt.step()

    with torch.no_grad():
        xs = torch.tensor(x_test, dtype=torch.float32) / 255.0
        acc = (model(xs).argmax(1).numpy() == y_test).mean()
    print(f"test accuracy {acc:.4f}")

    linears = [m for m in model if isinstance(m, torch.nn.Linear)]
    acts = [1, 1, 0]
    write_pbm1([(l.weight.detach().numpy(), l.bias.detach().numpy(), a) for l, a in zip(linears, acts)],
               args.out / "digits_mlp.pbm1")


if __name__ == "__main__":
    main()
