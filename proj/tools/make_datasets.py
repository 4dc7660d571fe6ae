#!/usr/bin/env python3
"""Regenerates the bundled CSV datasets in data/ (deterministic)."""

import argparse
from pathlib import Path

import numpy as np


def write_csv(path, x, y, target_names):
    header = [f"x{j + 1}" for j in range(x.shape[1])] + target_names
    rows = np.column_stack([x, y])
    np.savetxt(path, rows, delimiter=",", header=",".join(header), comments="", fmt="%.17g")


def conjugate(rng, n=200, d=5):
    x = rng.standard_normal((n, d))
    theta = np.array([1.0, -0.5, 0.25, 2.0, -1.5])
    return x, x @ theta + rng.standard_normal(n)


def conjugate_orthogonal(rng, n=200, d=5):
    q, _ = np.linalg.qr(rng.standard_normal((n, d)))
    x = q * np.sqrt(n / 10.0)
    theta = np.array([0.5, 1.0, -1.0, 0.0, 0.75])
    return x, x @ theta + rng.standard_normal(n)


def logistic(rng, n=200, d=3):
    x = rng.standard_normal((n, d))
    theta = np.array([1.5, -1.0, 0.5])
    p = 1.0 / (1.0 + np.exp(-(x @ theta)))
    return x, (rng.uniform(size=n) < p).astype(float)


def sine(rng, n=120):
    x = rng.uniform(-3.0, 3.0, size=(n, 1))
    return x, np.sin(x[:, 0]) + 0.1 * rng.standard_normal(n)


def moons(rng, n=200):
    t = rng.uniform(0.0, np.pi, size=n)
    label = rng.integers(0, 2, size=n)
    x = np.column_stack([np.cos(t) + label * 1.0 - 0.5, np.sin(t) * (1 - 2 * label) + label * 0.3])
    return x + 0.1 * rng.standard_normal((n, 2)), label.astype(float)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "data")
    parser.add_argument("--seed", type=int, default=20240611)
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)

    write_csv(args.out / "conjugate.csv", *conjugate(rng), ["y"])
    write_csv(args.out / "conjugate_orthogonal.csv", *conjugate_orthogonal(rng), ["y"])
    write_csv(args.out / "logistic.csv", *logistic(rng), ["y"])
    write_csv(args.out / "sine.csv", *sine(rng), ["y"])
    write_csv(args.out / "moons.csv", *moons(rng), ["y"])

    grid = np.linspace(-4.0, 4.0, 9).reshape(-1, 1)
    np.savetxt(args.out / "sine_inputs.csv", grid, delimiter=",", header="x1", comments="", fmt="%.17g")
    probe = np.array([[0.0, 0.0, 0.0], [1.0, -1.0, 0.5], [-2.0, 1.0, 0.0]])
    np.savetxt(args.out / "logistic_inputs.csv", probe, delimiter=",", header="x1,x2,x3", comments="",
               fmt="%.17g")


if __name__ == "__main__":
    main()
