"""Seeded random streams.

Every stream is a numpy ``Generator`` over PCG64, keyed by the experiment
seed and a fixed stream index, so each purpose (data generation, splitting,
batch sampling, parameter init) draws independently of the others.
Gaussians use Box-Muller on PCG64 uniforms so their consumption order is
pinned: two uniforms per pair of normals, cosine branch first.
"""
import numpy as np

STREAMS = {"generate": 0, "split": 1, "sample": 2, "init": 3}


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), STREAMS[name]])))


def normal(rng: np.random.Generator, size, scale: float = 1.0) -> np.ndarray:
    shape = (size,) if np.isscalar(size) else tuple(size)
    n = int(np.prod(shape))
    pairs = (n + 1) // 2
    u = rng.random(2 * pairs)
    u1 = 1.0 - u[0::2]  # (0, 1], log stays finite
    u2 = u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    z = np.empty(2 * pairs)
    z[0::2] = r * np.cos(theta)
    z[1::2] = r * np.sin(theta)
    return scale * z[:n].reshape(shape)


def get_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def set_state(rng: np.random.Generator, state: dict) -> None:
    rng.bit_generator.state = state
