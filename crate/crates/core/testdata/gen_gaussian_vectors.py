#!/usr/bin/env python3
"""Independent reference for the perturbation stream.

Writes the first 16 normals for a few seeds to gaussian_vectors.json using
Python integers for the generator and the platform C math library for the
Box-Muller transform.
"""
import json
import math
from pathlib import Path

MASK = (1 << 64) - 1


def splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return state, z ^ (z >> 31)


def rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK


class Xoshiro256pp:
    def __init__(self, seed):
        self.s = []
        state = seed
        for _ in range(4):
            state, out = splitmix64(state)
            self.s.append(out)

    def next_u64(self):
        s = self.s
        result = (rotl((s[0] + s[3]) & MASK, 23) + s[0]) & MASK
        t = (s[1] << 17) & MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = rotl(s[3], 45)
        return result

    def next_f64(self):
        return (self.next_u64() >> 11) * 2.0**-53


def normals(seed, n):
    rng = Xoshiro256pp(seed)
    out = []
    while len(out) < n:
        a = rng.next_f64()
        b = rng.next_f64()
        r = math.sqrt(-2.0 * math.log(1.0 - a))
        angle = 2.0 * math.pi * b
        out.append(r * math.cos(angle))
        out.append(r * math.sin(angle))
    return out[:n]


def main():
    seeds = [0, 1, 7, 42, 100_000_000, MASK]
    vectors = [{"seed": s, "normals": normals(s, 16)} for s in seeds]
    path = Path(__file__).with_name("gaussian_vectors.json")
    path.write_text(json.dumps({"count": 16, "vectors": vectors}, indent=2) + "\n")


if __name__ == "__main__":
    main()
