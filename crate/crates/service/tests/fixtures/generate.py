"""Regenerate the correlate/fit fixtures.

Writes two PBTG tag files from a synthetic single emitter with Poisson
background, and the expected histogram counts computed by direct pair
enumeration. Needs numpy only.
"""

import json
import struct
from pathlib import Path

import numpy as np

SEED = 20240611
LIFETIME_NS = 12.0
EXCITATION_RATE = 2.0e7  # 1/s
DETECTED_FRACTION = 0.5  # of emitted photons, both channels together
RHO = 0.8  # signal fraction per channel
DURATION_PS = 6_000_000_000  # 6 ms
BIN_WIDTH_PS = 200
BIN_COUNT = 1000

HERE = Path(__file__).parent


def emitter_photons(rng, duration_ps):
    """Two-level renewal: wait Exp(k_exc) for excitation, then Exp(k_dec)."""
    k_dec = 1e9 / LIFETIME_NS
    mean_cycle_ps = (1 / EXCITATION_RATE + 1 / k_dec) * 1e12
    n = int(duration_ps / mean_cycle_ps * 1.2) + 100
    gaps = rng.exponential(1e12 / EXCITATION_RATE, n) + rng.exponential(1e12 / k_dec, n)
    t = np.cumsum(gaps)
    return t[t < duration_ps]


def poisson_times(rng, rate_per_s, duration_ps):
    n = rng.poisson(rate_per_s * duration_ps * 1e-12)
    return rng.uniform(0, duration_ps, n)


def write_pbtg(path, channel, tags):
    with open(path, "wb") as f:
        f.write(b"PBTG")
        f.write(struct.pack("<HHQ", 1, channel, len(tags)))
        f.write(np.asarray(tags, dtype="<u8").tobytes())


def brute_force(a, b):
    half = BIN_COUNT // 2 * BIN_WIDTH_PS
    counts = np.zeros(BIN_COUNT, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    for ta in np.asarray(a, dtype=np.int64):
        lo = np.searchsorted(b, ta - half, side="left")
        hi = np.searchsorted(b, ta + half, side="left")
        tau = b[lo:hi] - ta
        np.add.at(counts, (tau + half) // BIN_WIDTH_PS, 1)
    return counts


def main():
    rng = np.random.default_rng(SEED)
    photons = emitter_photons(rng, DURATION_PS)
    photons = photons[rng.random(photons.size) < DETECTED_FRACTION]
    to_a = rng.random(photons.size) < 0.5
    signal_rate = photons.size / 2 / (DURATION_PS * 1e-12)
    background_rate = signal_rate * (1 - RHO) / RHO
    channels = []
    for sel in (to_a, ~to_a):
        t = np.concatenate([photons[sel], poisson_times(rng, background_rate, DURATION_PS)])
        channels.append(np.sort(np.floor(t).astype(np.uint64)))
    a, b = channels
    write_pbtg(HERE / "tags_a.pbtg", 0, a)
    write_pbtg(HERE / "tags_b.pbtg", 1, b)

    counts = brute_force(a, b)
    duration = int(max(a[-1], b[-1]))
    factor = duration / (a.size * b.size * BIN_WIDTH_PS)
    k = 1e9 / LIFETIME_NS + EXCITATION_RATE
    expected = {
        "bin_width_ps": BIN_WIDTH_PS,
        "bin_count": BIN_COUNT,
        "n_a": int(a.size),
        "n_b": int(b.size),
        "duration_ps": duration,
        "counts": counts.tolist(),
        "g2": (counts * factor).tolist(),
        "g2_zero": 1 - RHO**2,
        "g2_zero_tolerance": 0.1,
        "tau_anti_ns": 1e9 / k,
        "tau_anti_tolerance_ns": 2.5,
    }
    (HERE / "expected.json").write_text(json.dumps(expected, indent=1) + "\n")
    print(f"n_a={a.size} n_b={b.size} coincidences={counts.sum()} mean/bin={counts.mean():.1f}")


if __name__ == "__main__":
    main()
