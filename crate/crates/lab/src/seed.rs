//! Splitting of the master seed into per-cell stream seeds.

use serde::Serialize;

/// What a derived stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Sample = 1,
    Aux = 2,
    Dictionary = 3,
    Signals = 4,
    Teacher = 5,
    TrainingSignals = 6,
    Heldout = 7,
    Draws = 8,
    Rotation = 9,
    WideDictionary = 10,
}

/// Human-readable statement of [`mix`], recorded in the run manifest.
pub const MIXING_RULE: &str = "seed = f(f(f(master ^ f(purpose)) ^ f(n + 1)) ^ f(rep + 2)) with f the SplitMix64 \
    step x -> finalize(x + 0x9E3779B97F4A7C15), finalize(z) = z3 ^ (z3 >> 31), z2 = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9, \
    z3 = (z2 ^ (z2 >> 27)) * 0x94D049BB133111EB, all arithmetic wrapping mod 2^64";

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream seed for `(purpose, n, rep)` under `master`.
pub fn mix(master: u64, purpose: Purpose, n: usize, rep: u64) -> u64 {
    let a = splitmix(master ^ splitmix(purpose as u64));
    let b = splitmix(a ^ splitmix(n as u64 + 1));
    splitmix(b ^ splitmix(rep + 2))
}
