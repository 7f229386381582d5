//! Neural-field training laboratory.
//!
//! Fits coordinate networks to images after an invertible data transform,
//! measures the optimizer steps needed for the inverse-transformed
//! reconstruction to reach a PSNR target, and provides the diagnostics used to
//! study why some transforms train faster: DCT spectra, loss barriers,
//! landscape slices, Hessian directions and per-pixel error statistics.

pub mod analysis;
pub mod models;
pub mod signal;
pub mod sweep;
pub mod training;
pub mod transforms;

/// Derive an independent per-run seed: SplitMix64 finalizer applied to
/// `seed` XOR the 64-bit FNV-1a hash of `label`.
pub fn stream_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = (seed ^ h).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
