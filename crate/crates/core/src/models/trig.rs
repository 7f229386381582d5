//! Sine and cosine for the activation loops.
//!
//! Cody–Waite reduction by π/2 followed by the classic fdlibm kernel
//! polynomials on `[-π/4, π/4]`. Straight-line code, so the compiler can
//! vectorize the batch loops; arguments beyond `REDUCE_LIMIT` fall back to std.

use std::f64::consts::FRAC_2_PI;

const PIO2_1: f64 = 1.570_796_326_734_125_614_17e0;
const PIO2_2: f64 = 6.077_100_506_303_965_976_6e-11;
const PIO2_3: f64 = 2.022_266_248_711_166_455_8e-21;
const REDUCE_LIMIT: f64 = 1.0e5;

const S1: f64 = -1.666_666_666_666_663_243_48e-1;
const S2: f64 = 8.333_333_333_322_489_461_24e-3;
const S3: f64 = -1.984_126_982_985_794_931_34e-4;
const S4: f64 = 2.755_731_370_707_006_767_89e-6;
const S5: f64 = -2.505_076_025_340_686_341_95e-8;
const S6: f64 = 1.589_690_995_211_550_102_21e-10;

const C1: f64 = 4.166_666_666_666_660_190_37e-2;
const C2: f64 = -1.388_888_888_887_410_957_49e-3;
const C3: f64 = 2.480_158_728_947_672_941_78e-5;
const C4: f64 = -2.755_731_435_139_066_330_35e-7;
const C5: f64 = 2.087_572_321_298_174_827_90e-9;
const C6: f64 = -1.135_964_755_778_819_482_65e-11;

#[inline(always)]
fn kernels(r: f64) -> (f64, f64) {
    let z = r * r;
    let s = r + r * z * (S1 + z * (S2 + z * (S3 + z * (S4 + z * (S5 + z * S6)))));
    let c = 1.0 - 0.5 * z + z * z * (C1 + z * (C2 + z * (C3 + z * (C4 + z * (C5 + z * C6)))));
    (s, c)
}

/// Reduced-range evaluation; only valid for `|x| < REDUCE_LIMIT`.
#[inline(always)]
fn sin_cos_reduced(x: f64) -> (f64, f64) {
    let k = (x * FRAC_2_PI).round_ties_even();
    let r = ((x - k * PIO2_1) - k * PIO2_2) - k * PIO2_3;
    let (s, c) = kernels(r);
    let q = k as i32;
    let (a, b) = if q & 1 != 0 { (c, s) } else { (s, c) };
    let a = if q & 2 != 0 { -a } else { a };
    let b = if (q + 1) & 2 != 0 { -b } else { b };
    (a, b)
}

#[inline(always)]
pub(crate) fn sin_cos(x: f64) -> (f64, f64) {
    if x.abs() < REDUCE_LIMIT {
        sin_cos_reduced(x)
    } else {
        x.sin_cos()
    }
}

#[cfg(test)]
pub(crate) fn sin(x: f64) -> f64 {
    sin_cos(x).0
}

/// `z ← sin(scale·z)`, and `deriv ← scale·cos(scale·z)` when given.
pub(crate) fn sine_activation(z: &mut [f64], deriv: Option<&mut [f64]>, scale: f64) {
    let in_range = z.iter().fold(true, |ok, v| ok & ((scale * v).abs() < REDUCE_LIMIT));
    match (deriv, in_range) {
        (Some(d), true) => {
            for (v, d) in z.iter_mut().zip(d.iter_mut()) {
                let (s, c) = sin_cos_reduced(scale * *v);
                *v = s;
                *d = scale * c;
            }
        }
        (Some(d), false) => {
            for (v, d) in z.iter_mut().zip(d.iter_mut()) {
                let (s, c) = sin_cos(scale * *v);
                *v = s;
                *d = scale * c;
            }
        }
        (None, true) => {
            for v in z.iter_mut() {
                *v = sin_cos_reduced(scale * *v).0;
            }
        }
        (None, false) => {
            for v in z.iter_mut() {
                *v = sin_cos(scale * *v).0;
            }
        }
    }
}
