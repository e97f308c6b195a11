//! Seeded synthetic ridge patterns for the three quality classes.
//!
//! Every image is a curved sinusoidal stripe field. `standard` images get
//! mid-contrast ridges of roughly even width, `dry` images thin, faint ridges
//! with blotches where they vanish, `wet` images dark, thick ridges that
//! swallow most of the valleys.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::features::Label;
use crate::imgcore::GrayImage;

/// Class-specific rendering ranges.
#[derive(Debug, Clone, Copy)]
struct Style {
    background: (f64, f64),
    depth: (f64, f64),
    /// Ridge where the carrier wave exceeds this level; higher means thinner.
    level: (f64, f64),
    noise: f64,
    gaps: (usize, usize),
}

fn style(label: Label) -> Style {
    match label {
        Label::Standard => Style {
            background: (160.0, 220.0),
            depth: (85.0, 150.0),
            level: (-0.2, 0.2),
            noise: 10.0,
            gaps: (0, 3),
        },
        Label::Dry => Style {
            background: (175.0, 235.0),
            depth: (60.0, 125.0),
            level: (0.1, 0.55),
            noise: 9.0,
            gaps: (3, 12),
        },
        Label::Wet => Style {
            background: (110.0, 185.0),
            depth: (50.0, 110.0),
            level: (-0.65, -0.2),
            noise: 8.0,
            gaps: (0, 2),
        },
    }
}

/// Seed of image `index` of class `label` under master `seed`.
pub fn image_seed(seed: u64, label: Label, index: usize) -> u64 {
    mix(mix(mix(seed) ^ label.index() as u64) ^ index as u64)
}

/// splitmix64 step.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// One synthetic `side x side` fingerprint.
pub fn synth_image(label: Label, side: usize, seed: u64) -> GrayImage {
    let st = style(label);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |(lo, hi): (f64, f64)| rng.random_range(lo..=hi);
    let background = pick(st.background);
    let depth = pick(st.depth);
    let level = pick(st.level);
    let period = pick((7.0, 10.0));
    let angle = pick((0.0, PI));
    let phase = pick((0.0, 2.0 * PI));
    let bend = pick((0.5, 3.0));
    let cy = pick((0.3, 0.7)) * side as f64;
    let cx = pick((0.3, 0.7)) * side as f64;
    let n_gaps = rng.random_range(st.gaps.0..=st.gaps.1);
    let gaps: Vec<(f64, f64, f64)> = (0..n_gaps)
        .map(|_| {
            (
                rng.random_range(0.0..side as f64),
                rng.random_range(0.0..side as f64),
                rng.random_range(6.0..16.0),
            )
        })
        .collect();
    let noise = Normal::new(0.0, st.noise).expect("positive noise");
    let (cos, sin) = (angle.cos(), angle.sin());
    let k = 2.0 * PI / period;
    GrayImage::from_fn(side, side, |r, c| {
        let (y, x) = (r as f64 - cy, c as f64 - cx);
        let radial = (x * x + y * y) / side as f64;
        let wave = (k * (x * cos + y * sin) + bend * radial / period + phase).sin();
        let mut ridge = ((wave - level) / 0.3 + 0.5).clamp(0.0, 1.0);
        for &(gy, gx, gr) in &gaps {
            let d = ((r as f64 - gy).powi(2) + (c as f64 - gx).powi(2)).sqrt();
            if d < gr {
                ridge *= d / gr;
            }
        }
        let v = background - depth * ridge + noise.sample(&mut rng);
        v.round().clamp(0.0, 255.0) as u8
    })
}

/// A labelled synthetic image.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub id: String,
    pub label: Label,
    pub image: GrayImage,
}

/// `counts[i]` images of class `Label::ALL[i]`, grouped by class.
pub fn synth_pool(counts: [usize; 3], side: usize, seed: u64) -> Vec<SynthSample> {
    let mut out = Vec::with_capacity(counts.iter().sum());
    for (label, &n) in Label::ALL.iter().zip(&counts) {
        for i in 0..n {
            out.push(SynthSample {
                id: format!("{label}_{i:04}"),
                label: *label,
                image: synth_image(*label, side, image_seed(seed, *label, i)),
            });
        }
    }
    out
}
