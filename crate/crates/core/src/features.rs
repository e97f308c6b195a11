//! The six scalar quality features of a fingerprint image:
//! mean, variance, scaled squared ridge/valley sum, block directional
//! difference, ridge/valley ratio and orientation change.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::imgcore::{self, GrayImage, Kernel3x3};

pub const FEATURE_COUNT: usize = 6;
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] =
    ["mu", "sigma2", "ssrvr", "bdd_avg", "rvr_avg", "theta_avg"];

/// Quality class of a fingerprint impression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Dry,
    Standard,
    Wet,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Dry, Label::Standard, Label::Wet];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Dry => "dry",
            Label::Standard => "standard",
            Label::Wet => "wet",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dry" => Ok(Label::Dry),
            "standard" => Ok(Label::Standard),
            "wet" => Ok(Label::Wet),
            other => Err(Error::InvalidParameter(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub mu: f64,
    pub sigma2: f64,
    pub ssrvr: f64,
    pub bdd_avg: f64,
    pub rvr_avg: f64,
    pub theta_avg: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.mu,
            self.sigma2,
            self.ssrvr,
            self.bdd_avg,
            self.rvr_avg,
            self.theta_avg,
        ]
    }

    pub fn from_array(a: [f64; FEATURE_COUNT]) -> Self {
        Self {
            mu: a[0],
            sigma2: a[1],
            ssrvr: a[2],
            bdd_avg: a[3],
            rvr_avg: a[4],
            theta_avg: a[5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: FeatureVector,
    pub label: Label,
    pub source_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub laplacian: Kernel3x3,
    /// Divisor applied to the mean Laplacian response before `atan`.
    pub theta_scale: f64,
    /// Scale factor inside the squared ridge/valley sum.
    pub epsilon: f64,
    /// Block side for the ridge/valley ratio.
    pub rvr_block: usize,
    /// Ridge/valley split for blocks of a single intensity.
    pub threshold: u8,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            laplacian: Kernel3x3::POSITIVE_LAPLACIAN,
            theta_scale: 255.0,
            epsilon: 1e16,
            rvr_block: 15,
            threshold: 127,
        }
    }
}

/// Population mean and variance of all pixels.
pub fn mean_variance(img: &GrayImage) -> (f64, f64) {
    let n = img.len() as f64;
    let (sum, sum_sq) = img.data().iter().fold((0u64, 0u64), |(s, q), &p| {
        let p = p as u64;
        (s + p, q + p * p)
    });
    let mean = sum as f64 / n;
    // exact integer moments keep the variance free of cancellation error
    let var = (n * sum_sq as f64 - (sum as f64) * (sum as f64)) / (n * n);
    (mean, var.max(0.0))
}

/// Half-slit offsets `(up, right)` for the eight directions at 22.5 degree
/// steps; each slit is these four offsets plus their negations.
///
/// | dir | angle  | offsets (up, right)                 |
/// |-----|--------|-------------------------------------|
/// | 0   | 0.0    | (0,1) (0,2) (0,3) (0,4)             |
/// | 1   | 22.5   | (0,1) (1,2) (1,3) (2,4)             |
/// | 2   | 45.0   | (1,1) (2,2) (3,3) (4,4)             |
/// | 3   | 67.5   | (1,0) (2,1) (3,1) (4,2)             |
/// | 4   | 90.0   | (1,0) (2,0) (3,0) (4,0)             |
/// | 5   | 112.5  | (1,0) (2,-1) (3,-1) (4,-2)          |
/// | 6   | 135.0  | (1,-1) (2,-2) (3,-3) (4,-4)         |
/// | 7   | 157.5  | (0,-1) (1,-2) (1,-3) (2,-4)         |
///
/// Offsets are `round(k * (sin a, cos a) / max(|sin a|, |cos a|))` for `k = 1..4`,
/// so step `k` lies on the ring of Chebyshev radius `k`.
pub const SLIT_OFFSETS: [[(i8, i8); 4]; 8] = [
    [(0, 1), (0, 2), (0, 3), (0, 4)],
    [(0, 1), (1, 2), (1, 3), (2, 4)],
    [(1, 1), (2, 2), (3, 3), (4, 4)],
    [(1, 0), (2, 1), (3, 1), (4, 2)],
    [(1, 0), (2, 0), (3, 0), (4, 0)],
    [(1, 0), (2, -1), (3, -1), (4, -2)],
    [(1, -1), (2, -2), (3, -3), (4, -4)],
    [(0, -1), (1, -2), (1, -3), (2, -4)],
];

/// Eight slit sums of the 9x9 window centred on `(row, col)`, replicate border.
pub fn slit_sums(img: &GrayImage, row: usize, col: usize) -> [u32; 8] {
    let (r, c) = (row as isize, col as isize);
    let mut sums = [0u32; 8];
    for (dir, offsets) in SLIT_OFFSETS.iter().enumerate() {
        for &(up, right) in offsets {
            let (up, right) = (up as isize, right as isize);
            sums[dir] += img.get_clamped(r - up, c + right) as u32;
            sums[dir] += img.get_clamped(r + up, c - right) as u32;
        }
    }
    sums
}

/// Grid of 3x3 blocks over the image with a 1-pixel replicate border.
/// Block `(i, j)` is centred on original pixel `(3i, 3j)`.
fn block_grid3(img: &GrayImage) -> (usize, usize) {
    (img.height().div_ceil(3), img.width().div_ceil(3))
}

/// Per-block directional difference (max slit sum minus min slit sum) and its mean.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRaster {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub mean: f64,
}

pub fn block_directional_difference(img: &GrayImage) -> Result<BlockRaster> {
    if img.width() < 9 || img.height() < 9 {
        return Err(Error::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            min: 9,
        });
    }
    let (rows, cols) = block_grid3(img);
    let mut values = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let s = slit_sums(img, 3 * i, 3 * j);
            let max = *s.iter().max().unwrap();
            let min = *s.iter().min().unwrap();
            values.push((max - min) as f64);
        }
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(BlockRaster {
        rows,
        cols,
        values,
        mean,
    })
}

/// Per-block orientation change `atan(mean Laplacian response / scale)` and its mean.
pub fn orientation_change(img: &GrayImage, kernel: &Kernel3x3, scale: f64) -> Result<BlockRaster> {
    let g = imgcore::convolve3x3(img, kernel)?;
    let (rows, cols) = block_grid3(img);
    let (h, w) = (img.height() as isize, img.width() as isize);
    let mut values = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0i64;
            for dr in -1..=1isize {
                for dc in -1..=1isize {
                    let r = (3 * i as isize + dr).clamp(0, h - 1) as usize;
                    let c = (3 * j as isize + dc).clamp(0, w - 1) as usize;
                    acc += g.get(r, c) as i64;
                }
            }
            values.push((acc as f64 / 9.0 / scale).atan());
        }
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(BlockRaster {
        rows,
        cols,
        values,
        mean,
    })
}

/// Ridge/valley ratio of one block. Non-constant blocks are split at their
/// own mean (below mean = ridge); constant blocks at `threshold`. An empty
/// valley count is replaced by 1.
pub fn block_rvr(block: &GrayImage, threshold: u8) -> f64 {
    let data = block.data();
    let first = data[0];
    let constant = data.iter().all(|&p| p == first);
    let ridges = if constant {
        if first < threshold {
            data.len()
        } else {
            0
        }
    } else {
        let sum: u64 = data.iter().map(|&p| p as u64).sum();
        // p < sum / n  <=>  p * n < sum
        let n = data.len() as u64;
        data.iter().filter(|&&p| (p as u64) * n < sum).count()
    };
    let valleys = data.len() - ridges;
    ridges as f64 / valleys.max(1) as f64
}

/// `(rvr_avg, ssrvr)` over the white-padded block grid.
pub fn rvr_features(img: &GrayImage, block: usize, threshold: u8, epsilon: f64) -> Result<(f64, f64)> {
    let (padded, _) = imgcore::pad_to_blocks(img, block)?;
    let (rows, cols) = (padded.height() / block, padded.width() / block);
    let mut sum = 0.0;
    let mut ssrvr = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let rvr = block_rvr(&padded.crop(i * block, j * block, block, block), threshold);
            sum += rvr;
            ssrvr += (rvr * epsilon).powi(2);
        }
    }
    Ok((sum / (rows * cols) as f64, ssrvr))
}

pub fn extract_features(img: &GrayImage, cfg: &FeatureConfig) -> Result<FeatureVector> {
    let (mu, sigma2) = mean_variance(img);
    let bdd = block_directional_difference(img)?;
    let theta = orientation_change(img, &cfg.laplacian, cfg.theta_scale)?;
    let (rvr_avg, ssrvr) = rvr_features(img, cfg.rvr_block, cfg.threshold, cfg.epsilon)?;
    Ok(FeatureVector {
        mu,
        sigma2,
        ssrvr,
        bdd_avg: bdd.mean,
        rvr_avg,
        theta_avg: theta.mean,
    })
}

/// Feature extraction over many images; results are in input order.
pub fn extract_batch(
    images: &[GrayImage],
    cfg: &FeatureConfig,
    exec: Execution,
) -> Vec<Result<FeatureVector>> {
    exec.map(images, |img| extract_features(img, cfg))
}
