//! Hybrid fingerprint orientation maps.
//!
//! Pipeline: pick the best `standard` fingerprints, binarize, rotate each one
//! by quarter turns to maximise the number of pixel positions on which the
//! whole stack agrees, render a per-block orientation map (0°, 45° or 90°
//! line per block), rotate individual blocks for further agreement and join
//! four quadrants taken from four different maps.

use std::cmp::Ordering;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::features::{FeatureVector, Label};
use crate::imgcore::{self, rotate_square_unchecked, GrayImage, Padding, QuarterTurn, BLACK, WHITE};

/// A classified fingerprint available for map generation.
#[derive(Debug, Clone)]
pub struct PoolEntry {
    pub id: String,
    pub image: GrayImage,
    pub features: FeatureVector,
    pub label: Label,
}

/// Indices of the `n` `standard` entries with the smallest
/// `(mu, sigma2, rvr_avg)`, compared lexicographically. Equal keys keep pool order.
pub fn select_best_standard(pool: &[PoolEntry], n: usize) -> Result<Vec<usize>> {
    if n < 4 {
        return Err(Error::InvalidParameter(format!("need at least 4 fingerprints, got n = {n}")));
    }
    let mut idx: Vec<usize> = (0..pool.len()).filter(|&i| pool[i].label == Label::Standard).collect();
    if idx.len() < n {
        return Err(Error::InsufficientStandard {
            needed: n,
            found: idx.len(),
        });
    }
    let key = |i: usize| {
        let f = &pool[i].features;
        [f.mu, f.sigma2, f.rvr_avg]
    };
    idx.sort_by(|&a, &b| {
        let (ka, kb) = (key(a), key(b));
        ka.iter()
            .zip(&kb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    idx.truncate(n);
    Ok(idx)
}

fn check_same_dims(images: &[&GrayImage]) -> Result<()> {
    let first = images.first().ok_or(Error::Empty("image stack"))?;
    for img in &images[1..] {
        if img.width() != first.width() || img.height() != first.height() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                first.width(),
                first.height(),
                img.width(),
                img.height()
            )));
        }
    }
    Ok(())
}

fn count_unchecked(images: &[&GrayImage], exec: Execution) -> u64 {
    let w = images[0].width();
    exec.sum_range(images[0].height(), |r| {
        let reference = images[0].row(r);
        let mut agree = vec![true; w];
        for img in &images[1..] {
            for (a, (&p, &q)) in agree.iter_mut().zip(img.row(r).iter().zip(reference)) {
                *a &= p == q;
            }
        }
        agree.iter().filter(|&&a| a).count() as u64
    })
}

/// Number of pixel positions at which every image equals image 0.
pub fn common_pixel_count(images: &[GrayImage], exec: Execution) -> Result<u64> {
    let refs: Vec<&GrayImage> = images.iter().collect();
    check_same_dims(&refs)?;
    Ok(count_unchecked(&refs, exec))
}

/// Binarized square images with the quarter turn applied to each original.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerStack {
    originals: Vec<GrayImage>,
    images: Vec<GrayImage>,
    rotations: Vec<QuarterTurn>,
    side: usize,
}

impl FingerStack {
    pub fn new(images: Vec<GrayImage>) -> Result<Self> {
        let refs: Vec<&GrayImage> = images.iter().collect();
        check_same_dims(&refs)?;
        let side = images[0].ensure_square()?;
        for img in &images {
            img.ensure_binarized()?;
        }
        Ok(Self {
            rotations: vec![QuarterTurn::R0; images.len()],
            originals: images.clone(),
            images,
            side,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn images(&self) -> &[GrayImage] {
        &self.images
    }

    pub fn originals(&self) -> &[GrayImage] {
        &self.originals
    }

    /// Total rotation applied to each original.
    pub fn rotations(&self) -> &[QuarterTurn] {
        &self.rotations
    }

    pub fn into_images(self) -> Vec<GrayImage> {
        self.images
    }

    pub fn p_count(&self, exec: Execution) -> u64 {
        let refs: Vec<&GrayImage> = self.images.iter().collect();
        count_unchecked(&refs, exec)
    }

    fn count_with(&self, slot: usize, candidate: &GrayImage, exec: Execution) -> u64 {
        let mut refs: Vec<&GrayImage> = self.images.iter().collect();
        refs[slot] = candidate;
        count_unchecked(&refs, exec)
    }
}

/// Summary of a hill climb.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClimbStats {
    pub before: u64,
    pub after: u64,
    pub passes: usize,
    pub accepted: usize,
}

/// Greedy quarter-turn alignment. Image 0 stays fixed; every other image in
/// turn takes the rotation (relative to its current one) with the largest
/// strict gain in common pixels, the smallest angle winning ties. Passes
/// repeat until one changes nothing.
pub fn min_rotate_max_flow(stack: &mut FingerStack, exec: Execution) -> ClimbStats {
    let before = stack.p_count(exec);
    let mut current = before;
    let mut passes = 0;
    let mut accepted = 0;
    loop {
        passes += 1;
        let mut changed = false;
        for c in 1..stack.len() {
            let mut best: Option<(u64, QuarterTurn, GrayImage)> = None;
            for turn in QuarterTurn::NON_IDENTITY {
                let candidate = rotate_square_unchecked(&stack.images[c], stack.side, turn);
                let count = stack.count_with(c, &candidate, exec);
                let floor = best.as_ref().map_or(current, |b| b.0);
                if count > floor {
                    best = Some((count, turn, candidate));
                }
            }
            if let Some((count, turn, img)) = best {
                stack.images[c] = img;
                stack.rotations[c] = stack.rotations[c].then(turn);
                current = count;
                accepted += 1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    ClimbStats {
        before,
        after: current,
        passes,
        accepted,
    }
}

/// An image padded to whole `block x block` tiles.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrid {
    pub image: GrayImage,
    pub block: usize,
    pub rows: usize,
    pub cols: usize,
    pub padding: Padding,
}

impl BlockGrid {
    /// Pixel rows (or columns) covered by block index `k`.
    pub fn span(&self, k: usize) -> Range<usize> {
        k * self.block..(k + 1) * self.block
    }

    pub fn block(&self, k: usize, l: usize) -> GrayImage {
        self.image.crop(k * self.block, l * self.block, self.block, self.block)
    }
}

pub fn split_blocks(img: &GrayImage, block: usize) -> Result<BlockGrid> {
    let (image, padding) = imgcore::pad_to_blocks(img, block)?;
    Ok(BlockGrid {
        rows: image.height() / block,
        cols: image.width() / block,
        image,
        block,
        padding,
    })
}

/// Row and column ranges of the four overlapping sub-blocks of an odd
/// `bs x bs` block, in the order top-left, top-right, bottom-left,
/// bottom-right. All four contain the centre pixel.
pub fn sub_block_ranges(bs: usize) -> Result<[(Range<usize>, Range<usize>); 4]> {
    if bs.is_multiple_of(2) {
        return Err(Error::EvenBlockSide(bs));
    }
    let h = bs.div_ceil(2);
    Ok([
        (0..h, 0..h),
        (0..h, h - 1..bs),
        (h - 1..bs, 0..h),
        (h - 1..bs, h - 1..bs),
    ])
}

pub fn sub_blocks(block: &GrayImage) -> Result<[GrayImage; 4]> {
    let bs = block.ensure_square()?;
    let ranges = sub_block_ranges(bs)?;
    Ok(ranges.map(|(r, c)| block.crop(r.start, c.start, r.len(), c.len())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Orientation {
    #[serde(rename = "0")]
    Deg0,
    #[serde(rename = "45")]
    Deg45,
    #[serde(rename = "90")]
    Deg90,
}

impl Orientation {
    pub const ALL: [Orientation; 3] = [Self::Deg0, Self::Deg45, Self::Deg90];

    pub fn degrees(self) -> u16 {
        match self {
            Self::Deg0 => 0,
            Self::Deg45 => 45,
            Self::Deg90 => 90,
        }
    }

    /// Orientation after a quarter turn, or `None` when a diagonal would
    /// leave the angle set.
    pub fn turned(self, turn: QuarterTurn) -> Option<Orientation> {
        let odd = turn.steps() % 2 == 1;
        match (self, odd) {
            (o, false) => Some(o),
            (Self::Deg0, true) => Some(Self::Deg90),
            (Self::Deg90, true) => Some(Self::Deg0),
            (Self::Deg45, true) => None,
        }
    }
}

/// Minimum number of black pixels on a candidate line.
pub const LINE_THRESHOLD: u32 = 2;

/// Rotation bringing the shared centre pixel of sub-block `eta` (0..4, same
/// order as [`sub_block_ranges`]) to the bottom-left corner.
fn canonical_turn(eta: usize) -> QuarterTurn {
    match eta {
        0 => QuarterTurn::R270,
        1 => QuarterTurn::R0,
        2 => QuarterTurn::R180,
        _ => QuarterTurn::R90,
    }
}

/// Black pixels on the row, the rising diagonal and the column through the
/// bottom-left corner of a square sub-block.
pub fn canonical_line_counts(q: &GrayImage) -> [u32; 3] {
    let h = q.height();
    let last = h - 1;
    let black = |r: usize, c: usize| u32::from(q.get(r, c) == BLACK);
    let row = (0..h).map(|c| black(last, c)).sum();
    let diag = (0..h).map(|k| black(last - k, k)).sum();
    let col = (0..h).map(|r| black(r, 0)).sum();
    [row, diag, col]
}

/// Dominant line through the block centre inside sub-block `eta`.
pub fn subblock_orientation(q: &GrayImage, eta: usize) -> Result<Option<Orientation>> {
    let n = q.ensure_square()?;
    q.ensure_binarized()?;
    if eta > 3 {
        return Err(Error::InvalidParameter(format!("sub-block index {eta} out of range")));
    }
    let turn = canonical_turn(eta);
    let canonical = rotate_square_unchecked(q, n, turn);
    let counts = canonical_line_counts(&canonical);
    let mut best = 0;
    for i in 1..3 {
        if counts[i] > counts[best] {
            best = i;
        }
    }
    if counts[best] < LINE_THRESHOLD {
        return Ok(None);
    }
    // undo the canonical rotation; a diagonal stays a diagonal
    let found = Orientation::ALL[best];
    Ok(Some(found.turned(turn.inverse()).unwrap_or(Orientation::Deg45)))
}

/// Majority vote, smaller angle on ties, `None` without votes.
pub fn combine_votes(votes: &[Option<Orientation>]) -> Option<Orientation> {
    let mut tally = [0usize; 3];
    for o in votes.iter().flatten() {
        tally[*o as usize] += 1;
    }
    let mut best = 0;
    for i in 1..3 {
        if tally[i] > tally[best] {
            best = i;
        }
    }
    (tally[best] > 0).then_some(Orientation::ALL[best])
}

/// White square with a one pixel black line through the centre.
pub fn render_orientation(bs: usize, angle: Option<Orientation>) -> GrayImage {
    let c = bs / 2;
    GrayImage::from_fn(bs, bs, |r, col| {
        let on = match angle {
            None => false,
            Some(Orientation::Deg0) => r == c,
            Some(Orientation::Deg90) => col == c,
            Some(Orientation::Deg45) => r + col == bs - 1,
        };
        if on {
            BLACK
        } else {
            WHITE
        }
    })
}

pub fn block_orientation_field(block: &GrayImage) -> Result<(GrayImage, Option<Orientation>)> {
    let bs = block.ensure_square()?;
    let subs = sub_blocks(block)?;
    let mut votes = [None; 4];
    for (eta, q) in subs.iter().enumerate() {
        votes[eta] = subblock_orientation(q, eta)?;
    }
    let angle = combine_votes(&votes);
    Ok((render_orientation(bs, angle), angle))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrientationMap {
    pub image: GrayImage,
    pub block: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major per-block angles.
    pub angles: Vec<Option<Orientation>>,
}

impl OrientationMap {
    pub fn angle(&self, k: usize, l: usize) -> Option<Orientation> {
        self.angles[k * self.cols + l]
    }
}

/// Orientation map of a binarized image whose sides are multiples of `block`.
pub fn orientation_map(img: &GrayImage, block: usize) -> Result<OrientationMap> {
    img.ensure_binarized()?;
    if block.is_multiple_of(2) {
        return Err(Error::EvenBlockSide(block));
    }
    if !img.width().is_multiple_of(block) || !img.height().is_multiple_of(block) {
        return Err(Error::NotBlockAligned {
            width: img.width(),
            height: img.height(),
            block,
        });
    }
    let rows = img.height() / block;
    let cols = img.width() / block;
    let mut image = GrayImage::filled(img.width(), img.height(), WHITE);
    let mut angles = Vec::with_capacity(rows * cols);
    for k in 0..rows {
        for l in 0..cols {
            let (rendered, angle) = block_orientation_field(&img.crop(k * block, l * block, block, block))?;
            image.paste(&rendered, k * block, l * block);
            angles.push(angle);
        }
    }
    Ok(OrientationMap {
        image,
        block,
        rows,
        cols,
        angles,
    })
}

fn block_agreement(blocks: &[&GrayImage]) -> u64 {
    count_unchecked(blocks, Execution::Sequential)
}

/// Block-level hill climb over a stack of maps. For every block position and
/// every map but the first, the rendered block may be quarter-turned when
/// that strictly raises the stack-wide common pixel count. Passes repeat
/// until nothing changes.
pub fn refine_blocks(maps: &mut [OrientationMap], exec: Execution) -> Result<ClimbStats> {
    let first = maps.first().ok_or(Error::Empty("orientation maps"))?;
    let (bs, rows, cols) = (first.block, first.rows, first.cols);
    if maps.iter().any(|m| m.block != bs || m.rows != rows || m.cols != cols) {
        return Err(Error::DimensionMismatch("orientation map grids differ".into()));
    }
    let images: Vec<GrayImage> = maps.iter().map(|m| m.image.clone()).collect();
    let before = common_pixel_count(&images, exec)?;
    let mut current = before;
    let mut passes = 0;
    let mut accepted = 0;
    loop {
        passes += 1;
        let mut changed = false;
        for k in 0..rows {
            for l in 0..cols {
                let mut blocks: Vec<GrayImage> =
                    maps.iter().map(|m| m.image.crop(k * bs, l * bs, bs, bs)).collect();
                for c in 1..maps.len() {
                    let refs: Vec<&GrayImage> = blocks.iter().collect();
                    let base = block_agreement(&refs);
                    let Some(angle) = maps[c].angle(k, l) else {
                        continue;
                    };
                    let mut best: Option<(u64, QuarterTurn, GrayImage)> = None;
                    for turn in QuarterTurn::NON_IDENTITY {
                        if angle.turned(turn).is_none() {
                            continue;
                        }
                        let cand = rotate_square_unchecked(&blocks[c], bs, turn);
                        let mut refs: Vec<&GrayImage> = blocks.iter().collect();
                        refs[c] = &cand;
                        let count = block_agreement(&refs);
                        if count > best.as_ref().map_or(base, |b| b.0) {
                            best = Some((count, turn, cand));
                        }
                    }
                    if let Some((count, turn, cand)) = best {
                        current = current - base + count;
                        maps[c].image.paste(&cand, k * bs, l * bs);
                        maps[c].angles[k * cols + l] = angle.turned(turn);
                        blocks[c] = cand;
                        accepted += 1;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(ClimbStats {
        before,
        after: current,
        passes,
        accepted,
    })
}

/// Reading of the distinctness constraint on quadrant assignments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadrantRule {
    /// Quadrants pairwise distinct and sources pairwise distinct.
    #[default]
    Distinct,
    /// Additionally quadrant `i` never comes from source `i` (0-based).
    Derangement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AssemblyConfig {
    /// `None` keeps selection order; otherwise the first four maps are
    /// permuted with this seed.
    pub seed: Option<u64>,
    pub rule: QuadrantRule,
}

/// Quadrant index (0 = top-left, 1 = top-right, 2 = bottom-left,
/// 3 = bottom-right) and the source map it was copied from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadrantSource {
    pub quadrant: usize,
    pub source: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hfom {
    pub image: GrayImage,
    pub provenance: [QuadrantSource; 4],
}

/// Source index for each quadrant.
pub fn quadrant_assignment(cfg: &AssemblyConfig) -> [usize; 4] {
    let ok = |p: &[usize; 4]| cfg.rule == QuadrantRule::Distinct || p.iter().enumerate().all(|(i, &z)| i != z);
    match cfg.seed {
        None => match cfg.rule {
            QuadrantRule::Distinct => [0, 1, 2, 3],
            QuadrantRule::Derangement => [1, 2, 3, 0],
        },
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            loop {
                let mut p = [0, 1, 2, 3];
                p.shuffle(&mut rng);
                if ok(&p) {
                    return p;
                }
            }
        }
    }
}

/// Pads an odd side with one white row at the bottom and one white column
/// on the right.
pub fn even_side(img: &GrayImage) -> GrayImage {
    if img.width().is_multiple_of(2) && img.height().is_multiple_of(2) {
        return img.clone();
    }
    let mut out = GrayImage::filled(img.width().next_multiple_of(2), img.height().next_multiple_of(2), WHITE);
    out.paste(img, 0, 0);
    out
}

/// Top-left corner and size of quadrant `q` of an even-sided square.
pub fn quadrant_origin(side: usize, q: usize) -> (usize, usize) {
    let h = side / 2;
    ((q / 2) * h, (q % 2) * h)
}

pub fn quadrant(img: &GrayImage, q: usize) -> GrayImage {
    let h = img.width() / 2;
    let (r, c) = quadrant_origin(img.width(), q);
    img.crop(r, c, h, h)
}

pub fn assemble_hfom(maps: &[GrayImage], cfg: &AssemblyConfig) -> Result<Hfom> {
    if maps.len() < 4 {
        return Err(Error::TooFewMaps {
            needed: 4,
            found: maps.len(),
        });
    }
    let refs: Vec<&GrayImage> = maps.iter().collect();
    check_same_dims(&refs)?;
    maps[0].ensure_square()?;
    let sources = quadrant_assignment(cfg);
    let side = maps[0].width().next_multiple_of(2);
    let mut image = GrayImage::filled(side, side, WHITE);
    let mut provenance = [QuadrantSource { quadrant: 0, source: 0 }; 4];
    for (q, &z) in sources.iter().enumerate() {
        let src = even_side(&maps[z]);
        let (r, c) = quadrant_origin(side, q);
        image.paste(&quadrant(&src, q), r, c);
        provenance[q] = QuadrantSource { quadrant: q, source: z };
    }
    Ok(Hfom { image, provenance })
}

/// Dynamic-range constants for 8-bit images.
pub const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
pub const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);
pub const SSIM_WINDOW: usize = 7;

/// Inclusive-exclusive 2D prefix sums.
struct Integral {
    w: usize,
    data: Vec<u64>,
}

impl Integral {
    fn new(w: usize, h: usize, f: impl Fn(usize, usize) -> u64) -> Self {
        let stride = w + 1;
        let mut data = vec![0u64; stride * (h + 1)];
        for r in 0..h {
            let mut run = 0;
            for c in 0..w {
                run += f(r, c);
                data[(r + 1) * stride + c + 1] = data[r * stride + c + 1] + run;
            }
        }
        Self { w, data }
    }

    fn window(&self, r: usize, c: usize, k: usize) -> u64 {
        let s = self.w + 1;
        let at = |r: usize, c: usize| self.data[r * s + c];
        at(r + k, c + k) + at(r, c) - at(r, c + k) - at(r + k, c)
    }
}

/// Mean SSIM over all 7x7 windows (uniform weights, sample covariance),
/// shifted by +1 into [0, 2].
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    check_same_dims(&[a, b])?;
    let (w, h) = (a.width(), a.height());
    let k = SSIM_WINDOW;
    if w < k || h < k {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min: k,
        });
    }
    let pa = |r: usize, c: usize| u64::from(a.get(r, c));
    let pb = |r: usize, c: usize| u64::from(b.get(r, c));
    let sa = Integral::new(w, h, pa);
    let sb = Integral::new(w, h, pb);
    let saa = Integral::new(w, h, |r, c| pa(r, c) * pa(r, c));
    let sbb = Integral::new(w, h, |r, c| pb(r, c) * pb(r, c));
    let sab = Integral::new(w, h, |r, c| pa(r, c) * pb(r, c));
    let n = (k * k) as f64;
    let norm = n / (n - 1.0);
    let mut total = 0.0;
    for r in 0..=h - k {
        for c in 0..=w - k {
            let ma = sa.window(r, c, k) as f64 / n;
            let mb = sb.window(r, c, k) as f64 / n;
            let va = norm * (saa.window(r, c, k) as f64 / n - ma * ma);
            let vb = norm * (sbb.window(r, c, k) as f64 / n - mb * mb);
            let cov = norm * (sab.window(r, c, k) as f64 / n - ma * mb);
            total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
    }
    let windows = ((h - k + 1) * (w - k + 1)) as f64;
    Ok((total / windows + 1.0).clamp(0.0, 2.0))
}

/// Symmetric matrix of shifted SSIM scores.
pub fn ssim_matrix(images: &[GrayImage], exec: Execution) -> Result<Vec<Vec<f64>>> {
    let n = images.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let scores = exec.map(&pairs, |&(i, j)| ssim(&images[i], &images[j]));
    let mut m = vec![vec![0.0; n]; n];
    for (&(i, j), s) in pairs.iter().zip(scores) {
        let s = s?;
        m[i][j] = s;
        m[j][i] = s;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HfomConfig {
    pub n: usize,
    /// Side of the square crop every selected image is brought to.
    pub side: usize,
    pub threshold: u8,
    pub block: usize,
    pub assembly: AssemblyConfig,
    pub execution: Execution,
}

impl Default for HfomConfig {
    fn default() -> Self {
        Self {
            n: 10,
            side: 160,
            threshold: 127,
            block: 15,
            assembly: AssemblyConfig::default(),
            execution: Execution::default(),
        }
    }
}

pub const STAGE_NAMES: [&str; 5] = [
    "No Change",
    "Binarization",
    "Rotation",
    "Ridge Orientation Fields Generation",
    "Orientation Map Modification at Block Level",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRow {
    pub stage: String,
    pub p_count: u64,
    pub pixels: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub rows: Vec<StageRow>,
}

impl StageReport {
    pub fn to_text(&self) -> String {
        let width = STAGE_NAMES.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut s = format!("{:<width$}  {:>10}  {:>10}\n", "stage", "p_count", "pixels");
        for row in &self.rows {
            s.push_str(&format!("{:<width$}  {:>10}  {:>10}\n", row.stage, row.p_count, row.pixels));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct HfomOutcome {
    pub hfom: Hfom,
    pub report: StageReport,
    /// Pool indices of the selected fingerprints, in selection order.
    pub selected: Vec<usize>,
    pub rotations: Vec<QuarterTurn>,
    pub maps: Vec<OrientationMap>,
    pub rotation_climb: ClimbStats,
    pub block_climb: ClimbStats,
}

pub fn hfom_pipeline(pool: &[PoolEntry], cfg: &HfomConfig) -> Result<HfomOutcome> {
    let exec = cfg.execution;
    let selected = select_best_standard(pool, cfg.n)?;
    let raw: Vec<GrayImage> = selected
        .iter()
        .map(|&i| imgcore::crop_resize(&pool[i].image, cfg.side))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(5);
    let mut record = |stage: usize, images: &[GrayImage]| -> Result<()> {
        rows.push(StageRow {
            stage: STAGE_NAMES[stage].to_string(),
            p_count: common_pixel_count(images, exec)?,
            pixels: images[0].len() as u64,
        });
        Ok(())
    };
    record(0, &raw)?;
    let binary: Vec<GrayImage> = raw.iter().map(|img| imgcore::binarize(img, cfg.threshold)).collect();
    record(1, &binary)?;
    let mut stack = FingerStack::new(binary)?;
    let rotation_climb = min_rotate_max_flow(&mut stack, exec);
    let rotations = stack.rotations().to_vec();
    let aligned = stack.into_images();
    record(2, &aligned)?;
    let mut maps = exec
        .map(&aligned, |img| {
            let grid = split_blocks(img, cfg.block)?;
            orientation_map(&grid.image, cfg.block)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let map_images: Vec<GrayImage> = maps.iter().map(|m| m.image.clone()).collect();
    record(3, &map_images)?;
    let block_climb = refine_blocks(&mut maps, exec)?;
    let map_images: Vec<GrayImage> = maps.iter().map(|m| m.image.clone()).collect();
    record(4, &map_images)?;
    let hfom = assemble_hfom(&map_images, &cfg.assembly)?;
    Ok(HfomOutcome {
        hfom,
        report: StageReport { rows },
        selected,
        rotations,
        maps,
        rotation_climb,
        block_climb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_binary(side: usize, rng: &mut impl Rng) -> GrayImage {
        GrayImage::from_fn(side, side, |_, _| if rng.random_bool(0.5) { BLACK } else { WHITE })
    }

    fn oracle_count(images: &[GrayImage]) -> u64 {
        let mut n = 0;
        for r in 0..images[0].height() {
            for c in 0..images[0].width() {
                if images.iter().all(|img| img.get(r, c) == images[0].get(r, c)) {
                    n += 1;
                }
            }
        }
        n
    }

    fn entry(id: usize, label: Label, mu: f64, sigma2: f64, rvr: f64) -> PoolEntry {
        PoolEntry {
            id: id.to_string(),
            image: GrayImage::filled(16, 16, WHITE),
            features: FeatureVector {
                mu,
                sigma2,
                rvr_avg: rvr,
                ..Default::default()
            },
            label,
        }
    }

    #[test]
    fn selection_is_lexicographic() {
        let pool = vec![
            entry(0, Label::Standard, 3.0, 1.0, 0.0),
            entry(1, Label::Standard, 1.0, 5.0, 0.0),
            entry(2, Label::Wet, 0.0, 0.0, 0.0),
            entry(3, Label::Standard, 1.0, 2.0, 9.0),
            entry(4, Label::Standard, 2.0, 0.0, 0.0),
            entry(5, Label::Standard, 1.0, 2.0, 1.0),
        ];
        assert_eq!(select_best_standard(&pool, 4).unwrap(), vec![5, 3, 1, 4]);
        assert_eq!(select_best_standard(&pool, 5).unwrap().len(), 5);
        assert!(matches!(
            select_best_standard(&pool, 6),
            Err(Error::InsufficientStandard { needed: 6, found: 5 })
        ));
        assert!(select_best_standard(&pool, 3).is_err());
    }

    #[test]
    fn count_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_binary(12, &mut rng);
        let same = vec![a.clone(); 5];
        assert_eq!(common_pixel_count(&same, Execution::Sequential).unwrap(), 144);
        let inv = GrayImage::from_fn(12, 12, |r, c| 255 - a.get(r, c));
        assert_eq!(common_pixel_count(&[a.clone(), inv], Execution::Sequential).unwrap(), 0);
        for _ in 0..20 {
            let stack: Vec<_> = (0..4).map(|_| random_binary(8, &mut rng)).collect();
            assert_eq!(common_pixel_count(&stack, Execution::Sequential).unwrap(), oracle_count(&stack));
            assert_eq!(common_pixel_count(&stack, Execution::Parallel).unwrap(), oracle_count(&stack));
        }
        let b = GrayImage::filled(8, 9, WHITE);
        assert!(common_pixel_count(&[a, b], Execution::Sequential).is_err());
        assert!(common_pixel_count(&[], Execution::Sequential).is_err());
    }

    #[test]
    fn rotation_climb_restores_rotated_copy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_binary(10, &mut rng);
        let b = imgcore::rotate_quarter(&a, QuarterTurn::R90).unwrap();
        let mut stack = FingerStack::new(vec![a.clone(), b]).unwrap();
        let stats = min_rotate_max_flow(&mut stack, Execution::Sequential);
        assert_eq!(stats.after, 100);
        assert_eq!(stack.images()[1], a);
        assert_eq!(stack.rotations()[1], QuarterTurn::R270);
    }

    #[test]
    fn rotation_climb_leaves_identical_stack() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_binary(9, &mut rng);
        let mut stack = FingerStack::new(vec![a.clone(); 4]).unwrap();
        let before = stack.clone();
        let stats = min_rotate_max_flow(&mut stack, Execution::Sequential);
        assert_eq!(stats.accepted, 0);
        assert_eq!(stack, before);
    }

    #[test]
    fn stack_rejects_grey() {
        assert!(matches!(
            FingerStack::new(vec![GrayImage::filled(4, 4, 7)]),
            Err(Error::NotBinarized(7))
        ));
    }

    #[test]
    fn block_split_examples() {
        let g = split_blocks(&GrayImage::filled(160, 160, BLACK), 15).unwrap();
        assert_eq!((g.rows, g.cols, g.image.width()), (11, 11, 165));
        let g = split_blocks(&GrayImage::filled(15, 15, BLACK), 15).unwrap();
        assert_eq!((g.rows, g.padding), (1, Padding::default()));
        assert_eq!(g.span(3), 45..60);
    }

    #[test]
    fn sub_block_examples() {
        let r = sub_block_ranges(15).unwrap();
        for (rows, cols) in &r {
            assert_eq!((rows.len(), cols.len()), (8, 8));
            assert!(rows.contains(&7) && cols.contains(&7));
        }
        let r = sub_block_ranges(3).unwrap();
        assert_eq!(r[0], (0..2, 0..2));
        assert_eq!(r[3], (1..3, 1..3));
        assert!(sub_block_ranges(4).is_err());
    }

    fn line_sub_block(h: usize, cells: &[(usize, usize)]) -> GrayImage {
        let mut q = GrayImage::filled(h, h, WHITE);
        for &(r, c) in cells {
            q.set(r, c, BLACK);
        }
        q
    }

    #[test]
    fn sub_block_detector_examples() {
        let h = 8;
        assert_eq!(subblock_orientation(&GrayImage::filled(h, h, WHITE), 0).unwrap(), None);
        // top-right sub-block: the centre is its bottom-left pixel
        let row: Vec<_> = (0..h).map(|c| (h - 1, c)).collect();
        assert_eq!(subblock_orientation(&line_sub_block(h, &row), 1).unwrap(), Some(Orientation::Deg0));
        let mut diag: Vec<_> = (0..h).map(|k| (h - 1 - k, k)).collect();
        diag.push((h - 1, 3));
        assert_eq!(subblock_orientation(&line_sub_block(h, &diag), 1).unwrap(), Some(Orientation::Deg45));
        // top-left sub-block: the centre is its bottom-right pixel
        let row: Vec<_> = (0..h).map(|c| (h - 1, c)).collect();
        assert_eq!(subblock_orientation(&line_sub_block(h, &row), 0).unwrap(), Some(Orientation::Deg0));
        let col: Vec<_> = (0..h).map(|r| (r, h - 1)).collect();
        assert_eq!(subblock_orientation(&line_sub_block(h, &col), 0).unwrap(), Some(Orientation::Deg90));
        // bottom-right: centre at top-left
        let col: Vec<_> = (0..h).map(|r| (r, 0)).collect();
        assert_eq!(subblock_orientation(&line_sub_block(h, &col), 3).unwrap(), Some(Orientation::Deg90));
        // a single black pixel is below the threshold
        assert_eq!(subblock_orientation(&line_sub_block(h, &[(h - 1, 0)]), 1).unwrap(), None);
        assert!(subblock_orientation(&GrayImage::filled(h, h, 3), 0).is_err());
    }

    #[test]
    fn vote_examples() {
        use Orientation::*;
        assert_eq!(combine_votes(&[Some(Deg0); 4]), Some(Deg0));
        assert_eq!(combine_votes(&[Some(Deg0), Some(Deg0), Some(Deg90), None]), Some(Deg0));
        assert_eq!(combine_votes(&[Some(Deg90), None, Some(Deg0), None]), Some(Deg0));
        assert_eq!(combine_votes(&[Some(Deg90), Some(Deg45)]), Some(Deg45));
        assert_eq!(combine_votes(&[None; 4]), None);
    }

    #[test]
    fn horizontal_line_block() {
        let block = GrayImage::from_fn(15, 15, |r, _| if r == 7 { BLACK } else { WHITE });
        let (img, angle) = block_orientation_field(&block).unwrap();
        assert_eq!(angle, Some(Orientation::Deg0));
        assert_eq!(img, block);
    }

    #[test]
    fn orientation_map_examples() {
        let white = GrayImage::filled(45, 30, WHITE);
        let m = orientation_map(&white, 15).unwrap();
        assert_eq!(m.image, white);
        assert!(m.angles.iter().all(Option::is_none));
        assert_eq!((m.rows, m.cols), (2, 3));

        let stripes = GrayImage::from_fn(165, 165, |r, _| if r % 3 == 1 { BLACK } else { WHITE });
        let m = orientation_map(&stripes, 15).unwrap();
        assert!(m.angles.iter().all(|a| *a == Some(Orientation::Deg0)));
        assert!(orientation_map(&GrayImage::filled(16, 15, WHITE), 15).is_err());
    }

    #[test]
    fn refine_aligns_single_block() {
        let a = render_orientation(15, Some(Orientation::Deg0));
        let b = render_orientation(15, Some(Orientation::Deg90));
        let mk = |img: GrayImage, angle| OrientationMap {
            image: img,
            block: 15,
            rows: 1,
            cols: 1,
            angles: vec![Some(angle)],
        };
        let mut maps = vec![mk(a.clone(), Orientation::Deg0), mk(b, Orientation::Deg90)];
        let stats = refine_blocks(&mut maps, Execution::Sequential).unwrap();
        assert!(stats.after > stats.before);
        assert_eq!(stats.after, 225);
        assert_eq!(maps[1].image, a);
        assert_eq!(maps[1].angles[0], Some(Orientation::Deg0));

        let mut same = vec![maps[0].clone(), maps[0].clone()];
        let stats = refine_blocks(&mut same, Execution::Sequential).unwrap();
        assert_eq!(stats.accepted, 0);
    }

    #[test]
    fn assembly_laws() {
        let maps: Vec<GrayImage> = (0..5).map(|v| GrayImage::filled(10, 10, v as u8 * 40)).collect();
        let h = assemble_hfom(&maps, &AssemblyConfig::default()).unwrap();
        assert_eq!(quadrant(&h.image, 0), quadrant(&maps[0], 0));
        assert_eq!(h.provenance.map(|p| p.source), [0, 1, 2, 3]);
        let same = vec![maps[1].clone(); 4];
        assert_eq!(assemble_hfom(&same, &AssemblyConfig::default()).unwrap().image, maps[1]);
        for seed in 0..10 {
            for rule in [QuadrantRule::Distinct, QuadrantRule::Derangement] {
                let p = quadrant_assignment(&AssemblyConfig { seed: Some(seed), rule });
                let mut sorted = p;
                sorted.sort();
                assert_eq!(sorted, [0, 1, 2, 3]);
                if rule == QuadrantRule::Derangement {
                    assert!(p.iter().enumerate().all(|(i, &z)| i != z));
                }
            }
        }
        assert!(matches!(assemble_hfom(&maps[..3], &AssemblyConfig::default()), Err(Error::TooFewMaps { .. })));
    }

    #[test]
    fn odd_side_gets_white_margin() {
        let maps: Vec<GrayImage> = (0..4).map(|_| GrayImage::filled(15, 15, BLACK)).collect();
        let h = assemble_hfom(&maps, &AssemblyConfig::default()).unwrap();
        assert_eq!(h.image.width(), 16);
        assert_eq!(h.image.get(15, 3), WHITE);
        assert_eq!(h.image.get(3, 15), WHITE);
        assert_eq!(h.image.get(14, 14), BLACK);
    }

    #[test]
    fn ssim_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = GrayImage::from_fn(20, 18, |_, _| rng.random());
        assert!((ssim(&a, &a).unwrap() - 2.0).abs() < 1e-9);
        let black = GrayImage::filled(16, 16, 0);
        let white = GrayImage::filled(16, 16, 255);
        let expected = 1.0 + SSIM_C1 / (255.0 * 255.0 + SSIM_C1);
        assert!((ssim(&black, &white).unwrap() - expected).abs() < 1e-12);
        assert!(ssim(&a, &black).is_err());
        assert!(ssim(&GrayImage::filled(6, 6, 0), &GrayImage::filled(6, 6, 0)).is_err());
    }

    #[test]
    fn ssim_matrix_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let imgs: Vec<_> = (0..4).map(|_| GrayImage::from_fn(12, 12, |_, _| rng.random())).collect();
        let m = ssim_matrix(&imgs, Execution::Parallel).unwrap();
        let s = ssim_matrix(&imgs, Execution::Sequential).unwrap();
        assert_eq!(m, s);
        for i in 0..4 {
            assert!((m[i][i] - 2.0).abs() < 1e-9);
            for j in 0..4 {
                assert_eq!(m[i][j], m[j][i]);
            }
        }
    }

    proptest! {
        #[test]
        fn ssim_symmetric_and_bounded(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = rng.random_range(7..14);
            let h = rng.random_range(7..14);
            let a = GrayImage::from_fn(w, h, |_, _| rng.random());
            let b = GrayImage::from_fn(w, h, |_, _| rng.random());
            let ab = ssim(&a, &b).unwrap();
            prop_assert_eq!(ab, ssim(&b, &a).unwrap());
            prop_assert!((0.0..=2.0).contains(&ab));
        }

        #[test]
        fn climb_is_monotone_and_consistent(seed in any::<u64>(), n in 2usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let imgs: Vec<_> = (0..n).map(|_| random_binary(6, &mut rng)).collect();
            let mut stack = FingerStack::new(imgs).unwrap();
            let stats = min_rotate_max_flow(&mut stack, Execution::Sequential);
            prop_assert!(stats.after >= stats.before);
            prop_assert_eq!(stats.after, oracle_count(stack.images()));
            for i in 0..n {
                let again = imgcore::rotate_quarter(&stack.originals()[i], stack.rotations()[i]).unwrap();
                prop_assert_eq!(&again, &stack.images()[i]);
            }
        }

        #[test]
        fn sub_blocks_cover_block(half in 1usize..9) {
            let bs = 2 * half + 1;
            let r = sub_block_ranges(bs).unwrap();
            let mut hits = vec![0u8; bs * bs];
            for (rows, cols) in &r {
                for i in rows.clone() {
                    for j in cols.clone() {
                        hits[i * bs + j] += 1;
                    }
                }
            }
            let c = bs / 2;
            for i in 0..bs {
                for j in 0..bs {
                    let expected = match (i == c, j == c) {
                        (true, true) => 4,
                        (true, false) | (false, true) => 2,
                        _ => 1,
                    };
                    prop_assert_eq!(hits[i * bs + j], expected);
                }
            }
        }

        #[test]
        fn refine_is_monotone(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut maps: Vec<OrientationMap> = (0..3)
                .map(|_| orientation_map(&random_binary(15, &mut rng), 5).unwrap())
                .collect();
            let stats = refine_blocks(&mut maps, Execution::Sequential).unwrap();
            prop_assert!(stats.after >= stats.before);
            let imgs: Vec<_> = maps.iter().map(|m| m.image.clone()).collect();
            prop_assert_eq!(stats.after, oracle_count(&imgs));
            for m in &maps {
                for k in 0..m.rows {
                    for l in 0..m.cols {
                        prop_assert_eq!(m.image.crop(k * 5, l * 5, 5, 5), render_orientation(5, m.angle(k, l)));
                    }
                }
            }
        }
    }
}
