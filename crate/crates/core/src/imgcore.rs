//! Grayscale raster type, file I/O and the geometric primitives shared by the
//! feature extractor and the orientation-map pipeline.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WHITE: u8 = 255;
pub const BLACK: u8 = 0;

/// 8-bit single channel raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions { width, height });
        }
        if data.len() != width * height {
            return Err(Error::BufferLength {
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "zero-sized image");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        assert!(width > 0 && height > 0, "zero-sized image");
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    /// Pixel lookup with coordinates clamped into the image (replicate border).
    #[inline]
    pub fn get_clamped(&self, row: isize, col: isize) -> u8 {
        let r = row.clamp(0, self.height as isize - 1) as usize;
        let c = col.clamp(0, self.width as isize - 1) as usize;
        self.get(r, c)
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.data[row * self.width + col] = value;
    }

    pub fn row(&self, row: usize) -> &[u8] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }

    pub fn is_binarized(&self) -> bool {
        self.data.iter().all(|&v| v == BLACK || v == WHITE)
    }

    pub(crate) fn ensure_binarized(&self) -> Result<()> {
        match self.data.iter().find(|&&v| v != BLACK && v != WHITE) {
            Some(&v) => Err(Error::NotBinarized(v)),
            None => Ok(()),
        }
    }

    pub(crate) fn ensure_square(&self) -> Result<usize> {
        if self.is_square() {
            Ok(self.width)
        } else {
            Err(Error::NotSquare {
                width: self.width,
                height: self.height,
            })
        }
    }

    /// Copy of the `height x width` window whose top-left corner is `(row, col)`.
    ///
    /// # Panics
    /// If the window leaves the image.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> GrayImage {
        assert!(row + height <= self.height && col + width <= self.width);
        let mut data = Vec::with_capacity(width * height);
        for r in row..row + height {
            data.extend_from_slice(&self.row(r)[col..col + width]);
        }
        GrayImage {
            width,
            height,
            data,
        }
    }

    /// Writes `src` into `self` with its top-left corner at `(row, col)`.
    ///
    /// # Panics
    /// If `src` does not fit.
    pub fn paste(&mut self, src: &GrayImage, row: usize, col: usize) {
        assert!(row + src.height <= self.height && col + src.width <= self.width);
        for r in 0..src.height {
            let start = (row + r) * self.width + col;
            self.data[start..start + src.width].copy_from_slice(src.row(r));
        }
    }
}

/// Reads a PGM (P5) or PNG file; colour input is converted to luma.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let io_err = |e: &dyn std::fmt::Display| Error::ImageIo {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let reader = ImageReader::open(path)
        .map_err(|e| io_err(&e))?
        .with_guessed_format()
        .map_err(|e| io_err(&e))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        Some(other) => return Err(Error::UnsupportedFormat(format!("{other:?}"))),
        None => return Err(Error::UnsupportedFormat(path.display().to_string())),
    }
    let decoded = reader.decode().map_err(|e| io_err(&e))?;
    let luma = decoded.to_luma8();
    let (w, h) = luma.dimensions();
    GrayImage::new(w as usize, h as usize, luma.into_raw())
}

/// Writes PGM (P5, maxval 255) when the extension is `.pgm`, PNG otherwise.
pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e: image::ImageError| Error::ImageIo {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let is_pgm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let (w, h) = (img.width as u32, img.height as u32);
    if is_pgm {
        let file = BufWriter::new(File::create(path)?);
        PnmEncoder::new(file)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(&img.data, w, h, ExtendedColorType::L8)
            .map_err(io_err)
    } else {
        image::save_buffer_with_format(path, &img.data, w, h, ExtendedColorType::L8, ImageFormat::Png)
            .map_err(io_err)
    }
}

/// Largest centred square of the image.
pub fn center_crop_square(img: &GrayImage) -> GrayImage {
    let side = img.width.min(img.height);
    let row = (img.height - side) / 2;
    let col = (img.width - side) / 2;
    img.crop(row, col, side, side)
}

/// Nearest-neighbour resize; output pixel `i` samples source `floor((i + 0.5) * src / dst)`.
pub fn resize_nearest(img: &GrayImage, width: usize, height: usize) -> Result<GrayImage> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions { width, height });
    }
    let map = |i: usize, dst: usize, src: usize| (((2 * i + 1) * src) / (2 * dst)).min(src - 1);
    Ok(GrayImage::from_fn(width, height, |r, c| {
        img.get(map(r, height, img.height), map(c, width, img.width))
    }))
}

/// Centre crop to a square, then nearest-neighbour resize to `side x side`.
pub fn crop_resize(img: &GrayImage, side: usize) -> Result<GrayImage> {
    if side < 16 {
        return Err(Error::SideTooSmall(side));
    }
    let square = center_crop_square(img);
    if square.width == side {
        return Ok(square);
    }
    resize_nearest(&square, side, side)
}

/// Global threshold: `pixel >= t` becomes white, everything else black.
pub fn binarize(img: &GrayImage, t: u8) -> GrayImage {
    GrayImage {
        width: img.width,
        height: img.height,
        data: img
            .data
            .iter()
            .map(|&p| if p >= t { WHITE } else { BLACK })
            .collect(),
    }
}

/// White padding added on each side by [`pad_to_blocks`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    /// Split of a total padding `p` along one axis. Below 4 pixels everything
    /// goes to the leading side.
    fn split(p: usize) -> (usize, usize) {
        if p < 4 {
            (p, 0)
        } else {
            (p / 2, p - p / 2)
        }
    }
}

/// Total padding needed to bring `side` up to a multiple of `block`.
pub fn block_padding(side: usize, block: usize) -> usize {
    side.div_ceil(block) * block - side
}

/// Pads with white so both dimensions become multiples of the (odd) block side.
pub fn pad_to_blocks(img: &GrayImage, block: usize) -> Result<(GrayImage, Padding)> {
    if block.is_multiple_of(2) {
        return Err(Error::EvenBlockSide(block));
    }
    let side = img.width.min(img.height);
    if block > side {
        return Err(Error::BlockTooLarge { block, side });
    }
    let (top, bottom) = Padding::split(block_padding(img.height, block));
    let (left, right) = Padding::split(block_padding(img.width, block));
    let padding = Padding {
        top,
        bottom,
        left,
        right,
    };
    if top + bottom + left + right == 0 {
        return Ok((img.clone(), padding));
    }
    let mut out = GrayImage::filled(img.width + left + right, img.height + top + bottom, WHITE);
    out.paste(img, top, left);
    Ok((out, padding))
}

/// Counter-clockwise quarter turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub enum QuarterTurn {
    #[default]
    R0,
    R90,
    R180,
    R270,
}

impl QuarterTurn {
    pub const ALL: [QuarterTurn; 4] = [Self::R0, Self::R90, Self::R180, Self::R270];
    /// The non-identity turns, smallest angle first.
    pub const NON_IDENTITY: [QuarterTurn; 3] = [Self::R90, Self::R180, Self::R270];

    pub fn steps(self) -> u8 {
        self as u8
    }

    pub fn degrees(self) -> u16 {
        self.steps() as u16 * 90
    }

    pub fn from_steps(steps: u8) -> Self {
        Self::ALL[(steps % 4) as usize]
    }

    pub fn from_degrees(deg: u16) -> Option<Self> {
        (deg.is_multiple_of(90) && deg < 360).then(|| Self::from_steps((deg / 90) as u8))
    }

    pub fn then(self, other: QuarterTurn) -> QuarterTurn {
        Self::from_steps(self.steps() + other.steps())
    }

    pub fn inverse(self) -> QuarterTurn {
        Self::from_steps(4 - self.steps())
    }

    /// Where the pixel at `(row, col)` of an `n x n` square lands after the turn.
    #[inline]
    pub fn map_coords(self, row: usize, col: usize, n: usize) -> (usize, usize) {
        match self {
            Self::R0 => (row, col),
            Self::R90 => (n - 1 - col, row),
            Self::R180 => (n - 1 - row, n - 1 - col),
            Self::R270 => (col, n - 1 - row),
        }
    }
}

/// Lossless rotation of a square image by a quarter turn (counter-clockwise).
pub fn rotate_quarter(img: &GrayImage, turn: QuarterTurn) -> Result<GrayImage> {
    let n = img.ensure_square()?;
    Ok(rotate_square_unchecked(img, n, turn))
}

pub(crate) fn rotate_square_unchecked(img: &GrayImage, n: usize, turn: QuarterTurn) -> GrayImage {
    if turn == QuarterTurn::R0 {
        return img.clone();
    }
    let mut out = vec![0u8; n * n];
    for r in 0..n {
        for c in 0..n {
            let (nr, nc) = turn.map_coords(r, c, n);
            out[nr * n + nc] = img.data[r * n + c];
        }
    }
    GrayImage {
        width: n,
        height: n,
        data: out,
    }
}

/// Signed 3x3 kernel, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Kernel3x3(pub [i32; 9]);

impl Kernel3x3 {
    /// Centre +4, 4-neighbours -1, corners 0.
    pub const POSITIVE_LAPLACIAN: Kernel3x3 = Kernel3x3([0, -1, 0, -1, 4, -1, 0, -1, 0]);

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> i32 {
        self.0[row * 3 + col]
    }

    pub fn sum(&self) -> i32 {
        self.0.iter().sum()
    }
}

impl Default for Kernel3x3 {
    fn default() -> Self {
        Self::POSITIVE_LAPLACIAN
    }
}

/// Signed response raster produced by [`convolve3x3`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedRaster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<i32>,
}

impl SignedRaster {
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> i32 {
        self.data[row * self.width + col]
    }
}

/// True 2-D convolution (kernel flipped) with a 1-pixel replicate border;
/// output has the input's size.
pub fn convolve3x3(img: &GrayImage, kernel: &Kernel3x3) -> Result<SignedRaster> {
    if img.width < 3 || img.height < 3 {
        return Err(Error::ImageTooSmall {
            width: img.width,
            height: img.height,
            min: 3,
        });
    }
    let mut data = Vec::with_capacity(img.len());
    for r in 0..img.height {
        for c in 0..img.width {
            let mut acc = 0i32;
            for kr in 0..3 {
                for kc in 0..3 {
                    let k = kernel.at(kr, kc);
                    if k != 0 {
                        let sr = r as isize + 1 - kr as isize;
                        let sc = c as isize + 1 - kc as isize;
                        acc += k * img.get_clamped(sr, sc) as i32;
                    }
                }
            }
            data.push(acc);
        }
    }
    Ok(SignedRaster {
        width: img.width,
        height: img.height,
        data,
    })
}
