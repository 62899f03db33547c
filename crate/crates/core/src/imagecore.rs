//! Image and spectrum containers plus the centered, unitary 2-D FFT.
//!
//! Spatial coordinates are measured from the grid center, which is pixel
//! `(width / 2, height / 2)`. Spectra are always DC-centered: bin
//! `(width / 2, height / 2)` holds the zero frequency. Both shifts happen
//! inside [`forward_fft`] / [`inverse_fft`], never at call sites.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative imaginary energy above which an inverse transform is rejected.
pub const IMAG_ENERGY_LIMIT: f64 = 1e-6;
/// Imaginary residue (relative to the largest magnitude) below which it is dropped silently.
pub const IMAG_SILENT_LIMIT: f64 = 1e-9;

static IMAG_RESIDUE_WARNINGS: AtomicU64 = AtomicU64::new(0);

/// Number of inverse transforms whose non-negligible imaginary part was discarded.
pub fn imag_residue_warnings() -> u64 {
    IMAG_RESIDUE_WARNINGS.load(Ordering::Relaxed)
}

/// Sampling grid shared by an image and its spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    /// Micrometers per pixel.
    pub pixel_pitch: f64,
}

impl Grid {
    pub fn new(width: usize, height: usize, pixel_pitch: f64) -> Result<Self> {
        let grid = Grid {
            width,
            height,
            pixel_pitch,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::BadDims(format!(
                "{}x{} is below the 8x8 minimum",
                self.width, self.height
            )));
        }
        if !self.width.is_multiple_of(2) || !self.height.is_multiple_of(2) {
            return Err(Error::BadDims(format!(
                "{}x{} has an odd dimension; even sizes are required",
                self.width, self.height
            )));
        }
        if !(self.pixel_pitch.is_finite() && self.pixel_pitch > 0.0) {
            return Err(Error::BadDims(format!(
                "pixel pitch {} must be positive",
                self.pixel_pitch
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center(&self) -> (usize, usize) {
        (self.width / 2, self.height / 2)
    }

    /// Micrometer x coordinate of column `i`.
    pub fn x_um(&self, i: usize) -> f64 {
        (i as f64 - (self.width / 2) as f64) * self.pixel_pitch
    }

    /// Micrometer y coordinate of row `j`.
    pub fn y_um(&self, j: usize) -> f64 {
        (j as f64 - (self.height / 2) as f64) * self.pixel_pitch
    }

    pub fn freq_step_x(&self) -> f64 {
        1.0 / (self.width as f64 * self.pixel_pitch)
    }

    pub fn freq_step_y(&self) -> f64 {
        1.0 / (self.height as f64 * self.pixel_pitch)
    }

    /// Frequency (cycles/um) of spectrum column `k`.
    pub fn freq_x(&self, k: usize) -> f64 {
        (k as f64 - (self.width / 2) as f64) * self.freq_step_x()
    }

    /// Frequency (cycles/um) of spectrum row `k`.
    pub fn freq_y(&self, k: usize) -> f64 {
        (k as f64 - (self.height / 2) as f64) * self.freq_step_y()
    }

    /// Nyquist frequency in cycles/um (identical on both axes, pixels are square).
    pub fn nyquist(&self) -> f64 {
        0.5 / self.pixel_pitch
    }

    /// Same field of view sampled `factor` times finer.
    pub fn upsampled(&self, factor: usize) -> Grid {
        Grid {
            width: self.width * factor,
            height: self.height * factor,
            pixel_pitch: self.pixel_pitch / factor as f64,
        }
    }

    pub(crate) fn check_same(&self, other: &Grid, what: &str) -> Result<()> {
        if self.width != other.width
            || self.height != other.height
            || self.pixel_pitch.to_bits() != other.pixel_pitch.to_bits()
        {
            return Err(Error::GridMismatch(format!(
                "{what}: {}x{}@{} vs {}x{}@{}",
                self.width,
                self.height,
                self.pixel_pitch,
                other.width,
                other.height,
                other.pixel_pitch
            )));
        }
        Ok(())
    }
}

/// Real-valued raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    grid: Grid,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(grid: Grid) -> Self {
        Image {
            grid,
            data: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Image {
            grid,
            data: vec![value; grid.len()],
        }
    }

    pub fn from_vec(grid: Grid, data: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(Error::BadDims(format!(
                "data length {} does not match {}x{}",
                data.len(),
                grid.width,
                grid.height
            )));
        }
        Ok(Image { grid, data })
    }

    /// Builds an image from a function of micrometer coordinates `(x, y)`.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        let mut data = vec![0.0; grid.len()];
        data.par_chunks_mut(grid.width)
            .enumerate()
            .for_each(|(j, row)| {
                let y = grid.y_um(j);
                for (i, v) in row.iter_mut().enumerate() {
                    *v = f(grid.x_um(i), y);
                }
            });
        Image { grid, data }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.grid.pixel_pitch
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.grid.width + i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.grid.width + i] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            grid: self.grid,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Image {
        self.map(|v| v * s)
    }

    /// Pixelwise `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Image, b: f64) -> Result<Image> {
        self.grid.check_same(&other.grid, "combine")?;
        Ok(Image {
            grid: self.grid,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&x, &y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn clamp_nonnegative(&self) -> Image {
        self.map(|v| v.max(0.0))
    }
}

/// DC-centered complex spectrum on the grid of its originating image.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: Grid,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn zeros(grid: Grid) -> Self {
        Spectrum {
            grid,
            data: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_vec(grid: Grid, data: Vec<Complex64>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(Error::BadDims(format!(
                "spectrum length {} does not match {}x{}",
                data.len(),
                grid.width,
                grid.height
            )));
        }
        Ok(Spectrum { grid, data })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn freq_step_x(&self) -> f64 {
        self.grid.freq_step_x()
    }

    pub fn freq_step_y(&self) -> f64 {
        self.grid.freq_step_y()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, kx: usize, ky: usize) -> Complex64 {
        self.data[ky * self.grid.width + kx]
    }

    pub fn dc(&self) -> Complex64 {
        let (cx, cy) = self.grid.center();
        self.get(cx, cy)
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn scaled(&self, s: Complex64) -> Spectrum {
        Spectrum {
            grid: self.grid,
            data: self.data.iter().map(|&c| c * s).collect(),
        }
    }

    /// Pixelwise `self + other`.
    pub fn add(&self, other: &Spectrum) -> Result<Spectrum> {
        self.grid.check_same(&other.grid, "spectrum add")?;
        Ok(Spectrum {
            grid: self.grid,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }
}

/// Complex gain table on a spectrum grid (an OTF, a Wiener filter, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    grid: Grid,
    data: Vec<Complex64>,
    pub label: String,
}

impl Filter {
    pub fn from_vec(grid: Grid, data: Vec<Complex64>, label: impl Into<String>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::BadDims(format!(
                "filter length {} does not match {}x{}",
                data.len(),
                grid.width,
                grid.height
            )));
        }
        Ok(Filter {
            grid,
            data,
            label: label.into(),
        })
    }

    /// Real-valued filter from a function of frequency `(fx, fy)` in cycles/um.
    pub fn from_fn(grid: Grid, label: impl Into<String>, f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        let mut data = vec![Complex64::new(0.0, 0.0); grid.len()];
        data.par_chunks_mut(grid.width)
            .enumerate()
            .for_each(|(ky, row)| {
                let fy = grid.freq_y(ky);
                for (kx, v) in row.iter_mut().enumerate() {
                    *v = Complex64::new(f(grid.freq_x(kx), fy), 0.0);
                }
            });
        Filter {
            grid,
            data,
            label: label.into(),
        }
    }

    pub fn constant(grid: Grid, gain: f64, label: impl Into<String>) -> Self {
        Filter {
            grid,
            data: vec![Complex64::new(gain, 0.0); grid.len()],
            label: label.into(),
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, kx: usize, ky: usize) -> Complex64 {
        self.data[ky * self.grid.width + kx]
    }
}

fn fft_rows(data: &mut [Complex64], width: usize, fft: &dyn Fft<f64>) {
    let scratch_len = fft.get_inplace_scratch_len();
    data.par_chunks_mut(width).for_each_init(
        || vec![Complex64::new(0.0, 0.0); scratch_len],
        |scratch, row| fft.process_with_scratch(row, scratch),
    );
}

fn transpose(src: &[Complex64], width: usize, height: usize) -> Vec<Complex64> {
    let mut dst = vec![Complex64::new(0.0, 0.0); src.len()];
    dst.par_chunks_mut(height).enumerate().for_each(|(i, col)| {
        for (j, v) in col.iter_mut().enumerate() {
            *v = src[j * width + i];
        }
    });
    dst
}

/// Swaps quadrants; for even sizes fftshift and ifftshift coincide.
fn swap_quadrants(data: &[Complex64], width: usize, height: usize) -> Vec<Complex64> {
    let (hw, hh) = (width / 2, height / 2);
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    out.par_chunks_mut(width).enumerate().for_each(|(j, row)| {
        let src_row = (j + hh) % height;
        let src = &data[src_row * width..(src_row + 1) * width];
        row[..hw].copy_from_slice(&src[hw..]);
        row[hw..].copy_from_slice(&src[..hw]);
    });
    out
}

/// Centered unitary 2-D DFT of complex data laid out on `grid`.
pub(crate) fn fft2_centered(data: &[Complex64], grid: Grid, direction: FftDirection) -> Vec<Complex64> {
    let (w, h) = (grid.width, grid.height);
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft(w, direction);
    let col_fft = planner.plan_fft(h, direction);

    let mut buf = swap_quadrants(data, w, h);
    fft_rows(&mut buf, w, row_fft.as_ref());
    let mut t = transpose(&buf, w, h);
    fft_rows(&mut t, h, col_fft.as_ref());
    let mut out = transpose(&t, h, w);
    let scale = 1.0 / (grid.len() as f64).sqrt();
    out.par_iter_mut().for_each(|v| *v *= scale);
    swap_quadrants(&out, w, h)
}

/// Forward transform of an arbitrary complex field (used for sub-bin shifts).
pub(crate) fn forward_fft_complex(grid: Grid, field: &[Complex64]) -> Spectrum {
    Spectrum {
        grid,
        data: fft2_centered(field, grid, FftDirection::Forward),
    }
}

/// Inverse transform keeping the complex result.
pub(crate) fn inverse_fft_complex(spec: &Spectrum) -> Vec<Complex64> {
    fft2_centered(&spec.data, spec.grid, FftDirection::Inverse)
}

/// DC-centered, unitary forward transform (Parseval holds with factor 1).
pub fn forward_fft(img: &Image) -> Spectrum {
    let field: Vec<Complex64> = img.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    forward_fft_complex(img.grid, &field)
}

/// Inverse of [`forward_fft`]. The imaginary part is dropped; a residue above
/// `1e-9` of the peak magnitude bumps [`imag_residue_warnings`], and one
/// carrying more than `1e-6` of the total energy is an error.
pub fn inverse_fft(spec: &Spectrum) -> Result<Image> {
    let field = inverse_fft_complex(spec);
    let mut total = 0.0;
    let mut imag = 0.0;
    let mut peak: f64 = 0.0;
    let mut peak_imag: f64 = 0.0;
    for c in &field {
        total += c.norm_sqr();
        imag += c.im * c.im;
        peak = peak.max(c.norm());
        peak_imag = peak_imag.max(c.im.abs());
    }
    if total > 0.0 && imag > IMAG_ENERGY_LIMIT * total {
        return Err(Error::ImagResidue {
            fraction: imag / total,
        });
    }
    if peak_imag > IMAG_SILENT_LIMIT * peak {
        IMAG_RESIDUE_WARNINGS.fetch_add(1, Ordering::Relaxed);
        log::warn!(
            "inverse_fft discarded imaginary residue (energy fraction {:.3e})",
            imag / total
        );
    }
    Ok(Image {
        grid: spec.grid,
        data: field.into_iter().map(|c| c.re).collect(),
    })
}

/// Pointwise product of a spectrum with a filter on the same grid.
pub fn apply_filter(spec: &Spectrum, filter: &Filter) -> Result<Spectrum> {
    spec.grid.check_same(&filter.grid, "apply_filter")?;
    Ok(Spectrum {
        grid: spec.grid,
        data: spec
            .data
            .iter()
            .zip(&filter.data)
            .map(|(s, f)| s * f)
            .collect(),
    })
}

fn check_resize(old: Grid, new_w: usize, new_h: usize, growing: bool) -> Result<Grid> {
    let ok = if growing {
        new_w >= old.width && new_h >= old.height
    } else {
        new_w <= old.width && new_h <= old.height
    };
    if !ok {
        return Err(Error::BadDims(format!(
            "cannot {} {}x{} to {}x{}",
            if growing { "pad" } else { "crop" },
            old.width,
            old.height,
            new_w,
            new_h
        )));
    }
    Grid::new(new_w, new_h, old.pixel_pitch)
}

/// Zero-pads keeping the center pixel `(w/2, h/2)` aligned.
pub fn pad_to(img: &Image, new_w: usize, new_h: usize) -> Result<Image> {
    let grid = check_resize(img.grid, new_w, new_h, true)?;
    let ox = new_w / 2 - img.width() / 2;
    let oy = new_h / 2 - img.height() / 2;
    let mut out = Image::zeros(grid);
    for j in 0..img.height() {
        let src = &img.data[j * img.width()..(j + 1) * img.width()];
        let start = (j + oy) * new_w + ox;
        out.data[start..start + img.width()].copy_from_slice(src);
    }
    Ok(out)
}

/// Central crop, inverse of [`pad_to`].
pub fn crop_to(img: &Image, new_w: usize, new_h: usize) -> Result<Image> {
    let grid = check_resize(img.grid, new_w, new_h, false)?;
    let ox = img.width() / 2 - new_w / 2;
    let oy = img.height() / 2 - new_h / 2;
    let mut data = Vec::with_capacity(grid.len());
    for j in 0..new_h {
        let start = (j + oy) * img.width() + ox;
        data.extend_from_slice(&img.data[start..start + new_w]);
    }
    Ok(Image { grid, data })
}

/// Embeds a spectrum into a larger grid with the same field of view (same
/// frequency step), scaling so the spatial intensity is preserved. The
/// unpaired Nyquist row/column of the source is dropped to keep the result
/// Hermitian.
pub(crate) fn embed_spectrum(spec: &Spectrum, factor: usize) -> Spectrum {
    let src = spec.grid;
    let dst = src.upsampled(factor);
    let mut out = Spectrum::zeros(dst);
    let ox = dst.width / 2 - src.width / 2;
    let oy = dst.height / 2 - src.height / 2;
    let scale = factor as f64;
    for ky in 1..src.height {
        for kx in 1..src.width {
            out.data[(ky + oy) * dst.width + kx + ox] = spec.data[ky * src.width + kx] * scale;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(grid: Grid, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        Image::from_vec(grid, data).unwrap()
    }

    /// Direct double-sum DFT with the centered convention, O(N^4).
    fn naive_centered_dft(img: &Image) -> Vec<Complex64> {
        let g = img.grid();
        let (w, h) = (g.width as f64, g.height as f64);
        let mut out = Vec::with_capacity(g.len());
        for ky in 0..g.height {
            for kx in 0..g.width {
                let u = kx as f64 - (g.width / 2) as f64;
                let v = ky as f64 - (g.height / 2) as f64;
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..g.height {
                    for i in 0..g.width {
                        let x = i as f64 - (g.width / 2) as f64;
                        let y = j as f64 - (g.height / 2) as f64;
                        let ph = -2.0 * std::f64::consts::PI * (u * x / w + v * y / h);
                        acc += img.get(i, j) * Complex64::from_polar(1.0, ph);
                    }
                }
                out.push(acc / (w * h).sqrt());
            }
        }
        out
    }

    #[test]
    fn rejects_odd_and_tiny_grids() {
        assert!(matches!(Grid::new(9, 8, 1.0), Err(Error::BadDims(_))));
        assert!(matches!(Grid::new(6, 8, 1.0), Err(Error::BadDims(_))));
        assert!(matches!(Grid::new(8, 8, 0.0), Err(Error::BadDims(_))));
        assert!(Grid::new(8, 10, 0.5).is_ok());
    }

    #[test]
    fn zero_image_has_zero_spectrum() {
        let g = Grid::new(64, 64, 0.1).unwrap();
        let s = forward_fft(&Image::zeros(g));
        assert!(s.data().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn constant_image_is_dc_only() {
        let g = Grid::new(64, 64, 0.1).unwrap();
        let c = 2.5;
        let s = forward_fft(&Image::constant(g, c));
        let (cx, cy) = g.center();
        for ky in 0..64 {
            for kx in 0..64 {
                let v = s.get(kx, ky);
                if (kx, ky) == (cx, cy) {
                    assert!((v.re - c * 64.0).abs() < 1e-9 && v.im.abs() < 1e-9);
                } else {
                    assert!(v.norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn matches_direct_dft_on_small_rectangular_grid() {
        let g = Grid::new(12, 8, 0.3).unwrap();
        let img = random_image(g, 11);
        let fast = forward_fft(&img);
        let slow = naive_centered_dft(&img);
        for (a, b) in fast.data().iter().zip(&slow) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn parseval_against_direct_double_sum() {
        let g = Grid::new(128, 128, 0.1).unwrap();
        let img = random_image(g, 3);
        let mut spatial = 0.0;
        for j in 0..128 {
            for i in 0..128 {
                spatial += img.get(i, j) * img.get(i, j);
            }
        }
        let spectral = forward_fft(&img).energy();
        assert!(((spatial - spectral) / spatial).abs() < 1e-6);
    }

    #[test]
    fn delta_round_trip() {
        let g = Grid::new(64, 64, 0.1).unwrap();
        let mut img = Image::zeros(g);
        img.set(10, 40, 1.0);
        let back = inverse_fft(&forward_fft(&img)).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn dc_spectrum_inverts_to_unit_constant() {
        let g = Grid::new(64, 64, 0.1).unwrap();
        let mut s = Spectrum::zeros(g);
        let (cx, cy) = g.center();
        s.data_mut()[cy * 64 + cx] = Complex64::new(64.0, 0.0);
        let img = inverse_fft(&s).unwrap();
        assert!(img.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn large_random_round_trip() {
        let g = Grid::new(256, 256, 0.1).unwrap();
        let img = random_image(g, 5);
        let back = inverse_fft(&forward_fft(&img)).unwrap();
        let max = img.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-9 * max);
        }
    }

    #[test]
    fn asymmetric_spectrum_is_rejected() {
        let g = Grid::new(16, 16, 0.1).unwrap();
        let mut s = Spectrum::zeros(g);
        s.data_mut()[8 * 16 + 10] = Complex64::new(1.0, 0.0);
        assert!(matches!(inverse_fft(&s), Err(Error::ImagResidue { .. })));
    }

    #[test]
    fn identity_and_zero_filters() {
        let g = Grid::new(32, 32, 0.1).unwrap();
        let s = forward_fft(&random_image(g, 9));
        let ones = Filter::constant(g, 1.0, "ones");
        let zeros = Filter::constant(g, 0.0, "zeros");
        assert_eq!(apply_filter(&s, &ones).unwrap(), s);
        assert!(apply_filter(&s, &zeros)
            .unwrap()
            .data()
            .iter()
            .all(|c| c.norm() == 0.0));
    }

    #[test]
    fn filter_grid_mismatch() {
        let g = Grid::new(32, 32, 0.1).unwrap();
        let g2 = Grid::new(32, 32, 0.2).unwrap();
        let s = Spectrum::zeros(g);
        let f = Filter::constant(g2, 1.0, "x");
        assert!(matches!(apply_filter(&s, &f), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn delta_spectrum_times_filter_reproduces_filter_table() {
        let g = Grid::new(64, 64, 0.1).unwrap();
        let amp = 3.0;
        let mut img = Image::zeros(g);
        let (cx, cy) = g.center();
        img.set(cx, cy, amp);
        let filt = Filter::from_fn(g, "ramp", |fx, fy| (-(fx * fx + fy * fy)).exp());
        let out = apply_filter(&forward_fft(&img), &filt).unwrap();
        // A centered delta of amplitude a has the flat spectrum a / sqrt(N).
        let scale = amp / 64.0;
        for (o, f) in out.data().iter().zip(filt.data()) {
            assert!((o - f * scale).norm() < 1e-12);
        }
    }

    #[test]
    fn pad_crop_round_trip_is_bitwise() {
        let g = Grid::new(64, 64, 0.1).unwrap();
        let img = random_image(g, 1);
        let back = crop_to(&pad_to(&img, 128, 128).unwrap(), 64, 64).unwrap();
        assert_eq!(back, img);
        let zero = pad_to(&Image::zeros(g), 128, 96).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pad_keeps_center_delta_centered() {
        let g = Grid::new(64, 64, 0.1).unwrap();
        let mut img = Image::zeros(g);
        img.set(32, 32, 1.0);
        let padded = pad_to(&img, 128, 128).unwrap();
        assert_eq!(padded.get(64, 64), 1.0);
        assert_eq!(padded.sum(), 1.0);
    }

    #[test]
    fn bad_resize_dims() {
        let g = Grid::new(64, 64, 0.1).unwrap();
        let img = Image::zeros(g);
        assert!(matches!(pad_to(&img, 32, 64), Err(Error::BadDims(_))));
        assert!(matches!(crop_to(&img, 128, 64), Err(Error::BadDims(_))));
        assert!(matches!(pad_to(&img, 65, 64), Err(Error::BadDims(_))));
    }

    #[test]
    fn embedding_preserves_intensity() {
        let g = Grid::new(32, 32, 0.2).unwrap();
        let tau = 2.0 * std::f64::consts::PI;
        let img = Image::from_fn(g, |x, y| 1.0 + (tau * 0.3125 * x).cos() + 0.1 * (tau * 0.46875 * y).sin());
        let up = inverse_fft(&embed_spectrum(&forward_fft(&img), 2)).unwrap();
        // Band-limited periodic input: every original sample reappears at an even index.
        for j in 0..32 {
            for i in 0..32 {
                let a = img.get(i, j);
                let b = up.get(2 * i, 2 * j);
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
        assert!((up.mean() - img.mean()).abs() < 1e-12);
    }
}
