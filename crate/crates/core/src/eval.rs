//! Synthetic test targets and the metrics used to compare conventional and
//! reconstructed images.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{forward_fft, Grid, Image};
use crate::optics::{SamplePlane, SampleStack};

/// Default relative threshold for [`effective_cutoff`].
pub const DEFAULT_NOISE_FLOOR: f64 = 1e-3;
/// Minimum number of samples in a profile.
pub const MIN_PROFILE_SAMPLES: usize = 16;
/// Keep-out border for target layouts, pixels.
const LAYOUT_MARGIN_PX: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarOrientation {
    /// Bars run along x; the profile across them runs along y.
    Horizontal,
    /// Bars run along y; the profile across them runs along x.
    Vertical,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarGroup {
    /// Cycles/um.
    pub frequency: f64,
    /// Three-bar elements packed side by side.
    pub elements: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarTargetSpec {
    pub groups: Vec<BarGroup>,
    pub orientation: BarOrientation,
    pub amplitude: f64,
    /// Bar length in units of bar width.
    pub length_factor: f64,
}

impl BarTargetSpec {
    pub fn new(groups: Vec<BarGroup>, orientation: BarOrientation) -> Self {
        BarTargetSpec {
            groups,
            orientation,
            amplitude: 1.0,
            length_factor: 5.0,
        }
    }

    pub fn validate(&self, grid: Grid) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::InvalidConfig("bar target needs at least one group".into()));
        }
        for g in &self.groups {
            if !(g.frequency > 0.0 && g.frequency < grid.nyquist()) {
                return Err(Error::InvalidConfig(format!(
                    "bar frequency {} cycles/um must lie in (0, {:.6})",
                    g.frequency,
                    grid.nyquist()
                )));
            }
            if g.elements == 0 {
                return Err(Error::InvalidConfig("bar group needs at least one element".into()));
            }
        }
        if !(self.amplitude >= 0.0) || !(self.length_factor > 0.0) {
            return Err(Error::InvalidConfig("amplitude must be >= 0 and length_factor > 0".into()));
        }
        Ok(())
    }
}

/// Axis-aligned rectangle in micrometers from the grid center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn center(&self) -> [f64; 2] {
        [0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)]
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    fn translated(&self, dx: f64, dy: f64) -> Rect {
        Rect {
            x0: self.x0 + dx,
            y0: self.y0 + dy,
            x1: self.x1 + dx,
            y1: self.y1 + dy,
        }
    }
}

/// Placement of one bar group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLayout {
    pub frequency: f64,
    pub elements: usize,
    /// Bounding box of the bars that vary along x.
    pub vertical: Option<Rect>,
    /// Bounding box of the bars that vary along y.
    pub horizontal: Option<Rect>,
}

impl GroupLayout {
    /// Line across the bars through the block center covering `periods`
    /// bar periods, centered on the middle bar.
    pub fn profile_line(&self, vertical_bars: bool, periods: f64) -> Option<([f64; 2], [f64; 2])> {
        let half = 0.5 * periods / self.frequency;
        if vertical_bars {
            let c = self.vertical?.center();
            Some(([c[0] - half, c[1]], [c[0] + half, c[1]]))
        } else {
            let c = self.horizontal?.center();
            Some(([c[0], c[1] - half], [c[0], c[1] + half]))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarTarget {
    pub sample: SampleStack,
    pub layout: Vec<GroupLayout>,
}

/// Union of disjoint rectangles rendered by exact pixel-area coverage.
fn render_rects(grid: Grid, rects: &[Rect], amplitude: f64) -> Image {
    let pitch = grid.pixel_pitch;
    let mut img = Image::zeros(grid);
    let w = grid.width;
    img.data_mut().par_chunks_mut(w).enumerate().for_each(|(j, row)| {
        let (py0, py1) = (grid.y_um(j) - 0.5 * pitch, grid.y_um(j) + 0.5 * pitch);
        for r in rects {
            let oy = (py1.min(r.y1) - py0.max(r.y0)).max(0.0);
            if oy == 0.0 {
                continue;
            }
            for (i, v) in row.iter_mut().enumerate() {
                let (px0, px1) = (grid.x_um(i) - 0.5 * pitch, grid.x_um(i) + 0.5 * pitch);
                let ox = (px1.min(r.x1) - px0.max(r.x0)).max(0.0);
                *v += amplitude * ox * oy / (pitch * pitch);
            }
        }
    });
    img
}

/// Bars of width `1/(2f)` at pitch `1/f`; `3·elements` bars per block.
fn bar_rects(block: Rect, g: &BarGroup, vertical_bars: bool) -> Vec<Rect> {
    let w = 0.5 / g.frequency;
    (0..3 * g.elements)
        .map(|k| {
            let s = 2.0 * w * k as f64;
            if vertical_bars {
                Rect {
                    x0: block.x0 + s,
                    x1: block.x0 + s + w,
                    ..block
                }
            } else {
                Rect {
                    y0: block.y0 + s,
                    y1: block.y0 + s + w,
                    ..block
                }
            }
        })
        .collect()
}

/// Groups stacked top to bottom, each row centered horizontally; with
/// `Both`, a vertical-bar block and a horizontal-bar block sit side by side.
pub fn gen_bars(spec: &BarTargetSpec, grid: Grid) -> Result<BarTarget> {
    spec.validate(grid)?;
    let wmax = spec.groups.iter().map(|g| 0.5 / g.frequency).fold(0.0, f64::max);
    let gap = 4.0 * wmax;
    let mut rows: Vec<(GroupLayout, f64, f64)> = Vec::new();
    for g in &spec.groups {
        let w = 0.5 / g.frequency;
        let across = (6 * g.elements - 1) as f64 * w;
        let along = spec.length_factor * w;
        let (mut vr, mut hr) = (None, None);
        let mut width = 0.0;
        let mut height: f64 = 0.0;
        if matches!(spec.orientation, BarOrientation::Vertical | BarOrientation::Both) {
            vr = Some(Rect { x0: 0.0, y0: 0.0, x1: across, y1: along });
            width += across;
            height = height.max(along);
        }
        if matches!(spec.orientation, BarOrientation::Horizontal | BarOrientation::Both) {
            let x0 = if vr.is_some() { width + gap } else { 0.0 };
            hr = Some(Rect { x0, y0: 0.0, x1: x0 + along, y1: across });
            width = x0 + along;
            height = height.max(across);
        }
        rows.push((
            GroupLayout {
                frequency: g.frequency,
                elements: g.elements,
                vertical: vr,
                horizontal: hr,
            },
            width,
            height,
        ));
    }
    let total_h = rows.iter().map(|r| r.2).sum::<f64>() + gap * (rows.len() - 1) as f64;
    let total_w = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let margin = LAYOUT_MARGIN_PX * grid.pixel_pitch;
    let field_w = grid.width as f64 * grid.pixel_pitch;
    let field_h = grid.height as f64 * grid.pixel_pitch;
    if total_w + 2.0 * margin > field_w || total_h + 2.0 * margin > field_h {
        return Err(Error::LayoutOverflow(format!(
            "bar layout {total_w:.3} x {total_h:.3} um does not fit the {field_w:.3} x {field_h:.3} um field"
        )));
    }
    let mut y = -0.5 * total_h;
    let mut layout = Vec::new();
    let mut rects = Vec::new();
    for (g, (mut gl, width, height)) in spec.groups.iter().zip(rows) {
        // Blocks within a row are vertically centered on the row.
        let place = |r: Rect| {
            let dy = y + 0.5 * (height - r.height());
            r.translated(-0.5 * width, dy)
        };
        gl.vertical = gl.vertical.map(place);
        gl.horizontal = gl.horizontal.map(place);
        if let Some(r) = gl.vertical {
            rects.extend(bar_rects(r, g, true));
        }
        if let Some(r) = gl.horizontal {
            rects.extend(bar_rects(r, g, false));
        }
        layout.push(gl);
        y += height + gap;
    }
    let density = render_rects(grid, &rects, spec.amplitude);
    Ok(BarTarget {
        sample: SampleStack::in_focus(density)?,
        layout,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingTargetSpec {
    /// Micrometers, to the middle of the annulus.
    pub radius: f64,
    /// Micrometers.
    pub thickness: f64,
    pub amplitude: f64,
}

impl RingTargetSpec {
    pub fn validate(&self, grid: Grid) -> Result<()> {
        if !(self.thickness > 0.0 && self.thickness < self.radius) {
            return Err(Error::InvalidConfig(format!(
                "ring thickness {} must be > 0 and < radius {}",
                self.thickness, self.radius
            )));
        }
        if !(self.amplitude >= 0.0) {
            return Err(Error::InvalidConfig("ring amplitude must be >= 0".into()));
        }
        let reach = self.radius + 0.5 * self.thickness + 2.0 * grid.pixel_pitch;
        let half = 0.5 * (grid.width.min(grid.height) - 2) as f64 * grid.pixel_pitch;
        if reach > half {
            return Err(Error::LayoutOverflow(format!(
                "ring outer edge {reach:.3} um exceeds half field {half:.3} um"
            )));
        }
        Ok(())
    }

    /// Density at distance `r` from the center: flat top, 2-pixel linear edge ramps.
    pub fn value(&self, r: f64, pixel_pitch: f64) -> f64 {
        let d = (r - self.radius).abs();
        let v = (0.5 * self.thickness - d) / (2.0 * pixel_pitch) + 0.5;
        self.amplitude * v.clamp(0.0, 1.0)
    }
}

pub fn gen_ring(spec: &RingTargetSpec, grid: Grid) -> Result<SampleStack> {
    spec.validate(grid)?;
    let s = *spec;
    let pitch = grid.pixel_pitch;
    SampleStack::in_focus(Image::from_fn(grid, move |x, y| s.value(x.hypot(y), pitch)))
}

/// Description of a single sample plane.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleSpec {
    Bars(BarTargetSpec),
    Ring(RingTargetSpec),
    /// Uniform disk: center (um), radius (um), amplitude.
    Disk { center: [f64; 2], radius: f64, amplitude: f64 },
    Density(Image),
}

impl SampleSpec {
    pub fn render(&self, grid: Grid) -> Result<Image> {
        match self {
            SampleSpec::Bars(s) => Ok(gen_bars(s, grid)?.sample.planes()[0].density.clone()),
            SampleSpec::Ring(s) => Ok(gen_ring(s, grid)?.planes()[0].density.clone()),
            SampleSpec::Disk { center, radius, amplitude } => {
                if !(*radius > 0.0 && *amplitude >= 0.0) {
                    return Err(Error::InvalidConfig("disk needs radius > 0, amplitude >= 0".into()));
                }
                let (c, r, a) = (*center, *radius, *amplitude);
                let pitch = grid.pixel_pitch;
                Ok(Image::from_fn(grid, move |x, y| {
                    let d = (x - c[0]).hypot(y - c[1]);
                    a * ((r - d) / (2.0 * pitch) + 0.5).clamp(0.0, 1.0)
                }))
            }
            SampleSpec::Density(img) => {
                grid.check_same(&img.grid(), "density plane")?;
                Ok(img.clone())
            }
        }
    }
}

/// Two-plane sample with the support mask of each plane.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPlaneSample {
    pub sample: SampleStack,
    pub in_focus_mask: Vec<bool>,
    pub out_focus_mask: Vec<bool>,
}

pub fn gen_two_plane(in_focus: &SampleSpec, out_focus: &SampleSpec, dz: f64, grid: Grid) -> Result<TwoPlaneSample> {
    if dz == 0.0 || !dz.is_finite() {
        return Err(Error::InvalidConfig(format!("two-plane sample needs dz != 0, got {dz}")));
    }
    let a = in_focus.render(grid)?;
    let b = out_focus.render(grid)?;
    let in_focus_mask = a.data().iter().map(|&v| v > 0.0).collect();
    let out_focus_mask = b.data().iter().map(|&v| v > 0.0).collect();
    Ok(TwoPlaneSample {
        sample: SampleStack::new(vec![
            SamplePlane { density: a, defocus_um: 0.0 },
            SamplePlane { density: b, defocus_um: dz },
        ])?,
        in_focus_mask,
        out_focus_mask,
    })
}

/// Mask grown by `radius_px` pixels (disk structuring element).
pub fn dilate_mask(mask: &[bool], grid: Grid, radius_px: usize) -> Vec<bool> {
    let (w, h) = (grid.width as i64, grid.height as i64);
    let r = radius_px as i64;
    let offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    (0..w * h)
        .into_par_iter()
        .map(|idx| {
            let (x, y) = (idx % w, idx / w);
            offsets.iter().any(|(dx, dy)| {
                let (nx, ny) = (x + dx, y + dy);
                nx >= 0 && ny >= 0 && nx < w && ny < h && mask[(ny * w + nx) as usize]
            })
        })
        .collect()
}

/// Fraction of the total image signal that falls inside `mask`.
pub fn masked_fraction(img: &Image, mask: &[bool]) -> f64 {
    let total = img.sum();
    if total == 0.0 {
        return 0.0;
    }
    img.data()
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(v, _)| v)
        .sum::<f64>()
        / total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileMeasurement {
    /// (distance from `p0` in um, value).
    pub samples: Vec<(f64, f64)>,
    pub p0: [f64; 2],
    pub p1: [f64; 2],
}

impl ProfileMeasurement {
    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.1).collect()
    }
}

fn bilinear(img: &Image, x_um: f64, y_um: f64) -> Result<f64> {
    let g = img.grid();
    let (cx, cy) = g.center();
    let fx = x_um / g.pixel_pitch + cx as f64;
    let fy = y_um / g.pixel_pitch + cy as f64;
    let eps = 1e-9;
    if !(fx >= -eps && fy >= -eps && fx <= (g.width - 1) as f64 + eps && fy <= (g.height - 1) as f64 + eps) {
        return Err(Error::OutOfBounds(format!("point ({x_um:.4}, {y_um:.4}) um is outside the image")));
    }
    let fx = fx.clamp(0.0, (g.width - 1) as f64);
    let fy = fy.clamp(0.0, (g.height - 1) as f64);
    let (i0, j0) = (fx.floor() as usize, fy.floor() as usize);
    let (i1, j1) = ((i0 + 1).min(g.width - 1), (j0 + 1).min(g.height - 1));
    let (tx, ty) = (fx - i0 as f64, fy - j0 as f64);
    let top = img.get(i0, j0) * (1.0 - tx) + img.get(i1, j0) * tx;
    let bottom = img.get(i0, j1) * (1.0 - tx) + img.get(i1, j1) * tx;
    Ok(top * (1.0 - ty) + bottom * ty)
}

/// `n` bilinear samples from `p0` to `p1` inclusive, coordinates in um from the center.
pub fn profile(img: &Image, p0: [f64; 2], p1: [f64; 2], n: usize) -> Result<ProfileMeasurement> {
    if n < MIN_PROFILE_SAMPLES {
        return Err(Error::InvalidConfig(format!(
            "profile needs at least {MIN_PROFILE_SAMPLES} samples, got {n}"
        )));
    }
    let len = (p1[0] - p0[0]).hypot(p1[1] - p0[1]);
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 / (n - 1) as f64;
            let x = p0[0] + t * (p1[0] - p0[0]);
            let y = p0[1] + t * (p1[1] - p0[1]);
            Ok((t * len, bilinear(img, x, y)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProfileMeasurement { samples, p0, p1 })
}

/// `(max − min) / (max + min)`; zero for an all-zero profile.
pub fn michelson_contrast(prof: &ProfileMeasurement) -> f64 {
    michelson(&prof.values())
}

pub fn michelson(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if max + min == 0.0 {
        0.0
    } else {
        (max - min) / (max + min)
    }
}

/// Largest radius whose radially averaged spectral magnitude exceeds
/// `noise_floor · |DC|`, cycles/um.
pub fn effective_cutoff(img: &Image, noise_floor: f64) -> f64 {
    let g = img.grid();
    let spec = forward_fft(img);
    let dc = spec.dc().norm();
    if dc == 0.0 {
        return 0.0;
    }
    let step = g.freq_step_x().max(g.freq_step_y());
    let nbins = (g.nyquist() * 2f64.sqrt() / step).ceil() as usize + 2;
    let mut sum = vec![0.0; nbins];
    let mut count = vec![0usize; nbins];
    for ky in 0..g.height {
        for kx in 0..g.width {
            let rho = g.freq_x(kx).hypot(g.freq_y(ky));
            let b = (rho / step).round() as usize;
            sum[b] += spec.get(kx, ky).norm();
            count[b] += 1;
        }
    }
    (1..nbins)
        .rev()
        .find(|&b| count[b] > 0 && sum[b] / count[b] as f64 > noise_floor * dc)
        .map_or(0.0, |b| b as f64 * step)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FwhmMode {
    /// Width of the profile's peak.
    Peak,
    /// Width of the peak of `|d profile / ds|`.
    Edge,
}

fn derivative(samples: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let n = samples.len();
    (0..n)
        .map(|k| {
            let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
            let d = (samples[b].1 - samples[a].1) / (samples[b].0 - samples[a].0);
            (samples[k].0, d.abs())
        })
        .collect()
}

fn peak_width(samples: &[(f64, f64)]) -> Result<f64> {
    if samples.len() < 3 {
        return Err(Error::NoPeak("too few samples".into()));
    }
    let (ip, &(_, max)) = samples
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("nonempty");
    if ip == 0 || ip == samples.len() - 1 {
        return Err(Error::NoPeak("maximum lies at the profile boundary".into()));
    }
    let base = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    if !(max > base) {
        return Err(Error::NoPeak("flat profile".into()));
    }
    let half = base + 0.5 * (max - base);
    let cross = |a: (f64, f64), b: (f64, f64)| a.0 + (half - a.1) / (b.1 - a.1) * (b.0 - a.0);
    let left = (1..=ip)
        .rev()
        .find(|&k| samples[k - 1].1 < half)
        .map(|k| cross(samples[k - 1], samples[k]))
        .ok_or_else(|| Error::NoPeak("no half-maximum crossing before the peak".into()))?;
    let right = (ip..samples.len() - 1)
        .find(|&k| samples[k + 1].1 < half)
        .map(|k| cross(samples[k], samples[k + 1]))
        .ok_or_else(|| Error::NoPeak("no half-maximum crossing after the peak".into()))?;
    Ok(right - left)
}

/// Full width at half maximum, um.
pub fn edge_fwhm(prof: &ProfileMeasurement, mode: FwhmMode) -> Result<f64> {
    match mode {
        FwhmMode::Peak => peak_width(&prof.samples),
        FwhmMode::Edge => peak_width(&derivative(&prof.samples)),
    }
}

/// [`edge_fwhm`] restricted to samples whose position lies in `[from, to]` um.
pub fn fwhm_in_range(prof: &ProfileMeasurement, mode: FwhmMode, from: f64, to: f64) -> Result<f64> {
    let sub: Vec<(f64, f64)> = match mode {
        FwhmMode::Peak => prof.samples.clone(),
        FwhmMode::Edge => derivative(&prof.samples),
    }
    .into_iter()
    .filter(|s| s.0 >= from && s.0 <= to)
    .collect();
    peak_width(&sub)
}
