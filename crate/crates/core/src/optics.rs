//! Detection optics and the dark-field forward model.
//!
//! The sample is a scattering density: only light scattered into the
//! detection cone reaches the camera, so there is no additive background
//! term for the blocked direct beam. Image formation is incoherent: each
//! plane's `density x illumination` product is convolved with that plane's
//! intensity PSF (multiplication by its OTF in the spectrum).

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{
    apply_filter, crop_to, forward_fft, inverse_fft, pad_to, Filter, Grid, Image, Spectrum,
};
use crate::patterns::PatternSet;
use crate::recon::{AcquisitionManifest, Provenance, RawStack};

/// Minimum zero guard band around the sample during convolution.
pub const MIN_GUARD_BAND_PX: usize = 16;
/// Simpson intervals for the defocused-OTF quadrature.
const DEFOCUS_QUADRATURE_INTERVALS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Transmission,
    Reflectance,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Transmission => write!(f, "transmission"),
            Mode::Reflectance => write!(f, "reflectance"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Gaussian read noise, image units.
    pub read_noise_sigma: f64,
    /// Counts per unit intensity; 0 disables shot noise.
    pub photon_scale: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec {
            read_noise_sigma: 0.0,
            photon_scale: 0.0,
            seed: 0,
        }
    }

    pub fn is_disabled(&self) -> bool {
        self.read_noise_sigma == 0.0 && self.photon_scale == 0.0
    }
}

/// How the convolution treats the field-of-view boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Boundary {
    /// Zero-pad by `pixels` (at least 16) on every side, crop afterwards.
    ZeroGuard { pixels: usize },
    /// Treat the sample as one period of an infinite tiling.
    Periodic,
}

impl Default for Boundary {
    fn default() -> Self {
        Boundary::ZeroGuard {
            pixels: MIN_GUARD_BAND_PX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticsConfig {
    pub na_detection: f64,
    /// Inner edge of the illumination ring; must exceed `na_detection`.
    pub na_illumination_inner: f64,
    pub na_illumination_outer: f64,
    /// Micrometers.
    pub wavelength: f64,
    pub mode: Mode,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub boundary: Boundary,
}

impl Default for OpticsConfig {
    /// Detection NA 0.4 and objective NA 0.75; the ring inner edge (0.5) and
    /// wavelength (0.55 um) are configuration defaults.
    fn default() -> Self {
        OpticsConfig {
            na_detection: 0.4,
            na_illumination_inner: 0.5,
            na_illumination_outer: 0.75,
            wavelength: 0.55,
            mode: Mode::Transmission,
            noise: NoiseSpec::none(),
            boundary: Boundary::default(),
        }
    }
}

impl OpticsConfig {
    /// Range checks that do not involve the dark-field inequality.
    pub fn validate(&self) -> Result<()> {
        if !(0.3..=1.1).contains(&self.wavelength) {
            return Err(Error::InvalidConfig(format!(
                "wavelength {} um outside [0.3, 1.1]",
                self.wavelength
            )));
        }
        for (name, na) in [
            ("na_detection", self.na_detection),
            ("na_illumination_inner", self.na_illumination_inner),
            ("na_illumination_outer", self.na_illumination_outer),
        ] {
            if !(na > 0.0 && na <= 1.0) {
                return Err(Error::InvalidConfig(format!("{name} = {na} outside (0, 1]")));
            }
        }
        if self.noise.read_noise_sigma < 0.0 || self.noise.photon_scale < 0.0 {
            return Err(Error::InvalidConfig(
                "noise sigma and photon scale must be >= 0".into(),
            ));
        }
        if let Boundary::ZeroGuard { pixels } = self.boundary {
            if pixels < MIN_GUARD_BAND_PX {
                return Err(Error::InvalidConfig(format!(
                    "guard band {pixels} px is below the {MIN_GUARD_BAND_PX} px minimum"
                )));
            }
        }
        Ok(())
    }

    pub fn detection_otf(&self) -> OtfModel {
        OtfModel::new(self.na_detection, self.wavelength)
    }

    pub fn illumination_otf(&self) -> OtfModel {
        OtfModel::new(self.na_illumination_outer, self.wavelength)
    }

    /// Incoherent detection cutoff `2 NA / λ`, cycles/um.
    pub fn cutoff(&self) -> f64 {
        self.detection_otf().cutoff()
    }
}

/// Diffraction-limited incoherent OTF of a circular pupil, as a function of
/// radius normalized to the cutoff.
pub fn incoherent_otf(r: f64) -> f64 {
    if r <= 0.0 {
        return 1.0;
    }
    if r >= 1.0 {
        return 0.0;
    }
    (2.0 / PI) * (r.acos() - r * (1.0 - r * r).sqrt())
}

/// Defocused OTF via the one-dimensional form of the pupil autocorrelation.
///
/// `nu` is the frequency in units of the coherent cutoff `NA/λ` (so the
/// incoherent cutoff is `nu = 2`), and `a = 4π W20 / λ`. With the overlap
/// lens parametrized by `w = sin θ`:
///
/// `OTF(nu) = (4/π) ∫_{asin(nu/2)}^{π/2} cos(a·nu·(sin θ − nu/2)) cos²θ dθ`
pub fn defocused_otf_normalized(nu: f64, a: f64) -> f64 {
    if nu <= 0.0 {
        return 1.0;
    }
    if nu >= 2.0 {
        return 0.0;
    }
    if a == 0.0 {
        return incoherent_otf(nu / 2.0);
    }
    let t0 = (nu / 2.0).asin();
    let t1 = PI / 2.0;
    let n = DEFOCUS_QUADRATURE_INTERVALS;
    let h = (t1 - t0) / n as f64;
    let f = |t: f64| {
        let c = t.cos();
        (a * nu * (t.sin() - nu / 2.0)).cos() * c * c
    };
    let mut acc = f(t0) + f(t1);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(t0 + k as f64 * h);
    }
    (4.0 / PI) * acc * h / 3.0
}

/// Circular-pupil OTF for a given NA and wavelength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtfModel {
    pub na: f64,
    pub wavelength: f64,
}

impl OtfModel {
    pub fn new(na: f64, wavelength: f64) -> Self {
        OtfModel { na, wavelength }
    }

    pub fn cutoff(&self) -> f64 {
        2.0 * self.na / self.wavelength
    }

    /// In-focus OTF at radial frequency `rho` (cycles/um).
    pub fn value(&self, rho: f64) -> f64 {
        incoherent_otf(rho / self.cutoff())
    }

    /// Defocus phase coefficient `a = 4π W20 / λ` with `W20 = dz NA² / 2`.
    pub fn defocus_coefficient(&self, dz: f64) -> f64 {
        let w20 = dz * self.na * self.na / 2.0;
        4.0 * PI * w20 / self.wavelength
    }

    pub fn defocused_value(&self, rho: f64, dz: f64) -> f64 {
        defocused_otf_normalized(2.0 * rho / self.cutoff(), self.defocus_coefficient(dz))
    }

    fn check_grid(&self, grid: Grid) -> Result<()> {
        if self.cutoff() > grid.nyquist() {
            return Err(Error::GridTooCoarse {
                cutoff: self.cutoff(),
                nyquist: grid.nyquist(),
            });
        }
        Ok(())
    }
}

/// Radially symmetric filter whose values are computed once per distinct radius.
fn radial_filter(grid: Grid, label: String, support: f64, f: impl Fn(f64) -> f64 + Sync) -> Filter {
    let mut radii: Vec<f64> = Vec::new();
    let mut index: HashMap<u64, usize> = HashMap::new();
    let mut slot = vec![usize::MAX; grid.len()];
    for ky in 0..grid.height {
        let fy = grid.freq_y(ky);
        for kx in 0..grid.width {
            let fx = grid.freq_x(kx);
            let rho = (fx * fx + fy * fy).sqrt();
            if rho >= support {
                continue;
            }
            let id = *index.entry(rho.to_bits()).or_insert_with(|| {
                radii.push(rho);
                radii.len() - 1
            });
            slot[ky * grid.width + kx] = id;
        }
    }
    let values: Vec<f64> = radii.par_iter().map(|&r| f(r)).collect();
    let data = slot
        .iter()
        .map(|&s| {
            Complex64::new(if s == usize::MAX { 0.0 } else { values[s] }, 0.0)
        })
        .collect();
    Filter::from_vec(grid, data, label).expect("grid-sized table")
}

/// In-focus detection OTF sampled on `grid`.
pub fn make_otf(cfg: &OpticsConfig, grid: Grid) -> Result<Filter> {
    let model = cfg.detection_otf();
    model.check_grid(grid)?;
    Ok(radial_filter(
        grid,
        format!("OTF NA={}", cfg.na_detection),
        model.cutoff(),
        |rho| model.value(rho),
    ))
}

/// Detection OTF for a plane `dz` micrometers from focus.
pub fn make_defocused_otf(cfg: &OpticsConfig, grid: Grid, dz: f64) -> Result<Filter> {
    let model = cfg.detection_otf();
    model.check_grid(grid)?;
    Ok(radial_filter(
        grid,
        format!("OTF NA={} dz={dz}", cfg.na_detection),
        model.cutoff(),
        |rho| model.defocused_value(rho, dz),
    ))
}

/// Outcome of the dark-field geometry check.
#[derive(Debug, Clone, PartialEq)]
pub struct DarkfieldReport {
    pub mode: Mode,
    /// Largest fringe frequency the illumination cone can project, cycles/um.
    pub p_max: f64,
    pub message: String,
}

pub fn validate_darkfield(cfg: &OpticsConfig) -> Result<DarkfieldReport> {
    let blocked = match cfg.mode {
        Mode::Transmission => "direct illumination misses the detection objective",
        Mode::Reflectance => "specular reflection is blocked from the detection path",
    };
    if !(cfg.na_detection > 0.0) {
        return Err(Error::NotDarkfield(format!(
            "na_detection = {} must be > 0",
            cfg.na_detection
        )));
    }
    if !(cfg.na_illumination_inner > cfg.na_detection) {
        return Err(Error::NotDarkfield(format!(
            "na_illumination_inner ({}) must exceed na_detection ({}) so that the {blocked}",
            cfg.na_illumination_inner, cfg.na_detection
        )));
    }
    if !(cfg.na_illumination_outer >= cfg.na_illumination_inner) {
        return Err(Error::NotDarkfield(format!(
            "na_illumination_outer ({}) must be >= na_illumination_inner ({})",
            cfg.na_illumination_outer, cfg.na_illumination_inner
        )));
    }
    if cfg.na_illumination_outer > 1.0 {
        return Err(Error::NotDarkfield(format!(
            "na_illumination_outer ({}) must be <= 1",
            cfg.na_illumination_outer
        )));
    }
    cfg.validate()?;
    let p_max = 2.0 * cfg.na_illumination_outer / cfg.wavelength;
    Ok(DarkfieldReport {
        mode: cfg.mode,
        p_max,
        message: format!(
            "{} dark-field: illumination NA {}..{} > detection NA {}; {blocked}; p_max = {p_max:.6} cycles/um",
            cfg.mode, cfg.na_illumination_inner, cfg.na_illumination_outer, cfg.na_detection
        ),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlane {
    /// Scattering density, nonnegative.
    pub density: Image,
    /// Micrometers from the focal plane.
    pub defocus_um: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleStack {
    planes: Vec<SamplePlane>,
}

impl SampleStack {
    pub fn new(planes: Vec<SamplePlane>) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidConfig("sample needs at least one plane".into()))?
            .density
            .grid();
        for (i, p) in planes.iter().enumerate() {
            first.check_same(&p.density.grid(), "sample planes")?;
            if p.density.data().iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::InvalidConfig(format!(
                    "plane {i} has negative or non-finite scattering density"
                )));
            }
            if !p.defocus_um.is_finite() {
                return Err(Error::InvalidConfig(format!("plane {i} defocus is not finite")));
            }
        }
        Ok(SampleStack { planes })
    }

    pub fn in_focus(density: Image) -> Result<Self> {
        Self::new(vec![SamplePlane {
            density,
            defocus_um: 0.0,
        }])
    }

    pub fn planes(&self) -> &[SamplePlane] {
        &self.planes
    }

    pub fn grid(&self) -> Grid {
        self.planes[0].density.grid()
    }

    /// Sum of all plane densities.
    pub fn total_density(&self) -> Image {
        let mut acc = Image::zeros(self.grid());
        for p in &self.planes {
            for (a, b) in acc.data_mut().iter_mut().zip(p.density.data()) {
                *a += b;
            }
        }
        acc
    }
}

/// Forward model with the per-plane transfer functions precomputed.
pub struct ForwardModel<'a> {
    sample: &'a SampleStack,
    cfg: OpticsConfig,
    work_grid: Grid,
    detection: Vec<Filter>,
    illumination: Vec<Option<Filter>>,
}

impl<'a> ForwardModel<'a> {
    pub fn new(sample: &'a SampleStack, cfg: &OpticsConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = sample.grid();
        let work_grid = match cfg.boundary {
            Boundary::ZeroGuard { pixels } => {
                Grid::new(grid.width + 2 * pixels, grid.height + 2 * pixels, grid.pixel_pitch)?
            }
            Boundary::Periodic => grid,
        };
        let detection = sample
            .planes()
            .iter()
            .map(|p| {
                if p.defocus_um == 0.0 {
                    make_otf(cfg, work_grid)
                } else {
                    make_defocused_otf(cfg, work_grid, p.defocus_um)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let ill = cfg.illumination_otf();
        let illumination = sample
            .planes()
            .iter()
            .map(|p| {
                (p.defocus_um != 0.0).then(|| {
                    let dz = p.defocus_um;
                    radial_filter(grid, format!("fringe defocus dz={dz}"), ill.cutoff(), move |rho| {
                        let focus = ill.value(rho);
                        if focus <= 1e-12 {
                            0.0
                        } else {
                            ill.defocused_value(rho, dz) / focus
                        }
                    })
                })
            })
            .collect();
        Ok(ForwardModel {
            sample,
            cfg: *cfg,
            work_grid,
            detection,
            illumination,
        })
    }

    /// Illumination at plane `plane`, with the fringe attenuated by defocus.
    pub fn pattern_at_plane(&self, pattern: &Image, plane: usize) -> Result<Image> {
        match &self.illumination[plane] {
            None => Ok(pattern.clone()),
            Some(f) => inverse_fft(&apply_filter(&forward_fft(pattern), f)?),
        }
    }

    /// Noise-free detected intensity (before clamping).
    pub fn render_clean(&self, pattern: &Image) -> Result<Image> {
        let grid = self.sample.grid();
        grid.check_same(&pattern.grid(), "pattern vs sample")?;
        if pattern.data().iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidConfig("illumination pattern has negative values".into()));
        }
        let mut acc = Spectrum::zeros(self.work_grid);
        for (k, plane) in self.sample.planes().iter().enumerate() {
            let illum = self.pattern_at_plane(pattern, k)?;
            let product = plane.density.combine_mul(&illum)?;
            let padded = if self.work_grid == grid {
                product
            } else {
                pad_to(&product, self.work_grid.width, self.work_grid.height)?
            };
            let filtered = apply_filter(&forward_fft(&padded), &self.detection[k])?;
            acc = acc.add(&filtered)?;
        }
        let full = inverse_fft(&acc)?;
        if self.work_grid == grid {
            Ok(full)
        } else {
            crop_to(&full, grid.width, grid.height)
        }
    }

    /// Detected frame for acquisition slot `(orientation, phase)`, noise added and clamped.
    pub fn frame(&self, pattern: &Image, orientation: usize, phase: usize) -> Result<Image> {
        let clean = self.render_clean(pattern)?;
        Ok(apply_noise(clean, &self.cfg.noise, orientation, phase).clamp_nonnegative())
    }
}

impl Image {
    /// Pixelwise product.
    pub fn combine_mul(&self, other: &Image) -> Result<Image> {
        self.grid().check_same(&other.grid(), "multiply")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        Image::from_vec(self.grid(), data)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-frame noise stream seed derived from `(seed, orientation, phase)`.
pub fn frame_seed(seed: u64, orientation: usize, phase: usize) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(((orientation as u64) << 32) | phase as u64))
}

fn apply_noise(mut img: Image, noise: &NoiseSpec, orientation: usize, phase: usize) -> Image {
    if noise.is_disabled() {
        return img;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(noise.seed, orientation, phase));
    for v in img.data_mut() {
        let mut out = *v;
        if noise.photon_scale > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            out += z * (v.max(0.0) / noise.photon_scale).sqrt();
        }
        if noise.read_noise_sigma > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            out += z * noise.read_noise_sigma;
        }
        *v = out;
    }
    img
}

/// One detected frame; uses the noise stream of slot (0, 0).
pub fn simulate_frame(sample: &SampleStack, pattern: &Image, cfg: &OpticsConfig) -> Result<Image> {
    ForwardModel::new(sample, cfg)?.frame(pattern, 0, 0)
}

/// Full orientation-major acquisition.
pub fn simulate_stack(sample: &SampleStack, patterns: &PatternSet, cfg: &OpticsConfig) -> Result<RawStack> {
    let report = validate_darkfield(cfg)?;
    patterns.spec.validate_against(&report)?;
    sample.grid().check_same(&patterns.grid, "patterns vs sample")?;
    let model = ForwardModel::new(sample, cfg)?;
    let n_phases = patterns.spec.n_phases();
    let frames = (0..patterns.frames.len())
        .into_par_iter()
        .map(|idx| {
            let (o, k) = (idx / n_phases, idx % n_phases);
            model.frame(&patterns.frames[idx], o, k)
        })
        .collect::<Result<Vec<_>>>()?;
    RawStack::new(
        AcquisitionManifest {
            pattern: patterns.spec.clone(),
            optics: *cfg,
            provenance: Provenance::Simulated {
                seed: cfg.noise.seed,
            },
        },
        frames,
    )
}
