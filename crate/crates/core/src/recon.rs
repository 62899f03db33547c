//! Structured-illumination reconstruction: component separation, fringe
//! parameter estimation, spectral shifting and generalized Wiener synthesis.

use std::f64::consts::PI;

use nalgebra::{Complex, Matrix3, Vector3};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{
    embed_spectrum, forward_fft, forward_fft_complex, inverse_fft, inverse_fft_complex, Grid,
    Image, Spectrum,
};
use crate::optics::{OpticsConfig, OtfModel};
use crate::patterns::PatternSpec;

/// Mixing matrices with a larger condition number are treated as singular.
pub const MAX_CONDITION: f64 = 1e8;
/// Minimum correlation peak over background.
pub const MIN_PEAK_RATIO: f64 = 3.0;
/// Half width, in bins, of the hinted peak search window.
pub const SEARCH_HALF_WIDTH: i64 = 3;
/// Regularizer of the band weighting used for correlation.
const ESTIMATE_WEIGHT_EPS: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Simulated { seed: u64 },
    Ingested { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionManifest {
    pub pattern: PatternSpec,
    pub optics: OpticsConfig,
    pub provenance: Provenance,
}

/// Raw frames of one acquisition, orientation-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RawStack {
    pub manifest: AcquisitionManifest,
    frames: Vec<Image>,
}

impl RawStack {
    pub fn new(manifest: AcquisitionManifest, frames: Vec<Image>) -> Result<Self> {
        manifest.pattern.validate_recorded()?;
        let expected = manifest.pattern.n_frames();
        if frames.len() != expected {
            return Err(Error::InvalidConfig(format!(
                "stack has {} frames, pattern spec needs {expected}",
                frames.len()
            )));
        }
        let grid = frames[0].grid();
        for f in &frames[1..] {
            grid.check_same(&f.grid(), "stack frames")?;
        }
        Ok(RawStack { manifest, frames })
    }

    pub fn grid(&self) -> Grid {
        self.frames[0].grid()
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn n_orientations(&self) -> usize {
        self.manifest.pattern.n_orientations()
    }

    pub fn n_phases(&self) -> usize {
        self.manifest.pattern.n_phases()
    }

    pub fn frame(&self, orientation: usize, phase: usize) -> &Image {
        &self.frames[orientation * self.n_phases() + phase]
    }

    pub fn orientation(&self, orientation: usize) -> &[Image] {
        let n = self.n_phases();
        &self.frames[orientation * n..(orientation + 1) * n]
    }

    /// Conventional dark-field image: the mean over all frames.
    pub fn conventional(&self) -> Image {
        let mut acc = Image::zeros(self.grid());
        let w = 1.0 / self.frames.len() as f64;
        for f in &self.frames {
            for (a, b) in acc.data_mut().iter_mut().zip(f.data()) {
                *a += w * b;
            }
        }
        acc
    }

    /// Every frame multiplied by `s`.
    pub fn scaled(&self, s: f64) -> RawStack {
        RawStack {
            manifest: self.manifest.clone(),
            frames: self.frames.iter().map(|f| f.scaled(s)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Apodization {
    Triangle,
    RaisedCosine,
    None,
}

impl Apodization {
    pub fn weight(self, rho: f64, extent: f64) -> f64 {
        if extent <= 0.0 {
            return if rho == 0.0 { 1.0 } else { 0.0 };
        }
        let t = rho / extent;
        match self {
            Apodization::Triangle => (1.0 - t).max(0.0),
            Apodization::RaisedCosine => {
                if t >= 1.0 {
                    0.0
                } else {
                    0.5 * (1.0 + (PI * t).cos())
                }
            }
            Apodization::None => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParameterSource {
    /// Fringe vector, zero starting phase and modulation from the manifest.
    Manifest,
    /// Estimated from the data.
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconParams {
    pub wiener_w: f64,
    pub apodization: Apodization,
    pub parameter_source: ParameterSource,
    pub upsample_factor: usize,
    /// When estimating, search around the manifest fringe vector instead of globally.
    pub use_hint: bool,
}

impl Default for ReconParams {
    fn default() -> Self {
        ReconParams {
            wiener_w: 0.05,
            apodization: Apodization::Triangle,
            parameter_source: ParameterSource::Manifest,
            upsample_factor: 2,
            use_hint: true,
        }
    }
}

impl ReconParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.wiener_w > 0.0 && self.wiener_w.is_finite()) {
            return Err(Error::InvalidConfig(format!("wiener_w = {} must be > 0", self.wiener_w)));
        }
        if self.upsample_factor < 1 {
            return Err(Error::InvalidConfig("upsample_factor must be >= 1".into()));
        }
        Ok(())
    }
}

/// Fringe parameters of one orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeParams {
    /// Cycles/um.
    pub p: [f64; 2],
    /// Starting phase offset, radians.
    pub phase: f64,
    pub modulation: f64,
}

/// The three separated bands of one orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub c0: Spectrum,
    pub c_plus: Spectrum,
    pub c_minus: Spectrum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrientationComponents {
    pub bands: Components,
    pub params: FringeParams,
}

/// Per-orientation bands; after [`shift_to_true_positions`] the side bands
/// sit at `g ∓ p` relative to their separated positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSet {
    pub grid: Grid,
    pub orientations: Vec<OrientationComponents>,
    pub shifted: bool,
}

fn mixing_matrix(phases: &[f64; 3]) -> Matrix3<Complex<f64>> {
    Matrix3::from_fn(|k, c| match c {
        0 => Complex::new(1.0, 0.0),
        1 => Complex::from_polar(1.0, phases[k]),
        _ => Complex::from_polar(1.0, -phases[k]),
    })
}

/// 2-norm condition number of the phase-only mixing matrix.
pub fn mixing_condition(phases: &[f64; 3]) -> f64 {
    let sv = mixing_matrix(phases).singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    if lo <= 0.0 || !lo.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Solves `D_k = C0 + (m/2) e^{iφk} C+ + (m/2) e^{−iφk} C−` per bin.
///
/// With `m = 0` the side bands are undefined and returned as zero.
pub fn separate_components(spectra: [&Spectrum; 3], phases_rad: &[f64; 3], m: f64) -> Result<Components> {
    let grid = spectra[0].grid();
    for s in &spectra[1..] {
        grid.check_same(&s.grid(), "phase frames")?;
    }
    let cond = mixing_condition(phases_rad);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::SingularPhases(cond));
    }
    let inv = mixing_matrix(phases_rad)
        .try_inverse()
        .ok_or(Error::SingularPhases(f64::INFINITY))?;
    let side = if m > 0.0 { 2.0 / m } else { 0.0 };
    let n = grid.len();
    let mut c0 = Vec::with_capacity(n);
    let mut cp = Vec::with_capacity(n);
    let mut cm = Vec::with_capacity(n);
    for i in 0..n {
        let d = Vector3::new(spectra[0].data()[i], spectra[1].data()[i], spectra[2].data()[i]);
        let a = inv * d;
        c0.push(a[0]);
        cp.push(a[1] * side);
        cm.push(a[2] * side);
    }
    Ok(Components {
        c0: Spectrum::from_vec(grid, c0)?,
        c_plus: Spectrum::from_vec(grid, cp)?,
        c_minus: Spectrum::from_vec(grid, cm)?,
    })
}

fn shift_unchecked(c: &Spectrum, v: [f64; 2]) -> Spectrum {
    let grid = c.grid();
    let mut field = inverse_fft_complex(c);
    field.par_chunks_mut(grid.width).enumerate().for_each(|(j, row)| {
        let y = grid.y_um(j);
        for (i, z) in row.iter_mut().enumerate() {
            *z *= Complex64::from_polar(1.0, 2.0 * PI * (v[0] * grid.x_um(i) + v[1] * y));
        }
    });
    forward_fft_complex(grid, &field)
}

/// Returns `C(g − v)`: the spectrum translated by `v` cycles/um.
///
/// `support` is the radius of the nonzero content of `c`; the translated
/// content must stay inside the grid's Nyquist band.
pub fn shift_component(c: &Spectrum, v: [f64; 2], support: f64) -> Result<Spectrum> {
    let grid = c.grid();
    let reach = v[0].hypot(v[1]) + support;
    if reach > grid.nyquist() {
        return Err(Error::SupportOverflow(format!(
            "|shift| + support = {reach:.6} cycles/um exceeds Nyquist {:.6}",
            grid.nyquist()
        )));
    }
    Ok(shift_unchecked(c, v))
}

/// Analytic OTF sampled at `g + offset` on every bin of `grid`.
fn otf_table(grid: Grid, otf: &OtfModel, offset: [f64; 2]) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    out.par_chunks_mut(grid.width).enumerate().for_each(|(ky, row)| {
        let fy = grid.freq_y(ky) + offset[1];
        for (kx, v) in row.iter_mut().enumerate() {
            *v = otf.value((grid.freq_x(kx) + offset[0]).hypot(fy));
        }
    });
    out
}

struct CorrelationMap {
    grid: Grid,
    z: Vec<Complex64>,
    map: Vec<f64>,
}

impl CorrelationMap {
    /// `Σ_g conj(a(g)) b(g + q)` via the real-space product.
    fn new(a: &Spectrum, b: &Spectrum) -> Self {
        let grid = a.grid();
        let ra = inverse_fft_complex(a);
        let rb = inverse_fft_complex(b);
        let z: Vec<Complex64> = ra.iter().zip(&rb).map(|(x, y)| x.conj() * y).collect();
        let scale = (grid.len() as f64).sqrt();
        let spec = forward_fft_complex(grid, &z);
        let map = spec.data().iter().map(|v| v.norm() * scale).collect();
        CorrelationMap { grid, z, map }
    }

    fn at(&self, kx: i64, ky: i64) -> f64 {
        let (cx, cy) = self.grid.center();
        let (ix, iy) = (kx + cx as i64, ky + cy as i64);
        if ix < 0 || iy < 0 || ix >= self.grid.width as i64 || iy >= self.grid.height as i64 {
            return 0.0;
        }
        self.map[iy as usize * self.grid.width + ix as usize]
    }

    /// Magnitude of the correlation at continuous lag `q` (cycles/um).
    fn evaluate(&self, q: [f64; 2]) -> f64 {
        let g = self.grid;
        let ex: Vec<Complex64> = (0..g.width)
            .map(|i| Complex64::from_polar(1.0, -2.0 * PI * q[0] * g.x_um(i)))
            .collect();
        let acc: Complex64 = self
            .z
            .par_chunks(g.width)
            .enumerate()
            .map(|(j, row)| {
                let s: Complex64 = row.iter().zip(&ex).map(|(v, e)| v * e).sum();
                s * Complex64::from_polar(1.0, -2.0 * PI * q[1] * g.y_um(j))
            })
            .reduce(|| Complex64::new(0.0, 0.0), |a, b| a + b);
        acc.norm()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

/// Vertex of a 1-D parabola through three equally spaced samples.
fn parabola_offset(l: f64, c: f64, r: f64) -> f64 {
    let den = l - 2.0 * c + r;
    if den >= 0.0 {
        return 0.0;
    }
    (0.5 * (l - r) / den).clamp(-0.5, 0.5)
}

/// Locates the fringe vector, starting phase and modulation from the
/// cross-correlation of `C0` with `C+`.
///
/// `m_assumed` is the modulation used during separation; the returned
/// modulation is in absolute units.
pub fn estimate_fringe_params(
    c0: &Spectrum,
    c_plus: &Spectrum,
    otf: &OtfModel,
    p_hint: Option<[f64; 2]>,
    m_assumed: f64,
) -> Result<FringeParams> {
    let grid = c0.grid();
    grid.check_same(&c_plus.grid(), "estimation bands")?;
    if !(m_assumed > 0.0) {
        return Err(Error::NoPeak("assumed modulation is zero".into()));
    }
    let e0 = c0.energy();
    let ep = c_plus.energy();
    if !(ep > 1e-12 * e0) || e0 == 0.0 {
        return Err(Error::NoPeak(format!(
            "side band energy {ep:.3e} negligible against {e0:.3e}"
        )));
    }
    let rc = otf.cutoff();
    let h0 = otf_table(grid, otf, [0.0, 0.0]);
    let weight = |h: f64| h / (h * h + ESTIMATE_WEIGHT_EPS);
    let weighted = |s: &Spectrum| {
        let data = s.data().iter().zip(&h0).map(|(v, &h)| v * weight(h)).collect();
        Spectrum::from_vec(grid, data).expect("same grid")
    };
    let corr = CorrelationMap::new(&weighted(c0), &weighted(c_plus));

    let (dfx, dfy) = (grid.freq_step_x(), grid.freq_step_y());
    let (cx, cy) = grid.center();
    let lag = |kx: i64, ky: i64| (kx as f64 * dfx).hypot(ky as f64 * dfy);
    let exclusion = (0.1 * rc).max(2.0 * dfx.max(dfy));
    let in_domain = |kx: i64, ky: i64| {
        let r = lag(kx, ky);
        r >= exclusion && r <= 2.0 * rc
    };
    let half_w = cx as i64;
    let half_h = cy as i64;
    let mut background = Vec::new();
    for ky in -half_h..half_h {
        for kx in -half_w..half_w {
            if in_domain(kx, ky) {
                background.push(corr.at(kx, ky));
            }
        }
    }
    let candidates: Vec<(i64, i64)> = match p_hint {
        Some(h) => {
            let (hx, hy) = ((h[0] / dfx).round() as i64, (h[1] / dfy).round() as i64);
            let mut v = Vec::new();
            for ky in hy - SEARCH_HALF_WIDTH..=hy + SEARCH_HALF_WIDTH {
                for kx in hx - SEARCH_HALF_WIDTH..=hx + SEARCH_HALF_WIDTH {
                    if kx.abs() < half_w && ky.abs() < half_h && lag(kx, ky) > 0.0 {
                        v.push((kx, ky));
                    }
                }
            }
            v
        }
        None => (-half_h..half_h)
            .flat_map(|ky| (-half_w..half_w).map(move |kx| (kx, ky)))
            .filter(|&(kx, ky)| in_domain(kx, ky))
            .collect(),
    };
    // Strict improvement, or an exact tie at a lower frequency.
    let mut best: Option<(i64, i64, f64)> = None;
    for (kx, ky) in candidates {
        let v = corr.at(kx, ky);
        let better = match best {
            None => true,
            Some((bx, by, bv)) => v > bv || (v == bv && lag(kx, ky) < lag(bx, by)),
        };
        if better {
            best = Some((kx, ky, v));
        }
    }
    let (bx, by, peak) = best.ok_or_else(|| Error::NoPeak("empty search window".into()))?;
    let bg = median(background);
    if !(peak >= MIN_PEAK_RATIO * bg) || peak == 0.0 {
        return Err(Error::NoPeak(format!(
            "peak/background = {:.3} below {MIN_PEAK_RATIO}",
            peak / bg
        )));
    }

    // Quadratic start, then direct refinement of the continuous correlation.
    let ox = parabola_offset(corr.at(bx - 1, by), peak, corr.at(bx + 1, by));
    let oy = parabola_offset(corr.at(bx, by - 1), peak, corr.at(bx, by + 1));
    let mut q = [(bx as f64 + ox) * dfx, (by as f64 + oy) * dfy];
    let mut val = corr.evaluate(q);
    let mut step = 0.25;
    while step > 1e-4 {
        let mut moved = false;
        for (sx, sy) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)] {
            let t = [q[0] + sx * step * dfx, q[1] + sy * step * dfy];
            let v = corr.evaluate(t);
            if v > val {
                q = t;
                val = v;
                moved = true;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }

    // Complex amplitude of C+ relative to the prediction from C0.
    let s_plus = shift_unchecked(c_plus, [-q[0], -q[1]]);
    let hp = otf_table(grid, otf, q);
    let mut num = Complex64::new(0.0, 0.0);
    let mut den = 0.0;
    for i in 0..grid.len() {
        if h0[i] <= 0.0 || hp[i] <= 0.0 {
            continue;
        }
        let pred = c0.data()[i] * hp[i];
        num += pred.conj() * s_plus.data()[i] * h0[i];
        den += pred.norm_sqr();
    }
    if den == 0.0 {
        return Err(Error::NoPeak("bands do not overlap at the estimated fringe vector".into()));
    }
    let c = num / den;
    let modulation = m_assumed * c.norm();
    if !(modulation > 1e-6 * m_assumed) {
        return Err(Error::NoPeak(format!("estimated modulation {modulation:.3e} is negligible")));
    }
    Ok(FringeParams {
        p: q,
        phase: c.arg(),
        modulation,
    })
}

/// Separates every orientation of a stack and resolves its fringe parameters.
pub fn separate_stack(stack: &RawStack, params: &ReconParams) -> Result<ComponentSet> {
    params.validate()?;
    let spec = &stack.manifest.pattern;
    if spec.n_phases() != 3 {
        return Err(Error::PartialProtocol(format!(
            "{} phases per orientation; exactly 3 are supported",
            spec.n_phases()
        )));
    }
    let phases: [f64; 3] = [
        spec.phases_deg[0].to_radians(),
        spec.phases_deg[1].to_radians(),
        spec.phases_deg[2].to_radians(),
    ];
    let otf = stack.manifest.optics.detection_otf();
    let up = stack.grid().upsampled(params.upsample_factor);
    let m = spec.modulation;
    let orientations = (0..stack.n_orientations())
        .into_par_iter()
        .map(|o| {
            let spectra: Vec<Spectrum> = stack.orientation(o).iter().map(forward_fft).collect();
            let bands = separate_components([&spectra[0], &spectra[1], &spectra[2]], &phases, m)
                .map_err(Error::in_stage("separate"))?;
            let embed = |s: &Spectrum| embed_spectrum(s, params.upsample_factor);
            let mut bands = Components {
                c0: embed(&bands.c0),
                c_plus: embed(&bands.c_plus),
                c_minus: embed(&bands.c_minus),
            };
            debug_assert_eq!(bands.c0.grid(), up);
            let manifest_p = spec.p_vector(spec.orientations_deg[o])?;
            let fp = match params.parameter_source {
                ParameterSource::Manifest => FringeParams {
                    p: if m > 0.0 { manifest_p } else { [0.0, 0.0] },
                    phase: 0.0,
                    modulation: m,
                },
                ParameterSource::Estimate => {
                    let hint = params.use_hint.then_some(manifest_p);
                    let fp = estimate_fringe_params(&bands.c0, &bands.c_plus, &otf, hint, m)
                        .map_err(Error::in_stage("estimate"))?;
                    let k = Complex64::from_polar(m / fp.modulation, -fp.phase);
                    bands.c_plus = bands.c_plus.scaled(k);
                    bands.c_minus = bands.c_minus.scaled(k.conj());
                    fp
                }
            };
            Ok(OrientationComponents { bands, params: fp })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComponentSet {
        grid: up,
        orientations,
        shifted: false,
    })
}

/// Moves each side band to its true spectral position.
pub fn shift_to_true_positions(set: ComponentSet, otf: &OtfModel) -> Result<ComponentSet> {
    if set.shifted {
        return Ok(set);
    }
    let rc = otf.cutoff();
    let orientations = set
        .orientations
        .into_par_iter()
        .map(|oc| {
            let p = oc.params.p;
            let bands = Components {
                c_plus: shift_component(&oc.bands.c_plus, [-p[0], -p[1]], rc)?,
                c_minus: shift_component(&oc.bands.c_minus, p, rc)?,
                c0: oc.bands.c0,
            };
            Ok(OrientationComponents { bands, params: oc.params })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComponentSet {
        grid: set.grid,
        orientations,
        shifted: true,
    })
}

/// Extended support radius `ρc + max |p|`.
pub fn extended_cutoff(set: &ComponentSet, otf: &OtfModel) -> f64 {
    let pmax = set
        .orientations
        .iter()
        .filter(|o| o.params.modulation > 0.0)
        .map(|o| o.params.p[0].hypot(o.params.p[1]))
        .fold(0.0, f64::max);
    otf.cutoff() + pmax
}

/// `S = Σ_d H_d C_d / (Σ_d H_d² + w²)`, apodized to the extended cutoff.
///
/// `H_d` is the detection OTF translated with its band; unmodulated
/// orientations contribute their center band only.
pub fn wiener_combine(set: &ComponentSet, otf: &OtfModel, params: &ReconParams) -> Result<Spectrum> {
    params.validate()?;
    if !set.shifted {
        return Err(Error::InvalidConfig("components must be shifted before synthesis".into()));
    }
    let grid = set.grid;
    let w2 = params.wiener_w * params.wiener_w;
    let extent = extended_cutoff(set, otf);
    let mut num = vec![Complex64::new(0.0, 0.0); grid.len()];
    let mut den = vec![0.0; grid.len()];
    // Fixed orientation order keeps the reduction deterministic.
    for oc in &set.orientations {
        let p = oc.params.p;
        let mut bands: Vec<(&Spectrum, [f64; 2])> = vec![(&oc.bands.c0, [0.0, 0.0])];
        if oc.params.modulation > 0.0 {
            bands.push((&oc.bands.c_plus, p));
            bands.push((&oc.bands.c_minus, [-p[0], -p[1]]));
        }
        for (s, offset) in bands {
            grid.check_same(&s.grid(), "component")?;
            let h = otf_table(grid, otf, offset);
            num.par_iter_mut()
                .zip(den.par_iter_mut())
                .zip(s.data().par_iter().zip(&h))
                .for_each(|((n, d), (c, &hv))| {
                    if hv > 0.0 {
                        *n += c * hv;
                        *d += hv * hv;
                    }
                });
        }
    }
    let data = num
        .iter()
        .zip(&den)
        .enumerate()
        .map(|(i, (n, d))| {
            let (kx, ky) = (i % grid.width, i / grid.width);
            let rho = grid.freq_x(kx).hypot(grid.freq_y(ky));
            n / (d + w2) * params.apodization.weight(rho, extent)
        })
        .collect();
    Spectrum::from_vec(grid, data)
}

/// Result of the full pipeline.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub image: Image,
    pub spectrum: Spectrum,
    pub params: Vec<FringeParams>,
    pub extended_cutoff: f64,
}

pub fn reconstruct_detailed(stack: &RawStack, params: &ReconParams) -> Result<Reconstruction> {
    let otf = stack.manifest.optics.detection_otf();
    let set = separate_stack(stack, params)?;
    let set = shift_to_true_positions(set, &otf).map_err(Error::in_stage("shift"))?;
    let spectrum = wiener_combine(&set, &otf, params).map_err(Error::in_stage("synthesis"))?;
    let image = inverse_fft(&spectrum)
        .map_err(Error::in_stage("inverse transform"))?
        .clamp_nonnegative();
    Ok(Reconstruction {
        image,
        extended_cutoff: extended_cutoff(&set, &otf),
        params: set.orientations.iter().map(|o| o.params).collect(),
        spectrum,
    })
}

/// Enhanced image on the upsampled grid.
pub fn reconstruct(stack: &RawStack, params: &ReconParams) -> Result<Image> {
    Ok(reconstruct_detailed(stack, params)?.image)
}

/// Wiener-deconvolved conventional image on the same upsampled grid, for comparison.
pub fn wiener_conventional(stack: &RawStack, params: &ReconParams) -> Result<Image> {
    params.validate()?;
    let otf = stack.manifest.optics.detection_otf();
    let spec = embed_spectrum(&forward_fft(&stack.conventional()), params.upsample_factor);
    let grid = spec.grid();
    let h = otf_table(grid, &otf, [0.0, 0.0]);
    let w2 = params.wiener_w * params.wiener_w;
    let rc = otf.cutoff();
    let data = spec
        .data()
        .iter()
        .zip(&h)
        .enumerate()
        .map(|(i, (c, &hv))| {
            let rho = grid.freq_x(i % grid.width).hypot(grid.freq_y(i / grid.width));
            c * hv / (hv * hv + w2) * params.apodization.weight(rho, rc)
        })
        .collect();
    Ok(inverse_fft(&Spectrum::from_vec(grid, data)?)?.clamp_nonnegative())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::{simulate_stack, NoiseSpec, SampleStack};
    use crate::patterns::make_pattern_set;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spectrum(grid: Grid, seed: u64) -> Spectrum {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..grid.len())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        Spectrum::from_vec(grid, data).unwrap()
    }

    fn max_rel_diff(a: &Spectrum, b: &Spectrum) -> f64 {
        let scale = a.data().iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
            / scale
    }

    fn compose(c: &Components, phases: &[f64; 3], m: f64) -> Vec<Spectrum> {
        phases
            .iter()
            .map(|&phi| {
                let kp = Complex64::from_polar(m / 2.0, phi);
                let data = (0..c.c0.grid().len())
                    .map(|i| c.c0.data()[i] + kp * c.c_plus.data()[i] + kp.conj() * c.c_minus.data()[i])
                    .collect();
                Spectrum::from_vec(c.c0.grid(), data).unwrap()
            })
            .collect()
    }

    fn deg3(a: f64, b: f64, c: f64) -> [f64; 3] {
        [a.to_radians(), b.to_radians(), c.to_radians()]
    }

    #[test]
    fn identical_frames_have_no_side_bands() {
        let g = Grid::new(16, 16, 0.1).unwrap();
        let s = random_spectrum(g, 1);
        let c = separate_components([&s, &s, &s], &deg3(0.0, 120.0, 240.0), 1.0).unwrap();
        assert!(max_rel_diff(&s, &c.c0) < 1e-12);
        assert!(c.c_plus.data().iter().all(|v| v.norm() < 1e-12));
        assert!(c.c_minus.data().iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn compose_then_separate_round_trip() {
        let g = Grid::new(32, 16, 0.1).unwrap();
        let truth = Components {
            c0: random_spectrum(g, 2),
            c_plus: random_spectrum(g, 3),
            c_minus: random_spectrum(g, 4),
        };
        for (phases, m) in [
            (deg3(0.0, 120.0, 240.0), 1.0),
            (deg3(10.0, 100.0, 200.0), 0.6),
            (deg3(0.0, 90.0, 180.0), 0.8),
        ] {
            assert!(mixing_condition(&phases) < 10.0);
            let d = compose(&truth, &phases, m);
            let c = separate_components([&d[0], &d[1], &d[2]], &phases, m).unwrap();
            assert!(max_rel_diff(&truth.c0, &c.c0) < 1e-9);
            assert!(max_rel_diff(&truth.c_plus, &c.c_plus) < 1e-9);
            assert!(max_rel_diff(&truth.c_minus, &c.c_minus) < 1e-9);
        }
    }

    #[test]
    fn equally_spaced_phases_are_perfectly_conditioned() {
        assert!((mixing_condition(&deg3(0.0, 120.0, 240.0)) - 1.0).abs() < 1e-12);
        assert!(mixing_condition(&deg3(0.0, 60.0, 120.0)) > 1.5);
    }

    #[test]
    fn repeated_phase_is_singular() {
        let g = Grid::new(8, 8, 0.1).unwrap();
        let s = random_spectrum(g, 5);
        let r = separate_components([&s, &s, &s], &deg3(0.0, 0.0, 240.0), 1.0);
        assert!(matches!(r, Err(Error::SingularPhases(_))));
    }

    #[test]
    fn real_frames_give_conjugate_side_bands() {
        let g = Grid::new(32, 32, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let frames: Vec<Spectrum> = (0..3)
            .map(|_| {
                let d = (0..g.len()).map(|_| rng.random_range(0.0..1.0)).collect();
                forward_fft(&Image::from_vec(g, d).unwrap())
            })
            .collect();
        let c = separate_components([&frames[0], &frames[1], &frames[2]], &deg3(0.0, 120.0, 240.0), 0.7)
            .unwrap();
        let (cx, cy) = g.center();
        let scale = c.c_plus.data().iter().map(|v| v.norm()).fold(0.0, f64::max);
        for ky in 1..g.height {
            for kx in 1..g.width {
                let mirror = c.c_plus.get(2 * cx - kx, 2 * cy - ky).conj();
                assert!((c.c_minus.get(kx, ky) - mirror).norm() < 1e-6 * scale);
            }
        }
    }

    fn band_limited(grid: Grid, radius: f64, seed: u64) -> Spectrum {
        let mut s = random_spectrum(grid, seed);
        for ky in 0..grid.height {
            for kx in 0..grid.width {
                if grid.freq_x(kx).hypot(grid.freq_y(ky)) >= radius {
                    s.data_mut()[ky * grid.width + kx] = Complex64::new(0.0, 0.0);
                }
            }
        }
        s
    }

    #[test]
    fn zero_shift_is_identity() {
        let g = Grid::new(64, 64, 0.1).unwrap();
        let s = band_limited(g, 1.0, 6);
        let out = shift_component(&s, [0.0, 0.0], 1.0).unwrap();
        assert!(max_rel_diff(&s, &out) < 1e-9);
    }

    #[test]
    fn integer_shift_is_index_translation() {
        let g = Grid::new(64, 64, 0.1).unwrap();
        let s = band_limited(g, 1.0, 7);
        let (bx, by) = (5i64, -3i64);
        let v = [bx as f64 * g.freq_step_x(), by as f64 * g.freq_step_y()];
        let out = shift_component(&s, v, 1.0).unwrap();
        let scale = s.data().iter().map(|v| v.norm()).fold(0.0, f64::max);
        for ky in 0..64i64 {
            for kx in 0..64i64 {
                let (sx, sy) = (kx - bx, ky - by);
                let expected = if (0..64).contains(&sx) && (0..64).contains(&sy) {
                    s.get(sx as usize, sy as usize)
                } else {
                    Complex64::new(0.0, 0.0)
                };
                assert!((out.get(kx as usize, ky as usize) - expected).norm() < 1e-9 * scale);
            }
        }
    }

    #[test]
    fn subpixel_shift_round_trip_and_energy() {
        let g = Grid::new(64, 64, 0.1).unwrap();
        let s = band_limited(g, 1.0, 8);
        let v = [0.737, -0.411];
        let fwd = shift_component(&s, v, 1.0).unwrap();
        assert!((fwd.energy() - s.energy()).abs() < 1e-6 * s.energy());
        let back = shift_component(&fwd, [-v[0], -v[1]], 1.0).unwrap();
        assert!(max_rel_diff(&s, &back) < 1e-7);
    }

    #[test]
    fn shift_past_nyquist_overflows() {
        let g = Grid::new(64, 64, 0.1).unwrap();
        let s = band_limited(g, 1.0, 8);
        assert!(matches!(
            shift_component(&s, [4.5, 0.0], 1.0),
            Err(Error::SupportOverflow(_))
        ));
    }

    fn textured(grid: Grid, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dots: Vec<(f64, f64, f64)> = (0..60)
            .map(|_| (rng.random_range(-3.5..3.5), rng.random_range(-3.5..3.5), rng.random_range(0.3..1.0)))
            .collect();
        Image::from_fn(grid, move |x, y| {
            dots.iter()
                .map(|&(dx, dy, a)| a * (-((x - dx).powi(2) + (y - dy).powi(2)) / 0.02).exp())
                .sum()
        })
    }

    fn sim(spec: &PatternSpec, sample: &Image, optics: OpticsConfig) -> RawStack {
        let set = make_pattern_set(spec, sample.grid()).unwrap();
        simulate_stack(&SampleStack::in_focus(sample.clone()).unwrap(), &set, &optics).unwrap()
    }

    fn grid128() -> Grid {
        Grid::new(128, 128, 0.1).unwrap()
    }

    #[test]
    fn estimates_fringe_vector_and_phase() {
        let g = grid128();
        let sample = textured(g, 11);
        let mut spec = PatternSpec::protocol_at_frequency(1.2);
        spec.orientations_deg = vec![0.0];
        let stack = sim(&spec, &sample, OpticsConfig::default());
        let params = ReconParams {
            parameter_source: ParameterSource::Estimate,
            ..Default::default()
        };
        for use_hint in [true, false] {
            let set = separate_stack(&stack, &ReconParams { use_hint, ..params }).unwrap();
            let fp = set.orientations[0].params;
            assert!((fp.p[0] - 1.2).abs() < 0.02 && fp.p[1].abs() < 0.02, "{:?}", fp.p);
            assert!(fp.phase.to_degrees().abs() < 2.0);
            assert!((fp.modulation - 1.0).abs() < 0.05, "{}", fp.modulation);
        }

        // Frames acquired 30 degrees later than the manifest claims.
        let mut shifted = spec.clone();
        shifted.phases_deg = vec![30.0, 150.0, 270.0];
        let frames = sim(&shifted, &sample, OpticsConfig::default()).frames().to_vec();
        let stack = RawStack::new(stack.manifest.clone(), frames).unwrap();
        let fp = separate_stack(&stack, &params).unwrap().orientations[0].params;
        assert!((fp.phase.to_degrees() - 30.0).abs() < 2.0, "{}", fp.phase.to_degrees());
    }

    #[test]
    fn unmodulated_stack_has_no_peak() {
        let g = grid128();
        let mut spec = PatternSpec::protocol_at_frequency(1.2);
        spec.modulation = 0.0;
        let stack = sim(&spec, &textured(g, 12), OpticsConfig::default());
        let mut with_m = stack.manifest.clone();
        with_m.pattern.modulation = 1.0;
        let stack = RawStack::new(with_m, stack.frames().to_vec()).unwrap();
        let err = reconstruct(
            &stack,
            &ReconParams {
                parameter_source: ParameterSource::Estimate,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err.root(), Error::NoPeak(_)), "{err}");
        assert!(matches!(err, Error::Stage { stage: "estimate", .. }));
    }

    #[test]
    fn four_phase_stack_is_partial_protocol() {
        let g = Grid::new(64, 64, 0.1).unwrap();
        let mut spec = PatternSpec::protocol_at_frequency(1.0);
        spec.phases_deg = vec![0.0, 90.0, 180.0, 270.0];
        let stack = sim(&spec, &textured(g, 13), OpticsConfig::default());
        assert!(matches!(
            reconstruct(&stack, &ReconParams::default()),
            Err(Error::PartialProtocol(_))
        ));
    }

    #[test]
    fn degenerate_protocol_is_wiener_deconvolution() {
        let g = grid128();
        let mut spec = PatternSpec::protocol_at_frequency(1.0);
        spec.orientations_deg = vec![0.0];
        spec.modulation = 0.0;
        let stack = sim(&spec, &textured(g, 14), OpticsConfig::default());
        let p = ReconParams::default();
        let a = reconstruct(&stack, &p).unwrap();
        let b = wiener_conventional(&stack, &p).unwrap();
        let scale = b.max();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-9 * scale);
        }
    }

    #[test]
    fn synthesized_spectrum_is_hermitian() {
        let g = grid128();
        let spec = PatternSpec::protocol_at_frequency(1.25);
        let stack = sim(&spec, &textured(g, 15), OpticsConfig::default());
        let r = reconstruct_detailed(&stack, &ReconParams::default()).unwrap();
        let s = &r.spectrum;
        let up = s.grid();
        let (cx, cy) = up.center();
        let scale = s.dc().norm();
        for ky in 1..up.height {
            for kx in 1..up.width {
                let m = s.get(2 * cx - kx, 2 * cy - ky).conj();
                assert!((s.get(kx, ky) - m).norm() < 1e-6 * scale);
            }
        }
        assert_eq!(r.image.grid(), g.upsampled(2));
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 4, ..ProptestConfig::default() })]

        #[test]
        fn permuting_orientations_preserves_output(seed in 0u64..1000, rot in 1usize..4) {
            let g = Grid::new(64, 64, 0.1).unwrap();
            let spec = PatternSpec::protocol_at_frequency(1.1);
            let sample = textured(g, seed);
            let stack = sim(&spec, &sample, OpticsConfig::default());
            let mut order: Vec<usize> = (0..4).collect();
            order.rotate_left(rot);
            let mut pspec = spec.clone();
            pspec.orientations_deg = order.iter().map(|&o| spec.orientations_deg[o]).collect();
            let frames = order.iter().flat_map(|&o| stack.orientation(o).to_vec()).collect();
            let mut manifest = stack.manifest.clone();
            manifest.pattern = pspec;
            let permuted = RawStack::new(manifest, frames).unwrap();
            let a = reconstruct(&stack, &ReconParams::default()).unwrap();
            let b = reconstruct(&permuted, &ReconParams::default()).unwrap();
            let scale = a.max();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn output_is_homogeneous_in_frame_scale(seed in 0u64..1000, s in 0.1f64..20.0) {
            let g = Grid::new(64, 64, 0.1).unwrap();
            let spec = PatternSpec::protocol_at_frequency(1.1);
            let stack = sim(&spec, &textured(g, seed), OpticsConfig {
                noise: NoiseSpec { read_noise_sigma: 0.0, photon_scale: 0.0, seed },
                ..OpticsConfig::default()
            });
            let a = reconstruct(&stack, &ReconParams::default()).unwrap();
            let b = reconstruct(&stack.scaled(s), &ReconParams::default()).unwrap();
            let scale = a.max() * s;
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x * s - y).abs() <= 1e-9 * scale);
            }
        }
    }
}
