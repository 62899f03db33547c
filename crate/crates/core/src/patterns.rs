//! Sinusoidal fringe patterns: parametric spec, DMD-to-sample frequency
//! mapping, and rendering of the orientation x phase set.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{forward_fft, Grid, Image};
use crate::optics::DarkfieldReport;

/// Default acquisition protocol: four orientations, three phases.
pub const PROTOCOL_ORIENTATIONS_DEG: [f64; 4] = [0.0, 45.0, 90.0, 135.0];
pub const PROTOCOL_PHASES_DEG: [f64; 3] = [0.0, 120.0, 240.0];
/// Fringe frequency on the DMD, cycles/mm.
pub const PROTOCOL_FREQ_DMD: f64 = 300.0;

const ANGLE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub orientations_deg: Vec<f64>,
    pub phases_deg: Vec<f64>,
    /// Cycles/mm in the DMD plane.
    pub freq_dmd_per_mm: f64,
    /// Sample-plane size over DMD-plane size.
    pub magnification: f64,
    /// Fringe contrast `m` in [0, 1].
    pub modulation: f64,
    /// Mean illumination level `I0`.
    pub mean_level: f64,
}

impl PatternSpec {
    /// The 4 x 3 protocol at 300 cycles/mm; the magnification has no default.
    pub fn protocol(magnification: f64) -> Self {
        PatternSpec {
            orientations_deg: PROTOCOL_ORIENTATIONS_DEG.to_vec(),
            phases_deg: PROTOCOL_PHASES_DEG.to_vec(),
            freq_dmd_per_mm: PROTOCOL_FREQ_DMD,
            magnification,
            modulation: 1.0,
            mean_level: 1.0,
        }
    }

    /// Protocol spec whose magnification places the sample-plane fringe at `p` cycles/um.
    pub fn protocol_at_frequency(p: f64) -> Self {
        Self::protocol(PROTOCOL_FREQ_DMD / (1000.0 * p))
    }

    pub fn n_orientations(&self) -> usize {
        self.orientations_deg.len()
    }

    pub fn n_phases(&self) -> usize {
        self.phases_deg.len()
    }

    pub fn n_frames(&self) -> usize {
        self.n_orientations() * self.n_phases()
    }

    /// Checks a spec used to generate patterns: at least 3 distinct phases.
    pub fn validate(&self) -> Result<()> {
        self.validate_with_min_phases(3)
    }

    /// Checks a spec recorded with an acquired stack. Any phase count is
    /// accepted here; processing stages enforce the count they support.
    pub fn validate_recorded(&self) -> Result<()> {
        self.validate_with_min_phases(1)
    }

    fn validate_with_min_phases(&self, min_phases: usize) -> Result<()> {
        if self.orientations_deg.is_empty() {
            return Err(Error::InvalidConfig("at least one orientation is required".into()));
        }
        if self.phases_deg.len() < min_phases {
            return Err(Error::InvalidConfig(format!(
                "{} phases given, at least {min_phases} are required",
                self.phases_deg.len()
            )));
        }
        for (i, a) in self.phases_deg.iter().enumerate() {
            for b in &self.phases_deg[i + 1..] {
                let d = (a - b).rem_euclid(360.0);
                if d < ANGLE_EPS || 360.0 - d < ANGLE_EPS {
                    return Err(Error::InvalidConfig(format!(
                        "phases {a} and {b} coincide modulo 360 degrees"
                    )));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.modulation) {
            return Err(Error::InvalidConfig(format!(
                "modulation depth {} outside [0, 1]",
                self.modulation
            )));
        }
        if !(self.mean_level > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "mean level {} must be > 0",
                self.mean_level
            )));
        }
        if !(self.freq_dmd_per_mm >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "DMD frequency {} must be >= 0",
                self.freq_dmd_per_mm
            )));
        }
        dmd_to_sample_frequency(self.freq_dmd_per_mm, self.magnification)?;
        Ok(())
    }

    /// Checks the fringe frequency against what the illumination cone can project.
    pub fn validate_against(&self, report: &DarkfieldReport) -> Result<()> {
        self.validate()?;
        let p = self.sample_frequency()?;
        if p > report.p_max {
            return Err(Error::InvalidConfig(format!(
                "sample-plane fringe frequency {p:.6} cycles/um exceeds p_max {:.6}",
                report.p_max
            )));
        }
        Ok(())
    }

    /// Sample-plane fringe frequency, cycles/um.
    pub fn sample_frequency(&self) -> Result<f64> {
        dmd_to_sample_frequency(self.freq_dmd_per_mm, self.magnification)
    }

    /// Frequency vector `(p cos θ, p sin θ)` for orientation `theta_deg`.
    pub fn p_vector(&self, theta_deg: f64) -> Result<[f64; 2]> {
        let p = self.sample_frequency()?;
        let t = theta_deg.to_radians();
        Ok([p * t.cos(), p * t.sin()])
    }

    pub fn phases_rad(&self) -> Vec<f64> {
        self.phases_deg.iter().map(|d| d.to_radians()).collect()
    }

    fn contains(list: &[f64], v: f64) -> bool {
        list.iter().any(|&a| (a - v).abs() < ANGLE_EPS)
    }
}

/// `p = freq_dmd / (1000 * magnification)`, cycles/mm to cycles/um.
pub fn dmd_to_sample_frequency(freq_dmd_per_mm: f64, magnification: f64) -> Result<f64> {
    if !(magnification.is_finite() && magnification > 0.0) {
        return Err(Error::BadMagnification(magnification));
    }
    Ok(freq_dmd_per_mm / (1000.0 * magnification))
}

/// `I0 (1 + m cos(2π p·r + φ))` with `r` in micrometers from the grid center.
pub fn render_pattern(spec: &PatternSpec, theta_deg: f64, phi_deg: f64, grid: Grid) -> Result<Image> {
    if !PatternSpec::contains(&spec.orientations_deg, theta_deg) {
        return Err(Error::InvalidConfig(format!("orientation {theta_deg} not in pattern spec")));
    }
    if !PatternSpec::contains(&spec.phases_deg, phi_deg) {
        return Err(Error::InvalidConfig(format!("phase {phi_deg} not in pattern spec")));
    }
    let [px, py] = spec.p_vector(theta_deg)?;
    let p = px.hypot(py);
    if px.abs() > grid.nyquist() || py.abs() > grid.nyquist() {
        return Err(Error::FreqAliased {
            freq: p,
            nyquist: grid.nyquist(),
        });
    }
    let (i0, m, phi) = (spec.mean_level, spec.modulation, phi_deg.to_radians());
    Ok(Image::from_fn(grid, move |x, y| {
        i0 * (1.0 + m * (2.0 * PI * (px * x + py * y) + phi).cos())
    }))
}

/// Rendered orientation-major pattern frames.
#[derive(Debug, Clone)]
pub struct PatternSet {
    pub spec: PatternSpec,
    pub grid: Grid,
    /// Index `o * n_phases + k`.
    pub frames: Vec<Image>,
    pub p_vectors: Vec<[f64; 2]>,
}

impl PatternSet {
    pub fn frame(&self, orientation: usize, phase: usize) -> &Image {
        &self.frames[orientation * self.spec.n_phases() + phase]
    }
}

pub fn make_pattern_set(spec: &PatternSpec, grid: Grid) -> Result<PatternSet> {
    spec.validate()?;
    let p_vectors = spec
        .orientations_deg
        .iter()
        .map(|&t| spec.p_vector(t))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(f64, f64)> = spec
        .orientations_deg
        .iter()
        .flat_map(|&t| spec.phases_deg.iter().map(move |&f| (t, f)))
        .collect();
    let frames = pairs
        .par_iter()
        .map(|&(t, f)| render_pattern(spec, t, f, grid))
        .collect::<Result<Vec<_>>>()?;

    if spec.modulation > 0.0 {
        for (o, pv) in p_vectors.iter().enumerate() {
            check_side_peak(&frames[o * spec.n_phases()], *pv)?;
        }
    }
    Ok(PatternSet {
        spec: spec.clone(),
        grid,
        frames,
        p_vectors,
    })
}

/// The strongest non-DC bin must sit within half a bin of `±p_vector`.
fn check_side_peak(frame: &Image, pv: [f64; 2]) -> Result<()> {
    let grid = frame.grid();
    let spec = forward_fft(frame);
    let (cx, cy) = grid.center();
    let mut best = (0usize, 0usize, -1.0f64);
    for ky in 0..grid.height {
        for kx in 0..grid.width {
            if (kx, ky) == (cx, cy) {
                continue;
            }
            let v = spec.get(kx, ky).norm();
            if v > best.2 {
                best = (kx, ky, v);
            }
        }
    }
    let bx = best.0 as f64 - cx as f64;
    let by = best.1 as f64 - cy as f64;
    let tx = pv[0] / grid.freq_step_x();
    let ty = pv[1] / grid.freq_step_y();
    if tx.abs() <= 0.5 && ty.abs() <= 0.5 {
        // Side peaks merge with DC; nothing separate to locate.
        return Ok(());
    }
    let near = |sx: f64, sy: f64| (bx - sx * tx).abs() <= 0.5 + 1e-9 && (by - sy * ty).abs() <= 0.5 + 1e-9;
    if near(1.0, 1.0) || near(-1.0, -1.0) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "pattern side peak at bin ({bx}, {by}) does not match p_vector ({tx:.3}, {ty:.3}) bins"
        )))
    }
}
