//! On-disk manifests for sample and stack directories (TOML, file name `manifest`).

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::raster;
use crate::error::{Error, Result};
use crate::imagecore::{Grid, Image};
use crate::optics::{OpticsConfig, SamplePlane, SampleStack};
use crate::patterns::PatternSpec;
use crate::recon::{AcquisitionManifest, Provenance, RawStack};

pub const MANIFEST_NAME: &str = "manifest";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub width: usize,
    pub height: usize,
    pub pixel_pitch: f64,
}

impl From<Grid> for GridRecord {
    fn from(g: Grid) -> Self {
        GridRecord {
            width: g.width,
            height: g.height,
            pixel_pitch: g.pixel_pitch,
        }
    }
}

impl GridRecord {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.width, self.height, self.pixel_pitch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub orientation: usize,
    pub phase: usize,
    pub file: String,
}

/// Parameters recorded by a command that consumed or produced the stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessingRecord {
    pub command: String,
    pub parameters: toml::Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackManifest {
    pub format_version: u32,
    pub grid: GridRecord,
    pub pattern: PatternSpec,
    pub optics: OpticsConfig,
    pub provenance: Provenance,
    pub frames: Vec<FrameRecord>,
    #[serde(default)]
    pub processing: Vec<ProcessingRecord>,
}

impl StackManifest {
    pub fn frame_file(orientation: usize, phase: usize) -> String {
        format!("frame_o{orientation}_p{phase}.raw")
    }

    pub fn for_stack(stack: &RawStack) -> Self {
        let spec = &stack.manifest.pattern;
        let frames = (0..spec.n_orientations())
            .flat_map(|o| {
                (0..spec.n_phases()).map(move |k| FrameRecord {
                    orientation: o,
                    phase: k,
                    file: Self::frame_file(o, k),
                })
            })
            .collect();
        StackManifest {
            format_version: FORMAT_VERSION,
            grid: stack.grid().into(),
            pattern: spec.clone(),
            optics: stack.manifest.optics,
            provenance: stack.manifest.provenance.clone(),
            frames,
            processing: Vec::new(),
        }
    }

    /// Frame table must cover every (orientation, phase) slot exactly once.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest format_version {}",
                self.format_version
            )));
        }
        self.pattern.validate_recorded()?;
        let (no, np) = (self.pattern.n_orientations(), self.pattern.n_phases());
        let mut seen = HashSet::new();
        for f in &self.frames {
            if f.orientation >= no || f.phase >= np {
                return Err(Error::Format(format!(
                    "frame ({}, {}) outside the {no} x {np} protocol",
                    f.orientation, f.phase
                )));
            }
            if !seen.insert((f.orientation, f.phase)) {
                return Err(Error::Format(format!(
                    "duplicate frame entry ({}, {})",
                    f.orientation, f.phase
                )));
            }
        }
        if seen.len() != no * np {
            return Err(Error::Format(format!(
                "frame table has {} of {} entries",
                seen.len(),
                no * np
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("manifest serialization: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))
    }
}

fn read_manifest_text(dir: &Path) -> Result<String> {
    let path = dir.join(MANIFEST_NAME);
    fs::read_to_string(&path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_stack(dir: &Path, stack: &RawStack) -> Result<StackManifest> {
    fs::create_dir_all(dir)?;
    let manifest = StackManifest::for_stack(stack);
    for f in &manifest.frames {
        raster::write(&dir.join(&f.file), stack.frame(f.orientation, f.phase))?;
    }
    fs::write(dir.join(MANIFEST_NAME), manifest.to_toml()?)?;
    Ok(manifest)
}

pub fn load_stack(dir: &Path) -> Result<(RawStack, StackManifest)> {
    let manifest = StackManifest::from_toml(&read_manifest_text(dir)?)?;
    manifest.validate()?;
    let grid = manifest.grid.grid()?;
    let np = manifest.pattern.n_phases();
    let mut slots: Vec<Option<Image>> = vec![None; manifest.frames.len()];
    for f in &manifest.frames {
        let path = dir.join(&f.file);
        if !path.is_file() {
            return Err(Error::Format(format!("missing frame file {}", path.display())));
        }
        let img = raster::read(&path)?;
        grid.check_same(&img.grid(), "frame vs manifest grid")?;
        slots[f.orientation * np + f.phase] = Some(img);
    }
    let frames = slots.into_iter().map(|s| s.expect("validated table")).collect();
    let stack = RawStack::new(
        AcquisitionManifest {
            pattern: manifest.pattern.clone(),
            optics: manifest.optics,
            provenance: manifest.provenance.clone(),
        },
        frames,
    )?;
    Ok((stack, manifest))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneRecord {
    pub file: String,
    pub defocus_um: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub format_version: u32,
    pub target: String,
    pub grid: GridRecord,
    pub planes: Vec<PlaneRecord>,
    /// Generator parameters, echoed for provenance.
    #[serde(default)]
    pub parameters: toml::Table,
}

pub fn write_sample(dir: &Path, sample: &SampleStack, target: &str, parameters: toml::Table) -> Result<SampleManifest> {
    fs::create_dir_all(dir)?;
    let planes = sample
        .planes()
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let file = format!("plane_{k}.raw");
            raster::write(&dir.join(&file), &p.density)?;
            Ok(PlaneRecord {
                file,
                defocus_um: p.defocus_um,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = SampleManifest {
        format_version: FORMAT_VERSION,
        target: target.to_string(),
        grid: sample.grid().into(),
        planes,
        parameters,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(format!("manifest serialization: {e}")))?;
    fs::write(dir.join(MANIFEST_NAME), text)?;
    Ok(manifest)
}

pub fn load_sample(dir: &Path) -> Result<(SampleStack, SampleManifest)> {
    let manifest: SampleManifest =
        toml::from_str(&read_manifest_text(dir)?).map_err(|e| Error::Format(format!("sample manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported manifest format_version {}",
            manifest.format_version
        )));
    }
    let grid = manifest.grid.grid()?;
    let planes = manifest
        .planes
        .iter()
        .map(|p| {
            let density = raster::read(&dir.join(&p.file))?;
            grid.check_same(&density.grid(), "plane vs manifest grid")?;
            Ok(SamplePlane {
                density,
                defocus_um: p.defocus_um,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((SampleStack::new(planes)?, manifest))
}

/// Copies a manifest next to processing outputs, appending one record.
pub fn write_echo(dir: &Path, input: &StackManifest, record: ProcessingRecord) -> Result<PathBuf> {
    let mut m = input.clone();
    m.processing.push(record);
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, m.to_toml()?)?;
    Ok(path)
}
