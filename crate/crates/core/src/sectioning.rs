//! Optical sectioning from three phase-shifted frames.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::Image;
use crate::recon::RawStack;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    /// One orientation only.
    Single,
    #[default]
    Mean,
    Max,
}

impl std::fmt::Display for CombineMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CombineMode::Single => "single",
            CombineMode::Mean => "mean",
            CombineMode::Max => "max",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionedImage {
    pub data: Image,
    pub orientations: Vec<usize>,
    pub combine_mode: CombineMode,
}

/// `sqrt((I1 − I2)² + (I2 − I3)² + (I3 − I1)²)` per pixel.
pub fn section_three(i1: &Image, i2: &Image, i3: &Image) -> Result<Image> {
    let grid = i1.grid();
    grid.check_same(&i2.grid(), "sectioning frames")?;
    grid.check_same(&i3.grid(), "sectioning frames")?;
    let data = i1
        .data()
        .par_iter()
        .zip(i2.data())
        .zip(i3.data())
        .map(|((&a, &b), &c)| ((a - b).powi(2) + (b - c).powi(2) + (c - a).powi(2)).sqrt())
        .collect();
    Image::from_vec(grid, data)
}

/// Sections every orientation and combines them. `orientation` selects the
/// frame set for [`CombineMode::Single`] (default 0) and is ignored otherwise.
pub fn section_stack(stack: &RawStack, mode: CombineMode, orientation: Option<usize>) -> Result<SectionedImage> {
    if stack.n_phases() != 3 {
        return Err(Error::PartialProtocol(format!(
            "{} phases per orientation; sectioning needs exactly 3",
            stack.n_phases()
        )));
    }
    let n = stack.n_orientations();
    let selected: Vec<usize> = match mode {
        CombineMode::Single => {
            let o = orientation.unwrap_or(0);
            if o >= n {
                return Err(Error::InvalidConfig(format!("orientation {o} out of range (stack has {n})")));
            }
            vec![o]
        }
        _ => (0..n).collect(),
    };
    let sections = selected
        .iter()
        .map(|&o| {
            let f = stack.orientation(o);
            section_three(&f[0], &f[1], &f[2])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = sections[0].clone();
    match mode {
        CombineMode::Single => {}
        CombineMode::Mean => {
            let w = 1.0 / sections.len() as f64;
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v = sections.iter().map(|s| s.data()[i]).sum::<f64>() * w;
            }
        }
        CombineMode::Max => {
            for s in &sections[1..] {
                for (a, b) in out.data_mut().iter_mut().zip(s.data()) {
                    *a = a.max(*b);
                }
            }
        }
    }
    Ok(SectionedImage {
        data: out,
        orientations: selected,
        combine_mode: mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::Grid;
    use crate::optics::OpticsConfig;
    use crate::patterns::PatternSpec;
    use crate::recon::{AcquisitionManifest, Provenance};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid() -> Grid {
        Grid::new(8, 8, 0.1).unwrap()
    }

    fn img(vals: Vec<f64>) -> Image {
        Image::from_vec(grid(), vals).unwrap()
    }

    fn uniform(v: f64) -> Image {
        Image::constant(grid(), v)
    }

    #[test]
    fn equal_frames_give_zero() {
        let a = Image::from_fn(grid(), |x, y| x * x + y);
        let s = section_three(&a, &a, &a).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ideal_modulation_single_pixel() {
        let s = section_three(&uniform(2.0), &uniform(0.5), &uniform(0.5)).unwrap();
        let expected = 4.5f64.sqrt();
        assert!((s.get(3, 3) - expected).abs() < 1e-15);
        assert!((expected - 3.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!((expected - 2.12132).abs() < 1e-5);
    }

    #[test]
    fn constant_offset_cancels_bitwise() {
        let a = uniform(0.25);
        let b = uniform(1.5);
        let c = uniform(0.75);
        let base = section_three(&a, &b, &c).unwrap();
        let shift = |i: &Image| i.map(|v| v + 3.0);
        let moved = section_three(&shift(&a), &shift(&b), &shift(&c)).unwrap();
        assert_eq!(base, moved);
    }

    #[test]
    fn mismatched_grids_rejected() {
        let other = Image::zeros(Grid::new(16, 8, 0.1).unwrap());
        assert!(matches!(
            section_three(&uniform(1.0), &uniform(1.0), &other),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn amplitude_is_phase_independent() {
        for k in 0..360 {
            let phi = (k as f64).to_radians();
            let (a, m) = (1.7, 0.6);
            let f: Vec<Image> = [0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0]
                .iter()
                .map(|d| uniform(a * (1.0 + m * (phi + d).cos())))
                .collect();
            let s = section_three(&f[0], &f[1], &f[2]).unwrap();
            assert!((s.get(0, 0) - 3.0 / 2f64.sqrt() * a * m).abs() < 1e-9);
        }
    }

    fn stack_of(frames: Vec<Image>, n_orient: usize, n_phase: usize) -> RawStack {
        let mut spec = PatternSpec::protocol_at_frequency(1.0);
        spec.orientations_deg = (0..n_orient).map(|o| 45.0 * o as f64).collect();
        spec.phases_deg = (0..n_phase).map(|k| 360.0 * k as f64 / n_phase as f64).collect();
        RawStack::new(
            AcquisitionManifest {
                pattern: spec,
                optics: OpticsConfig::default(),
                provenance: Provenance::Simulated { seed: 0 },
            },
            frames,
        )
        .unwrap()
    }

    fn ramp(seed: f64) -> Image {
        Image::from_fn(grid(), move |x, y| (seed * x + y).sin().abs() + seed)
    }

    #[test]
    fn single_orientation_stack_matches_section_three() {
        let f = vec![ramp(0.1), ramp(0.7), ramp(1.3)];
        let s = section_stack(&stack_of(f.clone(), 1, 3), CombineMode::Mean, None).unwrap();
        assert_eq!(s.data, section_three(&f[0], &f[1], &f[2]).unwrap());
        assert_eq!(s.orientations, vec![0]);
    }

    #[test]
    fn combine_modes() {
        let frames: Vec<Image> = (0..6).map(|k| ramp(0.3 * k as f64)).collect();
        let stack = stack_of(frames.clone(), 2, 3);
        let s0 = section_three(&frames[0], &frames[1], &frames[2]).unwrap();
        let s1 = section_three(&frames[3], &frames[4], &frames[5]).unwrap();
        let mean = section_stack(&stack, CombineMode::Mean, None).unwrap();
        let max = section_stack(&stack, CombineMode::Max, None).unwrap();
        let single = section_stack(&stack, CombineMode::Single, Some(1)).unwrap();
        for i in 0..grid().len() {
            assert!((mean.data.data()[i] - 0.5 * (s0.data()[i] + s1.data()[i])).abs() < 1e-15);
            assert_eq!(max.data.data()[i], s0.data()[i].max(s1.data()[i]));
        }
        assert_eq!(single.data, s1);
        assert_eq!(single.combine_mode, CombineMode::Single);
        assert!(section_stack(&stack, CombineMode::Single, Some(2)).is_err());
    }

    #[test]
    fn zero_stack_gives_zero() {
        let s = section_stack(&stack_of(vec![uniform(0.0); 12], 4, 3), CombineMode::Mean, None).unwrap();
        assert!(s.data.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn four_phases_rejected() {
        let r = section_stack(&stack_of(vec![uniform(1.0); 4], 1, 4), CombineMode::Mean, None);
        assert!(matches!(r, Err(Error::PartialProtocol(_))));
    }

    fn arb_image() -> impl Strategy<Value = Image> {
        prop::collection::vec(0.0f64..100.0, 64).prop_map(img)
    }

    proptest! {
        #[test]
        fn nonnegative_and_zero_iff_equal(a in arb_image(), b in arb_image(), c in arb_image()) {
            let s = section_three(&a, &b, &c).unwrap();
            for i in 0..64 {
                let v = s.data()[i];
                prop_assert!(v >= 0.0);
                let equal = a.data()[i] == b.data()[i] && b.data()[i] == c.data()[i];
                prop_assert_eq!(v == 0.0, equal);
            }
        }

        #[test]
        fn background_invariance(a in arb_image(), b in arb_image(), c in arb_image(), bg in arb_image()) {
            // Equal up to rounding of the additions.
            let add = |x: &Image| x.combine(1.0, &bg, 1.0).unwrap();
            let base = section_three(&a, &b, &c).unwrap();
            let moved = section_three(&add(&a), &add(&b), &add(&c)).unwrap();
            for i in 0..64 {
                prop_assert!((base.data()[i] - moved.data()[i]).abs() <= 1e-11);
            }
        }

        #[test]
        fn permutation_symmetry(a in arb_image(), b in arb_image(), c in arb_image()) {
            let s = section_three(&a, &b, &c).unwrap();
            for perm in [(&b, &a, &c), (&c, &b, &a), (&a, &c, &b), (&b, &c, &a), (&c, &a, &b)] {
                let t = section_three(perm.0, perm.1, perm.2).unwrap();
                for i in 0..64 {
                    prop_assert!((s.data()[i] - t.data()[i]).abs() <= 1e-12 * (1.0 + s.data()[i]));
                }
            }
        }

        #[test]
        fn scale_homogeneity(a in arb_image(), b in arb_image(), c in arb_image(), s in 0.0f64..10.0) {
            let base = section_three(&a, &b, &c).unwrap();
            let sc = section_three(&a.scaled(s), &b.scaled(s), &c.scaled(s)).unwrap();
            for i in 0..64 {
                prop_assert!((base.data()[i] * s - sc.data()[i]).abs() <= 1e-12 * (1.0 + base.data()[i] * s));
            }
        }
    }
}
