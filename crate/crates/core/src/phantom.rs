//! Synthetic contrast-enhanced abdominal phantoms.
//!
//! A phantom is an ellipsoidal liver at `liver_hu + contrast_boost` holding a
//! spherical tumor at `tumor_hu`, on a uniform background, plus seeded
//! Gaussian noise. Noise-free class values are known exactly, which makes
//! phantoms usable as oracles for the statistics and metrics code.

use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::rng::RngStream;
use crate::volume_io::{
    self, HuVolume, SegmentationMask, LABEL_BACKGROUND, LABEL_LIVER, LABEL_TUMOR,
};

/// Liver semi-axes as fractions of the volume extent along x, y, z.
pub const LIVER_SEMI_AXES: [f64; 3] = [0.4, 0.35, 0.4];

const BOOST_STREAM: u64 = 0xB005;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub background_hu: f64,
    pub liver_hu: f64,
    pub tumor_hu: f64,
    /// HU added to healthy liver by contrast enhancement.
    pub contrast_boost: f64,
    pub noise_std: f64,
    /// In voxels.
    pub tumor_radius: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [64, 64, 16],
            spacing: [0.8, 0.8, 2.5],
            background_hu: -100.0,
            liver_hu: 60.0,
            tumor_hu: 40.0,
            contrast_boost: 50.0,
            noise_std: 10.0,
            tumor_radius: 5.0,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    fn centre(&self) -> [f64; 3] {
        self.dims.map(|d| (d as f64 - 1.0) / 2.0)
    }

    fn semi_axes(&self) -> [f64; 3] {
        let mut a = [0.0; 3];
        for i in 0..3 {
            a[i] = LIVER_SEMI_AXES[i] * self.dims[i] as f64;
        }
        a
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::InfeasibleGeometry(format!("dims {:?}", self.dims)));
        }
        let hu = [
            self.background_hu,
            self.liver_hu,
            self.tumor_hu,
            self.contrast_boost,
        ];
        if hu.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("phantom intensities must be finite".into()));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Config(format!(
                "noise_std {} must be >= 0",
                self.noise_std
            )));
        }
        let min_axis = self.semi_axes().into_iter().fold(f64::INFINITY, f64::min);
        if !(self.tumor_radius > 0.0 && self.tumor_radius < min_axis) {
            return Err(Error::InfeasibleGeometry(format!(
                "tumor radius {} must lie in (0, {min_axis}) to fit inside the liver",
                self.tumor_radius
            )));
        }
        Ok(())
    }

    /// Stored (single-precision) noise-free value of each class.
    fn stored(&self) -> [f32; 3] {
        [
            self.background_hu as f32,
            (self.liver_hu + self.contrast_boost) as f32,
            self.tumor_hu as f32,
        ]
    }
}

/// Noise-free class values and voxel counts of a phantom.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub mean_background: f64,
    pub mean_liver: f64,
    pub mean_tumor: f64,
    pub abs_diff: f64,
    pub n_liver: u64,
    pub n_tumor: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub spec: PhantomSpec,
    pub volume: HuVolume,
    pub mask: SegmentationMask,
    pub truth: GroundTruth,
}

/// Label map of the phantom geometry, x-fastest.
fn labels(spec: &PhantomSpec) -> Vec<u8> {
    let [nx, ny, nz] = spec.dims;
    let c = spec.centre();
    let a = spec.semi_axes();
    let r2 = spec.tumor_radius * spec.tumor_radius;
    let mut out = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let d = [x as f64 - c[0], y as f64 - c[1], z as f64 - c[2]];
                let dist2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                let e = (d[0] / a[0]).powi(2) + (d[1] / a[1]).powi(2) + (d[2] / a[2]).powi(2);
                out.push(if dist2 <= r2 {
                    LABEL_TUMOR
                } else if e <= 1.0 {
                    LABEL_LIVER
                } else {
                    LABEL_BACKGROUND
                });
            }
        }
    }
    out
}

pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let labels = labels(spec);
    let n_liver = labels.iter().filter(|&&l| l == LABEL_LIVER).count() as u64;
    let n_tumor = labels.iter().filter(|&&l| l == LABEL_TUMOR).count() as u64;
    if n_liver == 0 || n_tumor == 0 {
        return Err(Error::InfeasibleGeometry(format!(
            "{n_liver} liver and {n_tumor} tumor voxels in a {:?} grid",
            spec.dims
        )));
    }
    let stored = spec.stored();
    let mut voxels: Vec<f32> = labels.iter().map(|&l| stored[l as usize]).collect();
    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = RngStream::new(spec.seed);
        for v in voxels.iter_mut() {
            *v = (*v as f64 + normal.sample(&mut rng)) as f32;
        }
    }
    let volume = HuVolume::new(spec.dims, spec.spacing, voxels, "phantom")?;
    let mask = SegmentationMask::new(spec.dims, labels)?;
    let [b, l, t] = stored.map(f64::from);
    Ok(Phantom {
        spec: spec.clone(),
        volume,
        mask,
        truth: GroundTruth {
            mean_background: b,
            mean_liver: l,
            mean_tumor: t,
            abs_diff: (l - t).abs(),
            n_liver,
            n_tumor,
        },
    })
}

/// Distribution of the contrast boost across a cohort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoostDistribution {
    Constant {
        value: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    /// One boost per phantom, in order.
    Values {
        values: Vec<f64>,
    },
}

impl BoostDistribution {
    /// Draws `n` boosts from a stream derived from `seed`.
    pub fn draw(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        match self {
            BoostDistribution::Constant { value } => Ok(vec![*value; n]),
            BoostDistribution::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && low <= high) {
                    return Err(Error::Config(format!(
                        "boost range [{low}, {high}] is empty"
                    )));
                }
                let mut rng = RngStream::new(seed).derive(BOOST_STREAM);
                Ok((0..n).map(|_| rng.uniform(*low, *high)).collect())
            }
            BoostDistribution::Values { values } => {
                if values.len() != n {
                    return Err(Error::Config(format!(
                        "{} boost values for {n} phantoms",
                        values.len()
                    )));
                }
                Ok(values.clone())
            }
        }
    }
}

pub fn source_id(i: usize) -> String {
    format!("phantom-{i:03}")
}

/// `n` phantoms sharing `base` except for the boost and the noise seed
/// (`seed + i` for phantom `i`).
pub fn generate_cohort(
    n: usize,
    base: &PhantomSpec,
    boosts: &BoostDistribution,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Phantom>> {
    if n == 0 {
        return Err(Error::Config("cohort needs at least one phantom".into()));
    }
    let boosts = boosts.draw(n, seed)?;
    par::map_range(exec, n, |i| {
        let spec = PhantomSpec {
            contrast_boost: boosts[i],
            seed: seed.wrapping_add(i as u64),
            ..base.clone()
        };
        generate(&spec).map(|mut p| {
            p.volume = p.volume.with_source_id(source_id(i));
            p
        })
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortEntry {
    pub source_id: String,
    pub volume: String,
    pub mask: String,
    pub spec: PhantomSpec,
    pub truth: GroundTruth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub boosts: BoostDistribution,
    pub phantoms: Vec<CohortEntry>,
}

pub const COHORT_MANIFEST: &str = "cohort.json";

/// Writes each phantom as `<id>.wsv` and `<id>_seg.wsv` plus `cohort.json`.
pub fn write_cohort(
    phantoms: &[Phantom],
    boosts: &BoostDistribution,
    seed: u64,
    dir: &Path,
) -> Result<CohortManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(phantoms.len());
    for p in phantoms {
        let id = p.volume.source_id().to_string();
        let volume = format!("{id}.wsv");
        let mask = format!("{id}_seg.wsv");
        volume_io::write_volume(&p.volume, &dir.join(&volume))?;
        volume_io::write_mask(&p.mask, &dir.join(&mask))?;
        entries.push(CohortEntry {
            source_id: id,
            volume,
            mask,
            spec: p.spec.clone(),
            truth: p.truth,
        });
    }
    let manifest = CohortManifest {
        schema_version: crate::SCHEMA_VERSION,
        seed,
        boosts: boosts.clone(),
        phantoms: entries,
    };
    let path = dir.join(COHORT_MANIFEST);
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?)
        .map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
