//! Synthetic benchmark datasets rendered by the SAR simulator.
//!
//! A dataset is a directory holding `samples.t3` (every sample as one column
//! of a `d × N × 3` tensor, channels VV, HH, HV) and `manifest.json` (one
//! record per column).

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::ClassRole;
use crate::error::{Error, Result};
use crate::sar::{
    builtin_confusers, builtin_targets, derive_seed, ground_clutter, NoiseModel, ObjectTemplate,
    RenderSettings, POLARIZATIONS,
};
use crate::tensor::Tensor3;

const SAMPLES_FILE: &str = "samples.t3";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Ground,
    /// Ordered view atom of a multi-look view set.
    View,
    /// One look of a multi-look test object.
    Look,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleRole {
    Target,
    Confuser,
    Ground,
}

impl From<ClassRole> for SampleRole {
    fn from(r: ClassRole) -> Self {
        match r {
            ClassRole::Target => SampleRole::Target,
            ClassRole::Confuser => SampleRole::Confuser,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub split: Split,
    /// Object name, or `"ground"`.
    pub class: String,
    pub role: SampleRole,
    pub aspect_deg: f64,
    /// Zero for clean renders.
    pub noise_level: f64,
    pub sector_deg: [f64; 2],
    pub integration_deg: f64,
    /// Name of the view set (views) or look (looks).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set: Option<String>,
    /// Position in the view order (views) or nearest view (looks).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view: Option<usize>,
    /// Groups the looks of one multi-look test object.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_id: Option<usize>,
}

/// Ordered view atoms: view `v` is the object at aspect `v · spacing`
/// formed over `sector_deg`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSetInfo {
    pub name: String,
    pub integration_deg: f64,
    pub sector_deg: [f64; 2],
    pub spacing_deg: f64,
    pub views: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub polarizations: Vec<String>,
    pub rows: usize,
    pub cols: usize,
    pub pixel_spacing: f64,
    pub seed: u64,
    #[serde(default)]
    pub view_sets: Vec<ViewSetInfo>,
    pub samples: Vec<SampleRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    /// `d × N × 3`, one column per record.
    pub data: Tensor3,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.manifest.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.samples.is_empty()
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.manifest.samples
    }

    /// Channel indices of the named polarizations, in the given order.
    pub fn channel_indices<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        if names.is_empty() {
            return Err(Error::Config("empty polarization selection".into()));
        }
        names
            .iter()
            .map(|n| {
                let n = n.as_ref();
                self.manifest
                    .polarizations
                    .iter()
                    .position(|p| p.eq_ignore_ascii_case(n))
                    .ok_or_else(|| Error::Format(format!("dataset has no polarization channel {n}")))
            })
            .collect()
    }

    /// Sample `i` restricted to `channels`, as a `d × 1 × T` signal.
    pub fn sample(&self, i: usize, channels: &[usize]) -> Result<Tensor3> {
        self.data.column(i).pick_channels(channels)
    }

    /// Indices of the records accepted by `pred`, in dataset order.
    pub fn select(&self, pred: impl Fn(&SampleRecord) -> bool) -> Vec<usize> {
        (0..self.len()).filter(|&i| pred(&self.manifest.samples[i])).collect()
    }

    /// Distinct class names of a split, in first-appearance order.
    pub fn class_names(&self, split: Split) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in self.records().iter().filter(|r| r.split == split) {
            if !out.contains(&r.class) {
                out.push(r.class.clone());
            }
        }
        out
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.data.save(dir.join(SAMPLES_FILE))?;
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let data = Tensor3::load(dir.join(SAMPLES_FILE))?;
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        if data.cols() != manifest.samples.len()
            || data.rows() != manifest.rows * manifest.cols
            || data.channels() != manifest.polarizations.len()
        {
            return Err(Error::Format(format!(
                "tensor {:?} does not match manifest ({} samples of {}×{} pixels, {} channels)",
                data.shape(),
                manifest.samples.len(),
                manifest.rows,
                manifest.cols,
                manifest.polarizations.len()
            )));
        }
        Ok(Dataset { manifest, data })
    }
}

/// Clean magnitude image with per-channel gain jitter plus magnitude
/// clutter; `noise = None` gives the clean image `|render|`.
pub fn render_sample(
    settings: &RenderSettings,
    object: &ObjectTemplate,
    aspect_deg: f64,
    sector: (f64, f64),
    noise: Option<&NoiseModel>,
    rng: &mut impl Rng,
) -> Result<Tensor3> {
    let pols: Vec<usize> = (0..POLARIZATIONS.len()).collect();
    let clean = settings.render(object, aspect_deg, sector, &pols)?.map(f64::abs);
    let Some(noise) = noise else {
        return Ok(clean);
    };
    noise.validate()?;
    let mut out = clean;
    for t in 0..out.channels() {
        let g: f64 = rng.sample::<f64, _>(StandardNormal) * noise.gain_jitter;
        out.channel_mut(t).mapv_inplace(|v| v * g.exp());
    }
    Ok(out.add(&ground_clutter(&settings.grid, noise, &pols, rng)))
}

/// Parameters of the built-in classification benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub targets: Vec<ObjectTemplate>,
    pub confusers: Vec<ObjectTemplate>,
    pub render: RenderSettings,
    /// Clutter model; its `noise_level` is replaced by each sweep level.
    pub noise: NoiseModel,
    pub noise_levels: Vec<f64>,
    /// Aspect angles of the training renders (degrees).
    pub train_aspects: Vec<f64>,
    /// Clutter level of training renders; `None` keeps them clean.
    pub train_noise_level: Option<f64>,
    /// Test samples per object and noise level, at random aspects.
    pub test_per_class: usize,
    /// Pure-ground samples for the shared block (rendered at noise level 1).
    pub ground_samples: usize,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            targets: builtin_targets(),
            confusers: builtin_confusers(),
            render: RenderSettings::default(),
            noise: NoiseModel::default(),
            noise_levels: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            train_aspects: (0..12).map(|i| 30.0 * i as f64).collect(),
            train_noise_level: None,
            test_per_class: 20,
            ground_samples: 12,
            seed: 7,
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::Config("benchmark needs at least one target object".into()));
        }
        if self.train_aspects.is_empty() {
            return Err(Error::Config("benchmark needs at least one training aspect".into()));
        }
        if let Some(l) = self.noise_levels.iter().find(|l| !(**l > 0.0)) {
            return Err(Error::Config(format!("noise level must be positive, got {l}")));
        }
        let mut names: Vec<&str> = self.objects().map(|o| o.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) || names.contains(&"ground") {
            return Err(Error::Config("object names must be unique and not \"ground\"".into()));
        }
        self.noise.validate()
    }

    fn objects(&self) -> impl Iterator<Item = &ObjectTemplate> {
        self.targets.iter().chain(&self.confusers)
    }

    fn manifest(&self, samples: Vec<SampleRecord>, view_sets: Vec<ViewSetInfo>) -> Manifest {
        Manifest {
            polarizations: POLARIZATIONS.iter().map(|s| s.to_string()).collect(),
            rows: self.render.grid.rows,
            cols: self.render.grid.cols,
            pixel_spacing: self.render.grid.spacing,
            seed: self.seed,
            view_sets,
            samples,
        }
    }

    fn noise_at(&self, level: f64) -> NoiseModel {
        NoiseModel {
            noise_level: level,
            ..self.noise.clone()
        }
    }
}

const STREAM_TRAIN: u64 = 1;
const STREAM_GROUND: u64 = 2;
const STREAM_TEST: u64 = 3;
const STREAM_VIEW: u64 = 4;
const STREAM_LOOK: u64 = 5;

struct Job<'a> {
    record: SampleRecord,
    object: Option<&'a ObjectTemplate>,
    noise: Option<NoiseModel>,
    stream: u64,
    index: u64,
}

fn run_jobs(spec: &BenchmarkSpec, jobs: Vec<Job<'_>>, view_sets: Vec<ViewSetInfo>) -> Result<Dataset> {
    let images: Vec<Tensor3> = jobs
        .par_iter()
        .map(|job| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, job.stream, job.index));
            let r = &job.record;
            match job.object {
                Some(o) => render_sample(
                    &spec.render,
                    o,
                    r.aspect_deg,
                    (r.sector_deg[0], r.sector_deg[1]),
                    job.noise.as_ref(),
                    &mut rng,
                ),
                None => {
                    let noise = job.noise.as_ref().expect("ground jobs carry a noise model");
                    let pols: Vec<usize> = (0..POLARIZATIONS.len()).collect();
                    Ok(ground_clutter(&spec.render.grid, noise, &pols, &mut rng))
                }
            }
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&Tensor3> = images.iter().collect();
    let data = Tensor3::hcat(&refs)?;
    let samples = jobs.into_iter().map(|j| j.record).collect();
    Ok(Dataset {
        manifest: spec.manifest(samples, view_sets),
        data,
    })
}

/// Training renders, ground samples and noisy test samples of every object.
pub fn generate_benchmark(spec: &BenchmarkSpec) -> Result<Dataset> {
    spec.validate()?;
    let (lo, hi) = spec.render.full_sector();
    let alpha = spec.render.integration_angle_deg;
    let record = |split, o: Option<&ObjectTemplate>, aspect, level| SampleRecord {
        split,
        class: o.map_or_else(|| "ground".to_string(), |o| o.name.clone()),
        role: o.map_or(SampleRole::Ground, |o| o.role.into()),
        aspect_deg: aspect,
        noise_level: level,
        sector_deg: [lo, hi],
        integration_deg: alpha,
        set: None,
        view: None,
        object_id: None,
    };
    let mut jobs = Vec::new();
    let mut index = 0u64;
    for o in spec.objects() {
        for &a in &spec.train_aspects {
            let level = spec.train_noise_level.unwrap_or(0.0);
            jobs.push(Job {
                record: record(Split::Train, Some(o), a, level),
                object: Some(o),
                noise: spec.train_noise_level.map(|l| spec.noise_at(l)),
                stream: STREAM_TRAIN,
                index,
            });
            index += 1;
        }
    }
    for i in 0..spec.ground_samples {
        jobs.push(Job {
            record: record(Split::Ground, None, 0.0, 1.0),
            object: None,
            noise: Some(spec.noise_at(1.0)),
            stream: STREAM_GROUND,
            index: i as u64,
        });
    }
    // aspects are drawn from their own stream so they do not depend on the
    // clutter draws
    let mut aspect_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, STREAM_TEST, u64::MAX));
    let mut index = 0u64;
    for &level in &spec.noise_levels {
        for o in spec.objects() {
            for _ in 0..spec.test_per_class {
                let a = aspect_rng.random_range(0.0..360.0);
                jobs.push(Job {
                    record: record(Split::Test, Some(o), a, level),
                    object: Some(o),
                    noise: Some(spec.noise_at(level)),
                    stream: STREAM_TEST,
                    index,
                });
                index += 1;
            }
        }
    }
    run_jobs(spec, jobs, Vec::new())
}

/// Parameters of a multi-look dataset: two ordered view sets (full sector
/// and the left half sector) and test objects observed by three looks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLookSpec {
    pub benchmark: BenchmarkSpec,
    /// Views per set; view `v` sits at aspect `v · spacing`.
    pub views: usize,
    pub spacing_deg: f64,
    /// Test objects per class and noise level.
    pub objects_per_class: usize,
    /// Uniform jitter (± degrees) of test aspects around the view grid.
    pub aspect_jitter_deg: f64,
}

impl Default for MultiLookSpec {
    fn default() -> Self {
        MultiLookSpec {
            benchmark: BenchmarkSpec::default(),
            views: 24,
            spacing_deg: 15.0,
            objects_per_class: 10,
            aspect_jitter_deg: 0.0,
        }
    }
}

/// Names of the two view sets and of the three looks.
pub const FULL_SET: &str = "full";
pub const HALF_SET: &str = "half";
pub const LOOK_FULL: &str = "full";
pub const LOOK_LEFT: &str = "left";
pub const LOOK_RIGHT: &str = "right";

/// View sets plus test objects. A test object at aspect `θ = v · spacing`
/// is seen by the full-sector look (matching full view `v`), the left
/// half-sector look (half view `v`) and the right half-sector look, whose
/// body-frame bearings match half view `v + 1`.
pub fn generate_multilook(spec: &MultiLookSpec) -> Result<Dataset> {
    let b = &spec.benchmark;
    b.validate()?;
    let alpha = b.render.integration_angle_deg;
    let half = alpha / 2.0;
    if spec.views == 0 || (spec.spacing_deg - half).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "view spacing must equal half the integration angle ({half}°) and views must be positive"
        )));
    }
    let sets = vec![
        ViewSetInfo {
            name: FULL_SET.into(),
            integration_deg: alpha,
            sector_deg: [-half, half],
            spacing_deg: spec.spacing_deg,
            views: spec.views,
        },
        ViewSetInfo {
            name: HALF_SET.into(),
            integration_deg: half,
            sector_deg: [-half, 0.0],
            spacing_deg: spec.spacing_deg,
            views: spec.views,
        },
    ];
    let base = |split, o: &ObjectTemplate, aspect, level, sector: [f64; 2]| SampleRecord {
        split,
        class: o.name.clone(),
        role: o.role.into(),
        aspect_deg: aspect,
        noise_level: level,
        sector_deg: sector,
        integration_deg: sector[1] - sector[0],
        set: None,
        view: None,
        object_id: None,
    };
    let mut jobs = Vec::new();
    let mut index = 0u64;
    for o in b.objects() {
        for set in &sets {
            for v in 0..spec.views {
                let a = v as f64 * spec.spacing_deg;
                jobs.push(Job {
                    record: SampleRecord {
                        set: Some(set.name.clone()),
                        view: Some(v),
                        ..base(Split::View, o, a, 0.0, set.sector_deg)
                    },
                    object: Some(o),
                    noise: None,
                    stream: STREAM_VIEW,
                    index,
                });
                index += 1;
            }
        }
    }
    for i in 0..b.ground_samples {
        jobs.push(Job {
            record: SampleRecord {
                split: Split::Ground,
                class: "ground".into(),
                role: SampleRole::Ground,
                aspect_deg: 0.0,
                noise_level: 1.0,
                sector_deg: [-half, half],
                integration_deg: alpha,
                set: None,
                view: None,
                object_id: None,
            },
            object: None,
            noise: Some(b.noise_at(1.0)),
            stream: STREAM_GROUND,
            index: i as u64,
        });
    }
    let mut aspect_rng = ChaCha8Rng::seed_from_u64(derive_seed(b.seed, STREAM_LOOK, u64::MAX));
    let looks = [
        (LOOK_FULL, [-half, half]),
        (LOOK_LEFT, [-half, 0.0]),
        (LOOK_RIGHT, [0.0, half]),
    ];
    let mut index = 0u64;
    let mut object_id = 0usize;
    for &level in &b.noise_levels {
        for o in b.objects() {
            for _ in 0..spec.objects_per_class {
                let v = aspect_rng.random_range(0..spec.views);
                let jitter = if spec.aspect_jitter_deg > 0.0 {
                    aspect_rng.random_range(-spec.aspect_jitter_deg..=spec.aspect_jitter_deg)
                } else {
                    0.0
                };
                let a = v as f64 * spec.spacing_deg + jitter;
                for (name, sector) in looks {
                    jobs.push(Job {
                        record: SampleRecord {
                            set: Some(name.into()),
                            view: Some(v),
                            object_id: Some(object_id),
                            ..base(Split::Look, o, a, level, sector)
                        },
                        object: Some(o),
                        noise: Some(b.noise_at(level)),
                        stream: STREAM_LOOK,
                        index,
                    });
                    index += 1;
                }
                object_id += 1;
            }
        }
    }
    run_jobs(b, jobs, sets)
}
