//! Dataset generation from the experiment configuration.

use tsrc_core::dataset::MultiLookSpec;
use tsrc_core::sar::{ImageGrid, NoiseModel, RenderSettings};
use tsrc_core::{generate_benchmark, generate_multilook, BenchmarkSpec, Dataset};

use crate::config::{DatasetKind, GeneratorSettings};
use crate::error::Result;

/// Clutter and burial-gain settings of the stock generator.
pub fn default_noise() -> NoiseModel {
    NoiseModel {
        noise_level: 1.0,
        correlation_length: 1.5,
        rms_amplitude: 0.1,
        gain_jitter: 0.0,
        channel_clutter: vec![1.0, 1.0, 1.0],
    }
}

pub fn render_settings(g: &GeneratorSettings) -> RenderSettings {
    RenderSettings {
        grid: ImageGrid::new(g.rows, g.cols, g.pixel_spacing),
        integration_angle_deg: g.integration_angle_deg,
        ..RenderSettings::default()
    }
}

pub fn benchmark_spec(g: &GeneratorSettings, seed: u64) -> BenchmarkSpec {
    let steps = (360.0 / g.train_step_deg).round().max(1.0) as usize;
    BenchmarkSpec {
        render: render_settings(g),
        noise: g.noise.clone(),
        noise_levels: g.noise_levels.clone(),
        train_noise_level: g.train_noise_level,
        train_aspects: (0..steps).map(|i| g.train_step_deg * i as f64).collect(),
        test_per_class: g.test_per_class,
        ground_samples: g.ground_samples,
        seed,
        ..BenchmarkSpec::default()
    }
}

/// View spacing is always half the integration angle.
pub fn multilook_spec(g: &GeneratorSettings, seed: u64) -> MultiLookSpec {
    MultiLookSpec {
        benchmark: benchmark_spec(g, seed),
        views: g.views,
        spacing_deg: g.integration_angle_deg / 2.0,
        objects_per_class: g.test_per_class,
        aspect_jitter_deg: g.aspect_jitter_deg,
    }
}

pub fn generate(g: &GeneratorSettings, seed: u64) -> Result<Dataset> {
    Ok(match g.kind {
        DatasetKind::Benchmark => generate_benchmark(&benchmark_spec(g, seed))?,
        DatasetKind::Multilook => generate_multilook(&multilook_spec(g, seed))?,
    })
}
