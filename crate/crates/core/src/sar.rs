//! Desk-scale SAR scene simulation and backprojection image formation.
//!
//! Point scatterers are observed from an arc of sensor positions. Each
//! position records a range profile made of raised-cosine pulses at the
//! scatterer ranges, and every pixel is formed by the weighted coherent sum
//!
//! ```text
//! P_i = Σ_{k = N_i1}^{N_i2} w_k · s_k(f(i, k))
//! ```
//!
//! over the aperture positions whose aspect angle, seen from the centre of
//! the pixel's subimage, lies inside the integration sector.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::classifier::ClassRole;
use crate::error::{Error, Result};
use crate::tensor::Tensor3;

const ANGLE_EPS: f64 = 1e-9;

/// Wraps an angle in degrees to `(-180, 180]`.
pub fn wrap_deg(a: f64) -> f64 {
    let w = (a + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}

fn bearing_deg(from: [f64; 2], to: [f64; 2]) -> f64 {
    (to[1] - from[1]).atan2(to[0] - from[0]).to_degrees()
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Aspect-dependent gain of a scatterer: `floor + (1 − floor)·exp(−(Δ/width)²)`
/// with `Δ` the angle between the radar bearing and the lobe bearing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lobe {
    pub bearing_deg: f64,
    pub width_deg: f64,
    pub floor: f64,
}

impl Lobe {
    pub fn gain(&self, radar_bearing_deg: f64) -> f64 {
        let d = wrap_deg(radar_bearing_deg - self.bearing_deg) / self.width_deg;
        self.floor + (1.0 - self.floor) * (-d * d).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    /// Metres.
    pub position: [f64; 2],
    /// One reflectivity per polarization channel.
    pub reflectivity: Vec<f64>,
    #[serde(default)]
    pub lobe: Option<Lobe>,
}

impl Scatterer {
    pub fn isotropic(position: [f64; 2], reflectivity: Vec<f64>) -> Self {
        Scatterer {
            position,
            reflectivity,
            lobe: None,
        }
    }

    fn gain(&self, radar_bearing_deg: f64) -> f64 {
        self.lobe.map_or(1.0, |l| l.gain(radar_bearing_deg))
    }
}

/// Pixel grid of the formed image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub center: [f64; 2],
    pub rows: usize,
    pub cols: usize,
    /// Metres per pixel.
    pub spacing: f64,
    /// Side of the square subimages (pixels) that share one aperture
    /// segment; `None` treats the whole image as one subimage.
    #[serde(default)]
    pub subimage: Option<usize>,
}

impl ImageGrid {
    pub fn new(rows: usize, cols: usize, spacing: f64) -> Self {
        ImageGrid {
            center: [0.0, 0.0],
            rows,
            cols,
            spacing,
            subimage: None,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.rows * self.cols
    }

    /// Column `c` runs along x, row `r` along y.
    pub fn pixel_position(&self, row: usize, col: usize) -> [f64; 2] {
        [
            self.center[0] + (col as f64 - (self.cols as f64 - 1.0) / 2.0) * self.spacing,
            self.center[1] + (row as f64 - (self.rows as f64 - 1.0) / 2.0) * self.spacing,
        ]
    }

    /// Pixel nearest to a position, if inside the grid.
    pub fn pixel_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let c = ((p[0] - self.center[0]) / self.spacing + (self.cols as f64 - 1.0) / 2.0).round();
        let r = ((p[1] - self.center[1]) / self.spacing + (self.rows as f64 - 1.0) / 2.0).round();
        (r >= 0.0 && c >= 0.0 && (r as usize) < self.rows && (c as usize) < self.cols)
            .then_some((r as usize, c as usize))
    }

    /// Column-major index of a pixel in the vectorized image.
    pub fn linear_index(&self, row: usize, col: usize) -> usize {
        col * self.rows + row
    }

    fn tiles(&self) -> Vec<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        let side = self.subimage.unwrap_or(self.rows.max(self.cols)).max(1);
        let mut out = Vec::new();
        for r0 in (0..self.rows).step_by(side) {
            for c0 in (0..self.cols).step_by(side) {
                out.push((r0..(r0 + side).min(self.rows), c0..(c0 + side).min(self.cols)));
            }
        }
        out
    }
}

/// Band-limited pulse with a raised-cosine envelope of half-width
/// `half_width` metres, optionally modulated by a carrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub half_width: f64,
    #[serde(default)]
    pub carrier_wavelength: Option<f64>,
}

impl Pulse {
    pub fn value(&self, offset: f64) -> f64 {
        if offset.abs() >= self.half_width {
            return 0.0;
        }
        let env = 0.5 * (1.0 + (std::f64::consts::PI * offset / self.half_width).cos());
        match self.carrier_wavelength {
            Some(l) => env * (2.0 * std::f64::consts::PI * offset / l).cos(),
            None => env,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scatterers: Vec<Scatterer>,
    /// Sensor positions (metres), in acquisition order.
    pub aperture: Vec<[f64; 2]>,
    /// Bearing from the scene towards the middle of the aperture; aspect
    /// angles are measured from it.
    pub look_bearing_deg: f64,
    /// Integration angle α (degrees).
    pub integration_angle_deg: f64,
    pub grid: ImageGrid,
    pub pulse: Pulse,
    pub polarizations: usize,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.integration_angle_deg > 0.0 && self.integration_angle_deg < 360.0) {
            return Err(Error::Config(format!(
                "integration angle must lie in (0, 360), got {}",
                self.integration_angle_deg
            )));
        }
        if self.aperture.is_empty() {
            return Err(Error::Config("aperture has no positions".into()));
        }
        if self.polarizations == 0 {
            return Err(Error::Config("at least one polarization channel is required".into()));
        }
        if let Some(s) = self
            .scatterers
            .iter()
            .find(|s| s.reflectivity.len() != self.polarizations)
        {
            return Err(Error::Config(format!(
                "scatterer at {:?} has {} reflectivities for {} polarizations",
                s.position,
                s.reflectivity.len(),
                self.polarizations
            )));
        }
        if self.grid.rows == 0 || self.grid.cols == 0 || !(self.grid.spacing > 0.0) {
            return Err(Error::Config("image grid must be non-empty with positive spacing".into()));
        }
        Ok(())
    }

    /// Aspect angle (degrees from the look bearing) of sensor `k` as seen
    /// from `point`.
    pub fn aspect_of(&self, k: usize, point: [f64; 2]) -> f64 {
        wrap_deg(bearing_deg(point, self.aperture[k]) - self.look_bearing_deg)
    }
}

/// Sensor positions on a circular arc around `center`, spaced `step_deg`
/// apart and covering `look_bearing ± half_span`.
pub fn arc_aperture(
    center: [f64; 2],
    radius: f64,
    look_bearing_deg: f64,
    half_span_deg: f64,
    step_deg: f64,
) -> Vec<[f64; 2]> {
    let n = (half_span_deg / step_deg).round() as i64;
    (-n..=n)
        .map(|i| {
            let b = (look_bearing_deg + i as f64 * step_deg).to_radians();
            [center[0] + radius * b.cos(), center[1] + radius * b.sin()]
        })
        .collect()
}

/// Range-compressed returns `s_k` for every aperture position and channel,
/// sampled at ranges `r0 + n·dr`.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeProfiles {
    pub r0: f64,
    pub dr: f64,
    /// Shape `(aperture position, channel, range sample)`.
    pub data: Array3<f64>,
}

impl RangeProfiles {
    pub fn zeros(positions: usize, channels: usize, samples: usize, r0: f64, dr: f64) -> Self {
        RangeProfiles {
            r0,
            dr,
            data: Array3::zeros((positions, channels, samples)),
        }
    }

    /// Empty profiles whose range window covers every pixel of the scene
    /// from every sensor position.
    pub fn window_for(spec: &SceneSpec, dr: f64) -> Self {
        let g = &spec.grid;
        let corners = [
            g.pixel_position(0, 0),
            g.pixel_position(0, g.cols - 1),
            g.pixel_position(g.rows - 1, 0),
            g.pixel_position(g.rows - 1, g.cols - 1),
        ];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in &spec.aperture {
            let dc = distance(*p, g.center);
            lo = lo.min(dc);
            hi = hi.max(dc);
            for c in &corners {
                let d = distance(*p, *c);
                lo = lo.min(d);
                hi = hi.max(d);
            }
        }
        let margin = 2.0 * spec.pulse.half_width + 2.0 * g.spacing;
        let r0 = (lo - margin).max(0.0);
        let n = ((hi + margin - r0) / dr).ceil() as usize + 1;
        RangeProfiles::zeros(spec.aperture.len(), spec.polarizations, n, r0, dr)
    }

    pub fn positions(&self) -> usize {
        self.data.dim().0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn samples(&self) -> usize {
        self.data.dim().2
    }

    pub fn add(&self, other: &RangeProfiles) -> RangeProfiles {
        RangeProfiles {
            r0: self.r0,
            dr: self.dr,
            data: &self.data + &other.data,
        }
    }

    fn value(&self, k: usize, t: usize, range: f64, interp: Interpolation) -> f64 {
        let pos = (range - self.r0) / self.dr;
        let n = self.samples() as f64;
        match interp {
            Interpolation::Nearest => {
                let i = pos.round();
                if i < 0.0 || i >= n {
                    0.0
                } else {
                    self.data[(k, t, i as usize)]
                }
            }
            Interpolation::Linear => {
                let i0 = pos.floor();
                if i0 < 0.0 || i0 + 1.0 >= n {
                    return 0.0;
                }
                let f = pos - i0;
                let i0 = i0 as usize;
                (1.0 - f) * self.data[(k, t, i0)] + f * self.data[(k, t, i0 + 1)]
            }
        }
    }
}

/// Range profiles of the scene's point scatterers.
pub fn synthesize_profiles(spec: &SceneSpec, dr: f64) -> Result<RangeProfiles> {
    spec.validate()?;
    let mut prof = RangeProfiles::window_for(spec, dr);
    let reach = (spec.pulse.half_width / dr).ceil() as i64;
    for (k, p) in spec.aperture.iter().enumerate() {
        for s in &spec.scatterers {
            let range = distance(*p, s.position);
            let gain = s.gain(bearing_deg(s.position, *p));
            let centre = ((range - prof.r0) / dr).round() as i64;
            for i in (centre - reach).max(0)..=(centre + reach).min(prof.samples() as i64 - 1) {
                let offset = prof.r0 + i as f64 * dr - range;
                let v = spec.pulse.value(offset) * gain;
                if v == 0.0 {
                    continue;
                }
                for (t, rho) in s.reflectivity.iter().enumerate() {
                    prof.data[(k, t, i as usize)] += rho * v;
                }
            }
        }
    }
    Ok(prof)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Nearest,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    Uniform,
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BackprojectOptions {
    pub interpolation: Interpolation,
    pub weighting: Weighting,
}

fn segment_weights(n: usize, weighting: Weighting) -> Vec<f64> {
    match weighting {
        Weighting::Uniform => vec![1.0; n],
        Weighting::Hann => (0..n)
            .map(|j| (std::f64::consts::PI * (j as f64 + 0.5) / n as f64).sin().powi(2))
            .collect(),
    }
}

/// Image over the full sector `[−α/2, α/2]`.
pub fn backproject(
    profiles: &RangeProfiles,
    spec: &SceneSpec,
    opts: BackprojectOptions,
) -> Result<Tensor3> {
    let half = spec.integration_angle_deg / 2.0;
    backproject_sector(profiles, spec, (-half, half), opts)
}

/// Image formed from the aperture segment whose aspect angle lies in
/// `sector` (degrees, half-open except at the upper edge of the full
/// integration sector). Returns a `d × 1 × T` tensor, pixels column-major.
pub fn backproject_sector(
    profiles: &RangeProfiles,
    spec: &SceneSpec,
    sector: (f64, f64),
    opts: BackprojectOptions,
) -> Result<Tensor3> {
    spec.validate()?;
    let half = spec.integration_angle_deg / 2.0;
    let (lo, hi) = sector;
    if !(lo < hi) {
        return Err(Error::Config(format!("empty sector [{lo}, {hi}]")));
    }
    if lo < -half - ANGLE_EPS || hi > half + ANGLE_EPS {
        return Err(Error::Config(format!(
            "sector [{lo}, {hi}] exceeds the integration sector [{}, {half}]",
            -half
        )));
    }
    if profiles.positions() != spec.aperture.len() || profiles.channels() != spec.polarizations {
        return Err(Error::Config(format!(
            "profiles cover {} positions × {} channels, scene has {} × {}",
            profiles.positions(),
            profiles.channels(),
            spec.aperture.len(),
            spec.polarizations
        )));
    }
    let closed_top = hi >= half - ANGLE_EPS;
    let g = &spec.grid;
    let mut image = Tensor3::zeros(g.pixel_count(), 1, spec.polarizations);
    for (rows, cols) in g.tiles() {
        let (cr, cc) = ((rows.start + rows.end - 1) / 2, (cols.start + cols.end - 1) / 2);
        let centre = {
            let a = g.pixel_position(rows.start, cols.start);
            let b = g.pixel_position(rows.end - 1, cols.end - 1);
            [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]
        };
        let segment: Vec<usize> = (0..spec.aperture.len())
            .filter(|&k| {
                let a = spec.aspect_of(k, centre);
                a >= lo - ANGLE_EPS && (a < hi - ANGLE_EPS || (closed_top && a <= hi + ANGLE_EPS))
            })
            .collect();
        if segment.is_empty() {
            return Err(Error::EmptySector { row: cr, col: cc });
        }
        let weights = segment_weights(segment.len(), opts.weighting);
        for r in rows.clone() {
            for c in cols.clone() {
                let p = g.pixel_position(r, c);
                let idx = g.linear_index(r, c);
                for t in 0..spec.polarizations {
                    let mut acc = 0.0;
                    for (&k, w) in segment.iter().zip(&weights) {
                        let range = distance(spec.aperture[k], p);
                        acc += w * profiles.value(k, t, range, opts.interpolation);
                    }
                    image.set(idx, 0, t, acc);
                }
            }
        }
    }
    Ok(image)
}

/// One image per sector, each formed from that sector's aperture segment
/// only.
pub fn form_multilook(
    profiles: &RangeProfiles,
    spec: &SceneSpec,
    sectors: &[(f64, f64)],
    opts: BackprojectOptions,
) -> Result<Vec<Tensor3>> {
    if sectors.is_empty() {
        return Err(Error::Config("no sectors requested".into()));
    }
    sectors
        .iter()
        .map(|&s| backproject_sector(profiles, spec, s, opts))
        .collect()
}

/// The three-look split `[−α/2, −α/6]`, `[−α/6, α/6]`, `[α/6, α/2]`.
pub fn three_look_sectors(alpha_deg: f64) -> [(f64, f64); 3] {
    let (h, s) = (alpha_deg / 2.0, alpha_deg / 6.0);
    [(-h, -s), (-s, s), (s, h)]
}

/// A rigid object made of scatterers in its own body frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTemplate {
    pub name: String,
    pub role: ClassRole,
    pub scatterers: Vec<Scatterer>,
}

impl ObjectTemplate {
    /// Scatterers in scene coordinates when the object sits at `center`
    /// and is seen at aspect angle `aspect_deg`: the body frame is rotated
    /// by `−aspect`, so the radar sweeps body bearings `aspect + sector`.
    pub fn placed(&self, center: [f64; 2], aspect_deg: f64) -> Vec<Scatterer> {
        let (s, c) = (-aspect_deg).to_radians().sin_cos();
        self.scatterers
            .iter()
            .map(|sc| {
                let [x, y] = sc.position;
                Scatterer {
                    position: [center[0] + c * x - s * y, center[1] + s * x + c * y],
                    reflectivity: sc.reflectivity.clone(),
                    lobe: sc.lobe.map(|l| Lobe {
                        bearing_deg: l.bearing_deg - aspect_deg,
                        ..l
                    }),
                }
            })
            .collect()
    }
}

/// Polarization channel names and the per-object reflectivity order.
pub const POLARIZATIONS: [&str; 3] = ["VV", "HH", "HV"];

fn ring(n: usize, radius: f64, pol: [f64; 3], phase: f64) -> Vec<Scatterer> {
    (0..n)
        .map(|i| {
            let a = phase + 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            Scatterer::isotropic([radius * a.cos(), radius * a.sin()], pol.to_vec())
        })
        .collect()
}

fn lobed(position: [f64; 2], pol: [f64; 3], bearing: f64, width: f64, floor: f64) -> Scatterer {
    Scatterer {
        position,
        reflectivity: pol.to_vec(),
        lobe: Some(Lobe {
            bearing_deg: bearing,
            width_deg: width,
            floor,
        }),
    }
}

/// Five built-in target objects (mines and a shell analogue).
pub fn builtin_targets() -> Vec<ObjectTemplate> {
    let t = |name: &str, scatterers: Vec<Scatterer>| ObjectTemplate {
        name: name.into(),
        role: ClassRole::Target,
        scatterers,
    };
    // T1: metal anti-tank mine, strong rim with an anisotropic edge return
    let mut t1 = ring(6, 0.16, [0.9, 1.0, 0.25], 0.0);
    t1.push(lobed([0.0, 0.16], [1.0, 1.2, 0.4], 90.0, 35.0, 0.2));
    // T2: plastic mine, weak rim and bright fuze
    let mut t2 = ring(5, 0.14, [0.35, 0.55, 0.2], 0.3);
    t2.push(Scatterer::isotropic([0.0, 0.0], vec![0.9, 1.1, 0.5]));
    // T3: small anti-personnel mine, tight pair with a side lobe
    let t3 = vec![
        Scatterer::isotropic([-0.05, 0.0], vec![0.8, 0.6, 0.35]),
        Scatterer::isotropic([0.05, 0.0], vec![0.8, 0.6, 0.35]),
        lobed([0.0, 0.09], [0.6, 0.9, 0.5], 60.0, 30.0, 0.1),
    ];
    // T4: box mine, four corners with diagonal lobes
    let t4 = (0..4)
        .map(|i| {
            let a = 45.0 + 90.0 * i as f64;
            let r = a.to_radians();
            lobed([0.17 * r.cos(), 0.17 * r.sin()], [1.0, 0.8, 0.55], a, 40.0, 0.25)
        })
        .collect();
    // T5: artillery shell, specular along its broadside
    let mut t5: Vec<Scatterer> = (0..5)
        .map(|i| lobed([-0.3 + 0.15 * i as f64, 0.0], [1.0, 0.5, 0.3], 90.0, 20.0, 0.15))
        .collect();
    t5.push(lobed([0.33, 0.0], [0.7, 0.7, 0.6], 0.0, 40.0, 0.3));
    vec![
        t("T1", t1),
        t("T2", t2),
        t("T3", t3),
        t("T4", t4),
        t("T5", t5),
    ]
}

/// Five built-in confuser objects: a can analogue and four seeded rock
/// clusters.
pub fn builtin_confusers() -> Vec<ObjectTemplate> {
    let mut out = vec![ObjectTemplate {
        name: "C1".into(),
        role: ClassRole::Confuser,
        scatterers: vec![
            lobed([0.0, -0.04], [0.8, 0.8, 0.1], 0.0, 50.0, 0.4),
            lobed([0.0, 0.04], [0.8, 0.8, 0.1], 180.0, 50.0, 0.4),
        ],
    }];
    for i in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0FF_EE00 + i);
        let n = rng.random_range(3..=6);
        let scatterers = (0..n)
            .map(|_| {
                let r = 0.22 * rng.random::<f64>().sqrt();
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                let base = rng.random_range(0.3..1.0);
                let pol = [
                    base * rng.random_range(0.6..1.2),
                    base * rng.random_range(0.6..1.2),
                    base * rng.random_range(0.05..0.6),
                ];
                if rng.random_bool(0.5) {
                    lobed(
                        [r * a.cos(), r * a.sin()],
                        pol,
                        rng.random_range(-180.0..180.0),
                        rng.random_range(25.0..60.0),
                        0.2,
                    )
                } else {
                    Scatterer::isotropic([r * a.cos(), r * a.sin()], pol.to_vec())
                }
            })
            .collect();
        out.push(ObjectTemplate {
            name: format!("C{}", i + 2),
            role: ClassRole::Confuser,
            scatterers,
        });
    }
    out
}

/// Fixed acquisition geometry used to render object images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub grid: ImageGrid,
    pub aperture_radius: f64,
    pub aperture_step_deg: f64,
    pub integration_angle_deg: f64,
    pub look_bearing_deg: f64,
    pub pulse: Pulse,
    pub range_step: f64,
    pub options: BackprojectOptions,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            grid: ImageGrid::new(64, 32, 0.04),
            aperture_radius: 30.0,
            aperture_step_deg: 0.5,
            integration_angle_deg: 30.0,
            look_bearing_deg: -90.0,
            pulse: Pulse {
                half_width: 0.15,
                carrier_wavelength: None,
            },
            range_step: 0.005,
            options: BackprojectOptions::default(),
        }
    }
}

impl RenderSettings {
    pub fn scene(&self, scatterers: Vec<Scatterer>, polarizations: usize, seed: u64) -> SceneSpec {
        SceneSpec {
            scatterers,
            aperture: arc_aperture(
                self.grid.center,
                self.aperture_radius,
                self.look_bearing_deg,
                self.integration_angle_deg / 2.0,
                self.aperture_step_deg,
            ),
            look_bearing_deg: self.look_bearing_deg,
            integration_angle_deg: self.integration_angle_deg,
            grid: self.grid.clone(),
            pulse: self.pulse,
            polarizations,
            seed,
        }
    }

    /// Image of `object` at `aspect_deg` formed over `sector`, divided by
    /// the total segment weight so images of different sector widths are
    /// on the same scale. Channels follow `polarizations` (indices into
    /// [`POLARIZATIONS`]).
    pub fn render(
        &self,
        object: &ObjectTemplate,
        aspect_deg: f64,
        sector: (f64, f64),
        polarizations: &[usize],
    ) -> Result<Tensor3> {
        let scatterers = object
            .placed(self.grid.center, aspect_deg)
            .into_iter()
            .map(|s| Scatterer {
                reflectivity: polarizations.iter().map(|&p| s.reflectivity[p]).collect(),
                ..s
            })
            .collect();
        let spec = self.scene(scatterers, polarizations.len(), 0);
        let profiles = synthesize_profiles(&spec, self.range_step)?;
        let image = backproject_sector(&profiles, &spec, sector, self.options)?;
        let count = (0..spec.aperture.len())
            .filter(|&k| {
                let a = spec.aspect_of(k, self.grid.center);
                a >= sector.0 - ANGLE_EPS && a <= sector.1 + ANGLE_EPS
            })
            .count()
            .max(1);
        Ok(image.scaled(1.0 / count as f64))
    }

    pub fn full_sector(&self) -> (f64, f64) {
        let h = self.integration_angle_deg / 2.0;
        (-h, h)
    }
}

/// Rough-ground clutter parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Ground scale; clutter amplitude is proportional to it.
    pub noise_level: f64,
    /// Gaussian smoothing length of the clutter field, in pixels.
    pub correlation_length: f64,
    /// RMS amplitude of the clutter field at noise level 1.
    pub rms_amplitude: f64,
    /// Standard deviation of the log-gain applied per sample and channel to
    /// the object response (burial attenuation differs by polarization).
    #[serde(default)]
    pub gain_jitter: f64,
    /// Relative clutter amplitude per polarization (VV, HH, HV).
    #[serde(default = "default_channel_clutter")]
    pub channel_clutter: Vec<f64>,
}

fn default_channel_clutter() -> Vec<f64> {
    vec![1.0, 1.0, 1.0]
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            noise_level: 1.0,
            correlation_length: 1.5,
            rms_amplitude: 0.1,
            gain_jitter: 0.0,
            channel_clutter: default_channel_clutter(),
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_level > 0.0) {
            return Err(Error::Config(format!(
                "noise level must be positive, got {}",
                self.noise_level
            )));
        }
        if !(self.correlation_length >= 0.0) || !(self.rms_amplitude >= 0.0) {
            return Err(Error::Config("clutter parameters must be non-negative".into()));
        }
        Ok(())
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let reach = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-reach..=reach)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Zero-mean Gaussian field with unit RMS, smoothed separably by a Gaussian
/// of `correlation_length` pixels (column-major vector of `rows·cols`).
pub fn correlated_field(rows: usize, cols: usize, correlation_length: f64, rng: &mut impl Rng) -> Vec<f64> {
    let white: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    let kernel = gaussian_kernel(correlation_length);
    let reach = (kernel.len() / 2) as i64;
    let at = |v: &Vec<f64>, r: i64, c: i64| -> f64 {
        // reflect at the borders
        let rr = r.clamp(0, rows as i64 - 1) as usize;
        let cc = c.clamp(0, cols as i64 - 1) as usize;
        v[cc * rows + rr]
    };
    let mut tmp = vec![0.0; rows * cols];
    for c in 0..cols {
        for r in 0..rows {
            tmp[c * rows + r] = kernel
                .iter()
                .enumerate()
                .map(|(i, w)| w * at(&white, r as i64 + i as i64 - reach, c as i64))
                .sum();
        }
    }
    let mut out = vec![0.0; rows * cols];
    for c in 0..cols {
        for r in 0..rows {
            out[c * rows + r] = kernel
                .iter()
                .enumerate()
                .map(|(i, w)| w * at(&tmp, r as i64, c as i64 + i as i64 - reach))
                .sum();
        }
    }
    let mean = out.iter().sum::<f64>() / out.len() as f64;
    out.iter_mut().for_each(|v| *v -= mean);
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / out.len() as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}

/// Magnitude clutter image `rms · noise_level · scale_t · |G_t|` for the
/// given polarization channels.
pub fn ground_clutter(
    grid: &ImageGrid,
    noise: &NoiseModel,
    polarizations: &[usize],
    rng: &mut impl Rng,
) -> Tensor3 {
    let channels: Vec<Vec<f64>> = polarizations
        .iter()
        .map(|&p| {
            let scale = noise.rms_amplitude
                * noise.noise_level
                * noise.channel_clutter.get(p).copied().unwrap_or(1.0);
            correlated_field(grid.rows, grid.cols, noise.correlation_length, rng)
                .into_iter()
                .map(|v| scale * v.abs())
                .collect()
        })
        .collect();
    Tensor3::from_signal(&channels).expect("clutter channels share one length")
}

/// Deterministic per-stream seed derivation (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn argmax(img: &Tensor3) -> usize {
        (0..img.rows())
            .max_by(|&a, &b| img.get(a, 0, 0).total_cmp(&img.get(b, 0, 0)))
            .unwrap()
    }

    fn single_scatterer_scene(rng: &mut ChaCha8Rng) -> (SceneSpec, (usize, usize)) {
        let rows = rng.random_range(12..40);
        let cols = rng.random_range(12..40);
        let spacing = rng.random_range(0.03..0.12);
        let mut grid = ImageGrid::new(rows, cols, spacing);
        grid.center = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
        let (r, c) = (rng.random_range(0..rows), rng.random_range(0..cols));
        let pos = grid.pixel_position(r, c);
        let look = rng.random_range(-180.0..180.0);
        let alpha: f64 = rng.random_range(20.0..90.0);
        let spec = SceneSpec {
            scatterers: vec![Scatterer::isotropic(pos, vec![rng.random_range(0.5..2.0)])],
            aperture: arc_aperture(grid.center, rng.random_range(20.0..60.0), look, alpha / 2.0, 0.5),
            look_bearing_deg: look,
            integration_angle_deg: alpha,
            grid,
            pulse: Pulse {
                half_width: 2.0 * spacing,
                carrier_wavelength: None,
            },
            polarizations: 1,
            seed: 0,
        };
        (spec, (r, c))
    }

    #[test]
    fn single_scatterer_peaks_at_its_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let (spec, (r, c)) = single_scatterer_scene(&mut rng);
            let prof = synthesize_profiles(&spec, spec.grid.spacing / 20.0).unwrap();
            let img = backproject(&prof, &spec, BackprojectOptions::default()).unwrap();
            assert_eq!(argmax(&img), spec.grid.linear_index(r, c));
        }
    }

    #[test]
    fn zero_reflectivity_gives_zero_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (mut spec, _) = single_scatterer_scene(&mut rng);
        spec.scatterers[0].reflectivity = vec![0.0];
        let prof = synthesize_profiles(&spec, 0.01).unwrap();
        let img = backproject(&prof, &spec, BackprojectOptions::default()).unwrap();
        assert!(img.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_scatterers_two_maxima() {
        let mut grid = ImageGrid::new(30, 30, 0.05);
        grid.center = [0.0, 0.0];
        let a = (8, 9);
        let b = (21, 20);
        let spec = SceneSpec {
            scatterers: vec![
                Scatterer::isotropic(grid.pixel_position(a.0, a.1), vec![1.0]),
                Scatterer::isotropic(grid.pixel_position(b.0, b.1), vec![1.0]),
            ],
            aperture: arc_aperture([0.0, 0.0], 30.0, -90.0, 30.0, 0.5),
            look_bearing_deg: -90.0,
            integration_angle_deg: 60.0,
            grid: grid.clone(),
            pulse: Pulse {
                half_width: 0.1,
                carrier_wavelength: None,
            },
            polarizations: 1,
            seed: 0,
        };
        let prof = synthesize_profiles(&spec, 0.0025).unwrap();
        let img = backproject(&prof, &spec, BackprojectOptions::default()).unwrap();
        let is_local_max = |r: usize, c: usize| {
            let v = img.get(grid.linear_index(r, c), 0, 0);
            (r - 1..=r + 1).all(|rr| {
                (c - 1..=c + 1).all(|cc| (rr, cc) == (r, c) || img.get(grid.linear_index(rr, cc), 0, 0) < v)
            })
        };
        assert!(is_local_max(a.0, a.1));
        assert!(is_local_max(b.0, b.1));
    }

    #[test]
    fn backprojection_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (spec, _) = single_scatterer_scene(&mut rng);
        let mut s1 = RangeProfiles::window_for(&spec, 0.01);
        let mut s2 = s1.clone();
        s1.data.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        s2.data.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        for opts in [
            BackprojectOptions::default(),
            BackprojectOptions {
                interpolation: Interpolation::Linear,
                weighting: Weighting::Hann,
            },
        ] {
            let sum = backproject(&s1.add(&s2), &spec, opts).unwrap();
            let parts = backproject(&s1, &spec, opts)
                .unwrap()
                .add(&backproject(&s2, &spec, opts).unwrap());
            for (a, b) in sum.iter().zip(parts.iter()) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn full_sector_multilook_equals_backproject() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (spec, _) = single_scatterer_scene(&mut rng);
        let prof = synthesize_profiles(&spec, 0.005).unwrap();
        let h = spec.integration_angle_deg / 2.0;
        let opts = BackprojectOptions::default();
        let looks = form_multilook(&prof, &spec, &[(-h, h)], opts).unwrap();
        assert_eq!(looks[0], backproject(&prof, &spec, opts).unwrap());
    }

    #[test]
    fn disjoint_sectors_sum_to_the_full_image() {
        let grid = ImageGrid::new(20, 16, 0.05);
        let spec = SceneSpec {
            scatterers: vec![Scatterer::isotropic([0.1, -0.05], vec![1.0, 0.5])],
            aperture: arc_aperture([0.0, 0.0], 30.0, -90.0, 15.0, 0.5),
            look_bearing_deg: -90.0,
            integration_angle_deg: 30.0,
            grid,
            pulse: Pulse {
                half_width: 0.1,
                carrier_wavelength: None,
            },
            polarizations: 2,
            seed: 0,
        };
        let prof = synthesize_profiles(&spec, 0.005).unwrap();
        let opts = BackprojectOptions::default();
        let halves = form_multilook(&prof, &spec, &[(-15.0, 0.0), (0.0, 15.0)], opts).unwrap();
        let full = backproject(&prof, &spec, opts).unwrap();
        let sum = halves[0].add(&halves[1]);
        assert_abs_diff_eq!(sum.sub(&full).frobenius_norm(), 0.0, epsilon = 1e-9 * full.frobenius_norm());
    }

    #[test]
    fn three_sector_example() {
        let s = three_look_sectors(30.0);
        assert_eq!(s, [(-15.0, -5.0), (-5.0, 5.0), (5.0, 15.0)]);
        let grid = ImageGrid::new(10, 10, 0.05);
        let spec = SceneSpec {
            scatterers: vec![Scatterer::isotropic([0.0, 0.0], vec![1.0])],
            aperture: arc_aperture([0.0, 0.0], 30.0, -90.0, 15.0, 0.5),
            look_bearing_deg: -90.0,
            integration_angle_deg: 30.0,
            grid,
            pulse: Pulse {
                half_width: 0.1,
                carrier_wavelength: None,
            },
            polarizations: 1,
            seed: 0,
        };
        let prof = synthesize_profiles(&spec, 0.005).unwrap();
        let looks = form_multilook(&prof, &spec, &s, BackprojectOptions::default()).unwrap();
        assert_eq!(looks.len(), 3);
    }

    #[test]
    fn sector_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (spec, _) = single_scatterer_scene(&mut rng);
        let prof = synthesize_profiles(&spec, 0.01).unwrap();
        let h = spec.integration_angle_deg / 2.0;
        let opts = BackprojectOptions::default();
        assert!(form_multilook(&prof, &spec, &[], opts).is_err());
        assert!(backproject_sector(&prof, &spec, (0.0, 0.0), opts).is_err());
        assert!(backproject_sector(&prof, &spec, (-h - 5.0, h), opts).is_err());
        // a sector thinner than the aperture spacing holds no sample
        assert!(matches!(
            backproject_sector(&prof, &spec, (0.1, 0.2), opts),
            Err(Error::EmptySector { .. })
        ));
    }

    #[test]
    fn sector_selectivity_follows_aspect() {
        let settings = RenderSettings {
            grid: ImageGrid::new(16, 16, 0.05),
            ..RenderSettings::default()
        };
        // narrow lobe facing body bearing −90° + 10°
        let object = ObjectTemplate {
            name: "lobe".into(),
            role: ClassRole::Target,
            scatterers: vec![lobed([0.0, 0.0], [1.0, 1.0, 1.0], -80.0, 4.0, 0.0)],
        };
        let sectors = three_look_sectors(30.0);
        let energy = |aspect: f64| -> Vec<f64> {
            sectors
                .iter()
                .map(|&s| settings.render(&object, aspect, s, &[0]).unwrap().frobenius_norm())
                .collect()
        };
        let e0 = energy(0.0);
        assert!(e0[2] > e0[0] && e0[2] > e0[1], "{e0:?}");
        // rotating the object moves the lobe into the left sector
        let e1 = energy(20.0);
        assert!(e1[0] > e1[1] && e1[0] > e1[2], "{e1:?}");
    }

    #[test]
    fn subimages_use_their_own_segments() {
        let mut grid = ImageGrid::new(16, 16, 0.05);
        grid.subimage = Some(8);
        let spec = SceneSpec {
            scatterers: vec![Scatterer::isotropic(grid.pixel_position(3, 12), vec![1.0])],
            aperture: arc_aperture([0.0, 0.0], 20.0, -90.0, 15.0, 0.5),
            look_bearing_deg: -90.0,
            integration_angle_deg: 30.0,
            grid: grid.clone(),
            pulse: Pulse {
                half_width: 0.1,
                carrier_wavelength: None,
            },
            polarizations: 1,
            seed: 0,
        };
        let prof = synthesize_profiles(&spec, 0.0025).unwrap();
        let img = backproject(&prof, &spec, BackprojectOptions::default()).unwrap();
        assert_eq!(argmax(&img), grid.linear_index(3, 12));
    }

    #[test]
    fn clutter_field_is_normalized_and_seeded() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let f = correlated_field(20, 10, 2.0, &mut a);
        assert_eq!(f, correlated_field(20, 10, 2.0, &mut b));
        let rms = (f.iter().map(|v| v * v).sum::<f64>() / f.len() as f64).sqrt();
        assert_abs_diff_eq!(rms, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn templates_have_three_polarizations() {
        for o in builtin_targets().iter().chain(&builtin_confusers()) {
            assert!(o.scatterers.iter().all(|s| s.reflectivity.len() == 3), "{}", o.name);
        }
        assert_eq!(builtin_confusers(), builtin_confusers());
    }

    #[test]
    fn scene_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (mut spec, _) = single_scatterer_scene(&mut rng);
        spec.integration_angle_deg = 0.0;
        assert!(spec.validate().is_err());
        spec.integration_angle_deg = 30.0;
        spec.aperture.clear();
        assert!(spec.validate().is_err());
    }
}
