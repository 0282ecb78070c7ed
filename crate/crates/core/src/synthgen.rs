//! Procedural paired "sim" and "real" segmentation datasets.
//!
//! Both domains share one geometry distribution: an ellipse (GL), a crescent
//! (EP) and a downward triangle (UV), painted in z-order UV over EP over GL
//! over background. The sim domain uses flat fills and a mild vignette. The
//! real domain uses a shifted palette, per-class textures, per-image
//! illumination and hue gains, and additive Gaussian noise.
//!
//! Each sample has a focus class drawn cyclically, rendered larger, so dominant
//! classes are balanced across the dataset.

use std::path::Path;

use image::{GrayImage, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    mask_histogram, save_manifest, ClassId, ClassSet, DatasetManifest, Domain, SampleRecord, Split,
};
use crate::error::{Error, Result};
use crate::util;

pub const GL: ClassId = 1;
pub const EP: ClassId = 2;
pub const UV: ClassId = 3;

const MAX_ATTEMPTS: usize = 1000;
const MIN_VISIBLE_PIXELS: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimStyle {
    /// Fractional darkening at the image corners.
    pub vignette: f64,
}

impl Default for SimStyle {
    fn default() -> Self {
        Self { vignette: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealStyle {
    /// Gaussian noise standard deviation as a fraction of the 0-255 range.
    pub noise_sigma: f64,
    /// Amplitude of the sinusoidal fill texture, fraction of range.
    pub texture_amplitude: f64,
    /// Per-channel multiplicative gain is drawn from `1 ± hue_shift`.
    pub hue_shift: f64,
    /// Global brightness gain is drawn from `1 ± illumination_shift`.
    pub illumination_shift: f64,
}

impl Default for RealStyle {
    fn default() -> Self {
        Self {
            noise_sigma: 0.06,
            texture_amplitude: 0.12,
            hue_shift: 0.15,
            illumination_shift: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    /// (height, width).
    pub image_size: (u32, u32),
    pub seed: u64,
    /// Presence probability of GL, EP, UV for non-focus shapes; each in (0, 1].
    pub class_presence_probabilities: [f64; 3],
    /// Centre jitter as a fraction of the smaller image side.
    pub position_jitter: f64,
    /// Relative size jitter, sizes are scaled by `1 ± size_jitter`.
    pub size_jitter: f64,
    /// Rotation jitter in radians.
    pub rotation_jitter: f64,
    /// Size multiplier of the focus shape.
    pub focus_scale: f64,
    pub sim_style: SimStyle,
    pub real_style: RealStyle,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            image_size: (64, 64),
            seed: 0,
            class_presence_probabilities: [0.9, 0.9, 0.9],
            position_jitter: 0.06,
            size_jitter: 0.2,
            rotation_jitter: 0.35,
            focus_scale: 1.5,
            sim_style: SimStyle::default(),
            real_style: RealStyle::default(),
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if h < 8 || w < 8 {
            return Err(Error::config("scene.image_size", "both sides must be at least 8"));
        }
        if self.class_presence_probabilities.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(Error::config(
                "scene.class_presence_probabilities",
                "each probability must lie in (0, 1]",
            ));
        }
        let non_negative = [
            ("scene.position_jitter", self.position_jitter),
            ("scene.rotation_jitter", self.rotation_jitter),
            ("scene.real_style.noise_sigma", self.real_style.noise_sigma),
            ("scene.real_style.texture_amplitude", self.real_style.texture_amplitude),
        ];
        for (field, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be a non-negative number"));
            }
        }
        let unit = [
            ("scene.size_jitter", self.size_jitter),
            ("scene.sim_style.vignette", self.sim_style.vignette),
            ("scene.real_style.hue_shift", self.real_style.hue_shift),
            ("scene.real_style.illumination_shift", self.real_style.illumination_shift),
        ];
        for (field, v) in unit {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(field, "must lie in [0, 1)"));
            }
        }
        if !(self.focus_scale >= 1.0 && self.focus_scale.is_finite()) {
            return Err(Error::config("scene.focus_scale", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub rotation: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.rotation.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.semi_major).powi(2) + (v / self.semi_minor).powi(2) <= 1.0
    }
}

/// A disk with a smaller, offset disk removed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crescent {
    pub cx: f64,
    pub cy: f64,
    pub outer_radius: f64,
    pub inner_cx: f64,
    pub inner_cy: f64,
    pub inner_radius: f64,
}

impl Crescent {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let outer = (x - self.cx).hypot(y - self.cy) <= self.outer_radius;
        let inner = (x - self.inner_cx).hypot(y - self.inner_cy) <= self.inner_radius;
        outer && !inner
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triangle {
    pub vertices: [(f64, f64); 3],
}

impl Triangle {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let edge = |(ax, ay): (f64, f64), (bx, by): (f64, f64)| (bx - ax) * (y - ay) - (by - ay) * (x - ax);
        let [a, b, c] = self.vertices;
        let (e0, e1, e2) = (edge(a, b), edge(b, c), edge(c, a));
        (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0) || (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0)
    }
}

/// Shape parameters of one scene, in pixel coordinates. Absent shapes are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGeometry {
    pub width: u32,
    pub height: u32,
    pub focus: ClassId,
    pub glottis: Option<Ellipse>,
    pub epiglottis: Option<Crescent>,
    pub uvula: Option<Triangle>,
}

impl SceneGeometry {
    /// Class at a pixel centre, honouring the z-order.
    pub fn class_at(&self, x: f64, y: f64) -> ClassId {
        if self.uvula.is_some_and(|t| t.contains(x, y)) {
            UV
        } else if self.epiglottis.is_some_and(|c| c.contains(x, y)) {
            EP
        } else if self.glottis.is_some_and(|e| e.contains(x, y)) {
            GL
        } else {
            0
        }
    }

    pub fn rasterize(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            image::Luma([self.class_at(f64::from(x) + 0.5, f64::from(y) + 0.5)])
        })
    }
}

/// Draws a scene whose `focus` shape is enlarged. Re-samples until every
/// present shape is visible and, when enlarged, the focus class dominates.
pub fn sample_geometry(spec: &SceneSpec, focus: ClassId, rng: &mut ChaCha8Rng) -> Result<SceneGeometry> {
    let (h, w) = spec.image_size;
    let side = f64::from(h.min(w));
    for _ in 0..MAX_ATTEMPTS {
        let scale_of = |class: ClassId, j: f64| (1.0 + j) * if class == focus { spec.focus_scale } else { 1.0 };
        let pos = spec.position_jitter * side;

        let present: Vec<bool> = [GL, EP, UV]
            .iter()
            .zip(spec.class_presence_probabilities)
            .map(|(&c, p)| c == focus || p >= 1.0 || rng.random_bool(p))
            .collect();

        let mut jitter = |amount: f64| if amount > 0.0 { rng.random_range(-amount..=amount) } else { 0.0 };
        let gs = scale_of(GL, jitter(spec.size_jitter));
        let glottis = Ellipse {
            cx: 0.5 * f64::from(w) + jitter(pos),
            cy: 0.70 * f64::from(h) + jitter(pos),
            semi_major: 0.13 * side * gs,
            semi_minor: 0.075 * side * gs,
            rotation: jitter(spec.rotation_jitter),
        };
        let es = scale_of(EP, jitter(spec.size_jitter));
        let (ecx, ecy) = (0.5 * f64::from(w) + jitter(pos), 0.47 * f64::from(h) + jitter(pos));
        let tilt = jitter(spec.rotation_jitter);
        let offset = 0.075 * side * es;
        let epiglottis = Crescent {
            cx: ecx,
            cy: ecy,
            outer_radius: 0.14 * side * es,
            inner_cx: ecx + offset * tilt.sin(),
            inner_cy: ecy + offset * tilt.cos(),
            inner_radius: 0.12 * side * es,
        };
        let us = scale_of(UV, jitter(spec.size_jitter));
        let (ucx, ucy) = (0.5 * f64::from(w) + jitter(pos), 0.22 * f64::from(h) + jitter(pos));
        let (half_base, height) = (0.12 * side * us, 0.26 * side * us);
        let rot = jitter(spec.rotation_jitter);
        let (s, c) = rot.sin_cos();
        let place = |dx: f64, dy: f64| (ucx + dx * c - dy * s, ucy + dx * s + dy * c);
        let uvula = Triangle {
            vertices: [
                place(-half_base, -height / 3.0),
                place(half_base, -height / 3.0),
                place(0.0, 2.0 * height / 3.0),
            ],
        };

        let geometry = SceneGeometry {
            width: w,
            height: h,
            focus,
            glottis: present[0].then_some(glottis),
            epiglottis: present[1].then_some(epiglottis),
            uvula: present[2].then_some(uvula),
        };
        let mut counts = [0u64; 4];
        for &v in geometry.rasterize().as_raw() {
            counts[usize::from(v)] += 1;
        }
        let visible = [GL, EP, UV]
            .iter()
            .zip(&present)
            .all(|(&c, &p)| !p || counts[usize::from(c)] >= MIN_VISIBLE_PIXELS);
        let f = usize::from(focus);
        let dominant = spec.focus_scale <= 1.0 || (1..4).all(|c| c == f || counts[c] < counts[f]);
        if visible && dominant {
            return Ok(geometry);
        }
    }
    Err(Error::Argument(format!(
        "scene spec produced no valid geometry in {MAX_ATTEMPTS} attempts"
    )))
}

type Palette = [[f64; 3]; 4];

const SIM_PALETTE: Palette = [
    [196.0, 96.0, 92.0],
    [46.0, 38.0, 58.0],
    [236.0, 206.0, 160.0],
    [238.0, 128.0, 144.0],
];

const REAL_PALETTE: Palette = [
    [150.0, 72.0, 78.0],
    [74.0, 40.0, 46.0],
    [206.0, 150.0, 134.0],
    [190.0, 96.0, 110.0],
];

/// An image/mask pair fresh from the renderer.
#[derive(Debug, Clone)]
pub struct RenderedSample {
    pub image: RgbImage,
    pub mask: GrayImage,
    pub geometry: SceneGeometry,
}

/// Paints `geometry` in the style of `domain`.
pub fn render_sample(spec: &SceneSpec, domain: Domain, geometry: SceneGeometry, rng: &mut ChaCha8Rng) -> RenderedSample {
    let mask = geometry.rasterize();
    let (w, h) = (geometry.width, geometry.height);
    let (cx, cy) = (f64::from(w) / 2.0, f64::from(h) / 2.0);
    let max_r2 = cx * cx + cy * cy;
    let image = match domain {
        Domain::SourceSim => {
            let v = spec.sim_style.vignette;
            RgbImage::from_fn(w, h, |x, y| {
                let color = SIM_PALETTE[usize::from(mask.get_pixel(x, y).0[0])];
                let (dx, dy) = (f64::from(x) + 0.5 - cx, f64::from(y) + 0.5 - cy);
                let gain = 1.0 - v * (dx * dx + dy * dy) / max_r2;
                Rgb(color.map(|c| (c * gain).round().clamp(0.0, 255.0) as u8))
            })
        }
        Domain::TargetReal => {
            let style = &spec.real_style;
            let sym = |rng: &mut ChaCha8Rng, a: f64| if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };
            let illumination = 1.0 + sym(rng, style.illumination_shift);
            let gains: [f64; 3] = std::array::from_fn(|_| illumination * (1.0 + sym(rng, style.hue_shift)));
            let textures: Vec<(f64, f64, f64)> = (0..4)
                .map(|_| {
                    let freq = rng.random_range(0.2..0.6);
                    let angle = rng.random_range(0.0..std::f64::consts::TAU);
                    (freq * angle.cos(), freq * angle.sin(), rng.random_range(0.0..std::f64::consts::TAU))
                })
                .collect();
            let noise = Normal::new(0.0, (style.noise_sigma * 255.0).max(f64::MIN_POSITIVE)).expect("finite sigma");
            let mut img = RgbImage::new(w, h);
            for y in 0..h {
                for x in 0..w {
                    let class = usize::from(mask.get_pixel(x, y).0[0]);
                    let (fx, fy, phase) = textures[class];
                    let texture = style.texture_amplitude * 255.0 * (fx * f64::from(x) + fy * f64::from(y) + phase).sin();
                    let mut px = [0u8; 3];
                    for c in 0..3 {
                        let n = if style.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
                        px[c] = ((REAL_PALETTE[class][c] + texture) * gains[c] + n).round().clamp(0.0, 255.0) as u8;
                    }
                    img.put_pixel(x, y, Rgb(px));
                }
            }
            img
        }
    };
    RenderedSample { image, mask, geometry }
}

fn sample_rng(spec: &SceneSpec, domain: Domain, index: usize) -> ChaCha8Rng {
    let tag = match domain {
        Domain::SourceSim => format!("sim-{index}"),
        Domain::TargetReal => format!("real-{index}"),
    };
    ChaCha8Rng::seed_from_u64(util::derive_seed(spec.seed, &tag))
}

fn generate_domain(spec: &SceneSpec, domain: Domain, count: usize, dir: &Path) -> Result<DatasetManifest> {
    let class_set = ClassSet::oropharyngeal();
    let (prefix, name) = match domain {
        Domain::SourceSim => ("sim", "synthetic-sim"),
        Domain::TargetReal => ("real", "synthetic-real"),
    };
    let mut manifest = DatasetManifest::empty(name, domain, Split::Train, class_set.clone());
    for index in 0..count {
        let mut rng = sample_rng(spec, domain, index);
        let focus = [GL, EP, UV][index % 3];
        let geometry = sample_geometry(spec, focus, &mut rng)?;
        let rendered = render_sample(spec, domain, geometry, &mut rng);
        let sample_id = format!("{prefix}_{index:04}");
        let image_path = dir.join("images").join(format!("{sample_id}.png"));
        let mask_path = dir.join("masks").join(format!("{sample_id}.png"));
        util::write_png(&image_path, &rendered.image)?;
        util::write_png(&mask_path, &rendered.mask)?;
        let class_histogram = mask_histogram(&rendered.mask, &class_set).expect("renderer emits valid ids");
        manifest.samples.push(SampleRecord {
            sample_id,
            image_path,
            mask_path,
            domain,
            class_histogram,
        });
    }
    save_manifest(&manifest, &dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Writes `out_dir/sim` and `out_dir/real`, each with images, masks and a manifest.
pub fn generate_domain_pair(
    spec: &SceneSpec,
    n_sim: usize,
    n_real: usize,
    out_dir: &Path,
) -> Result<(DatasetManifest, DatasetManifest)> {
    spec.validate()?;
    if n_sim == 0 || n_real == 0 {
        return Err(Error::Argument("sample counts must be positive".into()));
    }
    let sim = generate_domain(spec, Domain::SourceSim, n_sim, &out_dir.join("sim"))?;
    let real = generate_domain(spec, Domain::TargetReal, n_real, &out_dir.join("real"))?;
    Ok((sim, real))
}
