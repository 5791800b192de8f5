//! Procedural face corpus with exact ground truth.
//!
//! Each face is a bright ellipse on a darker background with a distinct
//! textured mark planted at every landmark, so that patch descriptors can
//! tell a correct landmark from a displaced one. Options replace the chin
//! mark with white noise, or add a gender-dependent stripe cue there.
//! Rendering is a pure function of the face parameters; images are
//! quantised to 8 bits so that files on disk and in-memory renders agree.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::confidence::ImageSource;
use crate::dataio::{write_annotations, AnnotationFile, AnnotationRecord, Gender, Pose, Source};
use crate::image::GrayImage;
use crate::rng;
use crate::{Error, Landmark, LandmarkSet, Point, Result};

/// Landmark positions as fractions of the face square; the eyes match the
/// canonical canvas layout.
pub const LAYOUT: [(Landmark, f64, f64); 7] = [
    (Landmark::EyeL, 0.30, 0.40),
    (Landmark::EyeR, 0.70, 0.40),
    (Landmark::NoseC, 0.50, 0.58),
    (Landmark::MouthL, 0.35, 0.76),
    (Landmark::MouthC, 0.50, 0.78),
    (Landmark::MouthR, 0.65, 0.76),
    (Landmark::ChinC, 0.50, 0.94),
];

/// Radius of the white-noise disc replacing the chin mark, in face sizes.
pub const NOISE_CHIN_RADIUS: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_faces: usize,
    pub seed: u64,
    pub image_size: usize,
    /// Face square side range in pixels.
    pub face_size_min: f64,
    pub face_size_max: f64,
    /// σ of yaw, pitch and roll in degrees. Roll rotates the face.
    pub pose_sigma_deg: f64,
    /// σ of per-landmark shape jitter, in face sizes.
    pub shape_jitter: f64,
    /// σ of additive pixel noise, in grey levels.
    pub pixel_noise: f64,
    pub noise_chin: bool,
    pub gender_cue: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_faces: 500,
            seed: 0,
            image_size: 256,
            face_size_min: 110.0,
            face_size_max: 150.0,
            pose_sigma_deg: 8.0,
            shape_jitter: 0.015,
            pixel_noise: 3.0,
            noise_chin: false,
            gender_cue: false,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("synth: {m}")));
        if self.image_size < 32 {
            return bad("image_size must be at least 32");
        }
        if !(self.face_size_min > 0.0 && self.face_size_min <= self.face_size_max) {
            return bad("face size range must satisfy 0 < min <= max");
        }
        if self.face_size_max * 1.2 > self.image_size as f64 {
            return bad("faces must fit inside the image");
        }
        if !(self.pose_sigma_deg >= 0.0 && self.shape_jitter >= 0.0 && self.pixel_noise >= 0.0) {
            return bad("noise levels must be >= 0");
        }
        Ok(())
    }
}

/// Everything needed to render one face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceParams {
    pub face_id: String,
    pub seed: u64,
    pub image_size: usize,
    pub face_size: f64,
    pub center: Point,
    /// Roll in radians.
    pub roll: f64,
    pub pose: Pose,
    pub gender: Gender,
    pub landmarks: LandmarkSet,
    pub contrast: f64,
    pub brightness: f64,
    pub pixel_noise: f64,
    pub noise_chin: bool,
    pub gender_cue: bool,
}

fn mark_phase(l: Landmark) -> (f64, f64) {
    // (angular phase, ring frequency in cycles per face size)
    match l {
        Landmark::EyeL => (0.0, 18.0),
        Landmark::EyeR => (1.1, 20.0),
        Landmark::NoseC => (2.3, 16.0),
        Landmark::MouthL => (3.4, 22.0),
        Landmark::MouthC => (4.2, 17.0),
        Landmark::MouthR => (5.0, 21.0),
        Landmark::ChinC => (5.8, 19.0),
    }
}

/// The planted mark at local coordinates `(u, v)` in face sizes.
fn mark(l: Landmark, u: f64, v: f64) -> f64 {
    let (phase, freq) = mark_phase(l);
    let r2 = u * u + v * v;
    let r = r2.sqrt();
    let theta = v.atan2(u);
    let core = -90.0 * (-r2 / (2.0 * 0.022 * 0.022)).exp();
    let env = (-r2 / (2.0 * 0.06 * 0.06)).exp();
    let rings = 55.0 * env * (TAU * freq * r).cos() * (0.6 + 0.4 * (theta + phase).cos());
    let lobe = 45.0 * (-((u - 0.035 * phase.cos()).powi(2) + (v - 0.035 * phase.sin()).powi(2)) / (2.0 * 0.015 * 0.015)).exp();
    core + rings + lobe
}

impl FaceParams {
    fn draw(cfg: &SynthConfig, index: usize) -> Self {
        let face_id = format!("synth_{index:05}");
        let seed = rng::id_seed(cfg.seed, &face_id);
        let mut r = rng::seeded(seed);
        let deg = Normal::new(0.0, cfg.pose_sigma_deg.max(0.0)).expect("finite sigma");
        let pose = Pose {
            yaw: deg.sample(&mut r),
            pitch: deg.sample(&mut r),
            roll: deg.sample(&mut r),
        };
        let face_size = r.random_range(cfg.face_size_min..=cfg.face_size_max);
        let size = cfg.image_size as f64;
        let slack = ((size - 1.2 * face_size) / 2.0).max(0.0);
        let center = Point::new(
            size / 2.0 + r.random_range(-slack..=slack) * 0.5,
            size / 2.0 + r.random_range(-slack..=slack) * 0.5,
        );
        let roll = pose.roll.to_radians();
        let gender = if r.random_bool(0.5) { Gender::Female } else { Gender::Male };
        let jitter = Normal::new(0.0, cfg.shape_jitter.max(0.0)).expect("finite sigma");
        let yaw_shift = 0.12 * pose.yaw.to_radians().sin();
        let (sin, cos) = roll.sin_cos();
        let landmarks = LandmarkSet::from_pairs(LAYOUT.iter().map(|&(l, fx, fy)| {
            let eye = matches!(l, Landmark::EyeL | Landmark::EyeR);
            let (jx, jy) = if eye { (0.0, 0.0) } else { (jitter.sample(&mut r), jitter.sample(&mut r)) };
            let shift = if eye { 0.0 } else { yaw_shift };
            let u = (fx - 0.5 + jx + shift) * face_size;
            let v = (fy - 0.5 + jy) * face_size;
            (l, Point::new(center.x + cos * u - sin * v, center.y + sin * u + cos * v))
        }));
        Self {
            face_id,
            seed,
            image_size: cfg.image_size,
            face_size,
            center,
            roll,
            pose,
            gender,
            landmarks,
            contrast: r.random_range(0.8..=1.2),
            brightness: r.random_range(-15.0..=15.0),
            pixel_noise: cfg.pixel_noise,
            noise_chin: cfg.noise_chin,
            gender_cue: cfg.gender_cue,
        }
    }

    /// Renders the face as an 8-bit grey image.
    pub fn render(&self) -> GrayImage {
        let n = self.image_size;
        let f = self.face_size;
        let (sin, cos) = self.roll.sin_cos();
        // source -> face-local coordinates in face sizes, unrotated
        let local = |x: f64, y: f64, o: Point| {
            let (dx, dy) = (x - o.x, y - o.y);
            ((cos * dx + sin * dy) / f, (-sin * dx + cos * dy) / f)
        };
        let mut r = rng::sub_rng(self.seed, 1);
        let waves: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| (r.random_range(0.5..2.5), r.random_range(0.0..TAU), r.random_range(0.0..TAU)))
            .collect();
        let noise = Normal::new(0.0, self.pixel_noise.max(0.0)).expect("finite sigma");
        let white = Normal::new(0.0, 40.0).expect("finite sigma");
        let chin = self.landmarks.get(Landmark::ChinC).expect("chin present");
        let face_centre = Point::new(self.center.x, self.center.y);
        let mut data = Vec::with_capacity(n * n);
        for y in 0..n {
            for x in 0..n {
                let (xf, yf) = (x as f64, y as f64);
                let (u, v) = local(xf, yf, face_centre);
                let e = (u / 0.42).powi(2) + ((v - 0.05) / 0.52).powi(2);
                let inside = 1.0 / (1.0 + ((e - 1.0) * 12.0).exp());
                let mut val = 70.0 + 80.0 * inside;
                for &(k, a, b) in &waves {
                    val += 8.0 * (k * PI * (u * a.cos() + v * a.sin()) + b).cos();
                }
                for &(l, _, _) in &LAYOUT {
                    if l == Landmark::ChinC && self.noise_chin {
                        continue;
                    }
                    let p = self.landmarks.get(l).expect("layout landmark");
                    let (lu, lv) = local(xf, yf, p);
                    if lu.abs() < 0.25 && lv.abs() < 0.25 {
                        val += mark(l, lu, lv);
                    }
                }
                let (cu, cv) = local(xf, yf, chin);
                let chin_r2 = cu * cu + cv * cv;
                if self.noise_chin && chin_r2 < NOISE_CHIN_RADIUS * NOISE_CHIN_RADIUS {
                    val = 128.0 + white.sample(&mut r);
                }
                if self.gender_cue && chin_r2 < 0.12 * 0.12 {
                    let w = if self.gender == Gender::Female { cv } else { cu };
                    val += 35.0 * (TAU * w / 0.03).sin();
                }
                val = val * self.contrast + self.brightness + noise.sample(&mut r);
                data.push(val.round().clamp(0.0, 255.0));
            }
        }
        GrayImage::new(n, n, data).expect("sized buffer")
    }

    pub fn record(&self) -> AnnotationRecord {
        AnnotationRecord {
            face_id: self.face_id.clone(),
            image_path: format!("images/{}.png", self.face_id),
            landmarks: self.landmarks,
            pose: Some(self.pose),
            source: Source::Synthetic,
            gender: Some(self.gender),
        }
    }
}

/// A generated corpus. Images are rendered on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub faces: Vec<FaceParams>,
}

impl SynthCorpus {
    pub fn generate(config: &SynthConfig) -> Result<Self> {
        config.validate()?;
        let faces = (0..config.n_faces).map(|i| FaceParams::draw(config, i)).collect();
        Ok(Self {
            config: config.clone(),
            faces,
        })
    }

    pub fn records(&self) -> Vec<AnnotationRecord> {
        self.faces.iter().map(FaceParams::record).collect()
    }

    pub fn images(&self) -> SynthImages {
        SynthImages {
            faces: self.faces.iter().map(|f| (f.face_id.clone(), f.clone())).collect(),
        }
    }

    pub fn annotation_file(&self) -> AnnotationFile {
        let mut file = AnnotationFile::new(self.records());
        file.synthetic = true;
        file
    }

    /// Writes `annotations.json` and `images/<face_id>.png` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let images = dir.join("images");
        std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        let written: Vec<Result<()>> = {
            use rayon::prelude::*;
            self.faces
                .par_iter()
                .map(|f| {
                    let img = f.render();
                    let bytes: Vec<u8> = img.data().iter().map(|&v| v as u8).collect();
                    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, bytes)
                        .expect("sized buffer");
                    let path = dir.join(f.record().image_path);
                    buf.save(&path).map_err(|e| {
                        Error::io(&path, std::io::Error::other(e.to_string()))
                    })
                })
                .collect()
        };
        written.into_iter().collect::<Result<()>>()?;
        write_annotations(&dir.join("annotations.json"), &self.annotation_file())?;
        Ok(())
    }
}

/// Renders synthetic faces by id.
#[derive(Debug, Clone, Default)]
pub struct SynthImages {
    faces: HashMap<String, FaceParams>,
}

impl ImageSource for SynthImages {
    fn image(&self, record: &AnnotationRecord) -> Result<GrayImage> {
        self.faces
            .get(&record.face_id)
            .map(FaceParams::render)
            .ok_or_else(|| Error::InvalidArgument(format!("no synthetic face `{}`", record.face_id)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> SynthConfig {
        SynthConfig {
            n_faces: n,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = SynthCorpus::generate(&small(3)).unwrap();
        let b = SynthCorpus::generate(&small(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.faces[1].render(), b.faces[1].render());
    }

    #[test]
    fn landmarks_inside_image_and_eyes_match_face_size() {
        let c = SynthCorpus::generate(&small(50)).unwrap();
        for f in &c.faces {
            for (_, p) in f.landmarks.iter() {
                assert!(p.x > 0.0 && p.y > 0.0 && p.x < 256.0 && p.y < 256.0);
            }
            let (l, r) = f.landmarks.eyes().unwrap();
            assert!((l.distance(r) - 0.4 * f.face_size).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_corpus() {
        let c = SynthCorpus::generate(&small(0)).unwrap();
        assert!(c.records().is_empty());
    }

    #[test]
    fn noise_chin_is_white() {
        let cfg = SynthConfig {
            noise_chin: true,
            pixel_noise: 0.0,
            ..small(1)
        };
        let f = &SynthCorpus::generate(&cfg).unwrap().faces[0];
        let img = f.render();
        let c = f.landmarks.get(Landmark::ChinC).unwrap();
        let rad = 0.5 * NOISE_CHIN_RADIUS * f.face_size;
        let mut vals = Vec::new();
        let mut horiz = Vec::new();
        for y in (c.y - rad) as usize..(c.y + rad) as usize {
            for x in (c.x - rad) as usize..(c.x + rad) as usize {
                vals.push(img.get(x, y));
                horiz.push((img.get(x, y), img.get(x + 1, y)));
            }
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!((var.sqrt() - 40.0 * f.contrast).abs() < 8.0, "sd {}", var.sqrt());
        let cov = horiz.iter().map(|(a, b)| (a - mean) * (b - mean)).sum::<f64>() / horiz.len() as f64;
        assert!((cov / var).abs() < 0.2, "lag-1 correlation {}", cov / var);
    }
}
