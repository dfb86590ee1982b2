//! Synthetic feature sequences with appearance-confusable distractors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TargetBox;
use crate::grid::Grid3D;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Motion {
    Static,
    Linear,
    /// Linear target; every distractor path comes within
    /// [`SceneConfig::crossing_offset`] of the target at some frame.
    Crossing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub frames: usize,
    pub distractors: usize,
    pub motion: Motion,
    /// Standard deviation (cells) of the Gaussian opacity profile with
    /// which objects are blended over the background.
    pub blob_sigma: f64,
    pub target_amplitude: f64,
    pub distractor_amplitude: (f64, f64),
    /// Cosine similarity between distractor and target signatures (and
    /// between their textures).
    pub distractor_similarity: (f64, f64),
    /// Norm of each texture sample relative to the unit signature.
    pub texture_strength: f64,
    /// Total rotation (radians) of the target signature over the sequence.
    pub appearance_drift: f64,
    /// Standard deviation of the static background texture.
    pub background_sigma: f64,
    /// Standard deviation of the per-frame noise.
    pub noise_sigma: f64,
    /// Cells per frame.
    pub target_speed: (f64, f64),
    pub distractor_speed: (f64, f64),
    /// Per-frame velocity jitter of the target.
    pub motion_jitter: f64,
    /// Closest the target center gets to the border, in cells.
    pub margin: f64,
    /// Window (as fractions of the sequence) in which crossings happen.
    pub crossing_window: (f64, f64),
    /// Distance (cells) between target and distractor at the crossing frame.
    pub crossing_offset: (f64, f64),
    pub stride: f64,
    /// Side of the square ground-truth box, in pixels.
    pub box_size: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 18,
            height: 18,
            channels: 8,
            frames: 50,
            distractors: 2,
            motion: Motion::Crossing,
            blob_sigma: 1.0,
            target_amplitude: 4.0,
            distractor_amplitude: (4.0, 4.8),
            distractor_similarity: (0.92, 0.97),
            texture_strength: 1.0,
            appearance_drift: 0.8,
            background_sigma: 0.5,
            noise_sigma: 0.1,
            target_speed: (0.6, 1.0),
            distractor_speed: (0.8, 1.3),
            motion_jitter: 0.03,
            margin: 2.5,
            crossing_window: (0.3, 0.7),
            crossing_offset: (1.5, 2.5),
            stride: 16.0,
            box_size: 64.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if self.width == 0 || self.height == 0 || self.channels < 2 || self.frames == 0 {
            return bad("grid must be non-empty with at least two channels and one frame");
        }
        if 2.0 * self.margin >= (self.width.min(self.height) as f64) - 1.0 {
            return bad("margin leaves no room for the target");
        }
        let (slo, shi) = self.distractor_similarity;
        if !(0.9..=1.0).contains(&slo) || !(slo..=1.0).contains(&shi) {
            return bad("distractor similarity must be an ordered range inside [0.9, 1]");
        }
        for (name, (lo, hi)) in [
            ("distractor amplitude", self.distractor_amplitude),
            ("target speed", self.target_speed),
            ("distractor speed", self.distractor_speed),
            ("crossing window", self.crossing_window),
            ("crossing offset", self.crossing_offset),
        ] {
            if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
                return bad(&format!("{name} must be an ordered nonnegative range"));
            }
        }
        if self.crossing_window.1 > 1.0 {
            return bad("crossing window must lie in [0, 1]");
        }
        let nonneg = [
            self.target_amplitude,
            self.texture_strength,
            self.appearance_drift,
            self.background_sigma,
            self.noise_sigma,
            self.motion_jitter,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("amplitudes, drift and noise levels must be finite and nonnegative");
        }
        if !(self.blob_sigma > 0.0 && self.stride > 0.0 && self.box_size > 0.0) {
            return bad("blob sigma, stride and box size must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectRole {
    Target,
    Distractor,
}

/// One rendered object: grid-coordinate centers and feature signature per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectTrack {
    pub role: ObjectRole,
    pub centers: Vec<[f64; 2]>,
    pub signatures: Vec<Vec<f64>>,
    /// Surface pattern on the `(2R+1)^2` offsets around the center,
    /// row-major, channel-innermost; added to the signature.
    pub texture: Vec<f64>,
    pub amplitude: f64,
    pub sigma: f64,
}

/// Half-width `R` of the object texture patch, in cells.
pub const TEXTURE_RADIUS: usize = 3;

impl ObjectTrack {
    /// Bilinearly sampled texture at offset `(ox, oy)` from the center;
    /// zero outside the patch.
    fn texture_at(&self, ox: f64, oy: f64, channels: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let side = 2 * TEXTURE_RADIUS + 1;
        if self.texture.len() != side * side * channels {
            return;
        }
        let (fx, fy) = (ox + TEXTURE_RADIUS as f64, oy + TEXTURE_RADIUS as f64);
        let (x0, y0) = (fx.floor(), fy.floor());
        let (tx, ty) = (fx - x0, fy - y0);
        for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
            for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
                let (px, py) = (x0 as isize + dx, y0 as isize + dy);
                if px < 0 || py < 0 || px >= side as isize || py >= side as isize {
                    continue;
                }
                let base = (py as usize * side + px as usize) * channels;
                for (c, v) in out.iter_mut().enumerate() {
                    *v += wx * wy * self.texture[base + c];
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSequence {
    pub frames: Vec<Grid3D<f32>>,
    pub gt_boxes: Vec<TargetBox>,
    /// Target first, then distractors.
    pub tracks: Vec<ObjectTrack>,
    pub stride: f64,
    pub seed: u64,
}

impl SyntheticSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames.first().map_or(0, |f| f.width())
    }

    pub fn height(&self) -> usize {
        self.frames.first().map_or(0, |f| f.height())
    }

    pub fn channels(&self) -> usize {
        self.frames.first().map_or(0, |f| f.channels())
    }

    /// Frames converted to another scalar type.
    pub fn frames_as<T: crate::scalar::Scalar>(&self) -> Vec<Grid3D<T>> {
        self.frames.iter().map(|f| f.cast()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() || self.frames.len() != self.gt_boxes.len() {
            return Err(Error::shape("need one ground-truth box per frame"));
        }
        let first = &self.frames[0];
        if self.frames.iter().any(|f| !f.same_shape(first)) {
            return Err(Error::shape("frames differ in shape"));
        }
        if self.tracks.iter().any(|t| t.centers.len() != self.frames.len()) {
            return Err(Error::shape("object tracks must cover every frame"));
        }
        for b in &self.gt_boxes {
            if b.center_cell(self.stride, first.width(), first.height()).is_none() {
                return Err(Error::AnnotationOutOfCrop);
            }
        }
        Ok(())
    }

    /// Smallest target-to-distractor center distance over all frames, in cells.
    pub fn min_distractor_distance(&self) -> Option<f64> {
        let target = self.tracks.iter().find(|t| t.role == ObjectRole::Target)?;
        self.tracks
            .iter()
            .filter(|t| t.role == ObjectRole::Distractor)
            .flat_map(|d| {
                d.centers
                    .iter()
                    .zip(&target.centers)
                    .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
            })
            .min_by(|a, b| a.total_cmp(b))
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Random unit vector orthogonal to every vector in `basis` (assumed orthonormal).
fn orthogonal_unit(rng: &mut ChaCha8Rng, n: usize, basis: &[&[f64]]) -> Vec<f64> {
    loop {
        let mut v = normal_vec(rng, n);
        for b in basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b.iter()).for_each(|(x, y)| *x -= p * y);
        }
        if dot(&v, &v) > 1e-6 {
            normalize(&mut v);
            return v;
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo < hi {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn reflect(v: &mut f64, vel: &mut f64, lo: f64, hi: f64) {
    if *v < lo {
        *v = 2.0 * lo - *v;
        *vel = vel.abs();
    } else if *v > hi {
        *v = 2.0 * hi - *v;
        *vel = -vel.abs();
    }
    *v = v.clamp(lo, hi);
}

fn random_heading(rng: &mut ChaCha8Rng, speed: f64) -> [f64; 2] {
    let a = rng.gen_range(0.0..std::f64::consts::TAU);
    [speed * a.cos(), speed * a.sin()]
}

/// Target path that bounces inside the margins.
fn target_path(rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> Vec<[f64; 2]> {
    let (lo_x, hi_x) = (cfg.margin, cfg.width as f64 - 1.0 - cfg.margin);
    let (lo_y, hi_y) = (cfg.margin, cfg.height as f64 - 1.0 - cfg.margin);
    let mut p = [rng.gen_range(lo_x..hi_x), rng.gen_range(lo_y..hi_y)];
    if cfg.motion == Motion::Static {
        return vec![p; cfg.frames];
    }
    let speed = uniform(rng, cfg.target_speed);
    let mut v = random_heading(rng, speed);
    let mut out = Vec::with_capacity(cfg.frames);
    for _ in 0..cfg.frames {
        out.push(p);
        for vi in &mut v {
            let j: f64 = StandardNormal.sample(rng);
            *vi += cfg.motion_jitter * j;
        }
        p[0] += v[0];
        p[1] += v[1];
        reflect(&mut p[0], &mut v[0], lo_x, hi_x);
        reflect(&mut p[1], &mut v[1], lo_y, hi_y);
    }
    out
}

fn distractor_path(rng: &mut ChaCha8Rng, cfg: &SceneConfig, target: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let speed = uniform(rng, cfg.distractor_speed);
    let v = random_heading(rng, speed);
    match cfg.motion {
        Motion::Static => {
            let p = [rng.gen_range(0.0..cfg.width as f64 - 1.0), rng.gen_range(0.0..cfg.height as f64 - 1.0)];
            vec![p; cfg.frames]
        }
        Motion::Linear => {
            let p0 = [rng.gen_range(0.0..cfg.width as f64 - 1.0), rng.gen_range(0.0..cfg.height as f64 - 1.0)];
            (0..cfg.frames)
                .map(|t| [p0[0] + v[0] * t as f64, p0[1] + v[1] * t as f64])
                .collect()
        }
        Motion::Crossing => {
            let last = cfg.frames.saturating_sub(1) as f64;
            let (a, b) = cfg.crossing_window;
            let tc = ((a + (b - a) * rng.gen::<f64>()) * last).round() as usize;
            let tc = tc.min(cfg.frames - 1);
            let dist = uniform(rng, cfg.crossing_offset);
            let off = random_heading(rng, dist);
            let pc = [target[tc][0] + off[0], target[tc][1] + off[1]];
            (0..cfg.frames)
                .map(|t| {
                    let dt = t as f64 - tc as f64;
                    [pc[0] + v[0] * dt, pc[1] + v[1] * dt]
                })
                .collect()
        }
    }
}

/// Renders a sequence; identical `(cfg, seed)` give bit-identical output.
pub fn generate_sequence(cfg: &SceneConfig, seed: u64) -> Result<SyntheticSequence> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.channels;
    let (w, h) = (cfg.width, cfg.height);

    let mut u = normal_vec(&mut rng, d);
    normalize(&mut u);
    let drift_dir = orthogonal_unit(&mut rng, d, &[&u]);
    let last = cfg.frames.saturating_sub(1).max(1) as f64;
    let target_sigs: Vec<Vec<f64>> = (0..cfg.frames)
        .map(|t| {
            let theta = cfg.appearance_drift * t as f64 / last;
            u.iter().zip(&drift_dir).map(|(a, b)| theta.cos() * a + theta.sin() * b).collect()
        })
        .collect();
    let side = 2 * TEXTURE_RADIUS + 1;
    let tex_scale = cfg.texture_strength / (d as f64).sqrt();
    let texture: Vec<f64> = normal_vec(&mut rng, side * side * d).into_iter().map(|v| v * tex_scale).collect();
    let centers = target_path(&mut rng, cfg);
    let mut tracks = vec![ObjectTrack {
        role: ObjectRole::Target,
        centers,
        signatures: target_sigs,
        texture: texture.clone(),
        amplitude: cfg.target_amplitude,
        sigma: cfg.blob_sigma,
    }];
    for _ in 0..cfg.distractors {
        let cos = uniform(&mut rng, cfg.distractor_similarity);
        let eta = orthogonal_unit(&mut rng, d, &[&u, &drift_dir]);
        let sin = (1.0 - cos * cos).max(0.0).sqrt();
        let sig: Vec<f64> = u.iter().zip(&eta).map(|(a, b)| cos * a + sin * b).collect();
        let own: Vec<f64> = normal_vec(&mut rng, side * side * d).into_iter().map(|v| v * tex_scale).collect();
        let tex: Vec<f64> = texture.iter().zip(&own).map(|(a, b)| cos * a + sin * b).collect();
        let amplitude = uniform(&mut rng, cfg.distractor_amplitude);
        let centers = distractor_path(&mut rng, cfg, &tracks[0].centers);
        tracks.push(ObjectTrack {
            role: ObjectRole::Distractor,
            centers,
            signatures: vec![sig; cfg.frames],
            texture: tex,
            amplitude,
            sigma: cfg.blob_sigma,
        });
    }

    let background: Vec<f64> = (0..w * h * d)
        .map(|_| {
            let n: f64 = StandardNormal.sample(&mut rng);
            cfg.background_sigma * n
        })
        .collect();
    let denom = 2.0 * cfg.blob_sigma * cfg.blob_sigma;
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut tex = vec![0.0; d];
    for t in 0..cfg.frames {
        let mut data = background.clone();
        // distractors pass behind the target
        for track in tracks.iter().rev() {
            let [cx, cy] = track.centers[t];
            let sig = &track.signatures[t];
            for y in 0..h {
                for x in 0..w {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    let alpha = (-d2 / denom).exp();
                    if alpha < 1e-6 {
                        continue;
                    }
                    track.texture_at(x as f64 - cx, y as f64 - cy, d, &mut tex);
                    let base = (y * w + x) * d;
                    for (c, (s, p)) in sig.iter().zip(&tex).enumerate() {
                        let v = &mut data[base + c];
                        *v = (1.0 - alpha) * *v + alpha * track.amplitude * (s + p);
                    }
                }
            }
        }
        if cfg.noise_sigma > 0.0 {
            for v in &mut data {
                let n: f64 = StandardNormal.sample(&mut rng);
                *v += cfg.noise_sigma * n;
            }
        }
        let data: Vec<f32> = data.into_iter().map(|v| v as f32).collect();
        frames.push(Grid3D::new(w, h, d, data)?);
    }

    let gt_boxes = tracks[0]
        .centers
        .iter()
        .map(|&[x, y]| TargetBox::new((x + 0.5) * cfg.stride, (y + 0.5) * cfg.stride, cfg.box_size, cfg.box_size))
        .collect();
    let seq = SyntheticSequence {
        frames,
        gt_boxes,
        tracks,
        stride: cfg.stride,
        seed,
    };
    seq.validate()?;
    Ok(seq)
}
