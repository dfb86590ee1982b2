//! On-disk formats: feature sequences, parameter bundles and CSV tables.
//!
//! Every write goes through a temporary file in the destination directory
//! followed by a rename.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TargetBox;
use crate::grid::Grid3D;
use crate::model::ModelParams;
use crate::scalar::Scalar;
use crate::synth::generator::{ObjectTrack, SyntheticSequence};
use crate::synth::metrics::MetricsReport;
use crate::synth::spsa::moving_average;
use crate::tracker::TrackRun;

pub const FEATSEQ_MAGIC: &[u8; 5] = b"FSEQ1";
/// Magic plus four little-endian `u32` dimensions.
pub const FEATSEQ_HEADER_LEN: usize = 5 + 4 * 4;
pub const BUNDLE_FORMAT: &str = "scenetrack-params";
pub const BUNDLE_VERSION: u32 = 1;
pub const ANNOTATION_VERSION: u32 = 1;

/// Writes `bytes` to `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Path of the annotation document that accompanies a feature file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode_featseq(frames: &[Grid3D<f32>]) -> Result<Vec<u8>> {
    let first = frames.first().ok_or_else(|| Error::shape("a feature sequence needs at least one frame"))?;
    if frames.iter().any(|f| !f.same_shape(first)) {
        return Err(Error::shape("frames differ in shape"));
    }
    let dims = [first.width(), first.height(), first.channels(), frames.len()];
    let mut out = Vec::with_capacity(FEATSEQ_HEADER_LEN + frames.len() * first.as_slice().len() * 4);
    out.extend_from_slice(FEATSEQ_MAGIC);
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::shape("dimension exceeds u32"))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for f in frames {
        for v in f.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_featseq(bytes: &[u8]) -> Result<Vec<Grid3D<f32>>> {
    if bytes.len() < FEATSEQ_MAGIC.len() || &bytes[..FEATSEQ_MAGIC.len()] != FEATSEQ_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < FEATSEQ_HEADER_LEN {
        return Err(Error::Format("truncated header".into()));
    }
    let dim = |i: usize| {
        let at = FEATSEQ_MAGIC.len() + 4 * i;
        u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize
    };
    let (w, h, d, t) = (dim(0), dim(1), dim(2), dim(3));
    if w == 0 || h == 0 || d == 0 || t == 0 {
        return Err(Error::Format(format!("empty dimensions {w}x{h}x{d}x{t}")));
    }
    let per_frame = w
        .checked_mul(h)
        .and_then(|v| v.checked_mul(d))
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    let expected = per_frame
        .checked_mul(t)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    let payload = &bytes[FEATSEQ_HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Format(format!("payload has {} bytes, header implies {expected}", payload.len())));
    }
    payload
        .chunks_exact(per_frame * 4)
        .map(|chunk| {
            let data = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            Grid3D::new(w, h, d, data)
        })
        .collect()
}

/// Sidecar document of a feature file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotations {
    pub version: u32,
    pub stride: f64,
    pub seed: u64,
    pub gt_boxes: Vec<TargetBox>,
    #[serde(default)]
    pub tracks: Vec<ObjectTrack>,
}

/// Writes the feature file and its sidecar.
pub fn write_featseq(seq: &SyntheticSequence, path: &Path) -> Result<()> {
    seq.validate()?;
    let ann = Annotations {
        version: ANNOTATION_VERSION,
        stride: seq.stride,
        seed: seq.seed,
        gt_boxes: seq.gt_boxes.clone(),
        tracks: seq.tracks.clone(),
    };
    let json = serde_json::to_vec_pretty(&ann).map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(path, &encode_featseq(&seq.frames)?)?;
    write_atomic(&sidecar_path(path), &json)
}

pub fn read_featseq(path: &Path) -> Result<SyntheticSequence> {
    let frames = decode_featseq(&read_bytes(path)?)?;
    let side = sidecar_path(path);
    let ann: Annotations =
        serde_json::from_slice(&read_bytes(&side)?).map_err(|e| Error::Format(format!("{}: {e}", side.display())))?;
    if ann.version != ANNOTATION_VERSION {
        return Err(Error::Format(format!("unsupported annotation version {}", ann.version)));
    }
    let seq = SyntheticSequence {
        frames,
        gt_boxes: ann.gt_boxes,
        tracks: ann.tracks,
        stride: ann.stride,
        seed: ann.seed,
    };
    seq.validate()?;
    Ok(seq)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub values: Vec<f64>,
}

/// Versioned document with every tensor of a [`ModelParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBundleFile {
    pub format: String,
    pub version: u32,
    pub state_dim: usize,
    pub tensors: Vec<NamedTensor>,
}

impl ParamBundleFile {
    pub fn from_params<T: Scalar>(params: &ModelParams<T>) -> Result<Self> {
        params.validate()?;
        let mut tensors = Vec::new();
        params.clone().visit_mut(|t| {
            tensors.push(NamedTensor {
                name: t.name,
                shape: t.shape,
                trainable: t.trainable,
                values: t.data.iter().map(|v| v.to_f64_lossy()).collect(),
            })
        });
        if let Some(t) = tensors.iter().find(|t| t.values.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("tensor {}", t.name)));
        }
        Ok(ParamBundleFile {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            state_dim: params.state_dim(),
            tensors,
        })
    }

    /// Rebuilds the parameters; every tensor of the architecture must be
    /// present exactly once with the expected shape.
    pub fn to_params<T: Scalar>(&self) -> Result<ModelParams<T>> {
        if self.format != BUNDLE_FORMAT {
            return Err(Error::Format(format!("not a parameter bundle: {:?}", self.format)));
        }
        if self.version != BUNDLE_VERSION {
            return Err(Error::Format(format!("unsupported bundle version {}", self.version)));
        }
        if self.state_dim == 0 {
            return Err(Error::Format("state dimension must be positive".into()));
        }
        let mut params = ModelParams::<T>::initial_with_dim(self.state_dim);
        let mut used = vec![false; self.tensors.len()];
        let mut problem: Option<Error> = None;
        params.visit_mut(|t| {
            if problem.is_some() {
                return;
            }
            let Some(i) = self.tensors.iter().position(|n| n.name == t.name) else {
                problem = Some(Error::Format(format!("missing tensor {}", t.name)));
                return;
            };
            let n = &self.tensors[i];
            if used[i] {
                problem = Some(Error::Format(format!("duplicate tensor {}", t.name)));
                return;
            }
            used[i] = true;
            if n.shape != t.shape || n.values.len() != t.data.len() {
                problem = Some(Error::shape(format!(
                    "tensor {} has shape {:?} with {} values, expected {:?}",
                    t.name,
                    n.shape,
                    n.values.len(),
                    t.shape
                )));
                return;
            }
            for (d, &v) in t.data.iter_mut().zip(&n.values) {
                *d = T::lit(v);
            }
        });
        if let Some(e) = problem {
            return Err(e);
        }
        if let Some(i) = used.iter().position(|u| !u) {
            return Err(Error::Format(format!("unknown tensor {}", self.tensors[i].name)));
        }
        params.validate()?;
        Ok(params)
    }
}

pub fn save_params<T: Scalar>(params: &ModelParams<T>, path: &Path) -> Result<()> {
    let doc = ParamBundleFile::from_params(params)?;
    let json = serde_json::to_vec_pretty(&doc).map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(path, &json)
}

pub fn load_params<T: Scalar>(path: &Path) -> Result<ModelParams<T>> {
    let doc: ParamBundleFile = serde_json::from_slice(&read_bytes(path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    doc.to_params()
}

/// One row of the per-frame tracking table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackRow {
    pub frame: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub max_s: f64,
    pub max_fused: Option<f64>,
    pub mean_xi: Option<f64>,
    pub lost: bool,
}

impl TrackRow {
    pub fn target_box(&self) -> TargetBox {
        TargetBox::new(self.cx, self.cy, self.w, self.h)
    }
}

fn csv_bytes<R: Serialize>(rows: impl IntoIterator<Item = R>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

pub fn track_rows(run: &TrackRun) -> Vec<TrackRow> {
    run.diagnostics
        .iter()
        .map(|d| TrackRow {
            frame: d.frame,
            cx: d.target_box.cx,
            cy: d.target_box.cy,
            w: d.target_box.width,
            h: d.target_box.height,
            max_s: d.max_s,
            max_fused: d.max_fused,
            mean_xi: d.mean_xi,
            lost: d.lost,
        })
        .collect()
}

pub fn write_track_csv(run: &TrackRun, path: &Path) -> Result<()> {
    write_atomic(path, &csv_bytes(track_rows(run))?)
}

pub fn read_track_csv(path: &Path) -> Result<Vec<TrackRow>> {
    let bytes = read_bytes(path)?;
    csv::Reader::from_reader(bytes.as_slice())
        .deserialize()
        .collect::<std::result::Result<Vec<TrackRow>, _>>()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct MetricsRow {
    threshold: f64,
    op: f64,
}

pub fn write_metrics_csv(report: &MetricsReport, path: &Path) -> Result<()> {
    let rows = report
        .thresholds
        .iter()
        .zip(&report.op)
        .map(|(&threshold, &op)| MetricsRow { threshold, op });
    write_atomic(path, &csv_bytes(rows)?)
}

#[derive(Serialize)]
struct LossRow {
    step: usize,
    loss: f64,
    moving_average: f64,
}

/// Loss trace with its 50-step trailing average.
pub fn write_loss_trace_csv(trace: &[f64], path: &Path) -> Result<()> {
    let ma = moving_average(trace, 50);
    let rows = trace
        .iter()
        .zip(&ma)
        .enumerate()
        .map(|(step, (&loss, &moving_average))| LossRow { step, loss, moving_average });
    write_atomic(path, &csv_bytes(rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frames(seed: u64, w: usize, h: usize, d: usize, t: usize) -> Vec<Grid3D<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..t)
            .map(|_| Grid3D::from_fn(w, h, d, |_, _| rng.gen_range(-3.0f32..3.0)))
            .collect()
    }

    #[test]
    fn featseq_size_arithmetic() {
        let bytes = encode_featseq(&random_frames(0, 4, 4, 2, 2)).unwrap();
        assert_eq!(bytes.len(), FEATSEQ_HEADER_LEN + 256);
        assert_eq!(&bytes[..5], b"FSEQ1");
        assert_eq!(&bytes[5..9], &4u32.to_le_bytes());
        assert_eq!(&bytes[17..21], &2u32.to_le_bytes());
    }

    #[test]
    fn featseq_round_trip_is_bit_exact() {
        for seed in 0..5 {
            let mut frames = random_frames(seed, 5, 3, 4, 3);
            frames[0].as_mut_slice()[0] = -0.0;
            frames[1].as_mut_slice()[1] = f32::MIN_POSITIVE / 2.0;
            let back = decode_featseq(&encode_featseq(&frames).unwrap()).unwrap();
            for (a, b) in frames.iter().zip(&back) {
                assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }

    #[test]
    fn corrupted_featseq_is_rejected() {
        let mut bytes = encode_featseq(&random_frames(1, 2, 2, 1, 1)).unwrap();
        let good = bytes.clone();
        bytes[0] = b'X';
        let err = decode_featseq(&bytes).unwrap_err();
        assert!(matches!(err, Error::BadMagic));
        assert_eq!(err.to_string(), "bad magic");
        assert!(matches!(decode_featseq(&good[..good.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(decode_featseq(&good[..10]), Err(Error::Format(_))));
    }

    #[test]
    fn bundle_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ModelParams::<f64>::initial();
        let noisy: Vec<f64> = p.trainable_vector().iter().map(|v| v + rng.gen_range(-1.0..1.0) / 3.0).collect();
        p.set_trainable_vector(&noisy).unwrap();
        let json = serde_json::to_string(&ParamBundleFile::from_params(&p).unwrap()).unwrap();
        let doc: ParamBundleFile = serde_json::from_str(&json).unwrap();
        let q: ModelParams<f64> = doc.to_params().unwrap();
        let (a, b) = (p.trainable_vector(), q.trainable_vector());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(p, q);

        let pf = p.cast::<f32>();
        let qf: ModelParams<f32> = ParamBundleFile::from_params(&pf).unwrap().to_params().unwrap();
        assert_eq!(pf, qf);
    }

    #[test]
    fn bundle_shape_errors() {
        let p = ModelParams::<f64>::initial();
        let good = ParamBundleFile::from_params(&p).unwrap();

        let mut bad = good.clone();
        bad.tensors[0].shape[3] += 1;
        assert!(matches!(bad.to_params::<f64>(), Err(Error::Shape(_))));

        let mut bad = good.clone();
        bad.tensors.pop();
        assert!(matches!(bad.to_params::<f64>(), Err(Error::Format(_))));

        let mut bad = good.clone();
        let extra = bad.tensors[0].clone();
        bad.tensors.push(NamedTensor { name: "extra".into(), ..extra });
        assert!(matches!(bad.to_params::<f64>(), Err(Error::Format(_))));

        let mut bad = good;
        bad.version = 99;
        assert!(bad.to_params::<f64>().is_err());
    }
}
