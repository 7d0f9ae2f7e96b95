//! Dataset ingestion and preparation: manifest CSV parsing, eye-crop
//! geometry, preprocessing into the network input, mirroring augmentation,
//! and subject-disjoint fold splitting.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::img::{EyeImage, ImageError};
use crate::kernels::bilinear_resize;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Height each eye crop is resized to; two stacked crops form the network
/// input of 70 rows.
pub const EYE_H: usize = 35;
pub const EYE_W: usize = 210;
pub const INPUT_H: usize = 2 * EYE_H;

/// Manifest CSV header. Paths are relative to the manifest's directory,
/// angles in decimal degrees.
pub const MANIFEST_HEADER: &str =
    "left_path,right_path,head_pitch,head_yaw,head_roll,gaze_pitch,gaze_yaw,subject,domain";

const MIRROR_SUFFIX: &str = "~m";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: cannot read manifest: {source}")]
    ManifestIo {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: manifest header must be exactly `{MANIFEST_HEADER}`, got `{got}`")]
    BadHeader { path: String, got: String },
    #[error("{path}:{line}: {detail}")]
    BadRow {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("{path}:{line}: duplicate (subject, left_path) pair ({subject}, {left})")]
    DuplicateRow {
        path: String,
        line: usize,
        subject: String,
        left: String,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("crop_eyes: {0}")]
    BadCrop(String),
    #[error("split_folds: {subjects} subjects cannot fill {k} folds")]
    TooFewSubjects { subjects: usize, k: usize },
    #[error("{0}")]
    BadSample(String),
    #[error("{path}: cannot write manifest: {source}")]
    WriteIo {
        path: String,
        source: std::io::Error,
    },
}

/// One labeled example. Images are shared so samples clone cheaply.
#[derive(Clone, Debug)]
pub struct GazeSample {
    pub left_eye: Arc<EyeImage>,
    pub right_eye: Arc<EyeImage>,
    /// Head (pitch, yaw, roll) in degrees.
    pub head_pose: [f32; 3],
    /// Gaze (pitch, yaw) in degrees.
    pub gaze: [f32; 2],
    pub subject_id: String,
    pub domain: String,
}

impl GazeSample {
    pub fn validate(&self) -> Result<(), DataError> {
        for a in self.head_pose.iter().chain(self.gaze.iter()) {
            if !a.is_finite() {
                return Err(DataError::BadSample(format!(
                    "non-finite angle in sample for subject {}",
                    self.subject_id
                )));
            }
        }
        if self.gaze[0].abs() > 90.0 || self.gaze[1].abs() > 90.0 {
            return Err(DataError::BadSample(format!(
                "gaze ({}, {}) out of +-90 degrees for subject {}",
                self.gaze[0], self.gaze[1], self.subject_id
            )));
        }
        Ok(())
    }

    /// Subject with any mirror suffixes stripped; mirrored variants group
    /// with their source subject.
    pub fn base_subject(&self) -> &str {
        base_subject_of(&self.subject_id)
    }
}

pub fn base_subject_of(subject: &str) -> &str {
    let mut s = subject;
    while let Some(stripped) = s.strip_suffix(MIRROR_SUFFIX) {
        s = stripped;
    }
    s
}

/// One parsed manifest row, paths still relative.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub left_path: String,
    pub right_path: String,
    pub head_pose: [f32; 3],
    pub gaze: [f32; 2],
    pub subject: String,
    pub domain: String,
}

/// Parse a manifest CSV without decoding any images.
pub fn parse_manifest(path: &Path) -> Result<Vec<ManifestRow>, DataError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::ManifestIo {
        path: display.clone(),
        source,
    })?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == MANIFEST_HEADER => {}
        other => {
            return Err(DataError::BadHeader {
                path: display,
                got: other.map(|(_, h)| h.to_string()).unwrap_or_default(),
            })
        }
    }

    let mut rows = Vec::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(DataError::BadRow {
                path: display.clone(),
                line: line_no,
                detail: format!("expected 9 fields, got {}", fields.len()),
            });
        }
        let angle = |name: &str, raw: &str| -> Result<f32, DataError> {
            let v: f32 = raw.trim().parse().map_err(|_| DataError::BadRow {
                path: display.clone(),
                line: line_no,
                detail: format!("{name} `{raw}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(DataError::BadRow {
                    path: display.clone(),
                    line: line_no,
                    detail: format!("{name} `{raw}` is not finite"),
                });
            }
            Ok(v)
        };
        let row = ManifestRow {
            left_path: fields[0].to_string(),
            right_path: fields[1].to_string(),
            head_pose: [
                angle("head_pitch", fields[2])?,
                angle("head_yaw", fields[3])?,
                angle("head_roll", fields[4])?,
            ],
            gaze: [
                angle("gaze_pitch", fields[5])?,
                angle("gaze_yaw", fields[6])?,
            ],
            subject: fields[7].to_string(),
            domain: fields[8].to_string(),
        };
        if !seen.insert((row.subject.clone(), row.left_path.clone())) {
            return Err(DataError::DuplicateRow {
                path: display.clone(),
                line: line_no,
                subject: row.subject,
                left: row.left_path,
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Write rows in the manifest format, byte-deterministic.
pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<(), DataError> {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(MANIFEST_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{},{}\n",
            r.left_path,
            r.right_path,
            r.head_pose[0],
            r.head_pose[1],
            r.head_pose[2],
            r.gaze[0],
            r.gaze[1],
            r.subject,
            r.domain
        ));
    }
    std::fs::write(path, out).map_err(|source| DataError::WriteIo {
        path: path.display().to_string(),
        source,
    })
}

/// Load a manifest and decode every referenced image. Sample order equals
/// manifest order.
pub fn load_manifest(path: &Path) -> Result<Vec<GazeSample>, DataError> {
    let rows = parse_manifest(path)?;
    let dir: PathBuf = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut samples = Vec::with_capacity(rows.len());
    for row in rows {
        let sample = GazeSample {
            left_eye: Arc::new(EyeImage::load_png(&dir.join(&row.left_path))?),
            right_eye: Arc::new(EyeImage::load_png(&dir.join(&row.right_path))?),
            head_pose: row.head_pose,
            gaze: row.gaze,
            subject_id: row.subject,
            domain: row.domain,
        };
        sample.validate()?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Cut axis-aligned crops around both eye centers of a full frame. The crop
/// is 0.6x the interocular distance wide with a 1:3 height:width aspect,
/// translated to stay inside the frame.
pub fn crop_eyes(
    image: &EyeImage,
    left_center: (f64, f64),
    right_center: (f64, f64),
) -> Result<(EyeImage, EyeImage), DataError> {
    let (w, h) = (image.width() as f64, image.height() as f64);
    for (name, c) in [("left", left_center), ("right", right_center)] {
        if c.0 < 0.0 || c.0 >= w || c.1 < 0.0 || c.1 >= h {
            return Err(DataError::BadCrop(format!(
                "{name} eye center ({}, {}) outside image {}x{}",
                c.0,
                c.1,
                image.width(),
                image.height()
            )));
        }
    }
    let inter = ((left_center.0 - right_center.0).powi(2)
        + (left_center.1 - right_center.1).powi(2))
    .sqrt();
    if inter < 4.0 {
        return Err(DataError::BadCrop(format!(
            "interocular distance {inter:.2} px is degenerate (< 4 px)"
        )));
    }
    let crop_w = ((0.6 * inter).round() as usize).clamp(3, image.width());
    let crop_h = ((crop_w as f64 / 3.0).round() as usize).clamp(1, image.height());

    let cut = |center: (f64, f64)| -> EyeImage {
        let x0 = (center.0 - crop_w as f64 / 2.0).round() as isize;
        let y0 = (center.1 - crop_h as f64 / 2.0).round() as isize;
        let x0 = x0.clamp(0, (image.width() - crop_w) as isize) as usize;
        let y0 = y0.clamp(0, (image.height() - crop_h) as isize) as usize;
        let mut rgb = Vec::with_capacity(crop_w * crop_h * 3);
        for y in y0..y0 + crop_h {
            let row = &image.rgb()[(y * image.width() + x0) * 3..(y * image.width() + x0 + crop_w) * 3];
            rgb.extend_from_slice(row);
        }
        EyeImage::new(crop_w, crop_h, rgb).unwrap()
    };
    Ok((cut(left_center), cut(right_center)))
}

/// Build the network input: both eyes bilinearly resized to 35x210, left
/// stacked above right (3 x 70 x 210, values in [0, 1]), and the head pose
/// scaled by 1/90 into roughly [-1, 1].
pub fn preprocess(sample: &GazeSample) -> Result<(Tensor<f32>, [f32; 3]), DataError> {
    preprocess_oriented(sample, false)
}

/// `preprocess` with an optional on-the-fly mirror, equivalent to
/// `preprocess(&mirror_augment(sample))` without materializing the images.
pub fn preprocess_oriented(
    sample: &GazeSample,
    mirrored: bool,
) -> Result<(Tensor<f32>, [f32; 3]), DataError> {
    let (left, right): (EyeImage, EyeImage) = if mirrored {
        (sample.right_eye.hflip(), sample.left_eye.hflip())
    } else {
        ((*sample.left_eye).clone(), (*sample.right_eye).clone())
    };
    let resize = |img: &EyeImage| -> Result<Tensor<f32>, DataError> {
        bilinear_resize(&img.to_tensor(), EYE_H, EYE_W)
            .map_err(|e| DataError::BadSample(e.to_string()))
    };
    let top = resize(&left)?;
    let bottom = resize(&right)?;
    let mut data = vec![0.0f32; 3 * INPUT_H * EYE_W];
    for c in 0..3 {
        let dst = &mut data[c * INPUT_H * EYE_W..(c + 1) * INPUT_H * EYE_W];
        dst[..EYE_H * EYE_W].copy_from_slice(&top.data()[c * EYE_H * EYE_W..(c + 1) * EYE_H * EYE_W]);
        dst[EYE_H * EYE_W..]
            .copy_from_slice(&bottom.data()[c * EYE_H * EYE_W..(c + 1) * EYE_H * EYE_W]);
    }
    let eyes = Tensor::from_vec(&[3, INPUT_H, EYE_W], data).unwrap();
    let head = sample.head_pose;
    let head_scaled = if mirrored {
        [head[0] / 90.0, -head[1] / 90.0, -head[2] / 90.0]
    } else {
        [head[0] / 90.0, head[1] / 90.0, head[2] / 90.0]
    };
    Ok((eyes, head_scaled))
}

/// Mirror-world twin of a sample: eyes flipped and swapped, gaze yaw
/// negated, head yaw and roll negated, pitches unchanged.
pub fn mirror_augment(sample: &GazeSample) -> GazeSample {
    GazeSample {
        left_eye: Arc::new(sample.right_eye.hflip()),
        right_eye: Arc::new(sample.left_eye.hflip()),
        head_pose: [
            sample.head_pose[0],
            -sample.head_pose[1],
            -sample.head_pose[2],
        ],
        gaze: [sample.gaze[0], -sample.gaze[1]],
        subject_id: format!("{}{MIRROR_SUFFIX}", sample.subject_id),
        domain: sample.domain.clone(),
    }
}

/// Originals followed by their mirrored twins: exactly doubles the rows.
pub fn augment_with_mirrors(samples: &[GazeSample]) -> Vec<GazeSample> {
    let mut out = Vec::with_capacity(samples.len() * 2);
    out.extend_from_slice(samples);
    out.extend(samples.iter().map(mirror_augment));
    out
}

/// Subject-disjoint partition of sample indices into `k` folds.
#[derive(Clone, Debug)]
pub struct FoldSplit {
    folds: Vec<Vec<usize>>,
    subject_fold: HashMap<String, usize>,
}

impl FoldSplit {
    pub fn folds(&self) -> &[Vec<usize>] {
        &self.folds
    }

    pub fn fold_of_subject(&self, subject: &str) -> Option<usize> {
        self.subject_fold.get(base_subject_of(subject)).copied()
    }
}

/// Shuffle the distinct base subjects with `seed` and deal them round-robin
/// into `k` folds. Mirrored variants land with their source subject.
pub fn split_folds(samples: &[GazeSample], k: usize, seed: u64) -> Result<FoldSplit, DataError> {
    let subjects: BTreeSet<&str> = samples.iter().map(|s| s.base_subject()).collect();
    if subjects.len() < k || k == 0 {
        return Err(DataError::TooFewSubjects {
            subjects: subjects.len(),
            k,
        });
    }
    let mut ordered: Vec<&str> = subjects.into_iter().collect();
    Rng::new(seed).shuffle(&mut ordered);
    let subject_fold: HashMap<String, usize> = ordered
        .iter()
        .enumerate()
        .map(|(i, s)| (s.to_string(), i % k))
        .collect();
    let mut folds = vec![Vec::new(); k];
    for (i, s) in samples.iter().enumerate() {
        folds[subject_fold[s.base_subject()]].push(i);
    }
    Ok(FoldSplit {
        folds,
        subject_fold,
    })
}
