//! Procedural eye-pair renderer and sweep-dataset generator.
//!
//! Each eye is drawn as a 2D parametric composition: skin background,
//! sclera ellipse, iris disk displaced by the gaze angles, pupil, and lid
//! bands, with a lighting gain applied last. The point is a controllable,
//! learnable signal, not photorealism: the iris center moves strictly
//! monotonically with each gaze angle, and the whole construction is
//! mirror-coherent (negating yaw renders the horizontal mirror image), so
//! mirroring augmentation stays on-distribution.
//!
//! A dataset is a sweep over characters x head poses x gaze angles; the
//! default grid visits 153 gaze directions at each of 25 head poses, i.e.
//! 3,825 rows per character.

use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::data::{write_manifest, DataError, GazeSample, ManifestRow};
use crate::img::{EyeImage, ImageError};
use crate::rng::Rng;

/// Default rendered eye size (height x width, 1:3 aspect).
pub const DEFAULT_EYE_H: usize = 30;
pub const DEFAULT_EYE_W: usize = 90;

/// Angle bound accepted by the renderer, degrees.
pub const MAX_ANGLE_DEG: f32 = 60.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("render_eye_pair: angle {name} = {value} exceeds +-{MAX_ANGLE_DEG} degrees")]
    OutOfRange { name: &'static str, value: f32 },
    #[error("invalid character parameters: {0}")]
    BadCharacter(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Appearance of one synthetic character.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CharacterParams {
    pub skin: [f32; 3],
    pub iris: [f32; 3],
    /// Lid openness, 0 (closed) to 1 (wide).
    pub aperture: f32,
    /// Iris radius as a fraction of the eye-image height.
    pub iris_radius: f32,
    /// Eye spacing factor in (0, 1]; 0.5 is centered.
    pub interocular: f32,
    pub light_gain: f32,
    /// Warm/cool tint: red scaled by 1+shift, blue by 1-shift.
    pub color_shift: f32,
}

impl CharacterParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        for (name, v) in [
            ("aperture", self.aperture),
            ("iris_radius", self.iris_radius),
            ("interocular", self.interocular),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(SynthError::BadCharacter(format!("{name} {v} not in (0, 1]")));
            }
        }
        for c in self.skin.iter().chain(self.iris.iter()) {
            if !(0.0..=1.0).contains(c) {
                return Err(SynthError::BadCharacter(format!("color component {c} not in [0, 1]")));
            }
        }
        if !(self.light_gain > 0.0 && self.light_gain.is_finite()) {
            return Err(SynthError::BadCharacter(format!(
                "light_gain {} must be positive",
                self.light_gain
            )));
        }
        Ok(())
    }
}

/// A named character; the name becomes the manifest subject id.
#[derive(Clone, Debug)]
pub struct Character {
    pub name: String,
    pub params: CharacterParams,
}

/// Lighting preset defining one synthetic domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Bright,
    Dim,
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Bright => "bright",
            Preset::Dim => "dim",
        }
    }

    fn base_gain(&self) -> f32 {
        match self {
            Preset::Bright => 1.0,
            Preset::Dim => 0.42,
        }
    }

    fn base_shift(&self) -> f32 {
        match self {
            Preset::Bright => 0.03,
            Preset::Dim => -0.12,
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bright" => Ok(Preset::Bright),
            "dim" => Ok(Preset::Dim),
            other => Err(format!("unknown preset `{other}` (expected bright|dim)")),
        }
    }
}

/// Deterministically derive `n` characters for a lighting preset.
pub fn make_characters(n: usize, preset: Preset, seed: u64) -> Vec<Character> {
    let mut rng = Rng::new(seed ^ (preset.name().len() as u64).wrapping_mul(0x9E37_79B9));
    (0..n)
        .map(|i| {
            let mut crng = rng.split();
            let tone = crng.uniform(0.35, 0.85) as f32;
            let skin = [
                (tone + 0.06).min(1.0),
                tone * 0.93,
                tone * 0.82,
            ];
            let iris = match crng.below(4) {
                0 => [0.36, 0.22, 0.10], // brown
                1 => [0.22, 0.42, 0.62], // blue
                2 => [0.24, 0.44, 0.28], // green
                _ => [0.40, 0.40, 0.42], // gray
            };
            let jitter = |c: f32, r: &mut Rng| (c + r.uniform(-0.05, 0.05) as f32).clamp(0.0, 1.0);
            let iris = [
                jitter(iris[0], &mut crng),
                jitter(iris[1], &mut crng),
                jitter(iris[2], &mut crng),
            ];
            let params = CharacterParams {
                skin,
                iris,
                aperture: crng.uniform(0.55, 0.95) as f32,
                iris_radius: crng.uniform(0.26, 0.34) as f32,
                interocular: crng.uniform(0.35, 0.65) as f32,
                light_gain: preset.base_gain() * crng.uniform(0.92, 1.08) as f32,
                color_shift: preset.base_shift() + crng.uniform(-0.02, 0.02) as f32,
            };
            Character {
                name: format!("{}{i:02}", preset.name()),
                params,
            }
        })
        .collect()
}

/// Head-pose x gaze sweep. The default grid reproduces the published
/// counts: 9 x 17 = 153 gaze directions per head pose and 5 x 5 = 25 head
/// poses, hence 3,825 rows per character.
#[derive(Clone, Debug)]
pub struct SweepGrid {
    pub gaze_pitch: Vec<f32>,
    pub gaze_yaw: Vec<f32>,
    pub head_poses: Vec<[f32; 3]>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        let steps = |lo: i32, hi: i32, step: i32| -> Vec<f32> {
            (lo..=hi).step_by(step as usize).map(|v| v as f32).collect()
        };
        let head_axis = [-20.0f32, -10.0, 0.0, 10.0, 20.0];
        let mut head_poses = Vec::with_capacity(25);
        for &hp in &head_axis {
            for &hy in &head_axis {
                head_poses.push([hp, hy, 0.0]);
            }
        }
        SweepGrid {
            gaze_pitch: steps(-20, 20, 5),
            gaze_yaw: steps(-40, 40, 5),
            head_poses,
        }
    }
}

impl SweepGrid {
    /// Small grid for fast experiments: 3 x 5 gaze points, 4 head poses.
    pub fn small() -> Self {
        SweepGrid {
            gaze_pitch: vec![-15.0, 0.0, 15.0],
            gaze_yaw: vec![-30.0, -15.0, 0.0, 15.0, 30.0],
            head_poses: vec![
                [-10.0, -10.0, 0.0],
                [-10.0, 10.0, 0.0],
                [10.0, -10.0, 0.0],
                [10.0, 10.0, 0.0],
            ],
        }
    }

    pub fn gaze_points_per_head(&self) -> usize {
        self.gaze_pitch.len() * self.gaze_yaw.len()
    }

    pub fn rows_per_character(&self) -> usize {
        self.head_poses.len() * self.gaze_points_per_head()
    }
}

/// Which eye of the pair is being rendered.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    fn sign(&self) -> f32 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }

    fn tag(&self) -> &'static str {
        match self {
            Side::Left => "L",
            Side::Right => "R",
        }
    }
}

fn check_angle(name: &'static str, value: f32) -> Result<(), SynthError> {
    if !value.is_finite() || value.abs() > MAX_ANGLE_DEG {
        return Err(SynthError::OutOfRange { name, value });
    }
    Ok(())
}

/// Center of the eyeball in image coordinates, as shifted by the head pose
/// and the character's eye spacing. The iris sits here at gaze (0, 0).
pub fn eye_center(
    params: &CharacterParams,
    head: &[f32; 3],
    side: Side,
    h: usize,
    w: usize,
) -> (f32, f32) {
    let (hf, wf) = (h as f32, w as f32);
    let rad = |d: f32| d.to_radians();
    let cx = (wf - 1.0) / 2.0
        + wf * (0.10 * rad(head[1]).sin() + 0.06 * (params.interocular - 0.5) * side.sign());
    let cy = (hf - 1.0) / 2.0 + hf * 0.10 * rad(head[0]).sin();
    (cx, cy)
}

/// Iris center for a given head pose and gaze, in image coordinates.
/// Strictly monotone in each gaze angle (the learnable signal).
pub fn iris_center(
    params: &CharacterParams,
    head: &[f32; 3],
    gaze: &[f32; 2],
    side: Side,
    h: usize,
    w: usize,
) -> (f32, f32) {
    let (ecx, ecy) = eye_center(params, head, side, h, w);
    let dx = w as f32 * 0.25 * gaze[1].to_radians().sin();
    let dy = -(h as f32) * 0.25 * gaze[0].to_radians().sin();
    (ecx + dx, ecy + dy)
}

fn render_eye(
    params: &CharacterParams,
    head: &[f32; 3],
    gaze: &[f32; 2],
    side: Side,
    h: usize,
    w: usize,
) -> EyeImage {
    let (hf, wf) = (h as f32, w as f32);
    let (ecx, ecy) = eye_center(params, head, side, h, w);
    let (icx, icy) = iris_center(params, head, gaze, side, h, w);

    let sclera_a = 0.42 * wf;
    let sclera_b = 0.36 * hf;
    let iris_r = params.iris_radius * hf;
    let pupil_r = 0.45 * iris_r;

    let hp_sin = head[0].to_radians().sin();
    let lid_base = hf * (0.14 + 0.24 * params.aperture);
    let open_upper = lid_base * (1.0 + 0.25 * hp_sin);
    let open_lower = lid_base * (1.0 - 0.15 * hp_sin);
    // Lids follow the gaze vertically and tilt with head roll.
    let lid_shift = -0.10 * hf * gaze[0].to_radians().sin();
    let lid_shear = 0.30 * head[2].to_radians().sin() * hf / wf;

    let sclera_col = [0.97f32, 0.97, 0.95];
    let pupil_col = [0.04f32, 0.04, 0.05];
    let lid_col = [params.skin[0] * 0.90, params.skin[1] * 0.88, params.skin[2] * 0.88];
    let tint = [1.0 + params.color_shift, 1.0, 1.0 - params.color_shift];

    let mix = |c: [f32; 3], o: [f32; 3], a: f32| -> [f32; 3] {
        [
            c[0] + a * (o[0] - c[0]),
            c[1] + a * (o[1] - c[1]),
            c[2] + a * (o[2] - c[2]),
        ]
    };
    let cov = |signed_dist: f32| (0.5 - signed_dist).clamp(0.0, 1.0);

    let mut rgb = Vec::with_capacity(w * h * 3);
    for yi in 0..h {
        let y = yi as f32;
        for xi in 0..w {
            let x = xi as f32;

            let ex = (x - ecx) / sclera_a;
            let ey = (y - ecy) / sclera_b;
            let d_sclera = ((ex * ex + ey * ey).sqrt() - 1.0) * sclera_a.min(sclera_b);
            let a_sclera = cov(d_sclera);

            let d_iris = ((x - icx).powi(2) + (y - icy).powi(2)).sqrt() - iris_r;
            let a_iris = cov(d_iris) * a_sclera;
            let d_pupil = ((x - icx).powi(2) + (y - icy).powi(2)).sqrt() - pupil_r;
            let a_pupil = cov(d_pupil) * a_sclera;

            let lid_mid = x - ecx;
            let y_upper = ecy - open_upper + lid_shift + lid_shear * lid_mid;
            let y_lower = ecy + open_lower + lid_shift + lid_shear * lid_mid;
            let a_lid = cov(y - y_upper).max(cov(y_lower - y));

            let mut c = params.skin;
            c = mix(c, sclera_col, a_sclera);
            c = mix(c, params.iris, a_iris);
            c = mix(c, pupil_col, a_pupil);
            c = mix(c, lid_col, a_lid);

            for ch in 0..3 {
                let lit = (c[ch] * params.light_gain * tint[ch]).clamp(0.0, 1.0);
                rgb.push((lit * 255.0).round() as u8);
            }
        }
    }
    EyeImage::new(w, h, rgb).unwrap()
}

/// Render both eyes of one sample. Deterministic in all arguments.
pub fn render_eye_pair(
    params: &CharacterParams,
    head: &[f32; 3],
    gaze: &[f32; 2],
    h: usize,
    w: usize,
) -> Result<(EyeImage, EyeImage), SynthError> {
    params.validate()?;
    check_angle("head_pitch", head[0])?;
    check_angle("head_yaw", head[1])?;
    check_angle("head_roll", head[2])?;
    check_angle("gaze_pitch", gaze[0])?;
    check_angle("gaze_yaw", gaze[1])?;
    Ok((
        render_eye(params, head, gaze, Side::Left, h, w),
        render_eye(params, head, gaze, Side::Right, h, w),
    ))
}

struct SweepRow {
    character: usize,
    head: [f32; 3],
    gaze: [f32; 2],
    /// Character params with the per-row lighting jitter applied.
    params: CharacterParams,
}

/// Deterministic sweep order: characters, then head poses, then gaze pitch,
/// then gaze yaw. The seed drives a small per-row lighting gain jitter.
fn sweep_rows(characters: &[Character], grid: &SweepGrid, seed: u64) -> Vec<SweepRow> {
    let mut jitter_rng = Rng::new(seed);
    let mut rows = Vec::with_capacity(characters.len() * grid.rows_per_character());
    for (ci, ch) in characters.iter().enumerate() {
        for head in &grid.head_poses {
            for &gp in &grid.gaze_pitch {
                for &gy in &grid.gaze_yaw {
                    let mut params = ch.params;
                    params.light_gain *= 1.0 + 0.06 * (jitter_rng.next_f64() as f32 - 0.5);
                    rows.push(SweepRow {
                        character: ci,
                        head: *head,
                        gaze: [gp, gy],
                        params,
                    });
                }
            }
        }
    }
    rows
}

/// Render a sweep directly into labeled in-memory samples (no files).
/// Content is identical to generating a dataset on disk and loading it
/// back: images are quantized 8-bit either way.
pub fn render_samples(
    characters: &[Character],
    grid: &SweepGrid,
    domain: &str,
    seed: u64,
) -> Result<Vec<GazeSample>, SynthError> {
    let rows = sweep_rows(characters, grid, seed);
    let mut samples = Vec::with_capacity(rows.len());
    for row in rows {
        let (left, right) =
            render_eye_pair(&row.params, &row.head, &row.gaze, DEFAULT_EYE_H, DEFAULT_EYE_W)?;
        samples.push(GazeSample {
            left_eye: Arc::new(left),
            right_eye: Arc::new(right),
            head_pose: row.head,
            gaze: row.gaze,
            subject_id: characters[row.character].name.clone(),
            domain: domain.to_string(),
        });
    }
    Ok(samples)
}

/// Sign-prefixed angle in tenths of a degree, used in generated filenames.
fn tenths(a: f32) -> String {
    let sign = if a < 0.0 { '-' } else { '+' };
    format!("{sign}{:03}", (a.abs() * 10.0).round() as i32)
}

/// Render a sweep to `out_dir`: one PNG pair plus one manifest row per
/// (character, head pose, gaze) triple, and a `manifest.csv` binding them.
pub fn generate_dataset(
    characters: &[Character],
    grid: &SweepGrid,
    domain: &str,
    out_dir: &Path,
    seed: u64,
) -> Result<Vec<ManifestRow>, SynthError> {
    std::fs::create_dir_all(out_dir).map_err(|source| SynthError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let rows = sweep_rows(characters, grid, seed);
    let mut manifest = Vec::with_capacity(rows.len());
    for row in rows {
        let (left, right) =
            render_eye_pair(&row.params, &row.head, &row.gaze, DEFAULT_EYE_H, DEFAULT_EYE_W)?;
        let name = &characters[row.character].name;
        let stem = format!(
            "{name}_{}_{}_{}_{}",
            tenths(row.head[0]),
            tenths(row.head[1]),
            tenths(row.gaze[0]),
            tenths(row.gaze[1])
        );
        let left_path = format!("{stem}_{}.png", Side::Left.tag());
        let right_path = format!("{stem}_{}.png", Side::Right.tag());
        left.save_png(&out_dir.join(&left_path))?;
        right.save_png(&out_dir.join(&right_path))?;
        manifest.push(ManifestRow {
            left_path,
            right_path,
            head_pose: row.head,
            gaze: row.gaze,
            subject: name.clone(),
            domain: domain.to_string(),
        });
    }
    write_manifest(&out_dir.join("manifest.csv"), &manifest)?;
    Ok(manifest)
}
