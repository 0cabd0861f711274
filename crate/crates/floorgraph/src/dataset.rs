//! Dataset layer: a deterministic synthetic floor generator, the recording
//! trajectory, ingestion of externally extracted keypoints, and the on-disk
//! view format.
//!
//! The synthetic floor is a field of point features with persistent random
//! unit descriptors. Rendering a view selects the features inside the camera
//! footprint at a pose and converts them to pixel coordinates, which gives
//! every downstream stage an exact geometric ground truth.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::wrap_degrees;
use crate::graph::{Keypoint, ViewId, DESCRIPTOR_LEN};

const DATASET_MAGIC: &str = "FGDS1";

/// World pose: position in meters, rotation about the z-axis in degrees,
/// wrapped into `[-180, 180)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub r: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, r: f64) -> Self {
        Self { x, y, r: wrap_degrees(r) }
    }

    pub fn distance_xy(&self, other: &Pose) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Camera geometry: image size in pixels and the floor area one image covers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub image_width: u32,
    pub image_height: u32,
    pub footprint_width: f64,
    pub footprint_height: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            image_width: 808,
            image_height: 608,
            footprint_width: 0.109,
            footprint_height: 0.082,
        }
    }
}

impl CameraModel {
    /// Pixels per meter along the column axis.
    pub fn scale_x(&self) -> f64 {
        self.image_width as f64 / self.footprint_width
    }

    /// Pixels per meter along the row axis.
    pub fn scale_y(&self) -> f64 {
        self.image_height as f64 / self.footprint_height
    }
}

/// Rectangular floor region `[0, width] x [0, height]`, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extent {
    pub width: f64,
    pub height: f64,
}

impl Extent {
    pub fn new(width: f64, height: f64) -> Self {
        Self { width, height }
    }

    pub fn square(side: f64) -> Self {
        Self { width: side, height: side }
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.width).contains(&x) && (0.0..=self.height).contains(&y)
    }
}

/// One persistent floor feature.
#[derive(Debug, Clone)]
pub struct FieldFeature {
    pub x: f64,
    pub y: f64,
    pub response: f32,
    pub descriptor: Vec<f32>,
}

/// The synthetic floor: position-locked features with stable descriptors.
#[derive(Debug, Clone)]
pub struct FeatureField {
    features: Vec<FieldFeature>,
    extent: Extent,
    seed: u64,
}

impl FeatureField {
    pub fn features(&self) -> &[FieldFeature] {
        &self.features
    }

    pub fn extent(&self) -> Extent {
        self.extent
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Adds a hand-placed feature; used by tests that need a feature at an
    /// exact world position.
    pub fn push_feature(&mut self, feature: FieldFeature) {
        self.features.push(feature);
    }
}

/// One recorded view: pose, camera, and the keypoints seen there.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRecord {
    pub view_id: ViewId,
    pub pose: Pose,
    pub camera: CameraModel,
    pub keypoints: Vec<Keypoint>,
}

/// A full dataset: shared camera, the seed of the field it was rendered
/// from, and the views.
#[derive(Debug, Clone, PartialEq)]
pub struct FloorDataset {
    pub camera: CameraModel,
    pub field_seed: u64,
    pub views: Vec<ViewRecord>,
}

/// Scatters `density * area` features uniformly over the extent, each with a
/// random unit descriptor and a response in `(0, 1]`. Deterministic per seed.
pub fn generate_field(extent: Extent, density: f64, seed: u64) -> Result<FeatureField> {
    if !(extent.area() > 0.0) {
        return Err(Error::InvalidExtent(format!(
            "extent {}x{} has no area",
            extent.width, extent.height
        )));
    }
    if !(density > 0.0) {
        return Err(Error::InvalidExtent(format!("density {density} must be positive")));
    }
    let count = (density * extent.area()).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(count);
    for _ in 0..count {
        let x = rng.gen_range(0.0..=extent.width);
        let y = rng.gen_range(0.0..=extent.height);
        let response = (1.0 - rng.gen::<f64>()) as f32; // (0, 1]
        let raw: Vec<f64> = (0..DESCRIPTOR_LEN).map(|_| rng.sample(StandardNormal)).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let descriptor: Vec<f32> = raw.iter().map(|v| (v / norm) as f32).collect();
        features.push(FieldFeature { x, y, response, descriptor });
    }
    Ok(FeatureField { features, extent, seed })
}

/// Renders the view a camera at `pose` would capture: features inside the
/// rotated footprint rectangle become keypoints at their pixel positions,
/// with optional Gaussian descriptor noise (re-normalized). With zero noise
/// the same world feature has an identical descriptor in every view.
pub fn render_view(
    field: &FeatureField,
    view_id: ViewId,
    pose: Pose,
    camera: &CameraModel,
    noise_sigma: f64,
    seed: u64,
) -> Result<ViewRecord> {
    if !field.extent().contains(pose.x, pose.y) {
        return Err(Error::InvalidExtent(format!(
            "pose ({}, {}) outside field extent",
            pose.x, pose.y
        )));
    }
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed.wrapping_add(view_id.0.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    let half_w = camera.footprint_width / 2.0;
    let half_h = camera.footprint_height / 2.0;
    let (sin_r, cos_r) = pose.r.to_radians().sin_cos();
    let mut keypoints = Vec::new();
    for feature in field.features() {
        let dx = feature.x - pose.x;
        let dy = feature.y - pose.y;
        // Rotate the world offset by -r into the camera frame.
        let cx = cos_r * dx + sin_r * dy;
        let cy = -sin_r * dx + cos_r * dy;
        if cx.abs() > half_w || cy.abs() > half_h {
            continue;
        }
        let n = camera.image_width as f64 / 2.0 + cx * camera.scale_x();
        let m = camera.image_height as f64 / 2.0 + cy * camera.scale_y();
        let descriptor = if noise_sigma > 0.0 {
            let noisy: Vec<f64> = feature
                .descriptor
                .iter()
                .map(|&v| v as f64 + noise_sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let norm = noisy.iter().map(|v| v * v).sum::<f64>().sqrt();
            noisy.iter().map(|v| (v / norm) as f32).collect()
        } else {
            feature.descriptor.clone()
        };
        keypoints.push(Keypoint::new(m as f32, n as f32, feature.response, descriptor));
    }
    if keypoints.is_empty() {
        return Err(Error::EmptyView(view_id));
    }
    Ok(ViewRecord { view_id, pose, camera: *camera, keypoints })
}

/// Boustrophedon sweep over the extent: interior grid poses spaced by `step`
/// along lanes and `lane_spacing` across them, heading alternating between 0
/// and 180 degrees per lane.
pub fn zigzag_trajectory(extent: Extent, lane_spacing: f64, step: f64) -> Vec<Pose> {
    assert!(lane_spacing > 0.0 && step > 0.0, "spacing and step must be positive");
    assert!(
        lane_spacing < extent.height && step < extent.width,
        "spacing and step must be smaller than the extent sides"
    );
    let lanes = (((extent.height / lane_spacing) + 1e-9).floor() as usize).saturating_sub(1).max(1);
    let per_lane = (((extent.width / step) + 1e-9).floor() as usize).saturating_sub(1).max(2);
    let mut poses = Vec::with_capacity(lanes * per_lane);
    for lane in 0..lanes {
        let y = lane_spacing * (lane + 1) as f64;
        let forward = lane % 2 == 0;
        let heading = if forward { 0.0 } else { 180.0 };
        for i in 0..per_lane {
            let idx = if forward { i } else { per_lane - 1 - i };
            let x = step * (idx + 1) as f64;
            poses.push(Pose::new(x, y, heading));
        }
    }
    poses
}

/// Renders a view for every pose, assigning ids `id_offset, id_offset+1,
/// ...`. Poses whose view turns out featureless are skipped and reported in
/// the second return value.
pub fn render_trajectory(
    field: &FeatureField,
    poses: &[Pose],
    camera: &CameraModel,
    noise_sigma: f64,
    seed: u64,
    id_offset: u64,
) -> (Vec<ViewRecord>, Vec<ViewId>) {
    let mut views = Vec::with_capacity(poses.len());
    let mut skipped = Vec::new();
    for (i, &pose) in poses.iter().enumerate() {
        let id = ViewId(id_offset + i as u64);
        match render_view(field, id, pose, camera, noise_sigma, seed) {
            Ok(view) => views.push(view),
            Err(_) => skipped.push(id),
        }
    }
    (views, skipped)
}

fn fmt_f32(v: f32) -> String {
    format!("{v:.8e}")
}

/// Writes the dataset as line-delimited text: a header record with format
/// version, camera model and field seed, then one line per view with the
/// pose and every keypoint (floats serialized as 32-bit, 9 significant
/// digits).
pub fn write_dataset(dataset: &FloorDataset, path: &Path) -> Result<()> {
    for view in &dataset.views {
        if view.camera != dataset.camera {
            return Err(Error::Schema(format!(
                "view {} uses a different camera than the dataset header",
                view.view_id
            )));
        }
    }
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    let cam = &dataset.camera;
    writeln!(
        out,
        "{DATASET_MAGIC} {} {} {} {} {}",
        cam.image_width,
        cam.image_height,
        fmt_f32(cam.footprint_width as f32),
        fmt_f32(cam.footprint_height as f32),
        dataset.field_seed
    )?;
    for view in &dataset.views {
        write!(
            out,
            "{} {} {} {} {}",
            view.view_id,
            fmt_f32(view.pose.x as f32),
            fmt_f32(view.pose.y as f32),
            fmt_f32(view.pose.r as f32),
            view.keypoints.len()
        )?;
        for kp in &view.keypoints {
            write!(out, " {} {} {}", fmt_f32(kp.m), fmt_f32(kp.n), fmt_f32(kp.response))?;
            for &d in &kp.descriptor {
                write!(out, " {}", fmt_f32(d))?;
            }
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

struct TokenReader<'a> {
    tokens: std::str::SplitAsciiWhitespace<'a>,
    line: usize,
}

impl<'a> TokenReader<'a> {
    fn new(text: &'a str, line: usize) -> Self {
        Self { tokens: text.split_ascii_whitespace(), line }
    }

    fn next(&mut self) -> Result<&'a str> {
        self.tokens.next().ok_or(Error::Parse {
            line: self.line,
            message: "unexpected end of line".into(),
        })
    }

    fn next_f32(&mut self) -> Result<f32> {
        let tok = self.next()?;
        tok.parse().map_err(|_| Error::Parse {
            line: self.line,
            message: format!("invalid float '{tok}'"),
        })
    }

    fn next_usize(&mut self) -> Result<usize> {
        let tok = self.next()?;
        tok.parse().map_err(|_| Error::Parse {
            line: self.line,
            message: format!("invalid integer '{tok}'"),
        })
    }

    fn next_u64(&mut self) -> Result<u64> {
        let tok = self.next()?;
        tok.parse().map_err(|_| Error::Parse {
            line: self.line,
            message: format!("invalid integer '{tok}'"),
        })
    }

    fn next_u32(&mut self) -> Result<u32> {
        let tok = self.next()?;
        tok.parse().map_err(|_| Error::Parse {
            line: self.line,
            message: format!("invalid integer '{tok}'"),
        })
    }

    fn finish(mut self) -> Result<()> {
        if self.tokens.next().is_some() {
            return Err(Error::Parse {
                line: self.line,
                message: "trailing tokens".into(),
            });
        }
        Ok(())
    }
}

/// Reads a dataset written by [`write_dataset`].
pub fn read_dataset(path: &Path) -> Result<FloorDataset> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or(Error::Parse { line: 1, message: "empty file".into() })??;
    let mut tok = TokenReader::new(&header, 1);
    let magic = tok.next()?;
    if magic != DATASET_MAGIC {
        return Err(Error::Version {
            expected: DATASET_MAGIC.into(),
            found: magic.into(),
        });
    }
    let camera = CameraModel {
        image_width: tok.next_u32()?,
        image_height: tok.next_u32()?,
        footprint_width: tok.next_f32()? as f64,
        footprint_height: tok.next_f32()? as f64,
    };
    let field_seed = tok.next_u64()?;
    tok.finish()?;

    let mut views = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut tok = TokenReader::new(&line, line_no);
        let view_id = ViewId(tok.next_u64()?);
        let x = tok.next_f32()? as f64;
        let y = tok.next_f32()? as f64;
        let r = tok.next_f32()? as f64;
        let count = tok.next_usize()?;
        let mut keypoints = Vec::with_capacity(count);
        for _ in 0..count {
            let m = tok.next_f32()?;
            let n = tok.next_f32()?;
            let response = tok.next_f32()?;
            let mut descriptor = Vec::with_capacity(DESCRIPTOR_LEN);
            for _ in 0..DESCRIPTOR_LEN {
                descriptor.push(tok.next_f32()?);
            }
            keypoints.push(Keypoint::new(m, n, response, descriptor));
        }
        tok.finish()?;
        views.push(ViewRecord { view_id, pose: Pose::new(x, y, r), camera, keypoints });
    }
    Ok(FloorDataset { camera, field_seed, views })
}

/// Imports externally extracted keypoints. The keypoints file holds per-view
/// blocks:
///
/// ```text
/// view <view_id> <count>
/// <m> <n> <response> <d0> ... <d127>     (count lines)
/// ```
///
/// and the poses file one `<view_id> <x> <y> <r>` per line. Views are joined
/// by id; a keypoint view without a pose is an error, descriptors must have
/// exactly 128 entries, and pixel coordinates must lie inside the image.
pub fn import_keypoints(
    keypoints_path: &Path,
    poses_path: &Path,
    camera: &CameraModel,
) -> Result<Vec<ViewRecord>> {
    let mut poses = std::collections::BTreeMap::new();
    let pose_file = BufReader::new(File::open(poses_path)?);
    for (idx, line) in pose_file.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tok = TokenReader::new(&line, line_no);
        let id = ViewId(tok.next_u64()?);
        let x = tok.next_f32()? as f64;
        let y = tok.next_f32()? as f64;
        let r = tok.next_f32()? as f64;
        tok.finish()?;
        poses.insert(id, Pose::new(x, y, r));
    }

    let mut views: Vec<ViewRecord> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    let kp_file = BufReader::new(File::open(keypoints_path)?);
    let mut lines = kp_file.lines().enumerate();
    while let Some((idx, line)) = lines.next() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tok = TokenReader::new(&line, line_no);
        let keyword = tok.next()?;
        if keyword != "view" {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 'view' block header, found '{keyword}'"),
            });
        }
        let view_id = ViewId(tok.next_u64()?);
        let count = tok.next_usize()?;
        tok.finish()?;
        if !seen.insert(view_id) {
            return Err(Error::Schema(format!("duplicate view id {view_id}")));
        }
        let pose = *poses.get(&view_id).ok_or(Error::Join(view_id))?;
        let mut keypoints = Vec::with_capacity(count);
        for _ in 0..count {
            let (idx, line) = lines.next().ok_or(Error::Parse {
                line: line_no,
                message: format!("view {view_id}: truncated keypoint block"),
            })?;
            let kp_line_no = idx + 1;
            let line = line?;
            let fields: Vec<&str> = line.split_ascii_whitespace().collect();
            if fields.len() != 3 + DESCRIPTOR_LEN {
                return Err(Error::Schema(format!(
                    "line {kp_line_no}: keypoint has {} descriptor values, expected {DESCRIPTOR_LEN}",
                    fields.len().saturating_sub(3)
                )));
            }
            let parse = |s: &str| -> Result<f32> {
                s.parse().map_err(|_| Error::Parse {
                    line: kp_line_no,
                    message: format!("invalid float '{s}'"),
                })
            };
            let m = parse(fields[0])?;
            let n = parse(fields[1])?;
            let response = parse(fields[2])?;
            if !(0.0..=camera.image_height as f32).contains(&m)
                || !(0.0..=camera.image_width as f32).contains(&n)
            {
                return Err(Error::Schema(format!(
                    "line {kp_line_no}: keypoint ({m}, {n}) outside image bounds"
                )));
            }
            let descriptor: Result<Vec<f32>> = fields[3..].iter().map(|s| parse(s)).collect();
            keypoints.push(Keypoint::new(m, n, response, descriptor?));
        }
        views.push(ViewRecord { view_id, pose, camera: *camera, keypoints });
    }
    Ok(views)
}
