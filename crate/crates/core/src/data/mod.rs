//! Trajectory annotations: parsing, normalization, interpolation and
//! extraction of fixed-length windows.

mod synth;

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::BufRead;
use std::ops::{Add, Sub};
use std::path::Path;

use thiserror::Error;

pub use synth::{generate_synthetic, SceneKind};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate annotation for target {target} at frame {frame}")]
    Duplicate { line: usize, frame: u64, target: u64 },
    #[error("at least two control points are needed, got {0}")]
    TooFewControlPoints(usize),
    #[error("frame step must be at least 1")]
    ZeroFrameStep,
    #[error("header line {line}: {reason}")]
    Header { line: usize, reason: String },
    #[error("unknown scene kind `{0}` (expected straight, alley_turn or stop_region)")]
    UnknownSceneKind(String),
    #[error("negative noise standard deviation {0}")]
    NegativeNoise(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A 2-D location or displacement.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ZERO: Point = Point { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point) -> f64 {
        (self - other).norm()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub frame: u64,
    pub pos: Point,
}

/// Frame-ascending track of one target.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub target_id: u64,
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn positions(&self) -> Vec<Point> {
        self.points.iter().map(|p| p.pos).collect()
    }

    pub fn position_at(&self, frame: u64) -> Option<Point> {
        self.points
            .binary_search_by_key(&frame, |p| p.frame)
            .ok()
            .map(|i| self.points[i].pos)
    }
}

/// Dataset-level metadata, optionally read from a `key=value` sidecar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetHeader {
    pub width: f64,
    pub height: f64,
    pub frame_step: u64,
}

impl Default for DatasetHeader {
    fn default() -> Self {
        DatasetHeader {
            width: 480.0,
            height: 480.0,
            frame_step: 10,
        }
    }
}

impl DatasetHeader {
    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut header = DatasetHeader::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| DataError::Header { line: i + 1, reason };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got `{line}`")))?;
            let value = value.trim();
            let int = || -> Result<u64, DataError> {
                value
                    .parse::<u64>()
                    .ok()
                    .filter(|&v| v > 0)
                    .ok_or_else(|| err(format!("`{value}` is not a positive integer")))
            };
            match key.trim() {
                "width" => header.width = int()? as f64,
                "height" => header.height = int()? as f64,
                "frame_step" => header.frame_step = int()?,
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        Ok(header)
    }

    pub fn render(&self) -> String {
        format!(
            "width={}\nheight={}\nframe_step={}\n",
            self.width, self.height, self.frame_step
        )
    }
}

/// One video's worth of normalized trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub name: String,
    pub frame_rate: f64,
    pub header: DatasetHeader,
    /// Sorted by target id.
    pub trajectories: Vec<Trajectory>,
    /// Points that fell outside the image and were clamped.
    pub clamped_points: usize,
    /// Targets dropped because they had a single annotation.
    pub dropped_targets: usize,
}

impl SceneDataset {
    pub fn empty(name: &str, header: DatasetHeader) -> Self {
        SceneDataset {
            name: name.to_string(),
            frame_rate: 25.0,
            header,
            trajectories: Vec::new(),
            clamped_points: 0,
            dropped_targets: 0,
        }
    }

    pub fn warnings(&self) -> usize {
        self.clamped_points + self.dropped_targets
    }

    /// First and last annotated frame.
    pub fn frame_span(&self) -> Option<(u64, u64)> {
        let first = self.trajectories.iter().filter_map(|t| t.points.first()).map(|p| p.frame).min()?;
        let last = self.trajectories.iter().filter_map(|t| t.points.last()).map(|p| p.frame).max()?;
        Some((first, last))
    }

    /// Number of sampling instants between the first and last frame, inclusive.
    pub fn num_samples(&self) -> usize {
        self.frame_span()
            .map_or(0, |(a, b)| ((b - a) / self.header.frame_step) as usize + 1)
    }

    /// Keeps only points with `lo <= frame < hi`; tracks left with fewer
    /// than two points are dropped.
    pub fn restrict_frames(&self, lo: u64, hi: u64) -> SceneDataset {
        let trajectories = self
            .trajectories
            .iter()
            .filter_map(|t| {
                let points: Vec<_> = t.points.iter().copied().filter(|p| p.frame >= lo && p.frame < hi).collect();
                (points.len() >= 2).then_some(Trajectory {
                    target_id: t.target_id,
                    points,
                })
            })
            .collect();
        SceneDataset {
            trajectories,
            clamped_points: 0,
            dropped_targets: 0,
            ..self.clone()
        }
    }

    /// Splits by sample index: the first `fraction` of sampling instants.
    pub fn leading_fraction(&self, fraction: f64) -> SceneDataset {
        let Some((first, _)) = self.frame_span() else {
            return self.clone();
        };
        let n = (fraction * self.num_samples() as f64).floor() as u64;
        self.restrict_frames(first, first + n * self.header.frame_step)
    }

    /// The trailing `fraction` of sampling instants.
    pub fn trailing_fraction(&self, fraction: f64) -> SceneDataset {
        let Some((first, last)) = self.frame_span() else {
            return self.clone();
        };
        let total = self.num_samples() as u64;
        let keep = (fraction * total as f64).ceil() as u64;
        let start = first + (total - keep.min(total)) * self.header.frame_step;
        self.restrict_frames(start, last + 1)
    }

    /// Annotation text in source pixel units, one `frame id x y` line per point.
    pub fn to_annotation_text(&self) -> String {
        let mut rows: Vec<(u64, u64, Point)> = self
            .trajectories
            .iter()
            .flat_map(|t| t.points.iter().map(move |p| (p.frame, t.target_id, p.pos)))
            .collect();
        rows.sort_by_key(|r| (r.0, r.1));
        let mut out = String::new();
        for (frame, id, pos) in rows {
            let (px, py) = denormalize_point(pos, self.header.width, self.header.height);
            let _ = writeln!(out, "{frame} {id} {px} {py}");
        }
        out
    }
}

/// Pixel annotations straight from a file, before normalization.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PixelAnnotations {
    /// target id -> frame-sorted (frame, x, y)
    pub tracks: BTreeMap<u64, Vec<(u64, f64, f64)>>,
}

/// Reads `frame id x y` lines; `#` starts a comment.
pub fn parse_pixels<R: BufRead>(reader: R) -> Result<PixelAnnotations, DataError> {
    let mut tracks: BTreeMap<u64, Vec<(u64, f64, f64)>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let malformed = |reason: String| DataError::Malformed { line: line_no, reason };
        if fields.len() != 4 {
            return Err(malformed(format!("expected 4 fields `frame id x y`, got {}", fields.len())));
        }
        let frame = parse_index(fields[0]).ok_or_else(|| malformed(format!("bad frame `{}`", fields[0])))?;
        let target = parse_index(fields[1]).ok_or_else(|| malformed(format!("bad target id `{}`", fields[1])))?;
        let coord = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite());
        let x = coord(fields[2]).ok_or_else(|| malformed(format!("bad x `{}`", fields[2])))?;
        let y = coord(fields[3]).ok_or_else(|| malformed(format!("bad y `{}`", fields[3])))?;
        if !seen.insert((frame, target)) {
            return Err(DataError::Duplicate {
                line: line_no,
                frame,
                target,
            });
        }
        tracks.entry(target).or_default().push((frame, x, y));
    }
    for track in tracks.values_mut() {
        track.sort_by_key(|p| p.0);
    }
    Ok(PixelAnnotations { tracks })
}

/// Integer fields are accepted in float notation (`12.0`) as several public
/// distributions write them that way.
fn parse_index(s: &str) -> Option<u64> {
    if let Ok(v) = s.parse::<u64>() {
        return Some(v);
    }
    let f = s.parse::<f64>().ok()?;
    (f >= 0.0 && f.fract() == 0.0 && f < u64::MAX as f64).then_some(f as u64)
}

/// Maps pixel coordinates to `[-1, 1]`, clamping out-of-image values.
/// Returns the point and whether clamping happened.
pub fn normalize_point(x: f64, y: f64, width: f64, height: f64) -> (Point, bool) {
    let cx = x.clamp(0.0, width);
    let cy = y.clamp(0.0, height);
    let clamped = cx != x || cy != y;
    (Point::new(2.0 * cx / width - 1.0, 2.0 * cy / height - 1.0), clamped)
}

pub fn denormalize_point(p: Point, width: f64, height: f64) -> (f64, f64) {
    ((p.x + 1.0) * width / 2.0, (p.y + 1.0) * height / 2.0)
}

pub fn normalize(name: &str, pixels: &PixelAnnotations, header: DatasetHeader) -> SceneDataset {
    let mut ds = SceneDataset::empty(name, header);
    for (&target_id, track) in &pixels.tracks {
        if track.len() < 2 {
            ds.dropped_targets += 1;
            continue;
        }
        let points = track
            .iter()
            .map(|&(frame, x, y)| {
                let (pos, clamped) = normalize_point(x, y, header.width, header.height);
                ds.clamped_points += clamped as usize;
                TrajectoryPoint { frame, pos }
            })
            .collect();
        ds.trajectories.push(Trajectory { target_id, points });
    }
    if ds.warnings() > 0 {
        log::warn!(
            "{name}: {} clamped points, {} single-point targets dropped",
            ds.clamped_points,
            ds.dropped_targets
        );
    }
    ds
}

pub fn parse_annotations<R: BufRead>(name: &str, reader: R, header: DatasetHeader) -> Result<SceneDataset, DataError> {
    Ok(normalize(name, &parse_pixels(reader)?, header))
}

/// Sidecar path for an annotation file: `<file>.meta`.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    s.into()
}

/// Loads an annotation file plus its optional sidecar. The dataset is
/// named after the file stem.
pub fn load_dataset(path: &Path) -> Result<SceneDataset, DataError> {
    let meta = sidecar_path(path);
    let header = if meta.exists() {
        DatasetHeader::parse(&std::fs::read_to_string(&meta)?)?
    } else {
        DatasetHeader::default()
    };
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    let file = std::fs::File::open(path)?;
    parse_annotations(name, std::io::BufReader::new(file), header)
}

pub fn save_dataset(ds: &SceneDataset, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, ds.to_annotation_text())?;
    std::fs::write(sidecar_path(path), ds.header.render())?;
    Ok(())
}

/// Densifies a sparse track by linear interpolation at every multiple of
/// `frame_step` between the first and last control frame.
pub fn interpolate_control_points(sparse: &Trajectory, frame_step: u64) -> Result<Trajectory, DataError> {
    if frame_step == 0 {
        return Err(DataError::ZeroFrameStep);
    }
    let ctrl = &sparse.points;
    if ctrl.len() < 2 {
        return Err(DataError::TooFewControlPoints(ctrl.len()));
    }
    let (first, last) = (ctrl[0].frame, ctrl[ctrl.len() - 1].frame);
    let lattice = (first.div_ceil(frame_step)..=last / frame_step).map(|k| k * frame_step);
    let mut frames: Vec<u64> = lattice.chain(ctrl.iter().map(|p| p.frame)).collect();
    frames.sort_unstable();
    frames.dedup();
    let mut points = Vec::with_capacity(frames.len());
    let mut seg = 0;
    for frame in frames {
        while seg + 2 < ctrl.len() && ctrl[seg + 1].frame < frame {
            seg += 1;
        }
        let (a, b) = (ctrl[seg], ctrl[seg + 1]);
        let pos = if frame == a.frame {
            a.pos
        } else if frame == b.frame {
            b.pos
        } else {
            let w = (frame - a.frame) as f64 / (b.frame - a.frame) as f64;
            Point::new(a.pos.x + w * (b.pos.x - a.pos.x), a.pos.y + w * (b.pos.y - a.pos.y))
        };
        points.push(TrajectoryPoint { frame, pos });
    }
    Ok(Trajectory {
        target_id: sparse.target_id,
        points,
    })
}

/// Per-frame displacement; the first offset is zero.
pub fn compute_offsets(positions: &[Point]) -> Vec<Point> {
    let mut out = Vec::with_capacity(positions.len());
    for (i, &p) in positions.iter().enumerate() {
        out.push(if i == 0 { Point::ZERO } else { p - positions[i - 1] });
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchTarget {
    pub target_id: u64,
    pub positions: Vec<Point>,
    pub offsets: Vec<Point>,
}

/// A window of `t_obs + t_pred` consecutive sampling instants with every
/// target present throughout.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub start_frame: u64,
    pub t_obs: usize,
    pub t_pred: usize,
    /// Sorted by target id.
    pub targets: Vec<BatchTarget>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.t_obs + self.t_pred
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn from_tracks(start_frame: u64, t_obs: usize, t_pred: usize, tracks: Vec<(u64, Vec<Point>)>) -> Batch {
        let mut targets: Vec<BatchTarget> = tracks
            .into_iter()
            .map(|(target_id, positions)| BatchTarget {
                target_id,
                offsets: compute_offsets(&positions),
                positions,
            })
            .collect();
        targets.sort_by_key(|t| t.target_id);
        Batch {
            start_frame,
            t_obs,
            t_pred,
            targets,
        }
    }
}

/// Number of candidate window starts before empty windows are dropped.
pub fn candidate_windows(num_samples: usize, window: usize, stride: usize) -> usize {
    if num_samples < window || stride == 0 {
        0
    } else {
        (num_samples - window) / stride + 1
    }
}

/// Windows start at the first frame and advance by `stride` sampling
/// instants. Targets must be present at every instant of a window; windows
/// without any such target are dropped.
pub fn extract_batches(ds: &SceneDataset, t_obs: usize, t_pred: usize, stride: usize) -> Vec<Batch> {
    assert!(t_obs >= 1 && t_pred >= 1 && stride >= 1, "window sizes and stride must be positive");
    let window = t_obs + t_pred;
    let Some((first, _)) = ds.frame_span() else {
        return Vec::new();
    };
    let step = ds.header.frame_step;
    let n = candidate_windows(ds.num_samples(), window, stride);
    let mut out = Vec::new();
    for k in 0..n {
        let start = first + (k * stride) as u64 * step;
        let end = start + (window as u64 - 1) * step;
        let mut tracks = Vec::new();
        for traj in &ds.trajectories {
            let (Some(a), Some(b)) = (traj.points.first(), traj.points.last()) else {
                continue;
            };
            if a.frame > start || b.frame < end {
                continue;
            }
            let positions: Option<Vec<Point>> =
                (0..window as u64).map(|i| traj.position_at(start + i * step)).collect();
            if let Some(positions) = positions {
                tracks.push((traj.target_id, positions));
            }
        }
        if !tracks.is_empty() {
            out.push(Batch::from_tracks(start, t_obs, t_pred, tracks));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> SceneDataset {
        parse_annotations("t", text.as_bytes(), DatasetHeader::default()).unwrap()
    }

    fn track(id: u64, pts: &[(u64, f64, f64)]) -> Trajectory {
        Trajectory {
            target_id: id,
            points: pts
                .iter()
                .map(|&(frame, x, y)| TrajectoryPoint {
                    frame,
                    pos: Point::new(x, y),
                })
                .collect(),
        }
    }

    #[test]
    fn corners_map_to_unit_square_corners() {
        let ds = parse("0 1 0 0\n10 1 480 480\n");
        let t = &ds.trajectories[0];
        assert_eq!(t.target_id, 1);
        assert_eq!(t.points[0], TrajectoryPoint { frame: 0, pos: Point::new(-1.0, -1.0) });
        assert_eq!(t.points[1], TrajectoryPoint { frame: 10, pos: Point::new(1.0, 1.0) });
    }

    #[test]
    fn empty_stream_gives_empty_dataset() {
        let ds = parse("");
        assert!(ds.trajectories.is_empty());
        assert_eq!(ds.frame_span(), None);
    }

    #[test]
    fn centre_maps_to_origin() {
        let (p, clamped) = normalize_point(240.0, 240.0, 480.0, 480.0);
        assert_eq!(p, Point::ZERO);
        assert!(!clamped);
    }

    #[test]
    fn comments_tabs_and_sorting() {
        let ds = parse("# header\n10\t2  5 5\n0 2 0 0 # trailing\n\n5 1 1 1\n0 1 2 2\n");
        assert_eq!(ds.trajectories.len(), 2);
        assert_eq!(ds.trajectories[1].points[0].frame, 0);
        assert_eq!(ds.trajectories[1].points[1].frame, 10);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_annotations("t", "0 1 0 0\n1 2 x 3\n".as_bytes(), DatasetHeader::default()).unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 2, .. }), "{err}");
        let err = parse_annotations("t", "0 1 0\n".as_bytes(), DatasetHeader::default()).unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 1, .. }));
    }

    #[test]
    fn duplicate_pair_is_rejected() {
        let err = parse_annotations("t", "0 1 0 0\n0 1 3 3\n".as_bytes(), DatasetHeader::default()).unwrap_err();
        assert!(matches!(err, DataError::Duplicate { line: 2, frame: 0, target: 1 }));
    }

    #[test]
    fn float_notation_indices_are_accepted() {
        let ds = parse("0.0 1.0 0 0\n10.0 1.0 4 4\n");
        assert_eq!(ds.trajectories[0].points.len(), 2);
    }

    #[test]
    fn out_of_bounds_is_clamped_and_counted() {
        let header = DatasetHeader { width: 640.0, height: 480.0, frame_step: 10 };
        let ds = parse_annotations("t", "0 1 -5 0\n10 1 700 500\n".as_bytes(), header).unwrap();
        assert_eq!(ds.clamped_points, 2);
        assert_eq!(ds.trajectories[0].points[1].pos, Point::new(1.0, 1.0));
    }

    #[test]
    fn normalize_rectangular_image() {
        let norm = |x, y| normalize_point(x, y, 640.0, 480.0).0;
        assert_eq!(norm(0.0, 0.0), Point::new(-1.0, -1.0));
        assert_eq!(norm(640.0, 480.0), Point::new(1.0, 1.0));
        assert_eq!(norm(320.0, 120.0), Point::new(0.0, -0.5));
    }

    #[test]
    fn header_parsing() {
        let h = DatasetHeader::parse("width=640\n# c\nheight = 360\nframe_step=6\n").unwrap();
        assert_eq!(h, DatasetHeader { width: 640.0, height: 360.0, frame_step: 6 });
        assert!(DatasetHeader::parse("fps=25").is_err());
        assert!(DatasetHeader::parse("width=0").is_err());
        assert_eq!(DatasetHeader::parse(&h.render()).unwrap(), h);
    }

    #[test]
    fn interpolation_midpoint() {
        let dense = interpolate_control_points(&track(1, &[(0, 0.0, 0.0), (10, 1.0, 0.0)]), 5).unwrap();
        assert_eq!(dense.points.len(), 3);
        assert_eq!(dense.points[1], TrajectoryPoint { frame: 5, pos: Point::new(0.5, 0.0) });
    }

    #[test]
    fn interpolation_constant() {
        let dense = interpolate_control_points(&track(1, &[(0, 0.3, -0.2), (10, 0.3, -0.2)]), 1).unwrap();
        assert_eq!(dense.points.len(), 11);
        assert!(dense.points.iter().all(|p| p.pos == Point::new(0.3, -0.2)));
    }

    #[test]
    fn interpolation_reproduces_controls() {
        let sparse = track(1, &[(0, 0.0, 0.0), (10, 1.0, 0.0), (20, 1.0, 1.0)]);
        let dense = interpolate_control_points(&sparse, 10).unwrap();
        assert_eq!(dense, sparse);
    }

    #[test]
    fn interpolation_keeps_off_lattice_controls() {
        let sparse = track(1, &[(3, 0.0, 0.0), (13, 1.0, 0.0), (27, 1.0, 1.4)]);
        let dense = interpolate_control_points(&sparse, 5).unwrap();
        for c in &sparse.points {
            assert_eq!(dense.position_at(c.frame), Some(c.pos));
        }
        assert!(dense.points.windows(2).all(|w| w[0].frame < w[1].frame));
    }

    #[test]
    fn interpolation_needs_two_controls() {
        let err = interpolate_control_points(&track(1, &[(0, 0.0, 0.0)]), 5).unwrap_err();
        assert!(matches!(err, DataError::TooFewControlPoints(1)));
    }

    #[test]
    fn offsets_examples() {
        let pos = [Point::new(0.0, 0.0), Point::new(0.1, 0.0), Point::new(0.2, 0.1)];
        let off = compute_offsets(&pos);
        assert_eq!(off[0], Point::ZERO);
        assert_eq!(off[1], Point::new(0.1, 0.0));
        assert!((off[2].x - 0.1).abs() < 1e-15 && (off[2].y - 0.1).abs() < 1e-15);

        let still = compute_offsets(&[Point::new(0.4, 0.4); 5]);
        assert!(still.iter().all(|o| *o == Point::ZERO));
    }

    fn linear_dataset(frames: std::ops::Range<u64>, step: u64) -> SceneDataset {
        let mut ds = SceneDataset::empty("t", DatasetHeader { frame_step: step, ..Default::default() });
        ds.trajectories.push(Trajectory {
            target_id: 1,
            points: frames
                .map(|f| TrajectoryPoint { frame: f * step, pos: Point::new(f as f64 * 0.01, 0.0) })
                .collect(),
        });
        ds
    }

    #[test]
    fn one_window_for_twenty_frames() {
        let ds = linear_dataset(0..20, 1);
        let batches = extract_batches(&ds, 8, 12, 20);
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].targets[0].target_id, 1);
        assert_eq!(batches[0].targets[0].positions.len(), 20);
    }

    #[test]
    fn short_target_is_excluded() {
        let mut ds = linear_dataset(0..20, 10);
        ds.trajectories.push(Trajectory {
            target_id: 2,
            points: (0..10).map(|f| TrajectoryPoint { frame: f * 10, pos: Point::ZERO }).collect(),
        });
        let batches = extract_batches(&ds, 8, 12, 20);
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].targets.len(), 1);
    }

    #[test]
    fn forty_frames_give_twenty_one_windows() {
        assert_eq!(candidate_windows(40, 20, 1), 21);
        let ds = linear_dataset(0..40, 10);
        assert_eq!(extract_batches(&ds, 8, 12, 1).len(), 21);
        assert_eq!(candidate_windows(19, 20, 1), 0);
    }

    #[test]
    fn gap_in_track_excludes_target() {
        let mut ds = linear_dataset(0..20, 1);
        ds.trajectories[0].points.remove(7);
        assert!(extract_batches(&ds, 8, 12, 1).is_empty());
    }

    #[test]
    fn fractions_split_by_sample_index() {
        let ds = linear_dataset(0..40, 10);
        let head = ds.leading_fraction(0.5);
        let tail = ds.trailing_fraction(0.5);
        assert_eq!(head.num_samples(), 20);
        assert_eq!(tail.num_samples(), 20);
        assert_eq!(tail.frame_span(), Some((200, 390)));
        assert!(ds.leading_fraction(0.0).trajectories.is_empty());
    }
}
