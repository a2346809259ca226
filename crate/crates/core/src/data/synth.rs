//! Synthetic scenes for desk-scale experiments.
//!
//! All geometry is in normalized coordinates and keyed to the default 8x8
//! grid: the alley turn happens inside the cell spanning `[0, 0.25]^2`, and
//! the stop region is the cell spanning `[0.25, 0.5] x [-0.5, -0.25]`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DataError, DatasetHeader, Point, SceneDataset, Trajectory, TrajectoryPoint};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneKind {
    /// Constant-velocity lines in random directions.
    Straight,
    /// Walk up an alley, then turn left or right inside one cell.
    AlleyTurn,
    /// Walk toward one cell and slow down to a standstill inside it.
    StopRegion,
}

impl SceneKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SceneKind::Straight => "straight",
            SceneKind::AlleyTurn => "alley_turn",
            SceneKind::StopRegion => "stop_region",
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SceneKind {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "straight" => Ok(SceneKind::Straight),
            "alley_turn" => Ok(SceneKind::AlleyTurn),
            "stop_region" => Ok(SceneKind::StopRegion),
            other => Err(DataError::UnknownSceneKind(other.to_string())),
        }
    }
}

/// Speed of alley walkers, per sampling instant.
pub const ALLEY_SPEED: f64 = 0.06;
/// Average number of targets on screen at once.
const CONCURRENCY: usize = 6;
const FRAME_STEP: u64 = 10;

pub fn generate_synthetic(kind: SceneKind, n_targets: usize, noise_std: f64, seed: u64) -> Result<SceneDataset, DataError> {
    if noise_std.is_nan() || noise_std < 0.0 {
        return Err(DataError::NegativeNoise(noise_std));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paths: Vec<Vec<Point>> = (0..n_targets)
        .map(|k| match kind {
            SceneKind::Straight => straight_path(&mut rng),
            SceneKind::AlleyTurn => alley_path(&mut rng, k % 2 == 0),
            SceneKind::StopRegion => stop_path(&mut rng),
        })
        .collect();

    let mean_len = paths.iter().map(Vec::len).sum::<usize>() / n_targets.max(1);
    let duration = (n_targets * mean_len / CONCURRENCY).max(mean_len + 1);
    let noise = Normal::new(0.0, noise_std).expect("validated noise");
    let header = DatasetHeader {
        width: 480.0,
        height: 480.0,
        frame_step: FRAME_STEP,
    };
    let mut ds = SceneDataset::empty(kind.as_str(), header);
    for (k, path) in paths.into_iter().enumerate() {
        let latest = duration.saturating_sub(path.len()).max(1);
        let start = rng.random_range(0..latest) as u64;
        let points = path
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                let p = if noise_std > 0.0 {
                    Point::new(p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng))
                } else {
                    p
                };
                TrajectoryPoint {
                    frame: (start + i as u64) * FRAME_STEP,
                    pos: Point::new(p.x.clamp(-1.0, 1.0), p.y.clamp(-1.0, 1.0)),
                }
            })
            .collect();
        ds.trajectories.push(Trajectory {
            target_id: k as u64 + 1,
            points,
        });
    }
    Ok(ds)
}

fn straight_path(rng: &mut ChaCha8Rng) -> Vec<Point> {
    const BOUND: f64 = 0.95;
    // Odd lengths put the middle sample exactly halfway along the line.
    let len = 21 + 2 * rng.random_range(0..6usize);
    let speed = rng.random_range(0.03..0.06);
    let theta = rng.random_range(0.0..2.0 * PI);
    let (dx, dy) = (speed * theta.cos(), speed * theta.sin());
    let span = (len - 1) as f64;
    let range = |d: f64| (-BOUND - (d * span).min(0.0), BOUND - (d * span).max(0.0));
    let (xr, yr) = (range(dx), range(dy));
    let x0 = rng.random_range(xr.0..=xr.1);
    let y0 = rng.random_range(yr.0..=yr.1);
    (0..len)
        .map(|k| Point::new(x0 + k as f64 * dx, y0 + k as f64 * dy))
        .collect()
}

fn alley_path(rng: &mut ChaCha8Rng, turn_left: bool) -> Vec<Point> {
    // Lane position within the turn cell decides the turn direction.
    let lane = if turn_left {
        rng.random_range(0.02..0.11)
    } else {
        rng.random_range(0.14..0.23)
    };
    let y_turn = rng.random_range(0.10..0.15);
    let up_steps = (rng.random_range(0.70..0.95) / ALLEY_SPEED).round() as usize;
    let side_steps = (rng.random_range(0.60..0.72) / ALLEY_SPEED).round() as usize;
    let dir = if turn_left { -1.0 } else { 1.0 };
    let mut path = Vec::with_capacity(up_steps + side_steps + 1);
    for k in 0..=up_steps {
        path.push(Point::new(lane, y_turn - (up_steps - k) as f64 * ALLEY_SPEED));
    }
    for k in 1..=side_steps {
        path.push(Point::new(lane + dir * k as f64 * ALLEY_SPEED, y_turn));
    }
    path
}

fn stop_path(rng: &mut ChaCha8Rng) -> Vec<Point> {
    let stop = Point::new(0.375 + rng.random_range(-0.05..0.05), -0.375 + rng.random_range(-0.05..0.05));
    let start = loop {
        let theta = rng.random_range(0.0..2.0 * PI);
        let dist = rng.random_range(0.5..0.8);
        let p = Point::new(stop.x - dist * theta.cos(), stop.y - dist * theta.sin());
        if p.x.abs() < 0.95 && p.y.abs() < 0.95 {
            break p;
        }
    };
    let speed: f64 = 0.05;
    let mut path = vec![start];
    let mut p = start;
    loop {
        let to_go = stop - p;
        let r = to_go.norm();
        let step = speed.min(0.35 * r);
        if step < 0.002 {
            break;
        }
        p = Point::new(p.x + to_go.x / r * step, p.y + to_go.y / r * step);
        path.push(p);
    }
    let dwell = rng.random_range(4..9);
    path.extend(std::iter::repeat_n(p, dwell));
    path
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        for kind in [SceneKind::Straight, SceneKind::AlleyTurn, SceneKind::StopRegion] {
            let a = generate_synthetic(kind, 20, 0.01, 9).unwrap();
            let b = generate_synthetic(kind, 20, 0.01, 9).unwrap();
            assert_eq!(a.to_annotation_text(), b.to_annotation_text());
            assert_eq!(a, b);
        }
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!(matches!("zigzag".parse::<SceneKind>(), Err(DataError::UnknownSceneKind(_))));
        assert_eq!("alley_turn".parse::<SceneKind>().unwrap(), SceneKind::AlleyTurn);
    }

    #[test]
    fn negative_noise_is_rejected() {
        assert!(generate_synthetic(SceneKind::Straight, 3, -0.1, 1).is_err());
    }

    #[test]
    fn paths_stay_inside_domain() {
        for kind in [SceneKind::Straight, SceneKind::AlleyTurn, SceneKind::StopRegion] {
            let ds = generate_synthetic(kind, 200, 0.0, 3).unwrap();
            for t in &ds.trajectories {
                assert!(t.points.iter().all(|p| p.pos.x.abs() < 1.0 && p.pos.y.abs() < 1.0), "{kind}");
                assert!(t.points.windows(2).all(|w| w[0].frame < w[1].frame));
            }
        }
    }

    #[test]
    fn alley_turns_split_evenly() {
        let ds = generate_synthetic(SceneKind::AlleyTurn, 10, 0.0, 7).unwrap();
        let lefts = ds
            .trajectories
            .iter()
            .filter(|t| t.points.last().unwrap().pos.x < t.points[0].pos.x)
            .count();
        assert_eq!(lefts, 5);
    }

    #[test]
    fn stop_region_ends_nearly_still() {
        let ds = generate_synthetic(SceneKind::StopRegion, 10, 0.0, 7).unwrap();
        for t in &ds.trajectories {
            let n = t.points.len();
            let last_step = t.points[n - 1].pos.distance(t.points[n - 2].pos);
            assert!(last_step < 0.002);
            let end = t.points[n - 1].pos;
            assert!((0.25..0.5).contains(&end.x) && (-0.5..-0.25).contains(&end.y));
        }
    }
}
