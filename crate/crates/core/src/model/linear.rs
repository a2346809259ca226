use crate::data::Point;

use super::ModelError;

/// Fits `x(t)` and `y(t)` by least squares over the observed instants and
/// extrapolates `t_pred` further instants.
pub fn linear_baseline(observed: &[Point], t_pred: usize) -> Result<Vec<Point>, ModelError> {
    let n = observed.len();
    if n < 2 {
        return Err(ModelError::TooFewObserved(n));
    }
    let t_mean = (n - 1) as f64 / 2.0;
    let mean = |f: fn(&Point) -> f64| observed.iter().map(f).sum::<f64>() / n as f64;
    let (x_mean, y_mean) = (mean(|p| p.x), mean(|p| p.y));
    let mut sxx = 0.0;
    let (mut sx, mut sy) = (0.0, 0.0);
    for (t, p) in observed.iter().enumerate() {
        let dt = t as f64 - t_mean;
        sxx += dt * dt;
        sx += dt * (p.x - x_mean);
        sy += dt * (p.y - y_mean);
    }
    let (vx, vy) = (sx / sxx, sy / sxx);
    Ok((n..n + t_pred)
        .map(|t| {
            let dt = t as f64 - t_mean;
            Point::new(x_mean + vx * dt, y_mean + vy * dt)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_velocity_continues_exactly() {
        let obs: Vec<Point> = (0..8).map(|k| Point::new(-0.5 + 0.03 * k as f64, 0.2 - 0.01 * k as f64)).collect();
        let pred = linear_baseline(&obs, 12).unwrap();
        for (j, p) in pred.iter().enumerate() {
            let k = (8 + j) as f64;
            assert!(p.distance(Point::new(-0.5 + 0.03 * k, 0.2 - 0.01 * k)) < 1e-9);
        }
    }

    #[test]
    fn stationary_stays_put() {
        let obs = vec![Point::new(0.1, 0.4); 8];
        for p in linear_baseline(&obs, 5).unwrap() {
            assert!(p.distance(Point::new(0.1, 0.4)) < 1e-15);
        }
    }

    #[test]
    fn slope_matches_normal_equations() {
        let ys = [0.0, 0.11, 0.19, 0.32, 0.38, 0.52];
        let obs: Vec<Point> = ys.iter().map(|&y| Point::new(0.0, y)).collect();
        // Solve [n, St; St, Stt] [a, b] = [Sy, Sty] directly.
        let n = ys.len() as f64;
        let st: f64 = (0..ys.len()).map(|t| t as f64).sum();
        let stt: f64 = (0..ys.len()).map(|t| (t * t) as f64).sum();
        let sy: f64 = ys.iter().sum();
        let sty: f64 = ys.iter().enumerate().map(|(t, y)| t as f64 * y).sum();
        let det = n * stt - st * st;
        let b = (n * sty - st * sy) / det;
        let a = (stt * sy - st * sty) / det;
        let pred = linear_baseline(&obs, 2).unwrap();
        assert!((pred[0].y - (a + b * 6.0)).abs() < 1e-12);
        assert!((pred[1].y - pred[0].y - b).abs() < 1e-12);
    }

    #[test]
    fn needs_two_points() {
        assert!(matches!(linear_baseline(&[Point::ZERO], 3), Err(ModelError::TooFewObserved(1))));
    }
}
