//! SVG and CSV rendering of trajectories, forecasts and the scene grid.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use scene_lstm::data::{Point, SceneDataset};
use scene_lstm::eval::PredictionRow;
use scene_lstm::scenegrid::GridConfig;
use scene_lstm::train::Checkpoint;

/// Side of the square canvas in pixels.
pub const CANVAS: f64 = 480.0;

#[derive(Clone, Debug)]
pub struct PlotData {
    pub grid: GridConfig,
    pub flags: Vec<bool>,
    /// Whole true track of every target that appears in the dump.
    pub truths: Vec<(u64, Vec<Point>)>,
    /// Forecast per (window, target), in frame order.
    pub predictions: Vec<((usize, u64), Vec<Point>)>,
}

impl PlotData {
    pub fn new(ds: &SceneDataset, rows: &[PredictionRow], checkpoint: Option<&Checkpoint>) -> Self {
        let (grid, flags) = match checkpoint {
            Some(ck) => (ck.weights.dims.grid, ck.flags.clone()),
            None => {
                let grid = GridConfig::new(8, 4).expect("default grid");
                (grid, vec![false; grid.num_cells()])
            }
        };
        let mut by_key: BTreeMap<(usize, u64), Vec<(u64, Point)>> = BTreeMap::new();
        for r in rows {
            by_key.entry((r.window, r.target)).or_default().push((r.frame, r.pred));
        }
        let predictions = by_key
            .into_iter()
            .map(|(k, mut pts)| {
                pts.sort_by_key(|(f, _)| *f);
                (k, pts.into_iter().map(|(_, p)| p).collect())
            })
            .collect();
        let ids: BTreeSet<u64> = rows.iter().map(|r| r.target).collect();
        let truths = ds
            .trajectories
            .iter()
            .filter(|t| ids.contains(&t.target_id))
            .map(|t| (t.target_id, t.positions()))
            .collect();
        PlotData {
            grid,
            flags,
            truths,
            predictions,
        }
    }

    pub fn shaded_cells(&self) -> Vec<usize> {
        (0..self.flags.len()).filter(|&j| self.flags[j]).collect()
    }
}

fn px(v: f64) -> f64 {
    (v + 1.0) * CANVAS / 2.0
}

fn points_attr(pts: &[Point]) -> String {
    pts.iter()
        .map(|p| format!("{:.2},{:.2}", px(p.x), px(p.y)))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn render_svg(d: &PlotData) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}">"#
    );
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{CANVAS}" height="{CANVAS}" fill="#ffffff"/>"##);
    s.push_str("<g id=\"cells\">\n");
    for j in d.shaded_cells() {
        let (x0, y0, x1, y1) = d.grid.cell_bounds(j);
        let _ = writeln!(
            s,
            r##"<rect class="nonlinear" data-cell="{j}" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#f4a6c6" fill-opacity="0.6"/>"##,
            px(x0),
            px(y0),
            px(x1) - px(x0),
            px(y1) - px(y0)
        );
    }
    s.push_str("</g>\n<g id=\"grid\" stroke=\"#999999\" stroke-width=\"1\">\n");
    let n = d.grid.grid_dim;
    for k in 0..=n {
        let v = CANVAS * k as f64 / n as f64;
        let _ = writeln!(s, r#"<line class="grid" x1="{v:.2}" y1="0" x2="{v:.2}" y2="{CANVAS}"/>"#);
        let _ = writeln!(s, r#"<line class="grid" x1="0" y1="{v:.2}" x2="{CANVAS}" y2="{v:.2}"/>"#);
    }
    s.push_str("</g>\n<g id=\"truth\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\">\n");
    for (id, pts) in &d.truths {
        let _ = writeln!(s, r#"<polyline class="truth" data-target="{id}" points="{}"/>"#, points_attr(pts));
    }
    s.push_str("</g>\n<g id=\"pred\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"1\" stroke-dasharray=\"4 2\">\n");
    for ((w, id), pts) in &d.predictions {
        let _ = writeln!(
            s,
            r#"<polyline class="pred" data-window="{w}" data-target="{id}" points="{}"/>"#,
            points_attr(pts)
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}

/// `layer,id,index,x,y` in normalized coordinates: four corners per shaded
/// cell, then every true and forecast point.
pub fn render_csv(d: &PlotData) -> String {
    let mut s = String::from("layer,id,index,x,y\n");
    for j in d.shaded_cells() {
        let (x0, y0, x1, y1) = d.grid.cell_bounds(j);
        for (k, (x, y)) in [(x0, y0), (x1, y0), (x1, y1), (x0, y1)].into_iter().enumerate() {
            let _ = writeln!(s, "cell,{j},{k},{x},{y}");
        }
    }
    for (id, pts) in &d.truths {
        for (k, p) in pts.iter().enumerate() {
            let _ = writeln!(s, "truth,{id},{k},{},{}", p.x, p.y);
        }
    }
    for ((w, id), pts) in &d.predictions {
        for (k, p) in pts.iter().enumerate() {
            let _ = writeln!(s, "pred,{w}:{id},{k},{},{}", p.x, p.y);
        }
    }
    s
}
