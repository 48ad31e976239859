//! Static SVG scatter plots with trajectory overlays.

use std::fmt::Write;

use crate::numerics::Matrix;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

const MARGIN: f64 = 30.0;

struct Frame {
    lo: [f64; 2],
    scale: f64,
    h: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = [f64; 2]>, w: f64, h: f64) -> Frame {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        if !lo[0].is_finite() {
            lo = [0.0, 0.0];
            hi = [1.0, 1.0];
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
        let scale = ((w - 2.0 * MARGIN).min(h - 2.0 * MARGIN)) / span;
        Frame { lo, scale, h }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        let x = MARGIN + (p[0] - self.lo[0]) * self.scale;
        let y = self.h - MARGIN - (p[1] - self.lo[1]) * self.scale;
        (x, y)
    }
}

fn xy(row: &[f64]) -> [f64; 2] {
    [row[0], row.get(1).copied().unwrap_or(0.0)]
}

/// Latent points colored by snapshot, with one polyline per trajectory.
/// Only the first two coordinates are drawn.
pub fn scatter_svg(
    latent: &Matrix,
    timepoints: &[usize],
    trajectories: &[Vec<Vec<f64>>],
    width: u32,
    height: u32,
) -> String {
    let (w, h) = (width as f64, height as f64);
    let all = latent
        .row_iter()
        .map(xy)
        .chain(trajectories.iter().flatten().map(|r| xy(r)));
    let f = Frame::fit(all, w, h);
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{width}" height="{height}" fill="white"/>"#
    );
    let _ = writeln!(s, r#"<g id="cells">"#);
    for (i, r) in latent.row_iter().enumerate() {
        let (x, y) = f.map(xy(r));
        let c = PALETTE[timepoints.get(i).copied().unwrap_or(0) % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{c}" fill-opacity="0.7"/>"#
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<g id="trajectories" fill="none" stroke="black" stroke-opacity="0.5" stroke-width="1">"#
    );
    for path in trajectories {
        let pts: Vec<String> = path
            .iter()
            .map(|r| {
                let (x, y) = f.map(xy(r));
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}"/>"#, pts.join(" "));
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}

/// Line chart of a loss history.
pub fn loss_svg(values: &[f64], width: u32, height: u32) -> String {
    let (w, h) = (width as f64, height as f64);
    let pts: Vec<[f64; 2]> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .map(|(i, v)| [i as f64, *v])
        .collect();
    let (xmax, ymin, ymax) = pts.iter().fold(
        (1.0f64, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c), p| (a.max(p[0]), b.min(p[1]), c.max(p[1])),
    );
    let yspan = if ymax > ymin { ymax - ymin } else { 1.0 };
    let line: Vec<String> = pts
        .iter()
        .map(|p| {
            let x = MARGIN + p[0] / xmax * (w - 2.0 * MARGIN);
            let y = h - MARGIN - (p[1] - ymin) / yspan * (h - 2.0 * MARGIN);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n</svg>\n",
        line.join(" "),
        PALETTE[0]
    )
}
