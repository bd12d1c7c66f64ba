//! Static figures: 2D class embeddings with 1-std ellipses, and heatmaps.

use std::fmt::Write;

use cranio_core::analysis::ClassDistributionSummary;

const PALETTE: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];
const SIZE: f64 = 480.0;
const MARGIN: f64 = 40.0;

pub struct ScatterPoint<'a> {
    pub class: &'a str,
    pub xy: [f64; 2],
}

struct Frame {
    lo: [f64; 2],
    scale: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = [f64; 2]>) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        if !lo[0].is_finite() {
            return Self { lo: [0.0; 2], scale: 1.0 };
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
        Self {
            lo,
            scale: (SIZE - 2.0 * MARGIN) / span,
        }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        (
            MARGIN + (p[0] - self.lo[0]) * self.scale,
            SIZE - MARGIN - (p[1] - self.lo[1]) * self.scale,
        )
    }
}

fn header(title: &str, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{height}\" viewBox=\"0 0 {SIZE} {height}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        SIZE / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Points coloured by class, each class's 1-std ellipse, and an optional
/// highlighted patient.
pub fn embedding_svg(
    title: &str,
    points: &[ScatterPoint<'_>],
    contours: &ClassDistributionSummary,
    patient: Option<[f64; 2]>,
) -> String {
    let outlines: Vec<Vec<[f64; 2]>> = contours.classes.iter().map(|c| c.ellipse.outline(64)).collect();
    let frame = Frame::fit(
        points
            .iter()
            .map(|p| p.xy)
            .chain(outlines.iter().flatten().copied())
            .chain(patient),
    );
    let colour = |class: &str| {
        let i = contours
            .classes
            .iter()
            .position(|c| c.class.as_str() == class)
            .unwrap_or(PALETTE.len() - 1);
        PALETTE[i % PALETTE.len()]
    };
    let mut s = header(title, SIZE);
    for p in points {
        let (x, y) = frame.map(p.xy);
        let _ = writeln!(
            s,
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2.5\" fill=\"{}\" fill-opacity=\"0.6\"/>",
            colour(p.class)
        );
    }
    for (c, outline) in contours.classes.iter().zip(&outlines) {
        let pts: Vec<String> = outline
            .iter()
            .map(|&q| {
                let (x, y) = frame.map(q);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            "<polygon points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>",
            pts.join(" "),
            colour(c.class.as_str())
        );
    }
    for (i, c) in contours.classes.iter().enumerate() {
        let y = 40.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            SIZE - 110.0,
            y - 9.0,
            colour(c.class.as_str()),
            SIZE - 95.0,
            y,
            escape(c.class.as_str())
        );
    }
    if let Some(p) = patient {
        let (x, y) = frame.map(p);
        let _ = writeln!(
            s,
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"6\" fill=\"#ff69b4\" stroke=\"black\"/>"
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Row-major heatmap with a linear white-to-blue scale from 0 to the maximum.
pub fn heatmap_svg(title: &str, rows: &[Vec<f64>], column_names: &[String]) -> String {
    let n_rows = rows.len().max(1);
    let n_cols = column_names.len().max(1);
    let cell_w = (SIZE - 2.0 * MARGIN) / n_cols as f64;
    let cell_h = 6.0;
    let height = 2.0 * MARGIN + 80.0 + cell_h * n_rows as f64;
    let max = rows
        .iter()
        .flatten()
        .fold(0.0f64, |m, &v| if v.is_finite() { m.max(v) } else { m });
    let mut s = header(title, height);
    let top = MARGIN + 80.0;
    for (j, name) in column_names.iter().enumerate() {
        let x = MARGIN + (j as f64 + 0.5) * cell_w;
        let _ = writeln!(
            s,
            "<text x=\"{x:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"9\" transform=\"rotate(-60 {x:.2} {:.2})\">{}</text>",
            top - 4.0,
            top - 4.0,
            escape(name)
        );
    }
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let f = if max > 0.0 { (v / max).clamp(0.0, 1.0) } else { 0.0 };
            let shade = |a: f64, b: f64| (a + (b - a) * f).round() as u8;
            let _ = writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{cell_h}\" fill=\"#{:02x}{:02x}{:02x}\"/>",
                MARGIN + j as f64 * cell_w,
                top + i as f64 * cell_h,
                cell_w,
                shade(255.0, 8.0),
                shade(255.0, 48.0),
                shade(255.0, 107.0)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
