//! Minimal SVG charts.

use std::fmt::Write;

use seeable::detector::ScoreRow;
use seeable::training::LogRow;

const W: f64 = 640.0;
const H: f64 = 360.0;
const M: f64 = 48.0;

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
                (l.min(v), h.max(v))
            });
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, lo + 0.5)
            }
        };
        Self {
            x: span(&mut xs.clone()),
            y: span(&mut ys.clone()),
        }
    }

    fn px(&self, x: f64) -> f64 {
        M + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * M)
    }

    fn py(&self, y: f64) -> f64 {
        H - M - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * M)
    }

    fn axes(&self, svg: &mut String, title: &str, xlabel: &str) {
        let _ = write!(
            svg,
            r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - 2.0 * M,
            H - 2.0 * M
        );
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{title}</text>"#,
            W / 2.0,
            M - 16.0
        );
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#,
            W / 2.0,
            H - 12.0
        );
        for (v, anchor, x, y) in [
            (self.x.0, "start", M, H - M + 16.0),
            (self.x.1, "end", W - M, H - M + 16.0),
        ] {
            let _ = write!(
                svg,
                r#"<text x="{x}" y="{y}" text-anchor="{anchor}" font-size="11">{v:.4}</text>"#
            );
        }
        for (v, y) in [(self.y.0, H - M), (self.y.1, M + 10.0)] {
            let _ = write!(
                svg,
                r#"<text x="{}" y="{y}" text-anchor="end" font-size="11">{v:.4}</text>"#,
                M - 4.0
            );
        }
    }
}

fn open() -> String {
    format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="13">"#
    )
}

/// Name, stroke colour and value of one plotted series.
type Series = (&'static str, &'static str, fn(&LogRow) -> f64);

/// Total, bcr and guidance per epoch.
pub fn loss_curves(rows: &[LogRow]) -> String {
    let series: [Series; 3] = [
        ("total", "#1f77b4", |r| r.total),
        ("bcr", "#2ca02c", |r| r.bcr),
        ("guidance", "#d62728", |r| r.guidance),
    ];
    let frame = Frame::new(
        rows.iter().map(|r| r.epoch as f64),
        rows.iter().flat_map(|r| [r.total, r.bcr, r.guidance]),
    );
    let mut svg = open();
    frame.axes(&mut svg, "training loss", "epoch");
    for (i, (name, color, get)) in series.iter().enumerate() {
        let pts: Vec<String> = rows
            .iter()
            .map(|r| format!("{:.2},{:.2}", frame.px(r.epoch as f64), frame.py(get(r))))
            .collect();
        let _ = write!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#,
            W - M - 70.0,
            M + 18.0 * (i as f64 + 1.0)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

const BINS: usize = 20;

/// Overlaid anomaly-score histograms of real and fake videos.
pub fn score_histogram(rows: &[ScoreRow]) -> String {
    let scores = rows.iter().map(|r| r.anomaly_score);
    let (lo, hi) = scores
        .clone()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
            (l.min(v), h.max(v))
        });
    let width = if hi > lo {
        (hi - lo) / BINS as f64
    } else {
        1.0
    };
    let mut counts = [[0usize; BINS]; 2];
    for r in rows {
        let b = (((r.anomaly_score - lo) / width) as usize).min(BINS - 1);
        counts[r.is_fake as usize][b] += 1;
    }
    let top = counts.iter().flatten().copied().max().unwrap_or(1).max(1);
    let frame = Frame::new(
        [lo, lo + width * BINS as f64].into_iter(),
        [0.0, top as f64].into_iter(),
    );
    let mut svg = open();
    frame.axes(&mut svg, "anomaly scores", "anomaly score");
    for (k, (name, color)) in [("real", "#1f77b4"), ("fake", "#d62728")]
        .iter()
        .enumerate()
    {
        for (b, &c) in counts[k].iter().enumerate() {
            if c == 0 {
                continue;
            }
            let x0 = frame.px(lo + width * b as f64);
            let x1 = frame.px(lo + width * (b + 1) as f64);
            let y = frame.py(c as f64);
            let _ = write!(
                svg,
                r#"<rect x="{x0:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.5"/>"#,
                x1 - x0,
                H - M - y
            );
        }
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#,
            W - M - 50.0,
            M + 18.0 * (k as f64 + 1.0)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
