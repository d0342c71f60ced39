//! Self-contained SVG charts: training curves and gradient-magnitude histograms.

use std::fmt::Write as _;

use super::histogram::GradHistogramRecord;
use super::metrics::EpochMetrics;

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 220.0;
const GAP: f64 = 30.0;
const HIST_COLS: usize = 3;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Series<'a> {
    label: &'a str,
    points: Vec<(f64, f64)>,
}

struct Doc {
    body: String,
    width: f64,
    height: f64,
}

impl Doc {
    fn new() -> Self {
        Self {
            body: String::new(),
            width: 0.0,
            height: 0.0,
        }
    }

    fn extend_to(&mut self, x: f64, y: f64) {
        self.width = self.width.max(x);
        self.height = self.height.max(y);
    }

    fn text(&mut self, x: f64, y: f64, size: u32, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.1}" y="{y:.1}" font-size="{size}" text-anchor="{anchor}" font-family="sans-serif">{}</text>"#,
            escape(s)
        );
    }

    fn frame(&mut self, x: f64, y: f64, title: &str) {
        let _ = writeln!(
            self.body,
            r##"<rect x="{x:.1}" y="{y:.1}" width="{PANEL_W:.1}" height="{PANEL_H:.1}" fill="none" stroke="#999"/>"##
        );
        self.text(x + PANEL_W / 2.0, y - 8.0, 13, "middle", title);
        self.extend_to(x + PANEL_W + GAP, y + PANEL_H + GAP);
    }

    /// Line chart of several series sharing axes.
    fn lines(&mut self, x: f64, y: f64, title: &str, series: &[Series]) {
        self.frame(x, y, title);
        let pts = series.iter().flat_map(|s| s.points.iter());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(px, py) in pts.filter(|p| p.1.is_finite()) {
            x0 = x0.min(px);
            x1 = x1.max(px);
            y0 = y0.min(py);
            y1 = y1.max(py);
        }
        if x0 > x1 {
            self.text(x + PANEL_W / 2.0, y + PANEL_H / 2.0, 12, "middle", "no data");
            return;
        }
        if x1 == x0 {
            x1 = x0 + 1.0;
        }
        if y1 == y0 {
            y1 = y0 + 1.0;
        }
        let pad = 10.0;
        let sx = |v: f64| x + pad + (v - x0) / (x1 - x0) * (PANEL_W - 2.0 * pad);
        let sy = |v: f64| y + PANEL_H - pad - (v - y0) / (y1 - y0) * (PANEL_H - 2.0 * pad);
        self.text(x + 2.0, y + 12.0, 10, "start", &format!("{y1:.4}"));
        self.text(x + 2.0, y + PANEL_H - 2.0, 10, "start", &format!("{y0:.4}"));
        self.text(x + PANEL_W - 2.0, y + PANEL_H + 12.0, 10, "end", &format!("epoch {x1}"));
        for (i, s) in series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let path: Vec<String> = s
                .points
                .iter()
                .filter(|p| p.1.is_finite())
                .map(|&(px, py)| format!("{:.1},{:.1}", sx(px), sy(py)))
                .collect();
            let _ = writeln!(
                self.body,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                path.join(" ")
            );
            let ly = y + 16.0 + 14.0 * i as f64;
            let _ = writeln!(
                self.body,
                r#"<rect x="{:.1}" y="{:.1}" width="10" height="3" fill="{color}"/>"#,
                x + PANEL_W - 110.0,
                ly - 4.0
            );
            self.text(x + PANEL_W - 96.0, ly, 10, "start", s.label);
        }
    }

    /// Overlaid histograms (underflow, 64 bins, overflow), each normalized to its own total.
    fn histograms(&mut self, x: f64, y: f64, title: &str, hists: &[(&str, &GradHistogramRecord)]) {
        self.frame(x, y, title);
        let columns = |r: &GradHistogramRecord| -> Vec<f64> {
            let total = r.total().max(1) as f64;
            std::iter::once(r.underflow)
                .chain(r.counts.iter().copied())
                .chain(std::iter::once(r.overflow))
                .map(|c| c as f64 / total)
                .collect()
        };
        let all: Vec<Vec<f64>> = hists.iter().map(|(_, r)| columns(r)).collect();
        let top = all.iter().flatten().copied().fold(0.0, f64::max).max(1e-12);
        let n = all.first().map_or(1, Vec::len) as f64;
        let bar = (PANEL_W - 20.0) / n;
        for (i, cols) in all.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            for (j, &f) in cols.iter().enumerate() {
                if f == 0.0 {
                    continue;
                }
                let h = f / top * (PANEL_H - 40.0);
                let _ = writeln!(
                    self.body,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.45"/>"#,
                    x + 10.0 + j as f64 * bar,
                    y + PANEL_H - 20.0 - h,
                    bar,
                    h
                );
            }
            let (label, r) = hists[i];
            self.text(
                x + 8.0,
                y + 14.0 + 13.0 * i as f64,
                10,
                "start",
                &format!(
                    "{label}: mean {:.3e} std {:.3e} skew {:.3}",
                    r.mean(),
                    r.std(),
                    r.skew()
                ),
            );
        }
        self.text(x + 10.0, y + PANEL_H - 6.0, 10, "start", "|g| < 1e-12");
        self.text(x + PANEL_W - 10.0, y + PANEL_H - 6.0, 10, "end", "|g| >= 1e2");
    }

    fn finish(self) -> String {
        let (w, h) = (self.width.max(1.0), self.height.max(1.0));
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body
        )
    }
}

fn curve(metrics: &[EpochMetrics], f: impl Fn(&EpochMetrics) -> f64) -> Vec<(f64, f64)> {
    metrics.iter().map(|m| (m.epoch as f64, f(m))).collect()
}

/// Records from the last epoch present, in their original order.
fn final_epoch(records: &[GradHistogramRecord]) -> Vec<&GradHistogramRecord> {
    let last = records.iter().map(|r| r.epoch).max();
    records.iter().filter(|r| Some(r.epoch) == last).collect()
}

fn histogram_grid(doc: &mut Doc, top: f64, panels: Vec<(String, Vec<(&str, &GradHistogramRecord)>)>) {
    for (i, (title, hists)) in panels.into_iter().enumerate() {
        let col = (i % HIST_COLS) as f64;
        let row = (i / HIST_COLS) as f64;
        doc.histograms(
            GAP + col * (PANEL_W + GAP),
            top + row * (PANEL_H + GAP + 10.0),
            &title,
            &hists,
        );
    }
}

/// Loss and accuracy curves plus a gradient histogram per layer at the final epoch.
pub fn run_report(metrics: &[EpochMetrics], records: &[GradHistogramRecord]) -> String {
    let mut doc = Doc::new();
    doc.lines(
        GAP,
        GAP,
        "loss",
        &[
            Series {
                label: "train",
                points: curve(metrics, |m| m.train_loss),
            },
            Series {
                label: "validation",
                points: curve(metrics, |m| m.val_loss),
            },
        ],
    );
    doc.lines(
        2.0 * GAP + PANEL_W,
        GAP,
        "top-1 accuracy (%)",
        &[
            Series {
                label: "train",
                points: curve(metrics, |m| m.train_accuracy),
            },
            Series {
                label: "validation",
                points: curve(metrics, |m| m.val_accuracy),
            },
        ],
    );
    let panels = final_epoch(records)
        .into_iter()
        .map(|r| (format!("{} (epoch {})", r.layer, r.epoch), vec![("grad", r)]))
        .collect();
    histogram_grid(&mut doc, 2.0 * GAP + PANEL_H + 20.0, panels);
    doc.finish()
}

/// Both runs' curves and, for every layer name they share, overlaid final-epoch histograms.
pub fn comparison_report(
    a: (&str, &[EpochMetrics], &[GradHistogramRecord]),
    b: (&str, &[EpochMetrics], &[GradHistogramRecord]),
) -> String {
    let mut doc = Doc::new();
    let (la, ma, ra) = a;
    let (lb, mb, rb) = b;
    let la_train = format!("{la} train");
    let lb_train = format!("{lb} train");
    let la_val = format!("{la} val");
    let lb_val = format!("{lb} val");
    doc.lines(
        GAP,
        GAP,
        "train loss",
        &[
            Series {
                label: &la_train,
                points: curve(ma, |m| m.train_loss),
            },
            Series {
                label: &lb_train,
                points: curve(mb, |m| m.train_loss),
            },
        ],
    );
    doc.lines(
        2.0 * GAP + PANEL_W,
        GAP,
        "validation top-1 accuracy (%)",
        &[
            Series {
                label: &la_val,
                points: curve(ma, |m| m.val_accuracy),
            },
            Series {
                label: &lb_val,
                points: curve(mb, |m| m.val_accuracy),
            },
        ],
    );
    let fb = final_epoch(rb);
    let panels = final_epoch(ra)
        .into_iter()
        .filter_map(|r| {
            let other = fb.iter().find(|o| o.layer == r.layer)?;
            Some((r.layer.clone(), vec![(la, r), (lb, *other)]))
        })
        .collect();
    histogram_grid(&mut doc, 2.0 * GAP + PANEL_H + 20.0, panels);
    doc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes_and_is_deterministic() {
        let r = vec![GradHistogramRecord::from_values("a<b", 2, "train", &[0.5, 1e-3])];
        let m = vec![EpochMetrics {
            epoch: 0,
            train_loss: 2.0,
            train_accuracy: 10.0,
            val_loss: 2.1,
            val_accuracy: 12.0,
            lr: 0.1,
            clip_threshold: None,
            clip_events: 0,
            wall_seconds: 1.0,
            peak_bytes: 10,
        }];
        let s = run_report(&m, &r);
        assert!(s.starts_with("<svg xmlns=\"http://www.w3.org/2000/svg\""));
        assert!(s.contains("a&lt;b"));
        assert!(!s.contains("href"));
        assert_eq!(s, run_report(&m, &r));
        assert!(run_report(&[], &[]).contains("no data"));
    }
}
