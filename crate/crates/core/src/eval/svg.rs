//! Minimal SVG rendering of the evaluation report.

use std::fmt::Write as _;

use super::EvalReport;

const COLORS: [&str; 5] = ["#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
const TRUTH_COLOR: &str = "#1f77b4";
const MAX_POINTS: usize = 1500;

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.x0 + (x - self.xmin) / (self.xmax - self.xmin) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        self.y0 + self.h - (y - self.ymin) / (self.ymax - self.ymin) * self.h
    }

    fn axes(&self, s: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let _ = writeln!(
            s,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#444"/>"##,
            self.x0, self.y0, self.w, self.h
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="14" text-anchor="middle">{title}</text>"#,
            self.x0 + self.w / 2.0,
            self.y0 - 8.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{xlabel}</text>"#,
            self.x0 + self.w / 2.0,
            self.y0 + self.h + 32.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{ylabel}</text>"#,
            self.x0 - 42.0,
            self.y0 + self.h / 2.0,
            self.x0 - 42.0,
            self.y0 + self.h / 2.0
        );
        for i in 0..=4 {
            let fx = self.xmin + (self.xmax - self.xmin) * i as f64 / 4.0;
            let fy = self.ymin + (self.ymax - self.ymin) * i as f64 / 4.0;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#,
                self.px(fx),
                self.y0 + self.h + 14.0,
                tick(fx)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{}</text>"#,
                self.x0 - 4.0,
                self.py(fy) + 3.0,
                tick(fy)
            );
        }
    }

    fn polyline(&self, s: &mut String, xs: &[f64], ys: &[f64], color: &str) {
        let step = xs.len().div_ceil(MAX_POINTS).max(1);
        let _ = write!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1" points=""#);
        for i in (0..xs.len()).step_by(step) {
            let _ = write!(s, "{:.1},{:.1} ", self.px(xs[i]), self.py(ys[i]));
        }
        s.push_str("\"/>\n");
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn header(s: &mut String, w: u32, h: u32, hash: &str) {
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, "<!-- config {hash} -->");
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
}

fn legend(s: &mut String, x: f64, y: f64, entries: &[(&str, &str)]) {
    for (i, (label, color)) in entries.iter().enumerate() {
        let yy = y + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{yy:.1}" x2="{:.1}" y2="{yy:.1}" stroke="{color}" stroke-width="3"/><text x="{:.1}" y="{:.1}" font-size="11">{label}</text>"#,
            x + 18.0,
            x + 24.0,
            yy + 4.0
        );
    }
}

/// Predicted versus true levels for both tanks.
pub fn prediction_svg(report: &EvalReport) -> String {
    let mut s = String::new();
    let (w, h) = (900u32, 620u32);
    header(&mut s, w, h, &report.config_hash);
    let t: Vec<f64> = (0..report.truth.cols())
        .map(|k| (report.warmup + 1 + k) as f64 * report.ts)
        .collect();
    let (tmin, tmax) = (t.first().copied().unwrap_or(0.0), t.last().copied().unwrap_or(1.0));
    for state in 0..report.truth.rows().min(2) {
        let mut ymin = f64::INFINITY;
        let mut ymax = f64::NEG_INFINITY;
        let series = std::iter::once(report.truth.row(state)).chain(report.models.iter().map(|m| m.prediction.row(state)));
        for v in series.flatten() {
            if v.is_finite() {
                ymin = ymin.min(*v);
                ymax = ymax.max(*v);
            }
        }
        if !(ymax > ymin) {
            ymin -= 0.5;
            ymax += 0.5;
        }
        let frame = Frame {
            x0: 70.0,
            y0: 40.0 + 290.0 * state as f64,
            w: 660.0,
            h: 220.0,
            xmin: tmin,
            xmax: if tmax > tmin { tmax } else { tmin + 1.0 },
            ymin,
            ymax,
        };
        frame.axes(&mut s, &format!("Tank {}", state + 1), "t [s]", &format!("h{} [m]", state + 1));
        frame.polyline(&mut s, &t, report.truth.row(state), TRUTH_COLOR);
        for (i, m) in report.models.iter().enumerate() {
            frame.polyline(&mut s, &t, m.prediction.row(state), COLORS[i % COLORS.len()]);
        }
    }
    let mut entries = vec![("truth", TRUTH_COLOR)];
    entries.extend(report.models.iter().enumerate().map(|(i, m)| (m.summary.name.as_str(), COLORS[i % COLORS.len()])));
    legend(&mut s, 750.0, 60.0, &entries);
    s.push_str("</svg>\n");
    s
}

/// Eigenvalues of every model with the linearized-plant eigenvalues on the
/// complex plane, unit circle for reference.
pub fn eigenvalue_svg(report: &EvalReport) -> String {
    let mut s = String::new();
    let (w, h) = (760u32, 600u32);
    header(&mut s, w, h, &report.config_hash);
    let mut r = 1.05f64;
    for m in &report.models {
        for [re, im] in &m.summary.eigenvalues {
            r = r.max(re.hypot(*im) * 1.05);
        }
    }
    let frame = Frame {
        x0: 70.0,
        y0: 40.0,
        w: 500.0,
        h: 500.0,
        xmin: -r,
        xmax: r,
        ymin: -r,
        ymax: r,
    };
    frame.axes(&mut s, "Koopman eigenvalues", "Re", "Im");
    let _ = writeln!(
        s,
        r##"<circle cx="{:.1}" cy="{:.1}" r="{:.1}" fill="none" stroke="#999" stroke-dasharray="4 3"/>"##,
        frame.px(0.0),
        frame.py(0.0),
        frame.px(1.0) - frame.px(0.0)
    );
    for (i, m) in report.models.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        for [re, im] in &m.summary.eigenvalues {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="none" stroke="{c}"/>"#,
                frame.px(*re),
                frame.py(*im)
            );
        }
    }
    for l in &report.truth_eigenvalues {
        let (x, y) = (frame.px(*l), frame.py(0.0));
        let _ = writeln!(
            s,
            r#"<path d="M{:.1},{:.1} L{:.1},{:.1} M{:.1},{:.1} L{:.1},{:.1}" stroke="{TRUTH_COLOR}" stroke-width="2"/>"#,
            x - 5.0,
            y - 5.0,
            x + 5.0,
            y + 5.0,
            x - 5.0,
            y + 5.0,
            x + 5.0,
            y - 5.0
        );
    }
    let mut entries = vec![("linearized truth", TRUTH_COLOR)];
    entries.extend(report.models.iter().enumerate().map(|(i, m)| (m.summary.name.as_str(), COLORS[i % COLORS.len()])));
    legend(&mut s, 590.0, 60.0, &entries);
    s.push_str("</svg>\n");
    s
}
