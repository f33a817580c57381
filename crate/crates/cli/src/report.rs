//! CSV, JSON and SVG emission.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;
use stability_lab::experiment::ExperimentReport;

/// Floor on the gap-event probability.
pub const BOUND_3_64: f64 = 3.0 / 64.0;

pub const CSV_HEADER: &str = "n,gamma,l,trials,seed,freq_gap_event,ci_lo,ci_hi,freq_e1,freq_e2,freq_e1_and_e2,mean_gap,threshold,bound_3_64";

/// One line of an estimate or sweep output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub gamma: f64,
    pub l: f64,
    pub trials: u64,
    pub seed: u64,
    pub freq_gap_event: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub freq_e1: f64,
    pub freq_e2: f64,
    pub freq_e1_and_e2: f64,
    pub mean_gap: f64,
    pub threshold: f64,
    pub bound_3_64: f64,
}

impl From<&ExperimentReport> for SweepRow {
    fn from(r: &ExperimentReport) -> Self {
        Self {
            n: r.n,
            gamma: r.gamma,
            l: r.l,
            trials: r.trials,
            seed: r.seed,
            freq_gap_event: r.gap_event.freq,
            ci_lo: r.gap_event.ci_lo,
            ci_hi: r.gap_event.ci_hi,
            freq_e1: r.e1.freq,
            freq_e2: r.e2.freq,
            freq_e1_and_e2: r.e1_and_e2.freq,
            mean_gap: r.mean_gap,
            threshold: r.threshold,
            bound_3_64: BOUND_3_64,
        }
    }
}

/// `%.12g`: 12 significant digits, trailing zeros trimmed.
pub fn fmt_g12(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..12).contains(&exp) {
        let mantissa = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let decimals = (11 - exp) as usize;
    trim_fraction(&format!("{x:.decimals$}")).to_string()
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let fields = [
            r.n.to_string(),
            fmt_g12(r.gamma),
            fmt_g12(r.l),
            r.trials.to_string(),
            r.seed.to_string(),
            fmt_g12(r.freq_gap_event),
            fmt_g12(r.ci_lo),
            fmt_g12(r.ci_hi),
            fmt_g12(r.freq_e1),
            fmt_g12(r.freq_e2),
            fmt_g12(r.freq_e1_and_e2),
            fmt_g12(r.mean_gap),
            fmt_g12(r.threshold),
            fmt_g12(r.bound_3_64),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

struct Panel {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Panel {
    fn px(&self, x: f64) -> f64 {
        if self.xmax > self.xmin {
            self.x0 + (x - self.xmin) / (self.xmax - self.xmin) * self.w
        } else {
            self.x0 + self.w / 2.0
        }
    }

    fn py(&self, y: f64) -> f64 {
        self.y0 + self.h - (y - self.ymin) / (self.ymax - self.ymin) * self.h
    }

    fn path(&self, pts: &[(f64, f64)]) -> String {
        let mut d = String::new();
        for (i, &(x, y)) in pts.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { 'M' } else { 'L' }, self.px(x), self.py(y));
        }
        d.trim_end().to_string()
    }

    fn frame(&self, svg: &mut String, title: &str, ylabel: &str) {
        let _ = writeln!(
            svg,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
            self.x0, self.y0, self.w, self.h
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="14">{title}</text>"#,
            self.x0 + self.w / 2.0,
            self.y0 - 12.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">n</text>"#,
            self.x0 + self.w / 2.0,
            self.y0 + self.h + 36.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12" transform="rotate(-90 {:.2} {:.2})">{ylabel}</text>"#,
            self.x0 - 48.0,
            self.y0 + self.h / 2.0,
            self.x0 - 48.0,
            self.y0 + self.h / 2.0
        );
        for k in 0..=4 {
            let t = k as f64 / 4.0;
            let yv = self.ymin + t * (self.ymax - self.ymin);
            let xv = self.xmin + t * (self.xmax - self.xmin);
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="10">{}</text>"#,
                self.x0 - 4.0,
                self.py(yv) + 3.0,
                fmt_tick(yv)
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"#,
                self.px(xv),
                self.y0 + self.h + 16.0,
                fmt_tick(xv)
            );
        }
    }
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.08).max(1e-3);
    (lo - pad, hi + pad)
}

fn legend(svg: &mut String, x: f64, y: f64, entries: &[(&str, &str, bool)]) {
    for (i, (label, color, dashed)) in entries.iter().enumerate() {
        let yy = y + i as f64 * 16.0;
        let dash = if *dashed { r#" stroke-dasharray="6,4""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="{color}" stroke-width="2"{dash}/>"#,
            x + 24.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="11">{label}</text>"#,
            x + 30.0,
            yy + 4.0
        );
    }
}

/// Two panels against n: measured gap-event frequency with its 95% band and
/// the 3/64 floor; mean gap with the threshold curve `γ/4 + L/(32√n)`.
pub fn render_svg(rows: &[SweepRow]) -> String {
    let mut rows: Vec<&SweepRow> = rows.iter().collect();
    rows.sort_by_key(|r| r.n);
    let (width, height) = (960.0, 440.0);
    let xs = rows.iter().map(|r| r.n as f64);
    let xmin = xs.clone().fold(f64::INFINITY, f64::min);
    let xmax = xs.fold(f64::NEG_INFINITY, f64::max);
    let (xmin, xmax) = if xmin.is_finite() { (xmin, xmax) } else { (0.0, 1.0) };

    let freq_vals = rows
        .iter()
        .flat_map(|r| [r.ci_lo, r.ci_hi, r.freq_gap_event])
        .chain([BOUND_3_64, 0.0]);
    let (f_lo, f_hi) = padded_range(freq_vals);
    let left = Panel { x0: 80.0, y0: 50.0, w: 360.0, h: 300.0, xmin, xmax, ymin: f_lo.max(0.0), ymax: f_hi.min(1.0) };

    let gap_vals = rows.iter().flat_map(|r| [r.mean_gap, r.threshold]);
    let (g_lo, g_hi) = padded_range(gap_vals);
    let right = Panel { x0: 560.0, y0: 50.0, w: 360.0, h: 300.0, xmin, xmax, ymin: g_lo, ymax: g_hi };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);

    left.frame(&mut svg, "P(gap ≥ γ/4 + L/(32√n))", "frequency");
    let band: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.n as f64, r.ci_hi))
        .chain(rows.iter().rev().map(|r| (r.n as f64, r.ci_lo)))
        .collect();
    if !band.is_empty() {
        let _ = writeln!(svg, r#"<path d="{} Z" fill="steelblue" fill-opacity="0.2" stroke="none"/>"#, left.path(&band));
    }
    let freq: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.freq_gap_event)).collect();
    let _ = writeln!(svg, r#"<path d="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, left.path(&freq));
    for &(x, y) in &freq {
        let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#, left.px(x), left.py(y));
    }
    let floor = [(xmin, BOUND_3_64), (xmax, BOUND_3_64)];
    let _ = writeln!(
        svg,
        r#"<path d="{}" fill="none" stroke="firebrick" stroke-width="2" stroke-dasharray="6,4"/>"#,
        left.path(&floor)
    );
    legend(&mut svg, left.x0 + 10.0, left.y0 + 16.0, &[("measured frequency (95% band)", "steelblue", false), ("3/64 floor", "firebrick", true)]);

    right.frame(&mut svg, "mean gap vs threshold", "gap");
    let gap: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.mean_gap)).collect();
    let thr: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.threshold)).collect();
    let _ = writeln!(svg, r#"<path d="{}" fill="none" stroke="darkgreen" stroke-width="2"/>"#, right.path(&gap));
    for &(x, y) in &gap {
        let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="darkgreen"/>"#, right.px(x), right.py(y));
    }
    let _ = writeln!(
        svg,
        r#"<path d="{}" fill="none" stroke="firebrick" stroke-width="2" stroke-dasharray="6,4"/>"#,
        right.path(&thr)
    );
    legend(&mut svg, right.x0 + 10.0, right.y0 + 16.0, &[("measured mean gap", "darkgreen", false), ("γ/4 + L/(32√n)", "firebrick", true)]);

    svg.push_str("</svg>\n");
    svg
}
