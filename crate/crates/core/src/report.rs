//! CSV tables and SVG figures.
//!
//! Output depends only on the inputs: numbers are written with fixed
//! precision and elements are emitted in input order.

use std::fmt::Write as _;

use crate::csvio::fmt_float;
use crate::debias::constant::GridRow;
use crate::margincert::Verification;
use crate::pipeline::AlphaRow;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

/// One row per grid point.
pub fn bias_sweep_csv(grid: &[GridRow]) -> String {
    let mut s = String::from("b,pert_bac,epsilon_l,epsilon_v,admissible\n");
    for r in grid {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            fmt_float(r.b),
            fmt_float(r.pert_bac),
            opt(r.epsilon_l),
            fmt_float(r.epsilon_v),
            r.admissible
        );
    }
    s
}

pub fn alpha_sweep_csv(rows: &[AlphaRow]) -> String {
    let mut s = String::from("alpha,gram_norm,delta_clean,delta_pert,p_c,p_h\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            fmt_float(r.alpha),
            fmt_float(r.gram_norm),
            fmt_float(r.delta_clean),
            fmt_float(r.delta_pert),
            opt(r.p_c),
            opt(r.p_h)
        );
    }
    s
}

struct Svg {
    body: String,
}

impl Svg {
    fn new(title: &str) -> Svg {
        let mut body = String::new();
        let _ = writeln!(
            body,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">"
        );
        let _ = writeln!(body, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
        let _ = writeln!(body, "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">{}</text>", W / 2.0, escape(title));
        Svg { body }
    }

    fn empty(title: &str, note: &str) -> String {
        let mut s = Svg::new(title);
        let _ = writeln!(
            s.body,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"#666\">{}</text>",
            W / 2.0,
            H / 2.0,
            escape(note)
        );
        s.finish()
    }

    fn axes(&mut self, x: (f64, f64), y: (f64, f64), xlabel: &str, ylabel: &str) {
        let (x0, x1, y0, y1) = (PAD, W - PAD, H - PAD, PAD);
        let _ = writeln!(self.body, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>");
        let _ = writeln!(self.body, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>");
        for (v, px) in [(x.0, x0), (x.1, x1)] {
            let _ = writeln!(self.body, "<text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>", y0 + 16.0, tick(v));
        }
        for (v, py) in [(y.0, y0), (y.1, y1)] {
            let _ = writeln!(self.body, "<text x=\"{:.2}\" y=\"{py:.2}\" text-anchor=\"end\">{}</text>", x0 - 4.0, tick(v));
        }
        let _ = writeln!(self.body, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", W / 2.0, H - 12.0, escape(xlabel));
        let _ = writeln!(
            self.body,
            "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
            H / 2.0,
            H / 2.0,
            escape(ylabel)
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], x: (f64, f64), y: (f64, f64), color: &str) {
        let coords: Vec<String> = pts
            .iter()
            .map(|&(a, b)| format!("{:.2},{:.2}", sx(a, x), sy(b, y)))
            .collect();
        let _ = writeln!(self.body, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>", coords.join(" "));
    }

    fn legend(&mut self, items: &[(&str, &str)]) {
        for (i, (label, color)) in items.iter().enumerate() {
            let y = PAD + 14.0 * i as f64;
            let _ = writeln!(self.body, "<rect x=\"{}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{color}\"/>", W - PAD - 150.0, y);
            let _ = writeln!(self.body, "<text x=\"{}\" y=\"{:.2}\">{}</text>", W - PAD - 136.0, y + 9.0, escape(label));
        }
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick(v: f64) -> String {
    format!("{v:.3}")
}

fn sx(v: f64, r: (f64, f64)) -> f64 {
    PAD + (v - r.0) / (r.1 - r.0) * (W - 2.0 * PAD)
}

fn sy(v: f64, r: (f64, f64)) -> f64 {
    H - PAD - (v - r.0) / (r.1 - r.0) * (H - 2.0 * PAD)
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Perturbed BAC and both radii against the bias offset, each scaled to
/// its own range.
pub fn bias_sweep_svg(grid: &[GridRow]) -> String {
    let title = "Bias sweep: perturbed BAC and radii vs b";
    if grid.is_empty() {
        return Svg::empty(title, "no grid points");
    }
    let xr = range(grid.iter().map(|r| r.b));
    let mut svg = Svg::new(title);
    svg.axes(xr, (0.0, 1.0), "b", "normalised value");
    let series: [(&str, Vec<Option<f64>>); 3] = [
        ("pert BAC", grid.iter().map(|r| Some(r.pert_bac)).collect()),
        ("epsilon_V", grid.iter().map(|r| Some(r.epsilon_v)).collect()),
        ("epsilon_L", grid.iter().map(|r| r.epsilon_l).collect()),
    ];
    let mut legend = Vec::new();
    for (i, (name, vals)) in series.iter().enumerate() {
        if vals.iter().any(|v| v.is_none()) {
            continue;
        }
        let vals: Vec<f64> = vals.iter().map(|v| v.expect("checked")).collect();
        let (lo, hi) = range(vals.iter().cloned());
        let pts: Vec<(f64, f64)> = grid.iter().zip(&vals).map(|(r, v)| (r.b, (v - lo) / (hi - lo))).collect();
        svg.polyline(&pts, xr, (0.0, 1.0), COLORS[i]);
        legend.push((*name, COLORS[i]));
    }
    let adm: Vec<&GridRow> = grid.iter().filter(|r| r.admissible).collect();
    for r in adm {
        let _ = writeln!(
            svg.body,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{}\"/>",
            sx(r.b, xr),
            H - PAD + 6.0,
            COLORS[2]
        );
    }
    svg.legend(&legend);
    svg.finish()
}

/// Histogram of per-task certification changes.
pub fn cert_delta_histogram_svg(deltas: &[f64], bins: usize) -> String {
    let title = "Change in certified fraction after debiasing";
    let vals: Vec<f64> = deltas.iter().cloned().filter(|v| v.is_finite()).collect();
    if vals.is_empty() || bins == 0 {
        return Svg::empty(title, "no certification records");
    }
    let xr = range(vals.iter().cloned());
    let mut counts = vec![0usize; bins];
    for v in &vals {
        let i = (((v - xr.0) / (xr.1 - xr.0)) * bins as f64).floor() as usize;
        counts[i.min(bins - 1)] += 1;
    }
    let top = *counts.iter().max().expect("bins > 0") as f64;
    let mut svg = Svg::new(title);
    svg.axes(xr, (0.0, top), "delta", "count");
    let width = (xr.1 - xr.0) / bins as f64;
    for (i, c) in counts.iter().enumerate() {
        let a = xr.0 + width * i as f64;
        let (x0, x1) = (sx(a, xr), sx(a + width, xr));
        let y = sy(*c as f64, (0.0, top));
        let _ = writeln!(
            svg.body,
            "<rect x=\"{x0:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\" stroke=\"white\"/>",
            x1 - x0,
            H - PAD - y,
            COLORS[0]
        );
    }
    let positive = vals.iter().filter(|v| **v > 0.0).count();
    let _ = writeln!(
        svg.body,
        "<text x=\"{}\" y=\"44\" text-anchor=\"middle\">fraction with delta &gt; 0: {:.3}</text>",
        W / 2.0,
        positive as f64 / vals.len() as f64
    );
    svg.finish()
}

/// BAC on perturbed variants of certified and uncertified examples.
pub fn cert_bac_bars_svg(v: Option<&Verification>) -> String {
    let title = "Perturbed BAC: certified vs uncertified";
    let Some(v) = v else {
        return Svg::empty(title, "no certification records");
    };
    let bars = [("certified", v.certified_bac), ("uncertified", v.uncertified_bac)];
    if bars.iter().all(|(_, b)| b.is_none()) {
        return Svg::empty(title, "no certification records");
    }
    let mut svg = Svg::new(title);
    svg.axes((0.0, 2.0), (0.0, 1.0), "group", "BAC");
    for (i, (label, val)) in bars.iter().enumerate() {
        let cx = sx(0.5 + i as f64, (0.0, 2.0));
        match val {
            Some(b) => {
                let y = sy(*b, (0.0, 1.0));
                let _ = writeln!(
                    svg.body,
                    "<rect x=\"{:.2}\" y=\"{y:.2}\" width=\"80\" height=\"{:.2}\" fill=\"{}\"/>",
                    cx - 40.0,
                    H - PAD - y,
                    COLORS[i]
                );
                let _ = writeln!(svg.body, "<text x=\"{cx:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{b:.3}</text>", y - 4.0);
            }
            None => {
                let _ = writeln!(svg.body, "<text x=\"{cx:.2}\" y=\"{:.2}\" text-anchor=\"middle\" fill=\"#666\">empty</text>", H - PAD - 8.0);
            }
        }
        let _ = writeln!(svg.body, "<text x=\"{cx:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{label}</text>", H - PAD + 30.0);
    }
    svg.finish()
}

/// BAC changes and penalised norm against `log10(1 + α)`.
pub fn alpha_sweep_svg(rows: &[AlphaRow]) -> String {
    let title = "Gram penalty sweep";
    let rows: Vec<&AlphaRow> = rows.iter().filter(|r| r.alpha >= 0.0).collect();
    if rows.is_empty() {
        return Svg::empty(title, "no sweep rows");
    }
    let xs: Vec<f64> = rows.iter().map(|r| (1.0 + r.alpha).log10()).collect();
    let xr = range(xs.iter().cloned());
    let yr = range(rows.iter().flat_map(|r| [r.delta_clean, r.delta_pert]));
    let mut svg = Svg::new(title);
    svg.axes(xr, yr, "log10(1 + alpha)", "BAC change (points)");
    let clean: Vec<(f64, f64)> = xs.iter().zip(&rows).map(|(x, r)| (*x, r.delta_clean)).collect();
    let pert: Vec<(f64, f64)> = xs.iter().zip(&rows).map(|(x, r)| (*x, r.delta_pert)).collect();
    svg.polyline(&clean, xr, yr, COLORS[0]);
    svg.polyline(&pert, xr, yr, COLORS[1]);
    let nr = range(rows.iter().map(|r| r.gram_norm));
    let norm: Vec<(f64, f64)> = xs
        .iter()
        .zip(&rows)
        .map(|(x, r)| (*x, yr.0 + (r.gram_norm - nr.0) / (nr.1 - nr.0) * (yr.1 - yr.0)))
        .collect();
    svg.polyline(&norm, xr, yr, COLORS[3]);
    for (x, r) in xs.iter().zip(&rows) {
        if r.delta_clean >= 0.0 && r.delta_pert > 0.0 {
            let _ = writeln!(
                svg.body,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>",
                sx(*x, xr),
                sy(r.delta_pert, yr),
                COLORS[2]
            );
        }
    }
    svg.legend(&[("delta_clean", COLORS[0]), ("delta_pert", COLORS[1]), ("gram norm (scaled)", COLORS[3])]);
    svg.finish()
}
