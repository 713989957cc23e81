//! Minimal SVG line charts for summary tables: one chart per metric,
//! median polyline per lambda with a shaded interquartile band.

use crate::textio;
use crate::{Error, Result};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const WIDTH: f64 = 840.0;
const HEIGHT: f64 = 520.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 160.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f",
];

/// One parsed summary table.
pub struct SummaryTable {
    /// Metric names, in column order.
    pub metrics: Vec<String>,
    /// Rows grouped as (lambda label, t, per-metric [median, q25, q75]).
    pub rows: Vec<(String, f64, Vec<[f64; 3]>)>,
}

/// Parses a `summary.csv` produced by the retrain experiment.
pub fn parse_summary(path: impl AsRef<Path>) -> Result<SummaryTable> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(&display, "empty summary"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "lambda" || cols[1] != "t" || cols[2] != "n_seeds" {
        return Err(Error::parse(
            &display,
            format!("unexpected header {header:?}"),
        ));
    }
    let stat_cols = &cols[3..];
    if stat_cols.len() % 3 != 0 {
        return Err(Error::parse(
            &display,
            "statistic columns are not median/q25/q75 triplets",
        ));
    }
    let mut metrics = Vec::new();
    for triplet in stat_cols.chunks(3) {
        let name = triplet[0]
            .strip_suffix("_median")
            .ok_or_else(|| Error::parse(&display, format!("expected *_median, got {}", triplet[0])))?;
        if triplet[1] != format!("{name}_q25") || triplet[2] != format!("{name}_q75") {
            return Err(Error::parse(
                &display,
                format!("inconsistent triplet for metric {name}"),
            ));
        }
        metrics.push(name.to_string());
    }

    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::parse(
                &display,
                format!("line {}: {} fields, expected {}", idx + 2, fields.len(), cols.len()),
            ));
        }
        let lambda = fields[0].to_string();
        let t: f64 = fields[1]
            .parse()
            .map_err(|_| Error::parse(&display, format!("line {}: bad t", idx + 2)))?;
        let mut stats = Vec::with_capacity(metrics.len());
        for chunk in fields[3..].chunks(3) {
            let mut triple = [0.0f64; 3];
            for (slot, field) in triple.iter_mut().zip(chunk) {
                *slot = field
                    .parse()
                    .map_err(|_| Error::parse(&display, format!("line {}: bad float {field:?}", idx + 2)))?;
            }
            stats.push(triple);
        }
        rows.push((lambda, t, stats));
    }
    Ok(SummaryTable { metrics, rows })
}

struct Scale {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Scale {
    fn map(&self, v: f64) -> f64 {
        if self.hi == self.lo {
            return 0.5 * (self.px_lo + self.px_hi);
        }
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }
}

fn axis_ticks(lo: f64, hi: f64) -> Vec<f64> {
    if hi == lo {
        return vec![lo];
    }
    (0..=4).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect()
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 0.01 && v.abs() < 10_000.0 {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

/// Renders one SVG per metric from a summary table; returns the files
/// written. Metrics whose values are all NaN are skipped with a warning on
/// stderr.
pub fn render_curves(summary_csv: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let table = parse_summary(&summary_csv)?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let mut lambdas: Vec<String> = Vec::new();
    for (l, _, _) in &table.rows {
        if !lambdas.contains(l) {
            lambdas.push(l.clone());
        }
    }

    let mut written = Vec::new();
    for (mi, metric) in table.metrics.iter().enumerate() {
        // Collect finite points per lambda.
        let mut series: Vec<(String, Vec<(f64, [f64; 3])>)> = Vec::new();
        for l in &lambdas {
            let mut pts: Vec<(f64, [f64; 3])> = table
                .rows
                .iter()
                .filter(|(rl, _, _)| rl == l)
                .map(|(_, t, stats)| (*t, stats[mi]))
                .filter(|(_, s)| s.iter().all(|v| v.is_finite()))
                .collect();
            pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            if !pts.is_empty() {
                series.push((l.clone(), pts));
            }
        }
        if series.is_empty() {
            eprintln!("warning: metric {metric} has no finite values, chart skipped");
            continue;
        }

        let xs: Vec<f64> = series
            .iter()
            .flat_map(|(_, pts)| pts.iter().map(|(t, _)| *t))
            .collect();
        let ys: Vec<f64> = series
            .iter()
            .flat_map(|(_, pts)| pts.iter().flat_map(|(_, s)| s.iter().copied()))
            .collect();
        let (x_lo, x_hi) = bounds(&xs);
        let (mut y_lo, mut y_hi) = bounds(&ys);
        if y_lo == y_hi {
            y_lo -= 1.0;
            y_hi += 1.0;
        } else {
            let pad = 0.05 * (y_hi - y_lo);
            y_lo -= pad;
            y_hi += pad;
        }
        let x = Scale {
            lo: x_lo,
            hi: x_hi,
            px_lo: MARGIN_L,
            px_hi: WIDTH - MARGIN_R,
        };
        let y = Scale {
            lo: y_lo,
            hi: y_hi,
            px_lo: HEIGHT - MARGIN_B,
            px_hi: MARGIN_T,
        };

        let mut svg = String::new();
        let _ = write!(
            svg,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"13\">\n"
        );
        let _ = write!(svg, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n");
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"22\" font-size=\"16\">{metric} vs retraining iteration</text>\n",
            MARGIN_L
        );

        // Axes.
        let _ = write!(
            svg,
            "<line x1=\"{MARGIN_L}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n",
            HEIGHT - MARGIN_B,
            WIDTH - MARGIN_R
        );
        let _ = write!(
            svg,
            "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{}\" stroke=\"black\"/>\n",
            HEIGHT - MARGIN_B
        );
        for t in axis_ticks(x.lo, x.hi) {
            let px = x.map(t);
            let _ = write!(
                svg,
                "<line x1=\"{px}\" y1=\"{0}\" x2=\"{px}\" y2=\"{1}\" stroke=\"black\"/>\n<text x=\"{px}\" y=\"{2}\" text-anchor=\"middle\">{3}</text>\n",
                HEIGHT - MARGIN_B,
                HEIGHT - MARGIN_B + 5.0,
                HEIGHT - MARGIN_B + 20.0,
                fmt_tick(t)
            );
        }
        for v in axis_ticks(y.lo, y.hi) {
            let py = y.map(v);
            let _ = write!(
                svg,
                "<line x1=\"{0}\" y1=\"{py}\" x2=\"{MARGIN_L}\" y2=\"{py}\" stroke=\"black\"/>\n<text x=\"{1}\" y=\"{2}\" text-anchor=\"end\">{3}</text>\n",
                MARGIN_L - 5.0,
                MARGIN_L - 8.0,
                py + 4.0,
                fmt_tick(v)
            );
        }
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">retraining iteration t</text>\n",
            (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
            HEIGHT - 10.0
        );

        for (si, (label, pts)) in series.iter().enumerate() {
            let color = PALETTE[si % PALETTE.len()];
            // IQR band: forward along q75, back along q25.
            let mut band = String::from("M");
            for (t, s) in pts {
                let _ = write!(band, " {:.2},{:.2}", x.map(*t), y.map(s[2]));
            }
            for (t, s) in pts.iter().rev() {
                let _ = write!(band, " L {:.2},{:.2}", x.map(*t), y.map(s[1]));
            }
            let _ = write!(
                svg,
                "<path d=\"{band} Z\" fill=\"{color}\" opacity=\"0.15\" stroke=\"none\"/>\n"
            );
            // Median polyline.
            let line: Vec<String> = pts
                .iter()
                .map(|(t, s)| format!("{:.2},{:.2}", x.map(*t), y.map(s[0])))
                .collect();
            let _ = write!(
                svg,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                line.join(" ")
            );
            // Legend entry: numeric labels are lambda values.
            let legend = if label.parse::<f64>().is_ok() {
                format!("lambda = {label}")
            } else {
                label.clone()
            };
            let ly = MARGIN_T + 20.0 * si as f64;
            let _ = write!(
                svg,
                "<line x1=\"{0}\" y1=\"{ly}\" x2=\"{1}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"3\"/>\n<text x=\"{2}\" y=\"{3}\">{legend}</text>\n",
                WIDTH - MARGIN_R + 12.0,
                WIDTH - MARGIN_R + 40.0,
                WIDTH - MARGIN_R + 46.0,
                ly + 4.0
            );
        }
        let _ = write!(svg, "</svg>\n");

        let out = out_dir.join(format!("{metric}.svg"));
        std::fs::write(&out, svg).map_err(|e| Error::io(out.display().to_string(), e))?;
        written.push(out);
    }
    Ok(written)
}

fn bounds(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Writes a summary CSV row set (used by the retrain experiment and by
/// tests that need synthetic summaries).
pub fn write_summary_csv(
    path: impl AsRef<Path>,
    metric_names: &[String],
    rows: &[(String, usize, usize, Vec<[f64; 3]>)],
) -> Result<()> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut out = String::from("lambda,t,n_seeds");
    for name in metric_names {
        let _ = write!(out, ",{name}_median,{name}_q25,{name}_q75");
    }
    out.push('\n');
    for (lambda, t, n_seeds, stats) in rows {
        let _ = write!(out, "{lambda},{t},{n_seeds}");
        for s in stats {
            for v in s {
                let _ = write!(out, ",{}", textio::fmt_f64(*v));
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(&display, e))
}
