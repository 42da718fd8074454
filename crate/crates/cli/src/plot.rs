//! Plot data from an archive: one CSV and one static SVG per figure.
//!
//! | file | columns |
//! |------|---------|
//! | `lyapunov_vs_n.csv` | `E,n,value,std_error,running_infimum,lower_bound` |
//! | `deviation_vs_n.csv` | `E,n,threshold,measure,log10_measure,ci_lo,ci_hi` |
//! | `continuity_loglog.csv` | `E,N,delta,diff,log10_delta,log10_diff,proxy_diff,log10_proxy_diff` |
//!
//! Logarithms of zero are written as empty fields.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use skewshift::archive::missing_tables;

use crate::CliError;

pub const LYAPUNOV_HEADER: &str = "E,n,value,std_error,running_infimum,lower_bound";
pub const DEVIATION_HEADER: &str = "E,n,threshold,measure,log10_measure,ci_lo,ci_hi";
pub const CONTINUITY_HEADER: &str = "E,N,delta,diff,log10_delta,log10_diff,proxy_diff,log10_proxy_diff";

/// A table read back as named numeric columns.
struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn read(path: &Path) -> Result<Table, CliError> {
        let bad = |what: String| CliError::usage(format!("{}: {what}", path.display()));
        let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
        let headers = reader.headers().map_err(|e| bad(e.to_string()))?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| bad(e.to_string()))?;
            // non-numeric cells (the cocycle kind) read as NaN and are never used
            rows.push(record.iter().map(|c| c.parse().unwrap_or(f64::NAN)).collect());
        }
        Ok(Table { headers, rows })
    }

    fn column(&self, name: &str) -> Result<usize, CliError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::usage(format!("table lacks column `{name}`")))
    }

    fn pick(&self, names: &[&str]) -> Result<Vec<Vec<f64>>, CliError> {
        let idx = names.iter().map(|n| self.column(n)).collect::<Result<Vec<_>, _>>()?;
        Ok(self.rows.iter().map(|r| idx.iter().map(|&i| r[i]).collect()).collect())
    }
}

fn log10_cell(v: f64) -> String {
    if v > 0.0 && v.is_finite() {
        v.log10().to_string()
    } else {
        String::new()
    }
}

fn join(cells: &[String]) -> String {
    cells.join(",")
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

/// A minimal scatter-and-line chart. Non-finite points are dropped.
fn svg_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const L: f64 = 70.0;
    const R: f64 = 20.0;
    const T: f64 = 40.0;
    const B: f64 = 60.0;
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

    let finite: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{title}</text>"#, W / 2.0);
    let _ = writeln!(svg, r#"<line x1="{L}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - B, W - R, H - B);
    let _ = writeln!(svg, r#"<line x1="{L}" y1="{T}" x2="{L}" y2="{}" stroke="black"/>"#, H - B);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, (L + W - R) / 2.0, H - 15.0);
    let _ = writeln!(svg, r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{ylabel}</text>"#, (T + H - B) / 2.0, (T + H - B) / 2.0);
    if finite.is_empty() {
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">no data</text>"#, W / 2.0, H / 2.0);
        svg.push_str("</svg>\n");
        return svg;
    }
    let span = |vals: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if hi > lo {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (x0, x1) = span(&mut finite.iter().map(|p| p.0));
    let (y0, y1) = span(&mut finite.iter().map(|p| p.1));
    let px = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let py = |y: f64| H - B - (y - y0) / (y1 - y0) * (H - T - B);
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{}" text-anchor="middle">{xv:.3}</text>"#, px(xv), H - B + 18.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">{yv:.3}</text>"#, L - 6.0, py(yv) + 4.0);
    }
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<(f64, f64)> = s.points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
        if pts.len() > 1 {
            let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        }
        for &(x, y) in &pts {
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(x), py(y));
        }
        let ly = T + 16.0 * i as f64 + 8.0;
        let _ = writeln!(svg, r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/>"#, W - R - 190.0, ly - 9.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{ly}">{}</text>"#, W - R - 175.0, s.label);
    }
    svg.push_str("</svg>\n");
    svg
}

/// Group rows by their first column (the energy), keeping first-seen order.
fn by_energy(rows: &[Vec<f64>]) -> Vec<(f64, Vec<&Vec<f64>>)> {
    let mut groups: Vec<(f64, Vec<&Vec<f64>>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|(e, _)| e.to_bits() == r[0].to_bits()) {
            Some((_, g)) => g.push(r),
            None => groups.push((r[0], vec![r])),
        }
    }
    groups
}

pub fn cmd_plotdata(archive: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let missing = missing_tables(archive);
    if !missing.is_empty() {
        let names: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
        return Err(CliError::usage(format!("archive is missing tables: {}", names.join(", "))));
    }
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| archive.join("plots"));
    fs::create_dir_all(&out)?;

    let lyap = Table::read(&archive.join("tables/lyapunov.csv"))?
        .pick(&["E", "n", "value", "std_error", "running_infimum", "lower_bound"])?;
    let mut csv = format!("{LYAPUNOV_HEADER}\n");
    for r in &lyap {
        csv.push_str(&join(&r.iter().map(f64::to_string).collect::<Vec<_>>()));
        csv.push('\n');
    }
    fs::write(out.join("lyapunov_vs_n.csv"), csv)?;
    let mut series = Vec::new();
    for (e, rows) in by_energy(&lyap) {
        series.push(Series {
            label: format!("L_n, E={e}"),
            points: rows.iter().map(|r| (r[1].log10(), r[2])).collect(),
        });
        series.push(Series {
            label: format!("running inf, E={e}"),
            points: rows.iter().map(|r| (r[1].log10(), r[4])).collect(),
        });
    }
    if let Some(first) = lyap.first() {
        series.push(Series {
            label: "(1/4) log lambda".into(),
            points: lyap.iter().map(|r| (r[1].log10(), first[5])).collect(),
        });
    }
    fs::write(out.join("lyapunov_vs_n.svg"), svg_chart("Finite-scale Lyapunov exponent", "log10 n", "L_n", &series))?;

    let dev = Table::read(&archive.join("tables/deviation.csv"))?
        .pick(&["E", "n", "threshold", "measure", "ci_lo", "ci_hi"])?;
    let mut csv = format!("{DEVIATION_HEADER}\n");
    for r in &dev {
        let cells = [
            r[0].to_string(),
            r[1].to_string(),
            r[2].to_string(),
            r[3].to_string(),
            log10_cell(r[3]),
            r[4].to_string(),
            r[5].to_string(),
        ];
        csv.push_str(&join(&cells));
        csv.push('\n');
    }
    fs::write(out.join("deviation_vs_n.csv"), csv)?;
    let series: Vec<Series> = by_energy(&dev)
        .into_iter()
        .flat_map(|(e, rows)| {
            [
                Series {
                    label: format!("measure, E={e}"),
                    points: rows.iter().map(|r| (r[1], r[3].log10())).collect(),
                },
                Series {
                    label: format!("CI upper, E={e}"),
                    points: rows.iter().map(|r| (r[1], r[5].log10())).collect(),
                },
            ]
        })
        .collect();
    fs::write(out.join("deviation_vs_n.svg"), svg_chart("Large-deviation measure", "n", "log10 measure", &series))?;

    let cont = Table::read(&archive.join("tables/continuity.csv"))?.pick(&["E", "N", "delta", "diff", "proxy_diff"])?;
    let mut csv = format!("{CONTINUITY_HEADER}\n");
    for r in &cont {
        let cells = [
            r[0].to_string(),
            r[1].to_string(),
            r[2].to_string(),
            r[3].to_string(),
            log10_cell(r[2]),
            log10_cell(r[3]),
            r[4].to_string(),
            log10_cell(r[4]),
        ];
        csv.push_str(&join(&cells));
        csv.push('\n');
    }
    fs::write(out.join("continuity_loglog.csv"), csv)?;
    let series = vec![
        Series {
            label: "|dL_N|".into(),
            points: cont.iter().map(|r| (r[2].log10(), r[3].log10())).collect(),
        },
        Series {
            label: "|dL| (running inf)".into(),
            points: cont.iter().map(|r| (r[2].log10(), r[4].log10())).collect(),
        },
    ];
    fs::write(out.join("continuity_loglog.svg"), svg_chart("Energy regularity", "log10 |dE|", "log10 |dL|", &series))?;
    Ok(())
}
