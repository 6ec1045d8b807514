//! Text formats: measurement and raster CSV, field dumps, iteration
//! histories, PGM images, gnuplot stubs and the run manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::convergence::SweepRow;
use crate::error::{Error, Result};
use crate::forward::{ForwardSolution, Measurements};
use crate::inverse::conductivity::SigmaIteration;
use crate::inverse::electrodes::ElectrodeIteration;
use crate::mesh::{CartesianMesh, NodeKind};

/// `printf("%.17e")`: seventeen digits after the point, signed exponent of at
/// least two digits.
pub fn fmt_e17(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{v:.17e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

fn parse_row(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split(',')
        .map(|f| {
            let f = f.trim();
            let v: f64 = f.parse().map_err(|_| Error::Parse { line: lineno, message: format!("not a number: '{f}'") })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Parse { line: lineno, message: format!("non-finite value '{f}'") })
            }
        })
        .collect()
}

/// Comma-separated numeric matrix, one row per line. Blank lines and lines
/// starting with `#` are skipped; all rows must have the same length.
pub fn parse_matrix(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = parse_row(line, k + 1)?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse {
                    line: k + 1,
                    message: format!("{} fields, expected {}", row.len(), first.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse { line: 0, message: "no data".into() });
    }
    Ok(rows)
}

/// Measurement CSV: `M` rows (electrodes) by `P` columns (patterns).
pub fn parse_measurements(text: &str) -> Result<Measurements> {
    let rows = parse_matrix(text)?;
    let p = rows[0].len();
    let columns = (0..p).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    Ok(Measurements { columns })
}

pub fn format_measurements(u: &Measurements) -> String {
    let mut s = String::new();
    for m in 0..u.electrodes() {
        let row: Vec<String> = u.columns.iter().map(|c| fmt_e17(c[m])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn read_measurements(path: &Path) -> Result<Measurements> {
    parse_measurements(&read(path)?)
}

pub fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

pub fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// Field dump `x,y,region,u`: grid nodes (interior or exterior) followed by
/// boundary points.
pub fn format_field(mesh: &CartesianMesh, sol: &ForwardSolution) -> String {
    let mut s = String::from("x,y,region,u\n");
    for node in 0..mesh.node_count() {
        let [x, y] = mesh.node_point(node);
        let region = match mesh.kind(node) {
            NodeKind::Interior => "interior",
            NodeKind::Exterior | NodeKind::Dirichlet => "exterior",
        };
        let _ = writeln!(s, "{},{},{region},{}", fmt_e17(x), fmt_e17(y), fmt_e17(sol.node_value(mesh, node)));
    }
    for (b, bp) in mesh.boundary_points().iter().enumerate() {
        let [x, y] = bp.point;
        let _ = writeln!(s, "{},{},boundary,{}", fmt_e17(x), fmt_e17(y), fmt_e17(sol.boundary_value(b)));
    }
    s
}

pub fn format_convergence(rows: &[SweepRow]) -> String {
    let mut s = String::from("h,err_u_inf,err_u_l2,err_grad_inf,err_grad_all,err_electrodes,seconds\n");
    for r in rows {
        let f = [r.h, r.err_u_inf, r.err_u_l2, r.err_grad_inf, r.err_grad_all, r.err_electrodes, r.seconds];
        s.push_str(&f.map(fmt_e17).join(","));
        s.push('\n');
    }
    s
}

pub fn format_sigma_history(history: &[SigmaIteration]) -> String {
    let mut s = String::from("n,F,t_n,norm_dsigma\n");
    for it in history {
        let _ = writeln!(s, "{},{},{},{}", it.n, fmt_e17(it.value), fmt_e17(it.step), fmt_e17(it.norm));
    }
    s
}

pub fn format_electrode_history(history: &[ElectrodeIteration]) -> String {
    let m = history.first().map_or(0, |it| it.theta1.len());
    let mut s = String::from("n,F,grad_norm");
    for k in 1..=m {
        let _ = write!(s, ",theta1_{k}");
    }
    for k in 1..=m {
        let _ = write!(s, ",theta2_{k}");
    }
    s.push('\n');
    for it in history {
        let _ = write!(s, "{},{},{}", it.n, fmt_e17(it.value), fmt_e17(it.gradient_norm));
        for v in it.theta1.iter().chain(&it.theta2) {
            let _ = write!(s, ",{}", fmt_e17(*v));
        }
        s.push('\n');
    }
    s
}

/// Plain PGM (P2) of nodal values, top row first; `None` entries are black.
pub fn format_pgm(side: usize, values: &[Option<f64>]) -> String {
    assert_eq!(values.len(), side * side, "one value per grid node");
    let (lo, hi) = values
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut s = format!("P2\n{side} {side}\n255\n");
    for j in (0..side).rev() {
        let row: Vec<String> = (0..side)
            .map(|i| match values[j * side + i] {
                Some(v) => (1.0 + 254.0 * (v - lo) / span).round().clamp(1.0, 255.0).to_string(),
                None => "0".to_string(),
            })
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

/// Nodal values on interior nodes only, for [`format_pgm`].
pub fn interior_values(mesh: &CartesianMesh, value: impl Fn(usize) -> f64) -> Vec<Option<f64>> {
    let side = mesh.side();
    let mut out = vec![None; side * side];
    for j in 0..side {
        for i in 0..side {
            let node = mesh.node(i, j);
            if mesh.kind(node) == NodeKind::Interior {
                out[j * side + i] = Some(value(node));
            }
        }
    }
    out
}

/// Gnuplot script plotting columns `x_col` against each of `y_cols` of a CSV.
pub fn gnuplot_stub(csv: &str, x_col: usize, y_cols: &[(usize, &str)], logscale: bool) -> String {
    let mut s = String::from("set datafile separator ','\nset key autotitle columnhead\n");
    if logscale {
        s.push_str("set logscale xy\n");
    }
    let plots: Vec<String> = y_cols
        .iter()
        .map(|(c, title)| format!("'{csv}' using {x_col}:{c} with linespoints title '{title}'"))
        .collect();
    let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
    s.push_str("pause -1\n");
    s
}

/// Record of one run. The configuration is echoed last so that the manifest
/// can be fed back as a configuration after stripping the other tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub threads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub timings: BTreeMap<String, f64>,
    #[serde(default)]
    pub results: BTreeMap<String, toml::Value>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            threads: rayon::current_num_threads(),
            seed: config.data.as_ref().map(|d| d.seed),
            timings: BTreeMap::new(),
            results: BTreeMap::new(),
            config: config.clone(),
        }
    }

    pub fn result(&mut self, key: &str, value: impl Into<toml::Value>) {
        self.results.insert(key.to_string(), value.into());
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse { line: 0, message: e.message().to_string() })
    }
}
