//! Linear measurement model `y = Hx + e + ε`, DC-grid model construction,
//! and auxiliary-series CSV ingestion.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{qr_split, QrFactors};

/// Immutable measurement model: coding matrix `H` (m×n, m>n, full column
/// rank), per-channel noise standard deviations, and the cached QR split.
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    h: DMatrix<f64>,
    noise_std: DVector<f64>,
    qr: QrFactors,
}

impl MeasurementModel {
    pub fn new(h: DMatrix<f64>, noise_std: DVector<f64>) -> Result<Self> {
        let (m, n) = h.shape();
        if m <= n {
            return Err(Error::Shape(format!(
                "measurement model needs m > n, got {m}x{n}"
            )));
        }
        if noise_std.len() != m {
            return Err(Error::Shape(format!(
                "noise_std has {} entries, expected {m}",
                noise_std.len()
            )));
        }
        if noise_std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Domain(
                "noise standard deviations must be positive and finite".into(),
            ));
        }
        let qr = qr_split(&h)?;
        Ok(Self { h, noise_std, qr })
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn noise_std(&self) -> &DVector<f64> {
        &self.noise_std
    }

    pub fn qr(&self) -> &QrFactors {
        &self.qr
    }

    /// Number of measurement channels.
    pub fn m(&self) -> usize {
        self.h.nrows()
    }

    /// Number of state variables.
    pub fn n(&self) -> usize {
        self.h.ncols()
    }
}

/// A DC-linearized grid: buses, lines with susceptances, sensor placement,
/// and the slack bus whose angle is the reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub buses: Vec<u32>,
    pub lines: Vec<Line>,
    pub sensors: Vec<Sensor>,
    pub slack: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Line {
    pub from: u32,
    pub to: u32,
    /// Line susceptance; a zero value carries no flow and no connectivity.
    pub b: f64,
}

/// Sensor placement. Flow sensors reference a line by index into `lines`;
/// injection sensors reference a bus id.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Sensor {
    Flow { target: usize },
    Injection { target: u32 },
}

impl GridSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("grid spec: {e}")))
    }
}

/// Builds the DC measurement matrix for a grid: states are the angles of
/// the non-slack buses in ascending bus-id order; a flow sensor on line
/// (i,j) reports b·(θᵢ − θⱼ); an injection sensor at bus i reports the sum
/// of its incident line flows.
pub fn dc_measurement_matrix(grid: &GridSpec) -> Result<DMatrix<f64>> {
    if grid.buses.is_empty() {
        return Err(Error::Config("grid has no buses".into()));
    }
    let mut ids = grid.buses.clone();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != grid.buses.len() {
        return Err(Error::Config("duplicate bus ids".into()));
    }
    if !ids.contains(&grid.slack) {
        return Err(Error::Config(format!(
            "slack bus {} is not in the bus list",
            grid.slack
        )));
    }
    let bus_pos: BTreeMap<u32, usize> = ids.iter().enumerate().map(|(i, &b)| (b, i)).collect();
    for (li, line) in grid.lines.iter().enumerate() {
        if !bus_pos.contains_key(&line.from) || !bus_pos.contains_key(&line.to) {
            return Err(Error::Config(format!(
                "line {li} references a bus that does not exist"
            )));
        }
        if line.from == line.to {
            return Err(Error::Config(format!("line {li} is a self-loop")));
        }
        if !line.b.is_finite() {
            return Err(Error::Config(format!("line {li} has non-finite susceptance")));
        }
    }

    // connectivity over lines with nonzero susceptance
    let nb = ids.len();
    let mut adj = vec![Vec::new(); nb];
    for line in &grid.lines {
        if line.b != 0.0 {
            let a = bus_pos[&line.from];
            let b = bus_pos[&line.to];
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut seen = vec![false; nb];
    let mut stack = vec![bus_pos[&grid.slack]];
    seen[bus_pos[&grid.slack]] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    if seen.iter().any(|&s| !s) {
        return Err(Error::Topology(
            "grid graph is disconnected (zero-susceptance lines carry no coupling)".into(),
        ));
    }

    // state columns: non-slack buses in ascending id order
    let state_cols: BTreeMap<u32, usize> = ids
        .iter()
        .filter(|&&b| b != grid.slack)
        .enumerate()
        .map(|(i, &b)| (b, i))
        .collect();
    let n = state_cols.len();
    let m = grid.sensors.len();
    let mut h = DMatrix::<f64>::zeros(m, n);

    // accumulates b·(θᵢ − θⱼ) into a row, skipping slack columns
    let add_flow = |h: &mut DMatrix<f64>, row: usize, i: u32, j: u32, b: f64| {
        if let Some(&c) = state_cols.get(&i) {
            h[(row, c)] += b;
        }
        if let Some(&c) = state_cols.get(&j) {
            h[(row, c)] -= b;
        }
    };

    for (row, sensor) in grid.sensors.iter().enumerate() {
        match sensor {
            Sensor::Flow { target } => {
                let line = grid.lines.get(*target).ok_or_else(|| {
                    Error::Config(format!("flow sensor {row} references line {target}"))
                })?;
                add_flow(&mut h, row, line.from, line.to, line.b);
            }
            Sensor::Injection { target } => {
                if !bus_pos.contains_key(target) {
                    return Err(Error::Config(format!(
                        "injection sensor {row} references bus {target}"
                    )));
                }
                for line in &grid.lines {
                    if line.from == *target {
                        add_flow(&mut h, row, line.from, line.to, line.b);
                    } else if line.to == *target {
                        add_flow(&mut h, row, line.to, line.from, line.b);
                    }
                }
            }
        }
    }
    Ok(h)
}

/// Builds a full measurement model from a grid spec and per-channel noise.
/// `noise_std` is either one value broadcast to all channels or one per
/// sensor.
pub fn build_dc_grid_model(grid: &GridSpec, noise_std: &[f64]) -> Result<MeasurementModel> {
    let h = dc_measurement_matrix(grid)?;
    let m = h.nrows();
    let noise = match noise_std.len() {
        1 => DVector::from_element(m, noise_std[0]),
        len if len == m => DVector::from_column_slice(noise_std),
        len => {
            return Err(Error::Shape(format!(
                "noise_std has {len} entries, expected 1 or {m}"
            )))
        }
    };
    MeasurementModel::new(h, noise)
}

/// Time-ordered auxiliary channels (market signals, exogenous drivers).
/// `z` is p×N: one row per channel, one column per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliarySeries {
    pub timestamps: Vec<f64>,
    pub z: DMatrix<f64>,
    pub channel_names: Vec<String>,
}

/// Parses a CSV stream with header `timestamp,<name1>,...,<namep>`.
/// Tolerates CRLF and a trailing newline; rejects NaN/Inf cells and ragged
/// rows, reporting 1-based line numbers.
pub fn ingest_auxiliary_csv<R: Read>(source: R) -> Result<AuxiliarySeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
        .clone();
    if headers.len() < 2 || headers.get(0) != Some("timestamp") {
        return Err(Error::Parse {
            line: 1,
            msg: "header must be `timestamp,<name1>,...`".into(),
        });
    }
    let channel_names: Vec<String> = headers.iter().skip(1).map(|s| s.to_string()).collect();
    let p = channel_names.len();

    let mut timestamps = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = match e.position() {
                Some(pos) => pos.line(),
                None => 0,
            };
            Error::Parse { line, msg: e.to_string() }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != p + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} cells, found {}", p + 1, record.len()),
            });
        }
        let parse_cell = |cell: &str| -> Result<f64> {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| Error::Parse { line, msg: format!("bad numeric cell `{cell}`") })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, msg: format!("non-finite cell `{cell}`") });
            }
            Ok(v)
        };
        timestamps.push(parse_cell(record.get(0).unwrap_or(""))?);
        for k in 0..p {
            values.push(parse_cell(record.get(k + 1).unwrap_or(""))?);
        }
    }
    if timestamps.is_empty() {
        return Err(Error::EmptyInput("auxiliary CSV has no data rows".into()));
    }
    let n = timestamps.len();
    // values are row-major per record; z is p×N
    let z = DMatrix::from_fn(p, n, |ch, t| values[t * p + ch]);
    Ok(AuxiliarySeries { timestamps, z, channel_names })
}

/// Writes the series back out in the same CSV schema. Values round-trip
/// bit-exactly through `ingest_auxiliary_csv`.
pub fn emit_auxiliary_csv<W: Write>(series: &AuxiliarySeries, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["timestamp".to_string()];
    header.extend(series.channel_names.iter().cloned());
    w.write_record(&header)?;
    for (t, ts) in series.timestamps.iter().enumerate() {
        let mut row = vec![ts.to_string()];
        for ch in 0..series.z.nrows() {
            row.push(series.z[(ch, t)].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_bus(from: u32, to: u32) -> GridSpec {
        GridSpec {
            buses: vec![1, 2],
            lines: vec![Line { from, to, b: 1.0 }],
            sensors: vec![Sensor::Flow { target: 0 }],
            slack: 1,
        }
    }

    #[test]
    fn two_bus_flow_signs() {
        // line oriented away from the slack: flow = b(θ1 − θ2) = −θ2
        let h = dc_measurement_matrix(&two_bus(1, 2)).unwrap();
        assert_eq!(h.shape(), (1, 1));
        assert_relative_eq!(h[(0, 0)], -1.0);
        // line oriented into the slack: flow = b(θ2 − θ1) = +θ2
        let h = dc_measurement_matrix(&two_bus(2, 1)).unwrap();
        assert_relative_eq!(h[(0, 0)], 1.0);
    }

    /// Independent construction from the signed incidence matrix:
    /// flows = diag(b)·A·θ, injections = A'·diag(b)·A·θ, slack column dropped.
    fn incidence_oracle(grid: &GridSpec) -> DMatrix<f64> {
        let mut ids = grid.buses.clone();
        ids.sort_unstable();
        let pos: BTreeMap<u32, usize> = ids.iter().enumerate().map(|(i, &b)| (b, i)).collect();
        let nl = grid.lines.len();
        let nb = ids.len();
        let mut a = DMatrix::<f64>::zeros(nl, nb);
        for (l, line) in grid.lines.iter().enumerate() {
            a[(l, pos[&line.from])] = 1.0;
            a[(l, pos[&line.to])] = -1.0;
        }
        let bdiag = DMatrix::from_fn(nl, nl, |i, j| if i == j { grid.lines[i].b } else { 0.0 });
        let flows = &bdiag * &a; // nl x nb
        let lap = a.transpose() * &bdiag * &a; // nb x nb
        let m = grid.sensors.len();
        let mut full = DMatrix::<f64>::zeros(m, nb);
        for (r, s) in grid.sensors.iter().enumerate() {
            match s {
                Sensor::Flow { target } => full.set_row(r, &flows.row(*target)),
                Sensor::Injection { target } => full.set_row(r, &lap.row(pos[target])),
            }
        }
        // drop the slack column
        let keep: Vec<usize> = ids
            .iter()
            .filter(|&&b| b != grid.slack)
            .map(|b| pos[b])
            .collect();
        DMatrix::from_fn(m, keep.len(), |r, c| full[(r, keep[c])])
    }

    #[test]
    fn triangle_matches_incidence_oracle() {
        let grid = GridSpec {
            buses: vec![1, 2, 3],
            lines: vec![
                Line { from: 1, to: 2, b: 1.0 },
                Line { from: 2, to: 3, b: 1.0 },
                Line { from: 1, to: 3, b: 1.0 },
            ],
            sensors: vec![
                Sensor::Flow { target: 0 },
                Sensor::Flow { target: 1 },
                Sensor::Flow { target: 2 },
                Sensor::Injection { target: 2 },
                Sensor::Injection { target: 3 },
            ],
            slack: 1,
        };
        let h = dc_measurement_matrix(&grid).unwrap();
        assert_eq!(h.shape(), (5, 2));
        let oracle = incidence_oracle(&grid);
        assert!((h - oracle).norm() < 1e-12);
    }

    #[test]
    fn zero_susceptance_disconnects() {
        let mut grid = two_bus(1, 2);
        grid.lines[0].b = 0.0;
        assert!(matches!(
            dc_measurement_matrix(&grid),
            Err(Error::Topology(_))
        ));
    }

    #[test]
    fn missing_slack_is_config_error() {
        let mut grid = two_bus(1, 2);
        grid.slack = 9;
        assert!(matches!(dc_measurement_matrix(&grid), Err(Error::Config(_))));
    }

    #[test]
    fn model_requires_redundancy() {
        // one sensor over one state is square, not overdetermined
        let grid = two_bus(2, 1);
        assert!(matches!(
            build_dc_grid_model(&grid, &[0.1]),
            Err(Error::Shape(_))
        ));
        let grid = GridSpec {
            sensors: vec![Sensor::Flow { target: 0 }, Sensor::Injection { target: 2 }],
            ..two_bus(2, 1)
        };
        let model = build_dc_grid_model(&grid, &[0.1]).unwrap();
        assert_eq!(model.m(), 2);
        assert_eq!(model.n(), 1);
    }

    #[test]
    fn csv_ingest_basic() {
        let s = ingest_auxiliary_csv("timestamp,lbmp\n0,25.0\n300,26.1".as_bytes()).unwrap();
        assert_eq!(s.timestamps, vec![0.0, 300.0]);
        assert_eq!(s.channel_names, vec!["lbmp"]);
        assert_eq!(s.z.shape(), (1, 2));
        assert_relative_eq!(s.z[(0, 0)], 25.0);
        assert_relative_eq!(s.z[(0, 1)], 26.1);
    }

    #[test]
    fn csv_missing_cell_reports_line() {
        let err = ingest_auxiliary_csv("timestamp,a,b\n0,1.0".as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected ParseError, got {other:?}"),
        }
        let err = ingest_auxiliary_csv("timestamp,a,b\n0,1.0,2.0\n300,3.0".as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected ParseError, got {other:?}"),
        }
    }

    #[test]
    fn csv_rejects_non_finite() {
        assert!(matches!(
            ingest_auxiliary_csv("timestamp,a\n0,NaN".as_bytes()),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            ingest_auxiliary_csv("timestamp,a\n0,inf".as_bytes()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn csv_tolerates_crlf_and_trailing_newline() {
        let s = ingest_auxiliary_csv("timestamp,a\r\n0,1.5\r\n1,2.5\r\n".as_bytes()).unwrap();
        assert_eq!(s.timestamps.len(), 2);
    }

    #[test]
    fn csv_empty_is_empty_input() {
        assert!(matches!(
            ingest_auxiliary_csv("timestamp,a\n".as_bytes()),
            Err(Error::EmptyInput(_))
        ));
    }
}
