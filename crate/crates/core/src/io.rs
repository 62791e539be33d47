//! Text measure files (`# wotgrid v1`) and JSON run reports.
//!
//! ```text
//! # wotgrid v1
//! dim: 2
//! shape: NX NY
//! extent: X0 X1 Y0 Y1
//! data:
//! v00 v01 ...
//! ```
//!
//! Values are row-major with x outer and y inner.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::ActionParams;
use crate::grid::{GridSpec, MeasureField, SpaceGrid};
use crate::solver::{GeodesicResult, SolverResiduals};

pub const MAGIC: &str = "# wotgrid v1";

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("line {line}: unsupported header `{found}` (expected `{MAGIC}`)")]
    Version { line: usize, found: String },

    #[error("line {line}: expected `{expected}`, found `{found}`")]
    Header {
        line: usize,
        expected: &'static str,
        found: String,
    },

    #[error("line {line}: invalid number `{token}`")]
    Number { line: usize, token: String },

    #[error("line {line}: {message}")]
    Grid { line: usize, message: String },

    #[error("line {line}: shape {shape} needs {expected} values, found {got}")]
    Count {
        line: usize,
        shape: String,
        expected: usize,
        got: usize,
    },

    #[error("line {line}: value {value} at index {index} is negative")]
    Negative { line: usize, index: usize, value: f64 },

    #[error("line {line}: value `{token}` at index {index} is not finite")]
    NonFinite { line: usize, index: usize, token: String },

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

struct Lines<'a> {
    iter: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            iter: text.lines().enumerate().peekable(),
            last: 0,
        }
    }

    /// Next non-blank line with its 1-based number.
    fn next_content(&mut self) -> Option<(usize, &'a str)> {
        for (i, l) in self.iter.by_ref() {
            self.last = i + 1;
            if !l.trim().is_empty() {
                return Some((i + 1, l.trim()));
            }
        }
        None
    }

    fn header(&mut self, key: &'static str, expected: &'static str) -> Result<(usize, &'a str), ParseError> {
        let Some((line, text)) = self.next_content() else {
            return Err(ParseError::Header {
                line: self.last + 1,
                expected,
                found: "end of file".into(),
            });
        };
        match text.strip_prefix(key) {
            Some(rest) => Ok((line, rest.trim())),
            None => Err(ParseError::Header {
                line,
                expected,
                found: text.to_string(),
            }),
        }
    }
}

fn numbers<T: std::str::FromStr>(line: usize, text: &str) -> Result<Vec<T>, ParseError> {
    text.split_whitespace()
        .map(|t| {
            t.parse().map_err(|_| ParseError::Number {
                line,
                token: t.to_string(),
            })
        })
        .collect()
}

/// Parses the textual measure format.
pub fn parse_measure_str(text: &str) -> Result<MeasureField, ParseError> {
    let mut lines = Lines::new(text);
    match lines.next_content() {
        Some((_, MAGIC)) => {}
        Some((line, found)) => {
            return Err(ParseError::Version {
                line,
                found: found.to_string(),
            })
        }
        None => {
            return Err(ParseError::Version {
                line: 1,
                found: String::new(),
            })
        }
    }

    let (dline, dtext) = lines.header("dim:", "dim: 1|2")?;
    let dim = match dtext {
        "1" => 1,
        "2" => 2,
        other => {
            return Err(ParseError::Header {
                line: dline,
                expected: "dim: 1|2",
                found: format!("dim: {other}"),
            })
        }
    };

    let (sline, stext) = lines.header("shape:", "shape: NX [NY]")?;
    let shape: Vec<usize> = numbers(sline, stext)?;
    if shape.len() != dim {
        return Err(ParseError::Header {
            line: sline,
            expected: if dim == 1 { "shape: NX" } else { "shape: NX NY" },
            found: format!("shape: {stext}"),
        });
    }

    let (eline, etext) = lines.header("extent:", "extent: X0 X1 [Y0 Y1]")?;
    let extent: Vec<f64> = numbers(eline, etext)?;
    if extent.len() != 2 * dim {
        return Err(ParseError::Header {
            line: eline,
            expected: if dim == 1 { "extent: X0 X1" } else { "extent: X0 X1 Y0 Y1" },
            found: format!("extent: {etext}"),
        });
    }
    let grid = if dim == 1 {
        SpaceGrid::new_1d(shape[0], (extent[0], extent[1]))
    } else {
        SpaceGrid::new_2d(shape[0], shape[1], (extent[0], extent[1]), (extent[2], extent[3]))
    }
    .map_err(|e| ParseError::Grid {
        line: sline,
        message: e.to_string(),
    })?;

    let (data_line, rest) = lines.header("data:", "data:")?;
    let mut values = Vec::with_capacity(grid.ncells());
    let mut push = |line: usize, text: &str| -> Result<(), ParseError> {
        for token in text.split_whitespace() {
            let index = values.len();
            let v: f64 = token.parse().map_err(|_| ParseError::Number {
                line,
                token: token.to_string(),
            })?;
            if !v.is_finite() {
                return Err(ParseError::NonFinite {
                    line,
                    index,
                    token: token.to_string(),
                });
            }
            if v < 0.0 {
                return Err(ParseError::Negative { line, index, value: v });
            }
            values.push(v);
        }
        Ok(())
    };
    push(data_line, rest)?;
    let mut last_line = data_line;
    while let Some((line, text)) = lines.next_content() {
        push(line, text)?;
        last_line = line;
    }
    if values.len() != grid.ncells() {
        return Err(ParseError::Count {
            line: last_line,
            shape: stext.split_whitespace().collect::<Vec<_>>().join("x"),
            expected: grid.ncells(),
            got: values.len(),
        });
    }
    Ok(MeasureField { grid, values })
}

pub fn parse_measure(path: &Path) -> Result<MeasureField, ParseError> {
    let text = std::fs::read_to_string(path).map_err(|e| ParseError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_measure_str(&text)
}

/// Serializes with shortest round-trip decimal representations.
pub fn format_measure(field: &MeasureField) -> String {
    let g = &field.grid;
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC}");
    let _ = writeln!(s, "dim: {}", g.dim);
    if g.dim == 1 {
        let _ = writeln!(s, "shape: {}", g.nx);
        let _ = writeln!(s, "extent: {:?} {:?}", g.x_extent.0, g.x_extent.1);
    } else {
        let _ = writeln!(s, "shape: {} {}", g.nx, g.ny);
        let _ = writeln!(
            s,
            "extent: {:?} {:?} {:?} {:?}",
            g.x_extent.0, g.x_extent.1, g.y_extent.0, g.y_extent.1
        );
    }
    s.push_str("data:\n");
    let row = if g.dim == 1 { 8 } else { g.ny };
    for chunk in field.values.chunks(row) {
        let line: Vec<String> = chunk.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn write_measure(path: &Path, field: &MeasureField) -> std::io::Result<()> {
    std::fs::write(path, format_measure(field))
}

/// `base_t007.txt` style names for geodesic slices.
pub fn slice_path(base: &Path, k: usize) -> std::path::PathBuf {
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match base.extension() {
        Some(ext) => format!("{stem}_t{k:03}.{}", ext.to_string_lossy()),
        None => format!("{stem}_t{k:03}"),
    };
    base.with_file_name(name)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamsEcho {
    pub p: f64,
    pub alpha: f64,
    pub theta: f64,
    /// Absent at `alpha = 1`, where it is infinite.
    pub kappa: Option<f64>,
}

impl From<&ActionParams> for ParamsEcho {
    fn from(p: &ActionParams) -> Self {
        ParamsEcho {
            p: p.p,
            alpha: p.alpha,
            theta: p.theta(),
            kappa: p.kappa(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub name: String,
    pub value: f64,
    pub relative_difference: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipDiagnostics {
    pub slices: usize,
    pub clipped_mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub params: ParamsEcho,
    pub grid: GridSpec,
    pub gamma: String,
    pub seed: u64,
    pub distance: f64,
    pub distance_p: f64,
    pub per_time_action: Vec<f64>,
    pub mass_per_slice: Vec<f64>,
    pub residuals: SolverResiduals,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_seconds: f64,
    pub oracles: Vec<OracleComparison>,
    pub clip: Option<ClipDiagnostics>,
}

impl RunReport {
    pub fn from_result(result: &GeodesicResult, gamma: &str, seed: u64, wall_time_seconds: f64) -> Self {
        RunReport {
            params: ParamsEcho::from(&result.params),
            grid: result.grid.clone(),
            gamma: gamma.to_string(),
            seed,
            distance: result.distance,
            distance_p: result.distance_p,
            per_time_action: result.per_time_action.clone(),
            mass_per_slice: result.mass_per_slice.clone(),
            residuals: result.residuals,
            iterations: result.iterations,
            converged: result.converged,
            wall_time_seconds,
            oracles: Vec::new(),
            clip: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields are serializable")
    }
}
