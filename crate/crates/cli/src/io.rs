//! File formats: model CSVs, kernel/cost matrices, embeddings and weights.

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use wass_ensemble::{
    kernel_from_cost, performance_weights, EnsembleWeights, GroundMetric, Support,
};

use crate::CliError;

fn reader(path: &Path) -> Result<csv::Reader<File>, CliError> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(None)
        .from_path(path)
        .map_err(|e| CliError::parse(path, e))
}

fn records(path: &Path) -> Result<Vec<Vec<String>>, CliError> {
    let mut rows = Vec::new();
    for rec in reader(path)?.records() {
        let rec = rec.map_err(|e| CliError::parse(path, e))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        rows.push(rec.iter().map(str::to_owned).collect());
    }
    Ok(rows)
}

fn parse_row(path: &Path, line: usize, row: &[String]) -> Result<Vec<f64>, CliError> {
    row.iter()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::parse(path, format!("row {line}: `{s}` is not a number")))
        })
        .collect()
}

/// Models file: a label row, then one row of masses per model.
#[derive(Debug, Clone)]
pub struct ModelsFile {
    pub labels: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ModelsFile {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let mut rows = records(path)?.into_iter();
        let labels = rows
            .next()
            .ok_or_else(|| CliError::parse(path, "empty file"))?;
        let mut masses = Vec::new();
        for (i, r) in rows.enumerate() {
            if r.len() != labels.len() {
                return Err(CliError::parse(
                    path,
                    format!(
                        "row {} has {} values, expected {}",
                        i + 2,
                        r.len(),
                        labels.len()
                    ),
                ));
            }
            masses.push(parse_row(path, i + 2, &r)?);
        }
        if masses.is_empty() {
            return Err(CliError::parse(path, "no model rows"));
        }
        Ok(Self {
            labels,
            rows: masses,
        })
    }

    pub fn support(&self, embeddings: Option<&Embeddings>) -> Result<Arc<Support<f64>>, CliError> {
        let support = Support::new(self.labels.iter().cloned()).map_err(CliError::Solver)?;
        let support = match embeddings {
            Some(e) => support
                .with_points(e.points_for(&self.labels)?)
                .map_err(CliError::Solver)?,
            None => support,
        };
        Ok(Arc::new(support))
    }
}

/// Same layout as [`ModelsFile`]; stdout when `path` is `None`.
pub fn write_models(
    path: Option<&Path>,
    labels: &[String],
    rows: &[&[f64]],
) -> Result<(), CliError> {
    let name = path.unwrap_or(Path::new("<stdout>"));
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(File::create(p).map_err(|e| CliError::io(p, e))?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(labels).map_err(|e| CliError::io(name, e))?;
    for row in rows {
        w.write_record(row.iter().map(|x| format!("{x:.16e}")))
            .map_err(|e| CliError::io(name, e))?;
    }
    w.flush().map_err(|e| CliError::io(name, e))
}

/// `label,v1,...,vd` per line.
#[derive(Debug, Clone)]
pub struct Embeddings {
    entries: Vec<(String, Vec<f64>)>,
}

impl Embeddings {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let entries = records(path)?
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let (label, rest) = r
                    .split_first()
                    .ok_or_else(|| CliError::parse(path, "empty row"))?;
                Ok((label.clone(), parse_row(path, i + 1, rest)?))
            })
            .collect::<Result<_, CliError>>()?;
        Ok(Self { entries })
    }

    fn points_for(&self, labels: &[String]) -> Result<Vec<Vec<f64>>, CliError> {
        labels
            .iter()
            .map(|l| {
                self.entries
                    .iter()
                    .find(|(k, _)| k == l)
                    .map(|(_, v)| v.clone())
                    .ok_or_else(|| CliError::Config(format!("no embedding for label `{l}`")))
            })
            .collect()
    }
}

/// Kernel or cost matrix: a `#kernel` or `#cost [epsilon=<v>]` line, an
/// optional row of target labels, then the matrix rows.
#[derive(Debug, Clone)]
pub struct MetricFile {
    pub kind: MetricKind,
    pub target_labels: Option<Vec<String>>,
    pub matrix: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricKind {
    Kernel,
    Cost { epsilon: Option<f64> },
}

impl MetricFile {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let rows = records(path)?;
        let (header, body) = rows
            .split_first()
            .ok_or_else(|| CliError::parse(path, "empty file"))?;
        let kind = parse_header(path, &header.join(","))?;
        let (target_labels, body) = match body.first() {
            Some(r) if r.iter().any(|s| s.parse::<f64>().is_err()) => (Some(r.clone()), &body[1..]),
            _ => (None, body),
        };
        let ncols = body.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(body.len() * ncols);
        for (i, r) in body.iter().enumerate() {
            if r.len() != ncols {
                return Err(CliError::parse(
                    path,
                    format!("ragged matrix at row {}", i + 1),
                ));
            }
            data.extend(parse_row(path, i + 1, r)?);
        }
        if data.is_empty() {
            return Err(CliError::parse(path, "empty matrix"));
        }
        let matrix = Array2::from_shape_vec((body.len(), ncols), data)
            .map_err(|e| CliError::parse(path, e))?;
        Ok(Self {
            kind,
            target_labels,
            matrix,
        })
    }

    /// Builds the kernel for `source`; cost files are exponentiated at
    /// `epsilon`, which must agree with the file's own epsilon when present.
    pub fn ground_metric(
        &self,
        source: &Arc<Support<f64>>,
        epsilon: f64,
    ) -> Result<GroundMetric<f64>, CliError> {
        let target = self.target(source)?;
        match self.kind {
            MetricKind::Kernel => {
                GroundMetric::from_kernel(source.clone(), target, self.matrix.clone())
                    .map_err(CliError::Solver)
            }
            MetricKind::Cost { epsilon: file_eps } => {
                if let Some(e) = file_eps {
                    if e != epsilon {
                        return Err(CliError::Config(format!(
                            "kernel file epsilon {e} differs from --epsilon {epsilon}"
                        )));
                    }
                }
                let gm = self.cost_metric(source)?;
                kernel_from_cost(&gm, epsilon).map_err(CliError::Solver)
            }
        }
    }

    pub fn cost_metric(&self, source: &Arc<Support<f64>>) -> Result<GroundMetric<f64>, CliError> {
        if self.kind == MetricKind::Kernel {
            return Err(CliError::Config("a cost matrix is required".into()));
        }
        let target = self.target(source)?;
        GroundMetric::from_cost(source.clone(), target, self.matrix.clone())
            .map_err(CliError::Solver)
    }

    fn target(&self, source: &Arc<Support<f64>>) -> Result<Arc<Support<f64>>, CliError> {
        let (n, m) = self.matrix.dim();
        if n != source.len() {
            return Err(CliError::Solver(wass_ensemble::Error::DimensionMismatch {
                expected: source.len(),
                found: n,
            }));
        }
        match &self.target_labels {
            Some(l) => Ok(Arc::new(
                Support::new(l.iter().cloned()).map_err(CliError::Solver)?,
            )),
            None if m == n => Ok(source.clone()),
            None => Ok(Arc::new(Support::indexed(m))),
        }
    }
}

fn parse_header(path: &Path, line: &str) -> Result<MetricKind, CliError> {
    let mut parts = line.split_whitespace();
    match parts.next() {
        Some("#kernel") => Ok(MetricKind::Kernel),
        Some("#cost") => {
            let epsilon = match parts.next() {
                None => None,
                Some(kv) => {
                    let v = kv
                        .strip_prefix("epsilon=")
                        .and_then(|v| v.parse::<f64>().ok())
                        .ok_or_else(|| CliError::parse(path, format!("bad header field `{kv}`")))?;
                    Some(v)
                }
            };
            Ok(MetricKind::Cost { epsilon })
        }
        _ => Err(CliError::parse(
            path,
            "first line must be `#kernel` or `#cost epsilon=<v>`",
        )),
    }
}

/// `uniform`, a comma list, or `perf:<file>` with one score per model.
pub fn parse_weights(arg: &str, m: usize) -> Result<EnsembleWeights<f64>, CliError> {
    let weights = if arg == "uniform" {
        EnsembleWeights::uniform(m)
    } else if let Some(file) = arg.strip_prefix("perf:") {
        let path = Path::new(file);
        let text = std::fs::read_to_string(path).map_err(|e| CliError::parse(path, e))?;
        let scores = text
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| CliError::parse(path, format!("`{s}` is not a number")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        performance_weights(&scores)
    } else {
        let lambdas = arg
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Config(format!("bad weight `{s}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        EnsembleWeights::new(lambdas)
    }
    .map_err(|e| CliError::Config(format!("{}: {e}", e.name())))?;
    if weights.len() != m {
        return Err(CliError::Config(format!(
            "{} weights for {m} models",
            weights.len()
        )));
    }
    Ok(weights)
}

pub fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::io(Path::new("<stdout>"), e)),
    }
}
