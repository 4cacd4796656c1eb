//! CSV input: one row per observation.
//!
//! Required columns are `cluster_id`, `treated` (0/1) and `outcome`. An
//! optional `post` column (0/1) marks post-period observations, and
//! covariates are named `x1`, `x2`, .. without gaps. Column order is free;
//! any other column is an error. Clusters keep their order of first
//! appearance within each treatment group.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use fewclusters_core::{Cluster, ClusterDataset, Observation};

#[derive(Debug, thiserror::Error)]
pub enum InputError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("line {line}: column `{column}` has invalid value {value:?}")]
    BadValue {
        line: u64,
        column: String,
        value: String,
    },
    #[error("cluster `{id}` mixes treated and untreated rows")]
    InconsistentTreatment { id: String },
    #[error("no data rows")]
    Empty,
    #[error(transparent)]
    Data(#[from] fewclusters_core::Error),
}

struct Columns {
    cluster_id: usize,
    treated: usize,
    outcome: usize,
    post: Option<usize>,
    covariates: Vec<usize>,
}

fn parse_header(header: &csv::StringRecord) -> Result<Columns, InputError> {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut covariates: Vec<(usize, usize)> = vec![];
    for (i, name) in header.iter().enumerate() {
        let name = name.trim();
        if seen.insert(name, i).is_some() {
            return Err(InputError::DuplicateColumn(name.into()));
        }
        match name {
            "cluster_id" | "treated" | "outcome" | "post" => {}
            _ => match name.strip_prefix('x').and_then(|n| n.parse::<usize>().ok()) {
                Some(k) if k >= 1 && name == format!("x{k}") => covariates.push((k, i)),
                _ => return Err(InputError::UnknownColumn(name.into())),
            },
        }
    }
    covariates.sort();
    for (expected, &(k, _)) in (1..).zip(&covariates) {
        if k != expected {
            return Err(InputError::MissingColumn(format!("x{expected}")));
        }
    }
    let required = |name: &str| {
        seen.get(name)
            .copied()
            .ok_or_else(|| InputError::MissingColumn(name.into()))
    };
    Ok(Columns {
        cluster_id: required("cluster_id")?,
        treated: required("treated")?,
        outcome: required("outcome")?,
        post: seen.get("post").copied(),
        covariates: covariates.into_iter().map(|(_, i)| i).collect(),
    })
}

fn field(record: &csv::StringRecord, i: usize) -> &str {
    record.get(i).unwrap_or("").trim()
}

fn bad(record: &csv::StringRecord, column: &str, value: &str) -> InputError {
    InputError::BadValue {
        line: record.position().map_or(0, |p| p.line()),
        column: column.into(),
        value: value.into(),
    }
}

fn parse_flag(record: &csv::StringRecord, i: usize, column: &str) -> Result<bool, InputError> {
    match field(record, i) {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(bad(record, column, other)),
    }
}

fn parse_real(record: &csv::StringRecord, i: usize, column: &str) -> Result<f64, InputError> {
    let s = field(record, i);
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(bad(record, column, s)),
    }
}

pub fn read_dataset<R: Read>(reader: R) -> Result<ClusterDataset, InputError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let cols = parse_header(rdr.headers()?)?;
    let mut order: Vec<String> = vec![];
    let mut clusters: HashMap<String, Cluster> = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let id = field(&record, cols.cluster_id).to_string();
        if id.is_empty() {
            return Err(bad(&record, "cluster_id", ""));
        }
        let treated = parse_flag(&record, cols.treated, "treated")?;
        let outcome = parse_real(&record, cols.outcome, "outcome")?;
        let covariates = cols
            .covariates
            .iter()
            .enumerate()
            .map(|(k, &i)| parse_real(&record, i, &format!("x{}", k + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        let obs = match cols.post {
            Some(i) => {
                Observation::with_period(outcome, covariates, parse_flag(&record, i, "post")?)
            }
            None => Observation::new(outcome, covariates),
        };
        let cluster = clusters.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Cluster::new(id.clone(), treated, vec![])
        });
        if cluster.treated != treated {
            return Err(InputError::InconsistentTreatment { id });
        }
        cluster.observations.push(obs);
    }
    if order.is_empty() {
        return Err(InputError::Empty);
    }
    let clusters = order
        .iter()
        .map(|id| clusters.remove(id).expect("every id was inserted"))
        .collect();
    Ok(ClusterDataset::new(clusters)?)
}

pub fn load_dataset(path: &Path) -> Result<ClusterDataset, InputError> {
    let file = std::fs::File::open(path).map_err(|source| InputError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_dataset(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_groups_in_order() {
        let text = "outcome,cluster_id,treated,x1\n1,a,0,0.5\n2,b,1,1.5\n3,a,0,2.5\n";
        let data = read_dataset(text.as_bytes()).unwrap();
        let ids: Vec<_> = data.clusters().iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["b", "a"]);
        assert_eq!(data.clusters()[1].size(), 2);
        assert_eq!(data.clusters()[1].observations[1].covariates, vec![2.5]);
    }

    #[test]
    fn post_column() {
        let text = "cluster_id,treated,outcome,post\na,1,1,0\na,1,2,1\nb,0,1,0\nb,0,1,1\n";
        let data = read_dataset(text.as_bytes()).unwrap();
        assert_eq!(data.clusters()[0].observations[1].period_post, Some(true));
    }

    #[test]
    fn header_errors() {
        let missing = read_dataset("cluster_id,outcome\na,1\n".as_bytes()).unwrap_err();
        assert!(matches!(missing, InputError::MissingColumn(c) if c == "treated"));
        let unknown =
            read_dataset("cluster_id,treated,outcome,z\na,1,1,1\n".as_bytes()).unwrap_err();
        assert!(matches!(unknown, InputError::UnknownColumn(c) if c == "z"));
        let gap = read_dataset("cluster_id,treated,outcome,x2\na,1,1,1\n".as_bytes()).unwrap_err();
        assert!(matches!(gap, InputError::MissingColumn(c) if c == "x1"));
        let padded =
            read_dataset("cluster_id,treated,outcome,x01\na,1,1,1\n".as_bytes()).unwrap_err();
        assert!(matches!(padded, InputError::UnknownColumn(_)));
    }

    #[test]
    fn value_errors() {
        let flag = read_dataset("cluster_id,treated,outcome\na,2,1\n".as_bytes()).unwrap_err();
        assert!(
            matches!(flag, InputError::BadValue { line: 2, .. }),
            "{flag}"
        );
        let nan = read_dataset("cluster_id,treated,outcome\na,1,nan\n".as_bytes()).unwrap_err();
        assert!(matches!(nan, InputError::BadValue { .. }));
        let mixed =
            read_dataset("cluster_id,treated,outcome\na,1,1\na,0,1\n".as_bytes()).unwrap_err();
        assert!(matches!(mixed, InputError::InconsistentTreatment { .. }));
        let no_untreated =
            read_dataset("cluster_id,treated,outcome\na,1,1\n".as_bytes()).unwrap_err();
        assert!(matches!(no_untreated, InputError::Data(_)));
    }
}
