//! Dataset file ingestion and the bundled baseball data.
//!
//! Dataset CSV layout: header `area_id,y,D,x1,...,xp` with an optional
//! trailing `theta_true` column. D must be strictly positive and area
//! ids unique; violations are reported with the offending row number.

use std::io::{Read, Write};
use std::path::Path;

use crate::dataset::FhDataset;
use crate::error::{FhError, Result};

/// A dataset together with its labels and optional ground truth.
#[derive(Debug, Clone)]
pub struct DatasetFile {
    pub data: FhDataset,
    pub area_ids: Vec<String>,
    pub theta_true: Option<Vec<f64>>,
}

pub fn read_dataset(path: &Path) -> Result<DatasetFile> {
    let file = std::fs::File::open(path)?;
    read_dataset_from(file)
}

pub fn read_dataset_from<R: Read>(reader: R) -> Result<DatasetFile> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 3 || cols[0] != "area_id" || cols[1] != "y" || cols[2] != "D" {
        return Err(FhError::InvalidData(
            "dataset header must start with area_id,y,D".to_string(),
        ));
    }
    let has_truth = cols.last() == Some(&"theta_true");
    let p = cols.len() - 3 - usize::from(has_truth);
    for (j, name) in cols[3..3 + p].iter().enumerate() {
        if *name != format!("x{}", j + 1) {
            return Err(FhError::InvalidData(format!(
                "covariate column {} must be named x{}, found {name}",
                j + 4,
                j + 1
            )));
        }
    }
    let mut area_ids = Vec::new();
    let mut y = Vec::new();
    let mut d = Vec::new();
    let mut x = Vec::new();
    let mut theta = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 2; // 1-based, after the header
        let record = record?;
        if record.len() != cols.len() {
            return Err(FhError::InvalidData(format!(
                "row {row}: expected {} fields, found {}",
                cols.len(),
                record.len()
            )));
        }
        let num = |field: usize, name: &str| -> Result<f64> {
            record[field].trim().parse::<f64>().map_err(|_| {
                FhError::InvalidData(format!(
                    "row {row}: {name} value {:?} is not a number",
                    &record[field]
                ))
            })
        };
        let id = record[0].trim().to_string();
        if area_ids.contains(&id) {
            return Err(FhError::InvalidData(format!(
                "row {row}: duplicate area_id {id:?}"
            )));
        }
        let di = num(2, "D")?;
        if !(di > 0.0) {
            return Err(FhError::InvalidData(format!(
                "row {row}: D must be strictly positive, got {di}"
            )));
        }
        area_ids.push(id);
        y.push(num(1, "y")?);
        d.push(di);
        for j in 0..p {
            x.push(num(3 + j, &format!("x{}", j + 1))?);
        }
        if has_truth {
            theta.push(num(cols.len() - 1, "theta_true")?);
        }
    }
    let data = FhDataset::new(y, d, x, p)?;
    Ok(DatasetFile {
        data,
        area_ids,
        theta_true: if has_truth { Some(theta) } else { None },
    })
}

pub fn write_dataset(path: &Path, file: &DatasetFile) -> Result<()> {
    let out = std::fs::File::create(path)?;
    write_dataset_to(out, file)
}

pub fn write_dataset_to<W: Write>(writer: W, file: &DatasetFile) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let p = file.data.p();
    let mut header = vec!["area_id".to_string(), "y".to_string(), "D".to_string()];
    for j in 1..=p {
        header.push(format!("x{j}"));
    }
    if file.theta_true.is_some() {
        header.push("theta_true".to_string());
    }
    wtr.write_record(&header)?;
    for i in 0..file.data.m() {
        let mut rec = vec![
            file.area_ids[i].clone(),
            format!("{:.17}", file.data.y()[i]),
            format!("{:.17}", file.data.d()[i]),
        ];
        for v in file.data.x_row(i) {
            rec.push(format!("{v:.17}"));
        }
        if let Some(t) = &file.theta_true {
            rec.push(format!("{:.17}", t[i]));
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// One row of the bundled baseball table.
#[derive(Debug, Clone)]
pub struct BaseballRecord {
    pub player: String,
    /// Hits in the first 45 at-bats of 1970.
    pub hits45: u32,
    /// Full-season 1970 batting average (ground truth).
    pub p_true: f64,
    /// 1969 batting average (covariate x1).
    pub avg1969: f64,
    /// 1969 at-bat count (covariate x2).
    pub ab1969: f64,
}

impl BaseballRecord {
    pub fn p_hat(&self) -> f64 {
        f64::from(self.hits45) / 45.0
    }
}

const BASEBALL_CSV: &str = include_str!("../data/baseball.csv");

/// Arc-sine variance-stabilizing transform of a proportion observed on
/// n trials: sqrt(n) * arcsin(2p - 1).
pub fn arcsine_transform(p: f64, n: f64) -> f64 {
    n.sqrt() * (2.0 * p - 1.0).asin()
}

/// Fixed common-mean constant for the no-covariate baseball model.
pub const BASEBALL_M3_CENTER: f64 = -3.275;

pub fn parse_baseball<R: Read>(reader: R) -> Result<Vec<BaseballRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 2;
        let r = record?;
        if r.len() != 5 {
            return Err(FhError::InvalidData(format!(
                "row {row}: expected 5 fields, found {}",
                r.len()
            )));
        }
        let hits45: u32 = r[1].trim().parse().map_err(|_| {
            FhError::InvalidData(format!("row {row}: bad hits45 {:?}", &r[1]))
        })?;
        let parse = |k: usize, name: &str| -> Result<f64> {
            r[k].trim().parse::<f64>().map_err(|_| {
                FhError::InvalidData(format!("row {row}: bad {name} {:?}", &r[k]))
            })
        };
        let rec = BaseballRecord {
            player: r[0].trim().to_string(),
            hits45,
            p_true: parse(2, "p_true")?,
            avg1969: parse(3, "avg1969")?,
            ab1969: parse(4, "ab1969")?,
        };
        if rec.hits45 > 45 || !(0.0..=1.0).contains(&rec.p_true) {
            return Err(FhError::InvalidData(format!(
                "row {row}: proportion out of range"
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

/// The bundled 18-player table.
pub fn bundled_baseball() -> Vec<BaseballRecord> {
    parse_baseball(BASEBALL_CSV.as_bytes()).expect("bundled baseball data is valid")
}

/// Which regression structure to use for the baseball analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseballModel {
    /// No covariates; y centered at the fixed constant -3.275.
    M3,
    /// Covariates [1, avg1969, ab1969].
    M4,
}

/// Build the baseball dataset for a model variant. Returns the dataset
/// and the transformed true effects on the same scale as y.
pub fn baseball_dataset(
    records: &[BaseballRecord],
    model: BaseballModel,
) -> Result<(FhDataset, Vec<f64>)> {
    let m = records.len();
    let y_raw: Vec<f64> = records
        .iter()
        .map(|r| arcsine_transform(r.p_hat(), 45.0))
        .collect();
    let theta_raw: Vec<f64> = records
        .iter()
        .map(|r| arcsine_transform(r.p_true, 45.0))
        .collect();
    let d = vec![1.0; m];
    match model {
        BaseballModel::M3 => {
            let y: Vec<f64> = y_raw.iter().map(|v| v - BASEBALL_M3_CENTER).collect();
            let theta: Vec<f64> =
                theta_raw.iter().map(|v| v - BASEBALL_M3_CENTER).collect();
            Ok((FhDataset::without_covariates(y, d)?, theta))
        }
        BaseballModel::M4 => {
            let mut x = Vec::with_capacity(3 * m);
            for r in records {
                x.push(1.0);
                x.push(r.avg1969);
                x.push(r.ab1969);
            }
            Ok((FhDataset::new(y_raw, d, x, 3)?, theta_raw))
        }
    }
}
