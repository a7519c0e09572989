//! Reading design matrices from CSV and writing reports.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::cluster::Clustering;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gapstat::GapCurve;
use crate::polyhedra::InferenceReport;
use crate::proto::PrototypeSet;

/// Serializes `f64` so that infinities and NaN survive JSON as the strings
/// `"inf"`, `"-inf"` and `"nan"`.
pub mod extended_float {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct FloatVisitor;

    impl Visitor<'_> for FloatVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(E::custom(format!("unexpected float literal {other:?}"))),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(FloatVisitor)
    }
}

/// Where the response comes from when reading a table.
#[derive(Debug, Clone)]
pub enum ResponseSource {
    /// A named column of the design file, removed from the features.
    Column(String),
    /// A one-column file, with or without header.
    File(std::path::PathBuf),
}

/// Reads a headed numeric CSV. Parse errors carry 1-based file line numbers.
pub fn read_table<R: Read>(reader: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() {
        return Err(Error::Parse { line: 1, message: "empty header".into() });
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::Parse { line, message: e.to_string() }
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let mut row = Vec::with_capacity(record.len());
        for (field, name) in record.iter().zip(&header) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column {name:?}: {field:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, message: format!("column {name:?}: non-finite value") });
            }
            row.push(v);
        }
        rows.push(row);
    }
    Ok((header, rows))
}

fn read_response_file(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        match t.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            Ok(_) => return Err(Error::Parse { line: i + 1, message: "non-finite response".into() }),
            Err(_) if i == 0 => continue,
            Err(_) => return Err(Error::Parse { line: i + 1, message: format!("{t:?} is not a number") }),
        }
    }
    Ok(out)
}

/// Loads a dataset from CSV. Without a response source `y` is all zeros, which
/// suits commands that only look at the features.
pub fn read_dataset(path: &Path, response: Option<&ResponseSource>) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let (header, rows) = read_table(file)?;
    let n = rows.len();
    let (names, columns, y): (Vec<String>, Vec<usize>, Vec<f64>) = match response {
        Some(ResponseSource::Column(name)) => {
            let idx = header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::InvalidInput(format!("response column {name:?} not found")))?;
            let cols: Vec<usize> = (0..header.len()).filter(|&j| j != idx).collect();
            (cols.iter().map(|&j| header[j].clone()).collect(), cols, rows.iter().map(|r| r[idx]).collect())
        }
        Some(ResponseSource::File(p)) => {
            let y = read_response_file(p)?;
            if y.len() != n {
                return Err(Error::InvalidInput(format!("response file has {} values, design has {n} rows", y.len())));
            }
            (header.clone(), (0..header.len()).collect(), y)
        }
        None => (header.clone(), (0..header.len()).collect(), vec![0.0; n]),
    };
    let x = DMatrix::from_fn(n, columns.len(), |i, j| rows[i][columns[j]]);
    Dataset::new(x, DVector::from_vec(y), Some(names))
}

pub fn write_matrix_csv<W: Write>(out: W, names: &[String], x: &DMatrix<f64>, y: Option<(&str, &DVector<f64>)>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = names.iter().map(String::as_str).collect();
    if let Some((name, _)) = y {
        header.push(name);
    }
    w.write_record(&header)?;
    for i in 0..x.nrows() {
        let mut row: Vec<String> = (0..x.ncols()).map(|j| format!("{}", x[(i, j)])).collect();
        if let Some((_, v)) = y {
            row.push(format!("{}", v[i]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `feature,cluster` with 1-based cluster ids.
pub fn write_clustering<W: Write>(out: W, names: &[String], clustering: &Clustering) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["feature", "cluster"])?;
    for (j, name) in names.iter().enumerate() {
        w.write_record([name.clone(), (clustering.label(j) + 1).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `cluster_id,prototype_feature,sign` with 1-based cluster ids.
pub fn write_prototypes<W: Write>(out: W, names: &[String], protos: &PrototypeSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cluster_id", "prototype_feature", "sign"])?;
    for (k, (&j, &s)) in protos.prototypes.iter().zip(&protos.signs).enumerate() {
        w.write_record([(k + 1).to_string(), names[j].clone(), format!("{}", s as i32)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_gap_curve<W: Write>(out: W, curve: &GapCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "h_x", "h_u_mean", "h_u_se", "gap", "gap_diff"])?;
    for i in 0..curve.ks.len() {
        w.write_record([
            curve.ks[i].to_string(),
            curve.h_x[i].to_string(),
            curve.h_u_mean[i].to_string(),
            curve.h_u_se[i].to_string(),
            curve.g_hat[i].to_string(),
            curve.d_hat[i].map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per record: `feature,role,estimate,lo,hi,p_value,cluster_id,...`.
pub fn write_report_csv<W: Write>(out: W, report: &InferenceReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "feature", "role", "estimate", "lo", "hi", "p_value", "cluster_id", "prototype", "v_minus", "v_plus",
    ])?;
    for r in &report.records {
        w.write_record([
            r.name.clone(),
            r.role.to_string(),
            r.estimate.to_string(),
            opt(r.ci_low),
            opt(r.ci_high),
            opt(r.p_value),
            (r.cluster + 1).to_string(),
            r.prototype_name.clone(),
            r.v_minus.to_string(),
            r.v_plus.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_error_reports_line() {
        let text = "a,b\n1,2\n3,x\n";
        match read_table(text.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("\"b\""));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ragged_row_is_a_parse_error() {
        let text = "a,b\n1,2\n3\n";
        assert!(matches!(read_table(text.as_bytes()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn extended_float_round_trip() {
        #[derive(serde::Serialize, serde::Deserialize)]
        struct W(#[serde(with = "extended_float")] f64);
        for v in [1.5, f64::INFINITY, f64::NEG_INFINITY] {
            let s = serde_json::to_string(&W(v)).unwrap();
            assert_eq!(serde_json::from_str::<W>(&s).unwrap().0, v);
        }
        assert_eq!(serde_json::to_string(&W(f64::NEG_INFINITY)).unwrap(), "\"-inf\"");
    }
}
