//! CSV input/output for hierarchical datasets.
//!
//! Layout: one row per individual with header
//! `community_id,a,e_1..e_S,w_1..w_p,y[,alpha]`. Rows of a community need
//! not be contiguous, but `a` and the `e_*` columns must be constant
//! within each `community_id`.

use std::collections::HashMap;
use std::path::Path;

use crate::data::{Community, HierarchicalDataset, IndividualRecord, OutcomeBounds};
use crate::error::{Error, Result};

fn prefixed_run(header: &[String], start: usize, prefix: &str) -> usize {
    let mut n = 0;
    while start + n < header.len() && header[start + n] == format!("{prefix}{}", n + 1) {
        n += 1;
    }
    n
}

/// Reads communities from a CSV file; `alpha` defaults to `1/N` when the
/// column is absent.
pub fn read_communities(path: impl AsRef<Path>) -> Result<Vec<Community>> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("cannot read header: {e}")))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();

    if header.first().map(String::as_str) != Some("community_id")
        || header.get(1).map(String::as_str) != Some("a")
    {
        return Err(Error::Schema(
            "header must start with community_id,a".into(),
        ));
    }
    let s_dim = prefixed_run(&header, 2, "e_");
    if s_dim == 0 {
        return Err(Error::Schema("missing e_1 column".into()));
    }
    let p_dim = prefixed_run(&header, 2 + s_dim, "w_");
    let y_col = 2 + s_dim + p_dim;
    if header.get(y_col).map(String::as_str) != Some("y") {
        return Err(Error::Schema(format!(
            "expected y at column {}, found {:?}",
            y_col + 1,
            header.get(y_col)
        )));
    }
    let has_alpha = header.get(y_col + 1).map(String::as_str) == Some("alpha");
    let expect_cols = y_col + 1 + usize::from(has_alpha);
    if header.len() != expect_cols {
        return Err(Error::Schema(format!(
            "unexpected trailing columns after {}",
            header[expect_cols - 1]
        )));
    }

    struct Partial {
        e: Vec<f64>,
        a: f64,
        individuals: Vec<IndividualRecord>,
        alphas: Vec<Option<f64>>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut map: HashMap<String, Partial> = HashMap::new();

    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2; // 1-based, after header
        let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        if rec.len() != expect_cols {
            return Err(Error::Parse {
                line,
                msg: format!("expected {expect_cols} fields, got {}", rec.len()),
            });
        }
        let field = |idx: usize| -> Result<f64> {
            rec[idx]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse { line, msg: format!("bad number {:?} in {}", &rec[idx], header[idx]) })
        };
        let id = rec[0].trim().to_string();
        let a = field(1)?;
        let e: Vec<f64> = (0..s_dim).map(|k| field(2 + k)).collect::<Result<_>>()?;
        let w: Vec<f64> = (0..p_dim).map(|k| field(2 + s_dim + k)).collect::<Result<_>>()?;
        let y = field(y_col)?;
        let alpha = if has_alpha { Some(field(y_col + 1)?) } else { None };

        let entry = map.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Partial { e: e.clone(), a, individuals: Vec::new(), alphas: Vec::new() }
        });
        if entry.a != a {
            return Err(Error::Parse {
                line,
                msg: format!("exposure differs within community {id}: {} vs {a}", entry.a),
            });
        }
        if entry.e != e {
            return Err(Error::Parse {
                line,
                msg: format!("E covariates differ within community {id}"),
            });
        }
        entry.individuals.push(IndividualRecord { w, y });
        entry.alphas.push(alpha);
    }

    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let p = map.remove(&id).unwrap();
        let n = p.individuals.len();
        let alpha: Vec<f64> = p
            .alphas
            .iter()
            .map(|a| a.unwrap_or(1.0 / n as f64))
            .collect();
        out.push(Community { id, e: p.e, a: p.a, individuals: p.individuals, alpha });
    }
    Ok(out)
}

/// Loads and validates a dataset; bounds default to the empirical range.
pub fn load_dataset(path: impl AsRef<Path>, bounds: Option<OutcomeBounds>) -> Result<HierarchicalDataset> {
    HierarchicalDataset::new(read_communities(path)?, bounds)
}

/// Writes a dataset in the same CSV layout (alpha column included).
pub fn write_csv(ds: &HierarchicalDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path.as_ref())?;
    let s_dim = ds.e_dim();
    let p_dim = ds.w_dim();
    let mut header = vec!["community_id".to_string(), "a".to_string()];
    header.extend((1..=s_dim).map(|k| format!("e_{k}")));
    header.extend((1..=p_dim).map(|k| format!("w_{k}")));
    header.push("y".into());
    header.push("alpha".into());
    wtr.write_record(&header)?;
    for c in &ds.communities {
        for (ind, &al) in c.individuals.iter().zip(&c.alpha) {
            let mut row = vec![c.id.clone(), c.a.to_string()];
            row.extend(c.e.iter().map(|v| v.to_string()));
            row.extend(ind.w.iter().map(|v| v.to_string()));
            row.push(ind.y.to_string());
            row.push(al.to_string());
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}
