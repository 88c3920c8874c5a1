//! Attribution CSV: header `method,class,v0,...,v{d-1}`, one row per sample.
//! Values are written in shortest round-trip form, so import is bit-exact.

use std::path::Path;

use super::{Attribution, Method};
use crate::error::{Error, Result};

pub fn write_attributions(path: impl AsRef<Path>, rows: &[Attribution]) -> Result<()> {
    let path = path.as_ref();
    let d = rows.first().map_or(0, |a| a.values.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["method".to_string(), "class".to_string()];
    header.extend((0..d).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    for a in rows {
        if a.values.len() != d {
            return Err(Error::Shape("attributions have different lengths".into()));
        }
        let mut rec = vec![a.method.name().to_string(), a.class.to_string()];
        rec.extend(a.values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read attributions, checking every row has `dim` values.
pub fn read_attributions(path: impl AsRef<Path>, dim: usize) -> Result<Vec<Attribution>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: String| Error::Config(format!("attribution row {}: {what}", line + 1));
        if rec.len() != dim + 2 {
            return Err(bad(format!("expected {} columns, found {}", dim + 2, rec.len())));
        }
        let method: Method = rec[0].parse()?;
        let class = rec[1]
            .parse::<usize>()
            .map_err(|e| bad(format!("class: {e}")))?;
        let values = rec
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>().map_err(|e| bad(format!("value {v:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        out.push(Attribution::checked(values, method, class)?);
    }
    Ok(out)
}
