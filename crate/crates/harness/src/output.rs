//! Fixed-header CSV writers for the run directory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use valleysim_core::dynamics::SeriesRow;
use valleysim_core::lattice::Field;
use valleysim_core::Result;

pub const SERIES_HEADER: &str = "t,l1,sup,clip_count,replica";
pub const VALLEYS_HEADER: &str = "t,replica,valley_len,sup_over_valley,saturated";
pub const MOMENTS_HEADER: &str = "t,k,estimate,ci,oracle_value";

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `series` holds `(replica, rows)` in replica order.
pub fn write_series(path: &Path, series: &[(u64, &[SeriesRow])]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{SERIES_HEADER}")?;
    for (r, rows) in series {
        for row in *rows {
            writeln!(w, "{},{},{},{},{}", row.t, row.l1, row.sup, row.clip_count, r)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub struct ValleyRow {
    pub t: f64,
    pub replica: u64,
    pub valley_len: f64,
    pub sup_over_valley: Option<f64>,
    pub saturated: bool,
}

pub fn write_valleys(path: &Path, rows: &[ValleyRow]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{VALLEYS_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.t,
            r.replica,
            r.valley_len,
            opt(r.sup_over_valley),
            r.saturated
        )?;
    }
    w.flush()?;
    Ok(())
}

pub struct MomentRow {
    pub t: f64,
    pub k: u32,
    pub estimate: f64,
    pub ci: f64,
    pub oracle_value: Option<f64>,
}

pub fn write_moments(path: &Path, rows: &[MomentRow]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{MOMENTS_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.t, r.k, r.estimate, r.ci, opt(r.oracle_value))?;
    }
    w.flush()?;
    Ok(())
}

/// `fields/snapshot_{i}.bin` and `fields/snapshot_{i}.csv` for each field.
pub fn write_fields(dir: &Path, fields: &[(f64, Field)]) -> Result<()> {
    let dir = dir.join("fields");
    std::fs::create_dir_all(&dir)?;
    let mut index = create(&dir.join("index.csv"))?;
    writeln!(index, "snapshot,t")?;
    for (i, (t, f)) in fields.iter().enumerate() {
        let mut b = create(&dir.join(format!("snapshot_{i:04}.bin")))?;
        f.write_snapshot(&mut b)?;
        b.flush()?;
        let mut c = create(&dir.join(format!("snapshot_{i:04}.csv")))?;
        f.write_csv(&mut c)?;
        c.flush()?;
        writeln!(index, "{i},{t}")?;
    }
    index.flush()?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| valleysim_core::Error::Parse(e.to_string()))?;
    w.write_all(text.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
