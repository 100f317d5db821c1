use std::io::Write;

use nalgebra::DVector;

/// Writes `header` then one row per entry. Floats use the shortest
/// round-trip representation (exponent form for extreme magnitudes), so
/// output is byte-stable.
pub fn write_csv<W, I>(out: W, header: &[String], rows: I) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                format!("row has {} columns, header has {}", row.len(), header.len()),
            ));
        }
        w.write_record(row.iter().map(|x| format!("{x:?}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Trajectory CSV with header `t, coord_0, …, coord_{N-1}`.
pub fn write_trajectory_csv<W: Write>(out: W, rows: &[(f64, DVector<f64>)]) -> std::io::Result<()> {
    let n = rows.first().map_or(0, |r| r.1.len());
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("coord_{i}")));
    write_csv(
        out,
        &header,
        rows.iter().map(|(t, x)| std::iter::once(*t).chain(x.iter().copied()).collect()),
    )
}
