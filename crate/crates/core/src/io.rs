//! CSV files for points and measures.
//!
//! The header is `w,x1,...,xd`. The weight column is optional; without it
//! every row gets weight `1/N`. Coordinates must already have unit norm.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::sphere::{DiscreteMeasure, PointConfiguration, UnitVector};
use crate::{Error, Result};

/// Reads a measure from CSV text.
pub fn read_measure_from<R: Read>(reader: R) -> Result<DiscreteMeasure> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    let has_weight = names.first() == Some(&"w");
    let coord_names = if has_weight { &names[1..] } else { &names[..] };
    for (k, name) in coord_names.iter().enumerate() {
        if *name != format!("x{}", k + 1) {
            return Err(Error::invalid(format!(
                "bad CSV header `{}`: expected `w,x1,...,xd` or `x1,...,xd`",
                names.join(",")
            )));
        }
    }
    if coord_names.is_empty() {
        return Err(Error::invalid("CSV header has no coordinate columns"));
    }
    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let values = record
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::invalid(format!("row {}: {e}", line + 1)))?;
        let (w, coords) = if has_weight {
            (Some(values[0]), values[1..].to_vec())
        } else {
            (None, values)
        };
        weights.push(w);
        atoms.push(UnitVector::new(coords).map_err(|e| Error::invalid(format!("row {}: {e}", line + 1)))?);
    }
    if atoms.is_empty() {
        return Err(Error::invalid("CSV file has no rows"));
    }
    let n = atoms.len() as f64;
    let weights = weights.into_iter().map(|w| w.unwrap_or(1.0 / n)).collect();
    DiscreteMeasure::new(atoms, weights)
}

pub fn read_measure(path: impl AsRef<Path>) -> Result<DiscreteMeasure> {
    read_measure_from(File::open(path)?)
}

/// Reads points; a weight column, if present, is ignored.
pub fn read_points(path: impl AsRef<Path>) -> Result<PointConfiguration> {
    PointConfiguration::new(read_measure(path)?.atoms().to_vec())
}

pub fn write_measure<W: Write>(writer: W, mu: &DiscreteMeasure) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["w".to_string()];
    header.extend((1..=mu.dim()).map(|k| format!("x{k}")));
    wtr.write_record(&header)?;
    for (x, w) in mu.iter() {
        let row: Vec<String> = std::iter::once(w).chain(x.coords().iter().copied()).map(|v| v.to_string()).collect();
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes points without a weight column.
pub fn write_points<W: Write>(writer: W, config: &PointConfiguration) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record((1..=config.dim()).map(|k| format!("x{k}")))?;
    for x in config.points() {
        wtr.write_record(x.coords().iter().map(|v| v.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

/// The measure as inline CSV text.
pub fn measure_to_csv(mu: &DiscreteMeasure) -> String {
    let mut buf = Vec::new();
    write_measure(&mut buf, mu).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("CSV output is UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::sample_sphere;

    #[test]
    fn round_trip_is_exact() {
        let mu = sample_sphere(4, 5, 9).unwrap().empirical().scaled(0.3);
        let text = measure_to_csv(&mu);
        assert!(text.starts_with("w,x1,x2,x3,x4\n"));
        assert_eq!(read_measure_from(text.as_bytes()).unwrap(), mu);
    }

    #[test]
    fn weights_default_to_uniform() {
        let mu = read_measure_from("x1,x2\n1,0\n0,1\n-1,0\n0,-1\n".as_bytes()).unwrap();
        assert_eq!(mu.weights(), &[0.25; 4]);
        assert!(mu.is_probability());
    }

    #[test]
    fn rejects_bad_input() {
        for text in ["a,b\n1,0\n", "x1,x2\n", "x1,x2\n2,0\n", "w,x1,x2\n1,1,0,5\n", "x1,x2\n1,zero\n"] {
            assert!(read_measure_from(text.as_bytes()).is_err(), "{text:?}");
        }
    }
}
