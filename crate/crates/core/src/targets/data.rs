//! Delimited numeric text input.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::factor;
use crate::error::{Error, Result};

/// Parse comma- or whitespace-separated numbers. A first line that does not
/// parse as numbers is treated as a header.
pub fn parse_matrix(text: &str) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line
            .split(|c: char| c == ',' || c == ';' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let parsed: std::result::Result<Vec<f64>, _> = cells.iter().map(|c| c.parse::<f64>()).collect();
        match parsed {
            Ok(v) => {
                if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                    return Err(Error::Data(format!("line {}: non-finite value {bad}", lineno + 1)));
                }
                rows.push(v)
            }
            Err(_) if rows.is_empty() => continue,
            Err(e) => return Err(Error::Data(format!("line {}: {e}", lineno + 1))),
        }
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if ncols == 0 {
        return Err(Error::Data("no numeric rows".into()));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Error::Data(format!("row {} has {} columns, expected {ncols}", i + 1, r.len())));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec((rows.len(), ncols), flat).expect("rectangular"))
}

pub fn load_matrix(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    parse_matrix(&text)
}

/// Load the factor-analysis observations; the file must hold 143 rows of 6 columns.
pub fn fa_load_data(path: &Path) -> Result<Array2<f64>> {
    let m = load_matrix(path)?;
    if m.dim() != (factor::DEFAULT_N, factor::P) {
        return Err(Error::Data(format!(
            "{}: expected shape ({}, {}), found {:?}",
            path.display(),
            factor::DEFAULT_N,
            factor::P,
            m.dim()
        )));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fmt::Write;

    fn write_rows(rows: usize, header: bool, sep: &str) -> tempfile::NamedTempFile {
        let mut s = String::new();
        if header {
            s.push_str("a,b,c,d,e,f\n");
        }
        for i in 0..rows {
            let cells: Vec<String> = (0..6).map(|j| format!("{}", i as f64 * 0.1 + j as f64)).collect();
            writeln!(s, "{}", cells.join(sep)).unwrap();
        }
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), s).unwrap();
        f
    }

    #[test]
    fn well_formed_file() {
        for (header, sep) in [(true, ","), (false, " "), (true, "\t")] {
            let f = write_rows(143, header, sep);
            let m = fa_load_data(f.path()).unwrap();
            assert_eq!(m.dim(), (143, 6));
            assert_eq!(m[[2, 3]], 3.2);
        }
    }

    #[test]
    fn short_file_is_shape_error() {
        let f = write_rows(142, true, ",");
        assert!(matches!(fa_load_data(f.path()), Err(Error::Data(_))));
    }

    #[test]
    fn non_numeric_cell_is_rejected() {
        assert!(matches!(parse_matrix("1,2\n3,x\n"), Err(Error::Data(_))));
        assert!(matches!(parse_matrix("1,2\n3\n"), Err(Error::Data(_))));
    }
}
