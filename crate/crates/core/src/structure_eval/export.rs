//! CSV and PGM export of structure matrices.

use ndarray::Array2;
use std::io::Write;
use std::path::Path;

/// Row-major CSV with 17 significant digits per entry.
pub fn matrix_to_csv(values: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in values.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{:.16e}", v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv<P: AsRef<Path>>(path: P, values: &Array2<f64>) -> std::io::Result<()> {
    std::fs::File::create(path)?.write_all(matrix_to_csv(values).as_bytes())
}

/// Binary 8-bit grayscale PGM, scaled so the matrix maximum maps to 255.
pub fn matrix_to_pgm(values: &Array2<f64>) -> Vec<u8> {
    let (h, w) = (values.nrows(), values.ncols());
    let max = values.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut out = format!("P5\n{} {}\n255\n", w, h).into_bytes();
    for row in values.rows() {
        for &v in row {
            let scaled = if max > 0.0 { (v / max).clamp(0.0, 1.0) } else { 0.0 };
            out.push((scaled * 255.0).round() as u8);
        }
    }
    out
}

pub fn write_matrix_pgm<P: AsRef<Path>>(path: P, values: &Array2<f64>) -> std::io::Result<()> {
    std::fs::File::create(path)?.write_all(&matrix_to_pgm(values))
}
