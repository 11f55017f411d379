//! Representative files: binary graymaps for images, one CSV row otherwise.

use std::io::Write;
use std::path::{Path, PathBuf};

use repfuse::representative::Representative;
use repfuse::scalar::Scalar;

pub fn file_stem(round: usize, client: usize, label: usize) -> String {
    format!("r{round:04}_c{client:03}_l{label}")
}

/// 8-bit value of a [0, 1] intensity; out-of-range values are clipped first.
pub fn gray(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0) as u8
}

/// Writes `rep` under `dir` and returns the path. Shapes `[rows, cols, 1]`
/// become P5 files; anything else becomes a CSV row of values then the label.
pub fn export_representative<S: Scalar>(
    rep: &Representative<S>,
    round: usize,
    client: usize,
    dir: &Path,
) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let stem = file_stem(round, client, rep.label);
    let values = rep.x.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN));
    match rep.x.shape() {
        &[rows, cols, 1] => {
            let path = dir.join(format!("{stem}.pgm"));
            let mut bytes = format!("P5\n{cols} {rows}\n255\n").into_bytes();
            bytes.extend(values.map(gray));
            std::fs::write(&path, bytes)?;
            Ok(path)
        }
        _ => {
            let path = dir.join(format!("{stem}.csv"));
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut row: Vec<String> = values.map(|v| v.to_string()).collect();
            row.push(rep.label.to_string());
            w.write_record(&row)?;
            let bytes = w.into_inner().map_err(|e| e.into_error())?;
            std::fs::File::create(&path)?.write_all(&bytes)?;
            Ok(path)
        }
    }
}
