//! File ingestion helpers shared by the subcommands: Z-matrix files,
//! distribution specs, and output routing.

use anyhow::{bail, Context};
use contragram::latent::CorrelationMatrix;
use contragram::ClassDistribution;
use nalgebra::DMatrix;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Reads a headerless CSV square matrix and validates it as a correlation
/// matrix.
pub fn read_z_file(path: &Path) -> anyhow::Result<CorrelationMatrix> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read Z-file {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (j, field) in line.split(',').enumerate() {
            let v: f64 = field.trim().parse().with_context(|| {
                format!("Z-file row {}, field {}: `{}` is not a number", i + 1, j + 1, field.trim())
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                bail!(
                    "Z-file row {} has {} fields, expected {}",
                    i + 1,
                    row.len(),
                    first.len()
                );
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("Z-file {} is empty", path.display());
    }
    let n = rows.len();
    if rows[0].len() != n {
        bail!("Z-file is {}x{}, expected a square matrix", n, rows[0].len());
    }
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    Ok(CorrelationMatrix::new(m)?)
}

/// Writes a matrix as headerless CSV, one row per line, shortest round-trip
/// decimals.
pub fn write_matrix_csv<W: Write>(w: &mut W, m: &DMatrix<f64>) -> anyhow::Result<()> {
    for i in 0..m.nrows() {
        let line: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Parses a distribution spec: `uniform:C` or a path to a CSV file holding
/// one probability per line (or one comma-separated line).
pub fn parse_rho_spec(spec: &str) -> anyhow::Result<ClassDistribution> {
    if let Some(c) = spec.strip_prefix("uniform:") {
        let c: usize = c
            .parse()
            .with_context(|| format!("bad class count in rho spec `{spec}`"))?;
        return Ok(ClassDistribution::uniform(c)?);
    }
    let path = PathBuf::from(spec);
    let text = fs::read_to_string(&path)
        .with_context(|| format!("rho spec `{spec}` is neither uniform:C nor a readable file"))?;
    let mut probs = Vec::new();
    for token in text.split(|ch: char| ch == ',' || ch.is_whitespace()) {
        if token.is_empty() {
            continue;
        }
        let p: f64 = token
            .parse()
            .with_context(|| format!("rho file entry `{token}` is not a number"))?;
        probs.push(p);
    }
    Ok(ClassDistribution::new(probs)?)
}

/// Writes to `--out` when given, stdout otherwise.
pub fn write_output(out: Option<&Path>, content: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            fs::write(path, content)
                .with_context(|| format!("cannot write {}", path.display()))?;
        }
        None => {
            print!("{content}");
            std::io::stdout().flush()?;
        }
    }
    Ok(())
}
