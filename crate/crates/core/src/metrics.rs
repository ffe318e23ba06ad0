//! Geometry diagnostics for labeled embedding sets: within-class variance,
//! between-class cosine structure, and the pairwise-angle proxy.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

/// A set of embeddings with integer class labels.
#[derive(Debug, Clone)]
pub struct LabeledEmbeddings {
    labels: Vec<u64>,
    points: DMatrix<f64>,
}

impl LabeledEmbeddings {
    pub fn new(labels: Vec<u64>, points: DMatrix<f64>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("no embeddings given".into()));
        }
        if labels.len() != points.nrows() {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} embedding rows",
                labels.len(),
                points.nrows()
            )));
        }
        if points.ncols() == 0 {
            return Err(Error::InvalidArgument("embeddings have zero dimension".into()));
        }
        if let Some(x) = points.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "embedding contains non-finite entry {x}"
            )));
        }
        Ok(LabeledEmbeddings { labels, points })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn labels(&self) -> &[u64] {
        &self.labels
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    /// Distinct labels in increasing order.
    pub fn classes(&self) -> Vec<u64> {
        let mut out: Vec<u64> = self.labels.clone();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Scales every row to unit norm. Rows of zero norm are rejected because
    /// their direction is undefined.
    pub fn normalize(&mut self) -> Result<()> {
        for (i, mut row) in self.points.row_iter_mut().enumerate() {
            let norm = row.norm();
            if norm <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "embedding row {i} has zero norm and cannot be normalized"
                )));
            }
            row /= norm;
        }
        Ok(())
    }

    fn rows_of(&self, class: u64) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    fn class_mean(&self, rows: &[usize]) -> DVector<f64> {
        let mut mean = DVector::zeros(self.dim());
        for &i in rows {
            mean += self.points.row(i).transpose();
        }
        mean / rows.len() as f64
    }
}

/// Reads embeddings from CSV with header `label,x0,x1,...`.
pub fn load_embeddings(path: &Path) -> Result<LabeledEmbeddings> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot open {}: {e}", path.display())))?;
    read_embeddings(file)
}

/// Reads embeddings from any CSV source with header `label,x0,x1,...`.
pub fn read_embeddings<R: Read>(reader: R) -> Result<LabeledEmbeddings> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            message: format!("cannot read header: {e}"),
        })?
        .clone();
    if headers.len() < 2 || headers.get(0) != Some("label") {
        return Err(Error::Parse {
            row: 0,
            message: format!(
                "expected header starting with `label,x0,...`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    for (i, name) in headers.iter().skip(1).enumerate() {
        if name != format!("x{i}") {
            return Err(Error::Parse {
                row: 0,
                message: format!("expected coordinate column `x{i}`, got `{name}`"),
            });
        }
    }
    let dim = headers.len() - 1;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if record.len() != dim + 1 {
            return Err(Error::Parse {
                row,
                message: format!("expected {} fields, got {}", dim + 1, record.len()),
            });
        }
        let label: u64 = record[0].parse().map_err(|_| Error::Parse {
            row,
            message: format!("label `{}` is not a nonnegative integer", &record[0]),
        })?;
        labels.push(label);
        for j in 0..dim {
            let x: f64 = record[j + 1].parse().map_err(|_| Error::Parse {
                row,
                message: format!("coordinate x{j} value `{}` is not a number", &record[j + 1]),
            })?;
            data.push(x);
        }
    }
    if labels.is_empty() {
        return Err(Error::Parse {
            row: 1,
            message: "no data rows".into(),
        });
    }
    let points = DMatrix::from_row_slice(labels.len(), dim, &data);
    LabeledEmbeddings::new(labels, points)
}

/// Per-class within-class variance `(1/n_c) sum_i |r_i - mean_c|^2`,
/// keyed by label.
pub fn intra_var(emb: &LabeledEmbeddings) -> BTreeMap<u64, f64> {
    let mut out = BTreeMap::new();
    for class in emb.classes() {
        let rows = emb.rows_of(class);
        let mean = emb.class_mean(&rows);
        let mut acc = 0.0;
        for &i in &rows {
            acc += (emb.points().row(i).transpose() - &mean).norm_squared();
        }
        out.insert(class, acc / rows.len() as f64);
    }
    out
}

/// Cosine similarities between normalized class means, with classes in
/// increasing label order. Classes whose mean has zero norm are rejected.
pub fn cosine_similarity_matrix(emb: &LabeledEmbeddings) -> Result<(Vec<u64>, DMatrix<f64>)> {
    let classes = emb.classes();
    if classes.len() < 2 {
        return Err(Error::InvalidArgument(
            "cosine similarity needs at least 2 classes".into(),
        ));
    }
    let mut means = Vec::with_capacity(classes.len());
    for &class in &classes {
        let mean = emb.class_mean(&emb.rows_of(class));
        let norm = mean.norm();
        if norm <= 0.0 {
            return Err(Error::Numeric(format!(
                "class {class} has a zero-norm mean; cosine is undefined"
            )));
        }
        means.push(mean / norm);
    }
    let n = classes.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = means[i].dot(&means[j]).clamp(-1.0, 1.0);
        }
    }
    Ok((classes, m))
}

/// Mean and standard deviation of the strict upper-triangle entries.
pub fn offdiag_summary(m: &DMatrix<f64>) -> Result<(f64, f64)> {
    let n = m.nrows();
    if n < 2 || m.ncols() != n {
        return Err(Error::InvalidArgument(
            "off-diagonal summary needs a square matrix of size at least 2".into(),
        ));
    }
    let mut vals = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            vals.push(m[(i, j)]);
        }
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
    Ok((mean, var.sqrt()))
}

/// Converts a squared-distance-style offset `alpha` into the pairwise angle
/// `arccos((2 - alpha) / 2)` in degrees. Defined for `alpha` in `[0, 2]`.
pub fn angle_proxy(alpha: f64) -> Result<f64> {
    if !(0.0..=2.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "angle proxy needs alpha in [0, 2], got {alpha}"
        )));
    }
    Ok(((2.0 - alpha) / 2.0).acos().to_degrees())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn square_points() -> LabeledEmbeddings {
        // class 0 around (1, 0), class 1 around (0, 1)
        let labels = vec![0, 0, 1, 1];
        let points = DMatrix::from_row_slice(
            4,
            2,
            &[1.1, 0.0, 0.9, 0.0, 0.0, 1.2, 0.0, 0.8],
        );
        LabeledEmbeddings::new(labels, points).unwrap()
    }

    #[test]
    fn intra_var_hand_values() {
        let v = intra_var(&square_points());
        // class 0: mean (1, 0), deviations 0.1 -> variance 0.01
        assert_relative_eq!(v[&0], 0.01, epsilon = 1e-12);
        // class 1: mean (0, 1), deviations 0.2 -> variance 0.04
        assert_relative_eq!(v[&1], 0.04, epsilon = 1e-12);
    }

    #[test]
    fn intra_var_zero_for_collapsed_class() {
        let labels = vec![3, 3, 3];
        let points = DMatrix::from_row_slice(3, 2, &[0.5, 0.5, 0.5, 0.5, 0.5, 0.5]);
        let v = intra_var(&LabeledEmbeddings::new(labels, points).unwrap());
        assert_eq!(v[&3], 0.0);
    }

    #[test]
    fn cosine_matrix_orthogonal_means() {
        let (classes, m) = cosine_similarity_matrix(&square_points()).unwrap();
        assert_eq!(classes, vec![0, 1]);
        assert_relative_eq!(m[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(m[(1, 1)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(m[(0, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn offdiag_summary_hand_values() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.4, 0.2, 1.0, 0.6, 0.4, 0.6, 1.0]);
        let (mean, std) = offdiag_summary(&m).unwrap();
        assert_relative_eq!(mean, 0.4, epsilon = 1e-12);
        // population std of {0.2, 0.4, 0.6}
        assert_relative_eq!(std, (2.0f64 / 75.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn angle_proxy_values() {
        assert_relative_eq!(angle_proxy(0.0).unwrap(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(angle_proxy(1.0).unwrap(), 60.0, epsilon = 1e-12);
        assert_relative_eq!(angle_proxy(2.0).unwrap(), 90.0, epsilon = 1e-12);
        assert_relative_eq!(angle_proxy(0.52).unwrap(), 42.2685844, epsilon = 1e-6);
        assert!(angle_proxy(-0.1).is_err());
        assert!(angle_proxy(2.1).is_err());
    }

    #[test]
    fn normalize_rejects_zero_rows() {
        let mut emb = LabeledEmbeddings::new(
            vec![0, 1],
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]),
        )
        .unwrap();
        assert!(emb.normalize().is_err());
    }

    #[test]
    fn normalize_makes_unit_rows() {
        let mut emb = square_points();
        emb.normalize().unwrap();
        for row in emb.points().row_iter() {
            assert_relative_eq!(row.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn read_embeddings_roundtrip() {
        let csv = "label,x0,x1\n0,1.0,0.0\n1,0.0,1.0\n0,0.9,0.1\n";
        let emb = read_embeddings(csv.as_bytes()).unwrap();
        assert_eq!(emb.len(), 3);
        assert_eq!(emb.dim(), 2);
        assert_eq!(emb.labels(), &[0, 1, 0]);
        assert_relative_eq!(emb.points()[(2, 0)], 0.9, epsilon = 1e-12);
    }

    #[test]
    fn read_embeddings_reports_bad_row() {
        let csv = "label,x0\n0,1.0\n1,oops\n";
        match read_embeddings(csv.as_bytes()) {
            Err(Error::Parse { row, message }) => {
                assert_eq!(row, 2);
                assert!(message.contains("oops"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn read_embeddings_rejects_bad_header() {
        assert!(read_embeddings("lab,x0\n0,1.0\n".as_bytes()).is_err());
        assert!(read_embeddings("label,a,b\n0,1.0,2.0\n".as_bytes()).is_err());
        assert!(read_embeddings("label,x0,x2\n0,1.0,2.0\n".as_bytes()).is_err());
    }

    #[test]
    fn read_embeddings_rejects_ragged_rows() {
        // csv's reader flags the length change itself; row index must be kept.
        match read_embeddings("label,x0,x1\n0,1.0,2.0\n1,3.0\n".as_bytes()) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
