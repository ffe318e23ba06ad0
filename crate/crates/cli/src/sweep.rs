//! The sweep runner: one optimization pipeline per (C, alpha, k) cell,
//! schema-stable output, resumability, and the per-curve monotonicity report.

use anyhow::Context;
use contragram::downstream::{sup_loss_of_z, SupOptConfig};
use contragram::opt::{solve_nce_optimal, OptimizerConfig};
use contragram::seeding::derive;
use contragram::{ClassDistribution, LossSpec};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

pub const SWEEP_HEADER: &str = "C,alpha,distribution_seed,k,nce_loss_exact,sup_loss,offdiag_mean,offdiag_std,etf_gap,runs,steps,batch,wall_ms,error";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    JsonLines,
}

/// One experiment grid. Deserialized from the `--config` JSON document;
/// missing keys take the defaults below.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub c_list: Vec<usize>,
    pub alpha_list: Vec<f64>,
    pub k_list: Vec<usize>,
    pub loss: LossSpec,
    pub optimizer: OptimizerConfig,
    pub root_seed: u64,
    pub output_path: Option<PathBuf>,
    pub output_format: OutputFormat,
    /// Tolerance for the monotonicity classification.
    pub epsilon: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            c_list: (3..=9).collect(),
            alpha_list: vec![1.0, 2.0, 3.0, 4.0],
            k_list: vec![1, 2, 4, 8, 16, 32],
            loss: LossSpec::logistic(1.0).unwrap(),
            optimizer: OptimizerConfig {
                runs: 50,
                ..OptimizerConfig::default()
            },
            root_seed: 0,
            output_path: None,
            output_format: OutputFormat::Csv,
            epsilon: 0.01,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.c_list.is_empty() || self.alpha_list.is_empty() || self.k_list.is_empty() {
            anyhow::bail!("c_list, alpha_list and k_list must all be nonempty");
        }
        if self.c_list.iter().any(|&c| c < 2) {
            anyhow::bail!("every C must be at least 2");
        }
        if self.alpha_list.iter().any(|&a| !(a > 0.0)) {
            anyhow::bail!("every alpha must be positive");
        }
        if !self.k_list.windows(2).all(|w| w[0] < w[1]) {
            anyhow::bail!("k_list must be strictly increasing");
        }
        self.optimizer.validate()?;
        Ok(())
    }

    /// Cell-group seed; also used as the Dirichlet distribution seed, so the
    /// drawn class distribution is shared by every k in the cell group.
    pub fn cell_seed(&self, c: usize, alpha: f64) -> u64 {
        derive(self.root_seed, &[c as u64, alpha.to_bits()])
    }
}

/// One output row. Measurement fields are absent when the cell failed; the
/// failure text goes in `error`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub c: usize,
    pub alpha: f64,
    pub distribution_seed: u64,
    pub k: usize,
    pub nce_loss_exact: Option<f64>,
    pub sup_loss: Option<f64>,
    pub offdiag_mean: Option<f64>,
    pub offdiag_std: Option<f64>,
    pub etf_gap: Option<f64>,
    pub runs: usize,
    pub steps: usize,
    pub batch: usize,
    pub wall_ms: u64,
    pub error: String,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl SweepRow {
    pub fn to_csv_line(&self) -> String {
        // The error text is the only field that could contain a comma.
        let error = if self.error.contains(',') || self.error.contains('"') {
            format!("\"{}\"", self.error.replace('"', "\"\""))
        } else {
            self.error.clone()
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.c,
            self.alpha,
            self.distribution_seed,
            self.k,
            fmt_opt(self.nce_loss_exact),
            fmt_opt(self.sup_loss),
            fmt_opt(self.offdiag_mean),
            fmt_opt(self.offdiag_std),
            fmt_opt(self.etf_gap),
            self.runs,
            self.steps,
            self.batch,
            self.wall_ms,
            error
        )
    }

    /// JSON object with sorted keys, for the json_lines format.
    pub fn to_json_line(&self) -> anyhow::Result<String> {
        // Round-tripping through Value sorts the keys.
        Ok(serde_json::to_string(&serde_json::to_value(self)?)?)
    }
}

/// Reads rows back from an existing output file so finished cells can be
/// skipped on rerun.
pub fn read_existing_rows(path: &Path, format: OutputFormat) -> anyhow::Result<Vec<SweepRow>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e).with_context(|| format!("cannot read {}", path.display())),
    };
    let mut rows = Vec::new();
    match format {
        OutputFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(true)
                .flexible(false)
                .from_reader(text.as_bytes());
            let parse_opt = |s: &str| -> Option<f64> {
                if s.is_empty() {
                    None
                } else {
                    s.parse().ok()
                }
            };
            for rec in rdr.records() {
                let r = rec?;
                if r.len() != 14 {
                    anyhow::bail!("existing sweep row has {} fields, expected 14", r.len());
                }
                rows.push(SweepRow {
                    c: r[0].parse()?,
                    alpha: r[1].parse()?,
                    distribution_seed: r[2].parse()?,
                    k: r[3].parse()?,
                    nce_loss_exact: parse_opt(&r[4]),
                    sup_loss: parse_opt(&r[5]),
                    offdiag_mean: parse_opt(&r[6]),
                    offdiag_std: parse_opt(&r[7]),
                    etf_gap: parse_opt(&r[8]),
                    runs: r[9].parse()?,
                    steps: r[10].parse()?,
                    batch: r[11].parse()?,
                    wall_ms: r[12].parse()?,
                    error: r[13].to_string(),
                });
            }
        }
        OutputFormat::JsonLines => {
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                rows.push(serde_json::from_str(line)?);
            }
        }
    }
    Ok(rows)
}

fn render_rows(rows: &[SweepRow], format: OutputFormat) -> anyhow::Result<String> {
    let mut out = String::new();
    match format {
        OutputFormat::Csv => {
            out.push_str(SWEEP_HEADER);
            out.push('\n');
            for r in rows {
                out.push_str(&r.to_csv_line());
                out.push('\n');
            }
        }
        OutputFormat::JsonLines => {
            for r in rows {
                out.push_str(&r.to_json_line()?);
                out.push('\n');
            }
        }
    }
    Ok(out)
}

fn run_cell(cfg: &SweepConfig, c: usize, alpha: f64, k: usize) -> SweepRow {
    let cell_seed = cfg.cell_seed(c, alpha);
    let start = Instant::now();
    let mut row = SweepRow {
        c,
        alpha,
        distribution_seed: cell_seed,
        k,
        nce_loss_exact: None,
        sup_loss: None,
        offdiag_mean: None,
        offdiag_std: None,
        etf_gap: None,
        runs: cfg.optimizer.runs,
        steps: cfg.optimizer.steps,
        batch: cfg.optimizer.batch,
        wall_ms: 0,
        error: String::new(),
    };
    let result = (|| -> contragram::Result<()> {
        let rho = ClassDistribution::dirichlet(c, alpha, cell_seed)?;
        let opt = OptimizerConfig {
            seed: derive(cell_seed, &[k as u64]),
            ..cfg.optimizer.clone()
        };
        let solved = solve_nce_optimal(&rho, k, &cfg.loss, &opt)?;
        let sup = sup_loss_of_z(&solved.z, &rho, &cfg.loss, &SupOptConfig::default())?;
        let (mean, std) = solved.z.offdiag_stats();
        row.nce_loss_exact = Some(solved.nce_loss);
        row.sup_loss = Some(sup);
        row.offdiag_mean = Some(mean);
        row.offdiag_std = Some(std);
        row.etf_gap = Some(mean - (-1.0 / (c as f64 - 1.0)));
        Ok(())
    })();
    if let Err(e) = result {
        row.error = e.to_string();
    }
    row.wall_ms = start.elapsed().as_millis() as u64;
    row
}

/// Runs every cell not already present in the output file. Cells execute
/// concurrently; finished rows are flushed to disk (sorted) as they arrive,
/// so an interrupted sweep resumes where it stopped.
pub fn run_sweep(cfg: &SweepConfig, workers: usize) -> anyhow::Result<Vec<SweepRow>> {
    cfg.validate()?;
    let existing = match &cfg.output_path {
        Some(p) => read_existing_rows(p, cfg.output_format)?,
        None => Vec::new(),
    };
    let mut rows: Vec<SweepRow> = Vec::new();
    let mut todo = Vec::new();
    for &c in &cfg.c_list {
        for &alpha in &cfg.alpha_list {
            let cell_seed = cfg.cell_seed(c, alpha);
            for &k in &cfg.k_list {
                match existing.iter().find(|r| {
                    r.c == c
                        && r.alpha == alpha
                        && r.k == k
                        && r.distribution_seed == cell_seed
                        && r.error.is_empty()
                }) {
                    Some(done) => rows.push(done.clone()),
                    None => todo.push((c, alpha, k)),
                }
            }
        }
    }

    let state = Mutex::new(rows);
    let flush = |rows: &mut Vec<SweepRow>, row: SweepRow| -> anyhow::Result<()> {
        rows.push(row);
        rows.sort_by(|a, b| {
            (a.c, a.alpha, a.k)
                .partial_cmp(&(b.c, b.alpha, b.k))
                .unwrap()
        });
        if let Some(p) = &cfg.output_path {
            fs::write(p, render_rows(rows, cfg.output_format)?)
                .with_context(|| format!("cannot write {}", p.display()))?;
        }
        Ok(())
    };

    if workers > 1 {
        use rayon::prelude::*;
        todo.par_iter().try_for_each(|&(c, alpha, k)| {
            let row = run_cell(cfg, c, alpha, k);
            flush(&mut state.lock().unwrap(), row)
        })?;
    } else {
        for &(c, alpha, k) in &todo {
            let row = run_cell(cfg, c, alpha, k);
            flush(&mut state.lock().unwrap(), row)?;
        }
    }

    let mut rows = state.into_inner().unwrap();
    rows.sort_by(|a, b| {
        (a.c, a.alpha, a.k)
            .partial_cmp(&(b.c, b.alpha, b.k))
            .unwrap()
    });
    Ok(rows)
}

/// Per-curve monotonicity summary over increasing k.
#[derive(Debug, Clone, Serialize)]
pub struct CurveReport {
    pub c: usize,
    pub alpha: f64,
    pub ks: Vec<usize>,
    pub sup_losses: Vec<f64>,
    /// Largest increase of sup_loss across a consecutive k step.
    pub max_consecutive_increase: f64,
    /// `strict` (every step decreases), `non_strict` (no increase beyond
    /// epsilon), `violating`, or `incomplete` (failed cells in the curve).
    pub classification: String,
}

pub fn monotonicity_report(rows: &[SweepRow], epsilon: f64) -> Vec<CurveReport> {
    let mut curves: BTreeMap<(usize, u64), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        curves.entry((r.c, r.alpha.to_bits())).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((c, alpha_bits), mut members) in curves {
        members.sort_by_key(|r| r.k);
        let alpha = f64::from_bits(alpha_bits);
        let ks: Vec<usize> = members.iter().map(|r| r.k).collect();
        let complete = members.iter().all(|r| r.sup_loss.is_some());
        let sup_losses: Vec<f64> = members.iter().filter_map(|r| r.sup_loss).collect();
        let mut max_inc = f64::NEG_INFINITY;
        let mut strict = true;
        for w in sup_losses.windows(2) {
            let diff = w[1] - w[0];
            max_inc = max_inc.max(diff);
            if diff >= 0.0 {
                strict = false;
            }
        }
        let classification = if !complete {
            "incomplete"
        } else if max_inc > epsilon {
            "violating"
        } else if strict {
            "strict"
        } else {
            "non_strict"
        };
        out.push(CurveReport {
            c,
            alpha,
            ks,
            sup_losses,
            max_consecutive_increase: if max_inc.is_finite() { max_inc } else { 0.0 },
            classification: classification.to_string(),
        });
    }
    out
}

/// Whole-sweep report: the curves plus headline counts, as a sorted-key JSON
/// value.
pub fn report_json(
    cfg: &SweepConfig,
    rows: &[SweepRow],
    workers: usize,
) -> anyhow::Result<serde_json::Value> {
    let curves = monotonicity_report(rows, cfg.epsilon);
    let complete: Vec<&CurveReport> = curves
        .iter()
        .filter(|c| c.classification != "incomplete")
        .collect();
    let strict = complete.iter().filter(|c| c.classification == "strict").count();
    let non_increasing = complete
        .iter()
        .filter(|c| c.classification != "violating")
        .count();
    let mut root = BTreeMap::new();
    root.insert("config", serde_json::to_value(cfg)?);
    root.insert("workers", serde_json::to_value(workers)?);
    root.insert("curves", serde_json::to_value(&curves)?);
    root.insert(
        "summary",
        serde_json::json!({
            "curves_total": curves.len(),
            "curves_complete": complete.len(),
            "curves_strictly_decreasing": strict,
            "curves_non_increasing_within_epsilon": non_increasing,
            "epsilon": cfg.epsilon,
        }),
    );
    Ok(serde_json::to_value(root)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_shape() {
        let cfg = SweepConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.c_list, vec![3, 4, 5, 6, 7, 8, 9]);
        assert_eq!(cfg.alpha_list.len() * cfg.c_list.len(), 28);
        assert_eq!(cfg.k_list, vec![1, 2, 4, 8, 16, 32]);
        assert_eq!(cfg.optimizer.runs, 50);
        assert_eq!(cfg.epsilon, 0.01);
    }

    #[test]
    fn non_increasing_k_list_rejected() {
        let cfg = SweepConfig {
            k_list: vec![1, 4, 4],
            ..SweepConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn header_matches_row_rendering() {
        assert_eq!(SWEEP_HEADER.split(',').count(), 14);
        let row = SweepRow {
            c: 3,
            alpha: 1.0,
            distribution_seed: 42,
            k: 4,
            nce_loss_exact: Some(1.25),
            sup_loss: Some(0.5),
            offdiag_mean: Some(-0.5),
            offdiag_std: Some(0.01),
            etf_gap: Some(0.0),
            runs: 50,
            steps: 1000,
            batch: 10000,
            wall_ms: 17,
            error: String::new(),
        };
        assert_eq!(row.to_csv_line().split(',').count(), 14);
        assert_eq!(
            row.to_csv_line(),
            "3,1,42,4,1.25,0.5,-0.5,0.01,0,50,1000,10000,17,"
        );
    }

    #[test]
    fn json_line_keys_sorted() {
        let row = SweepRow {
            c: 3,
            alpha: 1.0,
            distribution_seed: 42,
            k: 4,
            nce_loss_exact: None,
            sup_loss: None,
            offdiag_mean: None,
            offdiag_std: None,
            etf_gap: None,
            runs: 50,
            steps: 1000,
            batch: 10000,
            wall_ms: 17,
            error: "boom".into(),
        };
        let line = row.to_json_line().unwrap();
        let keys: Vec<&str> = line
            .trim_matches(|c| c == '{' || c == '}')
            .split(',')
            .map(|kv| kv.split(':').next().unwrap())
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn monotonicity_classification() {
        let mk = |k: usize, sup: Option<f64>| SweepRow {
            c: 3,
            alpha: 1.0,
            distribution_seed: 0,
            k,
            nce_loss_exact: None,
            sup_loss: sup,
            offdiag_mean: None,
            offdiag_std: None,
            etf_gap: None,
            runs: 1,
            steps: 1,
            batch: 1,
            wall_ms: 0,
            error: String::new(),
        };
        let strict = vec![mk(1, Some(1.0)), mk(2, Some(0.9)), mk(4, Some(0.8))];
        assert_eq!(monotonicity_report(&strict, 0.01)[0].classification, "strict");

        let wiggly = vec![mk(1, Some(1.0)), mk(2, Some(1.005)), mk(4, Some(0.8))];
        let rep = monotonicity_report(&wiggly, 0.01);
        assert_eq!(rep[0].classification, "non_strict");
        assert!((rep[0].max_consecutive_increase - 0.005).abs() < 1e-12);

        let bad = vec![mk(1, Some(1.0)), mk(2, Some(1.2)), mk(4, Some(0.8))];
        assert_eq!(monotonicity_report(&bad, 0.01)[0].classification, "violating");

        let partial = vec![mk(1, Some(1.0)), mk(2, None)];
        assert_eq!(monotonicity_report(&partial, 0.01)[0].classification, "incomplete");
    }

    #[test]
    fn existing_rows_roundtrip_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        let row = SweepRow {
            c: 3,
            alpha: 1.5,
            distribution_seed: 7,
            k: 2,
            nce_loss_exact: Some(0.123456789012345),
            sup_loss: Some(0.5),
            offdiag_mean: Some(-0.25),
            offdiag_std: None,
            etf_gap: None,
            runs: 50,
            steps: 1000,
            batch: 10000,
            wall_ms: 3,
            error: "a, \"quoted\" failure".into(),
        };
        fs::write(
            &path,
            render_rows(std::slice::from_ref(&row), OutputFormat::Csv).unwrap(),
        )
        .unwrap();
        let back = read_existing_rows(&path, OutputFormat::Csv).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].nce_loss_exact, row.nce_loss_exact);
        assert_eq!(back[0].offdiag_std, None);
        assert_eq!(back[0].error, row.error);
    }

    #[test]
    fn tiny_sweep_runs_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        let cfg = SweepConfig {
            c_list: vec![2],
            alpha_list: vec![1.0],
            k_list: vec![1, 2],
            optimizer: OptimizerConfig {
                steps: 5,
                batch: 50,
                runs: 2,
                ..OptimizerConfig::default()
            },
            output_path: Some(path.clone()),
            ..SweepConfig::default()
        };
        let rows = run_sweep(&cfg, 1).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.error.is_empty()), "{rows:?}");
        let first = fs::read_to_string(&path).unwrap();

        // Rerun: every cell is already on disk, so rows and bytes survive
        // unchanged, including wall_ms.
        let rows2 = run_sweep(&cfg, 1).unwrap();
        assert_eq!(rows2.len(), 2);
        assert_eq!(rows2[0].wall_ms, rows[0].wall_ms);
        // The file is untouched on a fully resumed sweep.
        assert_eq!(fs::read_to_string(&path).unwrap(), first);
    }
}
