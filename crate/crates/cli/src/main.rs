mod io;
mod sweep;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use contragram::bounds::{alpha_saunshi, beta_improved, tau, validate_improved_bound};
use contragram::downstream::{sup_loss_of_z, SupOptConfig};
use contragram::latent::simplex_etf;
use contragram::metrics::{
    angle_proxy, cosine_similarity_matrix, intra_var, load_embeddings, offdiag_summary,
};
use contragram::nce::{
    enumeration_size, exact_nce_loss, mc_nce_loss, EvalMode, NCEConfig, EXACT_TERM_CAP,
};
use contragram::verify::{run_suite, VerifyLevel};
use contragram::{LossKind, LossSpec};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use sweep::{report_json, run_sweep, OutputFormat, SweepConfig};

#[derive(Parser)]
#[command(name = "contragram", version, about = "Contrastive-learning geometry toolkit")]
struct Cli {
    /// Root seed for every derived random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: OutputFormat,
    /// Thread pool size; defaults to the number of cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// JSON configuration document (sweep).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Logistic,
    Hinge,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Quick,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Print the simplex ETF Gram matrix and embeddings for C classes.
    Etf {
        c: usize,
    },
    /// Evaluate the contrastive and supervised losses of a Z-matrix file.
    Eval {
        /// Headerless CSV square correlation matrix.
        z_file: PathBuf,
        /// `uniform:C` or a CSV file of class probabilities.
        #[arg(long)]
        rho: String,
        /// Number of negative samples.
        #[arg(long)]
        k: usize,
        #[arg(long, value_enum, default_value = "logistic")]
        loss: LossArg,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        /// Monte Carlo sample count when the exact enumeration is too large.
        #[arg(long, default_value_t = 1_000_000)]
        mc_samples: usize,
    },
    /// Run the (C, alpha, k) experiment grid from the config document.
    Sweep,
    /// Run the cross-module self-check suites.
    Verify {
        #[arg(value_enum, default_value = "quick")]
        level: LevelArg,
    },
    /// Tabulate transfer-bound coefficients over a k range.
    Bounds {
        /// `uniform:C` or a CSV file of class probabilities.
        #[arg(long)]
        rho: String,
        #[arg(long)]
        k_min: usize,
        #[arg(long)]
        k_max: usize,
        #[arg(long, value_enum, default_value = "logistic")]
        loss: LossArg,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        /// Optional Z-matrix; when given, the bound is also validated on its
        /// measured losses.
        #[arg(long)]
        z_file: Option<PathBuf>,
    },
    /// Structure metrics of a labeled embeddings CSV.
    Metrics {
        /// CSV with header `label,x0,x1,...`.
        embeddings: PathBuf,
        /// Scale every embedding to unit norm first.
        #[arg(long)]
        normalize: bool,
    },
}

fn loss_spec(kind: LossArg, beta: f64) -> anyhow::Result<LossSpec> {
    Ok(match kind {
        LossArg::Logistic => LossSpec::new(LossKind::Logistic, beta)?,
        LossArg::Hinge => LossSpec::new(LossKind::Hinge, beta)?,
    })
}

fn sorted_json(v: impl serde::Serialize) -> anyhow::Result<String> {
    // serde_json maps are ordered, so round-tripping through Value sorts keys.
    Ok(serde_json::to_string_pretty(&serde_json::to_value(v)?)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let workers = cli.workers.unwrap_or_else(num_threads);
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot size the worker pool")?;
    }

    match cli.command {
        Command::Etf { c } => {
            let u = simplex_etf(c)?;
            // The Gram is known in closed form; print it exactly rather than
            // with the 1-ulp noise of the recomputed inner products.
            let offdiag = -1.0 / (c as f64 - 1.0);
            let z = nalgebra::DMatrix::from_fn(c, c, |i, j| if i == j { 1.0 } else { offdiag });
            let mut out = String::from("gram\n");
            {
                let mut buf = Vec::new();
                io::write_matrix_csv(&mut buf, &z)?;
                out.push_str(std::str::from_utf8(&buf)?);
            }
            out.push_str("embeddings\n");
            out.push_str("label");
            for j in 0..u.dim() {
                out.push_str(&format!(",x{j}"));
            }
            out.push('\n');
            for i in 0..c {
                out.push_str(&format!("{i}"));
                for j in 0..u.dim() {
                    out.push_str(&format!(",{}", u.matrix()[(i, j)]));
                }
                out.push('\n');
            }
            io::write_output(cli.out.as_deref(), &out)?;
        }
        Command::Eval {
            z_file,
            rho,
            k,
            loss,
            beta,
            mc_samples,
        } => {
            let z = io::read_z_file(&z_file)?;
            let rho = io::parse_rho_spec(&rho)?;
            let spec = loss_spec(loss, beta)?;
            let exact_fits = enumeration_size(rho.len(), k) <= EXACT_TERM_CAP;
            let (nce, stderr, mode) = if exact_fits {
                (exact_nce_loss(&z, &rho, k, &spec)?, 0.0, "exact")
            } else {
                let cfg = NCEConfig {
                    k,
                    mode: EvalMode::MonteCarlo,
                    mc_samples,
                    seed: cli.seed,
                };
                let (est, se) = mc_nce_loss(&z, &rho, k, &spec, &cfg)?;
                (est, se, "monte_carlo")
            };
            let sup = sup_loss_of_z(&z, &rho, &spec, &SupOptConfig::default())?;
            let mut obj = BTreeMap::new();
            obj.insert("nce_loss", serde_json::json!(nce));
            obj.insert("nce_stderr", serde_json::json!(stderr));
            obj.insert("sup_loss", serde_json::json!(sup));
            obj.insert("mode", serde_json::json!(mode));
            obj.insert("samples", serde_json::json!(if exact_fits { 0 } else { mc_samples }));
            obj.insert("seed", serde_json::json!(cli.seed));
            obj.insert("k", serde_json::json!(k));
            obj.insert("c", serde_json::json!(rho.len()));
            io::write_output(cli.out.as_deref(), &format!("{}\n", sorted_json(obj)?))?;
        }
        Command::Sweep => {
            let mut cfg = match &cli.config {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .with_context(|| format!("cannot read config {}", path.display()))?;
                    serde_json::from_str::<SweepConfig>(&text)
                        .with_context(|| format!("bad sweep config {}", path.display()))?
                }
                None => SweepConfig::default(),
            };
            // Flags override config keys.
            if cli.seed != 0 {
                cfg.root_seed = cli.seed;
            }
            if let Some(out) = &cli.out {
                cfg.output_path = Some(out.clone());
            }
            cfg.output_format = cli.format;
            let rows = run_sweep(&cfg, workers)?;
            let report = report_json(&cfg, &rows, workers)?;
            match &cfg.output_path {
                Some(path) => {
                    let report_path = path.with_extension("report.json");
                    std::fs::write(&report_path, format!("{}\n", serde_json::to_string_pretty(&report)?))?;
                    eprintln!(
                        "wrote {} rows to {} and the monotonicity report to {}",
                        rows.len(),
                        path.display(),
                        report_path.display()
                    );
                }
                None => {
                    let mut text = String::new();
                    text.push_str(sweep::SWEEP_HEADER);
                    text.push('\n');
                    for r in &rows {
                        text.push_str(&r.to_csv_line());
                        text.push('\n');
                    }
                    text.push_str(&serde_json::to_string_pretty(&report)?);
                    text.push('\n');
                    io::write_output(None, &text)?;
                }
            }
        }
        Command::Verify { level } => {
            let level = match level {
                LevelArg::Quick => VerifyLevel::Quick,
                LevelArg::Full => VerifyLevel::Full,
            };
            let results = run_suite(level, cli.seed);
            let mut all_ok = true;
            let mut out = String::new();
            for r in &results {
                all_ok &= r.passed;
                out.push_str(&format!(
                    "{:<32} {} {}\n",
                    r.name,
                    if r.passed { "PASS" } else { "FAIL" },
                    r.detail
                ));
            }
            out.push_str(&format!(
                "{}/{} checks passed\n",
                results.iter().filter(|r| r.passed).count(),
                results.len()
            ));
            io::write_output(cli.out.as_deref(), &out)?;
            if !all_ok {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Bounds {
            rho,
            k_min,
            k_max,
            loss,
            beta,
            z_file,
        } => {
            let rho = io::parse_rho_spec(&rho)?;
            let spec = loss_spec(loss, beta)?;
            anyhow::ensure!(k_min >= 1 && k_min <= k_max, "need 1 <= k_min <= k_max");
            let k_floor = (1.0 / rho.rho_max()).ceil() as usize;
            anyhow::ensure!(
                k_min >= k_floor,
                "the improved coefficient needs k >= ceil(1/rho_max) = {k_floor}, got k_min = {k_min}"
            );
            let c = rho.len();
            let mut lines = Vec::new();
            for k in k_min..=k_max {
                let t = tau(c, k)?;
                let a = alpha_saunshi(c, k)?;
                let b = beta_improved(&rho, k);
                match &z_file {
                    Some(path) => {
                        let z = io::read_z_file(path)?;
                        let nce = exact_nce_loss(&z, &rho, k, &spec)?;
                        let sup = sup_loss_of_z(&z, &rho, &spec, &SupOptConfig::default())?;
                        let mut obj = BTreeMap::new();
                        obj.insert("k", serde_json::json!(k));
                        obj.insert("tau", serde_json::json!(t));
                        obj.insert("alpha_saunshi", serde_json::json!(a));
                        match b {
                            Ok(bv) => {
                                let rep = validate_improved_bound(&rho, k, sup, nce)?;
                                obj.insert("beta_improved", serde_json::json!(bv));
                                obj.insert("report", serde_json::to_value(&rep)?);
                            }
                            Err(e) => {
                                obj.insert("beta_improved_error", serde_json::json!(e.to_string()));
                            }
                        }
                        lines.push(serde_json::to_string(&obj)?);
                    }
                    None => {
                        let bs = match b {
                            Ok(bv) => format!("{bv}"),
                            Err(_) => String::new(),
                        };
                        lines.push(format!("{k},{t},{a},{bs}"));
                    }
                }
            }
            let out = if z_file.is_some() {
                format!("{}\n", lines.join("\n"))
            } else {
                format!("k,tau,alpha_saunshi,beta_improved\n{}\n", lines.join("\n"))
            };
            io::write_output(cli.out.as_deref(), &out)?;
        }
        Command::Metrics {
            embeddings,
            normalize,
        } => {
            let mut emb = load_embeddings(&embeddings)?;
            if normalize {
                emb.normalize()?;
            }
            let vars = intra_var(&emb);
            let (classes, cs) = cosine_similarity_matrix(&emb)?;
            let (cs_mean, cs_std) = offdiag_summary(&cs)?;
            match cli.format {
                OutputFormat::Csv => {
                    let mut out = String::from("metric,class_a,class_b,value\n");
                    for (class, v) in &vars {
                        out.push_str(&format!("intra_var,{class},,{v}\n"));
                        if let Ok(deg) = angle_proxy(*v) {
                            out.push_str(&format!("angle,{class},,{deg}\n"));
                        }
                    }
                    for (i, &a) in classes.iter().enumerate() {
                        for (j, &b) in classes.iter().enumerate() {
                            if i < j {
                                out.push_str(&format!("cs,{a},{b},{}\n", cs[(i, j)]));
                            }
                        }
                    }
                    out.push_str(&format!("cs_offdiag_mean,,,{cs_mean}\n"));
                    out.push_str(&format!("cs_offdiag_std,,,{cs_std}\n"));
                    io::write_output(cli.out.as_deref(), &out)?;
                }
                OutputFormat::JsonLines => {
                    let mut per_class = BTreeMap::new();
                    for (class, v) in &vars {
                        let mut entry = BTreeMap::new();
                        entry.insert("intra_var", serde_json::json!(v));
                        entry.insert(
                            "angle_degrees",
                            angle_proxy(*v)
                                .map(|d| serde_json::json!(d))
                                .unwrap_or(serde_json::Value::Null),
                        );
                        per_class.insert(class.to_string(), entry);
                    }
                    let cs_rows: Vec<Vec<f64>> = (0..classes.len())
                        .map(|i| (0..classes.len()).map(|j| cs[(i, j)]).collect())
                        .collect();
                    let mut obj = BTreeMap::new();
                    obj.insert("classes", serde_json::to_value(&classes)?);
                    obj.insert("per_class", serde_json::to_value(&per_class)?);
                    obj.insert("cs_matrix", serde_json::to_value(&cs_rows)?);
                    obj.insert("cs_offdiag_mean", serde_json::json!(cs_mean));
                    obj.insert("cs_offdiag_std", serde_json::json!(cs_std));
                    io::write_output(cli.out.as_deref(), &format!("{}\n", sorted_json(obj)?))?;
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn num_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}
