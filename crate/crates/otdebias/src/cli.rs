//! Command-line front end.
//!
//! Every subcommand reads NDT1 tensors / CSV catalogs, writes to `--out` or
//! stdout, and exits 0 on success, 1 on data errors, 2 on usage errors. With
//! fixed seeds and inputs every invocation is byte-identical across runs and
//! thread counts. `OTDEBIAS_SEED` overrides the default seed where a command
//! takes one; `--threads N` caps the worker pool.

use crate::biaslab::{
    ablation_run, hk_recalibrate, ks_statistic, sample_catalog, AblationConfig, SelectionFn,
    TrueDistribution,
};
use crate::catalog::{parse_catalog, save_catalog, CatalogRow, CatalogSchema};
use crate::encoding::encode_coord;
use crate::error::{Error, Result};
use crate::galaxy::{gen_galaxy, GalaxyKind, SyntheticGalaxySpec};
use crate::losses::{color_weight, redshift_loss, ColorBands, LossConfig};
use crate::metrics::{compute_metrics, relative_improvement, MetricsReport};
use crate::rng::Rng;
use crate::schedule::{hk_curriculum, uba_lr, ScheduleState};
use crate::selftest::{run_examples, CORPUS_JSON};
use crate::ssm::{normalize_delta, scan, selective_delta, DeltaProjection, SSMParams};
use crate::tensor::Tensor;
use crate::transport::{
    hk_breakdown, sinkhorn, squared_distance_cost, HKConfig, Histogram, TransportMarginals,
};
use crate::wavelet::{decompose, make_gabor_bank};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "otdebias",
    about = "Optimal-transport redshift debiasing toolkit",
    version
)]
struct Cli {
    /// Cap the worker thread pool (results are identical for any value).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Directional Gabor decomposition of an NDT1 image into 8 feature maps.
    Decompose {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        sigma: f64,
        #[arg(long, default_value_t = 4.0)]
        lambda: f64,
        #[arg(long, default_value_t = 9)]
        size: usize,
    },
    /// Selective state-space scan of a TxD sequence.
    Scan {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sinusoidal sky-coordinate encoding.
    Encode {
        #[arg(long)]
        ra: f64,
        #[arg(long)]
        dec: f64,
        #[arg(long, default_value_t = 16)]
        k: usize,
        #[arg(long, default_value_t = 1.0 / 360.0)]
        omega_min: f64,
        #[arg(long, default_value_t = 1.0)]
        omega_max: f64,
        /// Divide coordinates by 360 before encoding.
        #[arg(long)]
        normalize: bool,
    },
    /// Entropic transport plan between the redshift histograms of two catalogs.
    Sinkhorn {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Write the transport plan as NDT1 here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        hk: HkArgs,
    },
    /// Debiased Hellinger-Kantorovich distance between two catalogs.
    Hk {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Transport renormalized square-root densities instead.
        #[arg(long)]
        sqrt_densities: bool,
        #[command(flatten)]
        hk: HkArgs,
    },
    /// Histogram a catalog's redshifts.
    Hist {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        hk: HkArgs,
    },
    /// Evaluation metrics of a prediction catalog.
    Eval {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long, default_value_t = 0.15)]
        outlier_thresh: f64,
        /// Compare the four ablation prediction columns
        /// (pred_mse, pred_color, pred_hk, pred_color_hk).
        #[arg(long)]
        table3: bool,
    },
    /// Unified-objective breakdown for a prediction catalog.
    LossEval {
        #[arg(long)]
        pred: PathBuf,
        /// LossConfig as JSON; defaults used when omitted.
        #[arg(long)]
        cfg: Option<PathBuf>,
        #[arg(long, default_value_t = 12)]
        epoch: usize,
        #[command(flatten)]
        hk: HkArgs,
    },
    /// CSV of (epoch, lr, lambda_hk) over a training run.
    Schedule {
        #[arg(long, default_value_t = 120)]
        epochs: usize,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        #[arg(long, default_value_t = 0.70)]
        phi: f64,
    },
    /// Draw a synthetic selection-biased catalog.
    Simulate {
        /// Selection function, e.g. `logistic:z0=0.8,k=6`, `unit`,
        /// `color:c0=0.5,k=3`, `product:z0=0.8,kz=6,c0=0.5,kc=3`.
        #[arg(long)]
        selection: String,
        #[arg(long, default_value_t = 10000)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        hk: HkArgs,
    },
    /// Gradient-descent recovery of a target histogram from an observed one.
    Recalibrate {
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 600)]
        steps: usize,
        #[arg(long, default_value_t = 0.2)]
        lr: f64,
        #[command(flatten)]
        hk: HkArgs,
    },
    /// Four-mode loss ablation on a simulated catalog.
    Ablate {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long, default_value_t = 0.15)]
        outlier_thresh: f64,
        #[command(flatten)]
        hk: HkArgs,
    },
    /// Render a parametric galaxy image as NDT1.
    GenGalaxy {
        #[arg(long, value_parser = ["spiral", "elliptical", "ring"])]
        kind: String,
        #[arg(long, default_value_t = 2)]
        arms: usize,
        #[arg(long, default_value_t = 0.35)]
        pitch: f64,
        #[arg(long, default_value_t = 1.0)]
        axis_ratio: f64,
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay the executable example corpus.
    Selftest {
        /// Directory of corpus JSON files (embedded corpus when omitted).
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
}

/// Histogram / solver knobs shared by the transport-flavored subcommands.
#[derive(Args, Debug)]
struct HkArgs {
    #[arg(long, default_value_t = 40)]
    bins: usize,
    #[arg(long, default_value_t = 0.0)]
    zmin: f64,
    #[arg(long, default_value_t = 2.0)]
    zmax: f64,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    stop_tol: f64,
    #[arg(long, default_value_t = 50)]
    max_iter: usize,
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
}

impl HkArgs {
    fn config(&self) -> HKConfig {
        HKConfig {
            n_bins: self.bins,
            z_range: (self.zmin, self.zmax),
            eps_entropic: self.eps,
            stop_tol: self.stop_tol,
            max_iter: self.max_iter,
            delta: self.delta,
        }
    }
}

/// Parse and run. All normal output goes to `out`; diagnostics to stderr.
pub fn run_cli<I, S>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            // clap renders its own help/version output on "errors" of kind
            // DisplayHelp/DisplayVersion; those are successes
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    let threads = cli.threads.unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot build thread pool: {e}");
            return 2;
        }
    };
    match pool.install(|| dispatch(cli.command, out)) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Param(_) => 2,
                _ => 1,
            }
        }
    }
}

fn default_seed(explicit: Option<u64>) -> u64 {
    explicit.unwrap_or_else(|| {
        std::env::var("OTDEBIAS_SEED")
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or(42)
    })
}

fn emit_json<T: Serialize>(value: &T, out: &mut dyn Write) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    writeln!(out, "{text}")?;
    Ok(())
}

/// Redshift values for histogramming: the prediction column when fully
/// present, else the true column.
fn catalog_values(path: &Path, prefer_pred: bool) -> Result<Vec<f64>> {
    let report = parse_catalog(path, &CatalogSchema::default(), false)?;
    if report.rows.is_empty() {
        return Err(Error::data(format!("{}: no usable rows", path.display())));
    }
    if prefer_pred && report.rows.iter().all(|r| r.z_pred.is_some()) {
        return Ok(report.rows.iter().map(|r| r.z_pred.unwrap()).collect());
    }
    Ok(report.rows.iter().map(|r| r.z_true).collect())
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Decompose {
            input,
            out: out_path,
            sigma,
            lambda,
            size,
        } => {
            let image = Tensor::load_ndt(&input)?;
            let bank = make_gabor_bank(size, sigma, lambda)?;
            let stack = decompose(&image, &bank)?;
            stack.maps.save_ndt(&out_path)?;
            writeln!(
                out,
                "{{\"maps\":8,\"height\":{},\"width\":{}}}",
                stack.height(),
                stack.width()
            )?;
            Ok(())
        }
        Command::Scan {
            input,
            params,
            out: out_path,
        } => {
            let seq = Tensor::load_ndt(&input)?;
            let file: ScanParamsFile = serde_json::from_reader(std::fs::File::open(&params)?)?;
            let ssm = SSMParams {
                a: file.a,
                b: file.b,
                c: file.c,
                d: file.d,
                taylor_eps: file.taylor_eps,
            };
            if ssm.a.iter().any(|&v| v > 0.0) {
                return Err(Error::data("A must be elementwise <= 0"));
            }
            let dt = match file.delta_constant {
                Some(value) => {
                    let raw = Tensor::new(seq.shape(), value)?;
                    normalize_delta(&raw)?
                }
                None => selective_delta(&seq, &DeltaProjection::seeded(ssm.dim(), file.delta_seed))?,
            };
            let result = scan(&seq, &ssm, &dt)?;
            result.outputs.save_ndt(&out_path)?;
            writeln!(
                out,
                "{{\"steps\":{},\"dim\":{}}}",
                result.outputs.shape()[0],
                result.outputs.shape()[1]
            )?;
            Ok(())
        }
        Command::Encode {
            ra,
            dec,
            k,
            omega_min,
            omega_max,
            normalize,
        } => {
            let period = if normalize { Some(360.0) } else { None };
            let ra_enc = encode_coord(ra, k, omega_min, omega_max, period)?;
            let dec_enc = encode_coord(dec, k, omega_min, omega_max, period)?;
            #[derive(Serialize)]
            struct EncodeOut<'a> {
                ra: &'a [f64],
                dec: &'a [f64],
            }
            emit_json(
                &EncodeOut {
                    ra: ra_enc.data(),
                    dec: dec_enc.data(),
                },
                out,
            )
        }
        Command::Sinkhorn {
            a,
            b,
            out: out_path,
            hk,
        } => {
            let cfg = hk.config();
            let hist_a = Histogram::from_values(&catalog_values(&a, false)?, &cfg)?;
            let hist_b = Histogram::from_values(&catalog_values(&b, false)?, &cfg)?;
            let centers = hist_a.centers();
            let cost = squared_distance_cost(&centers, &centers);
            let plan = sinkhorn(
                &hist_a,
                &hist_b,
                &cost,
                cfg.eps_entropic,
                cfg.stop_tol,
                cfg.max_iter,
            )?;
            if let Some(path) = out_path {
                plan.plan.save_ndt(&path)?;
            }
            #[derive(Serialize)]
            struct SinkhornOut {
                transport_cost: f64,
                dual_value: f64,
                iterations: usize,
                marginal_err: f64,
            }
            emit_json(
                &SinkhornOut {
                    transport_cost: plan.transport_cost,
                    dual_value: plan.dual_value,
                    iterations: plan.iterations_used,
                    marginal_err: plan.marginal_err,
                },
                out,
            )
        }
        Command::Hk {
            pred,
            target,
            sqrt_densities,
            hk,
        } => {
            let cfg = hk.config();
            let hist_pred = Histogram::from_values(&catalog_values(&pred, true)?, &cfg)?;
            let hist_target = Histogram::from_values(&catalog_values(&target, false)?, &cfg)?;
            let marginals = if sqrt_densities {
                TransportMarginals::SqrtDensities
            } else {
                TransportMarginals::Densities
            };
            let breakdown = hk_breakdown(&hist_pred, &hist_target, &cfg, marginals)?;
            emit_json(&breakdown, out)
        }
        Command::Hist { input, hk } => {
            let cfg = hk.config();
            let hist = Histogram::from_values(&catalog_values(&input, false)?, &cfg)?;
            #[derive(Serialize)]
            struct HistOut<'a> {
                edges: &'a [f64],
                mass: &'a [f64],
                clamped: usize,
            }
            emit_json(
                &HistOut {
                    edges: hist.edges(),
                    mass: hist.mass(),
                    clamped: hist.clamped(),
                },
                out,
            )
        }
        Command::Eval {
            catalog,
            outlier_thresh,
            table3,
        } => {
            if table3 {
                return eval_table3(&catalog, outlier_thresh, out);
            }
            let report = parse_catalog(&catalog, &CatalogSchema::default(), false)?;
            let metrics = compute_metrics(&report.rows, outlier_thresh)?;
            emit_json(&metrics, out)
        }
        Command::LossEval {
            pred,
            cfg,
            epoch,
            hk,
        } => loss_eval(&pred, cfg.as_deref(), epoch, &hk.config(), out),
        Command::Schedule {
            epochs,
            warmup,
            phi,
        } => {
            let state = ScheduleState {
                total_epochs: epochs,
                warmup_epochs: warmup,
                phi,
                ..ScheduleState::default()
            };
            let loss_cfg = LossConfig::default();
            writeln!(out, "epoch,lr,lambda_hk")?;
            for t in 0..=epochs {
                let lr = uba_lr(&state.at(t))?;
                let lam = hk_curriculum(
                    t,
                    loss_cfg.hk_start_epoch,
                    loss_cfg.hk_ramp_epochs,
                    loss_cfg.lambda_hk,
                    loss_cfg.hk_curriculum,
                );
                writeln!(out, "{t},{lr},{lam}")?;
            }
            Ok(())
        }
        Command::Simulate {
            selection,
            n,
            seed,
            out: out_path,
            hk,
        } => {
            let cfg = hk.config();
            let selection = SelectionFn::parse(&selection)?;
            let truth = TrueDistribution::default_scenario();
            let seed = default_seed(seed);
            let catalog = sample_catalog(&truth, &selection, n, seed, &cfg)?;
            save_catalog(&catalog.rows, &out_path)?;
            let meta = SimulationMeta {
                truth,
                selection,
                seed,
                n,
            };
            let meta_path = meta_path_for(&out_path);
            serde_json::to_writer_pretty(std::fs::File::create(&meta_path)?, &meta)?;
            #[derive(Serialize)]
            struct SimOut {
                rows: usize,
                acceptance_rate: f64,
                ks_observed_vs_true: f64,
                meta: String,
            }
            emit_json(
                &SimOut {
                    rows: catalog.rows.len(),
                    acceptance_rate: catalog.acceptance_rate,
                    ks_observed_vs_true: ks_statistic(&catalog.observed_dist, &catalog.true_dist)?,
                    meta: meta_path.display().to_string(),
                },
                out,
            )
        }
        Command::Recalibrate {
            obs,
            target,
            steps,
            lr,
            hk,
        } => {
            let cfg = hk.config();
            let hist_obs = Histogram::from_values(&catalog_values(&obs, false)?, &cfg)?;
            let hist_target = Histogram::from_values(&catalog_values(&target, false)?, &cfg)?;
            let before = crate::transport::hk_distance_sq(&hist_obs, &hist_target, &cfg)?;
            let result = hk_recalibrate(&hist_obs, &hist_target, &cfg, steps, lr)?;
            let after =
                crate::transport::hk_distance_sq(&result.recovered, &hist_target, &cfg)?;
            #[derive(Serialize)]
            struct RecalOut<'a> {
                converged: bool,
                steps: usize,
                hk2_before: f64,
                hk2_after: f64,
                final_loss: f64,
                recovered_mass: &'a [f64],
            }
            emit_json(
                &RecalOut {
                    converged: result.converged,
                    steps: result.loss_trace.len(),
                    hk2_before: before,
                    hk2_after: after,
                    final_loss: *result.loss_trace.last().unwrap_or(&f64::NAN),
                    recovered_mass: result.recovered.mass(),
                },
                out,
            )
        }
        Command::Ablate {
            catalog,
            outlier_thresh,
            hk,
        } => ablate(&catalog, outlier_thresh, &hk.config(), out),
        Command::GenGalaxy {
            kind,
            arms,
            pitch,
            axis_ratio,
            noise_sigma,
            resolution,
            seed,
            out: out_path,
        } => {
            let kind = match kind.as_str() {
                "spiral" => GalaxyKind::Spiral,
                "elliptical" => GalaxyKind::Elliptical,
                _ => GalaxyKind::Ring,
            };
            let spec = SyntheticGalaxySpec {
                kind,
                arms,
                pitch,
                axis_ratio,
                noise_sigma,
                resolution,
            };
            let image = gen_galaxy(&spec, &Rng::new(default_seed(seed)))?;
            image.save_ndt(&out_path)?;
            writeln!(out, "{{\"resolution\":{resolution}}}")?;
            Ok(())
        }
        Command::Selftest { corpus } => {
            let report = match corpus {
                Some(dir) => run_examples(&crate::selftest::load_corpus_dir(&dir)?)?,
                None => run_examples(&crate::selftest::load_corpus_json(CORPUS_JSON)?)?,
            };
            report.write_text(out)?;
            if report.all_passed() {
                Ok(())
            } else {
                Err(Error::data(format!(
                    "{} of {} corpus cases failed",
                    report.failed_count(),
                    report.total()
                )))
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
pub struct SimulationMeta {
    pub truth: TrueDistribution,
    pub selection: SelectionFn,
    pub seed: u64,
    pub n: usize,
}

pub fn meta_path_for(catalog_path: &Path) -> PathBuf {
    let mut os = catalog_path.as_os_str().to_owned();
    os.push(".meta.json");
    PathBuf::from(os)
}

#[derive(Serialize, Deserialize, Default)]
#[serde(default)]
struct LossEvalConfigFile {
    #[serde(flatten)]
    loss: LossConfig,
    /// Fixed parts not derivable from a catalog.
    l_cls: f64,
    kl: f64,
    c_raw: f64,
}

fn loss_eval(
    pred: &Path,
    cfg_path: Option<&Path>,
    epoch: usize,
    hk_cfg: &HKConfig,
    out: &mut dyn Write,
) -> Result<()> {
    let file_cfg: LossEvalConfigFile = match cfg_path {
        Some(path) => serde_json::from_reader(std::fs::File::open(path)?)?,
        None => LossEvalConfigFile::default(),
    };
    let report = parse_catalog(pred, &CatalogSchema::default(), false)?;
    if report.rows.is_empty() {
        return Err(Error::data("no usable rows"));
    }
    let mut z_true = Vec::new();
    let mut z_pred = Vec::new();
    let mut weights = Vec::new();
    let bands = &file_cfg.loss.color_bands;
    for row in &report.rows {
        let pred = row
            .z_pred
            .ok_or_else(|| Error::Data(format!("row {} has no z_pred", row.id)))?;
        z_true.push(row.z_true);
        z_pred.push(pred);
        weights.push(match row.g_r {
            Some(c) => color_weight(c, bands)?,
            None => 1.0,
        });
    }
    let (l_red, _) = redshift_loss(&z_pred, &z_true, &weights)?;
    let l_red = l_red / z_pred.len() as f64;
    let target = Histogram::from_values(&z_true, hk_cfg)?;
    let hk = crate::transport::hk_loss(&z_pred, &target, hk_cfg, hk_cfg.bin_width())?;
    let lsi = crate::losses::lsi_term(file_cfg.kl, file_cfg.c_raw)?;
    let lambda_hk = hk_curriculum(
        epoch,
        file_cfg.loss.hk_start_epoch,
        file_cfg.loss.hk_ramp_epochs,
        file_cfg.loss.lambda_hk,
        file_cfg.loss.hk_curriculum,
    );
    let parts = crate::losses::LossParts {
        l_cls: file_cfg.l_cls,
        l_red,
        kl: file_cfg.kl,
        lsi: lsi.value,
        l_hk: hk.loss,
    };
    let total = crate::losses::total_loss(&parts, &file_cfg.loss, epoch)?;
    #[derive(Serialize)]
    struct Term {
        raw: f64,
        weight: f64,
        contribution: f64,
    }
    #[derive(Serialize)]
    struct LossOut {
        classification: Term,
        redshift: Term,
        vib_kl: Term,
        lsi: Term,
        hk: Term,
        epoch: usize,
        total: f64,
    }
    emit_json(
        &LossOut {
            classification: Term {
                raw: parts.l_cls,
                weight: 1.0,
                contribution: parts.l_cls,
            },
            redshift: Term {
                raw: l_red,
                weight: file_cfg.loss.lambda_red,
                contribution: file_cfg.loss.lambda_red * l_red,
            },
            vib_kl: Term {
                raw: parts.kl,
                weight: file_cfg.loss.lambda_vib,
                contribution: file_cfg.loss.lambda_vib * parts.kl,
            },
            lsi: Term {
                raw: lsi.value,
                weight: file_cfg.loss.lsi_weight,
                contribution: file_cfg.loss.lsi_weight * lsi.value,
            },
            hk: Term {
                raw: hk.loss,
                weight: lambda_hk,
                contribution: lambda_hk * hk.loss,
            },
            epoch,
            total,
        },
        out,
    )
}

fn eval_table3(catalog: &Path, outlier_thresh: f64, out: &mut dyn Write) -> Result<()> {
    // four prediction columns, one per ablation configuration
    let configs = [
        ("baseline_mse", "pred_mse"),
        ("color_aware", "pred_color"),
        ("hk_distance", "pred_hk"),
        ("color_aware_hk", "pred_color_hk"),
    ];
    let mut reports: Vec<(String, MetricsReport)> = Vec::new();
    for (label, column) in configs {
        let schema = CatalogSchema {
            z_pred: column.to_string(),
            ..CatalogSchema::default()
        };
        let parsed = parse_catalog(catalog, &schema, false)?;
        if parsed.rows.iter().any(|r| r.z_pred.is_none()) {
            return Err(Error::Schema(format!("missing prediction column `{column}`")));
        }
        reports.push((
            label.to_string(),
            compute_metrics(&parsed.rows, outlier_thresh)?,
        ));
    }
    let baseline_logmse = reports[0].1.overall.log_mse;
    let baseline_outlier = reports[0].1.overall.outlier_rate;
    #[derive(Serialize)]
    struct Table3Row {
        configuration: String,
        log_mse: f64,
        bias: f64,
        outlier_rate: f64,
        log_mse_improvement_pct: f64,
        outlier_improvement_pct: f64,
    }
    let rows: Vec<Table3Row> = reports
        .into_iter()
        .map(|(label, r)| {
            let log_mse_improvement_pct =
                relative_improvement(baseline_logmse, r.overall.log_mse).unwrap_or(0.0);
            let outlier_improvement_pct = if baseline_outlier != 0.0 {
                relative_improvement(baseline_outlier, r.overall.outlier_rate).unwrap_or(0.0)
            } else {
                0.0
            };
            Table3Row {
                configuration: label,
                log_mse: r.overall.log_mse,
                bias: r.overall.bias,
                outlier_rate: r.overall.outlier_rate,
                log_mse_improvement_pct,
                outlier_improvement_pct,
            }
        })
        .collect();
    emit_json(&rows, out)
}

fn ablate(
    catalog_path: &Path,
    outlier_thresh: f64,
    hk_cfg: &HKConfig,
    out: &mut dyn Write,
) -> Result<()> {
    let parsed = parse_catalog(catalog_path, &CatalogSchema::default(), false)?;
    if parsed.rows.is_empty() {
        return Err(Error::data("no usable rows"));
    }
    // the generating recipe travels in a sidecar written by `simulate`
    let meta_path = meta_path_for(catalog_path);
    let meta: SimulationMeta = if meta_path.exists() {
        serde_json::from_reader(std::fs::File::open(&meta_path)?)?
    } else {
        SimulationMeta {
            truth: TrueDistribution::default_scenario(),
            selection: SelectionFn::Unit,
            seed: default_seed(None),
            n: parsed.rows.len(),
        }
    };
    let all_z: Vec<f64> = parsed.rows.iter().map(|r| r.z_true).collect();
    let catalog = crate::biaslab::SyntheticCatalog {
        true_dist: Histogram::from_values(&all_z, hk_cfg)?,
        observed_dist: Histogram::from_values(&all_z, hk_cfg)?,
        rows: parsed.rows,
        seed: meta.seed,
        truth: meta.truth,
        selection: meta.selection,
        acceptance_rate: 1.0,
    };
    // when the sidecar is present, rebuild the recorded true distribution by
    // replaying the draw
    let catalog = if meta_path.exists() {
        sample_catalog(&catalog.truth, &catalog.selection, meta.n, meta.seed, hk_cfg)?
    } else {
        catalog
    };
    let cfg = AblationConfig {
        outlier_thresh,
        ..AblationConfig::default()
    };
    let outcome = ablation_run(&catalog, &cfg, hk_cfg)?;
    #[derive(Serialize)]
    struct ArmOut {
        mode: String,
        report: MetricsReport,
        log_mse_improvement_pct: f64,
    }
    let baseline = outcome.arms[0].report.overall.log_mse;
    let rows: Vec<ArmOut> = outcome
        .arms
        .iter()
        .map(|arm| ArmOut {
            mode: arm.mode.label().to_string(),
            report: arm.report.clone(),
            log_mse_improvement_pct: relative_improvement(baseline, arm.report.overall.log_mse)
                .unwrap_or(0.0),
        })
        .collect();
    emit_json(&rows, out)
}

#[derive(Serialize, Deserialize)]
struct ScanParamsFile {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    #[serde(default = "default_taylor_eps")]
    taylor_eps: f64,
    /// Use a constant step size instead of the selective projection.
    #[serde(default)]
    delta_constant: Option<f64>,
    #[serde(default)]
    delta_seed: u64,
}

fn default_taylor_eps() -> f64 {
    1e-6
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String) {
        let mut buf = Vec::new();
        let code = run_cli(
            std::iter::once("otdebias").chain(args.iter().copied()),
            &mut buf,
        );
        (code, String::from_utf8(buf).unwrap())
    }

    #[test]
    fn unknown_subcommand_is_usage_error() {
        let (code, _) = run(&["frobnicate"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn schedule_row_count() {
        let (code, text) = run(&["schedule", "--epochs", "120"]);
        assert_eq!(code, 0);
        let data_rows = text.lines().count() - 1; // header
        assert_eq!(data_rows, 121);
        assert!(text.starts_with("epoch,lr,lambda_hk\n"));
        assert!(text.contains("\n10,0.001,"));
    }

    #[test]
    fn hk_on_identical_catalogs_is_near_zero() {
        let dir = tempdir();
        let path = dir.join("same.csv");
        let rows: Vec<CatalogRow> = (0..200)
            .map(|i| CatalogRow {
                id: format!("g{i}"),
                z_true: 0.1 + (i as f64) * 0.008,
                z_pred: None,
                g_r: None,
                class_true: None,
                class_pred: None,
            })
            .collect();
        save_catalog(&rows, &path).unwrap();
        let (code, text) = run(&[
            "hk",
            "--pred",
            path.to_str().unwrap(),
            "--target",
            path.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "{text}");
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(value["hk2"].as_f64().unwrap().abs() < 1e-6);
    }

    #[test]
    fn eval_perfect_predictor_zeroes() {
        let dir = tempdir();
        let path = dir.join("perfect.csv");
        let rows: Vec<CatalogRow> = (0..50)
            .map(|i| CatalogRow {
                id: format!("g{i}"),
                z_true: i as f64 * 0.04,
                z_pred: Some(i as f64 * 0.04),
                g_r: None,
                class_true: None,
                class_pred: None,
            })
            .collect();
        save_catalog(&rows, &path).unwrap();
        let (code, text) = run(&["eval", "--catalog", path.to_str().unwrap()]);
        assert_eq!(code, 0);
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["overall"]["log_mse"].as_f64().unwrap(), 0.0);
        assert_eq!(value["overall"]["outlier_rate"].as_f64().unwrap(), 0.0);
    }

    #[test]
    fn missing_file_is_data_error() {
        let (code, _) = run(&["hist", "--in", "/nonexistent/nope.csv"]);
        assert_eq!(code, 1);
    }

    fn tempdir() -> PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "otdebias-cli-test-{}-{}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }
}
