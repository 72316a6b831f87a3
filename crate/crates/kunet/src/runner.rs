//! Command implementations behind the CLI: train, eval, gradcheck, report,
//! bench. Each is an ordinary function so tests can drive them directly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use kunet_core::kernels::KernelKind;
use kunet_core::partition::PartitionPlan;
use kunet_core::unet::{self, KernelOverrides, OutputSchedule, Variant};

use crate::checkpoint;
use crate::config::{DataSource, RunConfig};
use crate::data::{self, SeriesTable};
use crate::error::{io_err, Error, Result};
use crate::train;

/// Resolve a CSV path, trying `KUNET_DATA_DIR` for relative paths that do
/// not exist as given.
fn resolve_data_path(path: &Path) -> PathBuf {
    if path.exists() || path.is_absolute() {
        return path.to_path_buf();
    }
    if let Ok(dir) = std::env::var("KUNET_DATA_DIR") {
        let candidate = Path::new(&dir).join(path);
        if candidate.exists() {
            return candidate;
        }
    }
    path.to_path_buf()
}

fn load_table(cfg: &RunConfig) -> Result<(SeriesTable, String)> {
    let (mut table, report) = match &cfg.data {
        DataSource::Synthetic => {
            let table = data::synthetic_series(cfg.synthetic_rows, cfg.synthetic_channels, cfg.seed);
            let report = data::IngestReport {
                rows: table.rows(),
                channels: table.channel_count(),
                rejected_rows: 0,
                forward_filled: 0,
            };
            (table, report)
        }
        DataSource::Csv(path) => {
            let path = resolve_data_path(path);
            data::load_csv(&path, cfg.gap_policy)?
        }
    };
    if cfg.max_rows > 0 && table.rows() > cfg.max_rows {
        let m = table.channel_count();
        table.timestamps.truncate(cfg.max_rows);
        table.values.truncate(cfg.max_rows * m);
    }
    let mut report_text = report.render();
    if cfg.max_rows > 0 {
        let _ = write!(report_text, " truncated_to={}", table.rows());
    }
    if cfg.univariate && table.channel_count() > 1 {
        table = table.select_channel(&cfg.target)?;
        let _ = write!(report_text, " selected_channel={}", cfg.target);
    }
    Ok((table, report_text))
}

pub struct TrainArtifacts {
    pub out_dir: PathBuf,
    pub summary_text: String,
    pub metrics_text: String,
    pub checkpoint_path: PathBuf,
    pub test_mse: f64,
    pub test_mae: f64,
    pub baseline_mse: f64,
}

/// Train, evaluate on the test split, and write all run artifacts.
///
/// `metrics.txt` carries the epoch curve and a final summary including
/// wall-clock time; `summary.txt` holds only the deterministic figures so
/// identical (config, seed) runs produce byte-identical files.
pub fn run_train(cfg: &RunConfig) -> Result<TrainArtifacts> {
    let (table, ingest_text) = load_table(cfg)?;
    let features = table.channel_count();
    let eff_features = if cfg.channel_independent && features > 1 { 1 } else { features };

    let plan = cfg.plan(eff_features);
    let out = cfg.output_schedule();
    let (mut model, mut store) = unet::build(&plan, &out, cfg.variant, &cfg.overrides(), cfg.seed)?;

    let splits = data::split(&table, &cfg.split, cfg.lookback)?;
    let mk = |segment, stride| {
        data::build_window_set(
            &table,
            segment,
            cfg.lookback,
            cfg.horizon,
            stride,
            cfg.normalization,
            cfg.channel_independent,
        )
    };
    let train_set = mk(splits.train_segment(), cfg.stride)?;
    let val_set = mk(splits.val_segment(), 1)?;
    let test_set = mk(splits.test_segment(), 1)?;

    let tcfg = cfg.train_config();
    let summary = train::train(&mut model, &mut store, &tcfg, &train_set, &val_set)?;
    let eval = train::evaluate(&mut model, &store, &test_set, cfg.batch_size)?;
    let baseline = train::baseline_report(&test_set)?;

    let params = model.count_parameters().total;
    let attn = model.attention_cost(cfg.batch_size);

    let mut metrics = String::new();
    for r in &summary.epochs {
        let _ = writeln!(metrics, "epoch={} train_mse={} val_mse={}", r.epoch, r.train_loss, r.val_loss);
    }
    let _ = writeln!(
        metrics,
        "summary mse={} mae={} baseline_mse={} params={params} attention_cost={attn} \
         best_epoch={} epochs_run={} wall_clock_s={:.3}",
        eval.mse,
        eval.mae,
        baseline.mse,
        summary.best_epoch,
        summary.epochs.len(),
        summary.wall_clock_s
    );

    let mut summary_text = String::new();
    let _ = writeln!(summary_text, "mse={}", eval.mse);
    let _ = writeln!(summary_text, "mae={}", eval.mae);
    let _ = writeln!(summary_text, "baseline_mse={}", baseline.mse);
    let _ = writeln!(summary_text, "baseline_mae={}", baseline.mae);
    let _ = writeln!(summary_text, "params={params}");
    let _ = writeln!(summary_text, "attention_cost={attn}");
    let _ = writeln!(summary_text, "best_epoch={}", summary.best_epoch);
    let _ = writeln!(summary_text, "epochs_run={}", summary.epochs.len());
    let _ = writeln!(summary_text, "best_val_mse={}", summary.best_val_loss);
    let _ = writeln!(summary_text, "test_windows={}", eval.windows);
    let _ = writeln!(summary_text, "seed={}", cfg.seed);

    std::fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    let write = |name: &str, content: &str| -> Result<PathBuf> {
        let path = cfg.out_dir.join(name);
        std::fs::write(&path, content).map_err(io_err(&path))?;
        Ok(path)
    };
    write("effective_config.txt", &cfg.render())?;
    write("ingest_report.txt", &format!("{ingest_text}\n"))?;
    write("metrics.txt", &metrics)?;
    write("summary.txt", &summary_text)?;
    let checkpoint_path = cfg.out_dir.join("checkpoint.txt");
    checkpoint::save(&checkpoint_path, &model, &store)?;

    Ok(TrainArtifacts {
        out_dir: cfg.out_dir.clone(),
        summary_text,
        metrics_text: metrics,
        checkpoint_path,
        test_mse: eval.mse,
        test_mae: eval.mae,
        baseline_mse: baseline.mse,
    })
}

/// Evaluate a checkpoint on the test split of the configured dataset.
pub fn run_eval(checkpoint_path: &Path, cfg: &RunConfig) -> Result<String> {
    let (mut model, store) = checkpoint::load(checkpoint_path)?;
    if model.plan.lookback != cfg.lookback || model.horizon() != cfg.horizon {
        return Err(Error::Config(format!(
            "checkpoint was built for lookback {} / horizon {}, config says {} / {}",
            model.plan.lookback,
            model.horizon(),
            cfg.lookback,
            cfg.horizon
        )));
    }
    let (table, _) = load_table(cfg)?;
    let splits = data::split(&table, &cfg.split, cfg.lookback)?;
    let test_set = data::build_window_set(
        &table,
        splits.test_segment(),
        cfg.lookback,
        cfg.horizon,
        1,
        cfg.normalization,
        cfg.channel_independent,
    )?;
    let eval = train::evaluate(&mut model, &store, &test_set, cfg.batch_size)?;
    let baseline = train::baseline_report(&test_set)?;
    let mut s = String::new();
    let _ = writeln!(s, "mse={}", eval.mse);
    let _ = writeln!(s, "mae={}", eval.mae);
    let _ = writeln!(s, "baseline_mse={}", baseline.mse);
    let _ = writeln!(s, "test_windows={}", eval.windows);
    Ok(s)
}

pub struct GradCheckOutcome {
    pub text: String,
    pub worst: f64,
    pub passed: bool,
}

/// Whole-model finite-difference check on a tiny plan, over several seeds.
pub fn run_gradcheck(
    variant: Variant,
    lookback: usize,
    l_unit: usize,
    l_multiples: &[usize],
    hidden: usize,
    seeds: u64,
    tol: f64,
) -> Result<GradCheckOutcome> {
    let plan = PartitionPlan::channel_independent(lookback, l_unit, l_multiples.to_vec(), hidden);
    let out = OutputSchedule::mirror(&plan);
    let mut text = String::new();
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let (mut model, store) = unet::build(&plan, &out, variant, &KernelOverrides::default(), seed)?;
        let report = unet::grad_check_model(&mut model, &store, 1, seed, tol)?;
        let _ = writeln!(
            text,
            "seed={seed} max_rel_err={} coords={} status={}",
            report.max_rel_err,
            report.coords_checked,
            if report.passed() { "pass" } else { "FAIL" }
        );
        worst = worst.max(report.max_rel_err);
    }
    let passed = worst <= tol;
    let _ = writeln!(
        text,
        "worst_rel_err={worst} tol={tol} overall={}",
        if passed { "pass" } else { "FAIL" }
    );
    Ok(GradCheckOutcome { text, worst, passed })
}

/// Parameter count, per-layer breakdown, and attention cost of a
/// checkpointed model.
pub fn run_report(checkpoint_path: &Path) -> Result<String> {
    let (model, store) = checkpoint::load(checkpoint_path)?;
    let report = model.count_parameters();
    let mut s = String::new();
    let _ = writeln!(s, "variant={}", model.variant.as_str());
    let _ = writeln!(s, "lookback={} horizon={}", model.plan.lookback, model.horizon());
    for layer in &report.layers {
        let _ = writeln!(s, "layer name={} kernel=\"{}\" params={}", layer.name, layer.label, layer.count);
    }
    let _ = writeln!(s, "total_params={}", report.total);
    let _ = writeln!(s, "registry_params={}", store.scalar_count());
    let _ = writeln!(s, "attention_cost_b1={}", model.attention_cost(1));
    Ok(s)
}

#[derive(Debug, Clone, Copy)]
pub struct BenchRow {
    pub lookback: usize,
    pub depth: usize,
    pub params_inner: usize,
    pub attn_inner: u64,
    pub params_outer: usize,
    pub attn_outer: u64,
}

/// Binary-multiples plan family (L = 2^exp) comparing transformer kernels
/// at the two levels closest to the latent against the two outermost.
pub fn bench_rows(hidden: usize, min_exp: u32, max_exp: u32, batch: usize) -> Result<Vec<BenchRow>> {
    if min_exp < 3 {
        return Err(Error::Config("bench needs depth >= 3 (min_exp >= 3)".into()));
    }
    let mut rows = Vec::new();
    for exp in min_exp..=max_exp {
        let lookback = 1usize << exp;
        let depth = exp as usize;
        let plan = PartitionPlan::channel_independent(lookback, 2, vec![2; depth - 1], hidden);
        let out = OutputSchedule::mirror(&plan);

        let placement = |enc_positions: [usize; 2], dec_positions: [usize; 2]| {
            let mut enc = vec![KernelKind::Linear; depth];
            let mut dec = vec![KernelKind::Linear; depth];
            for p in enc_positions {
                enc[p] = KernelKind::Transformer;
            }
            for p in dec_positions {
                dec[p] = KernelKind::Transformer;
            }
            KernelOverrides {
                encoder_kinds: Some(enc),
                decoder_kinds: Some(dec),
                ..KernelOverrides::default()
            }
        };
        let inner = placement([depth - 1, depth - 2], [0, 1]);
        let outer = placement([0, 1], [depth - 1, depth - 2]);
        let (m_inner, _) = unet::build(&plan, &out, Variant::Linear, &inner, 0)?;
        let (m_outer, _) = unet::build(&plan, &out, Variant::Linear, &outer, 0)?;
        rows.push(BenchRow {
            lookback,
            depth,
            params_inner: m_inner.count_parameters().total,
            attn_inner: m_inner.attention_cost(batch),
            params_outer: m_outer.count_parameters().total,
            attn_outer: m_outer.attention_cost(batch),
        });
    }
    Ok(rows)
}

pub fn render_bench(rows: &[BenchRow]) -> String {
    let mut s = String::from("lookback depth params_inner attn_inner params_outer attn_outer\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {}",
            r.lookback, r.depth, r.params_inner, r.attn_inner, r.params_outer, r.attn_outer
        );
    }
    s
}
