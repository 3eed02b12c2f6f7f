use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use chrono::Duration as Days;
use epf_core::backtest::{run_backtest_with, write_model_dump, BacktestConfig, DayReport, ExogParams, RunOptions};
use epf_core::dataio::{
    load_dataset_with, read_hourly_csv, DataError, LoadOptions, LoadReport, MarketDataset, MarketId, TestPeriod,
    MIN_HISTORY_DAYS,
};
use epf_core::evaluate::{
    compute_metrics, compute_metrics_monthly, dm_test_multivariate, ensemble_mean, ensemble_mean_labeled,
    performance_ratio, render_dm, render_metrics_table, render_monthly_table, MetricsReport, RatioTable,
};
use epf_core::forecast::ForecastTable;
use epf_core::presets::{market_windows, BacktestPreset, EnsemblePreset};
use epf_core::synthetic::{generate, SpikeSpec, SyntheticConfig};
use epf_core::transform::Scheme;
use serde_json::json;

use crate::error::CliError;
use crate::output::{write_atomic, write_text, RunManifest};
use crate::{
    BacktestArgs, DataArgs, DmArgs, DmFormat, EnsembleArgs, ExogArg, Format, MetricsArgs, PeriodArgs, SchemeArg,
    SynthArgs, ValidateArgs, DATA_DIR_ENV,
};

type Result<T> = std::result::Result<T, CliError>;

/// `--data`, else `$EPF_DATA_DIR/<MARKET>.csv`. Relative paths that do not
/// exist are also looked up in the data directory.
fn resolve_data_path(args: &DataArgs) -> Result<PathBuf> {
    let dir = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from);
    match (&args.data, dir) {
        (Some(p), Some(dir)) if p.is_relative() && !p.exists() && dir.join(p).exists() => Ok(dir.join(p)),
        (Some(p), _) => Ok(p.clone()),
        (None, Some(dir)) => match args.market {
            Some(m) => Ok(dir.join(format!("{m}.csv"))),
            None => Err(CliError::invalid("--market is required to find a file in $EPF_DATA_DIR")),
        },
        (None, None) => Err(CliError::invalid(format!("pass --data or set {DATA_DIR_ENV}"))),
    }
}

fn explicit_period(p: &PeriodArgs) -> Result<Option<TestPeriod>> {
    match (p.test_start, p.test_end, p.test_days) {
        (Some(s), Some(e), _) => Ok(Some(TestPeriod::new(s, e)?)),
        (Some(s), None, Some(n)) => Ok(Some(days_from(s, n)?)),
        _ => Ok(None),
    }
}

fn days_from(start: chrono::NaiveDate, n: usize) -> Result<TestPeriod> {
    if n == 0 {
        return Err(CliError::invalid("--test-days must be at least 1"));
    }
    Ok(TestPeriod::new(start, start + Days::days(n as i64 - 1))?)
}

/// Loads the dataset and applies partial test-period flags on top of the
/// manifest or registry period.
fn load(data: &DataArgs, period: &PeriodArgs) -> Result<(PathBuf, MarketDataset, LoadReport)> {
    let path = resolve_data_path(data)?;
    let explicit = explicit_period(period)?;
    let opts = LoadOptions {
        market: data.market,
        test_period: explicit,
        manifest: None,
    };
    let (ds, report) = load_dataset_with(&path, &opts)?;
    if explicit.is_some() {
        return Ok((path, ds, report));
    }
    let base = ds.test_period();
    let start = period.test_start.unwrap_or(base.start);
    let tp = match (period.test_end, period.test_days) {
        (Some(e), _) => TestPeriod::new(start, e)?,
        (None, Some(n)) => days_from(start, n)?,
        (None, None) => TestPeriod::new(start, base.end)?,
    };
    let ds = if tp == base { ds } else { ds.with_test_period(tp)? };
    Ok((path, ds, report))
}

/// Loads prices for scoring `table`; the test period is the table's span.
fn load_for_scoring(data: &DataArgs, table: &ForecastTable) -> Result<(PathBuf, MarketDataset)> {
    let (first, last) = match (table.dates().first(), table.dates().last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(CliError::invalid(format!("forecast table `{}` is empty", table.label()))),
    };
    let path = resolve_data_path(data)?;
    let opts = LoadOptions {
        market: data.market,
        test_period: Some(TestPeriod::new(first, last)?),
        manifest: None,
    };
    let (ds, _) = load_dataset_with(&path, &opts)?;
    Ok((path, ds))
}

fn load_table(path: &Path) -> Result<ForecastTable> {
    Ok(ForecastTable::load(path)?)
}

pub fn validate(args: &ValidateArgs) -> Result<()> {
    let path = resolve_data_path(&args.data)?;
    let loaded = load(&args.data, &args.period);
    let (ds, report, declared) = match loaded {
        Ok((_, ds, report)) => (ds, report, true),
        Err(_) if matches!(
            load_dataset_with(&path, &LoadOptions { market: args.data.market, ..Default::default() }),
            Err(DataError::MissingTestPeriod(_))
        ) =>
        {
            // no test period anywhere: check the data over its whole span
            let file = fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
            let frame = read_hourly_csv(std::io::BufReader::new(file))?;
            let first = frame.first_day() + Days::days(MIN_HISTORY_DAYS as i64);
            let last = frame.first_day() + Days::days(frame.n_days() as i64 - 1);
            let market = args.data.market.unwrap_or(MarketId::Custom);
            let (ds, report) = frame.into_dataset(market, TestPeriod::new(first, last)?)?;
            (ds, report, false)
        }
        Err(e) => return Err(e),
    };

    let mut out = String::new();
    let _ = writeln!(out, "file            {}", path.display());
    let _ = writeln!(out, "market          {}", ds.market_id());
    let _ = writeln!(out, "rows read       {}", report.rows_read);
    let _ = writeln!(out, "days            {} ({} .. {})", ds.n_days(), ds.first_day(), ds.last_day());
    if declared {
        let tp = ds.test_period();
        let _ = writeln!(out, "test period     {} .. {} ({} days)", tp.start, tp.end, tp.n_days());
    } else {
        let _ = writeln!(out, "test period     not declared (add a manifest or pass --test-start/--test-end)");
    }
    let _ = writeln!(out, "interpolated    {} cells", report.interpolated_cells);
    let _ = writeln!(out, "averaged        {} cells (duplicated hours)", report.averaged_cells);
    let list = |d: &[chrono::NaiveDate]| d.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
    let _ = writeln!(out, "23-hour days    {} {}", report.short_days.len(), list(&report.short_days));
    let _ = writeln!(out, "25-hour days    {} {}", report.long_days.len(), list(&report.long_days));
    print!("{out}");
    Ok(())
}

fn base_config(args: &BacktestArgs, market: MarketId) -> BacktestConfig {
    let scheme = match args.scheme {
        SchemeArg::Adaptive => Scheme::Adaptive,
        SchemeArg::Arcsinh => Scheme::MedianArcsinh,
    };
    let filter = args.filter_outliers.unwrap_or(scheme == Scheme::Adaptive);
    let mut cfg = BacktestConfig::new(market, scheme, args.window, filter);
    apply_tuning(&mut cfg, args);
    if let Some(l) = &args.label {
        cfg = cfg.with_label(l.clone());
    }
    cfg
}

fn apply_tuning(cfg: &mut BacktestConfig, args: &BacktestArgs) {
    cfg.v = args.v;
    cfg.kappa = args.kappa;
    cfg.cv_folds = args.cv_folds;
    cfg.lambda_grid = args.lambda_grid;
    cfg.exog_params = match args.exog_params {
        ExogArg::Own => ExogParams::Own,
        ExogArg::Price => ExogParams::Price,
    };
}

/// Runs one configuration with per-day progress and writes the table and
/// its manifest.
fn run_one(
    ds: &MarketDataset,
    data_path: &Path,
    cfg: &BacktestConfig,
    out: &Path,
    model_dump: Option<&Path>,
) -> Result<ForecastTable> {
    cfg.validate()?;
    let n = ds.test_period().n_days();
    let done = AtomicUsize::new(0);
    let progress = |r: &DayReport| {
        let k = done.fetch_add(1, Ordering::Relaxed) + 1;
        log::info!(
            "{} {} ({k}/{n}) {:.2}s, {} training days",
            cfg.label,
            r.date,
            r.elapsed.as_secs_f64(),
            r.training_rows
        );
    };
    let opts = RunOptions {
        keep_models: model_dump.is_some(),
        on_day: Some(&progress),
    };
    let started = Instant::now();
    let result = run_backtest_with(ds, cfg, &opts)?;
    let wall = started.elapsed();

    let mut echoed = cfg.clone();
    echoed.test_period = Some(ds.test_period());
    let config = serde_json::to_value(&echoed)?;
    write_atomic(out, |w| Ok(result.table.write_csv(w)?))?;
    RunManifest::new("backtest", out, config.clone(), wall)?
        .with_dataset(Some(data_path))?
        .with_timing(&result.days)
        .save()?;
    if let Some(dump) = model_dump {
        write_atomic(dump, |w| Ok(write_model_dump(&result.days, w)?))?;
        RunManifest::new("backtest --model-dump", dump, config, wall)?
            .with_dataset(Some(data_path))?
            .save()?;
    }
    log::info!("{}: {} days in {:.1}s -> {}", cfg.label, result.table.n_days(), wall.as_secs_f64(), out.display());
    Ok(result.table)
}

pub fn backtest(args: &BacktestArgs) -> Result<()> {
    let (data_path, ds, _) = load(&args.data, &args.period)?;
    let market = ds.market_id();
    match args.preset {
        None => {
            let cfg = base_config(args, market);
            let out = match (&args.out, &args.out_dir) {
                (Some(p), _) => p.clone(),
                (None, Some(dir)) => {
                    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
                    dir.join(format!("{}.csv", cfg.label))
                }
                (None, None) => return Err(CliError::invalid("pass --out or --out-dir")),
            };
            run_one(&ds, &data_path, &cfg, &out, args.model_dump.as_deref())?;
            println!("{}", out.display());
            Ok(())
        }
        Some(preset) => run_preset(args, preset, &ds, &data_path),
    }
}

/// Runs every configuration of a preset, then the ensembles whose members
/// are all present, the metrics table and, for the ablation presets, the
/// ratio table. A failing configuration does not stop the others.
fn run_preset(args: &BacktestArgs, preset: BacktestPreset, ds: &MarketDataset, data_path: &Path) -> Result<()> {
    let dir = args
        .out_dir
        .clone()
        .ok_or_else(|| CliError::invalid("--preset needs --out-dir"))?;
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let market = ds.market_id();
    let started = Instant::now();

    let mut tables = Vec::new();
    let mut first_err: Option<CliError> = None;
    let mut failures = Vec::new();
    for mut cfg in preset.configs(market) {
        apply_tuning(&mut cfg, args);
        let out = dir.join(format!("{}.csv", cfg.label));
        match run_one(ds, data_path, &cfg, &out, None) {
            Ok(t) => tables.push(t),
            Err(e) => {
                log::error!("{}: {e}", cfg.label);
                failures.push(format!("FAILED {}: {e}", cfg.label));
                first_err.get_or_insert(e);
            }
        }
    }

    let mut scored = tables.clone();
    if matches!(preset, BacktestPreset::Lear | BacktestPreset::Aslear | BacktestPreset::All) {
        for ens in EnsemblePreset::ALL {
            let Ok(table) = ens.build(market, &tables) else { continue };
            let out = dir.join(format!("{}.csv", ens.label()));
            write_atomic(&out, |w| Ok(table.write_csv(w)?))?;
            let members: Vec<PathBuf> = ens
                .member_labels(market)
                .iter()
                .map(|l| dir.join(format!("{l}.csv")))
                .collect();
            RunManifest::new("ensemble", &out, json!({ "preset": ens.label() }), Duration::ZERO)?
                .with_inputs(&members)?
                .save()?;
            scored.push(table);
        }
    }

    let reports = scored
        .iter()
        .map(|t| compute_metrics(t, ds))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut text = render_metrics_table(&reports);
    if let Some(ratios) = preset_ratios(preset, market, &reports)? {
        text.push('\n');
        text.push_str(&ratios);
    }
    if !failures.is_empty() {
        text.push('\n');
        for f in &failures {
            text.push_str(f);
            text.push('\n');
        }
    }
    let summary = dir.join("summary.txt");
    write_text(&summary, &text)?;
    let inputs: Vec<PathBuf> = scored.iter().map(|t| dir.join(format!("{}.csv", t.label()))).collect();
    RunManifest::new("backtest --preset", &summary, json!({ "preset": format!("{preset:?}") }), started.elapsed())?
        .with_dataset(Some(data_path))?
        .with_inputs(&inputs)?
        .save()?;
    print!("{text}");
    first_err.map_or(Ok(()), Err)
}

fn preset_ratios(preset: BacktestPreset, market: MarketId, reports: &[MetricsReport]) -> Result<Option<String>> {
    let pairs = preset.ratio_pairs(market);
    if pairs.is_empty() {
        return Ok(None);
    }
    let find = |l: &str| reports.iter().find(|r| r.label == l);
    let columns = market_windows(market).iter().map(|w| w.to_string()).collect();
    let mut table = RatioTable::new(columns);
    let mut row = Vec::new();
    for (x, y) in &pairs {
        row.push(match (find(x), find(y)) {
            (Some(x), Some(y)) => Some(performance_ratio(x, y)?),
            _ => None,
        });
    }
    table.push(market.as_str(), row);
    Ok(Some(table.render()))
}

fn emit(text: &str, out: Option<&Path>, command: &str, config: serde_json::Value, inputs: &[PathBuf], data: Option<&Path>) -> Result<()> {
    match out {
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
        Some(path) => {
            write_text(path, text)?;
            RunManifest::new(command, path, config, Duration::ZERO)?
                .with_dataset(data)?
                .with_inputs(inputs)?
                .save()?;
            Ok(())
        }
    }
}

pub fn metrics(args: &MetricsArgs) -> Result<()> {
    let tables = args.forecasts.iter().map(|p| load_table(p)).collect::<Result<Vec<_>>>()?;
    let (data_path, ds) = load_for_scoring(&args.data, &tables[0])?;
    let score = |t: &ForecastTable| {
        if args.monthly {
            compute_metrics_monthly(t, &ds)
        } else {
            compute_metrics(t, &ds)
        }
    };
    let reports = tables.iter().map(score).collect::<std::result::Result<Vec<_>, _>>()?;

    let ratios = match &args.ratio_against {
        Some(p) => {
            let reference = compute_metrics(&load_table(p)?, &ds)?;
            Some(
                reports
                    .iter()
                    .map(|r| performance_ratio(r, &reference))
                    .collect::<std::result::Result<Vec<_>, _>>()?,
            )
        }
        None => None,
    };

    let mut text = String::new();
    match args.format {
        Format::Table => {
            text.push_str(&render_metrics_table(&reports));
            if args.monthly {
                text.push('\n');
                text.push_str(&render_monthly_table(&reports));
            }
            if let Some(rs) = &ratios {
                text.push('\n');
                let mut t = RatioTable::new(reports.iter().map(|r| r.label.clone()).collect());
                t.push(ds.market_id().as_str(), rs.iter().cloned().map(Some).collect());
                text.push_str(&t.render());
            }
        }
        Format::Jsonl => {
            for r in &reports {
                text.push_str(&r.to_json_line());
                text.push('\n');
            }
            for r in ratios.iter().flatten() {
                text.push_str(&r.to_json_line());
                text.push('\n');
            }
        }
        Format::Csv => {
            text.push_str("label,mae,rmse,smape,rmae,n_days\n");
            for r in &reports {
                let _ = writeln!(text, "{},{},{},{},{},{}", r.label, r.mae, r.rmse, r.smape, r.rmae, r.n_days);
            }
            if args.monthly {
                text.push_str("\nlabel,month,n_days,mae\n");
                for r in &reports {
                    for m in r.monthly.iter().flatten() {
                        let _ = writeln!(text, "{},{},{},{}", r.label, m.month, m.n_days, m.mae);
                    }
                }
            }
            if let Some(rs) = &ratios {
                text.push_str("\nlabel_x,label_y,mae,rmse,smape,rmae\n");
                for r in rs {
                    let _ = writeln!(text, "{},{},{},{},{},{}", r.label_x, r.label_y, r.mae, r.rmse, r.smape, r.rmae);
                }
            }
        }
    }
    let mut inputs = args.forecasts.clone();
    inputs.extend(args.ratio_against.iter().cloned());
    let config = json!({ "monthly": args.monthly, "format": format!("{:?}", args.format) });
    emit(&text, args.out.as_deref(), "metrics", config, &inputs, Some(&data_path))
}

/// First market whose preset members are all among the tables.
fn build_preset(preset: EnsemblePreset, market: Option<MarketId>, tables: &[ForecastTable]) -> Result<ForecastTable> {
    if let Some(m) = market {
        return Ok(preset.build(m, tables)?);
    }
    let mut last = None;
    for m in MarketId::NAMED.into_iter().chain([MarketId::Custom]) {
        match preset.build(m, tables) {
            Ok(t) => return Ok(t),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one market tried").into())
}

pub fn ensemble(args: &EnsembleArgs) -> Result<()> {
    if args.inputs.len() < 2 {
        return Err(CliError::invalid(format!(
            "an ensemble needs at least 2 inputs, got {}",
            args.inputs.len()
        )));
    }
    let tables = args.inputs.iter().map(|p| load_table(p)).collect::<Result<Vec<_>>>()?;
    let table = match args.preset {
        Some(preset) => {
            let t = build_preset(preset, args.market, &tables)?;
            if let Some(m) = args.market {
                let members = preset.member_labels(m);
                for unused in tables.iter().filter(|t| !members.iter().any(|l| l == t.label())) {
                    log::warn!("{} is not a member of {}; ignored", unused.label(), preset.label());
                }
            }
            t
        }
        None => {
            let refs: Vec<&ForecastTable> = tables.iter().collect();
            match &args.label {
                Some(l) => ensemble_mean_labeled(&refs, l.clone())?,
                None => ensemble_mean(&refs)?,
            }
        }
    };
    write_atomic(&args.out, |w| Ok(table.write_csv(w)?))?;
    let config = json!({
        "label": table.label(),
        "preset": args.preset.map(|p| p.label()),
    });
    RunManifest::new("ensemble", &args.out, config, Duration::ZERO)?
        .with_inputs(&args.inputs)?
        .save()?;
    log::info!("{} ({} days) -> {}", table.label(), table.n_days(), args.out.display());
    Ok(())
}

pub fn dm(args: &DmArgs) -> Result<()> {
    let a = load_table(&args.a)?;
    let b = load_table(&args.b)?;
    let (data_path, ds) = load_for_scoring(&args.data, &a)?;
    let outcome = dm_test_multivariate(&a, &b, &ds)?;
    let text = match args.format {
        DmFormat::Text => render_dm(&outcome),
        DmFormat::Json => outcome.to_json_line() + "\n",
    };
    let inputs = [args.a.clone(), args.b.clone()];
    emit(&text, args.out.as_deref(), "dm", json!({}), &inputs, Some(&data_path))
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut cfg = SyntheticConfig::stub(args.market, args.seed);
    if let Some(h) = args.history_days {
        cfg = cfg.with_history_days(h);
    }
    if let Some(n) = args.test_days {
        if n == 0 {
            return Err(CliError::invalid("--test-days must be at least 1"));
        }
        cfg = cfg.with_test_days(n);
    }
    if args.spike_prob > 0.0 {
        cfg = cfg.with_spikes(SpikeSpec {
            day_probability: args.spike_prob,
            magnitude: args.spike_magnitude,
        });
    }
    let market = generate(&cfg)?;
    let ds = &market.dataset;
    write_atomic(&args.out, |w| Ok(ds.write_csv(w)?))?;
    ds.save_manifest(&args.out)?;
    let config = json!({
        "market": ds.market_id(),
        "seed": args.seed,
        "first_day": ds.first_day(),
        "days": ds.n_days(),
        "test_period": ds.test_period(),
        "spike_prob": args.spike_prob,
        "spike_magnitude": args.spike_magnitude,
        "spikes": market.spikes.len(),
    });
    RunManifest::new("synth", &args.out, config, Duration::ZERO)?.save()?;
    log::info!(
        "{} days of {} ({} .. {}) -> {}",
        ds.n_days(),
        ds.market_id(),
        ds.first_day(),
        ds.last_day(),
        args.out.display()
    );
    Ok(())
}
