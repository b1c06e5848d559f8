use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ips_core::jsonl::read_lines;
use ips_core::localizer::write_accuracy_csv;
use ips_core::{
    evaluate, read_jsonl, run_benchmark, simulate_survey, simulate_test_points, write_jsonl, BenchmarkConfig,
    DenseRadioMap, LocalizerConfig, PipelineError, SimScenario, SurveyArea, TrainConfig, TruthObservation,
};

use crate::{BenchmarkArgs, EvalArgs, ServeArgs, SimulateArgs, TrainArgs};

fn pipeline_error(e: PipelineError) -> anyhow::Error {
    anyhow::anyhow!("{}: {e}", e.kind())
}

fn load_scenario(path: Option<&Path>) -> Result<SimScenario> {
    match path {
        None => Ok(SimScenario::benchmark_room(0)),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading scenario {}", p.display()))?;
            SimScenario::from_json(&text).with_context(|| format!("bad scenario {}", p.display()))
        }
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn json_line(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    if !(args.rp_spacing.is_finite() && args.rp_spacing > 0.0) {
        bail!("--rp-spacing must be positive, got {}", args.rp_spacing);
    }
    if args.scans_per_cell == 0 {
        bail!("--scans-per-cell must be at least 1");
    }
    let mut scenario = load_scenario(args.scenario.as_deref())?;
    if let Some(seed) = args.seed {
        scenario.rng_seed = seed;
    }
    scenario.area = SurveyArea::with_interior_grid(scenario.area.width, scenario.area.height, args.rp_spacing);
    scenario.validate().context("invalid scenario")?;

    let samples = simulate_survey(&scenario, &scenario.area.reference_points, args.scans_per_cell)
        .context("simulating survey")?;
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let mut out = create(&args.out_dir.join("samples.jsonl"))?;
    write_jsonl(&samples, &mut out)?;
    out.flush()?;
    write_file(&args.out_dir.join("area.json"), json_line(&scenario.area).as_bytes())?;
    write_file(&args.out_dir.join("scenario.json"), format!("{}\n", scenario.to_json()).as_bytes())?;

    if args.test_points > 0 {
        let tests = simulate_test_points(&scenario, args.test_points, args.heading_known)?;
        let mut out = create(&args.out_dir.join("test_points.jsonl"))?;
        for t in &tests {
            serde_json::to_writer(&mut out, t)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }

    println!("samples: {}", samples.len());
    println!("seed: {}", scenario.rng_seed);
    Ok(())
}

/// Deletes the listed files when dropped unless disarmed.
struct Cleanup(Vec<PathBuf>);

impl Drop for Cleanup {
    fn drop(&mut self) {
        for p in &self.0 {
            let _ = fs::remove_file(p);
        }
    }
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let config = TrainConfig { spacing: args.spacing, hyper_policy: args.hyper_policy, min_presence: args.min_presence };
    config.validate().map_err(pipeline_error)?;

    let area: SurveyArea = serde_json::from_str(
        &fs::read_to_string(&args.area).with_context(|| format!("reading {}", args.area.display()))?,
    )
    .with_context(|| format!("bad area file {}", args.area.display()))?;
    area.validate().context("invalid area")?;
    let file = File::open(&args.samples).with_context(|| format!("reading {}", args.samples.display()))?;
    let samples = read_jsonl(BufReader::new(file)).with_context(|| format!("parsing {}", args.samples.display()))?;

    let artifacts = ips_core::train(&samples, &area, config).map_err(pipeline_error)?;

    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let outputs = ["sparse_map.json", "radiomap.json", "report.json"].map(|f| args.out_dir.join(f));
    let mut guard = Cleanup(Vec::new());
    let mut sparse = artifacts.sparse.to_json();
    if !sparse.ends_with('\n') {
        sparse.push('\n');
    }
    let contents = [sparse, artifacts.dense.to_json(), json_line(&artifacts.report)];
    for (path, body) in outputs.iter().zip(&contents) {
        guard.0.push(path.clone());
        write_file(path, body.as_bytes())?;
    }
    guard.0.clear();

    let r = &artifacts.report;
    println!(
        "trained {} surfaces ({} skipped) from {} samples on a {}x{} grid in {} ms",
        r.surfaces.len(),
        r.skipped.len(),
        r.sample_count,
        r.grid.nx,
        r.grid.ny,
        r.elapsed_ms
    );
    Ok(())
}

fn benchmark_config(args: &BenchmarkArgs) -> Result<BenchmarkConfig> {
    let mut cfg = match &args.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("bad benchmark config {}", p.display()))?,
        None => BenchmarkConfig::default(),
    };
    if let Some(s) = &args.scenario {
        cfg.scenario = Some(s.display().to_string());
    }
    macro_rules! apply {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = args.$flag { cfg.$field = v; })*
        };
    }
    apply!(rp_spacing => rp_spacing, scans_per_cell => scans_per_cell, test_points => test_point_count,
        grid_spacing => grid_spacing, hyper_policy => hyper_policy, seed => seed);
    if args.shadowing_std.is_some() {
        cfg.shadowing_std = args.shadowing_std;
    }
    cfg.validate().map_err(pipeline_error)?;
    Ok(cfg)
}

pub fn benchmark(args: &BenchmarkArgs) -> Result<()> {
    let cfg = benchmark_config(args)?;
    eprintln!("seed: {}", cfg.seed);
    let base = load_scenario(cfg.scenario.as_deref().map(Path::new))?;
    let run = run_benchmark(&base, &cfg).map_err(pipeline_error)?;
    let metrics = run.metrics.to_json();
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_file(&dir.join("metrics.json"), format!("{metrics}\n").as_bytes())?;
        write_file(&dir.join("config.json"), json_line(&cfg).as_bytes())?;
        write_file(&dir.join("report.json"), json_line(&run.report).as_bytes())?;
        let mut csv = create(&dir.join("accuracy.csv"))?;
        write_accuracy_csv(&run.evaluation.records, &mut csv)?;
        csv.flush()?;
    }
    println!("{metrics}");
    Ok(())
}

pub fn serve(args: &ServeArgs) -> Result<()> {
    let addr = format!("{}:{}", args.host, args.port);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = match tokio::net::TcpListener::bind(&addr).await {
            Ok(l) => l,
            Err(e) if e.kind() == io::ErrorKind::AddrInUse => bail!("port {} is already in use", args.port),
            Err(e) => return Err(e).with_context(|| format!("binding {addr}")),
        };
        eprintln!("listening on http://{}", listener.local_addr()?);
        ips_service::serve(listener, &args.data_dir, shutdown_signal())
            .await
            .with_context(|| format!("serving {}", args.data_dir.display()))?;
        eprintln!("stopped");
        Ok(())
    })
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    if args.k == 0 || args.min_match == 0 {
        bail!("--k and --min-match must be at least 1");
    }
    let map = DenseRadioMap::from_json(
        &fs::read_to_string(&args.radiomap).with_context(|| format!("reading {}", args.radiomap.display()))?,
    )
    .with_context(|| format!("bad radio map {}", args.radiomap.display()))?;
    let file = File::open(&args.observations).with_context(|| format!("reading {}", args.observations.display()))?;
    let items: Vec<TruthObservation> =
        read_lines(BufReader::new(file)).with_context(|| format!("parsing {}", args.observations.display()))?;
    for (i, item) in items.iter().enumerate() {
        item.observation.validate().with_context(|| format!("observation {}", i + 1))?;
    }
    let ev = evaluate(&items, &map, LocalizerConfig { k: args.k, min_match: args.min_match })
        .map_err(|e| pipeline_error(e.into()))?;

    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let mut csv = create(&args.out_dir.join("accuracy.csv"))?;
    write_accuracy_csv(&ev.records, &mut csv)?;
    csv.flush()?;
    let sidecar = serde_json::json!({ "summary": ev.summary, "skipped": ev.skipped });
    write_file(&args.out_dir.join("accuracy.json"), json_line(&sidecar).as_bytes())?;
    println!("{}", ev.summary.to_json());
    Ok(())
}
