use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use lro_core::baseline::BaselineParams;
use lro_core::bench::{acceptance_suite, load_suite, run_bench, run_spec, write_suite, BenchConfig, BenchError};
use lro_core::diffusion::LatentCode;
use lro_core::instruction::{decode_png, load_spec, EditSpec, SpecError};
use lro_core::lro::{LroError, RunOptions};
use lro_core::manifest::{trace_csv, RunManifest};
use lro_core::metrics::{pretty_table, to_csv, MetricsReport};
use lro_service::ServiceConfig;

use crate::args::{BenchArgs, GenSuiteArgs, MetricsArgs, RunArgs, ServeArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0} acceptance fixture(s) failed")]
    Acceptance(usize),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            Self::Acceptance(_) => 1,
            Self::Invalid(_) => 2,
            Self::Runtime(_) => 3,
        }
    }
}

impl From<SpecError> for CliError {
    fn from(e: SpecError) -> Self {
        match e {
            SpecError::Validation(errs) => Self::Invalid(
                errs.iter()
                    .map(|f| format!("{}: {}", f.path, f.message))
                    .collect::<Vec<_>>()
                    .join("\n"),
            ),
            SpecError::Parse { path, message } => Self::Invalid(format!("{path}: {message}")),
            SpecError::Io { .. } => Self::Invalid(e.to_string()),
        }
    }
}

impl From<LroError> for CliError {
    fn from(e: LroError) -> Self {
        match e {
            LroError::Spec(errs) => SpecError::Validation(errs).into(),
            other => Self::Runtime(other.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn read_png(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    decode_png(&bytes).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn save_png(path: &Path, image: &RgbImage) -> Result<()> {
    image
        .save(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn apply_overrides(spec: &mut EditSpec, a: &RunArgs) -> Result<()> {
    let p = &mut spec.params;
    if let Some(o) = a.optimizer {
        p.optimizer = o;
    }
    if let Some(s) = a.step_size {
        p.step_size = s;
    }
    if let Some(l) = a.lambda_m {
        p.lambda_m = l;
    }
    if let Some(k) = a.big_k {
        p.big_k = k;
    }
    let failures = spec.check();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(SpecError::Validation(failures).into())
    }
}

pub fn run(a: RunArgs) -> Result<()> {
    let image = read_png(&a.image)?;
    let mut spec = load_spec(&a.spec, Some(image))?;
    apply_overrides(&mut spec, &a)?;
    for w in spec.validate() {
        tracing::warn!("{w}");
    }
    let opts = RunOptions {
        snapshot_every: a.snapshot_every,
        ..Default::default()
    };
    let sel = a.components.selection();
    let result = run_spec(&spec, a.method, sel, &BaselineParams::default(), &opts)?;

    create_dir(&a.out)?;
    save_png(&a.out.join("edited.png"), &result.image)?;
    write(&a.out.join("loss_trace.csv"), trace_csv(&result.loss_trace))?;
    let manifest = RunManifest::new(&spec, a.method, sel, a.seed, &result);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    write(&a.out.join("manifest.json"), json)?;
    if !result.snapshots.is_empty() {
        let dir = a.out.join("snapshots");
        create_dir(&dir)?;
        for z in &result.snapshots {
            write_snapshot(&dir.join(format!("t{:03}.latent", z.timestep)), z)?;
        }
    }
    println!(
        "{} events, final loss {}, {:.1} ms -> {}",
        result.loss_trace.len(),
        manifest.final_loss.map_or("-".into(), |l| format!("{l:.4}")),
        result.latency_ms,
        a.out.display()
    );
    Ok(())
}

fn write_snapshot(path: &Path, z: &LatentCode<f64>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    z.write_snapshot(std::io::BufWriter::new(file))
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn bench_error(e: BenchError) -> CliError {
    match e {
        BenchError::Empty | BenchError::Suite { .. } | BenchError::Spec(_) => CliError::Invalid(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let fixtures = load_suite(&a.suite).map_err(bench_error)?;
    let cfg = BenchConfig {
        method: a.method,
        components: a.components.selection(),
        baseline: BaselineParams::default(),
        workers: a.workers,
    };
    let d = a.distance.build();
    let report = run_bench(&fixtures, &cfg, d.as_ref()).map_err(bench_error)?;

    create_dir(&a.out)?;
    let method = a.method.to_string();
    let rows = [(method.as_str(), report.aggregate)];
    write(&a.out.join("report.csv"), to_csv(&rows))?;
    write(&a.out.join("fixtures.csv"), fixtures_csv(&report.rows)?)?;
    print!("{}", pretty_table(&rows));

    let mut failed = 0;
    for row in &report.rows {
        let status = if row.success() { "ok" } else { "FAIL" };
        let check = row
            .check
            .map_or("-".into(), |c| format!("centroid {:.2} px, IoU {:.3}", c.centroid_error, c.iou));
        let tag = if row.acceptance { " [acceptance]" } else { "" };
        println!("{:<20} {status:<4} {check}{tag}", row.name);
        if let Some(e) = &row.error {
            println!("    {e}");
        }
        if row.acceptance && !row.success() {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(CliError::Acceptance(failed));
    }
    Ok(())
}

fn fixtures_csv(rows: &[lro_core::bench::BenchRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Runtime(e.to_string());
    w.write_record([
        "fixture",
        "method",
        "acceptance",
        "success",
        "centroid_error",
        "iou",
        "if_ed",
        "if_th",
        "if_hh",
        "latency_ms",
        "max_deviation",
        "error",
    ])
    .map_err(fail)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for r in rows {
        w.write_record([
            r.name.clone(),
            r.method.to_string(),
            r.acceptance.to_string(),
            r.success().to_string(),
            opt(r.check.map(|c| c.centroid_error)),
            opt(r.check.map(|c| c.iou)),
            opt(r.report.map(|m| m.if_ed)),
            opt(r.report.map(|m| m.if_th)),
            opt(r.report.map(|m| m.if_hh)),
            opt(r.report.map(|m| m.latency_ms)),
            opt(r.max_deviation),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Runtime(e.to_string()))
}

fn files_with_extension(dir: &Path, ext: &str) -> Result<BTreeMap<String, PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Invalid(format!("{}: {e}", dir.display())))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::Invalid(e.to_string()))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

pub fn metrics(a: MetricsArgs) -> Result<()> {
    let originals = files_with_extension(&a.orig, "png")?;
    let editeds = files_with_extension(&a.edited, "png")?;
    let specs = files_with_extension(&a.specs, "json")?;
    if originals.is_empty() {
        return Err(CliError::Invalid(format!("no PNG files in {}", a.orig.display())));
    }
    let names: Vec<&String> = originals.keys().collect();
    for (label, other) in [("edited", &editeds), ("specs", &specs)] {
        if other.keys().collect::<Vec<_>>() != names {
            let missing: Vec<&String> = names.iter().copied().filter(|n| !other.contains_key(*n)).collect();
            let extra: Vec<&String> = other.keys().filter(|n| !originals.contains_key(*n)).collect();
            return Err(CliError::Invalid(format!(
                "{label} directory does not match originals (missing {missing:?}, unexpected {extra:?})"
            )));
        }
    }
    let (mut xs, mut xes, mut ss) = (Vec::new(), Vec::new(), Vec::new());
    for name in names {
        let x = read_png(&originals[name])?;
        ss.push(load_spec(&specs[name], Some(x.clone()))?);
        xs.push(x);
        xes.push(read_png(&editeds[name])?);
    }
    let d = a.distance.build();
    let report = MetricsReport::compute(&xs, &xes, &ss, d.as_ref(), 0.0)
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    println!("pairs  {}", xs.len());
    println!("IF_ed  {:.6}", report.if_ed);
    println!("IF_th  {:.6}", report.if_th);
    println!("IF_hh  {:.6}", report.if_hh);
    Ok(())
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    rt.block_on(async {
        let addr = format!("{}:{}", a.host, a.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Runtime(format!("cannot bind {addr}: {e}")))?;
        let config = ServiceConfig {
            workers: a.workers.max(1),
            queue: a.queue,
            capacity: a.capacity,
            output_dir: a.out_dir.clone(),
            ..Default::default()
        };
        eprintln!("listening on http://{}", listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?);
        lro_service::serve(listener, config, lro_service::shutdown_signal())
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))
    })
}

pub fn gen_suite(a: GenSuiteArgs) -> Result<()> {
    let suite = acceptance_suite(a.seed);
    write_suite(&a.out, &suite).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("{} fixtures -> {}", suite.len(), a.out.display());
    Ok(())
}
