use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand, ValueEnum};

use agentmark_core::attack::{run_bench, standard_grid, AttackSpec, BenchMode};
use agentmark_core::orchestrator::corpus::scene_corpus;
use agentmark_core::orchestrator::{Backends, Engine, FileStore};
use agentmark_core::protector::{
    derive_key, embed, extract, hash_user, timestamp_text, ModelIds, ProvenanceRecord,
    WatermarkKey, WatermarkSalt, SALT_ENV,
};
use agentmark_core::{content_hash, psnr, Image, PipelineConfig, PromptText, ProtectionParams};
use agentmark_service::{router, AppState};

/// Salt used when the environment provides none. Marks made with it prove nothing.
const DEV_SALT: &str = "agentmark-dev-salt";

#[derive(Parser)]
#[command(
    name = "agentmark",
    version,
    about = "Controllable image pipeline with in-loop watermarking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one prompt through every stage and write the protected image.
    Run {
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum)]
        ablate: Vec<Ablation>,
        #[arg(long, default_value_t = 256)]
        size: usize,
        /// JSON file with a full pipeline config; --seed, --size and --ablate override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "cli")]
        user: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a benchmark corpus of integrated scenes as PPM files.
    Corpus {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed, attack and extract over a corpus of PPM files.
    Bench {
        #[arg(long)]
        corpus: PathBuf,
        /// `std` or a JSON file holding a list of attack specs.
        #[arg(long, default_value = "std")]
        grid: String,
        #[arg(long, value_enum, default_value_t = Mode::Integrated)]
        mode: Mode,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        report: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Watermark tools.
    Wm {
        #[command(subcommand)]
        command: WmCommand,
    },
    /// Serve the HTTP session API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Subcommand)]
enum WmCommand {
    /// Watermark an image and write its provenance record.
    Embed {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        provenance: PathBuf,
        /// Marked image; defaults to `<image>.marked.ppm`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        amplitude: Option<f64>,
        #[arg(long, default_value = "cli")]
        user: String,
    },
    /// Check an image against a provenance record.
    Verify {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        provenance: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Ablation {
    NoReviewer,
    NoIntegration,
    PosthocProtection,
    NoHitl,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Integrated,
    Posthoc,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Run {
            prompt,
            seed,
            ablate,
            size,
            config,
            user,
            out,
        } => run(prompt, seed, &ablate, size, config, &user, &out),
        Command::Corpus { n, seed, size, out } => corpus(n, seed, size, &out),
        Command::Bench {
            corpus,
            grid,
            mode,
            seed,
            report,
            json,
        } => bench(&corpus, &grid, mode, seed, &report, json.as_deref()),
        Command::Wm { command } => match command {
            WmCommand::Embed {
                image,
                provenance,
                out,
                amplitude,
                user,
            } => wm_embed(&image, &provenance, out, amplitude, &user),
            WmCommand::Verify { image, provenance } => wm_verify(&image, &provenance),
        },
        Command::Serve { addr, data } => serve(&addr, &data),
    }
}

fn salt() -> WatermarkSalt {
    WatermarkSalt::from_env().unwrap_or_else(|| {
        tracing::warn!("{SALT_ENV} is not set; using the development salt");
        WatermarkSalt::new(DEV_SALT)
    })
}

fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Image::decode(&bytes).with_context(|| format!("decoding {}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn run(
    prompt: String,
    seed: u64,
    ablate: &[Ablation],
    size: usize,
    config: Option<PathBuf>,
    user: &str,
    out: &Path,
) -> Result<()> {
    let mut cfg = match config {
        Some(p) => serde_json::from_slice(
            &fs::read(&p).with_context(|| format!("reading {}", p.display()))?,
        )
        .with_context(|| format!("parsing {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    cfg.seed = seed;
    cfg.scene_size = size;
    for a in ablate {
        match a {
            Ablation::NoReviewer => cfg.ablations.no_reviewer = true,
            Ablation::NoIntegration => cfg.ablations.no_integration = true,
            Ablation::PosthocProtection => cfg.ablations.posthoc_protection = true,
            Ablation::NoHitl => cfg.ablations.no_hitl = true,
        }
    }
    let prompt = PromptText::new(prompt)?;
    let store = FileStore::open(out)?;
    let id = uuid::Uuid::new_v4().to_string();
    let sink = store.create(&id)?;
    let started = Instant::now();
    let mut engine = Engine::create(
        id.clone(),
        prompt,
        cfg,
        user,
        Backends::from_env(salt()),
        Some(Box::new(sink)),
    )?;
    engine.run_to_end().with_context(|| {
        format!(
            "session {id} failed; log in {}",
            store.log_path(&id).display()
        )
    })?;
    let artifact = engine.artifact()?;
    let (image, record) = store.write_artifact(artifact)?;
    let metrics = out.join(format!("{id}.metrics.json"));
    write(&metrics, serde_json::to_string_pretty(&artifact.metrics)?)?;
    println!("session   {id}");
    println!("image     {}", image.display());
    println!("record    {}", record.display());
    println!("log       {}", store.log_path(&id).display());
    println!(
        "loss      plan {:.4}  review {:.4}  integration {:.4}  protection {:.4}  joint {:.4}",
        artifact.metrics.l_plan,
        artifact.metrics.l_rev,
        artifact.metrics.l_int,
        artifact.metrics.l_prot,
        artifact.metrics.l_joint
    );
    println!("elapsed   {:.2?}", started.elapsed());
    Ok(())
}

fn corpus(n: usize, seed: u64, size: usize, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let images = scene_corpus(n, seed, size)?;
    for (i, img) in images.iter().enumerate() {
        write(&out.join(format!("scene_{i:04}.ppm")), img.to_ppm())?;
    }
    println!("wrote {n} scenes to {}", out.display());
    Ok(())
}

/// Corpus images from a directory, in file-name order.
fn load_corpus(dir: &Path) -> Result<Vec<Image>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("ppm" | "png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .ppm or .png files in {}", dir.display());
    }
    paths.iter().map(|p| read_image(p)).collect()
}

/// Fixed key time so a corpus always gets the same keys.
fn bench_epoch() -> DateTime<Utc> {
    DateTime::from_timestamp(0, 0).expect("epoch")
}

fn bench(
    corpus: &Path,
    grid: &str,
    mode: Mode,
    seed: u64,
    report: &Path,
    json: Option<&Path>,
) -> Result<()> {
    let images = load_corpus(corpus)?;
    let grid: Vec<AttackSpec> = if grid == "std" {
        standard_grid(seed)
    } else {
        serde_json::from_slice(&fs::read(grid).with_context(|| format!("reading {grid}"))?)
            .with_context(|| format!("parsing {grid}"))?
    };
    let salt = salt();
    let keys: Vec<WatermarkKey> = images
        .iter()
        .map(|img| {
            derive_key(
                &content_hash(img),
                &bench_epoch(),
                &salt,
                &ProtectionParams::default(),
                img.dims(),
            )
        })
        .collect::<Result<_, _>>()?;
    let mode = match mode {
        Mode::Integrated => BenchMode::Integrated,
        Mode::Posthoc => BenchMode::Posthoc,
    };
    let started = Instant::now();
    let result = run_bench(&images, &keys, &grid, mode)?;
    write(report, result.to_csv())?;
    if let Some(p) = json {
        write(p, result.to_json())?;
    }
    print!("{}", result.to_csv());
    for cell in result.cells.iter().filter(|c| !c.errors.is_empty()) {
        tracing::warn!("{}: {} images failed", cell.label, cell.errors.len());
    }
    eprintln!(
        "{} images x {} attacks in {:.2?}",
        images.len(),
        grid.len(),
        started.elapsed()
    );
    Ok(())
}

fn wm_embed(
    image: &Path,
    provenance: &Path,
    out: Option<PathBuf>,
    amplitude: Option<f64>,
    user: &str,
) -> Result<()> {
    let original = read_image(image)?;
    let mut config = PipelineConfig::default();
    if let Some(a) = amplitude {
        config.protection.amplitude = a;
    }
    config.scene_size = original.width().max(original.height());
    let now = Utc::now();
    let digest_pre = content_hash(&original);
    let key = derive_key(
        &digest_pre,
        &now,
        &salt(),
        &config.protection,
        original.dims(),
    )?;
    let marked = embed(&original, &key)?;
    let external = ModelIds {
        planner: "external".into(),
        generator: "external".into(),
        scorer: "external".into(),
    };
    let record = ProvenanceRecord::new(
        timestamp_text(&now),
        external,
        hash_user(user),
        &key,
        digest_pre,
        content_hash(&marked),
        true,
        config,
    );
    let out = out.unwrap_or_else(|| image.with_extension("marked.ppm"));
    write(&out, marked.to_ppm())?;
    write(provenance, record.to_canonical_json())?;
    match psnr(&original, &marked)? {
        Some(db) => println!("embedded  {}  psnr {db:.2} dB", out.display()),
        None => println!("embedded  {}  (image unchanged)", out.display()),
    }
    Ok(())
}

fn wm_verify(image: &Path, provenance: &Path) -> Result<()> {
    let img = read_image(image)?;
    let text = fs::read_to_string(provenance)
        .with_context(|| format!("reading {}", provenance.display()))?;
    let record = ProvenanceRecord::from_json(&text)
        .with_context(|| format!("parsing {}", provenance.display()))?;
    let key = record.derive_key(&salt())?;
    let img = if img.dims() == (key.width, key.height) {
        img
    } else {
        img.resize(key.width, key.height)?
    };
    let exact = content_hash(&img) == record.digest_post;
    let r = extract(&img, &key)?;
    println!("bit accuracy  {:.4}", r.bit_accuracy);
    println!("exact match   {exact}");
    println!("recovered     {}", r.recovered);
    if !r.recovered {
        bail!("watermark not recovered");
    }
    Ok(())
}

fn serve(addr: &str, data: &Path) -> Result<()> {
    let store = FileStore::open(data)?;
    let state = AppState::open(store, Backends::from_env(salt()))?;
    tracing::info!(sessions = state.session_ids().len(), "store opened");
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        tracing::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
