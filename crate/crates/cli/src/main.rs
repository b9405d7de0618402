use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use storyweave_core::export::ExportFormat;
use storyweave_core::gateway::{mock_load, CompletionParams, Gateway, GatewayError, HttpBackend, ENV_MODEL};
use storyweave_core::model::{KnowledgeDoc, NarrativeContext, ScoreWeights};
use storyweave_core::organizer::PlacementRoute;
use storyweave_service::{router, GatewayFactory, Session, SessionConfig, SessionStore};

#[derive(Parser, Debug)]
#[command(name = "storyweave", version, about = "Compose data stories from charts, facts and domain knowledge")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the whole pipeline once and write a slide deck.
    Compose(ComposeArgs),
    /// Run the session service.
    Serve(ServeArgs),
}

#[derive(Args, Debug, Clone)]
struct PipelineArgs {
    /// Facts kept per chart.
    #[arg(long, default_value_t = 4)]
    top_k: usize,
    #[arg(long, default_value_t = 3)]
    max_facts_per_slide: usize,
    /// Relation score weights: strength,fidelity,helpfulness,interestingness.
    #[arg(long, default_value = "1,1,1,1")]
    weights: String,
    /// `mock:<script.json>`, `http:<base url>` or `none`.
    #[arg(long, default_value = "none")]
    llm: String,
}

#[derive(Args, Debug)]
struct ComposeArgs {
    /// Dataset file (csv or tsv).
    #[arg(long)]
    data: PathBuf,
    /// Domain knowledge document; repeatable.
    #[arg(long)]
    knowledge: Vec<PathBuf>,
    /// Narrative intent text, or `@file` to read it from a file.
    #[arg(long, default_value = "")]
    intent: String,
    /// Chart spec files, processed in order.
    #[arg(long, num_args = 1.., required = true)]
    charts: Vec<PathBuf>,
    /// Facts selected per chart.
    #[arg(long, default_value_t = 1)]
    select: usize,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// markdown-slides, html or structured; inferred from --out when absent.
    #[arg(long)]
    format: Option<String>,
    #[arg(long, default_value = "default")]
    theme: String,
    #[arg(long)]
    out: PathBuf,
    /// Write the model transcript as JSON lines.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, default_value_t = 8787)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Static UI assets served at `/`.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
    /// Where session snapshots (`<id>.story.json`) are written.
    #[arg(long)]
    snapshot_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    snapshot_secs: u64,
}

fn parse_weights(s: &str) -> Result<ScoreWeights> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("--weights `{s}` must be four numbers"))?;
    let [strength, fidelity, helpfulness, interestingness] = parts[..] else {
        bail!("--weights needs exactly four values, got {}", parts.len());
    };
    if parts.iter().any(|w| !w.is_finite() || *w < 0.0) || parts.iter().sum::<f64>() <= 0.0 {
        bail!("--weights must be non-negative with a positive sum");
    }
    Ok(ScoreWeights {
        strength,
        fidelity,
        helpfulness,
        interestingness,
    })
}

fn session_config(p: &PipelineArgs) -> Result<SessionConfig> {
    if p.top_k == 0 {
        bail!("--top-k must be positive");
    }
    if p.max_facts_per_slide == 0 {
        bail!("--max-facts-per-slide must be positive");
    }
    Ok(SessionConfig {
        top_k: p.top_k,
        max_facts_per_slide: p.max_facts_per_slide,
        weights: parse_weights(&p.weights)?,
    })
}

fn gateway_factory(spec: &str) -> Result<GatewayFactory, GatewayError> {
    let spec = spec.trim();
    if spec.is_empty() || spec == "none" || spec == "off" {
        return Ok(Arc::new(|| Ok(Gateway::disabled())));
    }
    if let Some(path) = spec.strip_prefix("mock:") {
        let script = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::InvalidScript(format!("{path}: {e}")))?;
        mock_load(&script)?;
        return Ok(Arc::new(move || Ok(Gateway::mock(mock_load(&script)?))));
    }
    if let Some(url) = spec.strip_prefix("http:") {
        let url = url.to_string();
        let build = move || -> Result<Gateway, GatewayError> {
            let backend = HttpBackend::from_env(Some(&url))?;
            let mut params = CompletionParams::default();
            if let Ok(m) = std::env::var(ENV_MODEL) {
                if !m.trim().is_empty() {
                    params.model_name = m;
                }
            }
            Ok(Gateway::new(Arc::new(backend), params))
        };
        build()?;
        return Ok(Arc::new(build));
    }
    Err(GatewayError::InvalidScript(format!(
        "--llm `{spec}`: expected mock:<file>, http:<url> or none"
    )))
}

fn exit_for_gateway(e: &GatewayError) -> u8 {
    match e {
        GatewayError::AuthFailed(_) => 2,
        _ => 1,
    }
}

fn read_knowledge(paths: &[PathBuf]) -> Result<Vec<KnowledgeDoc>> {
    paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let body = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let heading = body
                .lines()
                .find(|l| !l.trim().is_empty())
                .and_then(|l| l.trim().strip_prefix('#'))
                .map(|t| t.trim_start_matches('#').trim().to_string());
            let title = heading.unwrap_or_else(|| {
                p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
            });
            Ok(KnowledgeDoc {
                doc_id: format!("k{}", i + 1),
                title,
                body,
            })
        })
        .collect()
}

fn read_intent(arg: &str) -> Result<String> {
    match arg.strip_prefix('@') {
        Some(path) => std::fs::read_to_string(path)
            .map(|s| s.trim().to_string())
            .with_context(|| format!("reading intent from {path}")),
        None => Ok(arg.trim().to_string()),
    }
}

fn output_format(explicit: Option<&str>, out: &Path) -> Result<ExportFormat> {
    if let Some(f) = explicit {
        return ExportFormat::parse(f).map_err(Into::into);
    }
    let name = out.to_string_lossy().to_ascii_lowercase();
    Ok(if name.ends_with(".html") || name.ends_with(".htm") {
        ExportFormat::Html
    } else if name.ends_with(".json") {
        ExportFormat::Structured
    } else {
        ExportFormat::MarkdownSlides
    })
}

#[derive(Debug, Default)]
struct RunReport {
    charts: usize,
    facts_mined: usize,
    facts_selected: usize,
    suggestions_proposed: usize,
    suggestions_verified: usize,
    suggestions_accepted: usize,
    placed_by_llm: usize,
    placed_by_fallback: usize,
    warnings: Vec<String>,
}

impl RunReport {
    fn print(&self, out: &Path, slides: usize) {
        println!("charts processed: {}", self.charts);
        println!("facts mined: {}", self.facts_mined);
        println!("facts selected: {}", self.facts_selected);
        println!(
            "suggestions proposed: {}, verified: {}, accepted: {}",
            self.suggestions_proposed, self.suggestions_verified, self.suggestions_accepted
        );
        println!(
            "placements: {} by model, {} by fallback",
            self.placed_by_llm, self.placed_by_fallback
        );
        for w in &self.warnings {
            println!("warning: {w}");
        }
        println!("wrote {} slides to {}", slides, out.display());
    }
}

fn compose(args: ComposeArgs) -> Result<u8> {
    let config = session_config(&args.pipeline)?;
    let format = output_format(args.format.as_deref(), &args.out)?;
    storyweave_core::export::Theme::parse(&args.theme)?;
    let factory = match gateway_factory(&args.pipeline.llm) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(exit_for_gateway(&e));
        }
    };
    let gateway = match factory() {
        Ok(g) => g,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(exit_for_gateway(&e));
        }
    };

    let data = std::fs::read(&args.data).with_context(|| format!("reading {}", args.data.display()))?;
    let hint = args.data.extension().map(|e| e.to_string_lossy().into_owned());
    let name = args
        .data
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let context = NarrativeContext::new(read_knowledge(&args.knowledge)?, read_intent(&args.intent)?);
    let mut session = Session::create("compose", &data, hint.as_deref(), &name, context, config, gateway)
        .with_context(|| format!("loading {}", args.data.display()))?;

    let mut report = RunReport::default();
    for path in &args.charts {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let sub = session
            .submit_chart(&text)
            .with_context(|| format!("chart {}", path.display()))?;
        report.charts += 1;
        report.facts_mined += sub.facts.len();
        report.suggestions_proposed += sub.screening.proposed;
        report.suggestions_verified += sub.suggestions.len();
        report.warnings.extend(sub.warnings.iter().map(|w| format!("{}: {w}", path.display())));

        for fact in sub.facts.iter().take(args.select) {
            // Suggestions arrive ranked; take the best one that links to
            // a fact already placed.
            let relation = sub
                .suggestions
                .iter()
                .find(|m| m.other(&fact.id).is_some_and(|o| session.deck.contains(o)))
                .map(|m| m.id.clone());
            let outcome = session
                .select_fact(&fact.id, relation.as_ref())
                .with_context(|| format!("placing {}", fact.id))?;
            report.facts_selected += 1;
            if relation.is_some() {
                report.suggestions_accepted += 1;
            }
            match outcome.route {
                PlacementRoute::Llm => report.placed_by_llm += 1,
                PlacementRoute::Fallback { .. } => report.placed_by_fallback += 1,
            }
        }
    }

    if let Some(t) = &args.transcript {
        std::fs::write(t, session.transcript.to_jsonl()).with_context(|| format!("writing {}", t.display()))?;
    }
    let doc = session.export(format, &args.theme)?;
    std::fs::write(&args.out, &doc.content).with_context(|| format!("writing {}", args.out.display()))?;
    report.print(&args.out, doc.pages.len());

    if let Err(v) = session.check() {
        eprintln!("error: deck invariant violated: {v}");
        return Ok(1);
    }
    if doc.pages.len() != session.deck.slides.len() {
        eprintln!("error: exported {} pages for {} slides", doc.pages.len(), session.deck.slides.len());
        return Ok(1);
    }
    Ok(0)
}

async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
}

fn serve(args: ServeArgs) -> Result<u8> {
    let config = session_config(&args.pipeline)?;
    let factory = match gateway_factory(&args.pipeline.llm) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(exit_for_gateway(&e));
        }
    };
    let store = Arc::new(SessionStore::new(factory, config));
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(async move {
        let addr = format!("{}:{}", args.host, args.port);
        let listener = match tokio::net::TcpListener::bind(&addr).await {
            Ok(l) => l,
            Err(e) if e.kind() == std::io::ErrorKind::AddrInUse => {
                eprintln!("error: port {} is already in use", args.port);
                return Ok(2);
            }
            Err(e) => return Err(e).with_context(|| format!("binding {addr}")),
        };
        if let Some(dir) = args.snapshot_dir.clone() {
            store.spawn_snapshots(dir, Duration::from_secs(args.snapshot_secs.max(1)));
        }
        let app = router(Arc::clone(&store), args.ui_dir.clone());
        println!("listening on http://{addr}/api");
        axum::serve(listener, app)
            .with_graceful_shutdown(shutdown_signal())
            .await
            .context("serving")?;
        if let Some(dir) = &args.snapshot_dir {
            store.snapshot_changed(dir).context("final snapshot")?;
        }
        Ok(0)
    })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Compose(a) => compose(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
