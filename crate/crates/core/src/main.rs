use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use psyprobe::assessment::{
    calibrate_report, symmetry_report, AssessmentConfig, BackendConfig, CalibrationMode,
    OrderChoice, SigmaKind, TemplateChoice,
};
use psyprobe::backend::{serve, Backend, MockBehavior, MockRespondent, ServerOptions, TOKEN_ENV};
use psyprobe::inventory::{load_inventory, sample_per_trait, InventoryFormat};
use psyprobe::mcqa::{Scorer, SymbolStyle};
use psyprobe::report::{render_markdown, AssessmentReport};
use psyprobe::selection::select_template;
use psyprobe::templating::{enumerate_templates, Indexing, OptionOrder, TemplateSpec, DEFAULT_ORDER_SEED};

/// Administer personality inventories to language models.
#[derive(Parser)]
#[command(name = "psyprobe", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List template names, or render one.
    Templates {
        #[arg(long)]
        indexing: Option<Indexing>,
        /// Render this template with a sample situation.
        #[arg(long)]
        render: Option<String>,
        #[arg(long, default_value = "Original")]
        order: String,
        #[arg(long, default_value = "worry about things")]
        situation: String,
    },
    /// Rank all templates of one indexing style by mutual information.
    SelectTemplate {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 10)]
        sample_per_trait: usize,
        #[arg(long, default_value_t = 0)]
        sample_seed: u64,
        #[arg(long, default_value = "Original")]
        order: String,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        /// Print the ranking as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run a full assessment and write the JSON report.
    Assess(AssessArgs),
    /// Recompute the symmetry verdict of a saved report; exits 2 when it fails.
    Symmetry {
        report: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Add content-free calibration to a saved report.
    Calibrate {
        report: PathBuf,
        #[arg(long, value_enum, default_value = "divide")]
        mode: ModeArg,
        /// Defaults to overwriting the input.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a saved report as Markdown.
    Report {
        report: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve a mock respondent over the scoring protocol.
    ServeMock {
        /// `constant=VA`, `index=A`, `uniform` or `table=PATH`.
        #[arg(long, default_value = "constant=VA")]
        mock: String,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// 0 picks a free port; the bound address is printed.
        #[arg(long, default_value_t = 8000)]
        port: u16,
        #[arg(long, env = TOKEN_ENV)]
        token: Option<String>,
        /// Answer this many score requests with 503 first.
        #[arg(long, default_value_t = 0)]
        loading_requests: usize,
        #[arg(long)]
        model_name: Option<String>,
    },
}

#[derive(Args)]
struct Source {
    #[arg(long)]
    inventory: PathBuf,
    #[arg(long)]
    inventory_format: Option<FormatArg>,
    /// `mock:constant=VA`, `mock:index=A`, `mock:uniform`, `mock:table=PATH`,
    /// `http:URL`, `replay:PATH`, `record:PATH`.
    #[arg(long)]
    backend: BackendConfig,
    /// Scoring endpoint for `http` and `record` backends.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    indexing: Indexing,
}

impl Source {
    fn backend_config(&self) -> BackendConfig {
        let mut backend = self.backend.clone();
        if let Some(url) = &self.endpoint {
            match &mut backend {
                BackendConfig::Http { endpoint } | BackendConfig::Record { endpoint, .. } => {
                    *endpoint = Some(url.clone())
                }
                _ => {}
            }
        }
        backend
    }
}

#[derive(Args)]
struct AssessArgs {
    /// JSON config; flags given alongside override its fields.
    #[arg(long, conflicts_with_all = ["inventory", "backend", "indexing"])]
    config: Option<PathBuf>,
    #[arg(long, requires_all = ["backend", "indexing"])]
    inventory: Option<PathBuf>,
    #[arg(long)]
    inventory_format: Option<FormatArg>,
    #[arg(long)]
    backend: Option<BackendConfig>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    indexing: Option<Indexing>,
    /// `auto` or a template name.
    #[arg(long)]
    template: Option<String>,
    /// Comma-separated order names.
    #[arg(long, value_delimiter = ',')]
    orders: Vec<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    order_seed: Option<u64>,
    #[arg(long)]
    sample_seed: Option<u64>,
    #[arg(long)]
    sample_per_trait: Option<usize>,
    #[arg(long)]
    calibrate: bool,
    #[arg(long, value_enum)]
    calibration_mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    sigma: Option<SigmaArg>,
    #[arg(long, value_enum)]
    symbol_style: Option<StyleArg>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Where to write the JSON report.
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
    /// Also write the Markdown rendering here.
    #[arg(long)]
    markdown: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FormatArg {
    Csv,
    Jsonl,
}

impl From<FormatArg> for InventoryFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => InventoryFormat::Csv,
            FormatArg::Jsonl => InventoryFormat::JsonLines,
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Divide,
    Multiply,
}

impl From<ModeArg> for CalibrationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Divide => CalibrationMode::Divide,
            ModeArg::Multiply => CalibrationMode::Multiply,
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SigmaArg {
    Population,
    Sample,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum StyleArg {
    Bare,
    Parenthesized,
}

impl AssessArgs {
    fn into_config(self) -> Result<AssessmentConfig> {
        let mut config = match &self.config {
            Some(path) => AssessmentConfig::from_file(path)?,
            None => {
                let (Some(inventory), Some(backend), Some(indexing)) =
                    (self.inventory.clone(), self.backend.clone(), self.indexing)
                else {
                    bail!("give --config, or all of --inventory, --backend and --indexing");
                };
                AssessmentConfig::new(inventory, backend, indexing)
            }
        };
        if let Some(f) = self.inventory_format {
            config.inventory_format = Some(f.into());
        }
        if let Some(url) = self.endpoint {
            match &mut config.backend {
                BackendConfig::Http { endpoint } | BackendConfig::Record { endpoint, .. } => {
                    *endpoint = Some(url)
                }
                _ => bail!("--endpoint only applies to http and record backends"),
            }
        }
        if let Some(t) = self.template {
            config.template = if t.eq_ignore_ascii_case("auto") {
                TemplateChoice::Auto
            } else {
                TemplateChoice::Named(t)
            };
        }
        if !self.orders.is_empty() {
            config.orders = self.orders.into_iter().map(OrderChoice::Named).collect();
        }
        if let Some(t) = self.tau {
            config.tau = t;
        }
        if let Some(s) = self.order_seed {
            config.seeds.orders = s;
        }
        if let Some(s) = self.sample_seed {
            config.seeds.sample = s;
        }
        if let Some(n) = self.sample_per_trait {
            config.sample_per_trait = n;
        }
        if self.calibrate {
            config.calibrate = true;
        }
        if let Some(m) = self.calibration_mode {
            config.calibration_mode = m.into();
        }
        if let Some(s) = self.sigma {
            config.sigma = match s {
                SigmaArg::Population => SigmaKind::Population,
                SigmaArg::Sample => SigmaKind::Sample,
            };
        }
        if let Some(s) = self.symbol_style {
            config.symbol_style = match s {
                StyleArg::Bare => SymbolStyle::Bare,
                StyleArg::Parenthesized => SymbolStyle::Parenthesized,
            };
        }
        if let Some(k) = self.concurrency {
            config.concurrency = k;
        }
        if let Some(p) = self.prompts {
            config.prompt_overrides = Some(p);
        }
        config.validate()?;
        Ok(config)
    }
}

fn read_report(path: &Path) -> Result<AssessmentReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    AssessmentReport::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn list_templates(indexing: Option<Indexing>, render: Option<String>, order: &str, situation: &str) -> Result<()> {
    let styles = match indexing {
        Some(i) => vec![i],
        None => vec![Indexing::Indexed, Indexing::NonIndexed],
    };
    let mut out = io::stdout().lock();
    if let Some(name) = render {
        let spec = TemplateSpec::parse(&name, styles[0])?;
        let order = OptionOrder::named(order, DEFAULT_ORDER_SEED)?;
        writeln!(out, "{}", psyprobe::render_prompt(&spec, situation, &order).text)?;
        return Ok(());
    }
    for style in styles {
        for spec in enumerate_templates(style) {
            writeln!(out, "{style}\t{}", spec.name())?;
        }
    }
    Ok(())
}

async fn run() -> Result<ExitCode> {
    // Exit code 2 is reserved for a failed symmetry check, so usage errors
    // exit 1 like every other error.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            e.print()?;
            return Ok(ExitCode::SUCCESS);
        }
        Err(e) => {
            e.print()?;
            return Ok(ExitCode::from(1));
        }
    };
    match cli.command {
        Command::Templates {
            indexing,
            render,
            order,
            situation,
        } => list_templates(indexing, render, &order, &situation)?,

        Command::SelectTemplate {
            source,
            sample_per_trait: n,
            sample_seed,
            order,
            concurrency,
            json,
        } => {
            let format = source
                .inventory_format
                .map(Into::into)
                .unwrap_or_else(|| InventoryFormat::from_path(&source.inventory));
            let inventory = load_inventory(&source.inventory, format)?;
            let sample = sample_per_trait(&inventory, n, sample_seed)?;
            let backend = source.backend_config().build()?;
            let order = OptionOrder::named(&order, DEFAULT_ORDER_SEED)?;
            let scorer = Scorer::new(backend);
            let selection = select_template(
                &scorer,
                &enumerate_templates(source.indexing),
                &sample,
                &order,
                concurrency,
            )
            .await?;
            if json {
                println!("{}", serde_json::to_string_pretty(&selection)?);
            } else {
                for s in &selection.ranking {
                    println!("{:.6}\t{}", s.mi_nats, s.template);
                }
                eprintln!("selected {}", selection.best.name());
            }
        }

        Command::Assess(args) => {
            let out = args.out.clone();
            let markdown = args.markdown.clone();
            let config = args.into_config()?;
            let report = psyprobe::run_assessment(&config).await?;
            write(&out, &report.to_json())?;
            if let Some(md) = markdown {
                write(&md, &render_markdown(&report))?;
            }
            eprintln!(
                "template {}; symmetry {} (min agreement {:.3}); report written to {}",
                report.template,
                if report.symmetry.pass { "PASS" } else { "FAIL" },
                report.symmetry.min_agreement,
                out.display()
            );
        }

        Command::Symmetry { report, tau } => {
            let report = read_report(&report)?;
            let tau = tau.unwrap_or(report.config.tau);
            let sym = symmetry_report(
                &report.records_by_order(),
                &report.inventory,
                report.config.sigma,
                tau,
            )?;
            for p in &sym.agreements {
                println!("{}\t{}\t{:.4}", p.a, p.b, p.agreement);
            }
            println!(
                "min agreement with {}: {:.4} (tau {:.2}) {}",
                sym.reference,
                sym.min_agreement,
                tau,
                if sym.pass { "PASS" } else { "FAIL" }
            );
            if !sym.pass {
                return Ok(ExitCode::from(2));
            }
        }

        Command::Calibrate { report, mode, out } => {
            let mut parsed = read_report(&report)?;
            let section = calibrate_report(&parsed, mode.into())?;
            println!(
                "max label share {:.4} → {:.4}; {} records explained by the prior",
                section.uncalibrated_max_label_share, section.max_label_share, section.bias_only_records
            );
            parsed.config.calibrate = true;
            parsed.config.calibration_mode = mode.into();
            parsed.calibration = Some(section);
            write(out.as_deref().unwrap_or(&report), &parsed.to_json())?;
        }

        Command::Report { report, out } => {
            let md = render_markdown(&read_report(&report)?);
            match out {
                Some(path) => write(&path, &md)?,
                None => print!("{md}"),
            }
        }

        Command::ServeMock {
            mock,
            host,
            port,
            token,
            loading_requests,
            model_name,
        } => {
            let behavior = match mock.strip_prefix("table=") {
                Some(path) => MockBehavior::table_from_json(
                    &fs::read_to_string(path).with_context(|| format!("reading {path}"))?,
                )
                .map_err(anyhow::Error::msg)?,
                None => mock.parse().map_err(anyhow::Error::msg)?,
            };
            let backend: Arc<dyn Backend> = Arc::new(MockRespondent::new(behavior));
            let listener = tokio::net::TcpListener::bind((host.as_str(), port))
                .await
                .with_context(|| format!("binding {host}:{port}"))?;
            println!("listening on http://{}", listener.local_addr()?);
            serve(
                listener,
                backend,
                ServerOptions {
                    model_name,
                    token,
                    loading_requests,
                },
            )
            .await?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// The error chain on one line. Library errors already embed their source in
/// the message, so causes the text above contains are skipped.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

#[tokio::main]
async fn main() -> ExitCode {
    match run().await {
        Ok(code) => code,
        // A closed pipe (`psyprobe templates | head`) is not an error.
        Err(e)
            if e
                .downcast_ref::<io::Error>()
                .is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
    }
}
