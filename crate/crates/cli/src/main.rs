use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use reconlab_cli::client::parse_params;
use reconlab_cli::workflow::{write_report, ReportFormat};
use reconlab_cli::{phantom_bytes, run_workflow, Client, PhantomSpec, WorkflowConfig};
use reconlab_core::stats::ViewFilter;
use reconlab_core::View;
use reconlab_gateway::api::{CreateStudyRequest, JobList};
use reconlab_gateway::{AppState, GatewayConfig, Server};

#[derive(Parser)]
#[command(
    name = "reconlab",
    version,
    about = "MRI reconstruction evaluation platform client"
)]
struct Cli {
    /// Gateway base URL.
    #[arg(
        long,
        global = true,
        env = "RECONLAB_SERVER",
        default_value = "http://127.0.0.1:8080"
    )]
    server: String,
    /// Bearer token; defaults to the contents of the token file.
    #[arg(long, global = true, env = "RECONLAB_TOKEN", hide_env_values = true)]
    token: Option<String>,
    #[arg(
        long,
        global = true,
        env = "RECONLAB_TOKEN_FILE",
        default_value = ".reconlab-token"
    )]
    token_file: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the gateway (configured through RECONLAB_* variables).
    Serve {
        #[arg(long)]
        bind: Option<std::net::SocketAddr>,
        /// Seed researcher1/radiologist1/radiologist2 test accounts.
        #[arg(long)]
        dev_fixtures: bool,
    },
    /// Log in and store the token in the token file.
    Login {
        #[arg(long, short)]
        username: String,
        #[arg(long, short, env = "RECONLAB_PASSWORD", hide_env_values = true)]
        password: String,
    },
    /// Register a new account.
    Register {
        #[arg(long, short)]
        username: String,
        #[arg(long, short, env = "RECONLAB_PASSWORD", hide_env_values = true)]
        password: String,
        #[arg(long, default_value = "reader")]
        role: String,
    },
    /// Upload a raw data file in parallel chunks; prints its content id.
    Upload {
        file: PathBuf,
        #[arg(long)]
        chunk_size: Option<u64>,
        #[arg(long, default_value_t = 4)]
        threads: usize,
    },
    /// List reconstruction backends and their parameters.
    Backends,
    /// Queue a reconstruction job.
    SubmitJob {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        backend: String,
        /// Backend parameter as key=value; repeatable.
        #[arg(long = "param")]
        params: Vec<String>,
    },
    JobStatus {
        id: String,
        /// Block until the job finishes.
        #[arg(long)]
        wait: bool,
    },
    /// Create a blinded study from finished jobs.
    CreateStudy {
        #[arg(long, default_value = "")]
        title: String,
        /// method_id=job[,job...], one job per acquired view; repeatable.
        #[arg(long = "method", required = true)]
        methods: Vec<String>,
        /// Reference jobs aligned with the method jobs.
        #[arg(long)]
        reference: Option<String>,
        #[arg(long = "reader", required = true)]
        readers: Vec<String>,
        #[arg(long = "metric")]
        metrics: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Close a study so that its report becomes final.
    CloseStudy { study: String },
    /// Write a study's statistics report.
    ExportReport {
        study: String,
        #[arg(long, default_value = "all")]
        view: ViewFilter,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Run upload, reconstruction, study, reading and report from a TOML config.
    RunWorkflow { config: PathBuf },
    /// Write a synthetic multi-coil k-space phantom.
    GenPhantom {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        slices: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 4)]
        coils: usize,
        #[arg(long, default_value = "axial")]
        view: View,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn client(cli: &Cli) -> Result<Client> {
    let token = match &cli.token {
        Some(t) => t.clone(),
        None => std::fs::read_to_string(&cli.token_file)
            .with_context(|| {
                format!(
                    "no token; run `reconlab login` first ({})",
                    cli.token_file.display()
                )
            })?
            .trim()
            .to_string(),
    };
    Ok(Client::new(&cli.server)?.with_token(token))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn job_list(s: &str) -> JobList {
    JobList::Many(s.split(',').map(|j| j.trim().to_string()).collect())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Serve { bind, dev_fixtures } => {
            let mut config = GatewayConfig::from_env()?;
            if let Some(b) = bind {
                config.bind = *b;
            }
            config.dev_fixtures |= dev_fixtures;
            let state = AppState::from_config(config)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let server = Server::bind(state).await?;
                println!("listening on http://{}", server.local_addr()?);
                server
                    .run(async {
                        tokio::signal::ctrl_c().await.ok();
                    })
                    .await
            })?;
        }
        Command::Login { username, password } => {
            let mut c = Client::new(&cli.server)?;
            let r = c.login(username, password)?;
            std::fs::write(&cli.token_file, &r.token)?;
            eprintln!(
                "logged in as {username} ({:?}); token saved to {}",
                r.role,
                cli.token_file.display()
            );
        }
        Command::Register {
            username,
            password,
            role,
        } => {
            print_json(&Client::new(&cli.server)?.register(username, password, role)?)?;
        }
        Command::Upload {
            file,
            chunk_size,
            threads,
        } => {
            let bytes = std::fs::read(file).with_context(|| format!("reading {}", file.display()))?;
            let stored = client(&cli)?
                .with_upload_threads(*threads)
                .upload(&bytes, *chunk_size)?;
            print_json(&stored)?;
        }
        Command::Backends => print_json(&client(&cli)?.backends()?)?,
        Command::SubmitJob {
            dataset,
            backend,
            params,
        } => {
            let params = parse_params(params.iter().map(String::as_str)).map_err(anyhow::Error::msg)?;
            print_json(&client(&cli)?.submit_job(dataset, backend, params)?)?;
        }
        Command::JobStatus { id, wait } => {
            let c = client(&cli)?;
            let status = if *wait {
                c.wait_job(id, Duration::from_secs(3600))?
            } else {
                c.job_status(id)?
            };
            print_json(&status)?;
        }
        Command::CreateStudy {
            title,
            methods,
            reference,
            readers,
            metrics,
            seed,
        } => {
            let mut map = std::collections::BTreeMap::new();
            for m in methods {
                let Some((id, jobs)) = m.split_once('=') else {
                    bail!("--method expects method_id=job[,job...], got `{m}`");
                };
                map.insert(id.to_string(), job_list(jobs));
            }
            let summary = client(&cli)?.create_study(&CreateStudyRequest {
                title: title.clone(),
                methods: map,
                reference: reference.as_deref().map(job_list),
                metrics: metrics.clone(),
                readers: readers.clone(),
                seed: *seed,
            })?;
            print_json(&summary)?;
        }
        Command::CloseStudy { study } => print_json(&client(&cli)?.close_study(study)?)?,
        Command::ExportReport {
            study,
            view,
            format,
            out,
        } => {
            let r = client(&cli)?.report(study, *view)?;
            let format = match format {
                Format::Csv => ReportFormat::Csv,
                Format::Json => ReportFormat::Json,
            };
            for f in write_report(&r.report, out, format)? {
                println!("{}", out.join(f).display());
            }
        }
        Command::RunWorkflow { config } => {
            let config = WorkflowConfig::load(config)?;
            let summary = run_workflow(&config)?;
            eprintln!(
                "study {}: {} cases, {} readers, {} scores in {} ms",
                summary.study_id,
                summary.cases,
                summary.readers.len(),
                summary.scores_submitted,
                summary.elapsed_ms
            );
            for r in &summary.reports {
                println!("{}", r.dir.display());
            }
        }
        Command::GenPhantom {
            out,
            slices,
            size,
            coils,
            view,
            noise,
            seed,
        } => {
            let spec = PhantomSpec {
                slices: *slices,
                size: *size,
                coils: *coils,
                noise: *noise,
                seed: *seed,
            };
            std::fs::write(out, phantom_bytes(&spec, *view)?)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
