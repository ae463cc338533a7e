mod config;

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use catroute_api::ApiConfig;
use catroute_core::model::{build_query, parse_attribute_set, Stoplist};
use catroute_core::query_filter::{Provenance, Timestamp, TrainingQueryLibrary};
use catroute_core::registry::Registry;
use catroute_core::sampler::{generate_synthetic_queries_with, SamplingReport, SyntheticConfig};
use catroute_core::service::{BrokerConfig, BrokerService};
use catroute_core::sim::generate::{generate_corpus, CorpusSpec};
use catroute_core::sim::server::SimServer;
use catroute_core::sim::{corpus_text, EvalMode, IdPolicy, LibraryCorpus};
use clap::{Parser, Subcommand, ValueEnum};
use config::FileConfig;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  runtime error, or at least one database failed during sample/maintain
  2  usage error

Settings are taken from flags first, then CATROUTE_* environment variables,
then the --config file.";

#[derive(Debug, Parser)]
#[command(name = "catroute", version, about = "Query routing broker for networks of library catalogues", after_help = EXIT_CODES)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "CATROUTE_CONFIG")]
    config: Option<PathBuf>,
    /// Directory holding the term dictionary, statistics and logs [default: data].
    #[arg(long, global = true, env = "CATROUTE_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Database registry file.
    #[arg(long, global = true, env = "CATROUTE_REGISTRY")]
    registry: Option<PathBuf>,
    /// Stopword file, one word per line [default: built-in English list].
    #[arg(long, global = true, env = "CATROUTE_STOPLIST")]
    stoplist: Option<PathBuf>,
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Tsv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MaintenanceKind {
    Daily,
    Monthly,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic training queries from a corpus file.
    GenQueries {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training library file to write.
        #[arg(long, short)]
        output: PathBuf,
        /// Relative weights of title, subject and title+subject queries.
        #[arg(long, default_value = "1,1,1")]
        mode_weights: String,
    },
    /// Generate a seeded synthetic corpus file.
    GenCorpus {
        #[arg(long)]
        records: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        output: PathBuf,
        /// Leave system ids out of the records.
        #[arg(long)]
        no_ids: bool,
        #[arg(long, default_value = "R")]
        id_prefix: String,
        /// Give every record a unique ISBN.
        #[arg(long)]
        isbn: bool,
        /// Use only the first N vocabulary words (0 = all).
        #[arg(long, default_value_t = 0)]
        vocabulary: usize,
    },
    /// Sample one database, or `all`, with the training library.
    Sample {
        /// Database id from the registry, or `all`.
        target: String,
        /// Training library to add to the data directory's library before sampling.
        #[arg(long)]
        library: Option<PathBuf>,
        /// Records fetched per training query.
        #[arg(long)]
        batch_limit: Option<usize>,
    },
    /// Rank the registered databases for a query using the stored statistics.
    Rank {
        #[arg(long, default_value = "")]
        title: String,
        #[arg(long, default_value = "")]
        author: String,
        #[arg(long, default_value = "")]
        subject: String,
    },
    /// Run the broker HTTP service.
    Serve {
        #[arg(long, env = "CATROUTE_LISTEN")]
        listen: Option<String>,
        /// Do not mount the /api/admin endpoints.
        #[arg(long)]
        no_admin: bool,
        /// Serve static UI assets from this directory.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        #[arg(long)]
        cache_ttl_secs: Option<u64>,
    },
    /// Serve one corpus file as a simulated library server.
    ServeSim {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 0)]
        port: u16,
        /// Database id [default: corpus file stem].
        #[arg(long)]
        db_id: Option<String>,
        /// `exact` or `broad-title` (title terms also match subjects).
        #[arg(long, default_value = "exact")]
        mode: EvalMode,
        /// Comma list of accepted attributes.
        #[arg(long, default_value = "title,author,subject")]
        capabilities: String,
        /// Strip system ids from returned records.
        #[arg(long)]
        no_ids: bool,
    },
    /// Serve every registry entry from `<corpus-dir>/<db_id>.corpus`.
    ServeFleet {
        #[arg(long)]
        corpus_dir: PathBuf,
    },
    /// Run a maintenance update now.
    Maintain {
        #[arg(value_enum)]
        kind: MaintenanceKind,
    },
    /// Print storage sizes of the dictionary, statistics and record ids.
    Stats,
}

struct Settings {
    file: FileConfig,
    data_dir: PathBuf,
    registry: Option<PathBuf>,
    stoplist: Option<PathBuf>,
    format: Format,
}

impl Settings {
    fn resolve(cli: &Cli) -> Result<Self> {
        let file = match &cli.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        Ok(Settings {
            data_dir: cli
                .data_dir
                .clone()
                .or_else(|| file.data_dir.clone())
                .unwrap_or_else(|| PathBuf::from("data")),
            registry: cli.registry.clone().or_else(|| file.registry.clone()),
            stoplist: cli.stoplist.clone().or_else(|| file.stoplist.clone()),
            format: cli.format,
            file,
        })
    }

    fn stoplist(&self) -> Result<Stoplist> {
        match &self.stoplist {
            Some(p) => Stoplist::load(p).with_context(|| format!("reading stoplist {}", p.display())),
            None => Ok(Stoplist::english()),
        }
    }

    fn registry(&self) -> Result<Registry> {
        let path = self
            .registry
            .as_ref()
            .ok_or_else(|| anyhow!("no registry given (use --registry, CATROUTE_REGISTRY or the config file)"))?;
        Registry::load(path).with_context(|| format!("reading registry {}", path.display()))
    }

    fn broker_config(&self) -> BrokerConfig {
        let mut c = BrokerConfig::in_dir(&self.data_dir);
        if let Some(b) = self.file.batch_limit {
            c.batch_limit = b;
        }
        if let Some(t) = self.file.cache_ttl_secs {
            c.cache_ttl = Duration::from_secs(t);
        }
        c.policy = self.file.policy();
        c
    }

    fn broker(&self, config: BrokerConfig) -> Result<BrokerService> {
        let registry = self.registry()?;
        fs::create_dir_all(&self.data_dir)
            .with_context(|| format!("creating data directory {}", self.data_dir.display()))?;
        Ok(BrokerService::open(config, &registry, self.stoplist()?)?)
    }
}

fn parse_weights(s: &str) -> Result<[u32; 3]> {
    let parts: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad mode weights `{s}`"))?;
    match parts[..] {
        [a, b, c] if a + b + c > 0 => Ok([a, b, c]),
        _ => bail!("mode weights must be three non-negative integers with a positive sum"),
    }
}

fn print(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn gen_queries(s: &Settings, corpus: &Path, count: u64, seed: u64, output: &Path, weights: &str) -> Result<()> {
    let corpus = LibraryCorpus::load(corpus).with_context(|| format!("loading corpus {}", corpus.display()))?;
    let config = SyntheticConfig {
        mode_weights: parse_weights(weights)?,
    };
    let queries = generate_synthetic_queries_with(&config, corpus.records(), count as usize, seed, &s.stoplist()?)?;
    let mut lib = TrainingQueryLibrary::new();
    for q in queries {
        lib.push(q, Provenance::Synthetic, Timestamp(0));
    }
    lib.save(output)?;
    eprintln!("wrote {} queries to {}", lib.len(), output.display());
    Ok(())
}

fn report_text(report: &SamplingReport, format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::Tsv => {
            for e in &report.entries {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    report.db_id,
                    e.query_index,
                    e.returned,
                    e.new,
                    e.cumulative,
                    e.error.as_deref().unwrap_or("-")
                );
            }
        }
        Format::Table => {
            let _ = writeln!(out, "== {} ==", report.db_id);
            let _ = writeln!(out, "{:>6} {:>9} {:>6} {:>8}", "query", "returned", "new", "N'");
            for e in &report.entries {
                let _ = write!(out, "{:>6} {:>9} {:>6} {:>8}", e.query_index, e.returned, e.new, e.cumulative);
                match &e.error {
                    Some(err) => {
                        let _ = writeln!(out, "  error: {err}");
                    }
                    None => out.push('\n'),
                }
            }
            let _ = writeln!(
                out,
                "{}: N' {} -> {}, {} new of {} returned, {} failed queries",
                report.db_id,
                report.initial_count,
                report.final_count(),
                report.total_new(),
                report.total_returned(),
                report.failures()
            );
        }
    }
    out
}

fn sample(s: &Settings, target: &str, library: Option<&Path>, batch_limit: Option<usize>) -> Result<bool> {
    let mut config = s.broker_config();
    if let Some(b) = batch_limit {
        config.batch_limit = b;
    }
    let broker = s.broker(config)?;
    if let Some(path) = library {
        let lib = TrainingQueryLibrary::load(path)?;
        let added = broker.import_library(&lib)?;
        eprintln!("library: {added} new training queries from {}", path.display());
    }
    let ids = if target == "all" {
        broker.db_ids()
    } else {
        vec![target.to_string()]
    };
    let mut ok = true;
    if s.format == Format::Tsv {
        print("db\tquery\treturned\tnew\tcumulative\terror\n")?;
    }
    for (id, result) in broker.sample_many(&ids) {
        match result {
            Ok(report) => print(&report_text(&report, s.format))?,
            Err(e) => {
                ok = false;
                eprintln!("{id}: {e}");
            }
        }
    }
    Ok(ok)
}

fn rank(s: &Settings, title: &str, author: &str, subject: &str) -> Result<()> {
    let broker = s.broker(s.broker_config())?;
    let q = build_query(title, author, subject, broker.stoplist())?;
    let ranking = broker.rank(&q)?;
    let mut out = String::new();
    match s.format {
        Format::Tsv => {
            out.push_str("rank\tdb\tscore\tstatus\tsampled\tstale\n");
            for (i, r) in ranking.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{:.4}\t{}\t{}\t{}",
                    i + 1,
                    r.db_id,
                    r.score,
                    r.status.as_str(),
                    r.sampled_count,
                    r.stale
                );
            }
        }
        Format::Table => {
            let _ = writeln!(out, "query: {q}");
            let _ = writeln!(out, "{:>4}  {:<16} {:>12}  {:<11} {:>8}", "rank", "database", "score", "status", "N'");
            for (i, r) in ranking.iter().enumerate() {
                let stale = if r.stale { "  (stale)" } else { "" };
                let _ = writeln!(
                    out,
                    "{:>4}  {:<16} {:>12.4}  {:<11} {:>8}{stale}",
                    i + 1,
                    r.db_id,
                    r.score,
                    r.status.as_str(),
                    r.sampled_count
                );
            }
        }
    }
    print(&out)
}

fn stats(s: &Settings) -> Result<()> {
    let broker = s.broker(s.broker_config())?;
    let st = broker.stats();
    let mut out = String::new();
    match s.format {
        Format::Tsv => {
            for (attr, n) in &st.dictionary {
                let _ = writeln!(out, "dictionary\t{attr}\t{n}");
            }
            let _ = writeln!(out, "library\tsynthetic\t{}", st.synthetic_queries);
            let _ = writeln!(out, "library\tuser\t{}", st.user_derived_queries);
            let _ = writeln!(out, "userlog\tentries\t{}", st.logged_user_queries);
            for d in &st.databases {
                let _ = writeln!(
                    out,
                    "db\t{}\t{}\t{}\t{}\t{}",
                    d.db_id, d.sampled_count, d.tf_entries, d.record_ids, d.stored_bytes
                );
            }
        }
        Format::Table => {
            let terms: Vec<String> = st.dictionary.iter().map(|(a, n)| format!("{a}={n}")).collect();
            let _ = writeln!(out, "dictionary terms: {}", terms.join(" "));
            let _ = writeln!(
                out,
                "training library: {} synthetic, {} user-derived; user log: {} queries",
                st.synthetic_queries, st.user_derived_queries, st.logged_user_queries
            );
            let _ = writeln!(out, "{:<16} {:>8} {:>10} {:>10} {:>10}", "database", "N'", "tf", "record ids", "bytes");
            for d in &st.databases {
                let _ = writeln!(
                    out,
                    "{:<16} {:>8} {:>10} {:>10} {:>10}",
                    d.db_id, d.sampled_count, d.tf_entries, d.record_ids, d.stored_bytes
                );
            }
        }
    }
    print(&out)
}

fn maintain(s: &Settings, kind: MaintenanceKind) -> Result<bool> {
    let broker = s.broker(s.broker_config())?;
    let summary = match kind {
        MaintenanceKind::Daily => broker.daily_update()?,
        MaintenanceKind::Monthly => broker.monthly_update()?,
    };
    let mut out = format!(
        "{} update: {} queries submitted, {} user queries promoted\n",
        summary.kind.as_str(),
        summary.queries,
        summary.promoted
    );
    for d in &summary.databases {
        let _ = writeln!(
            out,
            "{:<16} {:<8} returned={} new={} N'={}{}",
            d.db_id,
            d.status.as_str(),
            d.returned,
            d.new,
            d.sampled_count,
            d.error.as_deref().map(|e| format!(" error: {e}")).unwrap_or_default()
        );
    }
    print(&out)?;
    Ok(summary.failed() == 0)
}

fn serve_sim(
    corpus: &Path,
    host: &str,
    port: u16,
    db_id: Option<&str>,
    mode: EvalMode,
    capabilities: &str,
    no_ids: bool,
) -> Result<()> {
    let c = match db_id {
        Some(id) => LibraryCorpus::load_as(corpus, id),
        None => LibraryCorpus::load(corpus),
    }
    .with_context(|| format!("loading corpus {}", corpus.display()))?;
    let c = c
        .with_mode(mode)
        .with_capabilities(parse_attribute_set(capabilities)?)
        .with_id_policy(if no_ids { IdPolicy::WithoutIds } else { IdPolicy::WithIds });
    let id = c.db_id().to_string();
    let records = c.total_count();
    let server = SimServer::serve(c, (host, port))?;
    println!("{id}\t{}\t{records} records", server.local_addr());
    server.wait();
    Ok(())
}

fn serve_fleet(s: &Settings, dir: &Path) -> Result<()> {
    let registry = s.registry()?;
    let mut servers = Vec::new();
    for e in registry.entries() {
        let path = dir.join(format!("{}.corpus", e.db_id));
        let c = LibraryCorpus::load_as(&path, &e.db_id)
            .with_context(|| format!("loading corpus {}", path.display()))?
            .with_capabilities(e.capabilities.clone());
        let server = SimServer::serve(c, (e.host.as_str(), e.port))
            .with_context(|| format!("binding {}", e.address()))?;
        println!("{}\t{}", e.db_id, server.local_addr());
        servers.push(server);
    }
    for s in servers {
        s.wait();
    }
    Ok(())
}

fn serve(
    s: &Settings,
    listen: Option<String>,
    no_admin: bool,
    static_dir: Option<PathBuf>,
    cache_ttl: Option<u64>,
) -> Result<()> {
    let mut config = s.broker_config();
    if let Some(t) = cache_ttl {
        config.cache_ttl = Duration::from_secs(t);
    }
    let scheduled = config.policy.enabled;
    let broker = Arc::new(s.broker(config)?);
    let api = ApiConfig {
        admin_enabled: !no_admin && s.file.admin.unwrap_or(true),
        static_dir: static_dir.or_else(|| s.file.static_dir.clone()),
    };
    let listen = listen
        .or_else(|| s.file.listen.clone())
        .unwrap_or_else(|| "127.0.0.1:8080".into());
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&listen)
            .await
            .with_context(|| format!("binding {listen}"))?;
        println!("listening on http://{}", listener.local_addr()?);
        if scheduled {
            catroute_api::spawn_scheduler(Arc::clone(&broker), Duration::from_secs(30));
        }
        let app = catroute_api::router(broker, &api);
        catroute_api::serve(listener, app, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok(())
    })
}

fn run(cli: Cli) -> Result<bool> {
    let s = Settings::resolve(&cli)?;
    match cli.command {
        Command::GenQueries {
            corpus,
            count,
            seed,
            output,
            mode_weights,
        } => gen_queries(&s, &corpus, count, seed, &output, &mode_weights).map(|_| true),
        Command::GenCorpus {
            records,
            seed,
            output,
            no_ids,
            id_prefix,
            isbn,
            vocabulary,
        } => {
            let spec = CorpusSpec {
                records,
                seed,
                id_prefix: (!no_ids).then_some(id_prefix),
                with_isbn: isbn,
                vocabulary,
                ..CorpusSpec::default()
            };
            fs::write(&output, corpus_text(&generate_corpus(&spec)))
                .with_context(|| format!("writing {}", output.display()))?;
            Ok(true)
        }
        Command::Sample {
            target,
            library,
            batch_limit,
        } => sample(&s, &target, library.as_deref(), batch_limit),
        Command::Rank { title, author, subject } => rank(&s, &title, &author, &subject).map(|_| true),
        Command::Serve {
            listen,
            no_admin,
            static_dir,
            cache_ttl_secs,
        } => serve(&s, listen, no_admin, static_dir, cache_ttl_secs).map(|_| true),
        Command::ServeSim {
            corpus,
            host,
            port,
            db_id,
            mode,
            capabilities,
            no_ids,
        } => serve_sim(&corpus, &host, port, db_id.as_deref(), mode, &capabilities, no_ids).map(|_| true),
        Command::ServeFleet { corpus_dir } => serve_fleet(&s, &corpus_dir).map(|_| true),
        Command::Maintain { kind } => maintain(&s, kind),
        Command::Stats => stats(&s).map(|_| true),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
