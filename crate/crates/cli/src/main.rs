use std::fs::File;
use std::io::{self, BufWriter};
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand_chacha::ChaCha20Rng;
use rand_core::{OsRng, RngCore, SeedableRng};

use tdh_cli::bench::{self, MatrixConfig};
use tdh_cli::client::{parse_hex, psk_demo, seed_from, Backend, CliError};
use tdh_cli::report;
use tdh_core::group::CurveId;
use tdh_core::protocols::SchemeParams;
use tdh_platform::agent::Agent;
use tdh_platform::auth::{Principal, StaticTokens, TaskSigner};
use tdh_platform::broker::{Broker, BrokerConfig};
use tdh_platform::hub::{Hub, HubConfig};
use tdh_platform::net::{run_agent, serve_broker};
use tdh_platform::netem::Profile;
use tdh_platform::store::AgentShareStore;
use tdh_platform::transport::{serve_tcp, Connector, TcpConnector};

#[derive(Parser)]
#[command(name = "tdh", version, about = "Threshold Diffie-Hellman operator tool")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Naive,
    Threshold,
}

#[derive(Args)]
struct Conn {
    /// Run hub, broker and agents inside this process.
    #[arg(long)]
    in_process: bool,
    #[arg(long, env = "BROKER_ADDR", default_value = "127.0.0.1:7401")]
    broker: String,
    #[arg(long, env = "CUSTOMER_TOKEN", default_value = tdh_platform::stack::CUSTOMER_TOKEN, hide_env_values = true)]
    token: String,
    /// Network profile for in-process agent links.
    #[arg(long, default_value = "local")]
    profile: Profile,
}

#[derive(Args)]
struct KeyArgs {
    #[arg(long, value_enum, default_value = "threshold")]
    scheme: SchemeArg,
    #[arg(long, default_value = "curve25519")]
    curve: CurveId,
    /// Ignored by the naive scheme.
    #[arg(long, default_value_t = 1)]
    t: u16,
    #[arg(long, default_value_t = 3)]
    n: u16,
    #[arg(long, default_value = "default")]
    key_id: String,
}

impl KeyArgs {
    fn params(&self) -> Result<SchemeParams, CliError> {
        let p = match self.scheme {
            SchemeArg::Naive => SchemeParams::naive(self.curve, self.n),
            SchemeArg::Threshold => SchemeParams::threshold(self.curve, self.t, self.n),
        };
        p.validate().map_err(|e| CliError::Input(e.to_string()))?;
        Ok(p)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Create a key. Prints the encoded public key.
    Keygen {
        #[command(flatten)]
        key: KeyArgs,
        #[command(flatten)]
        conn: Conn,
    },
    /// Exchange with a peer public key: a 33-byte encoded point, a 32-byte
    /// X25519 key or a 65-byte SEC1 point, in hex. With --in-process a key
    /// is created first from the key flags.
    Exchange {
        #[command(flatten)]
        key: KeyArgs,
        #[arg(long)]
        peer_pubkey: String,
        #[command(flatten)]
        conn: Conn,
    },
    /// Move a key to a new (t, n) committee. With --in-process a key is
    /// created first from the key flags.
    Reshare {
        #[command(flatten)]
        key: KeyArgs,
        #[arg(long)]
        new_t: u16,
        #[arg(long)]
        new_n: u16,
        #[command(flatten)]
        conn: Conn,
    },
    /// Threshold PSK against freshly generated classic peers.
    PskDemo {
        #[command(flatten)]
        key: KeyArgs,
        #[arg(long, default_value_t = 1)]
        peers: usize,
        #[command(flatten)]
        conn: Conn,
    },
    /// Run the message hub.
    ServeHub {
        #[arg(long, env = "HUB_ADDR", default_value = "127.0.0.1:7400")]
        listen: String,
    },
    /// Run the broker: authenticates customers and drives agents.
    ServeBroker {
        #[arg(long, env = "BROKER_ADDR", default_value = "127.0.0.1:7401")]
        listen: String,
        #[arg(long, env = "HUB_ADDR", default_value = "127.0.0.1:7400")]
        hub: String,
        #[arg(long, env = "AGENT_TOKEN", hide_env_values = true)]
        agent_token: String,
        #[arg(long, env = "CUSTOMER_TOKEN", hide_env_values = true)]
        customer_token: String,
        #[arg(long, default_value_t = 30_000)]
        round_timeout_ms: u64,
    },
    /// Run one agent holding key shares in a local store.
    ServeAgent {
        #[arg(long)]
        name: String,
        #[arg(long, env = "STORE_PATH")]
        store: PathBuf,
        #[arg(long, env = "HUB_ADDR", default_value = "127.0.0.1:7400")]
        hub: String,
        #[arg(long, env = "BROKER_ADDR", default_value = "127.0.0.1:7401")]
        broker: String,
        #[arg(long, env = "AGENT_TOKEN", hide_env_values = true)]
        agent_token: String,
    },
    /// Benchmark matrix and comparison with reference timings.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Measure the full matrix and write CSV.
    Run {
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Shaped cells measured concurrently.
        #[arg(long, default_value_t = 4)]
        jobs: usize,
        /// Restrict to these profiles (repeatable).
        #[arg(long)]
        profile: Vec<Profile>,
        /// Restrict to these curves (repeatable).
        #[arg(long)]
        curve: Vec<CurveId>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Annotate a measured CSV with reference timings and ratios.
    Compare { csv: PathBuf },
}

fn seed() -> Option<[u8; 32]> {
    std::env::var("TDH_SEED").ok().map(|s| seed_from(&s))
}

fn rng() -> ChaCha20Rng {
    match seed() {
        // Peers draw from their own stream, apart from the agents'.
        Some(s) => ChaCha20Rng::from_seed(seed_from(&format!("peers:{}", hex::encode(s)))),
        None => {
            let mut s = [0u8; 32];
            OsRng.fill_bytes(&mut s);
            ChaCha20Rng::from_seed(s)
        }
    }
}

/// Opens the backend; in-process stacks get a key from `key` first when
/// `setup` is set.
fn backend(conn: &Conn, key: &KeyArgs, agents: u16, setup: bool) -> Result<Backend, CliError> {
    if !conn.in_process {
        return Backend::remote(&conn.broker, &conn.token);
    }
    let mut b = Backend::in_process(agents.max(key.n) as usize, conn.profile, seed())?;
    if setup {
        let pk = b.keygen(&key.key_id, key.params()?)?;
        println!("public_key={}", hex::encode(pk));
    }
    Ok(b)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Keygen { key, conn } => {
            let params = key.params()?;
            let pk = backend(&conn, &key, key.n, false)?.keygen(&key.key_id, params)?;
            println!("public_key={}", hex::encode(pk));
        }
        Command::Exchange { key, peer_pubkey, conn } => {
            let peer = parse_hex("peer public key", &peer_pubkey)?;
            if ![32, 33, 65].contains(&peer.len()) {
                return Err(CliError::Input(format!(
                    "peer public key has {} bytes; expected 32, 33 or 65",
                    peer.len()
                )));
            }
            let (shared, psk) = backend(&conn, &key, key.n, true)?.exchange(&key.key_id, &peer)?;
            println!("shared_point={}", hex::encode(shared));
            println!("psk={}", hex::encode(psk));
        }
        Command::Reshare { key, new_t, new_n, conn } => {
            let mut b = backend(&conn, &key, new_n, true)?;
            let (pk, version) = b.reshare(&key.key_id, new_t, new_n)?;
            println!("public_key={}", hex::encode(pk));
            println!("version={version}");
        }
        Command::PskDemo { key, peers, conn } => {
            if matches!(key.scheme, SchemeArg::Naive) {
                return Err(CliError::Input("psk-demo uses the threshold scheme".into()));
            }
            let mut b = backend(&conn, &key, key.n, false)?;
            let (pk, trials) = psk_demo(&mut b, &key.key_id, key.params()?, peers, &mut rng())?;
            println!("public_key={}", hex::encode(pk));
            let mut all = true;
            for t in &trials {
                println!("peer_public={}", hex::encode(&t.peer_public));
                println!("virtual_psk={}", hex::encode(t.virtual_psk));
                println!("peer_psk={}", hex::encode(t.peer_psk));
                all &= t.matches();
            }
            if !all {
                println!("PSK MISMATCH");
                return Err(CliError::Input("classic peer derived a different PSK".into()));
            }
            println!("PSK MATCH");
        }
        Command::ServeHub { listen } => {
            let l = TcpListener::bind(&listen).map_err(|e| CliError::Input(format!("{listen}: {e}")))?;
            log::info!("hub listening on {listen}");
            serve_tcp(Hub::new(HubConfig::default()), l);
        }
        Command::ServeBroker {
            listen,
            hub,
            agent_token,
            customer_token,
            round_timeout_ms,
        } => {
            let link = TcpConnector { addr: hub, profile: None }
                .connect("broker")
                .map_err(|e| CliError::Input(e.to_string()))?;
            let broker = Arc::new(Broker::new(
                BrokerConfig {
                    round_timeout: Duration::from_millis(round_timeout_ms),
                    seed: seed(),
                    ..BrokerConfig::default()
                },
                Box::new(StaticTokens::new().with(&customer_token, Principal::unrestricted("customer"))),
                TaskSigner::new(agent_token.as_bytes()),
                link,
            ));
            let l = TcpListener::bind(&listen).map_err(|e| CliError::Input(format!("{listen}: {e}")))?;
            log::info!("broker listening on {listen}");
            serve_broker(broker, TaskSigner::new(agent_token.as_bytes()), l);
        }
        Command::ServeAgent {
            name,
            store,
            hub,
            broker,
            agent_token,
        } => {
            let store = AgentShareStore::open(store).map_err(|e| CliError::Stack(e.to_string()))?;
            let signer = TaskSigner::new(agent_token.as_bytes());
            let connector: Arc<dyn Connector> = Arc::new(TcpConnector { addr: hub, profile: None });
            let agent = Arc::new(Agent::new(&name, signer.clone(), store, connector));
            run_agent(agent, &signer, &broker)?;
        }
        Command::Bench(BenchCommand::Run {
            trials,
            jobs,
            profile,
            curve,
            out,
        }) => {
            let mut config = MatrixConfig {
                trials,
                jobs,
                seed: seed(),
                ..MatrixConfig::default()
            };
            if !profile.is_empty() {
                config.profiles = profile;
            }
            if !curve.is_empty() {
                config.curves = curve;
            }
            if config.trials == 0 {
                return Err(CliError::Input("--trials must be positive".into()));
            }
            let rows = bench::run_matrix(&config).map_err(|e| CliError::Stack(e.to_string()))?;
            let written = match out {
                Some(path) => File::create(&path)
                    .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
                    .and_then(|f| bench::write_csv(&rows, BufWriter::new(f)).map_err(|e| CliError::Stack(e.to_string()))),
                None => bench::write_csv(&rows, io::stdout().lock()).map_err(|e| CliError::Stack(e.to_string())),
            };
            written?;
        }
        Command::Bench(BenchCommand::Compare { csv }) => {
            let f = File::open(&csv).map_err(|e| CliError::Input(format!("{}: {e}", csv.display())))?;
            let rows = bench::read_csv(f).map_err(|e| CliError::Input(e.to_string()))?;
            print!("{}", report::render(&report::compare(&rows), &rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
