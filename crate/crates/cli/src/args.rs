use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "peershare", version, about = "Share application data with social contacts")]
pub struct Cli {
    /// TOML configuration file (default: $PEERSHARE_CONFIG).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Server URL agents connect to, e.g. https://127.0.0.1:8443.
    #[arg(long, global = true, value_name = "URL")]
    pub server_url: Option<String>,
    /// Pinned server certificate: PEM file or sha256:<hex>. Repeatable.
    #[arg(long, global = true, value_name = "PIN")]
    pub pin: Vec<String>,
    /// Provider service base URL, e.g. http://127.0.0.1:8080.
    #[arg(long, global = true, value_name = "URL")]
    pub provider_url: Option<String>,
    /// Machine-readable output: one compact JSON document per result.
    #[arg(long, global = true)]
    pub json: bool,
    /// More logging (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the PeerShare server until interrupted.
    Serve(ServeArgs),
    /// Run the mock social provider service until interrupted.
    Provider(ProviderArgs),
    /// Run or control a user's agent.
    Agent {
        #[command(subcommand)]
        command: AgentCommand,
    },
    /// Act as an application talking to an agent.
    App(AppArgs),
    /// Change or inspect the mock social graph.
    Graph {
        #[command(subcommand)]
        command: GraphCommand,
    },
    /// Time uploads and downloads over loopback (or against --server-url).
    Bench(BenchArgs),
    /// Look into stores and certificates.
    Inspect {
        #[command(subcommand)]
        command: InspectCommand,
    },
    /// Run scenario scripts.
    Scenario(ScenarioArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub listen: Option<SocketAddr>,
    /// Server database file.
    #[arg(long)]
    pub db: Option<PathBuf>,
    #[arg(long)]
    pub cert: Option<PathBuf>,
    #[arg(long)]
    pub key: Option<PathBuf>,
    /// Create a self-signed certificate and key if the files do not exist.
    #[arg(long)]
    pub generate_cert: bool,
    /// Provider base URL or `in-process`.
    #[arg(long)]
    pub provider: Option<String>,
    #[arg(long)]
    pub change_poll_ms: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ProviderArgs {
    #[arg(long)]
    pub listen: Option<SocketAddr>,
    #[arg(long)]
    pub network: Option<String>,
}

#[derive(Debug, Args)]
pub struct Target {
    /// Whose agent to talk to; selects the socket under the agent data dir.
    #[arg(long, short = 'u')]
    pub user: Option<String>,
    /// Explicit agent socket path.
    #[arg(long)]
    pub socket: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum AgentCommand {
    /// Run an agent daemon for one user.
    Run {
        #[arg(long, short = 'u')]
        user: String,
        /// Log in right away with this token.
        #[arg(long)]
        token: Option<String>,
        /// Ask the provider for a token and log in.
        #[arg(long, conflicts_with = "token")]
        issue_token: bool,
        #[arg(long)]
        device_id: Option<String>,
        #[arg(long)]
        refresh_interval: Option<i64>,
        #[arg(long)]
        socket: Option<PathBuf>,
    },
    /// Log the agent in (token given, or issued by the provider).
    Login {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        token: Option<String>,
    },
    Logout {
        #[command(flatten)]
        target: Target,
    },
    Status {
        #[command(flatten)]
        target: Target,
    },
    Flush {
        #[command(flatten)]
        target: Target,
    },
    Refresh {
        #[command(flatten)]
        target: Target,
    },
    Whoami {
        #[command(flatten)]
        target: Target,
    },
    /// Sharing policies the user can choose from.
    Policies {
        #[command(flatten)]
        target: Target,
    },
    /// Set the user's own policy on one of their objects.
    Override {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        object_id: u64,
        /// `all_friends` or `list:<list id>`.
        #[arg(long)]
        policy: String,
    },
}

#[derive(Debug, Args)]
pub struct AppArgs {
    #[command(flatten)]
    pub target: Target,
    /// Calling application as `platform/app_id`.
    #[arg(long, short = 'a')]
    pub app: String,
    /// Application secret; defaults to the one in the config file.
    #[arg(long)]
    pub secret: Option<String>,
    #[command(subcommand)]
    pub command: AppCommand,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SpecificityArg {
    Device,
    User,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SensitivityArg {
    Public,
    Private,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BindingArg {
    Owner,
    User,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Data type; built-in types fill in their descriptor.
    #[arg(long = "type", short = 't')]
    pub data_type: Option<String>,
    /// Value as UTF-8 text.
    #[arg(long, conflicts_with_all = ["value_hex", "value_b64"])]
    pub value: Option<String>,
    #[arg(long, conflicts_with = "value_b64")]
    pub value_hex: Option<String>,
    #[arg(long)]
    pub value_b64: Option<String>,
    #[arg(long)]
    pub algorithm: Option<String>,
    #[arg(long, value_enum)]
    pub specificity: Option<SpecificityArg>,
    #[arg(long, value_enum)]
    pub sensitivity: Option<SensitivityArg>,
    #[arg(long, value_enum)]
    pub binding: Option<BindingArg>,
    #[arg(long)]
    pub description: Option<String>,
    /// `all_friends` or `list:<list id>`.
    #[arg(long)]
    pub policy: Option<String>,
    /// Unix seconds; 0 never expires.
    #[arg(long)]
    pub expires_at: Option<i64>,
    #[arg(long)]
    pub device_id: Option<String>,
    /// Owner of a user-asserted item, as `network:social_id`.
    #[arg(long)]
    pub owner: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum AppCommand {
    /// Store a new item; prints its local handle.
    Add(DataArgs),
    /// Change an item this application created.
    Update {
        local_id: u64,
        #[command(flatten)]
        data: DataArgs,
    },
    Remove {
        local_id: u64,
    },
    /// Items visible to the user: their own and their friends'.
    List {
        #[arg(long = "type", short = 't')]
        data_type: Option<String>,
        /// Only items received from others.
        #[arg(long)]
        shared_with_me: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum GraphCommand {
    AddUser {
        user: String,
        #[arg(long)]
        name: Option<String>,
    },
    Befriend {
        a: String,
        b: String,
    },
    Unfriend {
        a: String,
        b: String,
    },
    /// Prints the new list id.
    CreateList {
        owner: String,
        name: String,
    },
    DeleteList {
        list_id: String,
    },
    AddToList {
        list_id: String,
        user: String,
    },
    RemoveFromList {
        list_id: String,
        user: String,
    },
    /// Issue an access token for `user` to an application.
    Token {
        user: String,
        /// Defaults to the configured PeerShare application id.
        #[arg(long)]
        app_id: Option<String>,
        #[arg(long, default_value_t = 86400)]
        ttl: i64,
    },
    Revoke {
        token: String,
    },
    Friends {
        user: String,
    },
    Lists {
        user: String,
    },
    Snapshot,
    /// Simulate a provider outage.
    Outage {
        #[arg(value_parser = ["on", "off"])]
        state: String,
    },
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 30)]
    pub runs: usize,
    /// Items uploaded per run.
    #[arg(long, default_value_t = 1)]
    pub up: usize,
    /// Items each download returns.
    #[arg(long, default_value_t = 5)]
    pub down: usize,
}

#[derive(Debug, Subcommand)]
pub enum InspectCommand {
    /// Dump a server database (the server must be stopped).
    Server {
        #[arg(long)]
        db: Option<PathBuf>,
    },
    /// Dump a user's agent store (the agent must be stopped).
    Agent {
        #[arg(long, short = 'u')]
        user: String,
    },
    /// Print a certificate's pin.
    Cert { path: PathBuf },
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario files or directories of `*.scenario` files.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
    /// Keep the working directory of each scenario.
    #[arg(long)]
    pub keep: bool,
}
