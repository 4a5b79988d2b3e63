//! A complete deployment in one process: hub, broker and agents, with
//! agent-to-hub links shaped by an optional network profile.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use tempfile::TempDir;

use tdh_core::protocols::SchemeParams;

use crate::agent::Agent;
use crate::auth::{Principal, StaticTokens, TaskSigner};
use crate::broker::{Broker, BrokerConfig, LocalEndpoint};
use crate::hub::{Hub, HubConfig};
use crate::messages::{
    encode, AgentTask, Failure, Operation, OperationRequest, OperationResult, SignedTask,
    TaskKind, TaskOutcome,
};
use crate::netem::NetworkProfile;
use crate::store::{AgentShareStore, StoreError};
use crate::transport::{Connector, InProcessConnector};
use crate::wire::RoomId;

pub const CUSTOMER_TOKEN: &str = "customer-token";
pub const AGENT_TOKEN: &[u8] = b"agent-token";

#[derive(Clone, Debug)]
pub struct StackConfig {
    pub agents: usize,
    pub profile: Option<NetworkProfile>,
    pub round_timeout: Duration,
    pub seed: Option<[u8; 32]>,
    pub faults: bool,
    /// Agent stores live under `<root>/<agent name>`; a temporary directory
    /// is used when unset.
    pub store_root: Option<PathBuf>,
}

impl Default for StackConfig {
    fn default() -> Self {
        StackConfig {
            agents: 3,
            profile: None,
            round_timeout: Duration::from_secs(30),
            seed: None,
            faults: false,
            store_root: None,
        }
    }
}

pub struct InProcessStack {
    pub config: StackConfig,
    pub hub: Arc<Hub>,
    pub broker: Arc<Broker>,
    pub agents: Vec<Arc<Agent>>,
    _tmp: Option<TempDir>,
}

pub fn agent_name(i: usize) -> String {
    format!("agent-{}", i + 1)
}

impl InProcessStack {
    pub fn start(config: StackConfig) -> Result<Self, StoreError> {
        let hub = Hub::new(HubConfig {
            faults_enabled: config.faults,
        });
        let (tmp, root) = match &config.store_root {
            Some(r) => (None, r.clone()),
            None => {
                let t = tempfile::tempdir()?;
                let r = t.path().to_path_buf();
                (Some(t), r)
            }
        };
        let shaped: Arc<dyn Connector> = Arc::new(InProcessConnector::new(hub.clone(), config.profile));
        let broker_link = InProcessConnector::new(hub.clone(), None)
            .connect("broker")
            .expect("in-process connections cannot fail");
        let auth = StaticTokens::new().with(CUSTOMER_TOKEN, Principal::unrestricted("customer"));
        let broker = Arc::new(Broker::new(
            BrokerConfig {
                round_timeout: config.round_timeout,
                seed: config.seed,
                ..BrokerConfig::default()
            },
            Box::new(auth),
            TaskSigner::new(AGENT_TOKEN),
            broker_link,
        ));
        let mut agents = Vec::new();
        for i in 0..config.agents {
            let name = agent_name(i);
            let store = AgentShareStore::open(root.join(&name))?;
            let agent = Arc::new(Agent::new(&name, TaskSigner::new(AGENT_TOKEN), store, shaped.clone()));
            broker.register(Arc::new(LocalEndpoint(agent.clone())));
            agents.push(agent);
        }
        Ok(InProcessStack {
            config,
            hub,
            broker,
            agents,
            _tmp: tmp,
        })
    }

    pub fn agent(&self, name: &str) -> Option<&Arc<Agent>> {
        self.agents.iter().find(|a| a.name() == name)
    }

    /// Runs one task on the committee's agents without the broker: no
    /// health checks, no early close, and each agent's own outcome. Agents
    /// that die map to `None`.
    pub fn fan_out(
        &self,
        key_id: &str,
        kind: TaskKind,
        committee: &[(u32, String)],
        request_id: [u8; 16],
    ) -> BTreeMap<String, Option<Result<TaskOutcome, Failure>>> {
        let room = RoomId(request_id);
        self.hub.open(room).expect("fresh request id");
        let signer = TaskSigner::new(AGENT_TOKEN);
        let mut names: Vec<&String> = committee.iter().map(|(_, n)| n).collect();
        names.sort();
        names.dedup();
        let handles: Vec<_> = names
            .into_iter()
            .filter_map(|n| self.agent(n).cloned())
            .enumerate()
            .map(|(i, agent)| {
                let task = AgentTask {
                    task_id: i as u64 + 1,
                    request_id,
                    key_id: key_id.to_owned(),
                    kind: kind.clone(),
                    committee: committee.to_vec(),
                    round_timeout_ms: self.config.round_timeout.as_millis() as u64,
                    seed: self.config.seed,
                };
                let body = encode(&task);
                let signed = SignedTask {
                    mac: signer.sign(&body),
                    body,
                };
                let name = agent.name().to_owned();
                (name, thread::spawn(move || agent.handle(&signed)))
            })
            .collect();
        let out = handles
            .into_iter()
            .map(|(n, h)| (n, h.join().ok().flatten().map(|r| r.outcome)))
            .collect();
        let _ = self.hub.close(room);
        out
    }

    pub fn request(&self, req: OperationRequest) -> OperationResult {
        self.broker.handle(&req)
    }

    pub fn keygen(&self, key_id: &str, params: SchemeParams) -> OperationResult {
        self.request(OperationRequest {
            op: Operation::Keygen,
            params: Some(params.into()),
            key_id: key_id.into(),
            remote_pubkey: None,
            new_committee: None,
            credential: CUSTOMER_TOKEN.into(),
        })
    }

    /// `remote` is an encoded group point.
    pub fn exchange(&self, key_id: &str, remote: &[u8]) -> OperationResult {
        self.request(OperationRequest {
            op: Operation::Exchange,
            params: None,
            key_id: key_id.into(),
            remote_pubkey: Some(remote.to_vec()),
            new_committee: None,
            credential: CUSTOMER_TOKEN.into(),
        })
    }

    /// `remote` is a classic public key: X25519 bytes or a SEC1 point.
    pub fn psk_exchange(&self, key_id: &str, remote: &[u8]) -> OperationResult {
        self.request(OperationRequest {
            op: Operation::PskExchange,
            params: None,
            key_id: key_id.into(),
            remote_pubkey: Some(remote.to_vec()),
            new_committee: None,
            credential: CUSTOMER_TOKEN.into(),
        })
    }

    pub fn reshare(&self, key_id: &str, t: u16, n: u16) -> OperationResult {
        self.request(OperationRequest {
            op: Operation::Reshare,
            params: None,
            key_id: key_id.into(),
            remote_pubkey: None,
            new_committee: Some((t, n)),
            credential: CUSTOMER_TOKEN.into(),
        })
    }
}
