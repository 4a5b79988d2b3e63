use std::net::TcpListener;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;

use tdh_core::group::{CurveId, GroupPoint, GroupScalar};
use tdh_core::protocols::SchemeParams;
use tdh_platform::agent::Agent;
use tdh_platform::auth::{Principal, StaticTokens, TaskSigner};
use tdh_platform::broker::{Broker, BrokerConfig};
use tdh_platform::hub::{Hub, HubConfig};
use tdh_platform::messages::{FailureKind, Operation, OperationRequest, OperationResult};
use tdh_platform::net::{run_agent, serve_broker, BrokerClient};
use tdh_platform::store::AgentShareStore;
use tdh_platform::transport::{serve_tcp, Connector, TcpConnector};

fn listen() -> (TcpListener, String) {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let a = l.local_addr().unwrap().to_string();
    (l, a)
}

fn request(op: Operation, key_id: &str, credential: &str) -> OperationRequest {
    OperationRequest {
        op,
        params: None,
        key_id: key_id.into(),
        remote_pubkey: None,
        new_committee: None,
        credential: credential.into(),
    }
}

#[test]
fn services_over_tcp() {
    let tmp = tempfile::tempdir().unwrap();
    let (hub_l, hub_addr) = listen();
    thread::spawn(move || serve_tcp(Hub::new(HubConfig::default()), hub_l));
    let hub: Arc<dyn Connector> = Arc::new(TcpConnector {
        addr: hub_addr,
        profile: None,
    });

    let (broker_l, broker_addr) = listen();
    let broker = Arc::new(Broker::new(
        BrokerConfig {
            round_timeout: Duration::from_secs(10),
            ..BrokerConfig::default()
        },
        Box::new(StaticTokens::new().with("cust", Principal::unrestricted("c"))),
        TaskSigner::new(b"agents"),
        hub.connect("broker").unwrap(),
    ));
    let served = broker.clone();
    thread::spawn(move || serve_broker(served, TaskSigner::new(b"agents"), broker_l));

    // An impostor without the agent token is never registered.
    let impostor = Arc::new(Agent::new(
        "impostor",
        TaskSigner::new(b"guess"),
        AgentShareStore::open(tmp.path().join("x")).unwrap(),
        hub.clone(),
    ));
    let addr = broker_addr.clone();
    thread::spawn(move || run_agent(impostor, &TaskSigner::new(b"guess"), &addr));

    for i in 1..=3 {
        let name = format!("agent-{i}");
        let agent = Arc::new(Agent::new(
            &name,
            TaskSigner::new(b"agents"),
            AgentShareStore::open(tmp.path().join(&name)).unwrap(),
            hub.clone(),
        ));
        let addr = broker_addr.clone();
        thread::spawn(move || run_agent(agent, &TaskSigner::new(b"agents"), &addr));
    }
    let deadline = Instant::now() + Duration::from_secs(5);
    while broker.agent_names().len() < 3 && Instant::now() < deadline {
        thread::sleep(Duration::from_millis(20));
    }
    thread::sleep(Duration::from_millis(100));
    let mut names = broker.agent_names();
    names.sort();
    assert_eq!(names, ["agent-1", "agent-2", "agent-3"]);

    let mut client = BrokerClient::connect(&broker_addr).unwrap();
    let params = SchemeParams::threshold(CurveId::Curve25519, 1, 3);
    let mut keygen = request(Operation::Keygen, "k", "cust");
    keygen.params = Some(params.into());
    let OperationResult::Keygen { public_key, .. } = client.request(&keygen).unwrap() else {
        panic!("keygen failed");
    };
    let pk = GroupPoint::decode(&public_key, CurveId::Curve25519).unwrap();

    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let y = GroupScalar::random(CurveId::Curve25519, &mut rng).unwrap();
    let mut exchange = request(Operation::Exchange, "k", "cust");
    exchange.remote_pubkey = Some(GroupPoint::mul_generator(&y).encode().as_bytes().to_vec());
    let OperationResult::Exchange { shared_point, .. } = client.request(&exchange).unwrap() else {
        panic!("exchange failed");
    };
    assert_eq!(shared_point, pk.mul(&y).unwrap().encode().as_bytes());

    match client.request(&request(Operation::Exchange, "k", "wrong")).unwrap() {
        OperationResult::Failure(f) => assert_eq!(f.kind, FailureKind::AuthFailure),
        other => panic!("{other:?}"),
    }
}
