//! Broker service over TCP.
//!
//! Every connection opens with a [`BrokerHello`]. Customers then send
//! [`OperationRequest`]s and read one [`OperationResult`] per request, in
//! order. Agents prove their name with an HMAC under the agent token and
//! then receive tasks and answer them on the same connection, possibly out
//! of order; a per-connection sequence number pairs them up.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use crossbeam_channel::{bounded, Receiver, Sender};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::Agent;
use crate::auth::TaskSigner;
use crate::broker::{AgentEndpoint, Broker};
use crate::messages::{
    decode, encode, AgentReply, BrokerHello, CodecError, OperationRequest, OperationResult,
    SignedTask,
};
use crate::transport::{connect_stream, TransportError};
use crate::wire::{read_message, write_message, WireError};

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("connection closed by peer")]
    Closed,
    #[error("agent {0} failed to prove its name")]
    BadProof(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct RemoteTask {
    seq: u64,
    task: SignedTask,
}

#[derive(Debug, Serialize, Deserialize)]
struct RemoteReply {
    seq: u64,
    reply: AgentReply,
}

fn send<T: Serialize>(w: &mut impl Write, value: &T) -> Result<(), NetError> {
    write_message(w, &encode(value))?;
    Ok(())
}

fn recv<T: serde::de::DeserializeOwned>(r: &mut impl std::io::Read) -> Result<T, NetError> {
    let bytes = read_message(r)?.ok_or(NetError::Closed)?;
    Ok(decode(&bytes)?)
}

/// An agent connected to the broker over TCP.
pub struct RemoteEndpoint {
    name: String,
    writer: Mutex<BufWriter<TcpStream>>,
    pending: Arc<Mutex<HashMap<u64, Sender<AgentReply>>>>,
    seq: AtomicU64,
}

impl AgentEndpoint for RemoteEndpoint {
    fn name(&self) -> &str {
        &self.name
    }

    fn dispatch(&self, task: SignedTask) -> Receiver<AgentReply> {
        let (tx, rx) = bounded(1);
        let seq = self.seq.fetch_add(1, Ordering::Relaxed);
        self.pending.lock().unwrap().insert(seq, tx);
        let mut w = self.writer.lock().unwrap();
        if send(&mut *w, &RemoteTask { seq, task }).is_err() {
            // Dropping the sender tells the broker the agent is gone.
            self.pending.lock().unwrap().remove(&seq);
        }
        rx
    }
}

/// Accepts customers and agents until the listener fails. Agents must sign
/// their name with `agent_signer`.
pub fn serve_broker(broker: Arc<Broker>, agent_signer: TaskSigner, listener: TcpListener) {
    for stream in listener.incoming() {
        let Ok(stream) = stream else { continue };
        let broker = broker.clone();
        let signer = agent_signer.clone();
        thread::spawn(move || {
            let _ = stream.set_nodelay(true);
            if let Err(e) = serve_connection(&broker, &signer, stream) {
                log::debug!("broker connection ended: {e}");
            }
        });
    }
}

fn serve_connection(broker: &Broker, signer: &TaskSigner, stream: TcpStream) -> Result<(), NetError> {
    let writer = stream.try_clone().map_err(|e| TransportError::Connect(e.to_string()))?;
    let mut r = BufReader::new(stream);
    match recv::<BrokerHello>(&mut r)? {
        BrokerHello::Customer => {
            let mut w = BufWriter::new(writer);
            loop {
                let req: OperationRequest = match recv(&mut r) {
                    Err(NetError::Closed) => return Ok(()),
                    other => other?,
                };
                send(&mut w, &broker.handle(&req))?;
            }
        }
        BrokerHello::Agent { name, proof } => {
            if !signer.verify(name.as_bytes(), &proof) {
                let _ = writer.shutdown(std::net::Shutdown::Both);
                return Err(NetError::BadProof(name));
            }
            let pending = Arc::new(Mutex::new(HashMap::new()));
            broker.register(Arc::new(RemoteEndpoint {
                name: name.clone(),
                writer: Mutex::new(BufWriter::new(writer)),
                pending: pending.clone(),
                seq: AtomicU64::new(1),
            }));
            log::info!("agent {name} registered");
            let result = loop {
                match recv::<RemoteReply>(&mut r) {
                    Ok(m) => {
                        if let Some(tx) = pending.lock().unwrap().remove(&m.seq) {
                            let _ = tx.send(m.reply);
                        }
                    }
                    Err(NetError::Closed) => break Ok(()),
                    Err(e) => break Err(e),
                }
            };
            pending.lock().unwrap().clear();
            log::info!("agent {name} disconnected");
            result
        }
    }
}

/// Connects `agent` to the broker at `addr` and serves tasks until the
/// connection drops. Each task runs on its own thread.
pub fn run_agent(agent: Arc<Agent>, signer: &TaskSigner, addr: &str) -> Result<(), NetError> {
    let stream = connect_stream(addr)?;
    let writer = stream.try_clone().map_err(|e| TransportError::Connect(e.to_string()))?;
    let writer = Arc::new(Mutex::new(BufWriter::new(writer)));
    send(
        &mut *writer.lock().unwrap(),
        &BrokerHello::Agent {
            name: agent.name().to_owned(),
            proof: signer.sign(agent.name().as_bytes()),
        },
    )?;
    let mut r = BufReader::new(stream);
    loop {
        let RemoteTask { seq, task } = match recv(&mut r) {
            Err(NetError::Closed) => return Ok(()),
            other => other?,
        };
        let agent = agent.clone();
        let writer = writer.clone();
        thread::spawn(move || {
            if let Some(reply) = agent.handle(&task) {
                let _ = send(&mut *writer.lock().unwrap(), &RemoteReply { seq, reply });
            }
        });
    }
}

/// A customer connection.
pub struct BrokerClient {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl BrokerClient {
    pub fn connect(addr: &str) -> Result<Self, NetError> {
        let stream = connect_stream(addr)?;
        let writer = stream.try_clone().map_err(|e| TransportError::Connect(e.to_string()))?;
        let mut client = BrokerClient {
            reader: BufReader::new(stream),
            writer: BufWriter::new(writer),
        };
        send(&mut client.writer, &BrokerHello::Customer)?;
        Ok(client)
    }

    pub fn request(&mut self, req: &OperationRequest) -> Result<OperationResult, NetError> {
        send(&mut self.writer, req)?;
        recv(&mut self.reader)
    }
}
