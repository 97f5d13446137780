use std::collections::HashMap;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use fedtherm_core::wire::Message;

use super::{Connection, TransportError};

/// In-process connection carrying encoded frames over channels.
#[derive(Debug)]
pub struct MemoryConnection {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

/// Two connected endpoints.
pub fn memory_pair() -> (MemoryConnection, MemoryConnection) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    (MemoryConnection { tx: a_tx, rx: a_rx }, MemoryConnection { tx: b_tx, rx: b_rx })
}

impl Connection for MemoryConnection {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        let bytes = msg.encode()?;
        self.tx.send(bytes).map_err(|_| TransportError::Closed)
    }

    fn recv(&mut self, timeout: Duration) -> Result<Message, TransportError> {
        match self.rx.recv_timeout(timeout) {
            Ok(bytes) => Ok(Message::decode(&bytes)?),
            Err(RecvTimeoutError::Timeout) => Err(TransportError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::Closed),
        }
    }
}

/// Accepts in-process connections made to one registry name.
#[derive(Debug)]
pub struct MemoryListener {
    name: String,
    incoming: Receiver<MemoryConnection>,
    registry: Registry,
}

impl MemoryListener {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn accept(&self, timeout: Duration) -> Result<MemoryConnection, TransportError> {
        match self.incoming.recv_timeout(timeout) {
            Ok(conn) => Ok(conn),
            Err(RecvTimeoutError::Timeout) => Err(TransportError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::Closed),
        }
    }
}

impl Drop for MemoryListener {
    fn drop(&mut self) {
        self.registry.endpoints.lock().expect("registry lock poisoned").remove(&self.name);
    }
}

/// Named in-process endpoints, the in-memory counterpart of host:port.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    endpoints: Arc<Mutex<HashMap<String, Sender<MemoryConnection>>>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Process-wide registry.
    pub fn global() -> &'static Registry {
        static GLOBAL: OnceLock<Registry> = OnceLock::new();
        GLOBAL.get_or_init(Registry::new)
    }

    pub fn bind(&self, name: &str) -> Result<MemoryListener, TransportError> {
        let mut endpoints = self.endpoints.lock().expect("registry lock poisoned");
        if endpoints.contains_key(name) {
            return Err(TransportError::AddressInUse(name.to_string()));
        }
        let (tx, rx) = mpsc::channel();
        endpoints.insert(name.to_string(), tx);
        Ok(MemoryListener { name: name.to_string(), incoming: rx, registry: self.clone() })
    }

    pub fn connect(&self, name: &str) -> Result<MemoryConnection, TransportError> {
        let endpoints = self.endpoints.lock().expect("registry lock poisoned");
        let listener = endpoints.get(name).ok_or_else(|| TransportError::UnknownEndpoint(name.to_string()))?;
        let (client, server) = memory_pair();
        listener.send(server).map_err(|_| TransportError::Closed)?;
        Ok(client)
    }
}
