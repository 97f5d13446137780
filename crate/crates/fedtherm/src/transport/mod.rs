//! Message delivery between the federation server and its clients.
//!
//! Every backend moves whole encoded frames, so the in-process registry
//! exercises exactly the same codec as TCP.

mod faulty;
mod memory;
mod tcp;

pub use faulty::{FaultyLink, LinkModel};
pub use memory::{memory_pair, MemoryConnection, MemoryListener, Registry};
pub use tcp::{TcpConnection, TcpServer};

use std::time::Duration;

use fedtherm_core::wire::{Message, WireError};

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("connection closed")]
    Closed,
    #[error("no endpoint named `{0}`")]
    UnknownEndpoint(String),
    #[error("endpoint `{0}` is already bound")]
    AddressInUse(String),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One side of a bidirectional, ordered message stream.
pub trait Connection: Send {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError>;

    /// Blocks until a message arrives or `timeout` elapses.
    fn recv(&mut self, timeout: Duration) -> Result<Message, TransportError>;

    /// Network time that was simulated rather than waited for in real time.
    /// Only fault-injecting wrappers report anything here.
    fn simulated_time(&self) -> Duration {
        Duration::ZERO
    }
}

impl<C: Connection + ?Sized> Connection for Box<C> {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        (**self).send(msg)
    }

    fn recv(&mut self, timeout: Duration) -> Result<Message, TransportError> {
        (**self).recv(timeout)
    }

    fn simulated_time(&self) -> Duration {
        (**self).simulated_time()
    }
}
