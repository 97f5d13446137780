use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use fedtherm_core::wire::{decode_header, Message, HEADER_LEN, TRAILER_LEN};

use super::{Connection, TransportError};

/// A framed TCP stream. Partially received frames survive a timed-out
/// `recv` and are completed by the next call.
#[derive(Debug)]
pub struct TcpConnection {
    stream: TcpStream,
    buf: Vec<u8>,
}

impl TcpConnection {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, TransportError> {
        Self::from_stream(TcpStream::connect(addr)?)
    }

    /// Retries refused connections until `timeout`, for clients started
    /// alongside their server.
    pub fn connect_retrying(addr: &str, timeout: Duration) -> Result<Self, TransportError> {
        let deadline = Instant::now() + timeout;
        loop {
            match TcpStream::connect(addr) {
                Ok(stream) => return Self::from_stream(stream),
                Err(e) if e.kind() == ErrorKind::ConnectionRefused && Instant::now() < deadline => {
                    std::thread::sleep(Duration::from_millis(50));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    pub fn from_stream(stream: TcpStream) -> Result<Self, TransportError> {
        stream.set_nodelay(true)?;
        Ok(Self { stream, buf: Vec::new() })
    }

    pub fn peer_addr(&self) -> Option<SocketAddr> {
        self.stream.peer_addr().ok()
    }

    /// Length of the complete frame at the front of the buffer, if any.
    fn buffered_frame_len(&self) -> Result<Option<usize>, TransportError> {
        if self.buf.len() < HEADER_LEN {
            return Ok(None);
        }
        let (_, payload_len) = decode_header(&self.buf[..HEADER_LEN])?;
        let total = HEADER_LEN + payload_len + TRAILER_LEN;
        Ok((self.buf.len() >= total).then_some(total))
    }
}

impl Connection for TcpConnection {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        let bytes = msg.encode()?;
        self.stream.write_all(&bytes).map_err(closed_or_io)?;
        Ok(())
    }

    fn recv(&mut self, timeout: Duration) -> Result<Message, TransportError> {
        let deadline = Instant::now() + timeout;
        let mut chunk = [0u8; 64 * 1024];
        loop {
            if let Some(total) = self.buffered_frame_len()? {
                let msg = Message::decode(&self.buf[..total]);
                self.buf.drain(..total);
                return Ok(msg?);
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(TransportError::Timeout(timeout));
            }
            self.stream.set_read_timeout(Some(left))?;
            match self.stream.read(&mut chunk) {
                Ok(0) => return Err(TransportError::Closed),
                Ok(n) => self.buf.extend_from_slice(&chunk[..n]),
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(closed_or_io(e)),
            }
        }
    }
}

fn closed_or_io(e: std::io::Error) -> TransportError {
    match e.kind() {
        ErrorKind::BrokenPipe | ErrorKind::ConnectionReset | ErrorKind::ConnectionAborted | ErrorKind::UnexpectedEof => {
            TransportError::Closed
        }
        _ => TransportError::Io(e),
    }
}

/// Listening side of the TCP backend.
#[derive(Debug)]
pub struct TcpServer {
    listener: TcpListener,
}

impl TcpServer {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self, TransportError> {
        Ok(Self { listener: TcpListener::bind(addr)? })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, TransportError> {
        Ok(self.listener.local_addr()?)
    }

    /// Waits up to `timeout` for one client.
    pub fn accept(&self, timeout: Duration) -> Result<TcpConnection, TransportError> {
        let deadline = Instant::now() + timeout;
        self.listener.set_nonblocking(true)?;
        let result = loop {
            match self.listener.accept() {
                Ok((stream, _)) => break Ok(stream),
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        break Err(TransportError::Timeout(timeout));
                    }
                    std::thread::sleep(Duration::from_millis(5));
                }
                Err(e) => break Err(e.into()),
            }
        };
        self.listener.set_nonblocking(false)?;
        let stream = result?;
        stream.set_nonblocking(false)?;
        TcpConnection::from_stream(stream)
    }
}
