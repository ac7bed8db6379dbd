//! Wire protocol between the data owner and the computational server.
//!
//! Frame layout (all integers little-endian):
//!
//! ```text
//! "SPLT" | version u8 = 1 | kind u8 | batch_id u64 | ndim u8 | dims u32 * ndim
//!        | payload f32 * prod(dims) | crc32 u32 over every preceding byte
//! ```
//!
//! A message with no dimensions carries no payload.

use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"SPLT";
pub const VERSION: u8 = 1;
const FIXED_HEADER: usize = 4 + 1 + 1 + 8 + 1;
const CRC_LEN: usize = 4;
/// Refuse to allocate frames larger than this when reading from a stream.
const MAX_PAYLOAD_BYTES: usize = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageKind {
    ForwardActivation = 0,
    BackwardGradient = 1,
    Prediction = 2,
    Control = 3,
}

impl MessageKind {
    pub const ALL: [MessageKind; 4] = [
        MessageKind::ForwardActivation,
        MessageKind::BackwardGradient,
        MessageKind::Prediction,
        MessageKind::Control,
    ];

    fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.get(b as usize).copied()
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("bad frame magic {0:02x?}")]
    Magic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    Version(u8),
    #[error("unknown message kind {0}")]
    Kind(u8),
    #[error("crc mismatch: frame says {stored:#010x}, computed {computed:#010x}")]
    Crc { stored: u32, computed: u32 },
    #[error("frame truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("declared dims hold {declared} values but the payload has {actual}")]
    Length { declared: usize, actual: usize },
}

/// One framed unit on the wire.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMessage {
    pub kind: MessageKind,
    pub batch_id: u64,
    shape: Vec<u32>,
    payload: Vec<f32>,
}

fn payload_len(shape: &[u32]) -> usize {
    if shape.is_empty() {
        0
    } else {
        shape.iter().map(|&d| d as usize).product()
    }
}

impl ChannelMessage {
    pub fn new(kind: MessageKind, batch_id: u64, shape: Vec<u32>, payload: Vec<f32>) -> Result<Self> {
        if shape.len() > u8::MAX as usize {
            return Err(Error::Protocol(format!(
                "{} dimensions exceed the frame limit",
                shape.len()
            )));
        }
        let declared = payload_len(&shape);
        if declared != payload.len() {
            return Err(CodecError::Length {
                declared,
                actual: payload.len(),
            }
            .into());
        }
        Ok(Self {
            kind,
            batch_id,
            shape,
            payload,
        })
    }

    pub fn from_tensor(kind: MessageKind, batch_id: u64, tensor: &Tensor) -> Self {
        let shape = tensor.shape().iter().map(|&d| d as u32).collect();
        Self {
            kind,
            batch_id,
            shape,
            payload: tensor.data().to_vec(),
        }
    }

    /// A payload-free control message.
    pub fn control(batch_id: u64) -> Self {
        Self {
            kind: MessageKind::Control,
            batch_id,
            shape: Vec::new(),
            payload: Vec::new(),
        }
    }

    pub fn shape(&self) -> &[u32] {
        &self.shape
    }

    pub fn payload(&self) -> &[f32] {
        &self.payload
    }

    pub fn into_tensor(self) -> Result<Tensor> {
        let shape = self.shape.iter().map(|&d| d as usize).collect();
        Tensor::new(shape, self.payload)
    }

    pub fn encoded_len(&self) -> usize {
        FIXED_HEADER + 4 * self.shape.len() + 4 * self.payload.len() + CRC_LEN
    }
}

pub fn encode(msg: &ChannelMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(msg.encoded_len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg.kind as u8);
    out.extend_from_slice(&msg.batch_id.to_le_bytes());
    out.push(msg.shape.len() as u8);
    for d in &msg.shape {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &msg.payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Decodes one complete frame.
///
/// The checksum is verified before any field is interpreted, so corruption
/// anywhere in the frame surfaces as [`CodecError::Crc`].
pub fn decode(bytes: &[u8]) -> Result<ChannelMessage, CodecError> {
    let min = FIXED_HEADER + CRC_LEN;
    if bytes.len() < min {
        return Err(CodecError::Truncated {
            needed: min,
            available: bytes.len(),
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - CRC_LEN);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CodecError::Crc { stored, computed });
    }
    let magic: [u8; 4] = body[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(CodecError::Magic(magic));
    }
    if body[4] != VERSION {
        return Err(CodecError::Version(body[4]));
    }
    let kind = MessageKind::from_byte(body[5]).ok_or(CodecError::Kind(body[5]))?;
    let batch_id = u64::from_le_bytes(body[6..14].try_into().expect("8 bytes"));
    let ndim = body[14] as usize;
    let dims_end = FIXED_HEADER + 4 * ndim;
    if body.len() < dims_end {
        return Err(CodecError::Truncated {
            needed: dims_end + CRC_LEN,
            available: bytes.len(),
        });
    }
    let shape: Vec<u32> = body[FIXED_HEADER..dims_end]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let declared = payload_len(&shape);
    let rest = &body[dims_end..];
    if rest.len() % 4 != 0 || rest.len() / 4 != declared {
        return Err(CodecError::Length {
            declared,
            actual: rest.len() / 4,
        });
    }
    let payload = rest
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(ChannelMessage {
        kind,
        batch_id,
        shape,
        payload,
    })
}

/// Reads exactly one frame from a byte stream. A clean end-of-stream before
/// the first byte is reported as [`Error::Closed`].
pub fn read_frame<R: Read>(reader: &mut R) -> Result<ChannelMessage> {
    let mut frame = vec![0u8; FIXED_HEADER];
    match reader.read_exact(&mut frame[..1]) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Err(Error::Closed),
        Err(e) => return Err(e.into()),
    }
    reader.read_exact(&mut frame[1..])?;
    let magic: [u8; 4] = frame[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(CodecError::Magic(magic).into());
    }
    let ndim = frame[14] as usize;
    frame.resize(FIXED_HEADER + 4 * ndim, 0);
    reader.read_exact(&mut frame[FIXED_HEADER..])?;
    let dims: Vec<u32> = frame[FIXED_HEADER..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let payload_bytes = 4 * payload_len(&dims);
    if payload_bytes > MAX_PAYLOAD_BYTES {
        return Err(Error::Protocol(format!(
            "frame payload of {payload_bytes} bytes is too large"
        )));
    }
    let start = frame.len();
    frame.resize(start + payload_bytes + CRC_LEN, 0);
    reader.read_exact(&mut frame[start..])?;
    Ok(decode(&frame)?)
}

/// Ordered, exactly-once message delivery between the two parties.
pub trait Transport: Send {
    fn send(&mut self, msg: &ChannelMessage) -> Result<()>;
    fn recv(&mut self) -> Result<ChannelMessage>;
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn send(&mut self, msg: &ChannelMessage) -> Result<()> {
        (**self).send(msg)
    }

    fn recv(&mut self) -> Result<ChannelMessage> {
        (**self).recv()
    }
}

/// One end of an in-memory connection. Frames are fully encoded and decoded
/// so the in-process path exercises the same codec as the socket path.
pub struct InProcess {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

pub fn in_process_pair() -> (InProcess, InProcess) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    (InProcess { tx: a_tx, rx: a_rx }, InProcess { tx: b_tx, rx: b_rx })
}

impl Transport for InProcess {
    fn send(&mut self, msg: &ChannelMessage) -> Result<()> {
        self.tx.send(encode(msg)).map_err(|_| Error::Closed)
    }

    fn recv(&mut self) -> Result<ChannelMessage> {
        let frame = self.rx.recv().map_err(|_| Error::Closed)?;
        Ok(decode(&frame)?)
    }
}

/// TCP connection carrying back-to-back frames.
pub struct Socket {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Socket {
    pub fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        })
    }

    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        Self::new(TcpStream::connect(addr)?)
    }

    pub fn accept(listener: &TcpListener) -> Result<Self> {
        let (stream, _) = listener.accept()?;
        Self::new(stream)
    }
}

impl Transport for Socket {
    fn send(&mut self, msg: &ChannelMessage) -> Result<()> {
        self.writer.write_all(&encode(msg))?;
        self.writer.flush()?;
        Ok(())
    }

    fn recv(&mut self) -> Result<ChannelMessage> {
        read_frame(&mut self.reader)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TransportMode {
    #[default]
    InProcess,
    Socket,
}

impl TransportMode {
    /// Environment variable consulted when no explicit mode is given.
    pub const ENV: &'static str = "SPLITLAB_TRANSPORT";

    pub fn from_env() -> Result<Self> {
        match std::env::var(Self::ENV) {
            Ok(v) => v.parse(),
            Err(_) => Ok(Self::default()),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::InProcess => "in-process",
            Self::Socket => "socket",
        }
    }
}

impl FromStr for TransportMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in-process" | "inprocess" | "memory" => Ok(Self::InProcess),
            "socket" | "tcp" => Ok(Self::Socket),
            other => Err(Error::Config(format!("unknown transport mode {other:?}"))),
        }
    }
}

/// Shared append-only log of intercepted forward activations.
#[derive(Clone, Default)]
pub struct Tap {
    log: Arc<Mutex<Vec<ChannelMessage>>>,
}

impl std::fmt::Debug for Tap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tap").field("messages", &self.len()).finish()
    }
}

impl Tap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.log.lock().expect("tap lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn messages(&self) -> Vec<ChannelMessage> {
        self.log.lock().expect("tap lock").clone()
    }

    fn record(&self, msg: &ChannelMessage) {
        if msg.kind == MessageKind::ForwardActivation {
            self.log.lock().expect("tap lock").push(msg.clone());
        }
    }
}

/// Wraps a transport and copies every `ForwardActivation` passing through it
/// (in either direction) into a [`Tap`]. Delivered messages are untouched.
pub struct Tapped<T> {
    inner: T,
    tap: Tap,
}

impl<T: Transport> Tapped<T> {
    pub fn new(inner: T, tap: Tap) -> Self {
        Self { inner, tap }
    }
}

impl<T: Transport> Transport for Tapped<T> {
    fn send(&mut self, msg: &ChannelMessage) -> Result<()> {
        self.tap.record(msg);
        self.inner.send(msg)
    }

    fn recv(&mut self) -> Result<ChannelMessage> {
        let msg = self.inner.recv()?;
        self.tap.record(&msg);
        Ok(msg)
    }
}
