//! Remote noise predictor and codec over TCP.
//!
//! Every message is a frame: a 4-byte little-endian length `n`, `n` bytes of
//! JSON header, then the raw little-endian `f32` tensors the header
//! announces (`shape`, then `cond_shape` if present), densely packed in
//! channel-major row-major order. A connection starts with a handshake in
//! which the server advertises its protocol version, latent channels,
//! `f_vae`, latent grid and optionally its `abar` table; afterwards the
//! client sends one request at a time and waits for the reply.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::codec::LatentCodec;
use crate::denoiser::NoisePredictor;
use crate::error::{Error, Result};
use crate::scheduler::AlphaSchedule;
use crate::tensor::{ImageTensor, LatentTensor, Shape, Tensor3};

pub const PROTOCOL_VERSION: u32 = 1;

const MAX_HEADER_BYTES: usize = 16 << 20;
const MAX_TENSOR_ELEMENTS: usize = 1 << 28;

/// JSON header of a frame. Unused fields are omitted on the wire.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameHeader {
    pub op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dtype: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cond_shape: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestep: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol_version: Option<u32>,
    #[serde(rename = "C_latent", default, skip_serializing_if = "Option::is_none")]
    pub c_latent: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_vae: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_pixel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_hw: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_bar: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl FrameHeader {
    pub fn op(op: &str) -> Self {
        Self {
            op: op.to_string(),
            ..Self::default()
        }
    }

    fn tensor_shapes(&self) -> Vec<[usize; 3]> {
        self.shape
            .iter()
            .chain(self.cond_shape.iter())
            .copied()
            .collect()
    }
}

/// A decoded frame: header plus its tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub header: FrameHeader,
    pub tensors: Vec<Vec<f32>>,
}

fn elements(shape: [usize; 3]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= MAX_TENSOR_ELEMENTS)
        .ok_or_else(|| Error::invalid(format!("tensor shape {shape:?} too large")))
}

/// Serializes one frame. Tensor lengths must match the header's shapes.
pub fn write_frame(w: &mut impl Write, header: &FrameHeader, tensors: &[&[f32]]) -> Result<()> {
    let shapes = header.tensor_shapes();
    if shapes.len() != tensors.len() {
        return Err(Error::invalid("frame header and tensor count disagree"));
    }
    for (s, t) in shapes.iter().zip(tensors) {
        if elements(*s)? != t.len() {
            return Err(Error::invalid(format!(
                "tensor of {} values does not match shape {s:?}",
                t.len()
            )));
        }
    }
    let json = serde_json::to_vec(header).map_err(|e| Error::invalid(e.to_string()))?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for t in tensors {
        let mut bytes = Vec::with_capacity(t.len() * 4);
        for v in *t {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one frame written by [`write_frame`].
pub fn read_frame(r: &mut impl Read) -> Result<Frame> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let n = u32::from_le_bytes(len) as usize;
    if n == 0 || n > MAX_HEADER_BYTES {
        return Err(Error::invalid(format!(
            "frame header length {n} out of range"
        )));
    }
    let mut json = vec![0u8; n];
    r.read_exact(&mut json)?;
    let header: FrameHeader = serde_json::from_slice(&json)
        .map_err(|e| Error::invalid(format!("malformed frame header: {e}")))?;
    if let Some(dtype) = &header.dtype {
        if dtype != "f32" {
            return Err(Error::invalid(format!("unsupported dtype {dtype}")));
        }
    }
    let mut tensors = Vec::new();
    for shape in header.tensor_shapes() {
        let count = elements(shape)?;
        let mut bytes = vec![0u8; count * 4];
        r.read_exact(&mut bytes)?;
        tensors.push(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        );
    }
    Ok(Frame { header, tensors })
}

fn to_f32(t: &Tensor3) -> Vec<f32> {
    t.data().iter().map(|&v| v as f32).collect()
}

fn from_f32(shape: [usize; 3], data: &[f32]) -> Result<Tensor3> {
    Tensor3::new(
        Shape::new(shape[0], shape[1], shape[2]),
        data.iter().map(|&v| f64::from(v)).collect(),
    )
}

fn dims(s: Shape) -> [usize; 3] {
    [s.channels, s.height, s.width]
}

/// What the server advertised during the handshake.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerInfo {
    pub protocol_version: u32,
    pub c_latent: usize,
    pub f_vae: usize,
    pub latent_hw: [usize; 2],
    pub c_pixel: usize,
    pub alpha_bar: Option<Vec<f64>>,
}

impl ServerInfo {
    pub fn latent_shape(&self) -> Shape {
        Shape::new(self.c_latent, self.latent_hw[0], self.latent_hw[1])
    }

    /// Schedule from the server's `abar` table, if it sent one.
    pub fn alpha_schedule(&self, steps: usize) -> Option<Result<AlphaSchedule>> {
        self.alpha_bar
            .clone()
            .map(|t| AlphaSchedule::from_table(t, steps))
    }

    fn handshake_reply(&self) -> FrameHeader {
        FrameHeader {
            protocol_version: Some(self.protocol_version),
            c_latent: Some(self.c_latent),
            f_vae: Some(self.f_vae),
            c_pixel: Some(self.c_pixel),
            latent_hw: Some(self.latent_hw),
            alpha_bar: self.alpha_bar.clone(),
            ..FrameHeader::op("handshake")
        }
    }
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

/// One handshaken connection; requests are serialized through a mutex.
pub struct BridgeClient {
    conn: Mutex<Connection>,
    info: ServerInfo,
}

/// Maps transport trouble during a request to a numeric failure of the
/// computation that needed it.
fn transport(e: Error) -> Error {
    match e {
        Error::Io(io) => Error::numeric(None, format!("bridge connection failed: {io}")),
        other => other,
    }
}

impl BridgeClient {
    /// Connects and performs the handshake.
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self> {
        let sock = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| Error::invalid(format!("cannot resolve {addr}")))?;
        let stream = TcpStream::connect_timeout(&sock, timeout)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        let mut conn = Connection {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        };
        let hello = FrameHeader {
            protocol_version: Some(PROTOCOL_VERSION),
            ..FrameHeader::op("handshake")
        };
        write_frame(&mut conn.writer, &hello, &[])?;
        let reply = read_frame(&mut conn.reader)?.header;
        if reply.op == "error" {
            return Err(Error::invalid(format!(
                "bridge refused handshake: {}",
                reply.message.unwrap_or_default()
            )));
        }
        let version = reply.protocol_version.unwrap_or(0);
        if reply.op != "handshake" || version != PROTOCOL_VERSION {
            return Err(Error::invalid(format!(
                "bridge speaks protocol {version}, expected {PROTOCOL_VERSION}"
            )));
        }
        let missing = |f: &str| Error::invalid(format!("handshake lacks {f}"));
        let info = ServerInfo {
            protocol_version: version,
            c_latent: reply.c_latent.ok_or_else(|| missing("C_latent"))?,
            f_vae: reply.f_vae.ok_or_else(|| missing("f_vae"))?,
            latent_hw: reply.latent_hw.ok_or_else(|| missing("latent_hw"))?,
            c_pixel: reply.c_pixel.unwrap_or(3),
            alpha_bar: reply.alpha_bar,
        };
        if info.c_latent == 0 || info.f_vae == 0 || info.c_pixel == 0 || info.latent_hw.contains(&0)
        {
            return Err(Error::invalid("handshake advertises an empty latent"));
        }
        Ok(Self {
            conn: Mutex::new(conn),
            info,
        })
    }

    pub fn info(&self) -> &ServerInfo {
        &self.info
    }

    /// Sends a request and returns the single tensor of the reply.
    pub fn request(
        &self,
        header: &FrameHeader,
        tensors: &[&[f32]],
    ) -> Result<([usize; 3], Vec<f32>)> {
        let mut conn = self
            .conn
            .lock()
            .map_err(|_| Error::numeric(None, "bridge connection poisoned"))?;
        write_frame(&mut conn.writer, header, tensors).map_err(transport)?;
        let reply = read_frame(&mut conn.reader).map_err(transport)?;
        if reply.header.op == "error" {
            return Err(Error::numeric(
                header.timestep,
                format!(
                    "bridge {} failed: {}",
                    header.op,
                    reply.header.message.unwrap_or_default()
                ),
            ));
        }
        match (reply.header.shape, reply.tensors.into_iter().next()) {
            (Some(shape), Some(data)) if reply.header.op == header.op => Ok((shape, data)),
            _ => Err(Error::numeric(
                header.timestep,
                format!("unexpected bridge reply to {}", header.op),
            )),
        }
    }
}

/// [`NoisePredictor`] answered by a bridge server.
pub struct BridgePredictor {
    client: Arc<BridgeClient>,
    latent: Shape,
    cond: Shape,
}

impl BridgePredictor {
    /// Errors with invalid-argument unless the server's latent matches `latent`.
    pub fn new(client: Arc<BridgeClient>, latent: Shape, cond: Shape) -> Result<Self> {
        let advertised = client.info().latent_shape();
        if advertised != latent {
            return Err(Error::invalid(format!(
                "bridge serves latents {advertised}, pipeline needs {latent}"
            )));
        }
        Ok(Self {
            client,
            latent,
            cond,
        })
    }
}

impl NoisePredictor for BridgePredictor {
    fn latent_shape(&self) -> Shape {
        self.latent
    }

    fn cond_shape(&self) -> Shape {
        self.cond
    }

    fn share_safe(&self) -> bool {
        false
    }

    fn predict(&self, z_t: &LatentTensor, t: usize, cond: &ImageTensor) -> Result<LatentTensor> {
        z_t.tensor().expect_shape(self.latent)?;
        cond.tensor().expect_shape(self.cond)?;
        let header = FrameHeader {
            dtype: Some("f32".into()),
            shape: Some(dims(self.latent)),
            cond_shape: Some(dims(self.cond)),
            timestep: Some(t),
            ..FrameHeader::op("predict")
        };
        let (shape, data) = self
            .client
            .request(&header, &[&to_f32(z_t.tensor()), &to_f32(cond.tensor())])?;
        if shape != dims(self.latent) {
            return Err(Error::numeric(
                Some(t),
                format!("bridge returned shape {shape:?}"),
            ));
        }
        LatentTensor::new(from_f32(shape, &data)?)
    }
}

/// [`LatentCodec`] answered by a bridge server.
pub struct BridgeCodec {
    client: Arc<BridgeClient>,
}

impl BridgeCodec {
    pub fn new(client: Arc<BridgeClient>) -> Self {
        Self { client }
    }
}

impl LatentCodec for BridgeCodec {
    fn f_vae(&self) -> usize {
        self.client.info().f_vae
    }

    fn c_latent(&self) -> usize {
        self.client.info().c_latent
    }

    fn c_pixel(&self) -> usize {
        self.client.info().c_pixel
    }

    fn share_safe(&self) -> bool {
        false
    }

    fn encode(&self, img: &ImageTensor) -> Result<LatentTensor> {
        let s = img.shape();
        let want = self.latent_shape_for(s.height, s.width)?;
        let header = FrameHeader {
            dtype: Some("f32".into()),
            shape: Some(dims(s)),
            ..FrameHeader::op("encode")
        };
        let (shape, data) = self.client.request(&header, &[&to_f32(img.tensor())])?;
        if shape != dims(want) {
            return Err(Error::numeric(None, format!("bridge encoded to {shape:?}")));
        }
        LatentTensor::new(from_f32(shape, &data)?)
    }

    fn decode(&self, z: &LatentTensor) -> Result<Tensor3> {
        let s = z.shape();
        if s.channels != self.c_latent() {
            return Err(Error::invalid(format!(
                "bridge decodes {}-channel latents, got {s}",
                self.c_latent()
            )));
        }
        let header = FrameHeader {
            dtype: Some("f32".into()),
            shape: Some(dims(s)),
            ..FrameHeader::op("decode")
        };
        let (shape, data) = self.client.request(&header, &[&to_f32(z.tensor())])?;
        let f = self.f_vae();
        if shape != [self.c_pixel(), s.height * f, s.width * f] {
            return Err(Error::numeric(None, format!("bridge decoded to {shape:?}")));
        }
        from_f32(shape, &data)
    }
}

/// Server-side behaviour for [`serve_connection`].
pub trait BridgeHandler {
    fn info(&self) -> ServerInfo;

    /// Answers one request with `(shape, data)` of the reply tensor.
    fn handle(&self, header: &FrameHeader, tensors: &[Vec<f32>]) -> Result<([usize; 3], Vec<f32>)>;
}

/// Serves one connection until the peer closes it. Requests that fail get an
/// error frame; a malformed frame gets an error frame and closes the connection.
pub fn serve_connection(stream: TcpStream, handler: &dyn BridgeHandler) -> Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let error_frame = |w: &mut BufWriter<TcpStream>, msg: String| {
        let h = FrameHeader {
            message: Some(msg),
            ..FrameHeader::op("error")
        };
        write_frame(w, &h, &[])
    };
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(f) => f,
            Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => {
                let _ = error_frame(&mut writer, e.to_string());
                return Err(e);
            }
        };
        if frame.header.op == "handshake" {
            let info = handler.info();
            if frame.header.protocol_version != Some(info.protocol_version) {
                error_frame(&mut writer, "protocol version mismatch".into())?;
                return Ok(());
            }
            write_frame(&mut writer, &info.handshake_reply(), &[])?;
            continue;
        }
        match handler.handle(&frame.header, &frame.tensors) {
            Ok((shape, data)) => {
                let reply = FrameHeader {
                    dtype: Some("f32".into()),
                    shape: Some(shape),
                    ..FrameHeader::op(&frame.header.op)
                };
                write_frame(&mut writer, &reply, &[&data])?;
            }
            Err(e) => error_frame(&mut writer, e.to_string())?,
        }
    }
}
