//! Newline-delimited JSON protocol for predictors hosted in a child process.
//!
//! Every request carries an integer `id` and receives exactly one response
//! with the same `id`. Rasters travel as tensors of shape `[C, W, H]` whose
//! base64 payload is little-endian and band-sequential with `x` fastest,
//! i.e. the in-memory layout of [`MultiBandRaster`]. Label maps use `C = 1`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::proba::SIMPLEX_TOLERANCE;
use crate::predictor::{BaselinePredictor, Predictor, PredictorConfig, ProbabilityMap};
use crate::raster::{LabelRaster, MultiBandRaster};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    U8,
}

impl DType {
    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub data: String,
}

impl Tensor {
    pub fn from_f32(shape: Vec<usize>, values: &[f32]) -> Result<Self> {
        check_len(&shape, values.len())?;
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Ok(Self {
            shape,
            dtype: DType::F32,
            data: B64.encode(bytes),
        })
    }

    pub fn from_u8(shape: Vec<usize>, values: &[u8]) -> Result<Self> {
        check_len(&shape, values.len())?;
        Ok(Self {
            shape,
            dtype: DType::U8,
            data: B64.encode(values),
        })
    }

    fn bytes(&self, want: DType) -> Result<Vec<u8>> {
        if self.dtype != want {
            return Err(Error::Protocol(format!("expected dtype {want:?}, got {:?}", self.dtype)));
        }
        let bytes = B64
            .decode(&self.data)
            .map_err(|e| Error::Protocol(format!("bad base64 payload: {e}")))?;
        let n: usize = self.shape.iter().product();
        if bytes.len() != n * want.size() {
            return Err(Error::Protocol(format!(
                "payload of {} bytes does not match shape {:?}",
                bytes.len(),
                self.shape
            )));
        }
        Ok(bytes)
    }

    pub fn to_f32(&self) -> Result<Vec<f32>> {
        Ok(self
            .bytes(DType::F32)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }

    pub fn to_u8(&self) -> Result<Vec<u8>> {
        self.bytes(DType::U8)
    }

    fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, w, h] => Ok((c, w, h)),
            _ => Err(Error::Protocol(format!("expected a [C, W, H] tensor, got shape {:?}", self.shape))),
        }
    }

    pub fn from_image(img: &MultiBandRaster) -> Self {
        Self::from_f32(vec![img.bands(), img.width(), img.height()], img.data()).expect("raster layout")
    }

    pub fn from_labels(labels: &LabelRaster) -> Self {
        Self::from_u8(vec![1, labels.width(), labels.height()], labels.labels()).expect("raster layout")
    }

    pub fn to_image(&self) -> Result<MultiBandRaster> {
        let (c, w, h) = self.dims3()?;
        MultiBandRaster::from_vec(c, w, h, self.to_f32()?)
    }

    pub fn to_labels(&self, num_classes: usize) -> Result<LabelRaster> {
        match self.dims3()? {
            (1, w, h) => LabelRaster::from_vec(w, h, num_classes, self.to_u8()?),
            (c, _, _) => Err(Error::Protocol(format!("label tensor has {c} channels"))),
        }
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    if shape.iter().product::<usize>() != len {
        return Err(Error::Dimension(format!("{len} values for shape {shape:?}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Hello {
        id: u64,
        version: u32,
    },
    Train {
        id: u64,
        num_classes: usize,
        config: PredictorConfig,
        images: Vec<Tensor>,
        labels: Vec<Tensor>,
    },
    Predict {
        id: u64,
        image: Tensor,
    },
    Shutdown {
        id: u64,
    },
}

impl Request {
    pub fn id(&self) -> u64 {
        match self {
            Request::Hello { id, .. }
            | Request::Train { id, .. }
            | Request::Predict { id, .. }
            | Request::Shutdown { id } => *id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Response {
    Ok {
        id: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        version: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        proba: Option<Tensor>,
    },
    /// `id` is null when the request could not be parsed.
    Error { id: Option<u64>, message: String },
}

impl Response {
    fn ok(id: u64) -> Self {
        Response::Ok {
            id,
            version: None,
            proba: None,
        }
    }
}

/// Server side of the predictor contract.
pub trait Backend {
    fn train(&mut self, images: &[&MultiBandRaster], labels: &[&LabelRaster], cfg: &PredictorConfig) -> Result<()>;
    /// Class-major probabilities of shape `[K, W, H]`.
    fn predict(&mut self, image: &MultiBandRaster) -> Result<(usize, Vec<f32>)>;
}

/// The in-process baseline behind the wire.
#[derive(Debug, Default)]
pub struct BaselineBackend {
    predictor: BaselinePredictor,
}

impl Backend for BaselineBackend {
    fn train(&mut self, images: &[&MultiBandRaster], labels: &[&LabelRaster], cfg: &PredictorConfig) -> Result<()> {
        self.predictor.train(images, labels, cfg)
    }

    fn predict(&mut self, image: &MultiBandRaster) -> Result<(usize, Vec<f32>)> {
        let p = self.predictor.predict_proba_f32(image)?;
        Ok((self.predictor.model().expect("trained").num_classes(), p))
    }
}

/// Answers every prediction with the uniform distribution.
#[derive(Debug)]
pub struct UniformBackend {
    pub num_classes: usize,
}

impl Default for UniformBackend {
    fn default() -> Self {
        Self {
            num_classes: crate::raster::DEFAULT_NUM_CLASSES,
        }
    }
}

impl Backend for UniformBackend {
    fn train(&mut self, _: &[&MultiBandRaster], labels: &[&LabelRaster], _: &PredictorConfig) -> Result<()> {
        if let Some(l) = labels.first() {
            self.num_classes = l.num_classes();
        }
        Ok(())
    }

    fn predict(&mut self, image: &MultiBandRaster) -> Result<(usize, Vec<f32>)> {
        let k = self.num_classes;
        Ok((k, vec![1.0 / k as f32; k * image.width() * image.height()]))
    }
}

/// Handles one parsed request.
pub fn handle(backend: &mut dyn Backend, req: Request) -> Response {
    let id = req.id();
    let result = (|| -> Result<Response> {
        match req {
            Request::Hello { version, .. } => {
                if version != PROTOCOL_VERSION {
                    return Err(Error::Protocol(format!("unsupported protocol version {version}")));
                }
                Ok(Response::Ok {
                    id,
                    version: Some(PROTOCOL_VERSION),
                    proba: None,
                })
            }
            Request::Train {
                num_classes,
                config,
                images,
                labels,
                ..
            } => {
                let images: Vec<MultiBandRaster> = images.iter().map(Tensor::to_image).collect::<Result<_>>()?;
                let labels: Vec<LabelRaster> =
                    labels.iter().map(|t| t.to_labels(num_classes)).collect::<Result<_>>()?;
                let (i, l): (Vec<_>, Vec<_>) = (images.iter().collect(), labels.iter().collect());
                backend.train(&i, &l, &config)?;
                Ok(Response::ok(id))
            }
            Request::Predict { image, .. } => {
                let img = image.to_image()?;
                let (k, p) = backend.predict(&img)?;
                Ok(Response::Ok {
                    id,
                    version: None,
                    proba: Some(Tensor::from_f32(vec![k, img.width(), img.height()], &p)?),
                })
            }
            Request::Shutdown { .. } => Ok(Response::ok(id)),
        }
    })();
    result.unwrap_or_else(|e| Response::Error {
        id: Some(id),
        message: e.to_string(),
    })
}

/// Serves requests line by line until `shutdown` or end of input.
pub fn serve<R: BufRead, W: Write>(reader: R, mut writer: W, backend: &mut dyn Backend) -> Result<()> {
    for line in reader.lines() {
        let line = line.map_err(|e| Error::Transport(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let (resp, stop) = match serde_json::from_str::<Request>(&line) {
            Ok(req) => {
                let stop = matches!(req, Request::Shutdown { .. });
                (handle(backend, req), stop)
            }
            Err(e) => (
                Response::Error {
                    id: None,
                    message: format!("malformed request: {e}"),
                },
                false,
            ),
        };
        write_line(&mut writer, &resp)?;
        if stop {
            break;
        }
    }
    Ok(())
}

pub fn write_line<W: Write, T: Serialize>(writer: &mut W, msg: &T) -> Result<()> {
    let mut line = serde_json::to_string(msg)?;
    line.push('\n');
    writer
        .write_all(line.as_bytes())
        .and_then(|_| writer.flush())
        .map_err(|e| Error::Transport(e.to_string()))
}

/// Client owning a child process that speaks the protocol on its standard
/// streams. Drop sends `shutdown` and reaps the child.
pub struct SidecarClient {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    timeout: Duration,
    num_classes: Option<usize>,
    dead: bool,
}

impl SidecarClient {
    /// Runs `command` through `sh -c` and performs the `hello` handshake.
    pub fn spawn(command: &str) -> Result<Self> {
        Self::spawn_with_timeout(command, DEFAULT_TIMEOUT)
    }

    pub fn spawn_with_timeout(command: &str, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Transport(format!("cannot start `{command}`: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut client = Self {
            child,
            stdin,
            lines: rx,
            next_id: 1,
            timeout,
            num_classes: None,
            dead: false,
        };
        let id = client.next_id;
        match client.request(Request::Hello {
            id,
            version: PROTOCOL_VERSION,
        })? {
            Response::Ok {
                version: Some(PROTOCOL_VERSION),
                ..
            } => Ok(client),
            other => Err(client.fail(Error::Protocol(format!("bad hello response: {other:?}")))),
        }
    }

    fn fail(&mut self, e: Error) -> Error {
        if !self.dead {
            self.dead = true;
            self.stdin = None;
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
        e
    }

    /// Sends one request and waits for its response. `error` responses are
    /// returned as [`Error::Remote`]; anything malformed kills the child.
    pub fn request(&mut self, req: Request) -> Result<Response> {
        if self.dead {
            return Err(Error::Transport("sidecar is no longer running".into()));
        }
        let id = req.id();
        self.next_id = id + 1;
        let stdin = self.stdin.as_mut().expect("open stdin");
        if let Err(e) = write_line(stdin, &req) {
            return Err(self.fail(e));
        }
        let line = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(self.fail(Error::Transport(e.to_string()))),
            Err(RecvTimeoutError::Timeout) => {
                let t = self.timeout;
                return Err(self.fail(Error::Transport(format!("no response within {t:?}"))));
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(self.fail(Error::Transport("sidecar closed its output".into())))
            }
        };
        let resp: Response = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => return Err(self.fail(Error::Protocol(format!("malformed response: {e}")))),
        };
        match resp {
            Response::Ok { id: got, .. } if got != id => {
                Err(self.fail(Error::Protocol(format!("response id {got} for request {id}"))))
            }
            Response::Error { id: Some(got), .. } if got != id => {
                Err(self.fail(Error::Protocol(format!("response id {got} for request {id}"))))
            }
            Response::Error { message, .. } => Err(Error::Remote(message)),
            ok => Ok(ok),
        }
    }

    pub fn is_alive(&self) -> bool {
        !self.dead
    }
}

impl Predictor for SidecarClient {
    fn train(&mut self, images: &[&MultiBandRaster], labels: &[&LabelRaster], cfg: &PredictorConfig) -> Result<()> {
        let num_classes = labels
            .first()
            .map(|l| l.num_classes())
            .ok_or_else(|| Error::config("images", "no training images"))?;
        let id = self.next_id;
        self.request(Request::Train {
            id,
            num_classes,
            config: cfg.clone(),
            images: images.iter().map(|i| Tensor::from_image(i)).collect(),
            labels: labels.iter().map(|l| Tensor::from_labels(l)).collect(),
        })?;
        self.num_classes = Some(num_classes);
        Ok(())
    }

    fn predict_proba(&mut self, image: &MultiBandRaster) -> Result<ProbabilityMap> {
        let id = self.next_id;
        let resp = self.request(Request::Predict {
            id,
            image: Tensor::from_image(image),
        })?;
        let tensor = match resp {
            Response::Ok { proba: Some(t), .. } => t,
            _ => return Err(Error::Protocol("predict response without probabilities".into())),
        };
        let (k, w, h) = tensor.dims3()?;
        if w != image.width() || h != image.height() || self.num_classes.is_some_and(|n| n != k) {
            return Err(Error::Protocol(format!(
                "probability shape {:?} for a {}x{} image",
                tensor.shape,
                image.width(),
                image.height()
            )));
        }
        ProbabilityMap::from_f32(k, w, h, &tensor.to_f32()?, SIMPLEX_TOLERANCE)
    }
}

impl Drop for SidecarClient {
    fn drop(&mut self) {
        if self.dead {
            return;
        }
        let id = self.next_id;
        if let Some(stdin) = self.stdin.as_mut() {
            if write_line(stdin, &Request::Shutdown { id }).is_ok() {
                let _ = self.lines.recv_timeout(Duration::from_secs(5));
            }
        }
        self.stdin = None;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
