//! Adapter for encoders that run in a separate process.
//!
//! The child reads one JSON request per line on stdin and answers with one
//! JSON line on stdout. Requests carry an `op` field:
//!
//! - `describe` with `options` → `{embedding_dim, native_input_size: [w, h], supports_attribution}`
//! - `embed_image` with `width`, `height`, `rgb8_base64` → `{vector}`
//! - `embed_texts` with `texts` → `{vectors}`
//! - `attribute` with the image fields, `text` and `layer` → `{grid_width, grid_height, values}`
//!
//! Any response may instead be `{error: "..."}`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::RgbImage;
use posepilot_core::saliency::{HeatMap, Normalization};
use posepilot_core::Embedding;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{check_prompts, Backend, BackendDescriptor};
use crate::error::{Error, Result};

struct Process {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

pub struct ExternalBackend {
    descriptor: BackendDescriptor,
    layer: Option<String>,
    process: Mutex<Process>,
}

#[derive(Deserialize)]
struct Describe {
    embedding_dim: usize,
    native_input_size: (u32, u32),
    #[serde(default)]
    supports_attribution: bool,
}

#[derive(Deserialize)]
struct Vector {
    vector: Vec<f32>,
}

#[derive(Deserialize)]
struct Vectors {
    vectors: Vec<Vec<f32>>,
}

#[derive(Serialize, Deserialize)]
struct Grid {
    grid_width: u32,
    grid_height: u32,
    values: Vec<f64>,
}

impl ExternalBackend {
    /// Starts `command` (program and arguments) and asks it to describe
    /// itself. `options` is passed through verbatim in the describe request.
    pub fn spawn(name: &str, command: &[String], options: Value, layer: Option<String>) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::Config(format!("backend `{name}`: empty adapter command")))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::backend(name, format!("cannot start `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut backend = Self {
            descriptor: BackendDescriptor {
                name: name.to_string(),
                embedding_dim: 0,
                native_input_size: (0, 0),
                supports_attribution: false,
            },
            layer,
            process: Mutex::new(Process { child, stdin, stdout }),
        };
        let d: Describe = backend.call(json!({"op": "describe", "options": options}))?;
        if d.embedding_dim == 0 || d.native_input_size.0 == 0 || d.native_input_size.1 == 0 {
            return Err(Error::backend(name, "adapter reported a zero dimension"));
        }
        backend.descriptor.embedding_dim = d.embedding_dim;
        backend.descriptor.native_input_size = d.native_input_size;
        backend.descriptor.supports_attribution = d.supports_attribution;
        Ok(backend)
    }

    fn call<T: serde::de::DeserializeOwned>(&self, request: Value) -> Result<T> {
        let name = &self.descriptor.name;
        let mut p = self.process.lock().expect("adapter lock");
        let mut line = serde_json::to_string(&request).expect("request serializes");
        line.push('\n');
        p.stdin
            .write_all(line.as_bytes())
            .and_then(|_| p.stdin.flush())
            .map_err(|e| Error::backend(name, format!("adapter write failed: {e}")))?;
        let mut reply = String::new();
        let n = p.stdout.read_line(&mut reply).map_err(|e| Error::backend(name, format!("adapter read failed: {e}")))?;
        if n == 0 {
            return Err(Error::backend(name, "adapter closed its output"));
        }
        let value: Value = serde_json::from_str(&reply).map_err(|e| Error::backend(name, format!("bad adapter reply: {e}")))?;
        if let Some(msg) = value.get("error") {
            return Err(Error::backend(name, msg.as_str().unwrap_or("adapter error").to_string()));
        }
        serde_json::from_value(value).map_err(|e| Error::backend(name, format!("unexpected adapter reply: {e}")))
    }

    fn image_request(op: &str, image: &RgbImage) -> Value {
        json!({
            "op": op,
            "width": image.width(),
            "height": image.height(),
            "rgb8_base64": STANDARD.encode(image.as_raw()),
        })
    }

    fn unit(&self, v: Vec<f32>) -> Result<Embedding> {
        Embedding::normalized(v).map_err(|e| Error::backend(&self.descriptor.name, e.to_string()))
    }
}

impl Drop for ExternalBackend {
    fn drop(&mut self) {
        if let Ok(p) = self.process.get_mut() {
            let _ = p.child.kill();
            let _ = p.child.wait();
        }
    }
}

impl Backend for ExternalBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn embed_image(&self, image: &RgbImage) -> Result<Embedding> {
        let r: Vector = self.call(Self::image_request("embed_image", image))?;
        self.unit(r.vector)
    }

    fn embed_texts(&self, prompts: &[String]) -> Result<Vec<Embedding>> {
        check_prompts(&self.descriptor.name, prompts)?;
        let r: Vectors = self.call(json!({"op": "embed_texts", "texts": prompts}))?;
        if r.vectors.len() != prompts.len() {
            return Err(Error::backend(&self.descriptor.name, "adapter returned the wrong number of vectors"));
        }
        r.vectors.into_iter().map(|v| self.unit(v)).collect()
    }

    fn attribute_grid(&self, image: &RgbImage, prompt: &str) -> Result<HeatMap> {
        let mut req = Self::image_request("attribute", image);
        req["text"] = json!(prompt);
        req["layer"] = json!(self.layer);
        let g: Grid = self.call(req)?;
        Ok(HeatMap::from_parts(g.grid_width, g.grid_height, g.values, Normalization::Raw)?)
    }
}

fn decode_request_image(req: &Value) -> std::result::Result<RgbImage, String> {
    let w = req["width"].as_u64().ok_or("missing width")? as u32;
    let h = req["height"].as_u64().ok_or("missing height")? as u32;
    let data = STANDARD.decode(req["rgb8_base64"].as_str().ok_or("missing rgb8_base64")?).map_err(|e| e.to_string())?;
    RgbImage::from_raw(w, h, data).ok_or_else(|| "pixel buffer does not match width x height".to_string())
}

fn handle(backend: &dyn Backend, req: &Value) -> std::result::Result<Value, String> {
    match req["op"].as_str().unwrap_or_default() {
        "describe" => {
            let d = backend.descriptor();
            Ok(json!({
                "embedding_dim": d.embedding_dim,
                "native_input_size": [d.native_input_size.0, d.native_input_size.1],
                "supports_attribution": d.supports_attribution,
            }))
        }
        "embed_image" => {
            let img = decode_request_image(req)?;
            let e = backend.embed_image(&img).map_err(|e| e.to_string())?;
            Ok(json!({ "vector": e.as_slice() }))
        }
        "embed_texts" => {
            let texts: Vec<String> = serde_json::from_value(req["texts"].clone()).map_err(|e| e.to_string())?;
            let es = backend.embed_texts(&texts).map_err(|e| e.to_string())?;
            Ok(json!({ "vectors": es.iter().map(|e| e.as_slice()).collect::<Vec<_>>() }))
        }
        "attribute" => {
            let img = decode_request_image(req)?;
            let text = req["text"].as_str().ok_or("missing text")?;
            let m = backend.attribute_grid(&img, text).map_err(|e| e.to_string())?;
            Ok(serde_json::to_value(Grid { grid_width: m.width(), grid_height: m.height(), values: m.values().to_vec() })
                .expect("grid serializes"))
        }
        other => Err(format!("unknown op `{other}`")),
    }
}

/// Answers adapter-protocol requests from `input` using `backend` until EOF.
pub fn serve_stub(backend: &dyn Backend, input: impl BufRead, mut output: impl Write) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Value>(&line) {
            Ok(req) => handle(backend, &req).unwrap_or_else(|e| json!({ "error": e })),
            Err(e) => json!({ "error": format!("bad request: {e}") }),
        };
        writeln!(output, "{reply}")?;
        output.flush()?;
    }
    Ok(())
}
