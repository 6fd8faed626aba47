//! Uniform text-from-image inference over the local toy model or a remote
//! chat-completions endpoint.

pub mod local;
pub mod remote;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::model::ImageInput;

pub use local::LocalBackend;
pub use remote::{RemoteBackend, RemoteConfig};

#[derive(Clone, Debug, PartialEq)]
pub enum ImageSource {
    Path(PathBuf),
    Pixels(ImageInput),
}

impl ImageSource {
    pub fn load(&self) -> Result<ImageInput> {
        match self {
            ImageSource::Path(p) => crate::imageio::load_png(p),
            ImageSource::Pixels(i) => Ok(i.clone()),
        }
    }

    /// PNG bytes for transport.
    pub fn png_bytes(&self) -> Result<Vec<u8>> {
        match self {
            ImageSource::Path(p) => std::fs::read(p).map_err(|e| Error::io(p, e)),
            ImageSource::Pixels(i) => Ok(crate::imageio::encode_png(i)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceRequest {
    pub request_id: String,
    pub image: ImageSource,
    pub prompt: String,
    pub max_new_tokens: usize,
}

impl InferenceRequest {
    pub fn validate(&self) -> Result<()> {
        if self.prompt.is_empty() {
            return Err(Error::Config(format!("request {} has an empty prompt", self.request_id)));
        }
        Ok(())
    }
}

pub trait Backend: Send + Sync {
    fn name(&self) -> String;

    fn infer(&self, request: &InferenceRequest) -> Result<String>;

    /// Upper bound on useful concurrent calls.
    fn max_parallelism(&self) -> usize {
        usize::MAX
    }
}

/// Runs every request with at most `parallelism` in flight. Results keep
/// input order and per-request failures stay values.
pub fn batch_infer(
    requests: &[InferenceRequest],
    backend: &dyn Backend,
    parallelism: usize,
) -> Vec<(String, Result<String>)> {
    let workers = parallelism.clamp(1, backend.max_parallelism().max(1)).min(requests.len().max(1));
    let slots: Vec<Mutex<Option<Result<String>>>> = requests.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(req) = requests.get(i) else { break };
                let out = req.validate().and_then(|_| backend.infer(req));
                *slots[i].lock().expect("slot lock") = Some(out);
            });
        }
    });
    requests
        .iter()
        .zip(slots)
        .map(|(r, s)| (r.request_id.clone(), s.into_inner().expect("slot lock").expect("every slot filled")))
        .collect()
}
