use super::{Backend, InferenceRequest};
use crate::dataset::sharegpt::IMAGE_PLACEHOLDER;
use crate::error::Result;
use crate::model::ToyVlm;

/// Greedy decoding with an in-process model. The model is only read, so one
/// instance serves concurrent callers.
#[derive(Clone, Debug)]
pub struct LocalBackend {
    pub model: ToyVlm,
    pub label: String,
}

impl LocalBackend {
    pub fn new(model: ToyVlm, label: impl Into<String>) -> Self {
        Self { model, label: label.into() }
    }
}

impl Backend for LocalBackend {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn infer(&self, request: &InferenceRequest) -> Result<String> {
        let image = request.image.load()?;
        let user = format!("{IMAGE_PLACEHOLDER}\n{}", request.prompt);
        self.model.answer(&image, &user, request.max_new_tokens)
    }
}
