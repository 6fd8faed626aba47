//! Runs a backend over a labelled test set and aggregates the metrics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{enumeration_metrics, recognition_metrics, EnumerationMetrics, RecognitionMetrics};
use super::parse::{parse_species_count, ParseStatus, Prediction};
use super::prompt::{render_prompt, PromptMode};
use crate::backends::{batch_infer, Backend, ImageSource, InferenceRequest};
use crate::error::{Error, Result};
use crate::fsio;
use crate::species::Species;

/// Generation budget for a `Species; Count` answer.
pub const ANSWER_TOKENS: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalItem {
    pub image_id: String,
    pub image: ImageSource,
    pub species: Species,
    pub count: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub image_id: String,
    pub prompt_mode: PromptMode,
    pub raw_text: String,
    pub species: Option<String>,
    pub count: Option<u32>,
    pub parse_status: ParseStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub model: String,
    pub mode: PromptMode,
    pub n_items: usize,
    pub backend_failures: usize,
    pub recognition: RecognitionMetrics,
    pub enumeration: EnumerationMetrics,
    pub responses: Vec<ResponseRecord>,
}

impl EvaluationResult {
    pub fn macro_f1(&self) -> f64 {
        self.recognition.macro_f1()
    }

    pub fn macro_within1(&self) -> f64 {
        self.enumeration.macro_within1()
    }
}

/// Prompts every item, parses the answers and scores them. Failed backend
/// calls are scored as malformed; more than half failing aborts the run.
pub fn evaluate(backend: &dyn Backend, items: &[EvalItem], mode: PromptMode, parallelism: usize) -> Result<EvaluationResult> {
    if items.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    if mode == PromptMode::Habitat {
        return Err(Error::Config("habitat prompts are not scored against species labels".into()));
    }
    let mut items: Vec<&EvalItem> = items.iter().collect();
    items.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let prompt = render_prompt(mode);
    let requests: Vec<InferenceRequest> = items
        .iter()
        .map(|it| InferenceRequest {
            request_id: it.image_id.clone(),
            image: it.image.clone(),
            prompt: prompt.to_string(),
            max_new_tokens: ANSWER_TOKENS,
        })
        .collect();
    let outputs = batch_infer(&requests, backend, parallelism);

    let mut failures = 0;
    let mut responses = Vec::with_capacity(items.len());
    let mut preds = Vec::with_capacity(items.len());
    for (item, (_, out)) in items.iter().zip(outputs) {
        let (pred, error) = match out {
            Ok(text) => (parse_species_count(&text), None),
            Err(e) => {
                failures += 1;
                (Prediction::malformed(""), Some(e.to_string()))
            }
        };
        responses.push(ResponseRecord {
            image_id: item.image_id.clone(),
            prompt_mode: mode,
            raw_text: pred.raw_text.clone(),
            species: pred.species.clone(),
            count: pred.count,
            parse_status: pred.parse_status,
            error,
        });
        preds.push(pred);
    }
    if failures * 2 > items.len() {
        return Err(Error::AbortedRun { failed: failures, total: items.len() });
    }
    let rec: Vec<_> = items.iter().zip(&preds).map(|(it, p)| (it.species, p.clone())).collect();
    let cnt: Vec<_> = items.iter().zip(&preds).map(|(it, p)| (it.species, it.count, p.clone())).collect();
    Ok(EvaluationResult {
        model: backend.name(),
        mode,
        n_items: items.len(),
        backend_failures: failures,
        recognition: recognition_metrics(&rec)?,
        enumeration: enumeration_metrics(&cnt)?,
        responses,
    })
}

/// One JSON object per line, in evaluation order.
pub fn write_responses(path: &Path, results: &[EvaluationResult]) -> Result<()> {
    let mut out = String::new();
    for r in results {
        for resp in &r.responses {
            out.push_str(&serde_json::to_string(resp).expect("response serializes"));
            out.push('\n');
        }
    }
    fsio::write_atomic(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ImageInput;
    use ndarray::Array2;

    /// Reads the label back out of the pixel values.
    struct Oracle;

    impl Backend for Oracle {
        fn name(&self) -> String {
            "oracle".into()
        }

        fn infer(&self, r: &InferenceRequest) -> Result<String> {
            let ImageSource::Pixels(ImageInput::Gray(g)) = &r.image else { unreachable!() };
            let sp = Species::ALL[g[(0, 0)] as usize];
            Ok(format!("{}; {}", sp.capitalized(), g[(0, 1)] as u32))
        }
    }

    struct Constant(&'static str);

    impl Backend for Constant {
        fn name(&self) -> String {
            "constant".into()
        }

        fn infer(&self, _: &InferenceRequest) -> Result<String> {
            Ok(self.0.to_string())
        }
    }

    struct Flaky(usize);

    impl Backend for Flaky {
        fn name(&self) -> String {
            "flaky".into()
        }

        fn infer(&self, r: &InferenceRequest) -> Result<String> {
            let i: usize = r.request_id.parse().unwrap();
            if i < self.0 {
                Err(Error::Backend("down".into()))
            } else {
                Ok("Deer; 1".into())
            }
        }
    }

    fn items() -> Vec<EvalItem> {
        let labels = [(Species::Deer, 3), (Species::Deer, 1), (Species::Rhino, 7), (Species::Elephant, 12), (Species::Deer, 2)];
        labels
            .iter()
            .enumerate()
            .map(|(i, &(sp, n))| {
                let mut g = Array2::zeros((2, 2));
                g[(0, 0)] = sp.index() as f64;
                g[(0, 1)] = n as f64;
                EvalItem { image_id: i.to_string(), image: ImageSource::Pixels(ImageInput::Gray(g)), species: sp, count: n }
            })
            .collect()
    }

    #[test]
    fn oracle_backend_is_perfect() {
        let r = evaluate(&Oracle, &items(), PromptMode::ClosedSet, 2).unwrap();
        for m in r.recognition.per_species.values() {
            assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        }
        for c in r.enumeration.per_species.values() {
            assert_eq!((c.exact_accuracy, c.within1_accuracy, c.mae), (1.0, 1.0, Some(0.0)));
        }
        assert_eq!(r.responses.len(), 5);
    }

    #[test]
    fn constant_backend_precision_is_class_share() {
        let r = evaluate(&Constant("Deer; 1"), &items(), PromptMode::OpenSet, 1).unwrap();
        let deer = r.recognition.per_species[&Species::Deer];
        assert_eq!(deer.recall, 1.0);
        assert!((deer.precision - 3.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn majority_failure_aborts() {
        assert!(matches!(evaluate(&Flaky(3), &items(), PromptMode::OpenSet, 2), Err(Error::AbortedRun { failed: 3, total: 5 })));
        let r = evaluate(&Flaky(2), &items(), PromptMode::OpenSet, 2).unwrap();
        assert_eq!(r.backend_failures, 2);
        assert!(r.responses[0].error.is_some());
        assert_eq!(r.responses[0].parse_status, ParseStatus::Malformed);
    }

    #[test]
    fn responses_log_one_line_per_item() {
        let dir = tempfile::tempdir().unwrap();
        let r = evaluate(&Oracle, &items(), PromptMode::ClosedSet, 1).unwrap();
        let p = dir.path().join("responses.jsonl");
        write_responses(&p, &[r]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 5);
        let first: ResponseRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first.prompt_mode, PromptMode::ClosedSet);
    }
}
