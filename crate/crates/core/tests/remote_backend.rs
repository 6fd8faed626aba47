mod common;

use std::time::Duration;

use ndarray::Array2;

use common::{Reply, Stub};
use thermalign::backends::{Backend, ImageSource, InferenceRequest, RemoteBackend, RemoteConfig};
use thermalign::evalkit::prompt::CLOSED_SET_PROMPT;
use thermalign::evalkit::{evaluate, EvalItem, ParseStatus, PromptMode};
use thermalign::model::ImageInput;
use thermalign::species::Species;
use thermalign::Error;

fn config(stub: &Stub) -> RemoteConfig {
    RemoteConfig {
        base_url: format!("{}/", stub.url),
        model: "stub".into(),
        auth_env: String::new(),
        timeout_secs: 5.0,
        max_retries: 2,
        max_parallel: 2,
        backoff_base_secs: 0.01,
    }
}

fn image() -> ImageSource {
    ImageSource::Pixels(ImageInput::Gray(Array2::from_elem((8, 8), 0.5)))
}

fn request(prompt: &str) -> InferenceRequest {
    InferenceRequest { request_id: "a".into(), image: image(), prompt: prompt.into(), max_new_tokens: 4 }
}

fn items(n: usize) -> Vec<EvalItem> {
    (0..n)
        .map(|i| EvalItem {
            image_id: format!("img{i:02}"),
            image: image(),
            species: Species::ALL[i % 3],
            count: 2,
        })
        .collect()
}

#[test]
fn bearer_token_is_sent() {
    let stub = Stub::start(vec![], Reply::Text("Rhino; 2".into()), Duration::ZERO);
    let backend = RemoteBackend::with_token(config(&stub), Some("s3cret".into())).unwrap();
    assert_eq!(backend.infer(&request("hi")).unwrap(), "Rhino; 2");
    let req = stub.requests.lock().unwrap()[0].clone();
    assert_eq!(req.header("authorization"), Some("Bearer s3cret"));
    assert_eq!(req.path, "/v1/chat/completions");
}

#[test]
fn no_token_means_no_auth_header() {
    let stub = Stub::start(vec![], Reply::Text("Deer; 1".into()), Duration::ZERO);
    RemoteBackend::with_token(config(&stub), None).unwrap().infer(&request("hi")).unwrap();
    assert_eq!(stub.requests.lock().unwrap()[0].header("authorization"), None);
}

#[test]
fn missing_token_variable_names_the_variable() {
    let cfg = RemoteConfig { auth_env: "THERMALIGN_TEST_UNSET_TOKEN".into(), ..RemoteConfig::default() };
    match RemoteBackend::new(cfg) {
        Err(Error::Config(msg)) => assert!(msg.contains("THERMALIGN_TEST_UNSET_TOKEN"), "{msg}"),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn client_errors_are_not_retried() {
    let stub = Stub::start(vec![], Reply::Status(400), Duration::ZERO);
    let backend = RemoteBackend::with_token(config(&stub), None).unwrap();
    assert!(matches!(backend.infer(&request("hi")), Err(Error::Backend(_))));
    assert_eq!(stub.request_count(), 1);
}

#[test]
fn nonconforming_body_is_a_protocol_error() {
    let stub = Stub::start(vec![], Reply::Garbage, Duration::ZERO);
    let backend = RemoteBackend::with_token(config(&stub), None).unwrap();
    assert!(matches!(backend.infer(&request("hi")), Err(Error::Protocol(_))));
}

#[test]
fn empty_prompt_is_rejected_before_sending() {
    let stub = Stub::start(vec![], Reply::Echo, Duration::ZERO);
    let backend = RemoteBackend::with_token(config(&stub), None).unwrap();
    assert!(backend.infer(&request("")).is_err());
    assert_eq!(stub.request_count(), 0);
}

#[test]
fn evaluation_through_the_remote_backend() {
    let stub = Stub::start(vec![], Reply::Text("Deer; 2".into()), Duration::ZERO);
    let backend = RemoteBackend::with_token(config(&stub), None).unwrap();
    let res = evaluate(&backend, &items(9), PromptMode::ClosedSet, 4).unwrap();
    assert_eq!(res.model, "stub");
    assert_eq!(res.n_items, 9);
    assert_eq!(res.backend_failures, 0);
    let deer = res.recognition.per_species[&Species::Deer];
    assert_eq!((deer.precision, deer.recall), (1.0 / 3.0, 1.0));
    assert_eq!(res.enumeration.macro_within1(), 1.0);
    assert!(res.responses.iter().all(|r| r.parse_status == ParseStatus::Ok));
    let ids: Vec<_> = res.responses.iter().map(|r| r.image_id.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    let body: serde_json::Value = serde_json::from_slice(&stub.requests.lock().unwrap()[0].body).unwrap();
    assert_eq!(body["messages"][0]["content"][0]["text"], CLOSED_SET_PROMPT);
}

#[test]
fn mostly_failing_backend_aborts_the_run() {
    let stub = Stub::start(vec![Reply::Text("Deer; 2".into())], Reply::Status(404), Duration::ZERO);
    let backend = RemoteBackend::with_token(RemoteConfig { max_parallel: 1, ..config(&stub) }, None).unwrap();
    match evaluate(&backend, &items(4), PromptMode::OpenSet, 1) {
        Err(Error::AbortedRun { failed, total }) => assert_eq!((failed, total), (3, 4)),
        other => panic!("expected an aborted run, got {other:?}"),
    }
}
