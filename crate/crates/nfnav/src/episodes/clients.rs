//! Model-role client interfaces for dataset construction: the rewriter that
//! proposes substitute target categories and the verifier that checks a
//! category's absence from a room.
//!
//! Deterministic mocks back both roles by default so builds run offline;
//! HTTP-backed clients activate when the corresponding environment variable
//! names an endpoint.

use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::rng_for;
use crate::scene::{RoomId, SceneGraph};

pub const REWRITER_ENDPOINT_VAR: &str = "NFNAV_REWRITER_ENDPOINT";
pub const VERIFIER_ENDPOINT_VAR: &str = "NFNAV_VERIFIER_ENDPOINT";

/// Client failures, split by whether a retry can help.
#[derive(Debug, Error)]
pub enum ClientError {
    #[error("retryable client error: {0}")]
    Retryable(String),
    #[error("client error: {0}")]
    Fatal(String),
}

/// Absence-check verdict for (room, category).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Present,
    Absent,
}

/// Proposes substitute target categories for NOT-FOUND construction.
pub trait Rewriter: Send + Sync {
    /// A category outside `avoid` and `blacklist`, or `None` when the
    /// client cannot produce one (pool exhausted).
    fn propose(
        &self,
        instruction_text: &str,
        avoid: &BTreeSet<String>,
        blacklist: &BTreeSet<String>,
    ) -> Result<Option<String>, ClientError>;
}

/// Checks whether a category is present anywhere in a room.
pub trait Verifier: Send + Sync {
    fn verify(
        &self,
        scene: &SceneGraph,
        room: &RoomId,
        category: &str,
    ) -> Result<Verdict, ClientError>;
}

/// Order-deterministic rewriter: first vocabulary entry not excluded.
#[derive(Clone, Debug)]
pub struct MockRewriter {
    vocabulary: Vec<String>,
}

impl MockRewriter {
    pub fn new(vocabulary: Vec<String>) -> Self {
        Self { vocabulary }
    }
}

impl Rewriter for MockRewriter {
    fn propose(
        &self,
        _instruction_text: &str,
        avoid: &BTreeSet<String>,
        blacklist: &BTreeSet<String>,
    ) -> Result<Option<String>, ClientError> {
        Ok(self
            .vocabulary
            .iter()
            .find(|c| !avoid.contains(*c) && !blacklist.contains(*c))
            .cloned())
    }
}

/// Ground-truth verifier with seeded false-positive / false-negative flips.
/// Each (scan, room, category) query draws its own stream, so repeating a
/// query always returns the same verdict and dataset builds are reproducible
/// regardless of query order.
#[derive(Clone, Debug)]
pub struct MockVerifier {
    pub fp_rate: f64,
    pub fn_rate: f64,
    pub seed: u64,
}

impl MockVerifier {
    pub fn exact() -> Self {
        Self {
            fp_rate: 0.0,
            fn_rate: 0.0,
            seed: 0,
        }
    }

    pub fn noisy(fp_rate: f64, fn_rate: f64, seed: u64) -> Self {
        Self {
            fp_rate,
            fn_rate,
            seed,
        }
    }
}

impl Verifier for MockVerifier {
    fn verify(
        &self,
        scene: &SceneGraph,
        room: &RoomId,
        category: &str,
    ) -> Result<Verdict, ClientError> {
        let truly_present = scene
            .objects()
            .iter()
            .any(|o| o.room_id == *room && o.category == category);
        let flip_rate = if truly_present {
            self.fn_rate
        } else {
            self.fp_rate
        };
        let flip = if flip_rate > 0.0 {
            use rand::Rng;
            let mut rng = rng_for(
                self.seed,
                &["verifier", scene.scan_id(), room.as_str(), category],
            );
            rng.gen_range(0.0..1.0) < flip_rate
        } else {
            false
        };
        Ok(match (truly_present, flip) {
            (true, false) | (false, true) => Verdict::Present,
            (false, false) | (true, true) => Verdict::Absent,
        })
    }
}

#[derive(Serialize)]
struct RewriteRequest<'a> {
    instruction: &'a str,
    avoid: &'a BTreeSet<String>,
    blacklist: &'a BTreeSet<String>,
}

#[derive(Deserialize)]
struct RewriteResponse {
    candidate: Option<String>,
}

#[derive(Serialize)]
struct VerifyRequest<'a> {
    scan_id: &'a str,
    room_id: &'a str,
    category: &'a str,
}

#[derive(Deserialize)]
struct VerifyResponse {
    verdict: Verdict,
}

pub(crate) fn post_json<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
    client: &reqwest::blocking::Client,
    url: &str,
    body: &Req,
) -> Result<Resp, ClientError> {
    let response = client
        .post(url)
        .json(body)
        .send()
        .map_err(|e| ClientError::Retryable(format!("request to {url} failed: {e}")))?;
    let status = response.status();
    if status.is_server_error() {
        return Err(ClientError::Retryable(format!("{url} returned {status}")));
    }
    if !status.is_success() {
        return Err(ClientError::Fatal(format!("{url} returned {status}")));
    }
    response
        .json::<Resp>()
        .map_err(|e| ClientError::Fatal(format!("bad response from {url}: {e}")))
}

/// Rewriter backed by an HTTP endpoint speaking a one-shot JSON protocol.
pub struct HttpRewriter {
    client: reqwest::blocking::Client,
    url: String,
}

impl HttpRewriter {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            client: http_client(),
            url: url.into(),
        }
    }
}

impl Rewriter for HttpRewriter {
    fn propose(
        &self,
        instruction_text: &str,
        avoid: &BTreeSet<String>,
        blacklist: &BTreeSet<String>,
    ) -> Result<Option<String>, ClientError> {
        let request = RewriteRequest {
            instruction: instruction_text,
            avoid,
            blacklist,
        };
        let response: RewriteResponse = post_json(&self.client, &self.url, &request)?;
        Ok(response.candidate)
    }
}

/// Verifier backed by an HTTP endpoint. Only scan/room/category identifiers
/// travel over the wire; the remote side owns its own scene knowledge.
pub struct HttpVerifier {
    client: reqwest::blocking::Client,
    url: String,
}

impl HttpVerifier {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            client: http_client(),
            url: url.into(),
        }
    }
}

impl Verifier for HttpVerifier {
    fn verify(
        &self,
        scene: &SceneGraph,
        room: &RoomId,
        category: &str,
    ) -> Result<Verdict, ClientError> {
        let request = VerifyRequest {
            scan_id: scene.scan_id(),
            room_id: room.as_str(),
            category,
        };
        let response: VerifyResponse = post_json(&self.client, &self.url, &request)?;
        Ok(response.verdict)
    }
}

pub(crate) fn http_client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(30))
        .build()
        .expect("client construction cannot fail with static options")
}

/// Rewriter selected by environment: HTTP endpoint when
/// `NFNAV_REWRITER_ENDPOINT` is set, mock otherwise.
pub fn rewriter_from_env(vocabulary: Vec<String>) -> Box<dyn Rewriter> {
    match std::env::var(REWRITER_ENDPOINT_VAR) {
        Ok(url) if !url.is_empty() => Box::new(HttpRewriter::new(url)),
        _ => Box::new(MockRewriter::new(vocabulary)),
    }
}

/// Verifier selected by environment: HTTP endpoint when
/// `NFNAV_VERIFIER_ENDPOINT` is set, zero-noise mock otherwise.
pub fn verifier_from_env(noise: Option<MockVerifier>) -> Box<dyn Verifier> {
    match std::env::var(VERIFIER_ENDPOINT_VAR) {
        Ok(url) if !url.is_empty() => Box::new(HttpVerifier::new(url)),
        _ => Box::new(noise.unwrap_or_else(MockVerifier::exact)),
    }
}

/// Runs `f`, retrying on [`ClientError::Retryable`] up to `attempts` total
/// tries; fatal errors propagate immediately.
pub fn with_retries<T>(
    attempts: usize,
    mut f: impl FnMut() -> Result<T, ClientError>,
) -> Result<T, ClientError> {
    let mut last = None;
    for _ in 0..attempts.max(1) {
        match f() {
            Ok(v) => return Ok(v),
            Err(ClientError::Retryable(msg)) => last = Some(ClientError::Retryable(msg)),
            Err(fatal) => return Err(fatal),
        }
    }
    Err(last.expect("at least one attempt"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, SynthConfig};

    fn vocab() -> Vec<String> {
        ["cup", "plate", "lamp"].map(str::to_owned).to_vec()
    }

    #[test]
    fn mock_rewriter_returns_first_eligible() {
        let rewriter = MockRewriter::new(vocab());
        let avoid = BTreeSet::from(["cup".to_owned()]);
        let got = rewriter.propose("", &avoid, &BTreeSet::new()).unwrap();
        assert_eq!(got.as_deref(), Some("plate"));

        let blacklist = BTreeSet::from(["plate".to_owned()]);
        let got = rewriter.propose("", &avoid, &blacklist).unwrap();
        assert_eq!(got.as_deref(), Some("lamp"));

        let all: BTreeSet<String> = vocab().into_iter().collect();
        let got = rewriter.propose("", &all, &BTreeSet::new()).unwrap();
        assert_eq!(got, None);
    }

    #[test]
    fn exact_verifier_reports_ground_truth() {
        let (scene, _) = generate_scene(&SynthConfig {
            seed: 5,
            ..SynthConfig::default()
        })
        .unwrap();
        let verifier = MockVerifier::exact();
        let object = &scene.objects()[0];
        assert_eq!(
            verifier
                .verify(&scene, &object.room_id, &object.category)
                .unwrap(),
            Verdict::Present
        );
        assert_eq!(
            verifier
                .verify(&scene, &object.room_id, "no-such-category")
                .unwrap(),
            Verdict::Absent
        );
    }

    #[test]
    fn noisy_verifier_flip_rate_matches_binomial_expectation() {
        let (scene, _) = generate_scene(&SynthConfig {
            seed: 6,
            ..SynthConfig::default()
        })
        .unwrap();
        let verifier = MockVerifier::noisy(0.5, 0.0, 99);
        let room = scene.rooms().keys().next().unwrap().clone();
        let mut present = 0usize;
        let n = 1000;
        for i in 0..n {
            // Distinct absent categories give independent draws.
            let category = format!("phantom-{i}");
            if verifier.verify(&scene, &room, &category).unwrap() == Verdict::Present {
                present += 1;
            }
        }
        let fraction = present as f64 / n as f64;
        assert!((fraction - 0.5).abs() < 0.05, "got {fraction}");
    }

    #[test]
    fn noisy_verifier_is_stable_per_query() {
        let (scene, _) = generate_scene(&SynthConfig {
            seed: 7,
            ..SynthConfig::default()
        })
        .unwrap();
        let verifier = MockVerifier::noisy(0.5, 0.5, 4);
        let room = scene.rooms().keys().next().unwrap().clone();
        let first = verifier.verify(&scene, &room, "ghost").unwrap();
        for _ in 0..10 {
            assert_eq!(verifier.verify(&scene, &room, "ghost").unwrap(), first);
        }
    }

    #[test]
    fn retries_stop_on_fatal_and_exhaust_on_retryable() {
        let mut calls = 0;
        let result: Result<(), _> = with_retries(3, || {
            calls += 1;
            Err(ClientError::Retryable("down".into()))
        });
        assert!(matches!(result, Err(ClientError::Retryable(_))));
        assert_eq!(calls, 3);

        let mut calls = 0;
        let result: Result<(), _> = with_retries(3, || {
            calls += 1;
            Err(ClientError::Fatal("bad request".into()))
        });
        assert!(matches!(result, Err(ClientError::Fatal(_))));
        assert_eq!(calls, 1);

        let mut calls = 0;
        let result = with_retries(3, || {
            calls += 1;
            if calls < 2 {
                Err(ClientError::Retryable("blip".into()))
            } else {
                Ok(42)
            }
        });
        assert_eq!(result.unwrap(), 42);
    }
}
