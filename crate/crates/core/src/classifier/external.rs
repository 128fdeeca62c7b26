//! JSON-lines subprocess classifier.
//!
//! Each request is one line `{"id", "rate", "pcm16_b64"}` on the child's
//! stdin; the child answers with one line `{"id", "probs", "classes"}`.
//! Requests to one child are serialized.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Classifier, ClassifierError, ProbVector};
use crate::audio::{to_mono, to_pcm16, AudioClip};

/// Renormalization is allowed up to this deviation from 1.
pub const SUM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub rate: u32,
    pub pcm16_b64: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    pub probs: Vec<f64>,
    pub classes: Vec<String>,
}

struct Session {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    next_id: u64,
}

impl Session {
    fn exchange(&mut self, clip: &AudioClip) -> Result<Response, ClassifierError> {
        let mono = to_mono(clip);
        let pcm: Vec<u8> = mono.samples().iter().flat_map(|&s| to_pcm16(s).to_le_bytes()).collect();
        let id = self.next_id;
        self.next_id += 1;
        let req = Request { id, rate: mono.sample_rate(), pcm16_b64: base64::engine::general_purpose::STANDARD.encode(pcm) };
        let mut line = serde_json::to_string(&req).expect("request serializes");
        line.push('\n');
        if self.stdin.write_all(line.as_bytes()).and_then(|_| self.stdin.flush()).is_err() {
            return Err(ClassifierError::ChildExited);
        }
        let mut reply = String::new();
        match self.stdout.read_line(&mut reply) {
            Ok(0) | Err(_) => return Err(ClassifierError::ChildExited),
            Ok(_) => {}
        }
        let resp: Response =
            serde_json::from_str(reply.trim()).map_err(|e| ClassifierError::ProtocolError(format!("bad response: {e}")))?;
        if resp.id != id {
            return Err(ClassifierError::ProtocolError(format!("expected id {id}, got {}", resp.id)));
        }
        Ok(resp)
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A classifier served by a long-lived child process.
pub struct ExternalClassifier {
    session: Mutex<Session>,
    class_names: Arc<[String]>,
}

impl std::fmt::Debug for ExternalClassifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalClassifier").field("class_names", &self.class_names).finish()
    }
}

/// Checks signs and normalization; renormalizes sums within tolerance.
pub fn validate_probs(mut probs: Vec<f64>, classes: Arc<[String]>) -> Result<ProbVector, ClassifierError> {
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(ClassifierError::InvalidProbs("negative or non-finite entry".into()));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(ClassifierError::InvalidProbs(format!("sum {sum}")));
    }
    probs.iter_mut().for_each(|p| *p /= sum);
    ProbVector::new(probs, classes)
}

impl ExternalClassifier {
    /// Starts `command` (whitespace-separated argv, no shell) and learns the
    /// class list from a handshake request on one second of silence.
    pub fn spawn(command: &str) -> Result<Self, ClassifierError> {
        let argv: Vec<&str> = command.split_whitespace().collect();
        let (prog, args) = argv.split_first().ok_or_else(|| ClassifierError::ProtocolError("empty command".into()))?;
        let mut child = Command::new(prog).args(args).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::inherit()).spawn()?;
        let stdin = child.stdin.take().expect("piped");
        let stdout = BufReader::new(child.stdout.take().expect("piped"));
        let mut session = Session { child, stdin, stdout, next_id: 0 };
        let hello = session.exchange(&AudioClip::mono(vec![0.0; 16000], 16000))?;
        let class_names: Arc<[String]> = hello.classes.into();
        validate_probs(hello.probs, class_names.clone())?;
        Ok(Self { session: Mutex::new(session), class_names })
    }
}

impl Classifier for ExternalClassifier {
    fn class_names(&self) -> &[String] {
        &self.class_names
    }

    fn predict(&self, clip: &AudioClip) -> Result<ProbVector, ClassifierError> {
        let resp = self.session.lock().unwrap_or_else(|e| e.into_inner()).exchange(clip)?;
        if resp.classes.as_slice() != &*self.class_names {
            return Err(ClassifierError::ProtocolError("class list changed between responses".into()));
        }
        validate_probs(resp.probs, self.class_names.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn responder(body: &str) -> String {
        // sed echoes the request id back inside a fixed response body.
        format!(r#"sed -u s/.*"id":\([0-9]*\).*/{{"id":\1,{body}}}/"#)
    }

    fn clip() -> AudioClip {
        AudioClip::mono(vec![0.1; 800], 16000)
    }

    #[test]
    fn uniform_passthrough() {
        let c = ExternalClassifier::spawn(&responder(r#""probs":[0.5,0.5],"classes":["a","b"]"#)).unwrap();
        assert_eq!(c.class_names(), ["a", "b"]);
        let p = c.predict(&clip()).unwrap();
        assert_eq!(p.probs(), [0.5, 0.5]);
        assert_eq!(c.predict(&clip()).unwrap(), p);
    }

    #[test]
    fn small_excess_is_renormalized() {
        let c = ExternalClassifier::spawn(&responder(r#""probs":[0.5005,0.5],"classes":["a","b"]"#)).unwrap();
        let p = c.predict(&clip()).unwrap();
        assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negative_probability_rejected() {
        let r = ExternalClassifier::spawn(&responder(r#""probs":[-0.1,1.1],"classes":["a","b"]"#));
        assert!(matches!(r, Err(ClassifierError::InvalidProbs(_))));
    }

    #[test]
    fn garbage_is_protocol_error() {
        assert!(matches!(ExternalClassifier::spawn("sed -u s/.*/nonsense/"), Err(ClassifierError::ProtocolError(_))));
    }

    #[test]
    fn silent_exit_is_child_exited() {
        assert!(matches!(ExternalClassifier::spawn("true"), Err(ClassifierError::ChildExited)));
    }
}
