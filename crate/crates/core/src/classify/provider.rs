use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{ClassProbabilities, ClassifyError};
use crate::image::SliceImage;
use crate::labels::LabelSet;
use crate::matcher::CorpusIndex;
use crate::metrics::{hu_distance, hu_moments, HuVector};
use crate::preprocess::{segment, PreprocessParams};

/// One slice to classify, already preprocessed to the provider's input size.
#[derive(Debug, Clone)]
pub struct PredictRequest {
    pub slice_id: String,
    pub image: SliceImage,
}

impl PredictRequest {
    pub fn new(slice_id: impl Into<String>, image: SliceImage) -> Self {
        Self {
            slice_id: slice_id.into(),
            image,
        }
    }
}

pub trait Provider: Send + Sync {
    fn id(&self) -> &str;
    fn predict(&self, request: &PredictRequest) -> Result<ClassProbabilities, ClassifyError>;
}

fn checked(id: &str, probs: Vec<f64>, labels: &LabelSet) -> Result<ClassProbabilities, ClassifyError> {
    ClassProbabilities::new(id, probs)?.expect_len(labels)
}

/// Query every provider concurrently and return the results in input order.
pub fn predict_all(providers: &[&dyn Provider], request: &PredictRequest) -> Vec<Result<ClassProbabilities, ClassifyError>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = providers.iter().map(|p| s.spawn(move || p.predict(request))).collect();
        handles
            .into_iter()
            .zip(providers)
            .map(|(h, p)| {
                h.join()
                    .unwrap_or_else(|_| Err(ClassifyError::ProviderUnavailable(p.id().into(), "provider panicked".into())))
            })
            .collect()
    })
}

/// Fixed answer, or always unavailable. For tests and demos.
#[derive(Debug, Clone)]
pub struct StubProvider {
    id: String,
    probs: Option<Vec<f64>>,
}

impl StubProvider {
    pub fn fixed(id: impl Into<String>, probs: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            probs: Some(probs),
        }
    }

    pub fn unavailable(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            probs: None,
        }
    }

    /// Puts `top` on `label` and spreads the rest evenly.
    pub fn confident(id: impl Into<String>, labels: &LabelSet, label: &str, top: f64) -> Result<Self, ClassifyError> {
        let k = labels.index_of(label).ok_or_else(|| ClassifyError::UnknownLabel(label.into()))?;
        let rest = (1.0 - top) / (labels.len() - 1).max(1) as f64;
        Ok(Self::fixed(id, (0..labels.len()).map(|i| if i == k { top } else { rest }).collect()))
    }
}

impl Provider for StubProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn predict(&self, _request: &PredictRequest) -> Result<ClassProbabilities, ClassifyError> {
        match &self.probs {
            Some(p) => ClassProbabilities::new(&self.id, p.clone()),
            None => Err(ClassifyError::ProviderUnavailable(self.id.clone(), "stub marked unavailable".into())),
        }
    }
}

/// Parse `slice_id<TAB>p1..pn` rows. Blank lines, `#` comments and a
/// leading `slice_id` header are skipped. Only the column count is checked.
pub fn parse_predictions_tsv(text: &str, n_labels: usize) -> Result<Vec<(String, Vec<f64>)>, ClassifyError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default().trim();
        if rows.is_empty() && id == "slice_id" {
            continue;
        }
        if id.is_empty() {
            return Err(ClassifyError::Parse {
                line: line_no,
                message: "empty slice id".into(),
            });
        }
        let probs = fields
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| ClassifyError::Parse {
                    line: line_no,
                    message: format!("{f:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if probs.len() != n_labels {
            return Err(ClassifyError::Parse {
                line: line_no,
                message: format!("expected {n_labels} probabilities, got {}", probs.len()),
            });
        }
        rows.push((id.to_string(), probs));
    }
    Ok(rows)
}

/// Precomputed predictions keyed by slice id.
#[derive(Debug, Clone)]
pub struct TsvProvider {
    id: String,
    labels: LabelSet,
    rows: HashMap<String, Vec<f64>>,
}

impl TsvProvider {
    pub fn from_str(id: impl Into<String>, text: &str, labels: LabelSet) -> Result<Self, ClassifyError> {
        let rows = parse_predictions_tsv(text, labels.len())?.into_iter().collect();
        Ok(Self {
            id: id.into(),
            labels,
            rows,
        })
    }

    pub fn open(id: impl Into<String>, path: &Path, labels: LabelSet) -> Result<Self, ClassifyError> {
        Self::from_str(id, &std::fs::read_to_string(path)?, labels)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl Provider for TsvProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn predict(&self, request: &PredictRequest) -> Result<ClassProbabilities, ClassifyError> {
        let probs = self
            .rows
            .get(&request.slice_id)
            .ok_or_else(|| ClassifyError::UnknownSlice(request.slice_id.clone()))?;
        checked(&self.id, probs.clone(), &self.labels)
    }
}

/// Nearest Hu vector over a labelled corpus. Class probabilities are
/// `exp(-d_c)` normalised, with `d_c` the distance to the nearest example of
/// class `c`; classes without examples get zero.
#[derive(Debug, Clone)]
pub struct HuNearestProvider {
    id: String,
    labels: LabelSet,
    preprocess: PreprocessParams,
    examples: Vec<(usize, HuVector)>,
}

impl HuNearestProvider {
    pub const DEFAULT_ID: &'static str = "hu-nearest";

    pub fn new(labels: LabelSet, preprocess: PreprocessParams, examples: Vec<(usize, HuVector)>) -> Result<Self, ClassifyError> {
        if examples.is_empty() {
            return Err(ClassifyError::InvalidConfig("nearest-Hu baseline needs at least one example".into()));
        }
        if let Some((c, _)) = examples.iter().find(|(c, _)| *c >= labels.len()) {
            return Err(ClassifyError::InvalidConfig(format!("class index {c} outside label set")));
        }
        Ok(Self {
            id: Self::DEFAULT_ID.into(),
            labels,
            preprocess,
            examples,
        })
    }

    /// Use every indexed slice whose species is in `labels`.
    pub fn from_index(index: &CorpusIndex, labels: LabelSet) -> Result<Self, ClassifyError> {
        let examples = index
            .records
            .iter()
            .filter_map(|r| labels.index_of(&r.species).map(|c| (c, r.hu)))
            .collect();
        Self::new(labels, index.params.preprocess.clone(), examples)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn examples(&self) -> &[(usize, HuVector)] {
        &self.examples
    }

    pub fn probabilities(&self, hu: &HuVector) -> Vec<f64> {
        let mut nearest = vec![f64::INFINITY; self.labels.len()];
        for (c, ex) in &self.examples {
            nearest[*c] = nearest[*c].min(hu_distance(hu, ex));
        }
        let d0 = nearest.iter().copied().fold(f64::INFINITY, f64::min);
        // Shift by the minimum so the nearest class has weight 1.
        let w: Vec<f64> = nearest.iter().map(|d| (-(d - d0)).exp()).collect();
        let sum: f64 = w.iter().sum();
        w.into_iter().map(|v| v / sum).collect()
    }
}

impl Provider for HuNearestProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn predict(&self, request: &PredictRequest) -> Result<ClassProbabilities, ClassifyError> {
        let mask = segment(&request.image, &self.preprocess)
            .map_err(|e| ClassifyError::ProviderUnavailable(self.id.clone(), e.to_string()))?
            .mask;
        let hu = hu_moments(&mask).map_err(|e| ClassifyError::ProviderUnavailable(self.id.clone(), e.to_string()))?;
        checked(&self.id, self.probabilities(&hu), &self.labels)
    }
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    slice_id: &'a str,
    /// Base64 of row-major 8-bit gray pixels.
    pixels: String,
    size: [usize; 2],
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    probs: Vec<f64>,
}

/// Runs an external program per request: one JSON object on stdin, one
/// JSON object `{"probs": [...]}` on stdout.
#[derive(Debug, Clone)]
pub struct ExternalProcessProvider {
    id: String,
    program: PathBuf,
    args: Vec<String>,
    labels: LabelSet,
    timeout: Duration,
}

impl ExternalProcessProvider {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

    pub fn new(id: impl Into<String>, program: impl Into<PathBuf>, args: Vec<String>, labels: LabelSet) -> Self {
        Self {
            id: id.into(),
            program: program.into(),
            args,
            labels,
            timeout: Self::DEFAULT_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn unavailable(&self, why: impl Into<String>) -> ClassifyError {
        ClassifyError::ProviderUnavailable(self.id.clone(), why.into())
    }

    fn run(&self, body: Vec<u8>) -> Result<Vec<u8>, ClassifyError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| self.unavailable(format!("spawn {}: {e}", self.program.display())))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let mut stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            // A child that exits without reading gives a broken pipe here;
            // the empty response is reported below.
            let _ = stdin.write_all(&body);
            drop(stdin);
        });
        std::thread::spawn(move || {
            let mut out = Vec::new();
            let r = stdout.read_to_end(&mut out).map(|_| out);
            let _ = tx.send(r);
        });
        match rx.recv_timeout(self.timeout) {
            Ok(Ok(out)) => {
                let status = child.wait()?;
                if !status.success() {
                    return Err(self.unavailable(format!("exited with {status}")));
                }
                Ok(out)
            }
            Ok(Err(e)) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(self.unavailable(format!("reading stdout: {e}")))
            }
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(self.unavailable(format!("timed out after {:?}", self.timeout)))
            }
        }
    }
}

impl Provider for ExternalProcessProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn predict(&self, request: &PredictRequest) -> Result<ClassProbabilities, ClassifyError> {
        let img = &request.image;
        let wire = WireRequest {
            slice_id: &request.slice_id,
            pixels: base64::engine::general_purpose::STANDARD.encode(img.to_gray8()),
            size: [img.width(), img.height()],
        };
        let mut body = serde_json::to_vec(&wire).map_err(|e| self.unavailable(e.to_string()))?;
        body.push(b'\n');
        let out = self.run(body)?;
        let resp: WireResponse = serde_json::from_slice(&out).map_err(|e| ClassifyError::ContractViolation {
            provider: self.id.clone(),
            detail: format!("bad response JSON: {e}"),
        })?;
        checked(&self.id, resp.probs, &self.labels)
    }
}
