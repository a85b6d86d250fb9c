//! Hospitalization-risk pipeline: preprocessing with an audit log, the
//! at-least-one-day outcome, stratified split, logistic regression and
//! gradient-boosted trees (plus an optional random forest), bootstrapped
//! metrics and single-record prediction.

mod features;
mod logistic;
mod metrics;
mod preprocess;
mod split;
mod tree;

pub use features::{derive_outcome, truncate_atc, FeatureRecord, FeatureSpec, FeatureVocab, ATC_FEATURE, FEATURES};
pub use logistic::{loss_and_grad, train_logistic, LogisticParams};
pub use metrics::{accuracy, auc, evaluate_scores, f1, Estimate, MetricsReport};
pub use preprocess::{preprocess, AuditEntry, DropRule, EncodedMatrix, PreprocessConfig, Preprocessed};
pub use split::stratified_split;
pub use tree::{train_forest, train_gbtree, BoostParams, Boosted, ForestParams, Node, Tree};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::fhir::parse_date;
use crate::table::Table;

pub const MODEL_FORMAT: &str = "fhirsynth-risk";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum RiskError {
    #[error("table lacks column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column {column}: {reason}")]
    BadDate { row: usize, column: String, reason: String },
    #[error("{}stay ends ({end}) before it starts ({start})", row.map(|r| format!("row {r}: ")).unwrap_or_default())]
    EndBeforeStart {
        row: Option<usize>,
        start: String,
        end: String,
    },
    #[error("outcome has a single class")]
    SingleClass,
    #[error("class {class} has {count} sample(s); at least 2 are needed to split")]
    ClassTooSmall { class: u8, count: usize },
    #[error("feature {feature} (column {column}) would be dropped by {rule}")]
    FeatureDropped {
        feature: String,
        column: String,
        rule: DropRule,
    },
    #[error("loss is not finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("record lacks feature `{0}`")]
    MissingFeature(String),
    #[error("unsupported algorithm `{0}` (logistic, gbtree, rf)")]
    UnsupportedAlgorithm(String),
    #[error("model file: {0}")]
    BadModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RiskError {
    fn at_row(self, r: usize) -> RiskError {
        match self {
            RiskError::EndBeforeStart { start, end, .. } => RiskError::EndBeforeStart {
                row: Some(r),
                start,
                end,
            },
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Logistic,
    Gbtree,
    Rf,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Logistic => "logistic",
            Algorithm::Gbtree => "gbtree",
            Algorithm::Rf => "rf",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = RiskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logistic" => Ok(Algorithm::Logistic),
            "gbtree" => Ok(Algorithm::Gbtree),
            "rf" => Ok(Algorithm::Rf),
            other => Err(RiskError::UnsupportedAlgorithm(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Params {
    Logistic {
        config: LogisticParams,
        weights: Vec<f64>,
        bias: f64,
    },
    Boosted {
        config: BoostParams,
        base_score: f64,
        trees: Vec<Tree>,
    },
    Forest {
        config: ForestParams,
        trees: Vec<Tree>,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainConfig {
    pub logistic: LogisticParams,
    pub boost: BoostParams,
    pub forest: ForestParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskModel {
    pub format: String,
    pub version: u32,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub threshold: f64,
    pub spec: FeatureSpec,
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub probability: f64,
    pub class: u8,
    pub warnings: Vec<String>,
}

impl RiskModel {
    /// Probability of the positive class for one encoded row.
    pub fn score(&self, x: &[f64]) -> f64 {
        let p = match &self.params {
            Params::Logistic { weights, bias, .. } => {
                logistic::sigmoid(bias + x.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>())
            }
            Params::Boosted { base_score, trees, .. } => {
                logistic::sigmoid(base_score + trees.iter().map(|t| t.predict(x)).sum::<f64>())
            }
            Params::Forest { trees, .. } => trees.iter().map(|t| t.predict(x)).sum::<f64>() / trees.len() as f64,
        };
        p.clamp(0.0, 1.0)
    }

    pub fn predict(&self, record: &FeatureRecord) -> Result<Prediction, RiskError> {
        let (x, warnings) = self.spec.encode(record)?;
        for w in &warnings {
            tracing::warn!("{w}");
        }
        let probability = self.score(&x);
        Ok(Prediction {
            probability,
            class: u8::from(probability >= self.threshold),
            warnings,
        })
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        let bad = |m: String| Err(RiskError::BadModel(m));
        if self.format != MODEL_FORMAT {
            return bad(format!("format is `{}`, expected `{MODEL_FORMAT}`", self.format));
        }
        if self.version != MODEL_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        if self.spec.features.len() != FEATURES.len() {
            return bad(format!(
                "{} features, expected {}",
                self.spec.features.len(),
                FEATURES.len()
            ));
        }
        if let Some(f) = self.spec.features.iter().find(|f| f.categories.is_empty()) {
            return bad(format!("feature {} has an empty vocabulary", f.name));
        }
        let width = self.spec.width();
        let fits = |trees: &[Tree]| {
            trees.iter().all(|t| {
                !t.nodes.is_empty()
                    && t.nodes.iter().all(|n| match n {
                        Node::Split {
                            feature, left, right, ..
                        } => *feature < width && *left < t.nodes.len() && *right < t.nodes.len(),
                        Node::Leaf { .. } => true,
                    })
            })
        };
        let ok = match &self.params {
            Params::Logistic { weights, .. } => weights.len() == width,
            Params::Boosted { trees, .. } | Params::Forest { trees, .. } => fits(trees),
        };
        if !ok {
            return bad("parameters do not match the feature encoding".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<RiskModel, RiskError> {
        let m: RiskModel = serde_json::from_str(text).map_err(|e| RiskError::BadModel(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RiskError> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RiskModel, RiskError> {
        RiskModel::from_json(&std::fs::read_to_string(path)?)
    }
}

pub struct Trained {
    pub model: RiskModel,
    /// Training loss per iteration (logistic) or per round (boosting).
    pub loss_history: Vec<f64>,
}

pub fn train(
    data: &EncodedMatrix,
    spec: &FeatureSpec,
    algorithm: Algorithm,
    config: &TrainConfig,
    seed: u64,
) -> Result<Trained, RiskError> {
    let positives = data.y.iter().filter(|&&v| v == 1).count();
    if positives == 0 || positives == data.n_rows() {
        return Err(RiskError::SingleClass);
    }
    let (params, loss_history) = match algorithm {
        Algorithm::Logistic => {
            let (weights, bias) = train_logistic(&data.x, &data.y, &config.logistic)?;
            let (loss, _, _) = loss_and_grad(&weights, bias, &data.x, &data.y, config.logistic.lambda);
            (
                Params::Logistic {
                    config: config.logistic,
                    weights,
                    bias,
                },
                vec![loss],
            )
        }
        Algorithm::Gbtree => {
            let b = train_gbtree(&data.x, &data.y, &config.boost)?;
            (
                Params::Boosted {
                    config: config.boost,
                    base_score: b.base_score,
                    trees: b.trees,
                },
                b.loss_history,
            )
        }
        Algorithm::Rf => (
            Params::Forest {
                config: config.forest,
                trees: train_forest(&data.x, &data.y, &config.forest, seed),
            },
            Vec::new(),
        ),
    };
    Ok(Trained {
        model: RiskModel {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            algorithm,
            seed,
            threshold: 0.5,
            spec: spec.clone(),
            params,
        },
        loss_history,
    })
}

pub fn evaluate(model: &RiskModel, data: &EncodedMatrix, n_boot: usize, seed: u64) -> Result<MetricsReport, RiskError> {
    if data.n_rows() == 0 {
        return Err(RiskError::SingleClass);
    }
    let scores: Vec<f64> = data.x.iter().map(|x| model.score(x)).collect();
    evaluate_scores(&scores, &data.y, n_boot, seed)
}

/// Encodes a raw table with a trained model's frozen encoder, deriving the
/// outcome from its stay dates.
pub fn encode_table(model: &RiskModel, t: &Table) -> Result<EncodedMatrix, RiskError> {
    let spec = &model.spec;
    let col = |name: &str| {
        t.column_index(name)
            .ok_or_else(|| RiskError::MissingColumn(name.to_string()))
    };
    let (si, ei) = (col(&spec.start_column)?, col(&spec.end_column)?);
    let mut x = Vec::with_capacity(t.n_rows());
    let mut y = Vec::with_capacity(t.n_rows());
    for (row, cells) in t.rows().iter().enumerate() {
        let date = |i: usize, c: &str| {
            parse_date(&cells[i]).map_err(|reason| RiskError::BadDate {
                row,
                column: c.to_string(),
                reason,
            })
        };
        y.push(derive_outcome(date(si, &spec.start_column)?, date(ei, &spec.end_column)?).map_err(|e| e.at_row(row))?);
        let record = spec.record_from_row(t.header(), cells)?;
        x.push(spec.encode(&record)?.0);
    }
    Ok(EncodedMatrix {
        columns: spec.column_keys(),
        x,
        y,
    })
}

pub struct PipelineOutput {
    pub model: RiskModel,
    pub metrics: MetricsReport,
    pub audit: Vec<AuditEntry>,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub loss_history: Vec<f64>,
}

/// Preprocess, 80/20 stratified split, train, then bootstrap-evaluate on
/// the held-out rows. One seed drives the split, the learner and the
/// resampling.
pub fn run_pipeline(
    t: &Table,
    pre: &PreprocessConfig,
    algorithm: Algorithm,
    config: &TrainConfig,
    n_boot: usize,
    seed: u64,
) -> Result<PipelineOutput, RiskError> {
    let p = preprocess(t, pre)?;
    let (train_rows, test_rows) = stratified_split(&p.matrix.y, 0.8, seed)?;
    let trained = train(&p.matrix.subset(&train_rows), &p.spec, algorithm, config, seed)?;
    let metrics = evaluate(&trained.model, &p.matrix.subset(&test_rows), n_boot, seed)?;
    Ok(PipelineOutput {
        model: trained.model,
        metrics,
        audit: p.audit,
        train_rows,
        test_rows,
        loss_history: trained.loss_history,
    })
}
