use serde::{Deserialize, Serialize};

use super::{parse_detection_response, EvalError, ParseStatus, Strategy};
use crate::fact::Fact;
use crate::kg::{SurfaceForms, Triplet};
use crate::llm::{Completer, ModelRequest};
use crate::registry::RelationRegistry;
use crate::templates::{TemplateName, Templates};

/// Whether a model already knows a seed fact, judged by repeated yes/no
/// questions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParametricClass {
    Known,
    Unknown,
    /// Neither class: between the two thresholds.
    Ambiguous,
}

impl ParametricClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ParametricClass::Known => "known",
            ParametricClass::Unknown => "unknown",
            ParametricClass::Ambiguous => "ambiguous",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub model: String,
    pub n_trials: u32,
    /// At least this many correct answers means Known.
    pub known_min: u32,
    /// At most this many correct answers means Unknown.
    pub unknown_max: u32,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { model: String::new(), n_trials: 5, known_min: 4, unknown_max: 1, temperature: 0.7, max_tokens: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub class: ParametricClass,
    pub correct: u32,
    /// Parsed yes/no per trial; `None` for unreadable answers.
    pub answers: Vec<Option<bool>>,
}

/// The yes/no question for a triplet, from the relation's template.
pub fn probe_question(t: &Triplet, registry: &RelationRegistry, aliases: &dyn SurfaceForms) -> Result<String, EvalError> {
    let entry = registry.get(&t.relation).ok_or_else(|| EvalError::NoQuestion(t.relation.to_string()))?;
    let surface = Fact::from(t.clone()).surface(aliases, registry);
    Ok(format!("{} Answer Yes or No.", entry.question(&surface.subject, &surface.object)))
}

/// Ask the question `n_trials` times (one run index each). `truth` is the
/// answer that counts as correct; unreadable replies count as wrong.
pub fn probe_parametric(
    t: &Triplet,
    truth: bool,
    registry: &RelationRegistry,
    aliases: &dyn SurfaceForms,
    completer: &dyn Completer,
    config: &ProbeConfig,
) -> Result<ProbeOutcome, EvalError> {
    let question = probe_question(t, registry, aliases)?;
    let mut answers = Vec::with_capacity(config.n_trials as usize);
    for trial in 0..config.n_trials {
        let mut req = ModelRequest::new(&config.model, &question).with_run(trial).with_temperature(config.temperature);
        req.max_tokens = config.max_tokens;
        let resp = completer.complete(&req).map_err(|e| EvalError::Model(e.to_string()))?;
        let parsed = parse_detection_response(&resp.text, Strategy::Binary);
        answers.push((parsed.parse_status != ParseStatus::Failed).then_some(parsed.detected));
    }
    let correct = answers.iter().filter(|a| **a == Some(truth)).count() as u32;
    let class = if correct >= config.known_min {
        ParametricClass::Known
    } else if correct <= config.unknown_max {
        ParametricClass::Unknown
    } else {
        ParametricClass::Ambiguous
    };
    Ok(ProbeOutcome { class, correct, answers })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityDimension {
    Naturalness,
    Realism,
}

impl std::str::FromStr for QualityDimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naturalness" => Ok(QualityDimension::Naturalness),
            "realism" => Ok(QualityDimension::Realism),
            other => Err(format!("unknown quality dimension {other:?}")),
        }
    }
}

/// A reply must be a single integer from 0 to 5.
pub fn parse_rating(raw: &str) -> Result<u8, EvalError> {
    let t = raw.trim().trim_end_matches('.').trim();
    match t.parse::<u8>() {
        Ok(v) if v <= 5 && !t.starts_with('+') => Ok(v),
        _ => Err(EvalError::Rating { raw: raw.to_string() }),
    }
}

pub fn rate_quality(
    context: &str,
    dimension: QualityDimension,
    templates: &Templates,
    completer: &dyn Completer,
    model: &str,
) -> Result<u8, EvalError> {
    if context.trim().is_empty() {
        return Err(EvalError::EmptyContext('A'));
    }
    let name = match dimension {
        QualityDimension::Naturalness => TemplateName::RateNaturalness,
        QualityDimension::Realism => TemplateName::RateRealism,
    };
    let mut req = ModelRequest::new(model, templates.render(name, &[("context", context)]));
    req.max_tokens = 4;
    let resp = completer.complete(&req).map_err(|e| EvalError::Model(e.to_string()))?;
    parse_rating(&resp.text)
}

/// Mean of the successful ratings; failed ones are left out.
pub fn mean_rating(ratings: &[Result<u8, EvalError>]) -> Option<f64> {
    let ok: Vec<f64> = ratings.iter().filter_map(|r| r.as_ref().ok()).map(|&v| f64::from(v)).collect();
    (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::kg::{AliasEntry, AliasTable, Aliases};
    use crate::llm::{LlmError, ModelResponse, Usage};

    /// Answers from a fixed script, indexed by run.
    pub(crate) struct Scripted(pub Vec<&'static str>);

    impl Completer for Scripted {
        fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, LlmError> {
            let text = self.0[req.run_index as usize % self.0.len()].to_string();
            Ok(ModelResponse { text, usage: Usage::default(), latency_ms: 0, cache_hit: false })
        }
    }

    fn aliases() -> Aliases {
        let mut entities = AliasTable::default();
        entities.insert(AliasEntry::new("Q1", ["Barack Obama Sr."]));
        entities.insert(AliasEntry::new("Q2", ["Barack Obama"]));
        Aliases { entities, relations: AliasTable::default() }
    }

    #[test]
    fn question_from_template() {
        let q = probe_question(&Triplet::new("Q2", "P22", "Q1"), &RelationRegistry::default(), &aliases()).unwrap();
        assert_eq!(q, "Is Barack Obama Sr. the father of Barack Obama? Answer Yes or No.");
        assert!(probe_question(&Triplet::new("Q2", "P9", "Q1"), &RelationRegistry::default(), &aliases()).is_err());
    }

    #[test]
    fn thresholds() {
        let t = Triplet::new("Q2", "P22", "Q1");
        let cases: [(&[&'static str], ParametricClass); 5] = [
            (&["Yes", "Yes", "Yes", "Yes", "Yes"], ParametricClass::Known),
            (&["Yes", "No", "Yes", "Yes", "Yes"], ParametricClass::Known),
            (&["Yes", "No", "Yes", "hmm", "Yes"], ParametricClass::Ambiguous),
            (&["No", "No", "Yes", "I am not sure", "No"], ParametricClass::Unknown),
            (&["No", "No", "No", "No", "No"], ParametricClass::Unknown),
        ];
        for (script, expected) in cases {
            let out = probe_parametric(
                &t,
                true,
                &RelationRegistry::default(),
                &aliases(),
                &Scripted(script.to_vec()),
                &ProbeConfig::default(),
            )
            .unwrap();
            assert_eq!(out.class, expected, "{script:?}");
        }
    }

    #[test]
    fn ratings() {
        assert_eq!(parse_rating("4"), Ok(4));
        assert_eq!(parse_rating(" 5.\n"), Ok(5));
        assert!(parse_rating("great!").is_err());
        assert!(parse_rating("6").is_err());
        assert!(parse_rating("4/5").is_err());
        let r = rate_quality("A paragraph.", QualityDimension::Realism, &Templates::default(), &Scripted(vec!["3"]), "m");
        assert_eq!(r, Ok(3));
        let mean = mean_rating(&[Ok(4), Ok(4), Ok(5), Err(EvalError::Rating { raw: "x".into() })]).unwrap();
        assert_eq!(format!("{mean:.2}"), "4.33");
        assert_eq!(mean_rating(&[]), None);
    }
}
