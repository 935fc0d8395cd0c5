//! Versioned prompt templates with `{name}` placeholders.
//!
//! Bundled templates are compiled in; a directory of overrides with the same
//! file names may replace any of them at run time.

use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TemplateName {
    GenerateMultiHop,
    GenerateSingleHop,
    GenerateTripletOnly,
    KgToText,
    KgToTextVerify,
    DetectBinary,
    DetectMultiStep,
    RateNaturalness,
    RateRealism,
}

impl TemplateName {
    pub const ALL: [TemplateName; 9] = [
        TemplateName::GenerateMultiHop,
        TemplateName::GenerateSingleHop,
        TemplateName::GenerateTripletOnly,
        TemplateName::KgToText,
        TemplateName::KgToTextVerify,
        TemplateName::DetectBinary,
        TemplateName::DetectMultiStep,
        TemplateName::RateNaturalness,
        TemplateName::RateRealism,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateName::GenerateMultiHop => "generate_multi_hop.txt",
            TemplateName::GenerateSingleHop => "generate_single_hop.txt",
            TemplateName::GenerateTripletOnly => "generate_triplet_only.txt",
            TemplateName::KgToText => "kg_to_text.txt",
            TemplateName::KgToTextVerify => "kg_to_text_verify.txt",
            TemplateName::DetectBinary => "detect_binary.txt",
            TemplateName::DetectMultiStep => "detect_multi_step.txt",
            TemplateName::RateNaturalness => "rate_naturalness.txt",
            TemplateName::RateRealism => "rate_realism.txt",
        }
    }

    fn bundled(self) -> &'static str {
        match self {
            TemplateName::GenerateMultiHop => include_str!("../assets/prompts/generate_multi_hop.txt"),
            TemplateName::GenerateSingleHop => include_str!("../assets/prompts/generate_single_hop.txt"),
            TemplateName::GenerateTripletOnly => include_str!("../assets/prompts/generate_triplet_only.txt"),
            TemplateName::KgToText => include_str!("../assets/prompts/kg_to_text.txt"),
            TemplateName::KgToTextVerify => include_str!("../assets/prompts/kg_to_text_verify.txt"),
            TemplateName::DetectBinary => include_str!("../assets/prompts/detect_binary.txt"),
            TemplateName::DetectMultiStep => include_str!("../assets/prompts/detect_multi_step.txt"),
            TemplateName::RateNaturalness => include_str!("../assets/prompts/rate_naturalness.txt"),
            TemplateName::RateRealism => include_str!("../assets/prompts/rate_realism.txt"),
        }
    }
}

/// The template set in use.
#[derive(Clone, Debug)]
pub struct Templates {
    texts: BTreeMap<TemplateName, String>,
}

impl Default for Templates {
    fn default() -> Self {
        Templates { texts: TemplateName::ALL.into_iter().map(|n| (n, n.bundled().to_string())).collect() }
    }
}

impl Templates {
    /// Bundled templates, with any same-named file in `dir` taking precedence.
    pub fn with_overrides(dir: &Path) -> std::io::Result<Self> {
        let mut t = Templates::default();
        for name in TemplateName::ALL {
            let path = dir.join(name.file_name());
            if path.exists() {
                t.texts.insert(name, std::fs::read_to_string(&path)?);
            }
        }
        Ok(t)
    }

    pub fn get(&self, name: TemplateName) -> &str {
        &self.texts[&name]
    }

    pub fn render(&self, name: TemplateName, values: &[(&str, &str)]) -> String {
        render(self.get(name), values)
    }
}

/// Substitute `{key}` placeholders in one pass; braces that do not name a
/// supplied key are copied through unchanged.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while let Some(i) = rest.find('{') {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        for (key, value) in values {
            if tail.len() > key.len() + 1 && tail[1..].starts_with(key) && tail[1 + key.len()..].starts_with('}') {
                out.push_str(value);
                rest = &tail[key.len() + 2..];
                continue 'outer;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}
