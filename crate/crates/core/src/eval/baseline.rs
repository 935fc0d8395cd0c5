use std::collections::HashSet;

use crate::llm::{ModelRequest, Transport, TransportError, Usage};
use crate::text::{jaccard, normalize, split_sentences, whitespace_tokens};

pub const BASELINE_MODEL: &str = "baseline-diff";

/// A model stand-in for offline runs: it answers detection prompts by
/// reporting every sentence of context A that has no verbatim counterpart
/// in context B, paired with B's most similar unmatched sentence.
pub struct DiffBaseline;

fn between<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.find(open)? + open.len();
    let end = start + text[start..].find(close)?;
    Some(text[start..end].trim())
}

impl DiffBaseline {
    pub fn answer(prompt: &str) -> Option<String> {
        let a = between(prompt, "[Context A]", "[/Context A]")?;
        let b = between(prompt, "[Context B]", "[/Context B]")?;
        let sa: Vec<String> = split_sentences(a).into_iter().map(|s| s.text).collect();
        let sb: Vec<String> = split_sentences(b).into_iter().map(|s| s.text).collect();
        let na: HashSet<String> = sa.iter().map(|s| normalize(s)).collect();
        let nb: HashSet<String> = sb.iter().map(|s| normalize(s)).collect();
        let only_a: Vec<&String> = sa.iter().filter(|s| !nb.contains(&normalize(s))).collect();
        let mut only_b: Vec<Option<&String>> = sb.iter().filter(|s| !na.contains(&normalize(s))).map(Some).collect();
        let binary = prompt.trim_end().ends_with("(Yes/No)");
        if binary {
            let differ = !only_a.is_empty() || only_b.iter().any(Option::is_some);
            return Some(if differ { "Yes" } else { "No" }.to_string());
        }
        let mut pairs = Vec::new();
        for s in only_a {
            let pick = only_b
                .iter()
                .enumerate()
                .filter_map(|(i, c)| c.map(|c| (i, jaccard(s, c))))
                .max_by(|x, y| x.1.total_cmp(&y.1).then(y.0.cmp(&x.0)));
            if let Some((i, _)) = pick {
                pairs.push((s.clone(), only_b[i].take().cloned().unwrap_or_default()));
            }
        }
        if pairs.is_empty() {
            return Some("No conflicts".to_string());
        }
        let mut out = format!("Conflicts: {}\n", pairs.len());
        for (i, (x, y)) in pairs.iter().enumerate() {
            out.push_str(&format!(
                "Conflict {}:\n- Reason: The contexts state different facts.\n- Sentence A: \"{x}\"\n- Sentence B: \"{y}\"\n",
                i + 1
            ));
        }
        Some(out)
    }
}

impl Transport for DiffBaseline {
    fn send(&self, req: &ModelRequest) -> Result<(String, Usage), TransportError> {
        let text = DiffBaseline::answer(&req.user_text)
            .ok_or_else(|| TransportError::Fatal(format!("{BASELINE_MODEL} only answers detection prompts")))?;
        let usage = Usage {
            prompt_tokens: whitespace_tokens(&req.user_text) as u64,
            completion_tokens: whitespace_tokens(&text) as u64,
        };
        Ok((text, usage))
    }
}
