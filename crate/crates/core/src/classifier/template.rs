use std::fmt;

use serde::{Deserialize, Serialize};

use super::ClassifierError;
use crate::labels::Anp;

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

/// `[CLS] <pair> [SEP] <caption>` as a token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FusionTemplate {
    tokens: Vec<String>,
    sep: usize,
}

impl FusionTemplate {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn anp_segment(&self) -> &[String] {
        &self.tokens[1..self.sep]
    }

    pub fn caption_segment(&self) -> &[String] {
        &self.tokens[self.sep + 1..]
    }
}

impl fmt::Display for FusionTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tokens.join(" "))
    }
}

pub fn build_template(anp: &Anp, caption: &str) -> Result<FusionTemplate, ClassifierError> {
    if caption.trim().is_empty() {
        return Err(ClassifierError::EmptyCaption);
    }
    let caption_tokens: Vec<String> = caption.split_whitespace().map(String::from).collect();
    if let Some(t) = caption_tokens.iter().find(|t| t.contains(CLS) || t.contains(SEP)) {
        return Err(ClassifierError::ReservedToken(t.clone()));
    }
    let mut tokens = vec![
        CLS.to_string(),
        anp.adjective().to_string(),
        anp.noun().to_string(),
        SEP.to_string(),
    ];
    tokens.extend(caption_tokens);
    Ok(FusionTemplate { tokens, sep: 3 })
}
