use serde::{Deserialize, Serialize};

use super::{build_eacot_prompt, generate_chains, AffectiveCaption, CaptionError, ChatClient, ReasoningChain};
use crate::dataset::ImageRecord;
use crate::encoders::{cosine_similarity, EncoderClient};
use crate::taxonomy::EmotionTaxonomy;

/// Merge threshold used with embedding similarity.
pub const DEFAULT_MERGE_THRESHOLD: f64 = 0.9;

/// How two captions are compared when voting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionSimilarity {
    /// 1 if equal after lowercasing and collapsing whitespace, else 0.
    #[default]
    Exact,
    /// Cosine of text embeddings.
    Embedding,
}

pub fn normalize_caption(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub fn exact_match(a: &str, b: &str) -> f64 {
    if normalize_caption(a) == normalize_caption(b) {
        1.0
    } else {
        0.0
    }
}

/// Majority vote over chain captions.
///
/// Captions are clustered greedily in chain order: each joins the first
/// cluster whose founding caption is at least `merge_threshold` similar, or
/// founds a new one. The largest cluster wins (earliest founder on ties) and
/// its medoid, the member with the highest mean similarity to the others, is
/// returned.
pub fn aggregate_self_consistency(
    chains: &[ReasoningChain],
    similarity: &dyn Fn(&str, &str) -> f64,
    merge_threshold: f64,
) -> Result<AffectiveCaption, CaptionError> {
    if chains.is_empty() {
        return Err(CaptionError::NoChains);
    }
    if !(0.0..=1.0).contains(&merge_threshold) {
        return Err(CaptionError::BadThreshold(merge_threshold));
    }
    let captions: Vec<&str> = chains.iter().map(|c| c.caption.as_str()).collect();
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (i, c) in captions.iter().enumerate() {
        match clusters
            .iter_mut()
            .find(|cl| similarity(captions[cl[0]], c) >= merge_threshold)
        {
            Some(cl) => cl.push(i),
            None => clusters.push(vec![i]),
        }
    }
    let mut winner = &clusters[0];
    for cl in &clusters[1..] {
        if cl.len() > winner.len() {
            winner = cl;
        }
    }
    let mut medoid = (winner[0], f64::NEG_INFINITY);
    if winner.len() > 1 {
        for &m in winner {
            let mean = winner
                .iter()
                .filter(|&&o| o != m)
                .map(|&o| similarity(captions[m], captions[o]))
                .sum::<f64>()
                / (winner.len() - 1) as f64;
            if mean > medoid.1 {
                medoid = (m, mean);
            }
        }
    }
    Ok(AffectiveCaption {
        text: captions[medoid.0].to_string(),
        source_chain_indices: winner.clone(),
    })
}

/// Voting with embedding cosine as the similarity. Each distinct caption is
/// encoded once.
pub fn aggregate_with_encoder(
    chains: &[ReasoningChain],
    encoder: &dyn EncoderClient,
    merge_threshold: f64,
) -> Result<AffectiveCaption, CaptionError> {
    let mut cache = std::collections::HashMap::new();
    for c in chains {
        if cache.contains_key(&c.caption) {
            continue;
        }
        let e = encoder
            .encode_text(&c.caption)
            .map_err(|e| CaptionError::Similarity(e.to_string()))?;
        if e.norm() == 0.0 {
            return Err(CaptionError::Similarity(format!(
                "zero embedding for caption {:?}",
                c.caption
            )));
        }
        cache.insert(c.caption.clone(), e);
    }
    let sim = |a: &str, b: &str| cosine_similarity(&cache[a], &cache[b]).expect("non-zero embeddings of one encoder");
    aggregate_self_consistency(chains, &sim, merge_threshold)
}

/// Prompt, sample `k` chains for `image`, and vote.
pub fn caption_image(
    client: &dyn ChatClient,
    image: &ImageRecord,
    taxonomy: &EmotionTaxonomy,
    k: usize,
    similarity: CaptionSimilarity,
    merge_threshold: f64,
    encoder: Option<&dyn EncoderClient>,
) -> Result<(AffectiveCaption, Vec<ReasoningChain>), CaptionError> {
    let prompt = build_eacot_prompt(taxonomy);
    let chains = generate_chains(client, &prompt, Some(image), k)?;
    let caption = match (similarity, encoder) {
        (CaptionSimilarity::Exact, _) => aggregate_self_consistency(&chains, &exact_match, merge_threshold)?,
        (CaptionSimilarity::Embedding, Some(enc)) => aggregate_with_encoder(&chains, enc, merge_threshold)?,
        (CaptionSimilarity::Embedding, None) => {
            return Err(CaptionError::Similarity("embedding similarity needs an encoder".into()))
        }
    };
    Ok((caption, chains))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::captioning::EmotionalAttributes;

    fn chain(caption: &str) -> ReasoningChain {
        ReasoningChain {
            attributes: EmotionalAttributes {
                scene: "s".into(),
                objects: vec!["o".into()],
                facial_expressions: vec!["none observed".into()],
                human_actions: vec!["none observed".into()],
            },
            object_relations: "r".into(),
            object_scene_interaction: "i".into(),
            caption: caption.into(),
        }
    }

    fn chains(caps: &[&str]) -> Vec<ReasoningChain> {
        caps.iter().map(|c| chain(c)).collect()
    }

    #[test]
    fn majority_wins() {
        let out = aggregate_self_consistency(&chains(&["c1", "c1", "c1", "c2", "c3"]), &exact_match, 1.0).unwrap();
        assert_eq!(out.text, "c1");
        assert_eq!(out.source_chain_indices, [0, 1, 2]);
    }

    #[test]
    fn single_chain() {
        let out = aggregate_self_consistency(&chains(&["only"]), &exact_match, 1.0).unwrap();
        assert_eq!(out.text, "only");
        assert_eq!(out.votes(), 1);
    }

    #[test]
    fn size_tie_goes_to_earliest() {
        let out = aggregate_self_consistency(&chains(&["cA", "cA", "cB", "cB"]), &exact_match, 1.0).unwrap();
        assert_eq!(out.text, "cA");
    }

    #[test]
    fn exact_match_normalizes() {
        assert_eq!(exact_match("A  Cat\tsits", "a cat sits"), 1.0);
        assert_eq!(exact_match("a cat", "a dog"), 0.0);
    }

    #[test]
    fn medoid_is_most_central() {
        // Distances on a line; threshold merges everything within 0.5 of the founder.
        let pos = |s: &str| s.parse::<f64>().unwrap();
        let sim = |a: &str, b: &str| 1.0 - (pos(a) - pos(b)).abs();
        let out = aggregate_self_consistency(&chains(&["0.0", "0.2", "0.4", "0.45", "3"]), &sim, 0.5).unwrap();
        assert_eq!(out.source_chain_indices, [0, 1, 2, 3]);
        assert_eq!(out.text, "0.2");
    }

    #[test]
    fn errors() {
        assert!(matches!(
            aggregate_self_consistency(&[], &exact_match, 1.0),
            Err(CaptionError::NoChains)
        ));
        assert!(matches!(
            aggregate_self_consistency(&chains(&["a"]), &exact_match, 1.5),
            Err(CaptionError::BadThreshold(_))
        ));
    }
}
