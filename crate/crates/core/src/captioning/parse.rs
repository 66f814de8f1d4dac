//! Reader for the line-oriented chain format:
//!
//! ```text
//! SCENE: a rainy street at dusk
//! OBJECTS: umbrella; puddle
//! EXPRESSIONS: tired smile
//! ACTIONS: walking
//! RELATIONS: the umbrella shields the walker
//! SCENE_INTERACTION: reflections of lamps in the puddles
//! CAPTION: A tired walker finds calm on a rainy evening.
//! ```
//!
//! A header's content may continue on following lines until the next header.

use super::{CaptionError, EmotionalAttributes, ReasoningChain, MAX_CAPTION_WORDS};

/// Placeholder for an attribute the model reports as absent.
pub const NONE_OBSERVED: &str = "none observed";

const SECTIONS: [(&str, &str); 7] = [
    ("SCENE", "scene"),
    ("OBJECTS", "objects"),
    ("EXPRESSIONS", "expressions"),
    ("ACTIONS", "actions"),
    ("RELATIONS", "relations"),
    ("SCENE_INTERACTION", "scene_interaction"),
    ("CAPTION", "caption"),
];

fn header_of(line: &str) -> Option<(usize, &str)> {
    let (head, rest) = line.trim_start().split_once(':')?;
    let head = head.trim();
    SECTIONS
        .iter()
        .position(|(h, _)| h.eq_ignore_ascii_case(head))
        .map(|i| (i, rest))
}

fn is_absent(s: &str) -> bool {
    let s = s.trim().trim_end_matches('.').to_ascii_lowercase();
    s.is_empty() || s == NONE_OBSERVED || s == "none"
}

fn list(text: &str) -> Vec<String> {
    let items: Vec<String> = text
        .split(';')
        .map(str::trim)
        .filter(|s| !is_absent(s))
        .map(String::from)
        .collect();
    if items.is_empty() {
        vec![NONE_OBSERVED.to_string()]
    } else {
        items
    }
}

fn prose(text: &str) -> String {
    if is_absent(text) {
        NONE_OBSERVED.to_string()
    } else {
        text.trim().to_string()
    }
}

pub fn parse_reasoning_chain(raw: &str) -> Result<ReasoningChain, CaptionError> {
    if raw.trim().is_empty() {
        return Err(CaptionError::parse("response", "empty response"));
    }
    let mut content: [Option<String>; 7] = Default::default();
    let mut current: Option<usize> = None;
    for line in raw.lines() {
        if let Some((i, rest)) = header_of(line) {
            if content[i].is_some() {
                return Err(CaptionError::parse(SECTIONS[i].1, "section appears twice"));
            }
            content[i] = Some(rest.trim().to_string());
            current = Some(i);
        } else if let Some(i) = current {
            let extra = line.trim();
            if !extra.is_empty() {
                let c = content[i].as_mut().expect("current section exists");
                if !c.is_empty() {
                    c.push(' ');
                }
                c.push_str(extra);
            }
        }
    }
    let mut take = |i: usize| {
        content[i]
            .take()
            .ok_or_else(|| CaptionError::parse(SECTIONS[i].1, "section missing"))
    };
    let caption = take(6)?;
    let scene = take(0)?;
    let objects = take(1)?;
    let expressions = take(2)?;
    let actions = take(3)?;
    let relations = take(4)?;
    let interaction = take(5)?;

    let caption = caption.trim().to_string();
    if is_absent(&caption) {
        return Err(CaptionError::parse("caption", "caption is empty"));
    }
    let words = caption.split_whitespace().count();
    if words > MAX_CAPTION_WORDS {
        return Err(CaptionError::parse(
            "caption",
            format!("caption has {words} words, limit is {MAX_CAPTION_WORDS}"),
        ));
    }
    let attributes = EmotionalAttributes {
        scene: if is_absent(&scene) {
            String::new()
        } else {
            scene.trim().to_string()
        },
        objects: list(&objects),
        facial_expressions: list(&expressions),
        human_actions: list(&actions),
    };
    let observed = |v: &[String]| v.iter().any(|s| s != NONE_OBSERVED);
    if attributes.scene.is_empty()
        && !observed(&attributes.objects)
        && !observed(&attributes.facial_expressions)
        && !observed(&attributes.human_actions)
    {
        return Err(CaptionError::parse("scene", "no attribute was observed"));
    }
    Ok(ReasoningChain {
        attributes,
        object_relations: prose(&relations),
        object_scene_interaction: prose(&interaction),
        caption,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = "SCENE: a sunny beach\n\
                        OBJECTS: kite; dog\n\
                        EXPRESSIONS: wide grin\n\
                        ACTIONS: running; laughing\n\
                        RELATIONS: the dog chases the kite\n\
                        SCENE_INTERACTION: the kite rides the sea breeze\n\
                        CAPTION: A joyful dog races a kite along a bright beach.";

    #[test]
    fn full_response() {
        let c = parse_reasoning_chain(FULL).unwrap();
        assert_eq!(c.attributes.scene, "a sunny beach");
        assert_eq!(c.attributes.objects, ["kite", "dog"]);
        assert_eq!(c.attributes.human_actions, ["running", "laughing"]);
        assert_eq!(c.caption, "A joyful dog races a kite along a bright beach.");
    }

    #[test]
    fn missing_caption_names_section() {
        let raw = FULL
            .lines()
            .filter(|l| !l.starts_with("CAPTION"))
            .collect::<Vec<_>>()
            .join("\n");
        let err = parse_reasoning_chain(&raw).unwrap_err();
        assert!(matches!(err, CaptionError::Parse { section: "caption", .. }));
        assert!(err.to_string().contains("caption"));
    }

    #[test]
    fn empty_list_becomes_none_observed() {
        let raw = FULL.replace("EXPRESSIONS: wide grin", "EXPRESSIONS:");
        let c = parse_reasoning_chain(&raw).unwrap();
        assert_eq!(c.attributes.facial_expressions, [NONE_OBSERVED]);
    }

    #[test]
    fn continuation_lines_and_case() {
        let raw = FULL
            .replace("CAPTION: A joyful", "caption: A joyful\n  ")
            .replace("RELATIONS:", "  Relations :");
        let c = parse_reasoning_chain(&raw).unwrap();
        assert_eq!(c.caption, "A joyful dog races a kite along a bright beach.");
        assert_eq!(c.object_relations, "the dog chases the kite");
    }

    #[test]
    fn rejects_duplicates_and_long_captions() {
        let dup = format!("{FULL}\nSCENE: again");
        assert!(matches!(
            parse_reasoning_chain(&dup),
            Err(CaptionError::Parse { section: "scene", .. })
        ));
        let long = FULL.replace("A joyful dog", &"very ".repeat(61));
        assert!(matches!(
            parse_reasoning_chain(&long),
            Err(CaptionError::Parse { section: "caption", .. })
        ));
        assert!(parse_reasoning_chain("  ").is_err());
    }
}
