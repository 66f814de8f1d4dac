use crate::taxonomy::EmotionTaxonomy;

/// Display names of the four attributes, in prompt order.
pub const ATTRIBUTE_NAMES: [&str; 4] = ["Scene", "Objects", "Facial expressions", "Human actions"];

/// The three-step reasoning prompt. The reply format it asks for is the one
/// [`parse_reasoning_chain`](super::parse_reasoning_chain) reads.
pub fn build_eacot_prompt(taxonomy: &EmotionTaxonomy) -> String {
    let emotions = taxonomy.classes().join(", ");
    format!(
        "You study how images make people feel. The emotions of interest are: {emotions}.\n\
         Look at the image and work through it step by step.\n\
         \n\
         Step 1. Describe the four emotional attributes of the image:\n\
         - {scene}: the setting and its atmosphere.\n\
         - {objects}: the salient objects.\n\
         - {faces}: the facial expressions of any people or animals.\n\
         - {actions}: what the people in the image are doing.\n\
         Step 2. Explain how the objects relate to one another and how they interact with the scene.\n\
         Step 3. From the steps above, write one concise affective caption: a single sentence of at most {max} words describing the image and the emotion it conveys.\n\
         \n\
         Reply with exactly these lines, separating list items with semicolons and writing \"none observed\" when something is absent:\n\
         SCENE: <scene>\n\
         OBJECTS: <object>; <object>\n\
         EXPRESSIONS: <expression>; <expression>\n\
         ACTIONS: <action>; <action>\n\
         RELATIONS: <relations among objects>\n\
         SCENE_INTERACTION: <how objects interact with the scene>\n\
         CAPTION: <affective caption>\n",
        scene = ATTRIBUTE_NAMES[0],
        objects = ATTRIBUTE_NAMES[1],
        faces = ATTRIBUTE_NAMES[2],
        actions = ATTRIBUTE_NAMES[3],
        max = super::MAX_CAPTION_WORDS,
    )
}
