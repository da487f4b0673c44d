//! Word lists shipped as plain-text data files, one entry per line.

const ATTENTION_OBJECTS: &str = include_str!("../../data/attention_objects.txt");
const ATTENTION_APPEARANCES: &str = include_str!("../../data/attention_appearances.txt");
const ATTRIBUTE_OBJECTS: &str = include_str!("../../data/attribute_objects.txt");
const ATTRIBUTE_COLORS: &str = include_str!("../../data/attribute_colors.txt");
const ATTRIBUTE_STYLES: &str = include_str!("../../data/attribute_styles.txt");
const METRIC_PROMPTS: &str = include_str!("../../data/metric_prompts.txt");
const TRAINING_TEMPLATES: &str = include_str!("../../data/training_templates.txt");
const TOY_SHAPES: &str = include_str!("../../data/toy_shapes.txt");
const TOY_TEXTURES: &str = include_str!("../../data/toy_textures.txt");
const CONCEPT_DESCRIPTIONS: &str = include_str!("../../data/concept_descriptions.tsv");

fn lines(s: &'static str) -> Vec<&'static str> {
    s.lines().map(str::trim).filter(|l| !l.is_empty()).collect()
}

/// The 50 object words of the attention-ratio analysis (duplicates kept).
pub fn attention_objects() -> Vec<&'static str> {
    lines(ATTENTION_OBJECTS)
}

/// The 20 appearance adjectives of the attention-ratio analysis.
pub fn attention_appearances() -> Vec<&'static str> {
    lines(ATTENTION_APPEARANCES)
}

/// The 13 objects of the attribute sweep.
pub fn attribute_objects() -> Vec<&'static str> {
    lines(ATTRIBUTE_OBJECTS)
}

/// The 11 color names of the attribute sweep.
pub fn colors() -> Vec<&'static str> {
    lines(ATTRIBUTE_COLORS)
}

/// The 7 style descriptions of the attribute sweep.
pub fn styles() -> Vec<&'static str> {
    lines(ATTRIBUTE_STYLES)
}

/// The 14 text-similarity prompts, each containing `<token>`.
pub fn metric_prompts() -> Vec<&'static str> {
    lines(METRIC_PROMPTS)
}

/// Neutral captions used as inversion training prompts.
pub fn training_templates() -> Vec<&'static str> {
    lines(TRAINING_TEMPLATES)
}

/// Shape names of the synthetic corpus.
pub fn toy_shapes() -> Vec<&'static str> {
    lines(TOY_SHAPES)
}

/// Texture names of the synthetic corpus.
pub fn toy_textures() -> Vec<&'static str> {
    lines(TOY_TEXTURES)
}

/// `(dataset, description)` pairs of the 15 evaluation concepts; documentation only.
pub fn concept_descriptions() -> Vec<(&'static str, &'static str)> {
    lines(CONCEPT_DESCRIPTIONS)
        .into_iter()
        .skip(1)
        .filter_map(|l| l.split_once('\t'))
        .collect()
}

/// Every word appearing in any shipped list, in first-seen order.
pub fn all_vocabulary_words() -> Vec<String> {
    let mut texts: Vec<&str> = Vec::new();
    texts.extend(toy_shapes());
    texts.extend(toy_textures());
    texts.extend(colors());
    texts.extend(attribute_objects());
    texts.extend(styles());
    texts.extend(attention_objects());
    texts.extend(attention_appearances());
    texts.extend(training_templates());
    texts.extend(metric_prompts());
    texts.extend(concept_descriptions().into_iter().map(|(_, d)| d));
    texts.push("that looks like ,");
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for t in texts {
        for w in super::vocab::split_words(t) {
            if w.starts_with('<') {
                continue;
            }
            if seen.insert(w.clone()) {
                out.push(w);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_sizes() {
        assert_eq!(attention_objects().len(), 50);
        assert_eq!(attention_appearances().len(), 20);
        assert_eq!(attribute_objects().len(), 13);
        assert_eq!(colors().len(), 11);
        assert_eq!(styles().len(), 7);
        assert_eq!(metric_prompts().len(), 14);
        assert_eq!(concept_descriptions().len(), 15);
        assert!(metric_prompts().iter().all(|p| p.contains("<token>")));
    }
}
