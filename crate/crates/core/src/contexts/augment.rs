use std::collections::BTreeSet;

use crate::kgstore::{EntityId, KnowledgeGraph};

/// Token placed before each appended entity description.
pub const ENTITY_SEPARATOR: &str = "[ENT]";

/// Appends, after the paragraph's own tokens, a separator and the description
/// tokens of every mentioned entity, in first-mention order and once per
/// entity. Entities without a description contribute their name.
pub fn augment_paragraph(tokens: &[String], mentions: &[EntityId], kg: &KnowledgeGraph) -> Vec<String> {
    let mut out = tokens.to_vec();
    let mut seen = BTreeSet::new();
    for &e in mentions {
        if !seen.insert(e) {
            continue;
        }
        let Some(desc) = kg.entity(e) else {
            continue;
        };
        out.push(ENTITY_SEPARATOR.to_string());
        out.extend(desc.text().split_whitespace().map(str::to_string));
    }
    out
}
