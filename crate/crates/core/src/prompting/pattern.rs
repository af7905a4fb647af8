use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::data::{split_words, Tokenizer, MASK_ID, UNK_ID};

pub const MASK_MARKER: &str = "[MASK]";
pub const INPUT_MARKER: &str = "{x}";

#[derive(Clone, Debug, PartialEq, Eq)]
enum Slot {
    Word(String),
    Mask,
    Input,
}

/// Where the mask sits relative to the input text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Mask before the input (`It was [MASK]. {x}`); long inputs lose their tail.
    Prefix,
    /// Mask after the input (`{x}. All in all, it was [MASK].`); long inputs
    /// lose their head.
    Suffix,
}

/// A cloze template with exactly one mask slot and one input slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pattern {
    pub id: String,
    template: String,
    slots: Vec<Slot>,
}

impl Pattern {
    pub fn parse(id: impl Into<String>, template: &str) -> Result<Self, PromptError> {
        let id = id.into();
        let masks = template.matches(MASK_MARKER).count();
        let inputs = template.matches(INPUT_MARKER).count();
        if masks != 1 || inputs != 1 {
            return Err(PromptError::BadTemplate {
                id,
                reason: format!("need exactly one {MASK_MARKER} and one {INPUT_MARKER}, found {masks} and {inputs}"),
            });
        }
        let mut slots = Vec::new();
        let mut rest = template;
        while !rest.is_empty() {
            let next_mask = rest.find(MASK_MARKER);
            let next_input = rest.find(INPUT_MARKER);
            let (pos, marker, slot) = match (next_mask, next_input) {
                (Some(m), Some(i)) if m < i => (m, MASK_MARKER, Slot::Mask),
                (Some(m), None) => (m, MASK_MARKER, Slot::Mask),
                (_, Some(i)) => (i, INPUT_MARKER, Slot::Input),
                (None, None) => (rest.len(), "", Slot::Word(String::new())),
            };
            slots.extend(split_words(&rest[..pos]).into_iter().map(Slot::Word));
            if marker.is_empty() {
                break;
            }
            slots.push(slot);
            rest = &rest[pos + marker.len()..];
        }
        Ok(Self {
            id,
            template: template.to_owned(),
            slots,
        })
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn placement(&self) -> Placement {
        let mask = self.slots.iter().position(|s| *s == Slot::Mask);
        let input = self.slots.iter().position(|s| *s == Slot::Input);
        if mask < input {
            Placement::Prefix
        } else {
            Placement::Suffix
        }
    }

    /// Literal words of the template, for forced vocabulary inclusion.
    pub fn words(&self) -> Vec<String> {
        self.slots
            .iter()
            .filter_map(|s| match s {
                Slot::Word(w) => Some(w.clone()),
                _ => None,
            })
            .collect()
    }

    /// Number of tokens the template itself occupies (mask included).
    pub fn template_len(&self) -> usize {
        self.slots.len() - 1
    }

    /// Token ids of `P(x)` and the mask position. The input is truncated so
    /// the total fits `max_len`; template tokens are never dropped.
    pub fn apply(&self, text: &str, tokenizer: &Tokenizer, max_len: usize) -> Result<(Vec<usize>, usize), PromptError> {
        self.apply_ids(&tokenizer.encode(text), tokenizer, max_len)
    }

    /// [`Pattern::apply`] for an already tokenized input.
    pub fn apply_ids(
        &self,
        input: &[usize],
        tokenizer: &Tokenizer,
        max_len: usize,
    ) -> Result<(Vec<usize>, usize), PromptError> {
        if self.template_len() > max_len {
            return Err(PromptError::TemplateTooLong {
                id: self.id.clone(),
                len: self.template_len(),
                max_len,
            });
        }
        let room = max_len - self.template_len();
        let kept = if input.len() <= room {
            input
        } else {
            match self.placement() {
                Placement::Prefix => &input[..room],
                Placement::Suffix => &input[input.len() - room..],
            }
        };
        let mut ids = Vec::with_capacity(self.template_len() + kept.len());
        let mut mask_pos = 0;
        for slot in &self.slots {
            match slot {
                Slot::Word(w) => ids.push(tokenizer.id(w).unwrap_or(UNK_ID)),
                Slot::Mask => {
                    mask_pos = ids.len();
                    ids.push(MASK_ID);
                }
                Slot::Input => ids.extend_from_slice(kept),
            }
        }
        Ok((ids, mask_pos))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok() -> Tokenizer {
        let p = Pattern::parse("p", "x. All in all, it was [MASK]. {x}").unwrap();
        Tokenizer::build(["great movie"], 50, &p.words()).unwrap()
    }

    #[test]
    fn prefix_pattern_positions() {
        let tok = tok();
        let p1 = Pattern::parse("p1", "It was [MASK]. {x}").unwrap();
        assert_eq!(p1.placement(), Placement::Prefix);
        let (ids, mask) = p1.apply("great movie", &tok, 128).unwrap();
        assert_eq!(mask, 2);
        assert_eq!(tok.decode(&ids), ["it", "was", "[MASK]", ".", "great", "movie"]);
    }

    #[test]
    fn suffix_pattern_positions() {
        let tok = tok();
        let p = Pattern::parse("p3", "{x}. All in all, it was [MASK].").unwrap();
        assert_eq!(p.placement(), Placement::Suffix);
        let (ids, mask) = p.apply("great movie", &tok, 128).unwrap();
        assert_eq!(
            tok.decode(&ids),
            ["great", "movie", ".", "all", "in", "all", ",", "it", "was", "[MASK]", "."]
        );
        assert_eq!(mask, 9);
    }

    #[test]
    fn empty_text_gives_template_only() {
        let tok = tok();
        let p1 = Pattern::parse("p1", "It was [MASK]. {x}").unwrap();
        let (ids, mask) = p1.apply("", &tok, 128).unwrap();
        assert_eq!(ids.len(), 4);
        assert_eq!(ids[mask], MASK_ID);
    }

    #[test]
    fn truncation_keeps_template() {
        let tok = tok();
        let long: Vec<usize> = (0..500).map(|i| 3 + i % 5).collect();
        for template in ["It was [MASK]. {x}", "{x}. All in all, it was [MASK]."] {
            let p = Pattern::parse("p", template).unwrap();
            let (ids, mask) = p.apply_ids(&long, &tok, 128).unwrap();
            assert_eq!(ids.len(), 128);
            assert_eq!(ids[mask], MASK_ID);
            let (short, _) = p.apply_ids(&[], &tok, 128).unwrap();
            let kept: Vec<usize> = match p.placement() {
                Placement::Prefix => {
                    assert_eq!(&ids[..4], &short[..4]);
                    ids[4..].to_vec()
                }
                Placement::Suffix => {
                    assert_eq!(&ids[ids.len() - short.len()..], &short[..]);
                    ids[..ids.len() - short.len()].to_vec()
                }
            };
            match p.placement() {
                Placement::Prefix => assert_eq!(kept, long[..kept.len()]),
                Placement::Suffix => assert_eq!(kept, long[long.len() - kept.len()..]),
            }
        }
    }

    #[test]
    fn bad_templates() {
        assert!(Pattern::parse("a", "no markers").is_err());
        assert!(Pattern::parse("b", "[MASK] [MASK] {x}").is_err());
        let p = Pattern::parse("c", "{x} in summary , the movie is [MASK] .").unwrap();
        assert!(matches!(
            p.apply("x", &tok(), 3),
            Err(PromptError::TemplateTooLong { .. })
        ));
    }
}
