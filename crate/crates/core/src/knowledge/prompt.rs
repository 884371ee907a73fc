//! Stage-2 prompt assembly.

use serde::{Deserialize, Serialize};

use super::objects::{rank_objects, RankedObject};
use super::wiki::{WikiClient, WikiSnippet};
use crate::data::vocab::{Vocab, MASK, OBJ};
use crate::data::TaggedSentence;
use crate::error::{Error, Result};
use crate::stage1::SpanCandidate;

pub const TEMPLATE_PREFIX: &str = "The entity is [mask] for";

/// Evidence gathered for one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBundle {
    pub candidate: SpanCandidate,
    pub wiki: WikiSnippet,
    pub caption: Option<String>,
    /// Ranked, most similar first, at most `max_objects`.
    pub objects: Vec<RankedObject>,
}

/// Looks up the wiki snippet and ranks the sentence's objects.
pub fn gather_knowledge(
    candidate: &SpanCandidate,
    sentence: &TaggedSentence,
    client: &WikiClient,
    max_objects: usize,
) -> Result<KnowledgeBundle> {
    candidate.check(sentence)?;
    let surface = candidate.surface(sentence);
    Ok(KnowledgeBundle {
        candidate: candidate.clone(),
        wiki: client.fetch(&surface)?,
        caption: sentence.image_caption.clone().filter(|c| !c.trim().is_empty()),
        objects: rank_objects(&surface, &sentence.objects, max_objects),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSequence {
    pub tokens: Vec<String>,
    pub token_ids: Vec<usize>,
    pub mask_position: usize,
    /// One per object segment that survived truncation, in bundle order.
    pub obj_positions: Vec<usize>,
    pub candidate: SpanCandidate,
}

impl PromptSequence {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// The untruncated prompt string:
/// `The entity is [mask] for {entity} in this sentence. {sentence} {wiki} {caption} [obj] {class}: {caption} ...`
/// with empty slots and their separating space left out.
pub fn prompt_text(candidate: &SpanCandidate, sentence: &TaggedSentence, bundle: &KnowledgeBundle) -> String {
    let mut text = format!(
        "{TEMPLATE_PREFIX} {} in this sentence. {}",
        candidate.surface(sentence),
        sentence.text()
    );
    let caption = bundle.caption.as_deref().unwrap_or("");
    for slot in [bundle.wiki.text.as_str(), caption] {
        if !slot.trim().is_empty() {
            text.push(' ');
            text.push_str(slot.trim());
        }
    }
    for r in &bundle.objects {
        text.push(' ');
        text.push_str(OBJ);
        text.push(' ');
        text.push_str(&r.object.detail_text());
    }
    text
}

/// Tokens of the head: template, entity and original sentence.
fn head_len(candidate: &SpanCandidate, sentence: &TaggedSentence) -> usize {
    TEMPLATE_PREFIX.split_whitespace().count() + (candidate.end - candidate.start) + 3 + sentence.len()
}

/// Whitespace-tokenizes the prompt, maps it through `vocab`, and truncates
/// from the right to `max_len`. The head must fit on its own.
pub fn build_prompt(
    candidate: &SpanCandidate,
    sentence: &TaggedSentence,
    bundle: &KnowledgeBundle,
    vocab: &Vocab,
    max_len: usize,
) -> Result<PromptSequence> {
    candidate.check(sentence)?;
    if &bundle.candidate != candidate {
        return Err(Error::Invalid("knowledge bundle belongs to a different candidate".into()));
    }
    let head = head_len(candidate, sentence);
    if head > max_len {
        return Err(Error::PromptTooLong { len: head, max: max_len });
    }
    let mut tokens: Vec<String> = prompt_text(candidate, sentence, bundle)
        .split_whitespace()
        .map(str::to_string)
        .collect();
    tokens.truncate(max_len);
    let mask_position = TEMPLATE_PREFIX.split_whitespace().position(|t| t == MASK).expect("template has a mask");
    // Object markers only ever appear after the head.
    let obj_positions = tokens
        .iter()
        .enumerate()
        .skip(head)
        .filter(|(_, t)| t.as_str() == OBJ)
        .map(|(i, _)| i)
        .collect();
    Ok(PromptSequence {
        token_ids: vocab.encode(&tokens),
        tokens,
        mask_position,
        obj_positions,
        candidate: candidate.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::vocab::{MASK_ID, OBJ_ID, UNK_ID};
    use crate::data::{BoundingBox, ObjectDetail};
    use crate::stage1::CandidateSource;

    fn sentence() -> TaggedSentence {
        let tokens = ["Kroger", "opens", "in", "Ohio"].map(String::from).to_vec();
        let tags = ["B-ORG", "O", "O", "B-LOC"].iter().map(|t| t.parse().unwrap()).collect();
        TaggedSentence::new("s1", tokens, tags, false).unwrap()
    }

    fn bundle(c: &SpanCandidate, wiki: &str, caption: Option<&str>, objects: &[(&str, &str)]) -> KnowledgeBundle {
        KnowledgeBundle {
            candidate: c.clone(),
            wiki: WikiSnippet {
                text: wiki.into(),
                ..WikiSnippet::miss("Kroger")
            },
            caption: caption.map(str::to_string),
            objects: objects
                .iter()
                .enumerate()
                .map(|(i, (cl, cap))| RankedObject {
                    index: i,
                    score: 0.0,
                    object: ObjectDetail::new(*cl, *cap, BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap()).unwrap(),
                })
                .collect(),
        }
    }

    #[test]
    fn bare_template() {
        let s = sentence();
        let c = SpanCandidate::new(&s, 0, 1, CandidateSource::Gold).unwrap();
        let b = bundle(&c, "", None, &[]);
        assert_eq!(
            prompt_text(&c, &s, &b),
            "The entity is [mask] for Kroger in this sentence. Kroger opens in Ohio"
        );
    }

    #[test]
    fn object_suffix_and_special_ids() {
        let s = sentence();
        let c = SpanCandidate::new(&s, 0, 1, CandidateSource::Gold).unwrap();
        let b = bundle(&c, "", None, &[("logo", "a red kroger sign")]);
        assert!(prompt_text(&c, &s, &b).ends_with("Ohio [obj] logo: a red kroger sign"));
        let vocab = Vocab::build(["Kroger", "logo:"]);
        let p = build_prompt(&c, &s, &b, &vocab, 64).unwrap();
        assert_eq!(p.token_ids[p.mask_position], MASK_ID);
        assert_eq!(p.obj_positions, vec![13]);
        assert_eq!(p.token_ids[13], OBJ_ID);
        assert_eq!(p.token_ids[0], UNK_ID);
    }

    #[test]
    fn truncation_drops_cut_objects() {
        let s = sentence();
        let c = SpanCandidate::new(&s, 3, 4, CandidateSource::Predicted).unwrap();
        let b = bundle(&c, "", None, &[("a", "x"), ("b", "y"), ("c", "z")]);
        let vocab = Vocab::build([]);
        let full = build_prompt(&c, &s, &b, &vocab, 64).unwrap();
        assert_eq!(full.obj_positions, vec![13, 16, 19]);
        let cut = build_prompt(&c, &s, &b, &vocab, 17).unwrap();
        assert_eq!(cut.tokens.len(), 17);
        assert_eq!(cut.obj_positions, vec![13, 16]);
        assert!(matches!(
            build_prompt(&c, &s, &b, &vocab, 12),
            Err(Error::PromptTooLong { len: 13, max: 12 })
        ));
        assert!(build_prompt(&c, &s, &b, &vocab, 13).unwrap().obj_positions.is_empty());
    }

    #[test]
    fn foreign_bundle_rejected() {
        let s = sentence();
        let c = SpanCandidate::new(&s, 0, 1, CandidateSource::Gold).unwrap();
        let other = SpanCandidate::new(&s, 3, 4, CandidateSource::Gold).unwrap();
        let b = bundle(&other, "", None, &[]);
        assert!(build_prompt(&c, &s, &b, &Vocab::build([]), 64).is_err());
    }
}
