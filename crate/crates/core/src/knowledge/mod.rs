//! Knowledge for stage 2: Wikipedia summaries, ranked object details and
//! the prompt that carries them.

pub mod objects;
pub mod prompt;
pub mod wiki;

pub use objects::{lexical_score, object_score, rank_objects, RankedObject};
pub use prompt::{build_prompt, gather_knowledge, prompt_text, KnowledgeBundle, PromptSequence, TEMPLATE_PREFIX};
pub use wiki::{truncate_at_word, WikiClient, WikiClientConfig, WikiSnippet, WikiSource};
