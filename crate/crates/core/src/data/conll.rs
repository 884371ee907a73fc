//! CoNLL-2003 column format.
//!
//! One token per line with whitespace-separated columns, the BIO tag in the
//! last column, blank lines between sentences, `-DOCSTART-` lines skipped.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{BioTag, Dataset, Split, TaggedSentence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default)]
pub struct ConllOptions {
    /// Append the sibling dev file (same name with `train` -> `dev`).
    pub merge_dev: bool,
    /// Repair ill-formed BIO instead of rejecting it.
    pub repair_bio: bool,
}

pub fn read_conll(path: &Path, merge_dev: bool) -> Result<Dataset> {
    read_conll_with(
        path,
        ConllOptions {
            merge_dev,
            repair_bio: false,
        },
    )
}

pub fn read_conll_with(path: &Path, opts: ConllOptions) -> Result<Dataset> {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "conll".into());
    let split = guess_split(&stem);
    let mut sentences = parse_file(path, &stem, opts.repair_bio)?;
    if opts.merge_dev {
        match dev_sibling(path).filter(|p| p.exists()) {
            Some(dev) => {
                let dev_stem = dev
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "dev".into());
                sentences.extend(parse_file(&dev, &dev_stem, opts.repair_bio)?);
            }
            None => log::warn!("no dev file next to {}; training on train only", path.display()),
        }
    }
    Ok(Dataset::new(stem, sentences, split))
}

fn guess_split(stem: &str) -> Split {
    let s = stem.to_ascii_lowercase();
    if s.contains("test") {
        Split::Test
    } else if s.contains("dev") || s.contains("valid") {
        Split::Dev
    } else {
        Split::Train
    }
}

/// The dev file sitting next to a train file, if the name mentions `train`.
pub fn dev_sibling(path: &Path) -> Option<PathBuf> {
    let name = path.file_name()?.to_str()?;
    if !name.contains("train") {
        return None;
    }
    Some(path.with_file_name(name.replacen("train", "dev", 1)))
}

fn parse_file(path: &Path, id_prefix: &str, repair: bool) -> Result<Vec<TaggedSentence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_str(&text, path, id_prefix, repair)
}

pub(crate) fn parse_str(text: &str, path: &Path, id_prefix: &str, repair: bool) -> Result<Vec<TaggedSentence>> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut tags: Vec<BioTag> = Vec::new();
    let mut lines: Vec<usize> = Vec::new();

    let mut flush = |tokens: &mut Vec<String>, tags: &mut Vec<BioTag>, lines: &mut Vec<usize>| -> Result<()> {
        if tokens.is_empty() {
            return Ok(());
        }
        let id = format!("{id_prefix}-{}", sentences.len());
        let sentence = TaggedSentence::new(id, std::mem::take(tokens), std::mem::take(tags), repair).map_err(|e| {
            match e {
                Error::IllFormedBio { position, message } => Error::Parse {
                    path: path.to_path_buf(),
                    line: lines[position],
                    message,
                },
                other => other,
            }
        })?;
        lines.clear();
        sentences.push(sentence);
        Ok(())
    };

    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            flush(&mut tokens, &mut tags, &mut lines)?;
            continue;
        }
        if trimmed.starts_with("-DOCSTART-") {
            continue;
        }
        let cols: Vec<&str> = trimmed.split_whitespace().collect();
        if cols.len() < 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected at least two columns, found `{trimmed}`"),
            });
        }
        let tag: BioTag = cols[cols.len() - 1].parse().map_err(|e: Error| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        tokens.push(cols[0].to_string());
        tags.push(tag);
        lines.push(line_no);
    }
    flush(&mut tokens, &mut tags, &mut lines)?;
    Ok(sentences)
}

/// Two-column `token tag` serialization with blank-line sentence breaks.
pub fn write_conll(dataset: &Dataset) -> String {
    let mut out = String::new();
    for (i, s) in dataset.sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (tok, tag) in s.tokens.iter().zip(&s.tags) {
            let _ = writeln!(out, "{tok} {tag}");
        }
    }
    out
}
