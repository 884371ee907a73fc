//! Wikipedia summaries: disk cache, then offline snapshot, then (only when
//! enabled) the live summary endpoint.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ENDPOINT: &str = "https://en.wikipedia.org/api/rest_v1/page/summary/{query}";
pub const DEFAULT_MAX_WIKI_CHARS: usize = 600;
/// Overrides the cache directory when set.
pub const CACHE_DIR_ENV: &str = "SCANNER_CACHE_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WikiSource {
    Live,
    Cache,
    Snapshot,
    Miss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WikiSnippet {
    pub query: String,
    pub text: String,
    /// Unix seconds of the live fetch that produced the text; 0 when the
    /// text did not come from the network.
    pub fetched_at: u64,
    pub source: WikiSource,
}

impl WikiSnippet {
    pub fn miss(query: &str) -> Self {
        Self {
            query: query.to_string(),
            text: String::new(),
            fetched_at: 0,
            source: WikiSource::Miss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WikiClientConfig {
    pub cache_dir: Option<PathBuf>,
    /// JSON object mapping surface to summary text.
    pub snapshot: Option<PathBuf>,
    pub online: bool,
    /// URL template with one `{query}` slot.
    pub endpoint: String,
    pub max_wiki_chars: usize,
    pub timeout_secs: u64,
}

impl Default for WikiClientConfig {
    fn default() -> Self {
        Self {
            cache_dir: std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from),
            snapshot: None,
            online: false,
            endpoint: DEFAULT_ENDPOINT.to_string(),
            max_wiki_chars: DEFAULT_MAX_WIKI_CHARS,
            timeout_secs: 10,
        }
    }
}

pub struct WikiClient {
    config: WikiClientConfig,
    snapshot: BTreeMap<String, String>,
    http: Option<reqwest::blocking::Client>,
}

/// Lowercase, every non-alphanumeric character replaced by `_`.
pub fn cache_key(surface: &str) -> String {
    surface
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { '_' })
        .collect()
}

/// Cuts `text` to at most `max` characters, backing off to the last
/// whitespace when the cut would split a word.
pub fn truncate_at_word(text: &str, max: usize) -> String {
    let text = text.trim();
    if text.chars().count() <= max {
        return text.to_string();
    }
    let cut = text.char_indices().nth(max).map_or(text.len(), |(i, _)| i);
    let head = &text[..cut];
    let splits_word = !text[cut..].starts_with(char::is_whitespace);
    let head = if splits_word {
        match head.rfind(char::is_whitespace) {
            Some(i) => &head[..i],
            None => head,
        }
    } else {
        head
    };
    head.trim_end().to_string()
}

fn percent_encode(s: &str) -> String {
    let mut out = String::new();
    for b in s.replace(' ', "_").bytes() {
        if b.is_ascii_alphanumeric() || b"-_.~".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

impl WikiClient {
    /// Loads the snapshot eagerly so an unreadable file fails here rather
    /// than on every lookup.
    pub fn new(config: WikiClientConfig) -> Result<Self> {
        let snapshot = match &config.snapshot {
            Some(p) => crate::io::read_json(p).map_err(|e| Error::Config(format!("wiki snapshot {}: {e}", p.display())))?,
            None => BTreeMap::new(),
        };
        if let Some(dir) = &config.cache_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let http = if config.online {
            let client = reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(config.timeout_secs))
                .user_agent(concat!("scanner/", env!("CARGO_PKG_VERSION")))
                .build()
                .map_err(|e| Error::Config(format!("http client: {e}")))?;
            Some(client)
        } else {
            None
        };
        Ok(Self { config, snapshot, http })
    }

    pub fn config(&self) -> &WikiClientConfig {
        &self.config
    }

    fn cache_path(&self, surface: &str) -> Option<PathBuf> {
        self.config
            .cache_dir
            .as_ref()
            .map(|d| d.join(format!("{}.json", cache_key(surface))))
    }

    fn read_cache(&self, surface: &str) -> Option<WikiSnippet> {
        let path = self.cache_path(surface)?;
        if !path.exists() {
            return None;
        }
        match crate::io::read_json::<WikiSnippet>(&path) {
            // Distinct surfaces can share a key; only reuse an exact match.
            Ok(s) if s.query == surface => Some(WikiSnippet {
                source: WikiSource::Cache,
                ..s
            }),
            Ok(_) => None,
            Err(e) => {
                log::warn!("ignoring unreadable cache entry {}: {e}", path.display());
                None
            }
        }
    }

    fn fetch_live(&self, surface: &str) -> Option<String> {
        let http = self.http.as_ref()?;
        let url = self.config.endpoint.replace("{query}", &percent_encode(surface));
        let resp = match http.get(&url).send() {
            Ok(r) => r,
            Err(e) => {
                log::warn!("wiki lookup for `{surface}` failed: {e}");
                return None;
            }
        };
        if !resp.status().is_success() {
            log::debug!("wiki lookup for `{surface}`: HTTP {}", resp.status());
            return None;
        }
        match resp.text().map_err(|e| e.to_string()).and_then(|t| {
            serde_json::from_str::<serde_json::Value>(&t).map_err(|e| e.to_string())
        }) {
            Ok(v) => v.get("extract").and_then(|x| x.as_str()).map(str::to_string),
            Err(e) => {
                log::warn!("wiki response for `{surface}` is not JSON: {e}");
                None
            }
        }
    }

    /// Never fails for a missing page or a network problem; those give an
    /// empty miss.
    pub fn fetch(&self, surface: &str) -> Result<WikiSnippet> {
        if surface.trim().is_empty() {
            return Err(Error::Invalid("wiki query must be non-empty".into()));
        }
        let max = self.config.max_wiki_chars;
        if let Some(hit) = self.read_cache(surface) {
            return Ok(WikiSnippet {
                text: truncate_at_word(&hit.text, max),
                ..hit
            });
        }
        if let Some(text) = self.snapshot.get(surface) {
            let text = truncate_at_word(text, max);
            if !text.is_empty() {
                return Ok(WikiSnippet {
                    query: surface.to_string(),
                    text,
                    fetched_at: 0,
                    source: WikiSource::Snapshot,
                });
            }
        }
        if let Some(text) = self.fetch_live(surface) {
            let text = truncate_at_word(&text, max);
            if !text.is_empty() {
                let snippet = WikiSnippet {
                    query: surface.to_string(),
                    text,
                    fetched_at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
                    source: WikiSource::Live,
                };
                if let Some(path) = self.cache_path(surface) {
                    crate::io::write_json_atomic(&path, &snippet)?;
                }
                return Ok(snippet);
            }
        }
        Ok(WikiSnippet::miss(surface))
    }
}
