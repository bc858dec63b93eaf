//! TOML run configuration, rewrite-rule files and `--weights` parsing.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context};
use serde::Deserialize;

use gvqa_core::detection::MatchMode;
use gvqa_core::prompt::RewriteRules;

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub scoring: ScoringSection,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub url: Option<String>,
    pub timeout_secs: Option<f64>,
    pub retries: Option<u32>,
    pub base_delay_ms: Option<u64>,
    pub max_delay_ms: Option<u64>,
    pub parallelism: Option<usize>,
    /// Extra request header, e.g. `["Authorization", "Bearer ..."]`.
    pub header: Option<(String, String)>,
    /// Name of an environment variable holding the header value; overrides
    /// the value in `header`.
    pub header_env: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringSection {
    pub weights: Option<BTreeMap<String, f64>>,
    pub radius: Option<f64>,
    pub match_mode: Option<MatchMode>,
}

impl FileConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// The request header with any `header_env` indirection applied.
    pub fn header(&self) -> anyhow::Result<Option<(String, String)>> {
        let b = &self.backend;
        match (&b.header, &b.header_env) {
            (Some((name, _)), Some(var)) => {
                let v = std::env::var(var).with_context(|| format!("header value variable {var} is not set"))?;
                Ok(Some((name.clone(), v)))
            }
            (None, Some(_)) => bail!("header_env needs a header name in `header`"),
            (h, None) => Ok(h.clone()),
        }
    }
}

/// Rewrite rules from a JSON or TOML file, chosen by extension.
pub fn load_rules(path: &Path) -> anyhow::Result<RewriteRules> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let rules = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text)?
    } else {
        serde_json::from_str(&text)?
    };
    Ok(rules)
}

/// Parses `name=w,name=w` or, if `spec` names an existing file, a JSON object.
pub fn parse_weights(spec: &str) -> anyhow::Result<BTreeMap<String, f64>> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path)?;
        return serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()));
    }
    let mut out = BTreeMap::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let Some((k, v)) = part.split_once('=') else {
            bail!("weight `{part}` is not name=value");
        };
        let w: f64 = v.trim().parse().with_context(|| format!("weight `{part}`"))?;
        if out.insert(k.trim().to_string(), w).is_some() {
            bail!("weight `{}` given twice", k.trim());
        }
    }
    if out.is_empty() {
        bail!("empty weight list");
    }
    Ok(out)
}
