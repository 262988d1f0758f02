//! Leaderboard CSV ingestion, base-model attribution and domain grouping.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::data::{DomainCollection, DomainDataset};
use crate::error::{Error, Result};

/// Scores above this maximum are taken to be percentages.
pub const PERCENT_THRESHOLD: f64 = 1.5;

pub const DEFAULT_BENCHMARKS: [&str; 6] = ["IFEval", "BBH", "MATH Lvl 5", "GPQA", "MUSR", "MMLU-PRO"];

const DEFAULT_RULES: &str = include_str!("../data/base_model_rules.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreScale {
    /// Divide by 100 when the largest score exceeds [`PERCENT_THRESHOLD`].
    #[default]
    Auto,
    Unit,
    Percent,
}

/// Column names in the input CSV. Only `model` and `benchmarks` are required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LeaderboardSchema {
    pub model: String,
    pub declared_base: Option<String>,
    pub architecture: Option<String>,
    pub parameters: Option<String>,
    pub upload_date: Option<String>,
    pub moe: Option<String>,
    pub fine_tuned: Option<String>,
    pub benchmarks: Vec<String>,
    pub score_scale: ScoreScale,
}

impl Default for LeaderboardSchema {
    fn default() -> Self {
        LeaderboardSchema {
            model: "fullname".into(),
            declared_base: Some("Base Model".into()),
            architecture: Some("Architecture".into()),
            parameters: Some("#Params (B)".into()),
            upload_date: Some("Upload To Hub Date".into()),
            moe: Some("MoE".into()),
            fine_tuned: None,
            benchmarks: DEFAULT_BENCHMARKS.iter().map(|s| s.to_string()).collect(),
            score_scale: ScoreScale::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub model_name: String,
    pub declared_base: Option<String>,
    pub architecture: Option<String>,
    /// Billions of parameters.
    pub parameter_count: Option<f64>,
    pub upload_date: Option<String>,
    pub is_moe: Option<bool>,
    pub fine_tuned: Option<bool>,
    /// In `[0, 1]`, ordered like [`Leaderboard::benchmarks`].
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedRow {
    /// 1-based data line, header excluded.
    pub line: usize,
    pub model_name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub benchmarks: Vec<String>,
    pub rows: Vec<LeaderboardRow>,
    pub dropped: Vec<DroppedRow>,
    /// Schema field to the header name it was read from; absent optional
    /// columns map to `null`.
    pub column_map: BTreeMap<String, Option<String>>,
    /// Divisor applied to the raw scores.
    pub score_divisor: f64,
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

fn non_empty(s: &str) -> Option<String> {
    let t = s.trim();
    (!t.is_empty()).then(|| t.to_string())
}

pub fn parse_leaderboard(path: &Path, schema: &LeaderboardSchema) -> Result<Leaderboard> {
    let text = std::fs::read_to_string(path)?;
    parse_leaderboard_str(&text, schema)
}

pub fn parse_leaderboard_str(text: &str, schema: &LeaderboardSchema) -> Result<Leaderboard> {
    if text.trim().is_empty() {
        return Err(Error::InvalidInput("leaderboard file is empty".into()));
    }
    if schema.benchmarks.is_empty() {
        return Err(Error::InvalidInput("schema lists no benchmark columns".into()));
    }
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| header.iter().position(|h| h == name);

    let mut missing = Vec::new();
    let model_col = find(&schema.model);
    if model_col.is_none() {
        missing.push(schema.model.clone());
    }
    let mut bench_cols = Vec::new();
    for b in &schema.benchmarks {
        match find(b) {
            Some(i) => bench_cols.push(i),
            None => missing.push(b.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::InvalidInput(format!("missing mandatory columns: {}", missing.join(", "))));
    }
    let model_col = model_col.expect("checked above");
    let optional = |name: &Option<String>| name.as_deref().and_then(find);
    let base_col = optional(&schema.declared_base);
    let arch_col = optional(&schema.architecture);
    let param_col = optional(&schema.parameters);
    let date_col = optional(&schema.upload_date);
    let moe_col = optional(&schema.moe);
    let ft_col = optional(&schema.fine_tuned);

    let mut column_map = BTreeMap::new();
    let echo = |col: Option<usize>| col.map(|i| header[i].clone());
    column_map.insert("model".to_string(), Some(header[model_col].clone()));
    column_map.insert("declared_base".to_string(), echo(base_col));
    column_map.insert("architecture".to_string(), echo(arch_col));
    column_map.insert("parameters".to_string(), echo(param_col));
    column_map.insert("upload_date".to_string(), echo(date_col));
    column_map.insert("moe".to_string(), echo(moe_col));
    column_map.insert("fine_tuned".to_string(), echo(ft_col));
    for (b, &i) in schema.benchmarks.iter().zip(&bench_cols) {
        column_map.insert(format!("benchmark:{b}"), Some(header[i].clone()));
    }

    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        let cell = |i: Option<usize>| i.and_then(|i| rec.get(i)).and_then(non_empty);
        let model_name = cell(Some(model_col)).unwrap_or_default();
        if model_name.is_empty() {
            dropped.push(DroppedRow {
                line: k + 1,
                model_name,
                reason: "empty model name".into(),
            });
            continue;
        }
        let mut scores = Vec::with_capacity(bench_cols.len());
        let mut bad = None;
        for (b, &i) in schema.benchmarks.iter().zip(&bench_cols) {
            match rec.get(i).map(str::trim).unwrap_or("").parse::<f64>() {
                Ok(v) if v.is_finite() => scores.push(v),
                _ => {
                    bad = Some(format!("unparseable score for {b}: {:?}", rec.get(i).unwrap_or("")));
                    break;
                }
            }
        }
        if let Some(reason) = bad {
            dropped.push(DroppedRow {
                line: k + 1,
                model_name,
                reason,
            });
            continue;
        }
        rows.push(LeaderboardRow {
            model_name,
            declared_base: cell(base_col),
            architecture: cell(arch_col),
            parameter_count: cell(param_col).and_then(|s| s.parse::<f64>().ok()).filter(|v| *v > 0.0 && v.is_finite()),
            upload_date: cell(date_col),
            is_moe: cell(moe_col).and_then(|s| parse_flag(&s)),
            fine_tuned: cell(ft_col).and_then(|s| parse_flag(&s)),
            scores,
        });
    }

    let max = rows
        .iter()
        .flat_map(|r| r.scores.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    let score_divisor = match schema.score_scale {
        ScoreScale::Unit => 1.0,
        ScoreScale::Percent => 100.0,
        ScoreScale::Auto if max > PERCENT_THRESHOLD => 100.0,
        ScoreScale::Auto => 1.0,
    };
    if score_divisor != 1.0 {
        for r in &mut rows {
            r.scores.iter_mut().for_each(|v| *v /= score_divisor);
        }
    }
    Ok(Leaderboard {
        benchmarks: schema.benchmarks.clone(),
        rows,
        dropped,
        column_map,
        score_divisor,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfidenceTier {
    Explicit,
    NamePattern,
    Architecture,
}

impl ConfidenceTier {
    pub const ORDER: [ConfidenceTier; 3] = [ConfidenceTier::Explicit, ConfidenceTier::NamePattern, ConfidenceTier::Architecture];

    pub fn as_str(self) -> &'static str {
        match self {
            ConfidenceTier::Explicit => "explicit",
            ConfidenceTier::NamePattern => "name-pattern",
            ConfidenceTier::Architecture => "architecture",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseModelRule {
    pub base_model_id: String,
    pub confidence_tier: ConfidenceTier,
    /// Case-insensitive regexes on the model name (and, at the name-pattern
    /// tier, on the declared base).
    #[serde(default)]
    pub name_patterns: Vec<String>,
    /// Architecture strings, compared case-insensitively.
    #[serde(default)]
    pub architecture_tags: Vec<String>,
    /// Billions of parameters, inclusive.
    pub parameter_range: [f64; 2],
    /// Trillions of tokens, when known.
    #[serde(default)]
    pub pretraining_tokens: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleFile {
    pub rules: Vec<BaseModelRule>,
}

#[derive(Debug, Clone)]
struct CompiledRule {
    rule: BaseModelRule,
    patterns: Vec<Regex>,
}

/// Validated, compiled rule set.
#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<CompiledRule>,
}

impl RuleSet {
    pub fn new(rules: Vec<BaseModelRule>) -> Result<Self> {
        let mut compiled = Vec::with_capacity(rules.len());
        for r in rules {
            let [lo, hi] = r.parameter_range;
            if !(lo < hi) || !(lo >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "rule {}: parameter range [{lo}, {hi}] must satisfy 0 <= low < high",
                    r.base_model_id
                )));
            }
            let usable = match r.confidence_tier {
                ConfidenceTier::Architecture => !r.architecture_tags.is_empty(),
                _ => !r.name_patterns.is_empty(),
            };
            if !usable {
                return Err(Error::InvalidInput(format!(
                    "rule {} ({}) has no matching criterion",
                    r.base_model_id,
                    r.confidence_tier.as_str()
                )));
            }
            if let Some(t) = r.pretraining_tokens {
                if !(t > 0.0) {
                    return Err(Error::InvalidInput(format!("rule {}: token count must be positive", r.base_model_id)));
                }
            }
            let patterns = r
                .name_patterns
                .iter()
                .map(|p| RegexBuilder::new(p).case_insensitive(true).build())
                .collect::<std::result::Result<Vec<_>, _>>()?;
            compiled.push(CompiledRule { rule: r, patterns });
        }
        Ok(RuleSet { rules: compiled })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: RuleFile = serde_json::from_str(text)?;
        RuleSet::new(file.rules)
    }

    pub fn load(path: &Path) -> Result<Self> {
        RuleSet::from_json(&std::fs::read_to_string(path)?)
    }

    /// The shipped knowledge base.
    pub fn default_rules() -> Self {
        RuleSet::from_json(DEFAULT_RULES).expect("bundled rules are valid")
    }

    pub fn rules(&self) -> impl Iterator<Item = &BaseModelRule> {
        self.rules.iter().map(|c| &c.rule)
    }

    /// Token count (trillions) for a base model, from the first rule that
    /// states one.
    pub fn tokens(&self, base_model_id: &str) -> Option<f64> {
        self.rules()
            .filter(|r| r.base_model_id == base_model_id)
            .find_map(|r| r.pretraining_tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribution {
    pub base_model_id: String,
    pub tier: ConfidenceTier,
}

fn in_range(params: Option<f64>, [lo, hi]: [f64; 2]) -> Option<bool> {
    params.map(|p| lo <= p && p <= hi)
}

fn fires(rule: &CompiledRule, row: &LeaderboardRow) -> bool {
    let r = &rule.rule;
    let name_hit = |s: &str| rule.patterns.iter().any(|p| p.is_match(s));
    match r.confidence_tier {
        // size is in the name; a known count must still agree
        ConfidenceTier::Explicit => {
            name_hit(&row.model_name) && in_range(row.parameter_count, r.parameter_range) != Some(false)
        }
        ConfidenceTier::NamePattern => {
            let hint = row.declared_base.as_deref().is_some_and(name_hit);
            (name_hit(&row.model_name) || hint) && in_range(row.parameter_count, r.parameter_range) == Some(true)
        }
        ConfidenceTier::Architecture => {
            row.architecture
                .as_deref()
                .is_some_and(|a| r.architecture_tags.iter().any(|t| t.eq_ignore_ascii_case(a.trim())))
                && in_range(row.parameter_count, r.parameter_range) == Some(true)
        }
    }
}

/// Tries the tiers in order. A tier whose firing rules name more than one
/// base model is ambiguous and falls through to the next tier. A name that
/// spells out a size contradicted by the parameter count attributes nothing.
pub fn attribute_base_model(row: &LeaderboardRow, rules: &RuleSet) -> Option<Attribution> {
    let contradicted = rules.rules.iter().any(|c| {
        c.rule.confidence_tier == ConfidenceTier::Explicit
            && c.patterns.iter().any(|p| p.is_match(&row.model_name))
            && in_range(row.parameter_count, c.rule.parameter_range) == Some(false)
    });
    if contradicted {
        return None;
    }
    for tier in ConfidenceTier::ORDER {
        let mut hits: Vec<&str> = rules
            .rules
            .iter()
            .filter(|c| c.rule.confidence_tier == tier && fires(c, row))
            .map(|c| c.rule.base_model_id.as_str())
            .collect();
        hits.sort_unstable();
        hits.dedup();
        if let [only] = hits.as_slice() {
            return Some(Attribution {
                base_model_id: only.to_string(),
                tier,
            });
        }
    }
    None
}

/// `6 · N · D` in FLOPs for `N` in billions of parameters and `D` in
/// trillions of tokens.
pub fn compute_flops(params_billions: f64, tokens_trillions: f64) -> f64 {
    6.0 * params_billions * 1e9 * tokens_trillions * 1e12
}

pub fn pretraining_compute(row: &LeaderboardRow, rules: &RuleSet) -> Option<f64> {
    let a = attribute_base_model(row, rules)?;
    Some(compute_flops(row.parameter_count?, rules.tokens(&a.base_model_id)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSize {
    pub base_model_id: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    pub collection: DomainCollection,
    pub unattributed: Vec<String>,
    /// Groups below the size threshold.
    pub excluded: Vec<GroupSize>,
    pub included: Vec<GroupSize>,
}

/// One domain per attributed base model with at least `min_size` rows,
/// ordered by base id; rows keep their input order within a domain.
pub fn group_domains(
    board: &Leaderboard,
    attributions: &[Option<Attribution>],
    min_size: usize,
) -> Result<Grouping> {
    if attributions.len() != board.rows.len() {
        return Err(Error::mismatch("attributions", board.rows.len(), attributions.len()));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut unattributed = Vec::new();
    for (i, a) in attributions.iter().enumerate() {
        match a {
            Some(a) => groups.entry(a.base_model_id.as_str()).or_default().push(i),
            None => unattributed.push(board.rows[i].model_name.clone()),
        }
    }
    let n = board.benchmarks.len();
    let mut domains = Vec::new();
    let mut excluded = Vec::new();
    let mut included = Vec::new();
    for (id, idx) in groups {
        let size = GroupSize {
            base_model_id: id.to_string(),
            rows: idx.len(),
        };
        if idx.len() < min_size.max(1) {
            excluded.push(size);
            continue;
        }
        let x = DMatrix::from_fn(idx.len(), n, |r, c| board.rows[idx[r]].scores[c]);
        let labels = idx.iter().map(|&i| board.rows[i].model_name.clone()).collect();
        domains.push(DomainDataset::with_labels(id, x, labels)?);
        included.push(size);
    }
    Ok(Grouping {
        collection: DomainCollection::new(board.benchmarks.clone(), domains)?,
        unattributed,
        excluded,
        included,
    })
}
