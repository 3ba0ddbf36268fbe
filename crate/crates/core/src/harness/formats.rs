//! On-disk formats: schema corpus JSON, workload JSON Lines and run config.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::kvstore::EvictionPolicy;
use crate::pipeline::{CostModel, RunOptions, DEFAULT_COMPUTE_BATCH, DEFAULT_MEMORY_BATCH};
use crate::schema::TableSchema;

pub const FORMAT_VERSION: u32 = 1;

fn check_version(version: u32, what: &str) -> Result<(), HarnessError> {
    if version == FORMAT_VERSION {
        Ok(())
    } else {
        Err(HarnessError::Format(format!("{what}: unsupported format_version {version}")))
    }
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

/// Either a bare array of tables or `{"format_version": 1, "tables": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum SchemaFile {
    Versioned {
        format_version: u32,
        tables: Vec<TableSchema>,
    },
    Bare(Vec<TableSchema>),
}

pub fn parse_schema_corpus(text: &str) -> Result<Vec<TableSchema>, serde_json::Error> {
    match serde_json::from_str(text)? {
        SchemaFile::Bare(tables) => Ok(tables),
        SchemaFile::Versioned { format_version, tables } => {
            if format_version != FORMAT_VERSION {
                return Err(serde::de::Error::custom(format!("unsupported format_version {format_version}")));
            }
            Ok(tables)
        }
    }
}

pub fn load_schema_corpus(path: &Path) -> Result<Vec<TableSchema>, HarnessError> {
    parse_schema_corpus(&read(path)?).map_err(|e| HarnessError::json(path, e))
}

pub fn schema_corpus_json(tables: &[TableSchema]) -> String {
    let file = SchemaFile::Versioned { format_version: FORMAT_VERSION, tables: tables.to_vec() };
    serde_json::to_string_pretty(&file).expect("schema serializes") + "\n"
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_version: Option<u32>,
    pub query_id: String,
    pub text: String,
}

pub fn parse_workload(text: &str) -> Result<Vec<WorkloadLine>, HarnessError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: WorkloadLine = serde_json::from_str(line)
            .map_err(|e| HarnessError::Format(format!("workload line {}: {e}", i + 1)))?;
        if let Some(v) = parsed.format_version {
            check_version(v, &format!("workload line {}", i + 1))?;
        }
        out.push(parsed);
    }
    Ok(out)
}

pub fn load_workload(path: &Path) -> Result<Vec<WorkloadLine>, HarnessError> {
    parse_workload(&read(path)?)
}

pub fn workload_jsonl(lines: &[WorkloadLine]) -> String {
    lines
        .iter()
        .map(|l| serde_json::to_string(l).expect("workload serializes") + "\n")
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlowTierKind {
    /// Table footprints only; no file reads.
    #[default]
    Memory,
    /// Read `<table_id>.kv` files on every load.
    File,
}

/// Pipeline and cache settings. Every key is optional; unknown keys are
/// rejected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub format_version: u32,
    #[serde(rename = "capacity_C")]
    pub capacity: usize,
    pub policy: EvictionPolicy,
    pub b_c: usize,
    pub b_m: usize,
    pub compute_per_token: f64,
    pub load_per_token: f64,
    pub switch_overhead: f64,
    pub rerank_on: bool,
    pub pipeline_on: bool,
    pub seed: Option<u64>,
    pub slow_tier: SlowTierKind,
}

impl Default for RunConfig {
    fn default() -> Self {
        let cost = CostModel::default();
        Self {
            format_version: FORMAT_VERSION,
            capacity: 8,
            policy: EvictionPolicy::Lru,
            b_c: DEFAULT_COMPUTE_BATCH,
            b_m: DEFAULT_MEMORY_BATCH,
            compute_per_token: cost.compute_per_token,
            load_per_token: cost.load_per_token,
            switch_overhead: cost.switch_overhead,
            rerank_on: true,
            pipeline_on: true,
            seed: None,
            slow_tier: SlowTierKind::Memory,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        check_version(self.format_version, "config")?;
        if self.b_c == 0 || self.b_m == 0 {
            return Err(HarnessError::Config("b_c and b_m must be at least 1".into()));
        }
        self.options().cost.validate().map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn options(&self) -> RunOptions {
        RunOptions {
            rerank: self.rerank_on,
            pipeline: self.pipeline_on,
            capacity: self.capacity,
            policy: self.policy,
            compute_batch: self.b_c,
            memory_batch: self.b_m,
            cost: CostModel {
                compute_per_token: self.compute_per_token,
                load_per_token: self.load_per_token,
                switch_overhead: self.switch_overhead,
            },
            seed: self.seed,
        }
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::parse(&read(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}
