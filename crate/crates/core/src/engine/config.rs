// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::externram::{memcached, BackendConfig, MockLatencyConfig};

/// Optional fault-path optimizations. Each can be toggled independently;
/// prefetching needs the page cache to land in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Optimizations {
    pub page_cache: bool,
    pub zero_page: bool,
    pub prefetch: bool,
    pub async_evict: bool,
    pub async_prefetch: bool,
    pub cpu_affinity: bool,
    pub async_reinit: bool,
}

impl Optimizations {
    pub const fn none() -> Self {
        Self {
            page_cache: false,
            zero_page: false,
            prefetch: false,
            async_evict: false,
            async_prefetch: false,
            cpu_affinity: false,
            async_reinit: false,
        }
    }

    pub const fn all() -> Self {
        Self {
            page_cache: true,
            zero_page: true,
            prefetch: true,
            async_evict: true,
            async_prefetch: true,
            cpu_affinity: true,
            async_reinit: true,
        }
    }
}

/// Background worker roles that can be pinned to a core.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WorkerRole {
    Evict,
    Prefetch,
    Reinit,
}

impl WorkerRole {
    pub const fn name(self) -> &'static str {
        match self {
            WorkerRole::Evict => "evict",
            WorkerRole::Prefetch => "prefetch",
            WorkerRole::Reinit => "reinit",
        }
    }
}

impl FromStr for WorkerRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "evict" => Ok(WorkerRole::Evict),
            "prefetch" => Ok(WorkerRole::Prefetch),
            "reinit" => Ok(WorkerRole::Reinit),
            _ => Err(format!("unknown worker role `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EngineConfig {
    /// Maximum number of resident pages.
    pub capacity: usize,
    pub page_cache_capacity: usize,
    /// Queued evictions that trigger a batched write.
    pub evict_batch_threshold: usize,
    /// Size of the pre-zeroed scratch buffer pool.
    pub scratch_buffers: usize,
    pub opts: Optimizations,
    pub affinity_map: Option<BTreeMap<WorkerRole, usize>>,
    /// Serve every write fault with a zero page, even when the store holds
    /// the page. Loses data for fault sources that cannot tell first-touch
    /// writes from re-access writes.
    pub paper_write_fault_mode: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            capacity: 1024,
            page_cache_capacity: 1024,
            evict_batch_threshold: 8,
            scratch_buffers: 64,
            opts: Optimizations::none(),
            affinity_map: None,
            paper_write_fault_mode: false,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

impl EngineConfig {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            capacity,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.capacity == 0 {
            return bad("capacity must be at least 1");
        }
        if self.evict_batch_threshold == 0 {
            return bad("evict_batch_threshold must be at least 1");
        }
        if self.opts.prefetch && !self.opts.page_cache {
            return bad("prefetch requires page_cache");
        }
        if self.opts.page_cache && self.page_cache_capacity == 0 {
            return bad("page_cache_capacity must be at least 1 when the page cache is on");
        }
        Ok(())
    }

    /// Core for a worker role when affinity is on: the configured one, or
    /// a spread over the available cores.
    pub fn core_for(&self, role: WorkerRole, cores: usize) -> Option<usize> {
        if !self.opts.cpu_affinity {
            return None;
        }
        if let Some(map) = &self.affinity_map {
            return map.get(&role).copied();
        }
        if cores < 2 {
            return None;
        }
        // Core 0 is left to the fault path.
        let slot = match role {
            WorkerRole::Evict => 1,
            WorkerRole::Prefetch => 2,
            WorkerRole::Reinit => 3,
        };
        Some(1 + (slot - 1) % (cores - 1))
    }
}

/// A parsed `key = value` configuration file: engine settings plus an
/// optional store backend.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfigDocument {
    pub engine: EngineConfig,
    pub backend: Option<BackendConfig>,
}

impl ConfigDocument {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut engine = EngineConfig::default();
        let mut backend_kind: Option<(usize, String)> = None;
        let mut mock_base = None;
        let mut mock_marginal = None;
        let mut memcached_addr = None;
        let mut retries = memcached::DEFAULT_RETRIES;

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ConfigError::Syntax { line: line_no, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let num = || -> Result<u64, ConfigError> {
                value
                    .parse()
                    .map_err(|_| err(format!("`{value}` is not an unsigned integer")))
            };
            let flag = || -> Result<bool, ConfigError> {
                match value {
                    "true" | "on" | "1" | "yes" => Ok(true),
                    "false" | "off" | "0" | "no" => Ok(false),
                    _ => Err(err(format!("`{value}` is not a boolean"))),
                }
            };
            match key {
                "capacity" => engine.capacity = num()? as usize,
                "page_cache_capacity" => engine.page_cache_capacity = num()? as usize,
                "evict_batch_threshold" => engine.evict_batch_threshold = num()? as usize,
                "scratch_buffers" => engine.scratch_buffers = num()? as usize,
                "page_cache" => engine.opts.page_cache = flag()?,
                "zero_page" => engine.opts.zero_page = flag()?,
                "prefetch" => engine.opts.prefetch = flag()?,
                "async_evict" => engine.opts.async_evict = flag()?,
                "async_prefetch" => engine.opts.async_prefetch = flag()?,
                "cpu_affinity" => engine.opts.cpu_affinity = flag()?,
                "async_reinit" => engine.opts.async_reinit = flag()?,
                "paper_write_fault_mode" => engine.paper_write_fault_mode = flag()?,
                "affinity_map" => engine.affinity_map = Some(parse_affinity(value).map_err(err)?),
                "backend" => backend_kind = Some((line_no, value.to_string())),
                "mock_base_us" => mock_base = Some(num()?),
                "mock_marginal_us" => mock_marginal = Some(num()?),
                "memcached_addr" => memcached_addr = Some(value.to_string()),
                "store_retries" => retries = num()? as u32,
                _ => return Err(err(format!("unknown key `{key}`"))),
            }
        }

        let backend = match backend_kind {
            None => None,
            Some((_, kind)) if kind == "local" => Some(BackendConfig::Local),
            Some((_, kind)) if kind == "mock" => {
                let base = mock_base.unwrap_or(30);
                let marginal =
                    mock_marginal.unwrap_or_else(|| MockLatencyConfig::default_marginal_for(base));
                let cfg = MockLatencyConfig::from_micros(base, marginal);
                cfg.validate().map_err(ConfigError::Invalid)?;
                Some(BackendConfig::Mock(cfg))
            }
            Some((line, kind)) if kind == "memcached" => Some(BackendConfig::Memcached {
                addr: memcached_addr.ok_or(ConfigError::Syntax {
                    line,
                    msg: "memcached backend needs memcached_addr".into(),
                })?,
                retries,
            }),
            Some((line, kind)) => {
                return Err(ConfigError::Syntax {
                    line,
                    msg: format!("unknown backend `{kind}`"),
                })
            }
        };
        engine.validate()?;
        Ok(Self { engine, backend })
    }
}

fn parse_affinity(value: &str) -> Result<BTreeMap<WorkerRole, usize>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (role, core) = pair
                .split_once(':')
                .ok_or_else(|| format!("expected role:core, got `{pair}`"))?;
            let core = core
                .trim()
                .parse()
                .map_err(|_| format!("bad core index in `{pair}`"))?;
            Ok((role.trim().parse()?, core))
        })
        .collect()
}

impl fmt::Display for EngineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = &self.opts;
        writeln!(f, "capacity = {}", self.capacity)?;
        writeln!(f, "page_cache_capacity = {}", self.page_cache_capacity)?;
        writeln!(f, "evict_batch_threshold = {}", self.evict_batch_threshold)?;
        writeln!(f, "scratch_buffers = {}", self.scratch_buffers)?;
        writeln!(f, "page_cache = {}", o.page_cache)?;
        writeln!(f, "zero_page = {}", o.zero_page)?;
        writeln!(f, "prefetch = {}", o.prefetch)?;
        writeln!(f, "async_evict = {}", o.async_evict)?;
        writeln!(f, "async_prefetch = {}", o.async_prefetch)?;
        writeln!(f, "cpu_affinity = {}", o.cpu_affinity)?;
        writeln!(f, "async_reinit = {}", o.async_reinit)?;
        if let Some(map) = &self.affinity_map {
            let pairs: Vec<_> = map.iter().map(|(r, c)| format!("{}:{c}", r.name())).collect();
            writeln!(f, "affinity_map = {}", pairs.join(","))?;
        }
        writeln!(f, "paper_write_fault_mode = {}", self.paper_write_fault_mode)
    }
}
