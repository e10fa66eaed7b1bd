//! Runtime knobs for the simulator, loadable from `key=value` files.
//!
//! Recognized keys: `k` (replication factor), `s` (list/set bucket size),
//! `M` (trie leaf capacity), `D` (trie key bits), `ttl` (fetch-cache ms),
//! `alpha` (parallel lookup width), `leaf_size` (ring neighbors per side),
//! `bucket_cap` (contacts per prefix row), `latency` (`lo-hi` ms),
//! `periods` (`maintenance:monitoring` ms). Blank lines and `#` comments
//! are ignored.

use crate::pht::{PHT_KEY_BITS, PHT_LEAF_CAPACITY};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub k: usize,
    pub s: u32,
    pub m: usize,
    pub d: u32,
    pub ttl_ms: u64,
    pub alpha: usize,
    pub leaf_size: usize,
    pub bucket_cap: usize,
    pub latency_min_ms: u64,
    pub latency_max_ms: u64,
    pub maintenance_ms: u64,
    pub monitor_ms: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            k: crate::storage::DEFAULT_REPLICATION,
            s: crate::dds::DEFAULT_BUCKET_SIZE,
            m: PHT_LEAF_CAPACITY,
            d: PHT_KEY_BITS,
            ttl_ms: crate::storage::DEFAULT_CACHE_TTL_MS,
            alpha: 3,
            leaf_size: 8,
            bucket_cap: 20,
            latency_min_ms: 10,
            latency_max_ms: 50,
            maintenance_ms: 30_000,
            monitor_ms: 10_000,
        }
    }
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<SimConfig, String> {
        let mut cfg = SimConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value, got {:?}", lineno + 1, line))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| format!("line {}: bad {what} value {:?}", lineno + 1, value);
            match key {
                "k" => cfg.k = value.parse().map_err(|_| bad("k"))?,
                "s" => cfg.s = value.parse().map_err(|_| bad("s"))?,
                "M" => cfg.m = value.parse().map_err(|_| bad("M"))?,
                "D" => cfg.d = value.parse().map_err(|_| bad("D"))?,
                "ttl" => cfg.ttl_ms = value.parse().map_err(|_| bad("ttl"))?,
                "alpha" => cfg.alpha = value.parse().map_err(|_| bad("alpha"))?,
                "leaf_size" => cfg.leaf_size = value.parse().map_err(|_| bad("leaf_size"))?,
                "bucket_cap" => cfg.bucket_cap = value.parse().map_err(|_| bad("bucket_cap"))?,
                "latency" => {
                    let (lo, hi) = value.split_once('-').ok_or_else(|| bad("latency (want lo-hi)"))?;
                    cfg.latency_min_ms = lo.trim().parse().map_err(|_| bad("latency low"))?;
                    cfg.latency_max_ms = hi.trim().parse().map_err(|_| bad("latency high"))?;
                }
                "periods" => {
                    let (maint, mon) = value.split_once(':').ok_or_else(|| bad("periods (want maint:monitor)"))?;
                    cfg.maintenance_ms = maint.trim().parse().map_err(|_| bad("maintenance period"))?;
                    cfg.monitor_ms = mon.trim().parse().map_err(|_| bad("monitor period"))?;
                }
                other => return Err(format!("line {}: unknown key {other:?}", lineno + 1)),
            }
        }
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), String> {
        if self.k == 0 {
            return Err("k must be >= 1".into());
        }
        if self.alpha == 0 {
            return Err("alpha must be >= 1".into());
        }
        if self.s == 0 {
            return Err("s must be >= 1".into());
        }
        if self.m == 0 {
            return Err("M must be >= 1".into());
        }
        if self.d == 0 || self.d > 32 {
            return Err("D must be in 1..=32".into());
        }
        if self.leaf_size == 0 || self.bucket_cap == 0 {
            return Err("leaf_size and bucket_cap must be >= 1".into());
        }
        if self.latency_min_ms > self.latency_max_ms {
            return Err("latency low end exceeds high end".into());
        }
        if self.maintenance_ms == 0 || self.monitor_ms == 0 {
            return Err("periods must be >= 1 ms".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_input() {
        assert_eq!(SimConfig::parse("").unwrap(), SimConfig::default());
        assert_eq!(SimConfig::parse("# just a comment\n\n").unwrap(), SimConfig::default());
    }

    #[test]
    fn full_file_overrides_every_knob() {
        let text = "\
# storage
k = 6
s = 8
M = 2
D = 16
ttl = 5000
alpha = 2
leaf_size = 4
bucket_cap = 10
latency = 1-9
periods = 15000:5000
";
        let cfg = SimConfig::parse(text).unwrap();
        assert_eq!(
            cfg,
            SimConfig {
                k: 6,
                s: 8,
                m: 2,
                d: 16,
                ttl_ms: 5000,
                alpha: 2,
                leaf_size: 4,
                bucket_cap: 10,
                latency_min_ms: 1,
                latency_max_ms: 9,
                maintenance_ms: 15_000,
                monitor_ms: 5000,
            }
        );
    }

    #[test]
    fn malformed_lines_are_rejected_with_line_numbers() {
        assert!(SimConfig::parse("k").unwrap_err().contains("line 1"));
        assert!(SimConfig::parse("\nwat=1").unwrap_err().contains("line 2"));
        assert!(SimConfig::parse("latency=10").unwrap_err().contains("latency"));
        assert!(SimConfig::parse("k=0").unwrap_err().contains("k"));
        assert!(SimConfig::parse("latency=50-10").is_err());
        assert!(SimConfig::parse("D=33").is_err());
    }
}
