//! Churn schedules: timed join/leave/crash events applied to a running
//! simulation.
//!
//! File format, one event per line (`#` starts a comment):
//!
//! ```text
//! <time_s> join
//! <time_s> leave [<node-index>]
//! <time_s> crash [<node-index>]
//! ```
//!
//! `join` creates a brand-new node that bootstraps through the oldest live
//! node. The optional index for `leave`/`crash` counts nodes in creation
//! order; without it a live node is picked with the run's client rng, so
//! the choice is seed-stable.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChurnAction {
    Join,
    Leave(Option<usize>),
    Crash(Option<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChurnEvent {
    pub at_ms: u64,
    pub action: ChurnAction,
}

/// Parses a schedule; events come back sorted by time (stable for ties).
pub fn parse(text: &str) -> Result<Vec<ChurnEvent>, String> {
    let mut events = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let err = |msg: &str| format!("line {}: {}", ln + 1, msg);
        let time_s: f64 = parts
            .next()
            .ok_or_else(|| err("missing time"))?
            .parse()
            .map_err(|_| err("time must be a number of seconds"))?;
        if !time_s.is_finite() || time_s < 0.0 {
            return Err(err("time must be a non-negative number of seconds"));
        }
        let verb = parts.next().ok_or_else(|| err("missing action (join|leave|crash)"))?;
        let index = match parts.next() {
            Some(tok) => {
                Some(tok.parse::<usize>().map_err(|_| err("node index must be a non-negative integer"))?)
            }
            None => None,
        };
        if let Some(extra) = parts.next() {
            return Err(err(&format!("unexpected trailing token `{extra}`")));
        }
        let action = match verb {
            "join" => {
                if index.is_some() {
                    return Err(err("join takes no node index"));
                }
                ChurnAction::Join
            }
            "leave" => ChurnAction::Leave(index),
            "crash" => ChurnAction::Crash(index),
            other => return Err(err(&format!("unknown action `{other}`"))),
        };
        events.push(ChurnEvent { at_ms: (time_s * 1000.0).round() as u64, action });
    }
    events.sort_by_key(|e| e.at_ms);
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_sorts() {
        let text = "\
# ramp
90 crash 5
30 join
60 leave   # random victim
";
        let evs = parse(text).unwrap();
        assert_eq!(
            evs,
            vec![
                ChurnEvent { at_ms: 30_000, action: ChurnAction::Join },
                ChurnEvent { at_ms: 60_000, action: ChurnAction::Leave(None) },
                ChurnEvent { at_ms: 90_000, action: ChurnAction::Crash(Some(5)) },
            ]
        );
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse("x join").is_err());
        assert!(parse("5 explode").is_err());
        assert!(parse("5 join 3").is_err());
        assert!(parse("5 crash 3 4").is_err());
        assert!(parse("-1 join").is_err());
        assert!(parse("5 crash 1.5").is_err());
    }

    #[test]
    fn fractional_seconds() {
        let evs = parse("0.25 join").unwrap();
        assert_eq!(evs[0].at_ms, 250);
    }
}
