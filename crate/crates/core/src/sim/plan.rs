//! Declarative test plans: a sequential script of user actions executed
//! against the simulated network.
//!
//! File format, one step per line (`#` starts a comment):
//!
//! ```text
//! ACTION <name> REPEAT <n> DURATION <min> ACTORS <all|sample:k|node:i>
//! WAIT <min>
//! ```
//!
//! An `ACTION` step makes every selected actor perform the named action
//! `n` times, evenly spread over the step's duration. `WAIT` advances
//! simulated time without issuing actions (maintenance, monitoring and
//! replication keep running).

/// Every action name a plan may reference. Grouped by plugin; the
/// friendship pair seeds the social graph the other plugins act on.
pub const ACTION_NAMES: [&str; 38] = [
    "FRIENDS_REQUEST",
    "FRIENDS_ACCEPT",
    "MESSAGING_SEND_MESSAGE",
    "MESSAGING_VIEW_INBOX",
    "MESSAGING_VIEW_OUTBOX",
    "LIVECHAT_SEND_INVITATION",
    "LIVECHAT_SEND_MESSAGE",
    "LIVECHAT_LEAVE",
    "GROUPS_CREATE_GROUP",
    "GROUPS_INVITE_FRIEND",
    "GROUPS_VIEW_GROUP",
    "GROUPS_LEAVE_GROUP",
    "FILESTORAGE_CREATE_FOLDER",
    "FILESTORAGE_UPLOAD_FILE",
    "FILESTORAGE_VIEW_FOLDER",
    "FILESTORAGE_DELETE_FILE",
    "FILESTORAGE_DELETE_FOLDER",
    "FORUM_CREATE_THREAD",
    "FORUM_COMMENT_THREAD",
    "FORUM_VIEW_THREAD",
    "FORUM_VIEW_FORUM",
    "PHOTOS_CREATE_ALBUM",
    "PHOTOS_UPLOAD_PHOTO",
    "PHOTOS_VIEW_OWN_ALBUM",
    "PHOTOS_VIEW_FRIEND_ALBUM",
    "PHOTOS_VIEW_FRIEND_PHOTO",
    "PHOTOS_DELETE_PHOTO",
    "PHOTOS_DELETE_ALBUM",
    "VOTING_CREATE_VOTE",
    "VOTING_ADD_PUBLIC_VOTE",
    "VOTING_INVITE_USER",
    "VOTING_VOTE",
    "VOTING_GET_MY_VOTINGS",
    "VOTING_GET_RESULTS",
    "WALL_SEND_POST",
    "WALL_COMMENT",
    "WALL_VIEW_OWN",
    "WALL_VIEW_FRIEND",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActorSel {
    /// Every user.
    All,
    /// The first `k` users (capped at the population).
    Sample(usize),
    /// One specific user by index.
    Node(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionStep {
    pub name: String,
    pub repeat: u32,
    pub duration_min: u32,
    pub actors: ActorSel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanStep {
    Action(ActionStep),
    Wait(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Plan {
    pub steps: Vec<PlanStep>,
}

impl Plan {
    /// Total scripted duration in minutes (action durations plus waits).
    pub fn duration_min(&self) -> u64 {
        self.steps
            .iter()
            .map(|s| match s {
                PlanStep::Action(a) => a.duration_min as u64,
                PlanStep::Wait(m) => *m as u64,
            })
            .sum()
    }
}

pub fn parse(text: &str) -> Result<Plan, String> {
    let mut steps = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| format!("line {}: {}", ln + 1, msg);
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks[0] {
            "WAIT" => {
                if toks.len() != 2 {
                    return Err(err("WAIT takes exactly one argument (minutes)".into()));
                }
                let m: u32 = toks[1].parse().map_err(|_| err("WAIT minutes must be an integer".into()))?;
                steps.push(PlanStep::Wait(m));
            }
            "ACTION" => {
                if toks.len() != 8 {
                    return Err(err(
                        "ACTION syntax: ACTION <name> REPEAT <n> DURATION <min> ACTORS <all|sample:k|node:i>".into(),
                    ));
                }
                let name = toks[1].to_string();
                if !ACTION_NAMES.contains(&name.as_str()) {
                    return Err(err(format!("unknown action `{name}`")));
                }
                if toks[2] != "REPEAT" || toks[4] != "DURATION" || toks[6] != "ACTORS" {
                    return Err(err("expected REPEAT … DURATION … ACTORS …".into()));
                }
                let repeat: u32 = toks[3].parse().map_err(|_| err("REPEAT must be an integer".into()))?;
                if repeat == 0 {
                    return Err(err("REPEAT must be at least 1".into()));
                }
                let duration_min: u32 =
                    toks[5].parse().map_err(|_| err("DURATION must be an integer number of minutes".into()))?;
                let actors = parse_actors(toks[7]).map_err(|m| err(m))?;
                steps.push(PlanStep::Action(ActionStep { name, repeat, duration_min, actors }));
            }
            other => return Err(err(format!("unknown directive `{other}`"))),
        }
    }
    Ok(Plan { steps })
}

fn parse_actors(tok: &str) -> Result<ActorSel, String> {
    if tok == "all" {
        return Ok(ActorSel::All);
    }
    if let Some(k) = tok.strip_prefix("sample:") {
        let k: usize = k.parse().map_err(|_| "sample:k needs an integer k".to_string())?;
        if k == 0 {
            return Err("sample:k needs k ≥ 1".into());
        }
        return Ok(ActorSel::Sample(k));
    }
    if let Some(i) = tok.strip_prefix("node:") {
        let i: usize = i.parse().map_err(|_| "node:i needs an integer index".to_string())?;
        return Ok(ActorSel::Node(i));
    }
    Err(format!("bad ACTORS value `{tok}` (want all, sample:k or node:i)"))
}

/// Renders a plan in the same syntax `parse` accepts (round-trip stable).
pub fn render(plan: &Plan) -> String {
    let mut out = String::new();
    for step in &plan.steps {
        match step {
            PlanStep::Wait(m) => out.push_str(&format!("WAIT {m}\n")),
            PlanStep::Action(a) => {
                let actors = match a.actors {
                    ActorSel::All => "all".to_string(),
                    ActorSel::Sample(k) => format!("sample:{k}"),
                    ActorSel::Node(i) => format!("node:{i}"),
                };
                out.push_str(&format!(
                    "ACTION {} REPEAT {} DURATION {} ACTORS {}\n",
                    a.name, a.repeat, a.duration_min, actors
                ));
            }
        }
    }
    out
}

/// The baseline workload: every plugin's actions with their standard
/// repetition counts and durations, preceded by a friendship-forming
/// phase, with a minute of quiet time between steps.
pub fn baseline() -> Plan {
    // (name, repetitions, duration in minutes)
    const TABLE: [(&str, u32, u32); 36] = [
        ("MESSAGING_SEND_MESSAGE", 8, 2),
        ("MESSAGING_VIEW_INBOX", 4, 2),
        ("MESSAGING_VIEW_OUTBOX", 4, 2),
        ("LIVECHAT_SEND_INVITATION", 2, 1),
        ("LIVECHAT_SEND_MESSAGE", 8, 2),
        ("LIVECHAT_LEAVE", 2, 1),
        ("GROUPS_CREATE_GROUP", 4, 2),
        ("GROUPS_INVITE_FRIEND", 4, 2),
        ("GROUPS_VIEW_GROUP", 8, 2),
        ("GROUPS_LEAVE_GROUP", 2, 2),
        ("FILESTORAGE_CREATE_FOLDER", 4, 2),
        ("FILESTORAGE_UPLOAD_FILE", 32, 6),
        ("FILESTORAGE_VIEW_FOLDER", 4, 2),
        ("FILESTORAGE_DELETE_FILE", 8, 2),
        ("FILESTORAGE_DELETE_FOLDER", 2, 2),
        ("FORUM_CREATE_THREAD", 4, 2),
        ("FORUM_COMMENT_THREAD", 4, 2),
        ("FORUM_VIEW_THREAD", 4, 2),
        ("FORUM_VIEW_FORUM", 4, 2),
        ("PHOTOS_CREATE_ALBUM", 4, 2),
        ("PHOTOS_UPLOAD_PHOTO", 32, 6),
        ("PHOTOS_VIEW_OWN_ALBUM", 4, 2),
        ("PHOTOS_VIEW_FRIEND_ALBUM", 4, 2),
        ("PHOTOS_VIEW_FRIEND_PHOTO", 32, 6),
        ("PHOTOS_DELETE_PHOTO", 16, 2),
        ("PHOTOS_DELETE_ALBUM", 4, 2),
        ("VOTING_CREATE_VOTE", 4, 2),
        ("VOTING_ADD_PUBLIC_VOTE", 4, 2),
        ("VOTING_INVITE_USER", 4, 2),
        ("VOTING_VOTE", 16, 4),
        ("VOTING_GET_MY_VOTINGS", 4, 2),
        ("VOTING_GET_RESULTS", 16, 2),
        ("WALL_SEND_POST", 4, 2),
        ("WALL_COMMENT", 4, 2),
        ("WALL_VIEW_OWN", 4, 2),
        ("WALL_VIEW_FRIEND", 4, 2),
    ];
    let mut steps = vec![
        PlanStep::Action(ActionStep {
            name: "FRIENDS_REQUEST".into(),
            repeat: 1,
            duration_min: 1,
            actors: ActorSel::All,
        }),
        PlanStep::Action(ActionStep {
            name: "FRIENDS_ACCEPT".into(),
            repeat: 1,
            duration_min: 1,
            actors: ActorSel::All,
        }),
        PlanStep::Wait(1),
    ];
    for (name, repeat, duration_min) in TABLE {
        steps.push(PlanStep::Action(ActionStep {
            name: name.into(),
            repeat,
            duration_min,
            actors: ActorSel::All,
        }));
        steps.push(PlanStep::Wait(1));
    }
    Plan { steps }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_round_trips() {
        let plan = baseline();
        let text = render(&plan);
        assert_eq!(parse(&text).unwrap(), plan);
    }

    #[test]
    fn baseline_covers_every_plugin_action() {
        let plan = baseline();
        let mut names: Vec<&str> = Vec::new();
        for s in &plan.steps {
            if let PlanStep::Action(a) = s {
                names.push(&a.name);
            }
        }
        assert_eq!(names.len(), 38);
        for required in ACTION_NAMES {
            assert!(names.contains(&required), "baseline misses {required}");
        }
    }

    #[test]
    fn parses_selectors_and_waits() {
        let plan = parse(
            "# demo\nACTION WALL_SEND_POST REPEAT 2 DURATION 1 ACTORS sample:3\nWAIT 5\nACTION VOTING_VOTE REPEAT 1 DURATION 1 ACTORS node:7\n",
        )
        .unwrap();
        assert_eq!(plan.steps.len(), 3);
        assert_eq!(
            plan.steps[0],
            PlanStep::Action(ActionStep {
                name: "WALL_SEND_POST".into(),
                repeat: 2,
                duration_min: 1,
                actors: ActorSel::Sample(3)
            })
        );
        assert_eq!(plan.steps[1], PlanStep::Wait(5));
        assert_eq!(
            plan.steps[2],
            PlanStep::Action(ActionStep {
                name: "VOTING_VOTE".into(),
                repeat: 1,
                duration_min: 1,
                actors: ActorSel::Node(7)
            })
        );
        assert_eq!(plan.duration_min(), 7);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(parse("ACTION NO_SUCH_THING REPEAT 1 DURATION 1 ACTORS all").is_err());
        assert!(parse("ACTION WALL_VIEW_OWN REPEAT 0 DURATION 1 ACTORS all").is_err());
        assert!(parse("ACTION WALL_VIEW_OWN REPEAT 1 DURATION 1 ACTORS some").is_err());
        assert!(parse("WAIT").is_err());
        assert!(parse("DANCE 5").is_err());
        assert!(parse("ACTION WALL_VIEW_OWN REPEAT 1 ACTORS all").is_err());
    }
}
