//! A fully decentralized online-social-network framework with a
//! deterministic discrete-event simulator.
//!
//! Layer map, bottom to top:
//!
//! * [`id`] — 160-bit ring identifiers and the responsibility metric.
//! * [`wire`] — canonical byte encoding helpers.
//! * [`crypto`] — pluggable signatures / key wrapping / symmetric cipher.
//! * [`item`] — self-contained encrypted + signed storage items with
//!   per-reader key wrapping and group hierarchies.
//! * [`overlay`] — routing state (prefix rows + leaf set) for key-based
//!   routing with strong and weak nodes.
//! * [`storage`] — replicated access-controlled object store: write rules,
//!   receipts, diversion, caching, traffic balancing.
//! * [`dds`] — distributed data structures (lists, sets) over any backend
//!   implementing the storage client traits, plus an in-memory fake.
//! * [`pht`] — prefix hash tree for order-preserving range queries.
//! * [`channels`] — signed channel envelopes, pub-sub trees, inboxes.
//! * [`monitoring`] — convergecast metric aggregation along a ring-derived
//!   tree with a global view disseminated through acknowledgements.
//! * [`social`] — the application plugins (profiles, friends, walls, photos,
//!   file folders, groups/forums, voting, chat sessions, calendars, search).
//! * [`sim`] — the event-driven network simulator, declarative test plans,
//!   churn schedules, metric capture and the self-check oracles.

pub mod channels;
pub mod crypto;
pub mod dds;
pub mod id;
pub mod item;
pub mod monitoring;
pub mod overlay;
pub mod pht;
pub mod sim;
pub mod social;
pub mod storage;
pub mod wire;
