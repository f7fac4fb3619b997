//! A planted temporal task: after two filler items, each next item is `A`
//! when the gap between the two preceding behaviors is under an hour and `B`
//! otherwise. Item order alone carries no signal.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;
use rand::Rng;

use crate::data::{Event, EventLog};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalTask {
    pub users: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub fillers: usize,
    /// Gaps below this many seconds select item `A`.
    pub threshold: f64,
    /// Range of short gaps, in seconds.
    pub short_gap: (u32, u32),
    /// Range of long gaps, in seconds.
    pub long_gap: (u32, u32),
}

impl Default for TemporalTask {
    fn default() -> Self {
        TemporalTask {
            users: 2000,
            min_len: 10,
            max_len: 20,
            fillers: 20,
            threshold: 3600.0,
            short_gap: (60, 1800),
            long_gap: (7200, 172_800),
        }
    }
}

pub const ITEM_A: &str = "A";
pub const ITEM_B: &str = "B";

impl TemporalTask {
    pub fn generate<R: Rng>(&self, rng: &mut R) -> Result<EventLog> {
        if self.min_len < 3 || self.max_len < self.min_len || self.fillers == 0 {
            return Err(Error::contract(
                "temporal task needs sequences of at least 3 and one filler",
            ));
        }
        if f64::from(self.short_gap.1) >= self.threshold
            || f64::from(self.long_gap.0) < self.threshold
        {
            return Err(Error::contract("gap ranges must straddle the threshold"));
        }
        let mut events = Vec::new();
        for u in 0..self.users {
            let user = format!("u{u}");
            let len = rng.gen_range(self.min_len..=self.max_len);
            let mut t = 1_600_000_000.0 + f64::from(rng.gen_range(0u32..10_000_000));
            let mut prev_gap = 0.0;
            for i in 0..len {
                if i > 0 {
                    let (lo, hi) = if rng.gen_bool(0.5) {
                        self.short_gap
                    } else {
                        self.long_gap
                    };
                    prev_gap = f64::from(rng.gen_range(lo..=hi));
                    t += prev_gap;
                }
                // The item at position i ≥ 2 is decided by the gap that led
                // into position i − 1.
                let (item, category) = if i < 2 {
                    (format!("f{}", rng.gen_range(0..self.fillers)), "filler")
                } else if rule_gap(&events, t - prev_gap) < self.threshold {
                    (ITEM_A.to_string(), "target")
                } else {
                    (ITEM_B.to_string(), "target")
                };
                events.push(Event {
                    user: user.clone(),
                    item,
                    category: category.to_string(),
                    timestamp: t,
                });
            }
        }
        Ok(EventLog::new(events))
    }
}

/// Gap between the last two events before the current one, where
/// `prev_time` is the timestamp of the immediately preceding event.
fn rule_gap(events: &[Event], prev_time: f64) -> f64 {
    let n = events.len();
    prev_time - events[n - 2].timestamp
}

/// Item the rule assigns after a pair of behaviors at `t_prev2`, `t_prev`.
pub fn expected_item(t_prev2: f64, t_prev: f64, threshold: f64) -> &'static str {
    if t_prev - t_prev2 < threshold {
        ITEM_A
    } else {
        ITEM_B
    }
}
