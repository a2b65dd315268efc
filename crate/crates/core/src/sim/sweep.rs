//! Ticket lifetime sweep: replays a captured ticket pair just before and
//! exactly at the configured lifetime.

use super::nodes::Outcome;
use super::script::{execute, parse_script};
use super::Simulation;
use crate::model::Defenses;
use crate::scenario::{ScenarioConfig, ScenarioError, Sources, World};

pub const SWEEP_TTLS_MS: [u64; 4] = [1_000, 60_000, 300_000, 3_600_000];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepRow {
    pub ttl_ms: u64,
    /// Outcome at the TGS of a replay `ttl - 1` ms after issue.
    pub before: Outcome,
    /// Outcome at the TGS of a replay exactly `ttl` ms after issue.
    pub at: Outcome,
}

impl SweepRow {
    pub fn boundary_holds(&self) -> bool {
        self.before == Outcome::Accepted && self.at == Outcome::Rejected("TicketExpired".into())
    }
}

fn replay_after(config: &ScenarioConfig, sources: &Sources, delay_ms: u64) -> Result<Outcome, ScenarioError> {
    let world = World::build(config, sources, Defenses::default())?;
    let mut sim = Simulation::new(world);
    let text = format!("kind replay\nhonest portal clinic R\nreplay last:M_C 0\nreplay last:M_D {delay_ms}\n");
    let script = parse_script(&text).expect("static script");
    execute(&script, &mut sim).map_err(|e| ScenarioError::Setup(e.to_string()))?;
    let last = sim.log().iter().rev().find(|e| e.to == "tgs").expect("replay delivered");
    Ok(last.outcome.clone())
}

pub fn ttl_sweep(base: &ScenarioConfig, sources: &Sources, ttls: &[u64]) -> Result<Vec<SweepRow>, ScenarioError> {
    ttls.iter()
        .map(|&ttl_ms| {
            let config = ScenarioConfig {
                ttl_ticket_ms: ttl_ms,
                ..base.clone()
            };
            Ok(SweepRow {
                ttl_ms,
                before: replay_after(&config, sources, ttl_ms.saturating_sub(1))?,
                at: replay_after(&config, sources, ttl_ms)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_is_the_ttl() {
        let rows = ttl_sweep(&ScenarioConfig::default(), &Sources::default(), &SWEEP_TTLS_MS).unwrap();
        assert_eq!(rows.len(), 4);
        for r in rows {
            assert!(r.boundary_holds(), "{r:?}");
        }
    }
}
