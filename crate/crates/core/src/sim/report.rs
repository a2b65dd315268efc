use std::fmt::Write as _;

use super::script::AttackKind;

/// A check that stopped at least one attack attempt.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DefensePoint {
    pub node: String,
    pub error: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackReport {
    pub kind: AttackKind,
    pub control: bool,
    pub attempts: usize,
    pub successes: usize,
    pub defense_points: Vec<DefensePoint>,
    pub honest_started: usize,
    pub honest_established: usize,
    /// Data requests answered with documents or a write acknowledgement on
    /// honest sessions.
    pub honest_served: usize,
}

impl AttackReport {
    pub fn new(kind: AttackKind, control: bool) -> Self {
        AttackReport {
            kind,
            control,
            attempts: 0,
            successes: 0,
            defense_points: Vec::new(),
            honest_started: 0,
            honest_established: 0,
            honest_served: 0,
        }
    }

    pub fn succeeded(&self) -> bool {
        self.successes > 0
    }

    pub fn attempt(&mut self, success: bool) {
        self.attempts += 1;
        if success {
            self.successes += 1;
        }
    }

    pub fn defended(&mut self, node: &str, error: &str) {
        match self
            .defense_points
            .iter_mut()
            .find(|d| d.node == node && d.error == error)
        {
            Some(d) => d.count += 1,
            None => self.defense_points.push(DefensePoint {
                node: node.to_owned(),
                error: error.to_owned(),
                count: 1,
            }),
        }
    }

    pub fn stopped_by(&self, node: &str, error: &str) -> bool {
        self.defense_points.iter().any(|d| d.node == node && d.error == error)
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let run = if self.control { " (control run, defences off)" } else { "" };
        let _ = writeln!(s, "attack: {}{run}", self.kind);
        let _ = writeln!(s, "attempts: {}", self.attempts);
        let _ = writeln!(s, "successes: {}", self.successes);
        if self.defense_points.is_empty() {
            let _ = writeln!(s, "defense points: none");
        } else {
            let _ = writeln!(s, "defense points:");
            for d in &self.defense_points {
                let _ = writeln!(s, "  {} {} x{}", d.node, d.error, d.count);
            }
        }
        let _ = writeln!(
            s,
            "honest sessions: {} established / {} started, {} requests served",
            self.honest_established, self.honest_started, self.honest_served
        );
        let verdict = if self.succeeded() { "ATTACK SUCCEEDED" } else { "ATTACK DEFEATED" };
        let _ = writeln!(s, "verdict: {verdict}");
        s
    }

    /// One record per line, each a space-separated list of `key=value` pairs.
    pub fn render_machine(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "kind={}", self.kind);
        let _ = writeln!(s, "control={}", self.control);
        let _ = writeln!(s, "attempts={}", self.attempts);
        let _ = writeln!(s, "successes={}", self.successes);
        for d in &self.defense_points {
            let _ = writeln!(s, "defense_point={} error={} count={}", d.node, d.error, d.count);
        }
        let _ = writeln!(s, "honest_started={}", self.honest_started);
        let _ = writeln!(s, "honest_established={}", self.honest_established);
        let _ = writeln!(s, "honest_served={}", self.honest_served);
        let _ = writeln!(s, "succeeded={}", self.succeeded());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defense_points_aggregate() {
        let mut r = AttackReport::new(AttackKind::Replay, false);
        r.attempt(false);
        r.defended("tgs", "TicketExpired");
        r.attempt(false);
        r.defended("tgs", "TicketExpired");
        r.attempt(true);
        assert_eq!(r.defense_points.len(), 1);
        assert_eq!(r.defense_points[0].count, 2);
        assert!(r.succeeded());
        assert!(r.render_machine().contains("defense_point=tgs error=TicketExpired count=2\n"));
        assert!(r.render_text().contains("ATTACK SUCCEEDED"));
    }
}
