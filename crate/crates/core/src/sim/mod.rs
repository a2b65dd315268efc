//! Discrete-event network simulator: honest nodes exchange envelopes through a
//! FIFO queue, every delivery is logged, and an adversary may record, replay or
//! inject envelopes and enroll rogue controllers.

pub mod data;
pub mod nodes;
pub mod report;
pub mod script;
pub mod sweep;

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use crate::authz;
use crate::channel::ServerIdentity;
use crate::crypto::PublicKey;
use crate::directory::{DacEntry, Permissions};
use crate::model::{ControllerCredential, ControllerId, ServiceId, UserId};
use crate::protocol::node_controller;
use crate::scenario::World;
use crate::store::{Document, Query};
use crate::wire::Envelope;
use data::DataRequest;
use nodes::{ControllerNode, CtlSession, DbsNode, Node, Outcome, TgsNode};

pub use report::{AttackReport, DefensePoint};
pub use script::{parse_script, run_script, AdversaryScript, AttackKind, ScriptError};

/// Upper bound on deliveries per `run`, so a looping script cannot hang.
const MAX_DELIVERIES: usize = 100_000;

/// Collections searched by the portal gateway on behalf of end users.
pub const GATEWAY_COLLECTIONS: [&str; 4] = ["clinic", "children", "school", "activity"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Honest,
    Adversary,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub index: usize,
    pub time_ms: u64,
    pub from: String,
    pub to: String,
    pub origin: Origin,
    pub envelope: Envelope,
    pub outcome: Outcome,
}

struct Packet {
    from: String,
    to: String,
    envelope: Envelope,
    origin: Origin,
}

pub struct Simulation {
    pub world: World,
    nodes: BTreeMap<String, Node>,
    queue: VecDeque<Packet>,
    log: Vec<LogEntry>,
    pins: BTreeMap<ServiceId, PublicKey>,
    owners: BTreeMap<u64, String>,
    next_session: u64,
    gateway_sessions: u64,
}

impl Simulation {
    pub fn new(world: World) -> Self {
        let mut nodes = BTreeMap::new();
        nodes.insert(crate::protocol::node_as(), Node::As);
        nodes.insert(crate::protocol::node_tgs(), Node::Tgs(TgsNode::default()));
        let mut pins = BTreeMap::new();
        for service in world.realm.services.keys() {
            let identity = ServerIdentity::generate(service.as_str(), &world.rng);
            pins.insert(service.clone(), identity.keys.public.clone());
            nodes.insert(
                crate::protocol::node_dbs(service),
                Node::Dbs(Box::new(DbsNode::new(service.clone(), identity))),
            );
        }
        for id in world.directory.controllers() {
            nodes.insert(
                node_controller(&id),
                Node::Controller(ControllerNode::new(id, false, pins.clone())),
            );
        }
        nodes.insert("adversary".to_owned(), Node::Adversary);
        Simulation {
            world,
            nodes,
            queue: VecDeque::new(),
            log: Vec::new(),
            pins,
            owners: BTreeMap::new(),
            next_session: 1,
            gateway_sessions: 0,
        }
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn send(&mut self, from: &str, to: &str, envelope: Envelope, origin: Origin) {
        self.queue.push_back(Packet {
            from: from.to_owned(),
            to: to.to_owned(),
            envelope,
            origin,
        });
    }

    /// Delivers queued packets until the network is idle. Returns the log
    /// indices delivered in this call.
    pub fn run(&mut self) -> std::ops::Range<usize> {
        let start = self.log.len();
        let mut budget = MAX_DELIVERIES;
        while let Some(p) = self.queue.pop_front() {
            budget -= 1;
            if budget == 0 {
                self.queue.clear();
                break;
            }
            let index = self.log.len();
            self.log.push(LogEntry {
                index,
                time_ms: self.world.clock.now().0,
                from: p.from.clone(),
                to: p.to.clone(),
                origin: p.origin,
                envelope: p.envelope.clone(),
                outcome: Outcome::Pending,
            });
            let delivery = match self.nodes.get_mut(&p.to) {
                Some(node) => node.handle(&self.world, &p.from, &p.envelope),
                None => nodes::Delivery {
                    outcome: Outcome::Rejected("UnknownNode".into()),
                    replies: Vec::new(),
                },
            };
            self.log[index].outcome = delivery.outcome;
            // Replies travel as honest traffic even when provoked by an injection.
            for (to, env) in delivery.replies {
                self.send(&p.to.clone(), &to, env, Origin::Honest);
            }
        }
        start..self.log.len()
    }

    fn controller(&self, id: &ControllerId) -> Option<&ControllerNode> {
        match self.nodes.get(&node_controller(id)) {
            Some(Node::Controller(c)) => Some(c),
            _ => None,
        }
    }

    /// Starts a ticketing run for `controller` (using its configured password
    /// unless `password` is given) and returns the new session id. Nothing is
    /// delivered until `run`.
    pub fn start_session(
        &mut self,
        controller: &ControllerId,
        password: Option<&str>,
        service: &ServiceId,
        request: Permissions,
    ) -> Option<u64> {
        let pw = password
            .map(str::to_owned)
            .or_else(|| self.world.controller_passwords.get(controller).cloned())
            .unwrap_or_default();
        let sid = self.next_session;
        let node = match self.nodes.get_mut(&node_controller(controller)) {
            Some(Node::Controller(c)) => c,
            _ => return None,
        };
        let out = node.start(&self.world, sid, &pw, service.clone(), request);
        self.next_session += 1;
        self.owners.insert(sid, node_controller(controller));
        let from = node_controller(controller);
        for (to, env) in out {
            self.send(&from, &to, env, Origin::Honest);
        }
        Some(sid)
    }

    /// Reserves a session id nobody has used.
    pub fn fresh_session_id(&mut self) -> u64 {
        let sid = self.next_session;
        self.next_session += 1;
        sid
    }

    pub fn owner(&self, sid: u64) -> Option<&str> {
        self.owners.get(&sid).map(String::as_str)
    }

    /// Queues a data request on an existing session.
    pub fn submit(&mut self, sid: u64, req: DataRequest) -> bool {
        let Some(owner) = self.owners.get(&sid).cloned() else {
            return false;
        };
        let out = match self.nodes.get_mut(&owner) {
            Some(Node::Controller(c)) => c.submit(sid, req),
            _ => return false,
        };
        for (to, env) in out {
            self.send(&owner, &to, env, Origin::Honest);
        }
        true
    }

    pub fn session(&self, sid: u64) -> Option<&CtlSession> {
        let owner = self.owners.get(&sid)?;
        match self.nodes.get(owner) {
            Some(Node::Controller(c)) => c.sessions.get(&sid),
            _ => None,
        }
    }

    pub fn is_rogue(&self, controller: &ControllerId) -> bool {
        self.controller(controller).is_some_and(|c| c.rogue)
    }

    /// Adds an adversary-operated controller. When `enrolled` it is placed in
    /// the directory with no DAC entries; otherwise the directory never hears
    /// of it.
    pub fn add_rogue(&mut self, name: &ControllerId, password: &str, enrolled: bool) -> Result<(), String> {
        if self.nodes.contains_key(&node_controller(name)) {
            return Err(format!("controller `{name}` already exists"));
        }
        if enrolled {
            let cred = ControllerCredential::new(name.clone(), name.as_str(), password, &self.world.suite, &self.world.rng)
                .map_err(|e| e.to_string())?;
            self.world
                .directory
                .register_controller(cred, Vec::<DacEntry>::new())
                .map_err(|e| e.to_string())?;
        }
        self.world.controller_passwords.insert(name.clone(), password.to_owned());
        self.nodes.insert(
            node_controller(name),
            Node::Controller(ControllerNode::new(name.clone(), true, self.pins.clone())),
        );
        Ok(())
    }

    /// End-user query through the portal: authenticate, verify the token,
    /// authorize against the target's organisation, then read the target's
    /// documents over a fresh portal session. Errors name the node and check
    /// that refused.
    pub fn gateway_query(&mut self, username: &str, password: &str, target: &str) -> Result<Vec<Document>, (String, String)> {
        let w = &self.world;
        let auth = |e: crate::token::AuthError| ("auth".to_owned(), e.name().to_owned());
        let token = w.tokens.authenticate_user(username, password, &w.clock).map_err(auth)?;
        let payload = w.tokens.verify_token(&token, &w.clock).map_err(auth)?;
        let target_id = UserId::new(target).map_err(|_| ("gateway".to_owned(), "UnknownUser".to_owned()))?;
        if w.defenses.user_authorization {
            let requester = w
                .registry
                .user(&payload.user_id)
                .ok_or_else(|| ("gateway".to_owned(), "UnknownUser".to_owned()))?;
            let verdict = authz::evaluate(&w.registry, &payload.roles, &requester.org_id, &target_id)
                .map_err(|_| ("gateway".to_owned(), "UnknownUser".to_owned()))?;
            match verdict {
                authz::Verdict::Allow => {}
                authz::Verdict::DenyStewardship => return Err(("gateway".into(), "DenyStewardship".into())),
                authz::Verdict::DenyMembership => return Err(("gateway".into(), "DenyMembership".into())),
            }
        }
        let portal = ControllerId::from("portal");
        let mut docs = Vec::new();
        for name in GATEWAY_COLLECTIONS {
            self.gateway_sessions += 1;
            let sid = (1u64 << 40) + self.gateway_sessions;
            let run = self.world.handshake(&portal, None, &ServiceId::from(name), Permissions::R, sid);
            let Ok((_, server)) = run.result else {
                continue;
            };
            if let Ok(s) = self.world.store.read(&server, name, &Query::GlobalId(target.to_owned())) {
                docs.extend(s.value);
            }
        }
        Ok(docs)
    }

    /// One line per delivery: index, time, origin, route, tag, session, body
    /// digest and outcome.
    pub fn render_log(&self) -> String {
        let mut out = String::new();
        for e in &self.log {
            let origin = match e.origin {
                Origin::Honest => "H",
                Origin::Adversary => "A",
            };
            let digest = self.world.suite.hash.digest(&e.envelope.body);
            let _ = writeln!(
                out,
                "{:>4} t={} {} {} -> {} {} sid={} len={} h={} {}",
                e.index,
                e.time_ms,
                origin,
                e.from,
                e.to,
                e.envelope.tag.name(),
                e.envelope.session_id,
                e.envelope.body.len(),
                hex::encode(&digest[..8]),
                e.outcome.render(),
            );
        }
        out
    }

    pub fn controller_ids(&self) -> Vec<ControllerId> {
        self.nodes
            .values()
            .filter_map(|n| match n {
                Node::Controller(c) => Some(c.id.clone()),
                _ => None,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::data::DataResponse;
    use super::*;
    use crate::wire::Tag;

    #[test]
    fn honest_session_reads_over_channel() {
        let mut sim = Simulation::new(World::default_with_seed(3));
        let sid = sim
            .start_session(&"portal".into(), None, &"clinic".into(), Permissions::RW)
            .unwrap();
        sim.submit(sid, DataRequest::Read { collection: "clinic".into() });
        sim.run();
        let s = sim.session(sid).unwrap();
        assert!(s.is_established());
        assert!(s.channel_secure());
        match &s.responses[..] {
            [DataResponse::Documents(d)] => assert_eq!(d.len(), 2),
            other => panic!("{other:?}"),
        }
        let tags: Vec<_> = sim.log().iter().map(|e| e.envelope.tag).collect();
        assert_eq!(
            &tags[..10],
            &[Tag::AsRequest, Tag::MA, Tag::MB, Tag::MC, Tag::MD, Tag::ME, Tag::MF, Tag::ME, Tag::MG, Tag::MH]
        );
        assert!(sim.log().iter().all(|e| e.outcome != Outcome::Rejected("InvalidPhase".into())));
    }

    #[test]
    fn dac_reject_reaches_controller() {
        let mut sim = Simulation::new(World::default_with_seed(3));
        let sid = sim
            .start_session(&"mobile".into(), None, &"clinic".into(), Permissions::R)
            .unwrap();
        sim.run();
        let s = sim.session(sid).unwrap();
        assert_eq!(s.error.as_deref(), Some("DacDenied"));
        assert!(sim
            .log()
            .iter()
            .any(|e| e.to == "tgs" && e.outcome == Outcome::Rejected("Reject".into())));
    }

    #[test]
    fn gateway_applies_user_authorization() {
        let mut sim = Simulation::new(World::default_with_seed(3));
        let docs = sim.gateway_query("alice", "alice-pw", "B").unwrap();
        assert!(!docs.is_empty());
        assert_eq!(
            sim.gateway_query("dan", "dan-pw", "B").unwrap_err(),
            ("gateway".to_owned(), "DenyMembership".to_owned())
        );
        assert_eq!(
            sim.gateway_query("tina", "tina-pw", "B").unwrap_err().1,
            "DenyStewardship"
        );
        assert_eq!(sim.gateway_query("alice", "nope", "B").unwrap_err().1, "WrongPassword");
    }
}
