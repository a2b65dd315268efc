//! Message handlers for every simulated node. Per-connection state is keyed
//! by the envelope's session id.

use std::collections::{BTreeMap, VecDeque};

use super::data::{DataRequest, DataResponse};
use crate::channel::{Channel, ChannelPhase, ClientHello, KeyExchange, ServerIdentity, ServerSelect, SUPPORTED_VERSION};
use crate::crypto::PublicKey;
use crate::directory::Permissions;
use crate::model::{ControllerId, ServiceId};
use crate::protocol::messages::AsRequest;
use crate::protocol::{node_dbs, node_tgs, ControllerClient, EstablishedSession, Phase};
use crate::scenario::World;
use crate::store::Query;
use crate::wire::{Envelope, Tag};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Outcome {
    Accepted,
    Rejected(String),
    /// Held until the other half of a message pair arrives.
    Pending,
}

impl Outcome {
    pub fn render(&self) -> String {
        match self {
            Outcome::Accepted => "accepted".into(),
            Outcome::Rejected(e) => format!("rejected:{e}"),
            Outcome::Pending => "pending".into(),
        }
    }
}

pub struct Delivery {
    pub outcome: Outcome,
    pub replies: Vec<(String, Envelope)>,
}

impl Delivery {
    fn accepted(replies: Vec<(String, Envelope)>) -> Self {
        Delivery {
            outcome: Outcome::Accepted,
            replies,
        }
    }

    fn rejected(error: &str) -> Self {
        Delivery {
            outcome: Outcome::Rejected(error.to_owned()),
            replies: Vec::new(),
        }
    }

    fn pending() -> Self {
        Delivery {
            outcome: Outcome::Pending,
            replies: Vec::new(),
        }
    }

    fn rejected_with(error: &str, replies: Vec<(String, Envelope)>) -> Self {
        Delivery {
            outcome: Outcome::Rejected(error.to_owned()),
            replies,
        }
    }
}

fn unexpected(tag: Tag) -> Delivery {
    Delivery::rejected(&format!("UnexpectedTag({})", tag.name()))
}

pub enum Node {
    As,
    Tgs(TgsNode),
    Dbs(Box<DbsNode>),
    Controller(ControllerNode),
    /// Sink for replies to adversary-originated traffic.
    Adversary,
}

impl Node {
    pub fn handle(&mut self, world: &World, from: &str, env: &Envelope) -> Delivery {
        match self {
            Node::As => handle_as(world, from, env),
            Node::Tgs(n) => n.handle(world, from, env),
            Node::Dbs(n) => n.handle(world, from, env),
            Node::Controller(n) => n.handle(world, env),
            Node::Adversary => Delivery::accepted(Vec::new()),
        }
    }
}

fn handle_as(world: &World, from: &str, env: &Envelope) -> Delivery {
    if env.tag != Tag::AsRequest {
        return unexpected(env.tag);
    }
    let req = match AsRequest::from_bytes(&env.body) {
        Ok(r) => r,
        Err(_) => return Delivery::rejected("Malformed"),
    };
    let sid = env.session_id;
    match world.realm.center.as_handle_request(&req.controller_id, &world.clock) {
        Ok(r) => Delivery::accepted(vec![
            (from.to_owned(), Envelope::new(Tag::MA, sid, r.m_a)),
            (from.to_owned(), Envelope::new(Tag::MB, sid, r.m_b)),
        ]),
        Err(e) => Delivery::rejected_with(
            e.name(),
            vec![(from.to_owned(), Envelope::new(Tag::Reject, sid, e.reject_body()))],
        ),
    }
}

#[derive(Default)]
pub struct TgsNode {
    pending_mc: BTreeMap<u64, Vec<u8>>,
}

impl TgsNode {
    fn handle(&mut self, world: &World, from: &str, env: &Envelope) -> Delivery {
        let sid = env.session_id;
        match env.tag {
            Tag::MC => {
                self.pending_mc.insert(sid, env.body.clone());
                Delivery::pending()
            }
            Tag::MD => {
                let Some(m_c) = self.pending_mc.remove(&sid) else {
                    return Delivery::rejected("MissingTicket");
                };
                let center = &world.realm.center;
                let result = center
                    .tgs_authenticate(&m_c, &env.body, &world.clock)
                    .and_then(|ctx| center.tgs_authorize(&ctx, &world.clock));
                match result {
                    Ok(r) => Delivery::accepted(vec![
                        (from.to_owned(), Envelope::new(Tag::ME, sid, r.m_e)),
                        (from.to_owned(), Envelope::new(Tag::MF, sid, r.m_f)),
                    ]),
                    Err(e) => Delivery::rejected_with(
                        e.name(),
                        vec![(from.to_owned(), Envelope::new(Tag::Reject, sid, e.reject_body()))],
                    ),
                }
            }
            other => unexpected(other),
        }
    }
}

/// Database service endpoint plus the store behind it.
pub struct DbsNode {
    service: ServiceId,
    identity: ServerIdentity,
    pending_me: BTreeMap<u64, Vec<u8>>,
    sessions: BTreeMap<u64, EstablishedSession>,
    channels: BTreeMap<u64, Channel>,
}

impl DbsNode {
    pub fn new(service: ServiceId, identity: ServerIdentity) -> Self {
        DbsNode {
            service,
            identity,
            pending_me: BTreeMap::new(),
            sessions: BTreeMap::new(),
            channels: BTreeMap::new(),
        }
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.identity.keys.public
    }

    fn handle(&mut self, world: &World, from: &str, env: &Envelope) -> Delivery {
        let sid = env.session_id;
        let reply = |tag, body| vec![(from.to_owned(), Envelope::new(tag, sid, body))];
        match env.tag {
            Tag::ME => {
                self.pending_me.insert(sid, env.body.clone());
                Delivery::pending()
            }
            Tag::MG => {
                let Some(m_e) = self.pending_me.remove(&sid) else {
                    return Delivery::rejected("MissingTicket");
                };
                let Some(dbs) = world.realm.services.get(&self.service) else {
                    return Delivery::rejected("UnknownService");
                };
                match dbs.dbs_verify(&m_e, &env.body, &world.clock) {
                    Ok((m_h, session)) => {
                        self.sessions.insert(sid, session);
                        Delivery::accepted(reply(Tag::MH, m_h))
                    }
                    Err(e) => Delivery::rejected_with(e.name(), reply(Tag::Reject, e.reject_body())),
                }
            }
            Tag::ClientHello => {
                if !self.sessions.contains_key(&sid) {
                    return Delivery::rejected("PermissionDenied");
                }
                if self.channels.contains_key(&sid) {
                    return Delivery::rejected("OutOfOrder");
                }
                let Ok(hello) = ClientHello::from_bytes(&env.body) else {
                    return Delivery::rejected("Malformed");
                };
                let mut ch = Channel::server(self.identity.clone(), world.suites.clone(), &world.rng)
                    .with_defenses(world.defenses);
                match ch.select(&hello) {
                    Ok(sel) => {
                        self.channels.insert(sid, ch);
                        Delivery::accepted(reply(Tag::ServerSelect, sel.to_bytes()))
                    }
                    Err(e) => Delivery::rejected(e.name()),
                }
            }
            Tag::KeyExchange => {
                let Some(ch) = self.channels.get_mut(&sid) else {
                    return Delivery::rejected("PermissionDenied");
                };
                let Ok(kx) = KeyExchange::from_bytes(&env.body) else {
                    return Delivery::rejected("Malformed");
                };
                match ch.finish(&kx) {
                    Ok(()) => Delivery::accepted(Vec::new()),
                    Err(e) => Delivery::rejected(e.name()),
                }
            }
            Tag::Record => {
                let (Some(ch), Some(session)) = (self.channels.get_mut(&sid), self.sessions.get(&sid)) else {
                    return Delivery::rejected("PermissionDenied");
                };
                let plain = match ch.open(&env.body) {
                    Ok(p) => p,
                    Err(e) => return Delivery::rejected(e.name()),
                };
                let Ok(req) = DataRequest::from_bytes(&plain) else {
                    return Delivery::rejected("Malformed");
                };
                let result = match req {
                    DataRequest::Read { collection } => world
                        .store
                        .read(session, &collection, &Query::All)
                        .map(|s| DataResponse::Documents(s.value)),
                    DataRequest::Write { collection, doc } => world
                        .store
                        .write(session, &collection, doc)
                        .map(|_| DataResponse::Written),
                    DataRequest::View { collection } => world
                        .store
                        .secured_view(session, &collection)
                        .map(|s| DataResponse::Documents(s.value)),
                };
                let (outcome, resp) = match result {
                    Ok(r) => (Outcome::Accepted, r),
                    Err(e) => (Outcome::Rejected(e.name().into()), DataResponse::Denied(e.name().into())),
                };
                match ch.seal(&resp.to_bytes()) {
                    Ok(rec) => Delivery {
                        outcome,
                        replies: reply(Tag::Record, rec),
                    },
                    Err(e) => Delivery::rejected(e.name()),
                }
            }
            other => unexpected(other),
        }
    }
}

/// One controller-side connection: ticketing, then a channel to the
/// database service, then data requests.
pub struct CtlSession {
    pub client: ControllerClient,
    pub service: ServiceId,
    pub request: Permissions,
    password: String,
    pending_ma: Option<Vec<u8>>,
    pending_me: Option<Vec<u8>>,
    pub channel: Option<Channel>,
    queue: VecDeque<DataRequest>,
    pub session: Option<EstablishedSession>,
    pub responses: Vec<DataResponse>,
    pub error: Option<String>,
}

impl CtlSession {
    pub fn is_established(&self) -> bool {
        self.client.phase() == Phase::Established
    }

    pub fn channel_secure(&self) -> bool {
        self.channel.as_ref().map(|c| c.phase()) == Some(ChannelPhase::Secure)
    }
}

pub struct ControllerNode {
    pub id: ControllerId,
    pub rogue: bool,
    pins: BTreeMap<ServiceId, PublicKey>,
    pub sessions: BTreeMap<u64, CtlSession>,
}

impl ControllerNode {
    pub fn new(id: ControllerId, rogue: bool, pins: BTreeMap<ServiceId, PublicKey>) -> Self {
        ControllerNode {
            id,
            rogue,
            pins,
            sessions: BTreeMap::new(),
        }
    }

    pub fn start(
        &mut self,
        world: &World,
        sid: u64,
        password: &str,
        service: ServiceId,
        request: Permissions,
    ) -> Vec<(String, Envelope)> {
        let mut client = world.realm.client(&self.id);
        let body = client.start().expect("fresh client");
        self.sessions.insert(
            sid,
            CtlSession {
                client,
                service,
                request,
                password: password.to_owned(),
                pending_ma: None,
                pending_me: None,
                channel: None,
                queue: VecDeque::new(),
                session: None,
                responses: Vec::new(),
                error: None,
            },
        );
        vec![("as".to_owned(), Envelope::new(Tag::AsRequest, sid, body))]
    }

    /// Queues a data request, sending it at once when the channel is up.
    pub fn submit(&mut self, sid: u64, req: DataRequest) -> Vec<(String, Envelope)> {
        let Some(s) = self.sessions.get_mut(&sid) else {
            return Vec::new();
        };
        s.queue.push_back(req);
        Self::flush(s, sid)
    }

    fn flush(s: &mut CtlSession, sid: u64) -> Vec<(String, Envelope)> {
        let mut out = Vec::new();
        if !s.channel_secure() {
            return out;
        }
        let to = node_dbs(&s.service);
        let ch = s.channel.as_mut().expect("secure");
        while let Some(req) = s.queue.pop_front() {
            if let Ok(rec) = ch.seal(&req.to_bytes()) {
                out.push((to.clone(), Envelope::new(Tag::Record, sid, rec)));
            }
        }
        out
    }

    fn handle(&mut self, world: &World, env: &Envelope) -> Delivery {
        let sid = env.session_id;
        let Some(s) = self.sessions.get_mut(&sid) else {
            return Delivery::rejected("UnknownSession");
        };
        let phase = s.client.phase();
        let dbs = node_dbs(&s.service);
        let fail = |s: &mut CtlSession, name: &str| {
            s.error = Some(name.to_owned());
            Delivery::rejected(name)
        };
        match env.tag {
            Tag::MA if phase == Phase::AwaitAS => {
                s.pending_ma = Some(env.body.clone());
                Delivery::pending()
            }
            Tag::MB if phase == Phase::AwaitAS => {
                let Some(m_a) = s.pending_ma.take() else {
                    return Delivery::rejected("MissingM_A");
                };
                let pw = s.password.clone();
                match s.client.handle_as_reply(&m_a, &env.body, &pw, &s.service.clone(), s.request) {
                    Ok((m_c, m_d)) => Delivery::accepted(vec![
                        (node_tgs(), Envelope::new(Tag::MC, sid, m_c)),
                        (node_tgs(), Envelope::new(Tag::MD, sid, m_d)),
                    ]),
                    Err(e) => fail(s, e.name()),
                }
            }
            Tag::ME if phase == Phase::AwaitTGS => {
                s.pending_me = Some(env.body.clone());
                Delivery::pending()
            }
            Tag::MF if phase == Phase::AwaitTGS => {
                let Some(m_e) = s.pending_me.take() else {
                    return Delivery::rejected("MissingM_E");
                };
                match s.client.handle_tgs_reply(&env.body) {
                    Ok(m_g) => Delivery::accepted(vec![
                        (dbs.clone(), Envelope::new(Tag::ME, sid, m_e)),
                        (dbs, Envelope::new(Tag::MG, sid, m_g)),
                    ]),
                    Err(e) => fail(s, e.name()),
                }
            }
            Tag::MH if phase == Phase::AwaitDBS => match s.client.handle_dbs_reply(&env.body) {
                Ok(session) => {
                    s.session = Some(session);
                    let mut ch = Channel::client(&world.rng).with_defenses(world.defenses);
                    if let Some(pin) = self.pins.get(&s.service) {
                        ch = ch.pinned(pin.clone());
                    }
                    let hello = ch.hello(&[SUPPORTED_VERSION], &world.suites);
                    s.channel = Some(ch);
                    match hello {
                        Ok(h) => Delivery::accepted(vec![(dbs, Envelope::new(Tag::ClientHello, sid, h.to_bytes()))]),
                        Err(e) => fail(s, e.name()),
                    }
                }
                Err(e) => fail(s, e.name()),
            },
            Tag::Reject if !matches!(phase, Phase::Established | Phase::Failed) => {
                let err = s.client.handle_reject(&env.body);
                let name = match &err {
                    crate::protocol::ProtocolError::Rejected { error, .. } => error.clone(),
                    other => other.name().to_owned(),
                };
                s.error = Some(name);
                Delivery::accepted(Vec::new())
            }
            Tag::ServerSelect if s.channel.as_ref().map(|c| c.phase()) == Some(ChannelPhase::Hello) => {
                let Ok(sel) = ServerSelect::from_bytes(&env.body) else {
                    return Delivery::rejected("Malformed");
                };
                let ch = s.channel.as_mut().expect("checked");
                match ch.key_exchange(&sel) {
                    Ok(kx) => {
                        ch.confirm().expect("key exchanged");
                        let mut out = vec![(dbs, Envelope::new(Tag::KeyExchange, sid, kx.to_bytes()))];
                        out.extend(Self::flush(s, sid));
                        Delivery::accepted(out)
                    }
                    Err(e) => fail(s, e.name()),
                }
            }
            Tag::Record if s.channel_secure() => {
                let ch = s.channel.as_mut().expect("secure");
                match ch.open(&env.body) {
                    Ok(plain) => match DataResponse::from_bytes(&plain) {
                        Ok(resp) => {
                            s.responses.push(resp);
                            Delivery::accepted(Vec::new())
                        }
                        Err(_) => Delivery::rejected("Malformed"),
                    },
                    Err(e) => Delivery::rejected(e.name()),
                }
            }
            _ => Delivery::rejected("InvalidPhase"),
        }
    }
}
