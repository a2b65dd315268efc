//! Tiered document store behind the database services.
//!
//! Every request is verified twice: once at entry against the session the
//! controller established, and again at the store hop against the live DAC
//! table. Writes only append.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use hmac::{Hmac, Mac};
use sha2::Sha256;
use thiserror::Error;

use crate::clock::Clock;
use crate::directory::{Directory, Permission};
use crate::model::{ControllerId, Defenses};
use crate::protocol::EstablishedSession;

/// Service through which the anonymised surface is reached.
pub const SECURED_VIEW: &str = "secured_view";

/// Controllers allowed onto the secured view.
pub const SECURED_VIEW_CONTROLLERS: [&str; 2] = ["analysis_backend", "analysis_services"];

pub const DEFAULT_QI_FIELDS: [&str; 5] = ["name", "birthdate", "address", "school_id", "clinic_id"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("permission denied for `{controller}` on `{collection}` at {point}: {reason}")]
    PermissionDenied {
        controller: String,
        collection: String,
        point: CheckPoint,
        reason: String,
    },
    #[error("unknown collection `{0}`")]
    UnknownCollection(String),
    #[error("collection `{0}` already exists")]
    DuplicateCollection(String),
    #[error("document `{0}` already exists")]
    DuplicateDocument(String),
    #[error("original-tier document `{0}` has no global id")]
    MissingGlobalId(String),
    #[error("document `{doc}` carries quasi-identifier `{field}` in an anonymised collection")]
    QuasiIdentifier { doc: String, field: String },
    #[error("QI registry must not be empty")]
    EmptyQiRegistry,
    #[error("unknown tier `{0}`")]
    UnknownTier(String),
}

impl StoreError {
    pub fn name(&self) -> &'static str {
        match self {
            StoreError::PermissionDenied { .. } => "PermissionDenied",
            StoreError::UnknownCollection(_) => "UnknownCollection",
            StoreError::DuplicateCollection(_) => "DuplicateCollection",
            StoreError::DuplicateDocument(_) => "DuplicateDocument",
            StoreError::MissingGlobalId(_) => "MissingGlobalId",
            StoreError::QuasiIdentifier { .. } => "QuasiIdentifier",
            StoreError::EmptyQiRegistry => "EmptyQiRegistry",
            StoreError::UnknownTier(_) => "UnknownTier",
        }
    }
}

/// Where a request was stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckPoint {
    /// The database service checking the presented session.
    Entry,
    /// The store re-checking the directory before touching data.
    StoreHop,
}

impl fmt::Display for CheckPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckPoint::Entry => "entry",
            CheckPoint::StoreHop => "store-hop",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tier {
    Original,
    Deidentified,
    Anonymized,
}

impl FromStr for Tier {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "original" => Ok(Tier::Original),
            "deidentified" => Ok(Tier::Deidentified),
            "anonymized" => Ok(Tier::Anonymized),
            other => Err(StoreError::UnknownTier(other.to_owned())),
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Original => "original",
            Tier::Deidentified => "deidentified",
            Tier::Anonymized => "anonymized",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Document {
    pub doc_id: String,
    pub global_id: String,
    pub fields: BTreeMap<String, String>,
}

impl Document {
    pub fn new<K, V>(doc_id: &str, global_id: &str, fields: impl IntoIterator<Item = (K, V)>) -> Self
    where
        K: Into<String>,
        V: Into<String>,
    {
        Document {
            doc_id: doc_id.to_owned(),
            global_id: global_id.to_owned(),
            fields: fields.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QiRegistry {
    names: BTreeSet<String>,
}

impl QiRegistry {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, StoreError> {
        let names: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(StoreError::EmptyQiRegistry);
        }
        Ok(QiRegistry { names })
    }

    pub fn contains(&self, field: &str) -> bool {
        self.names.contains(field)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }
}

impl Default for QiRegistry {
    fn default() -> Self {
        QiRegistry::new(DEFAULT_QI_FIELDS).expect("non-empty")
    }
}

/// Keyed one-way pseudonym of a global id, hex encoded.
pub fn pseudonym(key: &[u8], global_id: &str) -> String {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(global_id.as_bytes());
    hex::encode(mac.finalize().into_bytes())
}

/// Copy of `doc` without QI fields and with its global id pseudonymised.
pub fn deidentify(doc: &Document, qi: &QiRegistry, key: &[u8]) -> Document {
    Document {
        doc_id: doc.doc_id.clone(),
        global_id: pseudonym(key, &doc.global_id),
        fields: doc
            .fields
            .iter()
            .filter(|(k, _)| !qi.contains(k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Query {
    All,
    FieldEq(String, String),
    GlobalId(String),
}

impl Query {
    pub fn matches(&self, doc: &Document) -> bool {
        match self {
            Query::All => true,
            Query::FieldEq(k, v) => doc.fields.get(k) == Some(v),
            Query::GlobalId(g) => doc.global_id == *g,
        }
    }
}

#[derive(Debug)]
struct Collection {
    tier: Tier,
    server_id: String,
    documents: RwLock<Vec<Document>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollectionInfo {
    pub name: String,
    pub tier: Tier,
    pub server_id: String,
    pub len: usize,
}

/// A served request together with how many verification points it passed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Served<T> {
    pub value: T,
    pub verifications: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StoreCounters {
    pub served: u64,
    pub denied: u64,
    pub verifications: u64,
}

pub struct DataStore {
    directory: Arc<Directory>,
    collections: RwLock<BTreeMap<String, Arc<Collection>>>,
    qi: QiRegistry,
    pseudonym_key: Vec<u8>,
    clock: Clock,
    defenses: Defenses,
    served: AtomicU64,
    denied: AtomicU64,
    verifications: AtomicU64,
}

impl DataStore {
    pub fn new(directory: Arc<Directory>, qi: QiRegistry, pseudonym_key: Vec<u8>, clock: Clock) -> Self {
        DataStore {
            directory,
            collections: RwLock::new(BTreeMap::new()),
            qi,
            pseudonym_key,
            clock,
            defenses: Defenses::default(),
            served: AtomicU64::new(0),
            denied: AtomicU64::new(0),
            verifications: AtomicU64::new(0),
        }
    }

    pub fn with_defenses(mut self, defenses: Defenses) -> Self {
        self.defenses = defenses;
        self
    }

    pub fn qi(&self) -> &QiRegistry {
        &self.qi
    }

    pub fn pseudonym_key(&self) -> &[u8] {
        &self.pseudonym_key
    }

    pub fn create_collection(&self, name: &str, tier: Tier, server_id: &str) -> Result<(), StoreError> {
        let mut cols = self.collections.write().expect("store poisoned");
        if cols.contains_key(name) {
            return Err(StoreError::DuplicateCollection(name.to_owned()));
        }
        cols.insert(
            name.to_owned(),
            Arc::new(Collection {
                tier,
                server_id: server_id.to_owned(),
                documents: RwLock::new(Vec::new()),
            }),
        );
        Ok(())
    }

    fn collection(&self, name: &str) -> Result<Arc<Collection>, StoreError> {
        self.collections
            .read()
            .expect("store poisoned")
            .get(name)
            .cloned()
            .ok_or_else(|| StoreError::UnknownCollection(name.to_owned()))
    }

    pub fn collections(&self) -> Vec<CollectionInfo> {
        let cols = self.collections.read().expect("store poisoned");
        cols.iter()
            .map(|(name, c)| CollectionInfo {
                name: name.clone(),
                tier: c.tier,
                server_id: c.server_id.clone(),
                len: c.documents.read().expect("collection poisoned").len(),
            })
            .collect()
    }

    /// Unchecked administrative view, for loading and inspection.
    pub fn snapshot(&self, collection: &str) -> Result<Vec<Document>, StoreError> {
        Ok(self.collection(collection)?.documents.read().expect("collection poisoned").clone())
    }

    /// Unchecked administrative append used when loading fixtures.
    pub fn seed(&self, collection: &str, doc: Document) -> Result<(), StoreError> {
        let col = self.collection(collection)?;
        self.append(&col, doc)
    }

    pub fn counters(&self) -> StoreCounters {
        StoreCounters {
            served: self.served.load(Ordering::SeqCst),
            denied: self.denied.load(Ordering::SeqCst),
            verifications: self.verifications.load(Ordering::SeqCst),
        }
    }

    fn deny<T>(&self, controller: &ControllerId, collection: &str, point: CheckPoint, reason: String) -> Result<T, StoreError> {
        self.denied.fetch_add(1, Ordering::SeqCst);
        Err(StoreError::PermissionDenied {
            controller: controller.to_string(),
            collection: collection.to_owned(),
            point,
            reason,
        })
    }

    fn passed(&self, count: &mut u32) {
        *count += 1;
        self.verifications.fetch_add(1, Ordering::SeqCst);
    }

    fn entry_check(
        &self,
        session: &EstablishedSession,
        service: &str,
        op: Permission,
        count: &mut u32,
    ) -> Result<(), StoreError> {
        let who = session.controller_id();
        if session.service().as_str() != service {
            return self.deny(who, service, CheckPoint::Entry, format!("session is for `{}`", session.service()));
        }
        if !session.is_live(self.clock.now()) {
            return self.deny(who, service, CheckPoint::Entry, "session expired".into());
        }
        if !session.allows(op) {
            return self.deny(who, service, CheckPoint::Entry, format!("session grants {}", session.granted()));
        }
        self.passed(count);
        Ok(())
    }

    fn hop_check(&self, controller: &ControllerId, dac_collection: &str, op: Permission, count: &mut u32) -> Result<(), StoreError> {
        if self.defenses.dac && !self.directory.dac_lookup(controller, dac_collection).contains(op) {
            return self.deny(controller, dac_collection, CheckPoint::StoreHop, "no DAC entry".into());
        }
        self.passed(count);
        Ok(())
    }

    fn served<T>(&self, value: T, verifications: u32) -> Served<T> {
        debug_assert!(verifications >= 2);
        self.served.fetch_add(1, Ordering::SeqCst);
        Served { value, verifications }
    }

    pub fn read(&self, session: &EstablishedSession, collection: &str, query: &Query) -> Result<Served<Vec<Document>>, StoreError> {
        let col = self.collection(collection)?;
        let mut checks = 0;
        self.entry_check(session, collection, Permission::Read, &mut checks)?;
        self.hop_check(session.controller_id(), collection, Permission::Read, &mut checks)?;
        let docs = col.documents.read().expect("collection poisoned");
        let found = docs.iter().filter(|d| query.matches(d)).cloned().collect();
        Ok(self.served(found, checks))
    }

    pub fn write(&self, session: &EstablishedSession, collection: &str, doc: Document) -> Result<Served<()>, StoreError> {
        let col = self.collection(collection)?;
        let mut checks = 0;
        self.entry_check(session, collection, Permission::Write, &mut checks)?;
        self.hop_check(session.controller_id(), collection, Permission::Write, &mut checks)?;
        self.append(&col, doc)?;
        Ok(self.served((), checks))
    }

    fn append(&self, col: &Collection, doc: Document) -> Result<(), StoreError> {
        if col.tier == Tier::Original && doc.global_id.is_empty() {
            return Err(StoreError::MissingGlobalId(doc.doc_id));
        }
        if col.tier == Tier::Anonymized {
            if let Some(field) = doc.fields.keys().find(|k| self.qi.contains(k)) {
                return Err(StoreError::QuasiIdentifier {
                    doc: doc.doc_id.clone(),
                    field: field.clone(),
                });
            }
        }
        let mut docs = col.documents.write().expect("collection poisoned");
        if docs.iter().any(|d| d.doc_id == doc.doc_id) {
            return Err(StoreError::DuplicateDocument(doc.doc_id));
        }
        docs.push(doc);
        Ok(())
    }

    /// De-identified copy of every document in `collection`, for the
    /// analysis controllers only.
    pub fn secured_view(&self, session: &EstablishedSession, collection: &str) -> Result<Served<Vec<Document>>, StoreError> {
        let col = self.collection(collection)?;
        let mut checks = 0;
        self.entry_check(session, SECURED_VIEW, Permission::Read, &mut checks)?;
        let who = session.controller_id();
        if self.defenses.dac && !SECURED_VIEW_CONTROLLERS.contains(&who.as_str()) {
            return self.deny(who, SECURED_VIEW, CheckPoint::StoreHop, "not an analysis controller".into());
        }
        self.hop_check(who, SECURED_VIEW, Permission::Read, &mut checks)?;
        let docs = col.documents.read().expect("collection poisoned");
        let view = docs
            .iter()
            .map(|d| deidentify(d, &self.qi, &self.pseudonym_key))
            .collect();
        Ok(self.served(view, checks))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::Timestamp;
    use crate::directory::Permissions;
    use crate::model::ServiceId;
    use proptest::prelude::*;

    fn session(controller: &str, service: &str, granted: Permissions) -> EstablishedSession {
        EstablishedSession {
            controller_id: controller.into(),
            service: ServiceId::from(service),
            granted,
            session_key: crate::crypto::SymmetricKey::from_bytes(vec![0; 32]),
            ts_c_dbs: Timestamp(0),
            expires_at: Timestamp(1_000_000),
        }
    }

    fn store() -> DataStore {
        let rng = crate::crypto::SeededRng::from_seed(3);
        let suite = crate::crypto::CryptoSuite::default();
        let dir = Arc::new(Directory::new());
        let reg = |name: &str, acl: Vec<(&str, Permissions)>| {
            let cred = crate::model::ControllerCredential::new(name.into(), name, "pw", &suite, &rng).unwrap();
            let acl = acl.into_iter().map(|(c, p)| crate::directory::DacEntry::new(name, c, p)).collect();
            dir.register_controller(cred, acl).unwrap();
        };
        reg("portal", vec![("clinic", Permissions::RW)]);
        reg("mobile", vec![("activity", Permissions::RW)]);
        reg("analysis_services", vec![(SECURED_VIEW, Permissions::R)]);
        let s = DataStore::new(dir, QiRegistry::default(), b"k".to_vec(), Clock::manual(Timestamp(10)));
        s.create_collection("clinic", Tier::Original, "mongo").unwrap();
        s.create_collection("activity", Tier::Original, "cassandra").unwrap();
        s.seed("clinic", Document::new("c1", "g1", [("name", "Ann"), ("weight", "40")])).unwrap();
        s
    }

    #[test]
    fn reads_pass_two_checks() {
        let s = store();
        let r = s.read(&session("portal", "clinic", Permissions::RW), "clinic", &Query::All).unwrap();
        assert_eq!(r.value.len(), 1);
        assert_eq!(r.verifications, 2);
        assert_eq!(
            s.read(&session("portal", "nope", Permissions::R), "nope", &Query::All),
            Err(StoreError::UnknownCollection("nope".into()))
        );
    }

    #[test]
    fn entry_and_hop_denials() {
        let s = store();
        let err = s
            .write(&session("portal", "clinic", Permissions::R), "clinic", Document::new("c2", "g2", [("a", "b")]))
            .unwrap_err();
        assert!(matches!(err, StoreError::PermissionDenied { point: CheckPoint::Entry, .. }));
        let err = s
            .read(&session("mobile", "clinic", Permissions::R), "clinic", &Query::All)
            .unwrap_err();
        assert!(matches!(err, StoreError::PermissionDenied { point: CheckPoint::StoreHop, .. }));
        assert_eq!(s.counters().denied, 2);
    }

    #[test]
    fn revoke_is_seen_at_the_hop() {
        let s = store();
        let sess = session("portal", "clinic", Permissions::RW);
        assert!(s.read(&sess, "clinic", &Query::All).is_ok());
        s.directory.revoke(&"portal".into(), "clinic");
        let err = s.read(&sess, "clinic", &Query::All).unwrap_err();
        assert!(matches!(err, StoreError::PermissionDenied { point: CheckPoint::StoreHop, .. }));
    }

    #[test]
    fn write_appends_only() {
        let s = store();
        let sess = session("mobile", "activity", Permissions::RW);
        s.write(&sess, "activity", Document::new("a1", "g1", [("steps", "100")])).unwrap();
        assert_eq!(
            s.write(&sess, "activity", Document::new("a1", "g1", [("steps", "0")])).unwrap_err(),
            StoreError::DuplicateDocument("a1".into())
        );
        assert_eq!(s.snapshot("activity").unwrap()[0].fields["steps"], "100");
    }

    #[test]
    fn deidentification() {
        let qi = QiRegistry::new(["name"]).unwrap();
        let doc = Document::new("d", "g1", [("name", "Ann"), ("weight", "40")]);
        let out = deidentify(&doc, &qi, b"key");
        assert_eq!(out.fields.keys().collect::<Vec<_>>(), ["weight"]);
        assert_ne!(out.global_id, "g1");
        assert_eq!(out, deidentify(&doc, &qi, b"key"));
        let plain = Document::new("d", "g1", [("weight", "40")]);
        assert_eq!(deidentify(&plain, &qi, b"key").fields, plain.fields);
        assert!(QiRegistry::new(Vec::<String>::new()).is_err());
    }

    #[test]
    fn pseudonym_fixture() {
        // HMAC-SHA256(key="k", msg="g1"), computed independently
        assert_eq!(
            pseudonym(b"k", "g1"),
            "a54222747d49e34b526e268cdef493e1b3fef57822ce4f835ba69cdc49c66b59"
        );
    }

    #[test]
    fn secured_view_rules() {
        let s = store();
        let docs = s
            .secured_view(&session("analysis_services", SECURED_VIEW, Permissions::R), "clinic")
            .unwrap();
        assert_eq!(docs.verifications, 2);
        assert!(docs.value.iter().all(|d| !d.fields.contains_key("name") && d.global_id != "g1"));
        let err = s
            .secured_view(&session("portal", SECURED_VIEW, Permissions::R), "clinic")
            .unwrap_err();
        assert_eq!(err.name(), "PermissionDenied");
        let empty = s
            .secured_view(&session("analysis_services", SECURED_VIEW, Permissions::R), "activity")
            .unwrap();
        assert!(empty.value.is_empty());
    }

    #[test]
    fn anonymized_tier_rejects_qi() {
        let s = store();
        s.create_collection("research", Tier::Anonymized, "mongo").unwrap();
        assert!(matches!(
            s.seed("research", Document::new("r", "p", [("address", "x")])),
            Err(StoreError::QuasiIdentifier { .. })
        ));
    }

    proptest! {
        #[test]
        fn secured_view_never_leaks_qi(fields in proptest::collection::btree_map(
            prop_oneof!["name", "birthdate", "address", "school_id", "clinic_id", "[a-z]{1,6}"],
            "[a-z0-9]{0,4}", 0..8)) {
            let s = store();
            s.seed("clinic", Document { doc_id: "x".into(), global_id: "gx".into(), fields }).unwrap();
            let v = s.secured_view(&session("analysis_services", SECURED_VIEW, Permissions::R), "clinic").unwrap();
            for d in v.value {
                prop_assert!(d.fields.keys().all(|k| !s.qi().contains(k)));
                prop_assert!(d.global_id != "gx" && d.global_id != "g1");
            }
        }
    }
}
