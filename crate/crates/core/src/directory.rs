//! In-process active directory: controller credentials and the DAC table.
//!
//! Absence of an entry means no access.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::RwLock;

use thiserror::Error;

use crate::model::{ControllerCredential, ControllerId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DirectoryError {
    #[error("controller name `{0}` already registered")]
    DuplicateName(String),
    #[error("duplicate ACL entry for ({0}, {1})")]
    DuplicateAclEntry(String, String),
    #[error("unknown controller `{0}`")]
    UnknownController(String),
    #[error("empty permission request")]
    EmptyRequest,
    #[error("unknown permission string `{0}`")]
    UnknownPermission(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Permission {
    Read,
    Write,
}

/// A subset of {R, W}.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Permissions {
    pub read: bool,
    pub write: bool,
}

impl Permissions {
    pub const NONE: Permissions = Permissions {
        read: false,
        write: false,
    };
    pub const R: Permissions = Permissions {
        read: true,
        write: false,
    };
    pub const W: Permissions = Permissions {
        read: false,
        write: true,
    };
    pub const RW: Permissions = Permissions {
        read: true,
        write: true,
    };

    pub fn is_empty(self) -> bool {
        !self.read && !self.write
    }

    pub fn contains(self, p: Permission) -> bool {
        match p {
            Permission::Read => self.read,
            Permission::Write => self.write,
        }
    }

    pub fn is_subset(self, other: Permissions) -> bool {
        (!self.read || other.read) && (!self.write || other.write)
    }

    /// Parses a request string over {R, W, S, C}. Searching (S) and comparing
    /// (C) do not mutate data and are granted by R.
    pub fn from_request(s: &str) -> Result<Permissions, DirectoryError> {
        let mut out = Permissions::NONE;
        for c in s.chars() {
            match c {
                'R' | 'S' | 'C' => out.read = true,
                'W' => out.write = true,
                _ => return Err(DirectoryError::UnknownPermission(s.to_owned())),
            }
        }
        Ok(out)
    }

    pub fn all_nonempty() -> [Permissions; 3] {
        [Permissions::R, Permissions::W, Permissions::RW]
    }
}

impl FromStr for Permissions {
    type Err = DirectoryError;

    /// Strict form used by fixtures: `R`, `W`, `RW` or `-` for explicit deny.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "R" => Ok(Permissions::R),
            "W" => Ok(Permissions::W),
            "RW" => Ok(Permissions::RW),
            "-" => Ok(Permissions::NONE),
            other => Err(DirectoryError::UnknownPermission(other.to_owned())),
        }
    }
}

impl fmt::Display for Permissions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.read, self.write) {
            (true, true) => f.write_str("RW"),
            (true, false) => f.write_str("R"),
            (false, true) => f.write_str("W"),
            (false, false) => f.write_str("-"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DacEntry {
    pub controller: ControllerId,
    pub collection: String,
    pub permissions: Permissions,
}

impl DacEntry {
    pub fn new(controller: impl Into<ControllerId>, collection: &str, permissions: Permissions) -> Self {
        DacEntry {
            controller: controller.into(),
            collection: collection.to_owned(),
            permissions,
        }
    }
}

/// Organisational attributes stored with a controller entry.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntryAttributes {
    pub org: String,
    pub group: String,
    pub domain_name: String,
}

#[derive(Debug, Clone)]
pub struct DirectoryEntry {
    pub credential: ControllerCredential,
    pub attributes: EntryAttributes,
    pub acl: BTreeMap<String, Permissions>,
}

#[derive(Debug, Default)]
struct Inner {
    entries: BTreeMap<ControllerId, DirectoryEntry>,
    names: BTreeMap<String, ControllerId>,
}

#[derive(Debug, Default)]
pub struct Directory {
    inner: RwLock<Inner>,
}

impl Directory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_controller(
        &self,
        credential: ControllerCredential,
        acl: Vec<DacEntry>,
    ) -> Result<(), DirectoryError> {
        self.register_with_attributes(credential, EntryAttributes::default(), acl)
    }

    pub fn register_with_attributes(
        &self,
        credential: ControllerCredential,
        attributes: EntryAttributes,
        acl: Vec<DacEntry>,
    ) -> Result<(), DirectoryError> {
        let mut inner = self.inner.write().expect("directory poisoned");
        if inner.names.contains_key(&credential.controller_name)
            || inner.entries.contains_key(&credential.controller_id)
        {
            return Err(DirectoryError::DuplicateName(credential.controller_name));
        }
        let mut table = BTreeMap::new();
        for entry in acl {
            if entry.controller != credential.controller_id {
                return Err(DirectoryError::UnknownController(entry.controller.to_string()));
            }
            if table.insert(entry.collection.clone(), entry.permissions).is_some() {
                return Err(DirectoryError::DuplicateAclEntry(
                    entry.controller.to_string(),
                    entry.collection,
                ));
            }
        }
        inner
            .names
            .insert(credential.controller_name.clone(), credential.controller_id.clone());
        inner.entries.insert(
            credential.controller_id.clone(),
            DirectoryEntry {
                credential,
                attributes,
                acl: table,
            },
        );
        Ok(())
    }

    /// Replaces the permission set for one (controller, collection) pair.
    pub fn set_permissions(
        &self,
        controller: &ControllerId,
        collection: &str,
        permissions: Permissions,
    ) -> Result<(), DirectoryError> {
        let mut inner = self.inner.write().expect("directory poisoned");
        let entry = inner
            .entries
            .get_mut(controller)
            .ok_or_else(|| DirectoryError::UnknownController(controller.to_string()))?;
        entry.acl.insert(collection.to_owned(), permissions);
        Ok(())
    }

    /// Removes the (controller, collection) entry, falling back to default deny.
    pub fn revoke(&self, controller: &ControllerId, collection: &str) -> bool {
        let mut inner = self.inner.write().expect("directory poisoned");
        inner
            .entries
            .get_mut(controller)
            .and_then(|e| e.acl.remove(collection))
            .is_some()
    }

    pub fn dac_lookup(&self, controller: &ControllerId, collection: &str) -> Permissions {
        let inner = self.inner.read().expect("directory poisoned");
        inner
            .entries
            .get(controller)
            .and_then(|e| e.acl.get(collection).copied())
            .unwrap_or(Permissions::NONE)
    }

    pub fn check_request(
        &self,
        controller: &ControllerId,
        collection: &str,
        requested: Permissions,
    ) -> Result<bool, DirectoryError> {
        if requested.is_empty() {
            return Err(DirectoryError::EmptyRequest);
        }
        Ok(requested.is_subset(self.dac_lookup(controller, collection)))
    }

    pub fn credential(&self, controller: &ControllerId) -> Option<ControllerCredential> {
        let inner = self.inner.read().expect("directory poisoned");
        inner.entries.get(controller).map(|e| e.credential.clone())
    }

    pub fn entry(&self, controller: &ControllerId) -> Option<DirectoryEntry> {
        let inner = self.inner.read().expect("directory poisoned");
        inner.entries.get(controller).cloned()
    }

    pub fn controllers(&self) -> Vec<ControllerId> {
        let inner = self.inner.read().expect("directory poisoned");
        inner.entries.keys().cloned().collect()
    }

    /// All (controller, collection, permissions) rows in key order.
    pub fn dac_table(&self) -> Vec<DacEntry> {
        let inner = self.inner.read().expect("directory poisoned");
        inner
            .entries
            .iter()
            .flat_map(|(id, e)| {
                e.acl.iter().map(move |(col, p)| DacEntry {
                    controller: id.clone(),
                    collection: col.clone(),
                    permissions: *p,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{CryptoSuite, SeededRng};
    use proptest::prelude::*;

    fn cred(name: &str) -> ControllerCredential {
        ControllerCredential::new(
            name.into(),
            name,
            "pw",
            &CryptoSuite::default(),
            &SeededRng::from_seed(4),
        )
        .unwrap()
    }

    fn directory() -> Directory {
        let dir = Directory::new();
        let cols = ["clinic", "school", "children", "USER"];
        dir.register_controller(
            cred("portal"),
            cols.iter().map(|c| DacEntry::new("portal", c, Permissions::RW)).collect(),
        )
        .unwrap();
        dir.register_controller(
            cred("analysis_services"),
            vec![
                DacEntry::new("analysis_services", "secured_view", Permissions::R),
                DacEntry::new("analysis_services", "statistics", Permissions::R),
            ],
        )
        .unwrap();
        dir.register_controller(
            cred("analysis_backend"),
            vec![DacEntry::new("analysis_backend", "secured_view", Permissions::R)],
        )
        .unwrap();
        dir
    }

    #[test]
    fn lookups() {
        let dir = directory();
        assert_eq!(dir.dac_lookup(&"portal".into(), "clinic"), Permissions::RW);
        assert_eq!(dir.dac_lookup(&"portal".into(), "children"), Permissions::RW);
        assert_eq!(dir.dac_lookup(&"mobile".into(), "original_mongo"), Permissions::NONE);
        assert_eq!(dir.dac_lookup(&"analysis_backend".into(), "secured_view"), Permissions::R);
        assert_eq!(dir.dac_lookup(&"analysis_services".into(), "statistics"), Permissions::R);
    }

    #[test]
    fn duplicate_name() {
        let dir = directory();
        assert_eq!(
            dir.register_controller(cred("portal"), vec![]),
            Err(DirectoryError::DuplicateName("portal".into()))
        );
    }

    #[test]
    fn duplicate_acl_rows_rejected() {
        let dir = Directory::new();
        let acl = vec![
            DacEntry::new("x", "clinic", Permissions::R),
            DacEntry::new("x", "clinic", Permissions::W),
        ];
        assert!(matches!(
            dir.register_controller(cred("x"), acl),
            Err(DirectoryError::DuplicateAclEntry(..))
        ));
    }

    #[test]
    fn check_request_semantics() {
        let dir = directory();
        assert_eq!(dir.check_request(&"portal".into(), "school", Permissions::W), Ok(true));
        assert_eq!(
            dir.check_request(&"analysis_services".into(), "clinic", Permissions::W),
            Ok(false)
        );
        assert_eq!(
            dir.check_request(&"portal".into(), "clinic", Permissions::NONE),
            Err(DirectoryError::EmptyRequest)
        );
    }

    #[test]
    fn explicit_deny_and_revoke() {
        let dir = directory();
        dir.set_permissions(&"portal".into(), "clinic", Permissions::NONE).unwrap();
        assert_eq!(dir.check_request(&"portal".into(), "clinic", Permissions::R), Ok(false));
        assert!(dir.revoke(&"portal".into(), "school"));
        assert_eq!(dir.dac_lookup(&"portal".into(), "school"), Permissions::NONE);
        assert!(!dir.revoke(&"portal".into(), "school"));
    }

    #[test]
    fn permission_strings() {
        assert_eq!("RW".parse::<Permissions>().unwrap(), Permissions::RW);
        assert!("RX".parse::<Permissions>().is_err());
        assert!("WR".parse::<Permissions>().is_err());
        assert_eq!(Permissions::from_request("SC").unwrap(), Permissions::R);
        assert_eq!(Permissions::from_request("WS").unwrap(), Permissions::RW);
        assert!(Permissions::from_request("X").is_err());
    }

    fn perms() -> impl Strategy<Value = Permissions> {
        (any::<bool>(), any::<bool>()).prop_map(|(read, write)| Permissions { read, write })
    }

    proptest! {
        #[test]
        fn default_deny(controller in "[a-z]{1,8}", collection in "[a-z]{1,8}", req in perms()) {
            prop_assume!(!req.is_empty());
            let dir = directory();
            let id = ControllerId::new(format!("unregistered-{controller}")).unwrap();
            prop_assert_eq!(dir.check_request(&id, &collection, req), Ok(false));
        }

        #[test]
        fn subset_semantics(grant in perms(), req in perms()) {
            prop_assume!(!req.is_empty());
            let dir = Directory::new();
            dir.register_controller(cred("c"), vec![DacEntry::new("c", "col", grant)]).unwrap();
            let id: ControllerId = "c".into();
            let got = dir.check_request(&id, "col", req).unwrap();
            prop_assert_eq!(got, req.is_subset(grant));
            if dir.check_request(&id, "col", Permissions::RW).unwrap() {
                prop_assert!(dir.check_request(&id, "col", Permissions::R).unwrap());
            }
        }
    }
}
