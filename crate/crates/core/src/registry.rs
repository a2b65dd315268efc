//! End-user and organisation registry: the `USER` collection the
//! authentication and authorisation modules consult.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::RwLock;

use thiserror::Error;

use crate::model::{OrgId, Role, UserCredential, UserId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("user `{0}` already registered")]
    DuplicateUser(String),
    #[error("username `{0}` already taken")]
    DuplicateUsername(String),
    #[error("organisation `{0}` already registered")]
    DuplicateOrg(String),
    #[error("unknown organisation `{0}`")]
    UnknownOrg(String),
    #[error("organisation `{0}` needs at least one administrative role")]
    EmptyAdminRoles(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrgRecord {
    pub org_id: OrgId,
    pub admin_roles: BTreeSet<Role>,
}

impl OrgRecord {
    pub fn new(org_id: OrgId, admin_roles: impl IntoIterator<Item = Role>) -> Self {
        OrgRecord {
            org_id,
            admin_roles: admin_roles.into_iter().collect(),
        }
    }

    /// An organisation with its kind's default administrative roles.
    pub fn with_default_admins(org_id: OrgId) -> Self {
        let roles = org_id.kind().default_admin_roles();
        Self::new(org_id, roles)
    }
}

/// Authorisation-relevant view of a user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserRecord {
    pub user_id: UserId,
    pub roles: Vec<Role>,
    pub org_id: OrgId,
    pub supervisor_id: Option<UserId>,
    pub group_id: Option<String>,
}

#[derive(Debug, Clone)]
struct Account {
    credential: UserCredential,
    supervisor_id: Option<UserId>,
    group_id: Option<String>,
}

#[derive(Debug, Default)]
struct Inner {
    users: BTreeMap<UserId, Account>,
    usernames: BTreeMap<String, UserId>,
    orgs: BTreeMap<String, OrgRecord>,
}

/// Concurrent reads, serialised writes.
#[derive(Debug, Default)]
pub struct UserRegistry {
    inner: RwLock<Inner>,
}

impl UserRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_org(&self, record: OrgRecord) -> Result<(), RegistryError> {
        let mut inner = self.inner.write().expect("registry poisoned");
        let key = record.org_id.id().to_owned();
        if inner.orgs.contains_key(&key) {
            return Err(RegistryError::DuplicateOrg(key));
        }
        if record.org_id.kind() != crate::model::OrgKind::System && record.admin_roles.is_empty()
        {
            return Err(RegistryError::EmptyAdminRoles(key));
        }
        inner.orgs.insert(key, record);
        Ok(())
    }

    pub fn add_user(
        &self,
        credential: UserCredential,
        supervisor_id: Option<UserId>,
        group_id: Option<String>,
    ) -> Result<(), RegistryError> {
        let mut inner = self.inner.write().expect("registry poisoned");
        match inner.orgs.get(credential.org_id.id()) {
            Some(rec) if rec.org_id == credential.org_id => {}
            _ => return Err(RegistryError::UnknownOrg(credential.org_id.id().to_owned())),
        }
        if inner.users.contains_key(&credential.user_id) {
            return Err(RegistryError::DuplicateUser(credential.user_id.to_string()));
        }
        if inner.usernames.contains_key(&credential.username) {
            return Err(RegistryError::DuplicateUsername(credential.username));
        }
        inner
            .usernames
            .insert(credential.username.clone(), credential.user_id.clone());
        inner.users.insert(
            credential.user_id.clone(),
            Account {
                credential,
                supervisor_id,
                group_id,
            },
        );
        Ok(())
    }

    pub fn remove_user(&self, user_id: &UserId) -> bool {
        let mut inner = self.inner.write().expect("registry poisoned");
        match inner.users.remove(user_id) {
            Some(acct) => {
                inner.usernames.remove(&acct.credential.username);
                true
            }
            None => false,
        }
    }

    pub fn credential_by_username(&self, username: &str) -> Option<UserCredential> {
        let inner = self.inner.read().expect("registry poisoned");
        let id = inner.usernames.get(username)?;
        inner.users.get(id).map(|a| a.credential.clone())
    }

    pub fn credential(&self, user_id: &UserId) -> Option<UserCredential> {
        let inner = self.inner.read().expect("registry poisoned");
        inner.users.get(user_id).map(|a| a.credential.clone())
    }

    pub fn user(&self, user_id: &UserId) -> Option<UserRecord> {
        let inner = self.inner.read().expect("registry poisoned");
        inner.users.get(user_id).map(|a| UserRecord {
            user_id: a.credential.user_id.clone(),
            roles: a.credential.roles.clone(),
            org_id: a.credential.org_id.clone(),
            supervisor_id: a.supervisor_id.clone(),
            group_id: a.group_id.clone(),
        })
    }

    pub fn org(&self, org_id: &OrgId) -> Option<OrgRecord> {
        let inner = self.inner.read().expect("registry poisoned");
        inner
            .orgs
            .get(org_id.id())
            .filter(|r| r.org_id == *org_id)
            .cloned()
    }

    pub fn org_by_name(&self, id: &str) -> Option<OrgRecord> {
        let inner = self.inner.read().expect("registry poisoned");
        inner.orgs.get(id).cloned()
    }

    pub fn user_ids(&self) -> Vec<UserId> {
        let inner = self.inner.read().expect("registry poisoned");
        inner.users.keys().cloned().collect()
    }

    pub fn orgs(&self) -> Vec<OrgRecord> {
        let inner = self.inner.read().expect("registry poisoned");
        inner.orgs.values().cloned().collect()
    }
}
