//! Shared domain types: roles, organisations, identifiers and credentials.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::crypto::{CryptoError, CryptoSuite, PasswordHash, SeededRng, SymmetricKey};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("unknown role `{0}`")]
    UnknownRole(String),
    #[error("unknown organisation kind `{0}`")]
    UnknownOrgKind(String),
    #[error("a user needs at least one role")]
    EmptyRoles,
    #[error("identifier must not be empty")]
    EmptyIdentifier,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// The closed role taxonomy: school, clinic and admin classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    SchoolAdmin,
    Teacher,
    Student,
    ClinicAdmin,
    Clinician,
    Patient,
    GlobalAdmin,
    PolicyMaker,
}

impl Role {
    pub const ALL: [Role; 8] = [
        Role::SchoolAdmin,
        Role::Teacher,
        Role::Student,
        Role::ClinicAdmin,
        Role::Clinician,
        Role::Patient,
        Role::GlobalAdmin,
        Role::PolicyMaker,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::SchoolAdmin => "school_admin",
            Role::Teacher => "teacher",
            Role::Student => "student",
            Role::ClinicAdmin => "clinic_admin",
            Role::Clinician => "clinician",
            Role::Patient => "patient",
            Role::GlobalAdmin => "global_admin",
            Role::PolicyMaker => "policy_maker",
        }
    }
}

impl FromStr for Role {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| ModelError::UnknownRole(s.to_owned()))
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parses a comma-separated role list, rejecting unknown names.
pub fn parse_roles(list: &str) -> Result<Vec<Role>, ModelError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(Role::from_str)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OrgKind {
    School,
    Clinic,
    System,
}

impl OrgKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OrgKind::School => "school",
            OrgKind::Clinic => "clinic",
            OrgKind::System => "system",
        }
    }

    /// Administrative roles an organisation of this kind grants by default.
    pub fn default_admin_roles(self) -> Vec<Role> {
        match self {
            OrgKind::School => vec![Role::SchoolAdmin, Role::Teacher],
            OrgKind::Clinic => vec![Role::ClinicAdmin, Role::Clinician],
            OrgKind::System => vec![Role::GlobalAdmin],
        }
    }
}

impl FromStr for OrgKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "school" => Ok(OrgKind::School),
            "clinic" => Ok(OrgKind::Clinic),
            "system" => Ok(OrgKind::System),
            other => Err(ModelError::UnknownOrgKind(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OrgId {
    id: String,
    kind: OrgKind,
}

impl OrgId {
    pub fn new(id: impl Into<String>, kind: OrgKind) -> Result<Self, ModelError> {
        let id = id.into();
        if id.is_empty() {
            return Err(ModelError::EmptyIdentifier);
        }
        Ok(OrgId { id, kind })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> OrgKind {
        self.kind
    }
}

impl fmt::Display for OrgId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)
    }
}

macro_rules! identifier {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Result<Self, ModelError> {
                let id = id.into();
                if id.is_empty() {
                    return Err(ModelError::EmptyIdentifier);
                }
                Ok($name(id))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            /// Panics on an empty string; intended for literals.
            fn from(s: &str) -> Self {
                $name::new(s).expect("non-empty identifier")
            }
        }
    };
}

identifier!(
    /// End-user identity; also the participant's global ID in stored documents.
    UserId
);
identifier!(ControllerId);
identifier!(
    /// A database service. Each service fronts the collection of the same name.
    ServiceId
);

#[derive(Debug, Clone)]
pub struct UserCredential {
    pub user_id: UserId,
    pub username: String,
    pub password_hash: PasswordHash,
    pub roles: Vec<Role>,
    pub org_id: OrgId,
}

impl UserCredential {
    pub fn new(
        user_id: UserId,
        username: impl Into<String>,
        password: &str,
        roles: Vec<Role>,
        org_id: OrgId,
        rng: &SeededRng,
    ) -> Result<Self, ModelError> {
        let username = username.into();
        if username.is_empty() {
            return Err(ModelError::EmptyIdentifier);
        }
        if roles.is_empty() {
            return Err(ModelError::EmptyRoles);
        }
        Ok(UserCredential {
            user_id,
            username,
            password_hash: PasswordHash::new(password, rng)?,
            roles,
            org_id,
        })
    }
}

/// Controller identity plus the secret key derived from its password. The
/// plaintext password is not retained.
#[derive(Debug, Clone)]
pub struct ControllerCredential {
    pub controller_id: ControllerId,
    pub controller_name: String,
    pub password_hash: PasswordHash,
    pub secret_key: SymmetricKey,
}

impl ControllerCredential {
    pub fn new(
        controller_id: ControllerId,
        controller_name: impl Into<String>,
        password: &str,
        suite: &CryptoSuite,
        rng: &SeededRng,
    ) -> Result<Self, ModelError> {
        let controller_name = controller_name.into();
        if controller_name.is_empty() {
            return Err(ModelError::EmptyIdentifier);
        }
        Ok(ControllerCredential {
            controller_id,
            controller_name,
            password_hash: PasswordHash::new(password, rng)?,
            secret_key: suite.key_derive(password)?,
        })
    }
}

/// Switches for each defence. Everything is on by default; the simulator turns
/// individual defences off only for control runs that check its detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Defenses {
    pub ticket_expiry: bool,
    pub timestamp_reuse: bool,
    pub record_sequence: bool,
    pub record_encryption: bool,
    pub dac: bool,
    pub user_authorization: bool,
}

impl Default for Defenses {
    fn default() -> Self {
        Defenses {
            ticket_expiry: true,
            timestamp_reuse: true,
            record_sequence: true,
            record_encryption: true,
            dac: true,
            user_authorization: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn role_registry_is_closed() {
        for role in Role::ALL {
            assert_eq!(role.as_str().parse::<Role>().unwrap(), role);
        }
        assert_eq!(
            "nurse".parse::<Role>(),
            Err(ModelError::UnknownRole("nurse".into()))
        );
        assert!(parse_roles("teacher, clinician").is_ok());
        assert!(parse_roles("teacher,janitor").is_err());
    }

    #[test]
    fn credential_invariants() {
        let rng = SeededRng::from_seed(0);
        let org = OrgId::new("clinic-x", OrgKind::Clinic).unwrap();
        let err = UserCredential::new("u1".into(), "alice", "pw", vec![], org.clone(), &rng);
        assert!(matches!(err, Err(ModelError::EmptyRoles)));
        let cred =
            UserCredential::new("u1".into(), "alice", "pw", vec![Role::Clinician], org, &rng)
                .unwrap();
        assert!(cred.password_hash.matches("pw"));
        assert_eq!(cred.password_hash.to_bytes().len(), 48);
    }

    #[test]
    fn controller_key_is_recomputable() {
        let rng = SeededRng::from_seed(0);
        let suite = CryptoSuite::default();
        let cred =
            ControllerCredential::new("portal".into(), "portal", "portal-pw", &suite, &rng)
                .unwrap();
        assert_eq!(cred.secret_key, suite.key_derive("portal-pw").unwrap());
    }
}
