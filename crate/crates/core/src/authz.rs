//! Collection-based user authorisation.
//!
//! A user `u` may access owner `v`'s data iff
//! (C1) some role of `u` is an administrative role of `v`'s organisation, and
//! (C2) `u` and `v` belong to the same organisation.
//!
//! [`authorize_user_permission`] keeps the published procedure's shape (C1 by
//! nested scan with early exit, then C2), but only answers `false` for C1 once
//! every role has been scanned. [`algorithm1_literal`] is the procedure exactly
//! as printed, kept so its divergences can be pinned in tests. [`oracle`] is an
//! independent set-predicate evaluation used for equivalence testing.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::model::{OrgId, Role, UserId};
use crate::registry::UserRegistry;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthzError {
    #[error("unknown user `{0}`")]
    UnknownUser(UserId),
    #[error("unknown organisation `{0}`")]
    UnknownOrg(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Allow,
    /// C1 failed: no role of the requester administers the owner's organisation.
    DenyStewardship,
    /// C2 failed: requester and owner are in different organisations.
    DenyMembership,
}

impl Verdict {
    pub fn allowed(self) -> bool {
        self == Verdict::Allow
    }

    pub fn describe(self) -> &'static str {
        match self {
            Verdict::Allow => "ALLOW",
            Verdict::DenyStewardship => "DENY (legal stewardship)",
            Verdict::DenyMembership => "DENY (solid membership)",
        }
    }
}

/// Organisation of `user_id` as recorded in the `USER` collection.
pub fn find_org_of_user(registry: &UserRegistry, user_id: &UserId) -> Result<OrgId, AuthzError> {
    registry
        .user(user_id)
        .map(|u| u.org_id)
        .ok_or_else(|| AuthzError::UnknownUser(user_id.clone()))
}

pub fn admin_roles_of_org(
    registry: &UserRegistry,
    org_id: &OrgId,
) -> Result<BTreeSet<Role>, AuthzError> {
    registry
        .org(org_id)
        .map(|o| o.admin_roles)
        .ok_or_else(|| AuthzError::UnknownOrg(org_id.id().to_owned()))
}

/// Evaluates C1 then C2 and reports which condition failed.
pub fn evaluate(
    registry: &UserRegistry,
    roles_u: &[Role],
    org_u: &OrgId,
    id_v: &UserId,
) -> Result<Verdict, AuthzError> {
    let org_v = find_org_of_user(registry, id_v)?;
    let admin_roles_v: Vec<Role> = admin_roles_of_org(registry, &org_v)?.into_iter().collect();

    let mut is_right_role = false;
    'outer: for role_i in roles_u {
        for role_j in &admin_roles_v {
            if role_i == role_j {
                is_right_role = true;
                break 'outer;
            }
        }
    }
    if !is_right_role {
        return Ok(Verdict::DenyStewardship);
    }

    if *org_u != org_v {
        return Ok(Verdict::DenyMembership);
    }
    Ok(Verdict::Allow)
}

pub fn authorize_user_permission(
    registry: &UserRegistry,
    roles_u: &[Role],
    org_u: &OrgId,
    id_v: &UserId,
) -> Result<bool, AuthzError> {
    evaluate(registry, roles_u, org_u, id_v).map(Verdict::allowed)
}

/// Line-for-line transcription of the published procedure, including the
/// `return false` after scanning only the first role and the write-only
/// `is_same_org` flag. Diverges from the definitions when the matching role is
/// not first in `roles_u`, and when `roles_u` is empty.
#[allow(unused_assignments, clippy::never_loop)]
pub fn algorithm1_literal(
    registry: &UserRegistry,
    roles_u: &[Role],
    org_u: &OrgId,
    id_v: &UserId,
) -> Result<bool, AuthzError> {
    let org_v = find_org_of_user(registry, id_v)?;
    let admin_roles_v: Vec<Role> = admin_roles_of_org(registry, &org_v)?.into_iter().collect();

    let mut is_right_role = false;
    let mut is_same_org = false;

    for role_i in roles_u {
        for role_j in &admin_roles_v {
            if role_i == role_j {
                is_right_role = true;
                break;
            }
        }
        if is_right_role {
            break;
        } else {
            return Ok(false);
        }
    }

    if *org_u != org_v {
        is_same_org = false;
        return Ok(false);
    }
    let _ = is_same_org;
    Ok(true)
}

pub mod oracle {
    //! Direct evaluation of the two conditions as set predicates.

    use super::*;

    pub fn legal_stewardship(roles_u: &[Role], admin_roles_v: &BTreeSet<Role>) -> bool {
        let held: BTreeSet<Role> = roles_u.iter().copied().collect();
        !held.is_disjoint(admin_roles_v)
    }

    pub fn solid_membership(org_u: &OrgId, org_v: &OrgId) -> bool {
        org_u == org_v
    }

    pub fn oracle_authorize(
        registry: &UserRegistry,
        roles_u: &[Role],
        org_u: &OrgId,
        id_v: &UserId,
    ) -> Result<bool, AuthzError> {
        let record = registry
            .user(id_v)
            .ok_or_else(|| AuthzError::UnknownUser(id_v.clone()))?;
        let org = registry
            .org(&record.org_id)
            .ok_or_else(|| AuthzError::UnknownOrg(record.org_id.id().to_owned()))?;
        let c1 = legal_stewardship(roles_u, &org.admin_roles);
        let c2 = solid_membership(org_u, &record.org_id);
        Ok(c1 & c2)
    }
}
