//! Line-oriented text fixtures for users, the directory, collections and the
//! QI registry. Blank lines and `#` comments are ignored; fields are separated
//! by whitespace, options are `key=value`.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::directory::Permissions;
use crate::model::{parse_roles, OrgKind, Role};
use crate::store::{Document, QiRegistry, Tier};

pub const DEFAULT_DIRECTORY: &str = include_str!("../fixtures/directory.txt");
pub const DEFAULT_USERS: &str = include_str!("../fixtures/users.txt");
pub const DEFAULT_QI: &str = include_str!("../fixtures/qi.txt");
pub const DEFAULT_COLLECTIONS: [&str; 6] = [
    include_str!("../fixtures/clinic.txt"),
    include_str!("../fixtures/school.txt"),
    include_str!("../fixtures/children.txt"),
    include_str!("../fixtures/user_collection.txt"),
    include_str!("../fixtures/activity.txt"),
    include_str!("../fixtures/statistics.txt"),
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{source_name}:{line}: {message}")]
pub struct ParseError {
    pub source_name: String,
    pub line: usize,
    pub message: String,
}

struct Lines<'a> {
    source_name: &'a str,
}

impl Lines<'_> {
    fn err(&self, line: usize, message: impl Into<String>) -> ParseError {
        ParseError {
            source_name: self.source_name.to_owned(),
            line,
            message: message.into(),
        }
    }
}

/// Yields (1-based line number, tokens) for every non-empty, non-comment line.
fn tokens(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then(|| (i + 1, line.split_whitespace().collect()))
    })
}

fn options<'a>(
    ctx: &Lines<'_>,
    line: usize,
    tokens: &[&'a str],
    allowed: &[&str],
) -> Result<BTreeMap<&'a str, &'a str>, ParseError> {
    let mut out = BTreeMap::new();
    for t in tokens {
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| ctx.err(line, format!("expected key=value, found `{t}`")))?;
        if !allowed.contains(&k) {
            return Err(ctx.err(line, format!("unknown option `{k}`")));
        }
        if out.insert(k, v).is_some() {
            return Err(ctx.err(line, format!("option `{k}` given twice")));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControllerRow {
    pub name: String,
    pub password: String,
    pub org: String,
    pub group: String,
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DacRow {
    pub controller: String,
    pub collection: String,
    pub permissions: Permissions,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DirectoryFixture {
    pub controllers: Vec<ControllerRow>,
    pub dac: Vec<DacRow>,
}

pub fn parse_directory(source_name: &str, text: &str) -> Result<DirectoryFixture, ParseError> {
    let ctx = Lines { source_name };
    let mut out = DirectoryFixture::default();
    for (n, t) in tokens(text) {
        match t.as_slice() {
            ["controller", name, password, rest @ ..] => {
                let opts = options(&ctx, n, rest, &["org", "group", "domain"])?;
                let get = |k| opts.get(k).copied().unwrap_or("").to_owned();
                out.controllers.push(ControllerRow {
                    name: name.to_string(),
                    password: password.to_string(),
                    org: get("org"),
                    group: get("group"),
                    domain: get("domain"),
                });
            }
            ["dac", controller, collection, perms] => {
                let permissions = perms.parse().map_err(|e| ctx.err(n, format!("{e}")))?;
                out.dac.push(DacRow {
                    controller: controller.to_string(),
                    collection: collection.to_string(),
                    permissions,
                });
            }
            _ => return Err(ctx.err(n, "expected `controller ...` or `dac <controller> <collection> <perms>`")),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrgRow {
    pub id: String,
    pub kind: OrgKind,
    pub admin_roles: Option<Vec<Role>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserRow {
    pub id: String,
    pub username: String,
    pub password: String,
    pub roles: Vec<Role>,
    pub org: String,
    pub supervisor: Option<String>,
    pub group: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UsersFixture {
    pub orgs: Vec<OrgRow>,
    pub users: Vec<UserRow>,
}

pub fn parse_users(source_name: &str, text: &str) -> Result<UsersFixture, ParseError> {
    let ctx = Lines { source_name };
    let mut out = UsersFixture::default();
    for (n, t) in tokens(text) {
        match t.as_slice() {
            ["org", id, kind, rest @ ..] => {
                let kind = kind.parse().map_err(|e| ctx.err(n, format!("{e}")))?;
                let opts = options(&ctx, n, rest, &["admins"])?;
                let admin_roles = opts
                    .get("admins")
                    .map(|r| parse_roles(r))
                    .transpose()
                    .map_err(|e| ctx.err(n, format!("{e}")))?;
                out.orgs.push(OrgRow {
                    id: id.to_string(),
                    kind,
                    admin_roles,
                });
            }
            ["user", id, username, password, roles, org, rest @ ..] => {
                let roles = parse_roles(roles).map_err(|e| ctx.err(n, format!("{e}")))?;
                let opts = options(&ctx, n, rest, &["supervisor", "group"])?;
                out.users.push(UserRow {
                    id: id.to_string(),
                    username: username.to_string(),
                    password: password.to_string(),
                    roles,
                    org: org.to_string(),
                    supervisor: opts.get("supervisor").map(|s| s.to_string()),
                    group: opts.get("group").map(|s| s.to_string()),
                });
            }
            _ => return Err(ctx.err(n, "expected `org ...` or `user ...`")),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollectionFixture {
    pub name: String,
    pub tier: Tier,
    pub server_id: String,
    pub documents: Vec<Document>,
}

pub fn parse_collection(source_name: &str, text: &str) -> Result<CollectionFixture, ParseError> {
    let ctx = Lines { source_name };
    let mut header: Option<(String, Tier, String)> = None;
    let mut documents = Vec::new();
    for (n, t) in tokens(text) {
        match t.as_slice() {
            ["collection", name, tier, server] if header.is_none() => {
                let tier = tier.parse().map_err(|e| ctx.err(n, format!("{e}")))?;
                header = Some((name.to_string(), tier, server.to_string()));
            }
            ["doc", doc_id, global_id, fields @ ..] if header.is_some() => {
                let mut map = BTreeMap::new();
                for f in fields {
                    let (k, v) = f
                        .split_once('=')
                        .ok_or_else(|| ctx.err(n, format!("expected field=value, found `{f}`")))?;
                    if map.insert(k.to_owned(), v.to_owned()).is_some() {
                        return Err(ctx.err(n, format!("field `{k}` given twice")));
                    }
                }
                documents.push(Document {
                    doc_id: doc_id.to_string(),
                    global_id: global_id.to_string(),
                    fields: map,
                });
            }
            _ => {
                return Err(ctx.err(
                    n,
                    "expected one `collection <name> <tier> <server>` line followed by `doc` lines",
                ))
            }
        }
    }
    let (name, tier, server_id) = header.ok_or_else(|| ctx.err(0, "missing collection header"))?;
    Ok(CollectionFixture {
        name,
        tier,
        server_id,
        documents,
    })
}

/// One field name per line.
pub fn parse_qi(source_name: &str, text: &str) -> Result<QiRegistry, ParseError> {
    let ctx = Lines { source_name };
    let mut names = Vec::new();
    for (n, t) in tokens(text) {
        match t.as_slice() {
            [name] => names.push(name.to_string()),
            _ => return Err(ctx.err(n, "expected one field name per line")),
        }
    }
    QiRegistry::new(names).map_err(|e| ctx.err(0, e.to_string()))
}
