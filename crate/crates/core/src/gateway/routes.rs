use std::collections::{BTreeMap, BTreeSet};

use axum::http::Method;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteKind {
    /// Runs the authorization / fairness / forward pipeline.
    Submission,
    /// Forwarded unchanged.
    Passthrough,
    /// Exists upstream but is never exposed through the gateway.
    Blocked,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteRule {
    pub method: Method,
    /// Segments separated by `/`; `{name}` matches exactly one segment.
    pub path_pattern: String,
    pub kind: RouteKind,
    pub required_roles: BTreeSet<String>,
}

impl RouteRule {
    pub fn new(method: Method, path_pattern: &str, kind: RouteKind, roles: &[&str]) -> Self {
        Self {
            method,
            path_pattern: path_pattern.to_string(),
            kind,
            required_roles: roles.iter().map(|r| r.to_string()).collect(),
        }
    }

    fn segments(&self) -> Vec<&str> {
        split(&self.path_pattern)
    }

    /// Returns the placeholder bindings when `path` matches.
    pub fn matches(&self, method: &Method, path: &str) -> Option<BTreeMap<String, String>> {
        if &self.method != method {
            return None;
        }
        let pattern = self.segments();
        let actual = split(path);
        if pattern.len() != actual.len() {
            return None;
        }
        let mut params = BTreeMap::new();
        for (p, a) in pattern.iter().zip(&actual) {
            match placeholder(p) {
                Some(name) if !a.is_empty() => {
                    params.insert(name.to_string(), a.to_string());
                }
                Some(_) => return None,
                None if p == a => {}
                None => return None,
            }
        }
        Some(params)
    }

    pub fn allows(&self, roles: &BTreeSet<String>) -> bool {
        !self.required_roles.is_disjoint(roles)
    }

    fn overlaps(&self, other: &RouteRule) -> bool {
        let (a, b) = (self.segments(), other.segments());
        self.method == other.method
            && a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|(x, y)| x == y || placeholder(x).is_some() || placeholder(y).is_some())
    }
}

fn split(path: &str) -> Vec<&str> {
    path.strip_prefix('/').unwrap_or(path).split('/').collect()
}

fn placeholder(segment: &str) -> Option<&str> {
    segment.strip_prefix('{')?.strip_suffix('}')
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RouteTableError {
    #[error("routes {0} and {1} can match the same request")]
    Ambiguous(String, String),
}

#[derive(Debug, Clone)]
pub struct RouteTable {
    rules: Vec<RouteRule>,
}

impl RouteTable {
    /// Rejects tables in which some request could match two rules.
    pub fn new(rules: Vec<RouteRule>) -> Result<Self, RouteTableError> {
        for (i, a) in rules.iter().enumerate() {
            for b in &rules[i + 1..] {
                if a.overlaps(b) {
                    return Err(RouteTableError::Ambiguous(
                        format!("{} {}", a.method, a.path_pattern),
                        format!("{} {}", b.method, b.path_pattern),
                    ));
                }
            }
        }
        Ok(Self { rules })
    }

    pub fn classify(&self, method: &Method, path: &str) -> Option<(&RouteRule, BTreeMap<String, String>)> {
        self.rules
            .iter()
            .find_map(|r| r.matches(method, path).map(|params| (r, params)))
    }

    pub fn rules(&self) -> &[RouteRule] {
        &self.rules
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mock::MockVendor;
    use crate::plugin::VendorPlugin;

    fn table() -> RouteTable {
        let vendor = MockVendor::new("http://127.0.0.1:1/".parse().unwrap(), "t");
        RouteTable::new(vendor.routes()).unwrap()
    }

    #[test]
    fn classifies_mock_routes() {
        let t = table();
        let (rule, params) = t.classify(&Method::POST, "/jobs/circuit/circuit").unwrap();
        assert_eq!(rule.kind, RouteKind::Submission);
        assert_eq!(params["type"], "circuit");
        let (rule, params) = t.classify(&Method::GET, "/jobs/J-42").unwrap();
        assert_eq!(rule.kind, RouteKind::Passthrough);
        assert_eq!(params["id"], "J-42");
        assert!(t.classify(&Method::DELETE, "/admin/anything").is_none());
        assert!(t.classify(&Method::GET, "/jobs/").is_none());
        assert_eq!(t.classify(&Method::POST, "/fault").unwrap().0.kind, RouteKind::Blocked);
    }

    #[test]
    fn ambiguous_tables_rejected() {
        let rules = vec![
            RouteRule::new(Method::GET, "/jobs/{id}", RouteKind::Passthrough, &["regular"]),
            RouteRule::new(Method::GET, "/jobs/latest", RouteKind::Blocked, &[]),
        ];
        assert!(RouteTable::new(rules).is_err());
        let rules = vec![
            RouteRule::new(Method::GET, "/jobs/{id}", RouteKind::Passthrough, &["regular"]),
            RouteRule::new(Method::POST, "/jobs/{id}", RouteKind::Blocked, &[]),
        ];
        assert!(RouteTable::new(rules).is_ok());
    }
}
