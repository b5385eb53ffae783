//! The two safety conditions every DAP must satisfy within one configuration.
//!
//! C1: a get that starts after a put completed returns a tag at least as
//! high. C2: every tag a get returns was put by an operation invoked before
//! the get responded, or is the initial tag; a non-⊥ value must match what
//! was put under that tag.

use std::collections::BTreeMap;

use crate::history::{DapOp, DapRecord};
use crate::types::{ObjectId, ScopeId, Tag, ValueDigest};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Property1Report {
    pub c1: Vec<String>,
    pub c2: Vec<String>,
    /// Completed gets that returned `⊥`.
    pub bottom_returns: usize,
    pub checked_gets: usize,
}

type Key = (ScopeId, ObjectId, u64);

pub fn check_property1(daps: &[DapRecord], initial: &ValueDigest) -> Property1Report {
    let mut groups: BTreeMap<Key, Vec<&DapRecord>> = BTreeMap::new();
    for d in daps {
        groups.entry((d.scope.clone(), d.object.clone(), d.config)).or_default().push(d);
    }
    let mut report = Property1Report::default();
    for ((scope, object, config), recs) in groups {
        let where_ = format!("{scope}/{object} in configuration {config}");
        // Completed puts by response step, with running max tag.
        let mut puts: Vec<(u64, Tag)> = recs
            .iter()
            .filter(|d| d.kind == DapOp::PutData)
            .filter_map(|d| Some((d.response?.step, d.tag?)))
            .collect();
        puts.sort();
        let mut prefix: Vec<(u64, Tag)> = Vec::with_capacity(puts.len());
        for &(resp, tag) in &puts {
            let max = prefix.last().map_or(tag, |&(_, t)| t.max(tag));
            prefix.push((resp, max));
        }
        let mut by_tag: BTreeMap<Tag, Vec<&DapRecord>> = BTreeMap::new();
        for d in recs.iter().filter(|d| d.kind == DapOp::PutData) {
            if let Some(t) = d.tag {
                by_tag.entry(t).or_default().push(d);
            }
        }
        for get in recs.iter().filter(|d| d.kind != DapOp::PutData) {
            let (Some(resp), Some(tag)) = (get.response, get.tag) else { continue };
            report.checked_gets += 1;
            if get.value.as_ref().is_some_and(ValueDigest::is_bottom) {
                report.bottom_returns += 1;
            }
            // C1 against the highest tag put before this get started.
            let n = prefix.partition_point(|(r, _)| *r < get.invoke.step);
            if n > 0 {
                let (_, max) = prefix[n - 1];
                if tag < max {
                    report.c1.push(format!(
                        "{where_}: {:?} by {} (op {}) returned {tag} after a put of {max} completed",
                        get.kind, get.client, get.op
                    ));
                }
            }
            // C2.
            let value = get.value.as_ref().filter(|v| !v.is_bottom());
            if tag == Tag::INITIAL {
                if let Some(v) = value {
                    if v != initial {
                        report.c2.push(format!("{where_}: op {} returned the initial tag with another value", get.op));
                    }
                }
                continue;
            }
            let candidates: Vec<&&DapRecord> =
                by_tag.get(&tag).into_iter().flatten().filter(|p| p.invoke.step < resp.step).collect();
            if candidates.is_empty() {
                report.c2.push(format!("{where_}: op {} returned {tag}, never put before it responded", get.op));
            } else if let Some(v) = value {
                if !candidates.iter().any(|p| p.value.as_ref() == Some(v)) {
                    report.c2.push(format!("{where_}: op {} returned {tag} with a value that was not put", get.op));
                }
            }
        }
    }
    report
}
