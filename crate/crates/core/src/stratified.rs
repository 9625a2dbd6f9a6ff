//! Stratified evaluation of normal rules: stratification checks and
//! synthesis, the core-safe chase, and the split/merge operations used to
//! compare stratifications.

use std::collections::{BTreeMap, BTreeSet};

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{compute_affection, v_influenced, Analysis, RuleVar};
use crate::chase::{run_chase, ChaseConfig, ChaseError};
use crate::hom::core_of;
use crate::model::{Interpretation, RuleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StratificationKind {
    Quasi,
    Full,
    CoreSafe,
}

/// A sequence of strata, each a list of rule ids in rule-set order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Stratification {
    pub strata: Vec<Vec<String>>,
    pub kind: StratificationKind,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum StratifiedError {
    #[error("unknown rule {0} in stratification")]
    UnknownRule(String),
    #[error("not a valid stratification: {0}")]
    Invalid(String),
    #[error("invalid transformation: {0}")]
    InvalidTransformation(String),
    #[error(transparent)]
    Chase(#[from] ChaseError),
}

type Strata = Vec<BTreeSet<usize>>;

fn to_indices(analysis: &Analysis, s: &Stratification) -> Result<Strata, StratifiedError> {
    s.strata
        .iter()
        .map(|stratum| {
            stratum
                .iter()
                .map(|id| {
                    analysis
                        .rules
                        .index_of(id)
                        .ok_or_else(|| StratifiedError::UnknownRule(id.clone()))
                })
                .collect()
        })
        .collect()
}

fn to_ids(analysis: &Analysis, strata: &Strata, kind: StratificationKind) -> Stratification {
    Stratification {
        strata: strata
            .iter()
            .map(|s| s.iter().map(|&i| analysis.rules.rules()[i].id().to_string()).collect())
            .collect(),
        kind,
    }
}

/// True if every rule of `members` is core-safe with respect to the rule
/// subset `members` alone.
pub fn subset_core_safe(analysis: &Analysis, members: &BTreeSet<usize>) -> bool {
    let order: Vec<usize> = members.iter().copied().collect();
    let local: BTreeMap<usize, usize> = order.iter().enumerate().map(|(l, &g)| (g, l)).collect();
    let sub = analysis.rules.subset(&order);
    let affection = compute_affection(&sub);
    let restrained: BTreeSet<RuleVar> = analysis
        .relations
        .restrained_within(members)
        .into_iter()
        .map(|v| RuleVar {
            rule: local[&v.rule],
            name: v.name,
        })
        .collect();
    let bad = v_influenced(&restrained, &affection);
    sub.rules().iter().all(|r| {
        r.body_negative()
            .iter()
            .flat_map(|a| a.variables())
            .all(|x| {
                r.body_positive().iter().any(|a| {
                    a.args.iter().enumerate().any(|(i, t)| {
                        matches!(t, crate::model::Term::Variable(v) if v == x)
                            && !bad.contains(&crate::analysis::Position {
                                predicate: a.predicate.clone(),
                                index: i + 1,
                            })
                    })
                })
            })
    })
}

/// Rule `idx` is core-safe in the whole rule set.
pub fn rule_core_safe(analysis: &Analysis, idx: usize) -> bool {
    analysis.rule_core_safe(idx)
}

/// Every rule is core-safe and there is no negative reliance, so any
/// restricted chase is generating and yields a model.
pub fn restricted_chase_is_sound(analysis: &Analysis) -> bool {
    analysis.relations.negative.is_empty() && (0..analysis.rules.len()).all(|i| analysis.rule_core_safe(i))
}

/// Checks the ordering conditions and, for `CoreSafe`, per-stratum core
/// safety. Returns a description of the first violation.
fn check(analysis: &Analysis, strata: &Strata, kind: StratificationKind) -> Result<(), String> {
    let n = analysis.rules.len();
    let mut level = vec![None; n];
    for (k, s) in strata.iter().enumerate() {
        if s.is_empty() {
            return Err(format!("stratum {} is empty", k + 1));
        }
        for &r in s {
            if level[r].is_some() {
                return Err(format!("rule {} occurs in two strata", analysis.rules.rules()[r].id()));
            }
            level[r] = Some(k);
        }
    }
    let id = |i: usize| analysis.rules.rules()[i].id();
    if let Some(missing) = (0..n).find(|&i| level[i].is_none()) {
        return Err(format!("rule {} is in no stratum", id(missing)));
    }
    let lv = |i: usize| level[i].unwrap();
    let rel = &analysis.relations;
    for &(a, b) in &rel.positive {
        if lv(a) > lv(b) {
            return Err(format!("{} positively relies into {} from a later stratum", id(a), id(b)));
        }
    }
    for &(a, b) in &rel.negative {
        if lv(a) >= lv(b) {
            return Err(format!("{} negatively relies into {} without a later stratum", id(a), id(b)));
        }
    }
    for &(a, b) in rel.restraints.keys() {
        let bad = match kind {
            StratificationKind::Full => lv(a) >= lv(b),
            _ => lv(a) > lv(b),
        };
        if bad {
            return Err(format!("{} restrains {} across the stratum order", id(a), id(b)));
        }
    }
    if kind == StratificationKind::CoreSafe {
        for (k, s) in strata.iter().enumerate() {
            if !subset_core_safe(analysis, s) {
                return Err(format!("stratum {} is not core-safe", k + 1));
            }
        }
    }
    Ok(())
}

/// Validates `s` as a stratification of the analysed rule set, of its kind.
pub fn validate(analysis: &Analysis, s: &Stratification) -> Result<(), StratifiedError> {
    let strata = to_indices(analysis, s)?;
    check(analysis, &strata, s.kind).map_err(StratifiedError::Invalid)
}

/// Strongly connected components of ≺+ ∪ ≺− ∪ ⊐ in a topological order;
/// among ready components the one holding the earliest rule goes first.
fn components(analysis: &Analysis) -> Vec<BTreeSet<usize>> {
    let n = analysis.rules.len();
    let mut g: DiGraph<usize, ()> = DiGraph::new();
    let nodes: Vec<_> = (0..n).map(|i| g.add_node(i)).collect();
    let rel = &analysis.relations;
    for &(a, b) in rel.positive.iter().chain(&rel.negative).chain(rel.restraints.keys()) {
        g.update_edge(nodes[a], nodes[b], ());
    }
    let sccs: Vec<BTreeSet<usize>> = tarjan_scc(&g)
        .into_iter()
        .map(|c| c.into_iter().map(|x| g[x]).collect())
        .collect();
    let mut comp_of = vec![0; n];
    for (c, members) in sccs.iter().enumerate() {
        for &m in members {
            comp_of[m] = c;
        }
    }
    let mut preds: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); sccs.len()];
    for e in g.edge_indices() {
        let (a, b) = g.edge_endpoints(e).unwrap();
        let (ca, cb) = (comp_of[g[a]], comp_of[g[b]]);
        if ca != cb {
            preds[cb].insert(ca);
        }
    }
    let mut done = vec![false; sccs.len()];
    let mut order = Vec::with_capacity(sccs.len());
    while order.len() < sccs.len() {
        let next = (0..sccs.len())
            .filter(|&c| !done[c] && preds[c].iter().all(|&p| done[p]))
            .min_by_key(|&c| sccs[c].iter().next().copied())
            .expect("condensation is acyclic");
        done[next] = true;
        order.push(sccs[next].clone());
    }
    order
}

/// Synthesizes a core-safe stratification, or `None` if none exists.
///
/// Components are merged into the running stratum only when neither side
/// holds a rule touched by a negative reliance and the union stays
/// core-safe, so negatively related rules keep strata of their own.
pub fn find_core_safe_stratification(analysis: &Analysis) -> Option<Stratification> {
    let comps = components(analysis);
    let rel = &analysis.relations;
    for c in &comps {
        if rel.negative.iter().any(|(a, b)| c.contains(a) && c.contains(b)) {
            return None;
        }
        if !subset_core_safe(analysis, c) {
            return None;
        }
    }
    let touched: BTreeSet<usize> = rel.negative.iter().flat_map(|&(a, b)| [a, b]).collect();
    let mut strata: Strata = Vec::new();
    for c in comps {
        if let Some(last) = strata.last_mut() {
            let free = |s: &BTreeSet<usize>| s.iter().all(|r| !touched.contains(r));
            if free(last) && free(&c) {
                let merged: BTreeSet<usize> = last.union(&c).copied().collect();
                if subset_core_safe(analysis, &merged) {
                    *last = merged;
                    continue;
                }
            }
        }
        strata.push(c);
    }
    let kind = StratificationKind::CoreSafe;
    debug_assert_eq!(check(analysis, &strata, kind), Ok(()));
    check(analysis, &strata, kind).ok()?;
    Some(to_ids(analysis, &strata, kind))
}

/// One stratum per component, if that is a full stratification.
pub fn find_full_stratification(analysis: &Analysis) -> Option<Stratification> {
    let strata = components(analysis);
    let kind = StratificationKind::Full;
    check(analysis, &strata, kind).ok()?;
    Some(to_ids(analysis, &strata, kind))
}

/// Replaces stratum `i` (1-based) by `left` followed by `right`.
pub fn split_stratum(
    analysis: &Analysis,
    s: &Stratification,
    i: usize,
    left: &[String],
    right: &[String],
) -> Result<Stratification, StratifiedError> {
    let mut strata = to_indices(analysis, s)?;
    if i == 0 || i > strata.len() {
        return Err(StratifiedError::InvalidTransformation(format!("no stratum {i}")));
    }
    let ids = |xs: &[String]| -> Result<BTreeSet<usize>, StratifiedError> {
        xs.iter()
            .map(|id| analysis.rules.index_of(id).ok_or_else(|| StratifiedError::UnknownRule(id.clone())))
            .collect()
    };
    let (l, r) = (ids(left)?, ids(right)?);
    let union: BTreeSet<usize> = l.union(&r).copied().collect();
    if l.is_empty() || r.is_empty() || !l.is_disjoint(&r) || union != strata[i - 1] {
        return Err(StratifiedError::InvalidTransformation(format!(
            "left and right must partition stratum {i}"
        )));
    }
    strata.splice(i - 1..i, [l, r]);
    check(analysis, &strata, s.kind).map_err(StratifiedError::InvalidTransformation)?;
    Ok(to_ids(analysis, &strata, s.kind))
}

/// Merges strata `i` and `i + 1` (1-based).
pub fn merge_strata(analysis: &Analysis, s: &Stratification, i: usize) -> Result<Stratification, StratifiedError> {
    let mut strata = to_indices(analysis, s)?;
    if i == 0 || i >= strata.len() {
        return Err(StratifiedError::InvalidTransformation(format!("cannot merge stratum {i} with a successor")));
    }
    let next = strata.remove(i);
    strata[i - 1].extend(next);
    check(analysis, &strata, s.kind).map_err(StratifiedError::InvalidTransformation)?;
    Ok(to_ids(analysis, &strata, s.kind))
}

/// What one stratum did to the instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StratumSummary {
    pub stratum: usize,
    pub rules: Vec<String>,
    pub steps: usize,
    pub atoms_added: usize,
    pub atoms_removed_by_core: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoreSafeChaseResult {
    /// `C^0 = D`, then the core after each stratum.
    pub cores: Vec<Interpretation>,
    pub summaries: Vec<StratumSummary>,
}

impl CoreSafeChaseResult {
    pub fn final_model(&self) -> &Interpretation {
        self.cores.last().expect("C^0 is always present")
    }
}

/// Restricted chase of each stratum from the previous core, followed by a
/// core computation. Nulls carried over from earlier strata are ordinary
/// terms for later strata.
pub fn core_safe_chase(
    analysis: &Analysis,
    s: &Stratification,
    database: &Interpretation,
    cfg: &ChaseConfig,
) -> Result<CoreSafeChaseResult, StratifiedError> {
    validate(analysis, s)?;
    run_strata(analysis, s, database, cfg, true)
}

/// Chases stratum by stratum without intermediate cores and takes the core
/// of the final instance. Under a full stratification this is the perfect
/// core model.
pub fn stratified_chase_final_core(
    analysis: &Analysis,
    s: &Stratification,
    database: &Interpretation,
    cfg: &ChaseConfig,
) -> Result<Interpretation, StratifiedError> {
    validate(analysis, s)?;
    let r = run_strata(analysis, s, database, cfg, false)?;
    Ok(core_of(r.final_model()))
}

fn run_strata(
    analysis: &Analysis,
    s: &Stratification,
    database: &Interpretation,
    cfg: &ChaseConfig,
    cores: bool,
) -> Result<CoreSafeChaseResult, StratifiedError> {
    let strata = to_indices(analysis, s)?;
    let mut out = CoreSafeChaseResult {
        cores: vec![database.clone()],
        summaries: Vec::new(),
    };
    for (k, members) in strata.iter().enumerate() {
        let order: Vec<usize> = members.iter().copied().collect();
        let sub: RuleSet = analysis.rules.subset(&order);
        let prev = out.final_model().clone();
        let chased = run_chase(&sub, &prev, &cfg.restricted())?;
        let next = if cores { core_of(&chased.instance) } else { chased.instance.clone() };
        out.summaries.push(StratumSummary {
            stratum: k + 1,
            rules: sub.rules().iter().map(|r| r.id().to_string()).collect(),
            steps: chased.steps_used,
            atoms_added: chased.instance.len() - prev.len(),
            atoms_removed_by_core: chased.instance.len() - next.len(),
        });
        out.cores.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::tests::{tagging, tagging_pairs};
    use crate::chase::{is_model, verify_generating, ChaseVariant, Strategy};
    use crate::hom::{homomorphically_equivalent, is_core_exhaustive, is_isomorphic};
    use crate::model::{Atom, Rule, Term};

    fn c(n: &str) -> Term {
        Term::constant(n)
    }

    fn v(n: &str) -> Term {
        Term::variable(n)
    }

    fn atom(p: &str, args: &[Term]) -> Atom {
        Atom::new(p, args.to_vec())
    }

    fn interp(atoms: &[Atom]) -> Interpretation {
        Interpretation::from_atoms(atoms.iter().cloned()).unwrap()
    }

    fn strata(xs: &[&[&str]]) -> Vec<Vec<String>> {
        xs.iter().map(|s| s.iter().map(|x| x.to_string()).collect()).collect()
    }

    fn db() -> Interpretation {
        interp(&[atom("p", &[c("A")]), atom("f", &[c("A"), c("B")])])
    }

    #[test]
    fn soundness_conditions() {
        assert!(restricted_chase_is_sound(&Analysis::new(&tagging())));
        let a = Analysis::new(&tagging_pairs());
        assert!(!restricted_chase_is_sound(&a));
        assert!(rule_core_safe(&a, 2));
        assert!(!rule_core_safe(&a, 5));
    }

    #[test]
    fn restricted_chases_agree_when_sound() {
        let rules = tagging();
        let mut models = Vec::new();
        for strategy in Strategy::ALL {
            for seed in 0..4 {
                let cfg = ChaseConfig::new(ChaseVariant::Restricted, strategy, seed, 1000);
                let r = run_chase(&rules, &db(), &cfg).unwrap();
                assert!(verify_generating(&rules, &r));
                assert!(is_model(&rules, &r.instance));
                models.push(r.instance);
            }
        }
        for m in &models {
            assert!(homomorphically_equivalent(m, &models[0]));
        }
    }

    #[test]
    fn synthesized_stratification_of_extended_example() {
        let a = Analysis::new(&tagging_pairs());
        let s = find_core_safe_stratification(&a).unwrap();
        assert_eq!(s.strata, strata(&[&["r1", "r2", "r3", "r4"], &["r5"], &["r6"]]));
        assert_eq!(validate(&a, &s), Ok(()));
        assert!(find_full_stratification(&a).is_none());
    }

    #[test]
    fn single_stratum_when_sound() {
        let a = Analysis::new(&tagging());
        let s = find_core_safe_stratification(&a).unwrap();
        assert_eq!(s.strata, strata(&[&["r1", "r2", "r3", "r4"]]));
    }

    #[test]
    fn self_negative_reliance_has_no_stratification() {
        let rules = RuleSet::new(vec![Rule::new(
            "r1",
            vec![atom("b", &[v("X")])],
            vec![atom("p", &[v("X")])],
            vec![atom("p", &[v("X")])],
        )
        .unwrap()]);
        assert!(find_core_safe_stratification(&Analysis::new(&rules)).is_none());
    }

    #[test]
    fn core_safe_chase_of_extended_example() {
        let a = Analysis::new(&tagging_pairs());
        let s = find_core_safe_stratification(&a).unwrap();
        let r = core_safe_chase(&a, &s, &db(), &ChaseConfig::default()).unwrap();
        let c1 = interp(&[
            atom("p", &[c("A")]),
            atom("f", &[c("A"), c("B")]),
            atom("m", &[c("B")]),
            atom("c", &[c("B"), c("A")]),
            atom("t", &[c("B")]),
        ]);
        let mut c2 = c1.clone();
        c2.insert(atom("e", &[c("B"), c("B")]));
        assert_eq!(r.cores.len(), 4);
        assert!(is_isomorphic(&r.cores[1], &c1));
        assert!(is_isomorphic(&r.cores[2], &c2));
        assert_eq!(r.final_model(), &r.cores[2]);
        for core in &r.cores {
            assert!(is_core_exhaustive(core));
        }
        // Under FIFO the first stratum produces redundant nulls that the core removes.
        let fifo = ChaseConfig::new(ChaseVariant::Restricted, Strategy::Fifo, 0, 1000);
        let r = core_safe_chase(&a, &s, &db(), &fifo).unwrap();
        assert!(r.summaries[0].atoms_removed_by_core > 0);
        assert!(is_isomorphic(r.final_model(), &c2));
    }

    #[test]
    fn empty_rule_set_keeps_database() {
        let a = Analysis::new(&RuleSet::new(vec![]));
        let s = find_core_safe_stratification(&a).unwrap();
        assert!(s.strata.is_empty());
        assert_eq!(core_safe_chase(&a, &s, &db(), &ChaseConfig::default()).unwrap().final_model(), &db());
    }

    #[test]
    fn split_and_merge() {
        let a = Analysis::new(&tagging_pairs());
        let s = find_core_safe_stratification(&a).unwrap();
        assert!(matches!(merge_strata(&a, &s, 2), Err(StratifiedError::InvalidTransformation(_))));
        let split = split_stratum(&a, &s, 1, &["r1".into(), "r2".into(), "r3".into()], &["r4".into()]).unwrap();
        assert_eq!(split.strata.len(), 4);
        assert_eq!(merge_strata(&a, &split, 1).unwrap(), s);
        // r2 restrains r1, so r2 cannot come after r1.
        let bad = split_stratum(&a, &s, 1, &["r1".into()], &["r2".into(), "r3".into(), "r4".into()]);
        assert!(bad.is_err());
        let r1 = core_safe_chase(&a, &s, &db(), &ChaseConfig::default()).unwrap();
        let r2 = core_safe_chase(&a, &split, &db(), &ChaseConfig::default()).unwrap();
        assert!(is_isomorphic(r1.final_model(), r2.final_model()));
    }

    #[test]
    fn invalid_stratifications_are_rejected() {
        let a = Analysis::new(&tagging_pairs());
        let all_in_one = Stratification {
            strata: strata(&[&["r1", "r2", "r3", "r4", "r5", "r6"]]),
            kind: StratificationKind::CoreSafe,
        };
        assert!(validate(&a, &all_in_one).is_err());
        let unknown = Stratification {
            strata: strata(&[&["zz"]]),
            kind: StratificationKind::Quasi,
        };
        assert_eq!(validate(&a, &unknown), Err(StratifiedError::UnknownRule("zz".into())));
    }
}
