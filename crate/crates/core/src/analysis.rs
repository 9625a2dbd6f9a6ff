//! Static analyses over rule sets: jointly affected positions, influence,
//! restraints, restrained variables, core-safe positions, reliances, and
//! query safety levels.
//!
//! Restraints and reliances quantify over arbitrary interpretations. The
//! searches below only build canonical witnesses: the two rules' variables
//! are assigned to rule constants or numbered nulls (identifications
//! enumerated up to renaming), and the interpretations are assembled from
//! match images only. Removing any other atom from a witness keeps it a
//! witness, so nothing is lost.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::ops::ControlFlow;
use std::sync::Arc;

use serde::Serialize;

use crate::chase::{is_satisfied, ChaseStep};
use crate::hom::{Homomorphism, Matcher};
use crate::model::{Atom, Interpretation, Query, Rule, RuleSet, Symbol, Term};

/// A predicate position; `index` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Position {
    pub predicate: Symbol,
    pub index: usize,
}

impl Position {
    pub fn new(predicate: &str, index: usize) -> Position {
        Position {
            predicate: Arc::from(predicate),
            index,
        }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.predicate, self.index)
    }
}

impl Serialize for Position {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// A variable of a specific rule. Keying variables by their rule makes the
/// analyses independent of whether the rule set was renamed apart.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RuleVar {
    pub rule: usize,
    pub name: Symbol,
}

impl RuleVar {
    pub fn new(rule: usize, name: &str) -> RuleVar {
        RuleVar {
            rule,
            name: Arc::from(name),
        }
    }

    /// `<rule id>.<variable>`
    pub fn label(&self, rules: &RuleSet) -> String {
        format!("{}.{}", rules.rules()[self.rule].id(), self.name)
    }
}

fn positions_of(atoms: &[Atom], var: &Symbol) -> BTreeSet<Position> {
    let mut out = BTreeSet::new();
    for a in atoms {
        for (i, t) in a.args.iter().enumerate() {
            if matches!(t, Term::Variable(v) if v == var) {
                out.insert(Position {
                    predicate: a.predicate.clone(),
                    index: i + 1,
                });
            }
        }
    }
    out
}

/// Every position of the predicates used in the rules (negated atoms included).
pub fn signature_positions(rules: &RuleSet) -> BTreeSet<Position> {
    let mut out = BTreeSet::new();
    for r in rules.rules() {
        for a in r.atoms() {
            for i in 1..=a.arity() {
                out.insert(Position {
                    predicate: a.predicate.clone(),
                    index: i,
                });
            }
        }
    }
    out
}

/// Ω-sets of existential variables, the influence relation between them,
/// and the jointly affected positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffectionIndex {
    pub omega: BTreeMap<RuleVar, BTreeSet<Position>>,
    pub leadsto: BTreeSet<(RuleVar, RuleVar)>,
    pub jointly_affected: BTreeSet<Position>,
}

/// Body/head positions of every universal variable, negated atoms ignored.
struct VarPositions {
    universal: Vec<(BTreeSet<Position>, BTreeSet<Position>)>,
}

impl VarPositions {
    fn new(rules: &RuleSet) -> VarPositions {
        let mut universal = Vec::new();
        for r in rules.rules() {
            for y in r.universal() {
                universal.push((positions_of(r.body_positive(), &y), positions_of(r.head(), &y)));
            }
        }
        VarPositions { universal }
    }

    /// Least superset of `start` closed under "Π^B_y ⊆ Ω implies Π^H_y ⊆ Ω".
    fn close(&self, start: BTreeSet<Position>) -> BTreeSet<Position> {
        let mut omega = start;
        loop {
            let mut changed = false;
            for (body, head) in &self.universal {
                if !head.is_subset(&omega) && body.is_subset(&omega) {
                    omega.extend(head.iter().cloned());
                    changed = true;
                }
            }
            if !changed {
                return omega;
            }
        }
    }
}

/// Closes a set of positions under propagation through universal variables.
pub fn close_positions(rules: &RuleSet, start: BTreeSet<Position>) -> BTreeSet<Position> {
    VarPositions::new(rules).close(start)
}

pub fn compute_affection(rules: &RuleSet) -> AffectionIndex {
    let positions = VarPositions::new(rules);
    let mut omega = BTreeMap::new();
    for (idx, r) in rules.rules().iter().enumerate() {
        for x in r.existential() {
            let start = positions_of(r.head(), x);
            omega.insert(RuleVar { rule: idx, name: x.clone() }, positions.close(start));
        }
    }
    let mut leadsto = BTreeSet::new();
    for (x, om) in &omega {
        for (idx, r) in rules.rules().iter().enumerate() {
            let enabled = r
                .frontier()
                .iter()
                .any(|z| positions_of(r.body_positive(), z).is_subset(om));
            if enabled {
                for y in r.existential() {
                    leadsto.insert((x.clone(), RuleVar { rule: idx, name: y.clone() }));
                }
            }
        }
    }
    let jointly_affected = omega.values().flatten().cloned().collect();
    AffectionIndex {
        omega,
        leadsto,
        jointly_affected,
    }
}

/// Positions in Ω_y for some y reachable from `vars` under the reflexive
/// transitive closure of the influence relation.
pub fn v_influenced(vars: &BTreeSet<RuleVar>, index: &AffectionIndex) -> BTreeSet<Position> {
    let mut reached: BTreeSet<RuleVar> = vars.iter().filter(|v| index.omega.contains_key(*v)).cloned().collect();
    let mut queue: VecDeque<RuleVar> = reached.iter().cloned().collect();
    while let Some(x) = queue.pop_front() {
        for (_, y) in index.leadsto.range((x.clone(), RuleVar::new(0, ""))..).take_while(|(a, _)| *a == x) {
            if reached.insert(y.clone()) {
                queue.push_back(y.clone());
            }
        }
    }
    reached.iter().flat_map(|y| index.omega[y].iter().cloned()).collect()
}

/// A canonical witness for a restraint or reliance between two rules.
///
/// `rule1`/`rule2` are the renamed-apart copies the homomorphisms refer to;
/// `h1`/`h2` are the extended matches (existential variables included).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    pub rule1: Rule,
    pub rule2: Rule,
    pub i_a: Interpretation,
    pub i_b: Interpretation,
    pub h1: Homomorphism,
    pub h2: Homomorphism,
    /// The alternative match h′ of a restraint, as a map on nulls.
    pub alternative: Option<Homomorphism>,
    /// Existential variables of the second rule (original names) whose null
    /// the alternative match drops.
    pub restrained: BTreeSet<Symbol>,
}

fn image(h: &Homomorphism, atoms: &[Atom]) -> Interpretation {
    atoms.iter().map(|a| h.apply(a)).collect()
}

fn var_terms<'a>(vars: impl IntoIterator<Item = &'a Symbol>) -> Vec<Term> {
    vars.into_iter().map(|v| Term::Variable(v.clone())).collect()
}

/// Two rules renamed apart, plus the constant pool of the pair.
struct Pair {
    r1: Rule,
    r2: Rule,
    constants: Vec<Term>,
    /// Renamed existential variable of `r2` -> original name.
    original2: BTreeMap<Symbol, Symbol>,
}

impl Pair {
    fn new(r1: &Rule, r2: &Rule, positive: bool) -> Pair {
        let rename = |r: &Rule, tag: &str| {
            let map: BTreeMap<Symbol, Symbol> = r
                .variables()
                .into_iter()
                .map(|v| {
                    let renamed: Symbol = Arc::from(format!("{v}#{tag}"));
                    (v, renamed)
                })
                .collect();
            let base = if positive { r.positive_part() } else { r.clone() };
            (base.rename(&map), map)
        };
        let (a, _) = rename(r1, "1");
        let (b, map2) = rename(r2, "2");
        let original2 = map2.into_iter().map(|(k, v)| (v, k)).collect();
        let mut constants: BTreeSet<Symbol> = r1.constants();
        constants.extend(r2.constants());
        Pair {
            r1: a,
            r2: b,
            constants: constants.into_iter().map(Term::Constant).collect(),
            original2,
        }
    }
}

/// Visits each assignment of `vars` to constants, nulls below `next`, or new
/// nulls numbered from `next` upward in order of first use. Assignments that
/// differ only by renaming new nulls are visited once.
fn for_each_assignment(
    vars: &[Term],
    constants: &[Term],
    next: u64,
    map: &mut BTreeMap<Term, Term>,
    visit: &mut dyn FnMut(&BTreeMap<Term, Term>, u64) -> ControlFlow<()>,
) -> ControlFlow<()> {
    let Some((v, rest)) = vars.split_first() else {
        return visit(map, next);
    };
    for c in constants {
        map.insert(v.clone(), c.clone());
        for_each_assignment(rest, constants, next, map, visit)?;
    }
    for n in 0..=next {
        map.insert(v.clone(), Term::Null(n));
        let grown = if n == next { next + 1 } else { next };
        for_each_assignment(rest, constants, grown, map, visit)?;
    }
    map.remove(v);
    ControlFlow::Continue(())
}

/// Visits each injective assignment of `vars` to nulls, drawn from
/// `existing` or new nulls from `next` upward.
fn for_each_null_choice(
    vars: &[Term],
    existing: &[u64],
    next: u64,
    map: &mut BTreeMap<Term, Term>,
    visit: &mut dyn FnMut(&BTreeMap<Term, Term>, u64) -> ControlFlow<()>,
) -> ControlFlow<()> {
    let Some((v, rest)) = vars.split_first() else {
        return visit(map, next);
    };
    for &n in existing {
        if map.values().any(|t| *t == Term::Null(n)) {
            continue;
        }
        map.insert(v.clone(), Term::Null(n));
        for_each_null_choice(rest, existing, next, map, visit)?;
    }
    map.insert(v.clone(), Term::Null(next));
    for_each_null_choice(rest, existing, next + 1, map, visit)?;
    map.remove(v);
    ControlFlow::Continue(())
}

fn extend(base: &BTreeMap<Term, Term>, more: &BTreeMap<Term, Term>) -> Homomorphism {
    let mut mapping = base.clone();
    mapping.extend(more.iter().map(|(k, v)| (k.clone(), v.clone())));
    Homomorphism { mapping }
}

fn null_ids(i: &Interpretation) -> BTreeSet<u64> {
    i.nulls()
}

fn generating(rule: &Rule, h: &Homomorphism, i: &Interpretation) -> bool {
    rule.body_negative().iter().all(|a| !i.contains(&h.apply(a)))
}

/// Head image of `h_star`, the body terms it must keep, and the fresh nulls
/// an alternative match may move.
fn alternative_setup(rule: &Rule, h_star: &Homomorphism) -> (Vec<Atom>, BTreeMap<Term, Term>, BTreeSet<Term>) {
    let head_image: Vec<Atom> = rule.head().iter().map(|a| h_star.apply(a)).collect();
    let body_terms: BTreeSet<Term> = rule
        .body_positive()
        .iter()
        .flat_map(|a| h_star.apply(a).args)
        .collect();
    let fixed: BTreeMap<Term, Term> = head_image
        .iter()
        .flat_map(|a| a.args.iter())
        .filter(|t| t.is_null() && body_terms.contains(*t))
        .map(|t| (t.clone(), t.clone()))
        .collect();
    let ex_nulls: BTreeSet<Term> = head_image
        .iter()
        .flat_map(|a| a.args.iter())
        .filter(|t| t.is_null() && !body_terms.contains(*t))
        .cloned()
        .collect();
    (head_image, fixed, ex_nulls)
}

/// True if `h2` has an alternative match into `target`: a map of the head
/// image fixing the body terms that drops at least one existential null.
/// Returns the alternative (on nulls) if one exists.
fn alternative_match(rule: &Rule, h_star: &Homomorphism, target: &Interpretation) -> Option<Homomorphism> {
    let (head_image, fixed, ex_nulls) = alternative_setup(rule, h_star);
    for n in &ex_nulls {
        let avoid = |_: &Term, dst: &Term| dst != n;
        let found = Matcher::new(&head_image, target, &fixed, &[]).with_filter(&avoid).first();
        if let Some(h) = found {
            return Some(h.restrict(ex_nulls.iter()));
        }
    }
    None
}

/// Existential variables of `rule` whose null under `h_star` is avoided by
/// some alternative match into `target`.
pub fn dropped_by_alternatives(rule: &Rule, h_star: &Homomorphism, target: &Interpretation) -> BTreeSet<Symbol> {
    let (head_image, fixed, _) = alternative_setup(rule, h_star);
    rule.existential()
        .iter()
        .filter(|z| {
            let n = h_star.image(&Term::Variable((*z).clone()));
            n.is_null() && {
                let avoid = |_: &Term, dst: &Term| *dst != n;
                Matcher::new(&head_image, target, &fixed, &[]).with_filter(&avoid).exists()
            }
        })
        .cloned()
        .collect()
}

fn shares_predicate(a: &[Atom], b: &[Atom]) -> bool {
    a.iter().any(|x| b.iter().any(|y| x.predicate == y.predicate))
}

/// Enumerates canonical witnesses of `r1 ⊐ r2`.
fn restraint_search(r1: &Rule, r2: &Rule, visit: &mut dyn FnMut(Witness) -> ControlFlow<()>) {
    if r2.existential().is_empty() || !shares_predicate(r1.head(), r2.head()) {
        return;
    }
    let p = Pair::new(r1, r2, false);
    let (a, b) = (&p.r1, &p.r2);
    let u2 = var_terms(&b.universal());
    let exist2 = var_terms(b.existential());
    let u1 = var_terms(&a.universal());
    let exist1 = var_terms(a.existential());
    let _ = for_each_assignment(&u2, &p.constants, 0, &mut BTreeMap::new(), &mut |m2, next| {
        let mut h2 = Homomorphism { mapping: m2.clone() };
        let ja = image(&h2, b.body_positive());
        if is_satisfied(b, &h2, &ja) {
            return ControlFlow::Continue(());
        }
        let mut next = next;
        for z in &exist2 {
            h2.mapping.insert(z.clone(), Term::Null(next));
            next += 1;
        }
        let exist2_nulls: Vec<Term> = exist2.iter().map(|z| h2.image(z)).collect();
        let h2_head: Vec<Atom> = b.head().iter().map(|x| h2.apply(x)).collect();
        let ia = ja.union(&h2_head.iter().cloned().collect());
        for_each_assignment(&u1, &p.constants, next, &mut BTreeMap::new(), &mut |m1, next| {
            let b1img = image(&Homomorphism { mapping: m1.clone() }, a.body_positive());
            let b1_nulls = null_ids(&b1img);
            let existing: Vec<u64> = (0..next).filter(|n| !b1_nulls.contains(n)).collect();
            for_each_null_choice(&exist1, &existing, next, &mut BTreeMap::new(), &mut |mx, next| {
                let h1 = extend(m1, mx);
                let h1img = image(&h1, a.head());
                // Some head atom of h2 must be able to land on a new atom.
                let compatible = h2_head.iter().any(|x| {
                    h1img.atoms().any(|y| {
                        y.predicate == x.predicate
                            && x.args.iter().zip(&y.args).all(|(s, t)| exist2_nulls.contains(s) || s == t)
                    })
                });
                if !compatible {
                    return ControlFlow::Continue(());
                }
                let ib0 = ia.union(&b1img).union(&h1img);
                let exist1_nulls: Vec<Term> = exist1.iter().map(|z| h1.image(z)).collect();
                if !generating(a, &h1, &ib0) || !generating(b, &h2, &ib0) {
                    return ControlFlow::Continue(());
                }
                let jb0 = ib0.difference(&h1img).union(&b1img);
                if jb0.terms().iter().any(|t| exist1_nulls.contains(t)) || is_satisfied(a, &h1, &jb0) {
                    return ControlFlow::Continue(());
                }
                if alternative_match(b, &h2, &ib0.difference(&h1img)).is_some() {
                    return ControlFlow::Continue(());
                }
                for_each_assignment(&exist2_nulls, &p.constants, next, &mut BTreeMap::new(), &mut |alt, _| {
                    let alt = Homomorphism { mapping: alt.clone() };
                    let alt_img: Interpretation = h2_head.iter().map(|x| alt.apply(x)).collect();
                    let alt_terms = alt_img.terms();
                    let restrained: BTreeSet<Symbol> = exist2
                        .iter()
                        .filter(|z| !alt_terms.contains(&h2.image(z)))
                        .map(|z| match z {
                            Term::Variable(v) => p.original2[v].clone(),
                            _ => unreachable!("existential is a variable"),
                        })
                        .collect();
                    if restrained.is_empty() {
                        return ControlFlow::Continue(());
                    }
                    let ib = ib0.union(&alt_img);
                    if !generating(a, &h1, &ib) || !generating(b, &h2, &ib) {
                        return ControlFlow::Continue(());
                    }
                    let jb = ib.difference(&h1img).union(&b1img);
                    if jb.terms().iter().any(|t| exist1_nulls.contains(t)) || is_satisfied(a, &h1, &jb) {
                        return ControlFlow::Continue(());
                    }
                    if alternative_match(b, &h2, &ib.difference(&h1img)).is_some() {
                        return ControlFlow::Continue(());
                    }
                    visit(Witness {
                        rule1: a.clone(),
                        rule2: b.clone(),
                        i_a: ia.clone(),
                        i_b: ib,
                        h1: h1.clone(),
                        h2: h2.clone(),
                        alternative: Some(alt),
                        restrained,
                    })
                })
            })
        })
    });
}

/// Decides `r1 ⊐ r2`, returning a canonical witness.
pub fn restrains(r1: &Rule, r2: &Rule) -> Option<Witness> {
    let mut found = None;
    restraint_search(r1, r2, &mut |w| {
        found = Some(w);
        ControlFlow::Break(())
    });
    found
}

/// Existential variables of `r2` (original names) restrained by some
/// witness of `r1 ⊐ r2`, together with the first witness found.
pub fn restrained_by(r1: &Rule, r2: &Rule) -> (BTreeSet<Symbol>, Option<Witness>) {
    let mut vars = BTreeSet::new();
    let mut first = None;
    let all = r2.existential().len();
    restraint_search(r1, r2, &mut |w| {
        vars.extend(w.restrained.iter().cloned());
        first.get_or_insert(w);
        if vars.len() == all {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    });
    (vars, first)
}

/// Decides `r1 ≺+ r2` on the positive parts of the rules.
pub fn positive_reliance(r1: &Rule, r2: &Rule) -> Option<Witness> {
    if !shares_predicate(r1.head(), r2.body_positive()) {
        return None;
    }
    let p = Pair::new(r1, r2, true);
    let (a, b) = (&p.r1, &p.r2);
    let u1 = var_terms(&a.universal());
    let exist1 = var_terms(a.existential());
    let u2 = var_terms(&b.universal());
    let mut found = None;
    let _ = for_each_assignment(&u1, &p.constants, 0, &mut BTreeMap::new(), &mut |m1, next| {
        let mut h1 = Homomorphism { mapping: m1.clone() };
        let b1img = image(&h1, a.body_positive());
        if is_satisfied(a, &h1, &b1img) {
            return ControlFlow::Continue(());
        }
        let mut next = next;
        for z in &exist1 {
            h1.mapping.insert(z.clone(), Term::Null(next));
            next += 1;
        }
        let h1img = image(&h1, a.head());
        let fresh: Vec<Term> = exist1.iter().map(|z| h1.image(z)).collect();
        for_each_assignment(&u2, &p.constants, next, &mut BTreeMap::new(), &mut |m2, _| {
            let h2 = Homomorphism { mapping: m2.clone() };
            let b2img = image(&h2, b.body_positive());
            if !b2img.atoms().any(|x| h1img.contains(&x) && !b1img.contains(&x)) {
                return ControlFlow::Continue(());
            }
            let ia = b1img.union(&b2img.difference(&h1img));
            if ia.terms().iter().any(|t| fresh.contains(t)) || is_satisfied(a, &h1, &ia) {
                return ControlFlow::Continue(());
            }
            let ib = ia.union(&h1img);
            if is_satisfied(b, &h2, &ib) {
                return ControlFlow::Continue(());
            }
            found = Some(Witness {
                rule1: a.clone(),
                rule2: b.clone(),
                i_a: ia,
                i_b: ib,
                h1: h1.clone(),
                h2,
                alternative: None,
                restrained: BTreeSet::new(),
            });
            ControlFlow::Break(())
        })
    });
    found
}

/// Decides `r1 ≺− r2`: applying `r1` can derive a negated atom of a match
/// of `r2` that was generating before.
pub fn negative_reliance(r1: &Rule, r2: &Rule) -> Option<Witness> {
    if !shares_predicate(r1.head(), r2.body_negative()) {
        return None;
    }
    let p = Pair::new(r1, r2, false);
    let (a, b) = (&p.r1, &p.r2);
    let (a_pos, b_pos) = (a.positive_part(), b.positive_part());
    let u2 = var_terms(&b.universal());
    let exist2 = var_terms(b.existential());
    let u1 = var_terms(&a.universal());
    let exist1 = var_terms(a.existential());
    let mut found = None;
    let _ = for_each_assignment(&u2, &p.constants, 0, &mut BTreeMap::new(), &mut |m2, next| {
        let mut h2 = Homomorphism { mapping: m2.clone() };
        let ja = image(&h2, b.body_positive());
        if is_satisfied(&b_pos, &h2, &ja) {
            return ControlFlow::Continue(());
        }
        let negated: Vec<Atom> = b.body_negative().iter().map(|x| h2.apply(x)).collect();
        let mut next = next;
        for z in &exist2 {
            h2.mapping.insert(z.clone(), Term::Null(next));
            next += 1;
        }
        let ia = ja.union(&image(&h2, b.head()));
        for_each_assignment(&u1, &p.constants, next, &mut BTreeMap::new(), &mut |m1, next| {
            let b1img = image(&Homomorphism { mapping: m1.clone() }, a.body_positive());
            let b1_nulls = null_ids(&b1img);
            let existing: Vec<u64> = (0..next).filter(|n| !b1_nulls.contains(n)).collect();
            for_each_null_choice(&exist1, &existing, next, &mut BTreeMap::new(), &mut |mx, _| {
                let h1 = extend(m1, mx);
                let h1img = image(&h1, a.head());
                if !negated.iter().any(|x| h1img.contains(x)) {
                    return ControlFlow::Continue(());
                }
                let ib = ia.union(&b1img).union(&h1img);
                let rest = ib.difference(&h1img);
                if negated.iter().any(|x| rest.contains(x)) {
                    return ControlFlow::Continue(());
                }
                let jb = rest.union(&b1img);
                let exist1_nulls: Vec<Term> = exist1.iter().map(|z| h1.image(z)).collect();
                if jb.terms().iter().any(|t| exist1_nulls.contains(t)) || is_satisfied(&a_pos, &h1, &jb) {
                    return ControlFlow::Continue(());
                }
                found = Some(Witness {
                    rule1: a.clone(),
                    rule2: b.clone(),
                    i_a: ia.clone(),
                    i_b: ib,
                    h1,
                    h2: h2.clone(),
                    alternative: None,
                    restrained: BTreeSet::new(),
                });
                ControlFlow::Break(())
            })
        })
    });
    found
}

/// If `after` can result from applying `rule` (positive part) for the
/// extended match `h_star`, returns the smallest instance it can be applied
/// to: the body image plus everything outside the head image.
pub fn applied_from(rule: &Rule, h_star: &Homomorphism, after: &Interpretation) -> Option<Interpretation> {
    let head = image(h_star, rule.head());
    let body = image(h_star, rule.body_positive());
    if !head.is_subset(after) {
        return None;
    }
    let before = after.difference(&head).union(&body);
    let mut introduced = BTreeSet::new();
    for z in rule.existential() {
        match h_star.image(&Term::Variable(z.clone())) {
            Term::Null(n) if !before.nulls().contains(&n) => {
                if !introduced.insert(n) {
                    return None;
                }
            }
            _ => return None,
        }
    }
    if is_satisfied(&rule.positive_part(), h_star, &before) {
        return None;
    }
    Some(before)
}

/// Re-checks every condition of a restraint witness on its instances.
pub fn replay_restraint(w: &Witness) -> bool {
    let Some(alt) = &w.alternative else {
        return false;
    };
    let (a, b) = (&w.rule1, &w.rule2);
    let h1img = image(&w.h1, a.head());
    let h2_head: Vec<Atom> = b.head().iter().map(|x| w.h2.apply(x)).collect();
    let body_terms: BTreeSet<Term> = image(&w.h2, b.body_positive()).terms();
    let alt_img: Interpretation = h2_head.iter().map(|x| alt.apply(x)).collect();
    let head_nulls: BTreeSet<Term> = h2_head.iter().flat_map(|x| x.args.iter()).filter(|t| t.is_null()).cloned().collect();
    let fixes_body = body_terms.iter().all(|t| alt.image(t) == *t);
    let drops = head_nulls.iter().any(|n| !alt_img.terms().contains(n));
    applied_from(b, &w.h2, &w.i_a).is_some()
        && applied_from(a, &w.h1, &w.i_b).is_some()
        && w.i_a.is_subset(&w.i_b)
        && fixes_body
        && drops
        && alt_img.is_subset(&w.i_b)
        && alternative_match(b, &w.h2, &w.i_b.difference(&h1img)).is_none()
        && generating(a, &w.h1, &w.i_b)
        && generating(b, &w.h2, &w.i_b)
}

/// Re-checks a positive-reliance witness.
pub fn replay_positive(w: &Witness) -> bool {
    let (a, b) = (&w.rule1, &w.rule2);
    let h1img = image(&w.h1, a.head());
    let b2img = image(&w.h2, b.body_positive());
    let ia_before = applied_from(a, &w.h1, &w.i_b);
    w.i_b == w.i_a.union(&h1img)
        && ia_before.is_some_and(|j| j.is_subset(&w.i_a))
        && !w.i_a.terms().iter().any(|t| {
            a.existential()
                .iter()
                .any(|z| w.h1.image(&Term::Variable(z.clone())) == *t)
        })
        && !is_satisfied(a, &w.h1, &w.i_a)
        && b2img.is_subset(&w.i_b)
        && !is_satisfied(b, &w.h2, &w.i_b)
        && !b2img.is_subset(&w.i_a)
}

/// Re-checks a negative-reliance witness.
pub fn replay_negative(w: &Witness) -> bool {
    let (a, b) = (&w.rule1, &w.rule2);
    let h1img = image(&w.h1, a.head());
    let negated: Vec<Atom> = b.body_negative().iter().map(|x| w.h2.apply(x)).collect();
    let rest = w.i_b.difference(&h1img);
    applied_from(a, &w.h1, &w.i_b).is_some()
        && applied_from(b, &w.h2, &w.i_a).is_some()
        && w.i_a.is_subset(&w.i_b)
        && negated.iter().any(|x| w.i_b.contains(x))
        && !negated.iter().any(|x| rest.contains(x))
}

/// Pairwise relations between the rules of a set, by rule index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Relations {
    /// `(i, j)` means rule i restrains rule j; value: restrained variables of j.
    pub restraints: BTreeMap<(usize, usize), BTreeSet<Symbol>>,
    pub positive: BTreeSet<(usize, usize)>,
    pub negative: BTreeSet<(usize, usize)>,
    pub witnesses: BTreeMap<(usize, usize), Witness>,
}

impl Relations {
    pub fn compute(rules: &RuleSet) -> Relations {
        let mut out = Relations::default();
        let rs = rules.rules();
        for (i, r1) in rs.iter().enumerate() {
            for (j, r2) in rs.iter().enumerate() {
                let (vars, witness) = restrained_by(r1, r2);
                if let Some(w) = witness {
                    out.restraints.insert((i, j), vars);
                    out.witnesses.insert((i, j), w);
                }
                if positive_reliance(r1, r2).is_some() {
                    out.positive.insert((i, j));
                }
                if negative_reliance(r1, r2).is_some() {
                    out.negative.insert((i, j));
                }
            }
        }
        out
    }

    /// Restrained variables contributed by restraints among `members`.
    pub fn restrained_within(&self, members: &BTreeSet<usize>) -> BTreeSet<RuleVar> {
        self.restraints
            .iter()
            .filter(|((i, j), _)| members.contains(i) && members.contains(j))
            .flat_map(|(&(_, j), vars)| vars.iter().map(move |v| RuleVar { rule: j, name: v.clone() }))
            .collect()
    }
}

/// Restraint edges with the restrained variables of the rule set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RestraintReport {
    pub edges: BTreeSet<(usize, usize)>,
    pub restrained_variables: BTreeSet<RuleVar>,
    pub witnesses: BTreeMap<(usize, usize), Witness>,
}

pub fn restraint_report(rules: &RuleSet) -> RestraintReport {
    let rel = Relations::compute(rules);
    report_from(rules, &rel)
}

fn report_from(rules: &RuleSet, rel: &Relations) -> RestraintReport {
    let all: BTreeSet<usize> = (0..rules.len()).collect();
    RestraintReport {
        edges: rel.restraints.keys().cloned().collect(),
        restrained_variables: rel.restrained_within(&all),
        witnesses: rel.witnesses.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum SafetyLevel {
    #[serde(rename = "BCQ")]
    Bcq,
    #[serde(rename = "affection-safe")]
    AffectionSafe,
    #[serde(rename = "core-safe")]
    CoreSafe,
    #[serde(rename = "effectively-core-safe")]
    EffectivelyCoreSafe,
    #[serde(rename = "unsafe")]
    Unsafe,
}

impl SafetyLevel {
    pub fn name(self) -> &'static str {
        match self {
            SafetyLevel::Bcq => "BCQ",
            SafetyLevel::AffectionSafe => "affection-safe",
            SafetyLevel::CoreSafe => "core-safe",
            SafetyLevel::EffectivelyCoreSafe => "effectively-core-safe",
            SafetyLevel::Unsafe => "unsafe",
        }
    }
}

impl fmt::Display for SafetyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SafetyClassification {
    pub level: SafetyLevel,
    /// For each variable of the negated atoms, one safe position of the
    /// positive part it occurs at (empty for BCQ and unsafe).
    pub witness_positions: BTreeMap<Symbol, Position>,
}

/// All static analysis results for one rule set.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub rules: RuleSet,
    pub affection: AffectionIndex,
    pub relations: Relations,
    pub restraints: RestraintReport,
    /// `v_influenced(R_Σ)`.
    pub unsafe_positions: BTreeSet<Position>,
}

impl Analysis {
    pub fn new(rules: &RuleSet) -> Analysis {
        Analysis::with_relations(rules, Relations::compute(rules))
    }

    pub fn with_relations(rules: &RuleSet, relations: Relations) -> Analysis {
        let affection = compute_affection(rules);
        let restraints = report_from(rules, &relations);
        let unsafe_positions = v_influenced(&restraints.restrained_variables, &affection);
        Analysis {
            rules: rules.clone(),
            affection,
            relations,
            restraints,
            unsafe_positions,
        }
    }

    pub fn core_safe_positions(&self) -> BTreeSet<Position> {
        signature_positions(&self.rules)
            .difference(&self.unsafe_positions)
            .cloned()
            .collect()
    }

    pub fn is_core_safe_position(&self, p: &Position) -> bool {
        !self.unsafe_positions.contains(p)
    }

    /// Restrained variables whose rule was applied before some rule that
    /// restrains it, plus existential variables whose null was redundant the
    /// moment it was created (a partly satisfied head); the pairwise
    /// restraint relation cannot see the latter.
    pub fn effectively_restrained(&self, trace: &[ChaseStep]) -> BTreeSet<RuleVar> {
        let ids: BTreeMap<&str, usize> = self
            .rules
            .rules()
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id(), i))
            .collect();
        let applied: Vec<usize> = trace.iter().filter_map(|s| ids.get(s.rule_id.as_str()).copied()).collect();
        let mut seen_before: BTreeSet<usize> = BTreeSet::new();
        let mut flagged: BTreeSet<usize> = BTreeSet::new();
        for &k in &applied {
            for &j in &seen_before {
                if self.relations.restraints.contains_key(&(k, j)) {
                    flagged.insert(j);
                }
            }
            seen_before.insert(k);
        }
        let mut out: BTreeSet<RuleVar> = self
            .restraints
            .restrained_variables
            .iter()
            .filter(|v| flagged.contains(&v.rule))
            .cloned()
            .collect();
        for s in trace {
            if let Some(&idx) = ids.get(s.rule_id.as_str()) {
                out.extend(s.redundant_on_arrival.iter().map(|z| RuleVar::new(idx, z)));
            }
        }
        out
    }

    /// Strongest safety level of `q`; the effectively-core-safe level is
    /// only considered when a trace of the run is given.
    pub fn classify_query(&self, q: &Query, trace: Option<&[ChaseStep]>) -> SafetyClassification {
        if q.is_bcq() {
            return SafetyClassification {
                level: SafetyLevel::Bcq,
                witness_positions: BTreeMap::new(),
            };
        }
        let neg_vars = q.negative_variables();
        let assign = |bad: &BTreeSet<Position>| -> Option<BTreeMap<Symbol, Position>> {
            neg_vars
                .iter()
                .map(|x| {
                    positions_of(q.positive(), x)
                        .into_iter()
                        .find(|p| !bad.contains(p))
                        .map(|p| (x.clone(), p))
                })
                .collect()
        };
        let mut levels = vec![
            (SafetyLevel::AffectionSafe, self.affection.jointly_affected.clone()),
            (SafetyLevel::CoreSafe, self.unsafe_positions.clone()),
        ];
        if let Some(trace) = trace {
            let rs = self.effectively_restrained(trace);
            levels.push((SafetyLevel::EffectivelyCoreSafe, v_influenced(&rs, &self.affection)));
        }
        for (level, bad) in levels {
            if let Some(witness_positions) = assign(&bad) {
                return SafetyClassification {
                    level,
                    witness_positions,
                };
            }
        }
        SafetyClassification {
            level: SafetyLevel::Unsafe,
            witness_positions: BTreeMap::new(),
        }
    }

    /// A rule is core-safe if every variable of its negated atoms occurs at
    /// a core-safe position of its positive body.
    pub fn rule_core_safe(&self, idx: usize) -> bool {
        let r = &self.rules.rules()[idx];
        let neg: BTreeSet<Symbol> = r.body_negative().iter().flat_map(|a| a.variables().cloned()).collect();
        neg.iter().all(|x| {
            positions_of(r.body_positive(), x)
                .iter()
                .any(|p| self.is_core_safe_position(p))
        })
    }
}

/// Positions not influenced by restrained variables.
pub fn core_safe_positions(rules: &RuleSet) -> BTreeSet<Position> {
    Analysis::new(rules).core_safe_positions()
}

pub fn classify_query(q: &Query, rules: &RuleSet, trace: Option<&[ChaseStep]>) -> SafetyClassification {
    Analysis::new(rules).classify_query(q, trace)
}
