//! Shared test support: a seeded generator of small rule sets, databases
//! and queries, and brute-force oracles that re-derive results without the
//! library's search code.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use nullcore::model::{Atom, Interpretation, Query, Rule, RuleSet, Term};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Map = BTreeMap<Term, Term>;

pub fn c(n: &str) -> Term {
    Term::constant(n)
}

pub fn v(n: &str) -> Term {
    Term::variable(n)
}

pub fn atom(p: &str, args: &[Term]) -> Atom {
    Atom::new(p, args.to_vec())
}

pub fn interp(atoms: &[Atom]) -> Interpretation {
    Interpretation::from_atoms(atoms.iter().cloned()).unwrap()
}

// ---------------------------------------------------------------- corpus

#[derive(Debug, Clone)]
pub struct Case {
    pub seed: u64,
    pub rules: RuleSet,
    pub database: Interpretation,
    pub queries: Vec<Query>,
}

impl Case {
    pub fn is_plain(&self) -> bool {
        self.rules.rules().iter().all(|r| r.body_negative().is_empty())
    }
}

const PREDICATES: [&str; 4] = ["p", "q", "r", "s"];
const CONSTANTS: [&str; 6] = ["a", "b", "c", "d", "e", "f"];
const BODY_VARS: [&str; 3] = ["X", "Y", "Z"];
const EXIST_VARS: [&str; 2] = ["V", "W"];

struct Gen {
    rng: ChaCha8Rng,
    arity: BTreeMap<&'static str, usize>,
}

impl Gen {
    fn pick<'a, T>(&mut self, xs: &'a [T]) -> &'a T {
        &xs[self.rng.random_range(0..xs.len())]
    }

    fn chance(&mut self, p: f64) -> bool {
        self.rng.random_bool(p)
    }

    fn atom_over(&mut self, pool: &[Term]) -> Atom {
        let p = *self.pick(&PREDICATES);
        let args = (0..self.arity[p]).map(|_| self.pick(pool).clone()).collect();
        Atom::new(p, args)
    }

    fn rule(&mut self, id: String, normal: bool) -> Option<Rule> {
        let nbody = *self.pick(&[1, 1, 2, 2, 3]);
        let body_pool: Vec<Term> = BODY_VARS.iter().map(|x| v(x)).collect();
        let body: Vec<Atom> = (0..nbody).map(|_| self.atom_over(&body_pool)).collect();
        let bound: Vec<Term> = BODY_VARS
            .iter()
            .map(|x| v(x))
            .filter(|t| body.iter().any(|a| a.args.contains(t)))
            .collect();
        let mut head_pool = bound.clone();
        let existentials = *self.pick(&[0, 1, 1, 2]);
        head_pool.extend(EXIST_VARS[..existentials].iter().map(|x| v(x)));
        if self.chance(0.1) {
            head_pool.push(c("a"));
        }
        let nhead = *self.pick(&[1, 1, 2, 2, 3]);
        let head: Vec<Atom> = (0..nhead).map(|_| self.atom_over(&head_pool)).collect();
        let negative = if normal && self.chance(0.5) {
            vec![self.atom_over(&bound)]
        } else {
            vec![]
        };
        Rule::new(id, body, negative, head).ok()
    }

    fn query(&mut self, name: String) -> Option<Query> {
        let pool: Vec<Term> = BODY_VARS.iter().map(|x| v(x)).chain([c("a")]).collect();
        let npos = *self.pick(&[1, 2, 2]);
        let positive: Vec<Atom> = (0..npos).map(|_| self.atom_over(&pool)).collect();
        let vars: Vec<Term> = BODY_VARS
            .iter()
            .map(|x| v(x))
            .filter(|t| positive.iter().any(|a| a.args.contains(t)))
            .collect();
        let negative = if !vars.is_empty() && self.chance(0.8) {
            vec![self.atom_over(&vars)]
        } else {
            vec![]
        };
        Query::new(name, positive, negative).ok()
    }
}

/// A reproducible random case: up to five rules over binary and unary
/// predicates, a ground database over at most six constants, and up to
/// three queries. Four in ten cases use negated body atoms.
pub fn random_case(seed: u64) -> Case {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        arity: BTreeMap::new(),
    };
    for p in PREDICATES {
        let a = g.rng.random_range(1..=2);
        g.arity.insert(p, a);
    }
    let normal = g.chance(0.4);
    let nrules = g.rng.random_range(1..=5);
    let mut rules = Vec::new();
    while rules.len() < nrules {
        if let Some(r) = g.rule(format!("r{}", rules.len() + 1), normal) {
            rules.push(r);
        }
    }
    let nconst = g.rng.random_range(2..=CONSTANTS.len());
    let pool: Vec<Term> = CONSTANTS[..nconst].iter().map(|x| c(x)).collect();
    let ndb = g.rng.random_range(1..=6);
    let database = Interpretation::from_atoms((0..ndb).map(|_| g.atom_over(&pool))).unwrap();
    let mut queries = Vec::new();
    let nq = g.rng.random_range(1..=3);
    let mut tries = 0;
    while queries.len() < nq && tries < 50 {
        tries += 1;
        if let Some(q) = g.query(format!("q{}", queries.len() + 1)) {
            queries.push(q);
        }
    }
    Case {
        seed,
        rules: RuleSet::new(rules),
        database,
        queries,
    }
}

pub fn corpus(n: usize, base: u64) -> Vec<Case> {
    (0..n as u64).map(|i| random_case(base.wrapping_mul(1_000_003).wrapping_add(i))).collect()
}

// ------------------------------------------------------- homomorphisms

fn mappable(t: &Term) -> bool {
    !t.is_constant()
}

/// Visits every homomorphism from `src` into `tgt` extending `fixed`, by
/// trying each target atom for each source atom in turn. `ok` can veto
/// individual term assignments. Stops when `visit` returns false.
pub fn naive_homs(
    src: &[Atom],
    tgt: &BTreeSet<Atom>,
    fixed: &Map,
    ok: &dyn Fn(&Term, &Term, &Map) -> bool,
    visit: &mut dyn FnMut(&Map) -> bool,
) -> bool {
    fn go(
        src: &[Atom],
        tgt: &BTreeSet<Atom>,
        map: &mut Map,
        ok: &dyn Fn(&Term, &Term, &Map) -> bool,
        visit: &mut dyn FnMut(&Map) -> bool,
    ) -> bool {
        let Some((first, rest)) = src.split_first() else {
            return visit(map);
        };
        for cand in tgt.iter().filter(|t| t.predicate == first.predicate && t.args.len() == first.args.len()) {
            let mut added = Vec::new();
            let mut good = true;
            for (s, t) in first.args.iter().zip(&cand.args) {
                if !mappable(s) {
                    if s != t {
                        good = false;
                        break;
                    }
                    continue;
                }
                match map.get(s) {
                    Some(x) if x == t => {}
                    Some(_) => {
                        good = false;
                        break;
                    }
                    None => {
                        if !ok(s, t, map) {
                            good = false;
                            break;
                        }
                        map.insert(s.clone(), t.clone());
                        added.push(s.clone());
                    }
                }
            }
            let cont = !good || go(rest, tgt, map, ok, visit);
            for s in added {
                map.remove(&s);
            }
            if !cont {
                return false;
            }
        }
        true
    }
    let mut map = fixed.clone();
    go(src, tgt, &mut map, ok, visit)
}

fn any_ok(_: &Term, _: &Term, _: &Map) -> bool {
    true
}

pub fn naive_hom_exists(src: &[Atom], tgt: &BTreeSet<Atom>, fixed: &Map) -> bool {
    let mut found = false;
    naive_homs(src, tgt, fixed, &any_ok, &mut |_| {
        found = true;
        false
    });
    found
}

pub fn atoms_of(i: &Interpretation) -> BTreeSet<Atom> {
    i.atoms().collect()
}

pub fn terms_of(s: &BTreeSet<Atom>) -> BTreeSet<Term> {
    s.iter().flat_map(|a| a.args.iter().cloned()).collect()
}

/// Query satisfaction by brute force: a match of the positive atoms that
/// maps no negated atom into the instance.
pub fn naive_satisfies(q: &Query, i: &Interpretation) -> bool {
    let tgt = atoms_of(i);
    let mut found = false;
    naive_homs(q.positive(), &tgt, &Map::new(), &any_ok, &mut |m| {
        if q.negative().iter().all(|a| !tgt.contains(&apply(m, a))) {
            found = true;
            return false;
        }
        true
    });
    found
}

pub fn apply(m: &Map, a: &Atom) -> Atom {
    Atom::new(&a.predicate, a.args.iter().map(|t| m.get(t).cloned().unwrap_or_else(|| t.clone())).collect())
}

/// Null-to-null bijection between the two instances mapping atoms onto atoms.
pub fn naive_isomorphic(a: &Interpretation, b: &Interpretation) -> bool {
    if a.len() != b.len() || a.nulls().len() != b.nulls().len() {
        return false;
    }
    let src: Vec<Atom> = a.atoms().collect();
    let tgt = atoms_of(b);
    let ok = |s: &Term, t: &Term, m: &Map| s.is_null() == t.is_null() && !m.values().any(|x| x == t);
    let mut found = false;
    naive_homs(&src, &tgt, &Map::new(), &ok, &mut |_| {
        found = true;
        false
    });
    found
}

/// An instance is a core iff every endomorphism is injective on nulls;
/// searches for a non-injective one.
pub fn naive_is_core(i: &Interpretation) -> bool {
    let src: Vec<Atom> = i.atoms().collect();
    let tgt = atoms_of(i);
    let mut core = true;
    naive_homs(&src, &tgt, &Map::new(), &any_ok, &mut |m| {
        let images: BTreeSet<&Term> = m.iter().filter(|(k, _)| k.is_null()).map(|(_, v)| v).collect();
        let nulls = m.keys().filter(|k| k.is_null()).count();
        if images.len() < nulls || m.iter().any(|(k, v)| k.is_null() && v.is_constant()) {
            core = false;
            return false;
        }
        true
    });
    core
}

// ------------------------------------------------- relation oracles

struct Tagged {
    body: Vec<Atom>,
    negative: Vec<Atom>,
    head: Vec<Atom>,
    universal: Vec<Term>,
    existential: Vec<Term>,
    original: BTreeMap<Term, String>,
}

fn tag(r: &Rule, suffix: &str) -> Tagged {
    let mut original = BTreeMap::new();
    let mut rename = |a: &Atom| {
        Atom::new(
            &a.predicate,
            a.args
                .iter()
                .map(|t| match t {
                    Term::Variable(x) => {
                        let nt = v(&format!("{x}@{suffix}"));
                        original.insert(nt.clone(), x.to_string());
                        nt
                    }
                    other => other.clone(),
                })
                .collect(),
        )
    };
    let body: Vec<Atom> = r.body_positive().iter().map(&mut rename).collect();
    let negative: Vec<Atom> = r.body_negative().iter().map(&mut rename).collect();
    let head: Vec<Atom> = r.head().iter().map(&mut rename).collect();
    let vars_in = |atoms: &[Atom]| -> BTreeSet<Term> { atoms.iter().flat_map(|a| a.args.iter().filter(|t| t.is_variable()).cloned()).collect() };
    let universal: Vec<Term> = vars_in(&body).into_iter().collect();
    let existential: Vec<Term> = vars_in(&head).into_iter().filter(|t| !universal.contains(t)).collect();
    Tagged {
        body,
        negative,
        head,
        universal,
        existential,
        original,
    }
}

fn rule_constants(rs: &[&Rule]) -> Vec<Term> {
    let set: BTreeSet<Term> = rs
        .iter()
        .flat_map(|r| r.atoms().flat_map(|a| a.args.iter().filter(|t| t.is_constant()).cloned()).collect::<Vec<_>>())
        .collect();
    set.into_iter().collect()
}

/// Assignments of `vars` to constants, the nulls `0..next`, or new nulls
/// taken in order of first use.
fn assignments(vars: &[Term], constants: &[Term], next: u64, map: &mut Map, f: &mut dyn FnMut(&Map, u64) -> bool) -> bool {
    let Some((x, rest)) = vars.split_first() else {
        return f(map, next);
    };
    for t in constants {
        map.insert(x.clone(), t.clone());
        if !assignments(rest, constants, next, map, f) {
            return false;
        }
    }
    for n in 0..=next {
        map.insert(x.clone(), Term::Null(n));
        if !assignments(rest, constants, next.max(n + 1), map, f) {
            return false;
        }
    }
    map.remove(x);
    true
}

/// Injective assignments of `vars` to nulls below `next` or fresh ones.
fn null_choices(vars: &[Term], next: u64, map: &mut Map, f: &mut dyn FnMut(&Map, u64) -> bool) -> bool {
    let Some((x, rest)) = vars.split_first() else {
        return f(map, next);
    };
    for n in 0..=next {
        if map.values().any(|t| *t == Term::Null(n)) {
            continue;
        }
        map.insert(x.clone(), Term::Null(n));
        if !null_choices(rest, next.max(n + 1), map, f) {
            return false;
        }
    }
    map.remove(x);
    true
}

/// All functions from `keys` into `pool`.
fn functions(keys: &[Term], pool: &[Term], map: &mut Map, f: &mut dyn FnMut(&Map) -> bool) -> bool {
    let Some((x, rest)) = keys.split_first() else {
        return f(map);
    };
    for t in pool {
        map.insert(x.clone(), t.clone());
        if !functions(rest, pool, map, f) {
            return false;
        }
    }
    map.remove(x);
    true
}

fn img(m: &Map, atoms: &[Atom]) -> BTreeSet<Atom> {
    atoms.iter().map(|a| apply(m, a)).collect()
}

fn restrict(m: &Map, keys: &[Term]) -> Map {
    keys.iter().filter_map(|k| m.get(k).map(|t| (k.clone(), t.clone()))).collect()
}

/// Body image inside `j` and no extension of the universal part satisfies
/// the head in `j`.
fn unsatisfied(r: &Tagged, h: &Map, j: &BTreeSet<Atom>) -> bool {
    img(h, &r.body).is_subset(j) && !naive_hom_exists(&r.head, j, &restrict(h, &r.universal))
}

fn generating(r: &Tagged, h: &Map, i: &BTreeSet<Atom>) -> bool {
    r.negative.iter().all(|a| !i.contains(&apply(h, a)))
}

/// An alternative match of the extended match `h` into `target`: fixes the
/// body terms and drops some null of the head image.
fn has_alternative(r: &Tagged, h: &Map, target: &BTreeSet<Atom>) -> bool {
    let head: Vec<Atom> = img(h, &r.head).into_iter().collect();
    let body_terms = terms_of(&img(h, &r.body));
    let head_nulls: BTreeSet<Term> = terms_of(&head.iter().cloned().collect()).into_iter().filter(|t| t.is_null()).collect();
    let fixed: Map = head_nulls.iter().filter(|n| body_terms.contains(*n)).map(|n| (n.clone(), n.clone())).collect();
    let mut found = false;
    naive_homs(&head, target, &fixed, &any_ok, &mut |m| {
        let image_terms = terms_of(&img(m, &head));
        if head_nulls.iter().any(|n| !image_terms.contains(n)) {
            found = true;
            return false;
        }
        true
    });
    found
}

/// Existential variables of `r2` (original names) restrained by `r1`,
/// found by enumerating small candidate interpretations directly from the
/// definition. Empty iff `r1` does not restrain `r2`.
pub fn oracle_restrained(r1: &Rule, r2: &Rule) -> BTreeSet<String> {
    let a = tag(r1, "1");
    let b = tag(r2, "2");
    let consts = rule_constants(&[r1, r2]);
    let mut out = BTreeSet::new();
    if b.existential.is_empty() {
        return out;
    }
    let total = b.existential.len();
    assignments(&b.universal, &consts, 0, &mut Map::new(), &mut |m2, next| {
        let mut h2 = m2.clone();
        let ja = img(&h2, &b.body);
        if !unsatisfied(&b, &h2, &ja) {
            return true;
        }
        let mut next = next;
        let mut exist2_nulls = Vec::new();
        for z in &b.existential {
            h2.insert(z.clone(), Term::Null(next));
            exist2_nulls.push(Term::Null(next));
            next += 1;
        }
        let head2: BTreeSet<Atom> = img(&h2, &b.head);
        let ia: BTreeSet<Atom> = ja.union(&head2).cloned().collect();
        assignments(&a.universal, &consts, next, &mut Map::new(), &mut |m1, next| {
            null_choices(&a.existential, next, &mut m1.clone(), &mut |h1, next| {
                let body1 = img(h1, &a.body);
                let head1 = img(h1, &a.head);
                let exist1: BTreeSet<Term> = a.existential.iter().map(|z| h1[z].clone()).collect();
                let ib0: BTreeSet<Atom> = ia.iter().chain(&body1).chain(&head1).cloned().collect();
                let mut pool: Vec<Term> = terms_of(&ib0).into_iter().chain(consts.iter().cloned()).collect();
                pool.extend((0..exist2_nulls.len() as u64).map(|k| Term::Null(next + k)));
                pool.sort();
                pool.dedup();
                functions(&exist2_nulls, &pool, &mut Map::new(), &mut |alt| {
                    let alt_img = img(alt, &head2.iter().cloned().collect::<Vec<_>>());
                    let alt_terms = terms_of(&alt_img);
                    let dropped: Vec<&Term> = exist2_nulls.iter().filter(|n| !alt_terms.contains(*n)).collect();
                    if dropped.is_empty() {
                        return true;
                    }
                    let ib: BTreeSet<Atom> = ib0.union(&alt_img).cloned().collect();
                    let rest: BTreeSet<Atom> = ib.difference(&head1).cloned().collect();
                    let jb: BTreeSet<Atom> = rest.union(&body1).cloned().collect();
                    let ok = ia.is_subset(&ib)
                        && terms_of(&jb).is_disjoint(&exist1)
                        && unsatisfied(&a, h1, &jb)
                        && !has_alternative(&b, &h2, &rest)
                        && generating(&a, h1, &ib)
                        && generating(&b, &h2, &ib);
                    if ok {
                        for (z, n) in b.existential.iter().zip(&exist2_nulls) {
                            if dropped.contains(&n) {
                                out.insert(b.original[z].clone());
                            }
                        }
                    }
                    out.len() < total
                })
            })
        })
    });
    out
}

/// Whether applying `r1` can create a new unsatisfied match of `r2`
/// (positive parts only).
pub fn oracle_positive(r1: &Rule, r2: &Rule) -> bool {
    let a = tag(r1, "1");
    let b = tag(r2, "2");
    let consts = rule_constants(&[r1, r2]);
    let mut found = false;
    assignments(&a.universal, &consts, 0, &mut Map::new(), &mut |m1, next| {
        let mut h1 = m1.clone();
        let mut next = next;
        let mut exist1 = BTreeSet::new();
        for z in &a.existential {
            h1.insert(z.clone(), Term::Null(next));
            exist1.insert(Term::Null(next));
            next += 1;
        }
        let body1 = img(&h1, &a.body);
        let head1 = img(&h1, &a.head);
        assignments(&b.universal, &consts, next, &mut Map::new(), &mut |h2, _| {
            let body2 = img(h2, &b.body);
            let ia: BTreeSet<Atom> = body1.iter().chain(body2.difference(&head1)).cloned().collect();
            let ib: BTreeSet<Atom> = ia.union(&head1).cloned().collect();
            let ok = terms_of(&ia).is_disjoint(&exist1)
                && unsatisfied(&a, &h1, &ia)
                && unsatisfied(&b, h2, &ib)
                && !body2.is_subset(&ia);
            if ok {
                found = true;
            }
            !found
        })
    });
    found
}

/// Whether applying `r1` can derive a negated atom of an earlier match of
/// `r2` that was generating without it.
pub fn oracle_negative(r1: &Rule, r2: &Rule) -> bool {
    let a = tag(r1, "1");
    let b = tag(r2, "2");
    if b.negative.is_empty() {
        return false;
    }
    let consts = rule_constants(&[r1, r2]);
    let mut found = false;
    assignments(&b.universal, &consts, 0, &mut Map::new(), &mut |m2, next| {
        let mut h2 = m2.clone();
        let ja = img(&h2, &b.body);
        if !unsatisfied(&b, &h2, &ja) {
            return true;
        }
        let mut next = next;
        for z in &b.existential {
            h2.insert(z.clone(), Term::Null(next));
            next += 1;
        }
        let ia: BTreeSet<Atom> = ja.union(&img(&h2, &b.head)).cloned().collect();
        let negated = img(&h2, &b.negative);
        assignments(&a.universal, &consts, next, &mut Map::new(), &mut |m1, next| {
            null_choices(&a.existential, next, &mut m1.clone(), &mut |h1, _| {
                let body1 = img(h1, &a.body);
                let head1 = img(h1, &a.head);
                let exist1: BTreeSet<Term> = a.existential.iter().map(|z| h1[z].clone()).collect();
                let ib: BTreeSet<Atom> = ia.iter().chain(&body1).chain(&head1).cloned().collect();
                let rest: BTreeSet<Atom> = ib.difference(&head1).cloned().collect();
                let jb: BTreeSet<Atom> = rest.union(&body1).cloned().collect();
                let ok = terms_of(&jb).is_disjoint(&exist1)
                    && unsatisfied(&a, h1, &jb)
                    && negated.iter().any(|x| ib.contains(x))
                    && negated.iter().all(|x| !rest.contains(x));
                if ok {
                    found = true;
                }
                !found
            })
        })
    });
    found
}
