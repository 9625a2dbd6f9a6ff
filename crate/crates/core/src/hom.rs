//! Homomorphism search, classification and core computation.
//!
//! The search is a plain backtracking matcher over atoms. Atoms are ordered
//! once, greedily preferring atoms whose arguments are already bound, and the
//! candidate tuples of every atom are visited in lexicographic order, so the
//! first homomorphism found is deterministic for fixed inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::ControlFlow;

use thiserror::Error;

use crate::model::{Atom, Interpretation, Symbol, Term};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HomError {
    #[error("no homomorphism exists from the core candidate into the model")]
    NoHomomorphism,
    #[error("the homomorphism into the model is not an embedding")]
    NotAnEmbedding,
}

/// A term mapping. Terms without an entry are mapped to themselves, which is
/// always the case for constants.
#[derive(Debug, Clone, PartialEq, Eq, Default, Hash, PartialOrd, Ord)]
pub struct Homomorphism {
    pub mapping: BTreeMap<Term, Term>,
}

impl Homomorphism {
    pub fn identity() -> Homomorphism {
        Homomorphism::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Term, Term)>) -> Homomorphism {
        Homomorphism {
            mapping: pairs.into_iter().collect(),
        }
    }

    pub fn image(&self, t: &Term) -> Term {
        self.mapping.get(t).cloned().unwrap_or_else(|| t.clone())
    }

    pub fn apply(&self, atom: &Atom) -> Atom {
        atom.apply(&self.mapping)
    }

    /// `self` after `inner`: `t -> self(inner(t))`.
    pub fn compose(&self, inner: &Homomorphism) -> Homomorphism {
        let mut mapping: BTreeMap<Term, Term> = inner
            .mapping
            .iter()
            .map(|(k, v)| (k.clone(), self.image(v)))
            .collect();
        for (k, v) in &self.mapping {
            mapping.entry(k.clone()).or_insert_with(|| v.clone());
        }
        Homomorphism { mapping }
    }

    /// Restriction to a set of source terms.
    pub fn restrict<'a>(&self, terms: impl IntoIterator<Item = &'a Term>) -> Homomorphism {
        Homomorphism {
            mapping: terms
                .into_iter()
                .filter_map(|t| self.mapping.get(t).map(|v| (t.clone(), v.clone())))
                .collect(),
        }
    }

    /// True if this maps every atom of `source` into `target`, fixing constants.
    pub fn is_homomorphism(&self, source: &[Atom], target: &Interpretation) -> bool {
        self.mapping
            .iter()
            .all(|(k, v)| !k.is_constant() || k == v)
            && source.iter().all(|a| target.contains(&self.apply(a)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum HomClass {
    Plain,
    Strong,
    Embedding,
    Isomorphism,
}

#[derive(Debug, Clone)]
enum Slot {
    Fixed(Term),
    Var(usize),
}

#[derive(Debug, Clone)]
struct Pattern {
    predicate: Symbol,
    slots: Vec<Slot>,
}

impl Pattern {
    fn instantiate(&self, binding: &[Option<Term>]) -> Option<Vec<Term>> {
        self.slots
            .iter()
            .map(|s| match s {
                Slot::Fixed(t) => Some(t.clone()),
                Slot::Var(i) => binding[*i].clone(),
            })
            .collect()
    }
}

type TermFilter<'a> = dyn Fn(&Term, &Term) -> bool + 'a;

/// A compiled homomorphism search problem.
pub(crate) struct Matcher<'a> {
    vars: Vec<Term>,
    plan: Vec<Pattern>,
    /// Forbidden patterns grouped by the plan depth after which they are fully bound.
    forbidden_at: Vec<Vec<Pattern>>,
    target: &'a Interpretation,
    excluded: Option<&'a Atom>,
    injective: bool,
    source_constants: BTreeSet<Term>,
    filter: Option<&'a TermFilter<'a>>,
    fixed: BTreeMap<Term, Term>,
}

impl<'a> Matcher<'a> {
    pub(crate) fn new(
        source: &[Atom],
        target: &'a Interpretation,
        fixed: &BTreeMap<Term, Term>,
        forbidden: &[Atom],
    ) -> Matcher<'a> {
        let mut var_index: BTreeMap<Term, usize> = BTreeMap::new();
        let mut vars = Vec::new();
        let mut uniq = BTreeSet::new();
        let source: Vec<&Atom> = source.iter().filter(|a| uniq.insert(*a)).collect();
        let compiled: Vec<Pattern> = source
            .iter()
            .map(|a| compile(a, fixed, &mut var_index, Some(&mut vars)))
            .collect();
        let plan = order_plan(compiled, vars.len(), target);
        // Depth at which each variable becomes bound.
        let mut bound_at = vec![usize::MAX; vars.len()];
        for (depth, p) in plan.iter().enumerate() {
            for s in &p.slots {
                if let Slot::Var(i) = s {
                    if bound_at[*i] == usize::MAX {
                        bound_at[*i] = depth + 1;
                    }
                }
            }
        }
        let mut forbidden_at = vec![Vec::new(); plan.len() + 1];
        for a in forbidden {
            let p = compile(a, fixed, &mut var_index, None);
            let depth = p
                .slots
                .iter()
                .map(|s| match s {
                    Slot::Var(i) => bound_at[*i],
                    Slot::Fixed(_) => 0,
                })
                .max()
                .unwrap_or(0);
            forbidden_at[depth].push(p);
        }
        let source_constants = source
            .iter()
            .flat_map(|a| a.args.iter())
            .filter(|t| t.is_constant())
            .cloned()
            .collect();
        Matcher {
            vars,
            plan,
            forbidden_at,
            target,
            excluded: None,
            injective: false,
            source_constants,
            filter: None,
            fixed: fixed.clone(),
        }
    }

    /// Never map onto this target atom.
    pub(crate) fn excluding(mut self, atom: &'a Atom) -> Self {
        self.excluded = Some(atom);
        self
    }

    /// Distinct source terms must receive distinct images.
    pub(crate) fn injective(mut self) -> Self {
        self.injective = true;
        self
    }

    /// Restricts which target terms a source term may be mapped to.
    pub(crate) fn with_filter(mut self, filter: &'a TermFilter<'a>) -> Self {
        self.filter = Some(filter);
        self
    }

    fn to_hom(&self, binding: &[Option<Term>]) -> Homomorphism {
        let mut mapping = self.fixed.clone();
        for (t, b) in self.vars.iter().zip(binding) {
            if let Some(b) = b {
                mapping.insert(t.clone(), b.clone());
            }
        }
        Homomorphism { mapping }
    }

    /// Visits every homomorphism in search order until the visitor breaks.
    pub(crate) fn for_each(&self, mut visit: impl FnMut(Homomorphism) -> ControlFlow<()>) {
        let mut binding = vec![None; self.vars.len()];
        let mut used = BTreeSet::new();
        if !self.forbidden_ok(0, &binding) {
            return;
        }
        let _ = self.search(0, &mut binding, &mut used, &mut |b| visit(self.to_hom(b)));
    }

    pub(crate) fn first(&self) -> Option<Homomorphism> {
        let mut found = None;
        self.for_each(|h| {
            found = Some(h);
            ControlFlow::Break(())
        });
        found
    }

    pub(crate) fn all(&self) -> Vec<Homomorphism> {
        let mut out = Vec::new();
        self.for_each(|h| {
            out.push(h);
            ControlFlow::Continue(())
        });
        out
    }

    pub(crate) fn exists(&self) -> bool {
        self.first().is_some()
    }

    fn forbidden_ok(&self, depth: usize, binding: &[Option<Term>]) -> bool {
        self.forbidden_at[depth].iter().all(|p| match p.instantiate(binding) {
            Some(args) => !self.target.contains_args(&p.predicate, &args),
            None => true,
        })
    }

    fn search(
        &self,
        depth: usize,
        binding: &mut Vec<Option<Term>>,
        used: &mut BTreeSet<Term>,
        visit: &mut dyn FnMut(&[Option<Term>]) -> ControlFlow<()>,
    ) -> ControlFlow<()> {
        let Some(pattern) = self.plan.get(depth) else {
            return visit(binding);
        };
        let Some(rel) = self.target.relation(&pattern.predicate) else {
            return ControlFlow::Continue(());
        };
        let lead = match pattern.slots.first() {
            Some(Slot::Fixed(t)) => Some(t.clone()),
            Some(Slot::Var(i)) => binding[*i].clone(),
            None => None,
        };
        let candidates: Box<dyn Iterator<Item = &Vec<Term>>> = match lead {
            Some(t) => {
                let start = vec![t.clone()];
                Box::new(rel.range(start..).take_while(move |args| args[0] == t))
            }
            None => Box::new(rel.iter()),
        };
        let mut newly: Vec<usize> = Vec::with_capacity(pattern.slots.len());
        for args in candidates {
            if args.len() != pattern.slots.len() {
                continue;
            }
            if let Some(ex) = self.excluded {
                if ex.predicate == pattern.predicate && &ex.args == args {
                    continue;
                }
            }
            newly.clear();
            let mut ok = true;
            for (slot, value) in pattern.slots.iter().zip(args) {
                match slot {
                    Slot::Fixed(t) => {
                        if t != value {
                            ok = false;
                        }
                    }
                    Slot::Var(i) => match &binding[*i] {
                        Some(b) => {
                            if b != value {
                                ok = false;
                            }
                        }
                        None => {
                            if let Some(f) = self.filter {
                                if !f(&self.vars[*i], value) {
                                    ok = false;
                                }
                            }
                            if ok && self.injective
                                && (used.contains(value) || self.source_constants.contains(value))
                            {
                                ok = false;
                            }
                            if ok {
                                binding[*i] = Some(value.clone());
                                if self.injective {
                                    used.insert(value.clone());
                                }
                                newly.push(*i);
                            }
                        }
                    },
                }
                if !ok {
                    break;
                }
            }
            if ok && self.forbidden_ok(depth + 1, binding) {
                if let ControlFlow::Break(()) = self.search(depth + 1, binding, used, visit) {
                    return ControlFlow::Break(());
                }
            }
            for &i in &newly {
                if self.injective {
                    if let Some(v) = &binding[i] {
                        used.remove(v);
                    }
                }
                binding[i] = None;
            }
        }
        ControlFlow::Continue(())
    }
}

/// Compiles an atom into slots. With `vars` given, unseen mappable terms are
/// registered as new variables; otherwise they are kept as literals.
fn compile(
    a: &Atom,
    fixed: &BTreeMap<Term, Term>,
    var_index: &mut BTreeMap<Term, usize>,
    mut vars: Option<&mut Vec<Term>>,
) -> Pattern {
    let slots = a
        .args
        .iter()
        .map(|t| {
            if t.is_constant() {
                return Slot::Fixed(t.clone());
            }
            if let Some(v) = fixed.get(t) {
                return Slot::Fixed(v.clone());
            }
            if let Some(&i) = var_index.get(t) {
                return Slot::Var(i);
            }
            match vars.as_deref_mut() {
                Some(vars) => {
                    let i = vars.len();
                    vars.push(t.clone());
                    var_index.insert(t.clone(), i);
                    Slot::Var(i)
                }
                None => Slot::Fixed(t.clone()),
            }
        })
        .collect();
    Pattern {
        predicate: a.predicate.clone(),
        slots,
    }
}

/// Greedy static ordering: next is the atom with the most already-bound
/// slots, then the smallest candidate relation, then source order.
fn order_plan(mut patterns: Vec<Pattern>, nvars: usize, target: &Interpretation) -> Vec<Pattern> {
    let mut bound = vec![false; nvars];
    let mut plan = Vec::with_capacity(patterns.len());
    while !patterns.is_empty() {
        let mut best = 0;
        let mut best_key = (0usize, usize::MAX);
        for (i, p) in patterns.iter().enumerate() {
            let bound_slots = p
                .slots
                .iter()
                .filter(|s| match s {
                    Slot::Fixed(_) => true,
                    Slot::Var(v) => bound[*v],
                })
                .count();
            let size = target.relation(&p.predicate).map_or(0, |r| r.len());
            let key = (bound_slots, size);
            if i == 0 || key.0 > best_key.0 || (key.0 == best_key.0 && key.1 < best_key.1) {
                best = i;
                best_key = key;
            }
        }
        let p = patterns.remove(best);
        for s in &p.slots {
            if let Slot::Var(v) = s {
                bound[*v] = true;
            }
        }
        plan.push(p);
    }
    plan
}

/// Finds a homomorphism `h ⊇ fixed` from `source` into `target` such that no
/// atom of `forbidden` is mapped into `target`.
pub fn find_match(
    source: &[Atom],
    target: &Interpretation,
    fixed: &BTreeMap<Term, Term>,
    forbidden: &[Atom],
) -> Option<Homomorphism> {
    Matcher::new(source, target, fixed, forbidden).first()
}

/// All homomorphisms from `source` into `target`, in search order.
pub fn enumerate_homs(source: &[Atom], target: &Interpretation) -> Vec<Homomorphism> {
    Matcher::new(source, target, &BTreeMap::new(), &[]).all()
}

/// True if some homomorphism maps `source` into `target`.
pub fn hom_exists(source: &Interpretation, target: &Interpretation) -> bool {
    Matcher::new(&source.to_vec(), target, &BTreeMap::new(), &[]).exists()
}

pub fn homomorphically_equivalent(a: &Interpretation, b: &Interpretation) -> bool {
    hom_exists(a, b) && hom_exists(b, a)
}

fn source_terms(source: &[Atom]) -> BTreeSet<Term> {
    source.iter().flat_map(|a| a.args.iter().cloned()).collect()
}

/// Classifies a (valid) homomorphism from `source` into `target`.
pub fn classify_hom(h: &Homomorphism, source: &[Atom], target: &Interpretation) -> HomClass {
    debug_assert!(h.is_homomorphism(source, target));
    let terms = source_terms(source);
    let source_set: BTreeSet<&Atom> = source.iter().collect();
    let mut preimages: BTreeMap<Term, Vec<Term>> = BTreeMap::new();
    for t in &terms {
        preimages.entry(h.image(t)).or_default().push(t.clone());
    }
    // Strong: every target atom over image terms has all its preimages in source.
    let strong = target.atoms().all(|a| {
        let lists: Option<Vec<&Vec<Term>>> = a.args.iter().map(|t| preimages.get(t)).collect();
        let Some(lists) = lists else {
            return true;
        };
        let mut ok = true;
        for_each_product(&lists, &mut |args| {
            let pre = Atom {
                predicate: a.predicate.clone(),
                args: args.to_vec(),
            };
            if !source_set.contains(&pre) {
                ok = false;
                return ControlFlow::Break(());
            }
            ControlFlow::Continue(())
        });
        ok
    });
    if !strong {
        return HomClass::Plain;
    }
    let injective = preimages.len() == terms.len();
    if !injective {
        return HomClass::Strong;
    }
    if preimages.len() == target.terms().len() {
        HomClass::Isomorphism
    } else {
        HomClass::Embedding
    }
}

fn for_each_product(lists: &[&Vec<Term>], visit: &mut dyn FnMut(&[Term]) -> ControlFlow<()>) {
    fn go(
        lists: &[&Vec<Term>],
        acc: &mut Vec<Term>,
        visit: &mut dyn FnMut(&[Term]) -> ControlFlow<()>,
    ) -> ControlFlow<()> {
        if acc.len() == lists.len() {
            return visit(acc);
        }
        for t in lists[acc.len()] {
            acc.push(t.clone());
            go(lists, acc, visit)?;
            acc.pop();
        }
        ControlFlow::Continue(())
    }
    let _ = go(lists, &mut Vec::new(), visit);
}

/// Groups the atoms containing nulls into blocks connected through shared
/// nulls. Homomorphisms that fix constants act independently on blocks.
fn null_blocks(i: &Interpretation) -> Vec<Vec<Atom>> {
    let atoms: Vec<Atom> = i.atoms().filter(|a| a.nulls().next().is_some()).collect();
    let mut parent: Vec<usize> = (0..atoms.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut owner: BTreeMap<u64, usize> = BTreeMap::new();
    for (idx, a) in atoms.iter().enumerate() {
        for n in a.nulls() {
            match owner.get(&n) {
                Some(&o) => {
                    let (ra, rb) = (find(&mut parent, o), find(&mut parent, idx));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
                None => {
                    owner.insert(n, idx);
                }
            }
        }
    }
    let mut blocks: BTreeMap<usize, Vec<Atom>> = BTreeMap::new();
    for (idx, a) in atoms.iter().enumerate() {
        let r = find(&mut parent, idx);
        blocks.entry(r).or_default().push(a.clone());
    }
    blocks.into_values().collect()
}

/// Computes the core of a finite interpretation together with a retraction
/// `h: I -> core`.
///
/// Repeatedly looks for a block of null-connected atoms that maps into the
/// instance while avoiding one of its own atoms; such a map extends (by the
/// identity elsewhere) to an endomorphism with a strictly smaller image.
pub fn core_with_retraction(i: &Interpretation) -> (Interpretation, Homomorphism) {
    let mut current = i.clone();
    let mut retraction = Homomorphism::identity();
    'outer: loop {
        for block in null_blocks(&current) {
            for alpha in &block {
                let found = Matcher::new(&block, &current, &BTreeMap::new(), &[])
                    .excluding(alpha)
                    .first();
                if let Some(h) = found {
                    for a in &block {
                        current.remove(a);
                    }
                    for a in &block {
                        current.insert(h.apply(a));
                    }
                    retraction = h.compose(&retraction);
                    continue 'outer;
                }
            }
        }
        break;
    }
    let terms = i.terms();
    (current, retraction.restrict(terms.iter().filter(|t| t.is_null())))
}

/// The core of a finite interpretation: a subset that `I` maps onto and whose
/// endomorphisms are all isomorphisms.
pub fn core_of(i: &Interpretation) -> Interpretation {
    core_with_retraction(i).0
}

/// True if every endomorphism of `i` is an isomorphism. Exhaustive; only use
/// on small instances.
pub fn is_core_exhaustive(i: &Interpretation) -> bool {
    let atoms = i.to_vec();
    enumerate_homs(&atoms, i)
        .iter()
        .all(|h| classify_hom(h, &atoms, i) == HomClass::Isomorphism)
}

/// Embeds a core model `c` into a universal model `u`; the image is the core
/// instance of `u`.
pub fn find_core_embedding(c: &Interpretation, u: &Interpretation) -> Result<Homomorphism, HomError> {
    let atoms = c.to_vec();
    let h = find_match(&atoms, u, &BTreeMap::new(), &[]).ok_or(HomError::NoHomomorphism)?;
    match classify_hom(&h, &atoms, u) {
        HomClass::Embedding | HomClass::Isomorphism => Ok(h),
        _ => Err(HomError::NotAnEmbedding),
    }
}

/// Multiset of (predicate, position) occurrences of a term.
fn degree_signature(i: &Interpretation) -> BTreeMap<Term, Vec<(Symbol, usize)>> {
    let mut sig: BTreeMap<Term, Vec<(Symbol, usize)>> = BTreeMap::new();
    for a in i.atoms() {
        for (pos, t) in a.args.iter().enumerate() {
            if t.is_null() {
                sig.entry(t.clone()).or_default().push((a.predicate.clone(), pos));
            }
        }
    }
    for v in sig.values_mut() {
        v.sort();
    }
    sig
}

/// Decides whether two finite interpretations are isomorphic.
pub fn is_isomorphic(i: &Interpretation, j: &Interpretation) -> bool {
    if i.len() != j.len() {
        return false;
    }
    let (ni, nj) = (i.nulls(), j.nulls());
    if ni.len() != nj.len() {
        return false;
    }
    // Null-free atoms are fixed by every homomorphism.
    let ground_i: Vec<Atom> = i.atoms().filter(|a| a.nulls().next().is_none()).collect();
    if ground_i.iter().any(|a| !j.contains(a)) {
        return false;
    }
    if j.atoms().filter(|a| a.nulls().next().is_none()).count() != ground_i.len() {
        return false;
    }
    let (si, sj) = (degree_signature(i), degree_signature(j));
    let mut di: Vec<_> = si.values().collect();
    let mut dj: Vec<_> = sj.values().collect();
    di.sort();
    dj.sort();
    if di != dj {
        return false;
    }
    let filter = |src: &Term, dst: &Term| dst.is_null() && si.get(src) == sj.get(dst);
    let block: Vec<Atom> = i.atoms().filter(|a| a.nulls().next().is_some()).collect();
    // Injective on nulls, null-to-null and |I| = |J|: the map is a bijection
    // on atoms and terms, hence strong.
    Matcher::new(&block, j, &BTreeMap::new(), &[])
        .injective()
        .with_filter(&filter)
        .exists()
}
