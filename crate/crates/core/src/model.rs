//! Logical syntax: terms, atoms, rules (plain and normal), queries and
//! interpretations.
//!
//! Everything here is immutable once constructed. Constructors validate their
//! input, so a [`Rule`] or [`Query`] value always satisfies its safety
//! conditions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Interned-ish symbol used for predicates, constants and variable names.
pub type Symbol = Arc<str>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("rule {rule}: frontier variable {var} does not occur in the positive body")]
    UnsafeFrontier { rule: String, var: String },
    #[error("{owner}: variable {var} of a negated atom does not occur in a positive atom")]
    UnsafeNegation { owner: String, var: String },
    #[error("rule {rule}: existential variable {var} occurs in the body")]
    ExistentialInBody { rule: String, var: String },
    #[error("predicate {predicate} used with arity {found}, but its arity is {expected}")]
    ArityMismatch {
        predicate: String,
        expected: usize,
        found: usize,
    },
    #[error("{owner}: null {null} may not occur in rules or queries")]
    NullInSyntax { owner: String, null: String },
    #[error("query {query} is trivial: atom {atom} occurs both positively and negatively")]
    TrivialQuery { query: String, atom: String },
    #[error("atom {0} contains a variable and cannot be part of an interpretation")]
    VariableInInterpretation(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Constant(Symbol),
    Null(u64),
    Variable(Symbol),
}

impl Term {
    pub fn constant(name: &str) -> Term {
        Term::Constant(Arc::from(name))
    }

    pub fn variable(name: &str) -> Term {
        Term::Variable(Arc::from(name))
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Term::Constant(_))
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Term::Null(_))
    }

    pub fn is_variable(&self) -> bool {
        matches!(self, Term::Variable(_))
    }

    /// Variables and nulls; the terms a homomorphism may move.
    pub fn is_mappable(&self) -> bool {
        !self.is_constant()
    }

    /// Rendering used in fact dumps and traces, where upper-case constants
    /// stay bare because no variables can occur.
    pub fn fact_form(&self) -> String {
        match self {
            Term::Constant(c) if is_bare_fact_constant(c) => c.to_string(),
            Term::Constant(c) => quote(c),
            other => other.to_string(),
        }
    }
}

/// True if `name` can be written without quotes in the surface syntax.
pub(crate) fn is_bare_constant(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() || c.is_ascii_digit() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Constants that need no quoting inside a `.facts` file, where there are no
/// variables and upper-case identifiers are read as constants.
pub(crate) fn is_bare_fact_constant(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub(crate) fn quote(name: &str) -> String {
    let mut out = String::with_capacity(name.len() + 2);
    out.push('"');
    for c in name.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out.push('"');
    out
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Constant(c) if is_bare_constant(c) => write!(f, "{c}"),
            Term::Constant(c) => write!(f, "{}", quote(c)),
            Term::Null(n) => write!(f, "_:n{n}"),
            Term::Variable(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub predicate: Symbol,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(predicate: &str, args: Vec<Term>) -> Atom {
        Atom {
            predicate: Arc::from(predicate),
            args,
        }
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = &Term> {
        self.args.iter()
    }

    pub fn variables(&self) -> impl Iterator<Item = &Symbol> {
        self.args.iter().filter_map(|t| match t {
            Term::Variable(v) => Some(v),
            _ => None,
        })
    }

    pub fn nulls(&self) -> impl Iterator<Item = u64> + '_ {
        self.args.iter().filter_map(|t| match t {
            Term::Null(n) => Some(*n),
            _ => None,
        })
    }

    pub fn is_variable_free(&self) -> bool {
        !self.args.iter().any(Term::is_variable)
    }

    pub fn apply(&self, map: &BTreeMap<Term, Term>) -> Atom {
        Atom {
            predicate: self.predicate.clone(),
            args: self
                .args
                .iter()
                .map(|t| map.get(t).cloned().unwrap_or_else(|| t.clone()))
                .collect(),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.predicate)?;
        for (i, t) in self.args.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{t}")?;
        }
        write!(f, ")")
    }
}

/// Predicate arities, fixed at first use.
#[derive(Debug, Clone, Default)]
pub struct Signature {
    arities: BTreeMap<Symbol, usize>,
}

impl Signature {
    pub fn new() -> Signature {
        Signature::default()
    }

    pub fn register(&mut self, atom: &Atom) -> Result<(), ModelError> {
        match self.arities.get(&atom.predicate) {
            Some(&expected) if expected != atom.arity() => Err(ModelError::ArityMismatch {
                predicate: atom.predicate.to_string(),
                expected,
                found: atom.arity(),
            }),
            Some(_) => Ok(()),
            None => {
                self.arities.insert(atom.predicate.clone(), atom.arity());
                Ok(())
            }
        }
    }

    pub fn arity(&self, predicate: &str) -> Option<usize> {
        self.arities.get(predicate).copied()
    }

    pub fn predicates(&self) -> impl Iterator<Item = (&Symbol, usize)> {
        self.arities.iter().map(|(p, a)| (p, *a))
    }
}

fn dedup_atoms(atoms: Vec<Atom>) -> Vec<Atom> {
    let mut seen = BTreeSet::new();
    atoms.into_iter().filter(|a| seen.insert(a.clone())).collect()
}

fn vars_of<'a>(atoms: impl IntoIterator<Item = &'a Atom>) -> BTreeSet<Symbol> {
    atoms
        .into_iter()
        .flat_map(|a| a.variables().cloned())
        .collect()
}

/// The frontier/existential split computed by [`validate_rule`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariablePartition {
    pub frontier: BTreeSet<Symbol>,
    pub existential: BTreeSet<Symbol>,
}

/// An existential rule, possibly with negated body atoms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    id: String,
    body_positive: Vec<Atom>,
    body_negative: Vec<Atom>,
    head: Vec<Atom>,
    frontier: BTreeSet<Symbol>,
    existential: BTreeSet<Symbol>,
}

impl Rule {
    /// Builds a rule whose existential variables are exactly the head
    /// variables missing from the positive body.
    pub fn new(
        id: impl Into<String>,
        body_positive: Vec<Atom>,
        body_negative: Vec<Atom>,
        head: Vec<Atom>,
    ) -> Result<Rule, ModelError> {
        let body_vars = vars_of(&body_positive);
        let existential: BTreeSet<Symbol> = vars_of(&head)
            .into_iter()
            .filter(|v| !body_vars.contains(v))
            .collect();
        Rule::with_existentials(id, body_positive, body_negative, head, existential)
    }

    /// Builds a rule with an explicitly quantified set of existential
    /// variables; every other head variable must be bound by the body.
    pub fn with_existentials(
        id: impl Into<String>,
        body_positive: Vec<Atom>,
        body_negative: Vec<Atom>,
        head: Vec<Atom>,
        existential: BTreeSet<Symbol>,
    ) -> Result<Rule, ModelError> {
        let mut rule = Rule {
            id: id.into(),
            body_positive: dedup_atoms(body_positive),
            body_negative: dedup_atoms(body_negative),
            head: dedup_atoms(head),
            frontier: BTreeSet::new(),
            existential,
        };
        let partition = validate_rule(&rule)?;
        rule.frontier = partition.frontier;
        rule.existential = partition.existential;
        Ok(rule)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn body_positive(&self) -> &[Atom] {
        &self.body_positive
    }

    pub fn body_negative(&self) -> &[Atom] {
        &self.body_negative
    }

    pub fn head(&self) -> &[Atom] {
        &self.head
    }

    pub fn frontier(&self) -> &BTreeSet<Symbol> {
        &self.frontier
    }

    pub fn existential(&self) -> &BTreeSet<Symbol> {
        &self.existential
    }

    pub fn is_plain(&self) -> bool {
        self.body_negative.is_empty()
    }

    pub fn is_datalog(&self) -> bool {
        self.is_plain() && self.existential.is_empty()
    }

    /// Variables occurring in the positive body.
    pub fn universal(&self) -> BTreeSet<Symbol> {
        vars_of(&self.body_positive)
    }

    pub fn variables(&self) -> BTreeSet<Symbol> {
        vars_of(
            self.body_positive
                .iter()
                .chain(&self.body_negative)
                .chain(&self.head),
        )
    }

    pub fn atoms(&self) -> impl Iterator<Item = &Atom> {
        self.body_positive
            .iter()
            .chain(&self.body_negative)
            .chain(&self.head)
    }

    pub fn constants(&self) -> BTreeSet<Symbol> {
        self.atoms()
            .flat_map(|a| a.terms())
            .filter_map(|t| match t {
                Term::Constant(c) => Some(c.clone()),
                _ => None,
            })
            .collect()
    }

    /// The rule with its negated body dropped.
    pub fn positive_part(&self) -> Rule {
        Rule {
            body_negative: Vec::new(),
            ..self.clone()
        }
    }

    #[cfg(test)]
    pub(crate) fn with_id(&self, id: String) -> Rule {
        Rule { id, ..self.clone() }
    }

    /// Applies a variable renaming to every atom of the rule.
    pub fn rename(&self, renaming: &BTreeMap<Symbol, Symbol>) -> Rule {
        let map: BTreeMap<Term, Term> = renaming
            .iter()
            .map(|(a, b)| (Term::Variable(a.clone()), Term::Variable(b.clone())))
            .collect();
        let rename_set = |set: &BTreeSet<Symbol>| {
            set.iter()
                .map(|v| renaming.get(v).cloned().unwrap_or_else(|| v.clone()))
                .collect()
        };
        Rule {
            id: self.id.clone(),
            body_positive: self.body_positive.iter().map(|a| a.apply(&map)).collect(),
            body_negative: self.body_negative.iter().map(|a| a.apply(&map)).collect(),
            head: self.head.iter().map(|a| a.apply(&map)).collect(),
            frontier: rename_set(&self.frontier),
            existential: rename_set(&self.existential),
        }
    }
}

fn write_atoms(f: &mut fmt::Formatter<'_>, atoms: &[Atom], negated: bool, mut first: bool) -> fmt::Result {
    for a in atoms {
        if !first {
            write!(f, ", ")?;
        }
        first = false;
        if negated {
            write!(f, "~")?;
        }
        write!(f, "{a}")?;
    }
    Ok(())
}

impl fmt::Display for Rule {
    /// Surface syntax: `head :- body, ~negated .`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_atoms(f, &self.head, false, true)?;
        write!(f, " :- ")?;
        write_atoms(f, &self.body_positive, false, true)?;
        write_atoms(f, &self.body_negative, true, self.body_positive.is_empty())?;
        write!(f, " .")
    }
}

fn check_no_nulls<'a>(owner: &str, atoms: impl IntoIterator<Item = &'a Atom>) -> Result<(), ModelError> {
    for a in atoms {
        if let Some(n) = a.nulls().next() {
            return Err(ModelError::NullInSyntax {
                owner: owner.to_string(),
                null: Term::Null(n).to_string(),
            });
        }
    }
    Ok(())
}

fn check_local_arities<'a>(atoms: impl IntoIterator<Item = &'a Atom>) -> Result<(), ModelError> {
    let mut sig = Signature::new();
    atoms.into_iter().try_for_each(|a| sig.register(a))
}

/// Checks the safety conditions of a rule and returns its variable partition.
pub fn validate_rule(rule: &Rule) -> Result<VariablePartition, ModelError> {
    let owner = format!("rule {}", rule.id);
    check_no_nulls(&owner, rule.atoms())?;
    check_local_arities(rule.atoms())?;
    let body_vars = vars_of(&rule.body_positive);
    if let Some(v) = rule.existential.iter().find(|v| body_vars.contains(*v)) {
        return Err(ModelError::ExistentialInBody {
            rule: rule.id.clone(),
            var: v.to_string(),
        });
    }
    let head_vars = vars_of(&rule.head);
    let mut frontier = BTreeSet::new();
    for v in &head_vars {
        if rule.existential.contains(v) {
            continue;
        }
        if !body_vars.contains(v) {
            return Err(ModelError::UnsafeFrontier {
                rule: rule.id.clone(),
                var: v.to_string(),
            });
        }
        frontier.insert(v.clone());
    }
    if let Some(v) = vars_of(&rule.body_negative)
        .into_iter()
        .find(|v| !body_vars.contains(v))
    {
        return Err(ModelError::UnsafeNegation {
            owner,
            var: v.to_string(),
        });
    }
    // Existentials that never occur in the head are vacuous.
    let existential = rule
        .existential
        .iter()
        .filter(|v| head_vars.contains(*v))
        .cloned()
        .collect();
    Ok(VariablePartition {
        frontier,
        existential,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RuleSet {
    rules: Vec<Rule>,
    renamed_apart: bool,
}

impl RuleSet {
    pub fn new(rules: Vec<Rule>) -> RuleSet {
        let mut seen = BTreeSet::new();
        let renamed_apart = rules
            .iter()
            .all(|r| r.variables().into_iter().all(|v| seen.insert(v)));
        RuleSet {
            rules,
            renamed_apart,
        }
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn is_renamed_apart(&self) -> bool {
        self.renamed_apart
    }

    pub fn get(&self, id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.rules.iter().position(|r| r.id == id)
    }

    /// The sub-rule-set containing the given rule indices, in order.
    pub fn subset(&self, indices: &[usize]) -> RuleSet {
        RuleSet::new(indices.iter().map(|&i| self.rules[i].clone()).collect())
    }

    pub fn constants(&self) -> BTreeSet<Symbol> {
        self.rules.iter().flat_map(|r| r.constants()).collect()
    }
}

/// Renames variables so that no two rules share one. A variable `X` of the
/// rule at (1-based) position `i` becomes `X#i`.
pub fn rename_apart(rules: &RuleSet) -> RuleSet {
    if rules.renamed_apart {
        return rules.clone();
    }
    let renamed = rules
        .rules
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let renaming = r
                .variables()
                .into_iter()
                .map(|v| {
                    let fresh: Symbol = Arc::from(format!("{v}#{}", i + 1));
                    (v, fresh)
                })
                .collect();
            r.rename(&renaming)
        })
        .collect();
    RuleSet::new(renamed)
}

/// A normal Boolean conjunctive query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    name: String,
    positive: Vec<Atom>,
    negative: Vec<Atom>,
}

impl Query {
    pub fn new(name: impl Into<String>, positive: Vec<Atom>, negative: Vec<Atom>) -> Result<Query, ModelError> {
        let q = Query {
            name: name.into(),
            positive: dedup_atoms(positive),
            negative: dedup_atoms(negative),
        };
        validate_query(&q)?;
        Ok(q)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn positive(&self) -> &[Atom] {
        &self.positive
    }

    pub fn negative(&self) -> &[Atom] {
        &self.negative
    }

    pub fn is_bcq(&self) -> bool {
        self.negative.is_empty()
    }

    pub fn variables(&self) -> BTreeSet<Symbol> {
        vars_of(&self.positive)
    }

    pub fn negative_variables(&self) -> BTreeSet<Symbol> {
        vars_of(&self.negative)
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "?{} :- ", self.name)?;
        write_atoms(f, &self.positive, false, true)?;
        write_atoms(f, &self.negative, true, self.positive.is_empty())?;
        write!(f, " .")
    }
}

/// Checks query safety and non-triviality.
pub fn validate_query(q: &Query) -> Result<(), ModelError> {
    let owner = format!("query {}", q.name);
    check_no_nulls(&owner, q.positive.iter().chain(&q.negative))?;
    check_local_arities(q.positive.iter().chain(&q.negative))?;
    let pos_vars = vars_of(&q.positive);
    if let Some(v) = vars_of(&q.negative).into_iter().find(|v| !pos_vars.contains(v)) {
        return Err(ModelError::UnsafeNegation {
            owner,
            var: v.to_string(),
        });
    }
    if let Some(a) = q.negative.iter().find(|a| q.positive.contains(a)) {
        return Err(ModelError::TrivialQuery {
            query: q.name.clone(),
            atom: a.to_string(),
        });
    }
    Ok(())
}

/// A finite set of variable-free atoms, indexed by predicate.
#[derive(Debug, Clone, PartialEq, Eq, Default, Hash)]
pub struct Interpretation {
    relations: BTreeMap<Symbol, BTreeSet<Vec<Term>>>,
    len: usize,
}

impl Interpretation {
    pub fn new() -> Interpretation {
        Interpretation::default()
    }

    pub fn from_atoms(atoms: impl IntoIterator<Item = Atom>) -> Result<Interpretation, ModelError> {
        let mut i = Interpretation::new();
        for a in atoms {
            if !a.is_variable_free() {
                return Err(ModelError::VariableInInterpretation(a.to_string()));
            }
            i.insert(a);
        }
        Ok(i)
    }

    /// Inserts a variable-free atom; returns whether it was new.
    pub fn insert(&mut self, atom: Atom) -> bool {
        debug_assert!(atom.is_variable_free(), "variable in interpretation atom {atom}");
        let added = self
            .relations
            .entry(atom.predicate)
            .or_default()
            .insert(atom.args);
        if added {
            self.len += 1;
        }
        added
    }

    pub fn remove(&mut self, atom: &Atom) -> bool {
        let Some(rel) = self.relations.get_mut(&atom.predicate) else {
            return false;
        };
        let removed = rel.remove(&atom.args);
        if removed {
            self.len -= 1;
            if rel.is_empty() {
                self.relations.remove(&atom.predicate);
            }
        }
        removed
    }

    pub fn contains(&self, atom: &Atom) -> bool {
        self.contains_args(&atom.predicate, &atom.args)
    }

    pub fn contains_args(&self, predicate: &str, args: &[Term]) -> bool {
        self.relations
            .get(predicate)
            .is_some_and(|rel| rel.contains(args))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Tuples of one predicate, in lexicographic order.
    pub fn tuples(&self, predicate: &str) -> impl Iterator<Item = &Vec<Term>> {
        self.relations.get(predicate).into_iter().flatten()
    }

    pub(crate) fn relation(&self, predicate: &str) -> Option<&BTreeSet<Vec<Term>>> {
        self.relations.get(predicate)
    }

    /// All atoms, sorted by predicate and then arguments.
    pub fn atoms(&self) -> impl Iterator<Item = Atom> + '_ {
        self.relations.iter().flat_map(|(p, rel)| {
            rel.iter().map(move |args| Atom {
                predicate: p.clone(),
                args: args.clone(),
            })
        })
    }

    pub fn to_vec(&self) -> Vec<Atom> {
        self.atoms().collect()
    }

    pub fn predicates(&self) -> impl Iterator<Item = &Symbol> {
        self.relations.keys()
    }

    /// Every term occurring in some atom.
    pub fn terms(&self) -> BTreeSet<Term> {
        self.relations
            .values()
            .flatten()
            .flatten()
            .cloned()
            .collect()
    }

    /// The null pool: exactly the nulls occurring in atoms.
    pub fn nulls(&self) -> BTreeSet<u64> {
        self.relations
            .values()
            .flatten()
            .flatten()
            .filter_map(|t| match t {
                Term::Null(n) => Some(*n),
                _ => None,
            })
            .collect()
    }

    pub fn max_null(&self) -> Option<u64> {
        self.nulls().into_iter().next_back()
    }

    pub fn is_null_free(&self) -> bool {
        self.relations.values().flatten().flatten().all(|t| !t.is_null())
    }

    pub fn is_subset(&self, other: &Interpretation) -> bool {
        self.len <= other.len && self.atoms().all(|a| other.contains(&a))
    }

    pub fn union(&self, other: &Interpretation) -> Interpretation {
        let mut out = self.clone();
        out.extend(other.atoms());
        out
    }

    pub fn difference(&self, other: &Interpretation) -> Interpretation {
        let mut out = self.clone();
        for a in other.atoms() {
            out.remove(&a);
        }
        out
    }

    /// The image of the interpretation under a term mapping.
    pub fn apply(&self, map: &BTreeMap<Term, Term>) -> Interpretation {
        let mut out = Interpretation::new();
        for a in self.atoms() {
            out.insert(a.apply(map));
        }
        out
    }
}

impl Extend<Atom> for Interpretation {
    fn extend<T: IntoIterator<Item = Atom>>(&mut self, iter: T) {
        for a in iter {
            self.insert(a);
        }
    }
}

impl FromIterator<Atom> for Interpretation {
    fn from_iter<T: IntoIterator<Item = Atom>>(iter: T) -> Interpretation {
        let mut i = Interpretation::new();
        i.extend(iter);
        i
    }
}

impl fmt::Display for Interpretation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, a) in self.atoms().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, "}}")
    }
}

/// Session-scoped source of fresh nulls.
#[derive(Debug, Clone, Default)]
pub struct NullAllocator {
    next: u64,
}

impl NullAllocator {
    pub fn new() -> NullAllocator {
        NullAllocator::default()
    }

    /// Allocator whose first null is above every null of `instance`.
    pub fn above(instance: &Interpretation) -> NullAllocator {
        NullAllocator {
            next: instance.max_null().map_or(0, |n| n + 1),
        }
    }

    pub fn fresh(&mut self) -> Term {
        let n = self.next;
        self.next += 1;
        Term::Null(n)
    }

    pub fn peek(&self) -> u64 {
        self.next
    }
}
