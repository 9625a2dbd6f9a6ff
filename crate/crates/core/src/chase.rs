//! Chase engines for plain and normal rules.
//!
//! The agenda holds (rule, body match) pairs. Matches are enumerated once on
//! the input and then semi-naively, one batch of new atoms at a time and only
//! when the agenda runs dry, and re-validated when popped. The instance only
//! grows, so a match that is satisfied or blocked by a negated atom stays that
//! way and is dropped for good.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::ops::ControlFlow;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::analysis::dropped_by_alternatives;
use crate::hom::{Homomorphism, Matcher};
use crate::model::{Atom, Interpretation, NullAllocator, Rule, RuleSet, Symbol, Term};

pub const DEFAULT_MAX_STEPS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChaseVariant {
    Restricted,
    Skolem,
    Oblivious,
}

impl ChaseVariant {
    pub const ALL: [ChaseVariant; 3] = [ChaseVariant::Restricted, ChaseVariant::Skolem, ChaseVariant::Oblivious];

    pub fn name(self) -> &'static str {
        match self {
            ChaseVariant::Restricted => "restricted",
            ChaseVariant::Skolem => "skolem",
            ChaseVariant::Oblivious => "oblivious",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Fifo,
    DatalogFirst,
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Fifo, Strategy::DatalogFirst, Strategy::Random];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Fifo => "fifo",
            Strategy::DatalogFirst => "datalog-first",
            Strategy::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChaseConfig {
    pub variant: ChaseVariant,
    pub strategy: Strategy,
    pub seed: u64,
    pub max_steps: usize,
}

impl Default for ChaseConfig {
    fn default() -> Self {
        ChaseConfig {
            variant: ChaseVariant::Restricted,
            strategy: Strategy::DatalogFirst,
            seed: 0,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

impl ChaseConfig {
    pub fn new(variant: ChaseVariant, strategy: Strategy, seed: u64, max_steps: usize) -> ChaseConfig {
        ChaseConfig {
            variant,
            strategy,
            seed,
            max_steps: max_steps.max(1),
        }
    }

    pub fn restricted(self) -> ChaseConfig {
        ChaseConfig {
            variant: ChaseVariant::Restricted,
            ..self
        }
    }
}

/// One rule application.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChaseStep {
    /// 1-based; the step produces `D^index`.
    pub index: usize,
    pub rule_id: String,
    pub rule_index: usize,
    /// Match of the positive body.
    pub matched: Homomorphism,
    /// Match restricted to the frontier plus the existential assignment.
    pub extension: Homomorphism,
    pub introduced_nulls: BTreeSet<u64>,
    /// Existential variables whose fresh null already had an alternative
    /// match in `D^index`.
    pub redundant_on_arrival: BTreeSet<Symbol>,
}

impl fmt::Display for ChaseStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {}: rule {} match {{", self.index, self.rule_id)?;
        for (i, (k, v)) in self.matched.mapping.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{k}={}", v.fact_form())?;
        }
        write!(f, "}} new {{")?;
        for (i, n) in self.introduced_nulls.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "_:n{n}")?;
        }
        write!(f, "}}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChaseResult {
    pub instance: Interpretation,
    pub trace: Vec<ChaseStep>,
    pub terminated: bool,
    pub steps_used: usize,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ChaseError {
    #[error("chase did not terminate within {} steps", .0.steps_used)]
    StepLimitExceeded(Box<ChaseResult>),
}

impl ChaseError {
    pub fn partial(&self) -> &ChaseResult {
        match self {
            ChaseError::StepLimitExceeded(r) => r,
        }
    }
}

/// Images of the rule's universal variables, in sorted variable order.
type MatchKey = Vec<Term>;

struct CompiledRule<'a> {
    rule: &'a Rule,
    universal: Vec<Symbol>,
    frontier: Vec<Symbol>,
    projection: Vec<Symbol>,
    existential: Vec<Symbol>,
    datalog: bool,
}

impl<'a> CompiledRule<'a> {
    fn new(rule: &'a Rule) -> CompiledRule<'a> {
        CompiledRule {
            rule,
            universal: rule.universal().into_iter().collect(),
            frontier: rule.frontier().iter().cloned().collect(),
            projection: rule
                .frontier()
                .iter()
                .cloned()
                .chain(rule.body_negative().iter().flat_map(|a| a.variables().cloned()))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
            existential: rule.existential().iter().cloned().collect(),
            datalog: rule.existential().is_empty(),
        }
    }

    fn key(&self, h: &Homomorphism) -> MatchKey {
        self.universal
            .iter()
            .map(|v| h.image(&Term::Variable(v.clone())))
            .collect()
    }

    /// Images of the frontier and negated-body variables: matches agreeing on
    /// these are interchangeable for the restricted and Skolem variants.
    fn projection_key(&self, h: &Homomorphism) -> MatchKey {
        self.projection
            .iter()
            .map(|v| h.image(&Term::Variable(v.clone())))
            .collect()
    }

    fn frontier_key(&self, h: &Homomorphism) -> MatchKey {
        self.frontier
            .iter()
            .map(|v| h.image(&Term::Variable(v.clone())))
            .collect()
    }

    fn frontier_map(&self, h: &Homomorphism) -> BTreeMap<Term, Term> {
        self.frontier
            .iter()
            .map(|v| {
                let t = Term::Variable(v.clone());
                let img = h.image(&t);
                (t, img)
            })
            .collect()
    }
}

/// True if `h(body−(r)) ∩ I = ∅`.
pub fn negation_holds(rule: &Rule, h: &Homomorphism, instance: &Interpretation) -> bool {
    rule.body_negative().iter().all(|a| !instance.contains(&h.apply(a)))
}

/// True if `h` extends to a homomorphism from the head into `instance`.
pub fn is_satisfied(rule: &Rule, h: &Homomorphism, instance: &Interpretation) -> bool {
    let fixed: BTreeMap<Term, Term> = rule
        .frontier()
        .iter()
        .map(|v| {
            let t = Term::Variable(v.clone());
            let img = h.image(&t);
            (t, img)
        })
        .collect();
    Matcher::new(rule.head(), instance, &fixed, &[]).exists()
}

/// All matches of the positive body with no negated atom present.
pub fn matches(rule: &Rule, instance: &Interpretation) -> Vec<Homomorphism> {
    let mut out = Vec::new();
    Matcher::new(rule.body_positive(), instance, &BTreeMap::new(), &[]).for_each(|h| {
        if negation_holds(rule, &h, instance) {
            out.push(h);
        }
        ControlFlow::Continue(())
    });
    out
}

/// Matches the given variant could still apply. For the Skolem and
/// oblivious variants, applications already recorded in `trace` do not count.
pub fn applicable_matches(
    rule: &Rule,
    instance: &Interpretation,
    variant: ChaseVariant,
    trace: &[ChaseStep],
) -> Vec<Homomorphism> {
    let compiled = CompiledRule::new(rule);
    let done: Vec<&ChaseStep> = trace.iter().filter(|s| s.rule_id == rule.id()).collect();
    matches(rule, instance)
        .into_iter()
        .filter(|h| match variant {
            ChaseVariant::Restricted => !is_satisfied(rule, h, instance),
            ChaseVariant::Skolem => {
                let key = compiled.frontier_key(h);
                !done.iter().any(|s| compiled.frontier_key(&s.matched) == key)
            }
            ChaseVariant::Oblivious => {
                let key = compiled.key(h);
                !done.iter().any(|s| compiled.key(&s.matched) == key)
            }
        })
        .collect()
}

/// True if every rule is satisfied: no match (respecting negation) lacks an
/// extension.
pub fn is_model(rules: &RuleSet, instance: &Interpretation) -> bool {
    rules
        .rules()
        .iter()
        .all(|r| applicable_matches(r, instance, ChaseVariant::Restricted, &[]).is_empty())
}

/// True if every applied match is generating on the final instance: none of
/// its negated atoms was derived later.
pub fn verify_generating(rules: &RuleSet, result: &ChaseResult) -> bool {
    result.trace.iter().all(|step| match rules.get(&step.rule_id) {
        Some(rule) => negation_holds(rule, &step.matched, &result.instance),
        None => false,
    })
}

type Item = (usize, Homomorphism);

enum Agenda {
    Fifo(VecDeque<Item>),
    DatalogFirst {
        datalog: VecDeque<Item>,
        existential: VecDeque<Item>,
    },
    /// Round-based: the current round is drained in random order before the
    /// matches it gives rise to are enumerated.
    Random { items: Vec<Item>, rng: ChaCha8Rng },
}

impl Agenda {
    fn new(cfg: &ChaseConfig) -> Agenda {
        match cfg.strategy {
            Strategy::Fifo => Agenda::Fifo(VecDeque::new()),
            Strategy::DatalogFirst => Agenda::DatalogFirst {
                datalog: VecDeque::new(),
                existential: VecDeque::new(),
            },
            Strategy::Random => Agenda::Random {
                items: Vec::new(),
                rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            },
        }
    }

    fn push(&mut self, item: Item, datalog: bool) {
        match self {
            Agenda::Fifo(q) => q.push_back(item),
            Agenda::DatalogFirst { datalog: d, existential } => {
                if datalog {
                    d.push_back(item)
                } else {
                    existential.push_back(item)
                }
            }
            Agenda::Random { items, .. } => items.push(item),
        }
    }

    /// True if the next pop must wait for pending batches to be enumerated.
    fn starved(&self) -> bool {
        match self {
            Agenda::Fifo(q) => q.is_empty(),
            Agenda::DatalogFirst { datalog, .. } => datalog.is_empty(),
            Agenda::Random { items, .. } => items.is_empty(),
        }
    }

    fn pop(&mut self) -> Option<Item> {
        match self {
            Agenda::Fifo(q) => q.pop_front(),
            Agenda::DatalogFirst { datalog, existential } => datalog.pop_front().or_else(|| existential.pop_front()),
            Agenda::Random { items, rng } => {
                if items.is_empty() {
                    None
                } else {
                    let i = rng.random_range(0..items.len());
                    Some(items.swap_remove(i))
                }
            }
        }
    }
}

/// Atoms added by one chase step, in insertion order.
struct Batch {
    step: usize,
    atoms: Vec<Atom>,
}

struct Engine<'a> {
    rules: Vec<CompiledRule<'a>>,
    cfg: ChaseConfig,
    instance: Interpretation,
    nulls: NullAllocator,
    agenda: Agenda,
    /// (step, position in batch) of every derived atom; input atoms are absent.
    born: HashMap<Atom, (usize, usize)>,
    pending: VecDeque<Batch>,
    /// Restricted and Skolem: match projections already offered.
    seen: HashSet<(usize, MatchKey)>,
    skolem_applied: HashSet<(usize, MatchKey)>,
    skolem_nulls: HashMap<(usize, Symbol, MatchKey), Term>,
    trace: Vec<ChaseStep>,
}

impl<'a> Engine<'a> {
    /// Adds a match to the agenda unless it can never become applicable.
    fn offer(&mut self, idx: usize, h: Homomorphism) {
        let compiled = &self.rules[idx];
        if !negation_holds(compiled.rule, &h, &self.instance) {
            return;
        }
        match self.cfg.variant {
            ChaseVariant::Restricted => {
                if !self.seen.insert((idx, compiled.projection_key(&h)))
                    || Matcher::new(compiled.rule.head(), &self.instance, &compiled.frontier_map(&h), &[]).exists()
                {
                    return;
                }
            }
            ChaseVariant::Skolem => {
                if !self.seen.insert((idx, compiled.projection_key(&h)))
                    || self.skolem_applied.contains(&(idx, compiled.frontier_key(&h)))
                {
                    return;
                }
            }
            ChaseVariant::Oblivious => {}
        }
        let datalog = compiled.datalog;
        self.agenda.push((idx, h), datalog);
    }

    fn seed_agenda(&mut self) {
        for idx in 0..self.rules.len() {
            let found = Matcher::new(self.rules[idx].rule.body_positive(), &self.instance, &BTreeMap::new(), &[]).all();
            for h in found {
                self.offer(idx, h);
            }
        }
    }

    /// Offers every match whose newest atom belongs to `batch`. A match is
    /// produced once, from its earliest batch atom and the first body atom
    /// mapped there.
    fn enumerate(&mut self, batch: Batch) {
        for (pos, atom) in batch.atoms.iter().enumerate() {
            for idx in 0..self.rules.len() {
                let body = self.rules[idx].rule.body_positive();
                let mut found = Vec::new();
                for (p, pattern) in body.iter().enumerate() {
                    if pattern.predicate != atom.predicate {
                        continue;
                    }
                    let Some(fixed) = unify(pattern, atom) else {
                        continue;
                    };
                    Matcher::new(body, &self.instance, &fixed, &[]).for_each(|h| {
                        let canonical = body.iter().enumerate().all(|(q, b)| match self.born.get(&h.apply(b)) {
                            None => true,
                            Some(&(step, at)) => step < batch.step || (step == batch.step && (at, q) >= (pos, p)),
                        });
                        if canonical {
                            found.push(h);
                        }
                        ControlFlow::Continue(())
                    });
                }
                for h in found {
                    self.offer(idx, h);
                }
            }
        }
    }

    fn next(&mut self) -> Option<Item> {
        while self.agenda.starved() {
            let Some(batch) = self.pending.pop_front() else {
                break;
            };
            self.enumerate(batch);
            if matches!(self.agenda, Agenda::Random { .. }) {
                while let Some(batch) = self.pending.pop_front() {
                    self.enumerate(batch);
                }
            }
        }
        self.agenda.pop()
    }

    /// Checks the popped match and, if applicable, returns the head extension.
    fn applicable(&mut self, idx: usize, h: &Homomorphism) -> Option<Homomorphism> {
        let compiled = &self.rules[idx];
        let rule = compiled.rule;
        if !negation_holds(rule, h, &self.instance) {
            return None;
        }
        let mut ext = Homomorphism {
            mapping: compiled.frontier_map(h),
        };
        match self.cfg.variant {
            ChaseVariant::Restricted => {
                if Matcher::new(rule.head(), &self.instance, &ext.mapping, &[]).exists() {
                    return None;
                }
                for z in &compiled.existential {
                    ext.mapping.insert(Term::Variable(z.clone()), self.nulls.fresh());
                }
            }
            ChaseVariant::Skolem => {
                let fkey = compiled.frontier_key(h);
                if !self.skolem_applied.insert((idx, fkey.clone())) {
                    return None;
                }
                for z in &compiled.existential {
                    let nulls = &mut self.nulls;
                    let n = self
                        .skolem_nulls
                        .entry((idx, z.clone(), fkey.clone()))
                        .or_insert_with(|| nulls.fresh())
                        .clone();
                    ext.mapping.insert(Term::Variable(z.clone()), n);
                }
            }
            ChaseVariant::Oblivious => {
                for z in &compiled.existential {
                    ext.mapping.insert(Term::Variable(z.clone()), self.nulls.fresh());
                }
            }
        }
        Some(ext)
    }

    fn apply(&mut self, idx: usize, h: Homomorphism, ext: Homomorphism) {
        let rule = self.rules[idx].rule;
        let introduced: BTreeSet<u64> = self.rules[idx]
            .existential
            .iter()
            .filter_map(|z| match ext.image(&Term::Variable(z.clone())) {
                Term::Null(n) => Some(n),
                _ => None,
            })
            .collect();
        let step = self.trace.len() + 1;
        let mut fresh = Vec::new();
        for a in rule.head() {
            let img = ext.apply(a);
            if self.instance.insert(img.clone()) {
                self.born.insert(img.clone(), (step, fresh.len()));
                fresh.push(img);
            }
        }
        let redundant_on_arrival = if introduced.is_empty() {
            BTreeSet::new()
        } else {
            let mut full = h.clone();
            full.mapping.extend(ext.mapping.iter().map(|(k, v)| (k.clone(), v.clone())));
            dropped_by_alternatives(rule, &full, &self.instance)
        };
        self.trace.push(ChaseStep {
            index: step,
            rule_id: rule.id().to_string(),
            rule_index: idx,
            matched: h,
            extension: ext,
            introduced_nulls: introduced,
            redundant_on_arrival,
        });
        if !fresh.is_empty() {
            self.pending.push_back(Batch { step, atoms: fresh });
        }
    }

    fn run(mut self) -> Result<ChaseResult, ChaseError> {
        self.seed_agenda();
        while let Some((idx, h)) = self.next() {
            let Some(ext) = self.applicable(idx, &h) else {
                continue;
            };
            if self.trace.len() >= self.cfg.max_steps {
                return Err(ChaseError::StepLimitExceeded(Box::new(self.finish(false))));
            }
            self.apply(idx, h, ext);
        }
        Ok(self.finish(true))
    }

    fn finish(self, terminated: bool) -> ChaseResult {
        ChaseResult {
            steps_used: self.trace.len(),
            instance: self.instance,
            trace: self.trace,
            terminated,
        }
    }
}

/// Binds the variables of `pattern` so that it equals `atom`.
fn unify(pattern: &Atom, atom: &Atom) -> Option<BTreeMap<Term, Term>> {
    if pattern.args.len() != atom.args.len() {
        return None;
    }
    let mut map = BTreeMap::new();
    for (p, a) in pattern.args.iter().zip(&atom.args) {
        if p.is_variable() {
            match map.get(p) {
                Some(b) if b != a => return None,
                Some(_) => {}
                None => {
                    map.insert(p.clone(), a.clone());
                }
            }
        } else if p != a {
            return None;
        }
    }
    Some(map)
}

/// Runs the chase of `rules` on `database`. Nulls already present in the
/// input are treated as opaque terms; fresh nulls are numbered above them.
pub fn run_chase(rules: &RuleSet, database: &Interpretation, cfg: &ChaseConfig) -> Result<ChaseResult, ChaseError> {
    let engine = Engine {
        rules: rules.rules().iter().map(CompiledRule::new).collect(),
        cfg: *cfg,
        instance: database.clone(),
        nulls: NullAllocator::above(database),
        agenda: Agenda::new(cfg),
        born: HashMap::new(),
        pending: VecDeque::new(),
        seen: HashSet::new(),
        skolem_applied: HashSet::new(),
        skolem_nulls: HashMap::new(),
        trace: Vec::new(),
    };
    engine.run()
}

/// Renders a trace one step per line.
pub fn format_trace(trace: &[ChaseStep]) -> String {
    let mut out = String::new();
    for step in trace {
        out.push_str(&step.to_string());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hom::{core_of, homomorphically_equivalent, is_isomorphic};

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

    fn redundant_witness_rules() -> RuleSet {
        RuleSet::new(vec![
            Rule::new(
                "r1",
                vec![atom("f", &[v("X"), v("Y")])],
                vec![],
                vec![atom("e", &[v("X"), v("X")])],
            )
            .unwrap(),
            Rule::new(
                "r2",
                vec![atom("p", &[v("X")])],
                vec![],
                vec![atom("f", &[v("Y"), v("X")]), atom("e", &[v("Y"), v("Y")])],
            )
            .unwrap(),
        ])
    }

    fn redundant_witness_db() -> Interpretation {
        interp(&[atom("p", &[c("A")]), atom("f", &[c("B"), c("A")])])
    }

    fn cfg(variant: ChaseVariant, strategy: Strategy, seed: u64) -> ChaseConfig {
        ChaseConfig::new(variant, strategy, seed, 1000)
    }

    #[test]
    fn datalog_first_yields_the_small_model() {
        let r = run_chase(&redundant_witness_rules(), &redundant_witness_db(), &ChaseConfig::default()).unwrap();
        let mut u1 = redundant_witness_db();
        u1.insert(atom("e", &[c("B"), c("B")]));
        assert_eq!(r.instance, u1);
        assert!(r.terminated);
        assert_eq!(r.trace.len(), 1);
    }

    #[test]
    fn some_seed_applies_the_existential_rule_first() {
        let large = (0..64).find_map(|seed| {
            let r = run_chase(&redundant_witness_rules(), &redundant_witness_db(), &cfg(ChaseVariant::Restricted, Strategy::Random, seed)).unwrap();
            (r.instance.len() == 5).then_some(r)
        });
        let r = large.expect("no seed produced the padded model");
        assert_eq!(r.trace[0].rule_id, "r2");
        let n = Term::Null(*r.trace[0].introduced_nulls.iter().next().unwrap());
        assert!(r.instance.contains(&atom("f", &[n.clone(), c("A")])));
        assert!(r.instance.contains(&atom("e", &[n.clone(), n])));
    }

    #[test]
    fn empty_rule_set_leaves_database_untouched() {
        let r = run_chase(&RuleSet::new(vec![]), &redundant_witness_db(), &ChaseConfig::default()).unwrap();
        assert_eq!(r.instance, redundant_witness_db());
        assert!(r.trace.is_empty() && r.terminated);
    }

    #[test]
    fn applicability_by_variant() {
        let rules = redundant_witness_rules();
        let r2 = rules.get("r2").unwrap();
        let d = redundant_witness_db();
        assert_eq!(applicable_matches(r2, &d, ChaseVariant::Restricted, &[]).len(), 1);
        let mut d2 = d.clone();
        d2.insert(atom("e", &[c("B"), c("B")]));
        assert!(applicable_matches(r2, &d2, ChaseVariant::Restricted, &[]).is_empty());
        assert_eq!(applicable_matches(r2, &d2, ChaseVariant::Skolem, &[]).len(), 1);
        assert_eq!(applicable_matches(r2, &d2, ChaseVariant::Oblivious, &[]).len(), 1);
    }

    #[test]
    fn results_are_models_and_homomorphically_equivalent() {
        let mut results = Vec::new();
        for variant in ChaseVariant::ALL {
            for strategy in Strategy::ALL {
                for seed in 0..3 {
                    let r = run_chase(&redundant_witness_rules(), &redundant_witness_db(), &cfg(variant, strategy, seed)).unwrap();
                    assert!(is_model(&redundant_witness_rules(), &r.instance));
                    results.push(r.instance);
                }
            }
        }
        for pair in results.windows(2) {
            assert!(homomorphically_equivalent(&pair[0], &pair[1]));
            assert!(is_isomorphic(&core_of(&pair[0]), &core_of(&pair[1])));
        }
    }

    #[test]
    fn skolem_nulls_are_named_by_frontier_image() {
        // The same frontier image twice must not produce two nulls.
        let rules = RuleSet::new(vec![Rule::new(
            "r1",
            vec![atom("a", &[v("X"), v("Z")])],
            vec![],
            vec![atom("b", &[v("X"), v("Y")])],
        )
        .unwrap()]);
        let d = interp(&[atom("a", &[c("k"), c("1")]), atom("a", &[c("k"), c("2")])]);
        let sk = run_chase(&rules, &d, &cfg(ChaseVariant::Skolem, Strategy::Fifo, 0)).unwrap();
        assert_eq!(sk.instance.len(), 3);
        let ob = run_chase(&rules, &d, &cfg(ChaseVariant::Oblivious, Strategy::Fifo, 0)).unwrap();
        assert_eq!(ob.instance.len(), 4);
    }

    #[test]
    fn step_limit_reports_partial_result() {
        // r(x,y) -> exists z. r(y,z) never terminates.
        let rules = RuleSet::new(vec![Rule::new(
            "r1",
            vec![atom("r", &[v("X"), v("Y")])],
            vec![],
            vec![atom("r", &[v("Y"), v("Z")])],
        )
        .unwrap()]);
        let d = interp(&[atom("r", &[c("a"), c("b")])]);
        let err = run_chase(&rules, &d, &ChaseConfig::new(ChaseVariant::Restricted, Strategy::Fifo, 0, 5)).unwrap_err();
        let partial = err.partial();
        assert!(!partial.terminated);
        assert_eq!(partial.steps_used, 5);
        assert_eq!(partial.instance.len(), 6);
    }

    #[test]
    fn exact_step_budget_is_not_an_error() {
        let r = run_chase(&redundant_witness_rules(), &redundant_witness_db(), &ChaseConfig::new(ChaseVariant::Restricted, Strategy::DatalogFirst, 0, 1))
            .unwrap();
        assert!(r.terminated);
    }

    #[test]
    fn generating_check_detects_late_negative_atom() {
        // b(x), ~q(x) -> p(x) applied before b(x) -> q(x).
        let rules = RuleSet::new(vec![
            Rule::new(
                "r1",
                vec![atom("b", &[v("X")])],
                vec![atom("q", &[v("X")])],
                vec![atom("p", &[v("X")])],
            )
            .unwrap(),
            Rule::new("r2", vec![atom("b", &[v("X")])], vec![], vec![atom("q", &[v("X")])]).unwrap(),
        ]);
        let d = interp(&[atom("b", &[c("c")])]);
        let r = run_chase(&rules, &d, &cfg(ChaseVariant::Restricted, Strategy::Fifo, 0)).unwrap();
        assert!(r.instance.contains(&atom("p", &[c("c")])));
        assert!(!verify_generating(&rules, &r));
        // Reversed rule order: q(c) first blocks the negated rule.
        let rev = RuleSet::new(vec![rules.rules()[1].clone(), rules.rules()[0].clone()]);
        let r = run_chase(&rev, &d, &cfg(ChaseVariant::Restricted, Strategy::Fifo, 0)).unwrap();
        assert!(verify_generating(&rev, &r));
        assert!(!r.instance.contains(&atom("p", &[c("c")])));
    }

    #[test]
    fn input_nulls_are_kept_and_fresh_nulls_are_above_them() {
        let rules = redundant_witness_rules();
        let d = interp(&[atom("p", &[Term::Null(7)])]);
        let r = run_chase(&rules, &d, &ChaseConfig::default()).unwrap();
        assert!(r.trace.iter().flat_map(|s| &s.introduced_nulls).all(|&n| n > 7));
        assert!(r.instance.contains(&atom("p", &[Term::Null(7)])));
    }

    #[test]
    fn trace_lines_are_formatted() {
        let r = run_chase(&redundant_witness_rules(), &redundant_witness_db(), &cfg(ChaseVariant::Restricted, Strategy::Fifo, 0)).unwrap();
        assert_eq!(format_trace(&r.trace), "step 1: rule r1 match {X=B, Y=A} new {}\n");
    }

    #[test]
    fn identical_configs_give_identical_traces() {
        let c = cfg(ChaseVariant::Restricted, Strategy::Random, 11);
        assert_eq!(run_chase(&redundant_witness_rules(), &redundant_witness_db(), &c), run_chase(&redundant_witness_rules(), &redundant_witness_db(), &c));
    }
}
