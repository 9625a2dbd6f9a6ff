//! Query evaluation, core entailment, and the dispatcher that answers a
//! query on the cheapest model its safety level permits.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::analysis::{Analysis, SafetyClassification, SafetyLevel};
use crate::chase::{run_chase, ChaseConfig, ChaseError, ChaseResult, ChaseVariant};
use crate::hom::{core_of, find_match, Homomorphism};
use crate::model::{Interpretation, NullAllocator, Query, RuleSet, Term};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelUsed {
    Core,
    RestrictedChase,
    AnyChase,
    Padded,
}

impl ModelUsed {
    pub fn name(self) -> &'static str {
        match self {
            ModelUsed::Core => "core",
            ModelUsed::RestrictedChase => "restricted-chase",
            ModelUsed::AnyChase => "any-chase",
            ModelUsed::Padded => "padded",
        }
    }
}

impl fmt::Display for ModelUsed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Auto,
    Core,
    Chase,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntailmentAnswer {
    pub query_name: String,
    pub entailed: bool,
    pub classification: SafetyClassification,
    pub model_used: ModelUsed,
    pub witness: Option<Homomorphism>,
    /// Set when the answer was computed on a chase cut off by the step cap.
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EntailmentError {
    #[error(transparent)]
    Chase(#[from] ChaseError),
    #[error("query {query} is {level}; chase mode needs an effectively core-safe query")]
    UnsafeQueryInChaseMode { query: String, level: SafetyLevel },
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
}

/// A match of `q+` that maps no atom of `q−` into `i`.
pub fn evaluate(q: &Query, i: &Interpretation) -> Option<Homomorphism> {
    find_match(q.positive(), i, &BTreeMap::new(), q.negative())
}

const CAP_WARNING: &str = "chase hit the step limit; answer assumes the partial instance has the same core";

/// Lazily computed models of one rule set and database, shared by all
/// queries of a session.
pub struct Reasoner {
    rules: RuleSet,
    database: Interpretation,
    cfg: ChaseConfig,
    analysis: Analysis,
    assume_finite_core: bool,
    restricted: Option<Result<ChaseResult, ChaseError>>,
    configured: Option<Result<ChaseResult, ChaseError>>,
    core: Option<Interpretation>,
}

impl Reasoner {
    pub fn new(rules: &RuleSet, database: &Interpretation, cfg: &ChaseConfig) -> Reasoner {
        Reasoner::with_analysis(Analysis::new(rules), database, cfg)
    }

    pub fn with_analysis(analysis: Analysis, database: &Interpretation, cfg: &ChaseConfig) -> Reasoner {
        Reasoner {
            rules: analysis.rules.clone(),
            database: database.clone(),
            cfg: *cfg,
            analysis,
            assume_finite_core: false,
            restricted: None,
            configured: None,
            core: None,
        }
    }

    /// Answer on instances cut off by the step cap instead of failing.
    pub fn assume_finite_core(mut self, yes: bool) -> Reasoner {
        self.assume_finite_core = yes;
        self
    }

    pub fn analysis(&self) -> &Analysis {
        &self.analysis
    }

    fn settle(&self, r: &Result<ChaseResult, ChaseError>) -> Result<(ChaseResult, bool), EntailmentError> {
        match r {
            Ok(r) => Ok((r.clone(), false)),
            Err(e) if self.assume_finite_core => Ok((e.partial().clone(), true)),
            Err(e) => Err(e.clone().into()),
        }
    }

    /// The restricted chase run with the configured strategy and seed.
    pub fn restricted_chase(&mut self) -> Result<(ChaseResult, bool), EntailmentError> {
        if self.restricted.is_none() {
            self.restricted = Some(run_chase(&self.rules, &self.database, &self.cfg.restricted()));
        }
        self.settle(self.restricted.as_ref().unwrap())
    }

    /// The chase run exactly as configured.
    pub fn configured_chase(&mut self) -> Result<(ChaseResult, bool), EntailmentError> {
        if self.cfg.variant == ChaseVariant::Restricted {
            return self.restricted_chase();
        }
        if self.configured.is_none() {
            self.configured = Some(run_chase(&self.rules, &self.database, &self.cfg));
        }
        self.settle(self.configured.as_ref().unwrap())
    }

    pub fn core(&mut self) -> Result<(Interpretation, bool), EntailmentError> {
        let (chase, capped) = self.restricted_chase()?;
        if self.core.is_none() {
            self.core = Some(core_of(&chase.instance));
        }
        Ok((self.core.clone().unwrap(), capped))
    }

    fn on_core(&mut self, q: &Query, classification: SafetyClassification) -> Result<EntailmentAnswer, EntailmentError> {
        let (core, capped) = self.core()?;
        Ok(answer_on(q, &core, classification, ModelUsed::Core, capped))
    }

    pub fn answer(&mut self, q: &Query, mode: Mode) -> Result<EntailmentAnswer, EntailmentError> {
        match mode {
            Mode::Core => {
                let c = self.analysis.classify_query(q, None);
                self.on_core(q, c)
            }
            Mode::Auto => {
                let c = self.analysis.classify_query(q, None);
                match c.level {
                    SafetyLevel::Bcq | SafetyLevel::AffectionSafe => {
                        let (m, capped) = self.configured_chase()?;
                        Ok(answer_on(q, &m.instance, c, ModelUsed::AnyChase, capped))
                    }
                    SafetyLevel::CoreSafe | SafetyLevel::EffectivelyCoreSafe => {
                        let (m, capped) = self.restricted_chase()?;
                        Ok(answer_on(q, &m.instance, c, ModelUsed::RestrictedChase, capped))
                    }
                    SafetyLevel::Unsafe => self.on_core(q, c),
                }
            }
            Mode::Chase => {
                let (m, capped) = self.restricted_chase()?;
                let c = self.analysis.classify_query(q, Some(&m.trace));
                match c.level {
                    SafetyLevel::Bcq | SafetyLevel::AffectionSafe => {
                        let (m, capped) = self.configured_chase()?;
                        Ok(answer_on(q, &m.instance, c, ModelUsed::AnyChase, capped))
                    }
                    SafetyLevel::CoreSafe | SafetyLevel::EffectivelyCoreSafe => {
                        Ok(answer_on(q, &m.instance, c, ModelUsed::RestrictedChase, capped))
                    }
                    SafetyLevel::Unsafe => Err(EntailmentError::UnsafeQueryInChaseMode {
                        query: q.name().to_string(),
                        level: c.level,
                    }),
                }
            }
        }
    }
}

fn answer_on(
    q: &Query,
    model: &Interpretation,
    classification: SafetyClassification,
    model_used: ModelUsed,
    capped: bool,
) -> EntailmentAnswer {
    let witness = evaluate(q, model);
    EntailmentAnswer {
        query_name: q.name().to_string(),
        entailed: witness.is_some(),
        classification,
        model_used,
        witness,
        warning: capped.then(|| CAP_WARNING.to_string()),
    }
}

/// Decides core entailment by chasing, taking the core, and evaluating.
pub fn core_entails(
    rules: &RuleSet,
    database: &Interpretation,
    q: &Query,
    cfg: &ChaseConfig,
) -> Result<EntailmentAnswer, EntailmentError> {
    Reasoner::new(rules, database, cfg).answer(q, Mode::Core)
}

/// One-shot dispatch; see [`Reasoner::answer`].
pub fn answer(
    q: &Query,
    rules: &RuleSet,
    database: &Interpretation,
    cfg: &ChaseConfig,
    mode: Mode,
) -> Result<EntailmentAnswer, EntailmentError> {
    Reasoner::new(rules, database, cfg).answer(q, mode)
}

/// Checks the literal preconditions under which some universal model
/// satisfies `q`: `q+` is entailed, and for no negated atom α is `q+ ∧ α`
/// entailed. Both are evaluated on the core model.
pub fn padding_conditions_hold(
    rules: &RuleSet,
    database: &Interpretation,
    q: &Query,
    cfg: &ChaseConfig,
) -> Result<bool, EntailmentError> {
    let chase = run_chase(rules, database, &cfg.restricted())?;
    let core = core_of(&chase.instance);
    let none = BTreeMap::new();
    if find_match(q.positive(), &core, &none, &[]).is_none() {
        return Ok(false);
    }
    for alpha in q.negative() {
        let mut joint = q.positive().to_vec();
        joint.push(alpha.clone());
        if find_match(&joint, &core, &none, &[]).is_some() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Adds a copy of `q+` over fresh nulls to the database and chases. The
/// result is universal whenever `q+` is entailed, and satisfies `q` unless a
/// negated atom of the copy gets derived; both failures are reported as
/// [`EntailmentError::PreconditionViolated`].
pub fn build_padded_universal(
    rules: &RuleSet,
    database: &Interpretation,
    q: &Query,
    cfg: &ChaseConfig,
) -> Result<Interpretation, EntailmentError> {
    let chase = run_chase(rules, database, &cfg.restricted())?;
    let core = core_of(&chase.instance);
    if find_match(q.positive(), &core, &BTreeMap::new(), &[]).is_none() {
        return Err(EntailmentError::PreconditionViolated(format!(
            "the positive part of {} is not entailed",
            q.name()
        )));
    }
    let mut nulls = NullAllocator::above(database);
    let nu = Homomorphism {
        mapping: q.variables().into_iter().map(|v| (Term::Variable(v), nulls.fresh())).collect(),
    };
    let mut padded = database.clone();
    for a in q.positive() {
        padded.insert(nu.apply(a));
    }
    let result = run_chase(rules, &padded, cfg)?;
    for alpha in q.negative() {
        let image = nu.apply(alpha);
        if result.instance.contains(&image) {
            return Err(EntailmentError::PreconditionViolated(format!(
                "negated atom {image} is derived from the padded database"
            )));
        }
    }
    Ok(result.instance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::tests::{redundant_witness, tagging};
    use crate::chase::Strategy;
    use crate::hom::homomorphically_equivalent;
    use crate::model::{Atom, Rule};

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

    fn ground_db() -> Interpretation {
        interp(&[atom("a", &[c("1"), c("2")]), atom("b", &[c("2"), c("2")])])
    }

    fn ground_query() -> Query {
        Query::new("q", vec![atom("a", &[v("X"), v("Y")])], vec![atom("b", &[v("Y"), v("Y")])]).unwrap()
    }

    fn redundant_witness_query() -> Query {
        Query::new(
            "q",
            vec![atom("f", &[v("X1"), v("Y")]), atom("f", &[v("X2"), v("Y")])],
            vec![atom("e", &[v("X1"), v("X2")])],
        )
        .unwrap()
    }

    fn redundant_witness_db() -> Interpretation {
        interp(&[atom("p", &[c("A")]), atom("f", &[c("B"), c("A")])])
    }

    #[test]
    fn evaluation_on_example_instances() {
        assert!(evaluate(&ground_query(), &ground_db()).is_none());
        let mut u = ground_db();
        u.insert(atom("a", &[c("1"), Term::Null(0)]));
        let h = evaluate(&ground_query(), &u).unwrap();
        assert_eq!(h.image(&v("Y")), Term::Null(0));
        let u2 = interp(&[
            atom("p", &[c("A")]),
            atom("f", &[c("B"), c("A")]),
            atom("f", &[Term::Null(0), c("A")]),
            atom("e", &[Term::Null(0), Term::Null(0)]),
            atom("e", &[c("B"), c("B")]),
        ]);
        let h = evaluate(&redundant_witness_query(), &u2).unwrap();
        let pair = (h.image(&v("X1")), h.image(&v("X2")));
        assert!(pair == (Term::Null(0), c("B")) || pair == (c("B"), Term::Null(0)));
    }

    #[test]
    fn core_entailment_examples() {
        let cfg = ChaseConfig::default();
        assert!(!core_entails(&redundant_witness(), &redundant_witness_db(), &redundant_witness_query(), &cfg).unwrap().entailed);
        assert!(!core_entails(&RuleSet::new(vec![]), &ground_db(), &ground_query(), &cfg).unwrap().entailed);
        let bcq = Query::new("b", vec![atom("f", &[v("X"), v("Y")])], vec![]).unwrap();
        assert!(core_entails(&redundant_witness(), &redundant_witness_db(), &bcq, &cfg).unwrap().entailed);
    }

    #[test]
    fn auto_mode_dispatch() {
        let cfg = ChaseConfig::default();
        let a = answer(&redundant_witness_query(), &redundant_witness(), &redundant_witness_db(), &cfg, Mode::Auto).unwrap();
        assert_eq!(
            (a.entailed, a.classification.level, a.model_used),
            (false, SafetyLevel::Unsafe, ModelUsed::Core)
        );
        let q = Query::new("q", vec![atom("p", &[v("X")])], vec![atom("o", &[v("X")])]).unwrap();
        let d = interp(&[atom("p", &[c("A")]), atom("f", &[c("A"), c("B")])]);
        let a = answer(&q, &tagging(), &d, &cfg, Mode::Auto).unwrap();
        assert!(a.entailed);
        let bcq = Query::new("b", vec![atom("f", &[v("X"), v("Y")])], vec![]).unwrap();
        let a = answer(&bcq, &redundant_witness(), &redundant_witness_db(), &cfg, Mode::Auto).unwrap();
        assert_eq!(a.model_used, ModelUsed::AnyChase);
    }

    #[test]
    fn chase_mode_uses_the_trace() {
        // Datalog-first never applies the restrained rule after its restrainer.
        let cfg = ChaseConfig::default();
        let a = answer(&redundant_witness_query(), &redundant_witness(), &redundant_witness_db(), &cfg, Mode::Chase).unwrap();
        assert_eq!(a.classification.level, SafetyLevel::EffectivelyCoreSafe);
        assert!(!a.entailed);
        let seed = (0..64)
            .find(|&s| {
                let c = ChaseConfig::new(ChaseVariant::Restricted, Strategy::Random, s, 100);
                run_chase(&redundant_witness(), &redundant_witness_db(), &c).unwrap().instance.len() == 5
            })
            .unwrap();
        let cfg = ChaseConfig::new(ChaseVariant::Restricted, Strategy::Random, seed, 100);
        let err = answer(&redundant_witness_query(), &redundant_witness(), &redundant_witness_db(), &cfg, Mode::Chase).unwrap_err();
        assert!(matches!(err, EntailmentError::UnsafeQueryInChaseMode { .. }));
    }

    #[test]
    fn step_limit_and_assumed_finite_core() {
        let rules = RuleSet::new(vec![Rule::new(
            "r1",
            vec![atom("r", &[v("X"), v("Y")])],
            vec![],
            vec![atom("r", &[v("Y"), v("Z")])],
        )
        .unwrap()]);
        let d = interp(&[atom("r", &[c("a"), c("b")])]);
        let q = Query::new("q", vec![atom("r", &[v("X"), v("Y")])], vec![atom("r", &[v("Y"), v("X")])]).unwrap();
        let cfg = ChaseConfig::new(ChaseVariant::Restricted, Strategy::Fifo, 0, 10);
        assert!(matches!(core_entails(&rules, &d, &q, &cfg), Err(EntailmentError::Chase(_))));
        let a = Reasoner::new(&rules, &d, &cfg).assume_finite_core(true).answer(&q, Mode::Core).unwrap();
        assert!(a.warning.is_some());
    }

    #[test]
    fn padded_model_for_first_example() {
        let u = build_padded_universal(&RuleSet::new(vec![]), &ground_db(), &ground_query(), &ChaseConfig::default()).unwrap();
        assert_eq!(u.len(), 3);
        assert!(evaluate(&ground_query(), &u).is_some());
        assert!(homomorphically_equivalent(&u, &ground_db()));
        // The literal preconditions do not hold here: q+ together with b(y,y) is entailed.
        assert!(!padding_conditions_hold(&RuleSet::new(vec![]), &ground_db(), &ground_query(), &ChaseConfig::default()).unwrap());
    }

    #[test]
    fn padding_rejects_derived_negated_atoms() {
        let rules = RuleSet::new(vec![Rule::new(
            "r1",
            vec![atom("a", &[v("X"), v("Y")])],
            vec![],
            vec![atom("b", &[v("Y"), v("Y")])],
        )
        .unwrap()]);
        let d = interp(&[atom("a", &[c("1"), c("2")])]);
        let err = build_padded_universal(&rules, &d, &ground_query(), &ChaseConfig::default()).unwrap_err();
        assert!(matches!(err, EntailmentError::PreconditionViolated(_)));
        let none = interp(&[atom("c", &[c("1")])]);
        let err = build_padded_universal(&rules, &none, &ground_query(), &ChaseConfig::default()).unwrap_err();
        assert!(matches!(err, EntailmentError::PreconditionViolated(_)));
    }

    #[test]
    fn padded_bcq_is_equivalent_to_core() {
        let bcq = Query::new("b", vec![atom("f", &[v("X"), v("Y")])], vec![]).unwrap();
        let u = build_padded_universal(&redundant_witness(), &redundant_witness_db(), &bcq, &ChaseConfig::default()).unwrap();
        let core = core_of(&run_chase(&redundant_witness(), &redundant_witness_db(), &ChaseConfig::default()).unwrap().instance);
        assert!(homomorphically_equivalent(&u, &core));
    }
}
