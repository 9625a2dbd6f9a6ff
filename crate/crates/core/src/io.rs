//! Text formats: `.rls` programs (rules, facts, queries), `.facts` dumps,
//! and the analysis report.
//!
//! In programs, identifiers starting with an upper-case letter are
//! variables and everything else is a constant. Fact dumps have no
//! variables, so there every bare identifier is a constant and `_:n<k>`
//! denotes a null.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::analysis::{Analysis, Position};
use crate::chase::ChaseStep;
use crate::entailment::EntailmentAnswer;
use crate::model::{Atom, Interpretation, ModelError, Query, Rule, RuleSet, Signature, Term};
use crate::stratified::{find_core_safe_stratification, Stratification};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("line {line}: {owner}: {message}")]
    Invalid {
        line: usize,
        owner: String,
        message: String,
        source: ModelError,
    },
}

impl ParseError {
    fn invalid(line: usize, owner: String, source: ModelError) -> ParseError {
        let text = source.to_string();
        let message = text
            .strip_prefix(&format!("{owner}: "))
            .unwrap_or(&text)
            .to_string();
        ParseError::Invalid {
            line,
            owner,
            message,
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Program {
    pub rules: RuleSet,
    /// Ground facts; never contains nulls.
    pub facts: Interpretation,
    pub queries: Vec<Query>,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Upper(String),
    Lower(String),
    Quoted(String),
    Null(u64),
    LParen,
    RParen,
    Comma,
    Dot,
    Implies,
    Tilde,
    Question,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Upper(s) | Tok::Lower(s) => format!("`{s}`"),
            Tok::Quoted(s) => format!("string \"{s}\""),
            Tok::Null(n) => format!("null _:n{n}"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Implies => "`:-`".into(),
            Tok::Tilde => "`~`".into(),
            Tok::Question => "`?`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn lex(text: &str, allow_nulls: bool) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let ident = |c: char| c.is_ascii_alphanumeric() || c == '_';
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let mut push = |tok: Tok| {
            out.push(Spanned {
                tok,
                line: start_line,
                column: start_col,
            })
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
                continue;
            }
            c if c.is_whitespace() => {
                i += 1;
                col += 1;
                continue;
            }
            '%' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            '(' => push(Tok::LParen),
            ')' => push(Tok::RParen),
            ',' => push(Tok::Comma),
            '.' => push(Tok::Dot),
            '~' => push(Tok::Tilde),
            '?' => push(Tok::Question),
            ':' if chars.get(i + 1) == Some(&'-') => {
                push(Tok::Implies);
                i += 2;
                col += 2;
                continue;
            }
            '"' => {
                let mut s = String::new();
                let mut j = i + 1;
                let mut closed = false;
                while j < chars.len() {
                    match chars[j] {
                        '"' => {
                            closed = true;
                            break;
                        }
                        '\\' => {
                            match chars.get(j + 1) {
                                Some('n') => s.push('\n'),
                                Some(&e @ ('"' | '\\')) => s.push(e),
                                _ => return Err(syntax(line, col + (j - i), "invalid escape in string")),
                            }
                            j += 2;
                        }
                        '\n' => break,
                        ch => {
                            s.push(ch);
                            j += 1;
                        }
                    }
                }
                if !closed {
                    return Err(syntax(line, col, "unterminated string"));
                }
                push(Tok::Quoted(s));
                col += j + 1 - i;
                i = j + 1;
                continue;
            }
            '_' if allow_nulls && chars.get(i + 1) == Some(&':') && chars.get(i + 2) == Some(&'n') => {
                let mut j = i + 3;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                let digits: String = chars[i + 3..j].iter().collect();
                let id = digits
                    .parse::<u64>()
                    .map_err(|_| syntax(line, col, "malformed null, expected _:n<number>"))?;
                push(Tok::Null(id));
                col += j - i;
                i = j;
                continue;
            }
            c if c.is_ascii_alphanumeric() => {
                let mut j = i;
                while j < chars.len() && ident(chars[j]) {
                    j += 1;
                }
                let s: String = chars[i..j].iter().collect();
                push(if c.is_ascii_uppercase() { Tok::Upper(s) } else { Tok::Lower(s) });
                col += j - i;
                i = j;
                continue;
            }
            other => return Err(syntax(line, col, format!("unexpected character `{other}`"))),
        }
        i += 1;
        col += 1;
    }
    out.push(Spanned {
        tok: Tok::End,
        line,
        column: col,
    });
    Ok(out)
}

/// Which reading applies to identifiers.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Program,
    Facts,
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    mode: Mode,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if t.tok != Tok::End {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, expected: &str) -> ParseError {
        let t = self.peek();
        syntax(t.line, t.column, format!("expected {expected}, found {}", t.tok.describe()))
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<(), ParseError> {
        if self.peek().tok == tok {
            self.next();
            Ok(())
        } else {
            Err(self.unexpected(expected))
        }
    }

    fn eat(&mut self, tok: Tok) -> bool {
        if self.peek().tok == tok {
            self.next();
            true
        } else {
            false
        }
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        let term = match &self.peek().tok {
            Tok::Upper(s) if self.mode == Mode::Program => Term::variable(s),
            Tok::Upper(s) | Tok::Lower(s) | Tok::Quoted(s) => Term::constant(s),
            Tok::Null(n) => Term::Null(*n),
            _ => return Err(self.unexpected("a term")),
        };
        self.next();
        Ok(term)
    }

    fn atom(&mut self) -> Result<Atom, ParseError> {
        let predicate = match self.peek().tok.clone() {
            Tok::Lower(s) => s,
            Tok::Upper(_) if self.mode == Mode::Program => {
                return Err(self.unexpected("a predicate name (lower-case)"));
            }
            Tok::Upper(s) => s,
            _ => return Err(self.unexpected("an atom")),
        };
        self.next();
        let mut args = Vec::new();
        if self.eat(Tok::LParen) && !self.eat(Tok::RParen) {
            loop {
                args.push(self.term()?);
                if self.eat(Tok::Comma) {
                    continue;
                }
                self.expect(Tok::RParen, "`,` or `)`")?;
                break;
            }
        }
        Ok(Atom::new(&predicate, args))
    }

    /// `a1, ~a2, ...` split into positive and negated atoms.
    fn literals(&mut self, allow_negation: bool) -> Result<(Vec<Atom>, Vec<Atom>), ParseError> {
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        loop {
            if allow_negation && self.eat(Tok::Tilde) {
                neg.push(self.atom()?);
            } else {
                pos.push(self.atom()?);
            }
            if !self.eat(Tok::Comma) {
                return Ok((pos, neg));
            }
        }
    }
}

enum Statement {
    Facts(Vec<Atom>),
    Rule(Vec<Atom>, Vec<Atom>, Vec<Atom>),
    Query(String, Vec<Atom>, Vec<Atom>),
}

fn statement(p: &mut Parser) -> Result<Statement, ParseError> {
    if p.eat(Tok::Question) {
        let name = match p.peek().tok.clone() {
            Tok::Lower(s) | Tok::Upper(s) => s,
            _ => return Err(p.unexpected("a query name")),
        };
        p.next();
        p.expect(Tok::Implies, "`:-`")?;
        let (pos, neg) = p.literals(true)?;
        p.expect(Tok::Dot, "`,` or `.`")?;
        return Ok(Statement::Query(name, pos, neg));
    }
    let head_start = p.pos;
    let (head, _) = p.literals(false)?;
    if p.eat(Tok::Implies) {
        let (pos, neg) = p.literals(true)?;
        p.expect(Tok::Dot, "`,` or `.`")?;
        return Ok(Statement::Rule(head, pos, neg));
    }
    if p.peek().tok != Tok::Dot {
        return Err(p.unexpected("`,`, `:-` or `.`"));
    }
    p.next();
    // Report the first variable in a fact at its own position.
    if let Some(t) = p.toks[head_start..p.pos]
        .iter()
        .find(|t| matches!(t.tok, Tok::Upper(_)) && p.mode == Mode::Program)
    {
        return Err(syntax(t.line, t.column, format!("variable {} in a fact", t.tok.describe())));
    }
    Ok(Statement::Facts(head))
}

fn register(sig: &mut Signature, atoms: &[Atom], line: usize, owner: &str) -> Result<(), ParseError> {
    for a in atoms {
        sig.register(a)
            .map_err(|e| ParseError::invalid(line, owner.to_string(), e))?;
    }
    Ok(())
}

/// Parses a program: rules, ground facts and named queries. Rules get
/// positional ids `r1`, `r2`, ...
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let mut p = Parser {
        toks: lex(text, false)?,
        pos: 0,
        mode: Mode::Program,
    };
    let mut sig = Signature::new();
    let mut rules = Vec::new();
    let mut facts = Interpretation::new();
    let mut queries: Vec<Query> = Vec::new();
    while p.peek().tok != Tok::End {
        let line = p.peek().line;
        match statement(&mut p)? {
            Statement::Facts(atoms) => {
                register(&mut sig, &atoms, line, "fact")?;
                for a in atoms {
                    facts.insert(a);
                }
            }
            Statement::Rule(head, pos, neg) => {
                let id = format!("r{}", rules.len() + 1);
                let owner = format!("rule {id}");
                let rule = Rule::new(id, pos, neg, head).map_err(|e| ParseError::invalid(line, owner.clone(), e))?;
                register(&mut sig, &rule.atoms().cloned().collect::<Vec<_>>(), line, &owner)?;
                rules.push(rule);
            }
            Statement::Query(name, pos, neg) => {
                let owner = format!("query {name}");
                if queries.iter().any(|q| q.name() == name) {
                    return Err(ParseError::Syntax {
                        line,
                        column: 1,
                        message: format!("duplicate {owner}"),
                    });
                }
                let q = Query::new(name, pos, neg).map_err(|e| ParseError::invalid(line, owner.clone(), e))?;
                register(&mut sig, &[q.positive(), q.negative()].concat(), line, &owner)?;
                queries.push(q);
            }
        }
    }
    Ok(Program {
        rules: RuleSet::new(rules),
        facts,
        queries,
    })
}

/// Parses a fact dump. Bare identifiers of either case are constants and
/// `_:n<k>` tokens are nulls with id `k`.
pub fn parse_facts(text: &str) -> Result<Interpretation, ParseError> {
    let mut p = Parser {
        toks: lex(text, true)?,
        pos: 0,
        mode: Mode::Facts,
    };
    let mut sig = Signature::new();
    let mut out = Interpretation::new();
    while p.peek().tok != Tok::End {
        let line = p.peek().line;
        match statement(&mut p)? {
            Statement::Facts(atoms) => {
                register(&mut sig, &atoms, line, "fact")?;
                for a in atoms {
                    out.insert(a);
                }
            }
            _ => return Err(syntax(line, 1, "only facts are allowed in a fact file")),
        }
    }
    Ok(out)
}

fn fact_line(a: &Atom, out: &mut String) {
    out.push_str(&a.predicate);
    if !a.args.is_empty() {
        out.push('(');
        for (i, t) in a.args.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&t.fact_form());
        }
        out.push(')');
    }
    out.push_str(".\n");
}

/// One fact per line, sorted by predicate and then arguments.
pub fn emit_facts(i: &Interpretation) -> String {
    let mut out = String::new();
    for a in i.atoms() {
        fact_line(&a, &mut out);
    }
    out
}

/// A rule in program syntax; parses back to the same rule.
pub fn format_rule(rule: &Rule) -> String {
    rule.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnswerRecord {
    pub name: String,
    pub entailed: bool,
    pub level: String,
    pub model_used: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl From<&EntailmentAnswer> for AnswerRecord {
    fn from(a: &EntailmentAnswer) -> AnswerRecord {
        AnswerRecord {
            name: a.query_name.clone(),
            entailed: a.entailed,
            level: a.classification.level.name().to_string(),
            model_used: a.model_used.name().to_string(),
            warning: a.warning.clone(),
        }
    }
}

/// Everything the static analysis knows about a program. Field order is the
/// output order; all lists are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnalysisReport {
    pub jointly_affected: Vec<Position>,
    pub restraints: Vec<Edge>,
    pub restrained_variables: Vec<String>,
    pub core_safe_positions: Vec<Position>,
    pub positive_reliances: Vec<Edge>,
    pub negative_reliances: Vec<Edge>,
    pub stratification: Option<Vec<Vec<String>>>,
    pub query_classifications: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answers: Option<Vec<AnswerRecord>>,
}

fn edges(analysis: &Analysis, pairs: impl IntoIterator<Item = (usize, usize)>) -> Vec<Edge> {
    let id = |i: usize| analysis.rules.rules()[i].id().to_string();
    let mut out: Vec<(usize, usize)> = pairs.into_iter().collect();
    out.sort();
    out.into_iter()
        .map(|(a, b)| Edge { from: id(a), to: id(b) })
        .collect()
}

impl AnalysisReport {
    /// Builds the report; queries are classified against `trace` when one is
    /// given, statically otherwise.
    pub fn new(analysis: &Analysis, queries: &[Query], trace: Option<&[ChaseStep]>) -> AnalysisReport {
        AnalysisReport::with_stratification(analysis, queries, trace, find_core_safe_stratification(analysis))
    }

    pub fn with_stratification(
        analysis: &Analysis,
        queries: &[Query],
        trace: Option<&[ChaseStep]>,
        stratification: Option<Stratification>,
    ) -> AnalysisReport {
        let rel = &analysis.relations;
        let restrained: BTreeSet<String> = analysis
            .restraints
            .restrained_variables
            .iter()
            .map(|v| v.label(&analysis.rules))
            .collect();
        AnalysisReport {
            jointly_affected: analysis.affection.jointly_affected.iter().cloned().collect(),
            restraints: edges(analysis, rel.restraints.keys().copied()),
            restrained_variables: restrained.into_iter().collect(),
            core_safe_positions: analysis.core_safe_positions().into_iter().collect(),
            positive_reliances: edges(analysis, rel.positive.iter().copied()),
            negative_reliances: edges(analysis, rel.negative.iter().copied()),
            stratification: stratification.map(|s| s.strata),
            query_classifications: queries
                .iter()
                .map(|q| {
                    let level = analysis.classify_query(q, trace).level;
                    (q.name().to_string(), level.name().to_string())
                })
                .collect(),
            answers: None,
        }
    }
}

fn list<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    let parts: Vec<String> = items.iter().map(f).collect();
    format!("[{}]", parts.join(", "))
}

/// Line-oriented `key = value` rendering in a fixed key order.
pub fn emit_report(report: &AnalysisReport) -> String {
    let edge = |e: &Edge| format!("{} -> {}", e.from, e.to);
    let mut out = String::new();
    let mut line = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    line("jointly_affected", list(&report.jointly_affected, |p| p.to_string()));
    line("restraints", list(&report.restraints, edge));
    line("restrained_variables", list(&report.restrained_variables, |s| s.clone()));
    line("core_safe_positions", list(&report.core_safe_positions, |p| p.to_string()));
    line("positive_reliances", list(&report.positive_reliances, edge));
    line("negative_reliances", list(&report.negative_reliances, edge));
    line(
        "stratification",
        match &report.stratification {
            Some(s) => list(s, |stratum| list(stratum, |r| r.clone())),
            None => "none".to_string(),
        },
    );
    let classes: Vec<String> = report
        .query_classifications
        .iter()
        .map(|(q, l)| format!("{q}: {l}"))
        .collect();
    line("query_classifications", list(&classes, |s| s.clone()));
    if let Some(answers) = &report.answers {
        line("answers", list(answers, format_answer));
    }
    out
}

/// `q: entailed=false level=unsafe model=core`
pub fn format_answer(a: &AnswerRecord) -> String {
    format!("{}: entailed={} level={} model={}", a.name, a.entailed, a.level, a.model_used)
}

pub fn emit_report_json(report: &AnalysisReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}
