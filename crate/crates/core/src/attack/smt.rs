//! QF_BV encoding of locked designs and an external-solver DIP backend.
//!
//! Designs are loop-free, so the encoding unrolls all control steps into a
//! straight-line term graph. Terms are hash-consed and constant-folded, which
//! keeps oracle constraints small: with concrete inputs only the logic
//! behind switch boxes stays symbolic. The same term graph is printed as
//! SMT-LIB and evaluated directly, so both views share one definition.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use super::{AttackError, Constraint, Dip};
use crate::dfg::OpType;
use crate::lock::LockedDesign;
use crate::polysb::{CorruptionPolicy, DesignKey, SbKey};
use crate::sim::{Domain, SimInput, SimResult, Simulator};
use crate::word::width_mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TermId(u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Term {
    Const(u64),
    Input(usize),
    /// 8-bit key of box `sb` in key copy `copy`.
    Key {
        copy: u8,
        sb: usize,
    },
    Op(OpType, TermId, TermId),
    /// Boolean: transistor `t` of a key conducts.
    Conducts {
        key: TermId,
        t: u8,
    },
    Ite(TermId, TermId, TermId),
    Or(TermId, TermId),
}

/// A hash-consed term graph over one design's word width.
#[derive(Debug, Clone)]
pub struct Encoding {
    width: u32,
    mask: u64,
    inputs: usize,
    sbs: usize,
    terms: Vec<Term>,
    index: HashMap<Term, TermId>,
    asserts: Vec<String>,
    unsat: bool,
}

impl Encoding {
    pub fn new(width: u32, inputs: usize, sbs: usize) -> Encoding {
        Encoding {
            width,
            mask: width_mask(width),
            inputs,
            sbs,
            terms: Vec::new(),
            index: HashMap::new(),
            asserts: Vec::new(),
            unsat: false,
        }
    }

    pub fn for_design(design: &LockedDesign) -> Result<Encoding, AttackError> {
        if design.policy != CorruptionPolicy::WiredOr {
            return Err(AttackError::Policy(design.policy));
        }
        Ok(Encoding::new(
            design.netlist.width(),
            design.netlist.meta.inputs.len(),
            design.sb_count(),
        ))
    }

    fn intern(&mut self, t: Term) -> TermId {
        if let Some(&id) = self.index.get(&t) {
            return id;
        }
        let id = TermId(self.terms.len() as u32);
        self.terms.push(t);
        self.index.insert(t, id);
        id
    }

    fn constant(&self, id: TermId) -> Option<u64> {
        match self.terms[id.0 as usize] {
            Term::Const(v) => Some(v),
            _ => None,
        }
    }

    fn mk_const(&mut self, v: u64) -> TermId {
        let v = v & self.mask;
        self.intern(Term::Const(v))
    }

    fn mk_op(&mut self, op: OpType, a: TermId, b: TermId) -> TermId {
        match (self.constant(a), self.constant(b)) {
            (Some(x), Some(y)) => self.mk_const(op.apply(x, y, self.mask)),
            _ => self.intern(Term::Op(op, a, b)),
        }
    }

    fn mk_ite(&mut self, c: TermId, a: TermId, b: TermId) -> TermId {
        if a == b {
            return a;
        }
        self.intern(Term::Ite(c, a, b))
    }

    fn mk_or(&mut self, a: TermId, b: TermId) -> TermId {
        match (self.constant(a), self.constant(b)) {
            (Some(0), _) => b,
            (_, Some(0)) => a,
            (Some(x), Some(y)) => self.mk_const(x | y),
            _ if a == b => a,
            _ => self.intern(Term::Or(a, b)),
        }
    }

    /// Output terms of `sim` under key copy `copy`; inputs are symbolic unless given.
    pub fn outputs(&mut self, sim: &Simulator, copy: u8, input: Option<&SimInput>) -> Vec<TermId> {
        let mut dom = Symbolic {
            enc: self,
            copy,
            input,
        };
        sim.execute(&mut dom)
    }

    /// Asserts that `copy` reproduces an oracle answer.
    pub fn assert_constraint(&mut self, sim: &Simulator, copy: u8, c: &Constraint) {
        let outs = self.outputs(sim, copy, Some(&c.input));
        for (t, &want) in outs.into_iter().zip(&c.output.outputs) {
            match self.constant(t) {
                Some(v) if v == want => {}
                Some(_) => self.unsat = true,
                None => {
                    let lit = self.literal(want);
                    self.asserts.push(format!("(= {} {lit})", self.name(t)));
                }
            }
        }
    }

    /// Asserts that the two output vectors differ somewhere.
    pub fn assert_distinct(&mut self, a: &[TermId], b: &[TermId]) {
        let diffs: Vec<String> = a
            .iter()
            .zip(b)
            .filter(|(x, y)| x != y)
            .map(|(&x, &y)| format!("(distinct {} {})", self.name(x), self.name(y)))
            .collect();
        match diffs.len() {
            0 => self.unsat = true,
            1 => self.asserts.push(diffs[0].clone()),
            _ => self.asserts.push(format!("(or {})", diffs.join(" "))),
        }
    }

    /// Pins the symbolic inputs and key copy 1 to concrete values.
    pub fn assert_assignment(&mut self, input: &SimInput, key: &DesignKey) {
        for (i, v) in input.0.iter().enumerate() {
            let lit = self.literal(*v);
            self.asserts.push(format!("(= in{i} {lit})"));
        }
        for (s, k) in key.0.iter().enumerate() {
            self.asserts.push(format!("(= k1_{s} #b{:08b})", k.0));
        }
    }

    fn literal(&self, v: u64) -> String {
        format!("(_ bv{} {})", v & self.mask, self.width)
    }

    fn name(&self, t: TermId) -> String {
        match self.terms[t.0 as usize] {
            Term::Const(v) => self.literal(v),
            Term::Input(i) => format!("in{i}"),
            Term::Key { copy, sb } => format!("k{copy}_{sb}"),
            _ => format!("t{}", t.0),
        }
    }

    fn body(&self, t: &Term) -> String {
        match *t {
            Term::Op(op, a, b) => {
                let f = match op {
                    OpType::Add => "bvadd",
                    OpType::Sub => "bvsub",
                    OpType::Mul => "bvmul",
                };
                format!("({f} {} {})", self.name(a), self.name(b))
            }
            Term::Conducts { key, t } => {
                let cg = 7 - 2 * t;
                let pg = 6 - 2 * t;
                let k = self.name(key);
                format!("(= ((_ extract {cg} {cg}) {k}) ((_ extract {pg} {pg}) {k}))")
            }
            Term::Ite(c, a, b) => {
                format!("(ite {} {} {})", self.name(c), self.name(a), self.name(b))
            }
            Term::Or(a, b) => format!("(bvor {} {})", self.name(a), self.name(b)),
            Term::Const(_) | Term::Input(_) | Term::Key { .. } => {
                unreachable!("leaf terms are inlined")
            }
        }
    }

    /// Renders declarations, definitions, assertions and a `get-value` for `values`.
    pub fn to_smtlib(&self, copies: u8, values: &[String]) -> String {
        let mut s = String::from("(set-option :produce-models true)\n(set-logic QF_BV)\n");
        for i in 0..self.inputs {
            let _ = writeln!(s, "(declare-fun in{i} () (_ BitVec {}))", self.width);
        }
        for copy in 1..=copies {
            for sb in 0..self.sbs {
                let _ = writeln!(s, "(declare-fun k{copy}_{sb} () (_ BitVec 8))");
            }
        }
        for (i, t) in self.terms.iter().enumerate() {
            let sort = match t {
                Term::Const(_) | Term::Input(_) | Term::Key { .. } => continue,
                Term::Conducts { .. } => "Bool".to_string(),
                _ => format!("(_ BitVec {})", self.width),
            };
            let _ = writeln!(s, "(define-fun t{i} () {sort} {})", self.body(t));
        }
        if self.unsat {
            s.push_str("(assert false)\n");
        }
        for a in &self.asserts {
            let _ = writeln!(s, "(assert {a})");
        }
        s.push_str("(check-sat)\n");
        if !values.is_empty() {
            let _ = writeln!(s, "(get-value ({}))", values.join(" "));
        }
        s
    }

    /// Names of a term, usable in a `get-value`.
    pub fn term_name(&self, t: TermId) -> String {
        self.name(t)
    }

    /// Evaluates a term under concrete inputs and keys (`keys[c]` is copy `c + 1`).
    pub fn eval(&self, t: TermId, inputs: &[u64], keys: &[&DesignKey]) -> u64 {
        let mut memo: HashMap<TermId, u64> = HashMap::new();
        self.eval_memo(t, inputs, keys, &mut memo)
    }

    fn eval_memo(
        &self,
        t: TermId,
        inputs: &[u64],
        keys: &[&DesignKey],
        memo: &mut HashMap<TermId, u64>,
    ) -> u64 {
        if let Some(&v) = memo.get(&t) {
            return v;
        }
        let mut ev = |x: TermId| self.eval_memo(x, inputs, keys, memo);
        let v = match self.terms[t.0 as usize] {
            Term::Const(v) => v,
            Term::Input(i) => inputs[i] & self.mask,
            Term::Key { copy, sb } => keys[copy as usize - 1].0[sb].0 as u64,
            Term::Op(op, a, b) => {
                let (a, b) = (ev(a), ev(b));
                op.apply(a, b, self.mask)
            }
            Term::Conducts { key, t } => {
                SbKey(ev(key) as u8).transistor(t as usize).conducts() as u64
            }
            Term::Ite(c, a, b) => {
                if ev(c) != 0 {
                    ev(a)
                } else {
                    ev(b)
                }
            }
            Term::Or(a, b) => ev(a) | ev(b),
        };
        memo.insert(t, v);
        v
    }
}

struct Symbolic<'a> {
    enc: &'a mut Encoding,
    copy: u8,
    input: Option<&'a SimInput>,
}

impl Domain for Symbolic<'_> {
    type V = TermId;

    fn zero(&mut self) -> TermId {
        self.enc.mk_const(0)
    }

    fn input(&mut self, index: usize) -> TermId {
        match self.input {
            Some(i) => self.enc.mk_const(i.0[index]),
            None => self.enc.intern(Term::Input(index)),
        }
    }

    fn op(&mut self, op: OpType, a: TermId, b: TermId) -> TermId {
        self.enc.mk_op(op, a, b)
    }

    fn switch(&mut self, sb: usize, x: TermId, y: TermId) -> (TermId, TermId) {
        let e = &mut *self.enc;
        let key = e.intern(Term::Key {
            copy: self.copy,
            sb,
        });
        let zero = e.mk_const(0);
        let drive = |e: &mut Encoding, tx: u8, ty: u8| {
            let cx = e.intern(Term::Conducts { key, t: tx });
            let cy = e.intern(Term::Conducts { key, t: ty });
            let a = e.mk_ite(cx, x, zero);
            let b = e.mk_ite(cy, y, zero);
            e.mk_or(a, b)
        };
        // Z is reached through T1 (from X) and T3 (from Y); W through T2 and T4.
        let z = drive(e, 0, 2);
        let w = drive(e, 1, 3);
        (z, w)
    }
}

/// Miter query: two key copies consistent with `constraints` that disagree on some input.
pub fn export_smtlib(
    design: &LockedDesign,
    constraints: &[Constraint],
) -> Result<String, AttackError> {
    let (enc, values) = miter(design, constraints)?;
    Ok(enc.to_smtlib(2, &values))
}

fn miter(
    design: &LockedDesign,
    constraints: &[Constraint],
) -> Result<(Encoding, Vec<String>), AttackError> {
    let sim = Simulator::for_design(design)?;
    let mut enc = Encoding::for_design(design)?;
    let o1 = enc.outputs(&sim, 1, None);
    let o2 = enc.outputs(&sim, 2, None);
    enc.assert_distinct(&o1, &o2);
    for c in constraints {
        enc.assert_constraint(&sim, 1, c);
        enc.assert_constraint(&sim, 2, c);
    }
    let mut values: Vec<String> = (0..enc.inputs).map(|i| format!("in{i}")).collect();
    for copy in 1..=2 {
        values.extend((0..enc.sbs).map(|s| format!("k{copy}_{s}")));
    }
    Ok((enc, values))
}

/// How to start an external SMT-LIB solver; the query file path is appended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolverCommand {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl SolverCommand {
    /// Parses a whitespace-separated command line such as `z3 -smt2`.
    pub fn parse(cmd: &str) -> Option<SolverCommand> {
        let mut parts = cmd.split_whitespace().map(String::from);
        Some(SolverCommand {
            program: parts.next()?,
            args: parts.collect(),
            timeout: Duration::from_secs(60),
        })
    }

    /// Whether the program exists, either as a path or on `PATH`.
    pub fn is_available(&self) -> bool {
        let program = Path::new(&self.program);
        if program.components().count() > 1 {
            return program.is_file();
        }
        std::env::var_os("PATH")
            .map(|paths| std::env::split_paths(&paths).any(|dir| dir.join(program).is_file()))
            .unwrap_or(false)
    }

    /// Runs the solver on `query`, returning whether it is satisfiable and the
    /// `get-value` pairs.
    pub fn solve(&self, query: &str) -> Result<Option<HashMap<String, u64>>, AttackError> {
        let mut file = tempfile::Builder::new().suffix(".smt2").tempfile()?;
        file.write_all(query.as_bytes())?;
        file.flush()?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .arg(file.path())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| AttackError::Solver(format!("cannot start `{}`: {e}", self.program)))?;
        let start = Instant::now();
        loop {
            if child.try_wait()?.is_some() {
                break;
            }
            if start.elapsed() > self.timeout {
                let _ = child.kill();
                let _ = child.wait();
                return Err(AttackError::Solver("solver timed out".into()));
            }
            std::thread::sleep(Duration::from_millis(2));
        }
        let out = child.wait_with_output()?;
        let text = String::from_utf8_lossy(&out.stdout);
        let mut lines = text.trim_start().splitn(2, '\n');
        match lines.next().map(str::trim) {
            Some("unsat") => Ok(None),
            Some("sat") => parse_values(lines.next().unwrap_or("")).map(Some),
            other => Err(AttackError::Solver(format!(
                "unexpected answer {:?}; stderr: {}",
                other.unwrap_or(""),
                String::from_utf8_lossy(&out.stderr).trim()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

fn parse_sexp(text: &str) -> Result<Sexp, AttackError> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        match ch {
            '(' | ')' => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
                tokens.push(ch.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    let mut pos = 0;
    let e = parse_tokens(&tokens, &mut pos)?;
    Ok(e)
}

fn parse_tokens(tokens: &[String], pos: &mut usize) -> Result<Sexp, AttackError> {
    let tok = tokens
        .get(*pos)
        .ok_or_else(|| AttackError::Decode("unexpected end of solver output".into()))?;
    *pos += 1;
    match tok.as_str() {
        "(" => {
            let mut items = Vec::new();
            while tokens.get(*pos).map(String::as_str) != Some(")") {
                items.push(parse_tokens(tokens, pos)?);
            }
            *pos += 1;
            Ok(Sexp::List(items))
        }
        ")" => Err(AttackError::Decode("unbalanced `)`".into())),
        a => Ok(Sexp::Atom(a.to_string())),
    }
}

fn sexp_value(e: &Sexp) -> Result<u64, AttackError> {
    let bad = || AttackError::Decode(format!("unsupported value {e:?}"));
    match e {
        Sexp::Atom(a) => {
            if let Some(b) = a.strip_prefix("#b") {
                u64::from_str_radix(b, 2).map_err(|_| bad())
            } else if let Some(h) = a.strip_prefix("#x") {
                u64::from_str_radix(h, 16).map_err(|_| bad())
            } else if a == "true" {
                Ok(1)
            } else if a == "false" {
                Ok(0)
            } else {
                Err(bad())
            }
        }
        Sexp::List(items) => match items.as_slice() {
            [Sexp::Atom(u), Sexp::Atom(bv), Sexp::Atom(_)] if u == "_" && bv.starts_with("bv") => {
                bv[2..].parse().map_err(|_| bad())
            }
            _ => Err(bad()),
        },
    }
}

/// Parses a `get-value` answer into `name -> value`.
pub fn parse_values(text: &str) -> Result<HashMap<String, u64>, AttackError> {
    let mut out = HashMap::new();
    if text.trim().is_empty() {
        return Ok(out);
    }
    let Sexp::List(pairs) = parse_sexp(text)? else {
        return Err(AttackError::Decode("expected a list of pairs".into()));
    };
    for p in pairs {
        match p {
            Sexp::List(kv) if kv.len() == 2 => {
                let Sexp::Atom(name) = &kv[0] else {
                    return Err(AttackError::Decode("pair name is not an atom".into()));
                };
                out.insert(name.clone(), sexp_value(&kv[1])?);
            }
            other => return Err(AttackError::Decode(format!("malformed pair {other:?}"))),
        }
    }
    Ok(out)
}

fn decode_key(
    values: &HashMap<String, u64>,
    copy: u8,
    sbs: usize,
) -> Result<DesignKey, AttackError> {
    (0..sbs)
        .map(|s| {
            let name = format!("k{copy}_{s}");
            values
                .get(&name)
                .map(|&v| SbKey(v as u8))
                .ok_or_else(|| AttackError::Decode(format!("missing {name}")))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(DesignKey)
}

/// Solver-backed DIP search.
pub fn find_dip(
    design: &LockedDesign,
    constraints: &[Constraint],
    solver: &SolverCommand,
) -> Result<Option<Dip>, AttackError> {
    if design.sb_count() == 0 {
        return Ok(None);
    }
    let (enc, values) = miter(design, constraints)?;
    let Some(model) = solver.solve(&enc.to_smtlib(2, &values))? else {
        return Ok(None);
    };
    let input = (0..enc.inputs)
        .map(|i| {
            model
                .get(&format!("in{i}"))
                .copied()
                .ok_or_else(|| AttackError::Decode(format!("missing in{i}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Some(Dip {
        input: SimInput(input),
        k1: decode_key(&model, 1, enc.sbs)?,
        k2: decode_key(&model, 2, enc.sbs)?,
    }))
}

/// Any key consistent with every constraint, or `None` if there is none.
pub fn consistent_key(
    design: &LockedDesign,
    constraints: &[Constraint],
    solver: &SolverCommand,
) -> Result<Option<DesignKey>, AttackError> {
    let sim = Simulator::for_design(design)?;
    let mut enc = Encoding::for_design(design)?;
    for c in constraints {
        enc.assert_constraint(&sim, 1, c);
    }
    let values: Vec<String> = (0..enc.sbs).map(|s| format!("k1_{s}")).collect();
    match solver.solve(&enc.to_smtlib(1, &values))? {
        Some(model) => Ok(Some(decode_key(&model, 1, enc.sbs)?)),
        None => Ok(None),
    }
}

/// Outputs the encoding models for a concrete key and input, by internal evaluation.
pub fn modeled_outputs(
    design: &LockedDesign,
    key: &DesignKey,
    input: &SimInput,
) -> Result<SimResult, AttackError> {
    let sim = Simulator::for_design(design)?;
    let mut enc = Encoding::for_design(design)?;
    let outs = enc.outputs(&sim, 1, None);
    let outputs = outs
        .iter()
        .map(|&t| enc.eval(t, &input.0, &[key]))
        .collect::<Vec<_>>();
    Ok(SimResult {
        unknown: vec![0; outputs.len()],
        outputs,
    })
}

/// Outputs the encoding models for a concrete key and input, as computed by the solver.
pub fn solver_outputs(
    design: &LockedDesign,
    key: &DesignKey,
    input: &SimInput,
    solver: &SolverCommand,
) -> Result<SimResult, AttackError> {
    let sim = Simulator::for_design(design)?;
    let mut enc = Encoding::for_design(design)?;
    let outs = enc.outputs(&sim, 1, None);
    enc.assert_assignment(input, key);
    let names: Vec<String> = outs.iter().map(|&t| enc.term_name(t)).collect();
    let asked: Vec<String> = names
        .iter()
        .zip(&outs)
        .filter(|(_, &t)| enc.constant(t).is_none())
        .map(|(n, _)| n.clone())
        .collect();
    let model = solver
        .solve(&enc.to_smtlib(1, &asked))?
        .ok_or_else(|| AttackError::Solver("pinned assignment reported unsat".into()))?;
    let outputs = names
        .iter()
        .zip(&outs)
        .map(|(n, &t)| match enc.constant(t) {
            Some(v) => Ok(v),
            None => model
                .get(n)
                .copied()
                .ok_or_else(|| AttackError::Decode(format!("missing {n}"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SimResult {
        unknown: vec![0; outputs.len()],
        outputs,
    })
}
