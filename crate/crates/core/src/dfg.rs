//! Dataflow graphs: the typed, acyclic input to synthesis.
//!
//! A [`Dfg`] is a set of binary operation nodes connected by value edges,
//! with designated primary inputs and outputs. Nodes are kept sorted by id,
//! so a [`NodeIdx`] order is the id order used for every deterministic
//! tie-break downstream.
//!
//! The text format is line oriented:
//!
//! ```text
//! dfg <name>
//! input <id>
//! output <id>
//! node <id> <optype>
//! edge <id> <src-id> -> <dst-id>[.<port>]
//! ```
//!
//! `#` starts a comment. The port suffix is required when the destination is
//! a node and forbidden when it is a primary output.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeIdx = usize;

/// Resource type of an operation. Every operator is binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpType {
    Add,
    Sub,
    Mul,
}

impl OpType {
    pub const ALL: [OpType; 3] = [OpType::Add, OpType::Sub, OpType::Mul];

    pub fn name(self) -> &'static str {
        match self {
            OpType::Add => "add",
            OpType::Sub => "sub",
            OpType::Mul => "mul",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Applies the operator modulo `2^width`, where `mask == 2^width - 1`.
    pub fn apply(self, a: u64, b: u64, mask: u64) -> u64 {
        let r = match self {
            OpType::Add => a.wrapping_add(b),
            OpType::Sub => a.wrapping_sub(b),
            OpType::Mul => a.wrapping_mul(b),
        };
        r & mask
    }
}

impl fmt::Display for OpType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "add" => Ok(OpType::Add),
            "sub" => Ok(OpType::Sub),
            "mul" => Ok(OpType::Mul),
            _ => Err(format!("unknown operator type `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: String,
    pub op: OpType,
}

/// Where a value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Input(usize),
    Node(NodeIdx),
}

/// Where a value goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sink {
    Node { node: NodeIdx, port: u8 },
    Output(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub id: String,
    pub src: Source,
    pub dst: Sink,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DfgError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate id `{0}`")]
    Duplicate(String),
    #[error("edge `{edge}` references unknown endpoint `{endpoint}`")]
    Dangling { edge: String, endpoint: String },
    #[error("edge `{edge}`: {message}")]
    BadEdge { edge: String, message: String },
    #[error("node `{node}` must have exactly one operand on each of ports 0 and 1")]
    Operands { node: String },
    #[error("primary output `{output}` is fed by {count} edges, expected exactly 1")]
    OutputFanIn { output: String, count: usize },
    #[error("primary input `{0}` has no outgoing edge")]
    UnusedInput(String),
    #[error("cycle detected through node `{0}`")]
    Cycle(String),
    #[error("node `{0}` reaches no primary output")]
    DeadNode(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("graph has no nodes")]
    Empty,
}

/// A validated dataflow graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dfg {
    name: String,
    nodes: Vec<Node>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    edges: Vec<Edge>,
    operands: Vec<[usize; 2]>,
    out_edges: Vec<Vec<usize>>,
    output_edge: Vec<usize>,
    preds: Vec<Vec<NodeIdx>>,
    succs: Vec<Vec<NodeIdx>>,
}

impl Dfg {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, n: NodeIdx) -> &Node {
        &self.nodes[n]
    }

    pub fn op(&self, n: NodeIdx) -> OpType {
        self.nodes[n].op
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn inputs(&self) -> &[String] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[String] {
        &self.outputs
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_index(&self, id: &str) -> Result<NodeIdx, DfgError> {
        self.nodes
            .binary_search_by(|n| n.id.as_str().cmp(id))
            .map_err(|_| DfgError::UnknownNode(id.to_string()))
    }

    /// The edge feeding `port` of node `n`.
    pub fn operand_edge(&self, n: NodeIdx, port: usize) -> &Edge {
        &self.edges[self.operands[n][port]]
    }

    pub fn operand(&self, n: NodeIdx, port: usize) -> Source {
        self.operand_edge(n, port).src
    }

    /// Outgoing edges of node `n`, in declaration order.
    pub fn out_edges(&self, n: NodeIdx) -> impl Iterator<Item = &Edge> {
        self.out_edges[n].iter().map(move |&e| &self.edges[e])
    }

    /// The edge feeding primary output `o`.
    pub fn output_source(&self, o: usize) -> Source {
        self.edges[self.output_edge[o]].src
    }

    /// Distinct node predecessors of `n`, ascending.
    pub fn predecessors(&self, n: NodeIdx) -> &[NodeIdx] {
        &self.preds[n]
    }

    /// Distinct node successors of `n`, ascending.
    pub fn successors(&self, n: NodeIdx) -> &[NodeIdx] {
        &self.succs[n]
    }

    /// Number of outgoing edges of `n`, primary-output edges included.
    pub fn fanout_count(&self, n: NodeIdx) -> usize {
        self.out_edges[n].len()
    }

    /// Primary outputs reachable from `n` along directed paths.
    pub fn reachable_primary_outputs(&self, n: NodeIdx) -> BTreeSet<usize> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![n];
        let mut outs = BTreeSet::new();
        seen[n] = true;
        while let Some(u) = stack.pop() {
            for e in self.out_edges(u) {
                match e.dst {
                    Sink::Output(o) => {
                        outs.insert(o);
                    }
                    Sink::Node { node, .. } => {
                        if !seen[node] {
                            seen[node] = true;
                            stack.push(node);
                        }
                    }
                }
            }
        }
        outs
    }

    /// Topological order with ties broken by ascending node id.
    pub fn topo_order(&self) -> Vec<NodeIdx> {
        topo_sort(
            self.nodes.len(),
            |n| self.succs[n].iter().copied(),
            |n| self.preds[n].len(),
        )
        .expect("validated graph is acyclic")
    }

    /// Length in steps of the longest operation chain.
    pub fn critical_path_len(&self) -> u32 {
        let mut depth = vec![0u32; self.nodes.len()];
        for n in self.topo_order() {
            depth[n] = 1 + self
                .predecessors(n)
                .iter()
                .map(|&p| depth[p])
                .max()
                .unwrap_or(0);
        }
        depth.into_iter().max().unwrap_or(0)
    }

    pub fn parse(text: &str) -> Result<Dfg, DfgError> {
        parse_dfg(text)
    }
}

fn topo_sort<S, I>(n: usize, succ: S, indegree: impl Fn(usize) -> usize) -> Option<Vec<usize>>
where
    S: Fn(usize) -> I,
    I: Iterator<Item = usize>,
{
    let mut indeg: Vec<usize> = (0..n).map(&indegree).collect();
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&v| indeg[v] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(v)) = ready.pop() {
        order.push(v);
        for s in succ(v) {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.push(Reverse(s));
            }
        }
    }
    (order.len() == n).then_some(order)
}

impl fmt::Display for Dfg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dfg {}", self.name)?;
        for i in &self.inputs {
            writeln!(f, "input {i}")?;
        }
        for o in &self.outputs {
            writeln!(f, "output {o}")?;
        }
        for n in &self.nodes {
            writeln!(f, "node {} {}", n.id, n.op)?;
        }
        for e in &self.edges {
            let src = match e.src {
                Source::Input(i) => &self.inputs[i],
                Source::Node(n) => &self.nodes[n].id,
            };
            match e.dst {
                Sink::Node { node, port } => writeln!(
                    f,
                    "edge {} {} -> {}.{}",
                    e.id, src, self.nodes[node].id, port
                )?,
                Sink::Output(o) => writeln!(f, "edge {} {} -> {}", e.id, src, self.outputs[o])?,
            }
        }
        Ok(())
    }
}

/// Collects declarations by id and validates them into a [`Dfg`].
#[derive(Debug, Clone, Default)]
pub struct DfgBuilder {
    name: String,
    inputs: Vec<String>,
    outputs: Vec<String>,
    nodes: Vec<(String, OpType)>,
    edges: Vec<(String, String, String, Option<u8>)>,
}

impl DfgBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        DfgBuilder {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn input(&mut self, id: impl Into<String>) -> &mut Self {
        self.inputs.push(id.into());
        self
    }

    pub fn output(&mut self, id: impl Into<String>) -> &mut Self {
        self.outputs.push(id.into());
        self
    }

    pub fn node(&mut self, id: impl Into<String>, op: OpType) -> &mut Self {
        self.nodes.push((id.into(), op));
        self
    }

    /// Adds an edge; `port` must be given exactly when `dst` is a node.
    pub fn edge(
        &mut self,
        id: impl Into<String>,
        src: impl Into<String>,
        dst: impl Into<String>,
        port: Option<u8>,
    ) -> &mut Self {
        self.edges.push((id.into(), src.into(), dst.into(), port));
        self
    }

    pub fn build(&self) -> Result<Dfg, DfgError> {
        #[derive(Clone, Copy)]
        enum Decl {
            Input(usize),
            Output(usize),
            Node(usize),
        }

        if self.nodes.is_empty() {
            return Err(DfgError::Empty);
        }

        let mut nodes: Vec<Node> = self
            .nodes
            .iter()
            .map(|(id, op)| Node {
                id: id.clone(),
                op: *op,
            })
            .collect();
        nodes.sort_by(|a, b| a.id.cmp(&b.id));

        let mut ids: HashMap<String, Decl> = HashMap::new();
        let mut add = |id: &str, d: Decl| -> Result<(), DfgError> {
            if ids.insert(id.to_string(), d).is_some() {
                return Err(DfgError::Duplicate(id.to_string()));
            }
            Ok(())
        };
        for (i, id) in self.inputs.iter().enumerate() {
            add(id, Decl::Input(i))?;
        }
        for (o, id) in self.outputs.iter().enumerate() {
            add(id, Decl::Output(o))?;
        }
        for (n, node) in nodes.iter().enumerate() {
            add(&node.id, Decl::Node(n))?;
        }

        let mut edge_ids = BTreeSet::new();
        let mut edges = Vec::with_capacity(self.edges.len());
        for (id, src, dst, port) in &self.edges {
            if !edge_ids.insert(id.as_str()) {
                return Err(DfgError::Duplicate(id.clone()));
            }
            let lookup = |name: &String| {
                ids.get(name.as_str())
                    .copied()
                    .ok_or_else(|| DfgError::Dangling {
                        edge: id.clone(),
                        endpoint: name.clone(),
                    })
            };
            let bad = |message: &str| DfgError::BadEdge {
                edge: id.clone(),
                message: message.to_string(),
            };
            let src = match lookup(src)? {
                Decl::Input(i) => Source::Input(i),
                Decl::Node(n) => Source::Node(n),
                Decl::Output(_) => return Err(bad("source is a primary output")),
            };
            let dst = match (lookup(dst)?, port) {
                (Decl::Node(n), Some(p)) if *p <= 1 => Sink::Node { node: n, port: *p },
                (Decl::Node(_), Some(_)) => return Err(bad("port must be 0 or 1")),
                (Decl::Node(_), None) => return Err(bad("destination node needs a port")),
                (Decl::Output(o), None) => Sink::Output(o),
                (Decl::Output(_), Some(_)) => return Err(bad("primary outputs take no port")),
                (Decl::Input(_), _) => return Err(bad("destination is a primary input")),
            };
            edges.push(Edge {
                id: id.clone(),
                src,
                dst,
            });
        }

        let mut succ = vec![Vec::new(); nodes.len()];
        let mut indeg = vec![0usize; nodes.len()];
        for e in &edges {
            if let (Source::Node(u), Sink::Node { node: v, .. }) = (e.src, e.dst) {
                succ[u].push(v);
                indeg[v] += 1;
            }
        }
        if topo_sort(nodes.len(), |v| succ[v].iter().copied(), |v| indeg[v]).is_none() {
            let culprit = find_cycle_node(&succ, &indeg);
            return Err(DfgError::Cycle(nodes[culprit].id.clone()));
        }

        let mut operands = vec![[usize::MAX; 2]; nodes.len()];
        let mut out_edges = vec![Vec::new(); nodes.len()];
        let mut output_feeds = vec![Vec::new(); self.outputs.len()];
        let mut input_used = vec![false; self.inputs.len()];
        for (e, edge) in edges.iter().enumerate() {
            match edge.src {
                Source::Input(i) => input_used[i] = true,
                Source::Node(n) => out_edges[n].push(e),
            }
            match edge.dst {
                Sink::Node { node, port } => {
                    let slot = &mut operands[node][port as usize];
                    if *slot != usize::MAX {
                        return Err(DfgError::Operands {
                            node: nodes[node].id.clone(),
                        });
                    }
                    *slot = e;
                }
                Sink::Output(o) => output_feeds[o].push(e),
            }
        }
        if let Some(n) = operands.iter().position(|ops| ops.contains(&usize::MAX)) {
            return Err(DfgError::Operands {
                node: nodes[n].id.clone(),
            });
        }
        let mut output_edge = Vec::with_capacity(self.outputs.len());
        for (o, feeds) in output_feeds.iter().enumerate() {
            if feeds.len() != 1 {
                return Err(DfgError::OutputFanIn {
                    output: self.outputs[o].clone(),
                    count: feeds.len(),
                });
            }
            output_edge.push(feeds[0]);
        }
        if let Some(i) = input_used.iter().position(|u| !u) {
            return Err(DfgError::UnusedInput(self.inputs[i].clone()));
        }

        let mut preds = vec![Vec::new(); nodes.len()];
        for (v, ops) in operands.iter().enumerate() {
            for &e in ops {
                if let Source::Node(u) = edges[e].src {
                    preds[v].push(u);
                }
            }
            preds[v].sort_unstable();
            preds[v].dedup();
        }
        for s in &mut succ {
            s.sort_unstable();
            s.dedup();
        }

        let dfg = Dfg {
            name: self.name.clone(),
            nodes,
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            edges,
            operands,
            out_edges,
            output_edge,
            preds,
            succs: succ,
        };

        for v in 0..dfg.nodes.len() {
            if dfg.reachable_primary_outputs(v).is_empty() {
                return Err(DfgError::DeadNode(dfg.nodes[v].id.clone()));
            }
        }
        Ok(dfg)
    }
}

fn find_cycle_node(succ: &[Vec<usize>], indeg: &[usize]) -> NodeIdx {
    // Peel sources; whatever survives lies on or downstream of a cycle.
    let n = succ.len();
    let mut indeg = indeg.to_vec();
    let mut alive = vec![true; n];
    let mut queue: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    while let Some(v) = queue.pop() {
        alive[v] = false;
        for &s in &succ[v] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                queue.push(s);
            }
        }
    }
    (0..n)
        .find(|&v| alive[v] && succ[v].contains(&v))
        .or_else(|| (0..n).find(|&v| alive[v]))
        .unwrap_or(0)
}

/// Parses and validates DFG source text.
pub fn parse_dfg(text: &str) -> Result<Dfg, DfgError> {
    let mut builder: Option<DfgBuilder> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        let tokens = tokenize(line);
        let Some(&(col, keyword)) = tokens.first() else {
            continue;
        };
        let err = |column: usize, message: String| DfgError::Syntax {
            line: lineno + 1,
            column,
            message,
        };
        let expect_len = |n: usize| {
            if tokens.len() != n {
                let column = tokens.get(n).map_or(line.len() + 1, |t| t.0);
                Err(err(
                    column,
                    format!("`{keyword}` takes {} operand(s)", n - 1),
                ))
            } else {
                Ok(())
            }
        };
        let ident = |(column, tok): (usize, &str)| {
            if tok.is_empty() || tok.contains('.') || tok == "->" {
                Err(err(column, format!("invalid identifier `{tok}`")))
            } else {
                Ok(tok.to_string())
            }
        };

        if keyword == "dfg" {
            expect_len(2)?;
            if builder.is_some() {
                return Err(err(col, "duplicate `dfg` header".into()));
            }
            builder = Some(DfgBuilder::new(ident(tokens[1])?));
            continue;
        }
        let Some(b) = builder.as_mut() else {
            return Err(err(col, "expected `dfg <name>` header first".into()));
        };
        match keyword {
            "input" => {
                expect_len(2)?;
                b.input(ident(tokens[1])?);
            }
            "output" => {
                expect_len(2)?;
                b.output(ident(tokens[1])?);
            }
            "node" => {
                expect_len(3)?;
                let op = tokens[2]
                    .1
                    .parse::<OpType>()
                    .map_err(|m| err(tokens[2].0, m))?;
                b.node(ident(tokens[1])?, op);
            }
            "edge" => {
                expect_len(5)?;
                if tokens[3].1 != "->" {
                    return Err(err(
                        tokens[3].0,
                        format!("expected `->`, found `{}`", tokens[3].1),
                    ));
                }
                let (dcol, dst) = tokens[4];
                let (dst, port) = match dst.rsplit_once('.') {
                    Some((d, p)) => {
                        let port = p
                            .parse::<u8>()
                            .map_err(|_| err(dcol + d.len() + 1, format!("invalid port `{p}`")))?;
                        (d, Some(port))
                    }
                    None => (dst, None),
                };
                b.edge(
                    ident(tokens[1])?,
                    ident(tokens[2])?,
                    ident((dcol, dst))?,
                    port,
                );
            }
            other => return Err(err(col, format!("unknown directive `{other}`"))),
        }
    }

    builder
        .ok_or(DfgError::Syntax {
            line: 1,
            column: 1,
            message: "missing `dfg <name>` header".into(),
        })?
        .build()
}

/// Whitespace tokens with their 1-based columns.
fn tokenize(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s + 1, &line[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &line[s..]));
    }
    out
}
