//! Deterministic automata for co-safe formulas, distance to acceptance and the
//! discrete observation policy.
//!
//! Compilation runs in three stages:
//!
//! 1. a tableau expands a conjunction of obligations on one input letter into
//!    "satisfied now" plus a disjunction of successor obligation sets, which
//!    is a nondeterministic machine over obligation sets;
//! 2. subset construction over that machine, with every state that can see a
//!    satisfied prefix collapsed into one absorbing accept state;
//! 3. Hopcroft partition refinement, after which the class that cannot reach
//!    acceptance is removed so the transition function becomes partial.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scltl::{Alphabet, Formula, ObservationId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateId(pub usize);

impl StateId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for StateId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "s{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AutomatonError {
    #[error("formula has an empty language: no accepting state is reachable from the initial state")]
    EmptyLanguage,
    #[error("no admissible observation decreases the distance to acceptance at {0}")]
    EmptyPolicySet(StateId),
    #[error("transition from {state} on observation {obs} is undefined")]
    UndefinedTransition { state: StateId, obs: usize },
    #[error("fixed word has no entry {index} admissible at {state}")]
    WordNotAdmissible { state: StateId, index: usize },
    #[error("malformed automaton: {0}")]
    Malformed(String),
}

/// Deterministic automaton with a partial transition function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fsa {
    alphabet: Alphabet,
    initial: StateId,
    accepting: Vec<bool>,
    delta: Vec<Vec<Option<StateId>>>,
}

impl Fsa {
    /// Builds an automaton from explicit tables; `delta[s][o]` is the successor.
    pub fn from_parts(
        alphabet: Alphabet,
        initial: StateId,
        accepting: Vec<bool>,
        delta: Vec<Vec<Option<StateId>>>,
    ) -> Result<Self, AutomatonError> {
        let n = accepting.len();
        if n == 0 || initial.0 >= n || delta.len() != n {
            return Err(AutomatonError::Malformed("state tables disagree".into()));
        }
        for row in &delta {
            if row.len() != alphabet.len() {
                return Err(AutomatonError::Malformed("transition row has wrong width".into()));
            }
            if row.iter().flatten().any(|t| t.0 >= n) {
                return Err(AutomatonError::Malformed("transition to unknown state".into()));
            }
        }
        Ok(Self { alphabet, initial, accepting, delta })
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn num_states(&self) -> usize {
        self.accepting.len()
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.num_states()).map(StateId)
    }

    pub fn is_accepting(&self, s: StateId) -> bool {
        self.accepting[s.0]
    }

    pub fn step(&self, s: StateId, o: ObservationId) -> Option<StateId> {
        self.delta[s.0][o.0]
    }

    /// True iff the run on `word` exists and visits an accepting state at or
    /// before the last symbol.
    pub fn accepts(&self, word: &[ObservationId]) -> bool {
        let mut s = self.initial;
        for &o in word {
            match self.step(s, o) {
                Some(next) => s = next,
                None => return false,
            }
            if self.is_accepting(s) {
                return true;
            }
        }
        false
    }

    /// The observations with a defined transition out of `s`.
    pub fn admissible(&self, s: StateId) -> BTreeSet<ObservationId> {
        self.alphabet.ids().filter(|&o| self.step(s, o).is_some()).collect()
    }

    /// The observations whose occurrence at `s` makes acceptance impossible.
    pub fn forbidden(&self, s: StateId) -> BTreeSet<ObservationId> {
        self.alphabet.ids().filter(|&o| self.step(s, o).is_none()).collect()
    }

    /// GraphViz rendering with states in index order.
    pub fn export_dot(&self) -> String {
        let mut out = String::new();
        out.push_str("digraph fsa {\n  rankdir=LR;\n  __start [shape=point];\n");
        for s in self.states() {
            let shape = if self.is_accepting(s) { "doublecircle" } else { "circle" };
            let _ = writeln!(out, "  {s} [shape={shape}];");
        }
        let _ = writeln!(out, "  __start -> {};", self.initial);
        for s in self.states() {
            let mut by_target: BTreeMap<StateId, Vec<&str>> = BTreeMap::new();
            for o in self.alphabet.ids() {
                if let Some(t) = self.step(s, o) {
                    by_target.entry(t).or_default().push(self.alphabet.name(o));
                }
            }
            for (t, labels) in by_target {
                let _ = writeln!(out, "  {s} -> {t} [label=\"{}\"];", labels.join(","));
            }
        }
        out.push_str("}\n");
        out
    }
}

type Obligations = BTreeSet<Formula>;
type Dnf = BTreeSet<Obligations>;

fn single(ob: Obligations) -> Dnf {
    let mut d = Dnf::new();
    d.insert(ob);
    d
}

fn obligation(phi: &Formula) -> Obligations {
    let mut ob = Obligations::new();
    if *phi != Formula::True {
        ob.insert(phi.clone());
    }
    ob
}

fn product(a: &Dnf, b: &Dnf) -> Dnf {
    let mut out = Dnf::new();
    for x in a {
        for y in b {
            out.insert(x.union(y).cloned().collect());
        }
    }
    out
}

/// One tableau step: whether the single-letter word `a` satisfies `phi`, and
/// the obligation sets any non-empty continuation must meet.
fn expand(phi: &Formula, a: ObservationId) -> (bool, Dnf) {
    match phi {
        Formula::True => (true, single(Obligations::new())),
        Formula::Obs(o) => {
            if *o == a {
                (true, single(Obligations::new()))
            } else {
                (false, Dnf::new())
            }
        }
        Formula::NegObs(o) => {
            if *o != a {
                (true, single(Obligations::new()))
            } else {
                (false, Dnf::new())
            }
        }
        Formula::And(l, r) => {
            let (fl, nl) = expand(l, a);
            let (fr, nr) = expand(r, a);
            (fl && fr, product(&nl, &nr))
        }
        Formula::Or(l, r) => {
            let (fl, mut nl) = expand(l, a);
            let (fr, nr) = expand(r, a);
            nl.extend(nr);
            (fl || fr, nl)
        }
        Formula::Next(g) => (false, single(obligation(g))),
        Formula::Until(l, r) => {
            let (fr, mut nr) = expand(r, a);
            let (_, nl) = expand(l, a);
            nr.extend(product(&nl, &single(obligation(phi))));
            (fr, nr)
        }
        Formula::Eventually(g) => {
            let (fg, mut ng) = expand(g, a);
            ng.insert(obligation(phi));
            (fg, ng)
        }
    }
}

fn expand_set(ob: &Obligations, a: ObservationId) -> (bool, Dnf) {
    let mut fin = true;
    let mut next = single(Obligations::new());
    for phi in ob {
        let (f, n) = expand(phi, a);
        fin &= f;
        next = product(&next, &n);
        if next.is_empty() && !fin {
            break;
        }
    }
    (fin, next)
}

#[derive(Clone, Copy)]
enum Succ {
    State(usize),
    Accept,
    Dead,
}

/// Compiles `phi` to the minimal deterministic automaton whose language is the
/// set of words with a satisfying prefix.
pub fn compile(phi: &Formula, alphabet: &Alphabet) -> Result<Fsa, AutomatonError> {
    if let Some(o) = phi.max_observation() {
        if o.0 >= alphabet.len() {
            return Err(AutomatonError::Malformed(format!(
                "formula references observation {} outside the alphabet",
                o.0
            )));
        }
    }
    let k = alphabet.len();

    // Subset construction over obligation sets.
    let mut index: BTreeMap<Dnf, usize> = BTreeMap::new();
    let mut subsets: Vec<Dnf> = Vec::new();
    let mut succ: Vec<Vec<Succ>> = Vec::new();
    let start = single(obligation(phi));
    index.insert(start.clone(), 0);
    subsets.push(start);
    let mut i = 0;
    while i < subsets.len() {
        let mut row = Vec::with_capacity(k);
        for a in alphabet.ids() {
            let mut fin = false;
            let mut next = Dnf::new();
            for ob in &subsets[i] {
                let (f, n) = expand_set(ob, a);
                if f {
                    fin = true;
                    break;
                }
                next.extend(n);
            }
            let target = if fin {
                Succ::Accept
            } else if next.is_empty() {
                Succ::Dead
            } else {
                let id = match index.get(&next) {
                    Some(&id) => id,
                    None => {
                        let id = subsets.len();
                        index.insert(next.clone(), id);
                        subsets.push(next);
                        id
                    }
                };
                Succ::State(id)
            };
            row.push(target);
        }
        succ.push(row);
        i += 1;
    }

    // Complete machine: subset states, then accept, then dead.
    let n = subsets.len();
    let accept = n;
    let dead = n + 1;
    let total = n + 2;
    let mut delta = vec![vec![0usize; k]; total];
    for (s, row) in succ.iter().enumerate() {
        for (a, t) in row.iter().enumerate() {
            delta[s][a] = match *t {
                Succ::State(id) => id,
                Succ::Accept => accept,
                Succ::Dead => dead,
            };
        }
    }
    delta[accept] = vec![accept; k];
    delta[dead] = vec![dead; k];
    let mut is_final = vec![false; total];
    is_final[accept] = true;

    let class = hopcroft(&delta, &is_final, k);
    let dead_class = class[dead];
    if class[0] == dead_class {
        return Err(AutomatonError::EmptyLanguage);
    }

    // Renumber live classes breadth-first from the initial class.
    let num_classes = class.iter().copied().max().unwrap_or(0) + 1;
    let mut repr = vec![usize::MAX; num_classes];
    for (s, &c) in class.iter().enumerate() {
        if repr[c] == usize::MAX {
            repr[c] = s;
        }
    }
    let mut order = vec![usize::MAX; num_classes];
    let mut queue = VecDeque::new();
    let mut next_id = 0;
    order[class[0]] = next_id;
    next_id += 1;
    queue.push_back(class[0]);
    let mut bfs = Vec::new();
    while let Some(c) = queue.pop_front() {
        bfs.push(c);
        for a in 0..k {
            let t = class[delta[repr[c]][a]];
            if t != dead_class && order[t] == usize::MAX {
                order[t] = next_id;
                next_id += 1;
                queue.push_back(t);
            }
        }
    }
    let mut accepting = vec![false; bfs.len()];
    let mut table = vec![vec![None; k]; bfs.len()];
    for &c in &bfs {
        let s = order[c];
        accepting[s] = is_final[repr[c]];
        for a in 0..k {
            let t = class[delta[repr[c]][a]];
            if t != dead_class {
                table[s][a] = Some(StateId(order[t]));
            }
        }
    }
    Fsa::from_parts(alphabet.clone(), StateId(0), accepting, table)
}

/// Hopcroft partition refinement on a complete DFA. Returns the class of each state.
fn hopcroft(delta: &[Vec<usize>], is_final: &[bool], k: usize) -> Vec<usize> {
    let total = delta.len();
    let mut inverse = vec![vec![Vec::new(); total]; k];
    for (s, row) in delta.iter().enumerate() {
        for (a, &t) in row.iter().enumerate() {
            inverse[a][t].push(s);
        }
    }
    let finals: Vec<usize> = (0..total).filter(|&s| is_final[s]).collect();
    let others: Vec<usize> = (0..total).filter(|&s| !is_final[s]).collect();
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut block_of = vec![0usize; total];
    for part in [finals, others] {
        if !part.is_empty() {
            let id = blocks.len();
            for &s in &part {
                block_of[s] = id;
            }
            blocks.push(part);
        }
    }
    let mut in_work = vec![true; blocks.len()];
    let mut work: Vec<usize> = (0..blocks.len()).collect();

    while let Some(splitter) = work.pop() {
        in_work[splitter] = false;
        let members = blocks[splitter].clone();
        for by_symbol in &inverse {
            let mut pre = vec![false; total];
            let mut touched: BTreeSet<usize> = BTreeSet::new();
            for &t in &members {
                for &s in &by_symbol[t] {
                    pre[s] = true;
                    touched.insert(block_of[s]);
                }
            }
            for y in touched {
                let (inside, outside): (Vec<usize>, Vec<usize>) = blocks[y].iter().partition(|&&s| pre[s]);
                if inside.is_empty() || outside.is_empty() {
                    continue;
                }
                let new_id = blocks.len();
                for &s in &outside {
                    block_of[s] = new_id;
                }
                let inside_len = inside.len();
                let outside_len = outside.len();
                blocks[y] = inside;
                blocks.push(outside);
                in_work.push(false);
                if in_work[y] || outside_len <= inside_len {
                    in_work[new_id] = true;
                    work.push(new_id);
                } else {
                    in_work[y] = true;
                    work.push(y);
                }
            }
        }
    }
    block_of
}

/// Distance to acceptance: minimum number of transitions to an accepting state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DtaTable {
    dist: Vec<Option<u32>>,
}

impl DtaTable {
    /// `None` stands for an infinite distance.
    pub fn get(&self, s: StateId) -> Option<u32> {
        self.dist[s.0]
    }

    pub fn as_slice(&self) -> &[Option<u32>] {
        &self.dist
    }
}

/// Reverse breadth-first search from the accepting states.
pub fn compute_dta(fsa: &Fsa) -> DtaTable {
    let n = fsa.num_states();
    let mut preds = vec![Vec::new(); n];
    for s in fsa.states() {
        for o in fsa.alphabet().ids() {
            if let Some(t) = fsa.step(s, o) {
                preds[t.0].push(s.0);
            }
        }
    }
    let mut dist = vec![None; n];
    let mut queue = VecDeque::new();
    for s in fsa.states() {
        if fsa.is_accepting(s) {
            dist[s.0] = Some(0);
            queue.push_back(s.0);
        }
    }
    while let Some(t) = queue.pop_front() {
        let d = dist[t].unwrap_or(0);
        for &p in &preds[t] {
            if dist[p].is_none() {
                dist[p] = Some(d + 1);
                queue.push_back(p);
            }
        }
    }
    DtaTable { dist }
}

/// Target of the continuous controller: the next observation to generate, or
/// nothing once the automaton has accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Observe(ObservationId),
    Done,
}

/// How ties between distance-decreasing observations are broken.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tiebreak {
    Lexicographic,
    NearestRoi,
    FixedWord(Vec<ObservationId>),
}

/// Extra information a tiebreak may consult.
#[derive(Default)]
pub struct SelectionContext<'a> {
    /// Number of observations already consumed; indexes a fixed word.
    pub consumed: usize,
    /// Distance from the plant state to the region of an observation.
    pub roi_distance: Option<&'a dyn Fn(ObservationId) -> f64>,
}

/// Picks the target at state `s` among observations that strictly decrease
/// the distance to acceptance.
pub fn select_target(
    fsa: &Fsa,
    dta: &DtaTable,
    s: StateId,
    tiebreak: &Tiebreak,
    ctx: &SelectionContext<'_>,
) -> Result<Target, AutomatonError> {
    if fsa.is_accepting(s) {
        return Ok(Target::Done);
    }
    let here = dta.get(s).ok_or(AutomatonError::EmptyPolicySet(s))?;
    let candidates: Vec<ObservationId> = fsa
        .admissible(s)
        .into_iter()
        .filter(|&v| fsa.step(s, v).and_then(|t| dta.get(t)).is_some_and(|d| d < here))
        .collect();
    if candidates.is_empty() {
        return Err(AutomatonError::EmptyPolicySet(s));
    }
    let pick = match tiebreak {
        Tiebreak::Lexicographic => candidates[0],
        Tiebreak::NearestRoi => match ctx.roi_distance {
            Some(dist) => {
                let mut best = candidates[0];
                let mut best_d = dist(best);
                for &c in &candidates[1..] {
                    let d = dist(c);
                    if d < best_d {
                        best = c;
                        best_d = d;
                    }
                }
                best
            }
            None => candidates[0],
        },
        Tiebreak::FixedWord(word) => match word.get(ctx.consumed) {
            Some(v) if candidates.contains(v) => *v,
            _ => return Err(AutomatonError::WordNotAdmissible { state: s, index: ctx.consumed }),
        },
    };
    Ok(Target::Observe(pick))
}

/// Observation policy across a jump: the target after consuming `o` at `s`.
pub fn next_observation(
    fsa: &Fsa,
    dta: &DtaTable,
    s: StateId,
    o: ObservationId,
    tiebreak: &Tiebreak,
    ctx: &SelectionContext<'_>,
) -> Result<Target, AutomatonError> {
    let after = fsa.step(s, o).ok_or(AutomatonError::UndefinedTransition { state: s, obs: o.0 })?;
    select_target(fsa, dta, after, tiebreak, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scltl::{good_prefix, parse_formula};

    pub(crate) const BENCHMARK: &str = "((!o4 & !o5) U (o1 & ((!o4 & !o5) U (o2 & ((!o4 & !o5) U o3))))) \
         | ((!o4 & !o5) U (o2 & ((!o4 & !o5) U (o1 & ((!o4 & !o5) U o3)))))";

    fn alpha(n: usize) -> Alphabet {
        let names: Vec<String> = (1..=n).map(|i| format!("o{i}")).collect();
        Alphabet::new(&names).unwrap()
    }

    fn o(i: usize) -> ObservationId {
        ObservationId(i - 1)
    }

    fn set(ids: &[usize]) -> BTreeSet<ObservationId> {
        ids.iter().map(|&i| o(i)).collect()
    }

    fn benchmark() -> Fsa {
        let a = alpha(5);
        compile(&parse_formula(BENCHMARK, &a).unwrap(), &a).unwrap()
    }

    #[test]
    fn single_observation_gives_two_states() {
        let a = alpha(2);
        let fsa = compile(&Formula::Obs(o(1)), &a).unwrap();
        assert_eq!(fsa.num_states(), 2);
        let s1 = fsa.step(fsa.initial(), o(1)).unwrap();
        assert!(fsa.is_accepting(s1));
        assert_eq!(fsa.step(fsa.initial(), o(2)), None);
    }

    #[test]
    fn benchmark_matches_figure_structure() {
        let fsa = benchmark();
        assert_eq!(fsa.num_states(), 5);
        let s0 = fsa.initial();
        let s1 = fsa.step(s0, o(1)).unwrap();
        let s2 = fsa.step(s0, o(2)).unwrap();
        let s3 = fsa.step(s1, o(2)).unwrap();
        assert_eq!(fsa.step(s2, o(1)), Some(s3));
        let s4 = fsa.step(s3, o(3)).unwrap();
        assert!(fsa.is_accepting(s4));
        assert_eq!(fsa.step(s0, o(3)), Some(s0));
        assert_eq!(fsa.step(s1, o(1)), Some(s1));
        assert_eq!(fsa.step(s1, o(3)), Some(s1));
        assert_eq!(fsa.step(s3, o(1)), Some(s3));
        assert_eq!([s0, s1, s2, s3, s4].iter().map(|s| s.0).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        for s in [s0, s1, s2, s3] {
            assert_eq!(fsa.admissible(s), set(&[1, 2, 3]));
            assert_eq!(fsa.forbidden(s), set(&[4, 5]));
        }
        assert_eq!(fsa.admissible(s4), set(&[1, 2, 3, 4, 5]));
        assert!(fsa.forbidden(s4).is_empty());
    }

    #[test]
    fn accepts_examples() {
        let fsa = benchmark();
        assert!(fsa.accepts(&[o(1), o(2), o(3)]));
        assert!(fsa.accepts(&[o(2), o(1), o(3)]));
        assert!(!fsa.accepts(&[o(3)]));
        assert!(!fsa.accepts(&[]));
        assert!(!fsa.accepts(&[o(1), o(4), o(2), o(3)]));
    }

    #[test]
    fn eventually_forbids_nothing() {
        let a = alpha(2);
        let fsa = compile(&Formula::eventually(Formula::Obs(o(1))), &a).unwrap();
        assert!(fsa.forbidden(fsa.initial()).is_empty());
        assert_eq!(fsa.step(fsa.initial(), o(2)), Some(fsa.initial()));
    }

    #[test]
    fn infeasible_formula_is_rejected() {
        let a = alpha(2);
        let phi = Formula::and(Formula::Obs(o(1)), Formula::Obs(o(2)));
        assert_eq!(compile(&phi, &a), Err(AutomatonError::EmptyLanguage));
    }

    /// Breadth-first search forward from each state, independent of `compute_dta`.
    fn forward_distance(fsa: &Fsa, s: StateId) -> Option<u32> {
        let mut seen = vec![false; fsa.num_states()];
        let mut frontier = vec![s];
        seen[s.0] = true;
        let mut d = 0;
        while !frontier.is_empty() {
            if frontier.iter().any(|&x| fsa.is_accepting(x)) {
                return Some(d);
            }
            let mut next = Vec::new();
            for x in frontier {
                for ob in fsa.alphabet().ids() {
                    if let Some(t) = fsa.step(x, ob) {
                        if !seen[t.0] {
                            seen[t.0] = true;
                            next.push(t);
                        }
                    }
                }
            }
            frontier = next;
            d += 1;
        }
        None
    }

    #[test]
    fn dta_of_benchmark() {
        let fsa = benchmark();
        let dta = compute_dta(&fsa);
        assert_eq!(dta.as_slice(), &[Some(3), Some(2), Some(2), Some(1), Some(0)]);
        for s in fsa.states() {
            assert_eq!(dta.get(s), forward_distance(&fsa, s));
        }
    }

    #[test]
    fn dta_small_cases() {
        let a = alpha(1);
        let single = Fsa::from_parts(a.clone(), StateId(0), vec![true], vec![vec![Some(StateId(0))]]).unwrap();
        assert_eq!(compute_dta(&single).as_slice(), &[Some(0)]);
        let fsa = compile(&Formula::next(Formula::Obs(o(1))), &alpha(2)).unwrap();
        let dta = compute_dta(&fsa);
        // one letter to reach the obligation, one more to discharge it
        assert_eq!(dta.get(fsa.initial()), Some(2));
        let fsa = compile(&Formula::next(Formula::True), &alpha(2)).unwrap();
        assert_eq!(compute_dta(&fsa).get(fsa.initial()), Some(2));
        let fsa = compile(&Formula::Obs(o(1)), &alpha(2)).unwrap();
        assert_eq!(compute_dta(&fsa).get(fsa.initial()), Some(1));
    }

    #[test]
    fn observation_policy() {
        let fsa = benchmark();
        let dta = compute_dta(&fsa);
        let s0 = fsa.initial();
        let ctx = SelectionContext::default();
        assert_eq!(
            next_observation(&fsa, &dta, s0, o(1), &Tiebreak::Lexicographic, &ctx).unwrap(),
            Target::Observe(o(2))
        );
        let word = Tiebreak::FixedWord(vec![o(2), o(1), o(3)]);
        assert_eq!(select_target(&fsa, &dta, s0, &word, &ctx).unwrap(), Target::Observe(o(2)));
        let s3 = StateId(3);
        assert_eq!(next_observation(&fsa, &dta, s3, o(3), &Tiebreak::Lexicographic, &ctx).unwrap(), Target::Done);
        let bad = SelectionContext { consumed: 2, ..Default::default() };
        assert!(matches!(select_target(&fsa, &dta, s0, &word, &bad), Err(AutomatonError::WordNotAdmissible { .. })));
        let near = |ob: ObservationId| if ob == o(2) { 0.1 } else { 5.0 };
        let ctx = SelectionContext { consumed: 0, roi_distance: Some(&near) };
        assert_eq!(select_target(&fsa, &dta, s0, &Tiebreak::NearestRoi, &ctx).unwrap(), Target::Observe(o(2)));
    }

    #[test]
    fn policy_always_decreases_distance() {
        let fsa = benchmark();
        let dta = compute_dta(&fsa);
        for s in fsa.states() {
            for ob in fsa.admissible(s) {
                let after = fsa.step(s, ob).unwrap();
                if fsa.is_accepting(after) {
                    continue;
                }
                let ctx = SelectionContext::default();
                if let Target::Observe(v) = next_observation(&fsa, &dta, s, ob, &Tiebreak::Lexicographic, &ctx).unwrap()
                {
                    let d_after = dta.get(after).unwrap();
                    let d_next = dta.get(fsa.step(after, v).unwrap()).unwrap();
                    assert!(d_next < d_after);
                }
            }
        }
    }

    #[test]
    fn dot_export_is_stable() {
        let a = alpha(1);
        let single = Fsa::from_parts(a, StateId(0), vec![true], vec![vec![Some(StateId(0))]]).unwrap();
        let dot = single.export_dot();
        assert_eq!(dot.matches("[shape=doublecircle]").count(), 1);
        let fsa = benchmark();
        let first = fsa.export_dot();
        assert_eq!(first, fsa.export_dot());
        assert_eq!(first.matches("[shape=circle]").count(), 4);
        assert_eq!(first.matches("[shape=doublecircle]").count(), 1);
    }

    #[test]
    fn literal_text_agrees_with_oracle_on_short_words() {
        let a = alpha(5);
        let phi = parse_formula("F(F(o1 & F o2) | F(o2 & F o1) & o3) & ((!o4 & !o5) U o3)", &a).unwrap();
        let fsa = compile(&phi, &a).unwrap();
        let mut w = vec![o(1); 4];
        for code in 0..5usize.pow(4) {
            let mut c = code;
            for slot in w.iter_mut() {
                *slot = ObservationId(c % 5);
                c /= 5;
            }
            assert_eq!(fsa.accepts(&w), good_prefix(&w, &phi).unwrap(), "{w:?}");
        }
    }

    mod props {
        use super::*;
        use crate::scltl::tests::arb_formula;
        use proptest::prelude::*;

        fn words(k: usize, max_len: usize) -> Vec<Vec<ObservationId>> {
            let mut out = Vec::new();
            let mut frontier = vec![Vec::new()];
            for _ in 0..max_len {
                frontier = frontier
                    .iter()
                    .flat_map(|w: &Vec<ObservationId>| {
                        (0..k).map(move |i| {
                            let mut v = w.clone();
                            v.push(ObservationId(i));
                            v
                        })
                    })
                    .collect();
                out.extend(frontier.iter().cloned());
            }
            out
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn compiled_language_matches_semantics(phi in arb_formula(3)) {
                let a = alpha(3);
                match compile(&phi, &a) {
                    Ok(fsa) => {
                        for w in words(3, 4) {
                            prop_assert_eq!(fsa.accepts(&w), good_prefix(&w, &phi).unwrap(), "{:?}", w);
                        }
                    }
                    Err(AutomatonError::EmptyLanguage) => {
                        for w in words(3, 4) {
                            prop_assert!(!good_prefix(&w, &phi).unwrap());
                        }
                    }
                    Err(e) => prop_assert!(false, "{}", e),
                }
            }

            #[test]
            fn distances_satisfy_recurrence_and_policy_descends(phi in arb_formula(3)) {
                let a = alpha(3);
                let Ok(fsa) = compile(&phi, &a) else { return Ok(()) };
                let dta = compute_dta(&fsa);
                for s in fsa.states() {
                    let succ = a.ids().filter_map(|o| fsa.step(s, o)).filter_map(|t| dta.get(t)).min();
                    match dta.get(s) {
                        Some(0) => prop_assert!(fsa.is_accepting(s)),
                        Some(d) => prop_assert_eq!(succ, Some(d - 1)),
                        None => prop_assert_eq!(succ, None),
                    }
                    for ob in a.ids() {
                        let Some(after) = fsa.step(s, ob) else { continue };
                        if fsa.is_accepting(after) || dta.get(after).is_none() {
                            continue;
                        }
                        let ctx = SelectionContext::default();
                        let target = next_observation(&fsa, &dta, s, ob, &Tiebreak::Lexicographic, &ctx).unwrap();
                        prop_assert!(matches!(target, Target::Observe(_)));
                        if let Target::Observe(v) = target {
                            let d_next = dta.get(fsa.step(after, v).unwrap()).unwrap();
                            prop_assert!(d_next < dta.get(after).unwrap());
                        }
                    }
                }
            }
        }
    }
}
