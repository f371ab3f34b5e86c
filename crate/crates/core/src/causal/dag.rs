use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use crate::error::{Error, Result};

/// Directed acyclic graph over named variables.
#[derive(Clone, Debug, PartialEq)]
pub struct Dag {
    names: Vec<String>,
    index: BTreeMap<String, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    topo: Vec<usize>,
}

impl Dag {
    /// Builds the graph, rejecting unknown endpoints, duplicate edges,
    /// self-loops and cycles.
    pub fn new<S: AsRef<str>>(nodes: &[S], edges: &[(S, S)]) -> Result<Self> {
        let mut index = BTreeMap::new();
        let mut names = Vec::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            let n = n.as_ref().to_string();
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::Graph(format!("duplicate node `{n}`")));
            }
            names.push(n);
        }
        let mut parents = vec![Vec::new(); names.len()];
        let mut children = vec![Vec::new(); names.len()];
        let mut seen = BTreeSet::new();
        for (p, c) in edges {
            let (p, c) = (p.as_ref(), c.as_ref());
            let pi = *index.get(p).ok_or_else(|| Error::UnknownNode(p.into()))?;
            let ci = *index.get(c).ok_or_else(|| Error::UnknownNode(c.into()))?;
            if pi == ci {
                return Err(Error::Graph(format!("self-loop on `{p}`")));
            }
            if !seen.insert((pi, ci)) {
                return Err(Error::Graph(format!("duplicate edge {p} -> {c}")));
            }
            parents[ci].push(pi);
            children[pi].push(ci);
        }
        for v in parents.iter_mut().chain(children.iter_mut()) {
            v.sort_unstable();
        }

        // Kahn's algorithm, smallest index first for a stable order.
        let mut indeg: Vec<usize> = parents.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..names.len()).filter(|&i| indeg[i] == 0).collect();
        let mut topo = Vec::with_capacity(names.len());
        while let Some(n) = ready.pop_first() {
            topo.push(n);
            for &c in &children[n] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if topo.len() != names.len() {
            return Err(Error::Graph("graph contains a cycle".into()));
        }
        Ok(Dag {
            names,
            index,
            parents,
            children,
            topo,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub fn parents(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    /// Nodes in a topological order (parents before children).
    pub fn topological_order(&self) -> &[usize] {
        &self.topo
    }

    pub fn edges(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (c, ps) in self.parents.iter().enumerate() {
            for &p in ps {
                out.push((self.names[p].clone(), self.names[c].clone()));
            }
        }
        out.sort();
        out
    }

    fn ids(&self, set: &[&str]) -> Result<BTreeSet<usize>> {
        set.iter().map(|n| self.id(n)).collect()
    }

    /// Proper descendants of `i`.
    pub fn descendants(&self, i: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let mut stack = self.children[i].clone();
        while let Some(n) = stack.pop() {
            if out.insert(n) {
                stack.extend_from_slice(&self.children[n]);
            }
        }
        out
    }

    /// `set` together with all of its ancestors.
    fn ancestral_closure(&self, set: &BTreeSet<usize>) -> BTreeSet<usize> {
        let mut out = set.clone();
        let mut stack: Vec<usize> = set.iter().copied().collect();
        while let Some(n) = stack.pop() {
            for &p in &self.parents[n] {
                if out.insert(p) {
                    stack.push(p);
                }
            }
        }
        out
    }

    /// Whether `z` blocks every path between `x` and `y`.
    ///
    /// Uses active-trail reachability: a trail passes a non-collider iff the
    /// node is unobserved, and a collider iff it or a descendant is in `z`.
    pub fn d_separated(&self, x: &[&str], y: &[&str], z: &[&str]) -> Result<bool> {
        let (xs, ys, zs) = (self.ids(x)?, self.ids(y)?, self.ids(z)?);
        if !xs.is_disjoint(&ys) || !xs.is_disjoint(&zs) || !ys.is_disjoint(&zs) {
            return Err(Error::Contract("d-separation sets must be disjoint".into()));
        }
        let reach = self.active_reach(&xs, &zs);
        Ok(reach.is_disjoint(&ys))
    }

    fn active_reach(&self, xs: &BTreeSet<usize>, zs: &BTreeSet<usize>) -> BTreeSet<usize> {
        // `true` = arrived from a child (moving against edge direction).
        let anc = self.ancestral_closure(zs);
        let mut queue: VecDeque<(usize, bool)> = xs.iter().map(|&x| (x, true)).collect();
        let mut visited = BTreeSet::new();
        let mut reach = BTreeSet::new();
        while let Some((n, up)) = queue.pop_front() {
            if !visited.insert((n, up)) {
                continue;
            }
            let observed = zs.contains(&n);
            if !observed {
                reach.insert(n);
            }
            if up {
                if !observed {
                    queue.extend(self.parents[n].iter().map(|&p| (p, true)));
                    queue.extend(self.children[n].iter().map(|&c| (c, false)));
                }
            } else {
                if !observed {
                    queue.extend(self.children[n].iter().map(|&c| (c, false)));
                }
                if anc.contains(&n) {
                    queue.extend(self.parents[n].iter().map(|&p| (p, true)));
                }
            }
        }
        reach
    }

    /// Every simple path from `s` to `y` whose first edge points into `s`,
    /// sorted lexicographically by node names, then arrow directions.
    pub fn backdoor_paths(&self, s: &str, y: &str) -> Result<Vec<Path>> {
        let (si, yi) = (self.id(s)?, self.id(y)?);
        if si == yi {
            return Err(Error::Contract("treatment and outcome must differ".into()));
        }
        let mut out = Vec::new();
        let mut on_path = vec![false; self.len()];
        on_path[si] = true;
        for &p in &self.parents[si] {
            let mut nodes = vec![si, p];
            let mut arrows = vec![Arrow::Backward];
            on_path[p] = true;
            self.extend_paths(yi, &mut nodes, &mut arrows, &mut on_path, &mut out);
            on_path[p] = false;
        }
        out.sort();
        Ok(out)
    }

    fn extend_paths(
        &self,
        target: usize,
        nodes: &mut Vec<usize>,
        arrows: &mut Vec<Arrow>,
        on_path: &mut [bool],
        out: &mut Vec<Path>,
    ) {
        let cur = *nodes.last().expect("path has a head");
        if cur == target {
            out.push(Path {
                nodes: nodes.iter().map(|&i| self.names[i].clone()).collect(),
                arrows: arrows.clone(),
            });
            return;
        }
        let steps = self.children[cur]
            .iter()
            .map(|&c| (c, Arrow::Forward))
            .chain(self.parents[cur].iter().map(|&p| (p, Arrow::Backward)));
        for (next, arrow) in steps {
            if on_path[next] {
                continue;
            }
            on_path[next] = true;
            nodes.push(next);
            arrows.push(arrow);
            self.extend_paths(target, nodes, arrows, on_path, out);
            nodes.pop();
            arrows.pop();
            on_path[next] = false;
        }
    }

    /// The graph with every edge leaving `s` removed.
    pub fn without_outgoing(&self, s: &str) -> Result<Dag> {
        let si = self.id(s)?;
        let edges: Vec<(String, String)> = self
            .edges()
            .into_iter()
            .filter(|(p, _)| p != &self.names[si])
            .collect();
        Dag::new(&self.names, &edges)
    }

    /// Backdoor criterion for `(s, y)` relative to `z`: no member of `z`
    /// descends from `s`, and `z` blocks every path entering `s`.
    pub fn satisfies_backdoor(&self, s: &str, y: &str, z: &[&str]) -> Result<bool> {
        let si = self.id(s)?;
        let zs = self.ids(z)?;
        if zs.contains(&si) || zs.contains(&self.id(y)?) {
            return Ok(false);
        }
        if !self.descendants(si).is_disjoint(&zs) {
            return Ok(false);
        }
        self.without_outgoing(s)?.d_separated(&[s], &[y], z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Arrow {
    /// `a -> b`
    Forward,
    /// `a <- b`
    Backward,
}

/// Alternating node/arrow sequence; `arrows[i]` joins `nodes[i]` and `nodes[i+1]`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Path {
    pub nodes: Vec<String>,
    pub arrows: Vec<Arrow>,
}

impl Path {
    /// Parses `"O <- B -> M -> A"`.
    pub fn parse(s: &str) -> Result<Path> {
        let toks: Vec<&str> = s.split_whitespace().collect();
        if toks.len() % 2 == 0 {
            return Err(Error::Invalid(format!("malformed path `{s}`")));
        }
        let mut nodes = Vec::new();
        let mut arrows = Vec::new();
        for (i, t) in toks.iter().enumerate() {
            if i % 2 == 0 {
                nodes.push(t.to_string());
            } else {
                arrows.push(match *t {
                    "->" | "→" => Arrow::Forward,
                    "<-" | "←" => Arrow::Backward,
                    _ => return Err(Error::Invalid(format!("bad arrow `{t}`"))),
                });
            }
        }
        Ok(Path { nodes, arrows })
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.nodes[0])?;
        for (a, n) in self.arrows.iter().zip(&self.nodes[1..]) {
            let sym = match a {
                Arrow::Forward => "->",
                Arrow::Backward => "<-",
            };
            write!(f, " {sym} {n}")?;
        }
        Ok(())
    }
}

/// The modular driving pipeline graph: images, BEV, object/map/agent/ego
/// queries, the two perception outputs and their co-occurrence confounders.
pub fn build_vad_scm() -> Dag {
    const NODES: [&str; 10] = ["I", "B", "O", "M", "A", "E", "Y_o", "Y_m", "Z_o", "Z_m"];
    const EDGES: [(&str, &str); 13] = [
        ("I", "B"),
        ("B", "O"),
        ("B", "M"),
        ("O", "A"),
        ("M", "A"),
        ("A", "E"),
        ("M", "E"),
        ("O", "Y_o"),
        ("M", "Y_m"),
        ("Z_o", "O"),
        ("Z_o", "Y_o"),
        ("Z_m", "M"),
        ("Z_m", "Y_m"),
    ];
    Dag::new(&NODES, &EDGES).expect("fixed graph is a valid DAG")
}
