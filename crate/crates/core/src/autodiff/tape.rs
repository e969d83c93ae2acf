use super::var::Var;
use crate::numeric::Scalar;
use std::cell::RefCell;
use std::marker::PhantomData;
use thiserror::Error;

pub(crate) const NONE: u32 = u32::MAX;
const LEAF: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("gradient requested of {0} outputs; exactly one scalar output is required")]
    NotScalar(usize),
    #[error("input {0} is not a leaf registered on the active tape")]
    UnknownLeaf(usize),
    #[error("a tape is already recording on this thread")]
    TapeBusy,
}

#[derive(Clone, Copy, Debug)]
struct Node {
    start: u32,
    len: u32,
}

impl Node {
    fn is_leaf(&self) -> bool {
        self.start == LEAF
    }
    fn range(&self) -> std::ops::Range<usize> {
        if self.is_leaf() {
            0..0
        } else {
            self.start as usize..(self.start + self.len) as usize
        }
    }
}

/// Per-thread recording buffers. Capacity is kept between evaluations.
pub(crate) struct TapeData {
    active: bool,
    pub(crate) gen: u32,
    second_order: bool,
    raw: u32,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

#[derive(Clone, Copy, Debug)]
struct Edge {
    parent: u32,
    // node holding the partial on second-order tapes; NONE when constant
    pvar: u32,
    partial: f64,
}

impl TapeData {
    const fn new() -> Self {
        Self {
            active: false,
            gen: 0,
            second_order: false,
            raw: 0,
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    fn clear(&mut self) {
        self.nodes.clear();
        self.edges.clear();
        self.raw = 0;
    }

    /// True when partials must be recorded as differentiable nodes.
    #[inline]
    pub(crate) fn wants_graph(&self) -> bool {
        self.second_order && self.raw == 0
    }

    #[inline]
    fn push_node(&mut self, start: usize) -> u32 {
        let idx = self.nodes.len() as u32;
        let len = self.edges.len() - start;
        self.nodes.push(Node {
            start: start as u32,
            len: len as u32,
        });
        idx
    }

    #[inline]
    pub(crate) fn push_leaf(&mut self) -> u32 {
        let idx = self.nodes.len() as u32;
        self.nodes.push(Node { start: LEAF, len: 0 });
        idx
    }

    /// Records a node. `edges` yields `(parent idx, partial value, partial node)`.
    #[inline]
    pub(crate) fn push(&mut self, edges: impl IntoIterator<Item = (u32, f64, u32)>) -> u32 {
        let start = self.edges.len();
        let graph = self.wants_graph();
        for (parent, partial, pv) in edges {
            self.edges.push(Edge {
                parent,
                pvar: if graph { pv } else { NONE },
                partial,
            });
        }
        self.push_node(start)
    }

    /// Records `Σ a_k b_k`; each factor's partial is the other factor.
    pub(crate) fn push_dot(&mut self, a: &[Var], b: &[Var]) -> u32 {
        let start = self.edges.len();
        let graph = self.wants_graph();
        self.edges.reserve(2 * a.len());
        for (x, y) in a.iter().zip(b) {
            for (u, v) in [(x, y), (y, x)] {
                if !u.is_const() {
                    self.edges.push(Edge {
                        parent: u.idx(),
                        pvar: if graph { v.idx() } else { NONE },
                        partial: v.value(),
                    });
                }
            }
        }
        self.push_node(start)
    }

    /// Rewrites the partial node of a node's `k`-th edge.
    #[inline]
    pub(crate) fn set_pvar(&mut self, node: u32, k: usize, pv: u32) {
        let n = self.nodes[node as usize];
        self.edges[n.start as usize + k].pvar = pv;
    }
}

thread_local! {
    pub(crate) static TAPE: RefCell<TapeData> = const { RefCell::new(TapeData::new()) };
}

/// Runs `f` with partial recording disabled: nodes created inside carry
/// first-order partial values only.
pub(crate) fn raw_scope<R>(f: impl FnOnce() -> R) -> R {
    TAPE.with(|t| t.borrow_mut().raw += 1);
    let r = f();
    TAPE.with(|t| t.borrow_mut().raw -= 1);
    r
}

/// Handle on the thread's recording tape.
///
/// Creating a `Tape` starts a fresh recording on the current thread; every
/// non-constant [`Var`] produced until the handle is dropped lives on it.
/// One tape per evaluation: a second `Tape` on the same thread while one
/// is alive is refused.
pub struct Tape {
    gen: u32,
    _not_send: PhantomData<*const ()>,
}

impl Tape {
    /// First-order tape: gradients are plain numbers.
    pub fn new() -> Self {
        Self::try_start(false).expect("a tape is already recording on this thread")
    }

    /// Tape whose backward pass can itself be recorded
    /// ([`Tape::grad_graph`]), for losses that contain forces.
    pub fn with_second_order() -> Self {
        Self::try_start(true).expect("a tape is already recording on this thread")
    }

    pub fn try_start(second_order: bool) -> Result<Self, AdError> {
        TAPE.with(|t| {
            let mut t = t.borrow_mut();
            if t.active {
                return Err(AdError::TapeBusy);
            }
            t.clear();
            t.active = true;
            t.second_order = second_order;
            t.gen = t.gen.wrapping_add(1).max(1);
            Ok(Tape {
                gen: t.gen,
                _not_send: PhantomData,
            })
        })
    }

    /// Registers an input with respect to which gradients may be taken.
    pub fn leaf(&self, value: f64) -> Var {
        let idx = TAPE.with(|t| t.borrow_mut().push_leaf());
        Var::from_parts(value, idx, self.gen)
    }

    pub fn leaves(&self, values: &[f64]) -> Vec<Var> {
        values.iter().map(|&v| self.leaf(v)).collect()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        TAPE.with(|t| t.borrow().nodes.len())
    }

    /// Number of recorded edges.
    pub fn n_edges(&self) -> usize {
        TAPE.with(|t| t.borrow().edges.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, output: &[Var], wrt: &[Var]) -> Result<Var, AdError> {
        if output.len() != 1 {
            return Err(AdError::NotScalar(output.len()));
        }
        TAPE.with(|t| {
            let t = t.borrow();
            for (k, w) in wrt.iter().enumerate() {
                let ok = !w.is_const()
                    && w.gen() == self.gen
                    && (w.idx() as usize) < t.nodes.len()
                    && t.nodes[w.idx() as usize].is_leaf();
                if !ok {
                    return Err(AdError::UnknownLeaf(k));
                }
            }
            Ok(())
        })?;
        let out = output[0];
        if !out.is_const() && out.gen() != self.gen {
            return Err(AdError::NotScalar(1));
        }
        Ok(out)
    }

    /// Reverse sweep: `∂output/∂wrt` as numbers.
    pub fn grad(&self, output: &[Var], wrt: &[Var]) -> Result<Vec<f64>, AdError> {
        let out = self.check(output, wrt)?;
        if out.is_const() {
            return Ok(vec![0.0; wrt.len()]);
        }
        let adj = TAPE.with(|t| {
            let t = t.borrow();
            let n = out.idx() as usize + 1;
            let mut adj = vec![0.0f64; n];
            adj[n - 1] = 1.0;
            for i in (0..n).rev() {
                let a = adj[i];
                if a == 0.0 {
                    continue;
                }
                let node = t.nodes[i];
                for e in node.range() {
                    let e = t.edges[e];
                    adj[e.parent as usize] += a * e.partial;
                }
            }
            adj
        });
        Ok(wrt
            .iter()
            .map(|w| adj.get(w.idx() as usize).copied().unwrap_or(0.0))
            .collect())
    }

    /// Reverse sweep recorded on the tape: the returned gradients are
    /// themselves variables and can be differentiated once more with
    /// [`Tape::grad`]. Requires a tape from [`Tape::with_second_order`].
    pub fn grad_graph(&self, output: &[Var], wrt: &[Var]) -> Result<Vec<Var>, AdError> {
        let out = self.check(output, wrt)?;
        if out.is_const() {
            return Ok(vec![Var::cst(0.0); wrt.len()]);
        }
        let second = TAPE.with(|t| t.borrow().second_order);
        assert!(
            second,
            "grad_graph needs a tape created with Tape::with_second_order"
        );
        let n = out.idx() as usize + 1;

        // Reverse adjacency and dependence on the requested leaves, for
        // the sub-graph that ends at `out`.
        let (child_start, children, depends) = TAPE.with(|t| {
            let t = t.borrow();
            let mut depends = vec![false; n];
            for w in wrt {
                depends[w.idx() as usize] = true;
            }
            let mut counts = vec![0u32; n + 1];
            for i in 0..n {
                let node = t.nodes[i];
                let mut dep = depends[i];
                for e in node.range() {
                    let p = t.edges[e].parent as usize;
                    counts[p + 1] += 1;
                    dep |= depends[p];
                }
                depends[i] = dep;
            }
            for i in 0..n {
                counts[i + 1] += counts[i];
            }
            let mut fill = counts.clone();
            let mut children = vec![(0u32, 0u32); counts[n] as usize];
            for i in 0..n {
                let node = t.nodes[i];
                for e in node.range() {
                    let p = t.edges[e].parent as usize;
                    children[fill[p] as usize] = (i as u32, e as u32);
                    fill[p] += 1;
                }
            }
            (counts, children, depends)
        });

        let mut adj: Vec<Option<Var>> = vec![None; n];
        adj[n - 1] = Some(Var::cst(1.0));
        let is_wrt = {
            let mut v = vec![false; n];
            for w in wrt {
                v[w.idx() as usize] = true;
            }
            v
        };
        let gen = self.gen;
        raw_scope(|| {
            let mut lhs: Vec<Var> = Vec::new();
            let mut rhs: Vec<Var> = Vec::new();
            for p in (0..n - 1).rev() {
                if !depends[p] {
                    continue;
                }
                let leaf = TAPE.with(|t| t.borrow().nodes[p].is_leaf());
                if leaf && !is_wrt[p] {
                    continue;
                }
                lhs.clear();
                rhs.clear();
                TAPE.with(|t| {
                    let t = t.borrow();
                    for &(c, e) in &children[child_start[p] as usize..child_start[p + 1] as usize]
                    {
                        if let Some(ac) = adj[c as usize] {
                            let edge = t.edges[e as usize];
                            let d = if edge.pvar == NONE {
                                Var::cst(edge.partial)
                            } else {
                                Var::from_parts(edge.partial, edge.pvar, gen)
                            };
                            lhs.push(ac);
                            rhs.push(d);
                        }
                    }
                });
                if !lhs.is_empty() {
                    adj[p] = Some(Var::dot(&lhs, &rhs));
                }
            }
        });
        Ok(wrt
            .iter()
            .map(|w| adj[w.idx() as usize].unwrap_or(Var::cst(0.0)))
            .collect())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for Tape {
    fn drop(&mut self) {
        TAPE.with(|t| {
            let mut t = t.borrow_mut();
            t.clear();
            t.active = false;
            t.gen = t.gen.wrapping_add(1).max(1);
        });
    }
}
