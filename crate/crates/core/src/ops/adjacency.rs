use std::cell::OnceCell;
use std::rc::Rc;

use crate::autodiff::{EdgeIndex, SparseAdj};

/// The adjacency component `a` flowing through a block: a binary mask over
/// the entries of the graph's base adjacency.
///
/// Clones share storage; derived propagation operators are computed once per
/// distinct mask and cached.
#[derive(Clone)]
pub struct Adjacency(Rc<Inner>);

struct Inner {
    base: Rc<SparseAdj>,
    partner: Rc<Vec<Option<usize>>>,
    mask: Vec<f64>,
    gcn: OnceCell<Rc<SparseAdj>>,
    open: OnceCell<Rc<SparseAdj>>,
    closed: OnceCell<Rc<EdgeIndex>>,
}

impl std::fmt::Debug for Adjacency {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Adjacency({} of {} entries active)", self.active_count(), self.0.mask.len())
    }
}

impl Adjacency {
    /// Start from the graph adjacency, every stored nonzero entry active.
    pub fn new(base: &SparseAdj) -> Self {
        let partner = (0..base.nnz())
            .map(|e| {
                if base.is_symmetric() {
                    base.find(base.cols()[e], base.rows()[e])
                } else {
                    None
                }
            })
            .collect();
        let mask = base.weights().iter().map(|&w| if w != 0.0 { 1.0 } else { 0.0 }).collect();
        Adjacency(Rc::new(Inner {
            base: Rc::new(base.clone()),
            partner: Rc::new(partner),
            mask,
            gcn: OnceCell::new(),
            open: OnceCell::new(),
            closed: OnceCell::new(),
        }))
    }

    /// Same base with a different mask.
    pub fn with_mask(&self, mask: Vec<f64>) -> Self {
        assert_eq!(mask.len(), self.0.mask.len());
        Adjacency(Rc::new(Inner {
            base: Rc::clone(&self.0.base),
            partner: Rc::clone(&self.0.partner),
            mask,
            gcn: OnceCell::new(),
            open: OnceCell::new(),
            closed: OnceCell::new(),
        }))
    }

    /// Element-wise product of masks; shares storage when all inputs are
    /// the same mask.
    pub fn product<'a>(items: impl IntoIterator<Item = &'a Adjacency>) -> Adjacency {
        let mut items = items.into_iter();
        let first = items.next().expect("product of at least one adjacency").clone();
        let mut acc: Option<Vec<f64>> = None;
        for a in items {
            if Rc::ptr_eq(&a.0, &first.0) {
                continue;
            }
            let m = acc.get_or_insert_with(|| first.0.mask.clone());
            for (x, y) in m.iter_mut().zip(&a.0.mask) {
                *x *= y;
            }
        }
        match acc {
            Some(m) if m != first.0.mask => first.with_mask(m),
            _ => first,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.0.base.num_nodes()
    }

    pub fn mask(&self) -> &[f64] {
        &self.0.mask
    }

    pub fn base(&self) -> &SparseAdj {
        &self.0.base
    }

    /// Partner entry `(j, i)` of entry `(i, j)` for symmetric bases.
    pub fn partner(&self, entry: usize) -> Option<usize> {
        self.0.partner[entry]
    }

    pub fn active_count(&self) -> usize {
        self.0.mask.iter().filter(|&&m| m != 0.0).count()
    }

    pub fn ptr_eq(&self, other: &Adjacency) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// True when every active entry of `self` is active in `other`.
    pub fn is_subset_of(&self, other: &Adjacency) -> bool {
        self.0.mask.iter().zip(&other.0.mask).all(|(&a, &b)| a == 0.0 || b != 0.0)
    }

    /// The masked adjacency as a sparse matrix (inactive entries dropped).
    pub fn current(&self) -> SparseAdj {
        self.0.base.with_weights(self.0.mask.clone()).pruned()
    }

    /// `D̂^{-1/2}(A + I)D̂^{-1/2}` over the active entries.
    pub fn gcn_operator(&self) -> Rc<SparseAdj> {
        Rc::clone(self.0.gcn.get_or_init(|| Rc::new(self.current().with_self_loops().sym_normalized())))
    }

    /// The active adjacency without self-loops.
    pub fn open_operator(&self) -> Rc<SparseAdj> {
        Rc::clone(self.0.open.get_or_init(|| Rc::new(self.current())))
    }

    /// Closed neighbourhoods `N(i) ∪ {i}`, grouped by receiving node.
    pub fn closed_index(&self) -> Rc<EdgeIndex> {
        Rc::clone(
            self.0
                .closed
                .get_or_init(|| Rc::new(EdgeIndex::from_adj(&self.current().with_self_loops()))),
        )
    }
}
