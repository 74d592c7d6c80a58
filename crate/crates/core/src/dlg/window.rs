//! Multiscale local windows and the neighbor sets they induce.

use crate::error::{DlgError, Result};

pub type Offset = (isize, isize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub k: usize,
    pub dilations: Vec<usize>,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            k: 3,
            dilations: vec![1, 3],
        }
    }
}

impl WindowSpec {
    pub fn new(k: usize, dilations: Vec<usize>) -> Result<Self> {
        let spec = Self { k, dilations };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k.is_multiple_of(2) {
            return Err(DlgError::Config(format!(
                "window size k must be odd, got {}",
                self.k
            )));
        }
        if self.dilations.is_empty() || self.dilations[0] == 0 {
            return Err(DlgError::Config(
                "dilations must be positive and non-empty".into(),
            ));
        }
        if self.dilations.windows(2).any(|p| p[0] >= p[1]) {
            return Err(DlgError::Config(format!(
                "dilations must be strictly increasing, got {:?}",
                self.dilations
            )));
        }
        Ok(())
    }

    pub fn dilations_label(&self) -> String {
        self.dilations
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Per dilation, the `k x k` window offsets without the center.
pub fn surrounding_offsets(spec: &WindowSpec) -> Result<Vec<Vec<Offset>>> {
    spec.validate()?;
    let r = (spec.k as isize - 1) / 2;
    Ok(spec
        .dilations
        .iter()
        .map(|&d| {
            let d = d as isize;
            let mut offs = Vec::with_capacity(spec.k * spec.k - 1);
            for i in -r..=r {
                for j in -r..=r {
                    if (i, j) != (0, 0) {
                        offs.push((i * d, j * d));
                    }
                }
            }
            offs
        })
        .collect())
}

/// The center followed by the deduplicated union of all surrounding
/// offsets. Every graph softmax runs over this support (minus the entries
/// that leave the image).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborIndex {
    pub spec: WindowSpec,
    pub scales: Vec<Vec<Offset>>,
    pub support: Vec<Offset>,
}

impl NeighborIndex {
    pub fn new(spec: &WindowSpec) -> Result<Self> {
        let scales = surrounding_offsets(spec)?;
        let mut support = vec![(0, 0)];
        for o in scales.iter().flatten() {
            if !support.contains(o) {
                support.push(*o);
            }
        }
        Ok(Self {
            spec: spec.clone(),
            scales,
            support,
        })
    }

    /// Number of distinct surrounding offsets.
    pub fn num_surrounding(&self) -> usize {
        self.support.len() - 1
    }

    pub fn max_reach(&self) -> usize {
        self.support
            .iter()
            .map(|&(dy, dx)| dy.unsigned_abs().max(dx.unsigned_abs()))
            .max()
            .unwrap_or(0)
    }

    pub fn shifted(
        y: usize,
        x: usize,
        (dy, dx): Offset,
        h: usize,
        w: usize,
    ) -> Option<(usize, usize)> {
        let yy = y as isize + dy;
        let xx = x as isize + dx;
        (yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w)
            .then_some((yy as usize, xx as usize))
    }

    /// Validity of every support offset at `(y, x)`.
    pub fn valid_mask(&self, y: usize, x: usize, h: usize, w: usize) -> Vec<bool> {
        self.support
            .iter()
            .map(|&o| Self::shifted(y, x, o, h, w).is_some())
            .collect()
    }

    /// `sum over support of (H - |dy|)(W - |dx|)`: how many in-bounds
    /// (location, offset) pairs exist.
    pub fn valid_pairs(&self, h: usize, w: usize) -> usize {
        self.support
            .iter()
            .map(|&(dy, dx)| {
                h.saturating_sub(dy.unsigned_abs()) * w.saturating_sub(dx.unsigned_abs())
            })
            .sum()
    }
}

/// A graph node: focal slice `Some(i)` or the all-focus image `None`, at a
/// pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId {
    pub slice: Option<usize>,
    pub y: usize,
    pub x: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborSets {
    /// The `N` focal nodes at the location.
    pub targets: Vec<NodeId>,
    /// Focal nodes at the in-bounds surrounding locations.
    pub surrounding: Vec<NodeId>,
    /// All-focus nodes at the location and its in-bounds surroundings.
    pub allfocus: Vec<NodeId>,
}

pub fn neighbor_sets(
    (y, x): (usize, usize),
    n: usize,
    index: &NeighborIndex,
    h: usize,
    w: usize,
) -> Result<NeighborSets> {
    if y >= h || x >= w {
        return Err(DlgError::invalid(format!(
            "location ({y},{x}) outside {h}x{w}"
        )));
    }
    let targets = (0..n)
        .map(|i| NodeId {
            slice: Some(i),
            y,
            x,
        })
        .collect();
    let mut surrounding = Vec::new();
    let mut allfocus = vec![NodeId { slice: None, y, x }];
    for &o in &index.support[1..] {
        if let Some((yy, xx)) = NeighborIndex::shifted(y, x, o, h, w) {
            surrounding.extend((0..n).map(|i| NodeId {
                slice: Some(i),
                y: yy,
                x: xx,
            }));
            allfocus.push(NodeId {
                slice: None,
                y: yy,
                x: xx,
            });
        }
    }
    Ok(NeighborSets {
        targets,
        surrounding,
        allfocus,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EdgeCounts {
    pub focal_focal: usize,
    pub focal_all: usize,
}

impl EdgeCounts {
    pub fn total(&self) -> usize {
        self.focal_focal + self.focal_all
    }

    /// Edges of the local graphs ignoring the image border:
    /// `N (N + 1) H W (1 + S)` in total.
    pub fn nominal(n: usize, h: usize, w: usize, index: &NeighborIndex) -> Self {
        let per = index.support.len() * h * w;
        Self {
            focal_focal: n * n * per,
            focal_all: n * per,
        }
    }

    /// Edges that survive border masking.
    pub fn masked(n: usize, h: usize, w: usize, index: &NeighborIndex) -> Self {
        let pairs = index.valid_pairs(h, w);
        Self {
            focal_focal: n * n * pairs,
            focal_all: n * pairs,
        }
    }
}

/// Edge count of a fully connected graph over all `(N + 1) H W` nodes.
pub fn dense_edge_count(n: usize, h: usize, w: usize) -> u128 {
    let nodes = ((n + 1) * h * w) as u128;
    nodes * nodes
}
