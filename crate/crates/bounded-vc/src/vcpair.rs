//! Overflow-tolerant vector clock pairs.
//!
//! A pair holds a current and a previous item `⟨ℓ, m, o⟩`. The current
//! item's offset and the previous item's main vector are one and the same
//! storage, so the alias can never drift.

use std::fmt;

use smallvec::{smallvec, SmallVec};
use thiserror::Error;

use crate::labeling::LabelingState;
use crate::labels::{precedes_eq_lb, precedes_lb, Label};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VcError {
    #[error("pivot matches neither item of the pair")]
    NoPivotMatch,
    #[error("the pairs share no pivot item")]
    NoPivot,
    #[error("vector lengths differ")]
    LengthMismatch,
    #[error("current offset differs from previous main vector")]
    AliasMismatch,
}

/// Read access to label cancellation status.
pub trait LabelView {
    fn is_canceled(&self, label: &Label) -> bool;
}

impl LabelView for LabelingState {
    fn is_canceled(&self, label: &Label) -> bool {
        LabelingState::is_canceled(self, label)
    }
}

/// An owned vector clock item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VectorClockItem {
    pub label: Label,
    pub m: Vec<u64>,
    pub o: Vec<u64>,
}

/// A borrowed view of one item of a pair.
#[derive(Debug, Clone, Copy)]
pub struct ItemRef<'a> {
    pub label: &'a Label,
    pub m: &'a [u64],
    pub o: &'a [u64],
}

impl ItemRef<'_> {
    pub fn to_item(&self) -> VectorClockItem {
        VectorClockItem {
            label: self.label.clone(),
            m: self.m.to_vec(),
            o: self.o.to_vec(),
        }
    }
}

impl VectorClockItem {
    pub fn as_ref(&self) -> ItemRef<'_> {
        ItemRef {
            label: &self.label,
            m: &self.m,
            o: &self.o,
        }
    }
}

/// A vector clock pair `⟨curr, prev⟩` with `curr.o` aliased to `prev.m`.
#[derive(Clone, PartialEq, Eq)]
pub struct VectorClockPair {
    curr_label: Label,
    prev_label: Label,
    /// `curr.m`, then the shared vector, then `prev.o`, each of length `n`.
    counts: SmallVec<[u64; 12]>,
}

impl VectorClockPair {
    /// Builds a pair from its five distinct fields.
    pub fn new(
        curr_label: Label,
        curr_m: Vec<u64>,
        shared: Vec<u64>,
        prev_label: Label,
        prev_o: Vec<u64>,
    ) -> Result<Self, VcError> {
        if curr_m.len() != shared.len() || shared.len() != prev_o.len() {
            return Err(VcError::LengthMismatch);
        }
        let mut counts = SmallVec::with_capacity(3 * curr_m.len());
        counts.extend_from_slice(&curr_m);
        counts.extend_from_slice(&shared);
        counts.extend_from_slice(&prev_o);
        Ok(VectorClockPair {
            curr_label,
            prev_label,
            counts,
        })
    }

    /// Builds a pair from two items, which must satisfy the alias.
    pub fn from_items(curr: VectorClockItem, prev: VectorClockItem) -> Result<Self, VcError> {
        if curr.o != prev.m {
            return Err(VcError::AliasMismatch);
        }
        Self::new(curr.label, curr.m, curr.o, prev.label, prev.o)
    }

    /// `⟨y, y⟩` with `y = ⟨label, zeros, zeros⟩`.
    pub fn restart(label: Label, n: usize) -> Self {
        VectorClockPair {
            curr_label: label.clone(),
            prev_label: label,
            counts: smallvec![0; 3 * n],
        }
    }

    pub fn n(&self) -> usize {
        self.counts.len() / 3
    }

    pub fn curr(&self) -> ItemRef<'_> {
        ItemRef {
            label: &self.curr_label,
            m: self.curr_m(),
            o: self.shared(),
        }
    }

    pub fn prev(&self) -> ItemRef<'_> {
        ItemRef {
            label: &self.prev_label,
            m: self.shared(),
            o: self.prev_o(),
        }
    }

    pub fn curr_label(&self) -> &Label {
        &self.curr_label
    }

    pub fn prev_label(&self) -> &Label {
        &self.prev_label
    }

    pub fn curr_m(&self) -> &[u64] {
        &self.counts[..self.n()]
    }

    pub fn curr_m_mut(&mut self) -> &mut [u64] {
        let n = self.n();
        &mut self.counts[..n]
    }

    /// The shared vector, `curr.o = prev.m`.
    pub fn shared(&self) -> &[u64] {
        let n = self.n();
        &self.counts[n..2 * n]
    }

    pub fn prev_o(&self) -> &[u64] {
        &self.counts[2 * self.n()..]
    }

    #[cfg(test)]
    pub(crate) fn set_prev_label(&mut self, label: Label) {
        self.prev_label = label;
    }
}

fn write_vec(f: &mut fmt::Formatter<'_>, v: &[u64]) -> fmt::Result {
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            f.write_str(",")?;
        }
        write!(f, "{x}")?;
    }
    Ok(())
}

/// Canonical form `⟨ℓ|m|o ∥ ℓ|m|o⟩` with labels in summary form.
impl fmt::Display for VectorClockPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "⟨{}|", self.curr_label.summary())?;
        write_vec(f, self.curr_m())?;
        f.write_str("|")?;
        write_vec(f, self.shared())?;
        write!(f, " ∥ {}|", self.prev_label.summary())?;
        write_vec(f, self.shared())?;
        f.write_str("|")?;
        write_vec(f, self.prev_o())?;
        f.write_str("⟩")
    }
}

impl fmt::Debug for VectorClockPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[inline]
fn sub_mod(a: u64, b: u64, maxint: u64) -> u64 {
    let (a, b) = (a % maxint, b % maxint);
    if a >= b {
        a - b
    } else {
        maxint - b + a
    }
}

/// Item-wise `(m − o) mod MAXINT`.
pub fn item_diff(item: ItemRef<'_>, maxint: u64) -> Vec<u64> {
    item.m
        .iter()
        .zip(item.o)
        .map(|(&m, &o)| sub_mod(m, o, maxint))
        .collect()
}

/// `VC(Z) = (Z.curr.m − Z.curr.o) mod MAXINT`.
pub fn vc(z: &VectorClockPair, maxint: u64) -> Vec<u64> {
    item_diff(z.curr(), maxint)
}

/// The sum of the counted events has reached `MAXINT − 1`.
pub fn exhausted(z: &VectorClockPair, maxint: u64) -> bool {
    let sum: u64 = z
        .curr_m()
        .iter()
        .zip(z.shared())
        .map(|(&m, &o)| sub_mod(m, o, maxint))
        .sum();
    sum >= maxint - 1
}

/// `labelsOrdered(Z)`: either `prev.ℓ ≺_lb curr.ℓ` with `prev.ℓ` canceled,
/// or both labels equal and `curr.ℓ` not canceled.
pub fn labels_ordered(z: &VectorClockPair, lv: &impl LabelView) -> bool {
    (precedes_lb(&z.prev_label, &z.curr_label) && lv.is_canceled(&z.prev_label))
        || (z.prev_label.eq_m(&z.curr_label) && !lv.is_canceled(&z.curr_label))
}

/// `=_{ℓ,o}`: equal labels and equal offsets.
pub fn eq_lo(a: ItemRef<'_>, b: ItemRef<'_>) -> bool {
    a.label.eq_m(b.label) && a.o == b.o
}

/// `<_{ℓ,o}`: smaller label, or equal labels and a lexicographically smaller offset.
pub fn lt_lo(a: ItemRef<'_>, b: ItemRef<'_>) -> bool {
    precedes_lb(a.label, b.label) || (a.label.eq_m(b.label) && a.o < b.o)
}

/// `≤_{ℓ,o}`.
pub fn le_lo(a: ItemRef<'_>, b: ItemRef<'_>) -> bool {
    lt_lo(a, b) || eq_lo(a, b)
}

/// How two pairs overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PivotKind {
    /// Both items match.
    BothMatch,
    /// Only the previous items match.
    PrevPrev,
    /// The first pair's current item is the second pair's previous item.
    LocCurrIsArrPrev,
    /// The first pair's previous item is the second pair's current item.
    LocPrevIsArrCurr,
}

/// Which item of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Curr,
    Prev,
}

/// A detected overlap and the `<_{ℓ,o}`-maximum pivot item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Overlap {
    pub kind: PivotKind,
    /// The side of the first pair holding the pivot item.
    pub pivot_side: Side,
}

impl Overlap {
    pub fn pivot<'a>(&self, z: &'a VectorClockPair) -> ItemRef<'a> {
        match self.pivot_side {
            Side::Curr => z.curr(),
            Side::Prev => z.prev(),
        }
    }
}

/// Whether the pairs share a pivot item.
pub fn exists_overlap(z: &VectorClockPair, w: &VectorClockPair) -> Option<Overlap> {
    let prev_prev = eq_lo(z.prev(), w.prev());
    let curr_prev = eq_lo(z.curr(), w.prev());
    let prev_curr = eq_lo(z.prev(), w.curr());
    if prev_prev && eq_lo(z.curr(), w.curr()) {
        let side = if lt_lo(z.curr(), z.prev()) {
            Side::Prev
        } else {
            Side::Curr
        };
        return Some(Overlap {
            kind: PivotKind::BothMatch,
            pivot_side: side,
        });
    }
    let mut best: Option<Overlap> = None;
    let mut consider = |hit: bool, kind: PivotKind, side: Side| {
        if !hit {
            return;
        }
        let cand = Overlap {
            kind,
            pivot_side: side,
        };
        best = match best {
            Some(b) if !lt_lo(b.pivot(z), cand.pivot(z)) => Some(b),
            _ => Some(cand),
        };
    };
    consider(curr_prev, PivotKind::LocCurrIsArrPrev, Side::Curr);
    consider(prev_curr, PivotKind::LocPrevIsArrCurr, Side::Prev);
    consider(prev_prev, PivotKind::PrevPrev, Side::Prev);
    best
}

/// Events counted by `x` since `pivot`; values may exceed `MAXINT`.
pub fn new_events(
    x: &VectorClockPair,
    pivot: ItemRef<'_>,
    maxint: u64,
) -> Result<Vec<u64>, VcError> {
    if eq_lo(pivot, x.curr()) {
        Ok(vc(x, maxint))
    } else if eq_lo(pivot, x.prev()) {
        let prev = item_diff(x.prev(), maxint);
        Ok(vc(x, maxint)
            .into_iter()
            .zip(prev)
            .map(|(a, b)| a + b)
            .collect())
    } else {
        Err(VcError::NoPivotMatch)
    }
}

/// Merges an arriving pair into the local one.
pub fn merge(
    loc: &VectorClockPair,
    arr: &VectorClockPair,
    maxint: u64,
) -> Result<VectorClockPair, VcError> {
    if loc.n() != arr.n() {
        return Err(VcError::LengthMismatch);
    }
    if exists_overlap(loc, arr).is_none() {
        return Err(VcError::NoPivot);
    }
    let pivot = if eq_lo(loc.curr(), arr.curr()) || eq_lo(loc.curr(), arr.prev()) {
        loc.curr()
    } else {
        loc.prev()
    };
    let init_to_loc = lt_lo(arr.curr(), loc.curr())
        || (eq_lo(arr.curr(), loc.curr()) && le_lo(arr.prev(), loc.prev()));
    let from_loc = new_events(loc, pivot, maxint)?;
    let from_arr = new_events(arr, pivot, maxint)?;
    let mut output = if init_to_loc {
        loc.clone()
    } else {
        arr.clone()
    };
    for k in 0..output.n() {
        let events = from_loc[k].max(from_arr[k]) % maxint;
        output.curr_m_mut()[k] = (pivot.o[k] % maxint + events) % maxint;
    }
    Ok(output)
}

/// The number of `p_i`'s events between two values of its local pair, or
/// `None` when the pairs cannot be related.
///
/// `i` is a zero-based coordinate.
pub fn event_count_query(
    zx: &VectorClockPair,
    zy: &VectorClockPair,
    i: usize,
    maxint: u64,
) -> Option<u64> {
    if i >= zx.n() || zx.n() != zy.n() {
        return None;
    }
    if equal_static(zx, zy) {
        Some(sub_mod(vc(zy, maxint)[i], vc(zx, maxint)[i], maxint))
    } else if eq_lo(zx.curr(), zy.prev()) {
        let since = new_events(zy, zy.prev(), maxint).ok()?[i];
        since.checked_sub(vc(zx, maxint)[i])
    } else {
        None
    }
}

/// Whether `z` causally precedes `w`, judged from the `<_{ℓ,o}`-maximum pivot.
pub fn causal_precedence(z: &VectorClockPair, w: &VectorClockPair, maxint: u64) -> bool {
    let Some(ov) = exists_overlap(z, w) else {
        return false;
    };
    let pivot = ov.pivot(z).to_item();
    let (Ok(a), Ok(b)) = (
        new_events(z, pivot.as_ref(), maxint),
        new_events(w, pivot.as_ref(), maxint),
    ) else {
        return false;
    };
    a.iter().zip(&b).all(|(x, y)| x <= y) && a.iter().zip(&b).any(|(x, y)| x < y)
}

/// Not exhausted and `prev.ℓ ⪯_lb curr.ℓ`.
pub fn pair_invar(x: &VectorClockPair, maxint: u64) -> bool {
    !exhausted(x, maxint) && precedes_eq_lb(&x.prev_label, &x.curr_label)
}

/// All labels of all pairs are pairwise `⪯_lb`-comparable.
pub fn comparable_labels(pairs: &[&VectorClockPair]) -> bool {
    let labels: Vec<&Label> = pairs
        .iter()
        .flat_map(|p| [&p.curr_label, &p.prev_label])
        .collect();
    labels.iter().enumerate().all(|(a, x)| {
        labels[a + 1..]
            .iter()
            .all(|y| precedes_eq_lb(x, y) || precedes_eq_lb(y, x))
    })
}

/// Comparable labels and an overlap.
pub fn legit_pairs(x: &VectorClockPair, y: &VectorClockPair) -> bool {
    comparable_labels(&[x, y]) && exists_overlap(x, y).is_some()
}

/// Equal apart from `curr.m`.
pub fn equal_static(x: &VectorClockPair, y: &VectorClockPair) -> bool {
    x.curr_label.eq_m(&y.curr_label)
        && x.counts[x.n()..] == y.counts[y.n()..]
        && x.prev_label.eq_m(&y.prev_label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::{next_label, LabelConfig};
    use crate::ProcId;

    const MI: u64 = 8;

    fn labels() -> (Label, Label) {
        let cfg = LabelConfig::new(4).unwrap();
        let p = ProcId::new(1).unwrap();
        let a = next_label(std::iter::empty(), p, &cfg).unwrap();
        let b = next_label([&a], p, &cfg).unwrap();
        (a, b)
    }

    fn pair(cl: &Label, m: &[u64], o: &[u64], pl: &Label, po: &[u64]) -> VectorClockPair {
        VectorClockPair::new(cl.clone(), m.to_vec(), o.to_vec(), pl.clone(), po.to_vec()).unwrap()
    }

    #[test]
    fn vc_examples() {
        let (a, _) = labels();
        assert_eq!(vc(&pair(&a, &[5, 2], &[1, 1], &a, &[0, 0]), MI), vec![4, 1]);
        assert_eq!(vc(&pair(&a, &[3, 3], &[3, 3], &a, &[0, 0]), MI), vec![0, 0]);
        assert_eq!(vc(&pair(&a, &[0, 2], &[6, 1], &a, &[0, 0]), MI), vec![2, 1]);
    }

    #[test]
    fn exhaustion_boundary() {
        let (a, _) = labels();
        assert!(exhausted(&pair(&a, &[5, 2], &[0, 0], &a, &[0, 0]), MI));
        assert!(!exhausted(&pair(&a, &[3, 3], &[0, 0], &a, &[0, 0]), MI));
        assert!(!exhausted(&pair(&a, &[4, 4], &[4, 4], &a, &[0, 0]), MI));
    }

    #[test]
    fn alias_is_structural() {
        let (a, b) = labels();
        let z = pair(&b, &[1, 0], &[6, 2], &a, &[4, 1]);
        assert_eq!(z.curr().o, z.prev().m);
        let curr = VectorClockItem {
            label: b.clone(),
            m: vec![1, 0],
            o: vec![6, 2],
        };
        let bad = VectorClockItem {
            label: a.clone(),
            m: vec![6, 3],
            o: vec![4, 1],
        };
        assert_eq!(
            VectorClockPair::from_items(curr, bad),
            Err(VcError::AliasMismatch)
        );
    }

    #[test]
    fn item_orders() {
        let (a, b) = labels();
        let x = VectorClockItem {
            label: a.clone(),
            m: vec![1, 2],
            o: vec![0, 1],
        };
        let y = VectorClockItem {
            label: a.clone(),
            m: vec![7, 7],
            o: vec![0, 1],
        };
        let z = VectorClockItem {
            label: a.clone(),
            m: vec![0, 0],
            o: vec![0, 2],
        };
        let w = VectorClockItem {
            label: b.clone(),
            m: vec![0, 0],
            o: vec![0, 0],
        };
        assert!(eq_lo(x.as_ref(), y.as_ref()));
        assert!(lt_lo(x.as_ref(), z.as_ref()) && !lt_lo(z.as_ref(), x.as_ref()));
        assert!(lt_lo(z.as_ref(), w.as_ref()));
    }

    #[test]
    fn new_events_branches() {
        let (a, b) = labels();
        let z = pair(&a, &[5, 2], &[1, 1], &a, &[0, 0]);
        assert_eq!(new_events(&z, z.curr(), MI).unwrap(), vec![4, 1]);
        let w = pair(&b, &[1, 0], &[6, 2], &a, &[4, 1]);
        assert_eq!(new_events(&w, w.prev(), MI).unwrap(), vec![5, 7]);
        let stranger = VectorClockItem {
            label: b.clone(),
            m: vec![0, 0],
            o: vec![3, 3],
        };
        assert_eq!(
            new_events(&w, stranger.as_ref(), MI),
            Err(VcError::NoPivotMatch)
        );
    }

    #[test]
    fn overlap_kinds() {
        let (a, b) = labels();
        let z = pair(&a, &[3, 1], &[0, 0], &a, &[0, 0]);
        assert_eq!(exists_overlap(&z, &z).unwrap().kind, PivotKind::BothMatch);
        let wrapped = pair(&b, &[5, 2], &[5, 2], &a, &[0, 0]);
        let zz = pair(&a, &[5, 2], &[1, 1], &a, &[1, 0]);
        assert_eq!(
            exists_overlap(&z, &wrapped).unwrap().kind,
            PivotKind::LocCurrIsArrPrev
        );
        assert_eq!(
            exists_overlap(&wrapped, &z).unwrap().kind,
            PivotKind::LocPrevIsArrCurr
        );
        let w1 = pair(&b, &[5, 2], &[5, 2], &a, &[0, 0]);
        let w2 = pair(&b, &[4, 3], &[4, 3], &a, &[0, 0]);
        assert_eq!(exists_overlap(&w1, &w2).unwrap().kind, PivotKind::PrevPrev);
        assert!(exists_overlap(&zz, &wrapped).is_none());
    }

    #[test]
    fn merge_both_match_is_elementwise_max() {
        let (a, _) = labels();
        let loc = pair(&a, &[3, 1], &[0, 0], &a, &[0, 0]);
        let arr = pair(&a, &[2, 4], &[0, 0], &a, &[0, 0]);
        let out = merge(&loc, &arr, MI).unwrap();
        assert_eq!(out.curr_m(), &[3, 4]);
        assert_eq!(merge(&loc, &loc, MI).unwrap(), loc);
    }

    #[test]
    fn merge_adopts_wrapped_pair() {
        let (a, b) = labels();
        // arr revived at [5,2] and counted [1,0] more; loc counted [2,3] since the shared origin.
        let loc = pair(&a, &[2, 3], &[0, 0], &a, &[0, 0]);
        let arr = pair(&b, &[6, 2], &[5, 2], &a, &[0, 0]);
        let out = merge(&loc, &arr, MI).unwrap();
        assert!(out.curr_label().eq_m(&b));
        assert_eq!(out.shared(), &[5, 2]);
        assert_eq!(out.curr_m(), &[6, 3]);
        let back = merge(&arr, &loc, MI).unwrap();
        assert_eq!(back, out);
    }

    #[test]
    fn merge_without_pivot_fails() {
        let (a, b) = labels();
        let loc = pair(&a, &[2, 3], &[1, 0], &a, &[0, 0]);
        let arr = pair(&b, &[6, 2], &[5, 2], &b, &[5, 2]);
        assert_eq!(merge(&loc, &arr, MI), Err(VcError::NoPivot));
    }

    #[test]
    fn event_count_examples() {
        let (a, b) = labels();
        let zx = pair(&a, &[2, 0], &[0, 0], &a, &[0, 0]);
        let zy = pair(&a, &[5, 1], &[0, 0], &a, &[0, 0]);
        assert_eq!(event_count_query(&zx, &zy, 0, MI), Some(3));
        assert_eq!(event_count_query(&zx, &zx, 0, MI), Some(0));
        let after = pair(&b, &[7, 1], &[5, 1], &a, &[0, 0]);
        assert_eq!(event_count_query(&zx, &after, 0, MI), Some(5));
        let unrelated = pair(&b, &[7, 1], &[5, 1], &b, &[5, 1]);
        assert_eq!(event_count_query(&zx, &unrelated, 0, MI), None);
    }

    #[test]
    fn causal_examples() {
        let (a, _) = labels();
        let z = pair(&a, &[1, 1], &[0, 0], &a, &[0, 0]);
        let later = pair(&a, &[2, 1], &[0, 0], &a, &[0, 0]);
        let other = pair(&a, &[1, 2], &[0, 0], &a, &[0, 0]);
        let concurrent = pair(&a, &[0, 3], &[0, 0], &a, &[0, 0]);
        assert!(!causal_precedence(&z, &z, MI));
        assert!(causal_precedence(&z, &later, MI));
        assert!(!causal_precedence(&later, &z, MI));
        assert!(
            !causal_precedence(&later, &concurrent, MI)
                && !causal_precedence(&concurrent, &later, MI)
        );
        assert!(causal_precedence(&z, &other, MI));
    }

    #[test]
    fn predicates() {
        let (a, b) = labels();
        let fresh = VectorClockPair::restart(a.clone(), 2);
        assert!(pair_invar(&fresh, MI));
        assert!(equal_static(&fresh, &fresh));
        assert!(!pair_invar(&pair(&a, &[5, 2], &[0, 0], &a, &[0, 0]), MI));
        assert!(!pair_invar(&pair(&a, &[0, 0], &[0, 0], &b, &[0, 0]), MI));
        let x = pair(&a, &[1, 2], &[0, 0], &a, &[0, 0]);
        let y = pair(&a, &[3, 0], &[0, 0], &a, &[0, 0]);
        assert!(equal_static(&x, &y));
        assert!(legit_pairs(&x, &y));
        assert!(comparable_labels(&[&x, &y]));
    }
}
