//! Bounded epoch labels.
//!
//! A [`LabelComponent`] is a `(sting, antistings)` pair over the domain
//! `{1, ..., k² + 1}`. A [`Label`] adds the identity of its creator and an
//! optional canceling component. [`next_b`] and [`next_label`] construct fresh
//! components and labels that dominate a bounded set of inputs.

use std::cmp::Ordering;
use std::fmt::{self, Write as _};
use std::sync::Arc;

use thiserror::Error;

use crate::ProcId;

/// Errors raised while building or combining labels.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("antistings must hold exactly {expected} values, got {got}")]
    WrongAntistingCount { expected: u32, got: u64 },
    #[error("value {value} lies outside the label domain 1..={domain}")]
    OutOfDomain { value: u32, domain: u32 },
    #[error("antistings contain {value} twice")]
    DuplicateAntisting { value: u32 },
    #[error("next_b accepts at most {k} inputs, got {got}")]
    TooManyInputs { k: u32, got: usize },
    #[error("no free sting left in the label domain")]
    DomainExhausted,
    #[error("history label created by {found} passed to next_label for creator {expected}")]
    CreatorMismatch { expected: ProcId, found: ProcId },
    #[error("canceling component is below the main component")]
    CancelBelowMain,
    #[error("k must be between 1 and 65535, got {0}")]
    BadK(u64),
}

/// Size parameters of the label domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelConfig {
    k: u32,
    domain_size: u32,
}

impl LabelConfig {
    /// Builds the configuration for antistings of cardinality `k`.
    pub fn new(k: u32) -> Result<Self, LabelError> {
        if k == 0 || k > u16::MAX as u32 {
            return Err(LabelError::BadK(k as u64));
        }
        Ok(LabelConfig {
            k,
            domain_size: k * k + 1,
        })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn domain_size(&self) -> u32 {
        self.domain_size
    }
}

/// One half of a label: a sting and a set of `k` antistings.
///
/// Antistings are kept as sorted, disjoint, non-adjacent inclusive runs.
/// Cloning is cheap; equality short-circuits on pointer identity and the
/// precomputed fingerprint.
#[derive(Clone)]
pub struct LabelComponent {
    inner: Arc<ComponentInner>,
}

struct ComponentInner {
    sting: u32,
    runs: Box<[(u32, u32)]>,
    fingerprint: u64,
}

fn mix(h: u64, v: u64) -> u64 {
    let mut z = h ^ v.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Collapses sorted distinct values into inclusive runs.
fn runs_from_sorted(values: &[u32]) -> Vec<(u32, u32)> {
    let mut runs: Vec<(u32, u32)> = Vec::new();
    for &v in values {
        match runs.last_mut() {
            Some((_, end)) if *end + 1 == v => *end = v,
            _ => runs.push((v, v)),
        }
    }
    runs
}

impl LabelComponent {
    /// Validates and builds a component.
    pub fn new(
        sting: u32,
        antistings: impl IntoIterator<Item = u32>,
        cfg: &LabelConfig,
    ) -> Result<Self, LabelError> {
        let domain = cfg.domain_size;
        let check = |v: u32| {
            if v == 0 || v > domain {
                Err(LabelError::OutOfDomain { value: v, domain })
            } else {
                Ok(v)
            }
        };
        check(sting)?;
        let mut values: Vec<u32> = antistings
            .into_iter()
            .map(check)
            .collect::<Result<_, _>>()?;
        values.sort_unstable();
        if let Some(w) = values.windows(2).find(|w| w[0] == w[1]) {
            return Err(LabelError::DuplicateAntisting { value: w[0] });
        }
        if values.len() as u64 != cfg.k as u64 {
            return Err(LabelError::WrongAntistingCount {
                expected: cfg.k,
                got: values.len() as u64,
            });
        }
        Ok(Self::from_runs(sting, runs_from_sorted(&values)))
    }

    /// Builds a component from runs that are already sorted and merged.
    pub(crate) fn from_runs(sting: u32, runs: Vec<(u32, u32)>) -> Self {
        let mut fp = mix(0x5157_4c41_4245_4c53, sting as u64);
        for &(a, b) in &runs {
            fp = mix(fp, ((a as u64) << 32) | b as u64);
        }
        LabelComponent {
            inner: Arc::new(ComponentInner {
                sting,
                runs: runs.into_boxed_slice(),
                fingerprint: fp,
            }),
        }
    }

    pub fn sting(&self) -> u32 {
        self.inner.sting
    }

    /// Antistings as sorted inclusive runs.
    pub fn runs(&self) -> &[(u32, u32)] {
        &self.inner.runs
    }

    /// Antistings in ascending order.
    pub fn antistings(&self) -> impl Iterator<Item = u32> + '_ {
        self.inner.runs.iter().flat_map(|&(a, b)| a..=b)
    }

    /// Number of antistings.
    pub fn antisting_count(&self) -> u64 {
        self.inner
            .runs
            .iter()
            .map(|&(a, b)| (b - a) as u64 + 1)
            .sum()
    }

    /// Membership test on the antistings.
    pub fn contains(&self, value: u32) -> bool {
        let runs = &self.inner.runs;
        runs.binary_search_by(|&(a, b)| {
            if b < value {
                Ordering::Less
            } else if a > value {
                Ordering::Greater
            } else {
                Ordering::Equal
            }
        })
        .is_ok()
    }

    /// A 64-bit fingerprint of sting and antistings, stable across builds.
    pub fn fingerprint(&self) -> u64 {
        self.inner.fingerprint
    }

    /// Checks the component against a configuration.
    pub fn is_valid(&self, cfg: &LabelConfig) -> bool {
        let d = cfg.domain_size;
        self.sting() >= 1
            && self.sting() <= d
            && self.antisting_count() == cfg.k as u64
            && self.runs().iter().all(|&(a, b)| a >= 1 && b <= d && a <= b)
    }
}

impl PartialEq for LabelComponent {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.fingerprint == other.inner.fingerprint
                && self.inner.sting == other.inner.sting
                && self.inner.runs == other.inner.runs)
    }
}

impl Eq for LabelComponent {}

impl std::hash::Hash for LabelComponent {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        state.write_u64(self.inner.fingerprint);
    }
}

impl fmt::Debug for LabelComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.sting())?;
        write_runs(f, self.runs())
    }
}

fn write_runs(f: &mut impl fmt::Write, runs: &[(u32, u32)]) -> fmt::Result {
    f.write_char('{')?;
    for (i, &(a, b)) in runs.iter().enumerate() {
        if i > 0 {
            f.write_char(',')?;
        }
        if a == b {
            write!(f, "{a}")?;
        } else {
            write!(f, "{a}..{b}")?;
        }
    }
    f.write_char('}')
}

/// `a ≺_b b`: the sting of `a` is among the antistings of `b` while the sting
/// of `b` is absent from the antistings of `a`.
pub fn precedes_b(a: &LabelComponent, b: &LabelComponent) -> bool {
    b.contains(a.sting()) && !a.contains(b.sting())
}

/// A cancelable epoch label.
#[derive(Clone, PartialEq, Eq)]
pub struct Label {
    creator: ProcId,
    ml: LabelComponent,
    cl: Option<LabelComponent>,
}

impl Label {
    /// Builds a label, rejecting a canceling component that is `≺_b` below `ml`.
    pub fn new(
        creator: ProcId,
        ml: LabelComponent,
        cl: Option<LabelComponent>,
    ) -> Result<Self, LabelError> {
        if let Some(c) = &cl {
            if precedes_b(c, &ml) {
                return Err(LabelError::CancelBelowMain);
            }
        }
        Ok(Label { creator, ml, cl })
    }

    /// A legitimate label.
    pub fn legit(creator: ProcId, ml: LabelComponent) -> Self {
        Label {
            creator,
            ml,
            cl: None,
        }
    }

    pub fn creator(&self) -> ProcId {
        self.creator
    }

    pub fn ml(&self) -> &LabelComponent {
        &self.ml
    }

    pub fn cl(&self) -> Option<&LabelComponent> {
        self.cl.as_ref()
    }

    pub fn is_legit(&self) -> bool {
        self.cl.is_none()
    }

    /// The same label with its canceling component removed.
    pub fn without_cancel(&self) -> Label {
        Label {
            creator: self.creator,
            ml: self.ml.clone(),
            cl: None,
        }
    }

    /// Sets the canceling component unless one is already present or the
    /// result would violate the label invariant. Returns whether it changed.
    pub(crate) fn mark_canceled(&mut self, by: &LabelComponent) -> bool {
        if self.cl.is_some() || precedes_b(by, &self.ml) {
            return false;
        }
        self.cl = Some(by.clone());
        true
    }

    /// `=_m`: equal creator and equal main component.
    pub fn eq_m(&self, other: &Label) -> bool {
        self.creator == other.creator && self.ml == other.ml
    }

    /// Short trace form: `creator:sting#fingerprint`, with `!cs` when canceled.
    pub fn summary(&self) -> String {
        let mut s = String::with_capacity(24);
        self.write_summary(&mut s);
        s
    }

    /// Appends [`Label::summary`] to `out`.
    pub fn write_summary(&self, out: &mut String) {
        let mut buf = itoa::Buffer::new();
        out.push_str(buf.format(self.creator.get()));
        out.push(':');
        out.push_str(buf.format(self.ml.sting()));
        write!(out, "#{:08x}", self.ml.fingerprint() as u32).ok();
        if let Some(c) = &self.cl {
            out.push('!');
            out.push_str(buf.format(c.sting()));
        }
    }
}

/// Canonical textual form `creator:sting:{a1,a2..a5,...}[!cs]`, where runs of
/// consecutive antistings are written `a..b`.
impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:", self.creator, self.ml.sting())?;
        write_runs(f, self.ml.runs())?;
        if let Some(c) = &self.cl {
            write!(f, "!{}", c.sting())?;
        }
        Ok(())
    }
}

impl fmt::Debug for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{:?}", self.creator, self.ml)?;
        if let Some(c) = &self.cl {
            write!(f, "!{:?}", c)?;
        }
        Ok(())
    }
}

/// `a ≺_lb b`: smaller creator, or same creator and `a.ml ≺_b b.ml`.
pub fn precedes_lb(a: &Label, b: &Label) -> bool {
    a.creator < b.creator || (a.creator == b.creator && precedes_b(&a.ml, &b.ml))
}

/// `a ⪯_lb b`: `a ≺_lb b` or `a =_m b`.
pub fn precedes_eq_lb(a: &Label, b: &Label) -> bool {
    a.eq_m(b) || precedes_lb(a, b)
}

/// Neither label precedes the other and they are not `=_m`.
pub fn incomparable(a: &Label, b: &Label) -> bool {
    !a.eq_m(b) && !precedes_lb(a, b) && !precedes_lb(b, a)
}

/// `a` cancels `b`: they are incomparable, or share a creator with
/// `b.ml ≺_b a.ml`.
pub fn cancels(a: &Label, b: &Label) -> bool {
    incomparable(a, b) || (a.creator == b.creator && precedes_b(&b.ml, &a.ml))
}

/// The fresh component produced for an empty input: `(1, {2, ..., k+1})`.
pub fn seed_component(cfg: &LabelConfig) -> LabelComponent {
    LabelComponent::from_runs(1, vec![(2, cfg.k + 1)])
}

/// Builds a component that `≺_b`-dominates every input.
///
/// The sting is the smallest domain value that is neither an input sting nor
/// an antisting of any input. The antistings are the input stings, padded
/// with the smallest remaining values.
pub fn next_b<'a, I>(inputs: I, cfg: &LabelConfig) -> Result<LabelComponent, LabelError>
where
    I: IntoIterator<Item = &'a LabelComponent>,
{
    let mut items: Vec<&LabelComponent> = inputs.into_iter().collect();
    items.sort_unstable_by(|a, b| {
        (a.fingerprint(), a.sting())
            .cmp(&(b.fingerprint(), b.sting()))
            .then_with(|| a.runs().cmp(b.runs()))
    });
    items.dedup_by(|a, b| a == b);
    if items.is_empty() {
        return Ok(seed_component(cfg));
    }
    if items.len() > cfg.k as usize {
        return Err(LabelError::TooManyInputs {
            k: cfg.k,
            got: items.len(),
        });
    }

    let mut stings: Vec<u32> = items.iter().map(|c| c.sting()).collect();
    stings.sort_unstable();
    stings.dedup();

    let mut covered: Vec<(u32, u32)> = items
        .iter()
        .flat_map(|c| c.runs().iter().copied())
        .collect();
    covered.extend(stings.iter().map(|&s| (s, s)));
    covered.sort_unstable();
    let mut sting = 1u32;
    for &(a, b) in &covered {
        if a > sting {
            break;
        }
        sting = sting.max(b.saturating_add(1));
    }
    if sting > cfg.domain_size {
        return Err(LabelError::DomainExhausted);
    }

    let mut padding: Vec<u32> = Vec::with_capacity(cfg.k as usize - stings.len());
    let mut taken = stings.iter().peekable();
    let mut v = 1u32;
    while padding.len() < padding.capacity() {
        if v > cfg.domain_size {
            return Err(LabelError::DomainExhausted);
        }
        while taken.peek().is_some_and(|&&s| s < v) {
            taken.next();
        }
        if v != sting && taken.peek() != Some(&&v) {
            padding.push(v);
        }
        v += 1;
    }
    let mut values = Vec::with_capacity(cfg.k as usize);
    let (mut s, mut p) = (stings.iter().peekable(), padding.iter().peekable());
    loop {
        let next = match (s.peek(), p.peek()) {
            (Some(&&a), Some(&&b)) if a < b => s.next(),
            (Some(_), Some(_)) | (None, Some(_)) => p.next(),
            (Some(_), None) => s.next(),
            (None, None) => break,
        };
        values.extend(next.copied());
    }
    Ok(LabelComponent::from_runs(sting, runs_from_sorted(&values)))
}

/// Builds a legitimate label for `creator` that dominates every main and
/// canceling component found in `history`.
pub fn next_label<'a, I>(
    history: I,
    creator: ProcId,
    cfg: &LabelConfig,
) -> Result<Label, LabelError>
where
    I: IntoIterator<Item = &'a Label>,
{
    let mut comps: Vec<&LabelComponent> = Vec::new();
    for l in history {
        if l.creator != creator {
            return Err(LabelError::CreatorMismatch {
                expected: creator,
                found: l.creator,
            });
        }
        comps.push(&l.ml);
        if let Some(c) = &l.cl {
            comps.push(c);
        }
    }
    let ml = next_b(comps, cfg)?;
    Ok(Label::legit(creator, ml))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k: u32) -> LabelConfig {
        LabelConfig::new(k).unwrap()
    }

    fn comp(k: u32, sting: u32, a: &[u32]) -> LabelComponent {
        LabelComponent::new(sting, a.iter().copied(), &cfg(k)).unwrap()
    }

    /// A component outside any particular domain; the orders do not depend on it.
    fn raw(sting: u32, a: &[u32]) -> LabelComponent {
        let mut v = a.to_vec();
        v.sort_unstable();
        LabelComponent::from_runs(sting, runs_from_sorted(&v))
    }

    fn p(i: u16) -> ProcId {
        ProcId::new(i).unwrap()
    }

    #[test]
    fn precedes_b_examples() {
        let a = raw(2, &[5, 6]);
        let b = raw(9, &[2, 7]);
        let c = raw(3, &[7, 8]);
        assert!(precedes_b(&a, &b));
        assert!(!precedes_b(&a, &c));
        assert!(!precedes_b(&c, &a));
        assert!(!precedes_b(&a, &a));
    }

    #[test]
    fn next_b_small_example() {
        let c = cfg(2);
        let x = raw(1, &[2, 3]);
        let o = next_b([&x], &c).unwrap();
        assert_eq!(o.sting(), 4);
        assert_eq!(o.antistings().collect::<Vec<_>>(), vec![1, 2]);
        assert!(precedes_b(&x, &o));
    }

    #[test]
    fn next_b_empty_is_seed() {
        let c = cfg(3);
        let o = next_b(std::iter::empty(), &c).unwrap();
        assert_eq!(o.sting(), 1);
        assert_eq!(o.antistings().collect::<Vec<_>>(), vec![2, 3, 4]);
    }

    #[test]
    fn next_b_rejects_oversized_input() {
        let c = cfg(1);
        let a = comp(1, 1, &[2]);
        let b = comp(1, 2, &[1]);
        assert_eq!(
            next_b([&a, &b], &c),
            Err(LabelError::TooManyInputs { k: 1, got: 2 })
        );
    }

    #[test]
    fn component_validation() {
        let c = cfg(2);
        assert!(matches!(
            LabelComponent::new(0, [1, 2], &c),
            Err(LabelError::OutOfDomain { .. })
        ));
        assert!(matches!(
            LabelComponent::new(1, [6, 2], &c),
            Err(LabelError::OutOfDomain { .. })
        ));
        assert!(matches!(
            LabelComponent::new(1, [2, 2], &c),
            Err(LabelError::DuplicateAntisting { .. })
        ));
        assert!(matches!(
            LabelComponent::new(1, [2], &c),
            Err(LabelError::WrongAntistingCount { .. })
        ));
    }

    #[test]
    fn label_orders() {
        let a = Label::legit(p(1), raw(2, &[5, 6]));
        let b = Label::legit(p(2), raw(3, &[7, 8]));
        assert!(precedes_lb(&a, &b));
        assert!(!incomparable(&a, &b));
        assert!(!cancels(&a, &b) && !cancels(&b, &a));

        let x = Label::legit(p(1), raw(2, &[5, 6]));
        let y = Label::legit(p(1), raw(9, &[2, 7]));
        assert!(precedes_lb(&x, &y));
        assert!(cancels(&y, &x));
        assert!(!cancels(&x, &y));
        assert!(!precedes_lb(&x, &x));

        let z = Label::legit(p(1), raw(3, &[7, 8]));
        assert!(incomparable(&x, &z));
        assert!(cancels(&x, &z) && cancels(&z, &x));
        assert!(!incomparable(&x, &x));
    }

    #[test]
    fn cancel_invariant_enforced() {
        let ml = raw(9, &[2, 7]);
        let below = raw(2, &[5, 6]);
        assert_eq!(
            Label::new(p(1), ml.clone(), Some(below)),
            Err(LabelError::CancelBelowMain)
        );
        assert!(Label::new(p(1), ml.clone(), Some(ml)).is_ok());
    }

    #[test]
    fn next_label_chain() {
        let c = cfg(6);
        let mut hist: Vec<Label> = Vec::new();
        for _ in 0..3 {
            let l = next_label(&hist, p(2), &c).unwrap();
            assert!(l.is_legit());
            for h in &hist {
                assert!(precedes_lb(h, &l));
            }
            hist.push(l);
        }
        for w in hist.windows(2) {
            assert!(precedes_b(w[0].ml(), w[1].ml()));
        }
        let other = Label::legit(p(3), seed_component(&c));
        assert!(matches!(
            next_label([&other], p(2), &c),
            Err(LabelError::CreatorMismatch { .. })
        ));
    }

    #[test]
    fn next_label_dominates_canceling_part() {
        let c = cfg(4);
        let ml = comp(4, 1, &[2, 3, 4, 5]);
        let cl = comp(4, 6, &[1, 7, 8, 9]);
        let l = Label::new(p(1), ml.clone(), Some(cl.clone())).unwrap();
        let fresh = next_label([&l], p(1), &c).unwrap();
        assert!(precedes_b(&ml, fresh.ml()));
        assert!(precedes_b(&cl, fresh.ml()));
    }

    #[test]
    fn textual_form() {
        let ml = comp(4, 6, &[1, 2, 3, 9]);
        let cl = comp(4, 12, &[6, 7, 8, 10]);
        let l = Label::new(p(3), ml, Some(cl)).unwrap();
        assert_eq!(l.to_string(), "3:6:{1..3,9}!12");
    }

    #[test]
    fn equality_ignores_allocation() {
        let a = comp(3, 5, &[1, 2, 4]);
        let b = comp(3, 5, &[4, 2, 1]);
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert!(a.contains(4) && !a.contains(3) && !a.contains(5));
    }
}
