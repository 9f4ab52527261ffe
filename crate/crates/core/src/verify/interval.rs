use crate::Scalar;

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval<S> {
    pub lo: S,
    pub hi: S,
}

impl<S: Scalar> Interval<S> {
    pub fn new(lo: S, hi: S) -> Self {
        debug_assert!(lo <= hi, "interval bounds out of order");
        Interval { lo, hi }
    }

    pub fn point(x: S) -> Self {
        Interval { lo: x, hi: x }
    }

    /// `[-r, r]`.
    pub fn symmetric(r: S) -> Self {
        Interval { lo: -r, hi: r }
    }

    pub fn width(&self) -> S {
        self.hi - self.lo
    }

    pub fn contains(&self, x: S) -> bool {
        self.lo <= x && x <= self.hi
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, o: Self) -> Self {
        Interval {
            lo: self.lo + o.lo,
            hi: self.hi + o.hi,
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, o: Self) -> Self {
        Interval {
            lo: self.lo - o.hi,
            hi: self.hi - o.lo,
        }
    }

    pub fn scale(self, k: S) -> Self {
        if k >= S::zero() {
            Interval {
                lo: self.lo * k,
                hi: self.hi * k,
            }
        } else {
            Interval {
                lo: self.hi * k,
                hi: self.lo * k,
            }
        }
    }

    pub fn hull(self, o: Self) -> Self {
        Interval {
            lo: self.lo.min(o.lo),
            hi: self.hi.max(o.hi),
        }
    }

    pub fn clamp(self, lo: S, hi: S) -> Self {
        Interval {
            lo: self.lo.max(lo).min(hi),
            hi: self.hi.max(lo).min(hi),
        }
    }

    /// Largest absolute value in the interval.
    pub fn magnitude(&self) -> S {
        self.lo.abs().max(self.hi.abs())
    }
}
