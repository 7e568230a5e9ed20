/// Secret key rates per pulse with and without the multi-photon leakage credit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkrBreakdown {
    pub r_original: f64,
    pub r_improved: f64,
    /// Error rate of the reconciled string at this operating point.
    pub qber: f64,
    pub delta_multi_min: f64,
    pub leaked_all_per_bit: f64,
    pub leaked_multi_per_bit: f64,
    pub leaked_useful_per_bit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Improvement {
    Ratio(f64),
    /// The original rate is zero while the improved one is positive.
    Unbounded,
    /// Both rates are zero.
    NoKey,
}

impl SkrBreakdown {
    /// `r_improved / r_original − 1`.
    pub fn improvement(&self) -> Improvement {
        if self.r_original > 0.0 {
            Improvement::Ratio(self.r_improved / self.r_original - 1.0)
        } else if self.r_improved > 0.0 {
            Improvement::Unbounded
        } else {
            Improvement::NoKey
        }
    }

    pub fn improvement_ratio(&self) -> Option<f64> {
        match self.improvement() {
            Improvement::Ratio(r) => Some(r),
            _ => None,
        }
    }
}
