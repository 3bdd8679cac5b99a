use serde::{Deserialize, Serialize};

/// Per-session loss diagnostics. `l_joint` is always the left-to-right sum
/// `l_plan + l_rev + l_int + l_prot`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub l_plan: f64,
    pub l_rev: f64,
    pub l_int: f64,
    pub l_prot: f64,
    pub l_joint: f64,
}

impl MetricsReport {
    pub fn new(l_plan: f64, l_rev: f64, l_int: f64, l_prot: f64) -> Self {
        Self {
            l_plan,
            l_rev,
            l_int,
            l_prot,
            l_joint: l_plan + l_rev + l_int + l_prot,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_is_exact_sum() {
        let m = MetricsReport::new(0.1, 0.2, 0.3, 0.4);
        assert_eq!(m.l_joint, 0.1 + 0.2 + 0.3 + 0.4);
    }
}
