use serde::Serialize;

use super::report::EvalRow;

/// Directional robustness checks on a report holding both the `sortrl`
/// and `teacher` sweeps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessVerdict {
    pub teacher_clean: f64,
    pub student_clean: f64,
    pub student_at_budget: f64,
    /// `(ε, student, teacher)` for every grid point in `[budget, upper]`.
    pub attacked: Vec<(f64, f64, f64)>,
    pub checks: Vec<(String, bool)>,
}

impl RobustnessVerdict {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|(_, ok)| *ok)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| n.as_str()).collect()
    }
}

fn reward(rows: &[EvalRow], method: &str, eps: f64) -> Option<f64> {
    rows.iter()
        .find(|r| r.method == method && (r.eps - eps).abs() < 1e-12)
        .map(|r| r.mean_reward)
}

/// Teacher clean return at least `teacher_target`; student clean return at
/// least 0.95 of the teacher's; student keeps 0.8 of its clean return at
/// `budget`; student strictly beats the attacked teacher at every grid
/// budget in `[budget, upper]`.
pub fn robustness_verdict(rows: &[EvalRow], teacher_target: f64, budget: f64, upper: f64) -> RobustnessVerdict {
    let teacher_clean = reward(rows, "teacher", 0.0).unwrap_or(f64::NAN);
    let student_clean = reward(rows, "sortrl", 0.0).unwrap_or(f64::NAN);
    let student_at_budget = reward(rows, "sortrl", budget).unwrap_or(f64::NAN);
    let mut grid: Vec<f64> = rows
        .iter()
        .filter(|r| r.method == "sortrl" && r.eps >= budget - 1e-12 && r.eps <= upper + 1e-12)
        .map(|r| r.eps)
        .collect();
    grid.sort_by(f64::total_cmp);
    let attacked: Vec<(f64, f64, f64)> = grid
        .iter()
        .map(|&e| {
            (
                e,
                reward(rows, "sortrl", e).unwrap_or(f64::NAN),
                reward(rows, "teacher", e).unwrap_or(f64::NAN),
            )
        })
        .collect();
    let checks = vec![
        (format!("teacher clean return >= {teacher_target}"), teacher_clean >= teacher_target),
        ("student clean return >= 0.95 x teacher".to_string(), student_clean >= 0.95 * teacher_clean),
        (
            format!("student return at eps {budget} >= 0.8 x its clean return"),
            student_at_budget >= 0.8 * student_clean,
        ),
        (
            format!("student beats attacked teacher for eps in [{budget}, {upper}]"),
            !attacked.is_empty() && attacked.iter().all(|(_, s, t)| s > t),
        ),
    ];
    RobustnessVerdict {
        teacher_clean,
        student_clean,
        student_at_budget,
        attacked,
        checks,
    }
}
