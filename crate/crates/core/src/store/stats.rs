use serde::{Deserialize, Serialize};

use super::{DatasetHandle, GroupCounts};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub group: String,
    pub demos: usize,
    pub frames: usize,
    pub minutes: f64,
}

impl StatsRow {
    fn from_counts(group: &str, c: &GroupCounts) -> Self {
        StatsRow {
            group: group.to_string(),
            demos: c.demos,
            frames: c.frames,
            minutes: c.seconds / 60.0,
        }
    }
}

/// Dataset breakdown by home and by task, with a totals row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub per_home: Vec<StatsRow>,
    pub per_task: Vec<StatsRow>,
    pub total: StatsRow,
}

impl StatsTable {
    pub fn mean_per_home(&self) -> (f64, f64) {
        let n = self.per_home.len().max(1) as f64;
        (self.total.demos as f64 / n, self.total.frames as f64 / n)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = |title: &str, rows: &[StatsRow]| {
            out.push_str(&format!("{title:<24} {:>8} {:>12} {:>10}\n", "demos", "frames", "minutes"));
            for r in rows {
                out.push_str(&format!(
                    "{:<24} {:>8} {:>12} {:>10.2}\n",
                    r.group, r.demos, r.frames, r.minutes
                ));
            }
            out.push('\n');
        };
        section("home", &self.per_home);
        section("task", &self.per_task);
        section("total", std::slice::from_ref(&self.total));
        out.pop();
        out
    }
}

pub fn stats_report(handle: &DatasetHandle) -> StatsTable {
    let m = handle.manifest();
    StatsTable {
        per_home: m.per_home.iter().map(|(k, c)| StatsRow::from_counts(k, c)).collect(),
        per_task: m.per_task.iter().map(|(k, c)| StatsRow::from_counts(k, c)).collect(),
        total: StatsRow::from_counts("total", &m.totals),
    }
}
