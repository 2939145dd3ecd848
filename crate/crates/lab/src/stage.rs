use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Pipeline stages in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Spectra,
    OpsCheck,
    ResponseConv,
    TrainLadder,
    GapDemo,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Spectra, Stage::OpsCheck, Stage::ResponseConv, Stage::TrainLadder, Stage::GapDemo];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Spectra => "spectra",
            Stage::OpsCheck => "ops-check",
            Stage::ResponseConv => "response-conv",
            Stage::TrainLadder => "train-ladder",
            Stage::GapDemo => "gap-demo",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| format!("unknown stage `{s}`; expected one of spectra, ops-check, response-conv, train-ladder, gap-demo"))
    }
}

/// Parses `a,b,c` into a sorted, deduplicated stage list.
pub fn parse_stage_list(list: &str) -> Result<Vec<Stage>, String> {
    let mut out = list.split(',').filter(|s| !s.trim().is_empty()).map(Stage::from_str).collect::<Result<Vec<_>, _>>()?;
    if out.is_empty() {
        return Err("empty stage list".into());
    }
    out.sort();
    out.dedup();
    Ok(out)
}
