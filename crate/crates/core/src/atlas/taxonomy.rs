//! The 78-tract anatomical taxonomy.
//!
//! Bilateral tracts expand to `<name>_left` / `<name>_right`; the corpus
//! callosum segments and the middle cerebellar peduncle have no side.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const UNLABELED: &str = "unlabeled";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TractCategory {
    Association,
    Commissural,
    Limbic,
    Projection,
    Cerebellar,
    Superficial,
}

impl TractCategory {
    pub const ALL: [TractCategory; 6] = [
        TractCategory::Association,
        TractCategory::Commissural,
        TractCategory::Limbic,
        TractCategory::Projection,
        TractCategory::Cerebellar,
        TractCategory::Superficial,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TractCategory::Association => "association",
            TractCategory::Commissural => "commissural",
            TractCategory::Limbic => "limbic",
            TractCategory::Projection => "projection",
            TractCategory::Cerebellar => "cerebellar",
            TractCategory::Superficial => "superficial",
        }
    }
}

impl fmt::Display for TractCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

const BILATERAL: &[(TractCategory, &[&str])] = &[
    (
        TractCategory::Association,
        &["AF", "EC", "EmC", "ILF", "IOFF", "MdLF", "SLF-I", "SLF-II", "SLF-III", "UF"],
    ),
    (TractCategory::Limbic, &["CB-D", "CB-V"]),
    (
        TractCategory::Projection,
        &["CST", "CR-F", "CR-P", "SF", "SO", "SP", "TF", "TO", "TT", "TP"],
    ),
    (
        TractCategory::Cerebellar,
        &["CPC", "ICP", "Intra-CBLM-I&P", "Intra-CBLM-PaT", "SCP"],
    ),
    (
        TractCategory::Superficial,
        &["Sup-F", "Sup-FP", "Sup-O", "Sup-OT", "Sup-P", "Sup-PO", "Sup-PT", "Sup-T"],
    ),
];

const UNILATERAL: &[(TractCategory, &[&str])] = &[
    (TractCategory::Commissural, &["CC1", "CC2", "CC3", "CC4", "CC5", "CC6", "CC7"]),
    (TractCategory::Cerebellar, &["MCP"]),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TractInfo {
    pub name: String,
    pub category: TractCategory,
}

fn table() -> &'static (Vec<TractInfo>, BTreeMap<String, TractCategory>) {
    static TABLE: OnceLock<(Vec<TractInfo>, BTreeMap<String, TractCategory>)> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut all = Vec::new();
        for cat in TractCategory::ALL {
            for (c, names) in BILATERAL {
                if *c == cat {
                    for n in *names {
                        for side in ["left", "right"] {
                            all.push(TractInfo {
                                name: format!("{n}_{side}"),
                                category: cat,
                            });
                        }
                    }
                }
            }
            for (c, names) in UNILATERAL {
                if *c == cat {
                    all.extend(names.iter().map(|n| TractInfo {
                        name: n.to_string(),
                        category: cat,
                    }));
                }
            }
        }
        let index = all.iter().map(|t| (t.name.clone(), t.category)).collect();
        (all, index)
    })
}

/// All 78 tracts, grouped by category.
pub fn tracts() -> &'static [TractInfo] {
    &table().0
}

pub fn category_of(name: &str) -> Option<TractCategory> {
    table().1.get(name).copied()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AnatomicalLabel {
    pub tract_name: String,
    pub category: Option<TractCategory>,
}

impl AnatomicalLabel {
    pub fn unlabeled() -> Self {
        Self {
            tract_name: UNLABELED.to_string(),
            category: None,
        }
    }

    pub fn tract(name: &str) -> Result<Self> {
        match category_of(name) {
            Some(category) => Ok(Self {
                tract_name: name.to_string(),
                category: Some(category),
            }),
            None => Err(invalid(format!("unknown tract name {name:?}"))),
        }
    }

    pub fn is_unlabeled(&self) -> bool {
        self.category.is_none()
    }

    /// Name/category pairing matches the taxonomy.
    pub fn is_consistent(&self) -> bool {
        match self.category {
            None => self.tract_name == UNLABELED,
            Some(c) => category_of(&self.tract_name) == Some(c),
        }
    }
}
