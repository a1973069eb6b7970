use std::collections::BTreeMap;
use std::path::Path;

use oralscan_core::{ConditionKind, Error, Result};
use serde::{Deserialize, Serialize};

/// Education text for one condition. The bundled text is editorial
/// placeholder material, not clinical guidance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub title: String,
    pub background: String,
    pub typical_appearance: Vec<String>,
    pub actions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionCatalog {
    pub notice: String,
    pub entries: BTreeMap<ConditionKind, CatalogEntry>,
}

fn entry(title: &str, background: &str, appearance: &[&str], actions: &[&str]) -> CatalogEntry {
    CatalogEntry {
        title: title.into(),
        background: background.into(),
        typical_appearance: appearance.iter().map(|s| s.to_string()).collect(),
        actions: actions.iter().map(|s| s.to_string()).collect(),
    }
}

impl Default for SuggestionCatalog {
    fn default() -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(
            ConditionKind::PeriodontalDisease,
            entry(
                "Periodontal disease",
                "Inflammation of the gums and the tissue that holds teeth in place.",
                &["Dark red, swollen gum margins", "Gums that bleed when brushing"],
                &[
                    "Brush along the gum line twice a day with a soft brush",
                    "Clean between teeth daily",
                    "Ask a dentist about a periodontal check-up",
                ],
            ),
        );
        entries.insert(
            ConditionKind::Caries,
            entry(
                "Caries",
                "Tooth decay caused by acids from bacteria feeding on sugars.",
                &["Dark spots or holes on the tooth surface", "Sensitivity to sweet or cold food"],
                &[
                    "Cut down on sugary snacks and drinks between meals",
                    "Use a fluoride toothpaste",
                    "Book a dental visit to have the spot examined",
                ],
            ),
        );
        entries.insert(
            ConditionKind::DentalCalculus,
            entry(
                "Dental calculus",
                "Hardened plaque that brushing alone cannot remove.",
                &["Yellow or brown crust near the gum line"],
                &[
                    "Schedule a professional cleaning",
                    "Brush and floss daily to slow new build-up",
                ],
            ),
        );
        entries.insert(
            ConditionKind::SoftDeposit,
            entry(
                "Soft deposit",
                "A soft film of plaque and food debris on the teeth.",
                &["Cream or whitish coating on tooth surfaces"],
                &[
                    "Brush twice a day for two minutes",
                    "Eat more fibrous food such as raw vegetables",
                    "Rinse after meals when brushing is not possible",
                ],
            ),
        );
        entries.insert(
            ConditionKind::Discoloration,
            entry(
                "Discoloration",
                "Staining of the teeth, often from food, drink or tobacco.",
                &["Brownish or yellowish tint across several teeth"],
                &[
                    "Limit coffee, tea and tobacco",
                    "Ask a dentist about professional cleaning or polishing",
                ],
            ),
        );
        SuggestionCatalog {
            notice: "Placeholder education text for demonstration. Not medical advice.".into(),
            entries,
        }
    }
}

impl SuggestionCatalog {
    pub fn validate(&self) -> Result<()> {
        for c in ConditionKind::ALL {
            let e = self.entries.get(&c).ok_or_else(|| Error::Validation {
                field: format!("catalog.{c}"),
                message: "missing catalog entry".into(),
            })?;
            if e.actions.is_empty() {
                return Err(Error::Validation {
                    field: format!("catalog.{c}.actions"),
                    message: "action list must not be empty".into(),
                });
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let catalog: SuggestionCatalog = serde_json::from_str(&text)?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn get(&self, condition: ConditionKind) -> &CatalogEntry {
        &self.entries[&condition]
    }
}
