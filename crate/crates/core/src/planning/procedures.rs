use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{PlanningError, Result};
use crate::mesh::{canonical_attribute_names, ATTRIBUTE_COUNT};

const BUILTIN: &str = include_str!("../../data/procedures.toml");

/// A named set of attributes moved together.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ProcedureSpec", into = "ProcedureSpec")]
pub struct Procedure {
    name: String,
    attributes: BTreeSet<usize>,
}

/// Wire and file form, with attribute names.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcedureSpec {
    pub name: String,
    pub attributes: Vec<String>,
}

impl Procedure {
    pub fn new(name: impl Into<String>, attributes: impl IntoIterator<Item = usize>) -> Result<Self> {
        let name = name.into();
        let attributes: BTreeSet<usize> = attributes.into_iter().collect();
        if attributes.is_empty() {
            return Err(PlanningError::EmptyProcedure(name));
        }
        if let Some(&k) = attributes.iter().find(|&&k| k >= ATTRIBUTE_COUNT) {
            return Err(PlanningError::UnknownAttribute(k.to_string()));
        }
        Ok(Self { name, attributes })
    }

    /// Every attribute.
    pub fn whole_head() -> Self {
        Self::new("whole head", 0..ATTRIBUTE_COUNT).expect("non-empty")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn attributes(&self) -> &BTreeSet<usize> {
        &self.attributes
    }

    pub fn contains(&self, attribute: usize) -> bool {
        self.attributes.contains(&attribute)
    }
}

impl TryFrom<ProcedureSpec> for Procedure {
    type Error = PlanningError;

    fn try_from(spec: ProcedureSpec) -> Result<Self> {
        let names = canonical_attribute_names();
        let indices = spec
            .attributes
            .iter()
            .map(|a| {
                names
                    .iter()
                    .position(|n| n == a)
                    .ok_or_else(|| PlanningError::UnknownAttribute(a.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Procedure::new(spec.name, indices)
    }
}

impl From<Procedure> for ProcedureSpec {
    fn from(p: Procedure) -> Self {
        let names = canonical_attribute_names();
        ProcedureSpec {
            name: p.name,
            attributes: p.attributes.iter().map(|&k| names[k].clone()).collect(),
        }
    }
}

/// Ordered, name-unique collection of procedures.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProcedureRegistry {
    #[serde(rename = "procedure", default)]
    procedures: Vec<Procedure>,
}

impl ProcedureRegistry {
    pub fn from_toml(text: &str) -> Result<Self> {
        let reg: Self = toml::from_str(text).map_err(|e| PlanningError::Registry(e.to_string()))?;
        let mut seen = BTreeSet::new();
        for p in &reg.procedures {
            if !seen.insert(p.name()) {
                return Err(PlanningError::Registry(format!("duplicate procedure {}", p.name())));
            }
        }
        Ok(reg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("registry serialises")
    }

    pub fn procedures(&self) -> &[Procedure] {
        &self.procedures
    }

    pub fn get(&self, name: &str) -> Option<&Procedure> {
        self.procedures.iter().find(|p| p.name == name)
    }

    /// Replaces a procedure of the same name or appends a new one.
    pub fn upsert(&mut self, procedure: Procedure) {
        match self.procedures.iter_mut().find(|p| p.name == procedure.name) {
            Some(slot) => *slot = procedure,
            None => self.procedures.push(procedure),
        }
    }

    pub fn remove(&mut self, name: &str) -> Option<Procedure> {
        let i = self.procedures.iter().position(|p| p.name == name)?;
        Some(self.procedures.remove(i))
    }
}

/// Monobloc, FOAR, Le Fort II, bipartition, box and mandibular osteotomy.
pub fn builtin_procedures() -> ProcedureRegistry {
    ProcedureRegistry::from_toml(BUILTIN).expect("shipped registry is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_registry() {
        let reg = builtin_procedures();
        assert_eq!(reg.procedures().len(), 6);
        let names = canonical_attribute_names();
        let le_fort: Vec<&str> = reg
            .get("Le Fort II")
            .unwrap()
            .attributes()
            .iter()
            .map(|&k| names[k].as_str())
            .collect();
        for a in ["nose", "upper_lip", "nasolabial"] {
            assert!(le_fort.contains(&a));
        }
        assert!(reg.procedures().iter().all(|p| !p.attributes().is_empty()));
    }

    #[test]
    fn registry_round_trip() {
        let mut reg = builtin_procedures();
        reg.upsert(Procedure::new("custom", [0, 14]).unwrap());
        let back = ProcedureRegistry::from_toml(&reg.to_toml()).unwrap();
        assert_eq!(back, reg);
        assert!(reg.remove("custom").is_some());
        assert_eq!(reg, builtin_procedures());
    }

    #[test]
    fn invalid_procedures_rejected() {
        assert!(matches!(Procedure::new("x", []), Err(PlanningError::EmptyProcedure(_))));
        assert!(Procedure::new("x", [15]).is_err());
        let bad = "[[procedure]]\nname = \"x\"\nattributes = [\"tail\"]\n";
        assert!(ProcedureRegistry::from_toml(bad).is_err());
        let dup = "[[procedure]]\nname = \"x\"\nattributes = [\"nose\"]\n[[procedure]]\nname = \"x\"\nattributes = [\"chin\"]\n";
        assert!(ProcedureRegistry::from_toml(dup).is_err());
    }
}
