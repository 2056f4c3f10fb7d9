use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_DESCRIPTORS: usize = 17;
pub const NUM_ATTRIBUTES: usize = 2 * NUM_DESCRIPTORS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];

    /// First attribute index of this gender's block.
    pub fn block_offset(self) -> usize {
        match self {
            Gender::Male => 0,
            Gender::Female => NUM_DESCRIPTORS,
        }
    }

    /// Bitmask covering this gender's attribute block.
    pub fn block_mask(self) -> u64 {
        ((1u64 << NUM_DESCRIPTORS) - 1) << self.block_offset()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(Gender::Male),
            "female" | "f" => Ok(Gender::Female),
            other => Err(Error::input(format!("unknown gender '{other}'"))),
        }
    }
}

/// Built-in descriptor order. The first fifteen are descriptors named in the
/// challenge material; `Sweet` and `Nasal` fill the remaining two slots and
/// can be replaced by loading a registry file.
pub const DEFAULT_DESCRIPTORS: [&str; NUM_DESCRIPTORS] = [
    "Bright",
    "Thin",
    "Low",
    "Magnetic",
    "Pure",
    "Coarse",
    "Slim",
    "Shrill",
    "Husky",
    "Hoarse",
    "Rich",
    "Dark",
    "Soft",
    "Hard",
    "Transparent",
    "Sweet",
    "Nasal",
];

/// Ordered descriptor list. Attribute `descriptor_index` is the male
/// attribute; `NUM_DESCRIPTORS + descriptor_index` is the female one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeRegistry {
    names: Vec<String>,
}

impl Default for AttributeRegistry {
    fn default() -> Self {
        Self {
            names: DEFAULT_DESCRIPTORS.iter().map(|s| (*s).to_owned()).collect(),
        }
    }
}

impl AttributeRegistry {
    pub fn from_names(names: Vec<String>) -> Result<Self> {
        if names.len() != NUM_DESCRIPTORS {
            return Err(Error::config(format!(
                "registry needs exactly {NUM_DESCRIPTORS} descriptors, got {}",
                names.len()
            )));
        }
        for (i, n) in names.iter().enumerate() {
            if n.trim().is_empty() || n.contains(['\t', '\n']) {
                return Err(Error::config(format!("invalid descriptor name {n:?}")));
            }
            if names[..i].iter().any(|m| m.eq_ignore_ascii_case(n)) {
                return Err(Error::config(format!("duplicate descriptor '{n}'")));
            }
        }
        Ok(Self { names })
    }

    /// One descriptor per line; `#` comments and blank lines ignored.
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_names(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_owned)
                .collect(),
        )
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn descriptor_index(&self, descriptor: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n.eq_ignore_ascii_case(descriptor.trim()))
            .ok_or_else(|| Error::input(format!("unknown descriptor '{descriptor}'")))
    }

    pub fn attribute_index(&self, descriptor: &str, gender: Gender) -> Result<usize> {
        Ok(gender.block_offset() + self.descriptor_index(descriptor)?)
    }

    /// Inverse of [`attribute_index`](Self::attribute_index).
    pub fn attribute(&self, index: usize) -> Option<(&str, Gender)> {
        if index >= NUM_ATTRIBUTES {
            return None;
        }
        let gender = if index < NUM_DESCRIPTORS {
            Gender::Male
        } else {
            Gender::Female
        };
        Some((&self.names[index - gender.block_offset()], gender))
    }

    /// Display label such as `male/Bright`.
    pub fn label(&self, index: usize) -> String {
        match self.attribute(index) {
            Some((name, g)) => format!("{g}/{name}"),
            None => format!("attr{index}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_male_block_then_female_block() {
        let r = AttributeRegistry::default();
        assert_eq!(r.attribute_index("Bright", Gender::Male).unwrap(), 0);
        assert_eq!(r.attribute_index("Bright", Gender::Female).unwrap(), 17);
        assert_eq!(r.attribute_index("bright", Gender::Female).unwrap(), 17);
        assert!(matches!(r.attribute_index("Loud", Gender::Male), Err(Error::Input(_))));
    }

    #[test]
    fn index_is_a_bijection() {
        let r = AttributeRegistry::default();
        let mut seen = [false; NUM_ATTRIBUTES];
        for name in r.names() {
            for g in Gender::ALL {
                let i = r.attribute_index(name, g).unwrap();
                assert!(!seen[i]);
                seen[i] = true;
                assert_eq!(r.attribute(i), Some((name.as_str(), g)));
            }
        }
        assert!(seen.iter().all(|&s| s));
        assert_eq!(r.attribute(34), None);
    }

    #[test]
    fn descriptors_from_results_table_are_registered() {
        let r = AttributeRegistry::default();
        for d in ["Bright", "Thin", "Low", "Magnetic", "Pure", "Coarse", "Slim"] {
            for g in Gender::ALL {
                r.attribute_index(d, g).unwrap();
            }
        }
    }

    #[test]
    fn registry_file_validation() {
        assert!(AttributeRegistry::parse("a\nb\n").is_err());
        let names: String = (0..17).map(|i| format!("d{i}\n")).collect();
        let r = AttributeRegistry::parse(&format!("# list\n{names}")).unwrap();
        assert_eq!(r.descriptor_index("d16").unwrap(), 16);
        let dup: String = (0..16).map(|i| format!("d{i}\n")).collect::<String>() + "D0\n";
        assert!(AttributeRegistry::parse(&dup).is_err());
    }

    #[test]
    fn gender_masks_partition_attributes() {
        let m = Gender::Male.block_mask();
        let f = Gender::Female.block_mask();
        assert_eq!(m & f, 0);
        assert_eq!((m | f).count_ones() as usize, NUM_ATTRIBUTES);
        assert_eq!("F".parse::<Gender>().unwrap(), Gender::Female);
    }
}
