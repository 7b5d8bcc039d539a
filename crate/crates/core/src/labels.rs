//! Label schema: the four violence classes, the five-way decision label and
//! the 0/1 label vector carried by every sample.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 4;

/// One of the four violence classes, in their fixed column and priority order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolenceClass {
    Religio,
    Ethno,
    Nondenominational,
    Noncommunal,
}

impl ViolenceClass {
    pub const ALL: [ViolenceClass; NUM_CLASSES] = [
        ViolenceClass::Religio,
        ViolenceClass::Ethno,
        ViolenceClass::Nondenominational,
        ViolenceClass::Noncommunal,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Column name used in corpus files.
    pub fn column(self) -> &'static str {
        match self {
            ViolenceClass::Religio => "religio",
            ViolenceClass::Ethno => "ethno",
            ViolenceClass::Nondenominational => "nondenominational",
            ViolenceClass::Noncommunal => "noncommunal",
        }
    }

    /// Human-readable name used in rendered tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ViolenceClass::Religio => "Religio-communal",
            ViolenceClass::Ethno => "Ethno-communal",
            ViolenceClass::Nondenominational => "Nondenominational",
            ViolenceClass::Noncommunal => "Noncommunal",
        }
    }

    pub fn decision(self) -> DecisionLabel {
        DecisionLabel::ALL[self.index()]
    }
}

impl fmt::Display for ViolenceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

impl FromStr for ViolenceClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.column() == lower || c.display_name().to_ascii_lowercase() == lower)
            .ok_or_else(|| Error::Validation(format!("unknown class `{s}`")))
    }
}

/// Single-label outcome of a prediction: one class, or no violence at all.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DecisionLabel {
    Religio,
    Ethno,
    Nondenominational,
    Noncommunal,
    NonViolent,
}

impl DecisionLabel {
    pub const ALL: [DecisionLabel; 5] = [
        DecisionLabel::Religio,
        DecisionLabel::Ethno,
        DecisionLabel::Nondenominational,
        DecisionLabel::Noncommunal,
        DecisionLabel::NonViolent,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn class(self) -> Option<ViolenceClass> {
        ViolenceClass::from_index(self.index())
    }

    pub fn display_name(self) -> &'static str {
        match self {
            DecisionLabel::NonViolent => "Non Violent",
            other => other.class().map(ViolenceClass::display_name).unwrap_or(""),
        }
    }
}

impl fmt::Display for DecisionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for DecisionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase().replace(['_', '-'], " ");
        match lower.as_str() {
            "nonviolent" | "non violent" => Ok(DecisionLabel::NonViolent),
            _ => ViolenceClass::from_str(s).map(ViolenceClass::decision),
        }
    }
}

/// Four binary class flags. All zeros denotes a non-violent text.
///
/// Invariant: a noncommunal flag excludes every other flag.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawLabels", into = "RawLabels")]
pub struct LabelVector {
    flags: [bool; NUM_CLASSES],
}

impl LabelVector {
    pub const NON_VIOLENT: LabelVector = LabelVector {
        flags: [false; NUM_CLASSES],
    };

    pub fn new(flags: [bool; NUM_CLASSES]) -> Result<Self> {
        let noncommunal = flags[ViolenceClass::Noncommunal.index()];
        if noncommunal && flags[..3].iter().any(|&f| f) {
            return Err(Error::Validation(
                "noncommunal=1 cannot be combined with another class flag".into(),
            ));
        }
        Ok(Self { flags })
    }

    /// Builds from 0/1 integers, rejecting any other value.
    pub fn from_bits(bits: [u8; NUM_CLASSES]) -> Result<Self> {
        let mut flags = [false; NUM_CLASSES];
        for (i, &b) in bits.iter().enumerate() {
            flags[i] = match b {
                0 => false,
                1 => true,
                other => {
                    return Err(Error::Validation(format!(
                        "label flag {} must be 0 or 1, got {other}",
                        ViolenceClass::ALL[i]
                    )))
                }
            };
        }
        Self::new(flags)
    }

    pub fn single(class: ViolenceClass) -> Self {
        let mut flags = [false; NUM_CLASSES];
        flags[class.index()] = true;
        Self { flags }
    }

    pub fn from_decision(label: DecisionLabel) -> Self {
        label.class().map(Self::single).unwrap_or_default()
    }

    #[inline]
    pub fn get(&self, class: ViolenceClass) -> bool {
        self.flags[class.index()]
    }

    #[inline]
    pub fn flags(&self) -> [bool; NUM_CLASSES] {
        self.flags
    }

    pub fn bits(&self) -> [u8; NUM_CLASSES] {
        self.flags.map(u8::from)
    }

    pub fn is_violent(&self) -> bool {
        self.flags.iter().any(|&f| f)
    }

    pub fn positive_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    /// Reduces to a single label: the highest-priority set flag in column
    /// order, or `NonViolent` when no flag is set.
    pub fn decision(&self) -> DecisionLabel {
        self.flags
            .iter()
            .position(|&f| f)
            .map(|i| DecisionLabel::ALL[i])
            .unwrap_or(DecisionLabel::NonViolent)
    }
}

#[derive(Serialize, Deserialize)]
struct RawLabels {
    religio: u8,
    ethno: u8,
    nondenominational: u8,
    noncommunal: u8,
}

impl TryFrom<RawLabels> for LabelVector {
    type Error = Error;

    fn try_from(raw: RawLabels) -> Result<Self> {
        LabelVector::from_bits([raw.religio, raw.ethno, raw.nondenominational, raw.noncommunal])
    }
}

impl From<LabelVector> for RawLabels {
    fn from(v: LabelVector) -> Self {
        let [religio, ethno, nondenominational, noncommunal] = v.bits();
        RawLabels {
            religio,
            ethno,
            nondenominational,
            noncommunal,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noncommunal_is_exclusive() {
        assert!(LabelVector::from_bits([1, 0, 0, 1]).is_err());
        assert!(LabelVector::from_bits([0, 0, 1, 1]).is_err());
        assert!(LabelVector::from_bits([0, 0, 0, 1]).is_ok());
        assert!(LabelVector::from_bits([1, 1, 0, 0]).is_ok());
        assert!(LabelVector::from_bits([0, 2, 0, 0]).is_err());
    }

    #[test]
    fn decision_uses_priority_order() {
        assert_eq!(LabelVector::NON_VIOLENT.decision(), DecisionLabel::NonViolent);
        assert_eq!(
            LabelVector::from_bits([0, 1, 1, 0]).unwrap().decision(),
            DecisionLabel::Ethno
        );
        assert_eq!(
            LabelVector::from_bits([1, 1, 1, 0]).unwrap().decision(),
            DecisionLabel::Religio
        );
        for d in DecisionLabel::ALL {
            assert_eq!(LabelVector::from_decision(d).decision(), d);
        }
    }

    #[test]
    fn json_shape_and_validation() {
        let v = LabelVector::single(ViolenceClass::Ethno);
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"{"religio":0,"ethno":1,"nondenominational":0,"noncommunal":0}"#);
        let bad = r#"{"religio":0,"ethno":1,"nondenominational":0,"noncommunal":1}"#;
        assert!(serde_json::from_str::<LabelVector>(bad).is_err());
    }

    #[test]
    fn parse_names() {
        assert_eq!("Non Violent".parse::<DecisionLabel>().unwrap(), DecisionLabel::NonViolent);
        assert_eq!("ethno".parse::<DecisionLabel>().unwrap(), DecisionLabel::Ethno);
        assert_eq!(
            "Religio-communal".parse::<ViolenceClass>().unwrap(),
            ViolenceClass::Religio
        );
    }
}
