//! Fine, coarse and negative expression label spaces.
//!
//! The fine space has eight expressions. The coarse space merges the four
//! negative expressions into a single `Negative` class, leaving five classes.
//! The negative space holds just those four expressions. Index assignments are
//! carried by [`LabelScheme`] so a dataset with a different ordering only needs
//! a config file.

use std::collections::HashSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::kv;

pub const FINE_COUNT: usize = 8;
pub const COARSE_COUNT: usize = 5;
pub const NEGATIVE_COUNT: usize = 4;

/// Canonical fine order.
pub const CANONICAL_FINE: [&str; FINE_COUNT] = [
    "Neutral",
    "Anger",
    "Disgust",
    "Fear",
    "Happiness",
    "Sadness",
    "Surprise",
    "Other",
];
pub const CANONICAL_COARSE: [&str; COARSE_COUNT] =
    ["Neutral", "Negative", "Happiness", "Surprise", "Other"];
pub const CANONICAL_NEGATIVE: [&str; NEGATIVE_COUNT] = ["Anger", "Disgust", "Fear", "Sadness"];

/// Name of the coarse class that groups the negative expressions.
pub const NEGATIVE_GROUP: &str = "Negative";

macro_rules! label_index {
    ($(#[$meta:meta])* $name:ident, $count:expr, $space:literal) => {
        $(#[$meta])*
        #[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(u8);

        impl $name {
            pub const COUNT: usize = $count;

            pub fn new(index: usize) -> Result<Self> {
                if index < $count {
                    Ok(Self(index as u8))
                } else {
                    Err(Error::InvalidLabel { space: $space, index })
                }
            }

            pub fn index(self) -> usize {
                self.0 as usize
            }

            pub fn all() -> impl Iterator<Item = Self> {
                (0..$count).map(|i| Self(i as u8))
            }
        }

        impl TryFrom<usize> for $name {
            type Error = Error;

            fn try_from(index: usize) -> Result<Self> {
                Self::new(index)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

label_index!(
    /// Index into the 8-class fine label space of a [`LabelScheme`].
    ExpressionLabel, FINE_COUNT, "fine"
);
label_index!(
    /// Index into the 5-class coarse label space of a [`LabelScheme`].
    CoarseLabel, COARSE_COUNT, "coarse"
);
label_index!(
    /// Index into the 4-class negative label space of a [`LabelScheme`].
    NegativeLabel, NEGATIVE_COUNT, "negative"
);

/// Index assignments for the three label spaces and the maps between them.
///
/// Immutable once built; every constructor validates the full set of
/// invariants (cardinalities, distinct names, and that the preimage of
/// `Negative` is exactly the negative list).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelScheme {
    fine: Vec<String>,
    coarse: Vec<String>,
    negative: Vec<String>,
    fine_to_coarse: [u8; FINE_COUNT],
    negative_to_fine: [u8; NEGATIVE_COUNT],
    fine_to_negative: [Option<u8>; FINE_COUNT],
    coarse_to_fine: [Option<u8>; COARSE_COUNT],
    negative_coarse: u8,
}

impl Default for LabelScheme {
    fn default() -> Self {
        Self::from_names(&CANONICAL_FINE, &CANONICAL_COARSE, &CANONICAL_NEGATIVE, &CANONICAL_NEGATIVE)
            .expect("canonical scheme is valid")
    }
}

impl LabelScheme {
    /// Builds a scheme from ordered name lists. Names match case-insensitively.
    pub fn from_names<S: AsRef<str>>(
        fine: &[S],
        coarse: &[S],
        negative: &[S],
        negative_group: &[S],
    ) -> Result<Self> {
        let fine = canonical_list("fine", fine, &CANONICAL_FINE)?;
        let coarse = canonical_list("coarse", coarse, &CANONICAL_COARSE)?;
        let negative = canonical_list("negative", negative, &CANONICAL_NEGATIVE)?;
        let group: HashSet<&str> = negative_group
            .iter()
            .map(|s| canonical_name(s.as_ref(), &CANONICAL_FINE).unwrap_or(s.as_ref()))
            .collect();
        if group.len() != negative_group.len() {
            return Err(Error::Scheme("negative_group contains duplicate names".into()));
        }
        let negative_set: HashSet<&str> = negative.iter().map(String::as_str).collect();
        if group != negative_set {
            return Err(Error::Scheme(format!(
                "preimage of {NEGATIVE_GROUP} must equal the negative list {negative:?}, got {:?}",
                negative_group.iter().map(|s| s.as_ref()).collect::<Vec<_>>()
            )));
        }

        let coarse_pos = |name: &str| coarse.iter().position(|c| c == name);
        let fine_pos = |name: &str| fine.iter().position(|f| f == name);
        let negative_coarse = coarse_pos(NEGATIVE_GROUP).expect("validated coarse list") as u8;

        let mut fine_to_coarse = [0u8; FINE_COUNT];
        let mut fine_to_negative = [None; FINE_COUNT];
        let mut coarse_to_fine = [None; COARSE_COUNT];
        for (fi, name) in fine.iter().enumerate() {
            if let Some(ni) = negative.iter().position(|n| n == name) {
                fine_to_coarse[fi] = negative_coarse;
                fine_to_negative[fi] = Some(ni as u8);
            } else {
                let ci = coarse_pos(name).ok_or_else(|| {
                    Error::Scheme(format!("fine label {name} has no coarse counterpart"))
                })?;
                fine_to_coarse[fi] = ci as u8;
                coarse_to_fine[ci] = Some(fi as u8);
            }
        }
        let mut negative_to_fine = [0u8; NEGATIVE_COUNT];
        for (ni, name) in negative.iter().enumerate() {
            negative_to_fine[ni] = fine_pos(name).expect("negative names are fine names") as u8;
        }

        Ok(Self {
            fine,
            coarse,
            negative,
            fine_to_coarse,
            negative_to_fine,
            fine_to_negative,
            coarse_to_fine,
            negative_coarse,
        })
    }

    pub fn fine_names(&self) -> &[String] {
        &self.fine
    }

    pub fn coarse_names(&self) -> &[String] {
        &self.coarse
    }

    pub fn negative_names(&self) -> &[String] {
        &self.negative
    }

    pub fn fine_name(&self, label: ExpressionLabel) -> &str {
        &self.fine[label.index()]
    }

    pub fn coarse_name(&self, label: CoarseLabel) -> &str {
        &self.coarse[label.index()]
    }

    pub fn negative_name(&self, label: NegativeLabel) -> &str {
        &self.negative[label.index()]
    }

    /// Looks up a fine label by name, case-insensitively.
    pub fn fine_by_name(&self, name: &str) -> Option<ExpressionLabel> {
        self.fine
            .iter()
            .position(|f| f.eq_ignore_ascii_case(name.trim()))
            .map(|i| ExpressionLabel(i as u8))
    }

    /// The coarse class that groups the four negative expressions.
    pub fn negative_coarse(&self) -> CoarseLabel {
        CoarseLabel(self.negative_coarse)
    }

    pub fn is_negative(&self, label: ExpressionLabel) -> bool {
        self.fine_to_negative[label.index()].is_some()
    }

    pub fn to_coarse(&self, label: ExpressionLabel) -> CoarseLabel {
        CoarseLabel(self.fine_to_coarse[label.index()])
    }

    pub fn from_negative(&self, label: NegativeLabel) -> ExpressionLabel {
        ExpressionLabel(self.negative_to_fine[label.index()])
    }

    /// The negative-space index of a fine label, if it is one of the negatives.
    pub fn to_negative(&self, label: ExpressionLabel) -> Option<NegativeLabel> {
        self.fine_to_negative[label.index()].map(NegativeLabel)
    }

    /// The fine label with the same name as a coarse class; `None` for `Negative`.
    pub fn coarse_to_fine(&self, label: CoarseLabel) -> Option<ExpressionLabel> {
        self.coarse_to_fine[label.index()].map(ExpressionLabel)
    }
}

/// Parses a scheme config document.
///
/// The text `default` (or a document with no entries) yields the canonical
/// scheme. Otherwise the keys `fine`, `coarse`, `negative` and
/// `negative_group` are all required, each a comma-separated name list.
pub fn load_scheme(config_text: &str) -> Result<LabelScheme> {
    let trimmed = config_text.trim();
    if trimmed.eq_ignore_ascii_case("default") {
        return Ok(LabelScheme::default());
    }
    let entries = kv::parse(config_text)
        .map_err(|(line, msg)| Error::Scheme(format!("line {line}: {msg}")))?;
    if entries.is_empty() {
        return Ok(LabelScheme::default());
    }
    let mut fine = None;
    let mut coarse = None;
    let mut negative = None;
    let mut group = None;
    for e in entries {
        let slot = match e.key.as_str() {
            "fine" => &mut fine,
            "coarse" => &mut coarse,
            "negative" => &mut negative,
            "negative_group" => &mut group,
            other => {
                return Err(Error::Scheme(format!("line {}: unknown key `{other}`", e.line)));
            }
        };
        *slot = Some(kv::list(&e.value));
    }
    let need = |v: Option<Vec<String>>, key: &str| {
        v.ok_or_else(|| Error::Scheme(format!("missing key `{key}`")))
    };
    LabelScheme::from_names(
        &need(fine, "fine")?,
        &need(coarse, "coarse")?,
        &need(negative, "negative")?,
        &need(group, "negative_group")?,
    )
}

fn canonical_name<'a>(name: &str, allowed: &[&'a str]) -> Option<&'a str> {
    allowed
        .iter()
        .find(|a| a.eq_ignore_ascii_case(name.trim()))
        .copied()
}

fn canonical_list<S: AsRef<str>>(key: &str, names: &[S], allowed: &[&str]) -> Result<Vec<String>> {
    if names.len() != allowed.len() {
        return Err(Error::Scheme(format!(
            "`{key}` must list exactly {} labels, found {}",
            allowed.len(),
            names.len()
        )));
    }
    let mut out: Vec<String> = Vec::with_capacity(names.len());
    for name in names {
        let name = name.as_ref();
        let canon = canonical_name(name, allowed).ok_or_else(|| {
            Error::Scheme(format!("`{key}` contains unknown label `{name}` (allowed: {allowed:?})"))
        })?;
        if out.iter().any(|o| o == canon) {
            return Err(Error::Scheme(format!(
                "`{key}` names must be distinct (bijection): `{canon}` repeated"
            )));
        }
        out.push(canon.to_string());
    }
    Ok(out)
}
