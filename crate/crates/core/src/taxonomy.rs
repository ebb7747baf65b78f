//! The seven diagnosis categories and their canonical index order.
//!
//! Index order follows the column order of the ground-truth CSV files
//! (`MEL, NV, BCC, AKIEC, BKL, DF, VASC`). Every index-based structure in the
//! crate (logits, probability vectors, confusion-matrix axes) uses it.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_CATEGORIES: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Mel,
    Nv,
    Bcc,
    Akiec,
    Bkl,
    Df,
    Vasc,
}

impl Category {
    pub const ALL: [Category; N_CATEGORIES] = [
        Category::Mel,
        Category::Nv,
        Category::Bcc,
        Category::Akiec,
        Category::Bkl,
        Category::Df,
        Category::Vasc,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or(Error::InvalidLabel(index))
    }

    pub fn code(self) -> &'static str {
        match self {
            Category::Mel => "MEL",
            Category::Nv => "NV",
            Category::Bcc => "BCC",
            Category::Akiec => "AKIEC",
            Category::Bkl => "BKL",
            Category::Df => "DF",
            Category::Vasc => "VASC",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Category::Mel => "melanoma",
            Category::Nv => "melanocytic nevus",
            Category::Bcc => "basal cell carcinoma",
            Category::Akiec => "actinic keratosis / intraepithelial carcinoma",
            Category::Bkl => "benign keratosis",
            Category::Df => "dermatofibroma",
            Category::Vasc => "vascular lesion",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.code() == code)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Ordered (code, display-name) table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryTaxonomy {
    categories: Vec<(String, String)>,
}

impl Default for CategoryTaxonomy {
    fn default() -> Self {
        Self {
            categories: Category::ALL
                .iter()
                .map(|c| (c.code().to_string(), c.display_name().to_string()))
                .collect(),
        }
    }
}

impl CategoryTaxonomy {
    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.categories.iter().map(|(c, _)| c.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.categories
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.categories.iter().position(|(c, _)| c == code)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn canonical_order_matches_ground_truth_columns() {
        let tax = CategoryTaxonomy::default();
        let codes: Vec<_> = tax.codes().collect();
        assert_eq!(codes, ["MEL", "NV", "BCC", "AKIEC", "BKL", "DF", "VASC"]);
        assert_eq!(tax.len(), N_CATEGORIES);
        let unique: HashSet<_> = codes.iter().collect();
        assert_eq!(unique.len(), N_CATEGORIES);
    }

    #[test]
    fn index_round_trip() {
        for (i, c) in Category::ALL.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(Category::from_index(i).unwrap(), *c);
            assert_eq!(Category::from_code(c.code()), Some(*c));
        }
        assert!(Category::from_index(7).is_err());
    }
}
