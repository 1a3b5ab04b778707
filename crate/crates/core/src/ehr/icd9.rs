//! ICD-9-CM code grammar, chapter ranges and display descriptions.

use std::collections::HashMap;
use std::sync::OnceLock;

/// Chapter ranges as `(first, last, label, description)` over the 3-digit
/// numeric category. V and E codes are handled separately.
const CHAPTERS: &[(u16, u16, &str, &str)] = &[
    (1, 139, "001-139", "Infectious and parasitic diseases"),
    (140, 239, "140-239", "Neoplasms"),
    (240, 279, "240-279", "Endocrine, nutritional and metabolic diseases, and immunity disorders"),
    (280, 289, "280-289", "Diseases of the blood and blood-forming organs"),
    (290, 319, "290-319", "Mental disorders"),
    (320, 389, "320-389", "Diseases of the nervous system and sense organs"),
    (390, 459, "390-459", "Diseases of the circulatory system"),
    (460, 519, "460-519", "Diseases of the respiratory system"),
    (520, 579, "520-579", "Diseases of the digestive system"),
    (580, 629, "580-629", "Diseases of the genitourinary system"),
    (630, 679, "630-679", "Complications of pregnancy, childbirth, and the puerperium"),
    (680, 709, "680-709", "Diseases of the skin and subcutaneous tissue"),
    (710, 739, "710-739", "Diseases of the musculoskeletal system and connective tissue"),
    (740, 759, "740-759", "Congenital anomalies"),
    (760, 779, "760-779", "Certain conditions originating in the perinatal period"),
    (780, 799, "780-799", "Symptoms, signs, and ill-defined conditions"),
    (800, 999, "800-999", "Injury and poisoning"),
];

const V_CHAPTER: (&str, &str) = (
    "V01-V91",
    "Supplementary classification of factors influencing health status",
);
const E_CHAPTER: (&str, &str) = ("E000-E999", "Supplementary classification of external causes");

/// Marker appended to labels of padding nodes below a non-leaf code.
pub const VIRTUAL_SUFFIX: char = '*';

/// A syntactically valid ICD-9 code split into its parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Icd9 {
    /// Category, e.g. `518`, `V45`, `E880`.
    pub category: String,
    /// Digits after the decimal point (0 to 2 of them; at most 1 for E codes).
    pub detail: String,
}

impl Icd9 {
    /// Parses dotted (`518.81`) or MIMIC-style dotless (`51881`) codes.
    pub fn parse(raw: &str) -> Option<Icd9> {
        let raw = raw.trim();
        let (cat_len, max_detail) = match raw.chars().next()? {
            'V' | 'v' => (3, 2),
            'E' | 'e' => (4, 1),
            c if c.is_ascii_digit() => (3, 2),
            _ => return None,
        };
        let upper = raw.to_ascii_uppercase();
        let (category, detail) = match upper.split_once('.') {
            Some((c, d)) => {
                if d.is_empty() {
                    return None;
                }
                (c.to_string(), d.to_string())
            }
            None => {
                if upper.len() < cat_len {
                    return None;
                }
                let (c, d) = upper.split_at(cat_len);
                (c.to_string(), d.to_string())
            }
        };
        if category.len() != cat_len || detail.len() > max_detail {
            return None;
        }
        let digits_ok = |s: &str| s.chars().all(|c| c.is_ascii_digit());
        let cat_digits = if cat_len == 3 && category.starts_with(|c: char| c.is_ascii_digit()) {
            &category[..]
        } else {
            &category[1..]
        };
        if !digits_ok(cat_digits) || !digits_ok(&detail) {
            return None;
        }
        Some(Icd9 { category, detail })
    }

    /// Canonical dotted form.
    pub fn canonical(&self) -> String {
        if self.detail.is_empty() {
            self.category.clone()
        } else {
            format!("{}.{}", self.category, self.detail)
        }
    }

    /// Chapter label, e.g. `460-519`.
    pub fn chapter(&self) -> &'static str {
        chapter_of(&self.category).0
    }

    /// Labels from chapter down to full code, padding missing levels with
    /// virtual nodes so every code has exactly four.
    pub fn full_path(&self) -> [String; 4] {
        let chapter = self.chapter().to_string();
        let category = self.category.clone();
        let max_detail = if self.category.starts_with('E') { 1 } else { 2 };
        let subcategory = match self.detail.len() {
            0 => format!("{category}{VIRTUAL_SUFFIX}"),
            _ => format!("{}.{}", category, &self.detail[..1]),
        };
        let leaf = if self.detail.len() == max_detail {
            self.canonical()
        } else {
            format!("{subcategory}{VIRTUAL_SUFFIX}")
        };
        [chapter, category, subcategory, leaf]
    }
}

fn chapter_of(category: &str) -> (&'static str, &'static str) {
    if category.starts_with('V') {
        return V_CHAPTER;
    }
    if category.starts_with('E') {
        return E_CHAPTER;
    }
    let n: u16 = category.parse().unwrap_or(0);
    CHAPTERS
        .iter()
        .find(|(lo, hi, _, _)| (*lo..=*hi).contains(&n))
        .map(|(_, _, label, desc)| (*label, *desc))
        // category 000 is not assigned; fold it into the first chapter
        .unwrap_or((CHAPTERS[0].2, CHAPTERS[0].3))
}

fn description_table() -> &'static HashMap<&'static str, &'static str> {
    static TABLE: OnceLock<HashMap<&'static str, &'static str>> = OnceLock::new();
    TABLE.get_or_init(|| {
        include_str!("../../data/icd9_descriptions.tsv")
            .lines()
            .filter_map(|line| line.split_once('\t'))
            .collect()
    })
}

/// Human-readable description: exact table hit, otherwise the chapter name.
/// Returns `None` for strings outside the grammar.
pub fn describe(code: &str) -> Option<String> {
    let parsed = Icd9::parse(code)?;
    let canonical = parsed.canonical();
    if let Some(desc) = description_table().get(canonical.as_str()) {
        return Some((*desc).to_string());
    }
    Some(format!("{} ({})", chapter_of(&parsed.category).1, parsed.chapter()))
}
