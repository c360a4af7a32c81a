use std::collections::HashMap;

use crate::model::ItemKey;

/// Dense item and category indices. Index 0 of each table is reserved for
/// identifiers never seen during ingestion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    items: Vec<String>,
    item_index: HashMap<String, u32>,
    /// Category index of each item (0 for the reserved slot).
    item_category: Vec<u32>,
    categories: Vec<String>,
    category_index: HashMap<String, u32>,
}

pub const OOV: u32 = 0;
const OOV_NAME: &str = "<oov>";

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        Vocabulary {
            items: vec![OOV_NAME.to_string()],
            item_index: HashMap::new(),
            item_category: vec![OOV],
            categories: vec![OOV_NAME.to_string()],
            category_index: HashMap::new(),
        }
    }

    /// Registers `item` (first sighting fixes its category) and returns its key.
    pub fn insert(&mut self, item: &str, category: &str) -> ItemKey {
        let category = match self.category_index.get(category) {
            Some(&c) => c,
            None => {
                let c = self.categories.len() as u32;
                self.categories.push(category.to_string());
                self.category_index.insert(category.to_string(), c);
                c
            }
        };
        let item = match self.item_index.get(item) {
            Some(&i) => i,
            None => {
                let i = self.items.len() as u32;
                self.items.push(item.to_string());
                self.item_index.insert(item.to_string(), i);
                self.item_category.push(category);
                i
            }
        };
        ItemKey { item, category }
    }

    /// Key for known or unknown identifiers; unknown map to index 0.
    pub fn key(&self, item: &str, category: &str) -> ItemKey {
        ItemKey {
            item: self.item_index.get(item).copied().unwrap_or(OOV),
            category: self.category_index.get(category).copied().unwrap_or(OOV),
        }
    }

    /// Table sizes including the reserved index.
    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn item_name(&self, index: u32) -> &str {
        &self.items[index as usize]
    }

    pub fn category_name(&self, index: u32) -> &str {
        &self.categories[index as usize]
    }

    pub fn category_of(&self, item: u32) -> u32 {
        self.item_category[item as usize]
    }

    /// Item names and their category indices, excluding the reserved slot.
    pub fn items(&self) -> impl Iterator<Item = (&str, u32)> {
        self.items
            .iter()
            .zip(&self.item_category)
            .skip(1)
            .map(|(n, &c)| (n.as_str(), c))
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.categories.iter().skip(1).map(String::as_str)
    }

    /// Rebuilds a vocabulary from ordered tables (without the reserved slot).
    pub(crate) fn from_tables(categories: Vec<String>, items: Vec<(String, u32)>) -> Option<Self> {
        let mut v = Vocabulary::new();
        for c in categories {
            if v.category_index.contains_key(&c) {
                return None;
            }
            v.category_index
                .insert(c.clone(), v.categories.len() as u32);
            v.categories.push(c);
        }
        for (name, cat) in items {
            if cat as usize >= v.categories.len() || v.item_index.contains_key(&name) {
                return None;
            }
            v.item_index.insert(name.clone(), v.items.len() as u32);
            v.items.push(name);
            v.item_category.push(cat);
        }
        Some(v)
    }
}
