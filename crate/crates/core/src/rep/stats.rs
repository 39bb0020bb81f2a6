use std::collections::BTreeMap;
use std::fmt;

/// Kind of stored scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    U,
    V,
    B,
    Dense,
    /// Short nested bases and retained singular values.
    Transfer,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::U,
        Category::V,
        Category::B,
        Category::Dense,
        Category::Transfer,
    ];
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::U => "U",
            Category::V => "V",
            Category::B => "B",
            Category::Dense => "dense",
            Category::Transfer => "transfer",
        };
        f.write_str(s)
    }
}

/// Stored scalar counts broken down by level and category.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StorageStats {
    n_points: usize,
    breakdown: BTreeMap<(usize, Category), u64>,
}

impl StorageStats {
    pub fn new(n_points: usize) -> Self {
        Self {
            n_points,
            breakdown: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, level: usize, category: Category, count: usize) {
        if count > 0 {
            *self.breakdown.entry((level, category)).or_default() += count as u64;
        }
    }

    pub fn total(&self) -> u64 {
        self.breakdown.values().sum()
    }

    pub fn per_dof(&self) -> f64 {
        self.total() as f64 / self.n_points.max(1) as f64
    }

    pub fn get(&self, level: usize, category: Category) -> u64 {
        self.breakdown.get(&(level, category)).copied().unwrap_or(0)
    }

    pub fn by_category(&self, category: Category) -> u64 {
        self.breakdown
            .iter()
            .filter(|((_, c), _)| *c == category)
            .map(|(_, v)| v)
            .sum()
    }

    pub fn breakdown(&self) -> &BTreeMap<(usize, Category), u64> {
        &self.breakdown
    }
}

impl fmt::Display for StorageStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "total {} scalars, {:.2} per dof",
            self.total(),
            self.per_dof()
        )?;
        for ((level, cat), count) in &self.breakdown {
            writeln!(f, "  level {level:>2} {cat:<8} {count}")?;
        }
        Ok(())
    }
}
