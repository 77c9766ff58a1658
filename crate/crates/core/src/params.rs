//! Flat parameter store layout.
//!
//! All trainable parameters of a model live in one `Vec<f64>`; a
//! [`ParamLayout`] names contiguous regions of it (one per weight matrix or
//! bias vector) and tags each with the [`ParamGroup`] it belongs to, so the
//! freeze policy and the optimizer can address whole towers by group without
//! knowing the architecture.
//!
//! Vectors are stored as `len x 1` matrices.

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

/// Which part of the model a parameter region belongs to.
///
/// Trainability is decided per group: the freeze policy controls the two
/// towers, while fusion and head parameters always train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ParamGroup {
    /// Image-encoder tower.
    ImageTower,
    /// Text-encoder tower.
    TextTower,
    /// Cross-attention / fusion projections.
    Fusion,
    /// Regression head.
    Head,
}

impl ParamGroup {
    /// Config-file / archive spelling.
    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::ImageTower => "image_tower",
            ParamGroup::TextTower => "text_tower",
            ParamGroup::Fusion => "fusion",
            ParamGroup::Head => "head",
        }
    }
}

/// Identifier of one named parameter region; indexes into its layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Metadata for one named region of the flat store.
#[derive(Debug, Clone)]
pub struct ParamSpec {
    /// Stable name (used by checkpoints and weight archives).
    pub name: String,
    /// Group for freeze/optimizer decisions.
    pub group: ParamGroup,
    /// Matrix rows (vector length for biases).
    pub rows: usize,
    /// Matrix cols (1 for biases).
    pub cols: usize,
    /// Start offset in the flat store.
    pub offset: usize,
}

impl ParamSpec {
    /// Number of scalars in the region.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    /// True when the region is empty.
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The region's range in the flat store.
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Immutable description of every parameter region in a model.
#[derive(Debug, Clone, Default)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
    total: usize,
}

impl ParamLayout {
    /// Start building a layout.
    pub fn builder() -> LayoutBuilder {
        LayoutBuilder { layout: ParamLayout::default() }
    }

    /// Total number of scalars across all regions.
    pub fn total_len(&self) -> usize {
        self.total
    }

    /// All region specs, in registration order (contiguous, gap-free).
    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    /// Spec for one region.
    pub fn spec(&self, id: ParamId) -> &ParamSpec {
        &self.specs[id.0]
    }

    /// Range of one region in the flat store.
    pub fn range(&self, id: ParamId) -> Range<usize> {
        self.specs[id.0].range()
    }

    /// Look a region up by name.
    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.specs.iter().position(|s| s.name == name).map(ParamId)
    }

    /// Ranges of every region in `group`, in registration order.
    pub fn group_ranges(&self, group: ParamGroup) -> Vec<Range<usize>> {
        self.specs.iter().filter(|s| s.group == group).map(|s| s.range()).collect()
    }

    /// Total scalars in `group`.
    pub fn group_len(&self, group: ParamGroup) -> usize {
        self.specs.iter().filter(|s| s.group == group).map(|s| s.len()).sum()
    }
}

/// Registers regions and assigns offsets.
#[derive(Debug)]
pub struct LayoutBuilder {
    layout: ParamLayout,
}

impl LayoutBuilder {
    /// Register a `rows x cols` region; names must be unique.
    pub fn add(&mut self, name: &str, group: ParamGroup, rows: usize, cols: usize) -> ParamId {
        assert!(
            self.layout.find(name).is_none(),
            "duplicate parameter region name: {name}"
        );
        let offset = self.layout.total;
        self.layout.specs.push(ParamSpec {
            name: String::from(name),
            group,
            rows,
            cols,
            offset,
        });
        self.layout.total += rows * cols;
        ParamId(self.layout.specs.len() - 1)
    }

    /// Register a length-`len` vector region.
    pub fn add_vector(&mut self, name: &str, group: ParamGroup, len: usize) -> ParamId {
        self.add(name, group, len, 1)
    }

    /// Finish building.
    pub fn build(self) -> ParamLayout {
        self.layout
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_are_contiguous_and_ranges_disjoint() {
        let mut b = ParamLayout::builder();
        let a = b.add("a", ParamGroup::ImageTower, 3, 4);
        let v = b.add_vector("b", ParamGroup::ImageTower, 5);
        let c = b.add("c", ParamGroup::Head, 2, 2);
        let layout = b.build();
        assert_eq!(layout.total_len(), 12 + 5 + 4);
        assert_eq!(layout.range(a), 0..12);
        assert_eq!(layout.range(v), 12..17);
        assert_eq!(layout.range(c), 17..21);
        assert_eq!(layout.group_len(ParamGroup::ImageTower), 17);
        assert_eq!(layout.group_len(ParamGroup::Head), 4);
        assert_eq!(layout.group_len(ParamGroup::Fusion), 0);
        assert_eq!(layout.group_ranges(ParamGroup::ImageTower), alloc::vec![0..12, 12..17]);
    }

    #[test]
    fn find_by_name() {
        let mut b = ParamLayout::builder();
        let id = b.add("image.w1", ParamGroup::ImageTower, 2, 2);
        let layout = b.build();
        assert_eq!(layout.find("image.w1"), Some(id));
        assert_eq!(layout.find("missing"), None);
        assert_eq!(layout.spec(id).name, "image.w1");
    }

    #[test]
    #[should_panic(expected = "duplicate parameter region name")]
    fn duplicate_names_rejected() {
        let mut b = ParamLayout::builder();
        b.add("w", ParamGroup::Head, 1, 1);
        b.add("w", ParamGroup::Head, 1, 1);
    }
}
